"""Versioned checkpoints shared by the generator and segmentation networks.

A checkpoint bundles the architecture config with the parameter state, so
loading rebuilds the module and restores bit-identical evaluation outputs.
"""

from __future__ import annotations

from dataclasses import asdict
from pathlib import Path

import torch

from .change_segmentation import SegmentationNet, SegmenterConfig
from .cycle_consistency import Generator, GeneratorConfig

FORMAT_VERSION = 1


def save_checkpoint(module: torch.nn.Module, path: str | Path) -> None:
    if isinstance(module, Generator):
        kind = "generator"
        extra = {"direction": module.direction}
    elif isinstance(module, SegmentationNet):
        kind = "segmenter"
        extra = {}
    else:
        raise TypeError(f"cannot checkpoint a {type(module).__name__}")
    payload = {
        "format_version": FORMAT_VERSION,
        "kind": kind,
        "config": asdict(module.config),
        "state_dict": module.state_dict(),
        **extra,
    }
    torch.save(payload, Path(path))


def load_checkpoint(path: str | Path) -> torch.nn.Module:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    payload = torch.load(path, map_location="cpu", weights_only=True)
    version = payload.get("format_version")
    if version != FORMAT_VERSION:
        raise ValueError(f"unsupported checkpoint format version: {version}")
    kind = payload["kind"]
    if kind == "generator":
        module = Generator(GeneratorConfig(**payload["config"]), direction=payload["direction"])
    elif kind == "segmenter":
        module = SegmentationNet(SegmenterConfig(**payload["config"]))
    else:
        raise ValueError(f"unknown checkpoint kind: {kind!r}")
    module.load_state_dict(payload["state_dict"])
    module.eval()
    return module
