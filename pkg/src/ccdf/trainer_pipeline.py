"""Three-stage training orchestration, warmup/cosine schedule, inference.

Stage 1 fits the two style-transfer generators; stage 2 fits the
segmentation network against the frozen forward generator; stage 3
alternates fine-tuning between the generator and the segmenter. A fixed
seed makes every stage bit-reproducible on the same platform.
"""

from __future__ import annotations

import json
import math
import os
import time
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np
import torch

from .change_segmentation import SegmentationNet, SegmenterConfig, binarize, seg_loss
from .cycle_consistency import (
    T1_TO_T2,
    T2_TO_T1,
    Generator,
    GeneratorConfig,
    LossWeights,
    build_feature_extractor,
    generation_loss,
    stage1_loss,
)
from .dataio import ImageTensor
from .preprocess import PatchGrid, standardize, stitch, tile
from .semantic_consistency import Augmentation, stage2_loss

SEED_ENV_VAR = "CCDF_SEED"

_AUG_KINDS = (Augmentation.IDENTITY, Augmentation.HFLIP, Augmentation.VFLIP, Augmentation.TRANSPOSE)


class TrainingDivergedError(RuntimeError):
    """Raised when a batch loss turns NaN/Inf; names the offending patches."""


@dataclass(frozen=True)
class TrainConfig:
    """Every knob of the pipeline; mirrors the on-disk config file one to one."""

    patch_size: int = 224
    overlap: int = 12
    batch_size: int = 10
    stage_epochs: tuple[int, int, int] = (30, 30, 50)
    stage_lr: tuple[tuple[float, float], ...] = ((1e-5, 3e-4), (1e-5, 3e-4), (1e-5, 1e-4))
    lambda_cont: float = 0.2
    lambda_reg: float = 0.75
    lambda_sem: float = 0.7
    threshold: float = 0.5
    reduction: str = "sum"
    rng_seed: int = 0
    alternation_period: float | None = None  # batches per phase; None = one epoch
    warmup_frac: float = 0.1
    adam_betas: tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-8
    gen_base_width: int = 16
    gen_res_blocks: int = 2
    gen_downsamples: int = 2
    gen_residual_output: bool = True
    seg_base_width: int = 16
    seg_downsamples: int = 2
    seg_fusion: str = "concat"
    seg_temperature: float = 1.0
    use_norm: bool = True
    content_extractor: str = "vgg16"
    extractor_layer: int = 29
    per_band_standardize: bool = False
    std_epsilon: bool = False

    def __post_init__(self):
        object.__setattr__(self, "stage_epochs", tuple(int(e) for e in self.stage_epochs))
        object.__setattr__(self, "stage_lr", tuple((float(lo), float(hi)) for lo, hi in self.stage_lr))
        object.__setattr__(self, "adam_betas", tuple(float(b) for b in self.adam_betas))
        if len(self.stage_epochs) != 3 or any(e < 1 for e in self.stage_epochs):
            raise ValueError("stage_epochs must be three values >= 1")
        if len(self.stage_lr) != 3 or any(lo > hi for lo, hi in self.stage_lr):
            raise ValueError("stage_lr must be three (min, max) pairs with min <= max")
        if not 0.0 < self.threshold < 1.0:
            raise ValueError("threshold must lie in (0, 1)")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not 0 <= self.overlap < self.patch_size:
            raise ValueError("overlap must lie in [0, patch_size)")
        if not 0.0 <= self.warmup_frac <= 1.0:
            raise ValueError("warmup_frac must lie in [0, 1]")
        if self.alternation_period is not None and not self.alternation_period > 0:
            raise ValueError("alternation_period must be positive (or None for one epoch)")
        LossWeights(self.lambda_cont, self.lambda_reg, self.lambda_sem, self.reduction)

    @property
    def weights(self) -> LossWeights:
        return LossWeights(self.lambda_cont, self.lambda_reg, self.lambda_sem, self.reduction)

    def generator_config(self, channels: int) -> GeneratorConfig:
        return GeneratorConfig(channels=channels, base_width=self.gen_base_width,
                               num_downsamples=self.gen_downsamples,
                               num_res_blocks=self.gen_res_blocks, use_norm=self.use_norm,
                               residual_output=self.gen_residual_output)

    def segmenter_config(self, channels: int) -> SegmenterConfig:
        return SegmenterConfig(channels=channels, base_width=self.seg_base_width,
                               num_downsamples=self.seg_downsamples,
                               fusion=self.seg_fusion, use_norm=self.use_norm,
                               temperature=self.seg_temperature)

    def to_dict(self) -> dict:
        raw = asdict(self)
        raw["stage_epochs"] = list(self.stage_epochs)
        raw["stage_lr"] = [list(pair) for pair in self.stage_lr]
        raw["adam_betas"] = list(self.adam_betas)
        return raw

    @classmethod
    def from_dict(cls, raw: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        coerced = dict(raw)
        if "stage_lr" in coerced:
            coerced["stage_lr"] = tuple(tuple(pair) for pair in coerced["stage_lr"])
        for key in ("stage_epochs", "adam_betas"):
            if key in coerced:
                coerced[key] = tuple(coerced[key])
        return cls(**coerced)

    @classmethod
    def load(cls, path: str | Path) -> "TrainConfig":
        """Read a JSON or TOML config; CCDF_SEED in the environment wins."""
        path = Path(path)
        if path.suffix.lower() == ".json":
            raw = json.loads(path.read_text())
        elif path.suffix.lower() == ".toml":
            try:
                import tomllib
            except ImportError:
                import tomli as tomllib
            raw = tomllib.loads(path.read_text())
        else:
            raise ValueError(f"config must be .json or .toml, got {path.suffix!r}")
        cfg = cls.from_dict(raw)
        env_seed = os.environ.get(SEED_ENV_VAR)
        if env_seed is not None:
            cfg = replace(cfg, rng_seed=int(env_seed))
        return cfg


@dataclass
class TrainReport:
    """Per-epoch loss traces, wall-clock and checkpoint ids for one run."""

    loss_traces: dict[str, list[float]] = field(default_factory=dict)
    wall_clock_seconds: float = 0.0
    checkpoints: dict[str, str] = field(default_factory=dict)
    config: dict = field(default_factory=dict)

    def merge(self, other: "TrainReport") -> "TrainReport":
        traces = {**self.loss_traces, **other.loss_traces}
        checkpoints = {**self.checkpoints, **other.checkpoints}
        return TrainReport(loss_traces=traces,
                           wall_clock_seconds=self.wall_clock_seconds + other.wall_clock_seconds,
                           checkpoints=checkpoints, config=other.config or self.config)

    def to_json(self) -> str:
        return json.dumps({
            "loss_traces": self.loss_traces,
            "wall_clock_seconds": self.wall_clock_seconds,
            "checkpoints": self.checkpoints,
            "config": self.config,
        }, indent=2)


# ---------------------------------------------------------------------------
# Schedule
# ---------------------------------------------------------------------------

def lr_at_step(step: int, total_steps: int, lr_min: float, lr_max: float,
               warmup_frac: float = 0.1) -> float:
    """Linear ramp lr_min -> lr_max over the warmup span, then cosine decay
    back to lr_min at the final step."""
    if not 0 <= step < total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps})")
    warmup_steps = max(1, math.ceil(warmup_frac * total_steps))
    if step < warmup_steps:
        return lr_min + (lr_max - lr_min) * step / warmup_steps
    span = max(1, total_steps - 1 - warmup_steps)
    t = (step - warmup_steps) / span
    return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + math.cos(math.pi * t))


# ---------------------------------------------------------------------------
# Shared helpers
# ---------------------------------------------------------------------------

def _derive_seed(seed: int, salt: int) -> int:
    return (int(seed) * 1_000_003 + salt) % (2 ** 31 - 1)


def _check_aligned(grid1: PatchGrid, grid2: PatchGrid) -> None:
    if grid1.offsets != grid2.offsets or grid1.patch_size != grid2.patch_size \
            or grid1.source_size != grid2.source_size:
        raise ValueError("temporal patch grids are misaligned")


def _grid_channels(grid: PatchGrid) -> int:
    patch = np.asarray(grid.patches[0])
    return patch.shape[2] if patch.ndim == 3 else 1


def _stack(grid: PatchGrid, indices) -> torch.Tensor:
    arrays = []
    for i in indices:
        patch = np.asarray(grid.patches[i])
        if patch.ndim == 2:
            patch = patch[:, :, np.newaxis]
        arrays.append(np.ascontiguousarray(patch.transpose(2, 0, 1)))
    return torch.from_numpy(np.stack(arrays)).float()


def _make_batches(count: int, batch_size: int, rng: np.random.Generator) -> list[np.ndarray]:
    order = rng.permutation(count)
    return [order[i:i + batch_size] for i in range(0, count, batch_size)]


def _ensure_finite(loss: torch.Tensor, stage: int, epoch: int, grid: PatchGrid, batch) -> None:
    if torch.isfinite(loss).all():
        return
    offsets = [grid.offsets[i] for i in batch]
    raise TrainingDivergedError(
        f"non-finite loss in stage {stage}, epoch {epoch}, patch offsets {offsets}")


def _set_lr(optimizer: torch.optim.Optimizer, lr: float) -> None:
    for group in optimizer.param_groups:
        group["lr"] = lr


def _extractor_for(cfg: TrainConfig, channels: int) -> torch.nn.Module:
    return build_feature_extractor(cfg.content_extractor, channels=channels,
                                   layer_index=cfg.extractor_layer,
                                   seed=_derive_seed(cfg.rng_seed, 7))


# ---------------------------------------------------------------------------
# Stages
# ---------------------------------------------------------------------------

def run_stage1(pairs: tuple[PatchGrid, PatchGrid], cfg: TrainConfig,
               include_cycle: bool = True) -> tuple[Generator, Generator, TrainReport]:
    """Fit both generators on aligned patch pairs."""
    grid1, grid2 = pairs
    _check_aligned(grid1, grid2)
    channels = _grid_channels(grid1)
    weights = cfg.weights

    torch.manual_seed(_derive_seed(cfg.rng_seed, 1))
    rng = np.random.default_rng(_derive_seed(cfg.rng_seed, 11))
    g12 = Generator(cfg.generator_config(channels), direction=T1_TO_T2)
    g21 = Generator(cfg.generator_config(channels), direction=T2_TO_T1)
    extractor = _extractor_for(cfg, channels)
    optimizer = torch.optim.Adam(list(g12.parameters()) + list(g21.parameters()),
                                 lr=cfg.stage_lr[0][0], betas=cfg.adam_betas, eps=cfg.adam_eps)

    epochs = cfg.stage_epochs[0]
    batches_per_epoch = math.ceil(len(grid1) / cfg.batch_size)
    total_steps = epochs * batches_per_epoch
    started = time.perf_counter()
    trace: list[float] = []
    step = 0
    g12.train()
    g21.train()
    for epoch in range(epochs):
        batch_losses = []
        for batch in _make_batches(len(grid1), cfg.batch_size, rng):
            _set_lr(optimizer, lr_at_step(step, total_steps, *cfg.stage_lr[0], cfg.warmup_frac))
            b1 = _stack(grid1, batch)
            b2 = _stack(grid2, batch)
            loss = stage1_loss(g12, g21, b1, b2, extractor, weights,
                               include_cycle=include_cycle) / len(batch)
            _ensure_finite(loss, 1, epoch, grid1, batch)
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            batch_losses.append(float(loss.detach()))
            step += 1
        trace.append(float(np.mean(batch_losses)))
    report = TrainReport(loss_traces={"stage1": trace},
                         wall_clock_seconds=time.perf_counter() - started,
                         config=cfg.to_dict())
    return g12, g21, report


def run_stage2(pairs: tuple[PatchGrid, PatchGrid], g12: Generator,
               cfg: TrainConfig) -> tuple[SegmentationNet, TrainReport]:
    """Fit the segmentation network against the frozen forward generator."""
    if g12 is None:
        raise ValueError("stage 2 needs the trained forward generator")
    grid1, grid2 = pairs
    _check_aligned(grid1, grid2)
    channels = _grid_channels(grid1)
    if channels != g12.config.channels:
        raise ValueError(f"generator expects {g12.config.channels} channels, patches have {channels}")
    weights = cfg.weights

    torch.manual_seed(_derive_seed(cfg.rng_seed, 2))
    rng = np.random.default_rng(_derive_seed(cfg.rng_seed, 22))
    net = SegmentationNet(cfg.segmenter_config(channels))
    extractor = _extractor_for(cfg, channels)
    optimizer = torch.optim.Adam(net.parameters(), lr=cfg.stage_lr[1][0],
                                 betas=cfg.adam_betas, eps=cfg.adam_eps)

    epochs = cfg.stage_epochs[1]
    batches_per_epoch = math.ceil(len(grid1) / cfg.batch_size)
    total_steps = epochs * batches_per_epoch
    started = time.perf_counter()
    trace: list[float] = []
    step = 0
    g12.eval()
    net.train()
    for epoch in range(epochs):
        batch_losses = []
        for batch in _make_batches(len(grid1), cfg.batch_size, rng):
            _set_lr(optimizer, lr_at_step(step, total_steps, *cfg.stage_lr[1], cfg.warmup_frac))
            b1 = _stack(grid1, batch)
            b2 = _stack(grid2, batch)
            kind = _AUG_KINDS[int(rng.integers(len(_AUG_KINDS)))]
            with torch.no_grad():
                g_out = g12(b1)
            loss = stage2_loss(net, g_out, b1, b2, kind, extractor, weights) / len(batch)
            _ensure_finite(loss, 2, epoch, grid1, batch)
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            batch_losses.append(float(loss.detach()))
            step += 1
        trace.append(float(np.mean(batch_losses)))
    report = TrainReport(loss_traces={"stage2": trace},
                         wall_clock_seconds=time.perf_counter() - started,
                         config=cfg.to_dict())
    return net, report


def stage3_loss(g12: Generator, net: SegmentationNet, patch1: torch.Tensor,
                patch2: torch.Tensor, extractor: torch.nn.Module,
                weights: LossWeights) -> torch.Tensor:
    """Joint fine-tuning objective: generation term plus mask-gated term."""
    gen = generation_loss(g12, patch1, patch2, extractor, weights)
    seg = seg_loss(g12(patch1), patch2, net(patch1, patch2), extractor, weights)
    return gen + seg


def run_stage3(pairs: tuple[PatchGrid, PatchGrid], g12: Generator, net: SegmentationNet,
               cfg: TrainConfig) -> tuple[Generator, SegmentationNet, TrainReport]:
    """Alternate fine-tuning: generator phases then segmenter phases."""
    if g12 is None or net is None:
        raise ValueError("stage 3 needs both trained networks")
    grid1, grid2 = pairs
    _check_aligned(grid1, grid2)
    weights = cfg.weights
    channels = _grid_channels(grid1)
    extractor = _extractor_for(cfg, channels)

    torch.manual_seed(_derive_seed(cfg.rng_seed, 3))
    rng = np.random.default_rng(_derive_seed(cfg.rng_seed, 33))
    opt_g = torch.optim.Adam(g12.parameters(), lr=cfg.stage_lr[2][0],
                             betas=cfg.adam_betas, eps=cfg.adam_eps)
    opt_s = torch.optim.Adam(net.parameters(), lr=cfg.stage_lr[2][0],
                             betas=cfg.adam_betas, eps=cfg.adam_eps)

    epochs = cfg.stage_epochs[2]
    batches_per_epoch = math.ceil(len(grid1) / cfg.batch_size)
    total_steps = epochs * batches_per_epoch
    period = cfg.alternation_period if cfg.alternation_period is not None else batches_per_epoch
    started = time.perf_counter()
    trace: list[float] = []
    step = 0
    for epoch in range(epochs):
        batch_losses = []
        for batch in _make_batches(len(grid1), cfg.batch_size, rng):
            lr = lr_at_step(step, total_steps, *cfg.stage_lr[2], cfg.warmup_frac)
            b1 = _stack(grid1, batch)
            b2 = _stack(grid2, batch)
            generator_phase = math.floor(step / period) % 2 == 0
            if generator_phase:
                g12.train()
                _set_lr(opt_g, lr)
                loss = generation_loss(g12, b1, b2, extractor, weights) / len(batch)
                _ensure_finite(loss, 3, epoch, grid1, batch)
                opt_g.zero_grad()
                loss.backward()
                opt_g.step()
            else:
                g12.eval()
                net.train()
                _set_lr(opt_s, lr)
                with torch.no_grad():
                    g_out = g12(b1)
                loss = seg_loss(g_out, b2, net(b1, b2), extractor, weights) / len(batch)
                _ensure_finite(loss, 3, epoch, grid1, batch)
                opt_s.zero_grad()
                loss.backward()
                opt_s.step()
            batch_losses.append(float(loss.detach()))
            step += 1
        trace.append(float(np.mean(batch_losses)))
    report = TrainReport(loss_traces={"stage3": trace},
                         wall_clock_seconds=time.perf_counter() - started,
                         config=cfg.to_dict())
    return g12, net, report


# ---------------------------------------------------------------------------
# End to end
# ---------------------------------------------------------------------------

def prepare_patch_pairs(image1: ImageTensor, image2: ImageTensor,
                        cfg: TrainConfig) -> tuple[PatchGrid, PatchGrid]:
    """Standardize both images and cut aligned patch grids."""
    if image1.data.shape != image2.data.shape:
        raise ValueError(f"image sizes differ: {image1.data.shape} vs {image2.data.shape}")
    eps = 1e-8 if cfg.std_epsilon else None
    s1 = standardize(image1, per_band=cfg.per_band_standardize, epsilon=eps)
    s2 = standardize(image2, per_band=cfg.per_band_standardize, epsilon=eps)
    return tile(s1, cfg.patch_size, cfg.overlap), tile(s2, cfg.patch_size, cfg.overlap)


def train_pipeline(image1: ImageTensor, image2: ImageTensor, cfg: TrainConfig,
                   include_cycle: bool = True
                   ) -> tuple[Generator, Generator, SegmentationNet, TrainReport]:
    """Run all three stages on a bi-temporal pair."""
    pairs = prepare_patch_pairs(image1, image2, cfg)
    g12, g21, rep1 = run_stage1(pairs, cfg, include_cycle=include_cycle)
    net, rep2 = run_stage2(pairs, g12, cfg)
    g12, net, rep3 = run_stage3(pairs, g12, net, cfg)
    return g12, g21, net, rep1.merge(rep2).merge(rep3)


def infer_full_image(image1: ImageTensor, image2: ImageTensor, net: SegmentationNet,
                     cfg: TrainConfig) -> tuple[np.ndarray, np.ndarray]:
    """Predict per-patch masks, stitch them by mean, binarize at the threshold.

    Expects standardized inputs of identical size; returns the (H, W)
    probability map and its binary form.
    """
    if image1.data.shape != image2.data.shape:
        raise ValueError(f"image sizes differ: {image1.data.shape} vs {image2.data.shape}")
    grid1 = tile(image1, cfg.patch_size, cfg.overlap)
    grid2 = tile(image2, cfg.patch_size, cfg.overlap)
    was_training = net.training
    net.eval()
    mask_patches: list[np.ndarray] = []
    try:
        with torch.no_grad():
            for start in range(0, len(grid1), cfg.batch_size):
                batch = range(start, min(start + cfg.batch_size, len(grid1)))
                masks = net(_stack(grid1, batch), _stack(grid2, batch))
                mask_patches.extend(m.squeeze(0).numpy() for m in masks)
    finally:
        net.train(was_training)
    mask_grid = PatchGrid(patches=mask_patches, offsets=list(grid1.offsets),
                          source_size=grid1.source_size, patch_size=cfg.patch_size,
                          overlap=cfg.overlap)
    probability = stitch(mask_grid)
    return probability, binarize(probability, cfg.threshold)
