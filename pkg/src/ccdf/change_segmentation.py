"""Change segmentation: a siamese network over patch pairs and the
mask-gated reconstruction loss that trains it.

The mask keeps pixels it marks unchanged inside the reconstruction terms and
pays a sparsity price (the mask mean) for everything it marks changed, so
unreconstructable regions are absorbed into the mask.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn

from .cycle_consistency import LossWeights, _pair, _to_tensor, content_loss, l1_loss

FUSIONS = ("concat", "diff", "absdiff")


@dataclass(frozen=True)
class SegmenterConfig:
    channels: int
    base_width: int = 16
    num_downsamples: int = 2
    fusion: str = "concat"
    use_norm: bool = True
    # logit scale before the logistic squash; > 1 sharpens masks, which helps
    # short training budgets commit instead of hovering near 0.5
    temperature: float = 1.0

    def __post_init__(self):
        if self.channels < 1 or self.base_width < 1:
            raise ValueError("channels and base_width must be positive")
        if self.num_downsamples < 1:
            raise ValueError("need at least one downsample")
        if self.fusion not in FUSIONS:
            raise ValueError(f"fusion must be one of {FUSIONS}, got {self.fusion!r}")
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")


def _conv_block(in_ch: int, out_ch: int, use_norm: bool, stride: int = 1) -> nn.Sequential:
    return nn.Sequential(
        nn.Conv2d(in_ch, out_ch, 3, stride=stride, padding=1),
        nn.InstanceNorm2d(out_ch) if use_norm else nn.Identity(),
        nn.ReLU(inplace=True),
    )


class SegmentationNet(nn.Module):
    """Shared-weight two-stream encoder, per-scale fusion, mask decoder.

    Output is a single-channel map squashed to (0, 1) by a logistic unit.
    """

    def __init__(self, config: SegmenterConfig):
        super().__init__()
        self.config = config
        w = config.base_width
        widths = [w * (2 ** i) for i in range(config.num_downsamples + 1)]

        self.encoder = nn.ModuleList([_conv_block(config.channels, widths[0], config.use_norm)])
        for i in range(config.num_downsamples):
            self.encoder.append(_conv_block(widths[i], widths[i + 1], config.use_norm, stride=2))

        fused = [self._fused_width(width) for width in widths]
        self.bottleneck = _conv_block(fused[-1], widths[-1], config.use_norm)
        self.decoder = nn.ModuleList()
        for i in reversed(range(config.num_downsamples)):
            self.decoder.append(_conv_block(widths[i + 1] + fused[i], widths[i], config.use_norm))
        self.head = nn.Conv2d(widths[0], 1, 1)

    def _fused_width(self, width: int) -> int:
        return width * 2 if self.config.fusion == "concat" else width

    def _fuse(self, a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
        if self.config.fusion == "concat":
            return torch.cat((a, b), dim=1)
        if self.config.fusion == "diff":
            return b - a
        return (b - a).abs()

    def forward(self, patch1: torch.Tensor, patch2: torch.Tensor) -> torch.Tensor:
        if patch1.shape != patch2.shape:
            raise ValueError(f"patch shapes differ: {tuple(patch1.shape)} vs {tuple(patch2.shape)}")
        if patch1.dim() != 4 or patch1.shape[1] != self.config.channels:
            raise ValueError(f"expected (N, {self.config.channels}, H, W) input, got {tuple(patch1.shape)}")
        factor = 2 ** self.config.num_downsamples
        if patch1.shape[2] % factor or patch1.shape[3] % factor:
            raise ValueError(f"spatial extent {tuple(patch1.shape[2:])} must be divisible by {factor}")

        fused = []
        f1, f2 = patch1, patch2
        for block in self.encoder:
            f1 = block(f1)
            f2 = block(f2)
            fused.append(self._fuse(f1, f2))

        x = self.bottleneck(fused[-1])
        for i, block in enumerate(self.decoder):
            skip = fused[len(fused) - 2 - i]
            x = nn.functional.interpolate(x, scale_factor=2, mode="nearest")
            x = block(torch.cat((x, skip), dim=1))
        return torch.sigmoid(self.head(x) * self.config.temperature)


def predict_mask(net: SegmentationNet, patch1: np.ndarray, patch2: np.ndarray) -> np.ndarray:
    """Change probability map for one (P, P, C) patch pair, in [0, 1]."""
    patch1 = np.asarray(patch1)
    patch2 = np.asarray(patch2)
    if patch1.shape != patch2.shape:
        raise ValueError(f"patch shapes differ: {patch1.shape} vs {patch2.shape}")
    if patch1.ndim == 2:
        patch1 = patch1[:, :, np.newaxis]
        patch2 = patch2[:, :, np.newaxis]
    was_training = net.training
    net.eval()
    try:
        with torch.no_grad():
            t1 = torch.from_numpy(np.ascontiguousarray(patch1.transpose(2, 0, 1))).float().unsqueeze(0)
            t2 = torch.from_numpy(np.ascontiguousarray(patch2.transpose(2, 0, 1))).float().unsqueeze(0)
            mask = net(t1, t2)
    finally:
        net.train(was_training)
    return mask.squeeze(0).squeeze(0).numpy()


def reg_loss(mask) -> torch.Tensor:
    """Arithmetic mean of the mask: the sparsity price of marking change."""
    mask = _to_tensor(mask)
    if mask.numel() == 0:
        raise ValueError("empty mask")
    if mask.detach().min() < 0 or mask.detach().max() > 1:
        raise ValueError("mask values must lie in [0, 1]")
    return mask.mean()


def _broadcast_mask(mask: torch.Tensor, like: torch.Tensor) -> torch.Tensor:
    # single-channel mask applies to every image band
    if mask.dim() == like.dim() - 1:
        mask = mask.unsqueeze(-3) if like.dim() >= 3 else mask.unsqueeze(0)
    return mask


def seg_loss(g12_output, patch2, mask, extractor: nn.Module, weights: LossWeights) -> torch.Tensor:
    """Mask-gated reconstruction terms plus the sparsity regularizer."""
    g12_output, patch2 = _pair(g12_output, patch2)
    mask = _to_tensor(mask)
    sparsity = reg_loss(mask)
    keep = 1.0 - _broadcast_mask(mask, g12_output)
    gated_out = g12_output * keep
    gated_dst = patch2 * keep
    loss = l1_loss(gated_out, gated_dst, weights.reduction)
    if weights.lambda_cont != 0:
        loss = loss + weights.lambda_cont * content_loss(gated_out, gated_dst, extractor, weights.reduction)
    return loss + weights.lambda_reg * sparsity


def binarize(mask: np.ndarray, threshold: float = 0.5) -> np.ndarray:
    """Threshold a probability map; values >= threshold become changed (1)."""
    if not 0.0 < threshold < 1.0:
        raise ValueError(f"threshold must lie in (0, 1), got {threshold}")
    mask = np.asarray(mask)
    return (mask >= threshold).astype(np.uint8)
