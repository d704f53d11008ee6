"""Bidirectional style-transfer generators and the losses that fit them.

Two generators translate patch appearance between the acquisition times; an
L1 reconstruction term plus a frozen-feature content term score each
direction, and an L1 cycle term scores translating there and back. Their sum
is the stage-1 objective.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn

T1_TO_T2 = "t1_to_t2"
T2_TO_T1 = "t2_to_t1"

REDUCTIONS = ("sum", "mean")


def _reduce(values: torch.Tensor, reduction: str) -> torch.Tensor:
    if reduction == "sum":
        return values.sum()
    if reduction == "mean":
        return values.mean()
    raise ValueError(f"reduction must be one of {REDUCTIONS}, got {reduction!r}")


@dataclass(frozen=True)
class LossWeights:
    """Weights balancing the content, sparsity and consistency terms."""

    lambda_cont: float = 0.2
    lambda_reg: float = 0.75
    lambda_sem: float = 0.7
    reduction: str = "sum"

    def __post_init__(self):
        for name in ("lambda_cont", "lambda_reg", "lambda_sem"):
            value = getattr(self, name)
            if not np.isfinite(value) or value < 0:
                raise ValueError(f"{name} must be finite and >= 0, got {value}")
        if self.reduction not in REDUCTIONS:
            raise ValueError(f"reduction must be one of {REDUCTIONS}, got {self.reduction!r}")


# ---------------------------------------------------------------------------
# Generator
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GeneratorConfig:
    channels: int
    base_width: int = 16
    num_downsamples: int = 2
    num_res_blocks: int = 2
    use_norm: bool = True
    # predict a delta on top of the input; style transfer is near-identity,
    # so starting at the identity map speeds up small-budget training a lot
    residual_output: bool = True

    def __post_init__(self):
        if self.channels < 1 or self.base_width < 1:
            raise ValueError("channels and base_width must be positive")
        if self.num_downsamples < 0 or self.num_res_blocks < 0:
            raise ValueError("depth settings must be non-negative")


def _norm(width: int, enabled: bool) -> nn.Module:
    return nn.InstanceNorm2d(width) if enabled else nn.Identity()


class ResidualBlock(nn.Module):
    def __init__(self, width: int, use_norm: bool):
        super().__init__()
        self.body = nn.Sequential(
            nn.Conv2d(width, width, 3, padding=1),
            _norm(width, use_norm),
            nn.ReLU(inplace=True),
            nn.Conv2d(width, width, 3, padding=1),
            _norm(width, use_norm),
        )

    def forward(self, x):
        return x + self.body(x)


class Generator(nn.Module):
    """Shape-preserving encoder / residual / decoder image-to-image map."""

    def __init__(self, config: GeneratorConfig, direction: str = T1_TO_T2):
        super().__init__()
        if direction not in (T1_TO_T2, T2_TO_T1):
            raise ValueError(f"unknown direction {direction!r}")
        self.config = config
        self.direction = direction

        width = config.base_width
        layers: list[nn.Module] = [
            nn.Conv2d(config.channels, width, 3, padding=1),
            _norm(width, config.use_norm),
            nn.ReLU(inplace=True),
        ]
        for _ in range(config.num_downsamples):
            layers += [
                nn.Conv2d(width, width * 2, 3, stride=2, padding=1),
                _norm(width * 2, config.use_norm),
                nn.ReLU(inplace=True),
            ]
            width *= 2
        for _ in range(config.num_res_blocks):
            layers.append(ResidualBlock(width, config.use_norm))
        for _ in range(config.num_downsamples):
            layers += [
                nn.Upsample(scale_factor=2, mode="nearest"),
                nn.Conv2d(width, width // 2, 3, padding=1),
                _norm(width // 2, config.use_norm),
                nn.ReLU(inplace=True),
            ]
            width //= 2
        layers.append(nn.Conv2d(width, config.channels, 3, padding=1))
        self.body = nn.Sequential(*layers)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.dim() != 4 or x.shape[1] != self.config.channels:
            raise ValueError(f"expected (N, {self.config.channels}, H, W) input, got {tuple(x.shape)}")
        factor = 2 ** self.config.num_downsamples
        if x.shape[2] % factor or x.shape[3] % factor:
            raise ValueError(f"spatial extent {tuple(x.shape[2:])} must be divisible by {factor}")
        out = self.body(x)
        return x + out if self.config.residual_output else out


def translate(generator: Generator, patch: np.ndarray) -> np.ndarray:
    """Run one (P, P, C) patch through a generator in evaluation mode."""
    patch = np.asarray(patch)
    if patch.ndim == 2:
        patch = patch[:, :, np.newaxis]
    if patch.ndim != 3 or patch.shape[2] != generator.config.channels:
        raise ValueError(f"patch shape {patch.shape} does not match generator channels "
                         f"{generator.config.channels}")
    was_training = generator.training
    generator.eval()
    try:
        with torch.no_grad():
            x = torch.from_numpy(np.ascontiguousarray(patch.transpose(2, 0, 1))).float().unsqueeze(0)
            out = generator(x)
    finally:
        generator.train(was_training)
    return out.squeeze(0).numpy().transpose(1, 2, 0)


# ---------------------------------------------------------------------------
# Frozen feature extractors
# ---------------------------------------------------------------------------

def _freeze(module: nn.Module) -> nn.Module:
    for param in module.parameters():
        param.requires_grad_(False)
    module.eval()
    return module


class IdentityFeatures(nn.Module):
    """Pass-through extractor; the content term becomes a plain squared error."""

    def forward(self, x):
        return x


class RandomConvFeatures(nn.Module):
    """Small frozen conv stack with seeded random weights."""

    def __init__(self, channels: int, width: int = 16, depth: int = 3, seed: int = 0):
        super().__init__()
        generator = torch.Generator().manual_seed(seed)
        layers: list[nn.Module] = []
        in_ch = channels
        for _ in range(depth):
            conv = nn.Conv2d(in_ch, width, 3, padding=1)
            with torch.no_grad():
                conv.weight.copy_(torch.randn(conv.weight.shape, generator=generator) * 0.3)
                conv.bias.zero_()
            layers += [conv, nn.ReLU(inplace=True)]
            in_ch = width
        self.body = nn.Sequential(*layers)
        _freeze(self)

    def forward(self, x):
        return self.body(x)


class VggFeatures(nn.Module):
    """VGG16 truncated after ``layer_index`` feature layers, frozen.

    Expects 3-channel input after band adaptation: inputs with >= 3 bands are
    cut to the first 3 (red, green, blue), single-band inputs are repeated.
    """

    def __init__(self, layer_index: int = 29, pretrained: str = "auto", seed: int = 0):
        super().__init__()
        import warnings

        from torchvision.models import VGG16_Weights, vgg16

        torch.manual_seed(seed)
        if pretrained == "never":
            model = vgg16(weights=None)
        else:
            try:
                model = vgg16(weights=VGG16_Weights.IMAGENET1K_V1)
            except Exception as exc:
                if pretrained == "always":
                    raise
                warnings.warn(f"pretrained weights unavailable ({exc}); "
                              "using a seeded random-frozen extractor instead")
                model = vgg16(weights=None)
        if not 1 <= layer_index <= len(model.features):
            raise ValueError(f"layer_index must lie in [1, {len(model.features)}]")
        self.body = nn.Sequential(*list(model.features)[:layer_index])
        _freeze(self)

    def forward(self, x):
        if x.dim() != 4:
            raise ValueError(f"expected (N, C, H, W) input, got {tuple(x.shape)}")
        if x.shape[1] == 1:
            x = x.repeat(1, 3, 1, 1)
        elif x.shape[1] >= 3:
            x = x[:, :3]
        else:
            raise ValueError(f"cannot adapt {x.shape[1]}-band input to 3 channels")
        return self.body(x)


def build_feature_extractor(kind: str, channels: int = 3, layer_index: int = 29,
                            seed: int = 0) -> nn.Module:
    """Build a frozen extractor: "identity", "random" or "vgg16"."""
    if kind == "identity":
        return IdentityFeatures()
    if kind == "random":
        return RandomConvFeatures(channels=channels, seed=seed)
    if kind == "vgg16":
        return VggFeatures(layer_index=layer_index, seed=seed)
    raise ValueError(f"unknown feature extractor kind: {kind!r}")


# ---------------------------------------------------------------------------
# Losses
# ---------------------------------------------------------------------------

def _to_tensor(x) -> torch.Tensor:
    if torch.is_tensor(x):
        return x
    arr = np.asarray(x)
    if not np.issubdtype(arr.dtype, np.floating):
        arr = arr.astype(np.float32)
    return torch.as_tensor(arr)


def _pair(a, b) -> tuple[torch.Tensor, torch.Tensor]:
    a = _to_tensor(a)
    b = _to_tensor(b)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")
    return a, b


def l1_loss(a, b, reduction: str = "sum") -> torch.Tensor:
    """Sum (or mean) of absolute differences."""
    a, b = _pair(a, b)
    return _reduce((b - a).abs(), reduction)


def content_loss(a, b, extractor: nn.Module, reduction: str = "sum") -> torch.Tensor:
    """Sum (or mean) of squared differences between frozen features."""
    a, b = _pair(a, b)
    return _reduce((extractor(b) - extractor(a)) ** 2, reduction)


def generation_loss(generator: Generator, src: torch.Tensor, dst: torch.Tensor,
                    extractor: nn.Module, weights: LossWeights) -> torch.Tensor:
    """Reconstruction objective for one translation direction."""
    out = generator(src)
    loss = l1_loss(out, dst, weights.reduction)
    if weights.lambda_cont != 0:
        loss = loss + weights.lambda_cont * content_loss(out, dst, extractor, weights.reduction)
    return loss


def cycle_loss(g_forward, g_backward, src: torch.Tensor, reduction: str = "sum") -> torch.Tensor:
    """L1 between a there-and-back translation and the original patch."""
    return l1_loss(g_backward(g_forward(src)), src, reduction)


def stage1_loss(g12: Generator, g21: Generator, patch1: torch.Tensor, patch2: torch.Tensor,
                extractor: nn.Module, weights: LossWeights,
                include_cycle: bool = True) -> torch.Tensor:
    """Both generation terms plus both cycle terms.

    ``include_cycle`` exists for ablation runs; the full objective keeps it on.
    """
    loss = generation_loss(g12, patch1, patch2, extractor, weights)
    loss = loss + generation_loss(g21, patch2, patch1, extractor, weights)
    if include_cycle:
        loss = loss + cycle_loss(g12, g21, patch1, weights.reduction)
        loss = loss + cycle_loss(g21, g12, patch2, weights.reduction)
    return loss
