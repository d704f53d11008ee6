"""Augmentation-equivariance consistency for the segmentation network.

Predicting on geometrically augmented inputs, undoing the augmentation on
the predicted mask, and comparing against the direct prediction yields a
consistency loss. The augmented branch is a reference only: no parameter
gradients flow through it.
"""

from __future__ import annotations

from enum import Enum

import numpy as np
import torch

from .change_segmentation import SegmentationNet, seg_loss
from .cycle_consistency import LossWeights, l1_loss


class Augmentation(Enum):
    """Four self-inverse spatial rearrangements of square patches."""

    IDENTITY = "identity"
    HFLIP = "hflip"
    VFLIP = "vflip"
    TRANSPOSE = "transpose"


def _spatial_axes(x) -> tuple[int, int]:
    # numpy arrays are (H, W[, C]); torch tensors are (..., H, W)
    if torch.is_tensor(x):
        return x.dim() - 2, x.dim() - 1
    return 0, 1


def augment(x, kind: Augmentation):
    """Apply one augmentation; the value multiset is preserved exactly."""
    kind = Augmentation(kind)
    if torch.is_tensor(x):
        ax_h, ax_w = _spatial_axes(x)
        if kind is Augmentation.IDENTITY:
            return x
        if kind is Augmentation.HFLIP:
            return torch.flip(x, dims=(ax_w,))
        if kind is Augmentation.VFLIP:
            return torch.flip(x, dims=(ax_h,))
        _require_square(x.shape[ax_h], x.shape[ax_w])
        return torch.transpose(x, ax_h, ax_w)
    arr = np.asarray(x)
    if arr.ndim < 2:
        raise ValueError(f"expected at least 2 spatial dims, got shape {arr.shape}")
    if kind is Augmentation.IDENTITY:
        return arr
    if kind is Augmentation.HFLIP:
        return arr[:, ::-1].copy()
    if kind is Augmentation.VFLIP:
        return arr[::-1].copy()
    _require_square(arr.shape[0], arr.shape[1])
    return arr.swapaxes(0, 1).copy()


def _require_square(h: int, w: int) -> None:
    if h != w:
        raise ValueError(f"transpose needs a square spatial extent, got {h}x{w}")


def restore(mask, kind: Augmentation):
    """Undo an augmentation. Each kind is an involution, so this re-applies it."""
    return augment(mask, kind)


def sem_loss(net: SegmentationNet, patch1: torch.Tensor, patch2: torch.Tensor,
             kind: Augmentation, reduction: str = "sum") -> torch.Tensor:
    """L1 between the restored augmented-branch mask and the direct mask.

    The augmented branch is evaluated without gradient tracking; only the
    direct branch trains the network.
    """
    kind = Augmentation(kind)
    with torch.no_grad():
        reference = restore(net(augment(patch1, kind), augment(patch2, kind)), kind)
    direct = net(patch1, patch2)
    return l1_loss(direct, reference, reduction)


def stage2_loss(net: SegmentationNet, g12_output: torch.Tensor, patch1: torch.Tensor,
                patch2: torch.Tensor, kind: Augmentation, extractor: torch.nn.Module,
                weights: LossWeights) -> torch.Tensor:
    """Mask-gated segmentation objective plus the weighted consistency term."""
    mask = net(patch1, patch2)
    loss = seg_loss(g12_output, patch2, mask, extractor, weights)
    if weights.lambda_sem != 0:
        loss = loss + weights.lambda_sem * sem_loss(net, patch1, patch2, kind, weights.reduction)
    return loss
