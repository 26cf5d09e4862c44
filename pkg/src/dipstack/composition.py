"""Layer mixing models.

Every decomposition reconstructs an observation as a convex per-pixel blend
``m * y1 + (1 - m) * y2``. The functions here work on numpy arrays in
``H x W x C`` layout and on torch tensors in ``N x C x H x W`` layout alike;
a mask may be a full image, a single-channel image that broadcasts over
colour channels, or a scalar.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np
import torch
import torch.nn as nn

from .errors import DomainError, IdentifiabilityWarning, ShapeError


@dataclass
class LayerSet:
    """Result of one decomposition.

    ``mask`` is either an image (one channel) or a float for constant-alpha
    models. ``extras`` holds task-specific values such as ``airlight_color``
    or ``ambiguity_offset``.
    """

    y1: np.ndarray
    y2: np.ndarray
    mask: np.ndarray | float
    reconstruction: np.ndarray
    extras: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if self.y1.shape != self.y2.shape or self.y1.shape != self.reconstruction.shape:
            raise ShapeError(
                f"layer shapes differ: y1 {self.y1.shape}, y2 {self.y2.shape}, "
                f"reconstruction {self.reconstruction.shape}"
            )
        if isinstance(self.mask, np.ndarray) and self.mask.ndim > 0:
            if self.mask.shape[:2] != self.y1.shape[:2]:
                raise ShapeError(f"mask {self.mask.shape} does not match layers {self.y1.shape}")

    @property
    def scalar_mask(self) -> bool:
        return not (isinstance(self.mask, np.ndarray) and self.mask.ndim > 0)


def _is_scalar(m) -> bool:
    if isinstance(m, (int, float, np.floating, np.integer)):
        return True
    return isinstance(m, (np.ndarray, torch.Tensor)) and m.ndim == 0


def _check_mask_range(m) -> None:
    if isinstance(m, torch.Tensor):
        lo, hi = float(m.detach().min()), float(m.detach().max())
    else:
        arr = np.asarray(m)
        lo, hi = float(arr.min()), float(arr.max())
    if lo < 0.0 or hi > 1.0 or np.isnan(lo) or np.isnan(hi):
        raise DomainError(f"mask values must lie in [0, 1], got range [{lo}, {hi}]")


def _check_mask_shape(m, y) -> None:
    if _is_scalar(m):
        return
    if isinstance(y, torch.Tensor):
        # N x C x H x W; mask may have 1 channel or broadcast fully
        ok = m.dim() == y.dim() and m.shape[-2:] == y.shape[-2:] and m.shape[1] in (1, y.shape[1])
    else:
        if m.ndim == 2:
            ok = m.shape == y.shape[:2]
        else:
            ok = m.ndim == y.ndim and m.shape[:2] == y.shape[:2] and m.shape[-1] in (1, y.shape[-1])
    if not ok:
        raise ShapeError(f"mask shape {tuple(m.shape)} incompatible with layer shape {tuple(y.shape)}")


def mix(mask, y1, y2, check: bool = True):
    """Convex per-pixel blend ``mask * y1 + (1 - mask) * y2``.

    ``check=False`` skips the range test; the optimizer uses it inside the
    training loop where masks come out of a sigmoid anyway.
    """
    if tuple(y1.shape) != tuple(y2.shape):
        raise ShapeError(f"layer shapes differ: {tuple(y1.shape)} vs {tuple(y2.shape)}")
    if check:
        _check_mask_shape(mask, y1)
        _check_mask_range(mask)
    if isinstance(mask, np.ndarray) and mask.ndim == 2 and np.ndim(y1) == 3:
        mask = mask[..., None]
    return mask * y1 + (1 - mask) * y2


def mix_two_mixtures(alpha1: float, alpha2: float, y1, y2):
    """Two observations of the same pair of layers under different constant alphas."""
    if alpha1 == alpha2:
        warnings.warn(
            f"alpha1 == alpha2 == {alpha1}: the two mixtures coincide and the layers are not identifiable",
            IdentifiabilityWarning,
            stacklevel=2,
        )
    return mix(alpha1, y1, y2), mix(alpha2, y1, y2)


def mix_video(masks: Sequence, layer1_frames: Sequence, layer2) -> list:
    """Frame-wise mixing.

    ``layer2`` is either a per-frame sequence (segmentation) or a single
    image shared by every frame (static reflection).
    """
    n = len(layer1_frames)
    if len(masks) != n:
        raise ShapeError(f"{len(masks)} masks for {n} frames")
    if isinstance(layer2, (list, tuple)):
        if len(layer2) != n:
            raise ShapeError(f"{len(layer2)} second-layer frames for {n} frames")
        seconds = list(layer2)
    else:
        seconds = [layer2] * n
    return [mix(m, a, b) for m, a, b in zip(masks, layer1_frames, seconds)]


class ScalarMask(nn.Module):
    """Learnable constant alpha, one logit per named noise input.

    The constant transparency coefficient is what a convolutional network
    with a spatially constant output would produce; it is modelled directly
    as ``sigmoid(logit)``. Two noise names give two independent coefficients
    from the same module, which is how the two-mixture model is wired.
    """

    def __init__(self, keys: Sequence[str], init: float = 0.5):
        super().__init__()
        init = float(np.clip(init, 1e-4, 1 - 1e-4))
        logit = float(np.log(init / (1 - init)))
        self.logits = nn.ParameterDict({k: nn.Parameter(torch.tensor(logit)) for k in keys})

    def forward(self, key: str) -> torch.Tensor:
        return torch.sigmoid(self.logits[key]).reshape(1, 1, 1, 1)


__all__ = ["LayerSet", "mix", "mix_two_mixtures", "mix_video", "ScalarMask"]
