"""Export-time refinement of learned layers and masks."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import ConfigurationError, DomainError, ShapeError


@dataclass(frozen=True)
class GuidedFilterParams:
    radius: int = 8
    eps: float = 1e-4

    def __post_init__(self):
        if self.radius < 1:
            raise ConfigurationError(f"guided filter radius must be >= 1, got {self.radius}")
        if self.eps < 0:
            raise ConfigurationError(f"guided filter eps must be >= 0, got {self.eps}")


def box_mean(x: np.ndarray, radius: int) -> np.ndarray:
    """Mean over ``(2r+1) x (2r+1)`` windows with edge-replicating borders.

    Only the two leading (spatial) axes are filtered.
    """
    size = [2 * radius + 1] * 2 + [1] * (x.ndim - 2)
    return ndimage.uniform_filter(x, size=size, mode="nearest")


def guided_filter(guide: np.ndarray, input: np.ndarray, params: GuidedFilterParams = GuidedFilterParams()) -> np.ndarray:
    """Edge-preserving smoothing of ``input`` steered by ``guide``.

    The output is locally an affine function of the guide. Grey guides use
    the scalar form; three-channel guides solve the 3x3 system per window.
    The result has the shape of ``input``.
    """
    guide = np.asarray(guide, dtype=np.float64)
    p = np.asarray(input, dtype=np.float64)
    out_shape = p.shape
    if p.ndim == 3:
        if p.shape[-1] != 1:
            raise ShapeError(f"guided_filter input must have one channel, got {p.shape[-1]}")
        p = p[..., 0]
    if guide.ndim == 3 and guide.shape[-1] == 1:
        guide = guide[..., 0]
    if guide.shape[:2] != p.shape:
        raise ShapeError(f"guide {guide.shape} and input {out_shape} differ in size")
    r, eps = params.radius, params.eps

    mean_p = box_mean(p, r)
    if guide.ndim == 2:
        mean_I = box_mean(guide, r)
        cov = box_mean(guide * p, r) - mean_I * mean_p
        var = box_mean(guide * guide, r) - mean_I * mean_I
        denom = var + eps
        safe = denom > 0
        a = np.where(safe, cov / np.where(safe, denom, 1.0), 0.0)
        b = mean_p - a * mean_I
        q = box_mean(a, r) * guide + box_mean(b, r)
    elif guide.ndim == 3 and guide.shape[-1] == 3:
        mean_I = box_mean(guide, r)
        cov = box_mean(guide * p[..., None], r) - mean_I * mean_p[..., None]
        outer = guide[..., :, None] * guide[..., None, :]
        sigma = box_mean(outer.reshape(*p.shape, 9), r).reshape(*p.shape, 3, 3)
        sigma = sigma - mean_I[..., :, None] * mean_I[..., None, :]
        sigma = sigma + eps * np.eye(3)
        if eps > 0:
            a = np.linalg.solve(sigma, cov[..., None])[..., 0]
        else:
            a = (np.linalg.pinv(sigma) @ cov[..., None])[..., 0]
        b = mean_p - (a * mean_I).sum(axis=-1)
        q = (box_mean(a, r) * guide).sum(axis=-1) + box_mean(b, r)
    else:
        raise ShapeError(f"guide must have 1 or 3 channels, got shape {guide.shape}")
    return q.reshape(out_shape)


def binarize_mask(m: np.ndarray, threshold: float = 0.5) -> np.ndarray:
    """Indicator of ``m > threshold`` (ties go to 0)."""
    return (np.asarray(m) > threshold).astype(np.float64)


def _out_of_range_slope(c, y1_sorted, lo1_sorted, y2_neg_sorted, y2_hi_sorted, k):
    # right derivative of the out-of-range mass at c
    s = np.searchsorted(y1_sorted, c, side="right")  # count y1 <= c
    s -= len(lo1_sorted) - np.searchsorted(lo1_sorted, c, side="right")  # count y1 - 1 > c
    if k > 0:
        s -= k * (len(y2_neg_sorted) - np.searchsorted(y2_neg_sorted, c, side="right"))  # -y2/k > c
        s += k * np.searchsorted(y2_hi_sorted, c, side="right")  # (1 - y2)/k <= c
    return s


def _min_out_of_range_offset(y1: np.ndarray, y2: np.ndarray, k: float) -> float:
    """Offset ``c`` minimizing the mass of ``y1 - c`` and ``y2 + k c`` outside ``[0, 1]``.

    The objective is convex and piecewise linear, so the minimum sits at a
    breakpoint; among a flat set of minimizers the one nearest 0 is chosen.
    """
    y1s = np.sort(y1.ravel())
    lo1 = np.sort(y1.ravel() - 1.0)
    if k > 0:
        y2neg = np.sort(-y2.ravel() / k)
        y2hi = np.sort((1.0 - y2.ravel()) / k)
        points = np.unique(np.concatenate([y1s, lo1, y2neg, y2hi]))
    else:
        y2neg = y2hi = np.empty(0)
        points = np.unique(np.concatenate([y1s, lo1]))

    def slope(c):
        return _out_of_range_slope(c, y1s, lo1, y2neg, y2hi, k)

    lo, hi = 0, len(points) - 1
    while lo < hi:
        mid = (lo + hi) // 2
        if slope(points[mid]) >= 0:
            hi = mid
        else:
            lo = mid + 1
    left = points[lo]
    if slope(left) > 0 or lo + 1 >= len(points):
        return float(left)
    right = points[lo + 1]
    return float(np.clip(0.0, left, right))


def resolve_color_ambiguity(y1: np.ndarray, y2: np.ndarray, alpha: float = 0.5, reference: np.ndarray | None = None):
    """Remove the constant colour offset that two transparent layers can trade.

    For a constant mixing weight ``alpha`` the layers ``y1 - c`` and
    ``y2 + c * alpha / (1 - alpha)`` blend to exactly the same image. Without
    a reference ``c`` is chosen per channel to push as little of either
    layer outside ``[0, 1]`` as possible; with a reference for the first
    layer it is the least-squares match to it.

    Returns ``(y1', y2', c)``.
    """
    y1 = np.asarray(y1, dtype=np.float64)
    y2 = np.asarray(y2, dtype=np.float64)
    if y1.shape != y2.shape:
        raise ShapeError(f"layer shapes differ: {y1.shape} vs {y2.shape}")
    if not 0.0 <= alpha < 1.0:
        raise DomainError(f"alpha must lie in [0, 1), got {alpha}")
    k = alpha / (1.0 - alpha)
    if y1.ndim == 2:
        y1, y2 = y1[..., None], y2[..., None]
        squeeze = True
    else:
        squeeze = False
    channels = y1.shape[-1]
    if reference is not None:
        ref = np.asarray(reference, dtype=np.float64).reshape(y1.shape)
        c = (y1 - ref).reshape(-1, channels).mean(axis=0)
    else:
        c = np.array([_min_out_of_range_offset(y1[..., i], y2[..., i], k) for i in range(channels)])
    y1n = y1 - c
    y2n = y2 + k * c
    if squeeze:
        y1n, y2n = y1n[..., 0], y2n[..., 0]
    return y1n, y2n, c


__all__ = [
    "GuidedFilterParams",
    "box_mean",
    "guided_filter",
    "binarize_mask",
    "resolve_color_ambiguity",
]
