"""Ambiguity breakers: crude saliency hints and bounding-box mask constraints."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from scipy import ndimage

from .errors import ConfigurationError

FADES = ("step", "linear")


@dataclass
class HintSchedule:
    """Spatial guidance active during the first iterations of a run.

    ``bbox`` is ``(x, y, w, h)`` in pixels with the origin at the top-left
    corner; ``x`` counts columns.
    """

    saliency_map: np.ndarray | None = None
    bbox: tuple[int, int, int, int] | None = None
    active_until_iteration: int = 500
    fade: str = "step"

    def __post_init__(self):
        if self.fade not in FADES:
            raise ConfigurationError(f"unknown hint fade {self.fade!r}; expected one of {FADES}")
        if self.active_until_iteration < 0:
            raise ConfigurationError("active_until_iteration must be >= 0")

    def validate(self, shape: tuple[int, int]) -> None:
        if self.bbox is not None:
            check_bbox(self.bbox, shape)
        if self.saliency_map is not None and self.saliency_map.shape[:2] != tuple(shape[:2]):
            raise ConfigurationError(
                f"saliency map {self.saliency_map.shape[:2]} does not match image {tuple(shape[:2])}"
            )


def _opponent(I: np.ndarray) -> np.ndarray:
    if I.ndim == 2:
        I = I[..., None]
    if I.shape[-1] == 1:
        return I.astype(np.float64)
    r, g, b = (I[..., k].astype(np.float64) for k in range(3))
    return np.stack([(r + g + b) / 3.0, (r - g) / np.sqrt(2.0), (r + g - 2.0 * b) / np.sqrt(6.0)], axis=-1)


def compute_saliency(I: np.ndarray) -> np.ndarray:
    """Crude saliency: blurred opponent-colour distance from the mean colour.

    Returns an ``H x W`` map in ``[0, 1]`` with maximum 1, or all zeros when
    nothing stands out. Uses only symmetric filters, so the map transforms
    exactly like the image under flips and quarter turns.
    """
    opp = _opponent(np.asarray(I))
    h, w = opp.shape[:2]
    size = max(3, (min(h, w) // 16) | 1)
    blurred = np.stack([ndimage.uniform_filter(opp[..., k], size, mode="reflect") for k in range(opp.shape[-1])], -1)
    mean = opp.reshape(-1, opp.shape[-1]).mean(axis=0)
    dist = np.sqrt(((blurred - mean) ** 2).sum(axis=-1))
    dist = ndimage.uniform_filter(dist, size, mode="reflect")
    peak = dist.max()
    if peak < 1e-6:
        return np.zeros((h, w))
    return np.clip(dist / peak, 0.0, 1.0)


def _unit_mean(w: np.ndarray) -> np.ndarray:
    mean = w.mean()
    if mean <= 0:
        return np.ones_like(w)
    return w / mean


def hint_progress(schedule: HintSchedule | None, iteration: int) -> float:
    """Fraction of the hint that has been relaxed, 0 (full hint) to 1 (none)."""
    if schedule is None or schedule.saliency_map is None or iteration >= schedule.active_until_iteration:
        return 1.0
    if schedule.fade == "linear":
        return iteration / schedule.active_until_iteration
    return 0.0


def hint_weight_maps(
    schedule: HintSchedule | None, iteration: int, shape: tuple[int, int]
) -> tuple[np.ndarray, np.ndarray]:
    """Per-layer reconstruction weights ``(w1, w2)``, each with mean 1.

    The first layer is weighted towards salient pixels and the second
    towards the rest; the maps relax to uniform ones as the hint fades.
    """
    shape = tuple(shape[:2])
    f = hint_progress(schedule, iteration)
    if f >= 1.0:
        return np.ones(shape), np.ones(shape)
    s = schedule.saliency_map
    if s.shape[:2] != shape:
        raise ConfigurationError(f"saliency map {s.shape[:2]} does not match image {shape}")
    w1 = _unit_mean(s.astype(np.float64))
    w2 = _unit_mean(1.0 - s.astype(np.float64))
    return (1.0 - f) * w1 + f, (1.0 - f) * w2 + f


def hint_strength(schedule: HintSchedule | None, iteration: int) -> float:
    """Multiplier of the per-layer hint terms in the objective."""
    return 1.0 - hint_progress(schedule, iteration)


def check_bbox(bbox, shape) -> None:
    x, y, w, h = (int(v) for v in bbox)
    H, W = shape[:2]
    if w < 0 or h < 0 or x < 0 or y < 0 or x + w > W or y + h > H:
        raise ConfigurationError(f"bounding box {tuple(bbox)} is not inside a {H}x{W} image")


def bbox_indicator(bbox, shape) -> np.ndarray:
    """``H x W`` array that is 1 inside the box and 0 elsewhere."""
    check_bbox(bbox, shape)
    x, y, w, h = (int(v) for v in bbox)
    out = np.zeros(tuple(shape[:2]))
    out[y : y + h, x : x + w] = 1.0
    return out


def bbox_mask_constraint(bbox, m):
    """Force the mask to exactly zero outside ``bbox``.

    Works on numpy ``H x W [x 1]`` masks and on ``N x 1 x H x W`` tensors;
    with tensors the multiplication sits in the autograd graph, so no
    gradient reaches pixels outside the box.
    """
    if isinstance(m, torch.Tensor):
        ind = torch.from_numpy(bbox_indicator(bbox, m.shape[-2:])).to(m.dtype)
        return m * ind
    m = np.asarray(m)
    ind = bbox_indicator(bbox, m.shape[:2])
    if m.ndim == 3:
        ind = ind[..., None]
    return m * ind


__all__ = [
    "HintSchedule",
    "compute_saliency",
    "hint_weight_maps",
    "hint_strength",
    "hint_progress",
    "bbox_indicator",
    "bbox_mask_constraint",
    "check_bbox",
]
