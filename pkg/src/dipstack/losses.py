"""Decomposition objective: reconstruction, gradient exclusion and regularizers.

All terms are torch functions over ``N x C x H x W`` tensors so they can be
differentiated; numpy images in ``H x W x C`` layout are accepted too and
converted on the way in.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
import torch
import torch.nn.functional as F

from .errors import ConfigurationError, ShapeError

BINARY_EPS = 1e-6

REGULARIZERS = ("none", "binary", "smoothness", "dehaze")


def as_tensor(x, dtype=torch.float64) -> torch.Tensor:
    """Numpy ``H x W [x C]`` image to a ``1 x C x H x W`` tensor; tensors pass through."""
    if isinstance(x, torch.Tensor):
        return x
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[..., None]
    if arr.ndim != 3:
        raise ShapeError(f"expected an H x W or H x W x C image, got shape {arr.shape}")
    return torch.from_numpy(np.ascontiguousarray(arr.transpose(2, 0, 1)))[None].to(dtype)


def _same_shape(a: torch.Tensor, b: torch.Tensor, what: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{what}: shapes differ, {tuple(a.shape)} vs {tuple(b.shape)}")


@dataclass
class LossWeights:
    """Weights of the composite objective.

    ``terms`` scales individual regularizer components inside the
    regularization term (e.g. ``{"airlight": 20.0}``); anything missing
    defaults to 1.
    """

    alpha: float = 0.1
    beta: float = 0.5
    terms: dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        values = [self.alpha, self.beta, *self.terms.values()]
        if not all(math.isfinite(v) and v >= 0 for v in values):
            raise ConfigurationError(f"loss weights must be finite and >= 0, got {self}")

    def term(self, name: str) -> float:
        return float(self.terms.get(name, 1.0))


@dataclass
class LossReport:
    total: float
    reconst: float
    excl: float
    reg: float
    frames: list[dict[str, float]] | None = None
    tensor: torch.Tensor | None = field(default=None, repr=False, compare=False)

    def row(self) -> dict[str, float]:
        return {"total": self.total, "reconst": self.reconst, "excl": self.excl, "reg": self.reg}


def reconstruction_loss(I, I_hat, norm: str = "mse", weights=None) -> torch.Tensor:
    """Mean squared (or absolute) error, optionally with a per-pixel weight map."""
    I, I_hat = as_tensor(I), as_tensor(I_hat)
    _same_shape(I, I_hat, "reconstruction_loss")
    diff = I - I_hat
    if norm == "mse":
        err = diff * diff
    elif norm == "l1":
        err = diff.abs()
    else:
        raise ConfigurationError(f"unknown reconstruction norm {norm!r}")
    if weights is not None:
        err = err * as_tensor(weights).to(err.dtype)
    return err.mean()


def _downsample(x: torch.Tensor, times: int) -> torch.Tensor:
    for _ in range(times):
        x = F.avg_pool2d(x, 2)
    return x


def _balance(g1: torch.Tensor, g2: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    m1 = g1.mean()
    m2 = g2.mean()
    usable = (m1 > 0) & (m2 > 0)
    one = torch.ones_like(m1)
    lam1 = torch.where(usable, torch.sqrt(torch.where(usable, m2, one) / torch.where(usable, m1, one)), one)
    return lam1, 1.0 / lam1


def exclusion_loss(y1, y2, n_scales: int = 3) -> torch.Tensor:
    """Multi-scale penalty on co-located gradients of two layers.

    At each scale and each axis the absolute finite differences of the two
    layers are squashed with ``tanh`` after balancing their mean magnitudes,
    multiplied, and averaged. The result is symmetric in the two layers and
    zero as soon as one of them is flat.
    """
    y1, y2 = as_tensor(y1), as_tensor(y2)
    _same_shape(y1, y2, "exclusion_loss")
    if n_scales < 1:
        raise ConfigurationError(f"n_scales must be >= 1, got {n_scales}")
    h, w = y1.shape[-2:]
    coarsest = min(h, w) // 2 ** (n_scales - 1)
    if coarsest < 2:
        raise ConfigurationError(f"{h}x{w} image is too small for {n_scales} exclusion scales")
    total = y1.new_zeros(())
    a, b = y1, y2
    for level in range(n_scales):
        if level:
            a, b = _downsample(a, 1), _downsample(b, 1)
        for axis in (-1, -2):
            ga = a.diff(dim=axis).abs()
            gb = b.diff(dim=axis).abs()
            lam1, lam2 = _balance(ga, gb)
            total = total + (torch.tanh(lam1 * ga) * torch.tanh(lam2 * gb)).mean()
    return total


def binary_mask_reg(m, eps: float = BINARY_EPS) -> torch.Tensor:
    """Inverse total distance of the mask from 0.5; small for binary masks."""
    m = as_tensor(m)
    return 1.0 / ((m - 0.5).abs().sum() + eps)


_LAPLACE = torch.tensor([[0.0, 1.0, 0.0], [1.0, -4.0, 1.0], [0.0, 1.0, 0.0]])


def laplacian(t) -> torch.Tensor:
    """5-point Laplacian on interior pixels (output is 2 smaller per axis)."""
    t = as_tensor(t)
    if t.shape[1] != 1:
        raise ShapeError(f"laplacian expects a single-channel map, got {t.shape[1]} channels")
    if t.shape[-1] < 3 or t.shape[-2] < 3:
        raise ShapeError(f"map must be at least 3x3, got {tuple(t.shape[-2:])}")
    return F.conv2d(t, _LAPLACE.to(t.dtype)[None, None])


def smoothness_reg(t) -> torch.Tensor:
    """Mean squared Laplacian of a transmission map over its interior."""
    lap = laplacian(t)
    return (lap * lap).mean()


def airlight_reg(A, color) -> torch.Tensor:
    """Mean squared deviation of an airlight map from a constant colour."""
    A = as_tensor(A)
    if A.shape[1] != 3:
        raise ShapeError(f"airlight map must have 3 channels, got {A.shape[1]}")
    c = torch.as_tensor(np.asarray(color, dtype=np.float64)).to(A.dtype).reshape(1, 3, 1, 1)
    d = A - c
    return (d * d).mean()


def regularizer(selector: str, layers: Mapping, weights: LossWeights) -> torch.Tensor:
    """Task regularizer for one reconstruction unit."""
    if selector == "none":
        return torch.zeros((), dtype=layers["y1"].dtype)
    if selector == "binary":
        return binary_mask_reg(layers["mask"])
    if selector == "smoothness":
        return smoothness_reg(layers["mask"])
    if selector == "dehaze":
        smooth = smoothness_reg(layers["mask"])
        air = airlight_reg(layers["y2"], layers["airlight_color"])
        return weights.term("smoothness") * smooth + weights.term("airlight") * air
    raise ConfigurationError(f"unknown regularizer {selector!r}; expected one of {REGULARIZERS}")


def _hint_term(target, layers, hint) -> torch.Tensor:
    w1, w2, strength = hint
    t = as_tensor(target)
    return strength * (
        reconstruction_loss(t, layers["y1"], weights=w1) + reconstruction_loss(t, layers["y2"], weights=w2)
    )


def total_loss(
    targets,
    layers,
    weights: LossWeights,
    reg: str = "none",
    hint_weights=None,
    n_scales: int = 3,
    norm: str = "mse",
    per_frame: bool = False,
) -> LossReport:
    """Composite objective ``reconst + alpha * excl + beta * reg``.

    ``targets`` and ``layers`` are either one observation and one mapping of
    tensors (``y1``, ``y2``, ``mask``, ``reconstruction`` and optional
    ``airlight_color``) or equal-length sequences of them; terms are
    averaged over reconstruction units. ``hint_weights`` is a tuple
    ``(w1, w2, strength)``: while hints are active each layer is also asked
    to reproduce the observation under its own weight map.
    """
    if reg not in REGULARIZERS:
        raise ConfigurationError(f"unknown regularizer {reg!r}; expected one of {REGULARIZERS}")
    if isinstance(layers, Mapping):
        targets, layers = [targets], [layers]
    if len(targets) != len(layers):
        raise ShapeError(f"{len(targets)} observations for {len(layers)} reconstructions")

    rec_terms, excl_terms, reg_terms = [], [], []
    for target, unit in zip(targets, layers):
        rec = reconstruction_loss(target, unit["reconstruction"], norm=norm)
        if hint_weights is not None and hint_weights[2] > 0:
            rec = rec + _hint_term(target, unit, hint_weights)
        rec_terms.append(rec)
        excl_terms.append(
            exclusion_loss(unit["y1"], unit["y2"], n_scales)
            if weights.alpha > 0 and unit.get("y2") is not None
            else rec.new_zeros(())
        )
        reg_terms.append(regularizer(reg, unit, weights) if weights.beta > 0 else rec.new_zeros(()))

    reconst = torch.stack(rec_terms).mean()
    excl = torch.stack(excl_terms).mean()
    regv = torch.stack(reg_terms).mean()
    total = reconst + weights.alpha * excl + weights.beta * regv
    frames = None
    if per_frame:
        frames = [
            {"reconst": float(r.detach()), "excl": float(e.detach()), "reg": float(g.detach())}
            for r, e, g in zip(rec_terms, excl_terms, reg_terms)
        ]
    return LossReport(
        float(total.detach()), float(reconst.detach()), float(excl.detach()), float(regv.detach()), frames, tensor=total
    )


__all__ = [
    "LossWeights",
    "LossReport",
    "as_tensor",
    "reconstruction_loss",
    "exclusion_loss",
    "binary_mask_reg",
    "laplacian",
    "smoothness_reg",
    "airlight_reg",
    "regularizer",
    "total_loss",
    "REGULARIZERS",
]
