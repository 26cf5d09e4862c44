"""Evaluation metrics and the mixture-complexity diagnostic."""

from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.spatial import cKDTree

from .errors import ConfigurationError, DomainError, ShapeError

PSNR_CAP = 100.0
MODES = ("superimpose", "split_lr")


def _pair(x, ref) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(x, dtype=np.float64)
    ref = np.asarray(ref, dtype=np.float64)
    if x.shape != ref.shape:
        raise ShapeError(f"shapes differ: {x.shape} vs {ref.shape}")
    return x, ref


def psnr(x, ref) -> float:
    """Peak signal-to-noise ratio in dB for images in [0, 1]; identical inputs give 100."""
    x, ref = _pair(x, ref)
    mse = float(np.mean((x - ref) ** 2))
    if mse == 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * math.log10(1.0 / mse))


def layer_correlation(y, gt) -> float:
    """Pearson correlation of all pixels; blind to a global offset or gain."""
    y, gt = _pair(y, gt)
    a = y.ravel() - y.mean()
    b = gt.ravel() - gt.mean()
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        warnings.warn("layer_correlation: zero-variance input, returning 0", RuntimeWarning, stacklevel=2)
        return 0.0
    return float(np.clip(a @ b / (na * nb), -1.0, 1.0))


def iou(mask, gt) -> float:
    mask, gt = _pair(mask, gt)
    for name, m in (("mask", mask), ("gt", gt)):
        if not np.all((m == 0) | (m == 1)):
            raise DomainError(f"iou needs binary inputs; {name} has non-binary values")
    union = np.logical_or(mask, gt).sum()
    if union == 0:
        return 1.0
    return float(np.logical_and(mask, gt).sum() / union)


def patch_diversity(I, patch: int = 5) -> float:
    """Mean RMS distance from each patch to its nearest other patch.

    Every overlapping ``patch x patch`` window is compared with all others
    (exact nearest neighbour search). Repetitive images score near 0.
    """
    I = np.asarray(I, dtype=np.float64)
    if I.ndim == 2:
        I = I[..., None]
    h, w = I.shape[:2]
    if patch < 1 or patch > min(h, w):
        raise ConfigurationError(f"patch size {patch} does not fit a {h}x{w} image")
    windows = np.lib.stride_tricks.sliding_window_view(I, (patch, patch), axis=(0, 1))
    vectors = windows.reshape(-1, windows[0, 0].size)
    if len(vectors) < 2:
        return 0.0
    dist, _ = cKDTree(vectors).query(vectors, k=2)
    # column 0 may be a duplicate rather than the point itself; either way
    # the second distance is the nearest other patch
    nearest = np.where(dist[:, 0] > 0, dist[:, 0], dist[:, 1])
    return float(np.mean(nearest) / math.sqrt(vectors.shape[1]))


def final_loss(history: Sequence[float], tail: float = 0.1) -> float:
    """Mean of the last ``tail`` fraction of a loss curve (at least one value)."""
    h = np.asarray(history, dtype=np.float64)
    n = max(1, int(round(len(h) * tail)))
    return float(h[-n:].mean())


def make_mixture(a: np.ndarray, b: np.ndarray, mode: str, weight: float = 0.5) -> np.ndarray:
    a, b = _pair(a, b)
    if mode == "superimpose":
        return weight * a + (1.0 - weight) * b
    if mode == "split_lr":
        out = b.copy()
        half = a.shape[1] // 2
        out[:, :half] = a[:, :half]
        return out
    raise ConfigurationError(f"unknown mixture mode {mode!r}; expected one of {MODES}")


@dataclass
class PairResult:
    final_a: float
    final_b: float
    final_mix: float
    curves: dict[str, list[float]] = field(repr=False)

    @property
    def mixture_harder(self) -> bool:
        return self.final_mix > max(self.final_a, self.final_b)

    @property
    def ratio(self) -> float:
        top = max(self.final_a, self.final_b)
        return self.final_mix / top if top > 0 else math.inf


@dataclass
class DiagnosticReport:
    mode: str
    mix_weight: float
    iterations: int
    pairs: list[PairResult]

    @property
    def sample_count(self) -> int:
        return len(self.pairs)

    @property
    def fraction_harder(self) -> float:
        return float(np.mean([p.mixture_harder for p in self.pairs])) if self.pairs else 0.0

    def passes(self, threshold: float = 0.8) -> bool:
        return self.fraction_harder >= threshold

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "mix_weight": self.mix_weight,
            "iterations": self.iterations,
            "sample_count": self.sample_count,
            "fraction_mixture_harder": self.fraction_harder,
            "pairs": [
                {
                    "final_a": p.final_a,
                    "final_b": p.final_b,
                    "final_mix": p.final_mix,
                    "ratio": p.ratio,
                    "mixture_harder": p.mixture_harder,
                }
                for p in self.pairs
            ],
        }

    def write(self, out_dir) -> list[Path]:
        """Write ``report.json`` and one loss-curve CSV per pair."""
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        files = [out / "report.json"]
        files[0].write_text(json.dumps(self.to_dict(), indent=2))
        for i, p in enumerate(self.pairs):
            path = out / f"pair_{i:03d}_curves.csv"
            with path.open("w", newline="") as fh:
                wr = csv.writer(fh)
                wr.writerow(["iter", "component_a", "component_b", "mixture"])
                for it, row in enumerate(zip(p.curves["a"], p.curves["b"], p.curves["mix"])):
                    wr.writerow([it, *row])
            files.append(path)
        return files


def mixture_complexity_experiment(
    pairs: Sequence[tuple[np.ndarray, np.ndarray]],
    mode: str,
    config,
    spec=None,
    mix_weight: float = 0.5,
) -> DiagnosticReport:
    """Fit one generator to each image of a pair and to their mixture.

    ``superimpose`` blends the two images with ``mix_weight``; ``split_lr``
    takes the left half of the first and the right half of the second. Each
    arm starts from the same seed, so only the target differs.
    """
    from .optimizer import single_dip_fit

    if mode not in MODES:
        raise ConfigurationError(f"unknown mixture mode {mode!r}; expected one of {MODES}")
    if len(pairs) < 2:
        raise ConfigurationError("the diagnostic needs at least 2 image pairs")
    results = []
    for a, b in pairs:
        z = make_mixture(a, b, mode, mix_weight)
        curves = {}
        for key, img in (("a", a), ("b", b), ("mix", z)):
            state = single_dip_fit(np.asarray(img, dtype=np.float64), config, spec)
            curves[key] = [float(v) for v in state.losses("total")]
        results.append(
            PairResult(final_loss(curves["a"]), final_loss(curves["b"]), final_loss(curves["mix"]), curves)
        )
    return DiagnosticReport(mode, mix_weight, config.iterations, results)


__all__ = [
    "psnr",
    "layer_correlation",
    "iou",
    "patch_diversity",
    "final_loss",
    "make_mixture",
    "mixture_complexity_experiment",
    "DiagnosticReport",
    "PairResult",
    "PSNR_CAP",
]
