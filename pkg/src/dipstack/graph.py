"""Wiring of generators, noise inputs and observations for one decomposition job.

A ``TaskGraph`` lists the observed images, the generators with their noise
inputs, and one ``Unit`` per reconstruction: which generator/noise pair
yields each layer and the mask, and which observation the blend must match.
Generators shared between units are evaluated once per iteration, so their
outputs are literally the same tensor in every reconstruction.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np
import torch
import torch.nn as nn

from .composition import LayerSet, ScalarMask, mix
from .errors import ShapeError
from .generator import NoiseField, forward
from .hints import HintSchedule, bbox_indicator
from .losses import LossWeights


@dataclass(frozen=True)
class Source:
    generator: str
    noise: str


@dataclass
class Unit:
    """One reconstruction ``target ~ mask * y1 + (1 - mask) * y2``.

    ``y2=None`` with ``mask=None`` means the unit is a plain single-generator
    fit. A float mask is a fixed constant. ``mask_floor`` rescales a learned
    mask into ``[mask_floor, 1]``. With ``invert_mask`` the mask is the weight
    of ``y2`` instead (watermark opacity), i.e. the blend is
    ``(1 - mask) * y1 + mask * y2``.
    """

    target: int
    y1: Source
    y2: Source | None = None
    mask: Source | float | None = None
    mask_floor: float = 0.0
    bbox: tuple[int, int, int, int] | None = None
    invert_mask: bool = False
    name: str = ""

    def sources(self) -> list[Source]:
        return [s for s in (self.y1, self.y2, self.mask) if isinstance(s, Source)]


def identity(x):
    return x


@dataclass
class TaskGraph:
    task: str
    targets: list[torch.Tensor]
    generators: nn.ModuleDict
    noises: dict[str, NoiseField]
    units: list[Unit]
    weights: LossWeights = field(default_factory=LossWeights)
    reg: str = "none"
    hints: HintSchedule | None = None
    sample_units: bool = False
    n_scales: int = 3
    norm: str = "mse"
    extras: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        for u in self.units:
            shape = tuple(self.targets[u.target].shape[-2:])
            for s in u.sources():
                if s.generator not in self.generators:
                    raise ShapeError(f"unit {u.name!r} refers to unknown generator {s.generator!r}")
                if s.noise not in self.noises and not isinstance(self.generators[s.generator], ScalarMask):
                    raise ShapeError(f"unit {u.name!r} refers to unknown noise {s.noise!r}")
                if s.noise in self.noises and self.noises[s.noise].spatial_shape != shape:
                    raise ShapeError(
                        f"noise {s.noise!r} is {self.noises[s.noise].spatial_shape}, target is {shape}"
                    )

    def parameters(self):
        return self.generators.parameters()

    def _run(self, src: Source, iteration, ramp, rng, transform) -> torch.Tensor:
        g = self.generators[src.generator]
        if isinstance(g, ScalarMask):
            return g(src.noise)
        z = self.noises[src.noise]
        if iteration is None:
            z = NoiseField(z.base, 0.0, z.seed, z.amplitude)
            iteration = 0
        return forward(g, z, iteration, ramp, rng, transform)

    def evaluate(
        self,
        units: list[Unit] | None = None,
        iteration: int | None = None,
        ramp: int | None = None,
        rng: torch.Generator | None = None,
        transform: Callable = identity,
    ) -> list[dict[str, torch.Tensor]]:
        """Layer tensors of each unit; ``iteration=None`` evaluates without perturbation."""
        units = self.units if units is None else units
        cache: dict[Source, torch.Tensor] = {}

        def get(src):
            if src not in cache:
                cache[src] = self._run(src, iteration, ramp, rng, transform)
            return cache[src]

        out = []
        for u in units:
            y1 = get(u.y1)
            if u.y2 is None:
                out.append({"y1": y1, "y2": None, "mask": None, "reconstruction": y1})
                continue
            y2 = get(u.y2)
            if isinstance(u.mask, Source):
                m = get(u.mask)
            else:
                m = y1.new_tensor(float(u.mask)).reshape(1, 1, 1, 1)
            if u.mask_floor:
                m = u.mask_floor + (1.0 - u.mask_floor) * m
            if u.bbox is not None:
                ind = torch.from_numpy(bbox_indicator(u.bbox, self.targets[u.target].shape[-2:]))
                m = m * transform(ind.to(m.dtype)[None, None])
            weight = 1.0 - m if u.invert_mask else m
            layers = {"y1": y1, "y2": y2, "mask": m, "reconstruction": mix(weight, y1, y2, check=False)}
            if "airlight_color" in self.extras:
                layers["airlight_color"] = self.extras["airlight_color"]
            out.append(layers)
        return out

    def layersets(self) -> list[LayerSet]:
        """Unperturbed, un-augmented outputs as numpy layer sets."""
        with torch.no_grad():
            outs = self.evaluate(iteration=None)
        result = []
        for u, o in zip(self.units, outs):
            y1 = to_image(o["y1"])
            y2 = to_image(o["y2"]) if o["y2"] is not None else np.zeros_like(y1)
            if o["mask"] is None:
                mask = 1.0
            elif o["mask"].shape[-2:] == (1, 1):
                mask = float(o["mask"].reshape(()))
            else:
                mask = to_image(o["mask"])
            extras = {k: v for k, v in self.extras.items()}
            if u.name:
                extras["unit"] = u.name
            if u.invert_mask:
                extras["mask_weights"] = "y2"
            result.append(LayerSet(y1, y2, mask, to_image(o["reconstruction"]), extras))
        return result


def to_tensor(img: np.ndarray, dtype=torch.float32) -> torch.Tensor:
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[..., None]
    return torch.from_numpy(np.ascontiguousarray(arr.transpose(2, 0, 1)))[None].to(dtype)


def to_image(t: torch.Tensor) -> np.ndarray:
    return t.detach().to(torch.float64)[0].permute(1, 2, 0).numpy().copy()


__all__ = ["Source", "Unit", "TaskGraph", "to_tensor", "to_image"]
