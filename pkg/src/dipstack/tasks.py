"""Task-specific decomposition graphs.

Each builder decides which generators exist, which noise feeds which
generator, how outputs are blended into each observation and which
regularizer and hints apply. Builders are pure: the same inputs and seed
give the same initial outputs.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np
import torch
import torch.nn as nn
from scipy import ndimage

from .composition import ScalarMask
from .errors import AmbiguityWarning, ConfigurationError, ShapeError
from .generator import Generator, GeneratorSpec, build_generator, make_noise
from .graph import Source, TaskGraph, Unit, to_tensor
from .hints import HintSchedule, check_bbox, compute_saliency
from .losses import LossWeights

TASKS = (
    "segment",
    "segment_video",
    "transparency_hint",
    "transparency_two_mixtures",
    "transparency_video",
    "watermark_bbox",
    "watermark_multi",
    "dehaze",
)

ALPHA_MODELS = ("scalar", "dip", "spatial")
DEHAZE_T_FLOOR = 0.05
DEFAULT_DELTA_RATIO = 0.05


def default_weights(task: str) -> LossWeights:
    if task in ("segment", "segment_video"):
        return LossWeights(alpha=0.1, beta=0.5)
    if task == "dehaze":
        # beta scales the smoothness term; the airlight term's effective weight is 0.05 * 20 = 1
        return LossWeights(alpha=0.1, beta=0.05, terms={"smoothness": 1.0, "airlight": 20.0})
    return LossWeights(alpha=0.1, beta=0.0)


@dataclass
class TaskConfig:
    task: str
    weights: LossWeights | None = None
    hints: HintSchedule | None = None
    params: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if self.task not in TASKS:
            raise ConfigurationError(f"unknown task {self.task!r}; expected one of {TASKS}")
        if self.weights is None:
            self.weights = default_weights(self.task)


class MeanAlpha(Generator):
    """Generator whose spatially averaged output serves as a constant alpha."""

    def forward(self, z):
        return super().forward(z).mean(dim=(-2, -1), keepdim=True)


def _seeds(seed: int, n: int) -> list[int]:
    return [int(s) for s in np.random.SeedSequence(seed).generate_state(n)]


def _channels(I: np.ndarray) -> int:
    return 1 if I.ndim == 2 else I.shape[-1]


def _check_image(I) -> np.ndarray:
    I = np.asarray(I, dtype=np.float64)
    if I.ndim not in (2, 3) or I.size == 0:
        raise ShapeError(f"expected a non-empty H x W [x C] image, got shape {I.shape}")
    return I


def _same_sizes(images: Sequence[np.ndarray]) -> None:
    shapes = {im.shape for im in images}
    if len(shapes) != 1:
        raise ShapeError(f"inputs must share one shape, got {sorted(shapes)}")


class _Builder:
    """Accumulates generators and noises with deterministic seeds."""

    def __init__(self, seed: int, shape: tuple[int, int], spec: GeneratorSpec):
        self.seeds = iter(_seeds(seed, 256))
        self.shape = shape
        self.spec = spec
        self.generators: dict[str, nn.Module] = {}
        self.noises = {}

    def dip(self, name: str, out_channels: int, cls=Generator) -> str:
        spec = self.spec.with_outputs(out_channels)
        s = next(self.seeds)
        if cls is Generator:
            self.generators[name] = build_generator(spec, s)
        else:
            spec.validate()
            with torch.random.fork_rng(devices=[]):
                torch.manual_seed(s)
                self.generators[name] = cls(spec)
        return name

    def noise(self, name: str) -> str:
        self.noises[name] = make_noise(self.shape, next(self.seeds), channels=self.spec.input_channels)
        return name

    def noise_chain(self, name: str, n: int, ratio: float) -> list[str]:
        """``n`` noises where each differs from the previous by a small uniform step."""
        first = self.noise(f"{name}_0")
        names = [first]
        current = self.noises[first]
        for i in range(1, n):
            delta = current.scaled(ratio, next(self.seeds))
            nxt = type(current)(current.base + delta.base, current.perturb_sigma, delta.seed, current.amplitude)
            self.noises[f"{name}_{i}"] = nxt
            names.append(f"{name}_{i}")
            current = nxt
        return names

    def graph(self, task, targets, units, weights, **kw) -> TaskGraph:
        return TaskGraph(
            task=task,
            targets=[to_tensor(t) for t in targets],
            generators=nn.ModuleDict(self.generators),
            noises=self.noises,
            units=units,
            weights=weights,
            **kw,
        )


def build_single(I, spec: GeneratorSpec | None = None, seed: int = 0) -> TaskGraph:
    """One generator reconstructing ``I`` (reconstruction loss only)."""
    I = _check_image(I)
    b = _Builder(seed, I.shape[:2], spec or GeneratorSpec())
    g = b.dip("dip", _channels(I))
    z = b.noise("z")
    return b.graph("single", [I], [Unit(0, Source(g, z), name="single")], LossWeights(0.0, 0.0))


def _saliency_hints(I, hints: HintSchedule | None, use_hints: bool) -> HintSchedule | None:
    if not use_hints:
        return None
    hints = hints or HintSchedule()
    if hints.saliency_map is None:
        hints.saliency_map = compute_saliency(I)
    hints.validate(I.shape)
    return hints


def build_segmentation(
    I,
    spec: GeneratorSpec | None = None,
    seed: int = 0,
    weights: LossWeights | None = None,
    hints: HintSchedule | None = None,
    use_hints: bool = True,
) -> TaskGraph:
    """Foreground/background layers blended by a learned near-binary mask."""
    I = _check_image(I)
    b = _Builder(seed, I.shape[:2], spec or GeneratorSpec())
    c = _channels(I)
    unit = Unit(
        0,
        Source(b.dip("dip1", c), b.noise("z1")),
        Source(b.dip("dip2", c), b.noise("z2")),
        Source(b.dip("mask", 1), b.noise("zm")),
        name="segment",
    )
    return b.graph(
        "segment",
        [I],
        [unit],
        weights or default_weights("segment"),
        reg="binary",
        hints=_saliency_hints(I, hints, use_hints),
    )


def build_video_segmentation(
    frames: Sequence,
    spec: GeneratorSpec | None = None,
    seed: int = 0,
    weights: LossWeights | None = None,
    delta_ratio: float = DEFAULT_DELTA_RATIO,
) -> TaskGraph:
    """Per-frame segmentation with one generator per layer shared by all frames.

    Frames differ only through their noise inputs, which drift from frame to
    frame by small uniform increments.
    """
    frames = [_check_image(f) for f in frames]
    if len(frames) < 2:
        raise ConfigurationError("video segmentation needs at least 2 frames")
    _same_sizes(frames)
    n = len(frames)
    b = _Builder(seed, frames[0].shape[:2], spec or GeneratorSpec())
    c = _channels(frames[0])
    g1, g2, gm = b.dip("dip1", c), b.dip("dip2", c), b.dip("mask", 1)
    z1 = b.noise_chain("z1", n, delta_ratio)
    z2 = b.noise_chain("z2", n, delta_ratio)
    zm = b.noise_chain("zm", n, delta_ratio)
    units = [
        Unit(i, Source(g1, z1[i]), Source(g2, z2[i]), Source(gm, zm[i]), name=f"frame_{i:03d}") for i in range(n)
    ]
    return b.graph(
        "segment_video",
        frames,
        units,
        weights or default_weights("segment_video"),
        reg="binary",
        sample_units=True,
        extras={"delta_ratio": delta_ratio},
    )


def _alpha_generator(b: _Builder, keys: list[str], alpha_model: str) -> str:
    if alpha_model == "scalar":
        b.generators["alpha"] = ScalarMask(keys)
    elif alpha_model in ("dip", "spatial"):
        # "spatial" keeps the per-pixel output; experimental
        b.dip("alpha", 1, cls=MeanAlpha if alpha_model == "dip" else Generator)
        for k in keys:
            b.noise(k)
    else:
        raise ConfigurationError(f"unknown alpha_model {alpha_model!r}; expected one of {ALPHA_MODELS}")
    return "alpha"


def build_transparency(
    inputs,
    variant: str | None = None,
    spec: GeneratorSpec | None = None,
    seed: int = 0,
    weights: LossWeights | None = None,
    hints: HintSchedule | None = None,
    use_hints: bool = True,
    alpha_model: str = "scalar",
    delta_ratio: float = DEFAULT_DELTA_RATIO,
) -> TaskGraph:
    """Two transparent layers under constant alphas.

    ``variant`` is ``"hint"`` (one image, saliency hints), ``"two_mixtures"``
    (two images of the same layers) or ``"video"`` (frame list with a static
    second layer). When omitted it follows from the number of inputs:
    one image, a pair, or three or more frames.
    """
    images = [inputs] if isinstance(inputs, np.ndarray) else list(inputs)
    images = [_check_image(im) for im in images]
    if variant is None:
        variant = {1: "hint", 2: "two_mixtures"}.get(len(images), "video")
    arity_ok = {"hint": len(images) == 1, "two_mixtures": len(images) == 2, "video": len(images) >= 2}
    if variant not in arity_ok:
        raise ConfigurationError(f"unknown transparency variant {variant!r}")
    if not arity_ok[variant]:
        raise ConfigurationError(f"transparency variant {variant!r} cannot take {len(images)} input image(s)")
    _same_sizes(images)
    weights = weights or default_weights(f"transparency_{variant}")
    b = _Builder(seed, images[0].shape[:2], spec or GeneratorSpec())
    c = _channels(images[0])
    g1, g2 = b.dip("dip1", c), b.dip("dip2", c)

    if variant == "hint":
        z1, z2 = b.noise("z1"), b.noise("z2")
        ga = _alpha_generator(b, ["za"], alpha_model)
        hint_schedule = _saliency_hints(images[0], hints, use_hints)
        if hint_schedule is None:
            warnings.warn(
                "single-mixture transparency without hints: the layer split is ambiguous",
                AmbiguityWarning,
                stacklevel=2,
            )
        units = [Unit(0, Source(g1, z1), Source(g2, z2), Source(ga, "za"), name="mixture")]
        return b.graph("transparency_hint", images, units, weights, hints=hint_schedule)

    if variant == "two_mixtures":
        z1, z2 = b.noise("z1"), b.noise("z2")
        ga = _alpha_generator(b, ["za_0", "za_1"], alpha_model)
        units = [
            Unit(i, Source(g1, z1), Source(g2, z2), Source(ga, f"za_{i}"), name=f"mixture_{i}") for i in range(2)
        ]
        return b.graph("transparency_two_mixtures", images, units, weights)

    n = len(images)
    z1 = b.noise_chain("z1", n, delta_ratio)
    z2 = b.noise("z2")
    keys = [f"za_{i}" for i in range(n)]
    ga = _alpha_generator(b, keys, alpha_model)
    units = [Unit(i, Source(g1, z1[i]), Source(g2, z2), Source(ga, keys[i]), name=f"frame_{i:03d}") for i in range(n)]
    return b.graph(
        "transparency_video", images, units, weights, sample_units=True, extras={"delta_ratio": delta_ratio}
    )


def build_watermark(
    inputs,
    bbox: tuple[int, int, int, int] | None = None,
    spec: GeneratorSpec | None = None,
    seed: int = 0,
    weights: LossWeights | None = None,
) -> TaskGraph:
    """Clean image(s) plus a watermark layer blended by an opacity mask.

    A single image needs ``bbox``; the mask is then zero outside it. With
    several images the watermark and its mask come from generators shared
    by all of them and no box is needed.
    """
    images = [inputs] if isinstance(inputs, np.ndarray) else list(inputs)
    images = [_check_image(im) for im in images]
    _same_sizes(images)
    b = _Builder(seed, images[0].shape[:2], spec or GeneratorSpec())
    c = _channels(images[0])
    if len(images) == 1:
        if bbox is None:
            raise ConfigurationError("single-image watermark removal needs a bounding box hint")
        check_bbox(bbox, images[0].shape)
        unit = Unit(
            0,
            Source(b.dip("clean", c), b.noise("z1")),
            Source(b.dip("watermark", c), b.noise("z2")),
            Source(b.dip("mask", 1), b.noise("zm")),
            bbox=tuple(int(v) for v in bbox),
            invert_mask=True,
            name="watermark",
        )
        return b.graph("watermark_bbox", images, [unit], weights or default_weights("watermark_bbox"))

    gw, zw = b.dip("watermark", c), b.noise("zw")
    gm, zm = b.dip("mask", 1), b.noise("zm")
    units = []
    for i in range(len(images)):
        g = b.dip(f"clean_{i}", c)
        units.append(
            Unit(i, Source(g, b.noise(f"z_{i}")), Source(gw, zw), Source(gm, zm), invert_mask=True, name=f"image_{i}")
        )
    return b.graph("watermark_multi", images, units, weights or default_weights("watermark_multi"))


def dark_channel(I: np.ndarray, window: int = 15) -> np.ndarray:
    """Per-pixel minimum over colour channels and a square window."""
    I = np.asarray(I, dtype=np.float64)
    channel_min = I.min(axis=-1) if I.ndim == 3 else I
    return ndimage.minimum_filter(channel_min, size=window, mode="nearest")


def estimate_airlight(I, window: int = 15, fraction: float = 0.001) -> np.ndarray:
    """Airlight colour as the mean colour of the haziest pixels.

    The haziest pixels are the top ``fraction`` of the dark channel; with
    ties at the cut-off the lower index wins, so the result is deterministic.
    """
    I = _check_image(I)
    if I.ndim != 3 or I.shape[-1] != 3:
        raise ShapeError(f"airlight estimation needs an RGB image, got shape {I.shape}")
    dark = dark_channel(I, window).reshape(-1)
    n = max(1, int(np.floor(dark.size * fraction)))
    idx = np.argsort(-dark, kind="stable")[:n]
    return np.clip(I.reshape(-1, 3)[idx].mean(axis=0), 0.0, 1.0)


def build_dehaze(
    I,
    airlight=None,
    spec: GeneratorSpec | None = None,
    seed: int = 0,
    weights: LossWeights | None = None,
) -> TaskGraph:
    """Haze-free image, airlight map and transmission map.

    The transmission is kept in ``[0.05, 1]``; the airlight map is pulled
    towards a single colour estimated from the image (or given).
    """
    I = _check_image(I)
    if I.ndim != 3 or I.shape[-1] != 3:
        raise ShapeError(f"dehazing needs an RGB image, got shape {I.shape}")
    color = estimate_airlight(I) if airlight is None else np.clip(np.asarray(airlight, dtype=np.float64), 0, 1)
    b = _Builder(seed, I.shape[:2], spec or GeneratorSpec())
    unit = Unit(
        0,
        Source(b.dip("haze_free", 3), b.noise("zj")),
        Source(b.dip("airlight", 3), b.noise("za")),
        Source(b.dip("transmission", 1), b.noise("zt")),
        mask_floor=DEHAZE_T_FLOOR,
        name="dehaze",
    )
    return b.graph(
        "dehaze",
        [I],
        [unit],
        weights or default_weights("dehaze"),
        reg="dehaze",
        extras={"airlight_color": color},
    )


def build_task(config: TaskConfig, inputs: Sequence[np.ndarray], spec: GeneratorSpec | None = None, seed: int = 0):
    """Dispatch on ``config.task``; ``inputs`` is the list of loaded images or frames."""
    inputs = list(inputs)
    p = config.params
    arity = {
        "segment": len(inputs) == 1,
        "segment_video": len(inputs) >= 2,
        "transparency_hint": len(inputs) == 1,
        "transparency_two_mixtures": len(inputs) == 2,
        "transparency_video": len(inputs) >= 2,
        "watermark_bbox": len(inputs) == 1,
        "watermark_multi": len(inputs) >= 2,
        "dehaze": len(inputs) == 1,
    }
    if not arity[config.task]:
        raise ConfigurationError(f"task {config.task!r} cannot take {len(inputs)} input image(s)")
    t = config.task
    if t == "segment":
        return build_segmentation(
            inputs[0], spec, seed, config.weights, config.hints, use_hints=p.get("use_hints", True)
        )
    if t == "segment_video":
        return build_video_segmentation(inputs, spec, seed, config.weights, p.get("delta_ratio", DEFAULT_DELTA_RATIO))
    if t.startswith("transparency_"):
        return build_transparency(
            inputs if len(inputs) > 1 else inputs[0],
            t.split("_", 1)[1],
            spec,
            seed,
            config.weights,
            config.hints,
            use_hints=p.get("use_hints", True),
            alpha_model=p.get("alpha_model", "scalar"),
            delta_ratio=p.get("delta_ratio", DEFAULT_DELTA_RATIO),
        )
    if t == "watermark_bbox":
        bbox = config.hints.bbox if config.hints is not None else p.get("bbox")
        return build_watermark(inputs[0], bbox, spec, seed, config.weights)
    if t == "watermark_multi":
        return build_watermark(inputs, None, spec, seed, config.weights)
    return build_dehaze(inputs[0], p.get("airlight"), spec, seed, config.weights)


__all__ = [
    "TASKS",
    "TaskConfig",
    "default_weights",
    "build_single",
    "build_segmentation",
    "build_video_segmentation",
    "build_transparency",
    "build_watermark",
    "build_dehaze",
    "build_task",
    "dark_channel",
    "estimate_airlight",
    "MeanAlpha",
]
