"""Per-image convolutional generators (deep image priors) and their noise inputs.

A generator is an untrained encoder/decoder with skip connections. It maps a
fixed random noise tensor to an image of the same spatial size; only its
weights are optimized, one image at a time.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ConfigurationError, ShapeError

NOISE_AMPLITUDE = 0.1
NOISE_CHANNELS = 32


@dataclass(frozen=True)
class GeneratorSpec:
    """Architecture hyperparameters of one generator."""

    depth: int = 5
    down_channels: tuple[int, ...] = (128, 128, 128, 128, 128)
    up_channels: tuple[int, ...] = (128, 128, 128, 128, 128)
    skip_channels: tuple[int, ...] = (4, 4, 4, 4, 4)
    kernel_size: int = 3
    upsample_mode: str = "bilinear"
    output_channels: int = 3
    output_activation: str = "sigmoid"
    input_channels: int = NOISE_CHANNELS

    @classmethod
    def uniform(cls, depth: int, channels: int, skip: int = 4, **kwargs) -> "GeneratorSpec":
        """Spec with the same width at every level."""
        return cls(
            depth=depth,
            down_channels=(channels,) * depth,
            up_channels=(channels,) * depth,
            skip_channels=(skip,) * depth,
            **kwargs,
        )

    def with_outputs(self, output_channels: int) -> "GeneratorSpec":
        return dataclasses.replace(self, output_channels=output_channels)

    def validate(self) -> None:
        if self.depth < 1:
            raise ConfigurationError(f"depth must be >= 1, got {self.depth}")
        lengths = {len(self.down_channels), len(self.up_channels), len(self.skip_channels)}
        if lengths != {self.depth}:
            raise ConfigurationError(
                "down/up/skip channel lists must all have length depth="
                f"{self.depth}, got {len(self.down_channels)}/{len(self.up_channels)}/"
                f"{len(self.skip_channels)}"
            )
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise ConfigurationError(f"kernel_size must be a positive odd integer, got {self.kernel_size}")
        if self.upsample_mode not in ("nearest", "bilinear"):
            raise ConfigurationError(f"unknown upsample_mode {self.upsample_mode!r}")
        if self.output_activation not in ("sigmoid", "none"):
            raise ConfigurationError(f"unknown output_activation {self.output_activation!r}")
        if self.output_channels < 1 or self.input_channels < 1:
            raise ConfigurationError("input_channels and output_channels must be >= 1")
        if min(self.down_channels) < 1 or min(self.up_channels) < 1 or min(self.skip_channels) < 0:
            raise ConfigurationError("channel counts must be positive (skips may be 0)")


def _conv(in_ch: int, out_ch: int, k: int, stride: int = 1) -> nn.Conv2d:
    return nn.Conv2d(in_ch, out_ch, k, stride=stride, padding=k // 2, padding_mode="reflect" if k > 1 else "zeros")


def _block(in_ch: int, out_ch: int, k: int, stride: int = 1) -> list[nn.Module]:
    return [_conv(in_ch, out_ch, k, stride), nn.BatchNorm2d(out_ch), nn.LeakyReLU(0.2, inplace=True)]


class _Level(nn.Module):
    def __init__(self, spec: GeneratorSpec, level: int, in_ch: int):
        super().__init__()
        k = spec.kernel_size
        down = spec.down_channels[level]
        up = spec.up_channels[level]
        skip = spec.skip_channels[level]

        self.skip = nn.Sequential(*_block(in_ch, skip, 1)) if skip > 0 else None
        self.down = nn.Sequential(*_block(in_ch, down, k, stride=2), *_block(down, down, k))
        self.deeper = _Level(spec, level + 1, down) if level + 1 < spec.depth else None
        self.mode = spec.upsample_mode
        below = spec.up_channels[level + 1] if self.deeper is not None else down
        self.norm = nn.BatchNorm2d(skip + below)
        self.merge = nn.Sequential(*_block(skip + below, up, k), *_block(up, up, 1))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        y = self.down(x)
        if self.deeper is not None:
            y = self.deeper(y)
        if self.mode == "bilinear":
            y = F.interpolate(y, scale_factor=2, mode="bilinear", align_corners=False)
        else:
            y = F.interpolate(y, scale_factor=2, mode="nearest")
        if self.skip is not None:
            y = torch.cat([self.skip(x), y], dim=1)
        return self.merge(self.norm(y))


class Generator(nn.Module):
    """Encoder/decoder with skip connections mapping noise to an image.

    Inputs of any spatial size are padded up to a multiple of ``2**depth``
    before the encoder and center-cropped back afterwards, so the output is
    always the same size as the input.
    """

    def __init__(self, spec: GeneratorSpec):
        super().__init__()
        spec.validate()
        self.spec = spec
        self.body = _Level(spec, 0, spec.input_channels)
        self.head = nn.Conv2d(spec.up_channels[0], spec.output_channels, 1)

    def _padded_size(self, n: int) -> int:
        step = 2 ** self.spec.depth
        # deepest feature map must stay wider than the reflection padding
        floor = max(2, self.spec.kernel_size // 2 + 1) * step
        return max(floor, -(-n // step) * step)

    def forward(self, z: torch.Tensor) -> torch.Tensor:
        if z.dim() != 4 or z.shape[1] != self.spec.input_channels:
            raise ShapeError(
                f"expected noise of shape (N, {self.spec.input_channels}, H, W), got {tuple(z.shape)}"
            )
        h, w = z.shape[-2:]
        ph, pw = self._padded_size(h) - h, self._padded_size(w) - w
        top, left = ph // 2, pw // 2
        if ph or pw:
            pads = (left, pw - left, top, ph - top)
            mode = "reflect" if max(pads[:2]) < w and max(pads[2:]) < h else "replicate"
            z = F.pad(z, pads, mode=mode)
        out = self.head(self.body(z))
        if ph or pw:
            out = out[..., top : top + h, left : left + w]
        if self.spec.output_activation == "sigmoid":
            out = torch.sigmoid(out)
        return out


def build_generator(spec: GeneratorSpec, seed: int) -> Generator:
    """Construct a generator whose initial weights depend only on ``seed``."""
    spec.validate()
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        return Generator(spec)


def parameter_vector(module: nn.Module) -> torch.Tensor:
    return torch.cat([p.detach().reshape(-1) for p in module.parameters()])


@dataclass
class NoiseField:
    """Fixed random input of one generator.

    ``base`` has shape ``(1, channels, H, W)`` with values uniform in
    ``[0, amplitude]``; ``perturb_sigma`` is the largest standard deviation
    of the per-iteration perturbation added on top of it.
    """

    base: torch.Tensor
    perturb_sigma: float
    seed: int
    amplitude: float = NOISE_AMPLITUDE

    @property
    def spatial_shape(self) -> tuple[int, int]:
        return tuple(self.base.shape[-2:])

    def scaled(self, ratio: float, seed: int) -> "NoiseField":
        """A zero-mean uniform field whose L2 norm is ``ratio * ||base||``."""
        rng = np.random.default_rng(seed)
        delta = rng.uniform(-1.0, 1.0, size=tuple(self.base.shape))
        delta *= ratio * float(self.base.double().norm()) / np.linalg.norm(delta)
        return NoiseField(torch.from_numpy(delta).float(), self.perturb_sigma, seed, self.amplitude)


def make_noise(
    shape: tuple[int, int],
    seed: int,
    channels: int = NOISE_CHANNELS,
    amplitude: float = NOISE_AMPLITUDE,
    perturb_sigma: float | None = None,
) -> NoiseField:
    rng = np.random.default_rng(seed)
    base = rng.uniform(0.0, amplitude, size=(1, channels, *shape)).astype(np.float32)
    if perturb_sigma is None:
        perturb_sigma = amplitude / 30.0
    return NoiseField(torch.from_numpy(base), float(perturb_sigma), seed, amplitude)


def perturbation_scale(sigma_max: float, iteration: int, ramp_iterations: int | None) -> float:
    """Standard deviation of the input perturbation at ``iteration``.

    Grows linearly from 0 to ``sigma_max`` over ``ramp_iterations`` and stays
    there; with no ramp the full scale applies from the start.
    """
    if sigma_max <= 0:
        return 0.0
    if not ramp_iterations:
        return sigma_max
    return sigma_max * min(1.0, iteration / ramp_iterations)


def forward(
    g: nn.Module,
    z: NoiseField,
    iteration: int,
    ramp_iterations: int | None = None,
    rng: torch.Generator | None = None,
    transform=None,
) -> torch.Tensor:
    """Evaluate ``g`` on the noise base plus a fresh scheduled perturbation.

    ``transform`` (a function on tensors) is applied to the perturbed noise
    before it enters the network; it is how augmentations reach the inputs.
    """
    expected = getattr(getattr(g, "spec", None), "input_channels", None)
    if expected is not None and z.base.shape[1] != expected:
        raise ShapeError(f"noise has {z.base.shape[1]} channels, generator expects {expected}")
    x = z.base
    sigma = perturbation_scale(z.perturb_sigma, iteration, ramp_iterations)
    if sigma > 0:
        x = x + sigma * torch.randn(x.shape, generator=rng, dtype=x.dtype)
    if transform is not None:
        x = transform(x)
    return g(x)


__all__ = [
    "GeneratorSpec",
    "Generator",
    "NoiseField",
    "build_generator",
    "forward",
    "make_noise",
    "parameter_vector",
    "perturbation_scale",
    "NOISE_AMPLITUDE",
    "NOISE_CHANNELS",
]
