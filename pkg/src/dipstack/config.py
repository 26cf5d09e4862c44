"""Run configuration: defaults, config-file parsing and CLI overrides.

Config files are flat TOML documents, one ``key = value`` per line (see
``docs/config.md``). Tables are rejected; unknown keys are errors so typos
never silently fall back to defaults.
"""

from __future__ import annotations

import dataclasses
import math
import os
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Any

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

from .errors import ConfigurationError, DipIOError
from .generator import GeneratorSpec
from .hints import FADES
from .tasks import ALPHA_MODELS

COMMANDS = ("segment", "segment-video", "transparency", "watermark", "dehaze", "diagnose")
SEED_ENV = "DIPSTACK_SEED"
DEFAULT_ITERATIONS = 4000
LONG_ITERATIONS = 8000
LONG_TASKS = ("segment-video", "dehaze")


@dataclass
class RunConfig:
    task: str = "segment"
    input: str | None = None
    input2: str | None = None
    out: str = "dipstack_out"
    bbox: tuple[int, int, int, int] | None = None
    seed: int | None = None
    iters: int | None = None
    lr: float = 1e-3
    alpha: float | None = None
    beta: float | None = None
    augment: bool = True
    depth: int = 5
    channels: int = 128
    skip: int = 4
    kernel: int = 3
    upsample: str = "bilinear"
    down_channels: tuple[int, ...] | None = None
    up_channels: tuple[int, ...] | None = None
    skip_channels: tuple[int, ...] | None = None
    max_size: int = 384
    max_frames: int | None = None
    stride: int = 1
    use_hints: bool = True
    hint_iterations: int = 500
    hint_fade: str = "step"
    alpha_model: str = "scalar"
    delta_ratio: float = 0.05
    airlight: tuple[float, ...] | None = None
    gf_radius: int = 8
    gf_eps: float = 1e-4
    refine_transmission: bool = False
    mix_weight: float = 0.5
    batch: bool = False
    jobs: int = 1

    def validate(self) -> "RunConfig":
        if self.task not in COMMANDS:
            raise ConfigurationError(f"unknown command {self.task!r}; expected one of {COMMANDS}")
        if self.input is None:
            raise ConfigurationError("an input path is required")
        if self.iters is None:
            self.iters = LONG_ITERATIONS if self.task in LONG_TASKS else DEFAULT_ITERATIONS
        for name in ("iters", "max_size", "stride", "jobs", "hint_iterations"):
            v = getattr(self, name)
            if not isinstance(v, int) or isinstance(v, bool) or v < (0 if name in ("iters", "hint_iterations") else 1):
                raise ConfigurationError(f"{name} must be a positive integer, got {v!r}")
        for name in ("lr", "alpha", "beta", "delta_ratio", "gf_eps"):
            v = getattr(self, name)
            if v is not None and (not math.isfinite(v) or v < 0):
                raise ConfigurationError(f"{name} must be finite and >= 0, got {v!r}")
        if not 0.0 <= self.mix_weight <= 1.0:
            raise ConfigurationError(f"mix_weight must lie in [0, 1], got {self.mix_weight}")
        if self.hint_fade not in FADES:
            raise ConfigurationError(f"hint_fade must be one of {FADES}, got {self.hint_fade!r}")
        if self.alpha_model not in ALPHA_MODELS:
            raise ConfigurationError(f"alpha_model must be one of {ALPHA_MODELS}, got {self.alpha_model!r}")
        if self.bbox is not None and len(self.bbox) != 4:
            raise ConfigurationError(f"bbox needs 4 integers X,Y,W,H, got {self.bbox!r}")
        if self.airlight is not None and len(self.airlight) not in (1, 3):
            raise ConfigurationError(f"airlight needs 1 or 3 values, got {self.airlight!r}")
        self.spec().validate()
        return self

    def spec(self) -> GeneratorSpec:
        """Uniform-width generator unless per-level channel lists are given."""
        base = GeneratorSpec.uniform(self.depth, self.channels, self.skip, kernel_size=self.kernel, upsample_mode=self.upsample)
        per_level = {
            name: getattr(self, name)
            for name in ("down_channels", "up_channels", "skip_channels")
            if getattr(self, name) is not None
        }
        return dataclasses.replace(base, **per_level)

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _coerce(key: str, value):
    t = FIELD_TYPES[key]
    if value is None:
        return None
    try:
        if "tuple" in t:
            if isinstance(value, str):
                value = [v for v in value.split(",") if v.strip()]
            cast = int if "int" in t else float
            return tuple(cast(v) for v in value)
        if t.startswith("bool"):
            if isinstance(value, str):
                if value.lower() in ("1", "true", "yes", "on"):
                    return True
                if value.lower() in ("0", "false", "no", "off"):
                    return False
                raise ValueError(value)
            if not isinstance(value, bool):
                raise ValueError(value)
            return value
        if t.startswith("int"):
            if isinstance(value, bool) or (isinstance(value, float) and not value.is_integer()):
                raise ValueError(value)
            return int(value)
        if t.startswith("float"):
            if isinstance(value, bool):
                raise ValueError(value)
            return float(value)
        return str(value)
    except (TypeError, ValueError) as exc:
        raise ConfigurationError(f"bad value for {key!r}: {value!r}") from exc


def parse_config_text(text: str) -> dict[str, Any]:
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigurationError(f"config syntax error: {exc}") from exc
    out = {}
    for key, value in doc.items():
        key = key.replace("-", "_")
        if isinstance(value, dict):
            raise ConfigurationError(f"config must be flat; found table [{key}]")
        if key not in FIELD_TYPES:
            raise ConfigurationError(f"unknown config key {key!r}")
        out[key] = _coerce(key, value)
    return out


def load_config_file(path) -> dict[str, Any]:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise DipIOError(f"cannot read config {path}: {exc}") from exc
    return parse_config_text(text)


def resolve_seed(seed: int | None, environ=os.environ) -> int:
    """Explicit seed, else ``DIPSTACK_SEED``, else 0."""
    if seed is not None:
        return int(seed)
    raw = environ.get(SEED_ENV)
    if raw is None or raw == "":
        return 0
    try:
        return int(raw)
    except ValueError as exc:
        raise ConfigurationError(f"{SEED_ENV} must be an integer, got {raw!r}") from exc


def build_config(file_values: dict[str, Any] | None = None, overrides: dict[str, Any] | None = None, environ=os.environ) -> RunConfig:
    """Merge defaults, config-file values and CLI overrides (highest priority)."""
    values: dict[str, Any] = {}
    for src in (file_values or {}, overrides or {}):
        for k, v in src.items():
            if v is None:
                continue
            if k not in FIELD_TYPES:
                raise ConfigurationError(f"unknown setting {k!r}")
            values[k] = _coerce(k, v)
    cfg = RunConfig(**values)
    cfg.seed = resolve_seed(cfg.seed, environ)
    return cfg.validate()


__all__ = ["RunConfig", "COMMANDS", "SEED_ENV", "build_config", "parse_config_text", "load_config_file", "resolve_seed"]
