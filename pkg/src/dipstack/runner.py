"""From a ``RunConfig`` to files on disk: task resolution, fitting, export."""

from __future__ import annotations

import dataclasses
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .composition import LayerSet
from .config import RunConfig, build_config
from .errors import ConfigurationError, DipIOError, ShapeError
from .hints import HintSchedule
from .io import (
    RunManifest,
    Timer,
    export_results,
    hash_inputs,
    list_images,
    load_frames,
    load_image,
    resize_area,
    save_image,
    sha256_file,
    to_working_resolution,
)
from .losses import LossWeights
from .metrics import MODES, mixture_complexity_experiment
from .optimizer import OptimConfig, optimize
from .postproc import GuidedFilterParams, binarize_mask, guided_filter, resolve_color_ambiguity
from .tasks import TaskConfig, build_task, default_weights

log = logging.getLogger(__name__)


def _is_dir(path) -> bool:
    return path is not None and Path(path).is_dir()


def resolve_task(cfg: RunConfig) -> str:
    """Internal task name for a CLI command and its inputs."""
    cmd = cfg.task
    if cmd == "segment":
        return "segment"
    if cmd == "segment-video":
        return "segment_video"
    if cmd == "dehaze":
        return "dehaze"
    if cmd == "transparency":
        if _is_dir(cfg.input):
            return "transparency_video"
        return "transparency_two_mixtures" if cfg.input2 else "transparency_hint"
    if cmd == "watermark":
        if _is_dir(cfg.input) or cfg.input2:
            return "watermark_multi"
        return "watermark_bbox"
    raise ConfigurationError(f"command {cmd!r} is not a decomposition task")


def load_inputs(cfg: RunConfig) -> list[np.ndarray]:
    if cfg.input is None or not Path(cfg.input).exists():
        raise DipIOError(f"no such input: {cfg.input}")
    if _is_dir(cfg.input):
        frames = load_frames(cfg.input, cfg.max_frames, cfg.stride, cfg.max_size)
    else:
        frames = [to_working_resolution(load_image(cfg.input), cfg.max_size)]
    if cfg.input2:
        second = to_working_resolution(load_image(cfg.input2), cfg.max_size)
        if second.shape != frames[0].shape:
            second = resize_area(second, frames[0].shape[:2])
        frames.append(second)
    return frames


def _weights(task: str, cfg: RunConfig) -> LossWeights:
    w = default_weights(task)
    return LossWeights(
        alpha=w.alpha if cfg.alpha is None else cfg.alpha,
        beta=w.beta if cfg.beta is None else cfg.beta,
        terms=dict(w.terms),
    )


def task_config(task: str, cfg: RunConfig) -> TaskConfig:
    hints = None
    if task in ("segment", "transparency_hint", "watermark_bbox"):
        hints = HintSchedule(
            bbox=cfg.bbox, active_until_iteration=cfg.hint_iterations, fade=cfg.hint_fade
        )
    params = {
        "use_hints": cfg.use_hints,
        "alpha_model": cfg.alpha_model,
        "delta_ratio": cfg.delta_ratio,
        "bbox": cfg.bbox,
    }
    if cfg.airlight is not None:
        a = np.asarray(cfg.airlight, dtype=np.float64)
        params["airlight"] = np.repeat(a, 3) if a.size == 1 else a
    return TaskConfig(task, _weights(task, cfg), hints, params)


def finalize(task: str, layers, inputs: list[np.ndarray], cfg: RunConfig):
    """Task-specific refinement applied once, after fitting."""
    items = [layers] if isinstance(layers, LayerSet) else list(layers)
    gf = GuidedFilterParams(cfg.gf_radius, cfg.gf_eps)
    out = []
    for i, ls in enumerate(items):
        extras = dict(ls.extras)
        if task in ("segment", "segment_video"):
            guide = inputs[min(i, len(inputs) - 1)]
            mask = binarize_mask(guided_filter(guide, ls.mask, gf))
            extras["mask_refined"] = True
            ls = LayerSet(ls.y1, ls.y2, mask, ls.reconstruction, extras)
        elif task == "dehaze" and cfg.refine_transmission:
            t = np.clip(guided_filter(inputs[0], ls.mask, gf), 0.0, 1.0)
            extras["mask_refined"] = True
            ls = LayerSet(ls.y1, ls.y2, t, ls.reconstruction, extras)
        elif task.startswith("transparency") and ls.scalar_mask and float(ls.mask) < 1.0:
            y1, y2, c = resolve_color_ambiguity(ls.y1, ls.y2, float(ls.mask))
            extras["ambiguity_offset"] = [float(v) for v in np.atleast_1d(c)]
            ls = LayerSet(y1, y2, ls.mask, ls.reconstruction, extras)
        out.append(ls)
    return out[0] if isinstance(layers, LayerSet) else out


def _optim(cfg: RunConfig) -> OptimConfig:
    return OptimConfig(iterations=cfg.iters, learning_rate=cfg.lr, augment=cfg.augment, seed=cfg.seed)


def _final_loss(history) -> dict[str, float]:
    if not history:
        return {}
    return {k: float(v) for k, v in history[-1].items()}


def _write_fullres_mask(cfg: RunConfig, layers: LayerSet, out: Path) -> Path | None:
    """Upsample a working-resolution mask to the input size, guided by the input."""
    if _is_dir(cfg.input) or layers.scalar_mask:
        return None
    full = load_image(cfg.input)
    if full.shape[:2] == layers.mask.shape[:2]:
        return None
    mask = np.asarray(layers.mask, dtype=np.float64)
    up = resize_area(mask[..., 0] if mask.ndim == 3 else mask, full.shape[:2])
    r = max(1, round(cfg.gf_radius * full.shape[0] / layers.mask.shape[0]))
    refined = guided_filter(full, up, GuidedFilterParams(r, cfg.gf_eps))
    return save_image(out / "mask_fullres.png", refined, bits=16)


def run_job(cfg: RunConfig) -> RunManifest:
    """Run one decomposition or diagnostic described by ``cfg``; returns its manifest."""
    if cfg.task == "diagnose":
        return run_diagnose(cfg)
    task = resolve_task(cfg)
    with Timer() as timer:
        inputs = load_inputs(cfg)
        graph = build_task(task_config(task, cfg), inputs, cfg.spec(), cfg.seed)
        layers, state = optimize(graph, _optim(cfg))
        layers = finalize(task, layers, inputs, cfg)
    manifest = RunManifest(
        task=task,
        config=cfg.to_dict(),
        seed=cfg.seed,
        inputs=hash_inputs([p for p in (cfg.input, cfg.input2) if p]),
        version=__version__,
        duration_s=timer.elapsed,
        final_loss=_final_loss(state.history),
        extras={"best_iteration": state.best_iteration, "best_total": state.best_total},
    )
    first = layers if isinstance(layers, LayerSet) else layers[0]
    if "airlight_color" in first.extras:
        manifest.extras["airlight_color"] = [float(v) for v in first.extras["airlight_color"]]
    for ls in [layers] if isinstance(layers, LayerSet) else layers:
        if "ambiguity_offset" in ls.extras:
            manifest.extras.setdefault("ambiguity_offset", []).append(ls.extras["ambiguity_offset"])
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    extra = _write_fullres_mask(cfg, layers, out) if isinstance(layers, LayerSet) else None
    export_results(layers, manifest, out, state.history)
    if extra is not None:
        manifest.outputs[extra.name] = sha256_file(extra)
        (out / "manifest.json").write_text(json.dumps(manifest.to_dict(), indent=2, sort_keys=True))
    return manifest


def diagnose_pairs(cfg: RunConfig) -> list[tuple[np.ndarray, np.ndarray]]:
    if _is_dir(cfg.input):
        files = list_images(cfg.input)
    else:
        files = [Path(p) for p in (cfg.input, cfg.input2) if p]
    images = [to_working_resolution(load_image(f), cfg.max_size) for f in files]
    pairs = []
    for a, b in zip(images[0::2], images[1::2]):
        if a.shape[-1] != b.shape[-1]:
            raise ShapeError("diagnostic pairs must have the same number of channels")
        if a.shape != b.shape:
            b = resize_area(b, a.shape[:2])
        pairs.append((a, b))
    if len(pairs) < 2:
        raise ConfigurationError(f"the diagnostic needs at least 2 pairs (4 images), got {len(images)} image(s)")
    return pairs


def run_diagnose(cfg: RunConfig) -> RunManifest:
    """Mixture-complexity diagnostic over consecutive image pairs, in both mixing modes."""
    out = Path(cfg.out)
    with Timer() as timer:
        pairs = diagnose_pairs(cfg)
        files = []
        summary = {}
        for mode in MODES:
            report = mixture_complexity_experiment(pairs, mode, _optim(cfg), cfg.spec(), cfg.mix_weight)
            files += report.write(out / mode)
            summary[mode] = {"fraction_mixture_harder": report.fraction_harder, "passes": report.passes()}
    manifest = RunManifest(
        task="diagnose",
        config=cfg.to_dict(),
        seed=cfg.seed,
        inputs=hash_inputs([p for p in (cfg.input, cfg.input2) if p]),
        version=__version__,
        duration_s=timer.elapsed,
        extras=summary,
    )
    manifest.outputs = {str(f.relative_to(out)): sha256_file(f) for f in files}
    (out / "manifest.json").write_text(json.dumps(manifest.to_dict(), indent=2, sort_keys=True))
    return manifest


def batch_configs(cfg: RunConfig) -> list[RunConfig]:
    """One job per image of the input directory, each with its own output directory."""
    if not _is_dir(cfg.input):
        raise ConfigurationError("batch mode needs a directory as --input")
    return [
        dataclasses.replace(cfg, input=str(f), input2=None, out=str(Path(cfg.out) / f.stem), batch=False, jobs=1)
        for f in list_images(cfg.input)
    ]


def run_batch(cfg: RunConfig) -> list[RunManifest]:
    """Independent jobs, run ``cfg.jobs`` at a time in separate processes."""
    jobs = batch_configs(cfg)
    if cfg.jobs <= 1 or len(jobs) == 1:
        return [run_job(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
        return list(pool.map(run_job, jobs))


def replay(manifest_path, out_dir) -> tuple[RunManifest, list[str]]:
    """Re-run a recorded job into ``out_dir``.

    Inputs must still match their recorded checksums. Returns the new
    manifest and the names of outputs whose bytes differ from the original.
    """
    old = RunManifest.load(manifest_path)
    for path, digest in old.inputs.items():
        if not Path(path).is_file() or sha256_file(path) != digest:
            raise DipIOError(f"input {path} is missing or changed since the recorded run")
    values = dict(old.config)
    values["out"] = str(out_dir)
    cfg = build_config(overrides=values)
    new = run_job(cfg)
    diff = sorted(k for k in set(old.outputs) | set(new.outputs) if old.outputs.get(k) != new.outputs.get(k))
    return new, diff


__all__ = ["run_job", "run_batch", "run_diagnose", "replay", "resolve_task", "finalize", "load_inputs", "task_config"]
