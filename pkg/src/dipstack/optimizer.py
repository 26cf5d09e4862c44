"""Joint optimization of all generators of a task graph."""

from __future__ import annotations

import copy
import csv
import logging
import math
from dataclasses import dataclass, field
from typing import IO

import numpy as np
import torch

from .composition import LayerSet
from .errors import ConfigurationError, DomainError, NumericalAbort
from .generator import GeneratorSpec
from .graph import TaskGraph
from .hints import hint_strength, hint_weight_maps
from .losses import total_loss

log = logging.getLogger(__name__)

LOSS_COLUMNS = ("iter", "total", "reconst", "excl", "reg")


def dihedral_transforms(I, index: int):
    """Element ``index`` of the 8-element symmetry group of the square.

    Indices 0-3 rotate by ``index`` quarter turns; 4-7 do the same rotation
    followed by a left-right mirror. Numpy images rotate over their first two
    axes, torch tensors over their last two.
    """
    if not 0 <= int(index) <= 7:
        raise DomainError(f"dihedral index must be in 0..7, got {index}")
    k, mirror = int(index) % 4, int(index) >= 4
    if isinstance(I, torch.Tensor):
        out = torch.rot90(I, k, dims=(-2, -1)) if k else I
        return torch.flip(out, dims=(-1,)) if mirror else out
    out = np.rot90(I, k, axes=(0, 1)) if k else I
    return np.flip(out, axis=1) if mirror else out


def inverse_index(index: int) -> int:
    if index >= 4:
        return index
    return (4 - index) % 4


@dataclass
class OptimConfig:
    iterations: int = 4000
    learning_rate: float = 1e-3
    adam_betas: tuple[float, float] = (0.9, 0.999)
    augment: bool = True
    seed: int = 0
    log_every: int = 0
    snapshot_every: int = 0
    ramp_iterations: int | None = None

    def __post_init__(self):
        if self.iterations < 0:
            raise ConfigurationError(f"iterations must be >= 0, got {self.iterations}")
        if self.learning_rate < 0 or not math.isfinite(self.learning_rate):
            raise ConfigurationError(f"learning_rate must be finite and >= 0, got {self.learning_rate}")

    @property
    def ramp(self) -> int:
        if self.ramp_iterations is not None:
            return self.ramp_iterations
        return max(1, self.iterations // 2)


@dataclass
class RunState:
    iteration: int = 0
    history: list[dict[str, float]] = field(default_factory=list)
    best_total: float = math.inf
    best_iteration: int = -1
    best_curve: list[float] = field(default_factory=list)
    best_params: dict | None = field(default=None, repr=False)
    snapshots: list[tuple[int, list[LayerSet]]] = field(default_factory=list, repr=False)
    augment_indices: list[int] = field(default_factory=list, repr=False)

    def losses(self, key: str = "total") -> np.ndarray:
        return np.array([row[key] for row in self.history])


def _to_hint_tensor(w: np.ndarray) -> torch.Tensor:
    return torch.from_numpy(w.astype(np.float32))[None, None]


def optimize(
    graph: TaskGraph,
    config: OptimConfig,
    log_stream: IO[str] | None = None,
):
    """Fit every generator of ``graph`` jointly with Adam.

    Each iteration draws one dihedral transform (when augmenting), applies it
    to the observations, the noise inputs and any spatial hints, evaluates
    all generators with the scheduled input perturbation and takes one step
    on the composite objective. Video graphs fit one randomly drawn frame per
    iteration.

    Returns the layer sets produced by the parameters with the lowest
    recorded loss (a single ``LayerSet`` when the graph has one unit) and
    the ``RunState``.
    """
    aug_rng = np.random.default_rng([config.seed, 1])
    unit_rng = np.random.default_rng([config.seed, 2])
    noise_rng = torch.Generator().manual_seed(int(config.seed))
    params = list(graph.parameters())
    opt = torch.optim.Adam(params, lr=config.learning_rate, betas=tuple(config.adam_betas))
    state = RunState()
    writer = None
    if log_stream is not None:
        writer = csv.writer(log_stream)
        writer.writerow(LOSS_COLUMNS)

    for it in range(config.iterations):
        index = int(aug_rng.integers(8)) if config.augment else 0
        state.augment_indices.append(index)
        if graph.sample_units:
            units = [graph.units[int(unit_rng.integers(len(graph.units)))]]
        else:
            units = graph.units

        def transform(x, _i=index):
            return dihedral_transforms(x, _i)

        outs = graph.evaluate(units, it, config.ramp, noise_rng, transform)
        targets = [transform(graph.targets[u.target]) for u in units]

        hint = None
        strength = hint_strength(graph.hints, it)
        if strength > 0:
            w1, w2 = hint_weight_maps(graph.hints, it, graph.targets[0].shape[-2:])
            hint = (transform(_to_hint_tensor(w1)), transform(_to_hint_tensor(w2)), strength)

        report = total_loss(
            targets, outs, graph.weights, graph.reg, hint, n_scales=graph.n_scales, norm=graph.norm
        )
        if not math.isfinite(report.total):
            state.iteration = it
            raise NumericalAbort(f"non-finite loss at iteration {it}: {report.row()}", state)

        row = {"iter": it, **report.row()}
        state.history.append(row)
        if report.total < state.best_total:
            state.best_total = report.total
            state.best_iteration = it
            state.best_params = copy.deepcopy(graph.generators.state_dict())
        state.best_curve.append(state.best_total)

        if writer is not None and (config.log_every <= 1 or it % config.log_every == 0):
            writer.writerow([it, report.total, report.reconst, report.excl, report.reg])
        if config.log_every and it % config.log_every == 0:
            log.debug("iter %d total %.6g reconst %.6g excl %.6g reg %.6g", it, *report.row().values())

        opt.zero_grad(set_to_none=True)
        report.tensor.backward()
        opt.step()
        state.iteration = it + 1

        if config.snapshot_every and (it + 1) % config.snapshot_every == 0:
            state.snapshots.append((it + 1, graph.layersets()))

    if state.best_params is not None:
        graph.generators.load_state_dict(state.best_params)
    layers = graph.layersets()
    return (layers[0] if len(layers) == 1 else layers), state


def single_dip_fit(
    I: np.ndarray,
    config: OptimConfig,
    spec: GeneratorSpec | None = None,
) -> RunState:
    """Fit one generator to reconstruct ``I`` and return its loss history."""
    from .tasks import build_single

    graph = build_single(I, spec=spec, seed=config.seed)
    _, state = optimize(graph, config)
    return state


__all__ = [
    "OptimConfig",
    "RunState",
    "dihedral_transforms",
    "inverse_index",
    "optimize",
    "single_dip_fit",
    "LOSS_COLUMNS",
]
