"""Layer-by-layer build simulation: flash heating plus cooling per stage.

Each stage i activates layers 1..i, heats layer i with the volume flux
for t_h in a single implicit step starting from ambient, then cools with
zero flux in steps of dt_cool. Stages are mutually independent, so they
may run in a parallel map without affecting the numbers.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, SolverError
from .fem import StageSystem, assemble_Q, build_stage_system
from .geometry import BuildModel
from .materials import MaterialProps, ProcessParams


@dataclass(frozen=True)
class StageHistory:
    """Temperatures of one stage: end of heating plus each cooling step.

    T_cool has shape (n_steps, n_nodes) with row j-1 holding the field
    after j cooling steps of size dt_cool.
    """

    stage: int
    T_heat_end: np.ndarray
    T_cool: np.ndarray

    @property
    def n_steps(self) -> int:
        return self.T_cool.shape[0]


def run_stage(model: BuildModel, phi: np.ndarray, mat: MaterialProps,
              proc: ProcessParams, stage: int, n_steps: int | None = None,
              solver: str = "direct",
              system: StageSystem | None = None) -> StageHistory:
    """Simulate one stage from ambient; returns the temperature history.

    n_steps limits the number of cooling steps computed (defaults to the
    full t_c / dt_cool).
    """
    if not 1 <= stage <= model.m:
        raise ConfigError(f"stage: {stage} out of range [1, {model.m}]")
    n_cool = proc.n_cool if n_steps is None else n_steps
    if not 1 <= n_cool <= proc.n_cool:
        raise ConfigError(f"n_steps: must lie in [1, {proc.n_cool}]")
    if system is None:
        system = build_stage_system(model, phi, stage, mat, proc, solver=solver)
    try:
        T = np.full(model.n_nodes, proc.T_amb)
        Q = assemble_Q(model, phi, stage, proc)
        T_heat = system.step(T, Q, proc.t_h)
        T_cool = np.empty((n_cool, model.n_nodes))
        T = T_heat
        for j in range(n_cool):
            T = system.step(T, None, proc.dt_cool)
            T_cool[j] = T
    except SolverError as exc:
        raise SolverError(f"stage {stage}: {exc}") from exc
    return StageHistory(stage=stage, T_heat_end=T_heat, T_cool=T_cool)


def run_build(model: BuildModel, phi: np.ndarray, mat: MaterialProps,
              proc: ProcessParams, n_steps: int | None = None,
              solver: str = "direct", n_threads: int = 1) -> list[StageHistory]:
    """Simulate all m stages; the result list is ordered by stage index."""
    stages = range(1, model.m + 1)

    def one(i):
        return run_stage(model, phi, mat, proc, i, n_steps=n_steps, solver=solver)

    if n_threads > 1:
        with ThreadPoolExecutor(max_workers=n_threads) as pool:
            return list(pool.map(one, stages))
    return [one(i) for i in stages]


def layerwise_cooldown_field(model: BuildModel, histories: list[StageHistory],
                             proc: ProcessParams, at_step: int = 1,
                             mode: str = "composite") -> np.ndarray:
    """Per-layer snapshot of every layer at its own cooling moment.

    In "composite" mode each node takes the temperature it had `at_step`
    cooling steps after its own layer was irradiated (nodes on a layer
    interface are assigned to the layer above). In "summed" mode the
    excess temperatures of all stages are added onto the ambient
    baseline instead.
    """
    if len(histories) != model.m:
        raise ConfigError(f"histories: expected {model.m} stages, got {len(histories)}")
    if not 1 <= at_step <= min(h.n_steps for h in histories):
        raise ConfigError(f"at_step: {at_step} not available in all histories")
    snap = np.stack([h.T_cool[at_step - 1] for h in sorted(histories, key=lambda h: h.stage)])
    if mode == "composite":
        return snap[model.node_layer - 1, np.arange(model.n_nodes)]
    if mode == "summed":
        return proc.T_amb + (snap - proc.T_amb).sum(axis=0)
    raise ConfigError(f"mode: unknown cooldown-field mode {mode!r}")
