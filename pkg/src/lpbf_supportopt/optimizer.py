"""Outer optimization loop for the support-structure design.

Each iteration runs the layer-by-layer forward simulation, evaluates
the heat-dissipation objective and the volume constraint, assembles the
adjoint sensitivity, combines it with the constraint gradient through
an augmented-Lagrangian multiplier, and advances the level-set field by
one reaction-diffusion step.
"""
from __future__ import annotations

import dataclasses
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from . import levelset
from .adjoint import MODES, qualifying_nodes, solve_adjoint_stage, stage_sensitivity
from .errors import ConfigError, NonFiniteError
from .fem import build_stage_system
from .geometry import BuildModel
from .levelset import (UpdateParams, element_mean_phi, heaviside_prime,
                       init_phi, volume, volume_smooth)
from .materials import MaterialProps, ProcessParams, default_alsi10mg, default_process
from .process import run_stage

_EPS = 1e-12


@dataclass(frozen=True)
class OptimizationConfig:
    """Loop controls: volume bound, convergence window, update parameters,
    and the augmented-Lagrangian settings."""

    v_max_fraction: float = 0.21
    max_iters: int = 300
    conv_tol: float = 1e-4
    conv_window: int = 5
    update: UpdateParams = field(default_factory=UpdateParams)
    penalty: float = 60.0
    multiplier0: float = 0.0
    multiplier_cap: float = 2.0
    feasibility_tol: float = 0.005
    sensitivity_mode: str = "paper"
    init_mode: str = "seeded-struts"
    init_phi: float = -0.5
    seed_spacing: float = 2.5
    seed_width: float = 0.5
    step_decay: float = 0.97
    min_step_factor: float = 0.01
    solver: str = "direct"
    n_threads: int = 1

    def __post_init__(self):
        if not 0 < self.v_max_fraction < 1:
            raise ConfigError("optimization.v_max_fraction: must lie in (0, 1)")
        if self.max_iters < 1:
            raise ConfigError("optimization.max_iters: must be >= 1")
        if self.conv_tol <= 0:
            raise ConfigError("optimization.conv_tol: must be > 0")
        if self.conv_window < 1:
            raise ConfigError("optimization.conv_window: must be >= 1")
        if self.penalty <= 0:
            raise ConfigError("optimization.penalty: must be > 0")
        if self.multiplier0 < 0:
            raise ConfigError("optimization.multiplier0: must be >= 0")
        if self.multiplier_cap <= 0:
            raise ConfigError("optimization.multiplier_cap: must be > 0")
        if self.sensitivity_mode not in MODES:
            raise ConfigError(f"optimization.sensitivity: must be one of {MODES}")
        if self.init_mode not in ("seeded-struts", "part-skin", "uniform"):
            raise ConfigError(
                "optimization.init_mode: must be 'seeded-struts', 'part-skin' or 'uniform'")
        if not self.seed_spacing > self.seed_width > 0:
            raise ConfigError("optimization.seed_spacing/seed_width: need spacing > width > 0")
        if not -1.0 <= self.init_phi <= 1.0:
            raise ConfigError("optimization.init_phi: must lie in [-1, 1]")
        if not 0 < self.step_decay <= 1.0:
            raise ConfigError("optimization.step_decay: must lie in (0, 1]")
        if not 0 < self.min_step_factor <= 1.0:
            raise ConfigError("optimization.min_step_factor: must lie in (0, 1]")


@dataclass(frozen=True)
class IterationRecord:
    iteration: int
    F: float
    volume_fraction: float
    multiplier: float
    converged: bool


def _normalize(x: np.ndarray, band: np.ndarray | None = None) -> np.ndarray:
    """Scale a nodal field by a robust magnitude.

    With a band mask the scale is the 0.9-quantile of |x| over the band
    (nodes the level-set update can actually move); the quantile is far
    more stationary across iterations than the raw maximum, which can
    jump by orders of magnitude as the design changes and would make the
    constraint multiplier chase a moving yardstick. Without a band the
    plain maximum is used.
    """
    if band is not None and band.any():
        scale = float(np.quantile(np.abs(x[band]), 0.9))
    else:
        scale = float(np.max(np.abs(x)))
    return x / max(scale, _EPS)


def _band_nodes(phi: np.ndarray, model: BuildModel, w: float) -> np.ndarray:
    """Mask of designable nodes touching an element inside the indicator band."""
    phi_bar = element_mean_phi(model, phi)
    active = (np.abs(phi_bar) < w) & ~model.part_mask
    mask = np.zeros(model.n_nodes, dtype=bool)
    if active.any():
        mask[np.unique(model.elements[active])] = True
    mask[model.part_nodes()] = False
    return mask


def volume_gradient(phi: np.ndarray, model: BuildModel,
                    proc: ProcessParams) -> np.ndarray:
    """Smoothed derivative of the material area with respect to nodal phi."""
    phi_bar = element_mean_phi(model, phi)
    g_elem = np.where(
        ~model.part_mask,
        model.areas * (1.0 - proc.d_void)
        * heaviside_prime(phi_bar, proc.w_heaviside) / 3.0,
        0.0,
    )
    g = np.zeros(model.n_nodes)
    np.add.at(g, model.elements.ravel(), np.repeat(g_elem, 3))
    return g


def constrained_direction(sens: np.ndarray, phi: np.ndarray, model: BuildModel,
                          config: OptimizationConfig, proc: ProcessParams,
                          multiplier: float = 0.0) -> tuple[np.ndarray, float]:
    """Combine objective and volume-constraint gradients.

    The multiplier is recomputed from the current violation each
    iteration, Lam = clip(multiplier0 + penalty * (vol - v_brake), 0,
    multiplier_cap), a proportional brake that sweeps from 0 to the cap
    over a volume window of width cap/penalty centered just inside the
    bound. Recomputing from the violation (instead of accumulating it)
    responds within one iteration and cannot wind up, so the volume
    decelerates smoothly into the bound instead of ringing around it.
    The cap matters because on normalized fields a multiplier much above
    1 makes the drive pure removal everywhere. Both fields are
    normalized by a robust band magnitude before combining; the
    `multiplier` argument is the previous value and is accepted for
    interface continuity (the brake is stateless).
    """
    # the brake reads the smoothed volume: continuous in phi, so the
    # multiplier cannot flutter with single-element flips of the sharp count
    _, vol_frac = volume_smooth(phi, model, proc.w_heaviside)
    target = config.v_max_fraction - config.feasibility_tol
    v_brake = target - 0.5 * config.multiplier_cap / config.penalty
    new_mult = float(np.clip(
        config.multiplier0 + config.penalty * (vol_frac - v_brake),
        0.0, config.multiplier_cap))
    band = _band_nodes(phi, model, proc.w_heaviside)
    direction = _normalize(sens, band) \
        + new_mult * _normalize(volume_gradient(phi, model, proc), band)
    return direction, new_mult


def _forward_and_sensitivity(model: BuildModel, phi: np.ndarray,
                             mat: MaterialProps, proc: ProcessParams,
                             mode: str, solver: str,
                             n_threads: int) -> tuple[float, np.ndarray]:
    """Objective and its gradient in one fused pass over the stages.

    Each stage assembles and factorizes its implicit operators once and
    reuses them for the forward steps, the backward adjoint steps, and
    the sensitivity accumulation.
    """
    dt = proc.dt_cool

    def one(stage: int) -> tuple[float, np.ndarray]:
        system = build_stage_system(model, phi, stage, mat, proc, solver=solver)
        history = run_stage(model, phi, mat, proc, stage, n_steps=proc.n_obj,
                            solver=solver, system=system)
        nodes = qualifying_nodes(model, stage)
        F_i = float(((history.T_cool[:, nodes] - proc.T_amb) ** 2).sum() * dt) \
            if len(nodes) else 0.0
        lam = solve_adjoint_stage(model, phi, mat, proc, stage, history,
                                  system=system)
        sens_i = stage_sensitivity(model, phi, mat, proc, stage, history, lam,
                                   system=system, mode=mode)
        return F_i, sens_i

    stages = range(1, model.m + 1)
    if n_threads > 1:
        with ThreadPoolExecutor(max_workers=n_threads) as pool:
            parts = list(pool.map(one, stages))
    else:
        parts = [one(i) for i in stages]
    F = 0.0
    sens = np.zeros(model.n_nodes)
    for F_i, sens_i in parts:
        F += F_i
        sens += sens_i
    sens[model.part_nodes()] = 0.0
    if not (np.isfinite(F) and np.all(np.isfinite(sens))):
        raise NonFiniteError("objective or sensitivity is not finite")
    return F, sens


def run_optimization(model: BuildModel, mat: MaterialProps, proc: ProcessParams,
                     config: OptimizationConfig,
                     phi0: np.ndarray | None = None,
                     callback: Callable[[IterationRecord, np.ndarray, np.ndarray | None], None] | None = None,
                     ) -> tuple[np.ndarray, list[IterationRecord]]:
    """Level-set optimization of the support layout.

    Returns the final field and the per-iteration records. Convergence
    requires the relative objective change to stay below conv_tol for
    conv_window consecutive iterations while the volume constraint is
    met within feasibility_tol.
    """
    if not model.part_mask.any():
        raise ConfigError("model: part mask is empty, nothing to support")
    if phi0 is not None:
        phi = phi0.copy()
    elif config.init_mode == "part-skin":
        # saturated seed: bare part with an alive interface band at its
        # skin; support material nucleates there and grows front-wise,
        # which keeps the volume controllable (a uniform seed makes the
        # whole field cross the material threshold at once)
        phi = init_phi(model, -1.0)
    elif config.init_mode == "seeded-struts":
        # part skin plus thin plate-rooted struts under every overhang
        # span; the interface drive cannot see through powder (the
        # indicator derivative vanishes there), so without a rooted
        # skeleton the growth stalls in blobs hanging off the part
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            phi = pillar_baseline(model, config.seed_spacing, config.seed_width)
    else:
        phi = init_phi(model, config.init_phi)
    n_design = model.n_nodes - len(model.part_nodes())

    records: list[IterationRecord] = []
    multiplier = config.multiplier0
    streak = 0
    F_prev = None
    decay_armed = False
    step_scale = 1.0
    for it in range(1, config.max_iters + 1):
        F, sens = _forward_and_sensitivity(model, phi, mat, proc,
                                           mode=config.sensitivity_mode,
                                           solver=config.solver,
                                           n_threads=config.n_threads)
        _, vol_frac = volume(phi, model)
        if F_prev is not None:
            rel = abs(F - F_prev) / max(abs(F_prev), _EPS)
            streak = streak + 1 if rel < config.conv_tol else 0
        F_prev = F
        converged = (streak >= config.conv_window
                     and vol_frac <= config.v_max_fraction + config.feasibility_tol)
        if n_design == 0:
            converged = True
        rec = IterationRecord(iteration=it, F=F, volume_fraction=vol_frac,
                              multiplier=multiplier, converged=converged)
        records.append(rec)
        if converged or it == config.max_iters:
            if callback is not None:
                callback(rec, phi, None)
            break
        # step continuation: once the volume reaches the brake zone,
        # geometrically shrink the fictitious time step so the design can
        # settle into a fixed point; decay pauses while the volume still
        # violates the bound
        if not decay_armed and vol_frac >= config.v_max_fraction - 0.03:
            decay_armed = True
        if decay_armed and vol_frac <= config.v_max_fraction:
            step_scale = max(step_scale * config.step_decay, config.min_step_factor)
        direction, multiplier = constrained_direction(sens, phi, model, config,
                                                      proc, multiplier)
        if callback is not None:
            callback(rec, phi, sens)
        params = dataclasses.replace(config.update, ds=config.update.ds * step_scale)
        phi = levelset.update(phi, direction, params, model)
    return phi, records


def pillar_baseline(model: BuildModel, spacing: float, width: float) -> np.ndarray:
    """Conventional support: vertical pillars under every overhanging span.

    Pillar centers are laid out left-to-right with the given spacing
    along each contiguous overhang span, snapped to element columns
    (with a warning when snapping moves them), and extended downward
    until they hit the part or the build plate. Returns a level-set
    field with +1 on pillars and part, -1 elsewhere.
    """
    if not spacing > width > 0:
        raise ConfigError("baseline: need spacing > width > 0")
    nx, ny = model.nx, model.ny
    dx = model.chamber_width / nx
    # cell is part when both of its triangles are masked
    part_cell = (model.part_mask[0::2] & model.part_mask[1::2]).reshape(ny, nx)

    phi = np.full(model.n_nodes, -1.0)
    support_cells = np.zeros((ny, nx), dtype=bool)

    # contiguous overhang spans: part cell with a non-part cell below
    overhang = np.zeros((ny, nx), dtype=bool)
    overhang[1:] = part_cell[1:] & ~part_cell[:-1]
    n_cols = max(1, round(width / dx))
    for iy in range(1, ny):
        row = overhang[iy]
        if not row.any():
            continue
        runs = []
        j = None
        for ixc in range(nx):
            if row[ixc] and j is None:
                j = ixc
            elif not row[ixc] and j is not None:
                runs.append((j, ixc - 1))
                j = None
        if j is not None:
            runs.append((j, nx - 1))
        for i0, i1 in runs:
            xa = i0 * dx
            xb = (i1 + 1) * dx
            n_pillars = int(np.floor((xb - xa) / spacing + 1e-9)) + 1
            for kp in range(n_pillars):
                cx = xa + kp * spacing
                col = int(np.clip(round(cx / dx - 0.5), 0, nx - 1))
                snapped = (col + 0.5) * dx
                if abs(snapped - cx) > 1e-9:
                    warnings.warn(
                        f"pillar at x={cx:.4g} snapped to element column at x={snapped:.4g}",
                        stacklevel=2,
                    )
                c0 = max(0, col - (n_cols - 1) // 2)
                c1 = min(nx, c0 + n_cols)
                for cc in range(c0, c1):
                    for ry in range(iy - 1, -1, -1):
                        if part_cell[ry, cc]:
                            break
                        support_cells[ry, cc] = True

    if support_cells.any():
        cell_idx = np.flatnonzero(support_cells.ravel())
        elems = np.concatenate([2 * cell_idx, 2 * cell_idx + 1])
        phi[np.unique(model.elements[elems])] = 1.0
    phi[model.part_nodes()] = 1.0
    return phi


class SupportOptimizer(BaseEstimator):
    """Estimator-style front end for the support optimization.

    Hyperparameters mirror OptimizationConfig; material/process default
    to AlSi10Mg and the standard flash-heating parameters when left as
    None. fit(model) runs the optimization and exposes the result as
    fitted attributes (phi_, history_, n_iter_, converged_, objective_).

    Example
    -------
    >>> opt = SupportOptimizer(v_max_fraction=0.2, max_iters=50)
    >>> opt.fit(model).phi_
    """

    def __init__(self, material=None, process=None, v_max_fraction=0.21,
                 tau=1e-4, d_coef=0.8, ds=1.0, max_iters=300, conv_tol=1e-4,
                 conv_window=5, penalty=60.0, multiplier0=0.0,
                 multiplier_cap=2.0,
                 feasibility_tol=0.005, sensitivity_mode="paper",
                 init_mode="seeded-struts", init_phi=-0.5, seed_spacing=2.5,
                 seed_width=0.5, step_decay=0.97,
                 min_step_factor=0.01, solver="direct", n_threads=1):
        self.material = material
        self.process = process
        self.v_max_fraction = v_max_fraction
        self.tau = tau
        self.d_coef = d_coef
        self.ds = ds
        self.max_iters = max_iters
        self.conv_tol = conv_tol
        self.conv_window = conv_window
        self.penalty = penalty
        self.multiplier0 = multiplier0
        self.multiplier_cap = multiplier_cap
        self.feasibility_tol = feasibility_tol
        self.sensitivity_mode = sensitivity_mode
        self.init_mode = init_mode
        self.init_phi = init_phi
        self.seed_spacing = seed_spacing
        self.seed_width = seed_width
        self.step_decay = step_decay
        self.min_step_factor = min_step_factor
        self.solver = solver
        self.n_threads = n_threads

    def _build_config(self) -> OptimizationConfig:
        return OptimizationConfig(
            v_max_fraction=self.v_max_fraction,
            max_iters=self.max_iters,
            conv_tol=self.conv_tol,
            conv_window=self.conv_window,
            update=UpdateParams(tau=self.tau, d_coef=self.d_coef, ds=self.ds),
            penalty=self.penalty,
            multiplier0=self.multiplier0,
            multiplier_cap=self.multiplier_cap,
            feasibility_tol=self.feasibility_tol,
            sensitivity_mode=self.sensitivity_mode,
            init_mode=self.init_mode,
            init_phi=self.init_phi,
            seed_spacing=self.seed_spacing,
            seed_width=self.seed_width,
            step_decay=self.step_decay,
            min_step_factor=self.min_step_factor,
            solver=self.solver,
            n_threads=self.n_threads,
        )

    def fit(self, model: BuildModel, y=None, phi0=None, callback=None):
        """Optimize the support layout for the given build model."""
        if not isinstance(model, BuildModel):
            raise ConfigError("fit: expected a BuildModel")
        mat = self.material if self.material is not None else default_alsi10mg()
        proc = self.process if self.process is not None else default_process()
        config = self._build_config()
        self.phi_, self.history_ = run_optimization(
            model, mat, proc, config, phi0=phi0, callback=callback)
        self.n_iter_ = len(self.history_)
        self.converged_ = self.history_[-1].converged
        self.objective_ = self.history_[-1].F
        self.volume_fraction_ = self.history_[-1].volume_fraction
        return self

    def score(self, model=None, y=None) -> float:
        """Negated final objective, so that larger is better."""
        if not hasattr(self, "objective_"):
            raise NotFittedError("SupportOptimizer is not fitted yet")
        return -self.objective_
