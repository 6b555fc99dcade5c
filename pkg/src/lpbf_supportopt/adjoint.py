"""Heat-dissipation objective and its discrete adjoint design sensitivity.

The objective accumulates squared excess temperature over the part
nodes of each freshly irradiated layer across the first n_obj cooling
steps. Its gradient with respect to the nodal level-set values is
obtained by solving the cooling steps backward in time with the same
(symmetric) system matrix as the forward problem.

Two accumulation modes exist:
  "paper" : only active, non-part elements strictly below the laser
            layer contribute, and the laser layer's nodes are zeroed
            per stage; the heating step is treated as design-independent.
  "exact" : the full discrete gradient, including the heating-step
            chain, the flux dependence of the laser layer, and the
            ersatz-scaled inactive layers. This is the variant that
            matches finite differences of the end-to-end objective.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, NonFiniteError, SolverError
from .fem import StageSystem, build_stage_system
from .geometry import BuildModel
from .levelset import element_mean_phi, heaviside_prime
from .materials import MaterialProps, ProcessParams
from .process import StageHistory

MODES = ("paper", "exact")


@dataclass(frozen=True)
class ObjectiveValue:
    """Objective F (K^2 s) with its per-stage breakdown."""

    F: float
    per_stage: np.ndarray

    def __post_init__(self):
        self.per_stage.setflags(write=False)


def qualifying_nodes(model: BuildModel, stage: int) -> np.ndarray:
    """Nodes belonging to at least one part element of the stage's layer."""
    sel = model.part_mask & (model.layer_of_element == stage)
    if not sel.any():
        return np.empty(0, dtype=int)
    return np.unique(model.elements[sel])


def objective(histories: list[StageHistory], model: BuildModel,
              proc: ProcessParams) -> ObjectiveValue:
    """Squared excess temperature of each layer's part nodes, time-integrated.

    F = sum_i sum_{j=1..n_obj} sum_{qual nodes} (T_i^j - T_amb)^2 dt_cool,
    each qualifying node counted once per (i, j).
    """
    if len(histories) != model.m:
        raise ConfigError(f"histories: expected {model.m} stages, got {len(histories)}")
    per_stage = np.zeros(model.m)
    for h in histories:
        if h.n_steps < proc.n_obj:
            raise ConfigError(
                f"histories: stage {h.stage} has {h.n_steps} cooling steps, "
                f"objective needs {proc.n_obj}"
            )
        nodes = qualifying_nodes(model, h.stage)
        if len(nodes) == 0:
            continue
        dT = h.T_cool[:proc.n_obj, nodes] - proc.T_amb
        per_stage[h.stage - 1] = float((dT ** 2).sum() * proc.dt_cool)
    F = float(per_stage.sum())
    if not np.isfinite(F):
        raise NonFiniteError("objective is not finite")
    return ObjectiveValue(F=F, per_stage=per_stage)


def _dF_dT(model: BuildModel, proc: ProcessParams, stage: int,
           T: np.ndarray) -> np.ndarray:
    """Gradient of F with respect to one stage's cooling-step temperatures."""
    g = np.zeros(model.n_nodes)
    nodes = qualifying_nodes(model, stage)
    if len(nodes):
        g[nodes] = 2.0 * (T[nodes] - proc.T_amb) * proc.dt_cool
    return g


def solve_adjoint_stage(model: BuildModel, phi: np.ndarray, mat: MaterialProps,
                        proc: ProcessParams, stage: int, history: StageHistory,
                        system: StageSystem | None = None,
                        solver: str = "direct") -> np.ndarray:
    """Backward-in-time adjoint vectors for one stage.

    Returns an (n_obj, n_nodes) array; row j-1 is the multiplier of
    cooling step j. Steps beyond n_obj carry zero load and zero terminal
    condition, so their multipliers vanish and the recursion starts at
    j = n_obj.
    """
    if history.n_steps < proc.n_obj:
        raise ConfigError(
            f"history: stage {stage} has {history.n_steps} cooling steps, "
            f"adjoint needs {proc.n_obj}"
        )
    if system is None:
        system = build_stage_system(model, phi, stage, mat, proc, solver=solver)
    n = proc.n_obj
    lam = np.zeros((n, model.n_nodes))
    try:
        rhs = -_dF_dT(model, proc, stage, history.T_cool[n - 1])
        lam[n - 1] = system.solve_transposed(rhs, proc.dt_cool)
        for j in range(n - 1, 0, -1):
            rhs = -_dF_dT(model, proc, stage, history.T_cool[j - 1]) \
                + system.C @ lam[j] / proc.dt_cool
            lam[j - 1] = system.solve_transposed(rhs, proc.dt_cool)
    except SolverError as exc:
        raise SolverError(f"adjoint stage {stage}: {exc}") from exc
    return lam


def _mass_form(model: BuildModel, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Per-element u^T M_e v for the unit-coefficient consistent mass matrix."""
    ut, vt = u[model.elements], v[model.elements]
    return model.areas / 12.0 * ((ut * vt).sum(axis=1) + ut.sum(axis=1) * vt.sum(axis=1))


def _stiff_form(model: BuildModel, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Per-element u^T K_e v for the unit-coefficient stiffness matrix."""
    ut, vt = u[model.elements], v[model.elements]
    ub = (ut * model.grad_x).sum(axis=1)
    vb = (vt * model.grad_x).sum(axis=1)
    uc = (ut * model.grad_y).sum(axis=1)
    vc = (vt * model.grad_y).sum(axis=1)
    return model.areas * (ub * vb + uc * vc)


def stage_sensitivity(model: BuildModel, phi: np.ndarray, mat: MaterialProps,
                      proc: ProcessParams, stage: int, history: StageHistory,
                      lam: np.ndarray, system: StageSystem | None = None,
                      mode: str = "paper", solver: str = "direct") -> np.ndarray:
    """One stage's contribution to the nodal objective gradient."""
    if mode not in MODES:
        raise ConfigError(f"sensitivity mode: unknown mode {mode!r}")
    if system is None:
        system = build_stage_system(model, phi, stage, mat, proc, solver=solver)
    dt = proc.dt_cool
    phi_bar = element_mean_phi(model, phi)
    # chain rule through the element-mean interpolation: each of the three
    # nodes of an element moves the mean by 1/3
    dfac = (1.0 - proc.d_void) * heaviside_prime(phi_bar, proc.w_heaviside) / 3.0

    active = model.layer_of_element <= stage
    laser = model.layer_of_element == stage
    design = ~model.part_mask
    if mode == "paper":
        include = design & active & ~laser
        scale = np.ones(model.n_elements)
    else:
        include = design
        scale = np.where(active, 1.0, proc.ersatz_inactive)

    drc = scale * mat.rho_c * dfac
    dk = scale * mat.k * dfac

    elem = np.zeros(model.n_elements)
    T_states = np.vstack([history.T_heat_end[None, :], history.T_cool[:proc.n_obj]])
    for j in range(1, proc.n_obj + 1):
        dT = (T_states[j] - T_states[j - 1]) / dt
        elem += drc * _mass_form(model, lam[j - 1], dT)
        elem += dk * _stiff_form(model, lam[j - 1], T_states[j])

    if mode == "exact":
        # heating-step chain: A_h^T mu = (C/dt)^T lam^1, then the residual's
        # explicit dependence through C, K, and the flux load
        rhs = system.C @ lam[0] / dt
        mu = system.solve_transposed(rhs, proc.t_h)
        T0 = history.T_heat_end
        dT_h = (T0 - proc.T_amb) / proc.t_h
        elem += drc * _mass_form(model, mu, dT_h)
        elem += dk * _stiff_form(model, mu, T0)
        # flux term: dQ_e/dphi_p = q dfac_e (A_e/3) at each node, laser layer only
        mu_sum = mu[model.elements].sum(axis=1)
        elem -= np.where(laser & design,
                         proc.q * dfac * model.areas / 3.0 * mu_sum, 0.0)

    sens = np.zeros(model.n_nodes)
    idx = np.flatnonzero(include)
    np.add.at(sens, model.elements[idx].ravel(), np.repeat(elem[idx], 3))
    if mode == "paper" and laser.any():
        sens[np.unique(model.elements[laser])] = 0.0
    return sens


def assemble_sensitivity(model: BuildModel, phi: np.ndarray, mat: MaterialProps,
                         proc: ProcessParams, histories: list[StageHistory],
                         mode: str = "paper", solver: str = "direct",
                         n_threads: int = 1) -> np.ndarray:
    """Nodal dF/dphi summed over all stages; zero at part nodes.

    Stage contributions are computed independently (optionally in a
    thread pool) and reduced in stage order for determinism.
    """
    ordered = sorted(histories, key=lambda h: h.stage)

    def one(h: StageHistory) -> np.ndarray:
        system = build_stage_system(model, phi, h.stage, mat, proc, solver=solver)
        lam = solve_adjoint_stage(model, phi, mat, proc, h.stage, h, system=system)
        return stage_sensitivity(model, phi, mat, proc, h.stage, h, lam,
                                 system=system, mode=mode)

    if n_threads > 1:
        with ThreadPoolExecutor(max_workers=n_threads) as pool:
            parts = list(pool.map(one, ordered))
    else:
        parts = [one(h) for h in ordered]
    sens = np.zeros(model.n_nodes)
    for p in parts:
        sens += p
    sens[model.part_nodes()] = 0.0
    if not np.all(np.isfinite(sens)):
        raise NonFiniteError("sensitivity field is not finite")
    return sens
