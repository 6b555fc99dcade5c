"""Nodal level-set design field and its reaction-diffusion update.

phi lives on mesh nodes with values in [-1, 1]: positive means material
(part or support), negative means void/powder. The smoothed material
indicator is a quintic polynomial ramp of half-width w; analysis
coefficients interpolate between a void floor d and the bulk value.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import ConfigError, NonFiniteError, SolverError
from .geometry import BuildModel

_EPS = 1e-12


def heaviside(phi, w: float):
    """Smoothed material indicator in [0, 1] with transition half-width w.

    Equals 0 below -w, 1 above +w, and a C1 quintic ramp in between.
    Accepts scalars or arrays.
    """
    if w <= 0:
        raise ConfigError("w_heaviside: must be > 0")
    x = np.clip(np.asarray(phi, dtype=float) / w, -1.0, 1.0)
    x2 = x * x
    h = 0.5 + x * (15.0 / 16.0 - x2 * (5.0 / 8.0 - (3.0 / 16.0) * x2))
    return h if h.ndim else float(h)


def heaviside_prime(phi, w: float):
    """Derivative of the smoothed indicator: (15/(16w)) (1 - (phi/w)^2)^2 inside the band."""
    if w <= 0:
        raise ConfigError("w_heaviside: must be > 0")
    x = np.asarray(phi, dtype=float) / w
    inside = np.abs(x) <= 1.0
    d = np.where(inside, (15.0 / (16.0 * w)) * (1.0 - x * x) ** 2, 0.0)
    return d if d.ndim else float(d)


def characteristic(phi):
    """Sharp 0/1 material indicator: 1 where phi >= 0."""
    out = np.where(np.asarray(phi, dtype=float) >= 0.0, 1, 0)
    return out if out.ndim else int(out)


def extended_factor(phi, w: float, d: float):
    """Property interpolation factor (1-d) H(phi; w) + d, in [d, 1]."""
    if not 0 < d < 1:
        raise ConfigError("d_void: must lie in (0, 1)")
    return (1.0 - d) * heaviside(phi, w) + d


def extended_density(phi, w: float, d: float, rho: float):
    """Design-dependent density: factor times bulk rho."""
    return extended_factor(phi, w, d) * rho


def extended_conductivity(phi, w: float, d: float, k: float):
    """Design-dependent conductivity: factor times bulk k."""
    return extended_factor(phi, w, d) * k


def element_mean_phi(model: BuildModel, phi: np.ndarray) -> np.ndarray:
    """Per-element mean of the three nodal phi values."""
    return phi[model.elements].mean(axis=1)


def init_phi(model: BuildModel, value: float = 0.5) -> np.ndarray:
    """Uniform initial design field, with part nodes pinned to +1."""
    phi = np.full(model.n_nodes, float(value))
    phi[model.part_nodes()] = 1.0
    return phi


def volume(phi: np.ndarray, model: BuildModel) -> tuple[float, float]:
    """Material area (mm^2) and area fraction over the designable region.

    An element counts as material when the sharp indicator of its mean
    phi is 1; part elements are excluded from both numerator and
    denominator.
    """
    phi_bar = element_mean_phi(model, phi)
    design = ~model.part_mask
    material = design & (phi_bar >= 0.0)
    area = float(model.areas[material].sum())
    design_area = float(model.areas[design].sum())
    fraction = area / design_area if design_area > 0 else 0.0
    return area, fraction


def volume_smooth(phi: np.ndarray, model: BuildModel, w: float) -> tuple[float, float]:
    """Smoothed material area and fraction: the indicator integral H(phi_bar; w)
    over the designable region. Continuous in phi, unlike the sharp count."""
    phi_bar = element_mean_phi(model, phi)
    design = ~model.part_mask
    area = float((model.areas[design] * heaviside(phi_bar[design], w)).sum())
    design_area = float(model.areas[design].sum())
    fraction = area / design_area if design_area > 0 else 0.0
    return area, fraction


@dataclass(frozen=True)
class UpdateParams:
    """Reaction-diffusion update parameters: regularization tau, step gain
    D, and fictitious time step ds (only the product D*ds sets the step size)."""

    tau: float = 1e-4
    d_coef: float = 0.8
    ds: float = 1.0

    def __post_init__(self):
        if self.tau <= 0:
            raise ConfigError("update.tau: must be > 0")
        if self.d_coef <= 0:
            raise ConfigError("update.d_coef: must be > 0")
        if self.ds <= 0:
            raise ConfigError("update.ds: must be > 0")


def _unit_matrices(model: BuildModel) -> tuple[sp.csr_matrix, sp.csr_matrix]:
    """Unit-coefficient consistent mass and stiffness matrices."""
    tri = model.elements
    i_idx = np.repeat(tri, 3, axis=1).ravel()
    j_idx = np.tile(tri, (1, 3)).ravel()
    mass_pat = np.array([2, 1, 1, 1, 2, 1, 1, 1, 2], dtype=float) / 12.0
    m_data = (model.areas[:, None] * mass_pat).ravel()
    bb = model.grad_x[:, :, None] * model.grad_x[:, None, :]
    cc = model.grad_y[:, :, None] * model.grad_y[:, None, :]
    k_data = (model.areas[:, None, None] * (bb + cc)).reshape(-1)
    n = model.n_nodes
    M = sp.coo_matrix((m_data, (i_idx, j_idx)), shape=(n, n)).tocsr()
    K = sp.coo_matrix((k_data, (i_idx, j_idx)), shape=(n, n)).tocsr()
    return M, K


def update(phi: np.ndarray, sens: np.ndarray, params: UpdateParams,
           model: BuildModel) -> np.ndarray:
    """One implicit reaction-diffusion step of the level-set field.

    Solves (M/ds + Y) phi_new = M phi / ds + Dvec with Y the
    tau-weighted diffusion operator and Dvec the consistent load built
    from the descent drive F' = -sens / max|sens|. The result is clamped
    to [-1, 1] and part nodes are reset to +1. Natural (zero-flux)
    boundary conditions apply on the chamber boundary.
    """
    if sens.shape != phi.shape:
        raise ConfigError("sens: must be a nodal field matching phi")
    M, K_unit = _unit_matrices(model)
    scale = float(np.max(np.abs(sens)))
    fprime = -sens / max(scale, _EPS)
    A = (M / params.ds + params.d_coef * params.tau * K_unit).tocsc()
    rhs = M @ phi / params.ds + params.d_coef * (M @ fprime)
    try:
        phi_new = spla.spsolve(A, rhs)
    except Exception as exc:  # singular/ill-posed update system
        raise SolverError(f"level-set update solve failed: {exc}") from exc
    if not np.all(np.isfinite(phi_new)):
        raise NonFiniteError("level-set update produced non-finite values")
    phi_new = np.clip(phi_new, -1.0, 1.0)
    phi_new[model.part_nodes()] = 1.0
    return phi_new
