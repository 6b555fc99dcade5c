"""Sparse FEM for the layer-activated transient heat equation.

Linear 3-node triangles, consistent capacity matrix, backward-Euler
time stepping, and symmetric Dirichlet elimination at the build plate.
Coefficients are frozen within one layer stage, so the implicit system
is factorized once per (stage, dt) and reused across time steps.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import ConfigError, NonFiniteError, SolverError
from .geometry import BuildModel
from .levelset import element_mean_phi, extended_factor
from .materials import MaterialProps, ProcessParams

_MASS_PATTERN = np.array([2, 1, 1, 1, 2, 1, 1, 1, 2], dtype=float) / 12.0


@dataclass(frozen=True)
class ElementCoeffs:
    """Per-element effective volumetric heat capacity and conductivity."""

    rho_c: np.ndarray  # J/(mm^3 K)
    k: np.ndarray      # W/(mm K)


def element_coeffs(model: BuildModel, phi: np.ndarray, stage: int,
                   mat: MaterialProps, proc: ProcessParams) -> ElementCoeffs:
    """Effective coefficients for the given build stage.

    Part elements carry bulk properties; designable elements carry the
    smoothed interpolation of phi; layers above the stage are scaled by
    the inactive ersatz factor on top of the same evaluation.
    """
    if not 1 <= stage <= model.m:
        raise ConfigError(f"stage: {stage} out of range [1, {model.m}]")
    fac = extended_factor(element_mean_phi(model, phi), proc.w_heaviside, proc.d_void)
    fac = np.where(model.part_mask, 1.0, fac)
    fac = np.where(model.layer_of_element > stage, proc.ersatz_inactive * fac, fac)
    return ElementCoeffs(rho_c=fac * mat.rho_c, k=fac * mat.k)


def _scatter_indices(model: BuildModel) -> tuple[np.ndarray, np.ndarray]:
    tri = model.elements
    return np.repeat(tri, 3, axis=1).ravel(), np.tile(tri, (1, 3)).ravel()


def assemble_C(rho_c: np.ndarray, model: BuildModel) -> sp.csr_matrix:
    """Consistent heat-capacity matrix from per-element rho*c values."""
    i_idx, j_idx = _scatter_indices(model)
    data = ((rho_c * model.areas)[:, None] * _MASS_PATTERN).ravel()
    n = model.n_nodes
    return sp.coo_matrix((data, (i_idx, j_idx)), shape=(n, n)).tocsr()


def assemble_K(k_eff: np.ndarray, model: BuildModel) -> sp.csr_matrix:
    """Conductivity matrix from per-element conductivities."""
    i_idx, j_idx = _scatter_indices(model)
    bb = model.grad_x[:, :, None] * model.grad_x[:, None, :]
    cc = model.grad_y[:, :, None] * model.grad_y[:, None, :]
    data = ((k_eff * model.areas)[:, None, None] * (bb + cc)).reshape(-1)
    n = model.n_nodes
    return sp.coo_matrix((data, (i_idx, j_idx)), shape=(n, n)).tocsr()


def flux_scale(model: BuildModel, phi: np.ndarray, stage: int,
               proc: ProcessParams) -> np.ndarray:
    """Per-element heat-flux scale for the stage's laser layer.

    Part elements receive the full flux q; designable elements receive q
    scaled by the smoothed material indicator; everything outside the
    laser layer receives zero.
    """
    if not 1 <= stage <= model.m:
        raise ConfigError(f"stage: {stage} out of range [1, {model.m}]")
    fac = extended_factor(element_mean_phi(model, phi), proc.w_heaviside, proc.d_void)
    scale = np.where(model.part_mask, proc.q, proc.q * fac)
    return np.where(model.layer_of_element == stage, scale, 0.0)


def assemble_Q(model: BuildModel, phi: np.ndarray, stage: int,
               proc: ProcessParams) -> np.ndarray:
    """Consistent nodal load from the stage's volume heat flux."""
    scale = flux_scale(model, phi, stage, proc)
    q = np.zeros(model.n_nodes)
    loads = np.repeat((scale * model.areas / 3.0)[:, None], 3, axis=1)
    np.add.at(q, model.elements, loads)
    return q


class StageSystem:
    """Frozen matrices and solvers for one build stage.

    Holds C, K, and the Dirichlet partition; lazily factorizes the
    implicit operator (C/dt + K) per distinct dt and reuses it for all
    forward and adjoint solves of the stage.
    """

    def __init__(self, C: sp.csr_matrix, K: sp.csr_matrix,
                 dirichlet_nodes: np.ndarray, dirichlet_value: float,
                 solver: str = "direct"):
        if solver not in ("direct", "cg"):
            raise ConfigError(f"solver: unknown solver {solver!r}")
        self.C = C
        self.K = K
        self.solver = solver
        n = C.shape[0]
        self.n = n
        self.dirichlet_nodes = np.asarray(dirichlet_nodes, dtype=int)
        self.dirichlet_value = float(dirichlet_value)
        mask = np.ones(n, dtype=bool)
        mask[self.dirichlet_nodes] = False
        self.free = np.flatnonzero(mask)
        self._ops: dict[float, tuple] = {}

    def _operator(self, dt: float):
        op = self._ops.get(dt)
        if op is None:
            A = (self.C / dt + self.K).tocsr()
            A_ff = A[self.free][:, self.free].tocsc()
            A_fd = A[self.free][:, self.dirichlet_nodes].tocsr()
            if self.solver == "direct":
                try:
                    factor = spla.splu(A_ff)
                except Exception as exc:
                    raise SolverError(f"LU factorization failed: {exc}") from exc
            else:
                factor = None
            op = (A_ff, A_fd, factor)
            self._ops[dt] = op
        return op

    def _solve_reduced(self, A_ff, factor, rhs: np.ndarray) -> np.ndarray:
        if self.solver == "direct":
            x = factor.solve(rhs)
        else:
            diag = A_ff.diagonal()
            precond = spla.LinearOperator(A_ff.shape, matvec=lambda v: v / diag)
            x, info = spla.cg(A_ff, rhs, rtol=1e-10, atol=0.0,
                              maxiter=10 * self.n, M=precond)
            if info != 0:
                raise SolverError(
                    f"CG did not converge (info={info}) after at most {10 * self.n} iterations"
                )
        rhs_norm = float(np.linalg.norm(rhs))
        if rhs_norm > 0:
            res = float(np.linalg.norm(A_ff @ x - rhs)) / rhs_norm
            if res > 1e-10:
                raise SolverError(f"reduced-system residual {res:.3e} exceeds 1e-10")
        if not np.all(np.isfinite(x)):
            raise NonFiniteError("linear solve produced non-finite values")
        return x

    def step(self, T_prev: np.ndarray, Q: np.ndarray | None, dt: float) -> np.ndarray:
        """Backward-Euler step: (C/dt + K) T = C/dt T_prev + Q with plate clamp."""
        if dt <= 0:
            raise ConfigError("dt: must be > 0")
        A_ff, A_fd, factor = self._operator(dt)
        rhs_full = self.C @ (T_prev / dt)
        if Q is not None:
            rhs_full = rhs_full + Q
        rhs = rhs_full[self.free] - A_fd @ np.full(
            len(self.dirichlet_nodes), self.dirichlet_value)
        T = np.full(self.n, self.dirichlet_value)
        T[self.free] = self._solve_reduced(A_ff, factor, rhs)
        return T

    def solve_transposed(self, rhs_full: np.ndarray, dt: float) -> np.ndarray:
        """Solve (C/dt + K)^T lam = rhs on free nodes, zero on the plate.

        The operator is symmetric, so the forward factorization is reused.
        """
        A_ff, _, factor = self._operator(dt)
        lam = np.zeros(self.n)
        lam[self.free] = self._solve_reduced(A_ff, factor, rhs_full[self.free])
        return lam


def implicit_step(C: sp.spmatrix, K: sp.spmatrix, Q: np.ndarray | None,
                  T_prev: np.ndarray, dt: float, dirichlet_nodes: np.ndarray,
                  dirichlet_value: float, solver: str = "direct") -> np.ndarray:
    """One-off backward-Euler step; see StageSystem.step for the contract."""
    sys = StageSystem(sp.csr_matrix(C), sp.csr_matrix(K), dirichlet_nodes,
                      dirichlet_value, solver=solver)
    return sys.step(np.asarray(T_prev, dtype=float), Q, dt)


def build_stage_system(model: BuildModel, phi: np.ndarray, stage: int,
                       mat: MaterialProps, proc: ProcessParams,
                       solver: str = "direct") -> StageSystem:
    """Assemble C and K for a stage and wrap them with the plate clamp."""
    coeffs = element_coeffs(model, phi, stage, mat, proc)
    C = assemble_C(coeffs.rho_c, model)
    K = assemble_K(coeffs.k, model)
    return StageSystem(C, K, model.plate_nodes, proc.T_amb, solver=solver)
