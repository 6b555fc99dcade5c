"""Material properties and build-process parameters.

Units are mm / s / W / kg / degC throughout the package: density in
kg/mm^3, heat capacity in J/(kg K), conductivity in W/(mm K), volume
heat flux in W/mm^3.
"""
from __future__ import annotations

from dataclasses import dataclass

from .errors import ConfigError


def _require(cond: bool, field: str, msg: str) -> None:
    if not cond:
        raise ConfigError(f"{field}: {msg}")


@dataclass(frozen=True)
class MaterialProps:
    """Isotropic, temperature-independent solid material."""

    rho: float  # kg/mm^3
    c: float    # J/(kg K)
    k: float    # W/(mm K)

    def __post_init__(self):
        _require(self.rho > 0, "materials.rho", "must be > 0")
        _require(self.c > 0, "materials.c", "must be > 0")
        _require(self.k > 0, "materials.k", "must be > 0")

    @property
    def rho_c(self) -> float:
        """Volumetric heat capacity, J/(mm^3 K)."""
        return self.rho * self.c


@dataclass(frozen=True)
class ProcessParams:
    """Per-layer flash-heating process parameters.

    q : volume heat flux applied to the newest layer's material, W/mm^3
    t_h : duration of the single implicit heating step, s
    t_c : total cooling time per layer, s (integer multiple of dt_cool)
    dt_cool : cooling time-step size, s
    T_amb : build-plate / initial temperature, degC
    n_obj : number of leading cooling steps entering the objective
    ersatz_inactive : property scale factor for not-yet-built layers
    d_void : property scale floor for void (powder) within built layers
    w_heaviside : half-width of the smoothed material-indicator transition
    """

    q: float = 2e4
    t_h: float = 0.5e-3
    t_c: float = 10.0
    dt_cool: float = 1.0
    T_amb: float = 20.0
    n_obj: int = 3
    ersatz_inactive: float = 1e-3
    d_void: float = 1e-3
    w_heaviside: float = 0.9

    def __post_init__(self):
        _require(self.q >= 0, "process.q", "must be >= 0")
        _require(self.t_h > 0, "process.t_h", "must be > 0")
        _require(self.dt_cool > 0, "process.dt_cool", "must be > 0")
        ratio = self.t_c / self.dt_cool
        _require(
            abs(ratio - round(ratio)) < 1e-9 and round(ratio) >= 1,
            "process.t_c",
            f"must be a positive integer multiple of dt_cool (got t_c={self.t_c}, dt_cool={self.dt_cool})",
        )
        _require(
            1 <= self.n_obj <= round(ratio),
            "process.n_obj",
            f"must lie in [1, t_c/dt_cool] = [1, {round(ratio)}]",
        )
        _require(0 < self.ersatz_inactive < 1, "process.ersatz_inactive", "must lie in (0, 1)")
        _require(0 < self.d_void < 1, "process.d_void", "must lie in (0, 1)")
        _require(0 < self.w_heaviside <= 1, "process.w_heaviside", "must lie in (0, 1]")

    @property
    def n_cool(self) -> int:
        """Number of cooling steps per layer."""
        return round(self.t_c / self.dt_cool)


def default_alsi10mg() -> MaterialProps:
    """AlSi10Mg bulk properties."""
    return MaterialProps(rho=2.67e-6, c=910.0, k=119e-3)


def default_process() -> ProcessParams:
    """Default flash-heating process parameters."""
    return ProcessParams()
