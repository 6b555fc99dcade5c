"""Exception types shared across the package.

The CLI maps these onto exit codes: ConfigError -> 1, SolverError -> 2,
NonFiniteError -> 3.
"""


class ConfigError(ValueError):
    """Invalid configuration, geometry, or parameter set.

    Messages name the offending field (e.g. "process.dt_cool: ...") so
    CLI users can locate the problem in their config file.
    """


class SolverError(RuntimeError):
    """A linear solve failed or did not reach the required tolerance."""


class NonFiniteError(ArithmeticError):
    """A computed quantity (temperature, objective, sensitivity) is not finite."""
