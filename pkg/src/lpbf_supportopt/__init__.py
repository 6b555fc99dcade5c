"""Layer-by-layer LPBF thermal simulation and level-set support optimization.

The package models the powder-bed build as a sequence of independent
layer stages (flash heating plus cooling on a fixed mesh with ersatz
material for unbuilt layers and powder) and optimizes a support
structure that maximizes heat dissipation of the part in every layer,
driven by discrete adjoint sensitivities.
"""

from .adjoint import (MODES, ObjectiveValue, assemble_sensitivity, objective,
                      qualifying_nodes, solve_adjoint_stage, stage_sensitivity)
from .config import (PRESETS, RunConfig, config_from_dict, emit_config,
                     parse_config, preset_config)
from .errors import ConfigError, NonFiniteError, SolverError
from .fem import (ElementCoeffs, StageSystem, assemble_C, assemble_K,
                  assemble_Q, build_stage_system, element_coeffs, implicit_step)
from .geometry import (BuildModel, PartGeometry, active_elements,
                       apply_part_mask, build_mesh, load_raster_part)
from .levelset import (UpdateParams, characteristic, element_mean_phi,
                       extended_conductivity, extended_density, extended_factor,
                       heaviside, heaviside_prime, init_phi, update, volume)
from .materials import (MaterialProps, ProcessParams, default_alsi10mg,
                        default_process)
from .optimizer import (IterationRecord, OptimizationConfig, SupportOptimizer,
                        constrained_direction, pillar_baseline,
                        run_optimization, volume_gradient)
from .process import (StageHistory, layerwise_cooldown_field, run_build,
                      run_stage)
from .vtkio import write_vtk

__version__ = "0.1.0"

__all__ = [
    "BuildModel", "PartGeometry", "build_mesh", "apply_part_mask",
    "active_elements", "load_raster_part",
    "MaterialProps", "ProcessParams", "default_alsi10mg", "default_process",
    "heaviside", "heaviside_prime", "characteristic", "extended_factor",
    "extended_density", "extended_conductivity", "element_mean_phi",
    "init_phi", "update", "volume", "UpdateParams",
    "ElementCoeffs", "element_coeffs", "assemble_C", "assemble_K", "assemble_Q",
    "implicit_step", "StageSystem", "build_stage_system",
    "StageHistory", "run_stage", "run_build", "layerwise_cooldown_field",
    "ObjectiveValue", "objective", "qualifying_nodes", "solve_adjoint_stage",
    "stage_sensitivity", "assemble_sensitivity", "MODES",
    "OptimizationConfig", "IterationRecord", "run_optimization",
    "constrained_direction", "volume_gradient", "pillar_baseline",
    "SupportOptimizer",
    "RunConfig", "parse_config", "preset_config", "config_from_dict",
    "emit_config", "PRESETS", "write_vtk",
    "ConfigError", "SolverError", "NonFiniteError",
    "__version__",
]
