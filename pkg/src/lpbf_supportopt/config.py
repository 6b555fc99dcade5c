"""Run configuration: JSON file parsing with strict validation, plus the
built-in benchmark presets.

The configuration is a single JSON object with sections geometry,
materials, process, optimization, baseline, and output. Unknown keys
anywhere are rejected so typos cannot silently fall back to defaults.
"""
from __future__ import annotations

import copy
import json
import os
from dataclasses import dataclass

from .errors import ConfigError
from .geometry import BuildModel, PartGeometry, apply_part_mask, build_mesh, load_raster_part
from .levelset import UpdateParams
from .materials import MaterialProps, ProcessParams
from .optimizer import OptimizationConfig

_PART_KEYS = {
    "overhang-beam": {"x0", "wall_width", "arm_y", "arm_thickness", "arm_length"},
    "mbb-like": {"leg_width", "beam_y", "beam_thickness", "beam_length"},
    "raster-mask": {"path"},
}

_SCHEMA = {
    "geometry": {"chamber_width", "chamber_height", "nx", "ny", "layer_thickness", "part"},
    "materials": {"rho", "c", "k"},
    "process": {"q", "t_h", "t_c", "dt_cool", "T_amb", "n_obj",
                "ersatz_inactive", "d_void", "w_heaviside"},
    "optimization": {"v_max_fraction", "max_iters", "conv_tol", "conv_window",
                     "tau", "d_coef", "ds", "penalty", "multiplier0",
                     "multiplier_cap",
                     "feasibility_tol", "sensitivity", "init_mode", "init_phi",
                     "seed_spacing", "seed_width",
                     "step_decay", "min_step_factor"},
    "baseline": {"spacing", "width"},
    "output": {"directory", "vtk_every", "composite_step"},
}

PRESETS: dict[str, dict] = {
    # 25x25 mm chamber, 50 layers of 0.5 mm; part is a plate-mounted wall
    # with a long horizontal overhang arm
    "overhang2d": {
        "geometry": {
            "chamber_width": 25.0,
            "chamber_height": 25.0,
            "nx": 100,
            "ny": 100,
            "layer_thickness": 0.5,
            "part": {
                "kind": "overhang-beam",
                "x0": 2.0,
                "wall_width": 3.0,
                "arm_y": 14.0,
                "arm_thickness": 3.0,
                "arm_length": 16.0,
            },
        },
        "materials": {"rho": 2.67e-6, "c": 910.0, "k": 0.119},
        "process": {"q": 2e4, "t_h": 0.5e-3, "t_c": 10.0, "dt_cool": 1.0,
                    "T_amb": 20.0, "n_obj": 3, "ersatz_inactive": 1e-3,
                    "d_void": 1e-3, "w_heaviside": 0.9},
        "optimization": {"v_max_fraction": 0.21, "max_iters": 300,
                         "conv_tol": 1e-4, "conv_window": 5, "tau": 1e-4,
                         "d_coef": 0.8, "ds": 0.2, "penalty": 60.0,
                         "multiplier0": 0.0, "multiplier_cap": 2.0,
                         "feasibility_tol": 0.005,
                         "sensitivity": "paper", "init_mode": "seeded-struts", "init_phi": -0.5,
                         "seed_spacing": 1.6, "seed_width": 0.25,
                         "step_decay": 0.97, "min_step_factor": 0.01},
        "baseline": {"spacing": 1.8, "width": 0.5},
        "output": {"directory": "out", "vtk_every": 1, "composite_step": 1},
    },
    # 30x15 mm chamber, 30 layers; half-beam on a left leg with a long
    # elevated span
    "mbb2d": {
        "geometry": {
            "chamber_width": 30.0,
            "chamber_height": 15.0,
            "nx": 120,
            "ny": 60,
            "layer_thickness": 0.5,
            "part": {
                "kind": "mbb-like",
                "leg_width": 2.0,
                "beam_y": 10.0,
                "beam_thickness": 2.5,
                "beam_length": 26.0,
            },
        },
        "materials": {"rho": 2.67e-6, "c": 910.0, "k": 0.119},
        "process": {"q": 2e4, "t_h": 0.5e-3, "t_c": 10.0, "dt_cool": 1.0,
                    "T_amb": 20.0, "n_obj": 3, "ersatz_inactive": 1e-3,
                    "d_void": 1e-3, "w_heaviside": 0.9},
        "optimization": {"v_max_fraction": 0.174, "max_iters": 300,
                         "conv_tol": 1e-4, "conv_window": 5, "tau": 1e-4,
                         "d_coef": 0.8, "ds": 0.2, "penalty": 60.0,
                         "multiplier0": 0.0, "multiplier_cap": 2.0,
                         "feasibility_tol": 0.005,
                         "sensitivity": "paper", "init_mode": "seeded-struts", "init_phi": -0.5,
                         "seed_spacing": 2.2, "seed_width": 0.25,
                         "step_decay": 0.97, "min_step_factor": 0.01},
        "baseline": {"spacing": 2.4, "width": 0.5},
        "output": {"directory": "out", "vtk_every": 1, "composite_step": 1},
    },
}


@dataclass(frozen=True)
class OutputConfig:
    directory: str = "out"
    vtk_every: int = 1
    composite_step: int = 1

    def __post_init__(self):
        if self.vtk_every < 0:
            raise ConfigError("output.vtk_every: must be >= 0 (0 disables)")
        if self.composite_step < 1:
            raise ConfigError("output.composite_step: must be >= 1")


@dataclass(frozen=True)
class BaselineConfig:
    spacing: float = 2.0
    width: float = 0.5

    def __post_init__(self):
        if not self.spacing > self.width > 0:
            raise ConfigError("baseline: need spacing > width > 0")


@dataclass(frozen=True)
class RunConfig:
    """Validated run configuration; build_model() materializes the mesh."""

    raw: dict
    material: MaterialProps
    process: ProcessParams
    optimization: OptimizationConfig
    baseline: BaselineConfig
    output: OutputConfig
    base_dir: str = "."

    def build_model(self) -> BuildModel:
        g = self.raw["geometry"]
        model = build_mesh(g["chamber_width"], g["chamber_height"],
                           g["nx"], g["ny"], g["layer_thickness"])
        return apply_part_mask(model, self.build_part())

    def build_part(self) -> PartGeometry:
        p = dict(self.raw["geometry"]["part"])
        kind = p.pop("kind")
        if kind == "raster-mask":
            path = p["path"]
            if not os.path.isabs(path):
                path = os.path.join(self.base_dir, path)
            return load_raster_part(path)
        return PartGeometry(kind=kind, params=p)

    def effective(self) -> dict:
        """The complete configuration dict this run resolves to."""
        return copy.deepcopy(self.raw)


def _check_number(section: str, key: str, value, integer: bool = False):
    if integer:
        if not isinstance(value, int) or isinstance(value, bool):
            raise ConfigError(f"{section}.{key}: expected an integer, got {value!r}")
        return value
    if not isinstance(value, (int, float)) or isinstance(value, bool):
        raise ConfigError(f"{section}.{key}: expected a number, got {value!r}")
    return float(value)


_INT_KEYS = {"nx", "ny", "n_obj", "max_iters", "conv_window", "vtk_every",
             "composite_step"}
_STR_KEYS = {"kind", "path", "sensitivity", "init_mode", "directory"}


def _validate_tree(data: dict) -> dict:
    if not isinstance(data, dict):
        raise ConfigError("config: top level must be a JSON object")
    out = {}
    for section, content in data.items():
        if section not in _SCHEMA:
            raise ConfigError(f"{section}: unknown section")
        if not isinstance(content, dict):
            raise ConfigError(f"{section}: must be an object")
        known = _SCHEMA[section]
        sec = {}
        for key, value in content.items():
            if key not in known:
                raise ConfigError(f"{section}.{key}: unknown key")
            if key == "part":
                if not isinstance(value, dict) or "kind" not in value:
                    raise ConfigError("geometry.part: must be an object with a 'kind'")
                kind = value["kind"]
                if kind not in _PART_KEYS:
                    raise ConfigError(
                        f"geometry.part.kind: unknown kind {kind!r}, "
                        f"expected one of {sorted(_PART_KEYS)}"
                    )
                part = {"kind": kind}
                for pk, pv in value.items():
                    if pk == "kind":
                        continue
                    if pk not in _PART_KEYS[kind]:
                        raise ConfigError(f"geometry.part.{pk}: unknown key for kind {kind!r}")
                    part[pk] = pv if pk == "path" else _check_number("geometry.part", pk, pv)
                missing = _PART_KEYS[kind] - set(part)
                if missing:
                    raise ConfigError(f"geometry.part: missing keys {sorted(missing)}")
                sec[key] = part
            elif key in _STR_KEYS:
                if not isinstance(value, str):
                    raise ConfigError(f"{section}.{key}: expected a string")
                sec[key] = value
            else:
                sec[key] = _check_number(section, key, value, integer=key in _INT_KEYS)
        out[section] = sec
    return out


def _merged_defaults(user: dict) -> dict:
    """Fill in package defaults for any section or key the user omitted."""
    base = {
        "materials": {"rho": 2.67e-6, "c": 910.0, "k": 0.119},
        "process": {f: getattr(ProcessParams(), f) for f in
                    ("q", "t_h", "t_c", "dt_cool", "T_amb", "n_obj",
                     "ersatz_inactive", "d_void", "w_heaviside")},
        "optimization": {"v_max_fraction": 0.21, "max_iters": 300,
                         "conv_tol": 1e-4, "conv_window": 5, "tau": 1e-4,
                         "d_coef": 0.8, "ds": 0.2, "penalty": 60.0,
                         "multiplier0": 0.0, "multiplier_cap": 2.0,
                         "feasibility_tol": 0.005,
                         "sensitivity": "paper", "init_mode": "seeded-struts", "init_phi": -0.5,
                         "seed_spacing": 2.5, "seed_width": 0.5,
                         "step_decay": 0.97, "min_step_factor": 0.01},
        "baseline": {"spacing": 2.0, "width": 0.5},
        "output": {"directory": "out", "vtk_every": 1, "composite_step": 1},
    }
    if "geometry" not in user:
        raise ConfigError("geometry: section is required")
    geo_missing = _SCHEMA["geometry"] - set(user["geometry"])
    if geo_missing:
        raise ConfigError(f"geometry: missing keys {sorted(geo_missing)}")
    merged = {"geometry": user["geometry"]}
    for section, defaults in base.items():
        sec = dict(defaults)
        sec.update(user.get(section, {}))
        merged[section] = sec
    return merged


def config_from_dict(data: dict, base_dir: str = ".") -> RunConfig:
    """Validate a configuration dict and resolve it into a RunConfig."""
    raw = _merged_defaults(_validate_tree(data))
    mat = MaterialProps(rho=raw["materials"]["rho"], c=raw["materials"]["c"],
                        k=raw["materials"]["k"])
    p = raw["process"]
    proc = ProcessParams(q=p["q"], t_h=p["t_h"], t_c=p["t_c"], dt_cool=p["dt_cool"],
                         T_amb=p["T_amb"], n_obj=p["n_obj"],
                         ersatz_inactive=p["ersatz_inactive"], d_void=p["d_void"],
                         w_heaviside=p["w_heaviside"])
    o = raw["optimization"]
    opt = OptimizationConfig(
        v_max_fraction=o["v_max_fraction"], max_iters=o["max_iters"],
        conv_tol=o["conv_tol"], conv_window=o["conv_window"],
        update=UpdateParams(tau=o["tau"], d_coef=o["d_coef"], ds=o["ds"]),
        penalty=o["penalty"], multiplier0=o["multiplier0"],
        multiplier_cap=o["multiplier_cap"],
        feasibility_tol=o["feasibility_tol"], sensitivity_mode=o["sensitivity"],
        init_mode=o["init_mode"], init_phi=o["init_phi"],
        seed_spacing=o["seed_spacing"], seed_width=o["seed_width"], step_decay=o["step_decay"],
        min_step_factor=o["min_step_factor"],
    )
    b = raw["baseline"]
    baseline = BaselineConfig(spacing=b["spacing"], width=b["width"])
    out = raw["output"]
    output = OutputConfig(directory=out["directory"], vtk_every=out["vtk_every"],
                          composite_step=out["composite_step"])
    return RunConfig(raw=raw, material=mat, process=proc, optimization=opt,
                     baseline=baseline, output=output, base_dir=base_dir)


def parse_config(path: str) -> RunConfig:
    """Load and validate a JSON configuration file."""
    if not os.path.exists(path):
        raise ConfigError(f"config file not found: {path}")
    try:
        with open(path) as f:
            data = json.load(f)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path}: invalid JSON ({exc})") from exc
    return config_from_dict(data, base_dir=os.path.dirname(os.path.abspath(path)))


def preset_config(name: str) -> RunConfig:
    """Resolve one of the built-in benchmark presets."""
    if name not in PRESETS:
        raise ConfigError(f"preset: unknown preset {name!r}, expected one of {sorted(PRESETS)}")
    return config_from_dict(copy.deepcopy(PRESETS[name]))


def emit_config(cfg: RunConfig, path: str) -> None:
    """Write the effective configuration; re-parsing it reproduces the run."""
    with open(path, "w") as f:
        json.dump(cfg.effective(), f, indent=2, sort_keys=True)
        f.write("\n")
