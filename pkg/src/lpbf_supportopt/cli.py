"""Command-line interface: simulate, optimize, and compare-baseline runs."""
from __future__ import annotations

import argparse
import dataclasses
import os
import sys

import numpy as np

from .adjoint import objective, qualifying_nodes
from .config import RunConfig, emit_config, parse_config, preset_config
from .errors import ConfigError, NonFiniteError, SolverError
from .geometry import BuildModel
from .levelset import characteristic, element_mean_phi, init_phi, volume
from .materials import ProcessParams
from .optimizer import pillar_baseline, run_optimization
from .process import layerwise_cooldown_field, run_build
from .vtkio import write_vtk


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse default exits with code 2
        raise ConfigError(message)


def _build_parser() -> _Parser:
    parser = _Parser(
        prog="lpbf-supportopt",
        description="Layer-by-layer LPBF thermal simulation and level-set "
                    "support-structure optimization",
    )
    sub = parser.add_subparsers(dest="mode", required=True)
    for mode, doc in (
        ("simulate", "run the forward build simulation of the bare part"),
        ("optimize", "optimize the support structure"),
        ("compare", "optimize, then compare against a volume-matched pillar baseline"),
    ):
        p = sub.add_parser(mode, help=doc)
        src = p.add_mutually_exclusive_group(required=True)
        src.add_argument("--preset", help="built-in benchmark preset name")
        src.add_argument("--config", help="path to a JSON configuration file")
        p.add_argument("--out", help="output directory (overrides config)")
        p.add_argument("--threads", type=int, default=os.cpu_count() or 1,
                       help="worker threads for the per-stage maps")
        p.add_argument("--vtk-every", type=int, default=None,
                       help="VTK cadence: stage stride (simulate) or "
                            "iteration stride (optimize); 0 disables")
        p.add_argument("--debug-sens", action="store_true",
                       help="also export the sensitivity field per checkpoint")
    return parser


def _load(args) -> tuple[RunConfig, str, int]:
    cfg = preset_config(args.preset) if args.preset else parse_config(args.config)
    out_dir = args.out or cfg.output.directory
    vtk_every = cfg.output.vtk_every if args.vtk_every is None else args.vtk_every
    if vtk_every < 0:
        raise ConfigError("--vtk-every: must be >= 0")
    os.makedirs(out_dir, exist_ok=True)
    return cfg, out_dir, vtk_every


def _layer_cell_data(model: BuildModel, phi: np.ndarray) -> dict:
    return {
        "chi": characteristic(element_mean_phi(model, phi)),
        "layer": model.layer_of_element,
    }


def _bare_part_phi(model: BuildModel) -> np.ndarray:
    phi = np.full(model.n_nodes, -1.0)
    phi[model.part_nodes()] = 1.0
    return phi


def _material_layer_nodes(model: BuildModel, phi: np.ndarray, stage: int) -> np.ndarray:
    """Nodes of the stage layer's material (part or solid support) elements."""
    in_layer = model.layer_of_element == stage
    solid = model.part_mask | (element_mean_phi(model, phi) >= 0.0)
    sel = in_layer & solid
    if not sel.any():
        return np.empty(0, dtype=int)
    return np.unique(model.elements[sel])


def _overhang_stages(model: BuildModel) -> np.ndarray:
    """Layers holding part elements with a designable element right below."""
    nx, ny = model.nx, model.ny
    part_cell = (model.part_mask[0::2] & model.part_mask[1::2]).reshape(ny, nx)
    overhang = np.zeros((ny, nx), dtype=bool)
    overhang[1:] = part_cell[1:] & ~part_cell[:-1]
    rows = np.flatnonzero(overhang.any(axis=1))
    layers = np.unique(rows // (ny // model.m) + 1)
    return layers


def _laser_layer_spread(model: BuildModel, phi: np.ndarray, histories,
                        stage: int, at_step: int = 1) -> float:
    nodes = _material_layer_nodes(model, phi, stage)
    if len(nodes) == 0:
        return 0.0
    T = histories[stage - 1].T_cool[at_step - 1][nodes]
    return float(T.max() - T.min())


def run_simulate(cfg: RunConfig, out_dir: str, vtk_every: int, threads: int) -> None:
    model = cfg.build_model()
    phi = _bare_part_phi(model)
    histories = run_build(model, phi, cfg.material, cfg.process,
                          solver=cfg.optimization.solver, n_threads=threads)
    cell = _layer_cell_data(model, phi)
    if vtk_every:
        for h in histories:
            if (h.stage - 1) % vtk_every:
                continue
            write_vtk(os.path.join(out_dir, f"stage{h.stage}_step0.vtk"), model,
                      point_data={"T": h.T_heat_end, "phi": phi}, cell_data=cell,
                      title=f"stage {h.stage} heating end")
            for j in range(1, h.n_steps + 1):
                write_vtk(os.path.join(out_dir, f"stage{h.stage}_step{j}.vtk"), model,
                          point_data={"T": h.T_cool[j - 1], "phi": phi}, cell_data=cell,
                          title=f"stage {h.stage} cooling step {j}")
    j = cfg.output.composite_step
    composite = layerwise_cooldown_field(model, histories, cfg.process, at_step=j)
    write_vtk(os.path.join(out_dir, f"composite_step{j}.vtk"), model,
              point_data={"T": composite, "phi": phi}, cell_data=cell,
              title=f"per-layer cooldown composite at step {j}")
    emit_config(cfg, os.path.join(out_dir, "effective_config.json"))
    obj = objective(histories, model, cfg.process)
    print(f"simulate: {model.m} stages, objective F = {obj.F:.6e} K^2 s")
    print(f"simulate: outputs written to {out_dir}")


def _write_csv(path: str, records) -> None:
    with open(path, "w") as f:
        f.write("iter,F,volume_fraction,multiplier\n")
        for r in records:
            f.write(f"{r.iteration},{r.F:.17g},{r.volume_fraction:.17g},"
                    f"{r.multiplier:.17g}\n")


def run_optimize(cfg: RunConfig, out_dir: str, vtk_every: int, threads: int,
                 debug_sens: bool = False) -> tuple[BuildModel, np.ndarray, list]:
    model = cfg.build_model()
    opt = dataclasses.replace(cfg.optimization, n_threads=threads)

    def checkpoint(rec, phi, sens):
        if vtk_every and (rec.iteration % vtk_every == 0 or sens is None):
            point = {"phi": phi}
            if debug_sens and sens is not None:
                point["dFdPhi"] = sens
            write_vtk(os.path.join(out_dir, f"design_iter{rec.iteration}.vtk"),
                      model, point_data=point, cell_data=_layer_cell_data(model, phi),
                      title=f"design at iteration {rec.iteration}")

    phi, records = run_optimization(model, cfg.material, cfg.process, opt,
                                    callback=checkpoint)
    _write_csv(os.path.join(out_dir, "convergence.csv"), records)
    write_vtk(os.path.join(out_dir, "final_design.vtk"), model,
              point_data={"phi": phi}, cell_data=_layer_cell_data(model, phi),
              title="final design")
    emit_config(cfg, os.path.join(out_dir, "effective_config.json"))
    last = records[-1]
    print(f"optimize: {last.iteration} iterations, converged={last.converged}, "
          f"F = {last.F:.6e}, volume fraction = {last.volume_fraction:.4f}")
    print(f"optimize: outputs written to {out_dir}")
    return model, phi, records


def _evaluate_design(model, phi, cfg, threads):
    proc = cfg.process
    histories = run_build(model, phi, cfg.material, proc, n_steps=proc.n_obj,
                          solver=cfg.optimization.solver, n_threads=threads)
    F = objective(histories, model, proc).F
    spreads = {int(i): _laser_layer_spread(model, phi, histories, int(i))
               for i in _overhang_stages(model)}
    return F, spreads, histories


def run_compare(cfg: RunConfig, out_dir: str, vtk_every: int, threads: int,
                debug_sens: bool = False) -> None:
    model = cfg.build_model()
    baseline_phi = pillar_baseline(model, cfg.baseline.spacing, cfg.baseline.width)
    _, v_base = volume(baseline_phi, model)
    if v_base <= 0:
        raise ConfigError("baseline: part has no overhang, nothing to compare")

    # match the optimization volume budget to the conventional support
    opt = dataclasses.replace(cfg.optimization, v_max_fraction=v_base)
    matched = dataclasses.replace(cfg, optimization=opt)
    opt_dir = os.path.join(out_dir, "optimized")
    os.makedirs(opt_dir, exist_ok=True)
    model, phi_opt, records = run_optimize(matched, opt_dir, vtk_every, threads,
                                           debug_sens=debug_sens)

    F_opt, spread_opt, _ = _evaluate_design(model, phi_opt, cfg, threads)
    F_base, spread_base, _ = _evaluate_design(model, baseline_phi, cfg, threads)
    _, v_opt = volume(phi_opt, model)

    write_vtk(os.path.join(out_dir, "baseline_design.vtk"), model,
              point_data={"phi": baseline_phi},
              cell_data=_layer_cell_data(model, baseline_phi),
              title="pillar baseline design")
    emit_config(cfg, os.path.join(out_dir, "effective_config.json"))

    report_path = os.path.join(out_dir, "comparison_report.txt")
    with open(report_path, "w") as f:
        f.write("support structure comparison (common analysis model)\n")
        f.write(f"baseline: pillar spacing {cfg.baseline.spacing} mm, "
                f"width {cfg.baseline.width} mm\n")
        f.write(f"volume fraction: optimized {v_opt:.4f}, baseline {v_base:.4f}\n")
        f.write(f"objective F: optimized {F_opt:.6e}, baseline {F_base:.6e}\n")
        f.write(f"objective improvement: {(1 - F_opt / F_base) * 100:.2f} %\n")
        f.write("max laser-layer temperature spread at 1 s, overhang stages:\n")
        for stage in sorted(spread_opt):
            f.write(f"  stage {stage}: optimized {spread_opt[stage]:.2f} degC, "
                    f"baseline {spread_base[stage]:.2f} degC\n")
        verdict = "optimized design wins" if F_opt < F_base else "baseline wins"
        f.write(f"result: {verdict}\n")
    print(f"compare: F optimized = {F_opt:.6e}, F baseline = {F_base:.6e}")
    print(f"compare: report written to {report_path}")


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        cfg, out_dir, vtk_every = _load(args)
        if args.mode == "simulate":
            run_simulate(cfg, out_dir, vtk_every, args.threads)
        elif args.mode == "optimize":
            run_optimize(cfg, out_dir, vtk_every, args.threads,
                         debug_sens=args.debug_sens)
        else:
            run_compare(cfg, out_dir, vtk_every, args.threads,
                        debug_sens=args.debug_sens)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 1
    except SolverError as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return 2
    except NonFiniteError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
