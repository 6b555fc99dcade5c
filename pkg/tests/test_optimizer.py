import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from lpbf_supportopt import (ConfigError, OptimizationConfig, PartGeometry,
                             SupportOptimizer, UpdateParams, apply_part_mask,
                             build_mesh, constrained_direction,
                             default_alsi10mg, default_process, init_phi,
                             pillar_baseline, run_optimization, volume,
                             volume_gradient)
from lpbf_supportopt.levelset import element_mean_phi


def overhang_model():
    m = build_mesh(5.0, 5.0, 20, 20, 0.5)
    part = PartGeometry(kind="overhang-beam", params=dict(
        x0=0.5, wall_width=1.0, arm_y=2.5, arm_thickness=1.0, arm_length=3.0))
    return apply_part_mask(m, part)


def small_overhang_model():
    m = build_mesh(2.5, 2.5, 10, 10, 0.5)
    part = PartGeometry(kind="overhang-beam", params=dict(
        x0=0.25, wall_width=0.5, arm_y=1.25, arm_thickness=0.5, arm_length=1.5))
    return apply_part_mask(m, part)


def mk_config(**overrides):
    base = dict(v_max_fraction=0.21, max_iters=40, n_threads=2,
                seed_spacing=1.6, seed_width=0.5,
                update=UpdateParams(tau=1e-4, d_coef=0.8, ds=0.2))
    base.update(overrides)
    return OptimizationConfig(**base)


class TestConstrainedDirection:
    def test_inactive_constraint_gives_pure_sensitivity_direction(self):
        m = overhang_model()
        proc = default_process()
        config = mk_config()
        phi = init_phi(m, -1.0)  # volume far below the bound
        rng = np.random.default_rng(0)
        sens = rng.normal(size=m.n_nodes)
        direction, mult = constrained_direction(sens, phi, m, config, proc, 0.0)
        assert mult == 0.0
        # direction is the (band-)normalized sensitivity: parallel to sens
        ratio = direction[np.abs(sens) > 1e-12] / sens[np.abs(sens) > 1e-12]
        assert np.allclose(ratio, ratio[0])
        assert ratio[0] > 0

    def test_multiplier_increases_with_violation(self):
        m = overhang_model()
        proc = default_process()
        config = mk_config()
        sens = -np.ones(m.n_nodes)
        mults = []
        for val in (0.0, 0.5):
            phi = init_phi(m, val)  # more material -> larger violation
            _, mult = constrained_direction(sens, phi, m, config, proc, 0.0)
            mults.append(mult)
        assert mults[1] > mults[0] > 0.0

    def test_multiplier_capped(self):
        m = overhang_model()
        proc = default_process()
        config = mk_config()
        _, mult = constrained_direction(-np.ones(m.n_nodes), np.ones(m.n_nodes),
                                        m, config, proc, 0.0)
        assert mult == config.multiplier_cap

    def test_deterministic(self):
        m = overhang_model()
        proc = default_process()
        config = mk_config()
        phi = init_phi(m, 0.2)
        sens = np.sin(np.arange(m.n_nodes))
        d1, m1 = constrained_direction(sens, phi, m, config, proc, 0.0)
        d2, m2 = constrained_direction(sens, phi, m, config, proc, 0.0)
        assert np.array_equal(d1, d2) and m1 == m2


class TestVolumeGradient:
    def test_zero_on_plateaus_and_part(self):
        m = overhang_model()
        proc = default_process()
        g = volume_gradient(np.ones(m.n_nodes), m, proc)
        assert np.allclose(g, 0.0)  # H' vanishes at phi = 1
        phi = init_phi(m, 0.0)
        g = volume_gradient(phi, m, proc)
        interior_design = np.setdiff1d(
            np.unique(m.elements[~m.part_mask]), m.part_nodes())
        assert (g[interior_design] > 0).all()

    def test_matches_finite_difference_of_smooth_volume(self):
        from lpbf_supportopt.levelset import volume_smooth
        m = build_mesh(2.0, 2.0, 8, 8, 0.5)
        proc = default_process()
        rng = np.random.default_rng(1)
        phi = np.clip(rng.uniform(-0.8, 0.8, m.n_nodes), -1, 1)
        g = volume_gradient(phi, m, proc)
        h = 1e-6
        for node in rng.choice(np.setdiff1d(np.arange(m.n_nodes), m.part_nodes()),
                               5, replace=False):
            plus, minus = phi.copy(), phi.copy()
            plus[node] += h
            minus[node] -= h
            fd = (volume_smooth(plus, m, proc.w_heaviside)[0]
                  - volume_smooth(minus, m, proc.w_heaviside)[0]) / (2 * h)
            # volume_gradient carries the (1-d) factor of the extended props
            assert g[node] == pytest.approx((1 - proc.d_void) * fd, rel=1e-5)


class TestPillarBaseline:
    def test_no_overhang_gives_empty_support(self):
        m = build_mesh(2.0, 2.0, 8, 8, 0.5)
        part = PartGeometry(kind="overhang-beam", params=dict(
            x0=0.5, wall_width=0.5, arm_y=1.5, arm_thickness=0.5, arm_length=0.0))
        m = apply_part_mask(m, part)
        phi = pillar_baseline(m, spacing=1.0, width=0.25)
        design = np.setdiff1d(np.arange(m.n_nodes), m.part_nodes())
        assert np.all(phi[design] == -1.0)

    def test_pillar_count_under_arm(self):
        m = overhang_model()  # arm from x=1.5 to 4.5 -> span length 3.0
        spacing = 1.0
        with pytest.warns(UserWarning):
            phi = pillar_baseline(m, spacing=spacing, width=0.3)
        # count distinct pillar column groups along a row below the arm
        y_row = 1.75
        row_nodes = np.flatnonzero(np.abs(m.nodes[:, 1] - y_row) < 1e-9)
        order = np.argsort(m.nodes[row_nodes, 0])
        solid = phi[row_nodes][order] > 0
        groups = int(np.sum(solid[1:] & ~solid[:-1]) + solid[0])
        assert groups == int(np.floor(3.0 / spacing)) + 1

    def test_pillars_reach_plate_or_part(self):
        m = overhang_model()
        with pytest.warns(UserWarning):
            phi = pillar_baseline(m, spacing=1.0, width=0.3)
        part_nodes = set(m.part_nodes().tolist())
        solid = np.flatnonzero(phi > 0)
        n_per_row = m.nx + 1
        for node in solid:
            if node in part_nodes or node < n_per_row:
                continue
            below = node - n_per_row
            # a support node always stands on support, part, or the plate
            assert phi[below] == 1.0
        # support actually reaches the plate somewhere
        plate_support = [n for n in m.plate_nodes if phi[n] == 1.0
                         and n not in part_nodes]
        assert plate_support

    def test_invalid_spacing(self):
        m = overhang_model()
        with pytest.raises(ConfigError):
            pillar_baseline(m, spacing=0.2, width=0.3)


class TestRunOptimization:
    def test_empty_part_rejected(self):
        m = build_mesh(2.0, 2.0, 4, 4, 0.5)
        with pytest.raises(ConfigError):
            run_optimization(m, default_alsi10mg(), default_process(), mk_config())

    def test_part_filling_chamber_returns_immediately(self, tmp_path):
        raster = tmp_path / "full.txt"
        raster.write_text("2 2 1.0\n1 1\n1 1\n")
        from lpbf_supportopt import load_raster_part
        m = build_mesh(2.0, 2.0, 4, 4, 0.5)
        m = apply_part_mask(m, load_raster_part(str(raster)))
        assert m.part_mask.all()
        phi, records = run_optimization(m, default_alsi10mg(), default_process(),
                                        mk_config(init_mode="part-skin"))
        assert len(records) == 1
        assert records[0].converged
        assert np.all(phi == 1.0)

    def test_objective_improves_and_stays_feasible(self):
        m = overhang_model()
        mat, proc = default_alsi10mg(), default_process()
        config = mk_config(max_iters=60)
        phi, records = run_optimization(m, mat, proc, config)
        assert records[-1].F <= records[0].F
        assert records[-1].volume_fraction <= 0.21 + config.feasibility_tol
        assert np.all(phi[m.part_nodes()] == 1.0)
        assert np.abs(phi).max() <= 1.0
        assert [r.iteration for r in records] == list(range(1, len(records) + 1))

    def test_reproducible_records(self):
        m = small_overhang_model()
        mat, proc = default_alsi10mg(), default_process()
        config = mk_config(max_iters=8, seed_spacing=0.8, seed_width=0.3)
        phi1, rec1 = run_optimization(m, mat, proc, config)
        phi2, rec2 = run_optimization(m, mat, proc, config)
        assert np.array_equal(phi1, phi2)
        assert rec1 == rec2

    def test_callback_sees_every_iteration(self):
        m = small_overhang_model()
        seen = []
        config = mk_config(max_iters=4, seed_spacing=0.8, seed_width=0.3)
        run_optimization(m, default_alsi10mg(), default_process(), config,
                         callback=lambda rec, phi, sens: seen.append(rec.iteration))
        assert seen == [1, 2, 3, 4]


class TestSupportOptimizer:
    def test_sklearn_params_roundtrip(self):
        est = SupportOptimizer(v_max_fraction=0.3, tau=2e-4, max_iters=7)
        params = est.get_params()
        assert params["v_max_fraction"] == 0.3
        est2 = clone(est)
        assert est2.get_params() == params
        est2.set_params(max_iters=9)
        assert est2.max_iters == 9

    def test_score_requires_fit(self):
        with pytest.raises(NotFittedError):
            SupportOptimizer().score()

    def test_fit_sets_attributes(self):
        m = small_overhang_model()
        est = SupportOptimizer(max_iters=5, seed_spacing=0.8, seed_width=0.3,
                               ds=0.2, n_threads=2)
        out = est.fit(m)
        assert out is est
        assert est.phi_.shape == (m.n_nodes,)
        assert est.n_iter_ == len(est.history_) <= 5
        assert est.score() == -est.objective_
        assert 0.0 <= est.volume_fraction_ <= 1.0

    def test_fit_rejects_non_model(self):
        with pytest.raises(ConfigError):
            SupportOptimizer().fit(np.zeros((3, 3)))

    def test_invalid_hyperparameters_fail_at_fit(self):
        m = small_overhang_model()
        with pytest.raises(ConfigError):
            SupportOptimizer(v_max_fraction=1.5, max_iters=2).fit(m)
