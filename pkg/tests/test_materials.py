import pytest

from lpbf_supportopt import (ConfigError, MaterialProps, ProcessParams,
                             default_alsi10mg, default_process)


def test_default_material_values():
    mat = default_alsi10mg()
    assert mat.rho == 2.67e-6
    assert mat.c == 910.0
    assert mat.k == 0.119
    assert mat.rho_c == pytest.approx(2.67e-6 * 910.0)


def test_default_process_values():
    proc = default_process()
    assert proc.q == 2e4
    assert proc.t_h == 0.5e-3
    assert proc.t_c == 10.0
    assert proc.dt_cool == 1.0
    assert proc.T_amb == 20.0
    assert proc.n_obj == 3
    assert proc.n_cool == 10
    assert proc.ersatz_inactive == 1e-3
    assert proc.d_void == 1e-3
    assert proc.w_heaviside == 0.9


@pytest.mark.parametrize("kwargs,field", [
    (dict(rho=0.0, c=910.0, k=0.119), "rho"),
    (dict(rho=2.67e-6, c=-1.0, k=0.119), "c"),
    (dict(rho=2.67e-6, c=910.0, k=0.0), "k"),
])
def test_material_validation_names_field(kwargs, field):
    with pytest.raises(ConfigError, match=field):
        MaterialProps(**kwargs)


@pytest.mark.parametrize("kwargs,field", [
    (dict(q=-1.0), "q"),
    (dict(t_h=0.0), "t_h"),
    (dict(dt_cool=-0.5), "dt_cool"),
    (dict(t_c=10.0, dt_cool=3.0), "t_c"),
    (dict(n_obj=0), "n_obj"),
    (dict(n_obj=11), "n_obj"),
    (dict(ersatz_inactive=0.0), "ersatz_inactive"),
    (dict(ersatz_inactive=1.0), "ersatz_inactive"),
    (dict(d_void=0.0), "d_void"),
    (dict(w_heaviside=1.5), "w_heaviside"),
])
def test_process_validation_names_field(kwargs, field):
    with pytest.raises(ConfigError, match=field):
        ProcessParams(**kwargs)


def test_cooling_step_count_matches_paper_setup():
    proc = default_process()
    assert proc.t_c / proc.dt_cool == 10
