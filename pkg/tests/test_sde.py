import csv
import math
from dataclasses import replace

import numpy as np
import pytest

from mcdirichlet import (
    Ball,
    Box,
    Coefficients,
    ConfigError,
    HAVE_COMPILED,
    SimConfig,
    caf_resolvent_check,
    constant_density,
    graph_singular,
    simulate_paths,
    simulate_to_exit,
)
from mcdirichlet import _backend
from mcdirichlet.measures import make_density
from mcdirichlet.sde import (
    build_field_lattice,
    caf_resolvent_rhs,
    resolvent_kernel,
    resume_paths,
    step,
    new_state,
    trace_paths,
)

WIDE = ((-3.0,) * 3, (3.0,) * 3)


def _messy():
    g = graph_singular(0.7, 0.5, 1.0, (-1,) * 3, (1,) * 3)
    return Coefficients(
        mu=[g, constant_density(0.3, *WIDE), make_density("gaussian-bump", {"center": [0.2, 0, 0], "width": 0.3},
                                                         (-1,) * 3, (1,) * 3)],
        nu=-0.5 * g, rho=constant_density(1.0, *WIDE))


# one shared instance so the field lattice is built once (it is cached per object)
MESSY = _messy()


def messy_coeffs():
    return MESSY


@pytest.fixture
def fast_cfg():
    return SimConfig(seed=7, h=4e-3, level=2)


def same_state(a, b):
    for k in a.state:
        np.testing.assert_array_equal(a.state[k], b.state[k])


def test_path_is_a_pure_function_of_seed_and_index(unit_ball, fast_cfg):
    co = messy_coeffs()
    x0 = np.array([0.1, 0.0, 0.2])
    r1 = simulate_to_exit(x0, unit_ball, co, fast_cfg, 17)
    r2 = simulate_to_exit(x0, unit_ball, co, fast_cfg, 17)
    assert r1.exit_time == r2.exit_time and r1.L_at_exit == r2.L_at_exit
    batch = simulate_paths(x0, unit_ball, co, fast_cfg, 40)
    assert batch.exit_time[17] == r1.exit_time
    np.testing.assert_array_equal(batch.exit_point[17], r1.exit_point)
    other = simulate_to_exit(x0, unit_ball, co, replace(fast_cfg, seed=8), 17)
    assert other.exit_time != r1.exit_time


def test_results_do_not_depend_on_workers_or_chunks(unit_ball, fast_cfg):
    co = messy_coeffs()
    x0 = np.zeros(3)
    a = simulate_paths(x0, unit_ball, co, replace(fast_cfg, workers=1), 3000)
    b = simulate_paths(x0, unit_ball, co, replace(fast_cfg, workers=4, chunk=256), 3000)
    same_state(a, b)
    # a disjoint index range equals the tail of the full run
    c = simulate_paths(x0, unit_ball, co, fast_cfg, 1000, start=2000)
    np.testing.assert_array_equal(c.Vw, a.Vw[2000:])


@pytest.mark.skipif(not HAVE_COMPILED, reason="compiled kernel not built")
def test_compiled_and_numpy_kernels_agree(unit_ball, fast_cfg):
    co = messy_coeffs()
    a = simulate_paths(np.array([0.1, 0, 0]), unit_ball, co, replace(fast_cfg, backend="cython"), 1500)
    b = simulate_paths(np.array([0.1, 0, 0]), unit_ball, co, replace(fast_cfg, backend="numpy"), 1500)
    np.testing.assert_array_equal(a.state["status"], b.state["status"])
    np.testing.assert_array_equal(a.state["counter"], b.state["counter"])
    for k in ("x", "t", "L", "Vw", "V", "absL", "absV", "disp"):
        np.testing.assert_allclose(a.state[k], b.state[k], rtol=0, atol=1e-12)


def test_backend_selection():
    assert _backend.get("numpy").__name__.endswith("_pykernel")
    with pytest.raises(ValueError):
        _backend.get("fortran")


def test_caf_additivity_on_restart(unit_ball, fast_cfg):
    co = messy_coeffs()
    x0 = np.array([0.0, 0.3, 0.0])
    whole = simulate_paths(x0, unit_ball, co, fast_cfg, 500)
    part = simulate_paths(x0, unit_ball, co, replace(fast_cfg, step_limit=40), 500)
    assert np.any(part.state["status"] == 0)
    rest = resume_paths(part, unit_ball, co, fast_cfg)
    same_state(whole, rest)


def test_single_step_matches_batch(unit_ball, fast_cfg):
    co = messy_coeffs()
    st = new_state(np.array([[0.0, 0.0, 0.0]]))
    for _ in range(5):
        st = step(st, 3, unit_ball, co, fast_cfg)
    part = simulate_paths(np.zeros(3), unit_ball, co, replace(fast_cfg, step_limit=5), 1, start=3)
    for k in st:
        np.testing.assert_array_equal(st[k], part.state[k])


def test_jordan_consistency(unit_ball, fast_cfg):
    signed = Coefficients(nu=make_density("polynomial", {"terms": [[2.0, [1, 0, 0]]]}, *WIDE))
    b = simulate_paths(np.zeros(3), unit_ball, signed, fast_cfg, 2000)
    assert np.all(b.abs_L >= np.abs(b.L) - 1e-15)
    assert np.any(b.abs_L > np.abs(b.L) + 1e-6)
    one = Coefficients(nu=-1.0 * graph_singular(0.7, 0.5, 1.0, (-1,) * 3, (1,) * 3))
    b = simulate_paths(np.zeros(3), unit_ball, one, fast_cfg, 2000)
    np.testing.assert_array_equal(b.abs_L, np.abs(b.L))


def test_mean_exit_time_on_ball(unit_ball):
    cfg = SimConfig(seed=5, h=1e-3)
    x0 = np.array([0.3, 0.0, 0.4])
    b = simulate_paths(x0, unit_ball, Coefficients(), cfg, 8000)
    tau = b.exit_time
    se = tau.std(ddof=1) / math.sqrt(tau.size)
    assert abs(tau.mean() - (1 - 0.25) / 3) <= 3 * se
    assert b.n_capped == 0
    np.testing.assert_allclose(np.linalg.norm(b.exit_point, axis=1), 1.0, atol=1e-9)


def test_exit_points_lie_on_box_faces():
    D = Box((0, 0, 0), (1, 2, 1))
    b = simulate_paths(np.array([0.5, 1.0, 0.5]), D, Coefficients(), SimConfig(seed=1, h=4e-3), 500)
    assert np.all(np.abs(D.signed_distance(b.exit_point)) < 1e-9)


def test_cap_floor_and_config_validation(unit_ball):
    with pytest.raises(ConfigError):
        SimConfig(seed=1, h=0.5)
    with pytest.raises(ConfigError):
        SimConfig(seed=1, rule="trapezoid")
    with pytest.raises(ConfigError):
        simulate_paths(np.zeros(3), unit_ball, Coefficients(), SimConfig(seed=1, h=4e-3, T_max=1.0), 10)
    assert SimConfig(seed=1).resolved_T_max(unit_ball) == pytest.approx(400 / 3)
    with pytest.raises(ValueError):
        simulate_paths(np.array([2.0, 0, 0]), unit_ball, Coefficients(), SimConfig(seed=1), 10)


def test_field_lattice_uses_fill_for_flat_measures(unit_ball):
    co = Coefficients(mu=[constant_density(0.5, *WIDE), constant_density(0.0, *WIDE),
                          constant_density(-0.25, *WIDE)], rho=constant_density(2.0, *WIDE))
    lat = build_field_lattice(co, unit_ball, 4)
    assert lat.values.size == lat.ncomp
    np.testing.assert_allclose(lat.fill, [0.5, 0.0, -0.25, 0.0, 0.0, 2.0, 2.0])


def test_trace_dump(tmp_path, unit_ball, fast_cfg):
    path = trace_paths(np.zeros(3), unit_ball, messy_coeffs(), fast_cfg, [0, 1], tmp_path / "trace.csv")
    rows = list(csv.reader(open(path)))
    assert rows[0] == ["path", "t", "x0", "x1", "x2", "L", "V"]
    final = {}
    for r in rows[1:]:
        final[int(r[0])] = r
    rec = simulate_to_exit(np.zeros(3), unit_ball, messy_coeffs(), fast_cfg, 1)
    assert float(final[1][1]) == pytest.approx(rec.exit_time)
    assert float(final[1][5]) == pytest.approx(rec.L_at_exit)


# ---- resolvent identity -------------------------------------------------------


def ball_resolvent(R, c):
    # int_{|y| < R} e^{-a |y|} / (2 pi |y|) dy = 2 int_0^R rho e^{-a rho} drho
    a = math.sqrt(2 * c)
    return 2.0 / a**2 * (1.0 - (1.0 + a * R) * math.exp(-a * R))


def test_resolvent_kernel_is_the_time_integral():
    from scipy.integrate import quad

    for rho in (0.05, 0.5, 2.0):
        f = lambda t: math.exp(-t) * (2 * math.pi * t) ** -1.5 * math.exp(-rho * rho / (2 * t))  # noqa: E731
        assert resolvent_kernel(1.0)(rho) == pytest.approx(quad(f, 0, np.inf, epsrel=1e-12, limit=200)[0], rel=1e-8)


@pytest.mark.parametrize("R", [0.5, 1.0])
def test_resolvent_rhs_for_ball_indicators(R):
    ind = constant_density(1.0, (-R,) * 3, (R,) * 3, domain=Ball((0, 0, 0), R))
    # the sphere cuts through a composite shell piece; 1e-3 is the identity's quadrature allowance
    assert caf_resolvent_rhs(np.zeros(3), ind, 1.0) == pytest.approx(ball_resolvent(R, 1.0), abs=1e-3)


def test_resolvent_rhs_for_graph_layer():
    # reference value from an independent scipy tplquad in cylindrical coordinates
    g = graph_singular(0.7, 1.0, 1.0, (-1,) * 3, (1,) * 3)
    assert caf_resolvent_rhs(np.zeros(3), g, 1.0) == pytest.approx(0.8635158868, rel=1e-3)


def test_resolvent_check_zero_measure():
    z = constant_density(0.0, (-1,) * 3, (1,) * 3)
    rep = caf_resolvent_check(np.zeros(3), Ball((0, 0, 0), 6.0), z, 1.0, SimConfig(seed=1, h=4e-3), 100)
    assert rep.lhs == rep.rhs == 0.0 and rep.passed


def test_resolvent_check_small_ball():
    ind = constant_density(1.0, (-0.5,) * 3, (0.5,) * 3, domain=Ball((0, 0, 0), 0.5))
    rep = caf_resolvent_check(np.zeros(3), Ball((0, 0, 0), 6.0), ind, 1.0, SimConfig(seed=2, h=4e-3), 3000)
    assert rep.passed, rep
    with pytest.raises(ValueError):
        caf_resolvent_check(np.zeros(3), Ball((0, 0, 0), 6.0), ind, 0.0, SimConfig(seed=2), 10)
