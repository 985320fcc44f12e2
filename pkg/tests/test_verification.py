import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mcdirichlet import (
    Box,
    Coefficients,
    UnsupportedKind,
    boundary_data,
    constant_density,
    convergence_study,
    default_basket,
    fd_oracle_solve,
    weak_residual,
)
from mcdirichlet.verification import (
    CSV_HEADER,
    ConvergenceTable,
    TestFunction,
    fd_self_convergence,
    relative_gap,
    test_function as make_test_function,
)

WIDE = ((-2.0,) * 3, (2.0,) * 3)


def test_fd_reproduces_linear_boundary_data(unit_cube):
    phi = lambda P: 1.0 + P[:, 0] - 2 * P[:, 1] + 0.5 * P[:, 2]  # noqa: E731
    sol = fd_oracle_solve(unit_cube, phi=phi, grid_n=9)
    X = np.random.default_rng(0).uniform(0, 1, (30, 3))
    np.testing.assert_allclose(sol(X), phi(X), atol=1e-8)
    assert sol.lattice.shape == (9, 9, 9) and sol.residual <= 1e-9


def test_fd_is_exact_on_quadratics(unit_cube):
    # 1/2 Lap u = -1 with u = x (1 - x): central differences are exact on quadratics
    u = lambda P: P[:, 0] * (1 - P[:, 0])  # noqa: E731
    sol = fd_oracle_solve(unit_cube, f=lambda P: np.ones(len(P)), phi=u, grid_n=11)
    nodes = np.array([[0.3, 0.5, 0.7], [0.1, 0.2, 0.9]])
    np.testing.assert_allclose(sol(nodes), u(nodes), atol=1e-9)


def test_fd_with_drift_and_killing(unit_cube):
    # u = e^{x}: 1/2 u'' + b u' + q u = (1/2 + b + q) e^x
    b, q = 0.3, -0.7
    u = lambda P: np.exp(P[:, 0])  # noqa: E731
    sol = fd_oracle_solve(unit_cube, b=lambda P: np.tile([b, 0.0, 0.0], (len(P), 1)),
                          q=lambda P: np.full(len(P), q), f=lambda P: -(0.5 + b + q) * u(P), phi=u, grid_n=33)
    x = np.array([[0.5, 0.5, 0.5]])
    assert sol(x)[0] == pytest.approx(math.exp(0.5), abs=1e-4)


def test_fd_second_order_self_convergence():
    D = Box((0, 0, 0), (1, 1, 1))
    res = fd_self_convergence(D, grids=(9, 17, 33), f=lambda P: np.sin(3 * P[:, 0]) * np.cos(2 * P[:, 1]) + 1.0)
    assert 3.5 <= res["ratios"][0] <= 4.5


def test_fd_needs_a_box(unit_ball):
    with pytest.raises(UnsupportedKind):
        fd_oracle_solve(unit_ball)
    with pytest.raises(ValueError):
        fd_oracle_solve(Box((0, 0, 0), (1, 1, 1)), grid_n=257)


class Poisson:
    """(1 - |x|^2) / 3 with its exact gradient."""

    def __call__(self, X):
        X = np.atleast_2d(X)
        return (1 - np.sum(X * X, axis=1)) / 3

    def grad(self, X):
        return -2 * np.atleast_2d(X) / 3


def test_weak_residual_vanishes_on_exact_solutions(unit_ball):
    tests = default_basket(unit_ball)
    # what remains is Gauss-rule error on the bumps' boxes
    res = weak_residual(Poisson(), None, constant_density(1.0, *WIDE), tests)
    assert max(abs(r) for r in res) < 1e-5
    # harmonic x1 with no data: zero as well, through the finite-difference gradient path
    res = weak_residual(lambda X: np.atleast_2d(X)[:, 0], None, None, tests)
    assert max(abs(r) for r in res) < 1e-5


def test_weak_residual_sees_wrong_solutions(unit_ball):
    tests = default_basket(unit_ball)
    wrong = weak_residual(lambda X: 2 * Poisson()(X), None, constant_density(1.0, *WIDE), tests)
    assert max(abs(r) for r in wrong) > 1e-2


def test_weak_residual_with_killing(unit_ball):
    # u = E[e^{-tau}] = sinh(sqrt(2) r) / (r sinh sqrt(2)) solves 1/2 Lap u - u = 0
    a = math.sqrt(2)

    def u(X):
        r = np.linalg.norm(np.atleast_2d(X), axis=1)
        r = np.maximum(r, 1e-12)
        return np.sinh(a * r) / (r * math.sinh(a))

    co = Coefficients(nu=constant_density(-1.0, *WIDE))
    res = weak_residual(u, co, None, default_basket(unit_ball))
    assert max(abs(r) for r in res) < 1e-5


def test_default_basket_geometry(unit_ball, unit_cube):
    # margin is 5% of the inner half-width: 0.05 for the unit ball, 0.025 for the unit cube
    for D, gap in ((unit_ball, 0.05), (unit_cube, 0.025)):
        tests = default_basket(D)
        assert len(tests) == 5
        for t in tests:
            assert D.distance_to_boundary(np.asarray(t.center)[None])[0] - t.scale >= gap - 1e-12


@given(st.tuples(st.floats(-2, 2), st.floats(-2, 2), st.floats(-2, 2)))
def test_test_function_support_and_gradient(x):
    t = make_test_function("bump", (0.1, 0.0, -0.2), 0.5)
    X = np.asarray(x)[None]
    if np.linalg.norm(X - np.asarray(t.center)) >= t.scale:
        assert t(X)[0] == 0.0 and np.all(t.grad(X) == 0.0)
        return
    h = 1e-5
    fd = np.array([(t(X + h * e)[0] - t(X - h * e)[0]) / (2 * h) for e in np.eye(3)])
    assert np.allclose(t.grad(X)[0], fd, rtol=1e-6, atol=1e-6)


def test_test_function_peak():
    t = TestFunction((0.0, 0.0, 0.0), 0.3)
    assert t(np.zeros(3))[0] == 1.0
    assert t.to_dict() == {"name": "bump", "center": [0.0, 0.0, 0.0], "scale": 0.3}


def test_convergence_study_table(unit_ball):
    tab = convergence_study(np.array([0.2, 0, 0]), unit_ball, Coefficients(), boundary_data("linear"),
                            [(8e-3, None, 400), (4e-3, None, 400), (2e-3, None, 400)], seed=3)
    text = tab.to_csv()
    lines = text.strip().splitlines()
    assert lines[0] == ",".join(CSV_HEADER)
    assert len(lines) == 4
    assert tab.rows[0]["diff"] is None and tab.rows[1]["diff"] is not None
    assert [r["level"] for r in tab.rows] == [4, 4, 5]
    assert len(tab.diff_stderr) == 2
    # harmonic data: every level agrees within noise
    for r in tab.rows:
        assert abs(r["value"] - 0.2) < 4 * r["stderr"] + 2e-3
    with pytest.raises(ValueError):
        convergence_study(np.zeros(3), unit_ball, Coefficients(), boundary_data("linear"),
                          [(1e-3, None, 100), (2e-3, None, 100)], seed=1)


def test_shrink_ratios_and_gap():
    tab = ConvergenceTable(rows=[{"diff": None}, {"diff": 0.4}, {"diff": -0.1}, {"diff": 0.05}])
    assert tab.shrink_ratios() == [4.0, 2.0]
    assert relative_gap(1.005, 1.0, 0.0)
    assert not relative_gap(1.02, 1.0, 0.001)
