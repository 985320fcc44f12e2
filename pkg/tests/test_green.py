import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mcdirichlet import BallGreen, Lattice, NoContraction, SingularPoint, constant_density, contraction_factor, contraction_solve
from mcdirichlet.green import R_apply, R_grad, geometric_rate
from mcdirichlet.measures import make_density

WIDE = ((-2.0,) * 3, (2.0,) * 3)
B = 0.2


def inside(r=0.9):
    return st.tuples(st.floats(-r, r), st.floats(-r, r), st.floats(-r, r)).filter(
        lambda p: np.linalg.norm(p) < r)


def drift(b):
    return [constant_density(b, *WIDE), constant_density(0.0, *WIDE), constant_density(0.0, *WIDE)]


def perturbative(p, b):
    # u0 + b u1 + b^2 u2 for 1/2 Lap u + b d1 u = -1 on the unit ball, remainder O(b^3)
    x, y, z = p
    r2 = x * x + y * y + z * z
    return ((1 - r2) / 3 - b * 2 / 15 * x * (1 - r2)
            - b * b * (r2 - 1) * (15 * x * x + 3 * y * y + 3 * z * z - 7) / 315)


@pytest.fixture(scope="module")
def drift_solution():
    return contraction_solve(BallGreen(), drift(B), constant_density(1.0, *WIDE))


@given(inside(), inside())
def test_green_is_symmetric(x, y):
    if np.linalg.norm(np.subtract(x, y)) < 1e-3:
        return
    G = BallGreen((0.1, 0.0, -0.2), 1.2)
    x, y = np.asarray(x), np.asarray(y)
    assert G.eval(x, y) == pytest.approx(G.eval(y, x), rel=1e-10)
    assert G.eval(x, y) > 0


@given(inside(), st.floats(0, 2 * math.pi), st.floats(-1, 1))
def test_green_vanishes_on_the_sphere(x, phi, c):
    G = BallGreen()
    s = math.sqrt(1 - c * c)
    y = np.array([s * math.cos(phi), s * math.sin(phi), c])
    assert abs(G.eval(np.asarray(x), y)) < 1e-12


@given(inside(0.8), inside(0.8))
def test_gradient_matches_finite_differences(x, y):
    x, y = np.asarray(x), np.asarray(y)
    if np.linalg.norm(x - y) < 0.1:
        return
    G = BallGreen()
    h = 1e-5
    fd = np.array([(G.eval(x + h * e, y) - G.eval(x - h * e, y)) / (2 * h) for e in np.eye(3)])
    g = G.grad(x, y)
    assert np.linalg.norm(g - fd) <= 1e-6 * max(np.linalg.norm(g), 1.0)


def test_coincident_points_raise():
    with pytest.raises(SingularPoint):
        BallGreen().eval(np.zeros(3), np.zeros(3))


def test_poisson_normalisation():
    G = BallGreen()
    X = np.array([[0.0, 0, 0], [0.3, 0.2, -0.1], [0.0, 0.0, 0.9]])
    want = (1 - np.sum(X * X, axis=1)) / 3
    np.testing.assert_allclose(R_apply(G, constant_density(1.0, *WIDE), X), want, rtol=1e-10)
    np.testing.assert_allclose(R_grad(G, constant_density(1.0, *WIDE), X), -2 * X / 3, atol=1e-10)


def test_quadratic_source():
    # 1/2 Lap u = -|x|^2, u = 0 on the sphere: u = (1 - |x|^4) / 10
    G = BallGreen()
    rho = make_density("polynomial", {"terms": [[1.0, [2, 0, 0]], [1.0, [0, 2, 0]], [1.0, [0, 0, 2]]]}, *WIDE)
    X = np.array([[0.0, 0, 0], [0.5, 0.0, 0.0], [0.2, -0.4, 0.3]])
    want = (1 - np.sum(X * X, axis=1) ** 2) / 10
    np.testing.assert_allclose(R_apply(G, rho, X), want, atol=2e-4)


def test_drift_solution_matches_perturbation_series(drift_solution):
    for p in ([0, 0, 0], [0.3, 0, 0], [-0.5, 0.2, 0.1], [0.1, 0.6, -0.3]):
        assert drift_solution(np.array(p, float)) == pytest.approx(perturbative(p, B), abs=3e-4)


def test_neumann_terms_decay_geometrically(drift_solution):
    n = drift_solution.term_grad_norms
    ratios = [b / a for a, b in zip(n, n[1:])]
    assert len(n) >= 4
    assert all(r <= drift_solution.kappa + 0.05 for r in ratios[1:])
    assert n[-1] <= 1e-8 * n[0] or len(n) == 60


def test_solution_lattice_round_trip(drift_solution, tmp_path):
    lat = drift_solution.to_lattice(0.25)
    lat.save(tmp_path / "u.lat")
    back = Lattice.load(tmp_path / "u.lat")
    np.testing.assert_array_equal(back.values, lat.values)
    assert back.eval(np.zeros((1, 3)))[0, 0] == pytest.approx(drift_solution(np.zeros(3)), abs=1e-12)


def test_zero_rhs_and_zero_drift():
    G = BallGreen()
    sol = contraction_solve(G, drift(B), constant_density(0.0, *WIDE))
    assert sol(np.array([0.2, 0.0, 0.0])) == 0.0 and sol.term_grad_norms == [0.0]
    sol = contraction_solve(G, None, constant_density(1.0, *WIDE))
    assert sol(np.zeros(3)) == pytest.approx(1 / 3)


def test_contraction_factor_scales_with_radius():
    G = BallGreen()
    rep = contraction_factor(G, drift(0.3), constant_density(1.0, *WIDE), [1.0, 0.5, 0.25], n_iterates=3)
    assert all(k >= 0 for k in rep.kappa)
    assert rep.kappa[0] > rep.kappa[1] > rep.kappa[2]
    assert rep.r0_estimate == 1.0
    assert len(rep.iterates) == 3 and rep.rate is not None


def test_strong_drift_is_refused():
    with pytest.raises(NoContraction):
        contraction_solve(BallGreen(), drift(40.0), constant_density(1.0, *WIDE))


def test_geometric_rate():
    assert geometric_rate([1.0, 0.5, 0.25, 0.125]) == pytest.approx(0.5)
    assert geometric_rate([1.0]) is None
