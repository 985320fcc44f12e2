import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad

from mcdirichlet import MollifiedField, constant_density, graph_singular, hyperplane, mollify, norm_domination_check
from mcdirichlet._quadrature import QuadratureSpec, gl_nodes
from mcdirichlet.measures import LinearCombination, make_density
from mcdirichlet.mollifier import BUMP, invariant_axes, level_for_step, singular_axes

FAST = QuadratureSpec(grid_divisions=4, refine_levels=2)


@pytest.mark.parametrize("h,c,n", [(0.01, 1.0, 4), (1e-4, 1.0, 7), (1.0, 0.5, 1), (1e-3, 1.0, 5), (4e-3, 1.0, 4)])
def test_level_for_step(h, c, n):
    assert level_for_step(h, c) == n


def test_bump_is_normalised():
    total = quad(lambda r: 4 * math.pi * r * r * BUMP.radial(r), 0, 1, epsabs=0, epsrel=1e-12)[0]
    assert total == pytest.approx(1.0, rel=1e-10)
    assert BUMP.psi(np.zeros(3), n=2) == pytest.approx(64 * math.exp(-1) / BUMP.Z)


def test_bump_marginal_closed_form():
    for t in (0.0, 0.3, 0.8):
        want = quad(lambda s: 2 * math.pi * s * BUMP.radial(math.hypot(s, t)), 0, math.sqrt(1 - t * t),
                    epsabs=0, epsrel=1e-12)[0]
        assert BUMP.marginal(t) == pytest.approx(want, rel=1e-9)
    assert quad(lambda t: float(BUMP.marginal(t)), -1, 1, epsrel=1e-12)[0] == pytest.approx(1.0, rel=1e-9)
    assert BUMP.marginal(1.0) == 0.0


def fiber_mass(m, level, xp=(0.0, 0.0), a=-1.0, b=1.0, n=64):
    """Integral of the mollified field along the x3 fiber above ``xp``."""
    t, w = gl_nodes(np.linspace(a, b, n)[:-1], np.linspace(a, b, n)[1:], 8)
    X = np.column_stack([np.full(t.size, xp[0]), np.full(t.size, xp[1]), t.ravel()])
    return float(np.dot(w.ravel(), mollify(m, level, X)))


def test_plane_mass_along_fibres():
    hp = hyperplane(0.1, (-2, -2), (2, 2), params={"value": 1.5})
    assert fiber_mass(hp, 4) == pytest.approx(1.5, rel=1e-4)


def test_graph_mass_along_fibres():
    g = graph_singular(0.5, 0.25, 2.0, (-2,) * 3, (2,) * 3)
    # 2 * int_0^0.25 2 t^(-1/2) dt
    assert fiber_mass(g, 4) == pytest.approx(4.0, rel=1e-4)


def test_smooth_mass_and_total_variation():
    pos = constant_density(1.0, (0, 0, 0), (1, 1, 1))
    neg = constant_density(1.0, (0.5, 0, 0), (1.5, 1, 1))
    m = LinearCombination([(1.0, pos), (-2.0, neg)])
    edges = np.linspace(-0.25, 1.75, 9)
    x, wx = gl_nodes(edges[:-1], edges[1:], 6)
    y, wy = gl_nodes(np.linspace(-0.25, 1.25, 7)[:-1], np.linspace(-0.25, 1.25, 7)[1:], 6)
    X, Y, Z = np.meshgrid(x.ravel(), y.ravel(), y.ravel(), indexing="ij")
    W = np.einsum("i,j,k->ijk", wx.ravel(), wy.ravel(), wy.ravel()).ravel()
    H = mollify(m, 2, np.column_stack([X.ravel(), Y.ravel(), Z.ravel()]))
    assert float(W @ H) == pytest.approx(-1.0, abs=2e-3)
    assert float(W @ np.abs(H)) <= 3.0 + 2e-3


@settings(max_examples=10)
@given(st.floats(-3, 3), st.floats(-3, 3))
def test_linearity_is_exact(a, b):
    m1 = make_density("gaussian-bump", {"center": [0, 0, 0], "width": 0.3}, (-1,) * 3, (1,) * 3)
    m2 = graph_singular(0.6, 0.5, 1.0, (-1,) * 3, (1,) * 3)
    X = np.random.default_rng(1).uniform(-1.2, 1.2, (40, 3))
    lhs = mollify(LinearCombination([(a, m1), (b, m2)]), 3, X)
    rhs = a * mollify(m1, 3, X) + b * mollify(m2, 3, X)
    np.testing.assert_allclose(lhs, rhs, rtol=1e-13, atol=1e-13)


@pytest.mark.parametrize("m", [
    constant_density(1.0, (0, 0, 0), (1, 1, 1)),
    graph_singular(0.7, 0.5, 1.0, (0, 0, 0), (1, 1, 1), graph="tilted", graph_params={"slope": [0.2, 0.0]}),
    hyperplane(0.5, (0, 0), (1, 1)),
], ids=["box", "graph", "plane"])
def test_support_grows_by_eps_only(m):
    level = 3
    eps = 2.0**-level
    rs = np.random.default_rng(2)
    X = rs.uniform(-1, 2, (4000, 3))
    lo, hi = (np.asarray(v) for v in m.bbox)
    out = np.any((X < lo - eps) | (X > hi + eps), axis=1)
    v = mollify(m, level, X)
    assert np.all(v[out] == 0.0)
    assert np.any(v[~out] != 0.0)


@pytest.mark.parametrize("level", [2, 4])
@pytest.mark.parametrize("which", ["constant", "graph"])
def test_domination(which, level):
    if which == "constant":
        m, alpha = constant_density(1.0, (-0.5,) * 3, (0.5,) * 3), 1.0
    else:
        m, alpha = graph_singular(0.7, 1.0, 1.0, (-1,) * 3, (1,) * 3), 0.6
    f = MollifiedField(m, level, FAST)
    f.build_cache()
    assert norm_domination_check(f, alpha, 0.25, FAST)


def test_cache_agrees_with_direct_quadrature():
    g = graph_singular(0.7, 0.5, 1.0, (-1,) * 3, (1,) * 3)
    f = MollifiedField(g, 3)
    f.build_cache()
    X = np.random.default_rng(4).uniform(-1, 1, (300, 3))
    cached, direct = f(X), f.direct(X)[:, 0]
    assert np.max(np.abs(cached - direct)) < 0.02 * np.max(np.abs(direct))


def test_structural_axes():
    flat = graph_singular(0.7, 0.5, 1.0, (-3,) * 3, (3,) * 3)
    assert list(singular_axes(flat)) == [False, False, True]
    assert list(invariant_axes(flat, (-1,) * 3, (1,) * 3, 0.25)) == [True, True, False]
    wave = graph_singular(0.7, 0.5, 1.0, (-3,) * 3, (3,) * 3, graph="wave")
    assert singular_axes(wave).all() and not invariant_axes(wave, (-1,) * 3, (1,) * 3, 0.25).any()
    c = constant_density(2.0, (-3,) * 3, (3,) * 3)
    assert invariant_axes(c, (-1,) * 3, (1,) * 3, 0.25).all()
    X = np.random.default_rng(0).uniform(-1, 1, (20, 3))
    np.testing.assert_allclose(mollify(c, 2, X), 2.0, rtol=1e-12)


def test_vector_field_and_errors():
    ms = [constant_density(1.0, (-2,) * 3, (2,) * 3), constant_density(-1.0, (-2,) * 3, (2,) * 3),
          graph_singular(0.7, 0.5, 1.0, (-2,) * 3, (2,) * 3)]
    f = MollifiedField(ms, 3)
    v = f(np.zeros(3))
    assert v.shape == (3,) and v[0] == pytest.approx(1.0) and v[1] == pytest.approx(-1.0)
    with pytest.raises(ValueError):
        MollifiedField(ms[0], -1)
    with pytest.raises(ValueError):
        norm_domination_check(f, 1.0, 0.25)
