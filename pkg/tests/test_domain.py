import math
import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mcdirichlet import Ball, Box, SmoothSDF, domain_from_dict, domain_to_dict, make_sdf_domain

coord = st.floats(-0.95, 0.95)
vec = st.tuples(coord, coord, coord)
far = st.tuples(st.floats(-3, 3), st.floats(-3, 3), st.floats(-3, 3))


def ball_exit(a, b, c, r):
    # smallest root in [0, 1] of |a + t (b - a) - c| = r with a inside
    d = np.subtract(b, a)
    f = np.subtract(a, c)
    A, B, C = d @ d, 2 * f @ d, f @ f - r * r
    t = (-B + math.sqrt(B * B - 4 * A * C)) / (2 * A)
    return t if t <= 1 else None


def box_exit(a, b, lo, hi):
    d = np.subtract(b, a)
    ts = []
    for k in range(3):
        if abs(d[k]) < 1e-300:
            continue
        if d[k] > 0:
            ts.append((hi[k] - a[k]) / d[k])
        elif d[k] < 0:
            ts.append((lo[k] - a[k]) / d[k])
    t = min(ts)
    return t if t <= 1 else None


@given(st.tuples(st.floats(-0.5, 0.5), st.floats(-0.5, 0.5), st.floats(-0.5, 0.5)), far)
def test_ball_segment_exit_closed_form(a, b):
    D = Ball((0.1, -0.2, 0.0), 1.3)
    a = np.asarray(a)
    if np.linalg.norm(np.subtract(b, a)) < 1e-6:
        return
    got = D.segment_exit(a, b)
    want = ball_exit(a, b, D.center, D.radius)
    if want is None:
        assert got is None
    else:
        assert abs(got[0] - want) < 1e-10
        assert abs(np.linalg.norm(got[1] - np.asarray(D.center)) - D.radius) < 1e-10


@given(vec, far)
def test_box_segment_exit_closed_form(a, b):
    D = Box((-1, -1, -1), (1, 1.5, 2))
    if np.linalg.norm(np.subtract(b, a)) < 1e-6:
        return
    got = D.segment_exit(a, b)
    want = box_exit(a, b, D.lo, D.hi)
    if want is None:
        assert got is None
    else:
        assert abs(got[0] - want) < 1e-10


@pytest.mark.parametrize("D", [Ball((0, 0, 0), 1.0), Box((-1, -0.5, 0), (1, 0.5, 2)),
                               make_sdf_domain("ellipsoid"), make_sdf_domain("blob")],
                         ids=["ball", "box", "ellipsoid", "blob"])
@given(x=far)
def test_boundary_project_is_idempotent(D, x):
    p = D.boundary_project(np.asarray(x))
    q = D.boundary_project(p)
    assert np.linalg.norm(p - q) < 1e-6
    assert abs(D.signed_distance(p)) < 1e-6


def test_ball_signed_distance_and_contains(unit_ball):
    assert unit_ball.signed_distance(np.zeros(3)) == -1.0
    np.testing.assert_allclose(unit_ball.signed_distance(np.array([[2.0, 0, 0], [0, 0.5, 0]])), [1.0, -0.5])
    assert unit_ball.contains(np.array([0.99, 0, 0]))
    assert not unit_ball.contains(np.array([1.0, 0, 0]))
    assert unit_ball.diameter == 2.0


def test_box_signed_distance():
    D = Box((0, 0, 0), (1, 2, 3))
    assert D.signed_distance(np.array([0.5, 1.0, 1.5])) == pytest.approx(-0.5)
    assert D.signed_distance(np.array([2.0, 1.0, 1.5])) == pytest.approx(1.0)
    assert D.signed_distance(np.array([2.0, 3.0, 1.5])) == pytest.approx(math.sqrt(2))


def test_bridge_probability_examples(unit_ball):
    a = np.array([0.9, 0, 0])
    assert unit_ball.bridge_exit_probability(a, a, 0.01) == pytest.approx(math.exp(-2.0))
    assert unit_ball.bridge_exit_probability(np.array([1.0, 0, 0]), a, 0.01) == pytest.approx(1.0)
    assert unit_ball.bridge_exit_probability(np.zeros(3), np.zeros(3), 1e-6) < 1e-300


def test_bridge_probability_against_fine_brownian_bridge():
    # half-space {x1 < 0}, endpoints at distance 0.1, h = 0.01: unseen crossing by fine-step bridges
    rs = np.random.default_rng(0)
    n, m, h = 20000, 400, 0.01
    dt = h / m
    w = np.cumsum(rs.normal(0, math.sqrt(dt), (n, m)), axis=1)
    t = np.arange(1, m + 1) * dt
    bridge = -0.1 + w - (t / h) * w[:, -1:]
    frac = np.mean(bridge.max(axis=1) >= 0.0)
    # discrete monitoring sees the barrier shifted by 0.5826 sqrt(dt)
    shifted = 0.1 + 0.5826 * math.sqrt(dt)
    assert abs(frac - math.exp(-2.0 * shifted**2 / h)) < 0.008


def test_domain_dict_round_trip():
    for D in (Ball((1.0, 0.0, -1.0), 2.0), Box((0, 0, 0), (1, 2, 3))):
        E = domain_from_dict(domain_to_dict(D))
        assert domain_to_dict(E) == domain_to_dict(D)
    S = domain_from_dict({"kind": "sdf", "name": "rounded-box"})
    assert isinstance(S, SmoothSDF) and S.name == "rounded-box"


def test_sdf_check_warns_on_scaled_distance():
    bad = SmoothSDF(sdf=lambda x: 2.0 * (np.linalg.norm(x, axis=-1) - 1.0), lo=(-1, -1, -1), hi=(1, 1, 1))
    with pytest.warns(UserWarning):
        assert not bad.check_sdf()
    good = make_sdf_domain("ellipsoid", {"axes": [1.0, 1.0, 1.0]})
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        assert good.check_sdf()


def test_unknown_sdf_name():
    with pytest.raises(KeyError):
        make_sdf_domain("torus")
