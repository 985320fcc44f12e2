"""Low-level quadrature rules shared by the measure, mollifier and Green modules.

Everything here is vectorised over a leading "row" axis so that many
integrals (one per candidate point) are advanced together.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import DivergentIntegral


@dataclass(frozen=True)
class QuadratureSpec:
    """Knobs for singular integrals and for the sup-candidate search.

    The defaults are tuned for desk-scale runs in three dimensions.
    """

    n_radial: int = 3          # Gauss points per dyadic shell
    n_sub: int = 1             # composite sub-intervals per shell (radial and lateral)
    n_theta: int = 8           # Gauss points in cos(theta) on the sphere
    n_phi: int = 16            # uniform points in phi
    n_lateral: int = 2         # radial Gauss points per in-plane shell
    n_lateral_angle: int = 12  # angles per in-plane shell
    n_fiber: int = 6           # Gauss points per fiber sub-interval
    tol: float = 1e-4
    max_levels: int = 40
    q_max: float = 0.99        # largest shell ratio still counted as Cauchy
    grid_divisions: int = 8    # coarse sup grid: diameter / grid_divisions
    refine_levels: int = 5     # each halves the pitch around the best points
    refine_top: int = 6
    chunk: int = 2048


DEFAULT_QUAD = QuadratureSpec()


@lru_cache(maxsize=64)
def gauss_legendre(n: int):
    x, w = np.polynomial.legendre.leggauss(n)
    return x, w


def gl_nodes(a, b, n):
    """Gauss-Legendre nodes/weights on [a, b]; ``a``/``b`` broadcast over rows.

    Returns arrays of shape ``a.shape + (n,)``.
    """
    x, w = gauss_legendre(n)
    a = np.asarray(a, dtype=float)[..., None]
    b = np.asarray(b, dtype=float)[..., None]
    half = 0.5 * (b - a)
    return a + half * (x + 1.0), half * w


def composite_nodes(a, b, n, m=1):
    """``gl_nodes`` on ``m`` equal pieces of [a, b], concatenated on the last axis."""
    if m <= 1:
        return gl_nodes(a, b, n)
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    cuts = a[..., None] + (b - a)[..., None] * (np.arange(m + 1) / m)
    x, w = gl_nodes(cuts[..., :-1], cuts[..., 1:], n)
    return x.reshape(x.shape[:-2] + (-1,)), w.reshape(w.shape[:-2] + (-1,))


@lru_cache(maxsize=16)
def sphere_rule(n_theta: int, n_phi: int):
    """Product rule on S^2: Gauss in cos(theta), midpoint in phi.

    Weights sum to 4*pi and the rule integrates low-order spherical
    harmonics exactly.
    """
    ct, wt = gauss_legendre(n_theta)
    phi = (np.arange(n_phi) + 0.5) * (2 * np.pi / n_phi)
    st = np.sqrt(1.0 - ct**2)
    dirs = np.stack(
        [
            np.outer(st, np.cos(phi)).ravel(),
            np.outer(st, np.sin(phi)).ravel(),
            np.repeat(ct, n_phi),
        ],
        axis=-1,
    )
    w = np.repeat(wt, n_phi) * (2 * np.pi / n_phi)
    return dirs, w


@lru_cache(maxsize=16)
def circle_rule(n: int):
    phi = (np.arange(n) + 0.5) * (2 * np.pi / n)
    return np.stack([np.cos(phi), np.sin(phi)], axis=-1), np.full(n, 2 * np.pi / n)


@lru_cache(maxsize=16)
def ball_product_rule(n_r: int, n_theta: int, n_phi: int):
    """Nodes and weights for the unit ball in R^3 (radial Gauss x sphere rule)."""
    r, wr = gl_nodes(0.0, 1.0, n_r)
    dirs, wa = sphere_rule(n_theta, n_phi)
    pts = (r[:, None, None] * dirs[None, :, :]).reshape(-1, 3)
    w = (wr[:, None] * r[:, None] ** 2 * wa[None, :]).ravel()
    return pts, w


def shell_sum(shell_fn, rmax, quad: QuadratureSpec = DEFAULT_QUAD, what="integral"):
    """Sum dyadic shell contributions ``[rmax/2^(j+1), rmax/2^j]`` toward r = 0.

    ``shell_fn(idx, lo, hi)`` returns ``(values, magnitude)`` for the rows
    ``idx``: ``values`` has shape ``(len(idx),) + extra`` and ``magnitude``
    (shape ``(len(idx),)``) is the shell integral of the absolute integrand.
    A row stops once the geometric extrapolation of the magnitude series
    changes by less than ``quad.tol`` (relative) between two levels.  Rows
    still running after ``quad.max_levels`` shells raise DivergentIntegral.
    """
    rmax = np.asarray(rmax, dtype=float)
    n = rmax.shape[0]
    total = None
    mag_total = np.zeros(n)
    prev_mag = np.full(n, np.nan)
    prev_est = np.full(n, np.nan)
    zero_run = np.zeros(n, dtype=int)
    done = rmax <= 0
    tail_ratio = np.zeros(n)
    last = None
    for j in range(quad.max_levels):
        act = np.flatnonzero(~done)
        if act.size == 0:
            break
        hi = rmax[act] * 0.5**j
        lo = 0.5 * hi
        vals, mag = shell_fn(act, lo, hi)
        vals = np.asarray(vals, dtype=float)
        if total is None:
            total = np.zeros((n,) + vals.shape[1:])
            last = np.zeros_like(total)
        total[act] += vals
        last[act] = vals
        mt = mag_total[act] + mag
        mag_total[act] = mt
        zr = (mt == 0) & (mag == 0)
        zero_run[act] = np.where(zr, zero_run[act] + 1, 0)
        with np.errstate(divide="ignore", invalid="ignore"):
            q = mag / prev_mag[act]
            q = np.where((mag == 0) & (prev_mag[act] == 0), 0.0, q)
            ok = np.isfinite(q) & (q >= 0) & (q < quad.q_max)
            est = np.where(ok, mt + mag * q / (1.0 - q), np.inf)
            pe = prev_est[act]
            conv = ok & np.isfinite(pe) & (np.abs(est - pe) <= quad.tol * np.abs(est))
        conv |= zero_run[act] >= 3
        conv &= j >= 2
        tail_ratio[act] = np.where(ok, q / (1.0 - np.where(ok, q, 0.0)), 0.0)
        done[act[conv]] = True
        prev_mag[act] = mag
        prev_est[act] = est
    if not done.all():
        bad = int((~done).sum())
        raise DivergentIntegral(
            f"{what}: {bad} of {n} rows show no Cauchy behaviour after {quad.max_levels} shells"
        )
    if total is None:
        return np.zeros(n)
    tr = tail_ratio.reshape((n,) + (1,) * (total.ndim - 1))
    return total + last * tr


def fiber_integrate(F, A, B, g, p, s, gamma, n=6, kmax=None):
    """Integrate ``F(t) * |t - g|**(gamma - 1)`` over ``[A, B]`` row by row.

    The power singularity at ``g`` is removed with the substitution
    ``u = |t - g|**gamma`` (power-law antiderivative), and ``F`` is allowed a
    sharp peak of width ``s`` around ``p``; breakpoints are graded
    dyadically away from that peak.  ``F`` receives ``t`` of shape
    ``(rows, q)`` and returns ``(rows, q)`` or ``(rows, q, k)``.
    """
    A = np.asarray(A, float)
    B = np.maximum(np.asarray(B, float), A)
    g = np.asarray(g, float)
    p = np.asarray(p, float)
    s = np.maximum(np.asarray(s, float), 1e-300)
    rows = A.shape[0]
    if rows == 0:
        return np.zeros(0)
    L = np.maximum(B - A, 0.0)
    if kmax is None:
        with np.errstate(divide="ignore"):
            kk = np.ceil(np.log2(np.maximum(L, 1e-300) / s))
        kmax = int(np.clip(np.nanmax(np.where(L > 0, kk, 0)), 0, 45))
    offs = s[:, None] * 2.0 ** np.arange(kmax + 1)[None, :]
    bps = np.concatenate(
        [A[:, None], B[:, None], g[:, None], p[:, None] - offs, p[:, None] + offs], axis=1
    )
    bps = np.clip(bps, A[:, None], B[:, None])
    bps.sort(axis=1)
    a_i = bps[:, :-1]
    b_i = bps[:, 1:]
    mid = 0.5 * (a_i + b_i)
    side = np.where(mid >= g[:, None], 1.0, -1.0)
    u1 = np.abs(a_i - g[:, None]) ** gamma
    u2 = np.abs(b_i - g[:, None]) ** gamma
    un, uw = gl_nodes(np.minimum(u1, u2), np.maximum(u1, u2), n)  # (rows, I, n)
    t = g[:, None, None] + side[..., None] * un ** (1.0 / gamma)
    w = uw / gamma
    w = np.where((b_i > a_i)[..., None], w, 0.0)
    vals = F(t.reshape(rows, -1))
    vals = np.asarray(vals, float)
    extra = vals.shape[2:]
    vals = vals.reshape((rows,) + t.shape[1:] + extra)
    w = w.reshape(w.shape + (1,) * len(extra))
    return (vals * w).sum(axis=(1, 2))
