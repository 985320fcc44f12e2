"""Green function of 1/2 Laplacian on a ball and the contraction machinery built on it.

``G(x, y) = K_d (|x - y|^(2-d) - r^(d-2) S(x, y)^(2-d))`` with
``K_d = 2 / ((d - 2) |S^(d-1)|)`` and the symmetric image distance
``S^2 = |x'|^2 |y'|^2 - 2 r^2 x'.y' + r^4`` (primes: relative to the centre).
The factor 2 relative to the classical Laplacian Green function makes
``R f = int G f`` solve ``1/2 Lap u = -f`` with ``u = 0`` on the sphere.

Volume integrals ``int G(x, y) f(y) dy`` use rays issued from ``x`` itself,
so the diagonal singularity is absorbed by the ``rho^2`` Jacobian; the value
``f(x)`` is subtracted and restored through ``int G = (r^2 - |x'|^2) / d``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ._quadrature import DEFAULT_QUAD, QuadratureSpec, gl_nodes, sphere_rule
from .domain import Ball
from .errors import NoContraction, SingularPoint, UnsupportedKind
from .lattice import Lattice, build_lattice
from .measures import (
    SmoothDensity,
    eval_density,
    flatten,
    is_zero,
    kato_norm_M,
)


SINGULAR_TOL = 1e-12


@dataclass(frozen=True)
class RaySpec:
    """Quadrature centred at the evaluation point: Gauss along rays, product rule on directions."""

    n_rho: int = 8
    n_theta: int = 6
    n_phi: int = 12
    chunk: int = 128


DEFAULT_RAYS = RaySpec()


class BallGreen:
    def __init__(self, center=(0.0, 0.0, 0.0), radius: float = 1.0, rays: RaySpec = DEFAULT_RAYS):
        self.center = np.asarray(center, float)
        self.radius = float(radius)
        self.d = self.center.size
        if self.d < 3:
            raise ValueError("d must be at least 3")
        area = 2 * math.pi ** (self.d / 2) / math.gamma(self.d / 2)
        self.K = 2.0 / ((self.d - 2) * area)
        self.rays = rays

    @property
    def ball(self) -> Ball:
        return Ball(tuple(self.center), self.radius)

    def _parts(self, x, y):
        x = np.asarray(x, float)
        y = np.asarray(y, float)
        xp = x - self.center
        yp = y - self.center
        diff = x - y
        dist = np.linalg.norm(diff, axis=-1)
        if np.any(dist < SINGULAR_TOL):
            raise SingularPoint("Green function evaluated at coincident points")
        r2 = self.radius**2
        xx = np.sum(xp * xp, axis=-1)
        yy = np.sum(yp * yp, axis=-1)
        xy = np.sum(xp * yp, axis=-1)
        S = np.sqrt(np.maximum(xx * yy - 2 * r2 * xy + r2 * r2, 0.0))
        return xp, yp, diff, dist, S, yy

    def eval(self, x, y):
        _, _, _, dist, S, _ = self._parts(x, y)
        p = 2 - self.d
        return self.K * (dist**p - self.radius ** (self.d - 2) * S**p)

    def grad(self, x, y):
        """Gradient in ``x``."""
        xp, yp, diff, dist, S, yy = self._parts(x, y)
        d = self.d
        r2 = self.radius**2
        t1 = diff / dist[..., None] ** d
        t2 = (yy[..., None] * xp - r2 * yp) / S[..., None] ** d
        return self.K * (2 - d) * (t1 - self.radius ** (d - 2) * t2)

    def R0(self, x):
        xp = np.atleast_2d(x) - self.center
        return (self.radius**2 - np.sum(xp * xp, axis=-1)) / self.d

    def grad_R0(self, x):
        return -2.0 * (np.atleast_2d(x) - self.center) / self.d

    def _rule(self):
        if self.d != 3:
            raise ValueError("volume quadrature is implemented for d = 3")
        rs = self.rays
        t, wt = gl_nodes(0.0, 1.0, rs.n_rho)
        om, wa = sphere_rule(rs.n_theta, rs.n_phi)
        return t, wt, om, wa

    def apply(self, fn, X, want_val=True, want_grad=True):
        """``R f`` and ``grad R f`` at interior points ``X`` for a pointwise density ``fn``.

        Each point gets its own rays ``y = x + rho w``, ``0 < rho < l(w)``, so
        the ``rho^2`` Jacobian cancels the diagonal singularity; the constant
        ``f(x)`` is subtracted and added back in closed form.
        """
        X = np.atleast_2d(np.asarray(X, float))
        n, d = X.shape
        t, wt, om, wa = self._rule()
        r, r2 = self.radius, self.radius**2
        rd = r ** (d - 2)
        fx = np.asarray(fn(X), float)
        val = np.zeros(n)
        grd = np.zeros((n, d))
        for s in range(0, n, self.rays.chunk):
            Xi = X[s : s + self.rays.chunk]
            m = len(Xi)
            xp = Xi - self.center
            xx = np.sum(xp * xp, axis=1)
            if np.any(xx > r2 * (1 + 1e-12)):
                raise ValueError("evaluation point outside the ball")
            b = xp @ om.T
            ell = -b + np.sqrt(np.maximum(b * b + r2 - xx[:, None], 0.0))
            rho = ell[:, :, None] * t[None, None, :]
            P = Xi[:, None, None, :] + rho[..., None] * om[None, :, None, :]
            w = (wa[None, :, None] * wt[None, None, :]) * rho**2 * ell[:, :, None]
            fP = np.asarray(fn(P.reshape(-1, d)), float).reshape(rho.shape)
            df = (fP - fx[s : s + m, None, None]) * w
            yp = P - self.center
            yy = np.sum(yp * yp, axis=-1)
            xy = np.einsum("ik,iqjk->iqj", xp, yp)
            S = np.sqrt(np.maximum(xx[:, None, None] * yy - 2 * r2 * xy + r2 * r2, 1e-300))
            if want_val:
                g = self.K * (rho ** (2 - d) - rd * S ** (2 - d))
                val[s : s + m] = np.sum(g * df, axis=(1, 2))
            if want_grad:
                f = self.K * (2 - d)
                # (x - y)/|x - y|^d = -w / rho^(d-1)
                c1 = -np.einsum("iqj,qk->ik", df * rho ** (1 - d), om)
                c2 = df / S**d
                t2 = xp * np.sum(c2 * yy, axis=(1, 2))[:, None] - r2 * np.einsum("iqj,iqjk->ik", c2, yp)
                grd[s : s + m] = f * (c1 - rd * t2)
        v = val + fx * self.R0(X) if want_val else None
        g = grd + fx[:, None] * self.grad_R0(X) if want_grad else None
        return v, g


def green_eval(G: BallGreen, x, y):
    return G.eval(x, y)


def green_grad(G: BallGreen, x, y):
    return G.grad(x, y)


def _density_fn(pi, G: BallGreen):
    """Pointwise density of ``pi`` restricted to the closed ball."""
    for _, t in flatten(pi):
        if not isinstance(t, SmoothDensity):
            raise UnsupportedKind("ball Green operators act on absolutely continuous bounded densities")

    def f(y):
        y = np.atleast_2d(y)
        inside = G.ball.signed_distance(y) <= 1e-12 * G.radius
        return np.where(inside, eval_density(pi, y), 0.0)

    return f


def R_apply(G: BallGreen, pi, x):
    """``R_B pi (x)`` for a bounded density ``pi`` restricted to the ball."""
    x = np.asarray(x, float)
    single = x.ndim == 1
    X = np.atleast_2d(x)
    if is_zero(pi):
        return 0.0 if single else np.zeros(len(X))
    v, _ = G.apply(_density_fn(pi, G), X, want_grad=False)
    return float(v[0]) if single else v


def R_grad(G: BallGreen, pi, x):
    x = np.asarray(x, float)
    single = x.ndim == 1
    X = np.atleast_2d(x)
    if is_zero(pi):
        return np.zeros(G.d) if single else np.zeros((len(X), G.d))
    _, g = G.apply(_density_fn(pi, G), X, want_val=False)
    return g[0] if single else g


# --------------------------------------------------------------------------
# contraction operator B pi = (grad R pi) . mu
# --------------------------------------------------------------------------


def _mu_fn(mu, G: BallGreen):
    if mu is None:
        return lambda y: np.zeros((len(np.atleast_2d(y)), G.d))
    fns = [_density_fn(m, G) for m in mu]
    return lambda y: np.stack([f(y) for f in fns], axis=-1)


def _mu_is_zero(mu):
    return mu is None or all(is_zero(m) for m in mu)


def _ball_lattice(G: BallGreen, fn, pitch, shrink=0.97):
    """Sample ``fn`` on a lattice over the ball's box.

    Nodes outside ``shrink * r`` take the value at their radial projection
    onto that sphere, so interpolation up to the boundary stays continuous.
    Nodes farther than one cell diagonal from the ball are left at zero.
    """
    r = G.radius
    lo = G.center - r - pitch
    hi = G.center + r + pitch

    def sample(P):
        out = np.zeros(len(P))
        xp = P - G.center
        nr = np.linalg.norm(xp, axis=1)
        need = nr <= r + pitch * math.sqrt(G.d)
        if need.any():
            Q = P[need].copy()
            far = nr[need] > shrink * r
            Q[far] = G.center + xp[need][far] * (shrink * r / nr[need][far])[:, None]
            out[need] = fn(Q)
        return out

    return build_lattice(sample, lo, hi, pitch)


def _lattice_fn(G: BallGreen, lat: Lattice):
    def f(y):
        y = np.atleast_2d(y)
        inside = G.ball.signed_distance(y) <= 1e-12 * G.radius
        out = np.zeros(len(y))
        if inside.any():
            out[inside] = lat.eval(y[inside], strict=False)[:, 0]
        return out

    return f


def _B_fn(G: BallGreen, mf, fn):
    """Pointwise ``x -> (grad R f)(x) . mu(x)`` plus the gradient norm."""

    def b(P):
        _, g = G.apply(fn, P, want_val=False)
        return np.sum(g * mf(P), axis=1), np.linalg.norm(g, axis=1)

    return b


def contraction_density(G: BallGreen, mu, pi, pitch: Optional[float] = None) -> SmoothDensity:
    """``B pi`` as a lattice-backed density supported on the ball."""
    pitch = G.radius / 12 if pitch is None else pitch
    b = _B_fn(G, _mu_fn(mu, G), _density_fn(pi, G))
    lat = _ball_lattice(G, lambda P: b(P)[0], pitch)
    return SmoothDensity(f=_lattice_fn(G, lat), lo=tuple(G.center - G.radius), hi=tuple(G.center + G.radius),
                         domain=G.ball, name="contraction")


@dataclass
class ContractionReport:
    radii: list
    kappa: list
    r0_estimate: Optional[float]
    iterates: list = field(default_factory=list)
    iterate_radius: Optional[float] = None

    @property
    def ratios(self):
        it = self.iterates
        return [b / a for a, b in zip(it, it[1:]) if a > 0]

    @property
    def rate(self):
        """Geometric decay rate: ``exp`` of the least-squares slope of ``log iterates``."""
        return geometric_rate(self.iterates)

    def to_dict(self):
        return {"radii": self.radii, "kappa": self.kappa, "r0_estimate": self.r0_estimate,
                "iterates": self.iterates, "iterate_radius": self.iterate_radius, "ratios": self.ratios,
                "rate": self.rate}


def geometric_rate(norms):
    v = np.asarray([x for x in norms if x > 0], float)
    if v.size < 2:
        return None
    k = np.arange(v.size)
    return float(np.exp(np.polyfit(k, np.log(v), 1)[0]))


def _neumann(G: BallGreen, mu, rhs_fn, pitch, tol, max_iter):
    """Neumann sweeps ``pi_{k+1} = B pi_k`` carried on a lattice.

    Returns the lattice of ``sum_{k>=1} pi_k`` and the sup over lattice nodes
    inside the ball of ``|grad R pi_k|`` for k = 0, 1, ...
    Stops once that sup falls below ``tol`` times its first value.
    """
    mf = _mu_fn(mu, G)
    fn = rhs_fn
    total = None
    norms = []
    probe = None
    for _ in range(max_iter):
        b = _B_fn(G, mf, fn)
        cache = {}

        def val(P, b=b, cache=cache):
            v, gn = b(P)
            cache.setdefault("gn", []).append(gn[np.linalg.norm(P - G.center, axis=1) < G.radius * 0.97])
            return v

        lat = _ball_lattice(G, val, pitch)
        gn = np.concatenate(cache["gn"]) if cache.get("gn") else np.zeros(1)
        norms.append(float(gn.max()) if gn.size else 0.0)
        if probe is None:
            probe = norms[0]
        if norms[-1] <= tol * probe or norms[-1] == 0.0:
            break
        total = lat if total is None else Lattice(lo=total.lo, pitch=total.pitch,
                                                  values=total.values + lat.values, level=-1)
        fn = _lattice_fn(G, lat)
    return total, norms


def contraction_factor(G: BallGreen, mu, pi_probe, r_list, quad: QuadratureSpec = DEFAULT_QUAD,
                       n_iterates: int = 6, pitch_frac: float = 1 / 12) -> ContractionReport:
    """``kappa(r) = M^1_{B pi}(r) / M^1_pi(r)`` on balls of radius r sharing G's centre.

    ``iterates`` holds the sup-gradient norms of the first Neumann sweeps of
    the probe on G's own ball.
    """
    radii = [float(r) for r in r_list]
    kap = []
    for r in radii:
        if _mu_is_zero(mu) or is_zero(pi_probe):
            kap.append(0.0)
            continue
        Gr = BallGreen(G.center, r, G.rays)
        num = kato_norm_M(contraction_density(Gr, mu, pi_probe, r * pitch_frac), 1.0, r, quad)
        den = kato_norm_M(pi_probe, 1.0, r, quad)
        kap.append(float(num / den) if den > 0 else 0.0)
    r0 = None
    for r in sorted(radii, reverse=True):
        if all(k <= 0.5 for rr, k in zip(radii, kap) if rr <= r):
            r0 = r
            break
    its = []
    if n_iterates > 0 and not is_zero(pi_probe) and not _mu_is_zero(mu):
        _, its = _neumann(G, mu, _density_fn(pi_probe, G), G.radius * pitch_frac, 0.0, n_iterates)
    return ContractionReport(radii=radii, kappa=kap, r0_estimate=r0, iterates=its, iterate_radius=G.radius)


class BallSolution:
    """Neumann-series solution of ``1/2 Lap u + grad u . mu = -rhs`` on the ball, zero on the sphere.

    ``u = R(rhs) + R(T)`` with ``T = sum_{k>=1} B^k rhs`` held on a lattice.
    """

    def __init__(self, G: BallGreen, rhs_fn, tail: Optional[Lattice], norms, kappa=None):
        self.G = G
        self.rhs_fn = rhs_fn
        self.tail = tail
        self.term_grad_norms = norms
        self.kappa = kappa
        self.lattice = None

    def source(self, X):
        X = np.atleast_2d(np.asarray(X, float))
        out = self.rhs_fn(X)
        if self.tail is not None:
            out = out + _lattice_fn(self.G, self.tail)(X)
        return out

    def _apply(self, x, want_val, want_grad):
        X = np.atleast_2d(np.asarray(x, float))
        return self.G.apply(self.source, X, want_val, want_grad)

    def __call__(self, x):
        single = np.ndim(x) == 1
        v, _ = self._apply(x, True, False)
        return float(v[0]) if single else v

    def grad(self, x):
        single = np.ndim(x) == 1
        _, g = self._apply(x, False, True)
        return g[0] if single else g

    def to_lattice(self, pitch: Optional[float] = None) -> Lattice:
        G = self.G
        pitch = G.radius / 16 if pitch is None else pitch

        def sample(P):
            out = np.zeros(len(P))
            ins = G.ball.signed_distance(P) < 0
            if ins.any():
                out[ins] = self(P[ins])
            return out

        self.lattice = build_lattice(sample, G.center - G.radius, G.center + G.radius, pitch)
        return self.lattice


def contraction_solve(G: BallGreen, mu, rhs, tol: float = 1e-8, max_iter: int = 60, check: bool = True,
                      quad: QuadratureSpec = DEFAULT_QUAD, pitch_frac: float = 1 / 12) -> BallSolution:
    """Sum ``u = sum_k R(B^k rhs)`` until a term's sup-gradient is below ``tol`` times the first one's."""
    if is_zero(rhs):
        return BallSolution(G, lambda X: np.zeros(len(np.atleast_2d(X))), None, [0.0], 0.0)
    kappa = 0.0
    if check and not _mu_is_zero(mu):
        rep = contraction_factor(G, mu, rhs, [G.radius], quad, n_iterates=0, pitch_frac=pitch_frac)
        kappa = rep.kappa[0]
        if kappa >= 1.0:
            raise NoContraction(f"kappa({G.radius}) = {kappa:.3f} >= 1")
    f = _density_fn(rhs, G)
    if _mu_is_zero(mu):
        return BallSolution(G, f, None, [0.0], 0.0)
    tail, norms = _neumann(G, mu, f, G.radius * pitch_frac, tol, max_iter)
    if norms[-1] > tol * norms[0] and len(norms) >= 2 and norms[-1] >= norms[-2]:
        raise NoContraction("Neumann terms stopped decreasing")
    return BallSolution(G, f, tail, norms, kappa)
