"""Mollification of signed measures by the rescaled exponential bump.

``psi(x) = Z^-1 exp(-1 / (1 - |x|^2))`` on the unit ball and
``psi_n(x) = 2^(n d) psi(2^n x)``; a mollified field is ``(psi_n * m)(x)``.
"""
from __future__ import annotations

import math
from functools import lru_cache

import numpy as np
from scipy.integrate import quad as scipy_quad
from scipy.special import exp1

from ._quadrature import DEFAULT_QUAD, QuadratureSpec, fiber_integrate, gauss_legendre, gl_nodes
from .lattice import build_lattice
from .measures import (
    GraphSingularDensity,
    HyperplaneSurface,
    SmoothDensity,
    flatten,
    kato_norm_M,
)

DEFAULT_MAX_NODES = 129**3


class Bump:
    """The normalised radial bump in ``d`` dimensions."""

    def __init__(self, d: int = 3):
        self.d = d
        area = 2 * math.pi ** (d / 2) / math.gamma(d / 2)
        self.area = area
        raw = lambda r, p: r**p * math.exp(-1.0 / (1.0 - r * r)) if r < 1 else 0.0  # noqa: E731
        self.Z = area * scipy_quad(raw, 0, 1, args=(d - 1,), epsabs=0, epsrel=1e-13, limit=200)[0]
        self.m2 = area * scipy_quad(raw, 0, 1, args=(d + 1,), epsabs=0, epsrel=1e-13, limit=200)[0] / self.Z
        self.sup = math.exp(-1.0) / self.Z

    def radial(self, r):
        r = np.asarray(r, float)
        with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
            v = np.exp(-1.0 / (1.0 - r * r)) / self.Z
        return np.where(r < 1.0, v, 0.0)

    def psi(self, x, n: int = 0):
        x = np.asarray(x, float)
        s = 2.0**n
        return s**self.d * self.radial(np.linalg.norm(x * s, axis=-1))

    def marginal(self, t):
        """``Psi(t) = int psi(w, t) dw`` over the first d-1 coordinates (d = 3).

        Closed form: ``(pi / Z) * E(1 - t^2)`` with
        ``E(v) = v exp(-1/v) - E1(1/v)``.
        """
        if self.d != 3:
            raise ValueError("the closed-form marginal is for d = 3")
        t = np.asarray(t, float)
        v = np.clip(1.0 - t * t, 0.0, None)
        with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
            e = np.where(v > 0, v * np.exp(-1.0 / np.where(v > 0, v, 1.0)) - exp1(1.0 / np.where(v > 0, v, 1.0)), 0.0)
        return (math.pi / self.Z) * e


@lru_cache(maxsize=4)
def get_bump(d: int = 3) -> Bump:
    return Bump(d)


BUMP = get_bump(3)


@lru_cache(maxsize=8)
def ball_rule(n: int = 8, d: int = 3):
    """Tensor Gauss rule on [-1, 1]^d restricted to the unit ball, weighted by psi.

    Weights are renormalised to sum to 1 so constants are reproduced exactly.
    """
    x, w = gauss_legendre(n)
    g = np.meshgrid(*([x] * d), indexing="ij")
    P = np.stack([a.ravel() for a in g], axis=-1)
    W = np.ones(len(P))
    for k in range(d):
        W = W * w[np.searchsorted(x, P[:, k])]
    r = np.linalg.norm(P, axis=1)
    keep = r < 1
    W = W[keep] * get_bump(d).radial(r[keep])
    return P[keep], W / W.sum()


@lru_cache(maxsize=8)
def disk_rule(n_r: int = 8, n_a: int = 16):
    """Polar Gauss rule on the unit disk: nodes (k, 2), weights summing to pi."""
    r, wr = gl_nodes(0.0, 1.0, n_r)
    a = (np.arange(n_a) + 0.5) * (2 * np.pi / n_a)
    P = (r[:, None, None] * np.stack([np.cos(a), np.sin(a)], -1)[None]).reshape(-1, 2)
    W = (wr[:, None] * r[:, None] * np.full(n_a, 2 * np.pi / n_a)[None]).ravel()
    return P, W


def level_for_step(h: float, coupling: float = 1.0) -> int:
    """Smallest level n >= 1 with ``2^-n <= coupling * sqrt(h)``."""
    if h <= 0 or coupling <= 0:
        raise ValueError("h and coupling must be positive")
    target = coupling * math.sqrt(h)
    n = max(1, math.ceil(-math.log2(target) - 1e-12))
    while 2.0 ** (-n) > target:
        n += 1
    while n > 1 and 2.0 ** (-(n - 1)) <= target:
        n -= 1
    return n


# --------------------------------------------------------------------------
# convolution by kind
# --------------------------------------------------------------------------


def _poly_laplacian(poly, X):
    out = np.zeros(X.shape[0])
    for c, ex in poly:
        for k, e in enumerate(ex):
            if e >= 2:
                ex2 = list(ex)
                ex2[k] -= 2
                out += c * e * (e - 1) * np.prod(X[:, : len(ex2)] ** np.asarray(ex2, float), axis=1)
    return out


def _poly_degree(poly):
    return max((sum(ex) for _, ex in poly), default=0)


def _conv_smooth(t: SmoothDensity, X, eps, n_gauss=8, chunk=20000):
    d = X.shape[1]
    lo, hi = np.asarray(t.lo), np.asarray(t.hi)
    inner = np.all((X - eps >= lo) & (X + eps <= hi), axis=1)
    outer = np.any((X + eps < lo) | (X - eps > hi), axis=1)
    if t.domain is not None:
        sd = t.domain.signed_distance(X)
        inner &= sd < -eps
        outer |= sd > eps
    out = np.zeros(X.shape[0])
    rest = ~outer
    if t.const is not None:
        out[inner] = t.const
        rest &= ~inner
    elif t.poly is not None and _poly_degree(t.poly) <= 3:
        Xi = X[inner]
        out[inner] = t.f(Xi) + get_bump(d).m2 * eps**2 / (2 * d) * _poly_laplacian(t.poly, Xi)
        rest &= ~inner
    idx = np.flatnonzero(rest)
    if idx.size:
        P, W = ball_rule(n_gauss, d)
        for s in range(0, idx.size, chunk):
            ii = idx[s : s + chunk]
            Y = X[ii][:, None, :] - eps * P[None]
            out[ii] = t.density(Y.reshape(-1, d)).reshape(len(ii), -1) @ W
    return out


def _conv_graph_flat(t: GraphSingularDensity, xd, eps, quad):
    """Values on distinct heights ``xd`` for a flat graph with the eps-disk in the box."""
    g0 = float(t.g(np.zeros((1, t.dim - 1)))[0])
    u, inv = np.unique(xd, return_inverse=True)
    v = (u - g0) / eps
    Delta = t.delta / eps
    A = np.maximum.reduce([np.full_like(v, -Delta), v - 1.0, np.full_like(v, (t.lo[-1] - g0) / eps)])
    B = np.minimum.reduce([np.full_like(v, Delta), v + 1.0, np.full_like(v, (t.hi[-1] - g0) / eps)])
    live = B > A
    vals = np.zeros(u.size)
    if live.any():
        vl = v[live]
        F = lambda s: BUMP.marginal(vl[:, None] - s)  # noqa: E731
        vals[live] = fiber_integrate(F, A[live], B[live], np.zeros(live.sum()), vl, np.full(live.sum(), 0.25),
                                     t.gamma, n=quad.n_fiber)
    return t.a * eps ** (t.gamma - 1.0) * vals[inv]


def _conv_graph_flat_edge(t: GraphSingularDensity, X, eps, quad, Pd, Wd):
    """Flat graph near the lateral edges: fibers depend on height and disk radius only."""
    g0 = float(t.g(np.zeros((1, t.dim - 1)))[0])
    u, inv = np.unique(X[:, -1], return_inverse=True)
    rw2 = np.sum(Pd**2, axis=1)
    half = np.sqrt(np.maximum(1.0 - rw2, 0.0))
    V = np.repeat((u - g0) / eps, len(Pd))
    R2 = np.tile(rw2, u.size)
    H = np.tile(half, u.size)
    Delta = t.delta / eps
    A = np.maximum.reduce([np.full_like(V, -Delta), V - H, np.full_like(V, (t.lo[-1] - g0) / eps)])
    B = np.minimum.reduce([np.full_like(V, Delta), V + H, np.full_like(V, (t.hi[-1] - g0) / eps)])
    live = B > A
    tab = np.zeros(V.size)
    if live.any():
        vl, r2 = V[live], R2[live]
        F = lambda s: BUMP.radial(np.sqrt(r2[:, None] + (vl[:, None] - s) ** 2))  # noqa: E731
        tab[live] = fiber_integrate(F, A[live], B[live], np.zeros(live.sum()), vl,
                                    np.maximum(H[live], 1e-3) * 0.25, t.gamma, n=quad.n_fiber)
    tab = tab.reshape(u.size, len(Pd))
    Yp = X[:, None, :-1] - eps * Pd[None]
    inl = t.lateral_mask(Yp.reshape(-1, Yp.shape[-1])).reshape(len(X), len(Pd))
    return t.a * eps ** (t.gamma - 1.0) * np.einsum("ij,ij,j->i", inl, tab[inv], Wd)


def _conv_graph(t: GraphSingularDensity, X, eps, quad, chunk=4000):
    out = np.zeros(X.shape[0])
    lo, hi = np.asarray(t.lo), np.asarray(t.hi)
    near = np.all((X + eps >= lo) & (X - eps <= hi), axis=1)
    if not near.any():
        return out
    lat_in = np.all((X[:, :-1] - eps >= lo[:-1]) & (X[:, :-1] + eps <= hi[:-1]), axis=1)
    flat = t.graph_name == "flat"
    if flat:
        fast = near & lat_in
        if fast.any():
            out[fast] = _conv_graph_flat(t, X[fast, -1], eps, quad)
        near &= ~fast
    idx = np.flatnonzero(near)
    if idx.size == 0:
        return out
    Pd, Wd = disk_rule(8, 16)
    Delta = t.delta / eps
    if flat:
        out[idx] = _conv_graph_flat_edge(t, X[idx], eps, quad, Pd, Wd)
        return out
    for s0 in range(0, idx.size, chunk):
        ii = idx[s0 : s0 + chunk]
        Xi = X[ii]
        Yp = Xi[:, None, :-1] - eps * Pd[None]  # (k, q, 2)
        Yp2 = Yp.reshape(-1, Yp.shape[-1])
        inl = t.lateral_mask(Yp2)
        gv = np.zeros(Yp2.shape[0])
        if inl.any():
            gv[inl] = t.g(Yp2[inl])
        rw2 = np.tile(np.sum(Pd**2, axis=1), len(ii))
        half = np.sqrt(np.maximum(1.0 - rw2, 0.0))
        v = (np.repeat(Xi[:, -1], len(Pd)) - gv) / eps
        A = np.maximum.reduce([np.full_like(v, -Delta), v - half, (t.lo[-1] - gv) / eps])
        B = np.minimum.reduce([np.full_like(v, Delta), v + half, (t.hi[-1] - gv) / eps])
        live = inl & (B > A)
        fib = np.zeros(Yp2.shape[0])
        if live.any():
            vl = v[live]
            r2 = rw2[live]
            F = lambda s: BUMP.radial(np.sqrt(r2[:, None] + (vl[:, None] - s) ** 2))  # noqa: E731
            fib[live] = fiber_integrate(F, A[live], B[live], np.zeros(live.sum()), vl,
                                        np.maximum(half[live], 1e-3) * 0.25, t.gamma, n=quad.n_fiber)
        out[ii] = t.a * eps ** (t.gamma - 1.0) * (fib.reshape(len(ii), -1) @ Wd)
    return out


def _conv_plane(t: HyperplaneSurface, X, eps):
    out = np.zeros(X.shape[0])
    v = (X[:, -1] - t.level) / eps
    lo, hi = np.asarray(t.lo), np.asarray(t.hi)
    near = (np.abs(v) < 1) & np.all((X[:, :-1] + eps >= lo) & (X[:, :-1] - eps <= hi), axis=1)
    if not near.any():
        return out
    if t.const is not None:
        inside = near & np.all((X[:, :-1] - eps >= lo) & (X[:, :-1] + eps <= hi), axis=1)
        out[inside] = t.const * BUMP.marginal(v[inside]) / eps
        near &= ~inside
    idx = np.flatnonzero(near)
    if idx.size:
        Pd, Wd = disk_rule(8, 16)
        rad = np.sqrt(1.0 - v[idx] ** 2)
        # disk of radius rad: nodes rad * Pd, weights rad^2 * Wd
        Yp = X[idx][:, None, :-1] - eps * rad[:, None, None] * Pd[None]
        w = t.surface_density(Yp.reshape(-1, Yp.shape[-1])).reshape(len(idx), -1)
        psi = BUMP.radial(np.sqrt(rad[:, None] ** 2 * np.sum(Pd**2, axis=1)[None] + v[idx][:, None] ** 2))
        out[idx] = (w * psi) @ Wd * rad**2 / eps
    return out


def mollify(m, level: int, X, quad: QuadratureSpec = DEFAULT_QUAD):
    """``(psi_n * m)(x)`` for each row of ``X`` by direct quadrature."""
    X = np.atleast_2d(np.asarray(X, float))
    eps = 2.0 ** (-level)
    out = np.zeros(X.shape[0])
    for c, t in flatten(m):
        if isinstance(t, SmoothDensity):
            out += c * _conv_smooth(t, X, eps)
        elif isinstance(t, GraphSingularDensity):
            if t.dim != 3:
                raise ValueError("graph-singular mollification is implemented for d = 3")
            out += c * _conv_graph(t, X, eps, quad)
        elif isinstance(t, HyperplaneSurface):
            if t.dim != 3:
                raise ValueError("surface mollification is implemented for d = 3")
            out += c * _conv_plane(t, X, eps)
        else:  # pragma: no cover
            raise TypeError(type(t))
    return out


# --------------------------------------------------------------------------
# structural invariance (used to collapse lattice axes)
# --------------------------------------------------------------------------


def invariant_axes(m, lo, hi, eps):
    """Axes along which ``psi_eps * m`` is provably constant on ``[lo, hi]``."""
    lo = np.asarray(lo, float)
    hi = np.asarray(hi, float)
    d = lo.size
    inv = np.ones(d, bool)
    for _, t in flatten(m):
        if isinstance(t, SmoothDensity):
            if t.domain is not None or (t.const is None and t.poly is None):
                return np.zeros(d, bool)
            covers = (np.asarray(t.lo) <= lo - eps) & (np.asarray(t.hi) >= hi + eps)
            if t.poly is not None and t.const is None:
                used = np.zeros(d, bool)
                for _, ex in t.poly:
                    used[: len(ex)] |= np.asarray(ex) > 0
                covers &= ~used
            inv &= covers
        elif isinstance(t, GraphSingularDensity):
            if t.graph_name != "flat":
                return np.zeros(d, bool)
            lat = (np.asarray(t.lo[:-1]) <= lo[:-1] - eps) & (np.asarray(t.hi[:-1]) >= hi[:-1] + eps)
            inv &= np.append(lat, False)
        else:
            if t.const is None:
                return np.zeros(d, bool)
            lat = (np.asarray(t.lo) <= lo[:-1] - eps) & (np.asarray(t.hi) >= hi[:-1] + eps)
            inv &= np.append(lat, False)
    return inv


# --------------------------------------------------------------------------
# mollified fields
# --------------------------------------------------------------------------


class MollifiedField:
    """``psi_n * m`` for one measure (scalar) or a list of measures (vector).

    Immutable once the optional cache lattice is built.
    """

    def __init__(self, source, level: int, quad: QuadratureSpec = DEFAULT_QUAD):
        self.vector = isinstance(source, (list, tuple))
        self.sources = list(source) if self.vector else [source]
        if level < 0:
            raise ValueError("level must be nonnegative")
        self.level = int(level)
        self.quad = quad
        self.cache = None

    @property
    def eps(self):
        return 2.0 ** (-self.level)

    @property
    def ncomp(self):
        return len(self.sources)

    @property
    def dim(self):
        return self.sources[0].dim

    def direct(self, X):
        X = np.atleast_2d(np.asarray(X, float))
        return np.stack([mollify(m, self.level, X, self.quad) for m in self.sources], axis=-1)

    def __call__(self, x):
        x = np.asarray(x, float)
        single = x.ndim == 1
        vals = self.cache.eval(np.atleast_2d(x), strict=True) if self.cache is not None else self.direct(x)
        if not self.vector:
            vals = vals[:, 0]
        return vals[0] if single else vals

    def support_box(self):
        los, his = zip(*(m.bbox for m in self.sources))
        return np.min(los, axis=0) - self.eps, np.max(his, axis=0) + self.eps

    def build_cache(self, lo=None, hi=None, pitch=None, max_nodes=DEFAULT_MAX_NODES):
        slo, shi = self.support_box()
        lo = slo if lo is None else np.maximum(np.asarray(lo, float), slo)
        hi = shi if hi is None else np.minimum(np.asarray(hi, float), shi)
        hi = np.maximum(hi, lo)
        collapse = np.ones(self.dim, bool)
        for m in self.sources:
            collapse &= invariant_axes(m, lo, hi, self.eps)
        fine = np.zeros(self.dim, bool)
        for m in self.sources:
            fine |= singular_axes(m, self.dim)
        pitch = self.eps / 4 if pitch is None else float(pitch)
        pitch = axis_pitches(lo, hi, pitch, collapse, fine, max_nodes)
        self.cache = build_lattice(self.direct, lo, hi, pitch, collapse, level=self.level)
        return self.cache

    def as_density(self, component: int = 0) -> SmoothDensity:
        """Wrap one component as a bounded density (for Kato norms)."""
        lo, hi = self.support_box()
        if self.cache is not None:
            lat = self.cache
            f = lambda y: lat.eval(y, strict=False)[:, component]  # noqa: E731
        else:
            f = lambda y: self.direct(y)[:, component]  # noqa: E731
        return SmoothDensity(f=f, lo=tuple(lo), hi=tuple(hi), name=f"mollified-{self.level}")


def scaled_pitch(lo, hi, pitch, collapse, max_nodes):
    """Enlarge ``pitch`` until the lattice fits in ``max_nodes`` nodes."""
    ext = np.where(collapse, 0.0, np.asarray(hi) - np.asarray(lo))

    def count(p):
        return float(np.prod(np.where(ext > 0, np.ceil(ext / p) + 1, 1)))

    while count(pitch) > max_nodes:
        pitch *= 1.05
    return pitch


def singular_axes(m, d: int = 3):
    """Axes across which ``psi_eps * m`` has structure at scale eps (singular layers)."""
    fine = np.zeros(d, bool)
    for _, t in flatten(m):
        if isinstance(t, GraphSingularDensity):
            if t.graph_name == "flat":
                fine[-1] = True
            else:
                fine[:] = True
        elif isinstance(t, HyperplaneSurface):
            fine[-1] = True
    return fine


def axis_pitches(lo, hi, pitch, collapse, fine, max_nodes, min_nodes=17):
    """Per-axis pitch fitting ``max_nodes``: coarse axes give way first, down to ``min_nodes`` nodes."""
    ext = np.where(collapse, 0.0, np.asarray(hi, float) - np.asarray(lo, float))
    p = np.full(ext.size, float(pitch))

    def count(p):
        return float(np.prod(np.where(ext > 0, np.ceil(ext / p) + 1, 1)))

    coarse = (ext > 0) & ~np.asarray(fine, bool)
    if coarse.any() and (ext[~coarse] > 0).any():
        cap = ext / (min_nodes - 1)
        while count(p) > max_nodes and np.any(p[coarse] < cap[coarse]):
            p[coarse] = np.minimum(p[coarse] * 1.05, np.maximum(cap[coarse], p[coarse]))
    while count(p) > max_nodes:
        p *= 1.05
    return p


def eval_mollified(field: MollifiedField, x):
    """Convolution value of ``field`` at ``x``; ``OutOfCache`` off a cached lattice."""
    return field(x)


def norm_domination_check(field: MollifiedField, alpha: float, r: float,
                          quad: QuadratureSpec = DEFAULT_QUAD, tol: float = 0.01) -> bool:
    """Kato norm of the mollified density does not exceed that of its source."""
    if field.vector:
        raise ValueError("norm domination is checked on scalar fields")
    src = kato_norm_M(field.sources[0], alpha, r, quad)
    moll = kato_norm_M(field.as_density(), alpha, r, quad)
    return bool(moll <= src * (1.0 + tol))
