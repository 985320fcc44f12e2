"""Signed Radon measures on R^d and numerical Kato-class diagnostics.

Four kinds are supported: bounded densities on a bounded support, densities
with a power singularity across a Lipschitz graph, surface densities on a
coordinate hyperplane ``{x_d = c}`` and finite linear combinations of those.

The norms

    M(r) = sup_x  int_{B_r(x)} |x - y|^(alpha - d) |pi|(dy)
    N(t) = sup_x  int_0^t int s^(-(d + 2 - alpha)/2) exp(-c |x - y|^2 / (2 s)) |pi|(dy) ds

are estimated by a sup over a finite candidate set and dyadic shell
quadrature around the kernel singularity.  The time integral in N is done
in closed form (an upper incomplete gamma function).
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.special import gamma as gamma_fn
from scipy.special import gammaincc

from ._quadrature import (
    DEFAULT_QUAD,
    QuadratureSpec,
    circle_rule,
    composite_nodes,
    fiber_integrate,
    gl_nodes,
    shell_sum,
    sphere_rule,
)
from .domain import Domain, domain_from_dict, domain_to_dict
from .errors import ConfigError, DivergentIntegral, UnsupportedKind

KINDS = ("SmoothDensity", "GraphSingularDensity", "HyperplaneSurface", "LinearCombination")


# --------------------------------------------------------------------------
# measure kinds
# --------------------------------------------------------------------------


class SignedMeasure:
    kind: str = "measure"
    dim: int

    def __mul__(self, c):
        return LinearCombination([(float(c), self)], dim=self.dim)

    __rmul__ = __mul__

    def __add__(self, other):
        return LinearCombination([(1.0, self), (1.0, other)], dim=self.dim)

    def __neg__(self):
        return LinearCombination([(-1.0, self)], dim=self.dim)

    def __sub__(self, other):
        return LinearCombination([(1.0, self), (-1.0, other)], dim=self.dim)


@dataclass(eq=False)
class SmoothDensity(SignedMeasure):
    """Bounded density ``f`` restricted to a support (a box and/or a Domain).

    ``f`` maps ``(n, d)`` arrays to ``(n,)``.  ``const`` and ``poly`` record
    closed forms when known (constant value, or polynomial terms
    ``[(coef, exponents), ...]``); the mollifier uses them for exact fast paths.
    """

    f: Callable
    lo: tuple
    hi: tuple
    domain: Optional[Domain] = None
    name: str = "custom"
    params: dict = field(default_factory=dict)
    const: Optional[float] = None
    poly: Optional[list] = None
    kind: str = field(default="SmoothDensity", init=False)

    def __post_init__(self):
        self.lo = tuple(float(v) for v in self.lo)
        self.hi = tuple(float(v) for v in self.hi)

    @property
    def dim(self):
        return len(self.lo)

    def mask(self, y):
        lo, hi = np.asarray(self.lo), np.asarray(self.hi)
        m = np.all((y >= lo) & (y <= hi), axis=-1)
        if self.domain is not None:
            m &= self.domain.signed_distance(y) <= 0
        return m

    def density(self, y):
        y = np.asarray(y, float)
        out = np.zeros(y.shape[0])
        m = self.mask(y)
        if m.any():
            out[m] = self.f(y[m])
        return out

    @property
    def bbox(self):
        lo, hi = np.asarray(self.lo), np.asarray(self.hi)
        if self.domain is not None:
            dlo, dhi = self.domain.bbox
            lo, hi = np.maximum(lo, dlo), np.minimum(hi, dhi)
        return lo, hi


@dataclass(eq=False)
class GraphSingularDensity(SignedMeasure):
    """Density ``a |x_d - g(x')|^(gamma - 1) 1{|x_d - g(x')| < delta}`` on a box."""

    g: Callable
    gamma: float
    delta: float
    a: float
    lo: tuple
    hi: tuple
    graph_name: str = "custom"
    graph_params: dict = field(default_factory=dict)
    kind: str = field(default="GraphSingularDensity", init=False)

    def __post_init__(self):
        self.lo = tuple(float(v) for v in self.lo)
        self.hi = tuple(float(v) for v in self.hi)
        if not 0.0 < self.gamma < 1.0:
            raise ValueError("gamma must lie in (0, 1)")
        if self.delta <= 0:
            raise ValueError("delta must be positive")

    @property
    def dim(self):
        return len(self.lo)

    def lateral_mask(self, yp):
        lo, hi = np.asarray(self.lo[:-1]), np.asarray(self.hi[:-1])
        return np.all((yp >= lo) & (yp <= hi), axis=-1)

    def density(self, y):
        y = np.asarray(y, float)
        lo, hi = np.asarray(self.lo), np.asarray(self.hi)
        inbox = np.all((y >= lo) & (y <= hi), axis=-1)
        out = np.zeros(y.shape[0])
        if inbox.any():
            yy = y[inbox]
            z = np.abs(yy[:, -1] - self.g(yy[:, :-1]))
            with np.errstate(divide="ignore"):
                v = np.where(z < self.delta, self.a * z ** (self.gamma - 1.0), 0.0)
            out[inbox] = v
        return out

    @property
    def bbox(self):
        return np.asarray(self.lo), np.asarray(self.hi)


@dataclass(eq=False)
class HyperplaneSurface(SignedMeasure):
    """Surface density ``w(x') dS`` on ``{x_d = level}``; ``w`` vanishes off ``[lo, hi]``."""

    w: Callable
    level: float
    lo: tuple
    hi: tuple
    name: str = "custom"
    params: dict = field(default_factory=dict)
    const: Optional[float] = None
    kind: str = field(default="HyperplaneSurface", init=False)

    def __post_init__(self):
        self.lo = tuple(float(v) for v in self.lo)
        self.hi = tuple(float(v) for v in self.hi)

    @property
    def dim(self):
        return len(self.lo) + 1

    def surface_density(self, yp):
        yp = np.asarray(yp, float)
        lo, hi = np.asarray(self.lo), np.asarray(self.hi)
        m = np.all((yp >= lo) & (yp <= hi), axis=-1)
        out = np.zeros(yp.shape[0])
        if m.any():
            out[m] = self.w(yp[m])
        return out

    @property
    def bbox(self):
        return (
            np.append(np.asarray(self.lo), self.level),
            np.append(np.asarray(self.hi), self.level),
        )


@dataclass(eq=False)
class LinearCombination(SignedMeasure):
    terms: list
    dim: int = 3
    kind: str = field(default="LinearCombination", init=False)

    def __post_init__(self):
        self.terms = [(float(c), m) for c, m in self.terms]
        for _, m in self.terms:
            if m.dim != self.dim:
                raise ValueError("all terms must share the ambient dimension")

    @property
    def bbox(self):
        live = [m for c, m in self.terms if c != 0 and not is_zero(m)]
        if not live:
            return np.zeros(self.dim), np.zeros(self.dim)
        los, his = zip(*(m.bbox for m in live))
        return np.min(los, axis=0), np.max(his, axis=0)


def zero_measure(d: int = 3) -> LinearCombination:
    return LinearCombination([], dim=d)


def is_zero(m) -> bool:
    if isinstance(m, LinearCombination):
        return all(c == 0 or is_zero(t) for c, t in m.terms)
    if isinstance(m, GraphSingularDensity):
        return m.a == 0
    if isinstance(m, (SmoothDensity, HyperplaneSurface)):
        return m.const == 0
    return False


def flatten(m, coef=1.0):
    """Expand nested combinations into ``[(coef, atomic_measure), ...]``."""
    if isinstance(m, LinearCombination):
        out = []
        for c, t in m.terms:
            out.extend(flatten(t, coef * c))
        return out
    if coef == 0 or is_zero(m):
        return []
    return [(coef, m)]


# --------------------------------------------------------------------------
# pointwise access and Jordan decomposition
# --------------------------------------------------------------------------


def eval_density(m, x):
    """Signed Lebesgue density at ``x`` (a point or an ``(n, d)`` batch)."""
    x = np.asarray(x, float)
    single = x.ndim == 1
    X = x[None] if single else x
    if isinstance(m, HyperplaneSurface):
        raise UnsupportedKind("a hyperplane surface measure has no Lebesgue density")
    if isinstance(m, LinearCombination):
        out = np.zeros(X.shape[0])
        for c, t in flatten(m):
            out += c * eval_density(t, X)
        return float(out[0]) if single else out
    out = m.density(X)
    return float(out[0]) if single else out


def _combined_density(terms, dim):
    """A SmoothDensity evaluating sum c_i f_i pointwise (bounded terms only)."""
    terms = list(terms)
    los = [np.asarray(t.bbox[0]) for _, t in terms]
    his = [np.asarray(t.bbox[1]) for _, t in terms]
    lo = np.min(los, axis=0) if los else np.zeros(dim)
    hi = np.max(his, axis=0) if his else np.zeros(dim)

    def f(y):
        out = np.zeros(y.shape[0])
        for c, t in terms:
            out += c * t.density(y)
        return out

    return SmoothDensity(f=f, lo=tuple(lo), hi=tuple(hi), name="combination")


def _signed_part(m, sign):
    if isinstance(m, SmoothDensity):
        if m.const is not None:
            v = max(sign * m.const, 0.0)
            if v == 0:
                return zero_measure(m.dim)
            return SmoothDensity(lambda y, v=v: np.full(y.shape[0], v), m.lo, m.hi,
                                 m.domain, name="constant", params={"value": v}, const=v)
        f = m.f
        return SmoothDensity(lambda y: np.maximum(sign * f(y), 0.0), m.lo, m.hi, m.domain,
                             name=f"{m.name}{'+' if sign > 0 else '-'}")
    if isinstance(m, GraphSingularDensity):
        if sign * m.a > 0:
            return m if sign > 0 else GraphSingularDensity(
                m.g, m.gamma, m.delta, -m.a, m.lo, m.hi, m.graph_name, m.graph_params)
        return zero_measure(m.dim)
    if isinstance(m, HyperplaneSurface):
        if m.const is not None:
            v = max(sign * m.const, 0.0)
            if v == 0:
                return zero_measure(m.dim)
            return HyperplaneSurface(lambda yp, v=v: np.full(yp.shape[0], v), m.level,
                                     m.lo, m.hi, name="constant", params={"value": v}, const=v)
        w = m.w
        return HyperplaneSurface(lambda yp: np.maximum(sign * w(yp), 0.0), m.level, m.lo, m.hi)
    terms = flatten(m)
    if not terms:
        return zero_measure(m.dim)
    if len(terms) == 1:
        c, t = terms[0]
        part = _signed_part(t, sign if c > 0 else -sign)
        return part if abs(c) == 1 and not isinstance(part, LinearCombination) else \
            LinearCombination([(abs(c), part)], dim=m.dim)
    dens = [(c, t) for c, t in terms if isinstance(t, SmoothDensity)]
    sing = [(c, t) for c, t in terms if isinstance(t, GraphSingularDensity)]
    surf = [(c, t) for c, t in terms if isinstance(t, HyperplaneSurface)]
    if sing and (dens or len(sing) > 1):
        raise UnsupportedKind("Jordan parts of mixed singular combinations are not available")
    parts = []
    if dens:
        parts.append((1.0, _signed_part(_combined_density(dens, m.dim), sign)))
    for c, t in sing:
        parts.append((1.0, _signed_part(LinearCombination([(c, t)], dim=m.dim), sign)))
    levels = sorted({t.level for _, t in surf})
    for lev in levels:
        same = [(c, t) for c, t in surf if t.level == lev]
        lo = np.min([t.lo for _, t in same], axis=0)
        hi = np.max([t.hi for _, t in same], axis=0)

        def w(yp, same=same):
            return sum(c * t.surface_density(yp) for c, t in same)

        parts.append((1.0, _signed_part(HyperplaneSurface(w, lev, tuple(lo), tuple(hi)), sign)))
    return LinearCombination(parts, dim=m.dim)


def positive_part(m):
    return _signed_part(m, 1.0)


def negative_part(m):
    return _signed_part(m, -1.0)


def total_variation_measure(m):
    """|m| = m+ + m-."""
    if isinstance(m, GraphSingularDensity):
        return m if m.a >= 0 else _signed_part(m, -1.0)
    return LinearCombination([(1.0, positive_part(m)), (1.0, negative_part(m))], dim=m.dim)


def is_one_signed(m) -> bool:
    terms = flatten(m)
    if not terms:
        return True
    signs = set()
    for c, t in terms:
        if isinstance(t, GraphSingularDensity):
            signs.add(np.sign(c * t.a))
        elif t.const is not None:
            signs.add(np.sign(c * t.const))
        else:
            return False
    signs.discard(0.0)
    return len(signs) <= 1


# --------------------------------------------------------------------------
# integration of smooth test functions against a measure
# --------------------------------------------------------------------------


def _tensor_box(lo, hi, n, cells):
    lo, hi = np.asarray(lo, float), np.asarray(hi, float)
    axes = []
    ws = []
    for a, b in zip(lo, hi):
        edges = np.linspace(a, b, cells + 1)
        x, w = gl_nodes(edges[:-1], edges[1:], n)
        axes.append(x.ravel())
        ws.append(w.ravel())
    grids = np.meshgrid(*axes, indexing="ij")
    wgrid = np.ones_like(grids[0])
    for k, w in enumerate(ws):
        shape = [1] * len(ws)
        shape[k] = -1
        wgrid = wgrid * w.reshape(shape)
    return np.stack([g.ravel() for g in grids], axis=-1), wgrid.ravel()


def integrate_against(m, phi: Optional[Callable], lo, hi, n: int = 6, cells: int = 8,
                      quad: QuadratureSpec = DEFAULT_QUAD) -> float:
    """Integral of a smooth function ``phi`` against ``m`` over the box ``[lo, hi]``.

    ``phi`` maps ``(k, d) -> (k,)``; ``None`` means the constant 1.  Limits are
    clipped to each term's support box so box-supported densities integrate
    without a jump inside a cell.
    """
    lo = np.asarray(lo, float)
    hi = np.asarray(hi, float)
    one = phi is None
    total = 0.0
    for c, t in flatten(m):
        tlo, thi = t.bbox
        if isinstance(t, HyperplaneSurface):
            if not (lo[-1] <= t.level <= hi[-1]):
                continue
            a, b = np.maximum(lo[:-1], tlo[:-1]), np.minimum(hi[:-1], thi[:-1])
            if np.any(b <= a):
                continue
            P, W = _tensor_box(a, b, n, cells)
            vals = t.surface_density(P)
            if not one:
                vals = vals * phi(np.column_stack([P, np.full(len(P), t.level)]))
            total += c * float(np.dot(W, vals))
        elif isinstance(t, GraphSingularDensity):
            a, b = np.maximum(lo[:-1], tlo[:-1]), np.minimum(hi[:-1], thi[:-1])
            if np.any(b <= a):
                continue
            P, W = _tensor_box(a, b, n, cells)
            gv = t.g(P)
            A = np.maximum.reduce([np.full(len(P), lo[-1]), np.full(len(P), tlo[-1]), gv - t.delta])
            B = np.minimum.reduce([np.full(len(P), hi[-1]), np.full(len(P), thi[-1]), gv + t.delta])
            if one:
                F = lambda tt: np.ones_like(tt)  # noqa: E731
            else:
                def F(tt, P=P):
                    q = tt.shape[1]
                    pts = np.concatenate([np.repeat(P, q, axis=0), tt.reshape(-1, 1)], axis=1)
                    return phi(pts).reshape(tt.shape)
            vals = fiber_integrate(F, A, B, gv, gv, np.maximum(B - A, 1e-12), t.gamma, n=quad.n_fiber)
            total += c * t.a * float(np.dot(W, vals))
        else:
            a, b = np.maximum(lo, tlo), np.minimum(hi, thi)
            if np.any(b <= a):
                continue
            P, W = _tensor_box(a, b, n, cells)
            vals = t.density(P)
            if not one:
                vals = vals * phi(P)
            total += c * float(np.dot(W, vals))
    return total


def integrate_box(m, lo, hi, n: int = 6, cells: int = 8, quad: QuadratureSpec = DEFAULT_QUAD) -> float:
    """Signed mass m([lo, hi])."""
    return integrate_against(m, None, lo, hi, n=n, cells=cells, quad=quad)


# --------------------------------------------------------------------------
# radial-kernel integrals by dyadic shells
# --------------------------------------------------------------------------


def _require_3d(m):
    if m.dim != 3:
        raise ValueError("singular quadrature routines are implemented for d = 3")


def _groups(m):
    """Split |m| into quadrature groups: one pointwise-combined bounded density,
    graph-singular terms and hyperplane surfaces (combined per level)."""
    terms = flatten(m)
    dens = [(c, t) for c, t in terms if isinstance(t, SmoothDensity)]
    sing = [(c, t) for c, t in terms if isinstance(t, GraphSingularDensity)]
    surf = [(c, t) for c, t in terms if isinstance(t, HyperplaneSurface)]
    groups = []
    if dens:
        groups.append(("smooth", dens[0][1] if len(dens) == 1 and dens[0][0] == 1
                       else _combined_density(dens, m.dim), 1.0))
    for c, t in sing:
        groups.append(("graph", t, abs(c * t.a)))
    for lev in sorted({t.level for _, t in surf}):
        same = [(c, t) for c, t in surf if t.level == lev]
        groups.append(("plane", same, 1.0))
    return groups


def _shell_smooth(dens, X, k, quad, region):
    dirs, wa = sphere_rule(quad.n_theta, quad.n_phi)

    def fn(idx, lo, hi):
        rho, wr = composite_nodes(lo, hi, quad.n_radial, quad.n_sub)  # (k, nr)
        Y = X[idx][:, None, None, :] + rho[:, :, None, None] * dirs[None, None, :, :]
        f = np.abs(dens.density(Y.reshape(-1, 3))).reshape(Y.shape[:-1])
        if region is not None:
            C, R = region
            f = f * (np.linalg.norm(Y - C[idx][:, None, None, :], axis=-1) < R)
        w = wr * rho**2 * k(rho)
        v = np.einsum("ij,ijk,k->i", w, f, wa)
        return v, v

    return fn


def _shell_plane(same, X, k, quad, region, rmax):
    lev = same[0][1].level
    dirs, wa = circle_rule(quad.n_lateral_angle)
    z = np.abs(X[:, 2] - lev)
    rin = np.sqrt(np.maximum(rmax**2 - z**2, 0.0))
    scale = np.where(rmax > 0, rin / np.where(rmax > 0, rmax, 1.0), 0.0)

    def w_abs(yp):
        return np.abs(sum(c * t.surface_density(yp) for c, t in same))

    def fn(idx, lo, hi):
        sc = scale[idx]
        s, ws = composite_nodes(lo * sc, hi * sc, quad.n_lateral, quad.n_sub)
        P = X[idx][:, None, None, :2] + s[:, :, None, None] * dirs[None, None, :, :]
        vals = w_abs(P.reshape(-1, 2)).reshape(P.shape[:-1])
        rho = np.sqrt(s**2 + z[idx][:, None] ** 2)
        if region is not None:
            C, R = region
            Y = np.concatenate([P, np.full(P.shape[:-1] + (1,), lev)], axis=-1)
            vals = vals * (np.linalg.norm(Y - C[idx][:, None, None, :], axis=-1) < R)
        w = ws * s * np.where(rho > 0, k(np.maximum(rho, 1e-300)), 0.0)
        v = np.einsum("ij,ijk,k->i", w, vals, wa)
        return v, v

    return fn


def _shell_graph(t, amp, X, k, quad, region, rmax):
    dirs, wa = circle_rule(quad.n_lateral_angle)
    zlo, zhi = t.lo[-1], t.hi[-1]

    def fn(idx, lo, hi):
        nrow = idx.size
        s, ws = composite_nodes(lo, hi, quad.n_lateral, quad.n_sub)  # (k, nl)
        Xi = X[idx]
        P = Xi[:, None, None, :2] + s[:, :, None, None] * dirs[None, None, :, :]
        shp = P.shape[:-1]
        P2 = P.reshape(-1, 2)
        S = np.broadcast_to(s[:, :, None], shp).ravel()
        xd = np.broadcast_to(Xi[:, None, None, 2], shp).ravel()
        R = np.broadcast_to(rmax[idx][:, None, None], shp).ravel()
        half = np.sqrt(np.maximum(R**2 - S**2, 0.0))
        A = xd - half
        B = xd + half
        if region is not None:
            C, Rr = region
            Cc = np.broadcast_to(C[idx][:, None, None, :], shp + (3,)).reshape(-1, 3)
            lat2 = np.sum((P2 - Cc[:, :2]) ** 2, axis=-1)
            hr = np.sqrt(np.maximum(Rr**2 - lat2, 0.0))
            A = np.maximum(A, Cc[:, 2] - hr)
            B = np.minimum(B, Cc[:, 2] + hr)
            B = np.where(lat2 < Rr**2, B, A)
        gv = np.zeros(P2.shape[0])
        inl = t.lateral_mask(P2)
        if inl.any():
            gv[inl] = t.g(P2[inl])
        A = np.maximum.reduce([A, gv - t.delta, np.full_like(A, zlo)])
        B = np.minimum.reduce([B, gv + t.delta, np.full_like(B, zhi)])
        B = np.where(inl & (B > A), B, A)
        live = np.flatnonzero(B > A)
        fib = np.zeros(P2.shape[0])
        if live.size:
            Sl = S[live]
            xl = xd[live]

            def F(tt):
                rho = np.sqrt(Sl[:, None] ** 2 + (tt - xl[:, None]) ** 2)
                return k(np.maximum(rho, 1e-300))

            fib[live] = fiber_integrate(F, A[live], B[live], gv[live], xl, Sl, t.gamma, n=quad.n_fiber)
        fib = fib.reshape(shp)
        w = ws * s
        v = amp * np.einsum("ij,ijk,k->i", w, fib, wa)
        return v.reshape(nrow), v.reshape(nrow)

    return fn


def kernel_integral(m, X, k: Callable, rmax, quad: QuadratureSpec = DEFAULT_QUAD,
                    region=None, what="kernel integral"):
    """Rows of ``int_{B_rmax(x)} k(|x - y|) |m|(dy)`` for each ``x`` in ``X``.

    ``k`` is a radial kernel (possibly singular at 0).  ``region = (C, R)``
    further restricts the integral to ``B_R(C[i])`` row by row.
    """
    _require_3d(m)
    X = np.atleast_2d(np.asarray(X, float))
    n = X.shape[0]
    rmax = np.broadcast_to(np.asarray(rmax, float), (n,)).copy()
    blo, bhi = m.bbox
    far = np.sqrt(np.sum(np.maximum(np.abs(X - blo), np.abs(X - bhi)) ** 2, axis=1))
    # beyond the farthest support point every shell is empty
    rmax = np.minimum(rmax, far * (1 + 1e-12) + 1e-300)
    groups = _groups(m)
    if not groups or n == 0:
        return np.zeros(n)
    if region is not None:
        C = np.broadcast_to(np.asarray(region[0], float), (n, 3))
        region = (C, float(region[1]))
    fns = []
    for kind, obj, amp in groups:
        if kind == "smooth":
            fns.append(_shell_smooth(obj, X, k, quad, region))
        elif kind == "plane":
            fns.append(_shell_plane(obj, X, k, quad, region, rmax))
        else:
            fns.append(_shell_graph(obj, amp, X, k, quad, region, rmax))

    def shell(idx, lo, hi):
        tot = np.zeros(idx.size)
        for fn in fns:
            tot += fn(idx, lo, hi)[0]
        return tot, tot

    out = np.empty(n)
    for s in range(0, n, quad.chunk):
        sl = slice(s, min(n, s + quad.chunk))
        off = s

        def shell_chunk(idx, lo, hi, off=off):
            return shell(idx + off, lo, hi)

        out[sl] = shell_sum(shell_chunk, rmax[sl], quad, what=what)
    return out


def riesz_kernel(alpha, d=3):
    p = alpha - d
    return lambda rho: rho**p


def heat_time_kernel(alpha, c, t, d=3):
    """Closed-form ``int_0^t s^(-(d+2-alpha)/2) exp(-c rho^2 / (2 s)) ds``."""
    a = 0.5 * (d - alpha)
    ga = gamma_fn(a)

    def k(rho):
        u = 0.5 * c * rho**2
        return u ** (-a) * ga * gammaincc(a, u / t)

    return k


# --------------------------------------------------------------------------
# sup over candidate points
# --------------------------------------------------------------------------


def _singular_projections(m, P):
    """Project candidate points onto graph and hyperplane supports."""
    extra = []
    for c, t in flatten(m):
        if isinstance(t, GraphSingularDensity):
            inl = t.lateral_mask(P[:, :2])
            Q = P[inl].copy()
            if len(Q):
                Q[:, 2] = t.g(Q[:, :2])
                extra.append(Q)
        elif isinstance(t, HyperplaneSurface):
            Q = P.copy()
            Q[:, 2] = t.level
            extra.append(Q)
    return np.concatenate(extra) if extra else np.zeros((0, P.shape[1]))


def _unique_rows(P):
    key = np.round(P, 12)
    _, ix = np.unique(key, axis=0, return_index=True)
    return P[np.sort(ix)]


def _grid(lo, hi, pitch):
    axes = []
    for a, b in zip(lo, hi):
        ext = b - a
        nax = 1 if ext <= 0 else int(math.ceil(ext / pitch - 1e-9)) + 1
        axes.append(np.linspace(a, b, nax) if nax > 1 else np.array([0.5 * (a + b)]))
    g = np.meshgrid(*axes, indexing="ij")
    return np.stack([x.ravel() for x in g], axis=-1)


def sup_candidates(m, quad: QuadratureSpec = DEFAULT_QUAD):
    """Coarse candidate grid over the support box plus singular-set projections.

    The sup of a radially decreasing kernel integral is attained on the
    convex hull of the support (projection onto a convex set shortens every
    distance to it), so no inflation is needed.
    """
    lo, hi = m.bbox
    diam = float(np.linalg.norm(hi - lo))
    if diam == 0:
        return lo[None].copy(), 1.0
    pitch = diam / quad.grid_divisions
    P = _grid(lo, hi, pitch)
    P = np.concatenate([P, _singular_projections(m, P)])
    return _unique_rows(P), pitch


def _sup_search(m, evaluate, quad):
    """``evaluate(P) -> (n, k)``; returns ``(sups (k,), argmax points (k, d), all points)``."""
    lo, hi = m.bbox
    P, pitch = sup_candidates(m, quad)
    V = evaluate(P)
    for _ in range(quad.refine_levels):
        pitch *= 0.5
        top = np.unique(np.concatenate([np.argsort(-V[:, j])[: quad.refine_top] for j in range(V.shape[1])]))
        offs = np.stack(np.meshgrid(*([[-1.0, 0.0, 1.0]] * P.shape[1]), indexing="ij"), -1).reshape(-1, P.shape[1])
        offs = offs[np.any(offs != 0, axis=1)] * pitch
        new = (P[top][:, None, :] + offs[None]).reshape(-1, P.shape[1])
        new = np.clip(new, lo, hi)
        new = np.concatenate([new, _singular_projections(m, new)])
        key_old = {tuple(r) for r in np.round(P, 12)}
        new = _unique_rows(new)
        keep = np.array([tuple(r) not in key_old for r in np.round(new, 12)], dtype=bool)
        new = new[keep]
        if len(new):
            P = np.concatenate([P, new])
            V = np.concatenate([V, evaluate(new)])
    best = np.argmax(V, axis=0)
    return V.max(axis=0), P[best], P


def _check_alpha(alpha):
    if not 0 < alpha <= 2:
        raise ValueError("alpha must lie in (0, 2]")


def _scalar_shortcut(m):
    """``(coef, inner)`` for a single-term combination, else ``(1, m)``."""
    terms = flatten(m)
    if len(terms) == 1 and isinstance(m, LinearCombination):
        return abs(terms[0][0]), terms[0][1]
    return 1.0, m


def kato_norms_M(m, alpha: float, radii: Sequence[float], quad: QuadratureSpec = DEFAULT_QUAD):
    """M^alpha(r) for several radii on one shared candidate set."""
    _check_alpha(alpha)
    radii = [float(r) for r in radii]
    if any(r <= 0 for r in radii):
        raise ValueError("radii must be positive")
    if is_zero(m):
        return np.zeros(len(radii))
    coef, inner = _scalar_shortcut(m)
    _require_3d(inner)
    k = riesz_kernel(alpha, 3)

    def evaluate(P):
        return np.stack([kernel_integral(inner, P, k, r, quad, what=f"M^{alpha}({r})") for r in radii], axis=1)

    sups, _, _ = _sup_search(inner, evaluate, quad)
    return coef * sups


def kato_norm_M(m, alpha: float, r: float, quad: QuadratureSpec = DEFAULT_QUAD) -> float:
    """Lower-biased estimate of M^alpha_m(r); raises DivergentIntegral when the
    shell sums show no Cauchy behaviour."""
    return float(kato_norms_M(m, alpha, [r], quad)[0])


def kato_norm_N(m, alpha: float, c: float, t: float, quad: QuadratureSpec = DEFAULT_QUAD) -> float:
    """Estimate of N^{alpha,c}_m(t) with the kernel time integral in closed form."""
    _check_alpha(alpha)
    if c <= 0 or t <= 0:
        raise ValueError("c and t must be positive")
    if is_zero(m):
        return 0.0
    coef, inner = _scalar_shortcut(m)
    _require_3d(inner)
    k = heat_time_kernel(alpha, c, t, 3)
    rmax = math.sqrt(100.0 * t / c)

    def evaluate(P):
        return kernel_integral(inner, P, k, rmax, quad, what=f"N({t})")[:, None]

    sups, _, _ = _sup_search(inner, evaluate, quad)
    return float(coef * sups[0])


# --------------------------------------------------------------------------
# membership heuristic and the shifted-ball bound
# --------------------------------------------------------------------------


@dataclass
class KatoReport:
    alpha: float
    radii: list
    norms: list
    trend: float
    verdict: str

    def to_dict(self):
        return {
            "alpha": self.alpha,
            "radii": list(self.radii),
            "norms": list(self.norms),
            "trend": self.trend if math.isfinite(self.trend) else None,
            "verdict": self.verdict,
        }

    def to_json(self, **kw):
        return json.dumps(self.to_dict(), sort_keys=True, **kw)


def _trend(radii, norms):
    r = np.asarray(radii, float)
    v = np.asarray(norms, float)
    ok = v > 0
    if ok.sum() < 2:
        return float("nan")
    return float(np.polyfit(np.log(r[ok]), np.log(v[ok]), 1)[0])


def classify_kato(m, alpha: float, radii: Sequence[float], quad: QuadratureSpec = DEFAULT_QUAD,
                  threshold: float = 0.2) -> KatoReport:
    """Heuristic trend test for K_{d,alpha} membership (not a proof).

    ``kato_candidate``: norms never increase as r shrinks and the last norm is
    below ``threshold`` times the first.  ``rejected``: the shell sums diverge
    or the norms do not decrease at all.  Anything else is ``inconclusive``.
    """
    radii = [float(r) for r in radii]
    if len(radii) < 4 or any(b >= a for a, b in zip(radii, radii[1:])):
        raise ValueError("radii must be strictly decreasing with at least 4 entries")
    try:
        norms = [float(v) for v in kato_norms_M(m, alpha, radii, quad)]
    except DivergentIntegral:
        return KatoReport(alpha, radii, [], float("nan"), "rejected")
    trend = _trend(radii, norms)
    if all(v == 0 for v in norms):
        verdict = "kato_candidate"
    else:
        mono = all(b <= a * (1 + 1e-9) for a, b in zip(norms, norms[1:]))
        if mono and norms[-1] < threshold * norms[0]:
            verdict = "kato_candidate"
        elif norms[-1] >= norms[0]:
            verdict = "rejected"
        else:
            verdict = "inconclusive"
    return KatoReport(alpha, radii, norms, trend, verdict)


def shifted_ball_values(m, alpha, r, X, centers, quad: QuadratureSpec = DEFAULT_QUAD):
    """``int_{B_r(x1)} |x - y|^(alpha - d) |m|(dy)`` for every pair (x, x1)."""
    X = np.atleast_2d(np.asarray(X, float))
    Cs = np.atleast_2d(np.asarray(centers, float))
    coef, inner = _scalar_shortcut(m)
    k = riesz_kernel(alpha, 3)
    XX = np.repeat(X, len(Cs), axis=0)
    CC = np.tile(Cs, (len(X), 1))
    rmax = np.linalg.norm(XX - CC, axis=1) + r
    vals = kernel_integral(inner, XX, k, rmax, quad, region=(CC, r), what="shifted-ball integral")
    return coef * vals.reshape(len(X), len(Cs))


def shifted_ball_bound_check(m, alpha: float, r: float, centers, quad: QuadratureSpec = DEFAULT_QUAD,
                             tol: float = 1e-2) -> bool:
    """All shifted-ball integrals over the sup grid stay below 2 M^alpha(r) (1 + tol)."""
    _check_alpha(alpha)
    if is_zero(m):
        return True
    M = kato_norm_M(m, alpha, r, quad)
    _, inner = _scalar_shortcut(m)
    P, _ = sup_candidates(inner, quad)
    vals = shifted_ball_values(m, alpha, r, P, centers, quad)
    return bool(np.all(vals <= 2.0 * M * (1.0 + tol)))


# --------------------------------------------------------------------------
# registries and structured-text round trip
# --------------------------------------------------------------------------


def _const_density(value):
    v = float(value)
    return (lambda y: np.full(y.shape[0], v)), {"const": v}


def _gaussian_bump(center, width, amplitude=1.0):
    c = np.asarray(center, float)
    w = float(width)
    a = float(amplitude)
    return (lambda y: a * np.exp(-np.sum((y - c[: y.shape[1]]) ** 2, axis=-1) / (2 * w * w))), {}


def _polynomial(terms):
    terms = [(float(c), tuple(int(e) for e in ex)) for c, ex in terms]

    def f(y):
        out = np.zeros(y.shape[0])
        for c, ex in terms:
            out += c * np.prod(y[:, : len(ex)] ** np.asarray(ex, float), axis=1)
        return out

    return f, {"poly": terms}


DENSITY_REGISTRY = {
    "constant": lambda p: _const_density(p.get("value", 1.0)),
    "gaussian-bump": lambda p: _gaussian_bump(p.get("center", [0.0, 0.0, 0.0]), p.get("width", 0.2),
                                              p.get("amplitude", 1.0)),
    "polynomial": lambda p: _polynomial(p["terms"]),
}


def _graph_flat(level=0.0):
    v = float(level)
    return lambda yp: np.full(yp.shape[0], v)


def _graph_tilted(slope, offset=0.0):
    s = np.asarray(slope, float)
    return lambda yp: yp @ s[: yp.shape[1]] + float(offset)


def _graph_wave(amplitude=0.1, frequency=1.0, offset=0.0):
    a, k, o = float(amplitude), float(frequency), float(offset)
    return lambda yp: o + a * np.sin(k * yp[:, 0]) * np.cos(k * yp[:, -1])


GRAPH_REGISTRY = {
    "flat": lambda p: _graph_flat(p.get("level", 0.0)),
    "tilted": lambda p: _graph_tilted(p.get("slope", [0.0, 0.0]), p.get("offset", 0.0)),
    "wave": lambda p: _graph_wave(p.get("amplitude", 0.1), p.get("frequency", 1.0), p.get("offset", 0.0)),
}


def make_density(name, params, lo, hi, domain=None) -> SmoothDensity:
    if name not in DENSITY_REGISTRY:
        raise ConfigError(f"unknown density '{name}'; known: {sorted(DENSITY_REGISTRY)}")
    f, extra = DENSITY_REGISTRY[name](dict(params or {}))
    return SmoothDensity(f=f, lo=tuple(lo), hi=tuple(hi), domain=domain, name=name,
                         params=dict(params or {}), const=extra.get("const"), poly=extra.get("poly"))


def constant_density(value, lo, hi, domain=None) -> SmoothDensity:
    return make_density("constant", {"value": value}, lo, hi, domain)


def graph_singular(gamma, delta, a, lo, hi, graph="flat", graph_params=None) -> GraphSingularDensity:
    if graph not in GRAPH_REGISTRY:
        raise ConfigError(f"unknown graph '{graph}'; known: {sorted(GRAPH_REGISTRY)}")
    g = GRAPH_REGISTRY[graph](dict(graph_params or {}))
    return GraphSingularDensity(g=g, gamma=float(gamma), delta=float(delta), a=float(a), lo=tuple(lo),
                                hi=tuple(hi), graph_name=graph, graph_params=dict(graph_params or {}))


def hyperplane(level, lo, hi, density="constant", params=None) -> HyperplaneSurface:
    params = dict(params or {"value": 1.0})
    if density not in DENSITY_REGISTRY:
        raise ConfigError(f"unknown density '{density}'")
    w, extra = DENSITY_REGISTRY[density](params)
    return HyperplaneSurface(w=w, level=float(level), lo=tuple(lo), hi=tuple(hi), name=density,
                             params=params, const=extra.get("const"))


_MEASURE_KEYS = {
    "zero": {"kind", "dim"},
    "smooth": {"kind", "density", "params", "lo", "hi", "support"},
    "graph-singular": {"kind", "graph", "graph_params", "gamma", "delta", "amplitude", "lo", "hi"},
    "hyperplane": {"kind", "level", "density", "params", "lo", "hi"},
    "combination": {"kind", "terms", "dim"},
}


def measure_from_dict(spec: dict, dim: int = 3):
    """Build a measure from a config block; Dirac masses are refused."""
    if not isinstance(spec, dict) or "kind" not in spec:
        raise ConfigError("measure block needs a 'kind'")
    kind = spec["kind"]
    if kind in ("dirac", "point", "atom"):
        raise ConfigError("point masses are never Kato class for d >= 3")
    if kind not in _MEASURE_KEYS:
        raise ConfigError(f"unknown measure kind '{kind}'; known: {sorted(_MEASURE_KEYS)}")
    extra = set(spec) - _MEASURE_KEYS[kind]
    if extra:
        raise ConfigError(f"unknown keys in {kind} measure: {sorted(extra)}")
    if kind == "zero":
        return zero_measure(int(spec.get("dim", dim)))
    if kind == "smooth":
        domain = None
        lo, hi = spec.get("lo"), spec.get("hi")
        if "support" in spec:
            domain = domain_from_dict(spec["support"])
            dlo, dhi = domain.bbox
            lo = lo if lo is not None else list(dlo)
            hi = hi if hi is not None else list(dhi)
        if lo is None or hi is None:
            raise ConfigError("smooth measure needs 'lo'/'hi' or a 'support' domain")
        return make_density(spec.get("density", "constant"), spec.get("params", {}), lo, hi, domain)
    if kind == "graph-singular":
        return graph_singular(spec["gamma"], spec["delta"], spec.get("amplitude", 1.0), spec["lo"],
                              spec["hi"], spec.get("graph", "flat"), spec.get("graph_params"))
    if kind == "hyperplane":
        return hyperplane(spec.get("level", 0.0), spec["lo"], spec["hi"], spec.get("density", "constant"),
                          spec.get("params"))
    terms = [(float(t["coef"]), measure_from_dict(t["measure"], dim)) for t in spec["terms"]]
    return LinearCombination(terms, dim=int(spec.get("dim", dim)))


def measure_to_dict(m) -> dict:
    if isinstance(m, SmoothDensity):
        out = {"kind": "smooth", "density": m.name, "params": m.params, "lo": list(m.lo), "hi": list(m.hi)}
        if m.domain is not None:
            out["support"] = domain_to_dict(m.domain)
        return out
    if isinstance(m, GraphSingularDensity):
        return {"kind": "graph-singular", "graph": m.graph_name, "graph_params": m.graph_params,
                "gamma": m.gamma, "delta": m.delta, "amplitude": m.a, "lo": list(m.lo), "hi": list(m.hi)}
    if isinstance(m, HyperplaneSurface):
        return {"kind": "hyperplane", "level": m.level, "density": m.name, "params": m.params,
                "lo": list(m.lo), "hi": list(m.hi)}
    if not m.terms:
        return {"kind": "zero", "dim": m.dim}
    return {"kind": "combination", "dim": m.dim,
            "terms": [{"coef": c, "measure": measure_to_dict(t)} for c, t in m.terms]}
