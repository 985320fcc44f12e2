"""Bounded domains: membership, signed distance, projection and exit detection."""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

BISECT_TOL = 1e-10
SDF_SAMPLES = 8


def _pts(x):
    x = np.asarray(x, dtype=float)
    return x[None, :] if x.ndim == 1 else x


class Domain:
    """Base class. Subclasses implement ``signed_distance`` and ``boundary_project``.

    All geometric methods accept a single point ``(d,)`` or a batch ``(n, d)``.
    """

    kind: str = "domain"
    dim: int

    def signed_distance(self, x):
        raise NotImplementedError

    def boundary_project(self, x):
        raise NotImplementedError

    @property
    def bbox(self):
        raise NotImplementedError

    @property
    def diameter(self) -> float:
        raise NotImplementedError

    def contains(self, x):
        sd = self.signed_distance(x)
        return sd < 0

    def segment_exit(self, a, b):
        """First crossing of the segment a -> b, or ``None`` when it stays inside.

        Returns ``(t_star, hit)`` with ``t_star`` in [0, 1] and ``hit`` on the
        boundary.
        """
        a = np.asarray(a, float)
        b = np.asarray(b, float)
        t, hit = self.segment_exit_batch(a[None], b[None])
        if np.isnan(t[0]):
            return None
        return float(t[0]), hit[0]

    def segment_exit_batch(self, a, b):
        """Vectorised form; rows that do not exit get ``t = nan``."""
        a = _pts(a)
        b = _pts(b)
        n = a.shape[0]
        ts = np.linspace(0.0, 1.0, SDF_SAMPLES + 2)[1:]
        t_out = np.full(n, np.nan)
        hit = np.full_like(a, np.nan)
        lo = np.zeros(n)
        hi = np.full(n, np.nan)
        for t in ts:
            sd = self.signed_distance(a + t * (b - a))
            new = np.isnan(hi) & (sd >= 0)
            hi[new] = t
            lo[np.isnan(hi)] = t
        rows = np.flatnonzero(~np.isnan(hi))
        if rows.size == 0:
            return t_out, hit
        lo_r, hi_r = lo[rows], hi[rows]
        ar, br = a[rows], b[rows]
        while np.any(hi_r - lo_r > BISECT_TOL):
            mid = 0.5 * (lo_r + hi_r)
            sd = self.signed_distance(ar + mid[:, None] * (br - ar))
            out = sd >= 0
            hi_r = np.where(out, mid, hi_r)
            lo_r = np.where(out, lo_r, mid)
        t_out[rows] = hi_r
        hit[rows] = self.boundary_project(ar + hi_r[:, None] * (br - ar))
        return t_out, hit

    def distance_to_boundary(self, x):
        return np.abs(self.signed_distance(x))

    def bridge_exit_probability(self, a, b, h):
        """Half-space Brownian-bridge estimate exp(-2 d_a d_b / h) of an unseen exit."""
        da = self.distance_to_boundary(a)
        db = self.distance_to_boundary(b)
        p = np.exp(-2.0 * da * db / h)
        return float(p) if np.ndim(p) == 0 else p


@dataclass(frozen=True, eq=False)
class Ball(Domain):
    center: tuple
    radius: float
    kind: str = field(default="ball", init=False)

    def __post_init__(self):
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))
        if self.radius <= 0:
            raise ValueError("radius must be positive")

    @property
    def dim(self):
        return len(self.center)

    @property
    def c(self):
        return np.asarray(self.center)

    @property
    def bbox(self):
        return self.c - self.radius, self.c + self.radius

    @property
    def diameter(self):
        return 2.0 * self.radius

    def signed_distance(self, x):
        x = np.asarray(x, float)
        return np.linalg.norm(x - self.c, axis=-1) - self.radius

    def boundary_project(self, x):
        x = np.asarray(x, float)
        v = x - self.c
        nrm = np.linalg.norm(v, axis=-1, keepdims=True)
        e = np.zeros_like(v)
        e[..., 0] = 1.0
        u = np.where(nrm > 0, v / np.where(nrm > 0, nrm, 1.0), e)
        return self.c + self.radius * u

    def segment_exit_batch(self, a, b):
        a = _pts(a)
        b = _pts(b)
        c = self.c
        dv = b - a
        ac = a - c
        A = np.einsum("ij,ij->i", dv, dv)
        B = 2 * np.einsum("ij,ij->i", ac, dv)
        C = np.einsum("ij,ij->i", ac, ac) - self.radius**2
        out = np.einsum("ij,ij->i", b - c, b - c) >= self.radius**2
        t = np.full(a.shape[0], np.nan)
        hit = np.full_like(a, np.nan)
        if out.any():
            Ao, Bo, Co = A[out], B[out], C[out]
            disc = np.sqrt(np.maximum(Bo**2 - 4 * Ao * Co, 0.0))
            # positive root, written to avoid cancellation
            with np.errstate(divide="ignore", invalid="ignore"):
                tt = np.where(Bo >= 0, -2 * Co / (Bo + disc), (disc - Bo) / (2 * Ao))
            tt = np.clip(np.nan_to_num(tt, nan=0.0), 0.0, 1.0)
            t[out] = tt
            hit[out] = self.boundary_project(a[out] + tt[:, None] * dv[out])
        return t, hit


@dataclass(frozen=True, eq=False)
class Box(Domain):
    lo: tuple
    hi: tuple
    kind: str = field(default="box", init=False)

    def __post_init__(self):
        object.__setattr__(self, "lo", tuple(float(v) for v in self.lo))
        object.__setattr__(self, "hi", tuple(float(v) for v in self.hi))
        if any(h <= l for l, h in zip(self.lo, self.hi)):
            raise ValueError("box needs lo < hi on every axis")

    @property
    def dim(self):
        return len(self.lo)

    @property
    def bbox(self):
        return np.asarray(self.lo), np.asarray(self.hi)

    @property
    def diameter(self):
        return float(np.linalg.norm(np.subtract(self.hi, self.lo)))

    def signed_distance(self, x):
        x = np.asarray(x, float)
        lo, hi = self.bbox
        ctr = 0.5 * (lo + hi)
        half = 0.5 * (hi - lo)
        q = np.abs(x - ctr) - half
        outside = np.linalg.norm(np.maximum(q, 0.0), axis=-1)
        inside = np.minimum(q.max(axis=-1), 0.0)
        return outside + inside

    def boundary_project(self, x):
        x = np.asarray(x, float)
        lo, hi = self.bbox
        y = np.clip(x, lo, hi)
        interior = np.all((x > lo) & (x < hi), axis=-1)
        if np.any(interior):
            xi = np.atleast_2d(x)[np.atleast_1d(interior)]
            dlo = xi - lo
            dhi = hi - xi
            dmin = np.minimum(dlo, dhi)
            ax = np.argmin(dmin, axis=-1)
            rows = np.arange(xi.shape[0])
            to_lo = dlo[rows, ax] <= dhi[rows, ax]
            yi = xi.copy()
            yi[rows, ax] = np.where(to_lo, lo[ax], hi[ax])
            y = np.atleast_2d(y)
            y[np.atleast_1d(interior)] = yi
            if x.ndim == 1:
                y = y[0]
        return y

    def segment_exit_batch(self, a, b):
        a = _pts(a)
        b = _pts(b)
        lo, hi = self.bbox
        dv = b - a
        out = np.any((b <= lo) | (b >= hi), axis=-1)
        t = np.full(a.shape[0], np.nan)
        hit = np.full_like(a, np.nan)
        if out.any():
            ao, do = a[out], dv[out]
            with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
                t_hi = np.where(do > 0, (hi - ao) / do, np.inf)
                t_lo = np.where(do < 0, (lo - ao) / do, np.inf)
            tax = np.minimum(t_hi, t_lo)
            ax = np.argmin(tax, axis=-1)
            rows = np.arange(ao.shape[0])
            tt = np.clip(tax[rows, ax], 0.0, 1.0)
            p = ao + tt[:, None] * do
            p = np.clip(p, lo, hi)
            p[rows, ax] = np.where(do[rows, ax] > 0, hi[ax], lo[ax])
            t[out] = tt
            hit[out] = p
        return t, hit


@dataclass(frozen=True, eq=False)
class SmoothSDF(Domain):
    """Domain given by a signed-distance callable ``sdf(x) -> (n,)``.

    The callable only needs to be an accurate (1-Lipschitz) distance near the
    boundary; ``check_sdf`` samples that and warns otherwise.
    """

    sdf: Callable
    lo: tuple
    hi: tuple
    name: str = "custom"
    kind: str = field(default="sdf", init=False)

    def __post_init__(self):
        object.__setattr__(self, "lo", tuple(float(v) for v in self.lo))
        object.__setattr__(self, "hi", tuple(float(v) for v in self.hi))

    @property
    def dim(self):
        return len(self.lo)

    @property
    def bbox(self):
        return np.asarray(self.lo), np.asarray(self.hi)

    @property
    def diameter(self):
        return float(np.linalg.norm(np.subtract(self.hi, self.lo)))

    def signed_distance(self, x):
        x = np.asarray(x, float)
        if x.ndim == 1:
            return float(self.sdf(x[None])[0])
        return np.asarray(self.sdf(x), float)

    def gradient(self, x, step=1e-6):
        x = _pts(x)
        g = np.empty_like(x)
        for k in range(x.shape[1]):
            e = np.zeros(x.shape[1])
            e[k] = step
            g[:, k] = (self.sdf(x + e) - self.sdf(x - e)) / (2 * step)
        return g

    def boundary_project(self, x, tol=1e-7, max_iter=50):
        x0 = np.asarray(x, float)
        y = _pts(x0).copy()
        for _ in range(max_iter):
            sd = self.sdf(y)
            if np.all(np.abs(sd) < 0.1 * tol):
                break
            g = self.gradient(y)
            gn = np.einsum("ij,ij->i", g, g)
            flat = gn < 1e-16  # medial-axis point: any direction leads to the boundary
            if flat.any():
                g[flat] = 0.0
                g[flat, 0] = 1.0
                gn[flat] = 1.0
            y = y - (sd / gn)[:, None] * g
        return y[0] if x0.ndim == 1 else y

    def check_sdf(self, n=256, seed=0, band=0.05, tol=0.05):
        """Sample near the boundary and warn when |grad sdf| strays from 1."""
        rng = np.random.default_rng(seed)
        lo, hi = self.bbox
        x = rng.uniform(lo, hi, size=(n * 8, self.dim))
        near = np.abs(self.sdf(x)) < band * self.diameter
        x = x[near][:n]
        if x.shape[0] == 0:
            return True
        gn = np.linalg.norm(self.gradient(x), axis=-1)
        ok = bool(np.all(np.abs(gn - 1) < tol))
        if not ok:
            warnings.warn(
                f"SDF '{self.name}' is not 1-Lipschitz-accurate near the boundary "
                f"(|grad| in [{gn.min():.3f}, {gn.max():.3f}])",
                stacklevel=2,
            )
        return ok


# --- named SDF registry ------------------------------------------------------


def _ellipsoid(axes):
    axes = np.asarray(axes, float)

    def sdf(x):
        k0 = np.linalg.norm(x / axes, axis=-1)
        k1 = np.linalg.norm(x / axes**2, axis=-1)
        return np.where(k1 > 0, k0 * (k0 - 1.0) / np.where(k1 > 0, k1, 1.0), -axes.min())

    return sdf, -axes, axes


def _rounded_box(half, rounding):
    half = np.asarray(half, float)

    def sdf(x):
        q = np.abs(x) - half + rounding
        return (
            np.linalg.norm(np.maximum(q, 0.0), axis=-1)
            + np.minimum(q.max(axis=-1), 0.0)
            - rounding
        )

    return sdf, -half, half


def _blob(radius, offset, smooth):
    off = np.asarray(offset, float)

    def sdf(x):
        d1 = np.linalg.norm(x - off, axis=-1) - radius
        d2 = np.linalg.norm(x + off, axis=-1) - radius
        hh = np.clip(0.5 + 0.5 * (d2 - d1) / smooth, 0.0, 1.0)
        return d2 * (1 - hh) + d1 * hh - smooth * hh * (1 - hh)

    ext = np.abs(off) + radius
    return sdf, -ext, ext


SDF_REGISTRY = {
    "ellipsoid": lambda p: _ellipsoid(p.get("axes", [1.0, 0.8, 0.6])),
    "rounded-box": lambda p: _rounded_box(p.get("half", [1.0, 1.0, 1.0]), p.get("rounding", 0.2)),
    "blob": lambda p: _blob(p.get("radius", 0.7), p.get("offset", [0.3, 0.0, 0.0]), p.get("smooth", 0.3)),
}


def make_sdf_domain(name: str, params: Optional[dict] = None) -> SmoothSDF:
    params = dict(params or {})
    if name not in SDF_REGISTRY:
        raise KeyError(f"unknown SDF '{name}'; known: {sorted(SDF_REGISTRY)}")
    sdf, lo, hi = SDF_REGISTRY[name](params)
    return SmoothSDF(sdf=sdf, lo=tuple(lo), hi=tuple(hi), name=name)


def domain_from_dict(spec: dict) -> Domain:
    kind = spec["kind"]
    if kind == "ball":
        return Ball(center=spec["center"], radius=float(spec["radius"]))
    if kind == "box":
        return Box(lo=spec["lo"], hi=spec["hi"])
    if kind == "sdf":
        return make_sdf_domain(spec["name"], spec.get("params"))
    raise KeyError(f"unknown domain kind '{kind}'")


def domain_to_dict(D: Domain) -> dict:
    if isinstance(D, Ball):
        return {"kind": "ball", "center": list(D.center), "radius": D.radius}
    if isinstance(D, Box):
        return {"kind": "box", "lo": list(D.lo), "hi": list(D.hi)}
    return {"kind": "sdf", "name": D.name}
