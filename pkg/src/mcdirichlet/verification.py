"""Independent checks: a finite-difference reference solver, weak-form residuals and level sweeps."""
from __future__ import annotations

import csv
import io
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np
import pyamg
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy import ndimage

from .domain import Box, Domain
from .errors import ConfigError, NonConvergence, UnsupportedKind
from .feynman_kac import BoundaryData, mean_stderr, payoffs
from .lattice import Lattice, build_lattice
from .measures import _tensor_box, eval_density, integrate_against, is_zero
from .mollifier import ball_rule
from .sde import Coefficients, SimConfig, simulate_paths


# --------------------------------------------------------------------------
# test functions
# --------------------------------------------------------------------------


@dataclass
class TestFunction:
    """``exp(1 - 1 / (1 - |x - c|^2 / s^2))`` on ``B_s(c)``, zero outside; peak value 1."""

    __test__ = False  # not a pytest class

    center: tuple
    scale: float
    name: str = "bump"

    def _q(self, X):
        X = np.atleast_2d(np.asarray(X, float))
        z = X - np.asarray(self.center, float)
        return z, np.sum(z * z, axis=1) / self.scale**2

    def __call__(self, X):
        _, q = self._q(X)
        out = np.zeros(len(q))
        ins = q < 1.0
        out[ins] = np.exp(1.0 - 1.0 / (1.0 - q[ins]))
        return out

    def grad(self, X):
        z, q = self._q(X)
        out = np.zeros_like(z)
        ins = q < 1.0
        qi = q[ins]
        v = np.exp(1.0 - 1.0 / (1.0 - qi))
        out[ins] = (-v / (1.0 - qi) ** 2 * 2.0 / self.scale**2)[:, None] * z[ins]
        return out

    @property
    def bbox(self):
        c = np.asarray(self.center, float)
        return c - self.scale, c + self.scale

    def to_dict(self):
        return {"name": self.name, "center": [float(v) for v in self.center], "scale": float(self.scale)}


TEST_FUNCTION_REGISTRY = {"bump": TestFunction}


def test_function(name: str, center, scale) -> TestFunction:
    if name not in TEST_FUNCTION_REGISTRY:
        raise ConfigError(f"unknown test function '{name}'")
    return TEST_FUNCTION_REGISTRY[name](tuple(float(v) for v in center), float(scale), name)


# offsets (units of the inner half-width) and scales of the default basket
_BASKET = [((0.0, 0.0, 0.0), 0.5), ((0.35, 0.0, 0.0), 0.4), ((0.0, -0.3, 0.25), 0.35),
           ((-0.25, 0.25, -0.25), 0.3), ((0.15, 0.3, 0.3), 0.3)]


def default_basket(D: Domain, margin: float = 0.05):
    """Five bumps at varied centres and scales, each at distance >= margin from the boundary."""
    lo, hi = (np.asarray(v, float) for v in D.bbox)
    c0 = 0.5 * (lo + hi)
    w = 0.5 * float(np.min(hi - lo))
    out = []
    for off, s in _BASKET:
        c = c0 + w * np.asarray(off)
        dist = float(D.distance_to_boundary(c[None])[0])
        scale = min(s * w, dist - margin * w)
        if scale <= 0:
            continue
        out.append(TestFunction(tuple(float(v) for v in c), scale))
    return out


# --------------------------------------------------------------------------
# weak residual
# --------------------------------------------------------------------------


class LatticeFunction:
    """Multilinear interpolant of a scalar lattice with centred-difference gradient at half the pitch."""

    def __init__(self, lattice: Lattice, component: int = 0):
        self.lattice = lattice
        self.component = component

    def __call__(self, X):
        return self.lattice.eval(np.atleast_2d(X), strict=False)[:, self.component]

    def grad(self, X):
        X = np.atleast_2d(np.asarray(X, float))
        out = np.zeros_like(X)
        for k, hk in enumerate(self.lattice.pitch):
            if hk == 0:
                continue
            e = np.zeros(X.shape[1])
            e[k] = 0.5 * hk
            out[:, k] = (self(X + e) - self(X - e)) / hk
        return out


def _gradient_of(u, fd_step):
    if hasattr(u, "grad"):
        return u.grad

    def g(X):
        X = np.atleast_2d(np.asarray(X, float))
        out = np.zeros_like(X)
        for k in range(X.shape[1]):
            e = np.zeros(X.shape[1])
            e[k] = fd_step
            out[:, k] = (u(X + e) - u(X - e)) / (2 * fd_step)
        return out

    return g


def weak_residual(u: Callable, coeffs: Optional[Coefficients], rho, tests, n: int = 6, cells: int = 8,
                  fd_step: float = 1e-4):
    """``Q(u, phi_j) - int phi_j d rho`` for each test function.

    ``Q(u, v) = 1/2 int grad u . grad v - sum_i int (d_i u) v d mu_i - int u v d nu``.
    The Lebesgue term uses a Gauss product rule on the test's box; measure
    terms go through ``integrate_against`` on the raw measures.
    """
    coeffs = coeffs or Coefficients()
    grad = _gradient_of(u, fd_step)
    mu, nu, _ = coeffs.components()
    out = []
    for phi in tests:
        lo, hi = phi.bbox
        P, W = _tensor_box(lo, hi, n, cells)
        a = 0.5 * float(np.dot(W, np.sum(grad(P) * phi.grad(P), axis=1)))
        drift = 0.0
        for i, m in enumerate(mu):
            if not is_zero(m):
                drift += integrate_against(m, lambda y, i=i: grad(y)[:, i] * phi(y), lo, hi, n=n, cells=cells)
        kill = 0.0 if is_zero(nu) else integrate_against(nu, lambda y: u(y) * phi(y), lo, hi, n=n, cells=cells)
        src = 0.0 if rho is None or is_zero(rho) else integrate_against(rho, phi, lo, hi, n=n, cells=cells)
        out.append(a - drift - kill - src)
    return out


# --------------------------------------------------------------------------
# Monte Carlo field on a lattice
# --------------------------------------------------------------------------


def _smoothing_stencil():
    """Weights ``int psi(y) hat_k(y) dy`` of the unit bump against the multilinear hat of each 3^3 neighbour."""
    P, w = ball_rule(8, 3)
    out = np.zeros((3, 3, 3))
    for k in np.ndindex(3, 3, 3):
        off = np.asarray(k) - 1
        hat = np.prod(np.clip(1.0 - np.abs(P - off), 0.0, None), axis=1)
        out[k] = float(np.dot(w, hat))
    return out / out.sum()


def _smooth(values, mask):
    """One mollification pass at the lattice pitch: the multilinear interpolant convolved with psi_pitch,
    sampled back at the nodes.  Nodes whose stencil leaves D keep their raw value."""
    w = _smoothing_stencil()
    sm = ndimage.convolve(values, w, mode="nearest")
    full = ndimage.minimum_filter(mask.astype(np.uint8), size=3, mode="constant", cval=0).astype(bool)
    return np.where(full, sm, values)


def mc_field(D: Domain, coeffs: Coefficients, phi: BoundaryData, cfg: SimConfig, lo, hi, pitch: float,
             N_total: int, smooth: bool = False, workers: int = 1):
    """``estimate_u`` at every lattice node inside D (same seed at every node).

    Nodes outside D carry the boundary data at their projection.  Returns the
    value lattice and a matching lattice of standard errors.
    """
    lo = np.maximum(np.asarray(lo, float), D.bbox[0])
    hi = np.minimum(np.asarray(hi, float), D.bbox[1])
    grid = build_lattice(lambda P: np.zeros(len(P)), lo, hi, pitch)
    P = grid.node_points()
    ins = D.contains(P)
    n_in = int(ins.sum())
    if n_in == 0:
        raise ValueError("no lattice node inside D")
    per = max(N_total // n_in, 2)
    vals = np.zeros(len(P))
    errs = np.zeros(len(P))
    out_pts = P[~ins]
    if len(out_pts):
        vals[~ins] = phi(D.boundary_project(out_pts))
    node_cfg = replace(cfg, workers=1)

    def one(x):
        b = simulate_paths(x, D, coeffs, node_cfg, per)
        return mean_stderr(payoffs(b, phi))

    idx = np.flatnonzero(ins)
    if workers > 1:
        with ThreadPoolExecutor(workers) as ex:
            res = list(ex.map(one, P[idx]))
    else:
        res = [one(x) for x in P[idx]]
    vals[idx] = [r[0] for r in res]
    errs[idx] = [r[1] for r in res]
    shape = grid.shape
    V = vals.reshape(shape)
    if smooth:
        V = _smooth(V, ins.reshape(shape))
    mk = lambda A: Lattice(lo=grid.lo, pitch=grid.pitch, values=A.reshape(shape + (1,)))  # noqa: E731
    return mk(V), mk(errs.reshape(shape)), per * n_in


# --------------------------------------------------------------------------
# finite differences on a box
# --------------------------------------------------------------------------


@dataclass
class FDSolution:
    lattice: Lattice
    grid_n: int
    residual: float
    iterations: int

    def __call__(self, x):
        x = np.asarray(x, float)
        v = self.lattice.eval(np.atleast_2d(x))[:, 0]
        return float(v[0]) if x.ndim == 1 else v

    def center_value(self):
        return self(0.5 * (self.lattice.lo + self.lattice.hi))


def _vec(fn, P):
    return None if fn is None else np.asarray(fn(P), float)


def fd_oracle_solve(D: Box, b: Optional[Callable] = None, q: Optional[Callable] = None,
                    f: Optional[Callable] = None, phi: Optional[Callable] = None, grid_n: int = 65,
                    tol: float = 1e-10, maxiter: int = 300) -> FDSolution:
    """Solve ``1/2 Lap u + b . grad u + q u = -f``, ``u = phi`` on the box faces.

    Seven-point central differences on ``grid_n`` nodes per axis; the
    interior system is solved by CG (BiCGSTAB with a drift) preconditioned
    by smoothed-aggregation AMG, to relative residual ``tol``.
    """
    if not isinstance(D, Box):
        raise UnsupportedKind("the finite-difference oracle runs on Box domains only")
    if grid_n < 3 or grid_n > 129:
        raise ValueError("grid_n must lie in [3, 129]")
    d = D.dim
    lo, hi = np.asarray(D.lo, float), np.asarray(D.hi, float)
    n = int(grid_n)
    hs = (hi - lo) / (n - 1)
    axes = [np.linspace(lo[k], hi[k], n) for k in range(d)]
    P = np.stack([g.ravel() for g in np.meshgrid(*axes, indexing="ij")], axis=-1)
    eye = sp.identity(n, format="csr")
    second = sp.diags([1.0, -2.0, 1.0], [-1, 0, 1], shape=(n, n), format="csr")
    first = sp.diags([-1.0, 1.0], [-1, 1], shape=(n, n), format="csr")

    def along(k, M):
        out = None
        for j in range(d):
            f_j = M if j == k else eye
            out = f_j if out is None else sp.kron(out, f_j, format="csr")
        return out

    A = sum(0.5 / hs[k] ** 2 * along(k, second) for k in range(d))
    bv = _vec(b, P)
    if bv is not None:
        bv = np.broadcast_to(bv, (len(P), d))
        for k in range(d):
            A = A + sp.diags(bv[:, k] / (2 * hs[k])) @ along(k, first)
    qv = _vec(q, P)
    if qv is not None:
        A = A + sp.diags(np.broadcast_to(qv, (len(P),)))
    A = A.tocsr()
    idx = np.indices((n,) * d).reshape(d, -1).T
    interior = np.all((idx > 0) & (idx < n - 1), axis=1)
    I = np.flatnonzero(interior)
    B = np.flatnonzero(~interior)
    uB = np.zeros(len(B)) if phi is None else np.asarray(phi(P[B]), float)
    fv = np.zeros(len(I)) if f is None else np.broadcast_to(np.asarray(f(P[I]), float), (len(I),))
    AI = A[I]
    M = (-AI[:, I]).tocsr()
    rhs = fv + AI[:, B] @ uB
    ml = pyamg.smoothed_aggregation_solver(M, symmetry="symmetric" if bv is None else "nonsymmetric")
    nr = float(np.linalg.norm(rhs)) or 1.0
    its = [0]

    def count(_):
        its[0] += 1

    solver = spla.cg if bv is None else spla.bicgstab
    x, info = solver(M, rhs, rtol=tol, atol=0.0, maxiter=maxiter, M=ml.aspreconditioner(), callback=count)
    rel = float(np.linalg.norm(rhs - M @ x)) / nr
    if info != 0 or not np.all(np.isfinite(x)) or rel > 10 * tol:
        raise NonConvergence(f"FD solve stalled at relative residual {rel:.2e}; q may be too large")
    u = np.zeros(len(P))
    u[I] = x
    u[B] = uB
    lat = Lattice(lo=lo, pitch=hs, values=u.reshape((n,) * d + (1,)))
    return FDSolution(lattice=lat, grid_n=n, residual=rel, iterations=its[0])


def fd_self_convergence(D: Box, grids=(33, 65, 129), point=None, **kw):
    """Values at ``point`` (default: box centre) across grids and the ratio of successive differences."""
    pt = 0.5 * (np.asarray(D.lo) + np.asarray(D.hi)) if point is None else np.asarray(point, float)
    vals = [fd_oracle_solve(D, grid_n=g, **kw)(pt) for g in grids]
    diffs = [a - b for a, b in zip(vals, vals[1:])]
    ratios = [diffs[i] / diffs[i + 1] for i in range(len(diffs) - 1) if diffs[i + 1] != 0]
    rich = vals[-1] + (vals[-1] - vals[-2]) / 3.0 if len(vals) >= 2 else vals[-1]
    return {"grids": list(grids), "values": vals, "diffs": diffs, "ratios": ratios, "richardson": rich}


# --------------------------------------------------------------------------
# convergence sweeps
# --------------------------------------------------------------------------


CSV_HEADER = ["h", "level", "N", "value", "stderr", "diff"]


@dataclass
class ConvergenceTable:
    rows: list
    diff_stderr: list = field(default_factory=list)

    @property
    def diffs(self):
        return [r["diff"] for r in self.rows[1:]]

    def shrink_ratios(self):
        d = [abs(x) for x in self.diffs]
        return [d[i] / d[i + 1] for i in range(len(d) - 1) if d[i + 1] > 0]

    def to_csv(self, path=None):
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=CSV_HEADER, lineterminator="\n")
        w.writeheader()
        for r in self.rows:
            w.writerow({k: ("" if r[k] is None else repr(r[k]) if isinstance(r[k], float) else r[k])
                        for k in CSV_HEADER})
        text = buf.getvalue()
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text


def convergence_study(x0, D: Domain, coeffs: Coefficients, phi: BoundaryData, levels, seed: int,
                      coupled: bool = True, base: Optional[SimConfig] = None) -> ConvergenceTable:
    """``estimate_u`` at each ``(h, n, N)``; levels must come in decreasing h.

    With ``coupled`` and step sizes that are integer multiples of the finest
    one, every level draws its increments from the finest Brownian path
    (``substeps = h / h_min``), so successive differences have small variance.
    """
    hs = [float(h) for h, _, _ in levels]
    if any(b > a for a, b in zip(hs, hs[1:])):
        raise ValueError("levels must be ordered by decreasing h")
    hmin = hs[-1]
    base = base or SimConfig(seed=seed)
    rows, prev_pay, dse = [], None, []
    for h, n, N in levels:
        m = h / hmin
        sub = int(round(m)) if coupled and abs(m - round(m)) < 1e-9 else 1
        cfg = replace(base, seed=seed, h=float(h), level=None if n is None else int(n), substeps=sub)
        batch = simulate_paths(x0, D, coeffs, cfg, int(N))
        pay = payoffs(batch, phi)
        v, se = mean_stderr(pay)
        diff = None if not rows else v - rows[-1]["value"]
        if prev_pay is not None:
            k = min(len(pay), len(prev_pay))
            dse.append(mean_stderr(pay[:k] - prev_pay[:k])[1])
        rows.append({"h": float(h), "level": cfg.resolved_level(), "N": int(N), "value": v, "stderr": se,
                     "diff": diff})
        prev_pay = pay
    return ConvergenceTable(rows=rows, diff_stderr=dse)


def relative_gap(a: float, b: float, se: float, rel: float = 0.01, k: float = 3.0) -> bool:
    """``|a - b| <= rel |b| + k se``."""
    return bool(abs(a - b) <= rel * abs(b) + k * se)


def fd_solve_problem(problem, grid_n: int = 65, **kw) -> FDSolution:
    """Finite-difference oracle for a Box problem with density-valued coefficients."""
    mu, nu, rho = problem.coeffs.components()

    def b(P):
        return np.stack([eval_density(m, P) for m in mu], axis=1)

    return fd_oracle_solve(problem.domain, b=b, q=lambda P: eval_density(nu, P),
                           f=lambda P: eval_density(rho, P), phi=problem.phi, grid_n=grid_n, **kw)
