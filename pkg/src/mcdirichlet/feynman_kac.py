"""Solution, gauge and moment estimators assembled from simulated paths.

The payoff of one path is ``e^{L_tau} phi(X_tau) + int_0^tau e^{L_s} dV_s``.
With ``nu = 0`` every weight is exactly ``e^0 = 1`` and the weighted V
accumulator coincides bit for bit with the plain one.
"""
from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .domain import Domain
from .errors import ConfigError, GaugeDivergenceWarning
from .sde import Coefficients, PathBatch, SimConfig, simulate_paths


# --------------------------------------------------------------------------
# boundary data
# --------------------------------------------------------------------------


@dataclass
class BoundaryData:
    name: str
    fn: Callable
    params: dict = field(default_factory=dict)
    smoothness: str = "C1,alpha"

    def __call__(self, x):
        x = np.atleast_2d(np.asarray(x, float))
        return np.asarray(self.fn(x), float)


def _linear(coef=(1.0, 0.0, 0.0), const=0.0):
    c = np.asarray(coef, float)
    return lambda x: x @ c[: x.shape[1]] + float(const)


def _exp_drift(b=(0.5, 0.0, 0.0)):
    bb = np.asarray(b, float)
    return lambda x: np.exp(-2.0 * (x @ bb[: x.shape[1]]))


def _constant(value=1.0):
    v = float(value)
    return lambda x: np.full(x.shape[0], v)


def _poly(terms):
    terms = [(float(c), tuple(int(e) for e in ex)) for c, ex in terms]

    def f(x):
        out = np.zeros(x.shape[0])
        for c, ex in terms:
            out += c * np.prod(x[:, : len(ex)] ** np.asarray(ex, float), axis=1)
        return out

    return f


BOUNDARY_REGISTRY = {
    "linear": lambda p: _linear(p.get("coef", [1.0, 0.0, 0.0]), p.get("const", 0.0)),
    "exp-drift": lambda p: _exp_drift(p.get("b", [0.5, 0.0, 0.0])),
    "constant": lambda p: _constant(p.get("value", 1.0)),
    "zero": lambda p: _constant(0.0),
    "polynomial": lambda p: _poly(p["terms"]),
}


def boundary_data(name: str, params: Optional[dict] = None) -> BoundaryData:
    if name not in BOUNDARY_REGISTRY:
        raise ConfigError(f"unknown boundary data '{name}'; known: {sorted(BOUNDARY_REGISTRY)}")
    params = dict(params or {})
    return BoundaryData(name=name, fn=BOUNDARY_REGISTRY[name](params), params=params)


# --------------------------------------------------------------------------
# estimates
# --------------------------------------------------------------------------


@dataclass
class Estimate:
    value: float
    stderr: float
    n_paths: int
    n_capped: int
    h: float
    level: int
    seed: int
    point: Optional[list] = None

    def to_dict(self):
        return {"point": self.point, "value": self.value, "stderr": self.stderr, "n_paths": self.n_paths,
                "n_capped": self.n_capped, "h": self.h, "level": self.level, "seed": self.seed}

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True)


def mean_stderr(v):
    v = np.asarray(v, float)
    n = v.size
    m = float(np.mean(v))
    se = float(np.std(v, ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    return m, se


def _estimate(vals, batch: PathBatch, cfg: SimConfig, x0) -> Estimate:
    m, se = mean_stderr(vals)
    return Estimate(value=m, stderr=se, n_paths=int(vals.size), n_capped=batch.n_capped, h=cfg.h,
                    level=cfg.resolved_level(), seed=int(cfg.seed),
                    point=[float(v) for v in np.asarray(x0, float)])


def payoffs(batch: PathBatch, phi: BoundaryData):
    """Per-path ``e^{L} phi(X_tau) + Vw``."""
    return np.exp(batch.L) * phi(batch.boundary_points()) + batch.Vw


def estimate_u(x0, D: Domain, coeffs: Coefficients, phi: BoundaryData, cfg: SimConfig, N: int,
               return_batch=False):
    """Monte Carlo estimate of u(x0); warns when the gauge weights look heavy tailed."""
    if N < 100:
        raise ValueError("N must be at least 100")
    if not D.contains(np.asarray(x0, float)):
        raise ValueError("x0 must lie inside D")
    batch = simulate_paths(x0, D, coeffs, cfg, N)
    vals = payoffs(batch, phi)
    if coeffs.has_nu:
        w = np.exp(batch.L)
        wm, wse = mean_stderr(w)
        if wm > 0 and wse / wm > 0.5:
            warnings.warn(f"gauge weights e^L have relative stderr {wse / wm:.2f}; the gauge may be infinite",
                          GaugeDivergenceWarning, stacklevel=2)
    est = _estimate(vals, batch, cfg, x0)
    return (est, batch) if return_batch else est


# --------------------------------------------------------------------------
# gauge and Khasminskii diagnostics
# --------------------------------------------------------------------------


@dataclass
class GaugeReport:
    gauge: Estimate
    beta: Estimate
    khasminskii_bound: float
    bound_holds: bool
    abs_gauge: Estimate
    abs_bound_holds: bool
    beta_point: list

    def to_dict(self):
        return {"gauge": self.gauge.to_dict(), "beta": self.beta.to_dict(),
                "khasminskii_bound": self.khasminskii_bound if math.isfinite(self.khasminskii_bound) else None,
                "bound_holds": self.bound_holds, "abs_gauge": self.abs_gauge.to_dict(),
                "abs_bound_holds": self.abs_bound_holds, "beta_point": self.beta_point}


def probe_grid(D: Domain, per_axis: int = 7):
    lo, hi = D.bbox
    axes = [np.linspace(a, b, per_axis + 2)[1:-1] for a, b in zip(lo, hi)]
    g = np.meshgrid(*axes, indexing="ij")
    P = np.stack([x.ravel() for x in g], axis=-1)
    return P[D.contains(P)]


def _bound_ok(est: Estimate, bound: float, slack: float = 0.0):
    if not math.isfinite(bound):
        return True
    rel = est.stderr / est.value if est.value > 0 else 0.0
    return bool(est.value <= bound * (1.0 + 3.0 * rel + slack))


def estimate_gauge(x0, D: Domain, nu, cfg: SimConfig, N: int, probe_per_axis: int = 7,
                   probe_paths: int = 2000, return_batch=False):
    """Gauge ``E_x0[e^{L_tau}]`` with a probe-grid estimate of ``beta = sup_x E_x |L|_tau``.

    The probe grid only gives a lower estimate of the true sup; the returned
    ``beta`` is the largest probe mean (``x0`` included, with the main paths).
    """
    d = D.dim
    coeffs = Coefficients(mu=None, nu=nu, rho=None, dim=d)
    batch = simulate_paths(x0, D, coeffs, cfg, N)
    g = _estimate(np.exp(batch.L), batch, cfg, x0)
    ag = _estimate(np.exp(batch.abs_L), batch, cfg, x0)
    best = _estimate(batch.abs_L, batch, cfg, x0)
    if probe_per_axis > 0 and nu is not None:
        for p in probe_grid(D, probe_per_axis):
            if np.allclose(p, x0):
                continue
            pb = simulate_paths(p, D, coeffs, cfg, probe_paths)
            e = _estimate(pb.abs_L, pb, cfg, p)
            if e.value > best.value:
                best = e
    beta = best.value
    bound = 1.0 / (1.0 - beta) if beta < 1 else math.inf
    rep = GaugeReport(gauge=g, beta=best, khasminskii_bound=bound, bound_holds=_bound_ok(g, bound),
                      abs_gauge=ag, abs_bound_holds=_bound_ok(ag, bound), beta_point=best.point)
    return (rep, batch) if return_batch else rep


def khasminskii_moments(abs_L, beta: float, max_k: int):
    """Rows ``(k, E|L|^k, stderr, k! beta^k, ok)``."""
    rows = []
    for k in range(1, max_k + 1):
        v = np.asarray(abs_L, float) ** k
        m, se = mean_stderr(v)
        bound = math.factorial(k) * beta**k
        rel = se / m if m > 0 else 0.0
        rows.append((k, m, se, bound, bool(m <= bound * (1.0 + 3.0 * rel))))
    return rows


def khasminskii_moment_check(x0, D: Domain, nu, cfg: SimConfig, N: int, max_k: int = 4,
                             beta: Optional[float] = None, **gauge_kw) -> bool:
    """Empirical ``E|L|^k <= k! beta^k (1 + 3 rel-stderr)`` for k = 1..max_k."""
    if max_k > 6:
        raise ValueError("max_k must be at most 6")
    if nu is not None and not _one_signed(nu):
        raise ValueError("moment check needs a one-signed nu")
    rep, batch = estimate_gauge(x0, D, nu, cfg, N, return_batch=True, **gauge_kw)
    b = rep.beta.value if beta is None else beta
    return all(r[-1] for r in khasminskii_moments(batch.abs_L, b, max_k))


def _one_signed(m):
    from .measures import is_one_signed

    return is_one_signed(m)
