"""Pure-numpy path kernel, vectorised over paths.

Mirrors ``_ckernel.pyx`` step for step; also the only backend for
signed-distance domains.
"""
from __future__ import annotations

import numpy as np

from .rng import BRIDGE_SLOT, path_key, step_normals, uniform

NAME = "numpy"


def run_paths(plan, paths, st):
    """Advance every path in ``st`` (a dict of state arrays) in place."""
    d = plan.d
    D = plan.domain
    lat = plan.lattice
    h = plan.h
    sqh = np.sqrt(h)
    paths = np.asarray(paths, dtype=np.int64)
    if plan.antithetic:
        keys = path_key(plan.seed, paths // 2)
        sign = np.where(paths % 2 == 1, -1.0, 1.0)
    else:
        keys = path_key(plan.seed, paths)
        sign = np.ones(len(paths))
    X, status, counter = st["x"], st["status"], st["counter"]
    done_steps = 0
    while True:
        if plan.step_limit >= 0 and done_steps >= plan.step_limit:
            break
        act = np.flatnonzero(status == 0)
        if act.size == 0:
            break
        cap = counter[act] >= plan.nmax
        if cap.any():
            status[act[cap]] = 2
            act = act[~cap]
            if act.size == 0:
                break
        x = X[act]
        G = lat.eval(x, strict=False, fill=plan.lattice_fill)[:, :d]
        xi = step_normals(keys[act], counter[act].astype(np.uint64), d, plan.substeps) * sign[act, None]
        xn = x + G * h + sqh * xi
        bad = ~np.all(np.isfinite(xn), axis=1)
        tstar, hit = D.segment_exit_batch(x, np.where(bad[:, None], x, xn))
        exited = ~np.isnan(tstar)
        frac = np.where(exited, tstar, 1.0)
        xend = np.where(exited[:, None], hit, xn)
        if plan.bridge:
            cand = np.flatnonzero(~exited & ~bad)
            if cand.size:
                da = D.distance_to_boundary(x[cand])
                db = D.distance_to_boundary(xn[cand])
                p = np.exp(-2.0 * da * db / h)
                u = uniform(keys[act[cand]], counter[act[cand]].astype(np.uint64), BRIDGE_SLOT)
                hitb = cand[u < p]
                if hitb.size:
                    exited[hitb] = True
                    frac[hitb] = 0.5
                    xend[hitb] = D.boundary_project(0.5 * (x[hitb] + xn[hitb]))
        dt = frac * h
        xq = x if plan.rule == 0 else 0.5 * (x + xend)
        F = lat.eval(xq, strict=False, fill=plan.lattice_fill)
        nu, anu, rho, arho = F[:, d], F[:, d + 1], F[:, d + 2], F[:, d + 3]
        L = st["L"][act]
        st["Vw"][act] += np.exp(L) * rho * dt
        st["V"][act] += rho * dt
        st["absV"][act] += arho * dt
        st["L"][act] = L + nu * dt
        st["absL"][act] += anu * dt
        st["disp"][act] += G * dt[:, None]
        st["t"][act] += dt
        X[act] = xend
        counter[act] += 1
        status[act[exited]] = 1
        status[act[bad]] = 3
        done_steps += 1
