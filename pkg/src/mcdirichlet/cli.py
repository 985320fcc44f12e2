"""Command-line front end: ``mcdirichlet <command> --config run.yaml``.

Exit codes: 0 success, 1 failed check or runtime error, 2 config error.
Outputs are JSON (CSV for ``sweep``), carry the resolved config, and contain
nothing that depends on timing or the worker count.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import acceptance
from .config import RunConfig, load_config
from .domain import Ball
from .errors import ConfigError, MCDirichletError
from .feynman_kac import estimate_gauge, estimate_u, khasminskii_moments
from .green import BallGreen, contraction_factor, contraction_solve
from .instances import INSTANCE_NAMES
from .measures import classify_kato, constant_density, is_zero, measure_from_dict
from .verification import convergence_study, fd_solve_problem

COMMANDS = ("solve", "kato", "gauge", "oracle", "verify", "sweep")


def _default(v):
    if isinstance(v, np.bool_):
        return bool(v)
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    if isinstance(v, np.ndarray):
        return v.tolist()
    if hasattr(v, "to_dict"):
        return v.to_dict()
    raise TypeError(f"not serialisable: {type(v).__name__}")


def dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2, default=_default) + "\n"


def _emit(text: str, out):
    if out is None:
        sys.stdout.write(text)
    else:
        Path(out).write_text(text)


def _envelope(command, rc: RunConfig, **payload):
    return {"command": command, "config": rc.to_dict(), **payload}


# --------------------------------------------------------------------------


def cmd_solve(rc: RunConfig, out=None, workers=1) -> int:
    p = rc.problem()
    cfg = rc.sim_config(workers)
    N = rc.n_paths()
    ests = [estimate_u(np.asarray(x, float), p.domain, p.coeffs, p.phi, cfg, N).to_dict() for x in p.probes]
    res = _envelope("solve", rc, sim=cfg.echo(), estimates=ests)
    if p.exact is not None:
        res["exact"] = p.exact
    _emit(dumps(res), out)
    return 0


def _kato_targets(rc: RunConfig):
    blk = rc.block("kato")
    if blk.get("measures"):
        return [(m.get("label", f"measure{i}"), measure_from_dict(m["measure"]))
                for i, m in enumerate(blk["measures"])]
    mu, nu, rho = rc.problem().coeffs.components()
    named = [(f"mu{i}", m) for i, m in enumerate(mu)] + [("nu", nu), ("rho", rho)]
    return [(k, m) for k, m in named if not is_zero(m)]


def cmd_kato(rc: RunConfig, out=None, workers=1) -> int:
    blk = rc.block("kato")
    alpha = float(blk.get("alpha", 1.0))
    radii = blk.get("radii", acceptance.KATO_RADII)
    thr = float(blk.get("threshold", 0.2))
    reports = {label: classify_kato(m, alpha, radii, threshold=thr).to_dict() for label, m in _kato_targets(rc)}
    _emit(dumps(_envelope("kato", rc, reports=reports)), out)
    return 0


def cmd_gauge(rc: RunConfig, out=None, workers=1) -> int:
    p = rc.problem()
    blk = rc.block("gauge")
    cfg = rc.sim_config(workers)
    _, nu, _ = p.coeffs.components()
    rep, batch = estimate_gauge(p.x0, p.domain, None if is_zero(nu) else nu, cfg, int(blk.get("N", rc.n_paths())),
                                probe_per_axis=int(blk.get("probe_per_axis", 7)),
                                probe_paths=int(blk.get("probe_paths", 2000)), return_batch=True)
    rows = khasminskii_moments(batch.abs_L, rep.beta.value, int(blk.get("max_k", 4)))
    moments = [{"k": k, "mean": m, "stderr": se, "bound": b, "holds": ok} for k, m, se, b, ok in rows]
    _emit(dumps(_envelope("gauge", rc, sim=cfg.echo(), report=rep.to_dict(), moments=moments)), out)
    return 0


def _oracle_contraction(rc, p, blk):
    if not isinstance(p.domain, Ball):
        raise ConfigError("the contraction oracle needs a ball domain")
    mu, nu, rho = p.coeffs.components()
    if not is_zero(nu):
        raise ConfigError("the contraction oracle handles mu and rho only (nu must be zero)")
    G = BallGreen(p.domain.center, p.domain.radius)
    probe = measure_from_dict(blk["probe"]) if blk.get("probe") else rho
    if is_zero(probe):
        r = p.domain.radius
        probe = constant_density(1.0, tuple(np.asarray(p.domain.center) - r),
                                 tuple(np.asarray(p.domain.center) + r), domain=p.domain)
    radii = blk.get("radii", [p.domain.radius])
    rep = contraction_factor(G, mu, probe, radii)
    sol = contraction_solve(G, mu, rho, tol=float(blk.get("tol", 1e-8)), max_iter=int(blk.get("max_iter", 60)))
    pts = blk.get("point") or p.probes
    pts = [pts] if np.ndim(pts) == 1 else pts
    values = [{"point": [float(v) for v in x], "value": float(sol(np.asarray(x, float)))} for x in pts]
    res = {"kind": "contraction", "contraction": rep.to_dict(), "neumann_norms": sol.term_grad_norms, "values": values}
    if blk.get("lattice_out"):
        lat = sol.to_lattice(blk.get("pitch"))
        lat.save(blk["lattice_out"])
        res["lattice"] = {"path": str(blk["lattice_out"]), "shape": list(lat.shape), "pitch": lat.pitch}
    return res


def _oracle_fd(rc, p, blk):
    grids = blk.get("grid_n", 65)
    grids = [int(g) for g in (grids if isinstance(grids, list) else [grids])]
    pts = blk.get("point") or p.probes
    pts = [pts] if np.ndim(pts) == 1 else pts
    kw = {}
    if "tol" in blk:
        kw["tol"] = float(blk["tol"])
    if "max_iter" in blk:
        kw["maxiter"] = int(blk["max_iter"])
    sols = [fd_solve_problem(p, g, **kw) for g in grids]
    values = [{"point": [float(v) for v in x], "values": [float(s(np.asarray(x, float))) for s in sols]} for x in pts]
    res = {"kind": "fd", "grids": grids, "values": values,
           "residuals": [s.residual for s in sols], "iterations": [s.iterations for s in sols]}
    if len(grids) >= 3:
        for row in values:
            v = row["values"]
            d = [a - b for a, b in zip(v, v[1:])]
            row["ratios"] = [d[i] / d[i + 1] for i in range(len(d) - 1) if d[i + 1] != 0]
    return res


def cmd_oracle(rc: RunConfig, out=None, workers=1) -> int:
    p = rc.problem()
    blk = rc.block("oracle")
    kind = blk.get("kind", "contraction" if isinstance(p.domain, Ball) else "fd")
    if kind == "contraction":
        res = _oracle_contraction(rc, p, blk)
    elif kind == "fd":
        res = _oracle_fd(rc, p, blk)
    else:
        raise ConfigError(f"oracle kind must be 'contraction' or 'fd', got '{kind}'")
    _emit(dumps(_envelope("oracle", rc, result=res)), out)
    return 0


def cmd_verify(rc: RunConfig, out=None, workers=1, echo=None) -> int:
    blk = rc.block("verify")
    names = blk.get("instances") or list(INSTANCE_NAMES)
    bad = [n for n in names if n not in INSTANCE_NAMES]
    if bad:
        raise ConfigError(f"verify.instances: unknown instance(s) {bad}")
    quick = blk.get("quick", False)
    scale = 0.1 if quick is True else float(quick) if quick else 1.0
    results = acceptance.run(acceptance.numbers_for(names), scale=scale, echo=echo)
    table = [r.to_dict() for r in results]
    ok = all(r.passed for r in results)
    _emit(dumps(_envelope("verify", rc, instances=names, scale=scale, criteria=table, passed=ok)), out)
    return 0 if ok else 1


def cmd_sweep(rc: RunConfig, out=None, workers=1) -> int:
    p = rc.problem()
    blk = rc.block("sweep")
    if not blk.get("levels"):
        raise ConfigError("sweep.levels is required: a list of [h, level, N]")
    x0 = np.asarray(blk.get("point") or p.x0, float)
    levels = [(float(h), None if n in (None, "auto") else int(n), int(N)) for h, n, N in blk["levels"]]
    tab = convergence_study(x0, p.domain, p.coeffs, p.phi, levels, seed=rc.seed,
                            coupled=bool(blk.get("coupled", True)), base=rc.sim_config(workers))
    head = "".join(f"# {line}\n" for line in json.dumps(_envelope("sweep", rc), sort_keys=True).splitlines())
    text = head + tab.to_csv()
    target = out if out is not None else blk.get("csv")
    _emit(text, target)
    return 0


DISPATCH = {"solve": cmd_solve, "kato": cmd_kato, "gauge": cmd_gauge, "oracle": cmd_oracle,
            "verify": cmd_verify, "sweep": cmd_sweep}


def build_parser():
    ap = argparse.ArgumentParser(prog="mcdirichlet", description="Monte Carlo Dirichlet solver with Kato-class coefficients.")
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--config", required=True, help="YAML run config")
    ap.add_argument("--out", help="output file (default: the config's 'out' key, else stdout)")
    ap.add_argument("--workers", type=int, default=1, help="path-level worker threads; results do not depend on it")
    ap.add_argument("--seed", type=int, help="override the config seed")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        rc = load_config(args.config)
        if args.seed is not None:
            if args.seed < 0:
                raise ConfigError("--seed must be non-negative")
            rc = rc.with_seed(args.seed)
        if args.workers < 1:
            raise ConfigError("--workers must be at least 1")
        out = args.out if args.out is not None else rc.data.get("out")
        if args.command == "verify":
            return cmd_verify(rc, out, args.workers, echo=lambda s: print(s, file=sys.stderr))
        return DISPATCH[args.command](rc, out, args.workers)
    except ConfigError as e:
        where = f"{args.config}: " if args.config else ""
        print(f"config error: {where}{e}", file=sys.stderr)
        return 2
    except MCDirichletError as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
