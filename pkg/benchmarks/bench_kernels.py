"""Compare the compiled path kernel against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--paths 20000] [--repeat 3]

Each case runs the same paths on both backends, checks that the results agree,
and reports the best wall time of ``--repeat`` runs.
"""
import argparse
import dataclasses
import time

import numpy as np

from mcdirichlet import HAVE_COMPILED, load_instance
from mcdirichlet.sde import SimConfig, simulate_paths

CASES = [("harmonic-ball", 8e-3), ("poisson-ball", 4e-3), ("killing-ball", 4e-3), ("smooth-box", 4e-3)]


def timed(fn, repeat):
    best, out = np.inf, None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--paths", type=int, default=20000)
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--workers", type=int, default=1)
    args = ap.parse_args()
    if not HAVE_COMPILED:
        raise SystemExit("compiled kernel not built; run `pip install -e . --no-build-isolation` first")

    print(f"{'instance':<16}{'h':>8}{'numpy s':>10}{'cython s':>10}{'speedup':>9}{'max |diff|':>12}")
    for name, h in CASES:
        p = load_instance(name)
        base = SimConfig(seed=1, h=h, workers=args.workers)
        # build lattices once so neither backend pays for them
        simulate_paths(p.x0, p.domain, p.coeffs, base, 16)
        res = {}
        for b in ("numpy", "cython"):
            cfg = dataclasses.replace(base, backend=b)
            res[b] = timed(lambda: simulate_paths(p.x0, p.domain, p.coeffs, cfg, args.paths), args.repeat)
        a, c = res["numpy"][1], res["cython"][1]
        diff = max(float(np.max(np.abs(a.exit_point - c.exit_point))), float(np.max(np.abs(a.L - c.L))))
        tn, tc = res["numpy"][0], res["cython"][0]
        print(f"{name:<16}{h:>8.0e}{tn:>10.3f}{tc:>10.3f}{tn / tc:>9.1f}{diff:>12.1e}")


if __name__ == "__main__":
    main()
