"""Counter-based random numbers keyed by (seed, path index, step counter, slot).

Every draw is a pure function of its coordinates, so any partition of the
paths over workers reproduces the same numbers.  The mixer is splitmix64.
"""
from __future__ import annotations

import numpy as np

GOLDEN = np.uint64(0x9E3779B97F4A7C15)
M1 = np.uint64(0xBF58476D1CE4E5B9)
M2 = np.uint64(0x94D049BB133111EB)
SLOTS = 16
BRIDGE_SLOT = 15
TWO_PI = 2.0 * np.pi
INV_2_53 = 2.0**-53


def splitmix64(z):
    with np.errstate(over="ignore"):
        z = np.asarray(z, dtype=np.uint64) + GOLDEN
        z = (z ^ (z >> np.uint64(30))) * M1
        z = (z ^ (z >> np.uint64(27))) * M2
    return z ^ (z >> np.uint64(31))


def path_key(seed, path):
    seed = np.uint64(int(seed) & 0xFFFFFFFFFFFFFFFF)
    return splitmix64(seed ^ splitmix64(np.asarray(path, dtype=np.uint64)))


def uniform(key, counter, slot):
    """Uniform in (0, 1), strictly: ((z >> 11) + 0.5) * 2^-53."""
    with np.errstate(over="ignore"):
        c = np.asarray(counter, dtype=np.uint64) * np.uint64(SLOTS) + np.uint64(slot)
    z = splitmix64(np.asarray(key, dtype=np.uint64) ^ splitmix64(c))
    return ((z >> np.uint64(11)).astype(np.float64) + 0.5) * INV_2_53


def normals(key, counter, d):
    """``d`` standard normals per (key, counter) by Box-Muller; shape ``key.shape + (d,)``."""
    key = np.asarray(key, dtype=np.uint64)
    counter = np.broadcast_to(np.asarray(counter, dtype=np.uint64), key.shape)
    out = np.empty(key.shape + (d,))
    for j in range(0, d, 2):
        u1 = uniform(key, counter, j)
        u2 = uniform(key, counter, j + 1)
        r = np.sqrt(-2.0 * np.log(u1))
        out[..., j] = r * np.cos(TWO_PI * u2)
        if j + 1 < d:
            out[..., j + 1] = r * np.sin(TWO_PI * u2)
    return out


def step_normals(key, step, d, substeps=1):
    """Normals for one coarse step made of ``substeps`` fine increments.

    Fine counters ``step * substeps + i`` are summed and rescaled, so a run at
    step h and one at h / substeps share the same Brownian path.
    """
    if substeps == 1:
        return normals(key, step, d)
    step = np.asarray(step, dtype=np.uint64)
    acc = 0.0
    for i in range(substeps):
        acc = acc + normals(key, step * np.uint64(substeps) + np.uint64(i), d)
    return acc / np.sqrt(substeps)
