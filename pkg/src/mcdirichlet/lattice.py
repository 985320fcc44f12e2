"""Regular lattices with multilinear interpolation and a flat binary file format.

File layout (all little-endian)::

    8 bytes   magic  b"MCDLAT01"
    uint32    version (1)
    uint32    d      number of spatial axes
    uint32    ncomp  values per node
    int32     level  mollifier level (-1 when not applicable)
    uint64[d] shape  nodes per axis
    float64[d] lo    first node
    float64[d] hi    last node
    float64[d] pitch node spacing (0 on single-node axes)
    float64[prod(shape) * ncomp]  payload, row-major over (*shape, ncomp)

An axis holding a single node is treated as constant along that axis.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import OutOfCache

MAGIC = b"MCDLAT01"
VERSION = 1


@dataclass
class Lattice:
    lo: np.ndarray
    pitch: np.ndarray
    values: np.ndarray  # (*shape, ncomp)
    level: int = -1
    fill: Optional[np.ndarray] = None  # off-lattice value (not stored in files)

    def __post_init__(self):
        self.lo = np.asarray(self.lo, float)
        self.pitch = np.asarray(self.pitch, float)
        self.values = np.ascontiguousarray(self.values, dtype=float)
        if self.values.ndim != self.lo.size + 1:
            raise ValueError("values must have shape (*shape, ncomp)")

    @property
    def dim(self):
        return self.lo.size

    @property
    def shape(self):
        return self.values.shape[:-1]

    @property
    def ncomp(self):
        return self.values.shape[-1]

    @property
    def hi(self):
        return self.lo + self.pitch * (np.asarray(self.shape) - 1)

    @property
    def nodes(self):
        return self.values.size // self.ncomp

    def axes(self):
        return [self.lo[k] + self.pitch[k] * np.arange(n) for k, n in enumerate(self.shape)]

    def node_points(self):
        g = np.meshgrid(*self.axes(), indexing="ij")
        return np.stack([x.ravel() for x in g], axis=-1)

    def inside(self, x, tol=1e-12):
        x = np.atleast_2d(x)
        lo, hi = self.lo, self.hi
        full = np.asarray(self.shape) > 1
        ok = (x >= lo - tol) & (x <= hi + tol)
        return np.all(ok | ~full, axis=-1)

    def eval(self, x, strict=True, fill=0.0):
        """Multilinear interpolation at ``x`` (``(d,)`` or ``(n, d)``).

        Outside the lattice: ``OutOfCache`` when ``strict``, else ``fill``
        (a scalar or one value per component).
        """
        x = np.asarray(x, float)
        single = x.ndim == 1
        X = np.atleast_2d(x)
        ins = self.inside(X)
        if strict and not ins.all():
            raise OutOfCache(f"{int((~ins).sum())} point(s) outside the cached lattice")
        out = np.empty((X.shape[0], self.ncomp))
        out[:] = np.asarray(fill, float)
        Xi = X[ins]
        if Xi.shape[0]:
            out[ins] = self._interp(Xi)
        return out[0] if single else out

    def _interp(self, X):
        shape = np.asarray(self.shape)
        idx = []
        frac = []
        for k in range(self.dim):
            if shape[k] == 1:
                idx.append(np.zeros(X.shape[0], dtype=np.int64))
                frac.append(np.zeros(X.shape[0]))
                continue
            s = (X[:, k] - self.lo[k]) / self.pitch[k]
            i = np.clip(np.floor(s).astype(np.int64), 0, shape[k] - 2)
            idx.append(i)
            frac.append(np.clip(s - i, 0.0, 1.0))
        out = np.zeros((X.shape[0], self.ncomp))
        for corner in range(1 << self.dim):
            w = np.ones(X.shape[0])
            sub = []
            skip = False
            for k in range(self.dim):
                bit = (corner >> k) & 1
                if shape[k] == 1:
                    if bit:
                        skip = True
                        break
                    sub.append(idx[k])
                    continue
                w = w * (frac[k] if bit else 1.0 - frac[k])
                sub.append(idx[k] + bit)
            if skip:
                continue
            out += w[:, None] * self.values[tuple(sub)]
        return out

    # ---- persistence ----------------------------------------------------

    def save(self, path):
        d = self.dim
        with open(path, "wb") as fh:
            fh.write(MAGIC)
            fh.write(struct.pack("<IIIi", VERSION, d, self.ncomp, int(self.level)))
            fh.write(struct.pack(f"<{d}Q", *[int(s) for s in self.shape]))
            fh.write(np.asarray(self.lo, "<f8").tobytes())
            fh.write(np.asarray(self.hi, "<f8").tobytes())
            fh.write(np.asarray(self.pitch, "<f8").tobytes())
            fh.write(np.ascontiguousarray(self.values, "<f8").tobytes())

    @classmethod
    def load(cls, path):
        with open(path, "rb") as fh:
            raw = fh.read()
        if raw[:8] != MAGIC:
            raise ValueError("not a lattice file")
        version, d, ncomp, level = struct.unpack_from("<IIIi", raw, 8)
        if version != VERSION:
            raise ValueError(f"unsupported lattice version {version}")
        off = 24
        shape = struct.unpack_from(f"<{d}Q", raw, off)
        off += 8 * d
        lo = np.frombuffer(raw, "<f8", d, off)
        off += 8 * d
        off += 8 * d  # hi is redundant with lo + pitch * (shape - 1)
        pitch = np.frombuffer(raw, "<f8", d, off)
        off += 8 * d
        count = int(np.prod(shape)) * ncomp
        vals = np.frombuffer(raw, "<f8", count, off).reshape(tuple(shape) + (ncomp,))
        return cls(lo=lo.copy(), pitch=pitch.copy(), values=vals.astype(float), level=level)


def build_lattice(fn, lo, hi, pitch, collapse=None, level=-1, chunk=200_000):
    """Sample ``fn(points) -> (n, ncomp)`` on a regular grid over ``[lo, hi]``.

    ``collapse[k]`` marks axes along which ``fn`` is known to be constant;
    those axes get a single node at the box centre.
    """
    lo = np.asarray(lo, float)
    hi = np.asarray(hi, float)
    d = lo.size
    collapse = np.zeros(d, bool) if collapse is None else np.asarray(collapse, bool)
    pitch = np.broadcast_to(np.asarray(pitch, float), (d,)).copy()
    shape = []
    start = lo.copy()
    for k in range(d):
        if collapse[k] or hi[k] <= lo[k]:
            shape.append(1)
            start[k] = 0.5 * (lo[k] + hi[k])
            pitch[k] = 0.0
        else:
            n = int(np.ceil((hi[k] - lo[k]) / pitch[k] - 1e-9)) + 1
            shape.append(max(n, 2))
            pitch[k] = (hi[k] - lo[k]) / (shape[-1] - 1)
    axes = [start[k] + pitch[k] * np.arange(shape[k]) for k in range(d)]
    g = np.meshgrid(*axes, indexing="ij")
    P = np.stack([x.ravel() for x in g], axis=-1)
    parts = []
    for s in range(0, len(P), chunk):
        v = np.asarray(fn(P[s : s + chunk]), float)
        parts.append(v[:, None] if v.ndim == 1 else v)
    vals = np.concatenate(parts, axis=0)
    return Lattice(lo=start, pitch=pitch, values=vals.reshape(tuple(shape) + (-1,)), level=level)
