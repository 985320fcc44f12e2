# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled path kernel for Ball and Box domains (one path per inner loop, GIL released)."""

from libc.math cimport sqrt, log, cos, sin, exp, floor, isfinite
from libc.stdint cimport uint64_t, int64_t, int8_t

NAME = "cython"
DEF MAXD = 8
DEF MAXC = 16

cdef double TWO_PI = 6.283185307179586
cdef double INV_2_53 = 1.1102230246251565e-16


cdef inline uint64_t smix(uint64_t z) noexcept nogil:
    z += <uint64_t>0x9E3779B97F4A7C15
    z = (z ^ (z >> 30)) * <uint64_t>0xBF58476D1CE4E5B9
    z = (z ^ (z >> 27)) * <uint64_t>0x94D049BB133111EB
    return z ^ (z >> 31)


cdef inline double unif(uint64_t key, uint64_t counter, uint64_t slot) noexcept nogil:
    cdef uint64_t z = smix(key ^ smix(counter * 16 + slot))
    return (<double>(z >> 11) + 0.5) * INV_2_53


cdef inline void fill_normals(uint64_t key, uint64_t counter, int d, double* out) noexcept nogil:
    cdef int j
    cdef double u1, u2, r
    j = 0
    while j < d:
        u1 = unif(key, counter, j)
        u2 = unif(key, counter, j + 1)
        r = sqrt(-2.0 * log(u1))
        out[j] = r * cos(TWO_PI * u2)
        if j + 1 < d:
            out[j + 1] = r * sin(TWO_PI * u2)
        j += 2


cdef void interp(const double[:, ::1] values, const int64_t[::1] shape, const double[::1] lo,
                 const double[::1] pitch, const double[::1] fill, int d, int nc, const double* x,
                 double* out) noexcept nogil:
    cdef int k, c, corner, bit
    cdef int64_t idx[MAXD]
    cdef double frac[MAXD]
    cdef int64_t flat
    cdef double s, w
    for c in range(nc):
        out[c] = 0.0
    for k in range(d):
        if shape[k] == 1:
            idx[k] = 0
            frac[k] = 0.0
            continue
        s = (x[k] - lo[k]) / pitch[k]
        if s < -1e-12 or s > <double>(shape[k] - 1) + 1e-12:
            for c in range(nc):
                out[c] = fill[c]
            return
        idx[k] = <int64_t>floor(s)
        if idx[k] < 0:
            idx[k] = 0
        if idx[k] > shape[k] - 2:
            idx[k] = shape[k] - 2
        frac[k] = s - idx[k]
        if frac[k] < 0.0:
            frac[k] = 0.0
        if frac[k] > 1.0:
            frac[k] = 1.0
    for corner in range(1 << d):
        w = 1.0
        flat = 0
        for k in range(d):
            bit = (corner >> k) & 1
            if shape[k] == 1:
                if bit:
                    w = 0.0
                    break
                flat = flat * shape[k]
                continue
            if bit:
                w *= frac[k]
            else:
                w *= 1.0 - frac[k]
            flat = flat * shape[k] + idx[k] + bit
        if w == 0.0:
            continue
        for c in range(nc):
            out[c] += w * values[flat, c]


cdef inline double dist_ball(const double* x, const double[::1] dom, int d) noexcept nogil:
    cdef double r2 = 0.0, t
    cdef int k
    for k in range(d):
        t = x[k] - dom[k]
        r2 += t * t
    return dom[d] - sqrt(r2)


cdef inline double dist_box(const double* x, const double[::1] dom, int d) noexcept nogil:
    cdef double m = 1e300, a
    cdef int k
    for k in range(d):
        a = x[k] - dom[k]
        if a < m:
            m = a
        a = dom[d + k] - x[k]
        if a < m:
            m = a
    return m


cdef inline void project_ball(double* p, const double[::1] dom, int d) noexcept nogil:
    cdef double r = 0.0, t
    cdef int k
    for k in range(d):
        t = p[k] - dom[k]
        r += t * t
    r = sqrt(r)
    if r == 0.0:
        p[0] = dom[0] + dom[d]
        for k in range(1, d):
            p[k] = dom[k]
        return
    for k in range(d):
        p[k] = dom[k] + dom[d] * (p[k] - dom[k]) / r


cdef inline void project_box_interior(double* p, const double[::1] dom, int d) noexcept nogil:
    cdef int k, best = 0
    cdef double m = 1e300, a
    cdef int to_lo = 1
    for k in range(d):
        a = p[k] - dom[k]
        if a < m:
            m = a
            best = k
            to_lo = 1
        a = dom[d + k] - p[k]
        if a < m:
            m = a
            best = k
            to_lo = 0
    if to_lo:
        p[best] = dom[best]
    else:
        p[best] = dom[d + best]


cdef inline double exit_ball(const double* a, const double* b, const double[::1] dom, int d,
                             double* hit) noexcept nogil:
    """Crossing parameter in [0, 1] or -1 when b stays inside."""
    cdef double A = 0.0, B = 0.0, C = 0.0, bb = 0.0, dv, ac, disc, s
    cdef int k
    for k in range(d):
        dv = b[k] - a[k]
        ac = a[k] - dom[k]
        A += dv * dv
        B += 2.0 * ac * dv
        C += ac * ac
        bb += (b[k] - dom[k]) * (b[k] - dom[k])
    if bb < dom[d] * dom[d]:
        return -1.0
    C -= dom[d] * dom[d]
    disc = B * B - 4.0 * A * C
    if disc < 0.0:
        disc = 0.0
    disc = sqrt(disc)
    if B >= 0.0:
        s = -2.0 * C / (B + disc) if (B + disc) != 0.0 else 0.0
    else:
        s = (disc - B) / (2.0 * A)
    if s < 0.0:
        s = 0.0
    if s > 1.0:
        s = 1.0
    for k in range(d):
        hit[k] = a[k] + s * (b[k] - a[k])
    project_ball(hit, dom, d)
    return s


cdef inline double exit_box(const double* a, const double* b, const double[::1] dom, int d,
                            double* hit) noexcept nogil:
    cdef int k, ax = -1
    cdef int out = 0
    cdef double dv, tk, tmin = 1e300
    for k in range(d):
        if b[k] <= dom[k] or b[k] >= dom[d + k]:
            out = 1
    if not out:
        return -1.0
    for k in range(d):
        dv = b[k] - a[k]
        if dv > 0.0:
            tk = (dom[d + k] - a[k]) / dv
        elif dv < 0.0:
            tk = (dom[k] - a[k]) / dv
        else:
            continue
        if tk < tmin:
            tmin = tk
            ax = k
    if tmin < 0.0:
        tmin = 0.0
    if tmin > 1.0:
        tmin = 1.0
    for k in range(d):
        hit[k] = a[k] + tmin * (b[k] - a[k])
        if hit[k] < dom[k]:
            hit[k] = dom[k]
        if hit[k] > dom[d + k]:
            hit[k] = dom[d + k]
    if ax >= 0:
        hit[ax] = dom[d + ax] if b[ax] > a[ax] else dom[ax]
    return tmin


def run_paths(plan, paths, st):
    """Advance every path in ``st`` in place (Ball and Box domains only)."""
    cdef const double[:, ::1] values = plan.lattice_values
    cdef const int64_t[::1] shape = plan.lattice_shape
    cdef const double[::1] lo = plan.lattice.lo
    cdef const double[::1] pitch = plan.lattice.pitch
    cdef const double[::1] fill = plan.lattice_fill
    cdef const double[::1] dom = plan.dom_params
    cdef int dom_kind = plan.dom_kind
    cdef int d = plan.d
    cdef int nc = values.shape[1]
    cdef double h = plan.h
    cdef double sqh = sqrt(h)
    cdef int64_t nmax = plan.nmax
    cdef int bridge = plan.bridge
    cdef int rule = plan.rule
    cdef uint64_t seed = <uint64_t>(int(plan.seed) & 0xFFFFFFFFFFFFFFFF)
    cdef int64_t substeps = plan.substeps
    cdef int64_t step_limit = plan.step_limit
    cdef int anti = plan.antithetic
    cdef const int64_t[::1] pidx = paths
    cdef double[:, ::1] X = st["x"]
    cdef double[::1] T = st["t"]
    cdef double[::1] Lr = st["L"]
    cdef double[::1] Vw = st["Vw"]
    cdef double[::1] V = st["V"]
    cdef double[::1] aL = st["absL"]
    cdef double[::1] aV = st["absV"]
    cdef double[:, ::1] disp = st["disp"]
    cdef int64_t[::1] counter = st["counter"]
    cdef int8_t[::1] status = st["status"]
    cdef Py_ssize_t n = pidx.shape[0]
    cdef Py_ssize_t i
    cdef int k, m
    cdef uint64_t key, pid
    cdef double sgn, frac, dt, da, db, p, u, ssum, tstar
    cdef double x[MAXD]
    cdef double xn[MAXD]
    cdef double xe[MAXD]
    cdef double xq[MAXD]
    cdef double G[MAXD]
    cdef double xi[MAXD]
    cdef double z[MAXD]
    cdef double F[MAXC]
    cdef double Lc
    cdef int64_t steps, ctr
    cdef int exited, bad
    cdef double isq
    if d > MAXD or nc > MAXC:
        raise ValueError("dimension too large for the compiled kernel")
    if dom_kind not in (0, 1):
        raise ValueError("compiled kernel supports Ball and Box domains only")
    isq = 1.0 / sqrt(<double>substeps)
    with nogil:
        for i in range(n):
            if status[i] != 0:
                continue
            pid = <uint64_t>pidx[i]
            sgn = 1.0
            if anti:
                if pid % 2 == 1:
                    sgn = -1.0
                pid = pid // 2
            key = smix(seed ^ smix(pid))
            for k in range(d):
                x[k] = X[i, k]
            Lc = Lr[i]
            ctr = counter[i]
            steps = 0
            while True:
                if step_limit >= 0 and steps >= step_limit:
                    break
                if ctr >= nmax:
                    status[i] = 2
                    break
                interp(values, shape, lo, pitch, fill, d, nc, x, F)
                for k in range(d):
                    G[k] = F[k]
                if substeps == 1:
                    fill_normals(key, <uint64_t>ctr, d, xi)
                else:
                    for k in range(d):
                        xi[k] = 0.0
                    for m in range(substeps):
                        fill_normals(key, <uint64_t>(ctr * substeps + m), d, z)
                        for k in range(d):
                            xi[k] += z[k]
                    for k in range(d):
                        xi[k] *= isq
                bad = 0
                for k in range(d):
                    xn[k] = x[k] + G[k] * h + sqh * sgn * xi[k]
                    if not isfinite(xn[k]):
                        bad = 1
                if bad:
                    status[i] = 3
                    for k in range(d):
                        x[k] = xn[k]
                    break
                if dom_kind == 0:
                    tstar = exit_ball(x, xn, dom, d, xe)
                else:
                    tstar = exit_box(x, xn, dom, d, xe)
                exited = tstar >= 0.0
                if exited:
                    frac = tstar
                else:
                    frac = 1.0
                    for k in range(d):
                        xe[k] = xn[k]
                    if bridge:
                        if dom_kind == 0:
                            da = dist_ball(x, dom, d)
                            db = dist_ball(xn, dom, d)
                        else:
                            da = dist_box(x, dom, d)
                            db = dist_box(xn, dom, d)
                        p = exp(-2.0 * da * db / h)
                        u = unif(key, <uint64_t>ctr, 15)
                        if u < p:
                            exited = 1
                            frac = 0.5
                            for k in range(d):
                                xe[k] = 0.5 * (x[k] + xn[k])
                            if dom_kind == 0:
                                project_ball(xe, dom, d)
                            else:
                                project_box_interior(xe, dom, d)
                dt = frac * h
                if rule == 0:
                    for k in range(d):
                        xq[k] = x[k]
                else:
                    for k in range(d):
                        xq[k] = 0.5 * (x[k] + xe[k])
                interp(values, shape, lo, pitch, fill, d, nc, xq, F)
                Vw[i] += exp(Lc) * F[d + 2] * dt
                V[i] += F[d + 2] * dt
                aV[i] += F[d + 3] * dt
                Lc = Lc + F[d] * dt
                aL[i] += F[d + 1] * dt
                for k in range(d):
                    disp[i, k] += G[k] * dt
                    x[k] = xe[k]
                T[i] += dt
                ctr += 1
                steps += 1
                if exited:
                    status[i] = 1
                    break
            for k in range(d):
                X[i, k] = x[k]
            Lr[i] = Lc
            counter[i] = ctr
