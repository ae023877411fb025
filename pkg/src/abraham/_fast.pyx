# cython: boundscheck=False, wraparound=False, cdivision=True
# cython: initializedcheck=False, nonecheck=False
"""Compiled backend: C loops for the memory-kernel pair and grid mode ops.

Entry points mirror ``abraham._ref`` and are built from the same quadrature
constructions (shared ``abraham.quadrature`` helpers), so the two backends
agree to rounding; parity is asserted by the test suite.  Names not defined
here (cold paths) fall through to the reference module via
``abraham.backend``.

The far-field accumulation is reorganized around weighted moments: every
stack entry is a polynomial in (Qx, Qv, x, s) with node-independent tensor
prefactors, so the quadrature sum collapses onto a handful of moment
accumulators and the tensors are assembled once per target.
"""

import numpy as np

from libc.math cimport cos, exp, fabs, sin, sqrt

from .quadrature import SphereRule, ball_rule

name = "compiled"

cdef double FOURPI_INV = 1.0 / (4.0 * np.pi)
cdef double TWO_PI = 2.0 * np.pi

# ---------------------------------------------------------------------------
# cached quadrature tables (constructed by the shared python helpers)
# ---------------------------------------------------------------------------

_leg_cache = {}
_sph_cache = {}
_ball_cache = {}


def _leg(n):
    if n not in _leg_cache:
        x, w = np.polynomial.legendre.leggauss(n)
        _leg_cache[n] = (np.ascontiguousarray(x), np.ascontiguousarray(w))
    return _leg_cache[n]


def _sphere(npol, naz):
    key = (npol, naz)
    if key not in _sph_cache:
        sr = SphereRule(npol, naz)
        _sph_cache[key] = (np.ascontiguousarray(sr.dirs),
                           np.ascontiguousarray(sr.weights))
    return _sph_cache[key]


def _ball(w, nrad, npol, naz):
    # keyed by identity; the cached entry keeps w alive so ids cannot recycle
    key = (id(w), nrad, npol, naz)
    hit = _ball_cache.get(key)
    if hit is not None and hit[0] is w:
        return hit[1], hit[2]
    pts, wts = ball_rule(nrad, w.support, SphereRule(npol, naz),
                         radial_weight=w.val)
    if len(_ball_cache) > 16:
        _ball_cache.clear()
    entry = (w, np.ascontiguousarray(pts), np.ascontiguousarray(wts))
    _ball_cache[key] = entry
    return entry[1], entry[2]


# ---------------------------------------------------------------------------
# radial weight evaluation (value and first derivative)
# ---------------------------------------------------------------------------

cdef struct WP:
    int kind
    double Z
    double R
    double support
    const double* ppx
    const double* ppc        # (4, nseg) row-major
    Py_ssize_t nbrk


cdef inline void _w_eval(const WP* w, double r, double* w0,
                         double* w1) noexcept nogil:
    cdef double u, one, val, g, t
    cdef Py_ssize_t lo, hi, mid, idx, nseg
    w0[0] = 0.0
    w1[0] = 0.0
    if w.kind == 2:
        if r >= w.support:
            return
        lo = 0
        hi = w.nbrk
        while lo < hi:                       # first index with ppx[i] >= r
            mid = (lo + hi) // 2
            if w.ppx[mid] < r:
                lo = mid + 1
            else:
                hi = mid
        idx = lo - 1
        if idx < 0:
            idx = 0
        elif idx > w.nbrk - 2:
            idx = w.nbrk - 2
        nseg = w.nbrk - 1
        t = r - w.ppx[idx]
        w0[0] = ((w.ppc[idx] * t + w.ppc[nseg + idx]) * t
                 + w.ppc[2 * nseg + idx]) * t + w.ppc[3 * nseg + idx]
        w1[0] = (3.0 * w.ppc[idx] * t + 2.0 * w.ppc[nseg + idx]) * t \
            + w.ppc[2 * nseg + idx]
        return
    u = r / w.R
    if u >= 1.0 - 1e-14:
        return
    one = 1.0 - u * u
    if w.kind == 0:
        val = w.Z * exp(-1.0 / one)
        g = -2.0 * u / (one * one)
        w0[0] = val
        w1[0] = val * g / w.R
    else:
        w0[0] = w.Z * one * one * one * one
        w1[0] = w.Z * (-8.0 * u * one * one * one) / w.R


# ---------------------------------------------------------------------------
# far-field moment accumulation: all derivatives on the kernel
# ---------------------------------------------------------------------------

cdef void _far_target(const double* y, const double* v, double a,
                      const double[:, ::1] bpts, const double[::1] bwts,
                      double* fx, double* fxv, double* fxx,
                      double* fxxv) noexcept nogil:
    cdef Py_ssize_t p, i, j, l, u
    cdef Py_ssize_t P = bwts.shape[0]
    cdef double x0, x1, x2, r2, s, Q, invQ, isq, f1, f2, f3, wq, wf1, wf2, wf3
    cdef double twos, twor2
    cdef double Qx[3]
    cdef double Qv[3]
    cdef double qq[6]
    cdef double sf1 = 0.0, m1s = 0.0
    cdef double m1[3]
    cdef double sfx[3]
    cdef double svQv[3]
    cdef double bb[3]
    cdef double M2[9]
    cdef double A[9]
    cdef double S2[6]
    cdef double C[18]
    cdef int qi[6]
    cdef int qj[6]
    for i in range(3):
        m1[i] = 0.0
        sfx[i] = 0.0
        svQv[i] = 0.0
        bb[i] = 0.0
    for i in range(9):
        M2[i] = 0.0
        A[i] = 0.0
    for i in range(6):
        S2[i] = 0.0
    for i in range(18):
        C[i] = 0.0
    qi[0] = 0; qj[0] = 0
    qi[1] = 0; qj[1] = 1
    qi[2] = 0; qj[2] = 2
    qi[3] = 1; qj[3] = 1
    qi[4] = 1; qj[4] = 2
    qi[5] = 2; qj[5] = 2

    for p in range(P):
        x0 = y[0] - bpts[p, 0]
        x1 = y[1] - bpts[p, 1]
        x2 = y[2] - bpts[p, 2]
        r2 = x0 * x0 + x1 * x1 + x2 * x2
        s = x0 * v[0] + x1 * v[1] + x2 * v[2]
        Q = a * r2 + s * s
        invQ = 1.0 / Q
        isq = sqrt(invQ)
        f1 = -0.5 * isq * invQ
        f2 = 0.75 * isq * invQ * invQ
        f3 = -2.5 * f2 * invQ
        wq = bwts[p]
        wf1 = wq * f1
        wf2 = wq * f2
        wf3 = wq * f3
        twos = 2.0 * s
        twor2 = 2.0 * r2
        Qx[0] = 2.0 * a * x0 + twos * v[0]
        Qx[1] = 2.0 * a * x1 + twos * v[1]
        Qx[2] = 2.0 * a * x2 + twos * v[2]
        Qv[0] = twos * x0 - twor2 * v[0]
        Qv[1] = twos * x1 - twor2 * v[1]
        Qv[2] = twos * x2 - twor2 * v[2]

        sf1 += wf1
        m1s += wf1 * s
        m1[0] += wf1 * x0
        m1[1] += wf1 * x1
        m1[2] += wf1 * x2
        for i in range(3):
            sfx[i] += wf1 * Qx[i]
            svQv[i] += wf2 * Qv[i]
            bb[i] += wf2 * s * Qx[i]
        M2[0] += wf2 * Qx[0] * Qv[0]
        M2[1] += wf2 * Qx[0] * Qv[1]
        M2[2] += wf2 * Qx[0] * Qv[2]
        M2[3] += wf2 * Qx[1] * Qv[0]
        M2[4] += wf2 * Qx[1] * Qv[1]
        M2[5] += wf2 * Qx[1] * Qv[2]
        M2[6] += wf2 * Qx[2] * Qv[0]
        M2[7] += wf2 * Qx[2] * Qv[1]
        M2[8] += wf2 * Qx[2] * Qv[2]
        A[0] += wf2 * x0 * Qx[0]
        A[1] += wf2 * x0 * Qx[1]
        A[2] += wf2 * x0 * Qx[2]
        A[3] += wf2 * x1 * Qx[0]
        A[4] += wf2 * x1 * Qx[1]
        A[5] += wf2 * x1 * Qx[2]
        A[6] += wf2 * x2 * Qx[0]
        A[7] += wf2 * x2 * Qx[1]
        A[8] += wf2 * x2 * Qx[2]
        qq[0] = Qx[0] * Qx[0]
        qq[1] = Qx[0] * Qx[1]
        qq[2] = Qx[0] * Qx[2]
        qq[3] = Qx[1] * Qx[1]
        qq[4] = Qx[1] * Qx[2]
        qq[5] = Qx[2] * Qx[2]
        for u in range(6):
            S2[u] += wf2 * qq[u]
            C[3 * u] += wf3 * qq[u] * Qv[0]
            C[3 * u + 1] += wf3 * qq[u] * Qv[1]
            C[3 * u + 2] += wf3 * qq[u] * Qv[2]

    # assemble the stacks; Qxx and Qxxv carry no x-dependence and factor out
    cdef double Qxx[9]
    cdef double Csym[27]
    cdef double S2sym[9]
    for i in range(3):
        for j in range(3):
            Qxx[3 * i + j] = 2.0 * v[i] * v[j]
        Qxx[4 * i] += 2.0 * a
    for u in range(6):
        i = qi[u]; j = qj[u]
        S2sym[3 * i + j] = S2[u]
        S2sym[3 * j + i] = S2[u]
        for l in range(3):
            Csym[9 * i + 3 * j + l] = C[3 * u + l]
            Csym[9 * j + 3 * i + l] = C[3 * u + l]
    for i in range(3):
        fx[i] = FOURPI_INV * sfx[i]
        for l in range(3):
            fxv[3 * i + l] = FOURPI_INV * (
                M2[3 * i + l] - 4.0 * v[l] * m1[i] + 2.0 * v[i] * m1[l]
                + (2.0 * m1s if i == l else 0.0))
        for j in range(3):
            fxx[3 * i + j] = FOURPI_INV * (S2sym[3 * i + j]
                                           + sf1 * Qxx[3 * i + j])
            for l in range(3):
                fxxv[9 * i + 3 * j + l] = FOURPI_INV * (
                    Csym[9 * i + 3 * j + l]
                    + svQv[l] * Qxx[3 * i + j]
                    - 4.0 * v[l] * A[3 * i + j] + 2.0 * v[i] * A[3 * l + j]
                    + (2.0 * bb[j] if i == l else 0.0)
                    - 4.0 * v[l] * A[3 * j + i] + 2.0 * v[j] * A[3 * l + i]
                    + (2.0 * bb[i] if j == l else 0.0)
                    + sf1 * (-4.0 * v[l] * (1.0 if i == j else 0.0)
                             + (2.0 * v[j] if i == l else 0.0)
                             + (2.0 * v[i] if j == l else 0.0)))


# ---------------------------------------------------------------------------
# near-field accumulation: recentered nodes, derivatives shifted to weight
# ---------------------------------------------------------------------------

cdef void _near_target(const double* y, double dy, const double* v, double a,
                       const WP* wp, const double[::1] rad_x,
                       const double[::1] rad_w, Py_ssize_t n_rad,
                       const double[::1] pol_x, const double[::1] pol_w,
                       Py_ssize_t n_pol, Py_ssize_t n_az,
                       double* fx, double* fxv, double* fxx,
                       double* fxxv) noexcept nogil:
    cdef double S = wp.support
    cdef double start, end, inner
    cdef double edges[3]
    cdef Py_ssize_t n_edges, ie, ir, ip, ia, i, j, l
    cdef double e1[3]
    cdef double e2[3]
    cdef double e3[3]
    cdef double t0, t1, t2, nrm
    cdef double pa, pb, mid, half, r, wr, wr2, mu_lo, half_mu, mu, wmu, sin_t
    cdef double cphi, sphi, phi, dx0, dx1, dx2, x0, x1, x2
    cdef double z0, z1, z2, rz, w0, w1, g0, g10, g11, g12, wq
    cdef double r2, s, Q, invQ, isq, f1, f2, twos, twor2
    cdef double Qx[3]
    cdef double Qv[3]
    cdef double fxq[3]
    cdef double fxvq[9]
    cdef double az_c[64]
    cdef double az_s[64]
    cdef double az_w = TWO_PI / n_az
    for ia in range(n_az):
        phi = az_w * (ia + 0.5)
        az_c[ia] = cos(phi)
        az_s[ia] = sin(phi)

    for i in range(3):
        fx[i] = 0.0
    for i in range(9):
        fxv[i] = 0.0
        fxx[i] = 0.0
    for i in range(27):
        fxxv[i] = 0.0

    start = dy - S
    if start < 0.0:
        start = 0.0
    end = dy + S
    inner = fabs(S - dy)
    edges[0] = start
    if start < inner and inner < end:
        edges[1] = inner
        edges[2] = end
        n_edges = 3
    else:
        edges[1] = end
        n_edges = 2

    if dy < 1e-12 * S:
        e3[0] = 0.0; e3[1] = 0.0; e3[2] = 1.0
    else:
        e3[0] = -y[0] / dy; e3[1] = -y[1] / dy; e3[2] = -y[2] / dy
    if fabs(e3[0]) > 0.9:
        t0 = 0.0; t1 = 1.0; t2 = 0.0
    else:
        t0 = 1.0; t1 = 0.0; t2 = 0.0
    e1[0] = e3[1] * t2 - e3[2] * t1
    e1[1] = e3[2] * t0 - e3[0] * t2
    e1[2] = e3[0] * t1 - e3[1] * t0
    nrm = sqrt(e1[0] * e1[0] + e1[1] * e1[1] + e1[2] * e1[2])
    e1[0] /= nrm; e1[1] /= nrm; e1[2] /= nrm
    e2[0] = e3[1] * e1[2] - e3[2] * e1[1]
    e2[1] = e3[2] * e1[0] - e3[0] * e1[2]
    e2[2] = e3[0] * e1[1] - e3[1] * e1[0]

    for ie in range(n_edges - 1):
        pa = edges[ie]
        pb = edges[ie + 1]
        if pb <= pa:
            continue
        mid = 0.5 * (pa + pb)
        half = 0.5 * (pb - pa)
        for ir in range(n_rad):
            r = mid + half * rad_x[ir]
            wr = half * rad_w[ir]
            wr2 = wr * r * r
            if dy < 1e-12 * S:
                mu_lo = -1.0
            else:
                mu_lo = (dy * dy + r * r - S * S) / (2.0 * dy * r)
                if mu_lo < -1.0:
                    mu_lo = -1.0
                elif mu_lo > 1.0:
                    mu_lo = 1.0
            half_mu = 0.5 * (1.0 - mu_lo)
            for ip in range(n_pol):
                mu = mu_lo + half_mu * (pol_x[ip] + 1.0)
                wmu = half_mu * pol_w[ip]
                sin_t = 1.0 - mu * mu
                sin_t = sqrt(sin_t) if sin_t > 0.0 else 0.0
                for ia in range(n_az):
                    cphi = az_c[ia]
                    sphi = az_s[ia]
                    dx0 = mu * e3[0] + sin_t * (cphi * e1[0] + sphi * e2[0])
                    dx1 = mu * e3[1] + sin_t * (cphi * e1[1] + sphi * e2[1])
                    dx2 = mu * e3[2] + sin_t * (cphi * e1[2] + sphi * e2[2])
                    wq = wr2 * wmu * az_w
                    # source point and weight factors
                    z0 = y[0] + r * dx0
                    z1 = y[1] + r * dx1
                    z2 = y[2] + r * dx2
                    rz = sqrt(z0 * z0 + z1 * z1 + z2 * z2)
                    _w_eval(wp, rz, &w0, &w1)
                    g0 = wq * w0
                    if rz > 1e-12:
                        g10 = wq * w1 * z0 / rz
                        g11 = wq * w1 * z1 / rz
                        g12 = wq * w1 * z2 / rz
                    else:
                        g10 = 0.0; g11 = 0.0; g12 = 0.0
                    # kernel stacks at x = -r*omega
                    x0 = -r * dx0
                    x1 = -r * dx1
                    x2 = -r * dx2
                    r2 = x0 * x0 + x1 * x1 + x2 * x2
                    s = x0 * v[0] + x1 * v[1] + x2 * v[2]
                    Q = a * r2 + s * s
                    invQ = 1.0 / Q
                    isq = sqrt(invQ)
                    f1 = -0.5 * isq * invQ
                    f2 = 0.75 * isq * invQ * invQ
                    twos = 2.0 * s
                    twor2 = 2.0 * r2
                    Qx[0] = 2.0 * a * x0 + twos * v[0]
                    Qx[1] = 2.0 * a * x1 + twos * v[1]
                    Qx[2] = 2.0 * a * x2 + twos * v[2]
                    Qv[0] = twos * x0 - twor2 * v[0]
                    Qv[1] = twos * x1 - twor2 * v[1]
                    Qv[2] = twos * x2 - twor2 * v[2]
                    fxq[0] = f1 * Qx[0]
                    fxq[1] = f1 * Qx[1]
                    fxq[2] = f1 * Qx[2]
                    fxvq[0] = f2 * Qx[0] * Qv[0] + f1 * (-4.0 * v[0] * x0 + 2.0 * x0 * v[0] + twos)
                    fxvq[1] = f2 * Qx[0] * Qv[1] + f1 * (-4.0 * v[1] * x0 + 2.0 * x1 * v[0])
                    fxvq[2] = f2 * Qx[0] * Qv[2] + f1 * (-4.0 * v[2] * x0 + 2.0 * x2 * v[0])
                    fxvq[3] = f2 * Qx[1] * Qv[0] + f1 * (-4.0 * v[0] * x1 + 2.0 * x0 * v[1])
                    fxvq[4] = f2 * Qx[1] * Qv[1] + f1 * (-4.0 * v[1] * x1 + 2.0 * x1 * v[1] + twos)
                    fxvq[5] = f2 * Qx[1] * Qv[2] + f1 * (-4.0 * v[2] * x1 + 2.0 * x2 * v[1])
                    fxvq[6] = f2 * Qx[2] * Qv[0] + f1 * (-4.0 * v[0] * x2 + 2.0 * x0 * v[2])
                    fxvq[7] = f2 * Qx[2] * Qv[1] + f1 * (-4.0 * v[1] * x2 + 2.0 * x1 * v[2])
                    fxvq[8] = f2 * Qx[2] * Qv[2] + f1 * (-4.0 * v[2] * x2 + 2.0 * x2 * v[2] + twos)
                    for i in range(3):
                        fx[i] += g0 * fxq[i]
                    for i in range(9):
                        fxv[i] += g0 * fxvq[i]
                    fxx[0] += g10 * fxq[0]
                    fxx[1] += g10 * fxq[1]
                    fxx[2] += g10 * fxq[2]
                    fxx[3] += g11 * fxq[0]
                    fxx[4] += g11 * fxq[1]
                    fxx[5] += g11 * fxq[2]
                    fxx[6] += g12 * fxq[0]
                    fxx[7] += g12 * fxq[1]
                    fxx[8] += g12 * fxq[2]
                    for j in range(9):
                        fxxv[j] += g10 * fxvq[j]
                        fxxv[9 + j] += g11 * fxvq[j]
                        fxxv[18 + j] += g12 * fxvq[j]
    for i in range(3):
        fx[i] *= FOURPI_INV
    for i in range(9):
        fxv[i] *= FOURPI_INV
        fxx[i] *= FOURPI_INV
    for i in range(27):
        fxxv[i] *= FOURPI_INV


# ---------------------------------------------------------------------------
# comoving field assembly and spherical-mean reduction
# ---------------------------------------------------------------------------

# epsilon_{iab} as index/sign tables
cdef int EPS_I[6]
cdef int EPS_A[6]
cdef int EPS_B[6]
cdef double EPS_S[6]
EPS_I[0] = 0; EPS_A[0] = 1; EPS_B[0] = 2; EPS_S[0] = 1.0
EPS_I[1] = 0; EPS_A[1] = 2; EPS_B[1] = 1; EPS_S[1] = -1.0
EPS_I[2] = 1; EPS_A[2] = 2; EPS_B[2] = 0; EPS_S[2] = 1.0
EPS_I[3] = 1; EPS_A[3] = 0; EPS_B[3] = 2; EPS_S[3] = -1.0
EPS_I[4] = 2; EPS_A[4] = 0; EPS_B[4] = 1; EPS_S[4] = 1.0
EPS_I[5] = 2; EPS_A[5] = 1; EPS_B[5] = 0; EPS_S[5] = -1.0


cdef void _dv_fields(const double* v, const double* fx, const double* fxv,
                     double* dvE, double* dvB) noexcept nogil:
    cdef Py_ssize_t i, j, k, e
    cdef double vdot = fx[0] * v[0] + fx[1] * v[1] + fx[2] * v[2]
    cdef double vP1v[3]
    for j in range(3):
        vP1v[j] = v[0] * fxv[j] + v[1] * fxv[3 + j] + v[2] * fxv[6 + j]
    for i in range(3):
        for j in range(3):
            dvE[3 * i + j] = -fxv[3 * i + j] + v[i] * (fx[j] + vP1v[j])
        dvE[4 * i] += vdot
    for i in range(9):
        dvB[i] = 0.0
    for e in range(6):
        # -eps_{ijk} P1_k  (i = EPS_I, j = EPS_A, k = EPS_B)
        dvB[3 * EPS_I[e] + EPS_A[e]] -= EPS_S[e] * fx[EPS_B[e]]
        # -eps_{iab} v_a P1v[b, j]
        for j in range(3):
            dvB[3 * EPS_I[e] + j] -= EPS_S[e] * v[EPS_A[e]] * fxv[3 * EPS_B[e] + j]


cdef void _dxdv_fields(const double* v, const double* fxx, const double* fxxv,
                       double* dE, double* dB) noexcept nogil:
    # dE/dB have layout [i, k, l] = d_k d_{v_l} field_i
    cdef Py_ssize_t i, k, l, e
    cdef double vP2[3]
    cdef double vP2v[9]
    for k in range(3):
        vP2[k] = v[0] * fxx[3 * 0 + k] + v[1] * fxx[3 * 1 + k] + v[2] * fxx[3 * 2 + k]
    for k in range(9):
        vP2v[k] = v[0] * fxxv[k] + v[1] * fxxv[9 + k] + v[2] * fxxv[18 + k]
    for i in range(3):
        for k in range(3):
            for l in range(3):
                dE[9 * i + 3 * k + l] = (-fxxv[9 * i + 3 * k + l]
                                         + v[i] * fxx[3 * l + k]
                                         + v[i] * vP2v[3 * k + l])
            dE[9 * i + 3 * k + i] += vP2[k]
    for i in range(27):
        dB[i] = 0.0
    for e in range(6):
        # -eps_{ila} P2[a, k] -> dB[i, k, l]
        for k in range(3):
            dB[9 * EPS_I[e] + 3 * k + EPS_A[e]] -= EPS_S[e] * fxx[3 * EPS_B[e] + k]
        # -eps_{iab} v_a P2v[b, k, l]
        for k in range(9):
            dB[9 * EPS_I[e] + k] -= EPS_S[e] * v[EPS_A[e]] * fxxv[9 * EPS_B[e] + k]


cdef void _pair_accumulate(const double* n, double u, double tau,
                           const double* dvE, const double* dvB,
                           const double* dE, const double* dB,
                           double* ME, double* MB) noexcept nogil:
    cdef Py_ssize_t i, j, e
    cdef double tu = tau * u
    cdef double nd, curl
    for i in range(3):
        for j in range(3):
            nd = (n[0] * dE[9 * i + j] + n[1] * dE[9 * i + 3 + j]
                  + n[2] * dE[9 * i + 6 + j])
            ME[3 * i + j] += u * dvE[3 * i + j] + tu * nd
            nd = (n[0] * dB[9 * i + j] + n[1] * dB[9 * i + 3 + j]
                  + n[2] * dB[9 * i + 6 + j])
            MB[3 * i + j] += u * dvB[3 * i + j] + tu * nd
    for e in range(6):
        for j in range(3):
            # curl over the first two axes: eps_{iab} d_a field_b
            curl = EPS_S[e] * dB[9 * EPS_B[e] + 3 * EPS_A[e] + j]
            ME[3 * EPS_I[e] + j] += tu * curl
            curl = EPS_S[e] * dE[9 * EPS_B[e] + 3 * EPS_A[e] + j]
            MB[3 * EPS_I[e] + j] -= tu * curl


cdef void _stacks_for_targets(double[:, ::1] targs, const double* v, double a,
                              const WP* wp, double margin,
                              const double[:, ::1] bpts, const double[::1] bwts,
                              const double[::1] rad_x, const double[::1] rad_w,
                              const double[::1] pol_x, const double[::1] pol_w,
                              Py_ssize_t n_az, double[:, ::1] fx,
                              double[:, ::1] fxv, double[:, ::1] fxx,
                              double[:, ::1] fxxv) noexcept nogil:
    cdef Py_ssize_t m
    cdef double y[3]
    cdef double d, lim
    lim = wp.support * (1.0 + margin)
    for m in range(targs.shape[0]):
        y[0] = targs[m, 0]
        y[1] = targs[m, 1]
        y[2] = targs[m, 2]
        d = sqrt(y[0] * y[0] + y[1] * y[1] + y[2] * y[2])
        if d >= lim:
            _far_target(y, v, a, bpts, bwts, &fx[m, 0], &fxv[m, 0],
                        &fxx[m, 0], &fxxv[m, 0])
        else:
            _near_target(y, d, v, a, wp, rad_x, rad_w, rad_x.shape[0],
                         pol_x, pol_w, pol_x.shape[0], n_az,
                         &fx[m, 0], &fxv[m, 0], &fxx[m, 0], &fxxv[m, 0])


cdef int _fill_wp(WP* wp, w, object keep) except -1:
    cdef double[::1] xv
    cdef double[:, ::1] cv
    wp.kind = int(w.kind)
    wp.Z = float(w.Z)
    wp.R = float(w.R)
    wp.support = float(w.support)
    wp.ppx = NULL
    wp.ppc = NULL
    wp.nbrk = 0
    if wp.kind == 2:
        ppx = np.ascontiguousarray(w.ppx, dtype=np.float64)
        ppc = np.ascontiguousarray(w.ppc, dtype=np.float64)
        keep.append(ppx)
        keep.append(ppc)
        xv = ppx
        cv = ppc
        wp.ppx = &xv[0]
        wp.ppc = &cv[0, 0]
        wp.nbrk = xv.shape[0]
    return 0


def _sphere_orders(tau, R, accurate):
    base = 8 if tau <= 2.0 * R else (12 if tau <= 6.0 * R else 16)
    if accurate:
        base += 6
    return base, 2 * base


def propagated_source_pair(x0, tau, v, w, quad, accurate=False):
    """Free-field evolution of the velocity-gradient source, at one point.

    Same contract as the reference implementation; see ``_ref``.
    """
    x0 = np.asarray(x0, dtype=float).reshape(3)
    vv = np.ascontiguousarray(np.asarray(v, dtype=float).reshape(3))
    far_nrad, far_np, far_na, near_n, near_np, near_na, margin = quad
    if near_na > 64:                 # static azimuth table size
        from . import _ref
        return _ref.propagated_source_pair(x0, tau, v, w, quad, accurate)
    bpts, bwts = _ball(w, far_nrad, far_np, far_na)
    rad_x, rad_w = _leg(near_n)
    pol_x, pol_w = _leg(near_np)

    keep = []
    cdef WP wp
    _fill_wp(&wp, w, keep)
    cdef double[::1] vmv = vv
    cdef double a = 1.0 - vv @ vv
    cdef double tauc = float(tau)
    cdef double marginc = float(margin)
    cdef Py_ssize_t near_na_c = int(near_na)

    if tauc <= 1e-9:
        targets = np.ascontiguousarray(x0[None, :])
    else:
        npol, naz = _sphere_orders(tauc, w.R, accurate)
        dirs, sphw = _sphere(npol, naz)
        targets = np.ascontiguousarray(x0[None, :] + tauc * dirs)
    M = len(targets)
    fx = np.empty((M, 3))
    fxv = np.empty((M, 9))
    fxx = np.empty((M, 9))
    fxxv = np.empty((M, 27))
    cdef double[:, ::1] tv = targets
    cdef double[:, ::1] fxm = fx
    cdef double[:, ::1] fxvm = fxv
    cdef double[:, ::1] fxxm = fxx
    cdef double[:, ::1] fxxvm = fxxv
    cdef double[:, ::1] bpv = bpts
    cdef double[::1] bwv = bwts
    cdef double[::1] rxv = rad_x
    cdef double[::1] rwv = rad_w
    cdef double[::1] pxv = pol_x
    cdef double[::1] pwv = pol_w
    with nogil:
        _stacks_for_targets(tv, &vmv[0], a, &wp, marginc, bpv, bwv,
                            rxv, rwv, pxv, pwv, near_na_c,
                            fxm, fxvm, fxxm, fxxvm)

    ME = np.zeros((3, 3))
    MB = np.zeros((3, 3))
    cdef double[:, ::1] MEv = ME
    cdef double[:, ::1] MBv = MB
    cdef double dvE[9]
    cdef double dvB[9]
    cdef double dE[27]
    cdef double dB[27]
    cdef double nrm[3]
    cdef double[:, ::1] dirv
    cdef double[::1] swv
    cdef Py_ssize_t m
    cdef double u

    if tauc <= 1e-9:
        _dv_fields(&vmv[0], &fxm[0, 0], &fxvm[0, 0], &MEv[0, 0], &MBv[0, 0])
        return ME, MB

    dirv = dirs
    swv = sphw
    with nogil:
        for m in range(dirv.shape[0]):
            _dv_fields(&vmv[0], &fxm[m, 0], &fxvm[m, 0], dvE, dvB)
            _dxdv_fields(&vmv[0], &fxxm[m, 0], &fxxvm[m, 0], dE, dB)
            nrm[0] = dirv[m, 0]
            nrm[1] = dirv[m, 1]
            nrm[2] = dirv[m, 2]
            u = swv[m] * FOURPI_INV
            _pair_accumulate(nrm, u, tauc, dvE, dvB, dE, dB,
                             &MEv[0, 0], &MBv[0, 0])
    return ME, MB


def kernel_row(x0s, taus, vs, Fps, qdot_t, w, quad, accurate=False):
    """Memory-kernel matrices a(t, s) for one row of history entries."""
    x0s = np.asarray(x0s, dtype=float)
    vs = np.asarray(vs, dtype=float)
    Fps = np.asarray(Fps, dtype=float)
    qd = np.asarray(qdot_t, dtype=float).reshape(3)
    K = len(taus)
    out = np.empty((K, 3, 3))
    for k in range(K):
        ME, MB = propagated_source_pair(x0s[k], taus[k], vs[k], w, quad,
                                        accurate)
        cross = np.empty((3, 3))
        cross[0] = qd[1] * MB[2] - qd[2] * MB[1]
        cross[1] = qd[2] * MB[0] - qd[0] * MB[2]
        cross[2] = qd[0] * MB[1] - qd[1] * MB[0]
        out[k] = -(ME + cross) @ Fps[k]
    return out


# ---------------------------------------------------------------------------
# spectral grid operations (fused single-pass loops)
# ---------------------------------------------------------------------------


cdef inline object _cplx4(arr):
    return np.ascontiguousarray(arr, dtype=np.complex128)


cdef inline object _real_arr(arr):
    return np.ascontiguousarray(arr, dtype=np.float64)


def mode_rotate(Eh, Bh, c, s, khat):
    """Free-group rotation: E' = cE + i s khat x B, B' = cB - i s khat x E."""
    Ec = _cplx4(Eh)
    Bc = _cplx4(Bh)
    cr = _real_arr(c)
    sr = _real_arr(s)
    kh = _real_arr(khat)
    n = cr.size
    Eo = np.empty_like(Ec)
    Bo = np.empty_like(Bc)
    cdef double complex[:, ::1] E = Ec.reshape(3, n)
    cdef double complex[:, ::1] B = Bc.reshape(3, n)
    cdef double complex[:, ::1] Er = Eo.reshape(3, n)
    cdef double complex[:, ::1] Br = Bo.reshape(3, n)
    cdef double[:, ::1] k = kh.reshape(3, n)
    cdef double[::1] cv = cr.reshape(n)
    cdef double[::1] sv = sr.reshape(n)
    cdef Py_ssize_t i
    cdef double kx, ky, kz, cc
    cdef double complex Icx = 1j
    cdef double complex isv, e0, e1, e2, b0, b1, b2
    with nogil:
        for i in range(E.shape[1]):
            kx = k[0, i]; ky = k[1, i]; kz = k[2, i]
            cc = cv[i]
            isv = Icx * sv[i]
            e0 = E[0, i]; e1 = E[1, i]; e2 = E[2, i]
            b0 = B[0, i]; b1 = B[1, i]; b2 = B[2, i]
            Er[0, i] = cc * e0 + isv * (ky * b2 - kz * b1)
            Er[1, i] = cc * e1 + isv * (kz * b0 - kx * b2)
            Er[2, i] = cc * e2 + isv * (kx * b1 - ky * b0)
            Br[0, i] = cc * b0 - isv * (ky * e2 - kz * e1)
            Br[1, i] = cc * b1 - isv * (kz * e0 - kx * e2)
            Br[2, i] = cc * b2 - isv * (kx * e1 - ky * e0)
    return Eo, Bo


def coupled_field_step(Eh, Bh, c, s, s1, s2, khat, jamp, jvec):
    """Rotation plus the variation-of-constants source term."""
    Ec = _cplx4(Eh)
    Bc = _cplx4(Bh)
    cr = _real_arr(c)
    sr = _real_arr(s)
    s1r = _real_arr(s1)
    s2r = _real_arr(s2)
    kh = _real_arr(khat)
    ja = _cplx4(jamp)
    jv = np.asarray(jvec, dtype=float).reshape(3)
    n = cr.size
    Eo = np.empty_like(Ec)
    Bo = np.empty_like(Bc)
    cdef double complex[:, ::1] E = Ec.reshape(3, n)
    cdef double complex[:, ::1] B = Bc.reshape(3, n)
    cdef double complex[:, ::1] Er = Eo.reshape(3, n)
    cdef double complex[:, ::1] Br = Bo.reshape(3, n)
    cdef double[:, ::1] k = kh.reshape(3, n)
    cdef double[::1] cv = cr.reshape(n)
    cdef double[::1] sv = sr.reshape(n)
    cdef double[::1] s1v = s1r.reshape(n)
    cdef double[::1] s2v = s2r.reshape(n)
    cdef double complex[::1] jav = ja.reshape(n)
    cdef double jx = jv[0], jy = jv[1], jz = jv[2]
    cdef Py_ssize_t i
    cdef double kx, ky, kz, cc
    cdef double complex Icx = 1j
    cdef double complex isv, mis2, amp, J0, J1, J2, e0, e1, e2, b0, b1, b2
    with nogil:
        for i in range(E.shape[1]):
            kx = k[0, i]; ky = k[1, i]; kz = k[2, i]
            cc = cv[i]
            isv = Icx * sv[i]
            mis2 = -Icx * s2v[i]
            amp = jav[i]
            J0 = amp * jx; J1 = amp * jy; J2 = amp * jz
            e0 = E[0, i]; e1 = E[1, i]; e2 = E[2, i]
            b0 = B[0, i]; b1 = B[1, i]; b2 = B[2, i]
            Er[0, i] = cc * e0 + isv * (ky * b2 - kz * b1) + s1v[i] * J0
            Er[1, i] = cc * e1 + isv * (kz * b0 - kx * b2) + s1v[i] * J1
            Er[2, i] = cc * e2 + isv * (kx * b1 - ky * b0) + s1v[i] * J2
            Br[0, i] = cc * b0 - isv * (ky * e2 - kz * e1) + mis2 * (ky * J2 - kz * J1)
            Br[1, i] = cc * b1 - isv * (kz * e0 - kx * e2) + mis2 * (kz * J0 - kx * J2)
            Br[2, i] = cc * b2 - isv * (kx * e1 - ky * e0) + mis2 * (kx * J1 - ky * J0)
    return Eo, Bo


def gauss_project(Eh, kvec, k2, target_long):
    """Replace the longitudinal electric part by the constraint value."""
    Ec = _cplx4(Eh)
    kv = _real_arr(kvec)
    k2r = _real_arr(k2)
    tl = _cplx4(target_long)
    n = k2r.size
    Eo = np.empty_like(Ec)
    cdef double complex[:, ::1] E = Ec.reshape(3, n)
    cdef double complex[:, ::1] Er = Eo.reshape(3, n)
    cdef double[:, ::1] k = kv.reshape(3, n)
    cdef double[::1] k2v = k2r.reshape(n)
    cdef double complex[::1] tv = tl.reshape(n)
    cdef Py_ssize_t i
    cdef double kx, ky, kz, kk
    cdef double complex Icx = 1j
    cdef double complex kdotE, corr
    with nogil:
        for i in range(E.shape[1]):
            kk = k2v[i]
            if kk > 0.0:
                kx = k[0, i]; ky = k[1, i]; kz = k[2, i]
                kdotE = kx * E[0, i] + ky * E[1, i] + kz * E[2, i]
                corr = (-Icx * tv[i] - kdotE) / kk
                Er[0, i] = E[0, i] + kx * corr
                Er[1, i] = E[1, i] + ky * corr
                Er[2, i] = E[2, i] + kz * corr
            else:
                Er[0, i] = E[0, i]
                Er[1, i] = E[1, i]
                Er[2, i] = E[2, i]
    return Eo


def point_eval(Eh, Bh, weight, px, py, pz, vol):
    """Weighted field values at a point from spectral data."""
    Ec = _cplx4(Eh)
    Bc = _cplx4(Bh)
    wr = _real_arr(weight)
    pxc = np.ascontiguousarray(px, dtype=np.complex128)
    pyc = np.ascontiguousarray(py, dtype=np.complex128)
    pzc = np.ascontiguousarray(pz, dtype=np.complex128)
    N = wr.shape[0]
    cdef double complex[:, :, :, ::1] E = Ec
    cdef double complex[:, :, :, ::1] B = Bc
    cdef double[:, :, ::1] w = wr
    cdef double complex[::1] pxv = pxc
    cdef double complex[::1] pyv = pyc
    cdef double complex[::1] pzv = pzc
    cdef Py_ssize_t ix, iy, iz, c
    cdef double complex pxy, ph
    cdef double phr, phi
    cdef double acc[6]
    cdef double volc = float(vol)
    for c in range(6):
        acc[c] = 0.0
    with nogil:
        for ix in range(w.shape[0]):
            for iy in range(w.shape[1]):
                pxy = pxv[ix] * pyv[iy]
                for iz in range(w.shape[2]):
                    ph = pxy * pzv[iz]
                    phr = ph.real * w[ix, iy, iz]
                    phi = ph.imag * w[ix, iy, iz]
                    acc[0] += E[0, ix, iy, iz].real * phr - E[0, ix, iy, iz].imag * phi
                    acc[1] += E[1, ix, iy, iz].real * phr - E[1, ix, iy, iz].imag * phi
                    acc[2] += E[2, ix, iy, iz].real * phr - E[2, ix, iy, iz].imag * phi
                    acc[3] += B[0, ix, iy, iz].real * phr - B[0, ix, iy, iz].imag * phi
                    acc[4] += B[1, ix, iy, iz].real * phr - B[1, ix, iy, iz].imag * phi
                    acc[5] += B[2, ix, iy, iz].real * phr - B[2, ix, iy, iz].imag * phi
    Ev = np.array([acc[0], acc[1], acc[2]]) / volc
    Bv = np.array([acc[3], acc[4], acc[5]]) / volc
    return Ev, Bv


def candidate_add(accE, accB, SEu, SBu, cs, ss, khat, coef):
    """acc += coef * U(-s) (SEu, SBu) accumulated in place."""
    if not (isinstance(accE, np.ndarray) and accE.dtype == np.complex128
            and accE.flags.c_contiguous):
        raise TypeError("accE must be a C-contiguous complex128 array")
    if not (isinstance(accB, np.ndarray) and accB.dtype == np.complex128
            and accB.flags.c_contiguous):
        raise TypeError("accB must be a C-contiguous complex128 array")
    SEc = _cplx4(SEu)
    SBc = _cplx4(SBu)
    cr = _real_arr(cs)
    sr = _real_arr(ss)
    kh = _real_arr(khat)
    n = cr.size
    cdef double complex[:, ::1] aE = accE.reshape(3, n)
    cdef double complex[:, ::1] aB = accB.reshape(3, n)
    cdef double complex[:, ::1] E = SEc.reshape(3, n)
    cdef double complex[:, ::1] B = SBc.reshape(3, n)
    cdef double[:, ::1] k = kh.reshape(3, n)
    cdef double[::1] cv = cr.reshape(n)
    cdef double[::1] sv = sr.reshape(n)
    cdef double co = float(coef)
    cdef Py_ssize_t i
    cdef double kx, ky, kz, cc
    cdef double complex Icx = 1j
    cdef double complex isv, e0, e1, e2, b0, b1, b2
    with nogil:
        for i in range(E.shape[1]):
            kx = k[0, i]; ky = k[1, i]; kz = k[2, i]
            cc = cv[i]
            isv = -Icx * sv[i]          # U(-s): sign of the rotation flips
            e0 = E[0, i]; e1 = E[1, i]; e2 = E[2, i]
            b0 = B[0, i]; b1 = B[1, i]; b2 = B[2, i]
            aE[0, i] = aE[0, i] + co * (cc * e0 + isv * (ky * b2 - kz * b1))
            aE[1, i] = aE[1, i] + co * (cc * e1 + isv * (kz * b0 - kx * b2))
            aE[2, i] = aE[2, i] + co * (cc * e2 + isv * (kx * b1 - ky * b0))
            aB[0, i] = aB[0, i] + co * (cc * b0 - isv * (ky * e2 - kz * e1))
            aB[1, i] = aB[1, i] + co * (cc * b1 - isv * (kz * e0 - kx * e2))
            aB[2, i] = aB[2, i] + co * (cc * b2 - isv * (kx * e1 - ky * e0))
    return accE, accB
