# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled trajectory kernels.

Same contract as ``_kernels_py``: batches of pre-drawn noise in, final
states and record summaries out.  Each trajectory is stepped in a tight C
loop with the GIL released.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport atan2, cos, exp, fabs, fmod, frexp, ldexp, sin, sqrt

cnp.import_array()

cdef double TWO_PI = 6.283185307179586
cdef double HALF_PI = 1.5707963267948966

CTRL_CONSTANT = 0
CTRL_HETERODYNE = 1
CTRL_ADAPTIVE_SINGLE = 2
CTRL_ADAPTIVE_MEAN = 3

cdef enum:
    _OK = 0
    _STEP_TOO_COARSE = 1
    _ZERO_NORM = 2

cdef double _PROB_CAP = 0.1

STATUS_OK = _OK
STATUS_STEP_TOO_COARSE = _STEP_TOO_COARSE
STATUS_ZERO_NORM = _ZERO_NORM
JUMP_PROB_CAP = _PROB_CAP
BACKEND = "compiled"

cdef double RESCALE_HI = ldexp(1.0, 500)
cdef double RESCALE_LO = ldexp(1.0, -500)


cdef inline double _wrap(double phi) noexcept nogil:
    cdef double out = fmod(phi, TWO_PI)
    if out < 0:
        out += TWO_PI
    return out


cdef inline double _arg_or(double complex z, double zero_phase) noexcept nogil:
    if z.real == 0 and z.imag == 0:
        return zero_phase
    return atan2(z.imag, z.real)


cdef inline double _phase(int code, double phi0, double delta, double zero_phase,
                          double complex R, double complex S, double t) noexcept nogil:
    cdef double complex z
    if code == 0:
        return _wrap(phi0)
    if code == 1:
        return _wrap(phi0 + delta * t)
    if code == 2:
        return _wrap(_arg_or(R, zero_phase) + HALF_PI)
    z = R * (1.0 - exp(-t)) + S * R.conjugate()
    return _wrap(_arg_or(z, zero_phase) + HALF_PI)


cdef inline double _norm2(double complex[::1] v, int d) noexcept nogil:
    cdef double s = 0
    cdef int i
    for i in range(d):
        s += v[i].real * v[i].real + v[i].imag * v[i].imag
    return s


cdef void _exp_lower(double complex[::1] psi, double complex[::1] term,
                     double complex[::1] nxt, double complex x, int shift,
                     double[::1] coef, int d) noexcept nogil:
    """psi <- exp(x a^shift) psi via the terminating power series."""
    cdef int i, k = 0
    cdef double big, small
    for i in range(d):
        term[i] = psi[i]
    while True:
        k += 1
        big = 0
        small = 0
        for i in range(d):
            if i < d - shift:
                nxt[i] = (x / k) * coef[i] * term[i + shift]
            else:
                nxt[i] = 0
        for i in range(d):
            term[i] = nxt[i]
            psi[i] = psi[i] + term[i]
            if fabs(psi[i].real) > big:
                big = fabs(psi[i].real)
            if fabs(psi[i].imag) > big:
                big = fabs(psi[i].imag)
            if fabs(term[i].real) > small:
                small = fabs(term[i].real)
            if fabs(term[i].imag) > small:
                small = fabs(term[i].imag)
        if k * shift >= d - 1 or small == 0 or small <= 1e-17 * big:
            return


cdef inline double _rescale(double complex[::1] v, int d, long long* log2) noexcept nogil:
    cdef double n2 = _norm2(v, d)
    cdef int e, k, i
    if n2 > RESCALE_HI or (n2 < RESCALE_LO and n2 > 0):
        frexp(n2, &e)
        k = (e - (e & 1)) // 2  # floor(e / 2)
        for i in range(d):
            v[i] = ldexp(v[i].real, -k) + 1j * ldexp(v[i].imag, -k)
        log2[0] += k
        n2 = _norm2(v, d)
    return n2


cdef void _matvec(const double complex[:, ::1] m, double complex[::1] v,
                  double complex[::1] out, int d) noexcept nogil:
    cdef int i, j
    cdef double complex s
    for i in range(d):
        s = 0
        for j in range(d):
            s = s + m[i, j] * v[j]
        out[i] = s


def diffusive_batch(psi0, dw, double dt, double t0, int ctrl_code, ctrl_params,
                    bint exact, c, k, bint store_phases):
    cdef const double[:, ::1] W = np.ascontiguousarray(dw, dtype=np.float64)
    cdef int nb = W.shape[0], nsteps = W.shape[1]
    cdef const double complex[::1] p0 = np.ascontiguousarray(psi0, dtype=np.complex128)
    cdef int d = p0.shape[0]
    cdef const double complex[:, ::1] C = np.ascontiguousarray(c, dtype=np.complex128)
    cdef const double complex[:, ::1] K = np.ascontiguousarray(k, dtype=np.complex128)
    params = np.asarray(ctrl_params, dtype=np.float64)
    cdef double phi0 = params[0], delta = params[1], zero_phase = params[2]

    out_psi = np.empty((nb, d), np.complex128)
    out_log2 = np.zeros(nb, np.int64)
    out_R = np.zeros(nb, np.complex128)
    out_S = np.zeros(nb, np.complex128)
    out_phases = np.empty((nb, nsteps if store_phases else 0), np.float64)
    out_top = np.zeros(nb, np.float64)
    cdef double complex[:, ::1] P = out_psi
    cdef long long[::1] L2 = out_log2
    cdef double complex[::1] RR = out_R
    cdef double complex[::1] SS = out_S
    cdef double[:, ::1] PH = out_phases
    cdef double[::1] TOP = out_top

    cdef double complex[::1] v
    cdef double complex[::1] term = np.empty(d, np.complex128)
    cdef double complex[::1] nxt = np.empty(d, np.complex128)
    cdef double complex[::1] cv = np.empty(d, np.complex128)
    cdef double complex[::1] kv = np.empty(d, np.complex128)
    cdef double[::1] coef1 = np.ones(d, np.float64)
    cdef double[::1] coef2 = np.ones(d, np.float64)
    cdef double[::1] decay = np.exp(-0.5 * dt * np.arange(d, dtype=np.float64))
    cdef int b, s, i
    cdef long long l2
    cdef double t, phi, w, n2, rel, eh, ef
    cdef double ehs = exp(-0.5 * dt), efs = exp(-dt)
    cdef double complex R, S, eip, emi
    for i in range(d - 1):
        coef1[i] = sqrt(i + 1.0)
    for i in range(d - 2):
        coef2[i] = sqrt((i + 1.0) * (i + 2.0))

    with nogil:
        for b in range(nb):
            v = P[b]
            for i in range(d):
                v[i] = p0[i]
            R = 0
            S = 0
            l2 = 0
            eh = exp(-0.5 * t0)
            ef = exp(-t0)
            for s in range(nsteps):
                t = t0 + s * dt
                phi = _phase(ctrl_code, phi0, delta, zero_phase, R, S, t)
                if store_phases:
                    PH[b, s] = phi
                w = W[b, s]
                eip = cos(phi) + 1j * sin(phi)
                emi = eip.conjugate()
                if exact:
                    _exp_lower(v, term, nxt, w * emi, 1, coef1, d)
                    _exp_lower(v, term, nxt, -0.5 * dt * emi * emi, 2, coef2, d)
                    for i in range(d):
                        v[i] = v[i] * decay[i]
                else:
                    _matvec(C, v, cv, d)
                    _matvec(K, v, kv, d)
                    for i in range(d):
                        v[i] = v[i] + w * emi * cv[i] - dt * kv[i]
                R = R + eip * eh * w
                S = S - eip * eip * (ef * dt)
                eh = eh * ehs
                ef = ef * efs
                n2 = _rescale(v, d, &l2)
                if n2 > 0:
                    rel = (v[d - 1].real * v[d - 1].real + v[d - 1].imag * v[d - 1].imag) / n2
                    if rel > TOP[b]:
                        TOP[b] = rel
            RR[b] = R
            SS[b] = S
            L2[b] = l2
    return out_psi, out_log2, out_R, out_S, out_phases, out_top


def jump_batch(psi0, u, jump_op, nojump_op, prob_op, double lam1, bint linear):
    cdef const double[:, ::1] U = np.ascontiguousarray(u, dtype=np.float64)
    cdef int nb = U.shape[0], nsteps = U.shape[1]
    cdef const double complex[::1] p0 = np.ascontiguousarray(psi0, dtype=np.complex128)
    cdef int d = p0.shape[0]
    cdef const double complex[:, ::1] J = np.ascontiguousarray(jump_op, dtype=np.complex128)
    cdef const double complex[:, ::1] N = np.ascontiguousarray(nojump_op, dtype=np.complex128)
    cdef const double complex[:, ::1] M = np.ascontiguousarray(prob_op, dtype=np.complex128)

    out_psi = np.empty((nb, d), np.complex128)
    out_log2 = np.zeros(nb, np.int64)
    out_events = np.zeros((nb, nsteps), np.uint8)
    out_status = np.zeros(nb, np.int8)
    out_top = np.zeros(nb, np.float64)
    cdef double complex[:, ::1] P = out_psi
    cdef long long[::1] L2 = out_log2
    cdef unsigned char[:, ::1] EV = out_events
    cdef signed char[::1] ST = out_status
    cdef double[::1] TOP = out_top

    cdef double complex[::1] v
    cdef double complex[::1] tmp = np.empty(d, np.complex128)
    cdef int b, s, i
    cdef long long l2
    cdef double n2, p, rel, scale
    cdef double complex acc
    cdef bint jump

    with nogil:
        for b in range(nb):
            v = P[b]
            for i in range(d):
                v[i] = p0[i]
            l2 = 0
            for s in range(nsteps):
                if linear:
                    jump = U[b, s] < lam1
                else:
                    n2 = _norm2(v, d)
                    _matvec(M, v, tmp, d)
                    acc = 0
                    for i in range(d):
                        acc = acc + v[i].conjugate() * tmp[i]
                    p = acc.real / n2
                    if p >= _PROB_CAP:
                        ST[b] = _STEP_TOO_COARSE
                        break
                    jump = U[b, s] < p
                if jump:
                    EV[b, s] = 1
                    _matvec(J, v, tmp, d)
                else:
                    _matvec(N, v, tmp, d)
                for i in range(d):
                    v[i] = tmp[i]
                if linear:
                    n2 = _rescale(v, d, &l2)
                else:
                    n2 = _norm2(v, d)
                    if n2 <= 1e-300:
                        ST[b] = _ZERO_NORM
                        break
                    scale = 1.0 / sqrt(n2)
                    for i in range(d):
                        v[i] = v[i] * scale
                    n2 = 1.0
                if n2 > 0:
                    rel = (v[d - 1].real * v[d - 1].real + v[d - 1].imag * v[d - 1].imag) / n2
                    if rel > TOP[b]:
                        TOP[b] = rel
            L2[b] = l2
    return out_psi, out_log2, out_events, out_status, out_top
