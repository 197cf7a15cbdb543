"""Pure-NumPy trajectory kernels, vectorized over a batch of trajectories.

Mirror of ``_kernels.pyx``; the two must agree to rounding.  Noise is always
drawn by the caller, so both backends consume identical random inputs.
"""

import math

import numpy as np

CTRL_CONSTANT = 0
CTRL_HETERODYNE = 1
CTRL_ADAPTIVE_SINGLE = 2
CTRL_ADAPTIVE_MEAN = 3

STATUS_OK = 0
STATUS_STEP_TOO_COARSE = 1
STATUS_ZERO_NORM = 2

JUMP_PROB_CAP = 0.1
_TWO_PI = 2.0 * math.pi
_RESCALE_HI = 2.0 ** 500
_RESCALE_LO = 2.0 ** -500

BACKEND = "python"


def _wrap(phi):
    out = np.fmod(phi, _TWO_PI)
    return np.where(out < 0, out + _TWO_PI, out)


def _arg_or(z, zero_phase):
    return np.where(z == 0, zero_phase, np.arctan2(z.imag, z.real))


def controller_phases(code, params, R, S, t):
    """Local-oscillator phase for every trajectory in the batch."""
    phi0, delta, zero_phase = params
    if code == CTRL_CONSTANT:
        return np.full(R.shape, _wrap(np.float64(phi0)))
    if code == CTRL_HETERODYNE:
        return np.full(R.shape, _wrap(np.float64(phi0 + delta * t)))
    if code == CTRL_ADAPTIVE_SINGLE:
        return _wrap(_arg_or(R, zero_phase) + 0.5 * math.pi)
    if code == CTRL_ADAPTIVE_MEAN:
        z = R * (1.0 - math.exp(-t)) + S * np.conj(R)
        return _wrap(_arg_or(z, zero_phase) + 0.5 * math.pi)
    raise ValueError(f"unknown controller code {code}")


def _exp_lower(psi, x, shift):
    """``exp(x a^shift) psi`` row-wise, by the terminating power series."""
    d = psi.shape[1]
    m = np.arange(d - shift)
    coef = np.ones(d - shift)
    for j in range(1, shift + 1):
        coef *= np.sqrt(m + j)
    acc = psi.copy()
    term = psi
    k = 0
    while True:
        k += 1
        nxt = np.zeros_like(term)
        nxt[:, :d - shift] = coef * term[:, shift:]
        term = (x / k)[:, None] * nxt
        acc += term
        big = np.max(np.abs(acc))
        if k * shift >= d - 1 or not np.any(term) or np.max(np.abs(term)) <= 1e-17 * big:
            return acc


def _rescale(psi, log2):
    n2 = np.einsum("bi,bi->b", psi.conj(), psi).real
    bad = (n2 > _RESCALE_HI) | ((n2 < _RESCALE_LO) & (n2 > 0))
    if np.any(bad):
        _, e = np.frexp(n2[bad])
        k = e // 2
        psi[bad] = np.ldexp(psi[bad].real, -k[:, None]) + 1j * np.ldexp(psi[bad].imag, -k[:, None])
        log2[bad] += k
        n2 = np.einsum("bi,bi->b", psi.conj(), psi).real
    return n2


def diffusive_batch(psi0, dw, dt, t0, ctrl_code, ctrl_params, exact, c, k,
                    store_phases):
    """Integrate the linear diffusive SSE for a batch of noise records.

    Returns ``(psi, log2, R, S, phases, top)``; the true unnormalized state is
    ``psi * 2**log2``.
    """
    dw = np.asarray(dw, dtype=float)
    nb, nsteps = dw.shape
    d = psi0.shape[0]
    psi = np.tile(np.asarray(psi0, complex), (nb, 1))
    log2 = np.zeros(nb, np.int64)
    R = np.zeros(nb, complex)
    S = np.zeros(nb, complex)
    phases = np.empty((nb, nsteps if store_phases else 0))
    top = np.zeros(nb)
    decay = np.exp(-0.5 * dt * np.arange(d))
    eh, ef = math.exp(-0.5 * t0), math.exp(-t0)
    ehs, efs = math.exp(-0.5 * dt), math.exp(-dt)
    cT = np.asarray(c, complex).T
    kT = np.asarray(k, complex).T
    for step in range(nsteps):
        t = t0 + step * dt
        phi = controller_phases(ctrl_code, ctrl_params, R, S, t)
        if store_phases:
            phases[:, step] = phi
        w = dw[:, step]
        eip = np.cos(phi) + 1j * np.sin(phi)
        if exact:
            psi = _exp_lower(psi, w * np.conj(eip), 1)
            psi = _exp_lower(psi, -0.5 * dt * np.conj(eip) ** 2, 2)
            psi *= decay
        else:
            psi = psi + (w * np.conj(eip))[:, None] * (psi @ cT) - dt * (psi @ kT)
        R += eip * eh * w
        S -= eip * eip * (ef * dt)
        eh *= ehs
        ef *= efs
        n2 = _rescale(psi, log2)
        with np.errstate(invalid="ignore", divide="ignore"):
            rel = np.where(n2 > 0, np.abs(psi[:, -1]) ** 2 / n2, 0.0)
        np.maximum(top, rel, out=top)
    return psi, log2, R, S, phases, top


def jump_batch(psi0, u, jump_op, nojump_op, prob_op, lam1, linear):
    """Jump unraveling for a batch of uniform-variate records.

    Physical (``linear=False``): jump with probability ``<prob_op>`` and
    renormalize every step.  Linear: jump with fixed ostensible probability
    ``lam1``, never renormalize.
    Returns ``(psi, log2, events, status, top)``.
    """
    u = np.asarray(u, dtype=float)
    nb, nsteps = u.shape
    psi = np.tile(np.asarray(psi0, complex), (nb, 1))
    log2 = np.zeros(nb, np.int64)
    events = np.zeros((nb, nsteps), np.uint8)
    status = np.zeros(nb, np.int8)
    top = np.zeros(nb)
    JT = np.asarray(jump_op, complex).T
    NT = np.asarray(nojump_op, complex).T
    MT = np.asarray(prob_op, complex).T
    alive = np.ones(nb, bool)
    for step in range(nsteps):
        if linear:
            jump = u[:, step] < lam1
        else:
            n2 = np.einsum("bi,bi->b", psi.conj(), psi).real
            p = np.einsum("bi,bi->b", psi.conj(), psi @ MT).real / n2
            coarse = alive & (p >= JUMP_PROB_CAP)
            status[coarse] = STATUS_STEP_TOO_COARSE
            alive &= ~coarse
            jump = u[:, step] < p
        jump &= alive
        events[jump, step] = 1
        new = np.where(jump[:, None], psi @ JT, psi @ NT)
        psi = np.where(alive[:, None], new, psi)
        n2 = np.einsum("bi,bi->b", psi.conj(), psi).real
        if not linear:
            dead = alive & (n2 <= 1e-300)
            status[dead] = STATUS_ZERO_NORM
            alive &= ~dead
            ok = alive & (n2 > 0)
            psi[ok] /= np.sqrt(n2[ok])[:, None]
            n2 = np.where(ok, 1.0, n2)
        else:
            n2 = _rescale(psi, log2)
        with np.errstate(invalid="ignore", divide="ignore"):
            rel = np.where(n2 > 0, np.abs(psi[:, -1]) ** 2 / n2, 0.0)
        np.maximum(top, rel, out=top)
    return psi, log2, events, status, top
