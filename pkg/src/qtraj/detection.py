"""Record functionals, conditioned states and measurement effects.

For the undriven damped mode (``H = 0, c = a``) observed by homodyne-type
detection, a whole photocurrent record enters the conditioned state only
through two complex running integrals,

    R(t) = sum_k e^{i Phi_k} e^{-t_k/2} dW_k,
    S(t) = -sum_k e^{2i Phi_k} e^{-t_k} dt,

and ``psibar(t) = exp(-a^dag a t/2) exp(S* a^2/2 + R* a) psi(0)``.  The
effect of the measurement up to ``t`` is the corresponding positive operator
``F = M^dag exp(-a^dag a t) M`` with ``M = exp(S* a^2/2 + R* a)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import expm

from .dynamics import LindbladModel
from .errors import DegenerateEffect, PositivityError, TruncationError
from .fockcore import (FockSpace, OperatorMatrix, StateVector, annihilation,
                       coherent_state, matrix_to_rows, quadrature_operator,
                       rows_to_matrix)
from .trajectories import Method, Scheme, simulate_batch

COMPLETED_T_MIN = 12.0
DEGENERACY_TOL = 1e-9
POSITIVITY_TOL = 1e-7
CLOSED_FORM_TOP_AMP = 1e-6


@dataclass(frozen=True)
class RecordFunctionals:
    """Sufficient statistics ``(R, S)`` of a diffusive record at time ``t``."""

    R: complex = 0j
    S: complex = 0j
    t: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "R", complex(self.R))
        object.__setattr__(self, "S", complex(self.S))
        object.__setattr__(self, "t", float(self.t))
        if self.t < 0:
            raise ValueError("elapsed time must be >= 0")

    @property
    def tau(self) -> float:
        """``1 - e^{-t}``, the integrated decay weight."""
        return -math.expm1(-self.t)


def accumulate_functionals(prev: RecordFunctionals, phi: float, dW: float,
                           dt: float) -> RecordFunctionals:
    """Advance ``(R, S, t)`` by one step with phase ``phi`` held over the step."""
    eip = complex(math.cos(phi), math.sin(phi))
    t = prev.t
    return RecordFunctionals(prev.R + eip * math.exp(-0.5 * t) * dW,
                             prev.S - eip * eip * math.exp(-t) * dt,
                             t + dt)


def functionals_from_record(dw, phases, dt: float, t0: float = 0.0) -> RecordFunctionals:
    """``(R, S, t)`` for a whole record (vectorized form of the accumulation)."""
    dw = np.asarray(dw, dtype=float)
    phases = np.broadcast_to(np.asarray(phases, dtype=float), dw.shape)
    t = t0 + dt * np.arange(len(dw))
    eip = np.exp(1j * phases)
    R = np.sum(eip * np.exp(-0.5 * t) * dw)
    S = -np.sum(eip ** 2 * np.exp(-t)) * dt
    return RecordFunctionals(R, S, t0 + dt * len(dw))


def discrete_decay_weight(t: float, dt: float) -> float:
    """``sum_k e^{-t_k} dt``: the bound on ``|S|`` for a left-point record."""
    n = int(round(t / dt))
    return dt * -math.expm1(-n * dt) / -math.expm1(-dt) if n else 0.0


def _lowering_exponential(space: FockSpace, f: RecordFunctionals) -> np.ndarray:
    a = annihilation(space).entries
    return expm(0.5 * np.conj(f.S) * (a @ a) + np.conj(f.R) * a)


def conditioned_state_closed_form(psi0: StateVector, f: RecordFunctionals) -> StateVector:
    """Unnormalized conditioned state of the damped cavity for functionals ``f``.

    Raises
    ------
    TruncationError
        If the top Fock amplitude of the result exceeds ``1e-6`` of its norm.
    """
    space = psi0.space
    n = np.arange(space.dim)
    out = np.exp(-0.5 * f.t * n) * (_lowering_exponential(space, f) @ psi0.amps)
    norm = float(np.linalg.norm(out))
    if norm > 0 and abs(out[-1]) > CLOSED_FORM_TOP_AMP * norm:
        raise TruncationError(
            f"top-level amplitude {abs(out[-1]) / norm:.2e} of the norm; increase nmax")
    return StateVector(space, out)


def effect_finite_time(f: RecordFunctionals, p0_density: float, space: FockSpace
                       ) -> OperatorMatrix:
    """Effect ``P0 exp(S a^dag^2/2 + R a^dag) exp(-a^dag a t) exp(S* a^2/2 + R* a)``.

    Every matrix factor is triangular in the Fock basis, so the truncated
    product is exactly the leading block of the untruncated effect.
    """
    if p0_density < 0:
        raise ValueError("ostensible density must be >= 0")
    m = _lowering_exponential(space, f)
    d = np.exp(-f.t * np.arange(space.dim))
    F = p0_density * (m.conj().T @ (d[:, None] * m))
    F = 0.5 * (F + F.conj().T)
    ev = np.linalg.eigvalsh(F)
    scale = max(float(np.max(np.abs(ev))), 1e-300)
    if ev[0] < -POSITIVITY_TOL * scale:
        raise PositivityError(f"effect eigenvalue {ev[0]:.3e} below tolerance")
    return OperatorMatrix(space, F, hermitian=True)


# -------------------------------------------------------- Gaussian geometry

@dataclass(frozen=True)
class GaussianEffect:
    """Phase-space description of a finite-time effect.

    The Wigner function of the effect is a Gaussian whose principal axes are
    the quadratures at angles ``theta`` and ``theta + pi/2``; ``(x, y)`` is its
    centre and ``(vx, vy)`` its variances in that frame.  ``weight`` is the
    ostensible density attached to the effect.
    """

    theta: float
    x: float
    y: float
    vx: float
    vy: float
    t: float
    weight: float = 1.0
    abs_s: float = 0.0

    def __post_init__(self):
        if not (self.vx > 0 and self.vy > 0):
            raise ValueError("variances must be positive")
        if self.vx * self.vy < 1 - 1e-9:
            raise ValueError(f"vx*vy = {self.vx * self.vy!r} violates the uncertainty bound")
        if self.weight < 0:
            raise ValueError("weight must be >= 0")

    @property
    def centre(self) -> complex:
        """Centre as ``q + i p``."""
        return complex(self.x, self.y) * complex(math.cos(self.theta), math.sin(self.theta))

    def asymptotic_variances(self) -> tuple[float, float]:
        """Long-time variances ``(tau + |S|)/(tau - |S|)`` and their reciprocal.

        These describe the effect once the decay weight ``e^{-t}`` is
        neglected; their product is exactly 1.
        """
        tau = -math.expm1(-self.t)
        vx = (tau + self.abs_s) / (tau - self.abs_s)
        return vx, 1.0 / vx


def gaussian_effect_params(f: RecordFunctionals, weight: float = 1.0) -> GaussianEffect:
    """Gaussian parameters of ``effect_finite_time(f, ...)``.

    With ``tau = 1 - e^{-t}`` and ``theta = arg(S)/2``:

    * ``x = 2 Re(R e^{-i theta}) / (tau - |S|)``,
      ``y = 2 Im(R e^{-i theta}) / (tau + |S|)``;
    * ``vx = 2/(tau - |S|) - 1``, ``vy = 2/(tau + |S|) - 1``.

    The variances tend to ``(tau +- |S|)/(tau -+ |S|)`` as ``t`` grows (see
    :meth:`GaussianEffect.asymptotic_variances`).

    Raises
    ------
    DegenerateEffect
        If ``tau - |S| <= 1e-9`` (perfect homodyne limit).
    """
    tau = f.tau
    s = abs(f.S)
    lo, hi = tau - s, tau + s
    if lo <= DEGENERACY_TOL:
        raise DegenerateEffect(f"1 - e^-t - |S| = {lo:.3e}; the effect is a quadrature projector")
    theta = 0.5 * math.atan2(f.S.imag, f.S.real) if s > 0 else 0.0
    r = f.R * complex(math.cos(theta), -math.sin(theta))
    return GaussianEffect(theta, 2 * r.real / lo, 2 * r.imag / hi,
                          2.0 / lo - 1.0, 2.0 / hi - 1.0, f.t, weight, s)


@dataclass(frozen=True)
class WignerMoments:
    centre: complex
    vx: float
    vy: float
    cov_xy: float


def wigner_moments(F: OperatorMatrix, theta: float) -> WignerMoments:
    """Normalized first and second Wigner moments of a positive operator.

    Moments are taken along the quadratures at ``theta`` and ``theta + pi/2``
    (Wigner moments of a single quadrature equal its operator moments; the
    cross term uses the symmetrized product).
    """
    m = F.entries
    tr = np.trace(m).real
    X = quadrature_operator(F.space, theta).entries
    Y = quadrature_operator(F.space, theta + 0.5 * math.pi).entries

    def ev(op):
        return float(np.trace(m @ op).real / tr)

    mx, my = ev(X), ev(Y)
    vx = ev(X @ X) - mx * mx
    vy = ev(Y @ Y) - my * my
    cxy = 0.5 * ev(X @ Y + Y @ X) - mx * my
    centre = complex(mx, my) * complex(math.cos(theta), math.sin(theta))
    return WignerMoments(centre, vx, vy, cxy)


def wigner_contour(g: GaussianEffect, npoints: int = 64, asymptotic: bool = False
                   ) -> np.ndarray:
    """One-standard-deviation ellipse of the effect's Wigner function.

    Returns an ``(npoints, 2)`` array of ``(q, p)`` points.  ``asymptotic``
    draws the long-time, minimum-uncertainty ellipse instead.
    """
    if npoints < 8:
        raise ValueError("npoints must be >= 8")
    vx, vy = g.asymptotic_variances() if asymptotic else (g.vx, g.vy)
    s = np.linspace(0.0, 2 * math.pi, npoints, endpoint=False)
    local = (g.x + math.sqrt(vx) * np.cos(s)) + 1j * (g.y + math.sqrt(vy) * np.sin(s))
    qp = local * complex(math.cos(g.theta), math.sin(g.theta))
    return np.column_stack([qp.real, qp.imag])


def polygon_area(points) -> float:
    """Shoelace area of a closed polygon given as ``(n, 2)`` vertices."""
    q, p = np.asarray(points).T
    return 0.5 * abs(float(np.dot(q, np.roll(p, -1)) - np.dot(p, np.roll(q, -1))))


# ------------------------------------------------------ completed effects

def homodyne_vector(X: float, phi: float, space: FockSpace) -> np.ndarray:
    """``exp(-e^{2i phi} a^dag^2/2 + X e^{i phi} a^dag)|0>``, exact on the kept levels."""
    if abs(X) > 2 * math.sqrt(space.nmax):
        raise TruncationError(f"|X| = {abs(X):.3g} exceeds 2 sqrt(nmax)")
    d = space.dim
    e1 = complex(math.cos(phi), math.sin(phi))
    # a^dag-polynomial coefficients by the Hermite-type recursion
    # v_{n+1} sqrt(n+1) = X e1 v_n - e1^2 sqrt(n) v_{n-1}
    v = np.zeros(d, complex)
    v[0] = 1.0
    if d > 1:
        v[1] = X * e1
    for n in range(1, d - 1):
        v[n + 1] = (X * e1 * v[n] - e1 * e1 * math.sqrt(n) * v[n - 1]) / math.sqrt(n + 1)
    return v


def effect_homodyne(X: float, phi: float, space: FockSpace) -> OperatorMatrix:
    """Completed homodyne effect density ``(2 pi)^{-1/2} e^{-X^2/2} |v><v|``."""
    v = homodyne_vector(X, phi, space)
    F = math.exp(-0.5 * X * X) / math.sqrt(2 * math.pi) * np.outer(v, v.conj())
    return OperatorMatrix(space, F, hermitian=True)


def effect_heterodyne(A: complex, space: FockSpace) -> OperatorMatrix:
    """Completed heterodyne effect density ``|A><A| / pi``."""
    ket = coherent_state(space, A).amps
    return OperatorMatrix(space, np.outer(ket, ket.conj()) / math.pi, hermitian=True)


def povm_to_json(labels, matrices) -> list:
    """POVM dump: ``[{"label": ..., "matrix": rows}, ...]``."""
    return [{"label": lab, "matrix": matrix_to_rows(m.entries if hasattr(m, "entries") else m)}
            for lab, m in zip(labels, matrices)]


def povm_from_json(data) -> tuple[list, list]:
    return [d["label"] for d in data], [rows_to_matrix(d["matrix"]) for d in data]


# ------------------------------------------------- completed measurements

@dataclass(frozen=True)
class CompletedSample:
    A: complex
    B: complex
    weight: float
    seed: int
    index: int = 0

    def to_json(self) -> dict:
        return {"A": [self.A.real, self.A.imag], "B": [self.B.real, self.B.imag],
                "weight": self.weight, "seed": self.seed, "index": self.index}


@dataclass
class CompletedSamples:
    """Batch of completed measurements; ``A``, ``B``, ``weights`` are arrays."""

    A: np.ndarray
    B: np.ndarray
    weights: np.ndarray
    seed: int
    indices: np.ndarray
    t_final: float
    dt: float
    controller: str

    def __len__(self) -> int:
        return len(self.A)

    def rows(self):
        for a, b, w, i in zip(self.A, self.B, self.weights, self.indices):
            yield CompletedSample(complex(a), complex(b), float(w), self.seed, int(i)).to_json()


def sample_completed_measurements(psi0: StateVector, controller, dt: float,
                                  t_final: float, seed: int, n_samples: int,
                                  threads: int = 1, start: int = 0) -> CompletedSamples:
    """Completed diffusive measurements on the damped cavity.

    Records are drawn under the ostensible (white-noise) measure; the weight
    of each outcome ``(A, B) = (R, S)(t_final)`` is the final squared norm.
    """
    if t_final < COMPLETED_T_MIN:
        raise ValueError(f"completed measurements need t_final >= {COMPLETED_T_MIN}")
    model = LindbladModel.damped_cavity(psi0.space)
    res = simulate_batch(psi0, model, Scheme.DIFFUSIVE, Method.OSTENSIBLE_C, t_final, dt,
                         seed, indices=np.arange(start, start + n_samples),
                         controller=controller, threads=threads)
    return CompletedSamples(res.R, res.S, res.weights, seed, res.indices, t_final, dt,
                            res.controller)


def simulate_completed_measurement(psi0: StateVector, controller, dt: float,
                                   t_final: float, seed: int, index: int = 0
                                   ) -> CompletedSample:
    """One completed measurement: ``(A, B, weight)``."""
    s = sample_completed_measurements(psi0, controller, dt, t_final, seed, 1, start=index)
    return CompletedSample(complex(s.A[0]), complex(s.B[0]), float(s.weights[0]), seed, index)
