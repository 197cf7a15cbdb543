"""Adaptive phase measurement on the damped mode.

The local-oscillator phase is steered by the running functionals
``(R, S)``: ``Phi = estimate + pi/2`` keeps the detector measuring the
quadrature orthogonal to the current phase estimate.  For states in the
``{|0>, |1>}`` subspace the estimate ``arg R`` turns the completed
measurement into the ideal (canonical) phase measurement; fixed-phase or
heterodyne detection gives the standard phase measurement, whose coherence
coefficient is only ``sqrt(pi)/2``.

Phase POVMs here live on the one-photon subspace: ``|phi> = |0> + e^{i phi}|1>``
and ``F_ideal(phi) = |phi><phi| / 2 pi``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from ._backend import kernels
from .detection import RecordFunctionals, sample_completed_measurements
from .errors import IllConditioned
from .fockcore import StateVector, matrix_to_rows

TWO_PI = 2.0 * math.pi
STANDARD_EFFICIENCY = math.sqrt(math.pi) / 2.0
DEFAULT_T_FINAL = 12.0


def _wrap(phi: float) -> float:
    out = math.fmod(phi, TWO_PI)
    return out + TWO_PI if out < 0 else out


def _arg(z: complex, zero_phase: float = 0.0) -> float:
    return _wrap(zero_phase if z == 0 else math.atan2(z.imag, z.real))


# ------------------------------------------------------------- estimators

def estimate_phase_single_photon(f: RecordFunctionals, zero_phase: float = 0.0) -> float:
    """``arg R`` in ``[0, 2 pi)``; ``zero_phase`` when ``R = 0``."""
    return _arg(f.R, zero_phase)


def estimate_phase_mean(f: RecordFunctionals, zero_phase: float = 0.0) -> float:
    """Phase of the effect's Wigner-function centre, ``arg[R (1 - e^{-t}) + S R*]``."""
    return _arg(f.R * f.tau + f.S * f.R.conjugate(), zero_phase)


# ------------------------------------------------------------- controller

class ControllerKind(str, enum.Enum):
    CONSTANT = "constant"
    HETERODYNE = "heterodyne"
    ADAPTIVE_SINGLE = "adaptive-single"
    ADAPTIVE_MEAN = "adaptive-mean"


_KERNEL_CODES = {
    ControllerKind.CONSTANT: kernels.CTRL_CONSTANT,
    ControllerKind.HETERODYNE: kernels.CTRL_HETERODYNE,
    ControllerKind.ADAPTIVE_SINGLE: kernels.CTRL_ADAPTIVE_SINGLE,
    ControllerKind.ADAPTIVE_MEAN: kernels.CTRL_ADAPTIVE_MEAN,
}


@dataclass(frozen=True)
class PhaseController:
    """Local-oscillator phase law ``Phi(t) = law(R, S, t)``.

    The phase applied during step ``k`` uses the functionals accumulated
    through step ``k - 1`` (no feedback delay beyond one step).
    ``zero_phase`` is the estimate used while ``R = 0``.
    """

    kind: ControllerKind = ControllerKind.CONSTANT
    phi0: float = 0.0
    delta: float = 0.0
    zero_phase: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "kind", ControllerKind(self.kind))

    @classmethod
    def constant(cls, phi0: float = 0.0) -> "PhaseController":
        return cls(ControllerKind.CONSTANT, phi0)

    @classmethod
    def heterodyne(cls, phi0: float = 0.0, delta: float = 50.0) -> "PhaseController":
        return cls(ControllerKind.HETERODYNE, phi0, delta)

    @classmethod
    def adaptive_single(cls, zero_phase: float = 0.0) -> "PhaseController":
        return cls(ControllerKind.ADAPTIVE_SINGLE, zero_phase=zero_phase)

    @classmethod
    def adaptive_mean(cls, zero_phase: float = 0.0) -> "PhaseController":
        return cls(ControllerKind.ADAPTIVE_MEAN, zero_phase=zero_phase)

    @classmethod
    def parse(cls, spec: str) -> "PhaseController":
        """Parse ``constant:PHI``, ``heterodyne:PHI0,DELTA``, ``adaptive-single``
        or ``adaptive-mean``."""
        name, _, args = spec.strip().partition(":")
        vals = [float(v) for v in args.split(",") if v.strip()] if args else []
        kind = ControllerKind(name)
        if kind is ControllerKind.CONSTANT:
            if len(vals) > 1:
                raise ValueError(f"constant controller takes one phase, got {spec!r}")
            return cls.constant(*vals)
        if kind is ControllerKind.HETERODYNE:
            if len(vals) > 2:
                raise ValueError(f"heterodyne controller takes phi0,delta, got {spec!r}")
            return cls.heterodyne(*vals)
        if len(vals) > 1:
            raise ValueError(f"adaptive controllers take at most a zero-phase, got {spec!r}")
        return cls(kind, zero_phase=vals[0] if vals else 0.0)

    @property
    def id(self) -> str:
        if self.kind is ControllerKind.CONSTANT:
            return f"constant:{self.phi0!r}"
        if self.kind is ControllerKind.HETERODYNE:
            return f"heterodyne:{self.phi0!r},{self.delta!r}"
        return self.kind.value if self.zero_phase == 0 else f"{self.kind.value}:{self.zero_phase!r}"

    @property
    def is_constant(self) -> bool:
        return self.kind is ControllerKind.CONSTANT

    def kernel_spec(self) -> tuple[int, tuple]:
        return _KERNEL_CODES[self.kind], (float(self.phi0), float(self.delta),
                                          float(self.zero_phase))


def controller_phase(ctrl: PhaseController, f: RecordFunctionals, t: float) -> float:
    """Phase in ``[0, 2 pi)`` to apply from time ``t`` given functionals ``f``."""
    if ctrl.kind is ControllerKind.CONSTANT:
        return _wrap(ctrl.phi0)
    if ctrl.kind is ControllerKind.HETERODYNE:
        return _wrap(ctrl.phi0 + ctrl.delta * t)
    if ctrl.kind is ControllerKind.ADAPTIVE_SINGLE:
        return _wrap(estimate_phase_single_photon(f, ctrl.zero_phase) + 0.5 * math.pi)
    g = RecordFunctionals(f.R, f.S, t)
    return _wrap(estimate_phase_mean(g, ctrl.zero_phase) + 0.5 * math.pi)


# -------------------------------------------------------------- phase POVMs

@dataclass
class PhasePOVM:
    """Binned phase POVM on the ``{|0>, |1>}`` subspace.

    ``effects[k]`` is the 2x2 effect of bin ``[edges[k], edges[k+1])``;
    ``stderr`` (optional) holds the standard errors of the real parameters
    ``(F00, F11, Re F01, Im F01)`` for each bin.
    """

    edges: np.ndarray
    effects: np.ndarray
    stderr: np.ndarray | None = None
    label: str = ""
    extra: dict = field(default_factory=dict)

    @property
    def nbins(self) -> int:
        return len(self.effects)

    def completeness_residual(self) -> float:
        return float(np.max(np.abs(self.effects.sum(axis=0) - np.eye(2))))

    def params(self) -> np.ndarray:
        """``(F00, F11, Re F01, Im F01)`` per bin, shape ``(nbins, 4)``."""
        e = self.effects
        return np.stack([e[:, 0, 0].real, e[:, 1, 1].real, e[:, 0, 1].real, e[:, 0, 1].imag],
                        axis=1)

    def coherence_coefficient(self) -> float:
        """Least-squares ``eta`` in ``F01 = eta * (ideal F01)`` over the bins."""
        g = ideal_offdiagonal(self.edges)
        f = self.effects[:, 0, 1]
        return float(np.real(np.vdot(g, f)) / np.real(np.vdot(g, g)))

    def probabilities(self, rho) -> np.ndarray:
        rho = np.asarray(rho)
        return np.real(np.einsum("kij,ji->k", self.effects, rho))

    def to_json(self) -> list:
        return [{"label": {"bin": k, "lo": float(self.edges[k]), "hi": float(self.edges[k + 1])},
                 "matrix": matrix_to_rows(m)} for k, m in enumerate(self.effects)]


def bin_edges(nbins: int) -> np.ndarray:
    if nbins < 1:
        raise ValueError("nbins must be >= 1")
    return np.linspace(0.0, TWO_PI, nbins + 1)


def ideal_offdiagonal(edges) -> np.ndarray:
    """``(1/2 pi) int_bin e^{-i phi} dphi`` for every bin."""
    lo, hi = np.asarray(edges[:-1]), np.asarray(edges[1:])
    return 1j * (np.exp(-1j * hi) - np.exp(-1j * lo)) / TWO_PI


def _phase_povm(nbins: int, eta: float, label: str) -> PhasePOVM:
    edges = bin_edges(nbins)
    width = np.diff(edges) / TWO_PI
    off = eta * ideal_offdiagonal(edges)
    eff = np.zeros((nbins, 2, 2), complex)
    eff[:, 0, 0] = width
    eff[:, 1, 1] = width
    eff[:, 0, 1] = off
    eff[:, 1, 0] = off.conj()
    return PhasePOVM(edges, eff, label=label, extra={"coefficient": eta})


def povm_ideal_phase(nbins: int) -> PhasePOVM:
    """Bins of ``|phi><phi| / 2 pi`` integrated in closed form."""
    return _phase_povm(nbins, 1.0, "ideal")


def povm_standard_phase(nbins: int) -> PhasePOVM:
    """Bins of ``(sqrt(pi)/2) F_ideal + (1 - sqrt(pi)/2)/2 pi``."""
    return _phase_povm(nbins, STANDARD_EFFICIENCY, "standard")


# ------------------------------------------------------ phase measurements

@dataclass(frozen=True)
class PhaseMeasurementSample:
    phi_hat_final: float
    A: complex
    weight: float


@dataclass
class PhaseSamples:
    """Weighted final phase estimates ``arg A`` for one input state."""

    phi: np.ndarray
    A: np.ndarray
    weights: np.ndarray
    seed: int
    indices: np.ndarray
    state: str = ""
    rho: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.phi)

    def rows(self):
        for p, w, i in zip(self.phi, self.weights, self.indices):
            yield {"phi": float(p), "weight": float(w), "state": self.state,
                   "seed": self.seed, "index": int(i)}

    @classmethod
    def from_rows(cls, rows, rho=None) -> "PhaseSamples":
        rows = list(rows)
        if not rows:
            raise ValueError("no phase samples")
        phi = np.array([r["phi"] for r in rows], float)
        return cls(phi, np.exp(1j * phi), np.array([r["weight"] for r in rows], float),
                   int(rows[0].get("seed", 0)),
                   np.array([r.get("index", k) for k, r in enumerate(rows)]),
                   rows[0].get("state", ""), rho)


def _wrap_array(phi):
    out = np.fmod(phi, TWO_PI)
    return np.where(out < 0, out + TWO_PI, out)


def sample_phase_measurements(psi0: StateVector, controller: PhaseController, dt: float,
                              seed: int, n_samples: int, t_final: float = DEFAULT_T_FINAL,
                              state: str = "", threads: int = 1) -> PhaseSamples:
    """Completed measurements reduced to the phase estimate ``arg A``.

    With a shared ``seed`` the records (and, for a record-only controller,
    the phase estimates) are identical across input states; only the
    weights differ.  This makes tomographic differences low-variance.
    """
    s = sample_completed_measurements(psi0, controller, dt, t_final, seed, n_samples,
                                      threads=threads)
    zero = controller.zero_phase
    phi = np.where(s.A == 0, zero, np.arctan2(s.A.imag, s.A.real))
    rho = np.outer(psi0.amps[:2], psi0.amps[:2].conj()) / psi0.norm2
    return PhaseSamples(_wrap_array(phi), s.A, s.weights, seed, s.indices, state, rho)


def run_adaptive_phase_measurement(psi0: StateVector, dt: float, seed: int,
                                   index: int = 0, t_final: float = DEFAULT_T_FINAL,
                                   zero_phase: float = 0.0) -> PhaseMeasurementSample:
    """One adaptive single-photon phase measurement."""
    if psi0.space.nmax != 1 and np.any(psi0.amps[2:] != 0):
        raise ValueError("input must be supported on {|0>, |1>}")
    ctrl = PhaseController.adaptive_single(zero_phase)
    s = sample_completed_measurements(psi0, ctrl, dt, t_final, seed, 1, start=index)
    A = complex(s.A[0])
    return PhaseMeasurementSample(_arg(A, zero_phase), A, float(s.weights[0]))


# ---------------------------------------------------------- reconstruction

def _design_row(rho) -> np.ndarray:
    """Coefficients of ``(F00, F11, Re F01, Im F01)`` in ``Tr(F rho)``."""
    r10 = rho[1, 0]
    return np.array([rho[0, 0].real, rho[1, 1].real, 2 * r10.real, -2 * r10.imag])


def _paired(sets) -> bool:
    first = sets[0]
    return all(s.seed == first.seed and len(s) == len(first)
               and np.array_equal(s.indices, first.indices) for s in sets)


def reconstruct_povm(sample_sets, nbins: int, residual_tol: float = 0.1) -> PhasePOVM:
    """Linear-inversion tomography of a binned phase POVM.

    Parameters
    ----------
    sample_sets : sequence of PhaseSamples
        One weighted sample per input state; each carries its 2x2 ``rho``.
        At least four informationally complete inputs are needed.
    nbins : int
        Number of equal phase bins on ``[0, 2 pi)``.

    Standard errors are computed per record when all sets share seeds and
    indices (common random numbers), and from independent per-set variances
    otherwise.

    Raises
    ------
    IllConditioned
        If the inputs are not informationally complete or the least-squares
        residual of the bin probabilities exceeds ``residual_tol``.
    """
    sets = list(sample_sets)
    if len(sets) < 4:
        raise IllConditioned("need at least four input states")
    design = np.array([_design_row(s.rho) for s in sets])
    if np.linalg.matrix_rank(design, tol=1e-9) < 4:
        raise IllConditioned("input states are not informationally complete")
    pinv = np.linalg.pinv(design)
    edges = bin_edges(nbins)
    contrib = []   # per set: (N, nbins) weighted indicators
    for s in sets:
        k = np.minimum(np.searchsorted(edges, s.phi, side="right") - 1, nbins - 1)
        ind = np.zeros((len(s), nbins))
        ind[np.arange(len(s)), k] = s.weights
        contrib.append(ind)
    probs = np.array([c.mean(axis=0) for c in contrib])          # (J, nbins)
    params = pinv @ probs                                         # (4, nbins)
    resid = design @ params - probs
    rel = float(np.linalg.norm(resid) / max(np.linalg.norm(probs), 1e-300))
    if rel > residual_tol:
        raise IllConditioned(f"inversion residual {rel:.3g} exceeds {residual_tol}")
    if _paired(sets):
        z = np.einsum("mj,jnk->nmk", pinv, np.array(contrib))    # (N, 4, nbins)
        se = z.std(axis=0, ddof=1) / math.sqrt(z.shape[0])
    else:
        var = np.array([c.var(axis=0, ddof=1) / len(c) for c in contrib])
        se = np.sqrt((pinv ** 2) @ var)
    eff = np.zeros((nbins, 2, 2), complex)
    eff[:, 0, 0] = params[0]
    eff[:, 1, 1] = params[1]
    eff[:, 0, 1] = params[2] + 1j * params[3]
    eff[:, 1, 0] = params[2] - 1j * params[3]
    povm = PhasePOVM(edges, eff, se.T, label="reconstructed",
                     extra={"inversion_residual": rel, "paired": _paired(sets)})
    povm.extra["coefficient"], povm.extra["coefficient_stderr"] = coherence_fit(sets, pinv, edges, contrib)
    return povm


def coherence_fit(sets, pinv, edges, contrib) -> tuple[float, float]:
    """``eta`` with ``F01 ~ eta * ideal F01`` and its standard error."""
    g = ideal_offdiagonal(edges)
    gg = float(np.real(np.vdot(g, g)))
    # eta = (Re g . Re F01 + Im g . Im F01) / |g|^2, linear in the bin estimates
    if _paired(sets):
        c = np.array(contrib)                                     # (J, N, nbins)
        f01 = np.einsum("j,jnk->nk", pinv[2], c) + 1j * np.einsum("j,jnk->nk", pinv[3], c)
        per = (f01.real @ g.real + f01.imag @ g.imag) / gg
        return float(per.mean()), float(per.std(ddof=1) / math.sqrt(len(per)))
    lin = (np.outer(pinv[2], g.real) + np.outer(pinv[3], g.imag)) / gg   # (J, nbins)
    est, var = 0.0, 0.0
    for j, cj in enumerate(contrib):
        per = cj @ lin[j]
        est += per.mean()
        var += per.var(ddof=1) / len(per)
    return float(est), math.sqrt(var)


def sample_from_povm(povm: PhasePOVM, rho, n: int, rng) -> np.ndarray:
    """Draw phases from ``Tr(F(phi) rho)`` (uniform within each bin)."""
    p = np.clip(povm.probabilities(rho), 0, None)
    k = rng.choice(povm.nbins, size=n, p=p / p.sum())
    lo, hi = povm.edges[k], povm.edges[k + 1]
    return lo + (hi - lo) * rng.random(n)


TOMOGRAPHY_INPUTS = {
    "zero": (1.0, 0.0),
    "one": (0.0, 1.0),
    "plus": (1 / math.sqrt(2), 1 / math.sqrt(2)),
    "plus-i": (1 / math.sqrt(2), 1j / math.sqrt(2)),
}
