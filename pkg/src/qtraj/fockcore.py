"""Truncated Fock-space linear algebra for a single bosonic mode.

Everything here is dense: the mode is truncated at ``nmax`` photons and
states/operators are plain complex arrays of dimension ``nmax + 1``.  The
containers are immutable (their arrays are flagged read-only) so they can be
shared between trajectory workers without copying.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammainc

from .errors import DimensionMismatch, TruncationError, ZeroNormError

# Tail mass allowed beyond nmax when a state is built from a closed form.
TAIL_TOLERANCE = 1e-8
# Top-level population that triggers a leakage warning during evolution.
LEAKAGE_WARNING = 1e-6


def _frozen(array, dtype=complex):
    out = np.array(array, dtype=dtype, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class FockSpace:
    """Fock basis ``|0>, ..., |nmax>`` of a single mode."""

    nmax: int

    def __post_init__(self):
        if int(self.nmax) != self.nmax or self.nmax < 1:
            raise ValueError(f"nmax must be an integer >= 1, got {self.nmax!r}")
        object.__setattr__(self, "nmax", int(self.nmax))

    @property
    def dim(self) -> int:
        return self.nmax + 1

    def check(self, *others) -> None:
        """Raise :class:`DimensionMismatch` unless all spaces equal ``self``."""
        for other in others:
            if other.nmax != self.nmax:
                raise DimensionMismatch(
                    f"Fock spaces differ: nmax={self.nmax} vs nmax={other.nmax}")


@dataclass(frozen=True)
class StateVector:
    """Pure, possibly unnormalized, state on a truncated Fock space."""

    space: FockSpace
    amps: np.ndarray
    normalized: bool = False

    def __post_init__(self):
        amps = _frozen(self.amps)
        if amps.shape != (self.space.dim,):
            raise DimensionMismatch(
                f"expected {self.space.dim} amplitudes, got shape {amps.shape}")
        if not np.all(np.isfinite(amps)):
            raise ValueError("state amplitudes must be finite")
        object.__setattr__(self, "amps", amps)
        if self.normalized and abs(self.norm2 - 1.0) >= 1e-10:
            raise ValueError(f"state flagged normalized has norm^2 {self.norm2!r}")

    @property
    def norm2(self) -> float:
        return float(np.vdot(self.amps, self.amps).real)

    def normalize(self) -> "StateVector":
        n2 = self.norm2
        if n2 < 1e-300:
            raise ZeroNormError("cannot normalize a zero vector")
        return StateVector(self.space, self.amps / math.sqrt(n2), normalized=True)

    def projector(self) -> np.ndarray:
        """Unnormalized outer product ``|psi><psi|``."""
        return np.outer(self.amps, self.amps.conj())

    def to_json(self) -> dict:
        return {"nmax": self.space.nmax, "amps": complex_to_pairs(self.amps)}

    @classmethod
    def from_json(cls, data: dict) -> "StateVector":
        space = FockSpace(data["nmax"])
        return cls(space, pairs_to_complex(data["amps"]))


@dataclass(frozen=True)
class OperatorMatrix:
    """Dense operator on a truncated Fock space.

    ``hermitian`` and ``positive`` are promises checked at construction:
    ``||M - M^dag||_max < 1e-12`` and ``min eig >= -1e-9`` respectively.
    """

    space: FockSpace
    entries: np.ndarray
    hermitian: bool = False
    positive: bool = False

    def __post_init__(self):
        m = _frozen(self.entries)
        d = self.space.dim
        if m.shape != (d, d):
            raise DimensionMismatch(f"expected ({d}, {d}) matrix, got {m.shape}")
        object.__setattr__(self, "entries", m)
        if self.hermitian or self.positive:
            scale = max(1.0, float(np.max(np.abs(m))))
            if np.max(np.abs(m - m.conj().T)) >= 1e-12 * scale:
                raise ValueError("operator flagged Hermitian is not Hermitian")
        if self.positive:
            lo = float(np.linalg.eigvalsh(m)[0])
            if lo < -1e-9 * scale:
                raise ValueError(f"operator flagged positive has eigenvalue {lo!r}")

    def dag(self) -> "OperatorMatrix":
        return OperatorMatrix(self.space, self.entries.conj().T,
                              hermitian=self.hermitian, positive=self.positive)

    def __matmul__(self, other):
        if isinstance(other, OperatorMatrix):
            self.space.check(other.space)
            return OperatorMatrix(self.space, self.entries @ other.entries)
        if isinstance(other, StateVector):
            self.space.check(other.space)
            return StateVector(self.space, self.entries @ other.amps)
        return NotImplemented

    def __add__(self, other: "OperatorMatrix") -> "OperatorMatrix":
        self.space.check(other.space)
        return OperatorMatrix(self.space, self.entries + other.entries)

    def __sub__(self, other: "OperatorMatrix") -> "OperatorMatrix":
        self.space.check(other.space)
        return OperatorMatrix(self.space, self.entries - other.entries)

    def scale(self, z: complex) -> "OperatorMatrix":
        return OperatorMatrix(self.space, z * self.entries)

    def to_json(self) -> dict:
        return {"nmax": self.space.nmax, "rows": matrix_to_rows(self.entries)}

    @classmethod
    def from_json(cls, data: dict, **flags) -> "OperatorMatrix":
        return cls(FockSpace(data["nmax"]), rows_to_matrix(data["rows"]), **flags)


@dataclass(frozen=True)
class DensityMatrix:
    """Mixed state.  Set ``check=False`` for Monte Carlo estimates."""

    space: FockSpace
    entries: np.ndarray
    check: bool = field(default=True, compare=False)

    def __post_init__(self):
        m = _frozen(self.entries)
        d = self.space.dim
        if m.shape != (d, d):
            raise DimensionMismatch(f"expected ({d}, {d}) matrix, got {m.shape}")
        object.__setattr__(self, "entries", m)
        if self.check:
            if np.max(np.abs(m - m.conj().T)) >= 1e-12:
                raise ValueError("density matrix is not Hermitian")
            tr = np.trace(m).real
            if abs(tr - 1.0) >= 1e-10:
                raise ValueError(f"density matrix trace {tr!r} != 1")
            lo = float(np.linalg.eigvalsh(m)[0])
            if lo < -1e-9:
                raise ValueError(f"density matrix has eigenvalue {lo!r}")

    @classmethod
    def from_state(cls, psi: StateVector) -> "DensityMatrix":
        psi = psi.normalize()
        return cls(psi.space, psi.projector())

    @property
    def trace(self) -> float:
        return float(np.trace(self.entries).real)


# ---------------------------------------------------------------- JSON helpers

def complex_to_pairs(values) -> list:
    return [[float(z.real), float(z.imag)] for z in np.asarray(values, complex)]


def pairs_to_complex(pairs) -> np.ndarray:
    arr = np.asarray(pairs, dtype=float)
    if arr.ndim == 0 or arr.shape[-1] != 2:
        raise ValueError("expected [re, im] pairs")
    return arr[..., 0] + 1j * arr[..., 1]


def matrix_to_rows(m) -> list:
    return [complex_to_pairs(row) for row in np.asarray(m, complex)]


def rows_to_matrix(rows) -> np.ndarray:
    return pairs_to_complex(rows)


# ------------------------------------------------------------------- operators

def annihilation(space: FockSpace) -> OperatorMatrix:
    """Lowering operator with ``a|n> = sqrt(n)|n-1>``."""
    return OperatorMatrix(space, np.diag(np.sqrt(np.arange(1, space.dim)), k=1))


def creation(space: FockSpace) -> OperatorMatrix:
    # a^dag|nmax> = 0 by truncation.
    return annihilation(space).dag()


def number_operator(space: FockSpace) -> OperatorMatrix:
    return OperatorMatrix(space, np.diag(np.arange(space.dim, dtype=float)),
                          hermitian=True, positive=True)


def identity(space: FockSpace) -> OperatorMatrix:
    return OperatorMatrix(space, np.eye(space.dim), hermitian=True, positive=True)


def quadrature_operator(space: FockSpace, phi: float) -> OperatorMatrix:
    """``X_phi = a e^{-i phi} + a^dag e^{i phi}``, vacuum variance 1."""
    a = annihilation(space).entries
    x = a * np.exp(-1j * phi)
    return OperatorMatrix(space, x + x.conj().T, hermitian=True)


# ---------------------------------------------------------------------- states

def fock_state(space: FockSpace, n: int) -> StateVector:
    if not 0 <= n <= space.nmax:
        raise TruncationError(f"|{n}> is outside the space with nmax={space.nmax}")
    amps = np.zeros(space.dim, complex)
    amps[n] = 1.0
    return StateVector(space, amps, normalized=True)


def coherent_tail(alpha: complex, nmax: int) -> float:
    """Population of ``|alpha>`` above level ``nmax`` (Poisson survival)."""
    return float(gammainc(nmax + 1, abs(alpha) ** 2))


def coherent_amplitudes(alpha, nmax: int) -> np.ndarray:
    """Untruncated-normalization amplitudes ``e^{-|a|^2/2} a^n / sqrt(n!)``.

    ``alpha`` may be an array; the Fock index is the last axis.
    """
    alpha = np.asarray(alpha, dtype=complex)
    out = np.empty(alpha.shape + (nmax + 1,), complex)
    out[..., 0] = np.exp(-0.5 * np.abs(alpha) ** 2)
    for n in range(1, nmax + 1):
        out[..., n] = out[..., n - 1] * alpha / math.sqrt(n)
    return out


def coherent_state(space: FockSpace, alpha: complex) -> StateVector:
    """Coherent state ``|alpha>`` renormalized on the truncated space."""
    alpha = complex(alpha)
    if abs(alpha) ** 2 > space.nmax / 4:
        raise TruncationError(
            f"|alpha|^2 = {abs(alpha) ** 2:.4g} exceeds nmax/4 = {space.nmax / 4:.4g}")
    tail = coherent_tail(alpha, space.nmax)
    if tail > TAIL_TOLERANCE:
        raise TruncationError(f"coherent state tail {tail:.3g} beyond nmax={space.nmax}")
    amps = coherent_amplitudes(alpha, space.nmax)
    amps /= np.linalg.norm(amps)
    return StateVector(space, amps, normalized=True)


def displacement_apply(space: FockSpace, A: complex) -> StateVector:
    """``exp(a^dag A - a A*)|0> = |A>``."""
    return coherent_state(space, A)


def qubit_state(space: FockSpace, c0: complex, c1: complex) -> StateVector:
    """Normalized ``c0|0> + c1|1>`` embedded in ``space``."""
    amps = np.zeros(space.dim, complex)
    amps[:2] = c0, c1
    return StateVector(space, amps).normalize()


# ----------------------------------------------------------------- expectation

def expectation(state: StateVector, op: OperatorMatrix) -> complex:
    """``<psi|M|psi> / <psi|psi>``."""
    state.space.check(op.space)
    n2 = state.norm2
    if n2 < 1e-300:
        raise ZeroNormError("expectation value of a zero vector")
    return complex(np.vdot(state.amps, op.entries @ state.amps) / n2)


def fidelity(psi: StateVector, phi: StateVector) -> float:
    """``|<psi|phi>|^2 / (<psi|psi><phi|phi>)``; insensitive to global phase."""
    psi.space.check(phi.space)
    n2 = psi.norm2 * phi.norm2
    if n2 < 1e-300:
        raise ZeroNormError("fidelity with a zero vector")
    return float(abs(np.vdot(psi.amps, phi.amps)) ** 2 / n2)


def top_population(amps) -> float:
    """Relative population of the highest retained level."""
    amps = np.asarray(amps)
    n2 = float(np.vdot(amps, amps).real)
    return abs(amps[-1]) ** 2 / n2 if n2 > 0 else 0.0
