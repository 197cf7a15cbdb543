"""Lindblad master equation and infinitesimal measurement operators.

Time is measured in units of the inverse damping rate of the single
channel, so the damped cavity is ``H = 0, c = a``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, MultiChannelUnsupported, StepSizeError
from .fockcore import (LEAKAGE_WARNING, DensityMatrix, FockSpace, OperatorMatrix,
                       annihilation)

MAX_MASTER_DT = 1e-2


def _as_array(x, space: FockSpace | None = None):
    """Return ``(array, space)`` for an OperatorMatrix, DensityMatrix or ndarray."""
    if isinstance(x, (OperatorMatrix, DensityMatrix)):
        if space is not None:
            space.check(x.space)
        return x.entries, x.space
    arr = np.asarray(x, dtype=complex)
    if space is not None and arr.shape != (space.dim, space.dim):
        raise DimensionMismatch(f"matrix shape {arr.shape} does not match nmax={space.nmax}")
    return arr, space


def _pair(c, rho):
    c_arr, space = _as_array(c)
    rho_arr, _ = _as_array(rho, space)
    if c_arr.shape != rho_arr.shape:
        raise DimensionMismatch(f"shapes {c_arr.shape} and {rho_arr.shape} differ")
    return c_arr, rho_arr


def superop_J(a_op, rho) -> np.ndarray:
    """``J[a] rho = a rho a^dag``."""
    a, r = _pair(a_op, rho)
    return a @ r @ a.conj().T


def superop_D(c, rho) -> np.ndarray:
    """``D[c] rho = c rho c^dag - (c^dag c rho + rho c^dag c) / 2``."""
    c, r = _pair(c, rho)
    cdc = c.conj().T @ c
    return c @ r @ c.conj().T - 0.5 * (cdc @ r + r @ cdc)


@dataclass(frozen=True)
class LindbladModel:
    """``drho/dt = -i[H, rho] + sum_mu D[c_mu] rho``."""

    H: OperatorMatrix
    collapse_ops: tuple = ()

    def __post_init__(self):
        h = self.H.entries
        if np.max(np.abs(h - h.conj().T)) >= 1e-12:
            raise ValueError("Hamiltonian is not Hermitian")
        ops = tuple(self.collapse_ops)
        self.H.space.check(*(c.space for c in ops))
        object.__setattr__(self, "collapse_ops", ops)
        heff = np.array(h, dtype=complex)
        for c in ops:
            heff = heff - 0.5j * (c.entries.conj().T @ c.entries)
        object.__setattr__(self, "_heff", heff)
        object.__setattr__(self, "_cs", tuple(c.entries for c in ops))

    @property
    def space(self) -> FockSpace:
        return self.H.space

    @classmethod
    def damped_cavity(cls, space: FockSpace) -> "LindbladModel":
        return cls(OperatorMatrix(space, np.zeros((space.dim, space.dim)), hermitian=True),
                   (annihilation(space),))

    def single_collapse(self) -> OperatorMatrix:
        if len(self.collapse_ops) != 1:
            raise MultiChannelUnsupported(
                f"stochastic unravelings need exactly one collapse operator, "
                f"model has {len(self.collapse_ops)}")
        return self.collapse_ops[0]

    def is_damped_cavity(self) -> bool:
        """True for ``H = 0, c = a`` (the case with exact record solutions)."""
        if len(self.collapse_ops) != 1 or np.any(self.H.entries != 0):
            return False
        return bool(np.array_equal(self.collapse_ops[0].entries,
                                   annihilation(self.space).entries))

    def rhs(self, rho: np.ndarray) -> np.ndarray:
        """Lindblad generator applied to a raw matrix."""
        heff = self._heff
        out = -1j * (heff @ rho - rho @ heff.conj().T)
        for c in self._cs:
            out += c @ rho @ c.conj().T
        return out

    def to_json(self) -> dict:
        from .fockcore import matrix_to_rows
        return {"nmax": self.space.nmax, "H": matrix_to_rows(self.H.entries),
                "collapse": [matrix_to_rows(c.entries) for c in self.collapse_ops]}

    @classmethod
    def from_json(cls, data: dict) -> "LindbladModel":
        from .fockcore import rows_to_matrix
        space = FockSpace(data["nmax"])
        H = OperatorMatrix(space, rows_to_matrix(data["H"]))
        ops = tuple(OperatorMatrix(space, rows_to_matrix(c)) for c in data.get("collapse", []))
        return cls(H, ops)


def lindblad_rhs(model: LindbladModel, rho) -> np.ndarray:
    r, _ = _as_array(rho, model.space)
    return model.rhs(r)


def transformed_model(model: LindbladModel, gamma: complex) -> LindbladModel:
    """Apply ``c -> c + gamma``, ``H -> H - (i/2)(gamma* c - gamma c^dag)``.

    The master equation is invariant under this map.
    """
    c = model.single_collapse()
    space = model.space
    ce = c.entries
    shift = -0.5j * (np.conj(gamma) * ce - gamma * ce.conj().T)
    H = OperatorMatrix(space, model.H.entries + shift, hermitian=True)
    return LindbladModel(H, (OperatorMatrix(space, ce + gamma * np.eye(space.dim)),))


def lowering_only(*ops) -> bool:
    """True if no operator can raise the photon number (truncation is then exact)."""
    return all(not np.any(np.tril(np.asarray(getattr(op, "entries", op)), -1)) for op in ops)


def _rk4(model: LindbladModel, rho: np.ndarray, h: float, nsteps: int,
         warn_state: dict) -> np.ndarray:
    f = model.rhs
    for _ in range(nsteps):
        k1 = f(rho)
        k2 = f(rho + 0.5 * h * k1)
        k3 = f(rho + 0.5 * h * k2)
        k4 = f(rho + h * k3)
        rho = rho + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if not warn_state["warned"] and rho[-1, -1].real > LEAKAGE_WARNING:
            warn_state["warned"] = True
            warnings.warn(f"top Fock level population {rho[-1, -1].real:.2e} exceeds "
                          f"{LEAKAGE_WARNING:g}; increase nmax", RuntimeWarning, stacklevel=3)
    return rho


def evolve_master(rho0: DensityMatrix, model: LindbladModel, t_final: float,
                  dt: float = 1e-3, times=None):
    """Integrate the master equation with fixed-step classical RK4.

    Parameters
    ----------
    rho0 : DensityMatrix
        Initial state.
    model : LindbladModel
        Generator; any number of collapse operators.
    t_final : float
        Final time (ignored when ``times`` is given).
    dt : float
        Maximum step, at most ``1e-2``.  Each interval is split into equal
        steps no longer than ``dt``.
    times : sequence of float, optional
        If given, return a list with the state at each of these times.

    Raises
    ------
    StepSizeError
        If ``dt`` is too coarse or the trace drifts by more than ``1e-6``.
    """
    model.space.check(rho0.space)
    if dt <= 0 or dt > MAX_MASTER_DT:
        raise StepSizeError(f"master-equation step {dt!r} outside (0, {MAX_MASTER_DT}]")
    single = times is None
    targets = [t_final] if single else list(times)
    if any(t < 0 for t in targets):
        raise ValueError("times must be non-negative")
    order = np.argsort(targets)
    rho = np.array(rho0.entries, dtype=complex)
    tr0 = np.trace(rho).real
    t_now = 0.0
    # the top level is not leakage when nothing can populate it from below
    warn_state = {"warned": lowering_only(model.H, *model.collapse_ops)}
    out = [None] * len(targets)
    for idx in order:
        span = targets[idx] - t_now
        nsteps = int(math.ceil(span / dt - 1e-9)) if span > 0 else 0
        if nsteps:
            rho = _rk4(model, rho, span / nsteps, nsteps, warn_state)
        t_now = targets[idx]
        drift = abs(np.trace(rho).real - tr0)
        if drift > 1e-6:
            raise StepSizeError(f"trace drifted by {drift:.2e}; reduce dt")
        out[idx] = DensityMatrix(rho0.space, rho, check=False)
    return out[0] if single else out


@dataclass(frozen=True)
class MeasurementOperatorPair:
    """Null-result and detection operators for one infinitesimal step."""

    omega0: OperatorMatrix
    omega1: OperatorMatrix
    dt: float
    gamma: complex = 0j

    @property
    def space(self) -> FockSpace:
        return self.omega0.space

    def completeness_residual(self) -> float:
        """``||Omega0^dag Omega0 + Omega1^dag Omega1 - 1||_max``."""
        o0, o1 = self.omega0.entries, self.omega1.entries
        total = o0.conj().T @ o0 + o1.conj().T @ o1
        return float(np.max(np.abs(total - np.eye(total.shape[0]))))


def direct_detection_ops(model: LindbladModel, gamma: complex, dt: float
                         ) -> MeasurementOperatorPair:
    """Detection with a local oscillator of amplitude ``gamma`` added.

    ``Omega1 = sqrt(dt) (c + gamma)`` and
    ``Omega0 = 1 - dt [iH + (c gamma* - c^dag gamma)/2 + (c^dag + gamma*)(c + gamma)/2]``.
    """
    c = model.single_collapse().entries
    space = model.space
    one = np.eye(space.dim)
    cg = c + gamma * one
    k = (1j * model.H.entries + 0.5 * (np.conj(gamma) * c - gamma * c.conj().T)
         + 0.5 * cg.conj().T @ cg)
    return MeasurementOperatorPair(OperatorMatrix(space, one - dt * k),
                                   OperatorMatrix(space, math.sqrt(dt) * cg),
                                   dt, complex(gamma))


def rearrangement_matrix(gamma: complex, dt: float) -> np.ndarray:
    """Exactly unitary 2x2 mixing ``Omega'_r = sum_s U_rs Omega_s``.

    With ``u = gamma sqrt(dt)`` this is ``[[sqrt(1-|u|^2), -u*], [u, sqrt(1-|u|^2)]]``;
    the diagonal agrees with ``1 - |gamma|^2 dt / 2`` to first order and the
    off-diagonal signs are the ones that turn ``c`` into ``c + gamma``.
    """
    u = complex(gamma) * math.sqrt(dt)
    if abs(u) >= 1:
        raise StepSizeError(f"|gamma|^2 dt = {abs(u) ** 2:.3g} must be < 1")
    diag = math.sqrt(1.0 - abs(u) ** 2)
    return np.array([[diag, -u.conjugate()], [u, diag]])


def unitary_rearrange(pair: MeasurementOperatorPair, gamma: complex
                      ) -> MeasurementOperatorPair:
    """Mix a ``gamma = 0`` pair into the local-oscillator pair for ``gamma``."""
    if pair.gamma != 0:
        raise ValueError("rearrangement starts from the gamma = 0 pair")
    U = rearrangement_matrix(gamma, pair.dt)
    o0, o1 = pair.omega0.entries, pair.omega1.entries
    space = pair.space
    return MeasurementOperatorPair(OperatorMatrix(space, U[0, 0] * o0 + U[0, 1] * o1),
                                   OperatorMatrix(space, U[1, 0] * o0 + U[1, 1] * o1),
                                   pair.dt, complex(gamma))


def nonselective_map(pair: MeasurementOperatorPair, rho) -> np.ndarray:
    """``sum_r J[Omega_r] rho``: one step with the result ignored."""
    return superop_J(pair.omega0, rho) + superop_J(pair.omega1, rho)
