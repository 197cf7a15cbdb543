"""Stochastic unravelings of the damped-mode master equation.

Three record-generation measures are supported:

* method ``A`` -- records drawn with their actual probabilities; the
  nonlinear jump equation, state renormalized every step;
* method ``B`` -- every result equally likely; only used for exhaustive
  enumeration of tiny instances, never for Monte Carlo;
* method ``C`` -- records drawn from a fixed ostensible measure (Poisson
  counts of rate ``|gamma|^2`` or Gaussian white noise); the state obeys a
  linear equation and its squared norm is the importance weight.

The single-step functions are readable references.  Ensembles go through
:func:`simulate_batch`, which hands pre-drawn noise to the compiled kernels
(or their NumPy fallback).
"""

from __future__ import annotations

import enum
import itertools
import json
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import expm

from ._backend import kernels
from .dynamics import MAX_MASTER_DT, LindbladModel, lowering_only
from .errors import EmptyEnsemble, StepSizeError, ZeroGammaError, ZeroNormError
from .fockcore import LEAKAGE_WARNING, OperatorMatrix, StateVector, annihilation

JUMP_PROB_CAP = 0.1
CHUNK = 256


class Method(str, enum.Enum):
    PHYSICAL_A = "A"
    UNIFORM_B = "B"
    OSTENSIBLE_C = "C"


class Scheme(str, enum.Enum):
    JUMP = "jump"
    DIFFUSIVE = "diffusive"


@dataclass(frozen=True)
class SamplingStrategy:
    """Record-generation measure.

    ``lambda1`` is the per-step ostensible detection probability for method C;
    ``None`` means the default ``|gamma|^2 dt``.
    """

    kind: Method = Method.PHYSICAL_A
    lambda1: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "kind", Method(self.kind))
        if self.lambda1 is not None and not 0 < self.lambda1 < 1:
            raise ValueError("lambda1 must lie in (0, 1)")


def trajectory_rng(seed: int, index: int) -> np.random.Generator:
    """Independent, order-free stream for trajectory ``index`` of run ``seed``."""
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(index),))
    return np.random.Generator(np.random.Philox(ss))


def n_steps(t_final: float, dt: float) -> int:
    n = int(round(t_final / dt))
    if n < 0 or abs(n * dt - t_final) > 1e-9 * max(1.0, abs(t_final)):
        raise ValueError(f"t_final={t_final} is not a multiple of dt={dt}")
    return n


# ------------------------------------------------------------------ records

@dataclass
class TrajectoryRecord:
    """Everything needed to identify and replay one trajectory."""

    dt: float
    scheme: Scheme
    seed: int
    index: int = 0
    events: np.ndarray | None = None   # jump: detection step indices
    dw: np.ndarray | None = None       # diffusive: Wiener increments
    phases: np.ndarray | None = None   # None when the phase is constant
    weight: float = 1.0
    method: Method = Method.OSTENSIBLE_C
    controller: str = "constant:0"
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        self.scheme = Scheme(self.scheme)
        self.method = Method(self.method)
        if not (math.isfinite(self.weight) and self.weight >= 0):
            raise ValueError(f"weight must be finite and >= 0, got {self.weight!r}")
        if self.events is not None:
            self.events = np.asarray(self.events, dtype=np.int64)
            if np.any(np.diff(self.events) <= 0):
                raise ValueError("detection indices must be strictly increasing")

    def to_json(self) -> dict:
        out = {"seed": self.seed, "index": self.index, "scheme": self.scheme.value,
               "method": self.method.value, "controller": self.controller, "dt": self.dt}
        if self.scheme is Scheme.JUMP:
            out["events"] = [int(e) for e in (self.events if self.events is not None else [])]
        else:
            out["dw"] = [float(x) for x in self.dw] if self.dw is not None else []
        if self.phases is not None:
            out["phases"] = [float(x) for x in self.phases]
        out["weight"] = self.weight
        out.update(self.extra)
        return out

    @classmethod
    def from_json(cls, data: dict) -> "TrajectoryRecord":
        known = {"seed", "index", "scheme", "method", "controller", "dt",
                 "events", "dw", "phases", "weight"}
        return cls(dt=data["dt"], scheme=data["scheme"], seed=data["seed"],
                   index=data.get("index", 0),
                   events=data.get("events"),
                   dw=None if data.get("dw") is None else np.asarray(data["dw"]),
                   phases=None if data.get("phases") is None else np.asarray(data["phases"]),
                   weight=data.get("weight", 1.0), method=data.get("method", "C"),
                   controller=data.get("controller", "constant:0"),
                   extra={k: v for k, v in data.items() if k not in known})


def write_jsonl(fh, rows, header: dict | None = None) -> None:
    """Write ``{"config": header}`` (if given) then one JSON object per line."""
    if header is not None:
        fh.write(json.dumps({"config": header}, sort_keys=True) + "\n")
    for row in rows:
        if hasattr(row, "to_json"):
            row = row.to_json()
        fh.write(json.dumps(row) + "\n")


def read_jsonl(fh):
    """Return ``(header, rows)``; ``header`` is None when absent."""
    header, rows = None, []
    for line in fh:
        line = line.strip()
        if not line:
            continue
        obj = json.loads(line)
        if "config" in obj and len(obj) == 1:
            header = obj["config"]
        else:
            rows.append(obj)
    return header, rows


# --------------------------------------------------------- branch operators

@dataclass(frozen=True)
class JumpOperators:
    """Per-step operators of a jump unraveling (raw matrices)."""

    jump: np.ndarray
    nojump: np.ndarray
    prob: np.ndarray      # dt (c+gamma)^dag (c+gamma); physical rate operator
    lam1: float           # ostensible jump probability (linear method only)
    linear: bool

    @property
    def detect_step(self) -> np.ndarray:
        """Full-step map on a detection: the jump, then the step's drift.

        Equal to ``jump`` through leading order; including the drift keeps a
        detection from skipping ``dt`` of evolution (exact for coherent and
        Fock inputs of the damped cavity).
        """
        return self.nojump @ self.jump


def jump_operators(model: LindbladModel, gamma: complex, dt: float,
                   strategy: SamplingStrategy) -> JumpOperators:
    """Branch operators for the jump unraveling with local oscillator ``gamma``.

    Null results evolve with ``exp(-dt K)``, which equals the textbook
    ``1 - dt K`` through first order and keeps coherent states exactly
    coherent between detections.
    """
    c = model.single_collapse().entries
    d = model.space.dim
    one = np.eye(d)
    gamma = complex(gamma)
    cg = c + gamma * one
    prob = dt * (cg.conj().T @ cg)
    kind = strategy.kind
    if kind is Method.PHYSICAL_A:
        k = 1j * model.H.entries + 0.5 * c.conj().T @ c + np.conj(gamma) * c + 0.5 * abs(gamma) ** 2 * one
        return JumpOperators(cg, expm(-dt * k), prob, 0.0, False)
    if kind is Method.UNIFORM_B:
        raise ValueError("method B is only available through enumerate_records")
    if gamma == 0:
        raise ZeroGammaError("the linear jump unraveling needs gamma != 0")
    default = abs(gamma) ** 2 * dt
    lam1 = default if strategy.lambda1 is None else strategy.lambda1
    if lam1 >= JUMP_PROB_CAP:
        raise StepSizeError(f"ostensible jump probability {lam1:.3g} >= {JUMP_PROB_CAP}")
    k = 1j * model.H.entries + 0.5 * c.conj().T @ c + np.conj(gamma) * c
    if strategy.lambda1 is None:
        return JumpOperators(one + c / gamma, expm(-dt * k), prob, lam1, True)
    # General ostensible probability: Omega_r / sqrt(Lambda_r).
    nojump = expm(-dt * (k + 0.5 * abs(gamma) ** 2 * one)) / math.sqrt(1.0 - lam1)
    return JumpOperators(math.sqrt(dt / lam1) * cg, nojump, prob, lam1, True)


def _diffusive_generator(model: LindbladModel) -> tuple[np.ndarray, np.ndarray]:
    c = model.single_collapse().entries
    return c, 1j * model.H.entries + 0.5 * c.conj().T @ c


# ------------------------------------------------------- reference steppers

def step_jump_physical(psi: StateVector, model: LindbladModel, gamma: complex,
                       dt: float, rng) -> tuple[StateVector, int]:
    """One step of the nonlinear jump equation (method A).

    Detects with probability ``dt <(c^dag + gamma*)(c + gamma)>``; a
    detection applies ``c + gamma`` followed by the step's drift.  The
    post-step state is normalized either way.
    """
    model.space.check(psi.space)
    ops = jump_operators(model, gamma, dt, SamplingStrategy(Method.PHYSICAL_A))
    v = psi.normalize().amps
    p = float(np.vdot(v, ops.prob @ v).real)
    if p >= JUMP_PROB_CAP:
        raise StepSizeError(f"jump probability {p:.3g} >= {JUMP_PROB_CAP}; reduce dt")
    dn = int(rng.random() < p)
    out = (ops.detect_step if dn else ops.nojump) @ v
    n2 = float(np.vdot(out, out).real)
    if n2 <= 1e-300:
        raise ZeroNormError("detection from a state annihilated by c + gamma")
    return StateVector(psi.space, out / math.sqrt(n2), normalized=True), dn


def step_jump_linear(psibar: StateVector, model: LindbladModel, gamma: complex,
                     dt: float, rng) -> tuple[StateVector, int]:
    """One step of the linear jump equation under ostensible rate ``|gamma|^2``.

    ``dN = 1``: ``psibar <- (1 + c/gamma) psibar`` followed by the step's
    drift; otherwise only the linear no-detection drift
    ``iH + c^dag c / 2 + gamma* c``.  No renormalization.
    """
    model.space.check(psibar.space)
    ops = jump_operators(model, gamma, dt, SamplingStrategy(Method.OSTENSIBLE_C))
    dn = int(rng.random() < ops.lam1)
    out = (ops.detect_step if dn else ops.nojump) @ psibar.amps
    return StateVector(psibar.space, out), dn


def step_diffusive_linear(psibar: StateVector, model: LindbladModel, phi: float,
                          dt: float, rng=None, dW: float | None = None
                          ) -> tuple[StateVector, float]:
    """One step of the linear diffusive equation ``[dW e^{-i phi} c - dt(iH + c^dag c/2)]``.

    For the damped cavity the step is the exact factorization
    ``exp(-a^dag a dt/2) exp(dW e^{-i phi} a - e^{-2i phi} a^2 dt/2)``;
    otherwise Euler--Maruyama.  Pass ``dW`` to replay a record.
    """
    model.space.check(psibar.space)
    if dt <= 0 or dt > MAX_MASTER_DT:
        raise StepSizeError(f"diffusive step {dt!r} outside (0, {MAX_MASTER_DT}]")
    if dW is None:
        dW = math.sqrt(dt) * float(rng.standard_normal())
    v = psibar.amps
    emi = complex(math.cos(phi), -math.sin(phi))
    if model.is_damped_cavity():
        a = annihilation(model.space).entries
        n = np.arange(model.space.dim)
        gen = dW * emi * a - 0.5 * emi ** 2 * dt * (a @ a)
        out = np.exp(-0.5 * dt * n) * (expm(gen) @ v)
    else:
        c, k = _diffusive_generator(model)
        out = v + dW * emi * (c @ v) - dt * (k @ v)
    return StateVector(psibar.space, out), float(dW)


# ------------------------------------------------------------ batch engine

@dataclass
class BatchResult:
    """Outcome of :func:`simulate_batch` for trajectories ``indices``.

    ``states`` are normalized; the unnormalized linear state is
    ``sqrt(weights) * states`` up to a global phase.
    """

    scheme: Scheme
    method: Method
    dt: float
    seed: int
    indices: np.ndarray
    states: np.ndarray
    weights: np.ndarray
    R: np.ndarray | None = None
    S: np.ndarray | None = None
    events: np.ndarray | None = None
    dw: np.ndarray | None = None
    phases: np.ndarray | None = None
    top: np.ndarray | None = None
    controller: str = "constant:0"

    @property
    def n_traj(self) -> int:
        return len(self.indices)

    def state_matrices(self) -> np.ndarray:
        """``w_i |psi_i><psi_i|`` for every trajectory, shape ``(N, d, d)``."""
        s = self.states
        return self.weights[:, None, None] * s[:, :, None] * s[:, None, :].conj()

    def counts(self) -> np.ndarray:
        return self.events.sum(axis=1) if self.events is not None else None

    def record(self, i: int) -> TrajectoryRecord:
        ev = np.flatnonzero(self.events[i]) if self.events is not None else None
        return TrajectoryRecord(
            dt=self.dt, scheme=self.scheme, seed=self.seed, index=int(self.indices[i]),
            events=ev, dw=None if self.dw is None else self.dw[i],
            phases=None if self.phases is None else self.phases[i],
            weight=float(self.weights[i]), method=self.method, controller=self.controller)


def _controller_spec(controller) -> tuple[int, tuple, str]:
    if controller is None:
        return kernels.CTRL_CONSTANT, (0.0, 0.0, 0.0), "constant:0"
    code, params = controller.kernel_spec()
    return code, params, controller.id


def _finish(psi, log2):
    n2 = np.einsum("bi,bi->b", psi.conj(), psi).real
    ok = n2 > 0
    states = np.zeros_like(psi)
    states[ok] = psi[ok] / np.sqrt(n2[ok])[:, None]
    weights = np.ldexp(n2, 2 * np.asarray(log2, dtype=np.int64).astype(np.int32))
    return states, weights


def _draw(seed, idx, nsteps, dt, scheme):
    block = np.empty((len(idx), nsteps))
    for row, i in enumerate(idx):
        rng = trajectory_rng(seed, i)
        if scheme is Scheme.DIFFUSIVE:
            block[row] = math.sqrt(dt) * rng.standard_normal(nsteps)
        else:
            block[row] = rng.random(nsteps)
    return block


def simulate_batch(psi0: StateVector, model: LindbladModel, scheme, method,
                   t_final: float, dt: float, seed: int, n_traj: int | None = None,
                   indices=None, gamma: complex | None = None, controller=None,
                   lambda1: float | None = None, store_noise: bool = False,
                   store_phases: bool = False, threads: int = 1,
                   chunk: int = CHUNK) -> BatchResult:
    """Run many independent trajectories.

    Trajectory ``i`` draws its noise from ``trajectory_rng(seed, i)``, so
    results do not depend on chunking, threading or which other indices are
    simulated alongside it.

    Parameters
    ----------
    scheme : {"jump", "diffusive"}
    method : {"A", "C"}
        Diffusive records are always ostensible (``C``).
    gamma : complex, optional
        Local-oscillator amplitude for jump schemes (default 0 for ``A`` and
        1 for ``C``).
    controller : PhaseController, optional
        Local-oscillator phase law for the diffusive scheme (default:
        constant phase 0).
    """
    model.space.check(psi0.space)
    scheme, method = Scheme(scheme), Method(method)
    if indices is None:
        indices = np.arange(n_traj)
    indices = np.asarray(indices, dtype=np.int64)
    nsteps = n_steps(t_final, dt)
    code, params, ctrl_id = _controller_spec(controller)
    v0 = psi0.amps
    if scheme is Scheme.DIFFUSIVE:
        if method is not Method.OSTENSIBLE_C:
            raise ValueError("diffusive records are generated under the ostensible measure (method C)")
        if dt > MAX_MASTER_DT:
            raise StepSizeError(f"diffusive step {dt!r} exceeds {MAX_MASTER_DT}")
        exact = model.is_damped_cavity()
        c, k = _diffusive_generator(model)
        closed = exact or lowering_only(c, k)

        def work(idx):
            dw = _draw(seed, idx, nsteps, dt, scheme)
            out = kernels.diffusive_batch(v0, dw, dt, 0.0, code, params, exact, c, k,
                                          store_phases)
            return out + ((dw if store_noise else None),)
    else:
        if gamma is None:
            gamma = 0.0 if method is Method.PHYSICAL_A else 1.0
        ops = jump_operators(model, gamma, dt, SamplingStrategy(method, lambda1))
        closed = lowering_only(ops.detect_step, ops.nojump)
        if not ops.linear:
            v0 = psi0.normalize().amps

        def work(idx):
            u = _draw(seed, idx, nsteps, dt, scheme)
            return kernels.jump_batch(v0, u, ops.detect_step, ops.nojump, ops.prob,
                                      ops.lam1, ops.linear)

    chunks = [indices[i:i + chunk] for i in range(0, len(indices), chunk)]
    if threads > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(work, chunks))
    else:
        parts = [work(ch) for ch in chunks]

    def cat(j):
        return np.concatenate([p[j] for p in parts]) if parts else np.empty(0)

    if scheme is Scheme.DIFFUSIVE:
        psi, log2, R, S, phases, top = (cat(j) for j in range(6))
        states, weights = _finish(psi, log2)
        dw = cat(6) if store_noise else None
        res = BatchResult(scheme, method, dt, seed, indices, states, weights, R=R, S=S,
                          dw=dw, phases=phases if store_phases else None, top=top,
                          controller=ctrl_id)
    else:
        psi, log2, events, status, top = (cat(j) for j in range(5))
        if np.any(status == kernels.STATUS_STEP_TOO_COARSE):
            raise StepSizeError(f"jump probability reached {JUMP_PROB_CAP}; reduce dt")
        if np.any(status == kernels.STATUS_ZERO_NORM):
            raise ZeroNormError("detection from a state annihilated by c + gamma")
        states, weights = _finish(psi, log2)
        if method is Method.PHYSICAL_A:
            weights = np.ones(len(indices))
        res = BatchResult(scheme, method, dt, seed, indices, states, weights,
                          events=events, top=top, controller=f"gamma:{complex(gamma)!r}")
    if not closed and res.top.size and float(res.top.max()) > LEAKAGE_WARNING:
        warnings.warn(f"top Fock level population reached {float(res.top.max()):.2e}; "
                      "increase nmax", RuntimeWarning, stacklevel=2)
    return res


def run_trajectory(psi0: StateVector, model: LindbladModel, scheme,
                   strategy: SamplingStrategy, controller, t_final: float, dt: float,
                   seed: int, index: int = 0, gamma: complex | None = None
                   ) -> tuple[StateVector, TrajectoryRecord]:
    """Simulate one replayable trajectory.

    Returns the final conditioned state (normalized for method A, the
    unnormalized linear state otherwise) and its record.
    """
    res = simulate_batch(psi0, model, scheme, strategy.kind, t_final, dt, seed,
                         indices=[index], gamma=gamma, controller=controller,
                         lambda1=strategy.lambda1, store_noise=True,
                         store_phases=controller is not None and not controller.is_constant)
    rec = res.record(0)
    amps = res.states[0] if strategy.kind is Method.PHYSICAL_A \
        else math.sqrt(res.weights[0]) * res.states[0]
    return StateVector(psi0.space, amps), rec


# --------------------------------------------------------------- ensembles

@dataclass(frozen=True)
class EnsembleEstimate:
    """Weighted Monte Carlo mean with its standard error.

    For complex quantities ``stderr`` is ``sqrt(E|X - mean|^2 / N)``.
    """

    n_traj: int
    mean: np.ndarray | float
    stderr: np.ndarray | float


def ensemble_average(values, weights=None, probs=None) -> EnsembleEstimate:
    """Importance-weighted ensemble mean.

    Parameters
    ----------
    values : array_like, shape (N, ...)
        Per-trajectory quantity (a scalar, a state matrix, ...).
    weights : array_like, shape (N,), optional
        Importance weights (final squared norms); all ones for method A.
    probs : array_like, shape (N,), optional
        Ostensible probabilities of exhaustively enumerated records.  The
        mean is then the exact sum ``sum p_i w_i x_i`` and the error is 0.
    """
    x = np.asarray(values)
    n = x.shape[0] if x.ndim else 0
    if n < 2:
        raise EmptyEnsemble(f"need at least two trajectories, got {n}")
    w = np.ones(n) if weights is None else np.asarray(weights, dtype=float)
    wx = w.reshape((n,) + (1,) * (x.ndim - 1)) * x
    if probs is not None:
        p = np.asarray(probs, dtype=float).reshape((n,) + (1,) * (x.ndim - 1))
        mean = (p * wx).sum(axis=0)
        return EnsembleEstimate(n, mean, np.zeros_like(np.abs(mean)))
    mean = wx.mean(axis=0)
    dev = wx - mean
    stderr = np.sqrt((np.abs(dev) ** 2).sum(axis=0) / (n - 1) / n)
    if np.ndim(mean) == 0:
        mean, stderr = mean.item(), float(stderr)
    return EnsembleEstimate(n, mean, stderr)


def ensemble_state(result: BatchResult) -> EnsembleEstimate:
    """Weighted mean of ``|psi><psi|`` over a batch."""
    return ensemble_average(result.state_matrices())


# ------------------------------------------------- exhaustive enumeration

@dataclass(frozen=True)
class EnumeratedRecord:
    results: tuple
    probability: float     # ostensible probability of generating this record
    state: np.ndarray      # conditioned state in the chosen formulation
    weight: float          # squared norm (1 for method A)


def enumerate_records(psi0: StateVector, operators, steps: int, method,
                      lambdas=None) -> list[EnumeratedRecord]:
    """All ``len(operators) ** steps`` records of a repeated measurement.

    ``method`` ``A`` generates results with their actual probabilities,
    ``B`` uniformly and ``C`` with the fixed ``lambdas``.  In every case
    ``sum probability * weight * |state><state| / <state|state>`` is the
    nonselective state.
    """
    method = Method(method)
    mats = [op.entries if isinstance(op, OperatorMatrix) else np.asarray(op) for op in operators]
    nr = len(mats)
    if method is Method.UNIFORM_B:
        lambdas = [1.0 / nr] * nr
    elif method is Method.OSTENSIBLE_C:
        if lambdas is None or len(lambdas) != nr or abs(sum(lambdas) - 1) > 1e-12:
            raise ValueError("method C needs ostensible probabilities summing to 1")
    out = []
    start = psi0.amps if method is not Method.PHYSICAL_A else psi0.normalize().amps
    for results in itertools.product(range(nr), repeat=steps):
        v = start
        prob = 1.0
        for r in results:
            nv = mats[r] @ v
            if method is Method.PHYSICAL_A:
                p = float(np.vdot(nv, nv).real)
                prob *= p
                v = nv / math.sqrt(p) if p > 0 else nv
            else:
                prob *= lambdas[r]
                v = nv / math.sqrt(lambdas[r])
        weight = 1.0 if method is Method.PHYSICAL_A else float(np.vdot(v, v).real)
        out.append(EnumeratedRecord(results, prob, v, weight))
    return out
