"""Command-line interface.

Exit codes: 0 success, 1 consistency failure, 2 configuration error,
3 numerical guard (truncation, step size, degenerate or ill-conditioned
input).  Data go to ``--out`` (default standard output); progress and
reports go to standard error whenever standard output carries data.
"""

from __future__ import annotations

import argparse
import glob
import json
import math
import os
import sys
from contextlib import contextmanager

import numpy as np

from .adaptive import (PhaseController, PhaseSamples,
                       povm_ideal_phase, povm_standard_phase, reconstruct_povm,
                       sample_phase_measurements)
from .detection import (RecordFunctionals, effect_heterodyne, effect_homodyne,
                        functionals_from_record, gaussian_effect_params,
                        polygon_area, povm_to_json, wigner_contour)
from .dynamics import LindbladModel, evolve_master
from .errors import DimensionMismatch, NumericalGuard, QTrajError
from .fockcore import (TAIL_TOLERANCE, DensityMatrix, FockSpace, coherent_state, coherent_tail,
                       fock_state, qubit_state)
from .trajectories import (Method, Scheme, read_jsonl, simulate_batch, write_jsonl)

EXIT_OK, EXIT_INCONSISTENT, EXIT_CONFIG, EXIT_GUARD = 0, 1, 2, 3

DEFAULTS = {
    "state": "vacuum", "nmax": 12, "dt": 1e-3, "tfinal": 1.0, "ntraj": 1000,
    "seed": None, "scheme": "jump", "method": "A", "controller": "constant:0",
    "gamma": None, "out": "-", "format": None, "threads": 1, "nbins": 16,
    "kind": "ideal", "reconstruct": None, "npoints": 64, "R": "0,0", "S": "0,0",
    "t": 12.0, "record": None, "asymptotic": False, "corrupt_weights": False,
    "model": None,
}
FALLBACK_SEED = 1
# Absolute slack added to the 3-sigma band for elements with zero variance.
CHECK_FLOOR = 1e-8


class ConfigError(ValueError):
    pass


# ------------------------------------------------------------------ parsing

def parse_complex_pair(text: str) -> complex:
    """``"re,im"`` -> complex."""
    parts = [p.strip() for p in str(text).split(",")]
    if len(parts) != 2:
        raise ConfigError(f"expected 're,im', got {text!r}")
    return complex(float(parts[0]), float(parts[1]))


def parse_state(spec: str, space: FockSpace):
    """State spec: ``vacuum``, ``fock:n``, ``coherent:re,im`` or ``qubit:c0,c1``.

    Qubit amplitudes accept Python complex literals, e.g. ``qubit:1,1j``.
    """
    name, _, args = spec.partition(":")
    if name == "vacuum" and not args:
        return fock_state(space, 0)
    if name == "fock":
        return fock_state(space, int(args))
    if name == "coherent":
        return coherent_state(space, parse_complex_pair(args))
    if name == "qubit":
        c = [complex(p.strip().replace(" ", "")) for p in args.split(",")]
        if len(c) != 2:
            raise ConfigError(f"qubit state needs two amplitudes, got {spec!r}")
        return qubit_state(space, *c)
    raise ConfigError(f"unknown state spec {spec!r}")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS)
    common.add_argument("--config", help="JSON file of option values (flags override it)")
    common.add_argument("--state", help="vacuum | fock:n | coherent:re,im | qubit:c0,c1")
    common.add_argument("--nmax", type=int)
    common.add_argument("--dt", type=float)
    common.add_argument("--tfinal", type=float)
    common.add_argument("--ntraj", type=int)
    common.add_argument("--seed", type=int, help="root seed (fallback: $QTRAJ_SEED)")
    common.add_argument("--scheme", choices=["jump", "diffusive"])
    common.add_argument("--method", choices=["A", "C"])
    common.add_argument("--gamma", help="local-oscillator amplitude re,im for jump schemes")
    common.add_argument("--controller",
                        help="constant:PHI | heterodyne:PHI0,DELTA | adaptive-single | adaptive-mean")
    common.add_argument("--model", help="JSON model file {nmax, H, collapse}")
    common.add_argument("--out", help="output path, '-' for standard output")
    common.add_argument("--format", choices=["jsonl", "csv", "json"])
    common.add_argument("--threads", type=int)

    parser = argparse.ArgumentParser(prog="qtraj", description=(
        "Quantum trajectories and continuous-measurement POVMs for a damped mode."))
    sub = parser.add_subparsers(dest="command", required=True)
    sim = sub.add_parser("simulate", parents=[common], argument_default=argparse.SUPPRESS, help="run an ensemble, write records")
    sim.add_argument("--corrupt-weights", dest="corrupt_weights", action="store_true",
                     help=argparse.SUPPRESS)
    chk = sub.add_parser("master-check", parents=[common], argument_default=argparse.SUPPRESS,
                         help="compare an ensemble with the master equation")
    chk.add_argument("--corrupt-weights", dest="corrupt_weights", action="store_true",
                     help="debug: scale all weights by 1.5 (negative control)")
    povm = sub.add_parser("povm", parents=[common], argument_default=argparse.SUPPRESS, help="analytic or reconstructed POVMs")
    povm.add_argument("--kind", choices=["ideal", "standard", "homodyne", "heterodyne"])
    povm.add_argument("--nbins", type=int)
    povm.add_argument("--reconstruct", nargs="+", help="phase-sample JSONL files (globs allowed)")
    wig = sub.add_parser("wigner", parents=[common], argument_default=argparse.SUPPRESS, help="one-sigma Wigner contour of an effect")
    wig.add_argument("--R", help="re,im")
    wig.add_argument("--S", help="re,im")
    wig.add_argument("--t", type=float)
    wig.add_argument("--record", help="diffusive record JSONL; uses its first record")
    wig.add_argument("--npoints", type=int)
    wig.add_argument("--asymptotic", action="store_true",
                     help="draw the long-time minimum-uncertainty ellipse")
    ada = sub.add_parser("adaptive", parents=[common], argument_default=argparse.SUPPRESS, help="sample phase measurements")
    ada.add_argument("--nbins", type=int)
    return parser


def resolve_config(args: argparse.Namespace) -> dict:
    """Defaults < config file < flags; seed falls back to ``$QTRAJ_SEED``."""
    cfg = dict(DEFAULTS)
    flags = vars(args).copy()
    command = flags.pop("command")
    path = flags.pop("config", None)
    if path:
        try:
            with open(path) as fh:
                data = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError("config file must hold a JSON object")
        unknown = set(data) - set(DEFAULTS)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        cfg.update(data)
    cfg.update(flags)
    if cfg["seed"] is None:
        env = os.environ.get("QTRAJ_SEED")
        try:
            cfg["seed"] = int(env) if env not in (None, "") else FALLBACK_SEED
        except ValueError as exc:
            raise ConfigError(f"QTRAJ_SEED={env!r} is not an integer") from exc
    cfg["command"] = command
    for key in ("nmax", "ntraj", "threads", "nbins", "npoints"):
        if int(cfg[key]) < 1:
            raise ConfigError(f"{key} must be a positive integer")
    for key in ("dt",):
        if not float(cfg[key]) > 0:
            raise ConfigError(f"{key} must be positive")
    if float(cfg["tfinal"]) < 0:
        raise ConfigError("tfinal must be >= 0")
    return cfg


def header(cfg: dict) -> dict:
    return {k: v for k, v in sorted(cfg.items())}


@contextmanager
def open_out(path: str):
    if path in (None, "-"):
        yield sys.stdout
    else:
        with open(path, "w", newline="") as fh:
            yield fh


def report_stream(cfg):
    return sys.stderr if cfg["out"] in (None, "-") else sys.stdout


def progress(msg: str) -> None:
    print(f"[qtraj] {msg}", file=sys.stderr, flush=True)


# ----------------------------------------------------------------- commands

def _setup(cfg):
    if cfg["model"]:
        with open(cfg["model"]) as fh:
            model = LindbladModel.from_json(json.load(fh))
        space = model.space
        if space.nmax != int(cfg["nmax"]):
            cfg["nmax"] = space.nmax
    else:
        space = FockSpace(int(cfg["nmax"]))
        model = LindbladModel.damped_cavity(space)
    psi0 = parse_state(cfg["state"], space)
    return space, model, psi0


def _run_ensemble(cfg, psi0, model):
    scheme = Scheme(cfg["scheme"])
    method = Method(cfg["method"]) if scheme is Scheme.JUMP else Method.OSTENSIBLE_C
    controller = PhaseController.parse(cfg["controller"]) if scheme is Scheme.DIFFUSIVE else None
    gamma = parse_complex_pair(cfg["gamma"]) if cfg["gamma"] else None
    progress(f"{cfg['ntraj']} {scheme.value} trajectories, method {method.value}")
    res = simulate_batch(psi0, model, scheme, method, float(cfg["tfinal"]), float(cfg["dt"]),
                         int(cfg["seed"]), n_traj=int(cfg["ntraj"]), gamma=gamma,
                         controller=controller, store_noise=True,
                         store_phases=controller is not None and not controller.is_constant,
                         threads=int(cfg["threads"]))
    if cfg["corrupt_weights"]:
        res.weights = res.weights * 1.5
    return res


def cmd_simulate(cfg) -> int:
    space, model, psi0 = _setup(cfg)
    res = _run_ensemble(cfg, psi0, model)
    n = np.arange(space.dim)
    photons = np.einsum("bi,i,bi->b", res.states.conj(), n, res.states).real
    wn = res.weights * photons
    summary = {"ntraj": res.n_traj,
               "mean_photon_number": float(wn.mean()),
               "mean_photon_number_stderr": float(wn.std(ddof=1) / math.sqrt(len(wn))),
               "mean_weight": float(res.weights.mean())}
    if res.events is not None:
        counts = res.counts()
        summary["mean_jump_count"] = float(counts.mean())
        summary["max_jump_count"] = int(counts.max())
    with open_out(cfg["out"]) as fh:
        write_jsonl(fh, (res.record(i) for i in range(res.n_traj)), header(cfg))
    print(json.dumps(summary, sort_keys=True), file=report_stream(cfg))
    return EXIT_OK


def cmd_master_check(cfg) -> int:
    space, model, psi0 = _setup(cfg)
    res = _run_ensemble(cfg, psi0, model)
    mats = res.state_matrices()
    mean = mats.mean(axis=0)
    se = np.sqrt((np.abs(mats - mean) ** 2).sum(axis=0) / (len(mats) - 1) / len(mats))
    progress("integrating the master equation")
    rho = evolve_master(DensityMatrix.from_state(psi0), model, float(cfg["tfinal"]),
                        min(float(cfg["dt"]), 1e-3)).entries
    dev = np.abs(mean - rho)
    tol = 3 * se + CHECK_FLOOR
    ok = dev <= tol
    iu = np.triu_indices(space.dim)
    report = {"max_deviation": float(dev.max()), "max_stderr": float(se.max()),
              "max_deviation_over_tolerance": float(np.max(dev[iu] / tol[iu])),
              "elements_failing": int(np.count_nonzero(~ok[iu])), "pass": bool(ok.all())}
    with open_out(cfg["out"]) as fh:
        fh.write(json.dumps({"config": header(cfg)}, sort_keys=True) + "\n")
        fh.write(json.dumps(report, sort_keys=True) + "\n")
    print("PASS" if report["pass"] else "FAIL", file=report_stream(cfg))
    return EXIT_OK if report["pass"] else EXIT_INCONSISTENT


def _load_phase_samples(patterns) -> list:
    paths = sorted({p for pat in patterns for p in (glob.glob(pat) or [pat])})
    sets = []
    for path in paths:
        with open(path) as fh:
            _, rows = read_jsonl(fh)
        groups: dict = {}
        for r in rows:
            groups.setdefault(r.get("state", ""), []).append(r)
        for state, rs in groups.items():
            psi = parse_state(state, FockSpace(1))
            rho = np.outer(psi.amps, psi.amps.conj())
            sets.append(PhaseSamples.from_rows(rs, rho))
    return sets


def cmd_povm(cfg) -> int:
    nbins = int(cfg["nbins"])
    rep = report_stream(cfg)
    if cfg["reconstruct"]:
        sets = _load_phase_samples(cfg["reconstruct"])
        povm = reconstruct_povm(sets, nbins)
        data = povm.to_json()
        print(f"reconstructed from {len(sets)} input states", file=rep)
        print(f"coefficient {povm.extra['coefficient']:.6f} +- "
              f"{povm.extra['coefficient_stderr']:.6f}", file=rep)
        print(f"completeness residual {povm.completeness_residual():.3e}", file=rep)
    elif cfg["kind"] in ("ideal", "standard"):
        povm = povm_ideal_phase(nbins) if cfg["kind"] == "ideal" else povm_standard_phase(nbins)
        data = povm.to_json()
        print(f"coefficient {povm.extra['coefficient']:.6f}", file=rep)
        print(f"completeness residual {povm.completeness_residual():.3e}", file=rep)
    else:
        space = FockSpace(int(cfg["nmax"]))
        if cfg["kind"] == "homodyne":
            phi = PhaseController.parse(cfg["controller"]).phi0
            xs = np.linspace(-1.0, 1.0, nbins) * math.sqrt(space.nmax)
            mats = [effect_homodyne(x, phi, space) for x in xs]
            labels = [{"X": float(x)} for x in xs]
            weight = (xs[1] - xs[0]) if nbins > 1 else 1.0
        else:
            r = 0.5 * math.sqrt(space.nmax)
            while r > 0 and coherent_tail(r, space.nmax) > TAIL_TOLERANCE:
                r *= 0.95
            grid = np.linspace(-r, r, nbins) if nbins > 1 else np.zeros(1)
            pts = [complex(a, b) for a in grid for b in grid if a * a + b * b <= r * r]
            mats = [effect_heterodyne(A, space) for A in pts]
            labels = [{"A": [A.real, A.imag]} for A in pts]
            weight = (grid[1] - grid[0]) ** 2 if nbins > 1 else 1.0
        total = sum(m.entries for m in mats) * weight
        half = space.dim // 2
        resid = float(np.max(np.abs(total[:half, :half] - np.eye(half))))
        data = povm_to_json(labels, mats)
        print(f"{len(mats)} effects; grid-sum residual on levels 0..{half - 1}: {resid:.3e}",
              file=rep)
    with open_out(cfg["out"]) as fh:
        json.dump({"config": header(cfg), "povm": data}, fh)
        fh.write("\n")
    return EXIT_OK


def cmd_wigner(cfg) -> int:
    if cfg["record"]:
        with open(cfg["record"]) as fh:
            _, rows = read_jsonl(fh)
        if not rows or "dw" not in rows[0]:
            raise ConfigError("record file holds no diffusive record")
        rec = rows[0]
        ctrl = PhaseController.parse(rec.get("controller", "constant:0"))
        phases = rec.get("phases", ctrl.phi0)
        f = functionals_from_record(rec["dw"], phases, rec["dt"])
    else:
        f = RecordFunctionals(parse_complex_pair(cfg["R"]), parse_complex_pair(cfg["S"]),
                              float(cfg["t"]))
    g = gaussian_effect_params(f)
    pts = wigner_contour(g, int(cfg["npoints"]), asymptotic=bool(cfg["asymptotic"]))
    vx, vy = g.asymptotic_variances() if cfg["asymptotic"] else (g.vx, g.vy)
    with open_out(cfg["out"]) as fh:
        fh.write(f"# config {json.dumps(header(cfg), sort_keys=True)}\n")
        fh.write(f"# theta={g.theta!r} x={g.x!r} y={g.y!r} vx={vx!r} vy={vy!r}\n")
        fh.write(f"# area={math.pi * math.sqrt(vx * vy)!r} polygon_area={polygon_area(pts)!r}\n")
        fh.write("q,p\n")
        for q, p in pts:
            fh.write(f"{float(q)!r},{float(p)!r}\n")
    return EXIT_OK


def cmd_adaptive(cfg) -> int:
    space = FockSpace(int(cfg["nmax"]))
    psi0 = parse_state(cfg["state"], space)
    spec = cfg["controller"] if cfg["controller"] != DEFAULTS["controller"] else "adaptive-single"
    ctrl = PhaseController.parse(spec)
    tfinal = max(float(cfg["tfinal"]), 12.0)
    progress(f"{cfg['ntraj']} completed measurements, controller {ctrl.id}")
    s = sample_phase_measurements(psi0, ctrl, float(cfg["dt"]), int(cfg["seed"]),
                                  int(cfg["ntraj"]), t_final=tfinal, state=cfg["state"],
                                  threads=int(cfg["threads"]))
    with open_out(cfg["out"]) as fh:
        write_jsonl(fh, s.rows(), header(cfg))
    a2 = np.abs(s.A) ** 2
    print(json.dumps({"ntraj": len(s), "mean_weight": float(s.weights.mean()),
                      "mean_abs_A2": float(a2.mean()), "var_abs_A2": float(a2.var(ddof=1))},
                     sort_keys=True), file=report_stream(cfg))
    return EXIT_OK


COMMANDS = {"simulate": cmd_simulate, "master-check": cmd_master_check, "povm": cmd_povm,
            "wigner": cmd_wigner, "adaptive": cmd_adaptive}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code not in (0, None) else EXIT_OK
    try:
        cfg = resolve_config(args)
        return COMMANDS[cfg["command"]](cfg)
    except NumericalGuard as exc:
        print(f"numerical guard {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_GUARD
    except QTrajError as exc:
        if isinstance(exc, DimensionMismatch):
            print(f"config error: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        print(f"numerical guard {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_GUARD
    except (ConfigError, ValueError, KeyError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
