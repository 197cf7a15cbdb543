"""Compare the compiled and NumPy trajectory kernels on identical inputs.

Usage: python benchmarks/bench_kernels.py [--ntraj N] [--steps K] [--repeat R]
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from qtraj import _kernels_py
from qtraj.adaptive import PhaseController
from qtraj.dynamics import LindbladModel
from qtraj.fockcore import FockSpace, fock_state, qubit_state
from qtraj.trajectories import SamplingStrategy, jump_operators

try:
    from qtraj import _kernels as compiled
except ImportError:
    compiled = None


def timed(fn, repeat):
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def diffusive_case(nmax, ntraj, steps, ctrl):
    sp = FockSpace(nmax)
    a = np.diag(np.sqrt(np.arange(1, nmax + 1)), 1).astype(complex)
    k = 0.5 * a.conj().T @ a
    dt = 1e-3
    dw = np.sqrt(dt) * np.random.default_rng(0).normal(size=(ntraj, steps))
    code, params = ctrl.kernel_spec()
    psi0 = qubit_state(sp, 1, 1).amps
    return lambda mod: mod.diffusive_batch(psi0, dw, dt, 0.0, code, params, True, a, k, False)


def jump_case(nmax, ntraj, steps, method):
    sp = FockSpace(nmax)
    model = LindbladModel.damped_cavity(sp)
    ops = jump_operators(model, 0.0 if method == "A" else 1.0, 1e-3, SamplingStrategy(method))
    u = np.random.default_rng(0).random((ntraj, steps))
    psi0 = fock_state(sp, nmax).amps
    return lambda mod: mod.jump_batch(psi0, u, ops.detect_step, ops.nojump, ops.prob,
                                      ops.lam1, ops.linear)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--ntraj", type=int, default=256)
    ap.add_argument("--steps", type=int, default=4000)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    cases = [
        ("diffusive d=2 adaptive-single", diffusive_case(1, args.ntraj, args.steps,
                                                         PhaseController.adaptive_single())),
        ("diffusive d=2 heterodyne", diffusive_case(1, args.ntraj, args.steps,
                                                    PhaseController.heterodyne())),
        ("diffusive d=13 constant", diffusive_case(12, args.ntraj, args.steps,
                                                   PhaseController.constant())),
        ("jump d=4 method A", jump_case(3, args.ntraj, args.steps, "A")),
        ("jump d=4 method C", jump_case(3, args.ntraj, args.steps, "C")),
    ]
    nsteps = args.ntraj * args.steps
    print(f"{'case':32s} {'numpy ns/step':>14s} {'compiled ns/step':>17s} {'speed-up':>9s}")
    for name, run in cases:
        tp, outp = timed(lambda: run(_kernels_py), args.repeat)
        if compiled is None:
            print(f"{name:32s} {1e9 * tp / nsteps:14.1f} {'n/a':>17s} {'n/a':>9s}")
            continue
        tc, outc = timed(lambda: run(compiled), args.repeat)
        diff = float(np.max(np.abs(outp[0] - outc[0])))
        print(f"{name:32s} {1e9 * tp / nsteps:14.1f} {1e9 * tc / nsteps:17.1f} "
              f"{tp / tc:8.1f}x   (max state diff {diff:.1e})")


if __name__ == "__main__":
    main()
