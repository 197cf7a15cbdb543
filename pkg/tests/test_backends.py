import os
import subprocess
import sys

import numpy as np
import pytest

from qtraj import _kernels_py
from qtraj._backend import BACKEND, kernels
from qtraj.adaptive import PhaseController
from qtraj.dynamics import LindbladModel
from qtraj.fockcore import FockSpace, coherent_state, fock_state
from qtraj.trajectories import jump_operators, SamplingStrategy

compiled = pytest.mark.skipif(BACKEND == _kernels_py.BACKEND, reason="compiled kernel not built")


def _diffusive_inputs(ctrl, nmax=6, n=3, steps=500, dt=1e-2):
    sp = FockSpace(nmax)
    a = np.diag(np.sqrt(np.arange(1, nmax + 1)), 1).astype(complex)
    k = 0.5 * a.conj().T @ a
    rng = np.random.default_rng(11)
    dw = np.sqrt(dt) * rng.normal(size=(n, steps))
    code, params = ctrl.kernel_spec()
    return coherent_state(sp, 0.5).amps, dw, dt, 0.0, code, params, a, k


@compiled
@pytest.mark.parametrize("spec", ["constant:0.3", "heterodyne:0.1,50", "adaptive-single",
                                  "adaptive-mean"])
@pytest.mark.parametrize("exact", [True, False])
def test_diffusive_kernels_agree(spec, exact):
    psi0, dw, dt, t0, code, params, a, k = _diffusive_inputs(PhaseController.parse(spec))
    out_c = kernels.diffusive_batch(psi0, dw, dt, t0, code, params, exact, a, k, True)
    out_p = _kernels_py.diffusive_batch(psi0, dw, dt, t0, code, params, exact, a, k, True)
    np.testing.assert_array_equal(out_c[1], out_p[1])
    for x, y in zip(out_c[:1] + out_c[2:], out_p[:1] + out_p[2:]):
        np.testing.assert_allclose(x, y, rtol=1e-10, atol=1e-12)


@compiled
@pytest.mark.parametrize("method,gamma", [("A", 0.0), ("A", 0.7j), ("C", 1.0)])
def test_jump_kernels_agree(method, gamma):
    sp = FockSpace(5)
    model = LindbladModel.damped_cavity(sp)
    ops = jump_operators(model, gamma, 1e-3, SamplingStrategy(method))
    u = np.random.default_rng(5).random((4, 3000))
    psi0 = fock_state(sp, 3).amps
    args = (psi0, u, ops.jump, ops.nojump, ops.prob, ops.lam1, ops.linear)
    out_c = kernels.jump_batch(*args)
    out_p = _kernels_py.jump_batch(*args)
    np.testing.assert_array_equal(out_c[2], out_p[2])
    np.testing.assert_array_equal(out_c[1], out_p[1])
    np.testing.assert_allclose(out_c[0], out_p[0], rtol=1e-10, atol=1e-13)


def test_pure_python_override():
    env = dict(os.environ, QTRAJ_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", "from qtraj._backend import BACKEND; print(BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == _kernels_py.BACKEND


def test_kernels_accept_read_only_inputs():
    psi0, dw, dt, t0, code, params, a, k = _diffusive_inputs(PhaseController.constant())
    for arr in (psi0, dw, a, k):
        arr.setflags(write=False)
    kernels.diffusive_batch(psi0, dw, dt, t0, code, params, True, a, k, False)
