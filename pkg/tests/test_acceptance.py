"""Acceptance suite: ten end-to-end criteria at their stated tolerances.

Each test prints one ``PASS``/``FAIL`` line (also repeated in the pytest
terminal summary).  Seeds are fixed as ``BASE_SEED + 100 * criterion + case``.
Run directly with ``python tests/test_acceptance.py`` or through pytest.
"""

from __future__ import annotations

import math
import sys
import time
from pathlib import Path

import numpy as np
import pytest
from scipy import special
from scipy import stats as sps

sys.path.insert(0, str(Path(__file__).resolve().parent))

from qtraj.adaptive import (STANDARD_EFFICIENCY, TOMOGRAPHY_INPUTS, PhaseController,
                            povm_ideal_phase, reconstruct_povm, sample_phase_measurements)
from qtraj.detection import (RecordFunctionals, conditioned_state_closed_form,
                             effect_finite_time, functionals_from_record,
                             gaussian_effect_params, homodyne_vector,
                             sample_completed_measurements, wigner_moments)
from qtraj.dynamics import (LindbladModel, direct_detection_ops, evolve_master,
                            nonselective_map, unitary_rearrange)
from qtraj.fockcore import (DensityMatrix, FockSpace, OperatorMatrix, StateVector,
                            annihilation, coherent_state, fock_state, quadrature_operator,
                            qubit_state)
from qtraj.stats import weighted_chi2, weighted_ks
from qtraj.trajectories import ensemble_state, simulate_batch, step_diffusive_linear

pytestmark = pytest.mark.acceptance

BASE_SEED = 20261019
RESULTS: list[str] = []


def seed(criterion: int, case: int = 0) -> int:
    return BASE_SEED + 100 * criterion + case


def report(criterion: int, ok: bool, detail: str) -> None:
    line = f"{'PASS' if ok else 'FAIL'} criterion {criterion}: {detail}"
    RESULTS.append(line)
    print(line, flush=True)
    assert ok, line


# ----------------------------------------------------------------- criterion 1

def test_criterion_01_unravelings_match_master_equation():
    """Weighted ensemble state matches the Lindblad solution within 3 stderr."""
    cases = [("fock1", fock_state(FockSpace(1), 1)),
             ("coherent1", coherent_state(FockSpace(12), 1.0))]
    schemes = [("jump-A", "jump", "A", None), ("jump-C", "jump", "C", 1.0),
               ("diffusive-C", "diffusive", "C", None)]
    worst, failures, k = 0.0, [], 0
    t0 = time.perf_counter()
    for name, psi0 in cases:
        model = LindbladModel.damped_cavity(psi0.space)
        rho0 = DensityMatrix.from_state(psi0)
        for sname, scheme, method, gamma in schemes:
            for t in (0.5, 1.0, 2.0):
                k += 1
                res = simulate_batch(psi0, model, scheme, method, t, 1e-3, seed(1, k),
                                     n_traj=10_000, gamma=gamma)
                est = ensemble_state(res)
                rho = evolve_master(rho0, model, t).entries
                iu = np.triu_indices(psi0.space.dim)
                dev = np.abs(est.mean - rho)[iu]
                tol = (3 * est.stderr + 1e-8)[iu]
                ratio = float(np.max(dev / tol))
                worst = max(worst, ratio)
                if ratio > 1:
                    failures.append(f"{name}/{sname}/t={t} ({ratio:.2f})")
    detail = (f"18 cases, worst |dev|/(3se+1e-8) = {worst:.3f}, "
              f"{time.perf_counter() - t0:.0f}s")
    if failures:
        detail += "; failing: " + ", ".join(failures)
    report(1, not failures, detail)


# ----------------------------------------------------------------- criterion 2

def test_criterion_02_coherent_state_stays_pure():
    sp = FockSpace(16)
    rho = evolve_master(DensityMatrix.from_state(coherent_state(sp, 1.0)),
                        LindbladModel.damped_cavity(sp), 2.0)
    target = coherent_state(sp, math.exp(-1)).amps
    fid = float(np.vdot(target, rho.entries @ target).real)
    report(2, fid > 1 - 1e-7, f"fidelity with coherent(e^-1) at t=2: 1 - {1 - fid:.2e}")


# ----------------------------------------------------------------- criterion 3

def test_criterion_03_closed_form_matches_stepwise():
    rng = np.random.default_rng(seed(3))
    sp = FockSpace(16)
    model = LindbladModel.damped_cavity(sp)
    dt, nsteps = 1e-3, 1000
    worst = 0.0
    for _ in range(100):
        amps = np.zeros(sp.dim, complex)
        amps[:4] = rng.normal(size=4) + 1j * rng.normal(size=4)
        psi0 = StateVector(sp, amps).normalize()
        dw = math.sqrt(dt) * rng.normal(size=nsteps)
        cuts = np.sort(rng.choice(np.arange(1, nsteps), size=rng.integers(1, 8), replace=False))
        pieces = rng.uniform(0, 2 * math.pi, len(cuts) + 1)
        phases = pieces[np.searchsorted(cuts, np.arange(nsteps), side="right")]
        psi = psi0
        for w, p in zip(dw, phases):
            psi, _ = step_diffusive_linear(psi, model, float(p), dt, dW=float(w))
        closed = conditioned_state_closed_form(psi0, functionals_from_record(dw, phases, dt))
        a, b = closed.amps, psi.amps
        fid = abs(np.vdot(a, b)) ** 2 / (np.vdot(a, a).real * np.vdot(b, b).real)
        worst = max(worst, 1 - fid)
    report(3, worst < 1e-5, f"100 records, worst 1 - fidelity = {worst:.2e}")


# ----------------------------------------------------------------- criterion 4

def test_criterion_04_homodyne_quadrature_distribution():
    sp = FockSpace(12)
    s = sample_completed_measurements(coherent_state(sp, 1.0), PhaseController.constant(0.0),
                                      1e-3, 12.0, seed(4), 10_000)
    x = s.A.real
    ks = weighted_ks(x, s.weights, lambda v: sps.norm.cdf(v, loc=2.0, scale=1.0))
    big = FockSpace(40)
    resid = 0.0
    for X in (-2.0, -0.5, 0.0, 0.5, 2.0):
        for phi in (0.0, 1.1):
            v = homodyne_vector(X, phi, big)
            r = (quadrature_operator(big, phi).entries @ v - X * v)[:-1]
            resid = max(resid, float(np.linalg.norm(r) / np.linalg.norm(v)))
    ok = ks.pvalue > 0.01 and resid < 1e-6
    report(4, ok, f"weighted KS vs N(2,1): D={ks.statistic:.4f}, p={ks.pvalue:.3f} "
                  f"(n_eff={ks.dof:.0f}); eigenvector residual {resid:.1e}")


# ----------------------------------------------------------------- criterion 5

def _q_function_bins(alpha: float, edges: np.ndarray):
    """Cell masses of (1/pi) e^{-|A - alpha|^2} on a square grid."""
    cdf_re = 0.5 * (1 + special.erf(edges - alpha))
    cdf_im = 0.5 * (1 + special.erf(edges))
    return np.outer(np.diff(cdf_re), np.diff(cdf_im))


def test_criterion_05_heterodyne_is_q_function():
    sp = FockSpace(12)
    s = sample_completed_measurements(coherent_state(sp, 1.0), PhaseController.heterodyne(0.0, 50.0),
                                      1e-3, 12.0, seed(5), 10_000)
    edges = np.arange(-3.0, 3.0 + 1e-9, 0.5)
    mass = _q_function_bins(1.0, edges)
    n = len(edges) - 1
    ix = np.clip(np.searchsorted(edges, s.A.real) - 1, -1, n)
    iy = np.clip(np.searchsorted(edges, s.A.imag) - 1, -1, n)
    inside = (ix >= 0) & (ix < n) & (iy >= 0) & (iy < n)
    cell = np.where(inside, ix * n + iy, -1)
    flat = mass.ravel()
    keep = np.flatnonzero(flat >= 0.005)
    label = np.full(n * n, len(keep))
    label[keep] = np.arange(len(keep))
    bins = np.where(cell >= 0, label[np.maximum(cell, 0)], len(keep))
    expected = np.append(flat[keep], 1 - flat[keep].sum())
    chi = weighted_chi2(bins, s.weights, expected)
    smax = float(np.max(np.abs(s.B)))
    ok = chi.pvalue > 0.01 and smax < 0.03
    report(5, ok, f"chi2={chi.statistic:.1f} on {chi.dof} dof, p={chi.pvalue:.3f}; "
                  f"max |S(t_final)| = {smax:.4f}")


# ----------------------------------------------------------------- criterion 6

def _abs_a2(dt: float, sd: int) -> np.ndarray:
    s = sample_completed_measurements(fock_state(FockSpace(1), 0),
                                      PhaseController.adaptive_single(), dt, 12.0, sd, 10_000)
    return np.abs(s.A) ** 2


def test_criterion_06_adaptive_amplitude_law():
    fine = _abs_a2(2.5e-4, seed(6, 0))
    mean, se = fine.mean(), fine.std(ddof=1) / math.sqrt(len(fine))
    coarse2 = _abs_a2(2e-3, seed(6, 1))
    coarse1 = _abs_a2(1e-3, seed(6, 2))
    ratio = coarse2.var(ddof=1) / coarse1.var(ddof=1)
    ref = coarse1.mean() - 1, coarse1.std(ddof=1) / math.sqrt(len(coarse1))
    ok = abs(mean - 1) < 3 * se and ratio >= 1.8
    report(6, ok, f"mean |A|^2 = {mean:.5f} +- {se:.5f} at dt=2.5e-4 "
                  f"(dt=1e-3: 1{ref[0]:+.5f} +- {ref[1]:.5f}); "
                  f"Var ratio dt 2e-3/1e-3 = {ratio:.3f}")


# ------------------------------------------------------------ criteria 7 and 8

def _tomography_sets(controller: PhaseController, sd: int):
    sp = FockSpace(1)
    return [sample_phase_measurements(qubit_state(sp, c0, c1), controller, 1e-3, sd, 10_000,
                                      state=name)
            for name, (c0, c1) in TOMOGRAPHY_INPUTS.items()]


def test_criterion_07_adaptive_povm_is_ideal():
    rec = reconstruct_povm(_tomography_sets(PhaseController.adaptive_single(), seed(7)), 16)
    ideal = povm_ideal_phase(16)
    z = np.abs(rec.params() - ideal.params()) / rec.stderr
    nfail = int(np.sum(z > 3))
    report(7, nfail == 0, f"64 bin parameters, max |z| = {z.max():.2f}, "
                          f"{nfail} beyond 3 se; eta = {rec.extra['coefficient']:.4f} "
                          f"+- {rec.extra['coefficient_stderr']:.4f}")


def test_criterion_08_heterodyne_phase_efficiency():
    rec = reconstruct_povm(_tomography_sets(PhaseController.heterodyne(0.0, 50.0), seed(8)), 16)
    eta = rec.extra["coefficient"]
    ok = abs(eta - STANDARD_EFFICIENCY) <= 0.02
    report(8, ok, f"eta = {eta:.4f} +- {rec.extra['coefficient_stderr']:.4f} "
                  f"(target {STANDARD_EFFICIENCY:.4f} +- 0.02)")


# ----------------------------------------------------------------- criterion 9

def test_criterion_09_rearrangement_invariance():
    rng = np.random.default_rng(seed(9))
    sp = FockSpace(4)
    a = annihilation(sp).entries
    H = OperatorMatrix(sp, 0.3 * a.conj().T @ a + 0.2 * (a + a.conj().T), hermitian=True)
    model = LindbladModel(H, (annihilation(sp),))
    dt = 1e-3
    base = direct_detection_ops(model, 0.0, dt)
    rotated = unitary_rearrange(base, 1 + 0.5j)
    worst = 0.0
    for _ in range(100):
        m = rng.normal(size=(5, 5)) + 1j * rng.normal(size=(5, 5))
        rho = m @ m.conj().T
        rho /= np.trace(rho).real
        d = np.max(np.abs(nonselective_map(base, rho) - nonselective_map(rotated, rho)))
        worst = max(worst, float(d))
    report(9, worst < 1e-10 * dt, f"100 states, max |delta rho| = {worst:.2e} "
                                  f"(bound {1e-10 * dt:.0e})")


# ---------------------------------------------------------------- criterion 10

def test_criterion_10_gaussian_effect_geometry():
    rng = np.random.default_rng(seed(10))
    sp = FockSpace(150)
    worst, worst_prod, min_exact = 0.0, 0.0, np.inf
    for _ in range(50):
        t = rng.uniform(1, 6)
        tau = 1 - math.exp(-t)
        S = rng.uniform(0.05, 0.7) * tau * np.exp(1j * rng.uniform(0, 2 * math.pi))
        R = rng.uniform(0, 0.5) * np.exp(1j * rng.uniform(0, 2 * math.pi))
        f = RecordFunctionals(R, S, t)
        g = gaussian_effect_params(f)
        F = effect_finite_time(f, 1.0, sp)
        lab = wigner_moments(F, 0.0)            # fixed frame, independent of theta
        cov = np.array([[lab.vx, lab.cov_xy], [lab.cov_xy, lab.vy]])
        theta = 0.5 * math.atan2(2 * lab.cov_xy, lab.vx - lab.vy)
        rot = wigner_moments(F, g.theta)
        errs = [abs(((theta - g.theta) + math.pi / 2) % math.pi - math.pi / 2),
                abs(rot.centre - g.centre), abs(rot.vx - g.vx), abs(rot.vy - g.vy),
                abs(np.linalg.eigvalsh(cov)[1] - g.vx), abs(rot.cov_xy)]
        worst = max(worst, max(errs))
        vx, vy = g.asymptotic_variances()
        worst_prod = max(worst_prod, abs(vx * vy - 1))
        min_exact = min(min_exact, g.vx * g.vy)
    ok = worst < 1e-6 and worst_prod < 1e-12 and min_exact >= 1 - 1e-12
    report(10, ok, f"50 effects, max moment error {worst:.1e}; "
                   f"max |Vx*Vy - 1| (long-time form) {worst_prod:.1e}; "
                   f"min exact Vx*Vy {min_exact:.4f}")


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q", "-s"]))
