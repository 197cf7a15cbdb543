import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_ket
from qtraj.adaptive import PhaseController
from qtraj.dynamics import LindbladModel
from qtraj.errors import DegenerateEffect, TruncationError
from qtraj.fockcore import (FockSpace, StateVector, coherent_amplitudes, coherent_state,
                            fock_state, quadrature_operator, qubit_state)
from qtraj.detection import (CompletedSamples, GaussianEffect, RecordFunctionals,
                             accumulate_functionals, conditioned_state_closed_form,
                             discrete_decay_weight, effect_finite_time, effect_heterodyne,
                             effect_homodyne, functionals_from_record,
                             gaussian_effect_params, homodyne_vector, polygon_area,
                             povm_from_json, povm_to_json, sample_completed_measurements,
                             simulate_completed_measurement, wigner_contour, wigner_moments)
from qtraj.trajectories import step_diffusive_linear

SEED = 20261019


def test_functionals_single_step_example():
    f = accumulate_functionals(RecordFunctionals(), 0.0, 0.1, 0.01)
    assert f.R == pytest.approx(0.1)
    assert f.S == pytest.approx(-0.01)
    assert f.t == pytest.approx(0.01)


def test_functionals_quarter_turn_example():
    f = accumulate_functionals(RecordFunctionals(), math.pi / 2, 0.2, 0.01)
    assert f.R == pytest.approx(0.2j)
    assert f.S == pytest.approx(0.01)


def test_functionals_zero_record():
    f = functionals_from_record(np.zeros(100), 0.3, 1e-2)
    assert f.R == 0
    assert f.t == pytest.approx(1.0)
    assert abs(f.S) == pytest.approx(discrete_decay_weight(1.0, 1e-2), rel=1e-12)


def test_vectorized_functionals_match_accumulation(rng):
    dw = 0.1 * rng.normal(size=200)
    ph = rng.uniform(0, 2 * math.pi, 200)
    f = RecordFunctionals()
    for w, p in zip(dw, ph):
        f = accumulate_functionals(f, p, w, 5e-3)
    g = functionals_from_record(dw, ph, 5e-3)
    assert abs(f.R - g.R) < 1e-13 and abs(f.S - g.S) < 1e-13 and f.t == pytest.approx(g.t)


def test_discrete_decay_weight_oracle():
    assert discrete_decay_weight(1.0, 0.5) == pytest.approx(0.5 * (1 + math.exp(-0.5)))
    assert discrete_decay_weight(0.0, 0.1) == 0


@given(st.lists(st.floats(0, 2 * math.pi), min_size=1, max_size=60))
def test_abs_s_bounded_by_decay_weight(phases):
    f = functionals_from_record(np.zeros(len(phases)), phases, 1e-2)
    assert abs(f.S) <= discrete_decay_weight(f.t, 1e-2) + 1e-9
    # and within O(dt) of the continuum bound
    assert abs(f.S) <= f.tau + 1e-2


def test_closed_form_matches_stepwise_evolution(rng):
    sp = FockSpace(16)
    model = LindbladModel.damped_cavity(sp)
    dt = 1e-2
    for _ in range(5):
        psi0 = StateVector(sp, random_ket(rng, 17, support=4))
        dw = math.sqrt(dt) * rng.normal(size=60)
        ph = np.repeat(rng.uniform(0, 2 * math.pi, 6), 10)
        psi = psi0
        for w, p in zip(dw, ph):
            psi, _ = step_diffusive_linear(psi, model, p, dt, dW=w)
        closed = conditioned_state_closed_form(psi0, functionals_from_record(dw, ph, dt))
        np.testing.assert_allclose(closed.amps, psi.amps, atol=1e-10 * np.linalg.norm(psi.amps))


def test_closed_form_coherent_norm():
    sp = FockSpace(30)
    alpha = 0.8 - 0.3j
    f = RecordFunctionals(0.4 + 0.1j, -0.3 + 0.2j, 1.5)
    got = conditioned_state_closed_form(coherent_state(sp, alpha), f).norm2
    want = math.exp(-abs(alpha) ** 2 * f.tau + (alpha ** 2 * f.S.conjugate()).real
                    + 2 * (alpha * f.R.conjugate()).real)
    assert got == pytest.approx(want, rel=1e-10)


def test_closed_form_truncation_guard():
    with pytest.raises(TruncationError):
        conditioned_state_closed_form(fock_state(FockSpace(3), 3), RecordFunctionals(0, 0, 0.1))


def test_effect_at_time_zero_is_identity():
    sp = FockSpace(5)
    F = effect_finite_time(RecordFunctionals(), 1.0, sp)
    np.testing.assert_allclose(F.entries, np.eye(6), atol=1e-15)


def test_effect_vacuum_probability():
    sp = FockSpace(8)
    f = RecordFunctionals(0.7 + 0.2j, 0.1 - 0.4j, 2.0)
    F = effect_finite_time(f, 0.3, sp)
    assert F.entries[0, 0].real == pytest.approx(0.3)
    # <1|F|1> = P0 (e^{-t} + |R|^2)
    assert F.entries[1, 1].real == pytest.approx(0.3 * (math.exp(-2) + abs(f.R) ** 2))


def test_effect_is_positive_and_reproduces_closed_form(rng):
    sp = FockSpace(12)
    f = RecordFunctionals(0.5 - 0.5j, 0.2 + 0.1j, 1.0)
    F = effect_finite_time(f, 1.0, sp)
    assert np.linalg.eigvalsh(F.entries)[0] > -1e-12
    psi = StateVector(sp, random_ket(rng, 13, support=3))
    evolved = conditioned_state_closed_form(psi, f)
    assert np.vdot(psi.amps, F.entries @ psi.amps).real == pytest.approx(evolved.norm2, rel=1e-12)


def test_effect_rejects_negative_density():
    with pytest.raises(ValueError):
        effect_finite_time(RecordFunctionals(), -1.0, FockSpace(2))


def test_gaussian_params_heterodyne_like():
    g = gaussian_effect_params(RecordFunctionals(1.0, 0.0, 30.0))
    assert g.vx == pytest.approx(1) and g.vy == pytest.approx(1)
    assert g.centre == pytest.approx(2.0)


def test_gaussian_params_asymptotic_product_is_one():
    g = gaussian_effect_params(RecordFunctionals(0.3j, 0.5 * (1 - math.exp(-4)), 4.0))
    vx, vy = g.asymptotic_variances()
    assert vx * vy == pytest.approx(1, abs=1e-12)
    assert vx == pytest.approx(3.0)
    assert g.vx * g.vy >= 1


def test_gaussian_degenerate_effect():
    with pytest.raises(DegenerateEffect):
        gaussian_effect_params(RecordFunctionals(0.1, 1 - math.exp(-12), 12.0))


def test_gaussian_effect_validates_uncertainty():
    with pytest.raises(ValueError):
        GaussianEffect(0, 0, 0, 0.5, 1.0, 1.0)


@settings(max_examples=20)
@given(st.floats(1, 6), st.floats(0, 0.7), st.floats(-math.pi, math.pi),
       st.complex_numbers(max_magnitude=0.5))
def test_gaussian_params_match_wigner_moments(t, frac, arg, R):
    tau = 1 - math.exp(-t)
    S = frac * tau * complex(math.cos(arg), math.sin(arg))
    f = RecordFunctionals(R, S, t)
    sp = FockSpace(150)
    F = effect_finite_time(f, 1.0, sp)
    g = gaussian_effect_params(f)
    m = wigner_moments(F, g.theta)
    assert abs(m.centre - g.centre) < 1e-6
    assert m.vx == pytest.approx(g.vx, abs=1e-6)
    assert m.vy == pytest.approx(g.vy, abs=1e-6)
    assert abs(m.cov_xy) < 1e-6


def test_contour_area_and_rotation():
    g = gaussian_effect_params(RecordFunctionals(0.4, 0.3 * 1j, 20.0))
    pts = wigner_contour(g, npoints=4096, asymptotic=True)
    assert polygon_area(pts) == pytest.approx(math.pi, rel=1e-5)
    pts = wigner_contour(g, npoints=4096)
    assert polygon_area(pts) == pytest.approx(math.pi * math.sqrt(g.vx * g.vy), rel=1e-5)
    assert g.theta == pytest.approx(math.pi / 4)
    with pytest.raises(ValueError):
        wigner_contour(g, npoints=4)


def test_homodyne_vector_is_quadrature_eigenvector():
    sp = FockSpace(40)
    for phi in (0.0, 0.7):
        v = homodyne_vector(0.5, phi, sp)
        X = quadrature_operator(sp, phi).entries
        resid = (X @ v - 0.5 * v)[:-1]
        assert np.linalg.norm(resid) / np.linalg.norm(v) < 1e-12
    with pytest.raises(TruncationError):
        homodyne_vector(20.0, 0.0, FockSpace(9))


def test_homodyne_vacuum_density():
    sp = FockSpace(20)
    for X in (-1.0, 0.0, 1.3):
        F = effect_homodyne(X, 0.3, sp)
        assert F.entries[0, 0].real == pytest.approx(math.exp(-X * X / 2) / math.sqrt(2 * math.pi))


def test_homodyne_completeness_on_low_levels():
    sp = FockSpace(20)
    xs, h = np.linspace(-14, 14, 2801, retstep=True)
    total = sum(effect_homodyne(x, 0.4, sp).entries for x in xs if abs(x) <= 2 * math.sqrt(20)) * h
    # levels 0..10 are accurate once |X| <= 2 sqrt(nmax) covers their support
    np.testing.assert_allclose(total[:6, :6], np.eye(6), atol=1e-6)


def test_heterodyne_vacuum_density_and_completeness():
    sp = FockSpace(100)
    F = effect_heterodyne(0.5 + 0.5j, sp)
    assert F.entries[0, 0].real == pytest.approx(math.exp(-0.5) / math.pi)
    np.testing.assert_allclose(F.entries[:4, 0] * math.pi,
                               coherent_amplitudes(0.5 + 0.5j, 3) * math.exp(-0.25),
                               atol=1e-15)
    # grid sum of |A><A|/pi over |Re A|, |Im A| <= 5 with spacing 1e-2
    h = 1e-2
    g = np.arange(-5, 5 + h / 2, h)
    A = (g[:, None] + 1j * g[None, :]).ravel()
    n = np.arange(11)
    logfact = np.array([math.lgamma(k + 1) for k in n])
    kets = np.exp(-0.5 * np.abs(A[:, None]) ** 2 - 0.5 * logfact) * A[:, None] ** n
    total = kets.T @ kets.conj() * h * h / math.pi
    np.testing.assert_allclose(total, np.eye(11), atol=1e-3)


def test_povm_json_round_trip():
    sp = FockSpace(6)
    mats = [effect_heterodyne(0.1, sp), effect_heterodyne(-0.2j, sp)]
    labels, back = povm_from_json(povm_to_json(["a", "b"], mats))
    assert labels == ["a", "b"]
    np.testing.assert_array_equal(back[1], mats[1].entries)


def test_completed_measurement_needs_long_time():
    with pytest.raises(ValueError):
        sample_completed_measurements(fock_state(FockSpace(1), 0), PhaseController.constant(),
                                      1e-3, 5.0, SEED, 2)


def test_completed_samples_shape_and_replay():
    psi0 = qubit_state(FockSpace(1), 1, 1)
    ctrl = PhaseController.heterodyne()
    s = sample_completed_measurements(psi0, ctrl, 1e-2, 12.0, SEED, 5)
    assert isinstance(s, CompletedSamples) and len(s) == 5
    one = simulate_completed_measurement(psi0, ctrl, 1e-2, 12.0, SEED, index=3)
    assert one.A == s.A[3] and one.weight == s.weights[3]
    assert list(s.rows())[3]["index"] == 3
