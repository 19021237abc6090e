import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from specvi.diagnostics import (
    TooFewPoints,
    discrete_noether_series,
    energy_series,
    fit_geometric,
    fit_order,
    noether_series,
    orbit_deviation,
    osculating_radius,
    step_increments,
)
from specvi.problems import KeplerOrbit, free_particle, harmonic_oscillator, kepler_two_body
from specvi.stepper import SolverConfig, SpectralStepper
from specvi.system import translation


def _run(prob, n, h, steps, cfg=None):
    return SpectralStepper(prob.system, n, h, cfg=cfg).integrate(prob.init, steps)


# ---- fits ----------------------------------------------------------------------------


def test_fit_geometric_example():
    fit = fit_geometric([1, 2, 3], [1e-1, 1e-2, 1e-3])
    assert fit.fitted_base_or_order == pytest.approx(0.1, rel=1e-12)
    assert fit.r_squared == pytest.approx(1.0)
    assert fit.used.tolist() == [0, 1, 2]


def test_fit_order_example():
    fit = fit_order([0.4, 0.2, 0.1], [1e-2, 2.5e-3, 6.25e-4])
    assert fit.fitted_base_or_order == pytest.approx(2.0, abs=1e-10)


@given(st.floats(0.05, 0.95), st.floats(1e-3, 1e3), st.integers(3, 15))
def test_fit_geometric_recovers_base(K, C, count):
    n = np.arange(2, 2 + count)
    errors = C * K**n
    if errors.min() <= 1e-12:
        return
    assert fit_geometric(n, errors).fitted_base_or_order == pytest.approx(K, abs=1e-12)


@given(st.integers(1, 12), st.floats(0.1, 10.0))
def test_fit_order_recovers_integer_order(order, C):
    h = 0.5 ** np.arange(1, 5)
    errors = C * h**order
    if errors.min() <= 1e-12:
        return
    assert fit_order(h, errors).fitted_base_or_order == pytest.approx(order, abs=1e-10)


def test_fit_drops_round_off_plateau():
    n = np.arange(4, 14)
    errors = np.maximum(0.5**n * 10, 1e-15)
    errors[-3:] = [1e-15, 3e-14, 2e-15]
    fit = fit_geometric(n, errors)
    assert fit.fitted_base_or_order == pytest.approx(0.5, rel=1e-9)
    assert fit.used.max() < 7


def test_fit_order_accepts_any_input_order():
    fit = fit_order([0.1, 0.4, 0.2], [1e-3, 1.6e-2, 4e-3])
    assert fit.fitted_base_or_order == pytest.approx(2.0, abs=1e-10)


def test_fit_ceiling_skips_pre_asymptotic_points():
    n = np.arange(2, 10)
    errors = 0.3**n
    errors[:2] = [np.inf, 5.0]
    with pytest.raises(TooFewPoints):
        fit_geometric(n, errors)
    fit = fit_geometric(n, errors, ceiling=1.0)
    assert fit.fitted_base_or_order == pytest.approx(0.3, rel=1e-12)
    assert fit.used[0] == 2


def test_too_few_points():
    with pytest.raises(TooFewPoints):
        fit_geometric([1, 2, 3], [1e-1, 1e-2, 1e-20])
    with pytest.raises(TooFewPoints):
        fit_order([0.2, 0.1], [1e-2, 1e-3])
    with pytest.raises(ValueError):
        fit_order([0.2, 0.1], [1e-2])


# ---- series --------------------------------------------------------------------------


def test_free_particle_energy_and_translation():
    prob = free_particle(q0=[0.0, 1.0], p0=[1.0, -0.5])
    traj = _run(prob, 4, 0.5, 20)
    e = energy_series(traj, prob.system, 16)
    assert e.max_abs_error <= 1e-12
    for g in prob.generators:
        rep = noether_series(traj, prob.system, g, 16)
        assert rep.max_abs_error <= 1e-12


def test_noether_series_kepler_angular_momentum():
    prob = kepler_two_body()
    traj = _run(prob, 16, 2.0, 100)
    g = prob.generators[0]
    rep = noether_series(traj, prob.system, g, 32)
    assert rep.reference == pytest.approx(0.8)
    # the value at a step start equals q_x p_y - q_y p_x along the curve
    q, v = traj.curves[3].eval(traj.curves[3].t0), traj.curves[3].eval_deriv(traj.curves[3].t0)
    assert rep.values[3 * 32] == pytest.approx(q[0] * v[1] - q[1] * v[0], rel=1e-14)
    assert np.isfinite(rep.max_abs_error)
    assert rep.drift_ratio <= 2


def test_discrete_noether_series_kepler():
    prob = kepler_two_body()
    cfg = SolverConfig()
    traj = _run(prob, 16, 2.0, 100, cfg)
    rep = discrete_noether_series(traj, prob.generators[0])
    inc = step_increments(rep)
    assert inc.size == 100
    assert np.max(np.abs(inc)) <= 10 * cfg.tol
    assert rep.max_abs_error <= 1000 * cfg.tol


def test_discrete_noether_negative_control():
    # a translation is not a symmetry of the central potential
    prob = kepler_two_body()
    traj = _run(prob, 12, 0.5, 20)
    rep = discrete_noether_series(traj, translation(2, 0))
    assert np.max(np.abs(step_increments(rep))) > 1e-3


def test_harmonic_energy_long_steps():
    prob = harmonic_oscillator()
    traj = _run(prob, 14, 20.0, 100)
    rep = energy_series(traj, prob.system, 32)
    assert np.isfinite(rep.max_abs_error)
    assert rep.drift_ratio <= 2


def test_harmonic_energy_error_decreases_with_n():
    prob = harmonic_oscillator()
    errs = [energy_series(_run(prob, n, 2.0, 20), prob.system, 32).max_abs_error for n in (4, 6, 8, 10, 12)]
    assert all(a > b for a, b in zip(errs, errs[1:]))
    assert fit_geometric([4, 6, 8, 10, 12], errs).fitted_base_or_order < 0.9


def test_drift_ratio_windows():
    from specvi.diagnostics import _report

    steps = 50
    idx = np.arange(steps)
    growing = _report(idx, 1.0 + 1e-6 * (idx + 1), idx, 1.0, steps)
    assert growing.drift_ratio == pytest.approx(50 / 5, rel=1e-6)
    flat = _report(idx, 1.0 + 1e-6 * np.cos(idx), idx, 1.0, steps)
    assert flat.drift_ratio < 2
    exact = _report(idx, np.ones(steps), idx, 1.0, steps)
    assert math.isnan(exact.drift_ratio)
    assert len(exact.as_rows()) == steps


# ---- orbits ------------------------------------------------------------------------


@settings(max_examples=20)
@given(st.floats(0.0, 0.9), st.floats(0.5, 3.0), st.floats(0, 6.0))
def test_osculating_radius_on_exact_orbit(e, a, t):
    mu = 1.7
    rp = a * (1 - e)
    vp = math.sqrt(mu * (1 + e) / rp)
    orbit = KeplerOrbit((rp, 0.0), (0.0, vp), mu)
    q, _ = orbit.state(t)
    r = osculating_radius([rp, 0.0], [0.0, vp], mu, q)
    assert r[0] == pytest.approx(np.linalg.norm(q), rel=1e-10)


def test_osculating_radius_rejects_unbound_and_radial():
    with pytest.raises(ValueError):
        osculating_radius([1.0, 0.0], [0.0, 2.0], 1.0, [[1.0, 0.0]])
    with pytest.raises(ValueError):
        osculating_radius([1.0, 0.0], [0.3, 0.0], 1.0, [[1.0, 0.0]])


def test_orbit_deviation_small_for_accurate_two_body_run():
    from specvi.problems import NBodyConfig, nbody_problem

    # two bodies reproducing the default Kepler orbit about the heavy one
    m = np.array([1.0, 1e-9])
    cfg = NBodyConfig(m, np.array([[0.0, 0.0, 0.0], [0.4, 0.0, 0.0]]),
                      np.array([[0.0, 0.0, 0.0], [0.0, 2.0, 0.0]]), G=1.0)
    prob = nbody_problem(cfg)
    traj = _run(prob, 20, 0.25, 40)
    dev = orbit_deviation(traj, m, 1.0)
    assert dev[0] == 0.0
    assert dev[1] < 1e-6
