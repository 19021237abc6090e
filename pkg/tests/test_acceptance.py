"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Tolerances are the stated ones. Criteria that the method cannot meet as
literally worded are still checked literally and reported as FAIL.
"""

import math
import time

import numpy as np
import pytest

from specvi.basis import chebyshev_points, tabulate
from specvi.curve import sup_error
from specvi.diagnostics import (
    TooFewPoints,
    discrete_noether_series,
    energy_series,
    fit_geometric,
    fit_order,
    noether_series,
    orbit_deviation,
    step_increments,
)
from specvi.problems import free_particle, harmonic_oscillator, kepler_two_body, solar_system
from specvi.quadrature import gauss_legendre
from specvi.stepper import AssemblyError, PhaseState, SolverConfig, SpectralStepper, assemble_A, contraction_bound

EPS = np.finfo(float).eps


@pytest.fixture
def report(capsys):
    def _report(number, ok, detail):
        with capsys.disabled():
            print(f"\nCRITERION {number:2d}: {'PASS' if ok else 'FAIL'} | {detail}")
        return ok

    return _report


def _integrate(prob, n, h, steps, m=None, cfg=None):
    return SpectralStepper(prob.system, n, h, m=m, cfg=cfg).integrate(prob.init, steps)


# ---- 1 --------------------------------------------------------------------------------


def test_criterion_01_quadrature_exactness(report):
    t0 = time.perf_counter()
    worst_exact, weakest_fail = 0.0, np.inf
    for m in range(1, 26):
        r = gauss_legendre(m)
        for k in range(2 * m):
            exact = 1.0 / (k + 1)
            worst_exact = max(worst_exact, abs(r.b @ r.c**k - exact) / exact)
        if m <= 5:
            k = 2 * m
            weakest_fail = min(weakest_fail, abs(r.b @ r.c**k - 1.0 / (k + 1)) * (k + 1))
    dt = time.perf_counter() - t0
    ok = worst_exact <= 1e-12 and weakest_fail > 1e-10 and dt < 1.0
    assert report(1, ok, f"max rel error k<=2m-1: {worst_exact:.2e}; min rel error k=2m (m<=5): "
                         f"{weakest_fail:.2e}; {dt:.2f} s")


# ---- 2 --------------------------------------------------------------------------------


def test_criterion_02_free_particle_exactness(report):
    t0 = time.perf_counter()
    worst = 0.0
    for n in (2, 8, 20):
        for h in (0.1, 1.0, 10.0):
            prob = free_particle(q0=0.3, p0=1.7)
            traj = _integrate(prob, n, h, 100)
            ce, ee = sup_error(traj, prob.reference_q, 16)
            worst = max(worst, ce, ee)
    dt = time.perf_counter() - t0
    ok = worst <= 1e-11 and dt < 5.0
    assert report(2, ok, f"worst endpoint/curve error {worst:.2e}; {dt:.2f} s")


# ---- 3 --------------------------------------------------------------------------------


def test_criterion_03_harmonic_geometric_convergence(report):
    t0 = time.perf_counter()
    prob = harmonic_oscillator()
    ns = list(range(4, 21))
    end_errs, energy_errs = [], []
    for n in ns:
        traj = _integrate(prob, n, 20.0, 100, m=2 * n)
        _, ee = sup_error(traj, prob.reference_q, 2)
        end_errs.append(ee)
        energy_errs.append(energy_series(traj, prob.system, 16).max_abs_error)
    dt = time.perf_counter() - t0
    floor = 100 * EPS

    def strictly_decreasing_to_floor(errs):
        for a, b in zip(errs, errs[1:]):
            if a <= floor:
                return True
            if not b < a:
                return False
        return True

    def fit(errs):
        try:
            f = fit_geometric(ns, errs, scale=1.0)
            return f.fitted_base_or_order, f.r_squared
        except TooFewPoints:
            return math.nan, math.nan

    mono = strictly_decreasing_to_floor(end_errs)
    mono_e = strictly_decreasing_to_floor(energy_errs)
    K, r2 = fit(end_errs)
    Ke, r2e = fit(energy_errs)
    ok = mono and mono_e and K < 0.9 and r2 > 0.95 and Ke < 0.9 and r2e > 0.95 and dt < 60
    detail = (
        f"endpoint strictly decreasing: {mono}; K={K:.3f} r2={r2:.3f}; "
        f"energy strictly decreasing: {mono_e}; K={Ke:.3f} r2={r2e:.3f}; {dt:.1f} s; "
        f"endpoint errors {', '.join(f'{n}:{e:.1e}' for n, e in zip(ns, end_errs))}"
    )
    assert report(3, ok, detail)


# ---- 4 --------------------------------------------------------------------------------


def test_criterion_04_harmonic_energy_stability(report):
    t0 = time.perf_counter()
    prob = harmonic_oscillator()
    traj = _integrate(prob, 14, 20.0, 100)
    rep = energy_series(traj, prob.system, 64)
    dt = time.perf_counter() - t0
    ok = rep.drift_ratio <= 2 and dt < 5
    assert report(4, ok, f"drift_ratio {rep.drift_ratio:.3f}; max energy error {rep.max_abs_error:.2e}; {dt:.2f} s")


# ---- 5 --------------------------------------------------------------------------------


def _kepler_sweep(ns):
    prob = kepler_two_body()
    end, curve = [], []
    for n in ns:
        traj = _integrate(prob, n, 2.0, 100)
        ce, ee = sup_error(traj, prob.reference_q, 64)
        end.append(ee)
        curve.append(ce)
    return end, curve


def test_criterion_05_kepler_n_refinement(report):
    # points whose error exceeds a tenth of the orbit size have not reached
    # the asymptotic regime (a wrong branch of the stage equations at small n)
    ceiling = 0.1 * 1.6
    t0 = time.perf_counter()
    ns = list(range(4, 25, 2))
    end, curve = _kepler_sweep(ns)
    dt = time.perf_counter() - t0
    fe = fit_geometric(ns, end, ceiling=ceiling)
    large = list(range(28, 41, 4))
    end_l, curve_l = _kepler_sweep(large)
    fe_l = fit_geometric(large, end_l, ceiling=ceiling)
    fc_l = fit_geometric(large, curve_l, ceiling=ceiling)
    K = fe.fitted_base_or_order
    ok = 0.40 <= K <= 0.70 and fc_l.fitted_base_or_order > fe_l.fitted_base_or_order and dt < 600
    detail = (
        f"endpoint base n=4..24: {K:.3f} (r2 {fe.r_squared:.3f}, fitted n={fe.xs[fe.used].astype(int).tolist()}); "
        f"n=28..40: endpoint {fe_l.fitted_base_or_order:.3f} vs curve {fc_l.fitted_base_or_order:.3f}; "
        f"{dt:.1f} s up to n=24"
    )
    assert report(5, ok, detail)


# ---- 6 --------------------------------------------------------------------------------


def test_criterion_06_kepler_h_refinement(report):
    t0 = time.perf_counter()
    prob = kepler_two_body()
    hs = [0.5, 0.25, 0.125, 0.0625]
    T = 10.0
    parts, ok = [], True
    for n in (3, 4, 5):
        errs = []
        for h in hs:
            traj = _integrate(prob, n, h, round(T / h))
            errs.append(sup_error(traj, prob.reference_q, 2)[1])
        order = fit_order(hs, errs).fitted_base_or_order
        target = 2 * math.ceil(n / 2)
        good = abs(order - target) <= 0.5
        ok &= good
        parts.append(f"n={n}: order {order:.2f} vs {target} ({'ok' if good else 'off'})")
    dt = time.perf_counter() - t0
    ok &= dt < 120
    assert report(6, ok, "; ".join(parts) + f"; {dt:.1f} s")


# ---- 7 --------------------------------------------------------------------------------


def test_criterion_07_discrete_noether(report):
    prob = kepler_two_body()
    cfg = SolverConfig()
    worst = 0.0
    for n in (8, 16, 24):
        traj = _integrate(prob, n, 2.0, 100, cfg=cfg)
        inc = step_increments(discrete_noether_series(traj, prob.generators[0]))
        worst = max(worst, float(np.max(np.abs(inc))))
    ok = worst <= 10 * cfg.tol
    assert report(7, ok, f"max per-step change {worst:.2e} (bound {10 * cfg.tol:.0e}), n in 8, 16, 24")


# ---- 8 --------------------------------------------------------------------------------


def test_criterion_08_noether_energy_non_growth(report):
    prob = kepler_two_body()
    traj = _integrate(prob, 16, 2.0, 100)
    e = energy_series(traj, prob.system, 64)
    L = noether_series(traj, prob.system, prob.generators[0], 64)
    ok = e.drift_ratio <= 2 and L.drift_ratio <= 2
    assert report(8, ok, f"energy drift_ratio {e.drift_ratio:.3f}; angular momentum drift_ratio {L.drift_ratio:.3f}")


# ---- 9 --------------------------------------------------------------------------------


def _symplectic_defect(prob, n, h, eps=1e-6):
    s = SpectralStepper(prob.system, n, h, cfg=SolverConfig(tol=1e-14))
    q, p = prob.init.q, prob.init.p
    D = q.size
    x0 = np.concatenate([q, p])
    J = np.empty((2 * D, 2 * D))
    for a in range(2 * D):
        cols = []
        for sgn in (1.0, -1.0):
            x = x0.copy()
            x[a] += sgn * eps
            r = s.step(PhaseState(x[:D], x[D:]))
            cols.append(np.concatenate([r.next.q, r.next.p]))
        J[:, a] = (cols[0] - cols[1]) / (2 * eps)
    Jc = np.block([[np.zeros((D, D)), np.eye(D)], [-np.eye(D), np.zeros((D, D))]])
    return float(np.max(np.abs(J.T @ Jc @ J - Jc)))


def test_criterion_09_symplecticity(report):
    dh = _symplectic_defect(harmonic_oscillator(), 6, 0.5)
    dk = _symplectic_defect(kepler_two_body(), 8, 0.5)
    ok = dh <= 1e-6 and dk <= 1e-6
    assert report(9, ok, f"harmonic n=6: {dh:.2e}; Kepler n=8: {dk:.2e}")


# ---- 10 -------------------------------------------------------------------------------


def test_criterion_10_A_matrix_properties(report):
    # The scaling law is checked relative to the largest entry of A(h): for
    # n = 16 and h = 0.1 the entries reach about 1e3, where one unit in the
    # last place is already 1e-13.
    factorizes, norm_ok, worst_abs, worst_rel = True, True, 0.0, 0.0
    for n in range(2, 17):
        quad = gauss_legendre(2 * n)

        def A(h):
            return assemble_A(tabulate(chebyshev_points(n, h), quad), quad, 1.0, h)

        try:
            A1 = A(1.0)
        except AssemblyError:
            factorizes = False
            continue
        ref = np.linalg.norm(np.linalg.inv(A1), np.inf)
        for h in (0.1, 0.5, 0.9):
            try:
                Ah = A(h)
            except AssemblyError:
                factorizes = False
                continue
            norm_ok &= bool(np.linalg.norm(np.linalg.inv(Ah), np.inf) <= ref)
            S = np.diag([1.0] + [1.0 / h] * (n - 1))
            dev = float(np.max(np.abs(Ah - S @ A1)))
            worst_abs = max(worst_abs, dev)
            worst_rel = max(worst_rel, dev / float(np.max(np.abs(Ah))))
    ok = factorizes and norm_ok and worst_rel <= 1e-12
    assert report(10, ok, f"all factorize: {factorizes}; inverse-norm bound holds: {norm_ok}; "
                          f"scaling-law deviation {worst_rel:.2e} relative to max|A(h)| "
                          f"({worst_abs:.2e} absolute)")


# ---- 11 -------------------------------------------------------------------------------


def test_criterion_11_solver_equivalence(report):
    prob = harmonic_oscillator()
    s = SpectralStepper(prob.system, 6, 0.5)
    q, p = prob.init.q, prob.init.p
    start = s.linear_guess(q, p)
    Qf, _, _ = s.fixed_point(start, q, p)
    Qn, _, _ = s.newton(start, q, p)
    diff = float(np.max(np.abs(Qf - Qn)))
    converged = True
    for n in (2, 4, 6, 10, 16):
        table = tabulate(chebyshev_points(n, 1.0), gauss_legendre(2 * n))
        bound = contraction_bound(table, gauss_legendre(2 * n), prob.system, 1.0)
        for frac in (0.1, 0.5, 0.9, 0.999):
            st = SpectralStepper(prob.system, n, frac * bound)
            for q0, p0 in ((1.0, 0.0), (-0.5, 2.0)):
                try:
                    st.fixed_point(st.linear_guess(np.array([q0]), np.array([p0])), [q0], [p0])
                except Exception:
                    converged = False
    ok = diff <= 1e-10 and converged
    assert report(11, ok, f"fixed-point vs Newton {diff:.2e}; fixed point converged below the bound: {converged}")


# ---- 12 -------------------------------------------------------------------------------


def test_criterion_12_solar_system_smoke(report):
    parts, ok = [], True
    for kind, h in (("inner", 100.0), ("outer", 1825.0)):
        t0 = time.perf_counter()
        prob = solar_system(kind)
        traj = _integrate(prob, 25, h, 100)
        e = energy_series(traj, prob.system, 16)
        dev = orbit_deviation(traj, prob.params["masses"], prob.params["G"], samples_per_step=16)
        dt = time.perf_counter() - t0
        good = traj.steps == 100 and e.drift_ratio <= 2 and dev.max() < 0.05
        ok &= good
        worst = prob.params["names"][int(np.argmax(dev))]
        parts.append(f"{kind}: drift_ratio {e.drift_ratio:.2f}, max radial deviation {dev.max():.2%} ({worst}), {dt:.1f} s")
    assert report(12, ok, "; ".join(parts))


if __name__ == "__main__":  # pragma: no cover
    import sys

    sys.exit(pytest.main([__file__, "-v"]))
