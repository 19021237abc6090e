"""Conserved-quantity series along trajectories and convergence-rate fits."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from specvi.curve import Trajectory
from specvi.system import LagrangianSystem, NoetherGenerator, as_lagrangian, energy

EPS = np.finfo(float).eps


class TooFewPoints(ValueError):
    pass


@dataclass(frozen=True)
class SeriesReport:
    """Deviation of a scalar invariant from its initial value.

    ``times``/``values``/``errors`` are sample-aligned; ``step_index`` maps
    each sample to the step it was taken in. ``drift_ratio`` is the largest
    error over the last 10% of steps divided by the largest over the first
    10% (at least 5 steps per window); NaN when either window is zero.
    """

    times: np.ndarray
    values: np.ndarray
    errors: np.ndarray
    step_index: np.ndarray
    reference: float
    max_abs_error: float
    drift_ratio: float

    def as_rows(self):
        return list(zip(self.times, self.values, self.errors))


def _report(times, values, step_index, reference, steps) -> SeriesReport:
    values = np.asarray(values, dtype=float)
    errors = values - reference
    absd = np.abs(errors)
    per_step = np.zeros(max(steps, 1))
    np.maximum.at(per_step, step_index, absd)
    w = min(max(5, math.ceil(0.1 * steps)), steps)
    first, last = per_step[:w].max(), per_step[-w:].max()
    drift = float(last / first) if first > 0 and last > 0 else float("nan")
    return SeriesReport(
        times=np.asarray(times, dtype=float),
        values=values,
        errors=errors,
        step_index=np.asarray(step_index),
        reference=float(reference),
        max_abs_error=float(absd.max()) if absd.size else 0.0,
        drift_ratio=drift,
    )


def noether_series(
    traj: Trajectory,
    sys: LagrangianSystem,
    gen: NoetherGenerator,
    samples_per_step: int = 64,
) -> SeriesReport:
    """``p^T a(q)`` along the Galerkin curves, with ``p = dL/dqdot``."""
    sys = as_lagrangian(sys)
    idx, t, q, v = traj.dense(samples_per_step)
    vals = [gen.quantity(qi, sys.grad_qdot(qi, vi)) for qi, vi in zip(q, v)]
    s0 = traj.states[0]
    return _report(t, vals, idx, gen.quantity(s0.q, s0.p), traj.steps)


def energy_series(traj: Trajectory, sys: LagrangianSystem, samples_per_step: int = 64) -> SeriesReport:
    sys = as_lagrangian(sys)
    idx, t, q, v = traj.dense(samples_per_step)
    vals = [energy(sys, qi, vi) for qi, vi in zip(q, v)]
    s0 = traj.states[0]
    e0 = energy(sys, s0.q, sys.to_velocity(s0.q, s0.p))
    return _report(t, vals, idx, e0, traj.steps)


def discrete_noether_series(traj: Trajectory, gen: NoetherGenerator) -> SeriesReport:
    """``p_k^T a(q_k)`` at step endpoints; sample ``k`` belongs to step ``k-1``."""
    vals = [gen.quantity(s.q, s.p) for s in traj.states]
    idx = np.maximum(np.arange(len(vals)) - 1, 0)
    return _report(traj.times(), vals, idx, vals[0], traj.steps)


def step_increments(report: SeriesReport) -> np.ndarray:
    """Successive differences of an endpoint series."""
    return np.diff(report.values)


@dataclass(frozen=True)
class RateFit:
    xs: np.ndarray
    errors: np.ndarray
    used: np.ndarray
    fitted_base_or_order: float
    r_squared: float
    kind: str


def _pre_floor(xs, errors, floor, ceiling=None):
    # leading run above the floor, after skipping pre-asymptotic points
    # (non-finite or at/above the ceiling) at the coarse end
    start = 0
    if ceiling is not None:
        while start < len(errors) and not (np.isfinite(errors[start]) and errors[start] < ceiling):
            start += 1
    keep = []
    for i in range(start, len(errors)):
        e = errors[i]
        if not np.isfinite(e) or not (e > floor):
            break
        keep.append(i)
    return np.array(keep, dtype=int)


def _linfit(x, y):
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid**2)) / ss_tot if ss_tot > 0 else 1.0
    return float(slope), r2


def _prepare(xs, errors, floor, scale, ceiling, ascending_refinement):
    xs = np.asarray(xs, dtype=float)
    errors = np.asarray(errors, dtype=float)
    if xs.shape != errors.shape:
        raise ValueError("abscissae and errors differ in length")
    order = np.argsort(xs if ascending_refinement else -xs, kind="stable")
    xs, errors = xs[order], errors[order]
    if floor is None:
        floor = 100.0 * EPS * scale
    used = _pre_floor(xs, errors, floor, ceiling)
    if used.size < 3:
        raise TooFewPoints(f"need at least 3 errors above the floor {floor:.3g}, have {used.size}")
    return xs, errors, used


def fit_geometric(
    n_values: Sequence[float],
    errors: Sequence[float],
    floor: Optional[float] = None,
    scale: float = 1.0,
    ceiling: Optional[float] = None,
) -> RateFit:
    """Fit ``error ~ C K^n``.

    Points from the first one at or below ``floor`` onwards (round-off
    plateau) are dropped. With ``ceiling`` set, leading points whose error is
    not finite or not below it are skipped as pre-asymptotic.
    """
    xs, errors, used = _prepare(n_values, errors, floor, scale, ceiling, True)
    slope, r2 = _linfit(xs[used], np.log(errors[used]))
    return RateFit(xs, errors, used, float(np.exp(slope)), r2, "geometric")


def fit_order(
    h_values: Sequence[float],
    errors: Sequence[float],
    floor: Optional[float] = None,
    scale: float = 1.0,
    ceiling: Optional[float] = None,
) -> RateFit:
    """Fit ``error ~ C h^order`` over decreasing ``h``."""
    xs, errors, used = _prepare(h_values, errors, floor, scale, ceiling, False)
    slope, r2 = _linfit(np.log(xs[used]), np.log(errors[used]))
    return RateFit(xs, errors, used, slope, r2, "order")


def osculating_radius(rel_q0, rel_v0, mu: float, rel_q) -> np.ndarray:
    """Radius of the Kepler ellipse fixed by ``(rel_q0, rel_v0)`` at the
    true anomaly of each row of ``rel_q`` (angle measured in the orbit plane)."""
    r0 = np.asarray(rel_q0, dtype=float)
    v0 = np.asarray(rel_v0, dtype=float)
    q = np.atleast_2d(np.asarray(rel_q, dtype=float))
    if r0.size == 2:
        r0, v0 = np.append(r0, 0.0), np.append(v0, 0.0)
        q = np.hstack([q, np.zeros((q.shape[0], 1))])
    hvec = np.cross(r0, v0)
    hnorm = np.linalg.norm(hvec)
    if hnorm == 0:
        raise ValueError("degenerate (radial) orbit")
    evec = np.cross(v0, hvec) / mu - r0 / np.linalg.norm(r0)
    e = np.linalg.norm(evec)
    if e >= 1:
        raise ValueError(f"orbit is not bound (e = {e:.3g})")
    # in-plane frame with x along periapsis (any axis works for a circle)
    ex = evec / e if e > 1e-14 else r0 / np.linalg.norm(r0)
    ey = np.cross(hvec / hnorm, ex)
    nu = np.arctan2(q @ ey, q @ ex)
    semi_latus = hnorm**2 / mu
    return semi_latus / (1.0 + e * np.cos(nu))


def orbit_deviation(traj: Trajectory, masses, G: float, center: int = 0, samples_per_step: int = 16, skip_steps: int = 1) -> np.ndarray:
    """Largest relative radial deviation of each body from its initial
    osculating ellipse about body ``center``, over samples after
    ``skip_steps`` steps. The entry for ``center`` is 0."""
    masses = np.asarray(masses, dtype=float)
    N = masses.size
    idx, _, q, _ = traj.dense(samples_per_step)
    D = q.shape[1] // N
    q = q.reshape(len(q), N, D)[idx >= skip_steps]
    s0 = traj.states[0]
    q0 = s0.q.reshape(N, D)
    v0 = (s0.p / np.repeat(masses, D)).reshape(N, D)
    out = np.zeros(N)
    for b in range(N):
        if b == center:
            continue
        rel = q[:, b] - q[:, center]
        mu = G * (masses[b] + masses[center])
        r_ell = osculating_radius(q0[b] - q0[center], v0[b] - v0[center], mu, rel)
        out[b] = float(np.max(np.abs(np.linalg.norm(rel, axis=1) - r_ell) / r_ell))
    return out
