"""Galerkin curves (dense output over one step) and whole trajectories."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from specvi.basis import ChebyshevNodeSet, basis_deriv, basis_eval, chebyshev_points
from specvi.quadrature import QuadratureRule


def _combine(phi, Q):
    # row-by-row sums, so a point gives the same bits alone or in a batch
    return np.einsum("kn,nd->kd", phi, Q)


@dataclass(frozen=True)
class GalerkinCurve:
    """``q(t) = sum_i Q[i] phi_i(t - t0)`` on ``[t0, t0 + h]``.

    ``Q`` is the ``n x D`` array of stage values.
    """

    nodes: ChebyshevNodeSet
    Q: np.ndarray
    t0: float

    @property
    def h(self) -> float:
        return self.nodes.h

    @property
    def t1(self) -> float:
        return self.t0 + self.nodes.h

    def _local(self, t):
        # t0 + h - t0 need not round back to h; snap the right end exactly
        t = np.asarray(t, dtype=float)
        return np.where(t == self.t1, self.nodes.h, t - self.t0), t.ndim == 0

    def eval(self, t):
        """Position at absolute time(s) ``t``; shape (D,) or (len(t), D)."""
        s, scalar = self._local(t)
        out = _combine(basis_eval(self.nodes, np.atleast_1d(s)), self.Q)
        return out[0] if scalar else out

    def eval_deriv(self, t):
        s, scalar = self._local(t)
        out = _combine(basis_deriv(self.nodes, np.atleast_1d(s)), self.Q)
        return out[0] if scalar else out

    def sample_times(self, count: int) -> np.ndarray:
        """Chebyshev-distributed absolute times, endpoints included."""
        return self.t0 + chebyshev_points(count, self.h).nodes


@dataclass
class Trajectory:
    """Phase states at step boundaries plus the Galerkin curve of each step."""

    states: list
    curves: list[GalerkinCurve]
    h: float
    meta: list[dict] = field(default_factory=list)

    @property
    def steps(self) -> int:
        return len(self.curves)

    def times(self) -> np.ndarray:
        return np.array([s.t for s in self.states])

    def positions(self) -> np.ndarray:
        return np.array([s.q for s in self.states])

    def momenta(self) -> np.ndarray:
        return np.array([s.p for s in self.states])

    def curve_at(self, t: float) -> GalerkinCurve:
        k = int(np.clip(np.floor((t - self.states[0].t) / self.h), 0, self.steps - 1))
        return self.curves[k]

    def eval(self, t: float) -> np.ndarray:
        return self.curve_at(t).eval(t)

    def dense(self, samples_per_step: int = 64):
        """Stacked ``(step_index, t, q, qdot)`` over all curves."""
        idx, ts, qs, vs = [], [], [], []
        for k, c in enumerate(self.curves):
            t = c.sample_times(samples_per_step)
            idx.append(np.full(t.size, k))
            ts.append(t)
            qs.append(c.eval(t))
            vs.append(c.eval_deriv(t))
        return np.concatenate(idx), np.concatenate(ts), np.vstack(qs), np.vstack(vs)


def sup_error(
    traj: Trajectory,
    reference: Callable[[float], np.ndarray],
    samples_per_step: int = 64,
) -> tuple[float, float]:
    """Max-norm error against ``reference(t) -> q``.

    Returns ``(curve_error, endpoint_error)``: the sampled L-infinity error
    along the Galerkin curves and the l-infinity error over step endpoints.
    """
    if samples_per_step < 2:
        raise ValueError("need at least two samples per step")
    curve_err = 0.0
    for c in traj.curves:
        t = c.sample_times(samples_per_step)
        ref = np.array([np.atleast_1d(reference(s)) for s in t])
        curve_err = max(curve_err, float(np.max(np.abs(c.eval(t) - ref))))
    end_err = max(
        float(np.max(np.abs(s.q - np.atleast_1d(reference(s.t))))) for s in traj.states
    )
    return curve_err, end_err


def sobolev_error(
    curve: GalerkinCurve,
    reference_q: Callable[[float], np.ndarray],
    reference_qdot: Callable[[float], np.ndarray],
    quad: QuadratureRule,
) -> float:
    """W^{1,1} distance ``int |q - ref| + int |q' - ref'|`` over the step."""
    t = curve.t0 + quad.c * curve.h
    dq = curve.eval(t) - np.array([np.atleast_1d(reference_q(s)) for s in t])
    dv = curve.eval_deriv(t) - np.array([np.atleast_1d(reference_qdot(s)) for s in t])
    integrand = np.linalg.norm(dq, axis=1) + np.linalg.norm(dv, axis=1)
    return float(curve.h * quad.b @ integrand)
