"""Gauss-Legendre quadrature on the unit interval.

Rules are stored normalized to [0, 1] so that an integral over a step of
length ``h`` is ``h * sum(b_j * f(c_j * h))``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_NEWTON_TOL = 1e-15
_NEWTON_MAXITER = 100


@dataclass(frozen=True)
class QuadratureRule:
    """An ``m``-point rule with nodes ``c`` in (0, 1) and weights ``b``."""

    m: int
    c: np.ndarray
    b: np.ndarray

    @property
    def degree(self) -> int:
        """Highest monomial degree integrated exactly."""
        return 2 * self.m - 1


def _legendre_and_derivative(m: int, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    # three-term recurrence for P_m and P_m'
    p_prev = np.ones_like(x)
    p = x.copy()
    if m == 0:
        return p_prev, np.zeros_like(x)
    for k in range(2, m + 1):
        p_prev, p = p, ((2 * k - 1) * x * p - (k - 1) * p_prev) / k
    dp = m * (x * p - p_prev) / (x * x - 1.0)
    return p, dp


def gauss_legendre(m: int) -> QuadratureRule:
    """Return the ``m``-point Gauss-Legendre rule mapped to [0, 1].

    Roots of P_m are found by Newton iteration started from the
    Chebyshev-like guesses ``cos(pi (k - 1/4) / (m + 1/2))``.
    """
    if not isinstance(m, (int, np.integer)) or m < 1:
        raise ValueError(f"quadrature needs at least one point, got m={m!r}")
    m = int(m)
    k = np.arange(1, m + 1)
    x = np.cos(np.pi * (k - 0.25) / (m + 0.5))
    for _ in range(_NEWTON_MAXITER):
        p, dp = _legendre_and_derivative(m, x)
        dx = p / dp
        x = x - dx
        if np.max(np.abs(dx)) <= _NEWTON_TOL:
            break
    p, dp = _legendre_and_derivative(m, x)
    w = 2.0 / ((1.0 - x * x) * dp * dp)

    # ascending order, symmetric pairs averaged so c_j + c_{m+1-j} = 1 exactly
    x = x[::-1]
    w = w[::-1]
    x = 0.5 * (x - x[::-1])
    w = 0.5 * (w + w[::-1])
    c = 0.5 * (x + 1.0)
    b = 0.5 * w
    c.setflags(write=False)
    b.setflags(write=False)
    return QuadratureRule(m=m, c=c, b=b)


def integrate(rule: QuadratureRule, samples, h: float) -> float | np.ndarray:
    """``h * sum_j b_j samples[j]``; ``samples`` may carry trailing axes."""
    samples = np.asarray(samples, dtype=float)
    if samples.shape[0] != rule.m:
        raise ValueError(f"expected {rule.m} samples, got {samples.shape[0]}")
    return h * np.tensordot(rule.b, samples, axes=(0, 0))
