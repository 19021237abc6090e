"""Lagrangian systems, the mechanical (kinetic minus potential) special case,
and infinitesimal symmetry generators for Noether diagnostics."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

Vector = np.ndarray


class PotentialDomainError(ArithmeticError):
    """Raised when a potential is evaluated at a singular configuration."""


@dataclass(frozen=True)
class LagrangianSystem:
    """A Lagrangian ``L(q, qdot)`` with its partial gradients.

    ``velocity`` inverts the Legendre map ``p -> qdot`` when it is known in
    closed form; it is only needed to turn an initial momentum into an
    initial velocity for energy diagnostics.
    """

    dim: int
    eval_L: Callable[[Vector, Vector], float]
    grad_q: Callable[[Vector, Vector], Vector]
    grad_qdot: Callable[[Vector, Vector], Vector]
    velocity: Optional[Callable[[Vector, Vector], Vector]] = None
    canonical: Optional["CanonicalLagrangian"] = None

    def to_velocity(self, q: Vector, p: Vector) -> Vector:
        if self.velocity is not None:
            return self.velocity(q, p)
        return _invert_legendre(self, q, p)


def _invert_legendre(sys: LagrangianSystem, q, p, tol=1e-13, maxiter=50):
    # Newton on grad_qdot(q, v) = p with a finite-difference Jacobian
    v = np.zeros(sys.dim)
    for _ in range(maxiter):
        r = sys.grad_qdot(q, v) - p
        if np.max(np.abs(r)) <= tol * max(1.0, np.max(np.abs(p))):
            return v
        jac = np.empty((sys.dim, sys.dim))
        eps = 1e-7 * max(1.0, np.max(np.abs(v)))
        for a in range(sys.dim):
            dv = np.zeros(sys.dim)
            dv[a] = eps
            jac[:, a] = (sys.grad_qdot(q, v + dv) - sys.grad_qdot(q, v - dv)) / (2 * eps)
        v = v - np.linalg.solve(jac, r)
    return v


@dataclass(frozen=True)
class CanonicalLagrangian:
    """``L = 1/2 qdot^T M qdot - V(q)`` with SPD mass matrix ``M``.

    ``hess_V`` is optional; the Newton solver falls back to finite
    differences of ``grad_V`` when it is absent.
    """

    M: np.ndarray
    V: Callable[[Vector], float]
    grad_V: Callable[[Vector], Vector]
    hess_V: Optional[Callable[[Vector], np.ndarray]] = None

    def __post_init__(self):
        M = np.atleast_2d(np.asarray(self.M, dtype=float))
        if M.shape[0] != M.shape[1]:
            raise ValueError(f"mass matrix must be square, got shape {M.shape}")
        if not np.allclose(M, M.T, rtol=0.0, atol=1e-14 * max(1.0, np.abs(M).max())):
            raise ValueError("mass matrix is not symmetric")
        try:
            np.linalg.cholesky(M)
        except np.linalg.LinAlgError as exc:
            raise ValueError("mass matrix is not positive definite") from exc
        M.setflags(write=False)
        object.__setattr__(self, "M", M)

    @property
    def dim(self) -> int:
        return self.M.shape[0]

    def hessian(self, q: Vector) -> np.ndarray:
        if self.hess_V is not None:
            return np.atleast_2d(self.hess_V(q))
        return fd_jacobian(self.grad_V, q)

    def as_system(self) -> LagrangianSystem:
        return canonical_to_system(self)


def fd_jacobian(fun: Callable[[Vector], Vector], x: Vector, rel_step: float = 1e-6) -> np.ndarray:
    """Central-difference Jacobian of a vector field."""
    x = np.asarray(x, dtype=float)
    f0 = np.atleast_1d(fun(x))
    jac = np.empty((f0.size, x.size))
    for a in range(x.size):
        eps = rel_step * max(1.0, abs(x[a]))
        dx = np.zeros_like(x)
        dx[a] = eps
        jac[:, a] = (np.atleast_1d(fun(x + dx)) - np.atleast_1d(fun(x - dx))) / (2 * eps)
    return jac


def canonical_to_system(c: CanonicalLagrangian) -> LagrangianSystem:
    M = c.M
    Minv = np.linalg.inv(M)
    return LagrangianSystem(
        dim=c.dim,
        eval_L=lambda q, qd: 0.5 * float(qd @ M @ qd) - float(c.V(q)),
        grad_q=lambda q, qd: -np.asarray(c.grad_V(q), dtype=float),
        grad_qdot=lambda q, qd: M @ qd,
        velocity=lambda q, p: Minv @ p,
        canonical=c,
    )


def as_lagrangian(sys) -> LagrangianSystem:
    """Accept either a generic system or a mechanical one."""
    if isinstance(sys, CanonicalLagrangian):
        return canonical_to_system(sys)
    return sys


def continuous_legendre(sys: LagrangianSystem, q, qdot) -> Vector:
    """Canonical momentum ``dL/dqdot``."""
    sys = as_lagrangian(sys)
    return np.asarray(sys.grad_qdot(np.asarray(q, float), np.asarray(qdot, float)), dtype=float)


def energy(sys: LagrangianSystem, q, qdot) -> float:
    sys = as_lagrangian(sys)
    q = np.asarray(q, dtype=float)
    qdot = np.asarray(qdot, dtype=float)
    return float(sys.grad_qdot(q, qdot) @ qdot - sys.eval_L(q, qdot))


@dataclass(frozen=True)
class NoetherGenerator:
    """Infinitesimal generator ``a(q)`` of a one-parameter symmetry group."""

    a: Callable[[Vector], Vector]
    label: str = ""

    def quantity(self, q, p) -> float:
        """Noether quantity ``p^T a(q)``."""
        return float(np.asarray(p, float) @ np.asarray(self.a(np.asarray(q, float)), float))


def translation(dim: int, axis: int = 0) -> NoetherGenerator:
    e = np.zeros(dim)
    e[axis] = 1.0
    return NoetherGenerator(lambda q: e, label=f"translation-{axis}")


def rotation(n_bodies: int, spatial_dim: int, plane: tuple[int, int] = (0, 1)) -> NoetherGenerator:
    """Simultaneous rotation of every body in the ``plane`` of coordinates.

    For the planar one-body case this yields ``q_x p_y - q_y p_x``.
    """
    i, j = plane

    def a(q):
        x = np.asarray(q, dtype=float).reshape(n_bodies, spatial_dim)
        out = np.zeros_like(x)
        out[:, i] = -x[:, j]
        out[:, j] = x[:, i]
        return out.ravel()

    return NoetherGenerator(a, label=f"rotation-{i}{j}")
