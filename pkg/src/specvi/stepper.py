"""One-step map of the spectral variational integrator.

Each step solves for the stage values ``Q[0..n-1]`` of a Galerkin curve

* continuity: ``Q[0] = q_k``
* internal stationarity of the quadrature action for basis functions
  ``2..n-1``
* the left momentum condition ``-dS/dQ[0] = p_k``

and returns ``q_{k+1} = Q[n-1]`` together with ``p_{k+1} = dS/dQ[n-1]``.

For ``L = 1/2 qdot^T M qdot - V(q)`` the system is ``A q = f(q)`` where ``A``
depends only on ``M``, ``h`` and the basis. The momentum row of ``A`` is the
``phi_n`` row; the equivalent right-hand side for it follows from the
identity ``sum_p phi_p = 1`` and reads
``p_k - h sum_j b_j grad V(q(c_j h)) (1 - phi_n(c_j h))``.
"""

from __future__ import annotations

import functools
import logging
import warnings
from dataclasses import dataclass, replace
from typing import Optional, Union

import mpmath
import numpy as np
import scipy.linalg
import scipy.optimize

from specvi.basis import BasisTable, basis_eval, chebyshev_points, tabulate
from specvi.curve import GalerkinCurve, Trajectory
from specvi.quadrature import QuadratureRule, gauss_legendre
from specvi.system import (
    CanonicalLagrangian,
    as_lagrangian,
    LagrangianSystem,
    PotentialDomainError,
)

log = logging.getLogger(__name__)

EPS = np.finfo(float).eps
_TINY = np.finfo(float).tiny

STRATEGIES = ("fixed-point", "newton", "fixed-point-then-newton")


class AssemblyError(RuntimeError):
    """The stage matrix is singular (quadrature too coarse for the basis)."""


class NoConvergence(RuntimeError):
    pass


class StepFailure(RuntimeError):
    pass


class IntegrationError(RuntimeError):
    """A step failed; carries the trajectory computed so far."""

    def __init__(self, message: str, trajectory: Trajectory, index: int):
        super().__init__(message)
        self.trajectory = trajectory
        self.index = index


@dataclass(frozen=True)
class PhaseState:
    q: np.ndarray
    p: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        q = np.atleast_1d(np.asarray(self.q, dtype=float)).copy()
        p = np.atleast_1d(np.asarray(self.p, dtype=float)).copy()
        if q.shape != p.shape:
            raise ValueError(f"q and p shapes differ: {q.shape} vs {p.shape}")
        if not (np.all(np.isfinite(q)) and np.all(np.isfinite(p))):
            raise ValueError("phase state has non-finite entries")
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "t", float(self.t))


@dataclass(frozen=True)
class GalerkinCoefficients:
    Q: np.ndarray

    @property
    def n(self) -> int:
        return self.Q.shape[0]


@dataclass(frozen=True)
class SolverConfig:
    tol: float = 1e-12
    max_iter: int = 200
    strategy: str = "fixed-point-then-newton"

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be at least 1")
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.strategy!r}; pick one of {STRATEGIES}")


@dataclass(frozen=True)
class StepResult:
    next: PhaseState
    coeffs: GalerkinCoefficients
    iterations: int
    residual: float
    method: str = ""
    increment: Optional[tuple] = None  # (q_{k+1} - q_k, p_{k+1} - p_k)


def _stage_matrix(table: BasisTable, quad: QuadratureRule, h: float) -> np.ndarray:
    """``n x n`` scalar pattern of A: row 0 selects Q[0], rows p >= 1 hold
    ``h sum_j b_j phi_i'(c_j h) phi_p'(c_j h)``."""
    dphi = table.dphi
    K = h * (dphi * quad.b) @ dphi.T
    K[0] = 0.0
    K[0, 0] = 1.0
    return K


def _is_gauss(quad: QuadratureRule) -> bool:
    ref = gauss_legendre(quad.m)
    return np.array_equal(quad.c, ref.c) and np.array_equal(quad.b, ref.b)


@functools.lru_cache(maxsize=64)
def _unit_gram(t: tuple, h: float, m: int) -> tuple[np.ndarray, np.ndarray]:
    """``sum_j b_j phi_i'(c_j) phi_p'(c_j)`` on [0, 1] for the Lagrange basis
    on the nodes ``t / h``, with the m-point Gauss rule evaluated in extended
    precision. Returned as a pair ``hi + lo`` of double matrices.

    The nodes are taken as the exact binary values passed in, so the matrix
    annihilates constants and maps the node vector to ``e_last - e_0`` far
    below double round-off.
    """
    n = len(t)
    with mpmath.workprec(160):
        ys = [mpmath.mpf(v) / h for v in t]
        lam = [1 / mpmath.fprod(ys[i] - ys[k] for k in range(n) if k != i) for i in range(n)]
        G = [[mpmath.mpf(0)] * n for _ in range(n)]
        for x0 in np.polynomial.legendre.leggauss(m)[0]:
            x = mpmath.mpf(x0)
            for _ in range(100):
                p, dp = _mp_legendre(m, x)
                dx = p / dp
                x -= dx
                if abs(dx) < mpmath.mpf(2) ** -150:
                    break
            p, dp = _mp_legendre(m, x)
            b = 1 / ((1 - x * x) * dp * dp)
            c = (x + 1) / 2
            d = _mp_basis_deriv(ys, lam, c)
            for i in range(n):
                bi = b * d[i]
                row = G[i]
                for k in range(n):
                    row[k] += bi * d[k]
        hi = np.array([[float(v) for v in row] for row in G])
        lo = np.array([[float(v - mpmath.mpf(a)) for v, a in zip(row, r)] for row, r in zip(G, hi)])
    return hi, lo


def _mp_legendre(m, x):
    p0, p1 = mpmath.mpf(1), x
    for k in range(2, m + 1):
        p0, p1 = p1, ((2 * k - 1) * x * p1 - (k - 1) * p0) / k
    if m == 1:
        return p1, mpmath.mpf(1)
    return p1, m * (x * p1 - p0) / (x * x - 1)


def _mp_basis_deriv(ys, lam, x):
    n = len(ys)
    for k in range(n):
        if x == ys[k]:
            d = [lam[i] / lam[k] / (ys[k] - ys[i]) if i != k else 0 for i in range(n)]
            d[k] = -mpmath.fsum(d)
            return d
    diff = [x - v for v in ys]
    ell = mpmath.fprod(diff)
    S = mpmath.fsum(1 / v for v in diff)
    return [ell * lam[i] / diff[i] * (S - 1 / diff[i]) for i in range(n)]


def _accurate_stage_matrix(table: BasisTable, quad: QuadratureRule, h: float):
    """The stage matrix scaled by h (rows 1.. hold the unit-interval Gram
    matrix) as an unevaluated sum ``hi + lo``."""
    if not _is_gauss(quad):
        K = h * _stage_matrix(table, quad, h)
        K[0, 0] = 1.0
        return K, np.zeros_like(K)
    hi, lo = _unit_gram(tuple(table.nodes.nodes.tolist()), float(h), quad.m)
    hi, lo = hi.copy(), lo.copy()
    hi[0] = 0.0
    hi[0, 0] = 1.0
    lo[0] = 0.0
    return hi, lo


def assemble_A(table: BasisTable, quad: QuadratureRule, M, h: float) -> np.ndarray:
    """Full ``(nD) x (nD)`` stage matrix for stage vectors ordered ``Q.ravel()``.

    Raises AssemblyError if the matrix is numerically singular.
    """
    M = np.atleast_2d(np.asarray(M, dtype=float))
    D = M.shape[0]
    if quad.degree < 2 * table.n + 1:
        log.warning(
            "quadrature exact to degree %d < 2n+1 = %d; stage matrix may be singular",
            quad.degree,
            2 * table.n + 1,
        )
    K = _stage_matrix(table, quad, h)
    A = np.kron(K, M)
    A[:D, :] = 0.0
    A[:D, :D] = np.eye(D)
    _check_invertible(A)
    return A


def _check_invertible(A: np.ndarray) -> None:
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", scipy.linalg.LinAlgWarning)
        lu, piv = scipy.linalg.lu_factor(A, check_finite=False)
    d = np.abs(np.diag(lu))
    if d.min() <= np.finfo(float).eps * A.shape[0] * d.max():
        raise AssemblyError("stage matrix is singular; refine the quadrature rule")


def rhs_f(
    table: BasisTable,
    quad: QuadratureRule,
    sys: CanonicalLagrangian,
    Q: np.ndarray,
    q_k,
    p_prev,
    h: float,
) -> np.ndarray:
    """Right-hand side ``f(q)`` of ``A q = f(q)``, flattened like ``Q.ravel()``."""
    return _rhs_blocks(table, quad, sys.grad_V, Q, q_k, p_prev, h).ravel()


def _rhs_blocks(table, quad, grad_V, Q, q_k, p_prev, h):
    n = table.n
    G = _grad_at_nodes(grad_V, table.phi.T @ Q)
    hb = h * quad.b
    F = (table.phi * hb) @ G
    out = np.empty_like(F)
    out[0] = q_k
    out[1 : n - 1] = F[1 : n - 1]
    out[n - 1] = p_prev - ((1.0 - table.phi[n - 1]) * hb) @ G
    return out


def _grad_at_nodes(grad_V, X):
    G = np.array([np.atleast_1d(grad_V(x)) for x in X], dtype=float)
    if not np.all(np.isfinite(G)):
        raise PotentialDomainError("non-finite potential gradient")
    return G


def contraction_bound(
    table: BasisTable,
    quad: QuadratureRule,
    sys: CanonicalLagrangian,
    lipschitz_V: float,
) -> float:
    """Step length below which the fixed-point map ``Q -> A^{-1} f(Q)``
    contracts in the max norm, given a Lipschitz constant of ``grad V``.

    The basis values at ``c_j h`` do not depend on ``h``, and
    ``||A(h)^{-1}|| <= max(1, h) ||A(1)^{-1}||``; the bound solves
    ``h max(1, h) ||A(1)^{-1}|| L c < 1`` with
    ``c = max_{j,p} ||phi(c_j)||_1 |w_p(c_j)|`` over the weights ``w_p`` that
    multiply ``grad V`` in rows of ``f``.
    """
    if lipschitz_V <= 0:
        return float("inf")
    unit = replace(table, nodes=chebyshev_points(table.n, 1.0))
    unit = tabulate(unit.nodes, quad)
    A1 = assemble_A(unit, quad, sys.M, 1.0)
    a1 = np.linalg.norm(np.linalg.inv(A1), ord=np.inf)
    phi = unit.phi
    n = unit.n
    weights = np.vstack([phi[1 : n - 1], 1.0 - phi[n - 1][None, :]])
    c = float(np.max(np.abs(phi).sum(axis=0)[None, :] * np.abs(weights)))
    B = 1.0 / (a1 * lipschitz_V * c)
    return B if B <= 1.0 else float(np.sqrt(B))


def discrete_legendre_minus(sys, table: BasisTable, quad: QuadratureRule, coeffs, h: float) -> np.ndarray:
    """``-D_1 L_d``: momentum at the left end of the step."""
    return -_boundary_sum(as_lagrangian(sys), table, quad, _Q(coeffs), h, 0)


def discrete_legendre_plus(sys, table: BasisTable, quad: QuadratureRule, coeffs, h: float) -> np.ndarray:
    """``D_2 L_d``: momentum at the right end of the step."""
    return _boundary_sum(as_lagrangian(sys), table, quad, _Q(coeffs), h, table.n - 1)


def _Q(coeffs) -> np.ndarray:
    return coeffs.Q if isinstance(coeffs, GalerkinCoefficients) else np.asarray(coeffs, dtype=float)


def _boundary_sum(sys: LagrangianSystem, table, quad, Q, h, row):
    X = table.phi.T @ Q
    Vd = table.dphi.T @ Q
    gq = np.array([sys.grad_q(x, v) for x, v in zip(X, Vd)])
    gv = np.array([sys.grad_qdot(x, v) for x, v in zip(X, Vd)])
    hb = h * quad.b
    return (hb * table.phi[row]) @ gq + (hb * table.dphi[row]) @ gv


def _maxnorm(r) -> float:
    return float(np.max(np.abs(r)))


class SpectralStepper:
    """Caches the basis table, quadrature and stage-matrix factorization for
    one ``(system, n, m, h)`` combination.

    For mechanical Lagrangians the residual is the stage equation
    ``A q - f(q)`` with every block row except the first multiplied by
    ``M^{-1}``; this leaves the solution unchanged and keeps the tolerance
    meaningful when masses differ by orders of magnitude.
    """

    def __init__(
        self,
        system: Union[LagrangianSystem, CanonicalLagrangian],
        n: int,
        h: float,
        m: Optional[int] = None,
        cfg: Optional[SolverConfig] = None,
        quad: Optional[QuadratureRule] = None,
        table: Optional[BasisTable] = None,
    ):
        if not h > 0:
            raise ValueError(f"step length must be positive, got h={h}")
        self.sys = as_lagrangian(system)
        self.canon = self.sys.canonical
        self.n = int(n)
        self.h = float(h)
        self.quad = quad if quad is not None else gauss_legendre(m if m is not None else 2 * self.n)
        if table is None:
            table = tabulate(chebyshev_points(self.n, self.h), self.quad)
        elif table.n != self.n or not np.isclose(table.h, self.h, rtol=1e-14, atol=0.0):
            raise ValueError("basis table does not match n and h")
        self.table = table
        self.nodes = table.nodes
        self.cfg = cfg or SolverConfig()
        self.D = self.sys.dim
        hb = self.h * self.quad.b
        self._hb = hb
        if self.canon is not None:
            if self.quad.degree < 2 * self.n + 1:
                log.warning("quadrature degree %d below 2n+1 = %d", self.quad.degree, 2 * self.n + 1)
            # the solves use h K as hi + lo; K itself serves the Jacobian
            Kh, self._Kh_lo = _accurate_stage_matrix(table, self.quad, self.h)
            _check_invertible(Kh)
            self._Kh = Kh
            self.K = Kh.copy()
            self.K[1:] /= self.h
            self._absK = np.abs(self.K)
            self.K_lu = scipy.linalg.lu_factor(Kh, check_finite=False)
            self.Minv = np.linalg.inv(self.canon.M)
            # weights that multiply grad V in each row of f
            W = (table.phi * hb).T.copy()
            W[:, 0] = 0.0
            W[:, -1] = -((1.0 - table.phi[-1]) * hb)
            self._W = W  # (m, n)

    # ---- residuals -------------------------------------------------------
    #
    # Internally the unknowns are the stage displacements Z = Q - q_k. The
    # derivative rows of K annihilate constants, so working with Z avoids
    # the cancellation of large positions against small velocities.
    # Linear motion at the initial velocity v solves K (t v) = (0, ..., 0, v)
    # exactly, so the solves only produce the deviation Y = Z - t v from it
    # and force-free motion is reproduced to the last bit. This needs K to
    # satisfy that identity well below double round-off; otherwise the
    # defect acts as a small velocity-dependent force and energy drifts.
    # Hence h K is held as an unevaluated sum of two double matrices.

    def _velocity(self, q, p):
        return self.sys.to_velocity(q, p)

    def residual(self, Q: np.ndarray, q_k: np.ndarray, p_k: np.ndarray) -> np.ndarray:
        """Stage residual as an ``n x D`` array (zero at the solution)."""
        return self._res(np.asarray(Q, dtype=float) - q_k, q_k, p_k)[0]

    def relative_residual(self, Q, q_k, p_k) -> float:
        """``||R||_inf`` divided by ``||f||_inf``, the size of the terms the
        stage equations balance (velocity units for mechanical systems)."""
        R, scale = self._res(np.asarray(Q, dtype=float) - q_k, q_k, p_k)
        return _maxnorm(R) / scale

    def _res(self, Z, q_k, p_k):
        if self.canon is not None:
            g = self._rhs_scaled(Z, q_k, p_k)
            v = self.Minv @ p_k
            scale = max(float(np.max(np.abs(g))), float(np.max(np.abs(v))), _TINY)
            Y = Z - self._linear(v)
            R = self._Kh @ Y + self._Kh_lo @ Y
            R[1:] /= self.h
            return R - g, scale
        return self._generic_residual(Z, q_k, p_k)

    def _linear(self, v):
        return self.nodes.nodes[:, None] * v[None, :]

    def _target(self, Z, scale, p_k) -> float:
        """Convergence threshold: the configured tolerance, or the round-off
        level of evaluating ``K (Z - t v)`` when that is larger."""
        if self.canon is None:
            return self.cfg.tol
        # forming Z - t v rounds at the size of both terms
        L = self._linear(self.Minv @ p_k)
        noise = 4.0 * EPS * float(np.max(self._absK @ (np.abs(Z) + np.abs(L)))) / scale
        return max(self.cfg.tol, noise)

    def _stage_points(self, Z, q_k):
        return q_k[None, :] + self.table.phi.T @ Z

    def _rhs_scaled(self, Z, q_k, p_k):
        G = _grad_at_nodes(self.canon.grad_V, self._stage_points(Z, q_k))
        # right-hand side for Y: the p_k term is carried by the linear part
        out = self._W.T @ G
        out[1:] = out[1:] @ self.Minv
        out[0] = 0.0
        return out

    def _generic_residual(self, Z, q_k, p_k):
        t = self.table
        X = self._stage_points(Z, q_k)
        Vd = t.dphi.T @ Z
        gq = np.array([self.sys.grad_q(x, v) for x, v in zip(X, Vd)])
        gv = np.array([self.sys.grad_qdot(x, v) for x, v in zip(X, Vd)])
        Pq = t.phi * self._hb
        Pv = t.dphi * self._hb
        R = Pq @ gq + Pv @ gv
        out = np.empty_like(R)
        out[0] = Z[0]
        out[1:-1] = R[1:-1]
        out[-1] = R[0] + p_k
        mags = np.abs(Pq) @ np.abs(gq) + np.abs(Pv) @ np.abs(gv)
        scale = max(float(np.max(mags)), float(np.max(np.abs(p_k))), _TINY)
        return out, scale

    def jacobian(self, Q: np.ndarray, q_k, p_k) -> np.ndarray:
        """Derivative of the flattened residual with respect to ``Q``."""
        return self._jac(np.asarray(Q, dtype=float) - q_k, q_k, p_k)

    def _jac(self, Z, q_k, p_k):
        nD = self.n * self.D
        if self.canon is None:
            return self._fd_jacobian(Z, q_k, p_k)
        X = self._stage_points(Z, q_k)
        H = np.array([self.canon.hessian(x) for x in X])  # (m, D, D)
        KH = np.einsum("ac,jcb->jab", self.Minv, H)
        Jf = np.einsum("jp,ij,jab->paib", self._W, self.table.phi, KH).reshape(nD, nD)
        return np.kron(self.K, np.eye(self.D)) - Jf

    def _fd_jacobian(self, Z, q_k, p_k):
        x = Z.ravel()
        nD = x.size
        J = np.empty((nD, nD))
        for a in range(nD):
            eps = 1e-7 * max(1.0, abs(x[a]))
            dx = np.zeros(nD)
            dx[a] = eps
            rp = self._res((x + dx).reshape(Z.shape), q_k, p_k)[0].ravel()
            rm = self._res((x - dx).reshape(Z.shape), q_k, p_k)[0].ravel()
            J[:, a] = (rp - rm) / (2 * eps)
        return J

    def _norm_and_target(self, Z, q_k, p_k):
        try:
            R, scale = self._res(Z, q_k, p_k)
            r = _maxnorm(R) / scale
        except (PotentialDomainError, FloatingPointError, ZeroDivisionError):
            return np.inf, self.cfg.tol
        if not np.isfinite(r):
            return np.inf, self.cfg.tol
        return r, self._target(Z, scale, p_k)

    def _safe_norm(self, Z, q_k, p_k) -> float:
        try:
            R, scale = self._res(Z, q_k, p_k)
            r = _maxnorm(R) / scale
        except (PotentialDomainError, FloatingPointError, ZeroDivisionError):
            return np.inf
        return r if np.isfinite(r) else np.inf

    # ---- solvers ---------------------------------------------------------

    def fixed_point(self, start, q_k, p_k, max_iter=None, raise_on_fail=True):
        """Iterate ``Q <- A^{-1} f(Q)``; returns ``(Q, iterations, residual)``."""
        q_k, p_k = _vec(q_k), _vec(p_k)
        Z, it, r = self._fixed_point(np.asarray(start, dtype=float) - q_k, q_k, p_k, max_iter, raise_on_fail)
        return q_k + Z, it, r

    def _sweep(self, Z, q_k, p_k):
        L = self._linear(self.Minv @ p_k)
        rhs = self.h * self._rhs_scaled(Z, q_k, p_k) - self._Kh_lo @ (Z - L)
        return L + scipy.linalg.lu_solve(self.K_lu, rhs, check_finite=False)

    def _fixed_point(self, Z, q_k, p_k, max_iter=None, raise_on_fail=True):
        if self.canon is None:
            raise TypeError("fixed-point iteration needs a mechanical Lagrangian")
        max_iter = self.cfg.max_iter if max_iter is None else max_iter
        Z = np.array(Z, dtype=float)
        best = (self._safe_norm(Z, q_k, p_k), Z)
        r0 = best[0]
        it = 0
        for it in range(1, max_iter + 1):
            try:
                Z = self._sweep(Z, q_k, p_k)
            except PotentialDomainError:
                break
            r, target = self._norm_and_target(Z, q_k, p_k)
            if r < best[0]:
                best = (r, Z)
            if r <= target:
                Z, r = self._polish(Z, r, q_k, p_k)
                return Z, it, r
            if not np.isfinite(r) or r > 1e6 * max(r0, 1.0):
                break
        if raise_on_fail:
            raise NoConvergence(f"fixed-point iteration did not converge (residual {best[0]:.3e})")
        return best[1], it, best[0]

    def _polish(self, Z, r, q_k, p_k, sweeps: int = 3):
        # a few uncounted sweeps while the residual keeps dropping bring the
        # stages to round-off, which keeps long runs free of solver drift
        for _ in range(sweeps):
            try:
                Zp = self._sweep(Z, q_k, p_k)
                rp = self._safe_norm(Zp, q_k, p_k)
            except PotentialDomainError:
                break
            if not rp < r:
                break
            Z, r = Zp, rp
        return Z, r

    def newton(self, start, q_k, p_k, max_iter=None):
        """Damped Newton on the stage residual; returns ``(Q, iterations, residual)``."""
        q_k, p_k = _vec(q_k), _vec(p_k)
        Z, it, r = self._newton(np.asarray(start, dtype=float) - q_k, q_k, p_k, max_iter)
        return q_k + Z, it, r

    def _newton(self, Z, q_k, p_k, max_iter=None):
        max_iter = self.cfg.max_iter if max_iter is None else max_iter
        Z = np.array(Z, dtype=float)
        try:
            R, scale = self._res(Z, q_k, p_k)
        except PotentialDomainError as exc:
            raise StepFailure(f"initial guess hits a singular configuration: {exc}") from exc
        r = _maxnorm(R) / scale
        target = self._target(Z, scale, p_k)
        stalls = 0
        it = 0
        while r > target:
            if it == max_iter or stalls >= 3:
                raise NoConvergence(f"Newton iteration did not converge (residual {r:.3e})")
            it += 1
            J = self._jac(Z, q_k, p_k)
            try:
                lu = scipy.linalg.lu_factor(J, check_finite=False)
                dZ = -scipy.linalg.lu_solve(lu, R.ravel(), check_finite=False).reshape(Z.shape)
            except (np.linalg.LinAlgError, ValueError) as exc:
                raise StepFailure(f"singular stage Jacobian: {exc}") from exc
            if not np.all(np.isfinite(dZ)):
                raise StepFailure("singular stage Jacobian")
            alpha = 1.0
            while alpha >= 2.0**-12:
                rn = self._safe_norm(Z + alpha * dZ, q_k, p_k)
                if rn < r:
                    break
                alpha *= 0.5
            else:
                # no decrease along the Newton direction; take the full step
                stalls += 1
                alpha = 1.0
            Z = Z + alpha * dZ
            try:
                R, scale = self._res(Z, q_k, p_k)
            except PotentialDomainError as exc:
                raise StepFailure(str(exc)) from exc
            r = _maxnorm(R) / scale
            if not np.isfinite(r):
                raise StepFailure("Newton iterate left the domain of the potential")
            target = self._target(Z, scale, p_k)
        if self.canon is not None:
            Z, r = self._polish(Z, r, q_k, p_k)
        return Z, it, r

    def solve(self, start, q_k, p_k):
        """Solve the stage equations from ``start`` (an ``n x D`` guess for
        ``Q``); returns ``(Q, iterations, residual, method)``."""
        q_k, p_k = _vec(q_k), _vec(p_k)
        Z, it, r, method = self._solve(np.asarray(start, dtype=float) - q_k, q_k, p_k)
        return q_k + Z, it, r, method

    def _solve(self, Z0, q_k, p_k):
        strategy = self.cfg.strategy
        if self.canon is None or strategy == "newton":
            return self._newton_with_fallback(Z0, q_k, p_k, 0)
        if strategy == "fixed-point":
            Z, it, r = self._fixed_point(Z0, q_k, p_k)
            return Z, it, r, "fixed-point"
        budget = max(20, self.cfg.max_iter // 10)
        Z, it, r = self._fixed_point(Z0, q_k, p_k, max_iter=budget, raise_on_fail=False)
        if r <= self._norm_and_target(Z, q_k, p_k)[1]:
            return Z, it, r, "fixed-point"
        starts = [Z0] if not np.isfinite(r) else [Z, Z0]
        return self._newton_with_fallback(starts[0], q_k, p_k, it, starts)

    def _newton_with_fallback(self, Z0, q_k, p_k, spent: int, starts=None):
        try:
            Z, it, r = self._newton(Z0, q_k, p_k)
            return Z, spent + it, r, "newton"
        except (NoConvergence, StepFailure) as exc:
            first = exc
        # the stage equations can have several roots far from the guess;
        # Levenberg-Marquardt is more robust there than damped Newton. A
        # stalled fixed-point iterate can be a worse start than the guess.
        for start in starts or [Z0]:
            try:
                Z, it, r = self._levenberg_marquardt(start, q_k, p_k)
            except (NoConvergence, StepFailure):
                continue
            return Z, spent + it, r, "levenberg-marquardt"
        raise first from None

    def _levenberg_marquardt(self, Z0, q_k, p_k):
        shape = Z0.shape

        def fun(x):
            return self._res(x.reshape(shape), q_k, p_k)[0].ravel()

        def jac(x):
            return self._jac(x.reshape(shape), q_k, p_k)

        try:
            sol = scipy.optimize.root(fun, Z0.ravel(), jac=jac, method="lm",
                                      options={"maxiter": 100 * self.cfg.max_iter})
        except (PotentialDomainError, FloatingPointError, ValueError) as exc:
            raise StepFailure(str(exc)) from exc
        Z = sol.x.reshape(shape)
        r, target = self._norm_and_target(Z, q_k, p_k)
        if not r <= target:
            raise NoConvergence(f"Levenberg-Marquardt did not converge (residual {r:.3e})")
        if self.canon is not None:
            Z, r = self._polish(Z, r, q_k, p_k)
        return Z, int(sol.nfev), r

    # ---- stepping --------------------------------------------------------

    def linear_guess(self, q_k, p_k) -> np.ndarray:
        v = self._velocity(q_k, p_k)
        return q_k[None, :] + self.nodes.nodes[:, None] * v[None, :]

    def extrapolated_guess(self, prev: GalerkinCurve, q_k) -> np.ndarray:
        with np.errstate(all="ignore"):
            Q = basis_eval(prev.nodes, self.h + self.nodes.nodes) @ prev.Q
        Q[0] = q_k
        return Q

    def initial_guess(self, state: PhaseState, prev: Optional[GalerkinCurve] = None) -> np.ndarray:
        """Linear motion at the initial velocity, or the previous curve
        continued into this step, whichever has the smaller residual."""
        q, p = state.q, state.p
        lin = self.linear_guess(q, p)
        if prev is None:
            return lin
        ext = self.extrapolated_guess(prev, q)
        if self._safe_norm(ext - q, q, p) < self._safe_norm(lin - q, q, p):
            return ext
        return lin

    def step(self, state: PhaseState, prev: Optional[GalerkinCurve] = None, start=None) -> StepResult:
        q_k, p_k = state.q, state.p
        if start is None:
            start = self.initial_guess(state, prev)
        try:
            Z, it, r, method = self._solve(np.asarray(start, dtype=float) - q_k, q_k, p_k)
            Z = np.array(Z)
            Z[0] = 0.0
            dp = self._momentum_increment(Z, q_k)
        except PotentialDomainError as exc:
            raise StepFailure(str(exc)) from exc
        Q = q_k[None, :] + Z
        Q[0] = q_k
        p_next = _boundary_sum(self.sys, self.table, self.quad, Q, self.h, self.n - 1)
        nxt = PhaseState(q=Q[-1].copy(), p=p_next, t=state.t + self.h)
        return StepResult(
            next=nxt,
            coeffs=GalerkinCoefficients(Q),
            iterations=it,
            residual=r,
            method=method,
            increment=(Z[-1].copy(), dp),
        )

    def _momentum_increment(self, Z, q_k):
        # summing every stage equation (the basis is a partition of unity)
        # gives p_{k+1} - p_k = h sum_j b_j dL/dq at the quadrature points
        X = self._stage_points(Z, q_k)
        if self.canon is not None:
            return -(self._hb @ _grad_at_nodes(self.canon.grad_V, X))
        Vd = self.table.dphi.T @ Z
        return self._hb @ np.array([self.sys.grad_q(x, v) for x, v in zip(X, Vd)])

    def curve(self, result: StepResult, t0: float) -> GalerkinCurve:
        return GalerkinCurve(self.nodes, result.coeffs.Q, t0)

    def integrate(self, init: PhaseState, steps: int) -> Trajectory:
        """Take ``steps`` steps from ``init``.

        Positions and momenta are accumulated with compensated summation of
        the per-step increments, so round-off does not build up a drift over
        long runs. They agree with ``step`` to round-off.
        """
        if steps < 1:
            raise ValueError("steps must be at least 1")
        traj = Trajectory(states=[init], curves=[], h=self.h, meta=[])
        state, prev = init, None
        cq = np.zeros_like(init.q)
        cp = np.zeros_like(init.p)
        for k in range(steps):
            try:
                res = self.step(state, prev)
            except (NoConvergence, StepFailure) as exc:
                raise IntegrationError(f"step {k} failed: {exc}", traj, k) from exc
            dq, dp = res.increment
            q, cq = _kahan(state.q, dq, cq)
            p, cp = _kahan(state.p, dp, cp)
            nxt = PhaseState(q=q, p=p, t=init.t + (k + 1) * self.h)
            Q = res.coeffs.Q.copy()
            Q[-1] = q  # the shared stage value keeps curves continuous
            prev = GalerkinCurve(self.nodes, Q, state.t)
            traj.curves.append(prev)
            traj.states.append(nxt)
            traj.meta.append({"iterations": res.iterations, "residual": res.residual, "method": res.method})
            state = nxt
        return traj


def _kahan(x, dx, c):
    y = dx + c
    s = x + y
    return s, (x - s) + y


def _vec(x) -> np.ndarray:
    return np.atleast_1d(np.asarray(x, dtype=float))


def fixed_point_solve(stepper: SpectralStepper, start, q_k, p_k, cfg: Optional[SolverConfig] = None):
    """Fixed-point solve of the stage equations; see ``SpectralStepper.fixed_point``."""
    if cfg is not None:
        stepper = _with_cfg(stepper, cfg)
    Q, _, _ = stepper.fixed_point(start, np.atleast_1d(q_k), np.atleast_1d(p_k))
    return GalerkinCoefficients(Q)


def newton_solve(stepper: SpectralStepper, start, q_k, p_k, cfg: Optional[SolverConfig] = None):
    if cfg is not None:
        stepper = _with_cfg(stepper, cfg)
    Q, _, _ = stepper.newton(start, np.atleast_1d(q_k), np.atleast_1d(p_k))
    return GalerkinCoefficients(Q)


def _with_cfg(stepper: SpectralStepper, cfg: SolverConfig) -> SpectralStepper:
    s = object.__new__(SpectralStepper)
    s.__dict__.update(stepper.__dict__)
    s.cfg = cfg
    return s


def step(sys, table: BasisTable, quad: QuadratureRule, state: PhaseState, h: float, cfg: Optional[SolverConfig] = None) -> StepResult:
    """Advance ``state`` by one step of length ``h``."""
    return SpectralStepper(sys, table.n, h, cfg=cfg, quad=quad, table=table).step(state)


def integrate(sys, table: BasisTable, quad: QuadratureRule, init: PhaseState, h: float, steps: int, cfg: Optional[SolverConfig] = None) -> Trajectory:
    return SpectralStepper(sys, table.n, h, cfg=cfg, quad=quad, table=table).integrate(init, steps)
