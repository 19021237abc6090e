"""Chebyshev nodes and the barycentric Lagrange basis built on them.

An ``n``-point node set holds the extrema of the degree ``n-1`` Chebyshev
polynomial mapped to [0, h], so the first and last basis functions sit on the
step endpoints and the interpolation space is polynomials of degree ``n-1``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from specvi.quadrature import QuadratureRule


@dataclass(frozen=True)
class ChebyshevNodeSet:
    n: int
    h: float
    nodes: np.ndarray
    # second-kind barycentric weights for Chebyshev extrema
    bary_w: np.ndarray = field(repr=False)


def _angles(n: int) -> np.ndarray:
    i = np.arange(n - 1, -1, -1)
    return np.pi * (n - 1 - 2 * i) / (2 * (n - 1))


def chebyshev_points(n: int, h: float) -> ChebyshevNodeSet:
    """Chebyshev extrema ``h/2 cos(i pi/(n-1)) + h/2`` sorted ascending."""
    if n < 2:
        raise ValueError(f"need at least two nodes, got n={n}")
    if not h > 0:
        raise ValueError(f"step length must be positive, got h={h}")
    # sin form is symmetric about the midpoint and exact at the ends
    x = np.sin(_angles(n))
    nodes = 0.5 * h * (x + 1.0)
    nodes[0] = 0.0
    nodes[-1] = h
    w = np.where(np.arange(n) % 2 == 0, 1.0, -1.0)
    w[0] *= 0.5
    w[-1] *= 0.5
    nodes.setflags(write=False)
    w.setflags(write=False)
    return ChebyshevNodeSet(n=n, h=float(h), nodes=nodes, bary_w=w)


def _eval_many(ns: ChebyshevNodeSet, t: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Basis values and derivatives at every entry of ``t``; shape (len(t), n).

    Derivatives are the derivative polynomial, sampled at the nodes through
    the differentiation matrix and re-interpolated with the value formula;
    differentiating the barycentric quotient directly loses all accuracy when
    ``t`` is within round-off of a node.
    """
    x, w = ns.nodes, ns.bary_w
    t = np.atleast_1d(np.asarray(t, dtype=float))
    diff = t[:, None] - x[None, :]
    # closer than this and w / diff would overflow; the delta is exact there
    hit = np.abs(diff) < 1e-280
    on_node = hit.any(axis=1)

    phi = np.empty((t.size, ns.n))
    inside = (t >= 0.0) & (t <= ns.h)
    off = ~on_node & inside
    if off.any():
        r = w / diff[off]
        phi[off] = r / r.sum(axis=1, keepdims=True)
    out = ~on_node & ~inside
    if out.any():
        # the second-kind quotient cancels catastrophically away from the
        # interval; use the first-kind form on the unit interval there
        xs = x / ns.h
        d = diff[out] / ns.h
        dx = xs[:, None] - xs[None, :]
        np.fill_diagonal(dx, 1.0)
        lam = 1.0 / np.prod(dx, axis=1)
        phi[out] = np.prod(d, axis=1, keepdims=True) * lam / d
    if on_node.any():
        phi[on_node] = np.eye(ns.n)[np.argmax(hit[on_node], axis=1)]
    # einsum sums row by row, so results do not depend on the batch size
    return phi, np.einsum("kn,nj->kj", phi, differentiation_matrix(ns))


def differentiation_matrix(ns: ChebyshevNodeSet) -> np.ndarray:
    """``D[k, i] = phi_i'(nodes[k])``, diagonal by the negative-sum trick."""
    w = ns.bary_w
    # node differences from the angles avoid cancellation between close nodes
    th = _angles(ns.n)
    dx = ns.h * np.cos(0.5 * (th[:, None] + th[None, :])) * np.sin(0.5 * (th[:, None] - th[None, :]))
    np.fill_diagonal(dx, 1.0)
    dm = (w[None, :] / w[:, None]) / dx
    np.fill_diagonal(dm, 0.0)
    np.fill_diagonal(dm, -dm.sum(axis=1))
    return dm


def basis_eval(ns: ChebyshevNodeSet, t) -> np.ndarray:
    """Values of all ``n`` basis functions at ``t`` (scalar or 1-d array)."""
    phi, _ = _eval_many(ns, t)
    return phi[0] if np.ndim(t) == 0 else phi


def basis_deriv(ns: ChebyshevNodeSet, t) -> np.ndarray:
    """Time derivatives of the basis functions at ``t``."""
    _, dphi = _eval_many(ns, t)
    return dphi[0] if np.ndim(t) == 0 else dphi


@dataclass(frozen=True)
class BasisTable:
    """Basis values tabulated at the quadrature nodes ``c_j h`` and endpoints.

    ``phi[i, j] = phi_i(c_j h)`` and ``dphi[i, j] = phi_i'(c_j h)``.
    """

    nodes: ChebyshevNodeSet
    m: int
    phi: np.ndarray
    dphi: np.ndarray
    phi0: np.ndarray
    phiH: np.ndarray
    dphi0: np.ndarray
    dphiH: np.ndarray

    @property
    def n(self) -> int:
        return self.nodes.n

    @property
    def h(self) -> float:
        return self.nodes.h

    @property
    def bary_w(self) -> np.ndarray:
        return self.nodes.bary_w


def tabulate(ns: ChebyshevNodeSet, quad: QuadratureRule) -> BasisTable:
    phi, dphi = _eval_many(ns, quad.c * ns.h)
    ends, dends = _eval_many(ns, np.array([0.0, ns.h]))
    arrays = [phi.T.copy(), dphi.T.copy(), ends[0], ends[1], dends[0], dends[1]]
    for a in arrays:
        a.setflags(write=False)
    return BasisTable(ns, quad.m, *arrays)
