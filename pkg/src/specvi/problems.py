"""Benchmark systems with reference solutions.

* harmonic oscillator ``L = 1/2 qdot^2 - 1/2 q^2``
* free particle and constant-force particle (exactly representable)
* planar Kepler problem in reduced one-body form with ``mu = 1``
* gravitational N-body systems, optionally read from an ephemeris CSV
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from specvi.stepper import PhaseState
from specvi.system import CanonicalLagrangian, NoetherGenerator, PotentialDomainError, rotation, translation

# Gaussian gravitational constant squared: AU^3 / (solar mass day^2)
GAUSS_G = 0.01720209895**2
MIN_SEPARATION = 1e-12
INNER_BODIES = ("Sun", "Mercury", "Venus", "Earth", "Mars")


class OracleError(RuntimeError):
    pass


class EphemerisError(ValueError):
    pass


@dataclass
class Problem:
    name: str
    system: CanonicalLagrangian
    init: PhaseState
    reference: Optional[Callable[[float], tuple[np.ndarray, np.ndarray]]] = None
    generators: list[NoetherGenerator] = field(default_factory=list)
    params: dict = field(default_factory=dict)

    def reference_q(self, t: float) -> np.ndarray:
        return self.reference(t)[0]

    def reference_qdot(self, t: float) -> np.ndarray:
        return self.reference(t)[1]


# ---- simple mechanical systems ---------------------------------------------


def harmonic_oscillator(q0: float = 1.0, p0: float = 0.0) -> Problem:
    sys = CanonicalLagrangian(
        M=np.eye(1),
        V=lambda q: 0.5 * float(q @ q),
        grad_V=lambda q: np.array(q, dtype=float),
        hess_V=lambda q: np.eye(1),
    )

    def reference(t):
        c, s = math.cos(t), math.sin(t)
        return np.array([q0 * c + p0 * s]), np.array([-q0 * s + p0 * c])

    return Problem("harmonic", sys, PhaseState([q0], [p0]), reference, [], {"q0": q0, "p0": p0})


def free_particle(q0=0.0, p0=1.0, mass: float = 1.0) -> Problem:
    q0 = np.atleast_1d(np.asarray(q0, dtype=float))
    p0 = np.atleast_1d(np.asarray(p0, dtype=float))
    D = q0.size
    sys = CanonicalLagrangian(
        M=mass * np.eye(D),
        V=lambda q: 0.0,
        grad_V=lambda q: np.zeros(D),
        hess_V=lambda q: np.zeros((D, D)),
    )
    v0 = p0 / mass

    def reference(t):
        return q0 + t * v0, v0.copy()

    gens = [translation(D, a) for a in range(D)]
    return Problem("free", sys, PhaseState(q0, p0), reference, gens,
                   {"q0": q0.tolist(), "p0": p0.tolist(), "mass": mass})


def constant_force(g: float = 1.0, q0: float = 0.0, p0: float = 0.0) -> Problem:
    """``V = -g q``: uniformly accelerated particle, a quadratic in time."""
    sys = CanonicalLagrangian(
        M=np.eye(1),
        V=lambda q: -g * float(q[0]),
        grad_V=lambda q: np.array([-g]),
        hess_V=lambda q: np.zeros((1, 1)),
    )

    def reference(t):
        return np.array([q0 + p0 * t + 0.5 * g * t * t]), np.array([p0 + g * t])

    return Problem("constant-force", sys, PhaseState([q0], [p0]), reference, [], {"g": g, "q0": q0, "p0": p0})


# ---- Kepler ------------------------------------------------------------------


def kepler_potential(mu: float = 1.0) -> CanonicalLagrangian:
    def r_of(q):
        r = math.sqrt(float(q @ q))
        if r < MIN_SEPARATION:
            raise PotentialDomainError(f"Kepler potential evaluated at r={r:.3e}")
        return r

    def V(q):
        return -mu / r_of(q)

    def grad_V(q):
        r = r_of(q)
        return mu * np.asarray(q, dtype=float) / r**3

    def hess_V(q):
        r = r_of(q)
        q = np.asarray(q, dtype=float)
        return mu * (np.eye(q.size) / r**3 - 3.0 * np.outer(q, q) / r**5)

    return CanonicalLagrangian(M=np.eye(2), V=V, grad_V=grad_V, hess_V=hess_V)


def solve_kepler(mean_anomaly: float, e: float, tol: float = 1e-14, maxiter: int = 50) -> float:
    """Eccentric anomaly ``E`` with ``E - e sin E = M`` by Newton iteration."""
    M = math.remainder(mean_anomaly, 2.0 * math.pi)
    E = M + e * math.sin(M) if e < 0.8 else math.copysign(math.pi, M) if M else 0.0
    for _ in range(maxiter):
        f = E - e * math.sin(E) - M
        dE = f / (1.0 - e * math.cos(E))
        E -= dE
        if abs(dE) <= tol:
            return E + (mean_anomaly - M)
    raise OracleError(f"Kepler equation did not converge for M={mean_anomaly}, e={e}")


class KeplerOrbit:
    """Closed-form planar two-body motion for a bound initial state."""

    def __init__(self, q0, v0, mu: float = 1.0):
        q0 = np.asarray(q0, dtype=float)
        v0 = np.asarray(v0, dtype=float)
        self.mu = mu
        r = float(np.linalg.norm(q0))
        v2 = float(v0 @ v0)
        self.energy = 0.5 * v2 - mu / r
        if self.energy >= 0:
            raise OracleError("orbit is not bound")
        self.angular_momentum = float(q0[0] * v0[1] - q0[1] * v0[0])
        self.a = -mu / (2.0 * self.energy)
        evec = ((v2 - mu / r) * q0 - float(q0 @ v0) * v0) / mu
        self.e = float(np.linalg.norm(evec))
        self.b = self.a * math.sqrt(1.0 - self.e**2)
        self.omega = math.atan2(evec[1], evec[0]) if self.e > 1e-14 else 0.0
        self.sense = 1.0 if self.angular_momentum >= 0 else -1.0
        self.mean_motion = math.sqrt(mu / self.a**3)
        self.period = 2.0 * math.pi / self.mean_motion
        c, s = math.cos(self.omega), math.sin(self.omega)
        self._rot = np.array([[c, -s], [s, c]])
        xp, yp = self._rot.T @ q0
        E0 = math.atan2(self.sense * yp / self.b, xp / self.a + self.e)
        self.mean_anomaly0 = E0 - self.e * math.sin(E0)

    def state(self, t: float) -> tuple[np.ndarray, np.ndarray]:
        E = solve_kepler(self.mean_anomaly0 + self.mean_motion * t, self.e)
        cE, sE = math.cos(E), math.sin(E)
        a, b, e, n = self.a, self.b, self.e, self.mean_motion
        denom = 1.0 - e * cE
        qp = np.array([a * (cE - e), self.sense * b * sE])
        vp = np.array([-a * n * sE / denom, self.sense * b * n * cE / denom])
        return self._rot @ qp, self._rot @ vp


KEPLER_Q0 = (0.4, 0.0)
KEPLER_V0 = (0.0, 2.0)
_DEFAULT_ORBIT = KeplerOrbit(KEPLER_Q0, KEPLER_V0, 1.0)


def kepler_reference(t: float) -> tuple[np.ndarray, np.ndarray]:
    """Exact state ``(q, qdot)`` of the default eccentricity-0.6 orbit."""
    return _DEFAULT_ORBIT.state(t)


def kepler_two_body(q0=KEPLER_Q0, v0=KEPLER_V0, mu: float = 1.0) -> Problem:
    """Relative motion of two unit masses, in reduced form with ``mu = 1``.

    The default initial data give a = 1, e = 0.6 and period ``2 pi``.
    """
    orbit = KeplerOrbit(q0, v0, mu)
    return Problem(
        "kepler",
        kepler_potential(mu),
        PhaseState(q0, v0),
        orbit.state,
        [rotation(1, 2)],
        {"q0": list(q0), "v0": list(v0), "mu": mu, "eccentricity": orbit.e, "semi_major_axis": orbit.a},
    )


# ---- N-body ------------------------------------------------------------------


@dataclass(frozen=True)
class NBodyConfig:
    masses: np.ndarray
    positions: np.ndarray
    velocities: np.ndarray
    G: float = 1.0
    names: tuple = ()

    def __post_init__(self):
        m = np.asarray(self.masses, dtype=float)
        x = np.atleast_2d(np.asarray(self.positions, dtype=float))
        v = np.atleast_2d(np.asarray(self.velocities, dtype=float))
        if m.ndim != 1 or m.size < 2:
            raise ValueError("need at least two bodies")
        if np.any(m <= 0):
            raise ValueError("masses must be positive")
        if x.shape != (m.size, x.shape[1]) or v.shape != x.shape or x.shape[1] not in (2, 3):
            raise ValueError("positions/velocities must be N x D with D in {2, 3}")
        d = x[:, None, :] - x[None, :, :]
        r = np.sqrt((d**2).sum(-1)) + np.eye(m.size)
        if r.min() < MIN_SEPARATION:
            raise ValueError("coincident initial positions")
        names = tuple(self.names) or tuple(f"body{i}" for i in range(m.size))
        for k, val in (("masses", m), ("positions", x), ("velocities", v), ("names", names)):
            object.__setattr__(self, k, val)

    @property
    def N(self) -> int:
        return self.masses.size

    @property
    def D(self) -> int:
        return self.positions.shape[1]


def nbody_system(cfg: NBodyConfig) -> CanonicalLagrangian:
    """``L = 1/2 sum m_i |qdot_i|^2 + G sum_{i<j} m_i m_j / |q_i - q_j|``."""
    N, D, G = cfg.N, cfg.D, cfg.G
    m = cfg.masses
    mm = G * np.outer(m, m)
    iu = np.triu_indices(N, 1)

    def seps(q):
        x = np.asarray(q, dtype=float).reshape(N, D)
        d = x[:, None, :] - x[None, :, :]
        r2 = (d**2).sum(-1)
        np.fill_diagonal(r2, 1.0)
        r = np.sqrt(r2)
        if r[iu].min() < MIN_SEPARATION:
            raise PotentialDomainError("bodies collided")
        return d, r

    def V(q):
        _, r = seps(q)
        return -float((mm / r)[iu].sum())

    def grad_V(q):
        d, r = seps(q)
        w = mm / r**3
        np.fill_diagonal(w, 0.0)
        return np.einsum("ij,ijk->ik", w, d).ravel()

    def hess_V(q):
        d, r = seps(q)
        w3 = mm / r**3
        w5 = 3.0 * mm / r**5
        np.fill_diagonal(w3, 0.0)
        np.fill_diagonal(w5, 0.0)
        # off-diagonal blocks: -(I w3 - w5 d d^T)
        B = w3[:, :, None, None] * np.eye(D) - w5[:, :, None, None] * d[:, :, :, None] * d[:, :, None, :]
        H = -B
        diag = B.sum(axis=1)
        H[np.arange(N), np.arange(N)] = diag
        return H.transpose(0, 2, 1, 3).reshape(N * D, N * D)

    M = np.kron(np.diag(m), np.eye(D))
    return CanonicalLagrangian(M=M, V=V, grad_V=grad_V, hess_V=hess_V)


def nbody_problem(cfg: NBodyConfig, name: str = "nbody") -> Problem:
    sys = nbody_system(cfg)
    q0 = cfg.positions.ravel()
    p0 = (cfg.masses[:, None] * cfg.velocities).ravel()
    planes = [(0, 1)] if cfg.D == 2 else [(1, 2), (2, 0), (0, 1)]
    gens = [rotation(cfg.N, cfg.D, pl) for pl in planes]
    params = {"names": list(cfg.names), "G": cfg.G, "masses": cfg.masses.tolist()}
    return Problem(name, sys, PhaseState(q0, p0), None, gens, params)


@dataclass(frozen=True)
class EphemerisRecord:
    name: str
    mass: float
    position: np.ndarray
    velocity: np.ndarray

    def __post_init__(self):
        pos = np.asarray(self.position, dtype=float)
        vel = np.asarray(self.velocity, dtype=float)
        if pos.shape != (3,) or vel.shape != (3,):
            raise EphemerisError(f"{self.name}: position and velocity must be 3-vectors")
        if not (np.all(np.isfinite(pos)) and np.all(np.isfinite(vel)) and math.isfinite(self.mass)):
            raise EphemerisError(f"{self.name}: non-finite entry")
        if not self.mass > 0:
            raise EphemerisError(f"{self.name}: mass must be positive")
        object.__setattr__(self, "position", pos)
        object.__setattr__(self, "velocity", vel)


EPHEMERIS_COLUMNS = ["name", "mass", "x", "y", "z", "vx", "vy", "vz"]


def read_ephemeris(path) -> list[EphemerisRecord]:
    """Parse ``name,mass,x,y,z,vx,vy,vz`` rows (solar masses, AU, AU/day).

    Lines starting with ``#`` are comments.
    """
    with open(path, newline="") as fh:
        rows = [ln for ln in fh if ln.strip() and not ln.lstrip().startswith("#")]
    reader = csv.reader(rows)
    try:
        header = [h.strip() for h in next(reader)]
    except StopIteration:
        raise EphemerisError("empty ephemeris file") from None
    if header != EPHEMERIS_COLUMNS:
        raise EphemerisError(f"expected columns {EPHEMERIS_COLUMNS}, got {header}")
    records = []
    for lineno, row in enumerate(reader, start=2):
        if len(row) != len(EPHEMERIS_COLUMNS):
            raise EphemerisError(f"row {lineno}: expected {len(EPHEMERIS_COLUMNS)} fields, got {len(row)}")
        try:
            vals = [float(x) for x in row[1:]]
        except ValueError as exc:
            raise EphemerisError(f"row {lineno}: {exc}") from None
        if not all(math.isfinite(v) for v in vals):
            raise EphemerisError(f"row {lineno}: non-finite value")
        records.append(EphemerisRecord(row[0].strip(), vals[0], vals[1:4], vals[4:7]))
    return records


def default_ephemeris_path() -> Path:
    return Path(str(resources.files("specvi") / "data" / "solar_system_j2000.csv"))


def nbody_from_ephemeris(
    records: Sequence[EphemerisRecord],
    G: float = GAUSS_G,
    aggregate: Optional[Sequence[str]] = None,
    aggregate_name: str = "inner",
) -> NBodyConfig:
    """Build a 3-D N-body configuration, optionally lumping ``aggregate``
    bodies into one point mass at their barycenter with their mean velocity."""
    if len(records) < 2:
        raise EphemerisError("need at least two bodies")
    names = [r.name for r in records]
    if len(set(names)) != len(names):
        raise EphemerisError("duplicate body names")
    recs = list(records)
    if aggregate:
        missing = set(aggregate) - set(names)
        if missing:
            raise EphemerisError(f"cannot aggregate unknown bodies {sorted(missing)}")
        group = [r for r in recs if r.name in aggregate]
        rest = [r for r in recs if r.name not in aggregate]
        mass = sum(r.mass for r in group)
        pos = sum(r.mass * r.position for r in group) / mass
        vel = sum(r.mass * r.velocity for r in group) / mass
        recs = [EphemerisRecord(aggregate_name, mass, pos, vel)] + rest
        if len(recs) < 2:
            raise EphemerisError("aggregation leaves fewer than two bodies")
    return NBodyConfig(
        masses=np.array([r.mass for r in recs]),
        positions=np.array([r.position for r in recs]),
        velocities=np.array([r.velocity for r in recs]),
        G=G,
        names=tuple(r.name for r in recs),
    )


def solar_system(kind: str = "inner", path=None) -> Problem:
    """Sun, eight planets and Pluto (``inner``), or the outer planets and Pluto
    around a point mass standing for the Sun and inner planets (``outer``)."""
    records = read_ephemeris(path or default_ephemeris_path())
    if kind == "inner":
        cfg = nbody_from_ephemeris(records)
    elif kind == "outer":
        cfg = nbody_from_ephemeris(records, aggregate=INNER_BODIES, aggregate_name="Sun+inner")
    else:
        raise ValueError(f"unknown solar-system configuration {kind!r}")
    return nbody_problem(cfg, name=f"solar-{kind}")


# ---- registry ----------------------------------------------------------------

PROBLEMS = ("harmonic", "free-particle", "constant-force", "kepler", "nbody", "solar-inner", "solar-outer")


def build_problem(name: str, params: Optional[dict] = None, ephemeris=None) -> Problem:
    """Construct a named problem from JSON-style parameters.

    Raises ``ValueError``/``TypeError`` on unknown names or bad parameters;
    an unreadable ephemeris surfaces as ``OSError``.
    """
    params = dict(params or {})
    if name == "harmonic":
        return harmonic_oscillator(**params)
    if name == "free-particle":
        return free_particle(**params)
    if name == "constant-force":
        return constant_force(**params)
    if name == "kepler":
        kw = {k: (np.asarray(v, dtype=float) if k in ("q0", "v0") else v) for k, v in params.items()}
        return kepler_two_body(**kw)
    if name == "nbody":
        return nbody_problem(NBodyConfig(**params))
    if name in ("solar-inner", "solar-outer"):
        if params:
            raise TypeError(f"{name} takes no parameters (got {sorted(params)})")
        return solar_system(name.split("-", 1)[1], ephemeris)
    raise ValueError(f"unknown problem {name!r}; pick one of {PROBLEMS}")
