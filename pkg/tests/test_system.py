import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from specvi.problems import harmonic_oscillator, kepler_potential, nbody_problem, NBodyConfig
from specvi.system import (
    CanonicalLagrangian,
    LagrangianSystem,
    NoetherGenerator,
    canonical_to_system,
    continuous_legendre,
    energy,
    fd_jacobian,
    rotation,
    translation,
)

HO = CanonicalLagrangian(np.eye(1), lambda q: 0.5 * float(q @ q), lambda q: np.array(q, float))


def _fd_grad(f, x, step=1e-6):
    g = np.empty_like(x)
    for a in range(x.size):
        e = np.zeros_like(x)
        e[a] = step * max(1.0, abs(x[a]))
        g[a] = (f(x + e) - f(x - e)) / (2 * e[a])
    return g


def test_harmonic_lagrangian_values():
    s = canonical_to_system(HO)
    assert s.eval_L(np.array([1.0]), np.array([0.0])) == pytest.approx(-0.5)
    assert s.eval_L(np.array([0.0]), np.array([2.0])) == pytest.approx(2.0)
    np.testing.assert_allclose(s.grad_qdot(np.array([0.0]), np.array([2.0])), [2.0])
    np.testing.assert_allclose(s.grad_q(np.array([3.0]), np.array([0.0])), [-3.0])


def test_kepler_lagrangian_value():
    s = canonical_to_system(kepler_potential(1.0))
    assert s.eval_L(np.array([0.4, 0.0]), np.array([0.0, 2.0])) == pytest.approx(4.5)


def test_continuous_legendre_examples():
    s = canonical_to_system(HO)
    np.testing.assert_allclose(continuous_legendre(s, [1.0], [3.0]), [3.0])
    c = CanonicalLagrangian(np.diag([2.0, 5.0]), lambda q: 0.0, lambda q: np.zeros(2))
    np.testing.assert_allclose(continuous_legendre(c, [0.0, 0.0], [1.0, 1.0]), [2.0, 5.0])
    np.testing.assert_allclose(continuous_legendre(kepler_potential(), [0.4, 0.0], [0.0, 2.0]), [0.0, 2.0])


def test_energy_examples():
    assert energy(HO, [1.0], [0.0]) == pytest.approx(0.5)
    free = CanonicalLagrangian(np.eye(1), lambda q: 0.0, lambda q: np.zeros(1))
    assert energy(free, [0.0], [2.0]) == pytest.approx(2.0)
    assert energy(kepler_potential(), [0.4, 0.0], [0.0, 2.0]) == pytest.approx(-0.5)


def _random_spd(rng, d):
    a = rng.normal(size=(d, d))
    return a @ a.T + d * np.eye(d)


@settings(max_examples=20)
@given(st.integers(0, 2**32 - 1))
def test_gradients_match_finite_differences(seed):
    rng = np.random.default_rng(seed)
    systems = [
        canonical_to_system(kepler_potential(1.3)),
        canonical_to_system(CanonicalLagrangian(_random_spd(rng, 3), lambda q: float(np.sum(np.cos(q))),
                                                lambda q: -np.sin(q))),
    ]
    for s in systems:
        q = rng.uniform(0.5, 2.0, size=s.dim) * rng.choice([-1, 1], size=s.dim)
        v = rng.normal(size=s.dim)
        gq = _fd_grad(lambda x: s.eval_L(x, v), q)
        gv = _fd_grad(lambda x: s.eval_L(q, x), v)
        np.testing.assert_allclose(s.grad_q(q, v), gq, rtol=1e-6, atol=1e-8)
        np.testing.assert_allclose(s.grad_qdot(q, v), gv, rtol=1e-6, atol=1e-8)


@given(st.integers(0, 2**32 - 1))
def test_energy_plus_lagrangian_is_twice_kinetic(seed):
    rng = np.random.default_rng(seed)
    M = _random_spd(rng, 3)
    c = CanonicalLagrangian(M, lambda q: float(q @ q) ** 2, lambda q: 4 * float(q @ q) * q)
    s = c.as_system()
    q, v = rng.normal(size=3), rng.normal(size=3)
    assert energy(s, q, v) + s.eval_L(q, v) == pytest.approx(float(v @ M @ v), rel=1e-12, abs=1e-12)


def test_mass_matrix_validation():
    with pytest.raises(ValueError):
        CanonicalLagrangian(np.array([[1.0, 0.1], [0.0, 1.0]]), lambda q: 0.0, lambda q: q)
    with pytest.raises(ValueError):
        CanonicalLagrangian(np.array([[1.0, 0.0], [0.0, -1.0]]), lambda q: 0.0, lambda q: q)
    with pytest.raises(ValueError):
        CanonicalLagrangian(np.ones((2, 3)), lambda q: 0.0, lambda q: q)


def test_hessian_falls_back_to_finite_differences():
    c = CanonicalLagrangian(np.eye(2), lambda q: 0.0, lambda q: np.array([q[0] ** 2, q[0] * q[1]]))
    np.testing.assert_allclose(c.hessian(np.array([1.0, 2.0])), [[2.0, 0.0], [2.0, 1.0]], atol=1e-8)
    np.testing.assert_allclose(fd_jacobian(np.sin, np.array([0.3])), [[np.cos(0.3)]], atol=1e-9)


def test_generic_system_velocity_inversion():
    # L = sqrt(1 + v^2) style kinetic term has a nonlinear Legendre map
    s = LagrangianSystem(
        dim=1,
        eval_L=lambda q, v: float(np.cosh(v[0])),
        grad_q=lambda q, v: np.zeros(1),
        grad_qdot=lambda q, v: np.array([np.sinh(v[0])]),
    )
    v = s.to_velocity(np.zeros(1), np.array([np.sinh(0.7)]))
    assert v[0] == pytest.approx(0.7, abs=1e-12)


def test_kepler_angular_momentum_generator():
    g = rotation(1, 2)
    q, p = np.array([0.4, 0.0]), np.array([0.0, 2.0])
    assert g.quantity(q, p) == pytest.approx(0.8)
    q, p = np.array([1.0, 2.0]), np.array([3.0, -1.0])
    assert g.quantity(q, p) == pytest.approx(q[0] * p[1] - q[1] * p[0])


def test_translation_generator_gives_linear_momentum():
    g = translation(3, 1)
    assert g.quantity(np.zeros(3), np.array([1.0, 2.0, 3.0])) == 2.0


@settings(max_examples=10)
@given(st.integers(0, 2**32 - 1))
def test_rotation_generator_is_a_symmetry_of_nbody_potential(seed):
    rng = np.random.default_rng(seed)
    cfg = NBodyConfig(rng.uniform(0.5, 2, 4), rng.normal(size=(4, 3)) * 3, rng.normal(size=(4, 3)))
    sys = nbody_problem(cfg).system
    q = cfg.positions.ravel()
    for plane in [(0, 1), (1, 2), (2, 0)]:
        a = rotation(4, 3, plane).a(q)
        # directional derivative of V along the generator vanishes
        assert float(sys.grad_V(q) @ a) == pytest.approx(0.0, abs=1e-12 * np.abs(sys.grad_V(q)).max())


def test_noether_quantity_constant_along_harmonic_2d_reference():
    # isotropic 2-D oscillator: angular momentum along the exact solution
    g = rotation(1, 2)
    for t in np.linspace(0, 10, 11):
        q = np.array([np.cos(t), 0.5 * np.sin(t)])
        p = np.array([-np.sin(t), 0.5 * np.cos(t)])
        assert g.quantity(q, p) == pytest.approx(0.5, rel=1e-12)


def test_harmonic_problem_has_no_generators():
    assert harmonic_oscillator().generators == []
    assert isinstance(NoetherGenerator(lambda q: q).quantity([1.0], [2.0]), float)
