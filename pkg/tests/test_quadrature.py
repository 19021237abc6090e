import numpy as np
import pytest
from hypothesis import given, strategies as st

from specvi.quadrature import gauss_legendre, integrate


def test_midpoint_rule():
    r = gauss_legendre(1)
    assert r.c.tolist() == [0.5]
    assert r.b.tolist() == [1.0]


def test_two_point_rule():
    r = gauss_legendre(2)
    s = 1 / np.sqrt(3)
    np.testing.assert_allclose(r.c, [(1 - s) / 2, (1 + s) / 2], atol=1e-15)
    np.testing.assert_allclose(r.b, [0.5, 0.5], atol=1e-15)
    for k in range(4):
        assert r.b @ r.c**k == pytest.approx(1 / (k + 1), rel=1e-14)


def test_three_point_weights():
    r = gauss_legendre(3)
    np.testing.assert_allclose(r.b, [5 / 18, 8 / 18, 5 / 18], atol=1e-15)
    for k in range(6):
        assert r.b @ r.c**k == pytest.approx(1 / (k + 1), rel=1e-14)


@pytest.mark.parametrize("m", [1, 2, 3, 7, 16, 33, 64])
def test_matches_numpy_leggauss(m):
    x, w = np.polynomial.legendre.leggauss(m)
    r = gauss_legendre(m)
    np.testing.assert_allclose(r.c, (x + 1) / 2, atol=2e-15)
    np.testing.assert_allclose(r.b, w / 2, atol=2e-15)


@given(st.integers(min_value=1, max_value=60))
def test_rule_invariants(m):
    r = gauss_legendre(m)
    assert r.m == m and r.degree == 2 * m - 1
    assert abs(r.b.sum() - 1.0) < 1e-14
    assert np.all(r.b > 0)
    assert np.all(np.diff(r.c) > 0) and 0 < r.c[0] and r.c[-1] < 1
    np.testing.assert_allclose(r.c + r.c[::-1], 1.0, atol=1e-14)
    np.testing.assert_allclose(r.b, r.b[::-1], atol=1e-14)


def test_rule_is_immutable():
    r = gauss_legendre(4)
    with pytest.raises(ValueError):
        r.c[0] = 0.0


@pytest.mark.parametrize("m", [0, -3])
def test_rejects_empty_rule(m):
    with pytest.raises(ValueError):
        gauss_legendre(m)


def test_integrate_examples():
    assert integrate(gauss_legendre(1), [4.0], 2.0) == pytest.approx(8.0)
    r2 = gauss_legendre(2)
    assert integrate(r2, r2.c, 1.0) == pytest.approx(0.5, rel=1e-15)
    r3 = gauss_legendre(3)
    assert integrate(r3, r3.c**5, 1.0) == pytest.approx(1 / 6, rel=1e-14)


def test_integrate_vector_samples_and_scaling():
    r = gauss_legendre(5)
    h = 3.0
    t = r.c * h
    samples = np.stack([t**2, np.cos(t)], axis=1)
    got = integrate(r, samples, h)
    np.testing.assert_allclose(got, [h**3 / 3, np.sin(h)], rtol=1e-7)


def test_integrate_length_mismatch():
    with pytest.raises(ValueError):
        integrate(gauss_legendre(3), [1.0, 2.0], 1.0)
