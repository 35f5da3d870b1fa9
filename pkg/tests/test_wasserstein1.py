import math

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st
from scipy import integrate, stats

from specwass.errors import DomainError
from specwass.wasserstein1 import (SQRT_2_OVER_PI, EmpiricalDist, folded_normal_mean, folded_normal_mean_array,
                                   w1_empirical, w1_gaussian)

finite = st.floats(-100, 100, allow_nan=False, allow_infinity=False)
samples = st.lists(finite, min_size=1, max_size=30)


def _weights(n, data):
    raw = np.array(data.draw(st.lists(st.floats(0.01, 1.0), min_size=n, max_size=n)))
    return raw / raw.sum()


class TestEmpiricalDist:
    def test_uniform_default(self):
        d = EmpiricalDist([1.0, 2.0, 4.0])
        np.testing.assert_allclose(d.weights, 1.0 / 3.0)

    def test_validation(self):
        with pytest.raises(DomainError):
            EmpiricalDist([])
        with pytest.raises(DomainError):
            EmpiricalDist([1.0, np.nan])
        with pytest.raises(DomainError):
            EmpiricalDist([1.0, 2.0], [0.5, 0.6])
        with pytest.raises(DomainError):
            EmpiricalDist([1.0, 2.0], [1.0, 0.0])

    def test_shifted(self):
        d = EmpiricalDist([0.0, 1.0], [0.25, 0.75]).shifted(2.0)
        np.testing.assert_array_equal(d.atoms, [2.0, 3.0])
        np.testing.assert_array_equal(d.weights, [0.25, 0.75])


class TestW1Empirical:
    def test_point_masses(self):
        assert w1_empirical([0.0], [3.0]) == 3.0

    def test_known_value(self):
        # mass 1/2 moves from 0 to 1 and mass 1/2 stays at 2
        assert w1_empirical(EmpiricalDist([0.0, 2.0]), EmpiricalDist([1.0, 2.0])) == 0.5

    def test_weighted_against_scipy(self):
        rng = np.random.default_rng(3)
        a, b = rng.normal(size=7), rng.normal(1.0, 2.0, size=11)
        wa, wb = rng.random(7), rng.random(11)
        wa, wb = wa / wa.sum(), wb / wb.sum()
        ref = stats.wasserstein_distance(a, b, wa, wb)
        np.testing.assert_allclose(w1_empirical(EmpiricalDist(a, wa), EmpiricalDist(b, wb)), ref, rtol=1e-12)

    @given(samples, samples)
    @settings(max_examples=100, deadline=None)
    def test_matches_scipy(self, a, b):
        np.testing.assert_allclose(w1_empirical(a, b), stats.wasserstein_distance(a, b), rtol=1e-9, atol=1e-9)

    @given(samples, samples)
    @settings(max_examples=100, deadline=None)
    def test_symmetric_and_nonnegative(self, a, b):
        d = w1_empirical(a, b)
        assert d >= 0.0
        np.testing.assert_allclose(d, w1_empirical(b, a), rtol=1e-12, atol=1e-12)

    @given(samples)
    @settings(max_examples=50, deadline=None)
    def test_identity(self, a):
        assert w1_empirical(a, a) == 0.0

    @given(samples, samples, samples)
    @settings(max_examples=100, deadline=None)
    def test_triangle_inequality(self, a, b, c):
        assert w1_empirical(a, c) <= w1_empirical(a, b) + w1_empirical(b, c) + 1e-9

    @given(samples, finite)
    @settings(max_examples=100, deadline=None)
    def test_translation(self, a, c):
        d = EmpiricalDist(a)
        np.testing.assert_allclose(w1_empirical(d, d.shifted(c)), abs(c), rtol=1e-9, atol=1e-9)

    @given(samples, samples)
    @settings(max_examples=100, deadline=None)
    def test_mean_lower_bound(self, a, b):
        assert w1_empirical(a, b) >= abs(np.mean(a) - np.mean(b)) - 1e-9

    @given(st.data(), st.integers(1, 8), st.integers(1, 8))
    @settings(max_examples=60, deadline=None)
    def test_weighted_matches_scipy(self, data, n, m):
        a = np.array(data.draw(st.lists(finite, min_size=n, max_size=n)))
        b = np.array(data.draw(st.lists(finite, min_size=m, max_size=m)))
        wa, wb = _weights(n, data), _weights(m, data)
        assume(abs(wa.sum() - 1) < 1e-12 and abs(wb.sum() - 1) < 1e-12)
        ref = stats.wasserstein_distance(a, b, wa, wb)
        np.testing.assert_allclose(w1_empirical(EmpiricalDist(a, wa), EmpiricalDist(b, wb)), ref,
                                   rtol=1e-8, atol=1e-8)

    def test_consistency_with_gaussian(self):
        # empirical W1 between large samples approaches the Gaussian closed form
        rng = np.random.default_rng(11)
        n = 200_000
        a = rng.normal(0.3, 2.0, n)
        b = rng.normal(0.0, 1.0, n)
        np.testing.assert_allclose(w1_empirical(a, b), w1_gaussian(0.3, 2.0, 0.0, 1.0), rtol=0.01)


class TestFoldedNormal:
    @pytest.mark.parametrize("m,s", [(0.0, 1.0), (1.0, 1.0), (-2.0, 0.5), (3.0, 4.0), (0.1, 1e-3)])
    def test_against_quadrature(self, m, s):
        ref = integrate.quad(lambda z: abs(m + s * z) * stats.norm.pdf(z), -40, -m / s, epsabs=1e-14)[0] + \
            integrate.quad(lambda z: abs(m + s * z) * stats.norm.pdf(z), -m / s, 40, epsabs=1e-14)[0]
        np.testing.assert_allclose(folded_normal_mean(m, s), ref, rtol=1e-10)

    def test_centered(self):
        np.testing.assert_allclose(folded_normal_mean(0.0, 2.0), 2.0 * SQRT_2_OVER_PI, rtol=1e-15)

    def test_tiny_scale(self):
        # |m| / s overflows its square; the mean is |m| to double precision
        assert folded_normal_mean(1.0, 6.2e-245) == 1.0
        assert w1_gaussian(0.0, 0.0, 1.0, 6.2e-245) == 1.0
        np.testing.assert_allclose(folded_normal_mean(-4.0, 0.1), 4.0, rtol=1e-15)

    def test_rejects_zero_scale(self):
        with pytest.raises(DomainError):
            folded_normal_mean(1.0, 0.0)

    def test_array_version(self):
        m = np.array([0.0, 1.0, -2.0, 5.0])
        s = np.array([1.0, 0.0, 0.5, 2.0])
        out = folded_normal_mean_array(m, s)
        np.testing.assert_allclose(out[1], 1.0)
        for i in (0, 2, 3):
            np.testing.assert_allclose(out[i], folded_normal_mean(m[i], s[i]), rtol=1e-14)

    @given(st.floats(-50, 50), st.floats(1e-3, 50))
    @settings(max_examples=100, deadline=None)
    def test_bounds(self, m, s):
        v = folded_normal_mean(m, s)
        assert v >= abs(m) - 1e-12
        assert v <= math.hypot(m, s) + 1e-12  # Jensen: E|X| <= sqrt(E X^2)


class TestW1Gaussian:
    def test_scaled_bm_identity(self):
        np.testing.assert_allclose(w1_gaussian(0.0, 2.0, 0.0, 1.0), SQRT_2_OVER_PI, rtol=1e-15)

    def test_equal_scales(self):
        assert w1_gaussian(1.0, 1.5, -0.5, 1.5) == 1.5

    def test_against_quantile_integral(self):
        m1, s1, m2, s2 = 0.4, 1.7, -0.2, 0.6
        f = lambda u: abs((m1 - m2) + (s1 - s2) * stats.norm.ppf(u))  # noqa: E731
        split = 1.0 - stats.norm.cdf((m1 - m2) / (s1 - s2))
        ref = integrate.quad(f, 0, split, epsabs=1e-13)[0] + integrate.quad(f, split, 1, epsabs=1e-13)[0]
        np.testing.assert_allclose(w1_gaussian(m1, s1, m2, s2), ref, rtol=1e-9)

    def test_rejects_negative(self):
        with pytest.raises(DomainError):
            w1_gaussian(0.0, -1.0, 0.0, 1.0)

    @given(finite, st.floats(0, 10), finite, st.floats(0, 10))
    @settings(max_examples=100, deadline=None)
    def test_symmetric(self, m1, s1, m2, s2):
        np.testing.assert_allclose(w1_gaussian(m1, s1, m2, s2), w1_gaussian(m2, s2, m1, s1), rtol=1e-12, atol=1e-12)
