import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, stats
from scipy.special import expit, logit

from specwass.core import TimeGrid
from specwass.errors import DomainError
from specwass.schrodinger import (BridgeParams, CPathConfig, FilterConfig, bridge_density, bridge_density_ratio,
                                  bridge_drift, bridge_drift_gap_fit, cdf_C, density_C, density_C_mixture,
                                  density_table, drift_C, entropy_gap, entropy_gap_table, filtering_experiment,
                                  filtering_posterior, logit_change_check, mixture_weights, simulate_C, y_potential)
from specwass.sde import SimConfig, simulate, t_clock, time_change_to_infinite_horizon
from specwass.winmart import solve_profile


class TestLawOfC:
    @pytest.mark.parametrize("t", [0.1, 0.5, 1.0, 4.0])
    @pytest.mark.parametrize("c", [0.0, 1.3, -2.0])
    def test_normalization(self, t, c):
        total = integrate.quad(lambda z: density_C(t, z, c), -np.inf, np.inf, epsabs=1e-14)[0]
        assert abs(total - 1.0) < 1e-8

    @given(st.floats(0.01, 10.0), st.floats(-5.0, 5.0), st.floats(-20.0, 20.0))
    @settings(max_examples=200, deadline=None)
    def test_mixture_identity(self, t, c, z):
        np.testing.assert_allclose(density_C(t, z, c), density_C_mixture(t, z, c), rtol=1e-10, atol=1e-14)

    def test_weights(self):
        assert mixture_weights(0.0) == (0.5, 0.5)
        wp, wm = mixture_weights(2.0)
        np.testing.assert_allclose(wp, 1.0 / (1.0 + math.exp(-2.0)), rtol=1e-15)
        assert wp + wm == 1.0

    def test_cdf_is_integral_of_density(self):
        for z in (-2.0, 0.0, 1.5):
            ref = integrate.quad(lambda u: density_C(1.0, u, 0.7), -np.inf, z, epsabs=1e-14)[0]
            np.testing.assert_allclose(cdf_C(1.0, z, 0.7), ref, atol=1e-10)

    def test_symmetric_at_zero_start(self):
        z = np.linspace(-3, 3, 13)
        np.testing.assert_allclose(density_C(1.0, z), density_C(1.0, -z), rtol=1e-14)

    def test_drift(self):
        assert drift_C(0.0) == 0.0
        np.testing.assert_allclose(drift_C(np.array([-50.0, 50.0])), [-0.5, 0.5])

    def test_domain(self):
        with pytest.raises(DomainError):
            density_C(0.0, 0.0)
        with pytest.raises(DomainError):
            cdf_C(-1.0, 0.0)


class TestYPotential:
    def test_zero_time_limit(self):
        # small t: Y_t is close to x0
        np.testing.assert_allclose(y_potential(1e-6, [0.2], 0.5), [0.3], atol=1e-3)

    def test_edge_strikes_give_the_mean(self):
        # Y lives in [0, 1] and E Y = x0, so E|Y| = x0 and E|Y - 1| = 1 - x0
        k = np.array([0.0, 1.0])
        np.testing.assert_allclose(y_potential(2.0, k, 0.3), [0.3, 0.7], rtol=1e-9)

    def test_against_direct_quadrature_in_y(self):
        # change variables to y = expit(z) and integrate against the pushed-forward density
        t, x0, k = 1.0, 0.4, 0.6
        c = float(logit(x0))
        f = lambda y: abs(y - k) * density_C(t, logit(y), c) / (y * (1 - y))  # noqa: E731
        ref = integrate.quad(f, 0, k, limit=200)[0] + integrate.quad(f, k, 1, limit=200)[0]
        np.testing.assert_allclose(y_potential(t, k, x0)[0], ref, rtol=1e-8)

    def test_increases_in_time(self):
        vals = [y_potential(t, 0.5, 0.5)[0] for t in (0.5, 1.0, 2.0, 4.0)]
        assert all(b > a for a, b in zip(vals, vals[1:]))


class TestBridge:
    @pytest.mark.parametrize("T,t", [(5.0, 0.0), (5.0, 1.0), (40.0, 0.5), (80.0, 1.0)])
    def test_two_forms_agree(self, T, t):
        x = np.linspace(-3, 3, 31)
        bp = BridgeParams(T, t)
        np.testing.assert_allclose(bridge_density(bp, x), bridge_density_ratio(bp, x), rtol=1e-12)

    def test_density_at_time_zero(self):
        assert abs(bridge_density(BridgeParams(10.0, 0.0), 0.0) - 1.0) < 1e-14

    def test_drift_is_log_derivative(self):
        bp = BridgeParams(20.0, 0.7)
        x, h = 0.8, 1e-5
        fd = (math.log(bridge_density(bp, x + h)) - math.log(bridge_density(bp, x - h))) / (2 * h)
        np.testing.assert_allclose(bridge_drift(bp, x), fd, rtol=1e-7)

    def test_drift_gap_shrinks_like_one_over_T(self):
        r = bridge_drift_gap_fit()
        gaps = r["sup_gap"]
        assert all(b < a for a, b in zip(gaps, gaps[1:]))
        scaled = [g * T for g, T in zip(gaps, r["T"])]
        assert max(scaled) / min(scaled) < 1.5
        assert r["fitted_K"] == max(scaled)

    def test_params(self):
        with pytest.raises(DomainError):
            BridgeParams(1.0, 1.0)
        with pytest.raises(DomainError):
            BridgeParams(0.0, 0.0)
        with pytest.raises(DomainError):
            BridgeParams(5.0, 1.0, c=0.5)


class TestCPaths:
    def test_zero_time(self):
        c, acc = simulate_C(0.0, 5, seed=0, c0=0.3)
        np.testing.assert_array_equal(c, 0.3)
        np.testing.assert_array_equal(acc, 0.0)

    def test_marginal_matches_density(self):
        K = 20_000
        c, _ = simulate_C(1.0, K, seed=3, cfg=CPathConfig(128))
        ks = stats.kstest(c, lambda z: cdf_C(1.0, z)).statistic
        assert ks < 1.5 * 1.63 / math.sqrt(K)

    def test_chunking_does_not_change_paths(self):
        a, _ = simulate_C(1.0, 50, seed=4, cfg=CPathConfig(16), chunk=7)
        b, _ = simulate_C(1.0, 50, seed=4, cfg=CPathConfig(16))
        np.testing.assert_array_equal(a, b)

    def test_density_table(self):
        c, _ = simulate_C(1.0, 5000, seed=1, cfg=CPathConfig(64))
        tab = density_table(1.0, c, bins=30)
        assert tab.shape == (30, 3)
        np.testing.assert_allclose(tab[:, 1], density_C(1.0, tab[:, 0]))


class TestEntropyGap:
    def test_zero_interval(self):
        assert entropy_gap(10.0, 0.0) == (0.0, 0.0)

    def test_decreasing_in_T(self):
        rows = entropy_gap_table(K=2000, cfg=CPathConfig(128))
        est = [r["estimate"] for r in rows]
        assert all(b < a for a, b in zip(est, est[1:]))
        assert est[-1] < 1e-2

    def test_rate(self):
        # the drift gap is O(1/T), so the entropy gap is O(1/T^2)
        rows = entropy_gap_table((10.0, 20.0, 40.0), K=2000, cfg=CPathConfig(64))
        ratios = [a["estimate"] / b["estimate"] for a, b in zip(rows, rows[1:])]
        assert all(3.0 < r < 5.5 for r in ratios)

    def test_domain(self):
        with pytest.raises(DomainError):
            entropy_gap(1.0, 2.0)


class TestLogitChange:
    def test_small_run(self):
        r = logit_change_check(K=4000, seed=1, n_cells=32, cfg=SimConfig(substeps_per_cell=8))
        assert r["ks_ok"] and r["qv_ok"] and r["y_mean_ok"], r

    def test_potential_matches_y(self):
        # time-changed marginals of the p = 1/2 optimizer against the law of Y
        K, t = 20_000, 1.0
        grid = TimeGrid(t_clock(np.linspace(0.0, t, 33)))
        ens = simulate(solve_profile(0.5).model(0.5), grid, K, 5, SimConfig(substeps_per_cell=8))
        y = time_change_to_infinite_horizon(ens).terminal
        for k in (0.25, 0.5, 0.75):
            v = np.abs(y - k)
            exact = y_potential(t, k, 0.5)[0]
            assert abs(v.mean() - exact) < 3.0 * v.std(ddof=1) / math.sqrt(K)

    def test_domain(self):
        with pytest.raises(DomainError):
            logit_change_check(K=10, x0=1.0)


class TestFiltering:
    def test_posterior_at_time_zero(self):
        assert filtering_posterior(0.0, 0.0, 0.3) == pytest.approx(0.3, rel=1e-15)

    def test_posterior_is_bayes_rule(self):
        x, t, x0 = 0.7, 1.3, 0.4
        l1 = x0 * stats.norm.pdf(x, loc=t, scale=math.sqrt(t))
        l0 = (1 - x0) * stats.norm.pdf(x, loc=0.0, scale=math.sqrt(t))
        np.testing.assert_allclose(filtering_posterior(x, t, x0), l1 / (l1 + l0), rtol=1e-13)

    def test_small_experiment(self):
        r = filtering_experiment(0.5, 4.0, K=8000, cfg=FilterConfig(n_steps=256), seed=2)
        assert r["all_pass"], r["checks"]

    def test_forced_drift(self):
        up = filtering_experiment(0.5, 4.0, K=2000, cfg=FilterConfig(n_steps=128), seed=3, force_u=1)
        down = filtering_experiment(0.5, 4.0, K=2000, cfg=FilterConfig(n_steps=128), seed=3, force_u=0)
        assert up["all_pass"] and up["mean_P"][-1] > 0.5
        assert down["all_pass"] and down["mean_P"][-1] < 0.5

    def test_expit_form(self):
        np.testing.assert_allclose(filtering_posterior(1.0, 1.0, 0.5), expit(0.5), rtol=1e-15)

    def test_domain(self):
        with pytest.raises(DomainError):
            filtering_experiment(0.0)
        with pytest.raises(DomainError):
            filtering_experiment(0.5, force_u=2)
        with pytest.raises(DomainError):
            FilterConfig(n_steps=100, n_checkpoints=4)
