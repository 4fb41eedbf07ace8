"""Window ladder, stochastic term, normality rule and adaptive estimates."""

import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from wellfiltered.estimator import (AdaptiveDenoiser, EstimatorConfig, adaptive_field_estimate,
                                    adaptive_point_estimate, fit_defect, grid_ladder,
                                    ideal_window_oracle, is_normal, ladder_radii, largest_normal,
                                    max_radius, normal_matrix, regime_check, rung_edge,
                                    stochastic_term, window_estimate)
from wellfiltered.exceptions import ConfigError, GeometryError
from wellfiltered.grid import t_of_h


def _sn(ladder, m, d, sigma=1.0, omega=2.0):
    return np.array([stochastic_term(rung_edge(T, m), m**d, sigma, omega, d) for T in ladder])


class TestConfig:
    @pytest.mark.parametrize("kw", [{"mu": 0.5}, {"gamma": 1.0}, {"omega": 0.0}, {"c1": -1.0},
                                    {"ladder_ratio": 1.0}, {"sigma": -1.0}, {"precision": "half"}])
    def test_invalid(self, kw):
        with pytest.raises(ConfigError):
            EstimatorConfig(**kw)

    def test_default_solver_tolerance_scales_with_sigma(self):
        assert EstimatorConfig(sigma=4.0).solver_atol == pytest.approx(4e-3)


class TestLadder:
    def test_radii(self):
        assert ladder_radii(30) == [0, 1, 2, 3, 5, 8, 12, 18, 27]

    def test_rung_edge_induces_radius(self):
        m = 200
        for T in ladder_radii(24):
            if T:
                assert t_of_h((100,), rung_edge(T, m), m) == T

    def test_max_radius_is_admissibility_limit(self):
        m = 128
        for t in (1, 4, 5, 9, 30, 64, 120):
            R = max_radius((t,), m)
            if R >= 1:
                t_of_h((t,), rung_edge(R, m), m)  # admissible
            with pytest.raises(GeometryError):
                t_of_h((t,), rung_edge(R + 1, m), m)

    def test_grid_ladder_cap(self):
        assert grid_ladder(128, EstimatorConfig()) == [0, 1, 2, 3, 5, 8, 12]
        assert grid_ladder(128, EstimatorConfig(max_T=4)) == [0, 1, 2, 3]

    def test_sn_strictly_decreasing(self):
        sn = _sn(ladder_radii(40), 512, 1)
        assert np.all(np.diff(sn) < 0)


class TestStochasticTerm:
    def test_noiseless(self):
        assert stochastic_term(0.3, 100, 0.0, 2.0, 1) == 0.0

    def test_example_value(self):
        # 2 sqrt(ln 16384) / 128
        assert stochastic_term(1.0, 16384, 1.0, 2.0, 2) == pytest.approx(0.048674, abs=5e-7)

    @pytest.mark.parametrize("d", [1, 2, 3])
    def test_halving_h(self, d):
        a = stochastic_term(0.4, 1000, 1.3, 2.0, d)
        assert stochastic_term(0.2, 1000, 1.3, 2.0, d) == pytest.approx(a * 2 ** (d / 2))

    def test_bad_arguments(self):
        with pytest.raises(ValueError):
            stochastic_term(0.0, 100, 1.0, 2.0, 1)


class TestWindowEstimate:
    def test_tiny_window_returns_observation(self):
        y = np.random.default_rng(0).standard_normal(65)
        assert window_estimate(y, (30,), 1 / 64, EstimatorConfig()) == y[30]

    def test_constant(self):
        y = np.full((33, 33), 0.8)
        assert window_estimate(y, (16, 16), 0.5, EstimatorConfig()) == pytest.approx(0.8, abs=1e-8)

    def test_harmonic_t5(self):
        m = 128
        y = np.exp(0.7j * np.arange(m + 1))
        h = rung_edge(5, m)
        assert t_of_h((64,), h, m) == 5
        assert abs(window_estimate(y, (64,), h, EstimatorConfig(sigma=0.0)) - y[64]) <= 1e-6

    def test_inadmissible(self):
        with pytest.raises(GeometryError):
            window_estimate(np.zeros(33), (3,), 0.5, EstimatorConfig())


class TestNormality:
    def test_first_rung_always_normal(self):
        assert is_normal(0, [5.0, -100.0], [1e-9, 1e-9], 0.5)

    def test_noiseless_constant(self):
        est = np.full(6, 2.0)
        assert all(is_normal(k, est, np.zeros(6), 0.5) for k in range(6))

    def test_displaced_rung(self):
        c1 = 0.5
        sn = np.array([1.0, 0.6, 0.4, 0.3])
        est = np.zeros(4)
        est[3] = 10 * c1 * sn[1]
        assert not is_normal(3, est, sn, c1)
        assert is_normal(2, est, sn, c1)

    def test_forced_non_normal_top(self):
        c1 = 0.5
        sn = _sn([0, 1, 2, 3, 5], 256, 1)
        est = np.array([[0.1, 0.05, 0.02, 0.0, 5.0]])
        normal = normal_matrix(est, sn, c1)
        expected = [k for k in range(5) if is_normal(k, est[0], sn, c1)]
        assert int(largest_normal(normal)[0]) == max(expected) == 3

    def test_nan_rungs_not_normal(self):
        est = np.array([[1.0, 1.0, np.nan]])
        assert normal_matrix(est, np.ones(3), 0.5).tolist() == [[True, True, False]]

    @settings(max_examples=60, deadline=None)
    @given(seed=st.integers(0, 2**31), K=st.integers(2, 8), c1=st.floats(0.05, 2.0))
    def test_matrix_matches_scalar_rule(self, seed, K, c1):
        rng = np.random.default_rng(seed)
        est = rng.standard_normal((3, K))
        sn = np.sort(rng.uniform(0.01, 1.0, K))[::-1]
        normal = normal_matrix(est, sn, c1)
        for p in range(3):
            assert [is_normal(k, est[p], sn, c1) for k in range(K)] == normal[p].tolist()

    @settings(max_examples=40, deadline=None)
    @given(seed=st.integers(0, 2**31), K=st.integers(3, 8), j=st.integers(0, 7))
    def test_downward_consistency(self, seed, K, j):
        # the test at rung j reads only rungs <= j
        j = min(j, K - 1)
        rng = np.random.default_rng(seed)
        est = rng.standard_normal(K) * 0.1
        sn = np.linspace(1.0, 0.1, K)
        other = est.copy()
        other[j + 1:] = rng.standard_normal(K - j - 1) * 100
        assert is_normal(j, est, sn, 0.5) == is_normal(j, other, sn, 0.5)

    def test_larger_c1_never_rejects_more(self):
        rng = np.random.default_rng(3)
        est = rng.standard_normal((50, 6)) * 0.3
        sn = _sn([0, 1, 2, 3, 5, 8], 128, 2)
        counts = [normal_matrix(est, sn, c).sum() for c in (0.1, 0.3, 0.5, 1.0, 3.0)]
        assert counts == sorted(counts)


class TestAdaptivePoint:
    def test_noiseless_affine_selects_top_rung(self):
        m = 128
        y = 0.3 + 2.0 * np.arange(m + 1) / m
        pe = adaptive_point_estimate(y, (64,), EstimatorConfig(sigma=0.0))
        assert pe.chosen_T == pe.rung_T[-1] == 12
        assert pe.value == pytest.approx(y[64], abs=1e-12)

    def test_diagnostics_consistent(self):
        y = np.random.default_rng(4).standard_normal(129)
        pe = adaptive_point_estimate(y, (64,), EstimatorConfig())
        k = pe.rung_T.index(pe.chosen_T)
        assert pe.normal[k] and not pe.normal[k + 1:].any()
        assert pe.value == pe.rung_estimates[k].real
        assert pe.chosen_h == (rung_edge(pe.chosen_T, 128) if pe.chosen_T else 1 / 128)

    def test_pure_noise_small(self):
        cfg = EstimatorConfig(max_iter=100, rtol=3e-2)
        m, ok = 256, 0
        for j in range(30):
            y = np.random.default_rng(j).standard_normal(m + 1)
            pe = adaptive_point_estimate(y, (128,), cfg)
            bound = 6 * cfg.c1 * stochastic_term(rung_edge(pe.rung_T[-1], m), m, 1.0, cfg.omega, 1)
            ok += abs(pe.value) <= bound
        assert ok >= 27

    def test_deterministic(self):
        y = np.random.default_rng(5).standard_normal((33, 33))
        a = adaptive_point_estimate(y, (16, 16), EstimatorConfig())
        b = adaptive_point_estimate(y, (16, 16), EstimatorConfig())
        assert a.value == b.value and a.chosen_T == b.chosen_T

    def test_boundary_point_rejected(self):
        with pytest.raises(GeometryError):
            adaptive_point_estimate(np.zeros(17), (0,), EstimatorConfig())

    def test_guarantee_on_exact_exponential(self):
        # exactly reproducible signal: error <= 5 C1 (defect + S_n(h*)) in >= 90% of runs
        m, t = 256, (128,)
        cfg = EstimatorConfig(sigma=0.5, max_iter=300, rtol=1e-3)
        f = np.exp(0.9j * np.arange(m + 1))
        h_star = ideal_window_oracle(f, t, cfg)
        T_star = t_of_h(t, h_star, m)
        bound = 5 * cfg.c1 * (fit_defect(f, t, T_star, cfg)
                              + stochastic_term(h_star, m, cfg.sigma, cfg.omega, 1))
        hits = 0
        for j in range(40):
            rng = np.random.default_rng(100 + j)
            y = f + cfg.sigma * (rng.standard_normal(m + 1) + 1j * rng.standard_normal(m + 1))
            hits += abs(adaptive_point_estimate(y, t, cfg).value - f[128]) <= bound
        assert hits >= 36


class TestAdaptiveField:
    def test_constant_field(self):
        y = np.full((17, 17), -0.4)
        fe = adaptive_field_estimate(y, EstimatorConfig(sigma=0.0))
        assert fe.estimate.shape == y.shape
        np.testing.assert_allclose(fe.estimate, -0.4, atol=1e-10)

    def test_boundary_takes_nearest_interior(self):
        y = np.random.default_rng(6).standard_normal((13, 13))
        est = adaptive_field_estimate(y, EstimatorConfig(max_iter=50)).estimate
        np.testing.assert_array_equal(est[0, 5], est[1, 5])
        np.testing.assert_array_equal(est[12, 12], est[11, 11])
        np.testing.assert_array_equal(est[0, 0], est[1, 1])

    def test_denoises_harmonic(self):
        m, sigma = 32, 0.2
        x = np.arange(m + 1) / m
        f = np.sin(3 * x[:, None] + 2 * x[None, :] + 0.4) + 0.5 * np.sin(5 * x[:, None] + 0.1)
        y = f + sigma * np.random.default_rng(7).standard_normal(f.shape)
        est = adaptive_field_estimate(y, EstimatorConfig(sigma=sigma, max_iter=200, rtol=1e-2)).estimate
        inner = (slice(1, m), slice(1, m))
        assert np.mean((est - f)[inner] ** 2) < np.mean((y - f)[inner] ** 2)

    def test_points_subset_matches_full(self):
        y = np.random.default_rng(8).standard_normal((25, 25))
        cfg = EstimatorConfig(max_iter=100, rtol=3e-2)
        full = adaptive_field_estimate(y, cfg)
        pts = np.array([[12, 12], [5, 7], [20, 3]])
        part = adaptive_field_estimate(y, cfg, points=pts)
        np.testing.assert_array_equal(part.estimate[tuple(pts.T)], full.estimate[tuple(pts.T)])
        assert np.isnan(part.estimate[0, 0])

    def test_complex_input_stays_complex(self):
        rng = np.random.default_rng(9)
        y = rng.standard_normal(33) + 1j * rng.standard_normal(33)
        assert np.iscomplexobj(adaptive_field_estimate(y, EstimatorConfig(max_iter=50)).estimate)

    @pytest.mark.parametrize("c", [0.25, 2.0, 8.0])
    def test_scaling_equivariance_exact(self, c):
        # binary scalings leave every solver iterate and decision bit-identical
        y = np.random.default_rng(10).standard_normal((21, 21))
        cfg = EstimatorConfig(sigma=1.0, max_iter=300, rtol=1e-4)
        a = adaptive_field_estimate(y, cfg)
        b = adaptive_field_estimate(c * y, EstimatorConfig(sigma=c, max_iter=300, rtol=1e-4))
        np.testing.assert_array_equal(a.chosen_T, b.chosen_T)
        np.testing.assert_allclose(b.estimate, c * a.estimate, rtol=1e-12, atol=1e-14 * c)

    @settings(max_examples=8, deadline=None)
    @given(c=st.floats(0.1, 10.0), seed=st.integers(0, 1000))
    def test_scaling_equivariance(self, c, seed):
        y = np.random.default_rng(seed).standard_normal(65)
        cfg = EstimatorConfig(sigma=1.0, max_iter=300, rtol=1e-4)
        a = adaptive_field_estimate(y, cfg)
        b = adaptive_field_estimate(c * y, EstimatorConfig(sigma=c, max_iter=300, rtol=1e-4))
        same = a.chosen_T == b.chosen_T
        assert same.mean() >= 0.95
        np.testing.assert_allclose(b.estimate[same], c * a.estimate[same], rtol=1e-6, atol=1e-8 * c)

    def test_parallel_matches_serial(self):
        y = np.random.default_rng(11).standard_normal((25, 25))
        a = adaptive_field_estimate(y, EstimatorConfig(max_iter=50))
        b = adaptive_field_estimate(y, EstimatorConfig(max_iter=50, n_jobs=2))
        np.testing.assert_array_equal(a.estimate, b.estimate)


class TestOracle:
    def test_zero_signal(self):
        m = 128
        cfg = EstimatorConfig()
        assert ideal_window_oracle(np.zeros(m + 1), (64,), cfg) == rung_edge(12, m)

    def test_pure_harmonic(self):
        m = 128
        f = np.exp(1.1j * np.arange(m + 1))
        assert ideal_window_oracle(f, (64,), EstimatorConfig()) == rung_edge(12, m)

    def test_shrinks_towards_kink(self):
        m = 512
        x = np.arange(m + 1) / m
        f = 3.0 * np.abs(x - 0.5)
        cfg = EstimatorConfig(sigma=0.05)
        edges = [ideal_window_oracle(f, (t,), cfg) for t in (256 + 160, 256 + 64, 256 + 16, 256 + 2)]
        assert edges == sorted(edges, reverse=True)
        assert edges[0] > edges[-1]

    def test_warns_when_nothing_passes(self):
        with warnings.catch_warnings(record=True) as rec:
            warnings.simplefilter("always")
            h = ideal_window_oracle(np.zeros(65), (32,), EstimatorConfig(),
                                    defect=lambda f, t, T: 100.0)
        assert h == 1 / 64 and rec


class TestRegime:
    def test_noiseless_false(self):
        assert not regime_check(1, math.inf, 1, 1.0, 0.0, 1000, 1.0)

    def test_midpoint_true(self):
        k, p, d, n, D, sigma = 1, 4.0, 2, 4096, 0.5, 1.0
        e1 = (2 * k * p + d * (p - 2)) / (2 * d * p)
        e2 = (2 * k * p + d * (p - 2)) / (2 * p)
        mid = 0.5 * (n**e1 + D ** (-e2))
        R = sigma * math.sqrt(math.log(n) / n) * mid
        assert regime_check(k, p, d, R, sigma, n, D)

    def test_vanishing_cube_false(self):
        assert not regime_check(1, math.inf, 1, 1.0, 1.0, 1000, 1e-9)

    def test_needs_p_above_d(self):
        with pytest.raises(ValueError):
            regime_check(1, 2.0, 2, 1.0, 1.0, 100, 1.0)


class TestDenoiser:
    def test_clone_and_params(self):
        est = AdaptiveDenoiser(sigma=0.5, c1=0.4)
        assert clone(est).get_params()["c1"] == 0.4

    def test_fit_transform(self):
        y = np.random.default_rng(12).standard_normal((17, 17))
        den = AdaptiveDenoiser(max_iter=50)
        out = den.fit_transform(y)
        assert out.shape == y.shape and den.chosen_T_.shape == y.shape
        np.testing.assert_array_equal(out, adaptive_field_estimate(y, EstimatorConfig(max_iter=50)).estimate)

    def test_not_fitted(self):
        with pytest.raises(NotFittedError):
            AdaptiveDenoiser().transform(np.zeros((5, 5)))

    def test_rejects_bad_input(self):
        with pytest.raises(ValueError):
            AdaptiveDenoiser().fit(np.zeros((4, 5)))
        with pytest.raises(ConfigError):
            AdaptiveDenoiser(c1=-1).fit(np.zeros((5, 5)))
