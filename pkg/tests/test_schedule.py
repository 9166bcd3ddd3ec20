import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from adadiff import ConfigurationError, ContractError, make_schedule, sample_posterior


def conditioned_gaussian(sched, x0_tilde, x_next, r):
    """Independent oracle: condition q(x_r|x0) on the transition q(x_{r+1}|x_r).

    Works directly from the two Gaussians via precision weighting, never
    through the closed-form coefficients under test. Handles the r=0
    degenerate case as the infinite-precision limit.
    """
    ab_r = sched.alpha_bar[r]
    a_n = sched.alpha[r + 1]
    g_n = sched.gamma[r + 1]
    if ab_r == 1.0:
        return x0_tilde, 0.0
    prior_prec = 1.0 / (1.0 - ab_r)
    lik_prec = a_n / g_n
    var = 1.0 / (prior_prec + lik_prec)
    mean = var * (
        math.sqrt(ab_r) * x0_tilde * prior_prec
        + math.sqrt(a_n) * x_next / g_n
    )
    return mean, var


@pytest.fixture(scope="module")
def paper_schedule():
    return make_schedule(1000, 125)


class TestMakeSchedule:
    def test_paper_defaults_have_eight_steps(self, paper_schedule):
        assert paper_schedule.steps == 8
        assert paper_schedule.alpha_bar.shape == (9,)

    def test_terminal_alpha_bar_closed_form(self, paper_schedule):
        # exponent at tau=1 is -(0.1 + 0.5*19.9) = -10.05
        assert paper_schedule.alpha_bar[8] == pytest.approx(
            math.exp(-10.05), abs=1e-12, rel=0
        )
        assert paper_schedule.alpha_bar[8] < 1e-3

    def test_zero_step_is_identity(self, paper_schedule):
        assert paper_schedule.alpha_bar[0] == 1.0
        x0 = np.array([0.3, -1.2])
        out = paper_schedule.forward_diffuse(x0, 0, np.ones(2))
        np.testing.assert_array_equal(out, x0)

    def test_monotone_and_bounded(self, paper_schedule):
        s = paper_schedule
        assert np.all(np.diff(s.alpha_bar) < 0)
        assert np.all((s.gamma[1:] > 0) & (s.gamma[1:] < 1))

    def test_cumulative_product_identity(self, paper_schedule):
        s = paper_schedule
        prod = np.cumprod(s.alpha[1:])
        np.testing.assert_allclose(prod, s.alpha_bar[1:], rtol=1e-10)

    def test_rejects_non_divisible(self):
        with pytest.raises(ConfigurationError):
            make_schedule(1000, 300)

    def test_rejects_bad_endpoints(self):
        with pytest.raises(ConfigurationError):
            make_schedule(1000, 125, beta_min=20.0, beta_max=0.1)
        with pytest.raises(ConfigurationError):
            make_schedule(1000, 125, beta_min=5.0, beta_max=5.0)

    @given(
        steps=st.integers(min_value=1, max_value=64),
        stride=st.integers(min_value=1, max_value=200),
        beta_min=st.floats(min_value=1e-3, max_value=1.0),
        spread=st.floats(min_value=0.5, max_value=40.0),
    )
    @settings(max_examples=50, deadline=None)
    def test_invariants_hold_for_any_valid_schedule(
        self, steps, stride, beta_min, spread
    ):
        s = make_schedule(steps * stride, stride, beta_min, beta_min + spread)
        assert s.alpha_bar[0] == 1.0
        assert np.all(np.diff(s.alpha_bar) < 0)
        assert np.all((s.gamma[1:] > 0) & (s.gamma[1:] < 1))
        np.testing.assert_allclose(
            np.cumprod(s.alpha[1:]), s.alpha_bar[1:], rtol=1e-10
        )


class TestForwardDiffuse:
    def test_zero_noise_scales_by_sqrt_alpha_bar(self, paper_schedule):
        s = paper_schedule
        x0 = np.full((4, 4), 0.8)
        for r in (1, 4, 8):
            out = s.forward_diffuse(x0, r, np.zeros((4, 4)))
            np.testing.assert_allclose(out, math.sqrt(s.alpha_bar[r]) * x0)

    def test_moments_match_monte_carlo(self, paper_schedule):
        s = paper_schedule
        rng = np.random.default_rng(11)
        n = 100_000
        x0 = np.full(n, 0.7)
        for r in (1, 3, 8):
            draws = s.forward_diffuse(x0, r, rng.standard_normal(n))
            m_true = math.sqrt(s.alpha_bar[r]) * 0.7
            v_true = 1.0 - s.alpha_bar[r]
            se_mean = math.sqrt(v_true / n)
            se_var = v_true * math.sqrt(2.0 / (n - 1))
            assert abs(draws.mean() - m_true) < 3 * se_mean
            assert abs(draws.var() - v_true) < 3 * se_var

    def test_shape_mismatch_raises(self, paper_schedule):
        with pytest.raises(ContractError):
            paper_schedule.forward_diffuse(np.zeros((2, 2)), 1, np.zeros(3))

    def test_out_of_range_index_raises(self, paper_schedule):
        with pytest.raises(ContractError):
            paper_schedule.forward_diffuse(np.zeros(2), 9, np.zeros(2))


class TestForwardStep:
    def test_zero_noise(self, paper_schedule):
        s = paper_schedule
        x = np.array([1.0, -2.0])
        out = s.forward_step(x, 3, np.zeros(2))
        np.testing.assert_allclose(out, math.sqrt(s.alpha[3]) * x)

    def test_vanishing_gamma_is_identity_scaling(self):
        # a nearly flat schedule has gamma ~ 0 and alpha ~ 1
        s = make_schedule(100, 50, beta_min=1e-6, beta_max=2e-6)
        x = np.array([0.4, 0.9])
        out = s.forward_step(x, 1, np.zeros(2))
        np.testing.assert_allclose(out, x, atol=1e-6)

    def test_composition_matches_direct_jump(self, paper_schedule):
        s = paper_schedule
        rng = np.random.default_rng(7)
        n = 100_000
        x0 = np.full(n, 0.5)
        x = x0
        big_r = 5
        for r in range(1, big_r + 1):
            x = s.forward_step(x, r, rng.standard_normal(n))
        m_true = math.sqrt(s.alpha_bar[big_r]) * 0.5
        v_true = 1.0 - s.alpha_bar[big_r]
        assert abs(x.mean() - m_true) < 3 * math.sqrt(v_true / n)
        assert abs(x.var() - v_true) < 3 * v_true * math.sqrt(2.0 / (n - 1))

    def test_index_zero_rejected(self, paper_schedule):
        with pytest.raises(ContractError):
            paper_schedule.forward_step(np.zeros(2), 0, np.zeros(2))


class TestPosterior:
    def test_degenerate_at_r0(self, paper_schedule):
        x0t = np.array([0.25, -0.5])
        xn = np.array([3.0, 3.0])
        mean, var = paper_schedule.posterior_params(x0t, xn, 0)
        np.testing.assert_array_equal(mean, x0t)
        assert var == 0.0

    def test_matches_conditioning_oracle_every_pair(self, paper_schedule):
        s = paper_schedule
        rng = np.random.default_rng(3)
        for r in range(s.steps):
            x0t, xn = rng.normal(size=2)
            mean, var = s.posterior_params(x0t, xn, r)
            mean_o, var_o = conditioned_gaussian(s, x0t, xn, r)
            if r == 0:
                assert mean == mean_o and var == var_o == 0.0
            else:
                assert abs(mean - mean_o) <= 1e-10 * abs(mean_o)
                assert abs(var - var_o) <= 1e-10 * var_o

    def test_coefficients_against_oracle_when_inputs_equal(self, paper_schedule):
        # with x0_tilde == x_next the mean collapses to (c0+c1)*x; the sum
        # of coefficients must match the oracle's
        s = paper_schedule
        for r in range(1, s.steps):
            mean, _ = s.posterior_params(1.0, 1.0, r)
            mean_o, _ = conditioned_gaussian(s, 1.0, 1.0, r)
            assert abs(mean - mean_o) <= 1e-10 * abs(mean_o)

    @given(
        steps=st.integers(min_value=2, max_value=32),
        beta_min=st.floats(min_value=1e-3, max_value=1.0),
        spread=st.floats(min_value=0.5, max_value=40.0),
        x0t=st.floats(min_value=-3, max_value=3),
        xn=st.floats(min_value=-3, max_value=3),
        data=st.data(),
    )
    @settings(max_examples=60, deadline=None)
    def test_posterior_exactness_property(
        self, steps, beta_min, spread, x0t, xn, data
    ):
        s = make_schedule(steps * 10, 10, beta_min, beta_min + spread)
        r = data.draw(st.integers(min_value=1, max_value=steps - 1))
        mean, var = s.posterior_params(x0t, xn, r)
        mean_o, var_o = conditioned_gaussian(s, x0t, xn, r)
        assert abs(var - var_o) <= 1e-10 * var_o
        assert abs(mean - mean_o) <= 1e-10 * max(abs(mean_o), 1e-12)

    def test_out_of_range(self, paper_schedule):
        with pytest.raises(ContractError):
            paper_schedule.posterior_params(0.0, 0.0, 8)


class TestSamplePosterior:
    def test_zero_variance_returns_mean(self):
        mean = np.array([1.0, 2.0])
        out = sample_posterior(mean, 0.0, np.ones(2))
        np.testing.assert_array_equal(out, mean)

    def test_zero_noise_returns_mean(self):
        mean = np.array([1.0, 2.0])
        out = sample_posterior(mean, 0.37, np.zeros(2))
        np.testing.assert_array_equal(out, mean)

    def test_negative_variance_raises(self):
        with pytest.raises(ContractError):
            sample_posterior(np.zeros(2), -1e-9, np.zeros(2))

    def test_sample_moments(self):
        rng = np.random.default_rng(5)
        n = 100_000
        mean, var = 0.3, 0.49
        draws = sample_posterior(np.full(n, mean), var, rng.standard_normal(n))
        assert abs(draws.mean() - mean) < 3 * math.sqrt(var / n)
        assert abs(draws.var() - var) < 3 * var * math.sqrt(2.0 / (n - 1))
