"""Estimators, oracles, and the coherence checker.

Expected oracle values below were frozen from independent evaluations of
the closed forms (standard normal pdf/ppf) and, for mixtures, from the
quantile-inversion plus quadrature route; estimator examples are small
enough to verify by hand.
"""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad
from scipy.stats import norm

from redblue.risk import (
    EPS,
    AxiomCheck,
    AxiomReport,
    check_coherence,
    empirical_cvar,
    empirical_var,
    gaussian_cvar,
    mixture_cvar,
    tail_count,
    uniform_pair_source,
)

# frozen closed-form values (mu, sigma, tau) -> CVaR
GAUSS_QUARTER_NEG05 = -0.5635553145368214
GAUSS_QUARTER_NEG07 = -0.7635553145368214
GAUSS_DECILE_NEG07 = -0.7877491659662433
STD_QUARTER = -1.271106290736428
# frozen numerical-oracle values for the half/half two-Gaussian mixtures
MIX_LOW_FAR = -1.0398942280394063   # means -1.0 / -0.2, sigma 0.05, tau 0.25
MIX_LOW_NEAR = -1.2898942333862973  # means -1.25 / -1.0
MIX_LOW_FLAT = -0.9398942280401432  # means -0.9 / -0.5

finite_floats = st.floats(min_value=-1e6, max_value=1e6,
                          allow_nan=False, allow_infinity=False)
sample_sets = st.lists(finite_floats, min_size=1, max_size=120)
taus = st.floats(min_value=1e-6, max_value=1.0 - 1e-6)


class TestTailCount:
    def test_half_of_four(self):
        assert tail_count(4, 0.5) == 2

    def test_rounds_up(self):
        assert tail_count(10, 0.31) == 4

    def test_at_least_one(self):
        assert tail_count(1000000, 1e-9) == 1


class TestEmpiricalVar:
    def test_half_of_four(self):
        assert empirical_var([1.0, 2.0, 3.0, 4.0], 0.5) == 2.0

    def test_constant_samples(self):
        assert empirical_var([5.5] * 7, 0.3) == 5.5

    def test_third_of_ten(self):
        assert empirical_var(list(range(10)), 0.3) == 2.0

    def test_order_independent(self):
        rng = np.random.default_rng(0)
        data = rng.permutation(np.arange(10.0))
        assert empirical_var(data, 0.3) == 2.0

    def test_rejects_empty(self):
        with pytest.raises(ValueError, match="empty"):
            empirical_var([], 0.5)

    def test_rejects_non_finite(self):
        with pytest.raises(ValueError, match="non-finite"):
            empirical_var([1.0, np.nan], 0.5)
        with pytest.raises(ValueError, match="non-finite"):
            empirical_var([1.0, np.inf], 0.5)

    @pytest.mark.parametrize("tau", [0.0, 1.0, -0.1, 1.5])
    def test_rejects_tau_outside_open_interval(self, tau):
        with pytest.raises(ValueError, match="tau"):
            empirical_var([1.0, 2.0], tau)

    @given(sample_sets, taus)
    def test_result_is_a_sample(self, values, tau):
        assert empirical_var(values, tau) in values


class TestEmpiricalCvar:
    def test_half_of_four(self):
        assert empirical_cvar([1.0, 2.0, 3.0, 4.0], 0.5) == 1.5

    def test_constant_samples(self):
        assert empirical_cvar([2.25] * 9, 0.77) == 2.25

    def test_quarter_of_four(self):
        assert empirical_cvar([1.0, 2.0, 3.0, 4.0], 0.25) == 1.0

    def test_rejects_empty(self):
        with pytest.raises(ValueError, match="empty"):
            empirical_cvar([], 0.5)

    @given(sample_sets, taus)
    def test_cvar_below_var_below_max(self, values, tau):
        cvar = empirical_cvar(values, tau)
        var = empirical_var(values, tau)
        assert cvar <= var <= max(values)

    @given(sample_sets, taus)
    def test_cvar_below_mean(self, values, tau):
        # mean of the worst k cannot beat the mean of everything
        assert empirical_cvar(values, tau) <= np.mean(values) + 4 * EPS * (
            1 + np.abs(values).max()
        )

    @given(sample_sets, st.data())
    def test_nondecreasing_in_tau(self, values, data):
        lo = data.draw(taus)
        hi = data.draw(taus)
        if lo > hi:
            lo, hi = hi, lo
        assert empirical_cvar(values, lo) <= empirical_cvar(values, hi) + 4 * EPS * (
            1 + np.abs(values).max()
        )

    @given(sample_sets, taus,
           st.floats(min_value=-1e3, max_value=1e3, allow_nan=False))
    @settings(deadline=None)
    def test_translation_invariance_tight(self, values, tau, c):
        arr = np.asarray(values)
        got = empirical_cvar(arr + c, tau)
        expected = empirical_cvar(arr, tau) + c
        scale = max(1.0, abs(expected), float(np.abs(arr).max()) + abs(c))
        assert abs(got - expected) <= 8 * EPS * scale

    @given(sample_sets, taus, st.floats(min_value=0.0, max_value=1e3))
    @settings(deadline=None)
    def test_positive_homogeneity_tight(self, values, tau, lam):
        arr = np.asarray(values)
        got = empirical_cvar(lam * arr, tau)
        expected = lam * empirical_cvar(arr, tau)
        scale = max(1.0, abs(expected), lam * float(np.abs(arr).max()))
        assert abs(got - expected) <= 8 * EPS * scale

    @given(sample_sets, taus,
           st.floats(min_value=-1e3, max_value=1e3, allow_nan=False))
    @settings(deadline=None)
    def test_var_translation_invariance_tight(self, values, tau, c):
        arr = np.asarray(values)
        got = empirical_var(arr + c, tau)
        expected = empirical_var(arr, tau) + c
        scale = max(1.0, abs(expected), float(np.abs(arr).max()) + abs(c))
        assert abs(got - expected) <= 8 * EPS * scale


class TestGaussianCvar:
    def test_zero_sigma_is_point_mass(self):
        assert gaussian_cvar(-0.7, 0.0, 0.3) == -0.7

    def test_quarter_tail(self):
        assert gaussian_cvar(-0.5, 0.05, 0.25) == pytest.approx(GAUSS_QUARTER_NEG05, abs=1e-12)
        assert gaussian_cvar(-0.5, 0.05, 0.25) == pytest.approx(-0.5636, abs=1e-4)

    def test_bottom_decile(self):
        assert gaussian_cvar(-0.7, 0.05, 0.1) == pytest.approx(GAUSS_DECILE_NEG07, abs=1e-12)
        assert gaussian_cvar(-0.7, 0.05, 0.1) == pytest.approx(-0.7877, abs=1e-4)

    def test_standard_normal_quarter(self):
        assert gaussian_cvar(0.0, 1.0, 0.25) == pytest.approx(STD_QUARTER, abs=1e-12)

    def test_tau_near_one_approaches_mean(self):
        # recompute the closed form from scratch as a drift guard
        mu, sigma, tau = -0.3, 0.05, 0.999
        reference = mu - sigma * norm.pdf(norm.ppf(tau)) / tau
        assert abs(gaussian_cvar(mu, sigma, tau) - reference) <= 0.01 * sigma
        assert abs(gaussian_cvar(mu, sigma, tau) - mu) <= 0.01

    @pytest.mark.parametrize("mu,sigma,tau", [(-0.5, 0.05, 0.25), (0.3, 1.7, 0.6), (2.0, 0.4, 0.08)])
    def test_matches_quadrature(self, mu, sigma, tau):
        # independent route: integrate the tail expectation directly
        q = norm.ppf(tau, loc=mu, scale=sigma)
        tail, _ = quad(lambda x: x * norm.pdf(x, loc=mu, scale=sigma),
                       mu - 13 * sigma, q, epsabs=1e-12)
        assert gaussian_cvar(mu, sigma, tau) == pytest.approx(tail / tau, abs=1e-8)

    def test_rejects_bad_inputs(self):
        with pytest.raises(ValueError, match="sigma"):
            gaussian_cvar(0.0, -0.1, 0.5)
        with pytest.raises(ValueError, match="tau"):
            gaussian_cvar(0.0, 1.0, 0.0)


class TestMixtureCvar:
    def test_single_component_matches_gaussian(self):
        for mu, sigma, tau in [(-0.4, 0.07, 0.3), (1.2, 0.5, 0.25), (-2.0, 0.05, 0.9)]:
            assert mixture_cvar([(mu, sigma)], [1.0], tau) == pytest.approx(
                gaussian_cvar(mu, sigma, tau), abs=1e-6
            )

    def test_far_components(self):
        got = mixture_cvar([(-1.0, 0.05), (-0.2, 0.05)], (0.5, 0.5), 0.25)
        assert got == pytest.approx(MIX_LOW_FAR, abs=1e-9)
        assert got == pytest.approx(-1.0399, abs=1e-3)
        # the lower quarter of the mass sits entirely in the low component,
        # so this equals that component's median-tail CVaR
        assert got == pytest.approx(gaussian_cvar(-1.0, 0.05, 0.5), abs=1e-6)

    def test_near_components(self):
        assert mixture_cvar([(-1.25, 0.05), (-1.0, 0.05)], (0.5, 0.5), 0.25) == pytest.approx(
            MIX_LOW_NEAR, abs=1e-9
        )

    def test_flat_components(self):
        assert mixture_cvar([(-0.9, 0.05), (-0.5, 0.05)], (0.5, 0.5), 0.25) == pytest.approx(
            MIX_LOW_FLAT, abs=1e-9
        )

    def test_weight_order_matters_not(self):
        a = mixture_cvar([(-1.0, 0.1), (0.5, 0.2)], (0.3, 0.7), 0.4)
        b = mixture_cvar([(0.5, 0.2), (-1.0, 0.1)], (0.7, 0.3), 0.4)
        assert a == pytest.approx(b, abs=1e-9)

    def test_rejects_bad_inputs(self):
        with pytest.raises(ValueError, match="at least one"):
            mixture_cvar([], [], 0.5)
        with pytest.raises(ValueError, match="weights"):
            mixture_cvar([(0.0, 1.0)], [0.5], 0.5)
        with pytest.raises(ValueError, match="sum to 1"):
            mixture_cvar([(0.0, 1.0), (1.0, 1.0)], [0.7, 0.7], 0.5)
        with pytest.raises(ValueError, match="nonnegative"):
            mixture_cvar([(0.0, 1.0), (1.0, 1.0)], [1.5, -0.5], 0.5)
        with pytest.raises(ValueError, match="sigmas"):
            mixture_cvar([(0.0, 0.0), (1.0, 1.0)], [0.5, 0.5], 0.5)
        with pytest.raises(ValueError, match="tau"):
            mixture_cvar([(0.0, 1.0)], [1.0], 1.0)


class TestCheckCoherence:
    def test_mean_is_linear(self):
        report = check_coherence(lambda v: float(np.mean(v)), trials=100, tol=1e-9, seed=3)
        assert report.check("translation_invariance").violations == 0
        assert report.check("positive_homogeneity").violations == 0
        assert report.passed

    def test_cvar_clean_at_half(self):
        report = check_coherence(lambda v: empirical_cvar(v, 0.5), trials=200, seed=11)
        assert report.passed
        assert report.orientation == "reward"
        assert report.check("superadditivity").tol == 1e-9

    def test_shifted_pair_monotone_with_zero_tol(self):
        def shifted_pair(rng):
            x = rng.uniform(-5, 5, 64)
            return x, x + 1.0

        report = check_coherence(lambda v: empirical_cvar(v, 0.3),
                                 pair_source=shifted_pair, trials=1, tol=0.0, seed=0)
        assert report.check("monotonicity").violations == 0

    def test_loss_orientation_flips_additivity(self):
        # upper-tail mean of losses is the convex, subadditive twin
        def loss_cvar(v):
            return -empirical_cvar(-np.asarray(v), 0.3)

        report = check_coherence(loss_cvar, trials=200, orientation="loss", seed=5)
        assert report.check("subadditivity").violations == 0
        assert report.passed

    def test_broken_functional_is_caught(self):
        report = check_coherence(lambda v: float(np.min(v)) ** 2, trials=50, seed=9)
        assert not report.passed
        ti = report.check("translation_invariance")
        assert ti.violations > 0
        assert ti.worst > 0

    def test_counts_bounded_by_trials(self):
        report = check_coherence(lambda v: float(np.min(v)) ** 2, trials=25, seed=1)
        for chk in report.checks:
            assert 0 <= chk.violations <= chk.trials == 25
            assert chk.worst >= 0

    def test_deterministic_given_seed(self):
        f = lambda v: empirical_cvar(v, 0.25)
        assert check_coherence(f, trials=50, seed=42) == check_coherence(f, trials=50, seed=42)

    def test_rejects_bad_arguments(self):
        f = lambda v: empirical_cvar(v, 0.5)
        with pytest.raises(ValueError, match="trials"):
            check_coherence(f, trials=0)
        with pytest.raises(ValueError, match="orientation"):
            check_coherence(f, orientation="sideways")
        with pytest.raises(ValueError, match="tolerances"):
            check_coherence(f, tol=-1.0)
        with pytest.raises(ValueError, match="n_min"):
            uniform_pair_source(n_min=0)

    def test_axiom_check_validates_itself(self):
        with pytest.raises(ValueError, match="violations"):
            AxiomCheck(name="x", trials=2, violations=3, worst=0.0, tol=0.0)
        with pytest.raises(ValueError, match="worst"):
            AxiomCheck(name="x", trials=2, violations=0, worst=-1.0, tol=0.0)

    def test_report_lookup(self):
        report = check_coherence(lambda v: empirical_cvar(v, 0.5), trials=1, seed=0)
        with pytest.raises(KeyError):
            report.check("no_such_axiom")
        assert isinstance(report, AxiomReport)
