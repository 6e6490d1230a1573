import math

import numpy as np
import pytest
from scipy import integrate, stats

from sparsefit.errors import ConfigurationError, ValidationError
from sparsefit.model import PARAM_NAMES, ThetaParams, reference_theta
from sparsefit.priors import (PriorSpec, empirical_prior_cdf, log_prior_array, log_prior_density,
                              sample_prior, sample_prior_array, sample_rates, scaled_inv_chi2,
                              scaled_inv_chi2_logpdf)

SPEC = PriorSpec()


@pytest.fixture(scope="module")
def prior_draws():
    return sample_prior_array(SPEC, np.random.default_rng(7), 1_000_000)


def col(values, name):
    return values[:, PARAM_NAMES.index(name)]


class TestSamplePrior:
    def test_constraints_hold(self, prior_draws):
        assert np.all(col(prior_draws, "beta") / col(prior_draws, "delta") < 100)
        assert np.all(col(prior_draws, "rho") / col(prior_draws, "gamma") < 100)

    def test_tau_mean(self, prior_draws):
        assert col(prior_draws, "tau_v").mean() == pytest.approx(25.5, abs=0.1)

    def test_variance_median_matches_quantile_oracle(self, prior_draws):
        s2 = col(prior_draws, "sigma2_v")
        assert np.all(s2 > 0)
        oracle = stats.invgamma(2.5, scale=2.5 * 0.4).median()
        assert oracle == pytest.approx(0.4596, abs=1e-4)
        assert np.median(s2) == pytest.approx(oracle, rel=0.01)

    def test_draw_is_valid_theta(self, rng):
        assert isinstance(sample_prior(SPEC, rng), ThetaParams)

    def test_impossible_constraint(self):
        with pytest.raises(ConfigurationError):
            PriorSpec(rate_lower=(0.5, 0, 0, 0, 0), rate_upper=(1, 0.001, 1, 1, 1))

    def test_low_acceptance(self, rng):
        # beta in [1 - 1e-6, 1] with beta < delta: acceptance about 5e-7
        spec = PriorSpec(rate_lower=(1 - 1e-6, 0, 0, 0, 0), capacity_cap=1.0)
        with pytest.raises(ConfigurationError):
            sample_rates(spec, rng, 10)


class TestLogPrior:
    def test_v0_outside(self):
        theta = reference_theta(0)
        v = theta.to_vector()
        v[5] = 0.7
        assert log_prior_array(SPEC, v)[0] == -math.inf

    def test_delays_contribute_equally(self):
        a = reference_theta(0)
        b = a.replace(delays=type(a.delays)(17, a.delays.tau_m))
        assert log_prior_density(SPEC, a) == log_prior_density(SPEC, b)

    def test_variance_density_oracle(self):
        mode = 5 * 0.4 / 7
        ref = stats.invgamma(2.5, scale=1.0).logpdf(mode)
        assert scaled_inv_chi2_logpdf(mode, 5, 0.4) == pytest.approx(ref, abs=1e-10)

    def test_constraint_region_matches_sampler(self, rng):
        rates = rng.random((200_000, 5))
        values = np.tile(reference_theta(0).to_vector(), (rates.shape[0], 1))
        values[:, :5] = rates
        inside = (rates[:, 0] < 100 * rates[:, 1]) & (rates[:, 3] < 100 * rates[:, 4])
        assert np.array_equal(np.isfinite(log_prior_array(SPEC, values)), inside)

    def test_importance_reweighting_between_specs(self, rng):
        narrow = PriorSpec(v0_bounds=(0.0, 0.25), variance_scales=(0.2, 0.08, 0.05, 0.01))
        draws = sample_prior_array(SPEC, rng, 400_000)
        logw = log_prior_array(narrow, draws) - log_prior_array(SPEC, draws)
        w = np.exp(logw - logw[np.isfinite(logw)].max())
        w /= w.sum()
        target = sample_prior_array(narrow, rng, 400_000)
        for j in (5, 8):
            assert w @ draws[:, j] == pytest.approx(target[:, j].mean(), rel=0.02)


class TestScaledInvChi2:
    def test_mean(self, rng):
        x = scaled_inv_chi2(5, 0.4, rng, 400_000)
        assert 5 * 0.4 / 3 == pytest.approx(0.6667, abs=1e-4)
        assert x.mean() == pytest.approx(0.6667, rel=0.01)
        assert np.all(x > 0)

    def test_density_integrates_to_one(self):
        total, _ = integrate.quad(lambda x: math.exp(scaled_inv_chi2_logpdf(x, 5, 0.4)),
                                  0, np.inf, limit=200)
        assert total == pytest.approx(1.0, abs=1e-4)

    def test_rejects_bad_parameters(self, rng):
        with pytest.raises(ValidationError):
            scaled_inv_chi2(0, 0.4, rng)


class TestEmpiricalCdf:
    def test_v0_uniform(self, rng):
        cdf = empirical_prior_cdf(SPEC, "v0", 100_000, rng)
        grid = np.linspace(0, 0.5, 501)
        assert np.max(np.abs(cdf(grid) - grid / 0.5)) < 0.005

    @pytest.mark.parametrize("quantity", ["K_V", "eta", "lambda_M"])
    def test_probability_integral_transform(self, quantity, rng):
        cdf = empirical_prior_cdf(SPEC, quantity, 200_000, rng)
        fresh = sample_prior_array(SPEC, rng, 2000)
        from sparsefit.priors import quantity_values
        u = cdf(quantity_values(fresh, quantity))
        assert stats.kstest(u, "uniform").pvalue > 0.01

    def test_minimum_samples(self, rng):
        with pytest.raises(ValidationError):
            empirical_prior_cdf(SPEC, "K_V", 10, rng)

    def test_unknown_quantity(self, rng):
        with pytest.raises(ValidationError):
            empirical_prior_cdf(SPEC, "nope", 100_000, rng)
