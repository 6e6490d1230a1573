import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, stats

from sparsefit.errors import ValidationError
from sparsefit.learnability import (REPORT_NAMES, delay_transform, learnability_report,
                                    log_sd_ratio, relative_entropy)
from sparsefit.mcmc import McmcConfig, run_mcmc
from sparsefit.priors import EmpiricalCdf, PriorSpec, sample_prior_array

SPEC = PriorSpec()


def beta22_kl():
    # KL(Beta(2,2) || U(0,1)) by quadrature
    pdf = stats.beta(2, 2).pdf
    return integrate.quad(lambda x: pdf(x) * math.log(pdf(x)), 0, 1)[0]


class TestRelativeEntropy:
    def test_prior_against_itself(self, rng):
        assert abs(relative_entropy(rng.random(100_000))) < 0.02

    def test_point_mass(self, rng):
        H = relative_entropy(np.full(1_000_000, 0.123))
        assert H == pytest.approx(math.log(50), abs=1e-3)
        assert H < math.log(50)

    def test_point_mass_finite_at_minimum(self):
        assert math.isfinite(relative_entropy(np.zeros(1000)))

    def test_half_range(self, rng):
        assert relative_entropy(rng.random(1_000_000) * 0.5) == pytest.approx(math.log(2), abs=0.01)

    def test_beta22_kl_oracle(self):
        assert beta22_kl() == pytest.approx(0.12509, abs=1e-5)

    def test_beta22_estimate(self, rng):
        H = relative_entropy(rng.beta(2, 2, 1_000_000))
        assert abs(H - beta22_kl()) < 0.01

    def test_too_few(self, rng):
        with pytest.raises(ValidationError):
            relative_entropy(rng.random(999))

    def test_monotone_reparameterization(self, rng):
        lo, hi = 1e-4, 1.0
        post = rng.uniform(lo, hi, 20_000) ** 2 * 0.6 + 0.01
        prior = rng.uniform(lo, hi, 200_000)
        H1 = relative_entropy(post, EmpiricalCdf.from_samples(prior))
        H2 = relative_entropy(np.log(post), EmpiricalCdf.from_samples(np.log(prior)))
        assert abs(H1 - H2) < 0.02

    @settings(max_examples=25, deadline=None)
    @given(st.floats(0.0, 1.0), st.floats(0.01, 1.0), st.integers(0, 2 ** 32))
    def test_nonnegative_and_bounded(self, start, width, seed):
        x = start + width * np.random.default_rng(seed).random(2000)
        H = relative_entropy(np.clip(x, 0, 1))
        assert 0.0 <= H <= math.log(50)


class TestLogSdRatio:
    def test_identical(self, rng):
        x = rng.normal(size=100)
        assert log_sd_ratio(x, x) == (0.0, False)

    def test_half(self, rng):
        x = rng.normal(size=100)
        assert log_sd_ratio(0.5 * x, x)[0] == pytest.approx(math.log(0.5), rel=1e-12)

    @pytest.mark.parametrize("c", [1e-3, 0.5, 7.0, 1e4])
    def test_scale_invariant(self, rng, c):
        a, b = rng.normal(size=50), rng.normal(size=80)
        assert log_sd_ratio(c * a, c * b)[0] == pytest.approx(log_sd_ratio(a, b)[0], abs=1e-12)

    def test_zero_sd_flagged(self, rng):
        value, flagged = log_sd_ratio(np.ones(10), rng.normal(size=10))
        assert value == -math.inf and flagged

    def test_empty(self):
        with pytest.raises(ValidationError):
            log_sd_ratio([], [1.0])


@pytest.fixture(scope="module")
def prior_report():
    rng = np.random.default_rng(8)
    post = sample_prior_array(SPEC, rng, 20_000)
    return learnability_report(post, SPEC, rng, n_prior=400_000)


class TestReport:
    def test_stable_order(self, prior_report):
        assert prior_report.names() == list(REPORT_NAMES)
        assert len(REPORT_NAMES) == 14

    def test_prior_resample_learns_nothing(self, prior_report):
        for e in prior_report.entries:
            assert e.H < 0.05, e.name
            assert abs(e.log_sd_ratio) < 0.05, e.name

    def test_delays_on_unit_bins(self, prior_report):
        assert prior_report["tau_v"].bins == 50
        assert prior_report["beta"].bins == 50

    def test_delay_transform_centres(self):
        centres = delay_transform(np.arange(1, 51))
        assert np.all(np.floor(centres * 50) == np.arange(50))

    def test_needs_rng(self):
        with pytest.raises(ValidationError):
            learnability_report(np.zeros((1000, 12)), SPEC)

    def test_rates_beat_delays_on_informative_data(self, synthetic_subject):
        _, _, obs = synthetic_subject
        chain = run_mcmc(obs, SPEC, McmcConfig(iterations=5000, burn_in=1500),
                         np.random.default_rng(4))
        report = learnability_report(chain.values, SPEC, np.random.default_rng(5), 200_000)
        assert report["beta"].H > report["tau_v"].H
