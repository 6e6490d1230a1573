import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sparsefit.errors import DivisionError, InvalidScheduleError, ValidationError
from sparsefit.model import (REFERENCE_SETS, DelayParams, NoiseParams, ObservationSet, RateParams,
                             ThetaParams, carrying_capacities, derived_quantities, dimensionless_arrays,
                             euler_step,
                             integrate_ode, observe, study_schedule, simulate_trajectory,
                             reference_theta, to_dimensionless)

SET0_RATES = RateParams(0.05, 0.05 / 30, 0.001, 0.001, 0.001 / 5)


def theta_with(rates=SET0_RATES, tau_v=5, tau_m=30, kappa=(0.025, 0.005), v0=0.5):
    return ThetaParams(rates, DelayParams(tau_v, tau_m), NoiseParams(0.4, 0.08, *kappa), v0)


class TestEulerStep:
    def test_post_onset_growth(self):
        v, _ = euler_step(10.0, 1.0, theta_with(), t=100, h=1.0)
        assert v == pytest.approx(10 + 0.5 - 0.05 / 30 * 100, abs=1e-12)
        assert v == pytest.approx(10.333333333333, abs=1e-9)

    def test_fixed_point(self):
        v, _ = euler_step(30.0, 1.0, theta_with(), t=100, h=1.0)
        assert abs(v - 30.0) == 0.0

    @pytest.mark.parametrize("t", [1, 3, 5])
    def test_pre_onset_identity(self, t):
        v, m = euler_step(0.7, 2.5, theta_with(), t=t, h=1.0)
        assert (v, m) == (0.7, 2.5)

    def test_clamped(self):
        v, m = euler_step(0.1, 0.1, theta_with(), t=100, h=1.0, noise_v=-5.0, noise_m=500.0)
        assert (v, m) == (0.0, 100.0)

    def test_nonfinite_rejected(self):
        with pytest.raises(ValidationError):
            euler_step(math.nan, 1.0, theta_with(), 10, 1.0)


class TestSimulate:
    def test_set0_shape(self, rng):
        traj = simulate_trajectory(reference_theta(0), 0.5, 280, 1.0, rng)
        assert traj.v.shape == (281,)
        # sigmoidal V rise towards K_V = 30, delayed M rise
        assert traj.v[-1] == pytest.approx(30, abs=3)
        assert traj.v[:5].max() < 2
        assert traj.m[-1] > traj.m[0] + 1

    def test_vanishing_noise_matches_recursion(self, rng):
        theta = theta_with(kappa=(1e-12, 1e-12))
        traj = simulate_trajectory(theta, 0.5, 280, 1.0, rng)
        v, m = theta.v0, 0.5
        for k in range(1, 281):
            v, m = euler_step(v, m, theta, k, 1.0)
            assert abs(traj.v[k] - v) < 1e-4 and abs(traj.m[k] - m) < 1e-4

    def test_seed_determinism(self):
        a = simulate_trajectory(reference_theta(1), 0.5, 280, 1.0, np.random.default_rng(5))
        b = simulate_trajectory(reference_theta(1), 0.5, 280, 1.0, np.random.default_rng(5))
        assert np.array_equal(a.v, b.v) and np.array_equal(a.m, b.m)

    def test_pre_onset_flat_without_noise(self, rng):
        theta = theta_with(tau_v=12, tau_m=9, kappa=(1e-300, 1e-300))
        traj = simulate_trajectory(theta, 0.8, 280, 1.0, rng)
        assert np.all(traj.v[:13] == theta.v0)
        assert np.all(traj.m[:22] == 0.8)

    @pytest.mark.parametrize("index", range(4))
    def test_states_bounded(self, index, rng):
        theta = reference_theta(index).replace(noise=NoiseParams(0.4, 0.08, 5.0, 5.0))
        traj = simulate_trajectory(theta, 0.5, 280, 1.0, rng)
        assert traj.v.min() >= 0 and traj.v.max() <= 100
        assert traj.m.min() >= 0 and traj.m.max() <= 100

    def test_bad_m0(self, rng):
        with pytest.raises(ValidationError):
            simulate_trajectory(reference_theta(0), 101.0, 280, 1.0, rng)


class TestObserve:
    def test_study_schedule_counts(self, rng):
        traj = simulate_trajectory(reference_theta(0), 0.5, 280, 1.0, rng)
        obs = observe(traj, study_schedule(), reference_theta(0).noise, rng)
        assert obs.v_values.size == 4 and obs.m_values.size == 5
        assert list(obs.v_days) == [7, 91, 175, 259]
        assert list(obs.m_days) == [0, 28, 112, 196, 280]

    def test_zero_noise_equals_latent(self, rng):
        traj = simulate_trajectory(reference_theta(0), 0.5, 280, 1.0, rng)
        obs = observe(traj, study_schedule(), NoiseParams(1e-300, 1e-300, 1, 1), rng)
        assert np.allclose(obs.v_values, traj.v[[7, 91, 175, 259]], atol=1e-12)
        assert np.allclose(obs.m_values, traj.m[[0, 28, 112, 196, 280]], atol=1e-12)

    def test_empty_schedule(self, rng):
        traj = simulate_trajectory(reference_theta(0), 0.5, 280, 1.0, rng)
        assert len(observe(traj, [], reference_theta(0).noise, rng)) == 0

    @pytest.mark.parametrize("day", [3.5, 281, -1])
    def test_off_grid(self, day, rng):
        traj = simulate_trajectory(reference_theta(0), 0.5, 280, 1.0, rng)
        with pytest.raises(InvalidScheduleError):
            observe(traj, [(day, "V")], reference_theta(0).noise, rng)

    def test_duplicates_rejected(self):
        with pytest.raises(ValidationError):
            ObservationSet.from_records([(7, "V", 1.0), (7, "V", 2.0)])


class TestOde:
    def test_set0_asymptote(self):
        rates = RateParams.from_capacities(0.05, 30, 0.001, 0.001, 5)
        traj = integrate_ode(rates, 0.5, 0.5, 280, dt=0.05)
        assert traj.v[-1] == pytest.approx(30, rel=1e-3)

    def test_m_constant_without_drive(self):
        traj = integrate_ode(RateParams(0.05, 0.05 / 30, 0, 0, 0), 0.5, 2.0, 280, dt=0.1)
        assert np.all(traj.m == 2.0)

    def test_logistic_closed_form(self):
        beta, K = 0.05, 30.0
        traj = integrate_ode(RateParams(beta, beta / K, 0, 0, 0), 0.5, 0.5, 280, dt=0.01)
        t = np.arange(281.0)
        exact = K / (1 + (K / 0.5 - 1) * np.exp(-beta * t))
        assert np.max(np.abs(traj.v - exact)) < 1e-6

    @pytest.mark.parametrize("index", range(4))
    def test_discretization_converges(self, index):
        # both equations switched on at t = 1 in the two models
        b, dl, a, r, g = REFERENCE_SETS[index][:5]
        rates = RateParams(b, dl, a, r, g)
        delays = DelayParams(1, 1)
        h = 0.01
        theta = ThetaParams(rates, delays, NoiseParams(1, 1, 1e-300, 1e-300), 0.5)
        fine = simulate_trajectory(theta, 0.5, 280, h, np.random.default_rng(0))
        ode = integrate_ode(rates, 0.5, 0.5, 280, dt=0.001, delays=delays)
        idx = np.arange(0, fine.v.size, 100)
        scale = max(ode.v.max(), ode.m.max())
        dev = max(np.abs(fine.v[idx] - ode.v).max(), np.abs(fine.m[idx] - ode.m).max())
        assert dev / scale < 1e-3


class TestDimensionless:
    def test_set0_values(self):
        d = to_dimensionless(theta_with(tau_v=20))
        assert d.psi == pytest.approx(0.6, rel=1e-12)
        assert d.eta == pytest.approx(0.12, rel=1e-12)
        assert d.lambda_V == pytest.approx(1.0, rel=1e-12)

    def test_capacities(self):
        assert carrying_capacities(SET0_RATES) == pytest.approx((30, 5), rel=1e-12)
        assert carrying_capacities(RateParams(0.3, 0.3, 0, 0.1, 0.2))[0] == 1.0

    @pytest.mark.parametrize("rates", [RateParams(0.05, 0, 0.001, 0.001, 0.0002),
                                       RateParams(0.05, 0.001, 0.001, 0.001, 0)])
    def test_zero_divisor(self, rates):
        with pytest.raises(DivisionError):
            carrying_capacities(rates)

    def test_zero_beta(self):
        with pytest.raises(DivisionError):
            to_dimensionless(theta_with(rates=RateParams(0, 0.001, 0.001, 0.001, 0.0002)))

    @settings(max_examples=200, deadline=None)
    @given(st.floats(1e-3, 1e3), st.integers(0, 3),
           st.floats(1, 50), st.floats(1, 50))
    def test_scaling_invariance_property(self, c, index, tau_v, tau_m):
        b, dl, a, r, g = REFERENCE_SETS[index][:5]
        x = dimensionless_arrays(b, dl, a, r, g, tau_v, tau_m)
        y = dimensionless_arrays(c * b, c * dl, c * a, c * r, c * g, tau_v / c, tau_m / c)
        assert np.allclose(x, y, rtol=1e-12, atol=0)

    @pytest.mark.parametrize("c", [0.5, 2.0, 5.0, 10.0])
    @pytest.mark.parametrize("index", range(4))
    def test_scaling_invariance_theta(self, c, index):
        b, dl, a, r, g = REFERENCE_SETS[index][:5]
        base = ThetaParams(RateParams(b, dl, a, r, g), DelayParams(10, 20),
                           NoiseParams(1, 1, 1, 1), 0.1)
        scaled = ThetaParams(RateParams(c * b, c * dl, c * a, c * r, c * g),
                             DelayParams(int(10 / c), int(20 / c)), NoiseParams(1, 1, 1, 1), 0.1)
        x, y = to_dimensionless(base).as_tuple(), to_dimensionless(scaled).as_tuple()
        assert np.allclose(x, y, rtol=1e-12, atol=0)

    def test_derived_columns(self):
        values = np.array([reference_theta(i).to_vector() for i in range(4)])
        d = derived_quantities(values)
        assert np.allclose(d[:, 0], values[:, 0] / values[:, 1], rtol=1e-15)
        for i in range(4):
            assert np.allclose(d[i, 2:], to_dimensionless(reference_theta(i)).as_tuple(), rtol=1e-14)


class TestTypes:
    @pytest.mark.parametrize("bad", [dict(beta=-1.0), dict(beta=0.5, delta=0.001)])
    def test_rate_invariants(self, bad):
        kw = dict(beta=0.05, delta=0.05 / 30, alpha=0.001, rho=0.001, gamma=0.0002) | bad
        with pytest.raises(ValidationError):
            RateParams(**kw)

    @pytest.mark.parametrize("tau", [0, 51, 2.5])
    def test_delay_support(self, tau):
        with pytest.raises(ValidationError):
            DelayParams(tau, 5)

    def test_noise_positive(self):
        with pytest.raises(ValidationError):
            NoiseParams(0.0, 1, 1, 1)

    def test_v0_bound(self):
        with pytest.raises(ValidationError):
            theta_with(v0=0.6)

    def test_vector_roundtrip(self):
        theta = reference_theta(3)
        assert ThetaParams.from_vector(theta.to_vector()) == theta
