"""Quick equivalence checks of the inference code against the oracles."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .abc import AbcConfig, run_abc_problem
from .mcmc import ekf_forward_filter, variance_posterior
from .model import DelayParams, NoiseParams, RateParams, ThetaParams, observe, study_schedule
from .model import simulate_trajectory
from .oracles import LinearSSM, NormalToyProblem, exact_kalman, normal_normal_posterior
from .priors import scaled_inv_chi2


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str


def linear_theta(beta=0.01, alpha=0.002, tau_v=10, tau_m=5):
    """A parameter set of the linear reduction (``delta = rho = gamma = 0``)."""
    return ThetaParams(RateParams(beta, 0.0, alpha, 0.0, 0.0), DelayParams(tau_v, tau_m),
                       NoiseParams(0.4, 0.08, 0.05, 0.01), 0.3)


def check_filter(rng, tol=1e-10):
    theta = linear_theta()
    traj = simulate_trajectory(theta, 0.5, 280, 1.0, rng)
    obs = observe(traj, study_schedule(), theta.noise, rng)
    m0 = obs.initial_m()
    ekf = ekf_forward_filter(theta, obs, m0)
    ref = exact_kalman(LinearSSM.from_theta(theta, m0), obs.without_initial_m())
    err = max(np.max(np.abs(ekf.filtered_mean - ref.filtered_mean)),
              np.max(np.abs(ekf.filtered_cov - ref.filtered_cov)))
    return CheckResult("filter vs exact Kalman", bool(err <= tol), f"max abs diff {err:.2e}")


def check_toy_abc(rng, accepted=2000):
    y = 1.0 + rng.standard_normal(10)
    problem = NormalToyProblem(y, 0.0, 4.0, 1.0)
    ws = run_abc_problem(problem, AbcConfig(accepted=accepted, quantile=0.01),
                         int(rng.integers(2 ** 63)))
    mean, var = normal_normal_posterior(0.0, 4.0, y.mean(), 1.0, y.size)
    est = float(ws.weights @ ws.values[:, 0])
    se = math.sqrt(var / accepted)
    z = abs(est - mean) / se
    return CheckResult("toy ABC vs conjugate posterior", bool(z < 4.0),
                       f"mean {est:.4f} vs {mean:.4f} ({z:.1f} SE)")


def check_conjugacy(rng, n_draws=100_000):
    nu0, s2, n, sse = 5, 0.4, 9, 3.7
    nu, scale = variance_posterior(nu0, s2, n, sse)
    exact = nu == nu0 + n and math.isclose(scale, (nu0 * s2 + sse) / (nu0 + n), rel_tol=1e-15)
    draws = scaled_inv_chi2(nu, scale, rng, n_draws)
    target = nu * scale / (nu - 2)
    rel = abs(draws.mean() / target - 1.0)
    return CheckResult("variance conjugacy", bool(exact and rel < 0.01),
                       f"closed form {'ok' if exact else 'mismatch'}, mean rel err {rel:.4f}")


def run_self_check(seed=0):
    """Run every check with independent streams of ``seed``."""
    streams = np.random.SeedSequence(seed).spawn(3)
    checks = (check_filter, check_toy_abc, check_conjugacy)
    return [fn(np.random.default_rng(s)) for fn, s in zip(checks, streams)]
