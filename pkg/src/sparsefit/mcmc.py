"""First stage: Gibbs/Metropolis sampler built on a linearized path filter.

Each iteration draws a latent path from the linearized Gaussian model given
the current parameters, then updates the rates, variances, delays and initial
viral level from their conditionals given that path under the exact
stochastic model.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ._backend import kernels
from ._random import reflect_delay, truncated_normal
from .errors import (ComputationError, FilterDivergenceError, StructuralError,
                     ValidationError)
from .model import (PARAM_NAMES, RATE_NAMES, STATE_MAX, DelayParams, LatentTrajectory,
                    NoiseParams, RateParams, ThetaParams, n_steps, onset_steps)
from .priors import PriorSpec, sample_prior_array, scaled_inv_chi2

INIT_VAR = 1e-6
PSD_TOL = 1e-8
DELAY_WINDOW = 3
CAP_MARGIN = 1e-12


def _lag_index(dim):
    # with tau_M = 1 the register holds no V lag, so the drive is V itself
    return dim - 1 if dim >= 3 else 0


def build_transition(theta, z_prev, t, step=1.0):
    """Linearized transition matrix and evolution covariance for one step.

    Parameters
    ----------
    theta : ThetaParams
    z_prev : array_like
        Extended state ``(V, M, V lags...)`` at ``t - step``; its length must
        be ``tau_m + 1``.
    t : float
        Time at the end of the step (days).
    step : float

    Returns
    -------
    H, W : ndarray
        ``(d, d)`` transition and diagonal noise covariance.
    """
    z = np.asarray(z_prev, dtype=float)
    dim = theta.delays.tau_m + 1
    if z.shape != (dim,):
        raise StructuralError(f"extended state must have length {dim}, got {z.shape}")
    r = theta.rates
    lag = _lag_index(dim)
    H = np.zeros((dim, dim))
    H[0, 0] = 1.0 if t <= theta.delays.tau_v else 1.0 + step * (r.beta - r.delta * z[0])
    if t <= theta.delays.tau_v + theta.delays.tau_m:
        H[1, 1] = 1.0
    else:
        H[1, 1] = 1.0 + step * (r.rho * z[lag] - r.gamma * z[1] * z[lag])
        H[1, lag] += step * r.alpha
    if dim >= 3:
        H[2, 0] = 1.0
        for i in range(3, dim):
            H[i, i - 1] = 1.0
    W = np.zeros((dim, dim))
    W[0, 0] = theta.noise.kappa2_v
    W[1, 1] = theta.noise.kappa2_m
    return H, W


@dataclass
class FilterSummary:
    """Output of the forward filter on grid ``0, h, ..., T``.

    ``a``, ``b``, ``c`` hold the linearization coefficients used for the step
    into grid point ``k + 1``. Covariance arrays are present only when the
    filter was asked to store them.
    """

    theta: ThetaParams
    m0: float
    step: float
    horizon: float
    obs_v: np.ndarray
    obs_m: np.ndarray
    a: np.ndarray
    b: np.ndarray
    c: np.ndarray
    filtered_mean: np.ndarray
    predicted_mean: np.ndarray | None = None
    predicted_cov: np.ndarray | None = None
    filtered_cov: np.ndarray | None = None
    init_var: float = INIT_VAR

    @property
    def dim(self):
        return self.theta.delays.tau_m + 1

    def transition(self, k):
        """Dense transition matrix used for the step into grid point ``k``."""
        dim = self.dim
        lag = _lag_index(dim)
        H = np.zeros((dim, dim))
        H[0, 0] = self.a[k - 1]
        H[1, 1] = self.b[k - 1]
        H[1, lag] += self.c[k - 1]
        if dim >= 3:
            H[2, 0] = 1.0
            for i in range(3, dim):
                H[i, i - 1] = 1.0
        return H


def _grid_obs(obs, horizon, step):
    obs_v, obs_m = obs.grid_arrays(horizon, step)
    obs_m[0] = np.nan  # day-0 M fixes M_0 and is not reused
    return np.ascontiguousarray(obs_v), np.ascontiguousarray(obs_m)


def ekf_forward_filter(theta, obs, m0, horizon=280, step=1.0, store_covariances=True,
                       init_var=INIT_VAR):
    """Run the extended-state linearized Kalman filter.

    The transition at each step is evaluated at the current filtered mean; on
    observation days only the observed components are updated.

    Raises
    ------
    FilterDivergenceError
        If a covariance becomes non-finite or indefinite beyond ``1e-8``.
    """
    obs_v, obs_m = _grid_obs(obs, horizon, step)
    return _filter_arrays(theta, m0, horizon, step, obs_v, obs_m, store_covariances, init_var)


def _filter_arrays(theta, m0, horizon, step, obs_v, obs_m, store_covariances, init_var):
    n = obs_v.shape[0] - 1
    r, d, e = theta.rates, theta.delays, theta.noise
    dim = d.tau_m + 1
    a = np.empty(n)
    b = np.empty(n)
    c = np.empty(n)
    filt = np.empty((n + 1, dim))
    pred_mean = pred_cov = filt_cov = None
    if store_covariances:
        pred_mean = np.empty((n + 1, dim))
        pred_cov = np.empty((n + 1, dim, dim))
        filt_cov = np.empty((n + 1, dim, dim))
    status = kernels.ekf_filter(
        r.beta, r.delta, r.alpha, r.rho, r.gamma,
        onset_steps(d.tau_v, step), onset_steps(d.tau_v + d.tau_m, step), d.tau_m,
        e.kappa2_v, e.kappa2_m, e.sigma2_v, e.sigma2_m, theta.v0, float(m0), float(step),
        obs_v, obs_m, init_var, a, b, c, filt, pred_mean, pred_cov, filt_cov)
    if status >= 0:
        raise FilterDivergenceError(int(status))
    if store_covariances:
        for k in range(n + 1):
            if np.linalg.eigvalsh(filt_cov[k])[0] < -PSD_TOL:
                raise FilterDivergenceError(k)
    return FilterSummary(theta, float(m0), float(step), float(horizon), obs_v, obs_m,
                         a, b, c, filt, pred_mean, pred_cov, filt_cov, init_var)


def ffbs_sample(summary, rng):
    """Draw a latent path from the linearized model given the data.

    The whole-path Gaussian conditional (the distribution that forward
    filtering followed by backward sampling targets) is factorized in banded
    form and sampled directly. ``(V, M)`` are clamped to ``[0, 100]``; the
    result is flagged ``jittered`` if a ``1e-10`` diagonal jitter was needed.
    """
    theta = summary.theta
    tau_m = theta.delays.tau_m
    n = summary.a.shape[0]
    size = 2 * (n + 1) + tau_m - 1
    normals = rng.standard_normal(size)
    out_v = np.empty(n + 1)
    out_m = np.empty(n + 1)
    e = theta.noise
    status = kernels.sample_path(summary.a, summary.b, summary.c, tau_m, e.kappa2_v,
                                 e.kappa2_m, e.sigma2_v, e.sigma2_m, theta.v0, summary.m0,
                                 summary.init_var, summary.obs_v, summary.obs_m, normals,
                                 out_v, out_m)
    if status == 2:
        raise FilterDivergenceError(n, "path precision is not positive definite")
    return LatentTrajectory(summary.step, summary.horizon, out_v, out_m, jittered=status == 1)


# ---------------------------------------------------------------- rate updates

def _increments(traj, theta):
    """Design pieces of the exact evolution equations along a path."""
    h = traj.step
    v_prev, m_prev = traj.v[:-1], traj.m[:-1]
    dv = np.diff(traj.v)
    dm = np.diff(traj.m)
    k = np.arange(1, dv.size + 1)
    post_v = k > onset_steps(theta.delays.tau_v, h)
    post_m = k > onset_steps(theta.delays.tau_v + theta.delays.tau_m, h)
    return h, v_prev, m_prev, dv, dm, post_v, post_m


def rate_sufficient_stats(traj, theta, name):
    """Gaussian full conditional of one rate given the path, before truncation.

    Returns
    -------
    precision, mean : float
        ``mean`` is ``nan`` when ``precision`` is zero (no informative steps).
    """
    h, v, m, dv, dm, post_v, post_m = _increments(traj, theta)
    r = theta.rates
    if name in ("beta", "delta"):
        xs = {"beta": h * v, "delta": -h * v * v}
        resid = dv - r.beta * xs["beta"] - r.delta * xs["delta"]
        mask, var = post_v, theta.noise.kappa2_v
    elif name in ("alpha", "rho", "gamma"):
        xs = {"alpha": h * v, "rho": h * v * m, "gamma": -h * v * m * m}
        resid = dm - r.alpha * xs["alpha"] - r.rho * xs["rho"] - r.gamma * xs["gamma"]
        mask, var = post_m, theta.noise.kappa2_m
    else:
        raise ValidationError(f"not a rate: {name!r}")
    x = xs[name][mask]
    y = resid[mask] + getattr(r, name) * x
    sxx = float(x @ x)
    if sxx == 0.0:
        return 0.0, math.nan
    return sxx / var, float(x @ y) / sxx


def rate_interval(name, rates, spec):
    """Support of one rate given the others: prior box and capacity cap."""
    lo, hi = spec.bounds(name)
    cap = spec.capacity_cap
    # the margin keeps the strict ratio constraint true after rounding
    if name == "beta":
        hi = min(hi, cap * rates.delta * (1.0 - CAP_MARGIN))
    elif name == "delta":
        lo = max(lo, rates.beta / cap * (1.0 + CAP_MARGIN))
    elif name == "rho":
        hi = min(hi, cap * rates.gamma * (1.0 - CAP_MARGIN))
    elif name == "gamma":
        lo = max(lo, rates.rho / cap * (1.0 + CAP_MARGIN))
    return lo, hi


def gibbs_update_rates(traj, theta, spec, rng, counters=None):
    """One systematic scan over ``beta, delta, alpha, rho, gamma``.

    Each rate is drawn from its truncated-normal full conditional. If the
    truncation interval is empty the current value is kept and
    ``counters['empty_interval']`` is incremented.
    """
    current = theta
    for name in RATE_NAMES:
        lo, hi = rate_interval(name, current.rates, spec)
        if not lo < hi:
            if counters is not None:
                counters["empty_interval"] = counters.get("empty_interval", 0) + 1
            continue
        prec, mean = rate_sufficient_stats(traj, current, name)
        sd = 1.0 / math.sqrt(prec) if prec > 0 else math.inf
        value = truncated_normal(mean, sd, lo, hi, rng)
        rates = dict(zip(RATE_NAMES, current.rates.as_tuple()))
        rates[name] = value
        current = current.replace(rates=RateParams(**rates))
    return current.rates


# ------------------------------------------------------------ variance updates

def variance_posterior(nu0, s2, n, sse):
    """Conjugate update of a scaled inverse chi-squared prior: ``(nu, scale)``."""
    nu = nu0 + n
    return nu, (nu0 * s2 + sse) / nu


def variance_residuals(traj, obs, theta):
    """Residual vectors for ``(sigma2_v, sigma2_m, kappa2_v, kappa2_m)``."""
    h, v, m, dv, dm, post_v, post_m = _increments(traj, theta)
    r = theta.rates
    ev = dv - np.where(post_v, h * (r.beta - r.delta * v) * v, 0.0)
    em = dm - np.where(post_m, h * r.alpha * v + h * (r.rho * v - r.gamma * v * m) * m, 0.0)
    grid_v, grid_m = _grid_obs(obs, traj.horizon, traj.step)
    iv = np.flatnonzero(~np.isnan(grid_v))
    im = np.flatnonzero(~np.isnan(grid_m))
    return grid_v[iv] - traj.v[iv], grid_m[im] - traj.m[im], ev, em


def gibbs_update_variances(traj, obs, theta, spec, rng):
    """Draw all four variances from their conjugate conditionals."""
    draws = []
    for name, resid in zip(("sigma2_v", "sigma2_m", "kappa2_v", "kappa2_m"),
                           variance_residuals(traj, obs, theta)):
        nu, scale = variance_posterior(spec.nu0, spec.scale(name), resid.size,
                                       float(resid @ resid))
        draws.append(scaled_inv_chi2(nu, scale, rng))
    return NoiseParams(*draws)


# --------------------------------------------------------------- delay update

@dataclass
class _DelayTables:
    """Prefix sums that give the complete-data log density for any onsets."""

    pre_v: np.ndarray
    post_v: np.ndarray
    pre_m: np.ndarray
    post_m: np.ndarray
    kappa2_v: float
    kappa2_m: float
    step: float

    @classmethod
    def build(cls, traj, theta):
        h = traj.step
        r = theta.rates
        v, m = traj.v[:-1], traj.m[:-1]
        dv = np.diff(traj.v)
        dm = np.diff(traj.m)
        drift_v = h * (r.beta - r.delta * v) * v
        drift_m = h * r.alpha * v + h * (r.rho * v - r.gamma * v * m) * m

        def cum(x):
            return np.concatenate(([0.0], np.cumsum(x * x)))

        return cls(cum(dv), cum(dv - drift_v), cum(dm), cum(dm - drift_m),
                   theta.noise.kappa2_v, theta.noise.kappa2_m, h)

    def log_density(self, tau_v, tau_m):
        n = self.pre_v.size - 1
        kv = min(onset_steps(tau_v, self.step), n)
        km = min(onset_steps(tau_v + tau_m, self.step), n)
        ssv = self.pre_v[kv] + self.post_v[n] - self.post_v[kv]
        ssm = self.pre_m[km] + self.post_m[n] - self.post_m[km]
        return -0.5 * (ssv / self.kappa2_v + ssm / self.kappa2_m)


def _propose_delay(tau, spec, rng):
    u = int(rng.integers(1, DELAY_WINDOW + 1)) * (1 if rng.random() < 0.5 else -1)
    return reflect_delay(tau + u, *spec.delay_support)


def mh_update_delays(traj, obs, theta, spec, rng, counters=None):
    """Random-walk Metropolis updates of ``tau_v`` then ``tau_m``.

    Proposals move by a uniform nonzero step in ``[-3, 3]``, reflected into
    the support; the target is the complete-data evolution density of
    ``traj``. ``counters`` accumulates ``{name}_proposed`` and
    ``{name}_accepted``.
    """
    tables = _DelayTables.build(traj, theta)
    tau_v, tau_m = theta.delays.tau_v, theta.delays.tau_m
    current = tables.log_density(tau_v, tau_m)
    for name in ("tau_v", "tau_m"):
        if name == "tau_v":
            cand = (_propose_delay(tau_v, spec, rng), tau_m)
        else:
            cand = (tau_v, _propose_delay(tau_m, spec, rng))
        proposed = tables.log_density(*cand)
        accept = math.log(rng.random()) < proposed - current
        if counters is not None:
            counters[f"{name}_proposed"] = counters.get(f"{name}_proposed", 0) + 1
            counters[f"{name}_accepted"] = counters.get(f"{name}_accepted", 0) + int(accept)
        if accept:
            tau_v, tau_m = cand
            current = proposed
    return DelayParams(tau_v, tau_m)


def v0_conditional(traj, theta):
    """Mean and variance of the Gaussian conditional of ``v0`` given ``V_h``.

    Before the ``V`` onset ``V_h = v0 + noise``. If the first step is already
    past onset the growth factor at the current ``v0`` is used as the slope.
    """
    h = traj.step
    slope = 1.0
    if onset_steps(theta.delays.tau_v, h) < 1:
        r = theta.rates
        slope = 1.0 + h * (r.beta - r.delta * theta.v0)
    if slope <= 0.0:
        return math.nan, math.inf
    return traj.v[1] / slope, theta.noise.kappa2_v / (slope * slope)


def gibbs_update_v0(traj, theta, spec, rng):
    """Draw ``v0`` from its conditional truncated to the prior interval."""
    mean, var = v0_conditional(traj, theta)
    lo, hi = spec.v0_bounds
    return truncated_normal(mean, math.sqrt(var), lo, hi, rng)


# ------------------------------------------------------------------- driver

@dataclass
class McmcConfig:
    """Settings of the first-stage sampler."""

    iterations: int = 10_000
    burn_in: int = 3_000
    max_failures: int = 100
    fallback_every: int = 10
    store_trajectories: bool = False
    horizon: float = 280.0
    step: float = 1.0

    def __post_init__(self):
        if self.iterations < 1 or not 0 <= self.burn_in < self.iterations:
            raise ValidationError(
                f"need 0 <= burn_in < iterations, got {self.burn_in}, {self.iterations}")
        if self.max_failures < 1:
            raise ValidationError("max_failures must be positive")


@dataclass
class McmcChain:
    """Post burn-in draws, one row per iteration in ``PARAM_NAMES`` order."""

    values: np.ndarray
    counters: dict = field(default_factory=dict)
    trajectories: np.ndarray | None = None

    def __len__(self):
        return self.values.shape[0]

    def column(self, name):
        return self.values[:, PARAM_NAMES.index(name)]

    def theta(self, i):
        return ThetaParams.from_vector(self.values[i])

    def acceptance_rate(self, name):
        proposed = self.counters.get(f"{name}_proposed", 0)
        return self.counters.get(f"{name}_accepted", 0) / proposed if proposed else math.nan


def _jitter_rates(theta, spec, rng):
    """Multiplicative perturbation of the rates that stays in prior support."""
    values = theta.to_vector()
    for _ in range(100):
        trial = values.copy()
        trial[:5] *= np.exp(0.1 * rng.standard_normal(5))
        lo = np.asarray(spec.rate_lower)
        hi = np.asarray(spec.rate_upper)
        trial[:5] = np.clip(trial[:5], lo, hi)
        cap = spec.capacity_cap
        if trial[0] < cap * trial[1] and trial[3] < cap * trial[4]:
            return ThetaParams.from_vector(trial)
    return theta


def run_mcmc(obs, spec=None, config=None, rng=None, m0=None, init=None):
    """Run the first-stage Gibbs/Metropolis sampler.

    Parameters
    ----------
    obs : ObservationSet
        Data; the day-0 ``M`` record supplies ``m0`` unless given explicitly.
    spec : PriorSpec, optional
    config : McmcConfig, optional
    rng : numpy.random.Generator
    m0 : float, optional
    init : ThetaParams, optional
        Starting point; drawn from the prior when omitted.

    Returns
    -------
    McmcChain

    Raises
    ------
    ComputationError
        After ``config.max_failures`` consecutive failed path draws.
    """
    spec = PriorSpec() if spec is None else spec
    config = McmcConfig() if config is None else config
    if rng is None:
        raise ValidationError("run_mcmc needs an explicit random generator")
    if m0 is None:
        m0 = obs.initial_m()
    if not 0.0 <= m0 <= STATE_MAX:
        raise ValidationError(f"m0 must lie in [0, 100], got {m0}")
    horizon, step = config.horizon, config.step
    n = n_steps(horizon, step)
    obs_v, obs_m = _grid_obs(obs, horizon, step)
    counters = {"filter_failures": 0, "fallbacks": 0, "jittered_paths": 0,
                "empty_interval": 0, "init_draws": 0}

    def draw_path(th):
        summary = _filter_arrays(th, m0, horizon, step, obs_v, obs_m, False, INIT_VAR)
        return ffbs_sample(summary, rng)

    # prior start; parameters whose linearized filter blows up are redrawn
    theta = init
    for _ in range(config.max_failures):
        if init is None:
            theta = ThetaParams.from_vector(sample_prior_array(spec, rng, 1)[0])
        counters["init_draws"] += 1
        try:
            traj = draw_path(theta)
            break
        except FilterDivergenceError:
            counters["filter_failures"] += 1
            if init is not None:
                raise
    else:
        raise ComputationError(
            f"no usable starting point after {config.max_failures} attempts")
    last_good = theta

    keep = config.iterations - config.burn_in
    values = np.empty((keep, len(PARAM_NAMES)))
    trajectories = np.empty((keep, 2, n + 1)) if config.store_trajectories else None

    for it in range(config.iterations):
        if it > 0:
            failures = 0
            trial = theta
            while True:
                try:
                    traj = draw_path(trial)
                    break
                except FilterDivergenceError:
                    failures += 1
                    counters["filter_failures"] += 1
                    if failures >= config.max_failures:
                        raise ComputationError(
                            f"path sampling failed {failures} consecutive times at iteration {it}")
                    if failures % config.fallback_every == 0:
                        trial = last_good
                        counters["fallbacks"] += 1
                    else:
                        trial = _jitter_rates(theta, spec, rng)
            theta = last_good = trial
        counters["jittered_paths"] += int(traj.jittered)

        theta = theta.replace(rates=gibbs_update_rates(traj, theta, spec, rng, counters))
        theta = theta.replace(noise=gibbs_update_variances(traj, obs, theta, spec, rng))
        theta = theta.replace(delays=mh_update_delays(traj, obs, theta, spec, rng, counters))
        theta = theta.replace(v0=gibbs_update_v0(traj, theta, spec, rng))

        j = it - config.burn_in
        if j >= 0:
            values[j] = theta.to_vector()
            if trajectories is not None:
                trajectories[j, 0] = traj.v
                trajectories[j, 1] = traj.m
    return McmcChain(values, counters, trajectories)
