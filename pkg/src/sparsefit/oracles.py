"""Independent reference implementations used to check the inference code.

Nothing here calls the filter, path sampler, simulator kernels or ABC engine;
the code is deliberately plain (dense matrices, scalar loops).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import BudgetExceededError, ValidationError


# ------------------------------------------------------------ linear model

@dataclass
class LinearSSM:
    """Linear-Gaussian state space model of the ``delta = rho = gamma = 0`` case.

    The state is ``(V_t, M_t, V_{t-1}, ..., V_{t-tau_m+1})``. The transition
    is constant within each of the three phases separated by the two onset
    times; ``transition(k)`` returns the matrix for the step into grid point
    ``k``.
    """

    beta: float
    alpha: float
    tau_v: int
    tau_m: int
    kappa2_v: float
    kappa2_m: float
    sigma2_v: float
    sigma2_m: float
    v0: float
    m0: float
    horizon: int = 280
    step: float = 1.0
    init_var: float = 1e-6

    @classmethod
    def from_theta(cls, theta, m0, horizon=280, step=1.0, init_var=1e-6):
        r = theta.rates
        if r.delta != 0 or r.rho != 0 or r.gamma != 0:
            raise ValidationError("linear reduction needs delta = rho = gamma = 0")
        return cls(r.beta, r.alpha, theta.delays.tau_v, theta.delays.tau_m,
                   theta.noise.kappa2_v, theta.noise.kappa2_m, theta.noise.sigma2_v,
                   theta.noise.sigma2_m, theta.v0, m0, horizon, step, init_var)

    @property
    def dim(self):
        return self.tau_m + 1

    @property
    def n(self):
        return int(round(self.horizon / self.step))

    def transition(self, k):
        d = self.dim
        F = np.zeros((d, d))
        t = k * self.step
        F[0, 0] = 1.0 if t <= self.tau_v + 1e-9 else 1.0 + self.step * self.beta
        F[1, 1] = 1.0
        if t > self.tau_v + self.tau_m + 1e-9:
            # M is driven by the oldest V held in the state (V itself if none)
            F[1, d - 1 if d > 2 else 0] += self.step * self.alpha
        for i in range(2, d):
            F[i, 0 if i == 2 else i - 1] = 1.0
        return F

    def process_cov(self):
        Q = np.zeros((self.dim, self.dim))
        Q[0, 0] = self.kappa2_v
        Q[1, 1] = self.kappa2_m
        return Q

    def initial(self):
        mean = np.full(self.dim, float(self.v0))
        mean[1] = self.m0
        return mean, np.eye(self.dim) * self.init_var


@dataclass
class KalmanResult:
    predicted_mean: np.ndarray
    predicted_cov: np.ndarray
    filtered_mean: np.ndarray
    filtered_cov: np.ndarray


def _observation_rows(ssm, obs):
    """Per grid point, list of ``(component, value, variance)``."""
    rows = [[] for _ in range(ssm.n + 1)]
    for day, tag, value in obs.records():
        k = int(round(day / ssm.step))
        if tag == "V":
            rows[k].append((0, value, ssm.sigma2_v))
        else:
            rows[k].append((1, value, ssm.sigma2_m))
    return rows


def exact_kalman(ssm, obs):
    """Textbook Kalman filter with a joint update on each observation day."""
    n, d = ssm.n, ssm.dim
    mean, P = ssm.initial()
    pm = np.empty((n + 1, d))
    pc = np.empty((n + 1, d, d))
    fm = np.empty((n + 1, d))
    fc = np.empty((n + 1, d, d))
    Q = ssm.process_cov()
    rows = _observation_rows(ssm, obs)
    for k in range(n + 1):
        if k > 0:
            F = ssm.transition(k)
            mean = F @ mean
            P = F @ P @ F.T + Q
        pm[k], pc[k] = mean, P
        if rows[k]:
            H = np.zeros((len(rows[k]), d))
            y = np.empty(len(rows[k]))
            R = np.zeros((len(rows[k]), len(rows[k])))
            for i, (comp, value, var) in enumerate(rows[k]):
                H[i, comp] = 1.0
                y[i] = value
                R[i, i] = var
            S = H @ P @ H.T + R
            K = np.linalg.solve(S, H @ P).T
            mean = mean + K @ (y - H @ mean)
            P = P - K @ S @ K.T
            P = 0.5 * (P + P.T)
        fm[k], fc[k] = mean, P
    return KalmanResult(pm, pc, fm, fc)


def rts_smoother(ssm, result):
    """Rauch-Tung-Striebel smoothed means and covariances."""
    n = ssm.n
    sm = result.filtered_mean.copy()
    sc = result.filtered_cov.copy()
    for k in range(n - 1, -1, -1):
        F = ssm.transition(k + 1)
        G = np.linalg.solve(result.predicted_cov[k + 1], F @ result.filtered_cov[k]).T
        sm[k] = result.filtered_mean[k] + G @ (sm[k + 1] - result.predicted_mean[k + 1])
        sc[k] = result.filtered_cov[k] + G @ (sc[k + 1] - result.predicted_cov[k + 1]) @ G.T
    return sm, sc


# ---------------------------------------------------------- conjugate toy

def normal_normal_posterior(prior_mean, prior_var, obs_mean, obs_var, n):
    """Posterior ``(mean, var)`` of a normal mean with known observation variance.

    ``obs_var`` is the variance of one observation and ``obs_mean`` the mean
    of ``n`` observations. ``n = 0`` or ``obs_var = inf`` returns the prior;
    ``prior_var = inf`` gives the flat-prior answer.
    """
    if n < 0 or not prior_var > 0 or not obs_var > 0:
        raise ValidationError("variances must be positive and n nonnegative")
    if n == 0 or math.isinf(obs_var):
        return float(prior_mean), float(prior_var)
    data_prec = n / obs_var
    if math.isinf(prior_var):
        return float(obs_mean), 1.0 / data_prec
    prec = 1.0 / prior_var + data_prec
    mean = (prior_mean / prior_var + obs_mean * data_prec) / prec
    return mean, 1.0 / prec


class NormalToyProblem:
    """ABC problem for the mean of ``n`` normal observations.

    With ``proposal=None`` candidates come from the normal prior and all
    weights are equal; otherwise ``proposal`` must provide ``sample`` and
    ``log_density`` and weights are prior over proposal density. The
    discrepancy is the squared standardized difference of sample means.
    """

    names = ("theta",)

    def __init__(self, y_obs, prior_mean, prior_var, obs_var, proposal=None):
        self.y = np.asarray(y_obs, dtype=float)
        self.prior_mean, self.prior_var, self.obs_var = prior_mean, prior_var, obs_var
        self.proposal = proposal

    def propose(self, rng, count, budget=None):
        if self.proposal is None:
            return self.prior_mean + math.sqrt(self.prior_var) * rng.standard_normal((count, 1)), count
        return self.proposal.sample(rng, count, budget)

    def discrepancies(self, values, rng, rows=None):
        n = self.y.size
        draws = values[:, :1] + math.sqrt(self.obs_var) * rng.standard_normal((values.shape[0], n))
        d = (draws.mean(axis=1) - self.y.mean()) ** 2 / (self.obs_var / n)
        return d if rows is None else d[np.asarray(rows)]

    def log_weights(self, values):
        if self.proposal is None:
            return np.zeros(values.shape[0])
        x = values[:, 0]
        log_prior = -0.5 * (x - self.prior_mean) ** 2 / self.prior_var
        return log_prior - self.proposal.log_density(values)


# ----------------------------------------------------- brute-force ABC

def _naive_prior_draw(spec, rng):
    while True:
        r = [rng.uniform(lo, hi) for lo, hi in zip(spec.rate_lower, spec.rate_upper)]
        if r[0] < spec.capacity_cap * r[1] and r[3] < spec.capacity_cap * r[4]:
            break
    v0 = rng.uniform(*spec.v0_bounds)
    lo, hi = spec.delay_support
    tau_v = int(rng.integers(lo, hi + 1))
    tau_m = int(rng.integers(lo, hi + 1))
    var = [spec.nu0 * s2 / rng.chisquare(spec.nu0) for s2 in spec.variance_scales]
    return r + [v0, tau_v, tau_m] + var


def _naive_simulate(p, m0, n, step, rng):
    beta, delta, alpha, rho, gamma, v0, tau_v, tau_m, _, _, kv, km = p
    sv, sm = math.sqrt(kv), math.sqrt(km)
    v, m = [v0], [m0]
    for k in range(1, n + 1):
        t = k * step
        vp, mp = v[-1], m[-1]
        ev, em = rng.standard_normal(2)
        vn = vp + ev * sv
        if t > tau_v + 1e-9:
            vn += step * (beta - delta * vp) * vp
        mn = mp + em * sm
        if t > tau_v + tau_m + 1e-9:
            mn += step * alpha * vp + step * (rho * vp - gamma * vp * mp) * mp
        v.append(min(max(vn, 0.0), 100.0))
        m.append(min(max(mn, 0.0), 100.0))
    return v, m


def rejection_abc_prior(y_obs, spec, epsilon, n_accept, rng, budget=100_000, m0=None,
                        horizon=280, step=1.0):
    """Plain prior-simulate-accept ABC with the same discrepancy as the main stage.

    Returns an ``(n_accept, 12)`` array of accepted parameter vectors.

    Raises
    ------
    BudgetExceededError
        With the accepted rows so far as ``partial`` when ``budget``
        candidates did not yield ``n_accept`` acceptances.
    """
    m0 = y_obs.initial_m() if m0 is None else m0
    records = [(d, s, v) for d, s, v in y_obs.records() if not (s == "M" and d == 0)]
    v_all = [v for _, s, v in y_obs.records() if s == "V"]
    m_all = [v for _, s, v in y_obs.records() if s == "M"]
    s_v2 = float(np.var(v_all, ddof=1)) if len(v_all) > 1 else 1.0
    s_m2 = float(np.var(m_all, ddof=1)) if len(m_all) > 1 else 1.0
    n = int(round(horizon / step))
    accepted = []
    for tried in range(1, budget + 1):
        p = _naive_prior_draw(spec, rng)
        v, m = _naive_simulate(p, m0, n, step, rng)
        dist = 0.0
        for day, tag, value in records:
            k = int(round(day / step))
            if tag == "V":
                y = max(v[k] + math.sqrt(p[8]) * rng.standard_normal(), 0.0)
                dist += (y - value) ** 2 / s_v2
            else:
                y = max(m[k] + math.sqrt(p[9]) * rng.standard_normal(), 0.0)
                dist += (y - value) ** 2 / s_m2
        if dist <= epsilon:
            accepted.append(p)
            if len(accepted) == n_accept:
                return np.array(accepted, dtype=float)
    raise BudgetExceededError(
        f"only {len(accepted)} of {n_accept} accepted after {budget} candidates",
        np.array(accepted, dtype=float).reshape(-1, 12), {"tried": budget})
