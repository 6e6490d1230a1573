"""Parameter types, the stochastic delay simulator and the ODE reference model.

States are percentages. The virus-like population ``V`` grows logistically
once its onset delay has passed; the memory population ``M`` is driven by
``V`` once a second, additional delay has passed::

    V_t = V_{t-h} + h (beta - delta V_{t-h}) V_{t-h} + w_V          (t > tau_V)
    M_t = M_{t-h} + h alpha V_{t-h}
                  + h (rho V_{t-h} - gamma V_{t-h} M_{t-h}) M_{t-h} + w_M
                                                                  (t > tau_V + tau_M)

Before onset each state is a pure random walk. Every simulated state is
clamped to ``[0, 100]`` and every measurement to ``[0, inf)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np

from ._backend import kernels
from .errors import DivisionError, InvalidScheduleError, ValidationError

STATE_MAX = 100.0
DELAY_MIN, DELAY_MAX = 1, 50

RATE_NAMES = ("beta", "delta", "alpha", "rho", "gamma")
NOISE_NAMES = ("sigma2_v", "sigma2_m", "kappa2_v", "kappa2_m")
PARAM_NAMES = RATE_NAMES + ("v0", "tau_v", "tau_m") + NOISE_NAMES
DERIVED_NAMES = ("K_V", "K_M", "eta", "psi", "lambda_V", "lambda_M")

# Reference observation schedule, in days (day = 7 * week).
STUDY_V_DAYS = (7, 91, 175, 259)
STUDY_M_DAYS = (0, 28, 112, 196, 280)
STUDY_HORIZON = 280


def _check_finite(name, value):
    if not math.isfinite(value):
        raise ValidationError(f"{name} must be finite, got {value!r}")


@dataclass(frozen=True)
class RateParams:
    """Growth, density, drive, proliferation and saturation rates."""

    beta: float
    delta: float
    alpha: float
    rho: float
    gamma: float

    def __post_init__(self):
        for name in RATE_NAMES:
            value = float(getattr(self, name))
            _check_finite(name, value)
            if value < 0:
                raise ValidationError(f"{name} must be nonnegative, got {value}")
            object.__setattr__(self, name, value)
        if self.delta > 0 and not self.beta / self.delta < STATE_MAX:
            raise ValidationError("carrying capacity beta/delta must be below 100")
        if self.gamma > 0 and not self.rho / self.gamma < STATE_MAX:
            raise ValidationError("carrying capacity rho/gamma must be below 100")

    def as_tuple(self):
        return (self.beta, self.delta, self.alpha, self.rho, self.gamma)

    @classmethod
    def from_capacities(cls, beta, K_V, alpha, rho, K_M):
        """Build rates from the (beta, K_V, alpha, rho, K_M) parameterization."""
        return cls(beta, beta / K_V, alpha, rho, rho / K_M)


@dataclass(frozen=True)
class DelayParams:
    """Integer onset delays in days, each in ``{1, ..., 50}``."""

    tau_v: int
    tau_m: int

    def __post_init__(self):
        for name in ("tau_v", "tau_m"):
            value = getattr(self, name)
            if int(value) != value:
                raise ValidationError(f"{name} must be an integer, got {value!r}")
            value = int(value)
            if not DELAY_MIN <= value <= DELAY_MAX:
                raise ValidationError(f"{name} must lie in {{1..50}}, got {value}")
            object.__setattr__(self, name, value)


@dataclass(frozen=True)
class NoiseParams:
    """Measurement variances (sigma2) and evolution variances (kappa2)."""

    sigma2_v: float
    sigma2_m: float
    kappa2_v: float
    kappa2_m: float

    def __post_init__(self):
        for name in NOISE_NAMES:
            value = float(getattr(self, name))
            _check_finite(name, value)
            if not value > 0:
                raise ValidationError(f"{name} must be strictly positive, got {value}")
            object.__setattr__(self, name, value)


@dataclass(frozen=True)
class ThetaParams:
    """The full parameter set of one subject."""

    rates: RateParams
    delays: DelayParams
    noise: NoiseParams
    v0: float

    def __post_init__(self):
        v0 = float(self.v0)
        if not 0.0 <= v0 <= 0.5:
            raise ValidationError(f"v0 must lie in [0, 0.5], got {v0}")
        object.__setattr__(self, "v0", v0)

    def to_vector(self):
        """Return the parameters as a float array ordered like ``PARAM_NAMES``."""
        r, d, n = self.rates, self.delays, self.noise
        return np.array(
            [r.beta, r.delta, r.alpha, r.rho, r.gamma, self.v0, d.tau_v, d.tau_m,
             n.sigma2_v, n.sigma2_m, n.kappa2_v, n.kappa2_m],
            dtype=float,
        )

    @classmethod
    def from_vector(cls, x):
        x = [float(v) for v in x]
        if len(x) != len(PARAM_NAMES):
            raise ValidationError(f"expected {len(PARAM_NAMES)} values, got {len(x)}")
        return cls(
            rates=RateParams(*x[0:5]),
            delays=DelayParams(int(round(x[6])), int(round(x[7]))),
            noise=NoiseParams(*x[8:12]),
            v0=x[5],
        )

    def replace(self, **changes):
        return replace(self, **changes)


@dataclass
class LatentTrajectory:
    """Latent ``(V, M)`` values on the grid ``0, h, ..., T``."""

    step: float
    horizon: float
    v: np.ndarray
    m: np.ndarray
    jittered: bool = False

    def __post_init__(self):
        self.v = np.asarray(self.v, dtype=float)
        self.m = np.asarray(self.m, dtype=float)
        n = n_steps(self.horizon, self.step)
        if self.v.shape != (n + 1,) or self.m.shape != (n + 1,):
            raise ValidationError(
                f"trajectory arrays must have length {n + 1}, got {self.v.shape}, {self.m.shape}")

    @property
    def times(self):
        return np.arange(self.v.size) * self.step

    def at_day(self, day):
        """Index of ``day`` on the grid (raises if off-grid)."""
        return grid_index(day, self.step, self.horizon)


@dataclass
class ObservationSet:
    """Sparse measurements, each tagged ``'V'`` or ``'M'``.

    Records are kept sorted by day, with ``V`` before ``M`` on the same day.
    """

    days: np.ndarray
    series: np.ndarray
    values: np.ndarray
    subject_id: str = ""
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        days = np.asarray(self.days)
        if days.size and not np.all(np.equal(np.mod(days, 1), 0)):
            raise ValidationError("observation days must be integers")
        days = days.astype(np.int64)
        series = np.asarray(self.series, dtype="<U1")
        values = np.asarray(self.values, dtype=float)
        if not days.shape == series.shape == values.shape or days.ndim != 1:
            raise ValidationError("days, series and values must be 1-d and equally long")
        if np.any(days < 0):
            raise ValidationError("observation days must be nonnegative")
        bad = set(series.tolist()) - {"V", "M"}
        if bad:
            raise ValidationError(f"unknown series tag(s) {sorted(bad)}; expected V or M")
        if not np.all(np.isfinite(values)) or np.any(values < 0):
            raise ValidationError("observation values must be finite and nonnegative")
        order = np.lexsort((series == "M", days))
        days, series, values = days[order], series[order], values[order]
        keys = list(zip(days.tolist(), series.tolist()))
        if len(set(keys)) != len(keys):
            dup = next(k for k in keys if keys.count(k) > 1)
            raise ValidationError(f"duplicate observation for day {dup[0]}, series {dup[1]}")
        self.days, self.series, self.values = days, series, values

    @classmethod
    def from_records(cls, records: Iterable[tuple], subject_id=""):
        records = list(records)
        if not records:
            return cls(np.zeros(0, np.int64), np.zeros(0, "<U1"), np.zeros(0), subject_id)
        days, series, values = zip(*records)
        return cls(np.array(days), np.array(series), np.array(values, dtype=float), subject_id)

    def __len__(self):
        return int(self.days.size)

    def records(self):
        return list(zip(self.days.tolist(), self.series.tolist(), self.values.tolist()))

    def _select(self, tag):
        mask = self.series == tag
        return self.days[mask], self.values[mask]

    @property
    def v_days(self):
        return self._select("V")[0]

    @property
    def v_values(self):
        return self._select("V")[1]

    @property
    def m_days(self):
        return self._select("M")[0]

    @property
    def m_values(self):
        return self._select("M")[1]

    @property
    def schedule(self):
        return list(zip(self.days.tolist(), self.series.tolist()))

    def max_day(self):
        return int(self.days.max()) if len(self) else 0

    def initial_m(self):
        """The day-0 ``M`` measurement, or ``None`` if absent."""
        mask = (self.series == "M") & (self.days == 0)
        return float(self.values[mask][0]) if mask.any() else None

    def without_initial_m(self):
        """Copy with the day-0 ``M`` record removed."""
        keep = ~((self.series == "M") & (self.days == 0))
        return ObservationSet(self.days[keep], self.series[keep], self.values[keep],
                              self.subject_id, dict(self.meta))

    def grid_arrays(self, horizon, step):
        """Dense ``(obs_v, obs_m)`` arrays over the grid, NaN where unobserved."""
        n = n_steps(horizon, step)
        obs_v = np.full(n + 1, np.nan)
        obs_m = np.full(n + 1, np.nan)
        for day, tag, value in self.records():
            k = grid_index(day, step, horizon)
            (obs_v if tag == "V" else obs_m)[k] = value
        return obs_v, obs_m


@dataclass(frozen=True)
class DimensionlessParams:
    eta: float
    psi: float
    lambda_V: float
    lambda_M: float

    def as_tuple(self):
        return (self.eta, self.psi, self.lambda_V, self.lambda_M)


def n_steps(horizon, step):
    """Number of grid steps ``T / h``; raises if ``T`` is not a multiple of ``h``."""
    if not step > 0:
        raise ValidationError(f"step must be positive, got {step}")
    ratio = horizon / step
    n = int(round(ratio))
    if n < 1 or abs(ratio - n) > 1e-9 * max(1.0, ratio):
        raise InvalidScheduleError(f"horizon {horizon} is not a positive multiple of step {step}")
    return n


def grid_index(day, step, horizon):
    ratio = day / step
    k = int(round(ratio))
    if abs(ratio - k) > 1e-9 * max(1.0, abs(ratio)) or k < 0 or k > n_steps(horizon, step):
        raise InvalidScheduleError(f"day {day} is not on the grid 0, {step}, ..., {horizon}")
    return k


def onset_steps(tau, step):
    """Number of leading grid steps ``k`` with ``k * h <= tau`` (pre-onset steps)."""
    return int(math.floor(tau / step + 1e-9))


def euler_step(v_prev, m_prev, theta, t, h, noise_v=0.0, noise_m=0.0):
    """Advance ``(V, M)`` by one Euler step ending at time ``t``.

    Parameters
    ----------
    v_prev, m_prev : float
        States at ``t - h`` (percent).
    theta : ThetaParams
    t : float
        Time at the end of the step, in days.
    h : float
        Step length in days.
    noise_v, noise_m : float
        Evolution noise already drawn for this step.

    Returns
    -------
    (float, float)
        Clamped states at ``t``.
    """
    for name, value in (("v_prev", v_prev), ("m_prev", m_prev), ("t", t), ("h", h),
                        ("noise_v", noise_v), ("noise_m", noise_m)):
        _check_finite(name, float(value))
    r, d = theta.rates, theta.delays
    if t <= d.tau_v:
        v = v_prev + noise_v
    else:
        v = v_prev + h * (r.beta - r.delta * v_prev) * v_prev + noise_v
    if t <= d.tau_v + d.tau_m:
        m = m_prev + noise_m
    else:
        m = (m_prev + h * r.alpha * v_prev
             + h * (r.rho * v_prev - r.gamma * v_prev * m_prev) * m_prev + noise_m)
    return min(max(v, 0.0), STATE_MAX), min(max(m, 0.0), STATE_MAX)


def batch_columns(values):
    """Split an ``(n, 12)`` parameter array into contiguous kernel inputs."""
    values = np.atleast_2d(np.asarray(values, dtype=float))
    cols = {name: np.ascontiguousarray(values[:, i]) for i, name in enumerate(PARAM_NAMES)}
    return cols


def simulate_batch(values, m0, horizon, step, noise_v, noise_m):
    """Simulate many trajectories at once from standardized noise.

    ``values`` is an ``(n, 12)`` parameter array; ``noise_v``/``noise_m`` are
    standard-normal ``(n, T/h)`` arrays scaled here by ``sqrt(kappa2)``.
    ``m0`` may be a scalar or a length-``n`` array. Returns ``(v, m)`` arrays of
    shape ``(n, T/h + 1)``.
    """
    cols = batch_columns(values)
    count = cols["beta"].size
    n = n_steps(horizon, step)
    pre_v = np.floor(cols["tau_v"] / step + 1e-9).astype(np.int64)
    pre_m = np.floor((cols["tau_v"] + cols["tau_m"]) / step + 1e-9).astype(np.int64)
    scaled_v = np.ascontiguousarray(np.sqrt(cols["kappa2_v"])[:, None] * noise_v)
    scaled_m = np.ascontiguousarray(np.sqrt(cols["kappa2_m"])[:, None] * noise_m)
    m0 = np.ascontiguousarray(np.broadcast_to(np.asarray(m0, dtype=float), (count,)))
    out_v = np.empty((count, n + 1))
    out_m = np.empty((count, n + 1))
    kernels.simulate_batch(cols["beta"], cols["delta"], cols["alpha"], cols["rho"],
                           cols["gamma"], pre_v, pre_m, cols["v0"], m0, float(step),
                           scaled_v, scaled_m, out_v, out_m)
    return out_v, out_m


def simulate_trajectory(theta, m0, horizon, step, rng):
    """Draw one latent trajectory from the exact stochastic delay model.

    Evolution noise is drawn as a ``(2, T/h)`` standard-normal block (first
    row for ``V``), so results depend only on the generator state.
    """
    if not 0.0 <= m0 <= STATE_MAX:
        raise ValidationError(f"m0 must lie in [0, 100], got {m0}")
    n = n_steps(horizon, step)
    z = rng.standard_normal((2, n))
    v, m = simulate_batch(theta.to_vector()[None, :], m0, horizon, step, z[:1], z[1:])
    return LatentTrajectory(step, horizon, v[0], m[0])


def observe(traj, schedule: Sequence[tuple], noise, rng):
    """Measure a trajectory on ``schedule`` (``(day, 'V'|'M')`` pairs).

    One Gaussian draw per record, in schedule order, with variance
    ``sigma2_v`` or ``sigma2_m``; values are clamped at zero.
    """
    schedule = list(schedule)
    idx = []
    for day, tag in schedule:
        if tag not in ("V", "M"):
            raise InvalidScheduleError(f"unknown series tag {tag!r}")
        idx.append(grid_index(day, traj.step, traj.horizon))
    z = rng.standard_normal(len(schedule))
    records = []
    for (day, tag), k, e in zip(schedule, idx, z):
        if tag == "V":
            value = traj.v[k] + math.sqrt(noise.sigma2_v) * e
        else:
            value = traj.m[k] + math.sqrt(noise.sigma2_m) * e
        records.append((int(round(day)), tag, max(value, 0.0)))
    return ObservationSet.from_records(records)


def study_schedule():
    """The 4 V-days and 5 M-days of the reference schedule."""
    return [(d, "V") for d in STUDY_V_DAYS] + [(d, "M") for d in STUDY_M_DAYS]


def integrate_ode(rates, v0, m0, horizon, dt=0.01, delays=None):
    """Integrate the continuous-time model with fixed-step RK4.

    The result is reported on the daily grid. ``delays``, when given, switches
    each equation on only after its onset (same convention as the discrete
    simulator: a step contributes drift only if it starts at or after the
    onset); by default both equations are active from ``t = 0``.
    """
    per_day = 1.0 / dt
    sub = int(round(per_day))
    if not dt > 0 or abs(per_day - sub) > 1e-9 * per_day:
        raise ValidationError("dt must be positive and divide one day")
    days = n_steps(horizon, 1.0)
    on_v = float(delays.tau_v) if delays is not None else 0.0
    on_m = float(delays.tau_v + delays.tau_m) if delays is not None else 0.0
    b, dl, a, r, g = rates.as_tuple()

    def f(t, v, m, v_on, m_on):
        dv = (b - dl * v) * v if v_on else 0.0
        dm = a * v + (r * v - g * v * m) * m if m_on else 0.0
        return dv, dm

    v_out = np.empty(days + 1)
    m_out = np.empty(days + 1)
    v, m = float(v0), float(m0)
    v_out[0], m_out[0] = v, m
    for day in range(days):
        for j in range(sub):
            t = day + j * dt
            v_on = t >= on_v - 1e-9
            m_on = t >= on_m - 1e-9
            k1 = f(t, v, m, v_on, m_on)
            k2 = f(t, v + 0.5 * dt * k1[0], m + 0.5 * dt * k1[1], v_on, m_on)
            k3 = f(t, v + 0.5 * dt * k2[0], m + 0.5 * dt * k2[1], v_on, m_on)
            k4 = f(t, v + dt * k3[0], m + dt * k3[1], v_on, m_on)
            v += dt / 6.0 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
            m += dt / 6.0 * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])
        v_out[day + 1], m_out[day + 1] = v, m
    return LatentTrajectory(1.0, float(days), v_out, m_out)


def carrying_capacities(rates):
    """Return ``(K_V, K_M) = (beta / delta, rho / gamma)``."""
    if rates.delta == 0:
        raise DivisionError("K_V = beta/delta is undefined for delta = 0")
    if rates.gamma == 0:
        raise DivisionError("K_M = rho/gamma is undefined for gamma = 0")
    return rates.beta / rates.delta, rates.rho / rates.gamma


def dimensionless_arrays(beta, delta, alpha, rho, gamma, tau_v, tau_m):
    """Vectorized dimensionless map; non-finite where a divisor is zero."""
    with np.errstate(divide="ignore", invalid="ignore"):
        beta = np.asarray(beta, dtype=float)
        K_V = beta / np.asarray(delta, dtype=float)
        K_M = np.asarray(rho, dtype=float) / np.asarray(gamma, dtype=float)
        eta = np.asarray(alpha, dtype=float) * K_V / (beta * K_M)
        psi = np.asarray(rho, dtype=float) * K_V / beta
        return eta, psi, beta * np.asarray(tau_v, dtype=float), beta * np.asarray(tau_m, dtype=float)


def to_dimensionless(theta):
    """Map rates and delays to ``(eta, psi, lambda_V, lambda_M)``.

    With ``K_V = beta/delta`` and ``K_M = rho/gamma``::

        eta = alpha K_V / (beta K_M),  psi = rho K_V / beta,
        lambda_V = beta tau_V,         lambda_M = beta tau_M
    """
    r = theta.rates
    if r.beta == 0:
        raise DivisionError("dimensionless parameters need beta > 0")
    K_V, K_M = carrying_capacities(r)
    if K_M == 0:
        raise DivisionError("eta is undefined for rho = 0 (K_M = 0)")
    return DimensionlessParams(
        eta=r.alpha * K_V / (r.beta * K_M),
        psi=r.rho * K_V / r.beta,
        lambda_V=r.beta * theta.delays.tau_v,
        lambda_M=r.beta * theta.delays.tau_m,
    )


def derived_quantities(values):
    """Derived columns ``DERIVED_NAMES`` for an ``(n, 12)`` parameter array."""
    values = np.atleast_2d(np.asarray(values, dtype=float))
    b, dl, a, r, g = (values[:, i] for i in range(5))
    with np.errstate(divide="ignore", invalid="ignore"):
        K_V = b / dl
        K_M = r / g
    eta, psi, lam_v, lam_m = dimensionless_arrays(b, dl, a, r, g, values[:, 6], values[:, 7])
    return np.column_stack([K_V, K_M, eta, psi, lam_v, lam_m])


# Four reference parameter sets with distinct dynamics:
# (beta, delta, alpha, rho, gamma, tau_V, tau_M, kappa2_V, kappa2_M).
REFERENCE_SETS = (
    (0.05, 0.05 / 30, 0.001, 0.001, 0.001 / 5, 5, 30, 0.025, 0.005),
    (0.05, 0.05 / 50, 0.001, 0.0001, 0.0001 / 10, 20, 5, 0.05, 0.01),
    (0.02, 0.02 / 80, 0.001, 0.05, 0.05 / 4, 10, 30, 0.1, 0.01),
    (0.02, 0.02 / 80, 0.005, 0.0001, 0.0001 / 6, 20, 20, 0.2, 0.05),
)


def reference_theta(index, v0=0.5, sigma2_v=0.4, sigma2_m=0.08):
    """ThetaParams for one of the four reference parameter sets.

    Measurement variances are not part of those sets; the defaults equal the
    prior scales.
    """
    b, dl, a, r, g, tv, tm, kv, km = REFERENCE_SETS[index]
    return ThetaParams(RateParams(b, dl, a, r, g), DelayParams(tv, tm),
                       NoiseParams(sigma2_v, sigma2_m, kv, km), v0)
