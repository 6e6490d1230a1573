"""Prior distributions over the parameter set and empirical prior CDFs."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln

from .errors import ConfigurationError, ValidationError
from .model import (DELAY_MAX, DELAY_MIN, DERIVED_NAMES, NOISE_NAMES, PARAM_NAMES,
                    RATE_NAMES, ThetaParams, derived_quantities)

MIN_ACCEPTANCE = 1e-6
MIN_CDF_SAMPLES = 100_000


@dataclass(frozen=True)
class PriorSpec:
    """Independent marginals plus the carrying-capacity constraint.

    Rates are uniform on ``[rate_lower, rate_upper]`` and jointly restricted to
    ``beta/delta < capacity_cap`` and ``rho/gamma < capacity_cap``. Each
    variance has a scaled inverse chi-squared prior with ``nu0`` degrees of
    freedom and scale ``variance_scales`` (order of ``NOISE_NAMES``).
    """

    rate_lower: tuple = (0.0, 0.0, 0.0, 0.0, 0.0)
    rate_upper: tuple = (1.0, 1.0, 1.0, 1.0, 1.0)
    capacity_cap: float = 100.0
    v0_bounds: tuple = (0.0, 0.5)
    delay_support: tuple = (DELAY_MIN, DELAY_MAX)
    nu0: float = 5.0
    variance_scales: tuple = (0.4, 0.08, 0.05, 0.01)

    def __post_init__(self):
        lo = tuple(float(x) for x in self.rate_lower)
        hi = tuple(float(x) for x in self.rate_upper)
        if len(lo) != 5 or len(hi) != 5:
            raise ValidationError("rate bounds need five entries")
        for name, a, b in zip(RATE_NAMES, lo, hi):
            if not (math.isfinite(a) and math.isfinite(b) and 0 <= a < b):
                raise ValidationError(f"bad prior bounds for {name}: [{a}, {b}]")
        v_lo, v_hi = (float(x) for x in self.v0_bounds)
        if not 0.0 <= v_lo < v_hi <= 0.5:
            raise ValidationError(f"bad v0 bounds [{v_lo}, {v_hi}]")
        d_lo, d_hi = (int(x) for x in self.delay_support)
        if not DELAY_MIN <= d_lo <= d_hi <= DELAY_MAX:
            raise ValidationError(f"bad delay support {{{d_lo}..{d_hi}}}")
        scales = tuple(float(x) for x in self.variance_scales)
        if len(scales) != 4 or not all(s > 0 and math.isfinite(s) for s in scales):
            raise ValidationError("variance scales must be four positive numbers")
        if not (self.nu0 > 0 and math.isfinite(self.nu0)):
            raise ValidationError("nu0 must be positive")
        if not self.capacity_cap > 0:
            raise ValidationError("capacity cap must be positive")
        object.__setattr__(self, "rate_lower", lo)
        object.__setattr__(self, "rate_upper", hi)
        object.__setattr__(self, "v0_bounds", (v_lo, v_hi))
        object.__setattr__(self, "delay_support", (d_lo, d_hi))
        object.__setattr__(self, "variance_scales", scales)
        object.__setattr__(self, "nu0", float(self.nu0))
        object.__setattr__(self, "capacity_cap", float(self.capacity_cap))
        # beta < cap*delta must be satisfiable somewhere in the box
        if lo[0] >= self.capacity_cap * hi[1] or lo[3] >= self.capacity_cap * hi[4]:
            raise ConfigurationError("rate bounds leave no room under the capacity cap")

    def bounds(self, name):
        """Marginal support ``(lower, upper)`` of a scalar parameter."""
        if name in RATE_NAMES:
            i = RATE_NAMES.index(name)
            return self.rate_lower[i], self.rate_upper[i]
        if name == "v0":
            return self.v0_bounds
        if name in ("tau_v", "tau_m"):
            return self.delay_support
        raise KeyError(name)

    def scale(self, name):
        return self.variance_scales[NOISE_NAMES.index(name)]


@dataclass
class EmpiricalCdf:
    """Step CDF of a scalar quantity estimated from prior draws."""

    values: np.ndarray
    probabilities: np.ndarray
    name: str = ""
    dropped: int = 0

    @classmethod
    def from_samples(cls, samples, name="", dropped=0):
        values = np.sort(np.asarray(samples, dtype=float))
        n = values.size
        if n == 0:
            raise ValidationError("cannot build a CDF from zero samples")
        probabilities = np.arange(1, n + 1) / (n + 1.0)
        return cls(values, probabilities, name, dropped)

    def __call__(self, x):
        """Fraction of prior draws ``<= x``."""
        return np.searchsorted(self.values, np.asarray(x, dtype=float), side="right") / self.values.size


def scaled_inv_chi2(nu0, s2, rng, size=None):
    """Draw ``nu0 * s2 / chi2(nu0)``."""
    if not (nu0 > 0 and s2 > 0):
        raise ValidationError("scaled inverse chi-squared needs nu0 > 0 and s2 > 0")
    return nu0 * s2 / rng.chisquare(nu0, size)


def scaled_inv_chi2_logpdf(x, nu0, s2):
    """Log density of the scaled inverse chi-squared distribution."""
    x = np.asarray(x, dtype=float)
    half = 0.5 * nu0
    with np.errstate(divide="ignore", invalid="ignore"):
        out = (half * np.log(half * s2) - gammaln(half)
               - (half + 1.0) * np.log(x) - half * s2 / x)
    out = np.where(x > 0, out, -np.inf)
    return out if out.ndim else float(out)


def _rate_constraint(spec, rates):
    cap = spec.capacity_cap
    return (rates[:, 0] < cap * rates[:, 1]) & (rates[:, 3] < cap * rates[:, 4])


def sample_rates(spec, rng, n):
    """Draw ``n`` rate vectors from the constrained uniform prior."""
    lo = np.asarray(spec.rate_lower)
    hi = np.asarray(spec.rate_upper)
    out = np.empty((n, 5))
    filled = attempts = 0
    batch = max(2 * n, 1024)
    while filled < n:
        draw = lo + (hi - lo) * rng.random((batch, 5))
        keep = draw[_rate_constraint(spec, draw)]
        attempts += batch
        take = min(n - filled, keep.shape[0])
        out[filled:filled + take] = keep[:take]
        filled += take
        if attempts >= 10_000_000 and filled / attempts < MIN_ACCEPTANCE:
            raise ConfigurationError(
                f"prior constraint acceptance {filled / attempts:.2e} is below {MIN_ACCEPTANCE}")
    return out


def sample_prior_array(spec, rng, n):
    """Draw ``n`` parameter vectors (rows ordered like ``PARAM_NAMES``)."""
    out = np.empty((n, len(PARAM_NAMES)))
    out[:, 0:5] = sample_rates(spec, rng, n)
    out[:, 5] = rng.uniform(*spec.v0_bounds, size=n)
    d_lo, d_hi = spec.delay_support
    out[:, 6] = rng.integers(d_lo, d_hi + 1, size=n)
    out[:, 7] = rng.integers(d_lo, d_hi + 1, size=n)
    for j, s2 in enumerate(spec.variance_scales):
        out[:, 8 + j] = scaled_inv_chi2(spec.nu0, s2, rng, n)
    return out


def sample_prior(spec, rng):
    """One prior draw as a :class:`ThetaParams`."""
    return ThetaParams.from_vector(sample_prior_array(spec, rng, 1)[0])


def log_prior_array(spec, values):
    """Unnormalized log prior density of each row of an ``(n, 12)`` array.

    The normalizing constant of the capacity constraint is left out; only
    ratios of this density are ever used.
    """
    values = np.atleast_2d(np.asarray(values, dtype=float))
    lo = np.asarray(spec.rate_lower)
    hi = np.asarray(spec.rate_upper)
    rates = values[:, 0:5]
    ok = np.all((rates >= lo) & (rates <= hi), axis=1) & _rate_constraint(spec, rates)
    v_lo, v_hi = spec.v0_bounds
    ok &= (values[:, 5] >= v_lo) & (values[:, 5] <= v_hi)
    d_lo, d_hi = spec.delay_support
    taus = values[:, 6:8]
    ok &= np.all((taus >= d_lo) & (taus <= d_hi) & (taus == np.round(taus)), axis=1)
    logp = -np.sum(np.log(hi - lo)) - math.log(v_hi - v_lo) - 2 * math.log(d_hi - d_lo + 1)
    logp = np.full(values.shape[0], logp)
    for j, s2 in enumerate(spec.variance_scales):
        logp = logp + scaled_inv_chi2_logpdf(values[:, 8 + j], spec.nu0, s2)
    return np.where(ok, logp, -np.inf)


def log_prior_density(spec, theta):
    """Unnormalized log prior of one parameter set; ``-inf`` outside support."""
    return float(log_prior_array(spec, theta.to_vector()[None, :])[0])


QUANTITIES = PARAM_NAMES + DERIVED_NAMES


def quantity_values(values, quantity):
    """Column ``quantity`` (a parameter or derived name) of a parameter array."""
    values = np.atleast_2d(np.asarray(values, dtype=float))
    if quantity in PARAM_NAMES:
        return values[:, PARAM_NAMES.index(quantity)]
    if quantity in DERIVED_NAMES:
        return derived_quantities(values)[:, DERIVED_NAMES.index(quantity)]
    raise ValidationError(f"unknown quantity {quantity!r}; choose from {QUANTITIES}")


def empirical_prior_cdf(spec, quantity, n=1_000_000, rng=None):
    """Prior CDF of a parameter or derived quantity from ``n`` prior draws.

    Non-finite transform values are dropped and counted (with a warning).
    """
    if n < MIN_CDF_SAMPLES:
        raise ValidationError(f"empirical prior CDF needs n >= {MIN_CDF_SAMPLES}, got {n}")
    rng = np.random.default_rng() if rng is None else rng
    samples = quantity_values(sample_prior_array(spec, rng, n), quantity)
    finite = np.isfinite(samples)
    dropped = int((~finite).sum())
    if dropped:
        warnings.warn(f"{dropped} non-finite prior values of {quantity} dropped", RuntimeWarning)
    return EmpiricalCdf.from_samples(samples[finite], quantity, dropped)
