"""Learnability indices: binned posterior-to-prior relative entropy and SD ratio.

Every quantity is first mapped to ``[0, 1]`` so that its prior is (close to)
uniform there: rates and ``v0`` by rescaling their prior range, delays onto
one unit bin per integer, derived quantities through their empirical prior
CDF.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError
from .model import DELAY_MAX, DELAY_MIN, DERIVED_NAMES, PARAM_NAMES, RATE_NAMES
from .priors import EmpiricalCdf, PriorSpec, quantity_values, sample_prior_array

DEFAULT_BINS = 50
SMOOTHING = 0.5
MIN_SAMPLES = 1000

REPORT_NAMES = RATE_NAMES + ("v0", "tau_v", "tau_m") + DERIVED_NAMES


def relative_entropy(post, prior_transform=None, bins=DEFAULT_BINS, alpha=SMOOTHING):
    """Binned relative entropy of posterior samples against a uniform reference.

    Parameters
    ----------
    post : array_like
        Posterior samples (at least 1000).
    prior_transform : callable, optional
        Maps samples to ``[0, 1]`` (a prior CDF or a range rescaling). The
        samples are used as given when omitted.
    bins : int
    alpha : float
        Additive smoothing per bin.

    Returns
    -------
    float
        ``sum p_i ln(p_i * bins)`` in nats, floored at 0.
    """
    x = np.asarray(post, dtype=float).ravel()
    if x.size < MIN_SAMPLES:
        raise ValidationError(f"need at least {MIN_SAMPLES} posterior samples, got {x.size}")
    if prior_transform is not None:
        x = np.asarray(prior_transform(x), dtype=float)
    x = x[np.isfinite(x)]
    idx = np.clip(np.floor(x * bins).astype(np.int64), 0, bins - 1)
    counts = np.bincount(idx, minlength=bins)
    p = (counts + alpha) / (x.size + alpha * bins)
    return max(float(np.sum(p * np.log(p * bins))), 0.0)


def log_sd_ratio(post, prior):
    """``ln(sd(post) / sd(prior))`` with a flag for degenerate inputs.

    Returns
    -------
    value : float
        Signed infinity when exactly one SD is zero, ``nan`` when both are.
    flagged : bool
    """
    post = np.asarray(post, dtype=float)
    prior = np.asarray(prior, dtype=float)
    if post.size == 0 or prior.size == 0:
        raise ValidationError("log_sd_ratio needs nonempty samples")
    sd_post = float(np.std(post))
    sd_prior = float(np.std(prior))
    if sd_post > 0 and sd_prior > 0:
        return math.log(sd_post / sd_prior), False
    if sd_post == 0 and sd_prior == 0:
        return math.nan, True
    return (-math.inf if sd_post == 0 else math.inf), True


def range_transform(lower, upper):
    def transform(x):
        return (np.asarray(x, dtype=float) - lower) / (upper - lower)
    return transform


def delay_transform(x, low=DELAY_MIN, high=DELAY_MAX):
    """Put integer ``k`` at the middle of unit bin ``k - low`` of ``high - low + 1``."""
    return (np.asarray(x, dtype=float) - low + 0.5) / (high - low + 1)


@dataclass
class LearnabilityEntry:
    name: str
    H: float
    log_sd_ratio: float
    n_posterior: int
    bins: int
    flags: list = field(default_factory=list)


@dataclass
class LearnabilityReport:
    """Indices per quantity, in ``REPORT_NAMES`` order."""

    entries: list

    def __getitem__(self, name):
        for e in self.entries:
            if e.name == name:
                return e
        raise KeyError(name)

    def names(self):
        return [e.name for e in self.entries]

    def as_dict(self):
        return {e.name: (e.H, e.log_sd_ratio) for e in self.entries}


def _transform_for(name, spec, prior_values):
    if name in ("tau_v", "tau_m"):
        lo, hi = spec.delay_support
        return lambda x: delay_transform(x, lo, hi), hi - lo + 1
    if name in PARAM_NAMES:
        return range_transform(*spec.bounds(name)), None
    cdf = EmpiricalCdf.from_samples(prior_values[np.isfinite(prior_values)], name)
    return cdf, None


def learnability_report(posterior, spec=None, rng=None, n_prior=1_000_000,
                        bins=DEFAULT_BINS, names=REPORT_NAMES):
    """Compute ``H`` and the log SD ratio for each quantity in ``names``.

    Parameters
    ----------
    posterior : ThetaSample or ndarray, shape (n, 12)
        Equal-weight posterior draws.
    spec : PriorSpec, optional
    rng : numpy.random.Generator
        Used for the prior reference draws.
    n_prior : int
        Number of prior draws behind the CDF transforms and reference SDs.

    Notes
    -----
    SD ratios are taken on the transformed scale. Failures of a single index
    are recorded in that entry's ``flags`` rather than raised.
    """
    spec = PriorSpec() if spec is None else spec
    if rng is None:
        raise ValidationError("learnability_report needs a random generator")
    values = np.asarray(getattr(posterior, "values", posterior), dtype=float)
    prior = sample_prior_array(spec, rng, n_prior)
    entries = []
    for name in names:
        post_q = quantity_values(values, name)
        prior_q = quantity_values(prior, name)
        flags = []
        transform, nbins = _transform_for(name, spec, prior_q)
        nbins = nbins or bins
        finite = np.isfinite(post_q)
        if not finite.all():
            flags.append(f"{int((~finite).sum())} non-finite posterior values dropped")
        try:
            H = relative_entropy(post_q[finite], transform, nbins)
        except ValidationError as err:
            H = math.nan
            flags.append(str(err))
        prior_t = transform(prior_q[np.isfinite(prior_q)])
        post_t = transform(post_q[finite])
        try:
            ratio, flagged = log_sd_ratio(post_t, prior_t)
            if flagged:
                flags.append("zero standard deviation")
        except ValidationError as err:
            ratio = math.nan
            flags.append(str(err))
        entries.append(LearnabilityEntry(name, H, ratio, int(finite.sum()), nbins, flags))
    return LearnabilityReport(entries)
