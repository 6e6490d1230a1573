"""Small sampling helpers shared by the inference stages."""

import math

import numpy as np
from scipy.special import log_ndtr, ndtri_exp


def truncated_normal(mean, sd, lower, upper, rng):
    """One draw from ``N(mean, sd^2)`` restricted to ``[lower, upper]``.

    Inverse-CDF sampling in log space, reflected so the interval sits in the
    lower tail; stays accurate far out in either tail. ``sd = inf`` gives a
    uniform draw. Requires ``lower < upper`` with finite bounds when
    ``sd`` is infinite.
    """
    u = rng.random()
    if not math.isfinite(sd) or not math.isfinite(mean):
        return lower + (upper - lower) * u
    if sd <= 0.0:
        return min(max(mean, lower), upper)
    a = (lower - mean) / sd
    b = (upper - mean) / sd
    flip = a > 0.0
    if flip:
        a, b = -b, -a
    log_a = float(log_ndtr(a))
    log_b = float(log_ndtr(b))
    # log(Phi(a) + u * (Phi(b) - Phi(a))), computed without cancellation
    span = log_b + math.log1p(-math.exp(log_a - log_b)) if log_a < log_b else -math.inf
    if span == -math.inf:
        x = a if u < 0.5 else b
    else:
        log_p = np.logaddexp(log_a, math.log(u) + span) if u > 0.0 else log_a
        x = float(ndtri_exp(log_p))
        x = min(max(x, a), b)
    if flip:
        x = -x
    return min(max(mean + sd * x, lower), upper)


def reflect_delay(x, low, high):
    """Fold an integer proposal back into ``{low, ..., high}``.

    Reflection about the half-integers ``low - 1/2`` and ``high + 1/2`` keeps a
    symmetric random walk symmetric.
    """
    width = high - low + 1
    period = 2 * width
    r = (x - low) % period
    if r >= width:
        r = period - 1 - r
    return low + r
