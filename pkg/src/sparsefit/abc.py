"""Second stage: weighted ABC with a kernel mixture proposal.

Candidates are generated in fixed-size chunks. Chunk ``c`` draws all of its
randomness from ``SeedSequence(seed, spawn_key=(c,))``, so the pool does not
depend on how chunks are scheduled across threads, and any single candidate
can be regenerated from ``(seed, candidate index)``.
"""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import logsumexp

from .errors import BudgetExceededError, StructuralError, ValidationError
from .model import PARAM_NAMES, n_steps, simulate_batch
from .priors import PriorSpec, sample_prior_array, sample_rates

DEFAULT_CHUNK = 4096
MIN_CHAIN = 100


def kde_bandwidth(n, d):
    """Multivariate normal-reference smoothing factor ``(4/(n(d+2)))^(1/(d+4))``."""
    return (4.0 / (n * (d + 2.0))) ** (1.0 / (d + 4.0))


@dataclass
class ProposalMixture:
    """Shrunk Gaussian kernel mixture truncated to a hypercube.

    Kernels sit at ``a * x_j + (1 - a) * mean`` with shared covariance
    ``h^2 S`` and ``a = sqrt(1 - h^2)``, so the untruncated mixture has the
    sample mean and covariance of the draws ``x_j``. ``support`` is an optional
    extra indicator (e.g. the prior region) applied together with the box.
    """

    centers: np.ndarray
    mean: np.ndarray
    cov: np.ndarray
    bandwidth: float
    lower: np.ndarray
    upper: np.ndarray
    support: object = None
    jittered: bool = False
    chol: np.ndarray = field(init=False, repr=False)
    _white_centers: np.ndarray = field(init=False, repr=False)
    _white_sq: np.ndarray = field(init=False, repr=False)
    _log_norm: float = field(init=False, repr=False)

    def __post_init__(self):
        self.centers = np.atleast_2d(np.asarray(self.centers, dtype=float))
        d = self.centers.shape[1]
        self.mean = np.asarray(self.mean, dtype=float).reshape(d)
        self.cov = np.asarray(self.cov, dtype=float).reshape(d, d)
        self.lower = np.asarray(self.lower, dtype=float).reshape(d)
        self.upper = np.asarray(self.upper, dtype=float).reshape(d)
        if not np.all(self.upper > self.lower):
            raise ValidationError("truncation box is degenerate in some coordinate")
        self.chol = np.linalg.cholesky(self.bandwidth ** 2 * self.cov)
        self._white_centers = self._white(self.kernel_means)
        self._white_sq = np.einsum("ij,ij->i", self._white_centers, self._white_centers)
        self._log_norm = (-0.5 * d * math.log(2 * math.pi)
                          - np.log(np.diag(self.chol)).sum() - math.log(self.centers.shape[0]))

    @property
    def dim(self):
        return self.centers.shape[1]

    @property
    def shrink(self):
        return math.sqrt(1.0 - self.bandwidth ** 2)

    @property
    def kernel_means(self):
        return self.shrink * self.centers + (1.0 - self.shrink) * self.mean

    def _white(self, x):
        return solve_triangular(self.chol, np.atleast_2d(x).T, lower=True).T

    def inside(self, x):
        """Boolean mask of rows inside the box and the extra support."""
        x = np.atleast_2d(x)
        ok = np.all((x >= self.lower) & (x <= self.upper), axis=1)
        if self.support is not None:
            ok &= self.support(x)
        return ok

    def sample_untruncated(self, rng, n):
        idx = rng.integers(0, self.centers.shape[0], size=n)
        z = rng.standard_normal((n, self.dim))
        return self.kernel_means[idx] + z @ self.chol.T

    def sample(self, rng, n, budget=None):
        """Draw ``n`` points by rejection against the truncation region.

        Returns
        -------
        draws : ndarray, shape (n, d)
        attempts : int
            Number of untruncated draws consumed.
        """
        out = np.empty((n, self.dim))
        filled = attempts = 0
        while filled < n:
            batch = max(n - filled, 64)
            if budget is not None:
                batch = min(batch, budget - attempts)
                if batch <= 0:
                    raise BudgetExceededError(
                        f"proposal acceptance too low: {filled} of {n} inside after "
                        f"{attempts} attempts", out[:filled], {"attempts": attempts})
            x = self.sample_untruncated(rng, batch)
            attempts += batch
            x = x[self.inside(x)]
            take = min(n - filled, x.shape[0])
            out[filled:filled + take] = x[:take]
            filled += take
        return out, attempts

    def log_density(self, x, block=2048):
        """Log of the untruncated mixture density times the region indicator."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        out = np.full(x.shape[0], -np.inf)
        ok = self.inside(x)
        xw = self._white(x[ok])
        vals = np.empty(xw.shape[0])
        for s in range(0, xw.shape[0], block):
            part = xw[s:s + block]
            sq = (np.einsum("ij,ij->i", part, part)[:, None] + self._white_sq[None, :]
                  - 2.0 * part @ self._white_centers.T)
            vals[s:s + block] = logsumexp(-0.5 * np.maximum(sq, 0.0), axis=1)
        out[ok] = vals + self._log_norm
        return out


def fit_kde_proposal(draws, support=None, bounds=None):
    """Build the kernel mixture from MCMC draws.

    Parameters
    ----------
    draws : McmcChain or array_like, shape (N, d)
        For a chain, the five rate columns are used.
    support : callable, optional
        Extra indicator applied with the box (defaults to the default prior's
        rate region when ``draws`` is a chain).
    bounds : (lower, upper), optional
        Override for the truncation box; defaults to per-coordinate min/max.
    """
    if hasattr(draws, "values") and hasattr(draws, "column"):
        x = draws.values[:, :5]
        if support is None:
            support = rate_support(PriorSpec())
    else:
        x = np.asarray(draws, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
    n, d = x.shape
    if n < MIN_CHAIN:
        raise ValidationError(f"need at least {MIN_CHAIN} draws to build a proposal, got {n}")
    mean = x.mean(axis=0)
    cov = np.atleast_2d(np.cov(x, rowvar=False))
    trace = float(np.trace(cov))
    if not trace > 0:
        raise ValidationError("draws are identical; proposal covariance is zero")
    jittered = False
    eig = np.linalg.eigvalsh(cov)
    if eig[0] <= 1e-12 * eig[-1]:
        cov = cov + np.eye(d) * (1e-10 * trace / d)
        jittered = True
        warnings.warn("proposal covariance is rank deficient; diagonal jitter added",
                      RuntimeWarning)
    lower, upper = (x.min(axis=0), x.max(axis=0)) if bounds is None else bounds
    return ProposalMixture(x, mean, cov, kde_bandwidth(n, d), lower, upper, support, jittered)


def proposal_density(prop, rates):
    """Unnormalized proposal density (zero outside the truncation region)."""
    if hasattr(rates, "as_tuple"):
        rates = rates.as_tuple()
    out = np.exp(prop.log_density(rates))
    return float(out[0]) if out.size == 1 else out


class PriorProposal:
    """The rate prior itself used as proposal; importance weights are constant."""

    def __init__(self, spec):
        self.spec = spec

    def sample(self, rng, n, budget=None):
        return sample_rates(self.spec, rng, n), n


def rate_support(spec):
    """Indicator of the prior rate region for ``(n, 5)`` arrays."""
    lo = np.asarray(spec.rate_lower)
    hi = np.asarray(spec.rate_upper)
    cap = spec.capacity_cap

    def inside(x):
        return (np.all((x >= lo) & (x <= hi), axis=1)
                & (x[:, 0] < cap * x[:, 1]) & (x[:, 3] < cap * x[:, 4]))

    return inside


# ------------------------------------------------------------- discrepancy

def observation_scales(y_obs):
    """Sample SDs ``(s_V, s_M)`` of the observed series (day-0 ``M`` included)."""
    scales = []
    for tag, values in (("V", y_obs.v_values), ("M", y_obs.m_values)):
        if values.size < 2:
            scales.append(math.nan)
            continue
        s = float(np.std(values, ddof=1))
        if not s > 0:
            raise ValidationError(f"observed {tag} values have zero spread")
        scales.append(s)
    return tuple(scales)


def discrepancy(y, y_obs, s_v, s_m):
    """Scaled squared distance between two datasets on the same schedule.

    The day-0 ``M`` record, which fixes the initial state, is not compared.
    """
    if y.schedule != y_obs.schedule:
        raise StructuralError("datasets have different schedules")
    total = 0.0
    for (day, tag, a), (_, _, b) in zip(y.records(), y_obs.records()):
        if tag == "M" and day == 0:
            continue
        scale = s_v if tag == "V" else s_m
        total += (a - b) ** 2 / scale ** 2
    return total


# ------------------------------------------------------------- ABC problems

class ModelProblem:
    """Weighted ABC for the stochastic delay model.

    Rates come from ``rate_proposal``; ``v0``, delays and variances from their
    priors, so only the rates enter the importance weights.
    """

    names = PARAM_NAMES

    def __init__(self, y_obs, rate_proposal, spec=None, m0=None, horizon=280.0, step=1.0):
        self.spec = PriorSpec() if spec is None else spec
        self.proposal = rate_proposal
        self.m0 = y_obs.initial_m() if m0 is None else float(m0)
        if self.m0 is None:
            raise ValidationError("no day-0 M observation and no m0 given")
        self.horizon, self.step = float(horizon), float(step)
        self.n = n_steps(horizon, step)
        data = y_obs.without_initial_m()
        if len(data) == 0:
            raise ValidationError("no observations to compare against")
        self.s_v, self.s_m = observation_scales(y_obs)
        self.index = np.array([int(round(d / step)) for d in data.days])
        self.is_v = data.series == "V"
        self.target = data.values.copy()
        if np.isnan(self.s_v) and self.is_v.any() or np.isnan(self.s_m) and (~self.is_v).any():
            raise ValidationError("need at least two observations per compared series")
        self.scale2 = np.where(self.is_v, self.s_v ** 2, self.s_m ** 2)
        self._rate_support = rate_support(self.spec)

    def propose(self, rng, count, budget=None):
        rates, attempts = self.proposal.sample(rng, count, budget)
        values = sample_prior_array(self.spec, rng, count)
        values[:, :5] = rates
        return values, attempts

    def discrepancies(self, values, rng, rows=None):
        """Simulate and score candidates; ``rows`` restricts the work to a subset.

        Noise is always drawn for the whole batch, so a row's result does not
        depend on which other rows are simulated.
        """
        count = values.shape[0]
        noise = rng.standard_normal((2 * count, self.n))
        e = rng.standard_normal((count, self.target.size))
        rows = np.arange(count) if rows is None else np.asarray(rows)
        values = values[rows]
        noise_v, noise_m, e = noise[rows], noise[count + rows], e[rows]
        count = rows.size
        v, m = simulate_batch(values, self.m0, self.horizon, self.step, noise_v, noise_m)
        sd_v = np.sqrt(values[:, PARAM_NAMES.index("sigma2_v")])
        sd_m = np.sqrt(values[:, PARAM_NAMES.index("sigma2_m")])
        total = np.zeros(count)
        for j in range(self.target.size):
            k = self.index[j]
            if self.is_v[j]:
                y = np.maximum(v[:, k] + sd_v * e[:, j], 0.0)
            else:
                y = np.maximum(m[:, k] + sd_m * e[:, j], 0.0)
            total += (y - self.target[j]) ** 2 / self.scale2[j]
        return total

    def log_weights(self, values):
        if isinstance(self.proposal, PriorProposal):
            return np.zeros(values.shape[0])
        rates = values[:, :5]
        log_g = self.proposal.log_density(rates)
        log_pi = np.where(self._rate_support(rates), 0.0, -np.inf)
        return log_pi - log_g


# ------------------------------------------------------------------ engine

@dataclass
class AbcConfig:
    """Settings of the weighted ABC stage."""

    accepted: int = 10_000
    quantile: float = 0.05
    pool_budget: int | None = None
    chunk_size: int = DEFAULT_CHUNK
    threads: int = 1

    def __post_init__(self):
        if self.accepted < 1:
            raise ValidationError("accepted must be positive")
        if not 0.0 < self.quantile <= 0.5:
            raise ValidationError(f"quantile must lie in (0, 0.5], got {self.quantile}")
        if self.chunk_size < 1 or self.threads < 1:
            raise ValidationError("chunk_size and threads must be positive")

    @property
    def pool_size(self):
        return int(math.ceil(self.accepted / self.quantile - 1e-9))

    @property
    def budget(self):
        return 50 * self.pool_size if self.pool_budget is None else int(self.pool_budget)


@dataclass
class WeightedSample:
    """Accepted draws with normalized importance weights."""

    values: np.ndarray
    discrepancies: np.ndarray
    weights: np.ndarray
    epsilon: float
    candidate_ids: np.ndarray
    seed: int
    names: tuple = PARAM_NAMES
    diagnostics: dict = field(default_factory=dict)

    def __len__(self):
        return self.values.shape[0]

    def column(self, name):
        return self.values[:, self.names.index(name)]

    @property
    def ess(self):
        return float(1.0 / np.sum(self.weights ** 2))

    def mean(self):
        return self.weights @ self.values


def _chunk_rng(seed, chunk):
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(chunk,))))


def _run_chunk(problem, seed, chunk, count, budget):
    rng = _chunk_rng(seed, chunk)
    values, attempts = problem.propose(rng, count, budget)
    return values, problem.discrepancies(values, rng), attempts


def _chunk_sizes(pool, chunk_size):
    sizes = [chunk_size] * (pool // chunk_size)
    if pool % chunk_size:
        sizes.append(pool % chunk_size)
    return sizes


def run_abc_problem(problem, config, seed):
    """Pool-then-threshold weighted ABC for any problem object.

    ``problem`` provides ``propose(rng, n, budget)``, ``discrepancies(values,
    rng)``, ``log_weights(values)`` and ``names``.
    """
    pool = config.pool_size
    if config.accepted > pool:
        raise ValidationError("accepted count exceeds the pool size")
    sizes = _chunk_sizes(pool, config.chunk_size)
    budget = config.budget
    # each chunk may use at most its share of the budget
    shares = [max(1, (budget * s) // pool) for s in sizes]

    def job(c):
        return _run_chunk(problem, seed, c, sizes[c], shares[c])

    results = [None] * len(sizes)
    failure = None
    with ThreadPoolExecutor(max_workers=config.threads) as ex:
        for c, fut in enumerate([ex.submit(job, c) for c in range(len(sizes))]):
            try:
                results[c] = fut.result()
            except BudgetExceededError as err:
                failure = failure or (c, err)
    done = [r for r in results if r is not None]
    attempts = sum(r[2] for r in done)
    if failure is not None:
        partial = None
        if done:
            partial = (np.concatenate([r[0] for r in done]), np.concatenate([r[1] for r in done]))
        raise BudgetExceededError(
            f"candidate budget of {budget} proposals exhausted in chunk {failure[0]}",
            partial, {"completed_chunks": len(done), "chunks": len(sizes),
                      "attempts": attempts + failure[1].diagnostics.get("attempts", 0)})
    values = np.concatenate([r[0] for r in results])
    dist = np.concatenate([r[1] for r in results])
    dist = np.where(np.isfinite(dist), dist, np.inf)
    order = np.argsort(dist, kind="stable")[:config.accepted]
    chosen = values[order]
    log_w = problem.log_weights(chosen)
    if not np.any(np.isfinite(log_w)):
        raise BudgetExceededError("all accepted candidates have zero weight", None, {})
    w = np.exp(log_w - np.max(log_w))
    w /= w.sum()
    ws = WeightedSample(chosen, dist[order], w, float(dist[order[-1]]), order.astype(np.int64),
                        int(seed), tuple(problem.names),
                        {"pool": pool, "attempts": int(attempts), "chunks": len(sizes),
                         "chunk_size": config.chunk_size})
    ws.diagnostics["ess"] = ws.ess
    return ws


def run_abc(y_obs, prop, spec=None, config=None, rng=None, seed=None, m0=None,
            horizon=280.0, step=1.0):
    """Weighted ABC against the exact stochastic delay model.

    Parameters
    ----------
    y_obs : ObservationSet
    prop : ProposalMixture or PriorProposal
        Proposal for the five rates.
    spec : PriorSpec, optional
    config : AbcConfig, optional
    rng : numpy.random.Generator, optional
        Source of the run seed when ``seed`` is not given.
    seed : int, optional

    Returns
    -------
    WeightedSample
    """
    config = AbcConfig() if config is None else config
    if seed is None:
        if rng is None:
            raise ValidationError("run_abc needs a seed or a random generator")
        seed = int(rng.integers(0, 2 ** 63))
    problem = ModelProblem(y_obs, prop, spec, m0, horizon, step)
    return run_abc_problem(problem, config, seed)


def resimulate_candidate(problem, config, seed, candidate):
    """Regenerate one pool candidate and recompute its discrepancy alone."""
    sizes = _chunk_sizes(config.pool_size, config.chunk_size)
    chunk, row = divmod(int(candidate), config.chunk_size)
    rng = _chunk_rng(seed, chunk)
    pool = config.pool_size
    share = max(1, (config.budget * sizes[chunk]) // pool)
    values, _ = problem.propose(rng, sizes[chunk], share)
    return values[row], float(problem.discrepancies(values, rng, rows=[row])[0])


@dataclass
class ThetaSample:
    """Equal-weight draws, e.g. from resampling a weighted sample."""

    values: np.ndarray
    names: tuple = PARAM_NAMES
    warnings: list = field(default_factory=list)

    def __len__(self):
        return self.values.shape[0]

    def column(self, name):
        return self.values[:, self.names.index(name)]


def resample_weighted(ws, n, rng):
    """Multinomial resampling to ``n`` equal-weight draws.

    A warning is attached (and emitted) when the effective sample size is
    below ``0.01 n``.
    """
    w = np.asarray(ws.weights, dtype=float)
    if np.any(w < 0) or not math.isclose(w.sum(), 1.0, rel_tol=1e-9):
        raise ValidationError("weights must be nonnegative and sum to 1")
    idx = rng.choice(w.size, size=n, replace=True, p=w)
    out = ThetaSample(ws.values[idx], tuple(ws.names))
    ess = 1.0 / np.sum(w ** 2)
    if ess < 0.01 * n:
        msg = f"effective sample size {ess:.1f} is below 1% of {n}"
        out.warnings.append(msg)
        warnings.warn(msg, RuntimeWarning)
    return out
