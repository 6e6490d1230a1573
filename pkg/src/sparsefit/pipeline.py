"""Two-stage fit of one subject, predictive bands and artifact output."""

from __future__ import annotations

import json
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import io
from ._backend import BACKEND
from .abc import (ModelProblem, ThetaSample, fit_kde_proposal, rate_support, resample_weighted,
                  run_abc_problem)
from .errors import SparsefitError, StageError, ValidationError
from .learnability import learnability_report
from .mcmc import McmcChain, run_mcmc
from .model import PARAM_NAMES, n_steps, simulate_batch

MIN_BAND_DRAWS = 1000

# independent random streams per stage, all derived from the run seed
STREAMS = {"mcmc": 1, "abc": 2, "resample": 3, "bands_mcmc": 4, "bands_abc": 5,
           "learnability": 6, "trajectories": 7}


def stage_rng(seed, stage):
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(STREAMS[stage],))))


def stage_seed(seed, stage):
    state = np.random.SeedSequence(seed, spawn_key=(STREAMS[stage],)).generate_state(2, np.uint64)
    return int(state[0]) << 64 | int(state[1])


@dataclass
class BandTable:
    """Per-day percentiles (2.5, 25, 50, 75, 97.5) of ``V`` and ``M``."""

    days: np.ndarray
    v: np.ndarray
    m: np.ndarray
    levels: tuple = io.BAND_LEVELS

    def median(self, series="V"):
        return (self.v if series == "V" else self.m)[:, self.levels.index(50.0)]


def simulate_paths(values, m0, horizon, step, rng):
    """Simulate one latent path per parameter row."""
    values = np.atleast_2d(values)
    n = n_steps(horizon, step)
    noise = rng.standard_normal((2 * values.shape[0], n))
    return simulate_batch(values, m0, horizon, step, noise[:values.shape[0]], noise[values.shape[0]:])


def predictive_bands(posterior, m0, rng, horizon=280.0, step=1.0, chunk=2000):
    """Posterior-predictive percentile bands of the latent paths.

    Parameters
    ----------
    posterior : ThetaSample or ndarray, shape (n, 12)
        Equal-weight draws (at least 1000).
    m0 : float
    rng : numpy.random.Generator
    """
    values = np.asarray(getattr(posterior, "values", posterior), dtype=float)
    if values.shape[0] < MIN_BAND_DRAWS:
        raise ValidationError(f"need at least {MIN_BAND_DRAWS} draws for bands, got {values.shape[0]}")
    n = n_steps(horizon, step)
    vs = np.empty((values.shape[0], n + 1))
    ms = np.empty_like(vs)
    for s in range(0, values.shape[0], chunk):
        vs[s:s + chunk], ms[s:s + chunk] = simulate_paths(values[s:s + chunk], m0, horizon, step, rng)
    levels = np.asarray(io.BAND_LEVELS)
    return BandTable(np.arange(n + 1) * step, np.percentile(vs, levels, axis=0).T,
                     np.percentile(ms, levels, axis=0).T)


@dataclass
class FitResult:
    chain: object
    weighted: object = None
    resampled: ThetaSample = None
    bands_mcmc: BandTable = None
    bands_abc: BandTable = None
    learnability: object = None
    m0: float = None
    timings: dict = None


def resolve_m0(config, obs):
    if config.subject.get("m0_source", "day0") == "value":
        return float(config.subject["m0"])
    m0 = obs.initial_m()
    if m0 is None:
        raise ValidationError("data has no day-0 M record; set subject.m0_source = 'value'")
    return m0


def _stage(name, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except ValidationError:
        raise
    except SparsefitError as err:
        raise StageError(name, err) from err
    except (FloatingPointError, ArithmeticError, np.linalg.LinAlgError) as err:
        raise StageError(name, err) from err


def run_mcmc_stage(config, obs, m0):
    return _stage("mcmc", run_mcmc, obs, config.prior, config.mcmc,
                  stage_rng(config.seed, "mcmc"), m0=m0)


def run_abc_stage(config, obs, m0, chain, threads=1):
    def go():
        prop = fit_kde_proposal(chain, rate_support(config.prior))
        problem = ModelProblem(obs, prop, config.prior, m0, config.horizon, config.step)
        abc_cfg = config.abc
        abc_cfg = type(abc_cfg)(abc_cfg.accepted, abc_cfg.quantile, abc_cfg.pool_budget,
                                abc_cfg.chunk_size, threads)
        return run_abc_problem(problem, abc_cfg, stage_seed(config.seed, "abc"))
    return _stage("abc", go)


def run_fit(config, obs, out_dir=None, threads=1, stages=("mcmc", "abc"), chain=None):
    """Run the MCMC stage, the ABC stage, or both, and write artifacts.

    Parameters
    ----------
    config : RunConfig
    obs : ObservationSet
    out_dir : path, optional
        Artifacts are written here when given.
    threads : int
        Worker threads for ABC candidate generation; does not change results.
    stages : tuple
        ``("mcmc",)``, ``("abc",)`` (needs ``chain``) or both.
    chain : McmcChain, optional
        Reuse an existing chain instead of running the MCMC stage.
    """
    m0 = resolve_m0(config, obs)
    timings = {}
    t = time.perf_counter()
    if "mcmc" in stages:
        chain = run_mcmc_stage(config, obs, m0)
        timings["mcmc"] = time.perf_counter() - t
    elif chain is None:
        raise ValidationError("the ABC stage needs an MCMC chain")
    result = FitResult(chain, m0=m0, timings=timings)
    result.bands_mcmc = _stage("bands", predictive_bands, chain.values, m0,
                               stage_rng(config.seed, "bands_mcmc"), config.horizon, config.step)
    if "abc" in stages:
        t = time.perf_counter()
        result.weighted = run_abc_stage(config, obs, m0, chain, threads)
        timings["abc"] = time.perf_counter() - t
        result.resampled = resample_weighted(result.weighted, config.output.resample,
                                             stage_rng(config.seed, "resample"))
        result.bands_abc = _stage("bands", predictive_bands, result.resampled, m0,
                                  stage_rng(config.seed, "bands_abc"), config.horizon, config.step)
        t = time.perf_counter()
        result.learnability = _stage(
            "learnability", learnability_report, result.resampled, config.prior,
            stage_rng(config.seed, "learnability"), config.output.learnability_prior_draws)
        timings["learnability"] = time.perf_counter() - t
    if out_dir is not None:
        write_artifacts(result, config, obs, out_dir)
    return result


def write_artifacts(result, config, obs, out_dir):
    """Write every available table of ``result`` into ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []

    def note(name):
        written.append(name)
        return out / name

    io.write_chain(note("mcmc_chain.csv"), result.chain.values)
    io.write_bands(note("bands_mcmc.csv"), result.bands_mcmc)
    final = result.chain.values
    weights = None
    if result.weighted is not None:
        final, weights = result.weighted.values, result.weighted.weights
        io.write_bands(note("bands_abc.csv"), result.bands_abc)
        io.write_learnability(note("learnability.csv"), result.learnability)
        draws = result.resampled.values[:config.output.trajectories]
        v, m = simulate_paths(draws, result.m0, config.horizon, config.step,
                              stage_rng(config.seed, "trajectories"))
        io.write_trajectories(note("trajectories.csv"), np.arange(v.shape[1]) * config.step, v, m)
    io.write_posterior(note("posterior.csv"), final, weights)
    io.write_summary(note("summary.csv"), final, weights)
    info = {
        "subject": obs.subject_id,
        "seed": config.seed,
        "m0": result.m0,
        "backend": BACKEND,
        "stages": ["mcmc"] + (["abc"] if result.weighted is not None else []),
        "mcmc_counters": result.chain.counters,
        "artifacts": sorted(written + ["run_info.json", "timings.json"]),
    }
    if result.weighted is not None:
        info["abc"] = {"epsilon": result.weighted.epsilon,
                       "resample_warnings": result.resampled.warnings,
                       **result.weighted.diagnostics}
    # timings vary run to run; they live in a separate file so that the
    # deterministic artifacts stay byte-identical
    io.write_json(out / "run_info.json", info)
    (out / "timings.json").write_text(json.dumps(result.timings or {}, indent=2) + "\n")
    return written


def load_chain(path):
    header, data = io.read_table(path)
    if tuple(header) != PARAM_NAMES:
        raise ValidationError(f"{path}: not an MCMC chain table")
    return McmcChain(data)
