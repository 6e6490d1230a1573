"""Command line interface: ``sparsefit <command> [options]``.

Exit status is 0 on success, 1 for usage and validation errors and 2 for
failures during computation.
"""

from __future__ import annotations

import argparse
import os
import sys
import traceback
from pathlib import Path

import numpy as np

from . import io
from .abc import WeightedSample, resample_weighted
from .config import RunConfig, load_config
from .errors import ComputationError, SparsefitError, ValidationError
from .model import (DERIVED_NAMES, STUDY_HORIZON, PARAM_NAMES, REFERENCE_SETS, ObservationSet,
                    observe, study_schedule, simulate_trajectory, reference_theta)
from .pipeline import (load_chain, predictive_bands, resolve_m0, run_fit, simulate_paths,
                       stage_rng)

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _threads(value):
    if value is None:
        env = os.environ.get("SPARSEFIT_THREADS")
        if not env:
            return 1
        value = env
    try:
        n = int(value)
    except ValueError:
        raise ValidationError(f"thread count must be an integer, got {value!r}") from None
    if n < 1:
        raise ValidationError("thread count must be at least 1")
    return n


def _seed(text):
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"seed must be an integer, got {text!r}") from None
    if not 0 <= value < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return value


def _require(args, *names):
    for name in names:
        if getattr(args, name, None) is None:
            raise ValidationError(f"--{name.replace('_', '-')} is required for '{args.command}'")


def _config(args):
    if args.config is None:
        if args.seed is None:
            raise ValidationError("give --config or at least --seed")
        cfg = RunConfig(seed=args.seed)
    else:
        cfg = load_config(args.config)
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    return cfg


def _load_data(args):
    return io.load_observations(args.data, args.subject)


def _resample(values, weights, n, rng):
    ws = WeightedSample(values, np.zeros(len(values)), weights / weights.sum(), np.nan,
                        np.arange(len(values)), 0)
    return resample_weighted(ws, n, rng)


# ------------------------------------------------------------------ commands

def cmd_simulate(args):
    cfg = _config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    datasets, truth, latent = [], [], []
    for i in range(args.subjects):
        index = (args.param_set + i) % len(REFERENCE_SETS) if args.cycle else args.param_set
        theta = reference_theta(index)
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(cfg.seed, spawn_key=(100 + i,))))
        traj = simulate_trajectory(theta, args.m0, STUDY_HORIZON, 1.0, rng)
        obs = observe(traj, study_schedule(), theta.noise, rng)
        sid = f"{args.prefix}{i + 1}"
        datasets.append(ObservationSet(obs.days, obs.series, obs.values, sid))
        truth.append([sid, index, *theta.to_vector()])
        latent.extend([sid, int(d), float(v), float(m)]
                      for d, v, m in zip(traj.times, traj.v, traj.m))
    io.write_observations(out / "data.csv", datasets)
    io.write_table(out / "truth.csv", ("subject_id", "param_set") + PARAM_NAMES, truth)
    io.write_table(out / "latent.csv", ("subject_id", "day", "V", "M"), latent)
    print(f"wrote {args.subjects} subject(s) to {out}")


def cmd_fit(args, stages=("mcmc", "abc")):
    _require(args, "data", "out")
    cfg = _config(args)
    obs = _load_data(args)
    chain = None
    if stages == ("abc",):
        chain_path = Path(args.chain) if args.chain else Path(args.out) / "mcmc_chain.csv"
        if not chain_path.exists():
            raise ValidationError(f"no MCMC chain at {chain_path}; run fit-mcmc first or pass --chain")
        chain = load_chain(chain_path)
    result = run_fit(cfg, obs, args.out, threads=_threads(args.threads), stages=stages, chain=chain)
    msg = f"subject {obs.subject_id or '-'}: {len(result.chain)} MCMC draws"
    if result.weighted is not None:
        msg += f", {len(result.weighted)} ABC particles (ESS {result.weighted.ess:.0f})"
    print(msg + f"; artifacts in {args.out}")


def cmd_predict(args):
    _require(args, "posterior", "out")
    cfg = _config(args)
    values, weights = io.read_posterior(args.posterior)
    if args.m0 is not None:
        m0 = args.m0
    else:
        _require(args, "data")
        m0 = resolve_m0(cfg, _load_data(args))
    sample = _resample(values, weights, cfg.output.resample, stage_rng(cfg.seed, "resample"))
    bands = predictive_bands(sample, m0, stage_rng(cfg.seed, "bands_abc"), cfg.horizon, cfg.step)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    io.write_bands(out / "bands.csv", bands)
    v, m = simulate_paths(sample.values[:cfg.output.trajectories], m0, cfg.horizon, cfg.step,
                          stage_rng(cfg.seed, "trajectories"))
    io.write_trajectories(out / "trajectories.csv", bands.days, v, m)
    print(f"wrote bands and {v.shape[0]} trajectories to {out}")


def cmd_learnability(args):
    _require(args, "posterior", "out")
    from .learnability import learnability_report
    cfg = _config(args)
    values, weights = io.read_posterior(args.posterior)
    sample = _resample(values, weights, cfg.output.resample, stage_rng(cfg.seed, "resample"))
    report = learnability_report(sample, cfg.prior, stage_rng(cfg.seed, "learnability"),
                                 cfg.output.learnability_prior_draws)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    io.write_learnability(out / "learnability.csv", report)
    for e in report.entries:
        print(f"{e.name:9s} H={e.H:.4f} log_sd_ratio={e.log_sd_ratio:+.4f}")


def cmd_nondim(args):
    _require(args, "posterior")
    values, weights = io.read_posterior(args.posterior)
    cols = io.posterior_columns(values, weights)
    names = DERIVED_NAMES[2:]
    idx = [io.POSTERIOR_HEADER.index(n) for n in names]
    table = np.column_stack([cols[:, idx], weights])
    if args.out is not None:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        io.write_table(out / "nondim.csv", names + ("weight",), table)
    w = weights / weights.sum()
    for j, name in enumerate(names):
        x = table[:, j]
        ok = np.isfinite(x)
        q = io.weighted_quantile(x[ok], w[ok], (5.0, 50.0, 95.0))
        print(f"{name:9s} median {q[1]:.6g}  90% interval [{q[0]:.6g}, {q[2]:.6g}]")


def cmd_self_check(args):
    from .selfcheck import run_self_check
    results = run_self_check(seed=args.seed if args.seed is not None else 0)
    failed = [r for r in results if not r.passed]
    for r in results:
        print(f"[{'PASS' if r.passed else 'FAIL'}] {r.name}: {r.detail}")
    if failed:
        raise ComputationError(f"{len(failed)} self-check(s) failed")


COMMANDS = {
    "simulate": cmd_simulate,
    "fit": cmd_fit,
    "fit-mcmc": lambda a: cmd_fit(a, ("mcmc",)),
    "fit-abc": lambda a: cmd_fit(a, ("abc",)),
    "predict": cmd_predict,
    "learnability": cmd_learnability,
    "nondim": cmd_nondim,
    "self-check": cmd_self_check,
}


def build_parser():
    common = _Parser(add_help=False)
    common.add_argument("--config", help="TOML run configuration")
    common.add_argument("--data", help="observations CSV (subject_id,day,series,value)")
    common.add_argument("--out", help="output directory")
    common.add_argument("--seed", type=_seed, help="overrides the config seed")
    common.add_argument("--subject", help="subject id to select from the data file")
    common.add_argument("--threads", help="worker threads (default: $SPARSEFIT_THREADS or 1)")

    parser = _Parser(prog="sparsefit", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", metavar="command", parser_class=_Parser)
    sub.required = True
    sub.add_parser("simulate", parents=[common], help="synthetic subjects on the study schedule")
    for name, text in (("fit", "MCMC + ABC fit with all artifacts"),
                       ("fit-mcmc", "first stage only"),
                       ("fit-abc", "second stage from an existing chain")):
        p = sub.add_parser(name, parents=[common], help=text)
        if name == "fit-abc":
            p.add_argument("--chain", help="mcmc_chain.csv (default: <out>/mcmc_chain.csv)")
    p = sub.add_parser("predict", parents=[common], help="predictive bands from a posterior CSV")
    p.add_argument("--posterior", help="posterior.csv")
    p.add_argument("--m0", type=float, help="initial M (default: day-0 record of --data)")
    p = sub.add_parser("learnability", parents=[common], help="learnability indices")
    p.add_argument("--posterior", help="posterior.csv")
    p = sub.add_parser("nondim", parents=[common], help="dimensionless parameters")
    p.add_argument("--posterior", help="posterior.csv")
    sub.add_parser("self-check", parents=[common], help="run the oracle checks")

    sim = sub.choices["simulate"]
    sim.add_argument("--param-set", type=int, default=0, choices=range(len(REFERENCE_SETS)))
    sim.add_argument("--subjects", type=int, default=1)
    sim.add_argument("--cycle", action="store_true", help="cycle through the parameter sets")
    sim.add_argument("--m0", type=float, default=0.5)
    sim.add_argument("--prefix", default="S")
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command == "simulate":
            _require(args, "out")
            if args.seed is None and args.config is None:
                raise ValidationError("simulate needs --seed or --config")
        COMMANDS[args.command](args)
    except UsageError as err:
        print(err, file=sys.stderr)
        return EXIT_INVALID
    except ValidationError as err:
        print(f"sparsefit: invalid input: {err}", file=sys.stderr)
        return EXIT_INVALID
    except SparsefitError as err:
        print(f"sparsefit: failed: {err}", file=sys.stderr)
        return EXIT_RUNTIME
    except OSError as err:
        print(f"sparsefit: I/O failure: {err}", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception:
        traceback.print_exc()
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
