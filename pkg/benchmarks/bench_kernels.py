"""Time the compiled kernels against the numpy fallback.

Each backend runs in its own interpreter (selected with ``SPARSEFIT_BACKEND``)
so that both measure the same public functions::

    python3 benchmarks/bench_kernels.py
    python3 benchmarks/bench_kernels.py --repeat 5 --paths 50000
"""

import argparse
import json
import os
import subprocess
import sys
import timeit

import numpy as np


def run_cases(args):
    from sparsefit import _backend
    from sparsefit.mcmc import McmcConfig, ekf_forward_filter, ffbs_sample, run_mcmc
    from sparsefit.model import observe, study_schedule, simulate_batch, simulate_trajectory
    from sparsefit.model import reference_theta

    theta = reference_theta(0)
    rng = np.random.default_rng(1)
    obs = observe(simulate_trajectory(theta, 0.5, 280, 1.0, rng), study_schedule(), theta.noise, rng)
    values = np.tile(theta.to_vector(), (args.paths, 1))
    noise = rng.standard_normal((2 * args.paths, 280))
    summary = ekf_forward_filter(theta, obs, 0.5, store_covariances=False)

    cases = {
        f"simulate {args.paths} paths": lambda: simulate_batch(
            values, 0.5, 280, 1.0, noise[:args.paths], noise[args.paths:]),
        "filter x100": lambda: [ekf_forward_filter(theta, obs, 0.5, store_covariances=False)
                                for _ in range(100)],
        "path sampler x100": lambda: [ffbs_sample(summary, rng) for _ in range(100)],
        "mcmc 300 iterations": lambda: run_mcmc(obs, config=McmcConfig(iterations=300, burn_in=0),
                                                rng=np.random.default_rng(2)),
    }
    timings = {name: min(timeit.repeat(fn, number=1, repeat=args.repeat))
               for name, fn in cases.items()}
    return {"backend": _backend.BACKEND, "timings": timings}


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=3, help="best of this many runs")
    parser.add_argument("--paths", type=int, default=20_000)
    parser.add_argument("--inner", action="store_true", help=argparse.SUPPRESS)
    args = parser.parse_args(argv)
    if args.inner:
        print(json.dumps(run_cases(args)))
        return 0

    from sparsefit._backend import available_backends
    results = {}
    for backend in available_backends():
        env = dict(os.environ, SPARSEFIT_BACKEND=backend)
        out = subprocess.run([sys.executable, __file__, "--inner", "--repeat", str(args.repeat),
                              "--paths", str(args.paths)],
                             env=env, capture_output=True, text=True, check=True)
        results[backend] = json.loads(out.stdout)["timings"]
    names = list(next(iter(results.values())))
    print(f"{'case':26s}" + "".join(f"{b:>12s}" for b in results) + "     speedup")
    for name in names:
        row = [results[b][name] for b in results]
        speedup = results["python"][name] / results["cython"][name] if len(row) > 1 else 1.0
        print(f"{name:26s}" + "".join(f"{t:11.4f}s" for t in row) + f"{speedup:11.1f}x")
    return 0


if __name__ == "__main__":
    sys.exit(main())
