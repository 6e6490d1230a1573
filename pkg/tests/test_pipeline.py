import json
import os
import subprocess
import sys

import numpy as np
import pytest

from sparsefit import io
from sparsefit.config import load_config
from sparsefit.errors import ValidationError
from sparsefit.model import reference_theta
from sparsefit.pipeline import (STREAMS, predictive_bands, run_fit, simulate_paths, stage_rng,
                                stage_seed)

ARTIFACTS = ["bands_abc.csv", "bands_mcmc.csv", "learnability.csv", "mcmc_chain.csv",
             "posterior.csv", "run_info.json", "summary.csv", "timings.json", "trajectories.csv"]


@pytest.fixture(scope="module")
def fitted(tmp_path_factory, small_config_path, synthetic_subject):
    out = tmp_path_factory.mktemp("fit")
    cfg = load_config(small_config_path)
    result = run_fit(cfg, synthetic_subject[2], out)
    return cfg, result, out


class TestRunFit:
    def test_artifacts_exist_and_parse(self, fitted):
        _, _, out = fitted
        assert sorted(p.name for p in out.iterdir()) == ARTIFACTS
        for name in ARTIFACTS:
            if name.endswith(".csv") and name not in ("learnability.csv", "summary.csv"):
                header, data = io.read_table(out / name)
                assert data.shape[0] > 0 and data.shape[1] == len(header)
        info = json.loads((out / "run_info.json").read_text())
        assert sorted(info["artifacts"]) == ARTIFACTS

    def test_capacity_column(self, fitted):
        _, _, out = fitted
        header, data = io.read_table(out / "posterior.csv")
        kv = data[:, header.index("K_V")]
        assert np.allclose(kv, data[:, 0] / data[:, 1], rtol=1e-10)

    def test_weights_normalized(self, fitted):
        _, _, out = fitted
        _, w = io.read_posterior(out / "posterior.csv")
        assert w.sum() == pytest.approx(1.0, abs=1e-9)

    def test_bands_ordered(self, fitted):
        _, result, _ = fitted
        for table in (result.bands_mcmc, result.bands_abc):
            assert np.all(np.diff(table.v, axis=1) >= 0)
            assert np.all(np.diff(table.m, axis=1) >= 0)
            assert table.v.shape == (281, 5)

    def test_hundred_trajectories(self, fitted):
        _, _, out = fitted
        _, data = io.read_table(out / "trajectories.csv")
        assert np.unique(data[:, 0]).size == 100
        assert data.shape[0] == 100 * 281

    def test_chain_length(self, fitted):
        cfg, result, _ = fitted
        assert len(result.chain) == cfg.mcmc.iterations - cfg.mcmc.burn_in
        assert len(result.weighted) == cfg.abc.accepted

    def test_mcmc_only_stage(self, tmp_path, small_config_path, synthetic_subject):
        result = run_fit(load_config(small_config_path), synthetic_subject[2], tmp_path,
                         stages=("mcmc",))
        assert result.weighted is None
        assert not (tmp_path / "bands_abc.csv").exists()

    def test_abc_stage_needs_chain(self, small_config_path, synthetic_subject):
        with pytest.raises(ValidationError):
            run_fit(load_config(small_config_path), synthetic_subject[2], stages=("abc",))


class TestBands:
    def test_degenerate_posterior(self):
        theta = reference_theta(0, sigma2_v=0.4)
        row = theta.to_vector()
        row[10:12] = 0.0
        bands = predictive_bands(np.tile(row, (1000, 1)), 0.5, np.random.default_rng(0))
        v, m = simulate_paths(row[None, :], 0.5, 280, 1.0, np.random.default_rng(1))
        assert np.allclose(bands.v, v[0][:, None], atol=1e-12)
        assert np.allclose(bands.m, m[0][:, None], atol=1e-12)
        assert np.ptp(bands.v[-1]) == 0.0 and bands.v[-1, 0] > 1.0

    def test_too_few_draws(self):
        with pytest.raises(ValidationError):
            predictive_bands(np.zeros((999, 12)), 0.5, np.random.default_rng(0))

    def test_paths_shape(self):
        v, m = simulate_paths(np.tile(reference_theta(1).to_vector(), (3, 1)), 0.5, 280, 1.0,
                              np.random.default_rng(2))
        assert v.shape == m.shape == (3, 281)


class TestStreams:
    def test_streams_distinct(self):
        draws = {k: stage_rng(7, k).random() for k in STREAMS}
        assert len(set(draws.values())) == len(STREAMS)

    def test_stage_seed_deterministic(self):
        assert stage_seed(7, "abc") == stage_seed(7, "abc") != stage_seed(8, "abc")


def test_python_fallback_selected_by_env():
    env = dict(os.environ, SPARSEFIT_BACKEND="python")
    out = subprocess.run([sys.executable, "-c", "import sparsefit._backend as b; print(b.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"
