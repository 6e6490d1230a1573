import subprocess
import sys

import numpy as np
import pytest

from sparsefit import io
from sparsefit.cli import EXIT_INVALID, EXIT_OK, EXIT_RUNTIME, main


def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture(scope="module")
def fit_dir(tmp_path_factory, small_config_path, data_path):
    out = tmp_path_factory.mktemp("cli_fit")
    assert run("fit", "--config", small_config_path, "--data", data_path, "--out", out) == EXIT_OK
    return out


class TestExitCodes:
    def test_missing_data(self, small_config_path, tmp_path, capsys):
        assert run("fit", "--config", small_config_path, "--out", tmp_path) == EXIT_INVALID
        assert "--data" in capsys.readouterr().err

    @pytest.mark.parametrize("argv", [["bogus"], [], ["fit", "--frobnicate"],
                                      ["simulate", "--seed", "-3", "--out", "x"],
                                      ["simulate", "--param-set", "99", "--seed", "1", "--out", "x"]])
    def test_usage_errors(self, argv, capsys):
        assert run(*argv) == EXIT_INVALID
        assert "usage" in capsys.readouterr().err

    def test_invalid_data(self, small_config_path, tmp_path):
        bad = tmp_path / "bad.csv"
        bad.write_text("subject_id,day,series,value\n1,7,V,1\n1,7,V,2\n")
        assert run("fit", "--config", small_config_path, "--data", bad, "--out", tmp_path) == EXIT_INVALID

    def test_bad_thread_env(self, small_config_path, data_path, tmp_path, monkeypatch):
        monkeypatch.setenv("SPARSEFIT_THREADS", "many")
        assert run("fit", "--config", small_config_path, "--data", data_path,
                   "--out", tmp_path) == EXIT_INVALID

    def test_runtime_failure(self, tmp_path, data_path):
        cfg = tmp_path / "c.toml"
        cfg.write_text("seed = 3\nmcmc.iterations = 1200\nmcmc.burn_in = 100\n"
                       "abc.accepted = 200\nabc.pool_budget = 100\n")
        assert run("fit", "--config", cfg, "--data", data_path, "--out", tmp_path / "o") == EXIT_RUNTIME

    def test_self_check(self, capsys):
        assert run("self-check") == EXIT_OK
        out = capsys.readouterr().out
        assert out.count("[PASS]") == 3

    def test_console_script(self):
        proc = subprocess.run([sys.executable, "-m", "sparsefit.cli", "--help"],
                              capture_output=True, text=True)
        assert proc.returncode == 0 and "self-check" in proc.stdout


class TestCommands:
    def test_simulate(self, tmp_path):
        assert run("simulate", "--seed", 4, "--subjects", 3, "--cycle", "--out", tmp_path) == EXIT_OK
        assert io.list_subjects(tmp_path / "data.csv") == ["S1", "S2", "S3"]
        obs = io.load_observations(tmp_path / "data.csv", "S2")
        assert obs.v_values.size == 4 and obs.m_values.size == 5

    def test_fit_artifacts(self, fit_dir):
        for name in ("posterior.csv", "summary.csv", "bands_mcmc.csv", "bands_abc.csv",
                     "learnability.csv", "trajectories.csv", "run_info.json"):
            assert (fit_dir / name).exists()

    def test_split_stages_match_full_fit(self, fit_dir, small_config_path, data_path, tmp_path):
        assert run("fit-mcmc", "--config", small_config_path, "--data", data_path,
                   "--out", tmp_path) == EXIT_OK
        assert run("fit-abc", "--config", small_config_path, "--data", data_path,
                   "--out", tmp_path) == EXIT_OK
        assert (tmp_path / "posterior.csv").read_bytes() == (fit_dir / "posterior.csv").read_bytes()

    def test_fit_abc_without_chain(self, small_config_path, data_path, tmp_path):
        assert run("fit-abc", "--config", small_config_path, "--data", data_path,
                   "--out", tmp_path) == EXIT_INVALID

    def test_seed_override_changes_result(self, fit_dir, small_config_path, data_path, tmp_path):
        assert run("fit-mcmc", "--config", small_config_path, "--data", data_path,
                   "--out", tmp_path, "--seed", 12) == EXIT_OK
        assert (tmp_path / "mcmc_chain.csv").read_bytes() != (fit_dir / "mcmc_chain.csv").read_bytes()

    def test_predict(self, fit_dir, small_config_path, tmp_path):
        assert run("predict", "--config", small_config_path, "--posterior", fit_dir / "posterior.csv",
                   "--m0", 0.5, "--out", tmp_path) == EXIT_OK
        _, bands = io.read_table(tmp_path / "bands.csv")
        assert bands.shape == (281, 11)
        assert np.all(np.diff(bands[:, 1:6], axis=1) >= 0)

    def test_predict_reproduces_fit_bands(self, fit_dir, small_config_path, data_path, tmp_path):
        assert run("predict", "--config", small_config_path, "--posterior", fit_dir / "posterior.csv",
                   "--data", data_path, "--out", tmp_path) == EXIT_OK
        _, a = io.read_table(tmp_path / "bands.csv")
        _, b = io.read_table(fit_dir / "bands_abc.csv")
        # the posterior file holds 12-digit values, so allow rounding-level drift
        assert np.allclose(a, b, atol=1e-6)

    def test_learnability(self, fit_dir, small_config_path, tmp_path, capsys):
        assert run("learnability", "--config", small_config_path, "--posterior",
                   fit_dir / "posterior.csv", "--out", tmp_path) == EXIT_OK
        assert "beta" in capsys.readouterr().out
        assert (tmp_path / "learnability.csv").exists()

    def test_nondim(self, fit_dir, tmp_path, capsys):
        assert run("nondim", "--posterior", fit_dir / "posterior.csv", "--out", tmp_path) == EXIT_OK
        out = capsys.readouterr().out
        for name in ("eta", "psi", "lambda_V", "lambda_M"):
            assert name in out
        header, data = io.read_table(tmp_path / "nondim.csv")
        assert header == ["eta", "psi", "lambda_V", "lambda_M", "weight"]
