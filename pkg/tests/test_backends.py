"""The compiled and numpy kernels must agree."""

import numpy as np
import pytest

from sparsefit import _backend
from sparsefit.mcmc import INIT_VAR, _grid_obs
from sparsefit.model import n_steps, onset_steps, reference_theta

pytestmark = pytest.mark.skipif("cython" not in _backend.available_backends(),
                                reason="compiled kernels not built")

PY = _backend.get_kernels("python")


def ckernels():
    return _backend.get_kernels("cython")


def run_simulate(kern, values, noise_v, noise_m, m0=0.5, step=1.0):
    count = values.shape[0]
    n = noise_v.shape[1]
    out_v, out_m = np.empty((count, n + 1)), np.empty((count, n + 1))
    cols = [np.ascontiguousarray(values[:, i]) for i in range(5)]
    pre_v = np.floor(values[:, 6] / step + 1e-9).astype(np.int64)
    pre_m = np.floor((values[:, 6] + values[:, 7]) / step + 1e-9).astype(np.int64)
    kern.simulate_batch(*cols, pre_v, pre_m, np.ascontiguousarray(values[:, 5]),
                        np.full(count, m0), step,
                        np.ascontiguousarray(np.sqrt(values[:, 10:11]) * noise_v),
                        np.ascontiguousarray(np.sqrt(values[:, 11:12]) * noise_m), out_v, out_m)
    return out_v, out_m


def run_filter(kern, theta, obs, m0):
    obs_v, obs_m = _grid_obs(obs, 280, 1.0)
    n = n_steps(280, 1.0)
    dim = theta.delays.tau_m + 1
    r, d, e = theta.rates, theta.delays, theta.noise
    out = dict(a=np.empty(n), b=np.empty(n), c=np.empty(n), filt=np.empty((n + 1, dim)),
               pm=np.empty((n + 1, dim)), pc=np.empty((n + 1, dim, dim)),
               fc=np.empty((n + 1, dim, dim)))
    status = kern.ekf_filter(r.beta, r.delta, r.alpha, r.rho, r.gamma,
                             onset_steps(d.tau_v, 1.0), onset_steps(d.tau_v + d.tau_m, 1.0),
                             d.tau_m, e.kappa2_v, e.kappa2_m, e.sigma2_v, e.sigma2_m, theta.v0,
                             m0, 1.0, obs_v, obs_m, INIT_VAR, out["a"], out["b"], out["c"],
                             out["filt"], out["pm"], out["pc"], out["fc"])
    return status, out, obs_v, obs_m


@pytest.mark.parametrize("index", range(4))
def test_simulator_bit_identical(index, rng):
    values = np.tile(reference_theta(index).to_vector(), (50, 1))
    values[:, 5] = rng.uniform(0, 0.5, 50)
    noise = rng.standard_normal((100, 280))
    a = run_simulate(PY, values, noise[:50], noise[50:])
    b = run_simulate(ckernels(), values, noise[:50], noise[50:])
    assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])


@pytest.mark.parametrize("index", range(4))
def test_filter_agrees(index, synthetic_subject):
    _, _, obs = synthetic_subject
    theta = reference_theta(index)
    s1, o1, _, _ = run_filter(PY, theta, obs, 0.5)
    s2, o2, _, _ = run_filter(ckernels(), theta, obs, 0.5)
    assert s1 == s2 == -1
    for key in o1:
        assert np.allclose(o1[key], o2[key], rtol=1e-12, atol=1e-12), key


@pytest.mark.parametrize("index", range(4))
def test_path_sampler_agrees(index, synthetic_subject, rng):
    _, _, obs = synthetic_subject
    theta = reference_theta(index)
    _, o, obs_v, obs_m = run_filter(PY, theta, obs, 0.5)
    e = theta.noise
    tau_m = theta.delays.tau_m
    normals = rng.standard_normal(2 * 281 + tau_m - 1)
    outs = []
    for kern in (PY, ckernels()):
        v, m = np.empty(281), np.empty(281)
        status = kern.sample_path(o["a"], o["b"], o["c"], tau_m, e.kappa2_v, e.kappa2_m,
                                  e.sigma2_v, e.sigma2_m, theta.v0, 0.5, INIT_VAR, obs_v, obs_m,
                                  normals, v, m)
        outs.append((status, v, m))
    assert outs[0][0] == outs[1][0] == 0
    assert np.allclose(outs[0][1], outs[1][1], rtol=0, atol=1e-9)
    assert np.allclose(outs[0][2], outs[1][2], rtol=0, atol=1e-9)


def test_path_layout_agrees():
    for tau_m in (1, 2, 7, 50):
        a, b = PY.path_layout(280, tau_m), ckernels().path_layout(280, tau_m)
        assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1]) and a[2] == b[2]


def test_selected_backend_reported():
    assert _backend.BACKEND in _backend.available_backends()
