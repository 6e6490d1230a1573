"""Pure numpy implementations of the hot kernels.

Every function here has a twin with the same signature in ``_ckernels.pyx``.
The simulator performs the same floating-point operations in the same order
as the compiled version, so both give identical trajectories; the filter and
path sampler agree to rounding.
"""

import numpy as np
from scipy.linalg import cholesky_banded, solve_banded

NAME = "python"
STATE_MAX = 100.0
PSD_TOL = 1e-8


def simulate_batch(beta, delta, alpha, rho, gamma, pre_v, pre_m, v0, m0, h,
                   noise_v, noise_m, out_v, out_m):
    n = out_v.shape[1] - 1
    v = np.array(v0, dtype=float)
    m = np.array(m0, dtype=float)
    out_v[:, 0] = v
    out_m[:, 0] = m
    for k in range(1, n + 1):
        nz_v = noise_v[:, k - 1]
        nz_m = noise_m[:, k - 1]
        grown_v = v + h * (beta - delta * v) * v + nz_v
        grown_m = m + h * alpha * v + h * (rho * v - gamma * v * m) * m + nz_m
        new_v = np.where(k <= pre_v, v + nz_v, grown_v)
        new_m = np.where(k <= pre_m, m + nz_m, grown_m)
        v = np.minimum(np.maximum(new_v, 0.0), STATE_MAX)
        m = np.minimum(np.maximum(new_m, 0.0), STATE_MAX)
        out_v[:, k] = v
        out_m[:, k] = m


def _lag_index(dim):
    return dim - 1 if dim >= 3 else 0


def _rows(P, a, b, c, lag):
    """Return ``H @ P`` for the shift-structured transition."""
    Q = np.empty_like(P)
    Q[0] = a * P[0]
    Q[1] = b * P[1] + c * P[lag]
    if P.shape[0] >= 3:
        Q[2] = P[0]
        Q[3:] = P[2:-1]
    return Q


def _scalar_update(mean, P, i, y, r):
    s = P[i, i] + r
    if not s > 0:
        return False
    col = P[:, i].copy()
    mean += col * ((y - mean[i]) / s)
    P -= np.outer(col, col) / s
    return True


def ekf_filter(beta, delta, alpha, rho, gamma, pre_v, pre_m, tau_m,
               kappa2_v, kappa2_m, sigma2_v, sigma2_m, v0, m0, h,
               obs_v, obs_m, init_var, a_out, b_out, c_out, filt_mean,
               pred_mean=None, pred_cov=None, filt_cov=None):
    """Linearized forward filter on the extended state.

    Returns -1 on success, otherwise the grid step at which the covariance
    became non-finite or indefinite.
    """
    n = obs_v.shape[0] - 1
    dim = tau_m + 1
    lag = _lag_index(dim)
    mean = np.full(dim, v0, dtype=float)
    mean[1] = m0
    P = np.eye(dim) * init_var
    for k in range(n + 1):
        if k > 0:
            a = 1.0 if k <= pre_v else 1.0 + h * (beta - delta * mean[0])
            if k <= pre_m:
                b, c = 1.0, 0.0
            else:
                b = 1.0 + h * (rho * mean[lag] - gamma * mean[1] * mean[lag])
                c = h * alpha
            a_out[k - 1], b_out[k - 1], c_out[k - 1] = a, b, c
            new = np.empty(dim)
            new[0] = a * mean[0]
            new[1] = b * mean[1] + c * mean[lag]
            if dim >= 3:
                new[2] = mean[0]
                new[3:] = mean[2:-1]
            mean = new
            P = _rows(_rows(P, a, b, c, lag).T, a, b, c, lag).T
            P[0, 0] += kappa2_v
            P[1, 1] += kappa2_m
        if pred_mean is not None:
            pred_mean[k] = mean
        if pred_cov is not None:
            pred_cov[k] = P
        if not np.isnan(obs_v[k]) and not _scalar_update(mean, P, 0, obs_v[k], sigma2_v):
            return k
        if not np.isnan(obs_m[k]) and not _scalar_update(mean, P, 1, obs_m[k], sigma2_m):
            return k
        P = 0.5 * (P + P.T)
        if not (np.all(np.isfinite(P)) and np.all(np.isfinite(mean))):
            return k
        if P.diagonal().min() < -PSD_TOL:
            return k
        np.clip(mean, 0.0, STATE_MAX, out=mean)
        filt_mean[k] = mean
        if filt_cov is not None:
            filt_cov[k] = P
    return -1


def path_layout(n, tau_m):
    """Positions of ``V_s`` (s = -(tau_m-1)..n) and ``M_k`` (k = 0..n).

    Variables are ordered in pairs ``(V_s, M_{s + tau_m})`` so that the path
    precision matrix has lower half-bandwidth 2.
    """
    lags = tau_m - 1
    pos_v = np.empty(n + 1 + lags, dtype=np.int64)
    pos_m = np.empty(n + 1, dtype=np.int64)
    p = 0
    for s in range(-tau_m, n + 1):
        if s >= -lags:
            pos_v[s + lags] = p
            p += 1
        if 0 <= s + tau_m <= n:
            pos_m[s + tau_m] = p
            p += 1
    return pos_v, pos_m, p


BANDWIDTH = 2


def _band_add(Q, i, j, value):
    if i < j:
        i, j = j, i
    Q[i - j, j] += value


def sample_path(a, b, c, tau_m, kappa2_v, kappa2_m, sigma2_v, sigma2_m, v0, m0,
                init_var, obs_v, obs_m, normals, out_v, out_m):
    """Draw the latent path of the linear Gaussian model defined by ``a, b, c``.

    Builds the banded precision of the whole path (priors, evolution factors,
    observations), factorizes it, and returns the mean plus ``L^-T z``.
    Returns 0 on success, 1 if a diagonal jitter was needed, 2 on failure.
    """
    n = a.shape[0]
    lags = tau_m - 1
    pos_v, pos_m, size = path_layout(n, tau_m)
    Q = np.zeros((BANDWIDTH + 1, size))  # lower band storage, Q[i - j, j]
    lin = np.zeros(size)
    w0 = 1.0 / init_var
    for s in range(-lags, 1):
        Q[0, pos_v[s + lags]] += w0
        lin[pos_v[s + lags]] += v0 * w0
    Q[0, pos_m[0]] += w0
    lin[pos_m[0]] += m0 * w0
    wv = 1.0 / kappa2_v
    wm = 1.0 / kappa2_m
    for k in range(1, n + 1):
        i, j = pos_v[k + lags], pos_v[k - 1 + lags]
        ak = a[k - 1]
        Q[0, i] += wv
        Q[0, j] += ak * ak * wv
        _band_add(Q, i, j, -ak * wv)
        idx = (pos_m[k], pos_m[k - 1], pos_v[k - tau_m + lags])
        coef = (1.0, -b[k - 1], -c[k - 1])
        for p in range(3):
            for q in range(p + 1):
                value = coef[p] * coef[q] * wm
                if p == q:
                    Q[0, idx[p]] += value
                else:
                    _band_add(Q, idx[p], idx[q], value)
    sv = 1.0 / sigma2_v
    sm = 1.0 / sigma2_m
    for k in range(n + 1):
        if not np.isnan(obs_v[k]):
            Q[0, pos_v[k + lags]] += sv
            lin[pos_v[k + lags]] += obs_v[k] * sv
        if not np.isnan(obs_m[k]):
            Q[0, pos_m[k]] += sm
            lin[pos_m[k]] += obs_m[k] * sm
    status = 0
    try:
        L = cholesky_banded(Q, lower=True, check_finite=False)
    except np.linalg.LinAlgError:
        Q = Q.copy()
        Q[0] += 1e-10 * Q[0].mean()
        status = 1
        try:
            L = cholesky_banded(Q, lower=True, check_finite=False)
        except np.linalg.LinAlgError:
            return 2
    # L y = lin, then L^T x = y + z
    y = solve_banded((BANDWIDTH, 0), L, lin, check_finite=False)
    upper = np.zeros_like(L)
    for d in range(BANDWIDTH + 1):
        upper[BANDWIDTH - d, d:] = L[d, : size - d]
    x = solve_banded((0, BANDWIDTH), upper, y + normals[:size], check_finite=False)
    if not np.all(np.isfinite(x)):
        return 2
    out_v[:] = np.clip(x[pos_v[lags:]], 0.0, STATE_MAX)
    out_m[:] = np.clip(x[pos_m], 0.0, STATE_MAX)
    return status
