# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels: batch simulator, linearized filter and path sampler.

Signatures mirror ``_pykernels``; see that module for the contracts.
"""

import numpy as np
from libc.math cimport sqrt, isfinite, isnan
from libc.stdint cimport int64_t

NAME = "cython"
cdef double STATE_MAX = 100.0
cdef double PSD_TOL = 1e-8
cdef int BANDWIDTH = 2


cdef inline double clamp(double x) noexcept nogil:
    if x < 0.0:
        return 0.0
    if x > STATE_MAX:
        return STATE_MAX
    return x


def simulate_batch(const double[::1] beta, const double[::1] delta,
                   const double[::1] alpha, const double[::1] rho,
                   const double[::1] gamma, const int64_t[::1] pre_v,
                   const int64_t[::1] pre_m, const double[::1] v0,
                   const double[::1] m0, double h,
                   const double[:, ::1] noise_v, const double[:, ::1] noise_m,
                   double[:, ::1] out_v, double[:, ::1] out_m):
    cdef Py_ssize_t count = out_v.shape[0]
    cdef Py_ssize_t n = out_v.shape[1] - 1
    cdef Py_ssize_t i, k
    cdef double v, m, nv, nm, nz_v, nz_m
    with nogil:
        for i in range(count):
            v = v0[i]
            m = m0[i]
            out_v[i, 0] = v
            out_m[i, 0] = m
            for k in range(1, n + 1):
                nz_v = noise_v[i, k - 1]
                nz_m = noise_m[i, k - 1]
                if k <= pre_v[i]:
                    nv = v + nz_v
                else:
                    nv = v + h * (beta[i] - delta[i] * v) * v + nz_v
                if k <= pre_m[i]:
                    nm = m + nz_m
                else:
                    nm = m + h * alpha[i] * v + h * (rho[i] * v - gamma[i] * v * m) * m + nz_m
                v = clamp(nv)
                m = clamp(nm)
                out_v[i, k] = v
                out_m[i, k] = m


cdef void apply_rows(double[:, ::1] P, double[:, ::1] Q, Py_ssize_t dim,
                     double a, double b, double c, Py_ssize_t lag) noexcept nogil:
    """Q = H P for the shift-structured transition."""
    cdef Py_ssize_t j, r
    for j in range(dim):
        Q[0, j] = a * P[0, j]
        Q[1, j] = b * P[1, j] + c * P[lag, j]
    if dim >= 3:
        for j in range(dim):
            Q[2, j] = P[0, j]
        for r in range(3, dim):
            for j in range(dim):
                Q[r, j] = P[r - 1, j]


cdef void apply_cols(double[:, ::1] Q, double[:, ::1] P, Py_ssize_t dim,
                     double a, double b, double c, Py_ssize_t lag) noexcept nogil:
    """P = Q H^T for the shift-structured transition."""
    cdef Py_ssize_t i, r
    for i in range(dim):
        P[i, 0] = a * Q[i, 0]
        P[i, 1] = b * Q[i, 1] + c * Q[i, lag]
        if dim >= 3:
            P[i, 2] = Q[i, 0]
            for r in range(3, dim):
                P[i, r] = Q[i, r - 1]


cdef bint scalar_update(double[::1] mean, double[:, ::1] P, double[::1] col,
                        Py_ssize_t dim, Py_ssize_t idx, double y, double r) noexcept nogil:
    cdef double s = P[idx, idx] + r
    cdef double gain
    cdef Py_ssize_t i, j
    if not s > 0.0:
        return False
    for i in range(dim):
        col[i] = P[i, idx]
    gain = (y - mean[idx]) / s
    for i in range(dim):
        mean[i] = mean[i] + col[i] * gain
    for i in range(dim):
        for j in range(dim):
            P[i, j] = P[i, j] - col[i] * col[j] / s
    return True


def ekf_filter(double beta, double delta, double alpha, double rho, double gamma,
               int64_t pre_v, int64_t pre_m, int64_t tau_m,
               double kappa2_v, double kappa2_m, double sigma2_v, double sigma2_m,
               double v0, double m0, double h,
               const double[::1] obs_v, const double[::1] obs_m, double init_var,
               double[::1] a_out, double[::1] b_out, double[::1] c_out,
               double[:, ::1] filt_mean, pred_mean=None, pred_cov=None, filt_cov=None):
    cdef Py_ssize_t n = obs_v.shape[0] - 1
    cdef Py_ssize_t dim = tau_m + 1
    cdef Py_ssize_t lag = dim - 1 if dim >= 3 else 0
    cdef double[:, ::1] P = np.zeros((dim, dim))
    cdef double[:, ::1] Q = np.zeros((dim, dim))
    cdef double[::1] mean = np.empty(dim)
    cdef double[::1] new = np.empty(dim)
    cdef double[::1] col = np.empty(dim)
    cdef double[:, ::1] pm
    cdef double[:, :, ::1] pc
    cdef double[:, :, ::1] fc
    cdef bint store_pm = pred_mean is not None
    cdef bint store_pc = pred_cov is not None
    cdef bint store_fc = filt_cov is not None
    cdef Py_ssize_t k, i, j
    cdef double a, b, c, avg
    cdef bint bad
    cdef Py_ssize_t status = -1
    if store_pm:
        pm = pred_mean
    if store_pc:
        pc = pred_cov
    if store_fc:
        fc = filt_cov
    for i in range(dim):
        mean[i] = v0
        P[i, i] = init_var
    mean[1] = m0
    with nogil:
        for k in range(n + 1):
            if k > 0:
                if k <= pre_v:
                    a = 1.0
                else:
                    a = 1.0 + h * (beta - delta * mean[0])
                if k <= pre_m:
                    b = 1.0
                    c = 0.0
                else:
                    b = 1.0 + h * (rho * mean[lag] - gamma * mean[1] * mean[lag])
                    c = h * alpha
                a_out[k - 1] = a
                b_out[k - 1] = b
                c_out[k - 1] = c
                new[0] = a * mean[0]
                new[1] = b * mean[1] + c * mean[lag]
                if dim >= 3:
                    new[2] = mean[0]
                    for i in range(3, dim):
                        new[i] = mean[i - 1]
                for i in range(dim):
                    mean[i] = new[i]
                apply_rows(P, Q, dim, a, b, c, lag)
                apply_cols(Q, P, dim, a, b, c, lag)
                P[0, 0] += kappa2_v
                P[1, 1] += kappa2_m
            if store_pm:
                for i in range(dim):
                    pm[k, i] = mean[i]
            if store_pc:
                for i in range(dim):
                    for j in range(dim):
                        pc[k, i, j] = P[i, j]
            if not isnan(obs_v[k]):
                if not scalar_update(mean, P, col, dim, 0, obs_v[k], sigma2_v):
                    status = k
                    break
            if not isnan(obs_m[k]):
                if not scalar_update(mean, P, col, dim, 1, obs_m[k], sigma2_m):
                    status = k
                    break
            bad = False
            for i in range(dim):
                for j in range(i + 1, dim):
                    avg = 0.5 * (P[i, j] + P[j, i])
                    P[i, j] = avg
                    P[j, i] = avg
                for j in range(dim):
                    if not isfinite(P[i, j]):
                        bad = True
                if not isfinite(mean[i]) or P[i, i] < -PSD_TOL:
                    bad = True
            if bad:
                status = k
                break
            for i in range(dim):
                mean[i] = clamp(mean[i])
                filt_mean[k, i] = mean[i]
            if store_fc:
                for i in range(dim):
                    for j in range(dim):
                        fc[k, i, j] = P[i, j]
    return status


def path_layout(Py_ssize_t n, Py_ssize_t tau_m):
    cdef Py_ssize_t lags = tau_m - 1
    pos_v_arr = np.empty(n + 1 + lags, dtype=np.int64)
    pos_m_arr = np.empty(n + 1, dtype=np.int64)
    cdef int64_t[::1] pos_v = pos_v_arr
    cdef int64_t[::1] pos_m = pos_m_arr
    cdef Py_ssize_t p = 0, s
    for s in range(-tau_m, n + 1):
        if s >= -lags:
            pos_v[s + lags] = p
            p += 1
        if 0 <= s + tau_m <= n:
            pos_m[s + tau_m] = p
            p += 1
    return pos_v_arr, pos_m_arr, p


cdef inline void band_add(double[:, ::1] Q, Py_ssize_t i, Py_ssize_t j, double value) noexcept nogil:
    cdef Py_ssize_t t
    if i < j:
        t = i
        i = j
        j = t
    Q[i - j, j] += value


cdef bint band_cholesky(double[:, ::1] Q, double[:, ::1] L, Py_ssize_t size) noexcept nogil:
    """Lower banded Cholesky; storage ``X[i - j, j]``. Returns False if not PD."""
    cdef Py_ssize_t i, j, k, lo
    cdef double s
    for i in range(size):
        lo = i - BANDWIDTH if i >= BANDWIDTH else 0
        for j in range(lo, i + 1):
            s = Q[i - j, j]
            for k in range(lo, j):
                s -= L[i - k, k] * L[j - k, k]
            if i == j:
                if not s > 0.0:
                    return False
                L[0, i] = sqrt(s)
            else:
                L[i - j, j] = s / L[0, j]
    return True


def sample_path(const double[::1] a, const double[::1] b, const double[::1] c,
                int64_t tau_m, double kappa2_v, double kappa2_m,
                double sigma2_v, double sigma2_m, double v0, double m0,
                double init_var, const double[::1] obs_v, const double[::1] obs_m,
                const double[::1] normals, double[::1] out_v, double[::1] out_m):
    cdef Py_ssize_t n = a.shape[0]
    cdef Py_ssize_t lags = tau_m - 1
    pos_v_arr, pos_m_arr, size_obj = path_layout(n, tau_m)
    cdef int64_t[::1] pos_v = pos_v_arr
    cdef int64_t[::1] pos_m = pos_m_arr
    cdef Py_ssize_t size = size_obj
    cdef double[:, ::1] Q = np.zeros((BANDWIDTH + 1, size))
    cdef double[:, ::1] L = np.zeros((BANDWIDTH + 1, size))
    cdef double[::1] y = np.empty(size)
    cdef Py_ssize_t k, s, i, j, p, q, lo, hi
    cdef Py_ssize_t idx[3]
    cdef double coef[3]
    cdef double w0 = 1.0 / init_var
    cdef double wv = 1.0 / kappa2_v
    cdef double wm = 1.0 / kappa2_m
    cdef double sv = 1.0 / sigma2_v
    cdef double sm = 1.0 / sigma2_m
    cdef double ak, value, tot, jitter
    cdef int status = 0
    with nogil:
        for i in range(size):
            y[i] = 0.0
        for s in range(-lags, 1):
            Q[0, pos_v[s + lags]] += w0
            y[pos_v[s + lags]] += v0 * w0
        Q[0, pos_m[0]] += w0
        y[pos_m[0]] += m0 * w0
        for k in range(1, n + 1):
            i = pos_v[k + lags]
            j = pos_v[k - 1 + lags]
            ak = a[k - 1]
            Q[0, i] += wv
            Q[0, j] += ak * ak * wv
            band_add(Q, i, j, -ak * wv)
            idx[0] = pos_m[k]
            idx[1] = pos_m[k - 1]
            idx[2] = pos_v[k - tau_m + lags]
            coef[0] = 1.0
            coef[1] = -b[k - 1]
            coef[2] = -c[k - 1]
            for p in range(3):
                for q in range(p + 1):
                    value = coef[p] * coef[q] * wm
                    if p == q:
                        Q[0, idx[p]] += value
                    else:
                        band_add(Q, idx[p], idx[q], value)
        for k in range(n + 1):
            if not isnan(obs_v[k]):
                Q[0, pos_v[k + lags]] += sv
                y[pos_v[k + lags]] += obs_v[k] * sv
            if not isnan(obs_m[k]):
                Q[0, pos_m[k]] += sm
                y[pos_m[k]] += obs_m[k] * sm
        if not band_cholesky(Q, L, size):
            tot = 0.0
            for i in range(size):
                tot += Q[0, i]
            jitter = 1e-10 * tot / size
            for i in range(size):
                Q[0, i] += jitter
            status = 1
            if not band_cholesky(Q, L, size):
                status = 2
        if status != 2:
            # forward solve L u = lin (in place in y)
            for i in range(size):
                lo = i - BANDWIDTH if i >= BANDWIDTH else 0
                value = y[i]
                for k in range(lo, i):
                    value -= L[i - k, k] * y[k]
                y[i] = value / L[0, i]
            for i in range(size):
                y[i] += normals[i]
            # backward solve L^T x = u + z
            for i in range(size - 1, -1, -1):
                hi = i + BANDWIDTH if i + BANDWIDTH < size else size - 1
                value = y[i]
                for k in range(i + 1, hi + 1):
                    value -= L[k - i, i] * y[k]
                y[i] = value / L[0, i]
            for i in range(size):
                if not isfinite(y[i]):
                    status = 2
        if status != 2:
            for k in range(n + 1):
                out_v[k] = clamp(y[pos_v[k + lags]])
                out_m[k] = clamp(y[pos_m[k]])
    return status
