# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled twins of the NumPy fallback kernels in `_numpy.py`.

Same signatures, same math, fused into single passes. Keep the two files in
sync; the parity tests in tests/test_kernels.py hold them to ~1e-12.
"""

import numpy as np

from libc.math cimport isfinite, pow, sqrt


def adam_update(double[::1] param, double[::1] grad, double[::1] m, double[::1] v,
                long step, double lr, double beta1, double beta2, double eps):
    """One bias-corrected Adam update, in place. Returns -1, or the index of
    the first non-finite gradient entry (in which case nothing is updated)."""
    cdef Py_ssize_t i, bad = -1, n = param.shape[0]
    cdef double inv_bc1 = 1.0 / (1.0 - pow(beta1, <double> step))
    cdef double inv_bc2 = 1.0 / (1.0 - pow(beta2, <double> step))
    cdef double one_m_b1 = 1.0 - beta1
    cdef double one_m_b2 = 1.0 - beta2
    cdef double g, mi, vi
    with nogil:
        for i in range(n):
            if not isfinite(grad[i]):
                bad = i
                break
    if bad >= 0:
        return bad
    with nogil:
        for i in range(n):
            g = grad[i]
            mi = beta1 * m[i] + one_m_b1 * g
            vi = beta2 * v[i] + one_m_b2 * (g * g)
            m[i] = mi
            v[i] = vi
            param[i] -= lr * (mi * inv_bc1) / (sqrt(vi * inv_bc2) + eps)
    return -1


def blur_separable(double[:, :, ::1] images, double[:, ::1] kernels):
    """Per-sample separable convolution with edge replication.

    `kernels` is [n, 2r + 1], one normalized tap row per image.
    """
    cdef Py_ssize_t n = images.shape[0], h = images.shape[1], w = images.shape[2]
    cdef Py_ssize_t radius = (kernels.shape[1] - 1) // 2
    out = np.empty((n, h, w), dtype=np.float64)
    cdef double[:, :, ::1] ov = out
    tmp_arr = np.empty((h, w), dtype=np.float64)
    cdef double[:, ::1] tmp = tmp_arr
    cdef Py_ssize_t s, i, j, t, jj, ii
    cdef double acc
    with nogil:
        for s in range(n):
            for i in range(h):
                for j in range(w):
                    acc = 0.0
                    for t in range(-radius, radius + 1):
                        jj = j + t
                        if jj < 0:
                            jj = 0
                        elif jj >= w:
                            jj = w - 1
                        acc += kernels[s, t + radius] * images[s, i, jj]
                    tmp[i, j] = acc
            for i in range(h):
                for j in range(w):
                    acc = 0.0
                    for t in range(-radius, radius + 1):
                        ii = i + t
                        if ii < 0:
                            ii = 0
                        elif ii >= h:
                            ii = h - 1
                        acc += kernels[s, t + radius] * tmp[ii, j]
                    ov[s, i, j] = acc
    return out


def ssim_values(double[:, :, ::1] a, double[:, :, ::1] b, int window, double c1, double c2):
    """Mean SSIM per image over non-overlapping tiles; see _numpy.ssim_values."""
    cdef Py_ssize_t n = a.shape[0], h = a.shape[1], w = a.shape[2]
    cdef Py_ssize_t nh = h // window, nw = w // window
    cdef double p = <double> (window * window)
    out = np.empty(n, dtype=np.float64)
    cdef double[::1] ov = out
    cdef Py_ssize_t img, th, tw, r, c, r0, c0
    cdef double sa, sb, saa, sbb, sab, av, bv
    cdef double mu_a, mu_b, var_a, var_b, cov, acc
    with nogil:
        for img in range(n):
            acc = 0.0
            for th in range(nh):
                r0 = th * window
                for tw in range(nw):
                    c0 = tw * window
                    sa = sb = saa = sbb = sab = 0.0
                    for r in range(r0, r0 + window):
                        for c in range(c0, c0 + window):
                            av = a[img, r, c]
                            bv = b[img, r, c]
                            sa += av
                            sb += bv
                            saa += av * av
                            sbb += bv * bv
                            sab += av * bv
                    mu_a = sa / p
                    mu_b = sb / p
                    var_a = saa / p - mu_a * mu_a
                    var_b = sbb / p - mu_b * mu_b
                    cov = sab / p - mu_a * mu_b
                    acc += ((2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)) / (
                        (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2))
            ov[img] = acc / <double> (nh * nw)
    return out


def ssim_values_and_grad(double[:, :, ::1] a, double[:, :, ::1] b, int window,
                         double c1, double c2):
    """Per-image mean SSIM and its gradient wrt `a`; see the NumPy twin."""
    cdef Py_ssize_t n = a.shape[0], h = a.shape[1], w = a.shape[2]
    cdef Py_ssize_t nh = h // window, nw = w // window
    cdef double p = <double> (window * window)
    cdef double inv_windows = 1.0 / <double> (nh * nw)
    values = np.empty(n, dtype=np.float64)
    grad = np.empty((n, h, w), dtype=np.float64)
    cdef double[::1] val = values
    cdef double[:, :, ::1] gr = grad
    cdef Py_ssize_t img, th, tw, r, c, r0, c0
    cdef double sa, sb, saa, sbb, sab, av, bv
    cdef double mu_a, mu_b, var_a, var_b, cov, acc
    cdef double a1, a2, b1, b2, s, inv, k_const, k_b, k_a
    with nogil:
        for img in range(n):
            acc = 0.0
            for th in range(nh):
                r0 = th * window
                for tw in range(nw):
                    c0 = tw * window
                    sa = sb = saa = sbb = sab = 0.0
                    for r in range(r0, r0 + window):
                        for c in range(c0, c0 + window):
                            av = a[img, r, c]
                            bv = b[img, r, c]
                            sa += av
                            sb += bv
                            saa += av * av
                            sbb += bv * bv
                            sab += av * bv
                    mu_a = sa / p
                    mu_b = sb / p
                    var_a = saa / p - mu_a * mu_a
                    var_b = sbb / p - mu_b * mu_b
                    cov = sab / p - mu_a * mu_b
                    a1 = 2.0 * mu_a * mu_b + c1
                    a2 = 2.0 * cov + c2
                    b1 = mu_a * mu_a + mu_b * mu_b + c1
                    b2 = var_a + var_b + c2
                    s = (a1 * a2) / (b1 * b2)
                    acc += s
                    inv = 1.0 / (p * b1 * b2)
                    k_const = (2.0 * mu_b * a2) * inv - s * (2.0 * mu_a / (p * b1))
                    k_b = (2.0 * a1) * inv
                    k_a = s * (2.0 / (p * b2))
                    for r in range(r0, r0 + window):
                        for c in range(c0, c0 + window):
                            gr[img, r, c] = (
                                k_const
                                + k_b * (b[img, r, c] - mu_b)
                                - k_a * (a[img, r, c] - mu_a)
                            ) * inv_windows
            val[img] = acc * inv_windows
    return values, grad
