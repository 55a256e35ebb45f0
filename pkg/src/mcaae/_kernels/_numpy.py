"""Vectorized NumPy implementations of the hot kernels.

This is the fallback backend; `mcaae._kernels._cykernels` provides the
compiled twin with identical signatures and semantics. Matrix products are
not kernels here — they stay on BLAS either way. What lives here is the
fused elementwise/reduction work that otherwise burns memory bandwidth on
temporaries: the Adam parameter update and the windowed SSIM statistics
with their analytic gradient.
"""

import numpy as np


def adam_update(param, grad, m, v, step, lr, beta1, beta2, eps):
    """One bias-corrected Adam update, in place on `param`, `m` and `v`.

    `step` is the 1-based step count after incrementing. Returns the flat
    index of the first non-finite gradient entry, or -1 if all entries are
    finite (in which case the update was applied).
    """
    finite = np.isfinite(grad)
    if not finite.all():
        return int(np.argmin(finite.ravel()))
    inv_bc1 = 1.0 / (1.0 - beta1**step)
    inv_bc2 = 1.0 / (1.0 - beta2**step)
    m *= beta1
    m += (1.0 - beta1) * grad
    v *= beta2
    v += (1.0 - beta2) * (grad * grad)
    param -= lr * (m * inv_bc1) / (np.sqrt(v * inv_bc2) + eps)
    return -1


def blur_separable(images, kernels):
    """Per-sample separable convolution with edge replication.

    `images` is [n, h, w], `kernels` is [n, 2r + 1] of normalized taps.
    Edge replication matches index clamping at the borders.
    """
    radius = (kernels.shape[1] - 1) // 2
    out = images
    for axis in (2, 1):  # columns first, matching the compiled twin
        padded = np.concatenate(
            [
                np.repeat(out.take([0], axis=axis), radius, axis=axis),
                out,
                np.repeat(out.take([-1], axis=axis), radius, axis=axis),
            ],
            axis=axis,
        )
        acc = np.zeros_like(images)
        for j in range(2 * radius + 1):
            sl = [slice(None)] * 3
            sl[axis] = slice(j, j + images.shape[axis])
            acc += kernels[:, j][:, None, None] * padded[tuple(sl)]
        out = acc
    return out


def _window_stats(a, b, window):
    n, h, w = a.shape
    nh, nw = h // window, w // window
    aw = a.reshape(n, nh, window, nw, window)
    bw = b.reshape(n, nh, window, nw, window)
    mu_a = aw.mean(axis=(2, 4))
    mu_b = bw.mean(axis=(2, 4))
    var_a = (aw * aw).mean(axis=(2, 4)) - mu_a * mu_a
    var_b = (bw * bw).mean(axis=(2, 4)) - mu_b * mu_b
    cov = (aw * bw).mean(axis=(2, 4)) - mu_a * mu_b
    return aw, bw, mu_a, mu_b, var_a, var_b, cov


def ssim_values(a, b, window, c1, c2):
    """Mean SSIM per image over non-overlapping `window`x`window` tiles.

    `a` and `b` are [n, h, w] with h and w multiples of `window`. Uniform
    (unweighted) tile statistics, biased variance.
    """
    _, _, mu_a, mu_b, var_a, var_b, cov = _window_stats(a, b, window)
    a1 = 2.0 * mu_a * mu_b + c1
    a2 = 2.0 * cov + c2
    b1 = mu_a * mu_a + mu_b * mu_b + c1
    b2 = var_a + var_b + c2
    return ((a1 * a2) / (b1 * b2)).mean(axis=(1, 2))


def ssim_values_and_grad(a, b, window, c1, c2):
    """Per-image mean SSIM plus its gradient with respect to `a`.

    Returns (values [n], grad [n, h, w]) where grad[i] is the derivative of
    values[i] with respect to each pixel of a[i].
    """
    n, h, w = a.shape
    aw, bw, mu_a, mu_b, var_a, var_b, cov = _window_stats(a, b, window)
    p = float(window * window)
    n_windows = (h // window) * (w // window)

    a1 = 2.0 * mu_a * mu_b + c1
    a2 = 2.0 * cov + c2
    b1 = mu_a * mu_a + mu_b * mu_b + c1
    b2 = var_a + var_b + c2
    s = (a1 * a2) / (b1 * b2)
    values = s.mean(axis=(1, 2))

    # d(ssim)/d(a_i) per tile, for pixel i in that tile:
    #   (2 mu_b a2 + 2 a1 (b_i - mu_b)) / (p b1 b2)
    #   - s (2 mu_a / (p b1) + 2 (a_i - mu_a) / (p b2))
    inv = 1.0 / (p * b1 * b2)
    k_const = (2.0 * mu_b * a2) * inv - s * (2.0 * mu_a / (p * b1))
    k_b = (2.0 * a1) * inv
    k_a = s * (2.0 / (p * b2))

    expand = lambda x: x[:, :, None, :, None]
    gw = (
        expand(k_const)
        + expand(k_b) * (bw - expand(mu_b))
        - expand(k_a) * (aw - expand(mu_a))
    )
    grad = (gw / n_windows).reshape(n, h, w)
    return values, grad
