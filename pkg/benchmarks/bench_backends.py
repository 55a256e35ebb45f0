"""Benchmark the compiled Cython kernels against the NumPy fallbacks.

Runs each hot kernel at the shapes the reference training loop actually
uses (batch 64 of 64x64 images, ~2.1M parameters), then times a few full
training epochs under each backend in subprocesses.

    python benchmarks/bench_backends.py [--epochs 3]
"""

import argparse
import os
import subprocess
import sys
import time
import timeit

import numpy as np

from mcaae._kernels import _numpy as numpy_backend

try:
    from mcaae._kernels import _cykernels as compiled_backend
except ImportError:
    compiled_backend = None

N_PARAMS = 2_130_000  # encoder 4096-256-64-10 plus mirrored decoder
BATCH = 64
SIDE = 64


def time_call(fn, repeats=20):
    best = min(timeit.repeat(fn, number=1, repeat=repeats))
    return best * 1e3  # ms


def bench_kernels():
    rng = np.random.default_rng(0)
    backends = [("numpy", numpy_backend)]
    if compiled_backend is not None:
        backends.append(("compiled", compiled_backend))

    param = rng.standard_normal(N_PARAMS)
    grad = rng.standard_normal(N_PARAMS)
    images_a = rng.random((BATCH, SIDE, SIDE))
    images_b = np.clip(images_a + 0.05 * rng.standard_normal(images_a.shape), 0, 1)
    kernels = rng.random((BATCH, 7))
    kernels /= kernels.sum(axis=1, keepdims=True)

    rows = []
    for name, backend in backends:
        m = np.zeros(N_PARAMS)
        v = np.zeros(N_PARAMS)
        p = param.copy()
        step = [0]

        def adam():
            step[0] += 1
            backend.adam_update(p, grad, m, v, step[0], 1e-4, 0.9, 0.999, 1e-8)

        rows.append(
            (
                name,
                time_call(adam),
                time_call(lambda: backend.ssim_values_and_grad(images_a, images_b, 8, 1e-4, 9e-4)),
                time_call(lambda: backend.blur_separable(images_a, kernels)),
            )
        )

    print(f"{'backend':<10} {'adam (ms)':>10} {'ssim+grad (ms)':>15} {'blur (ms)':>10}")
    for name, adam_ms, ssim_ms, blur_ms in rows:
        print(f"{name:<10} {adam_ms:>10.2f} {ssim_ms:>15.2f} {blur_ms:>10.2f}")
    if len(rows) == 2:
        print(
            f"{'speedup':<10} {rows[0][1] / rows[1][1]:>9.1f}x "
            f"{rows[0][2] / rows[1][2]:>14.1f}x {rows[0][3] / rows[1][3]:>9.1f}x"
        )
    return rows


TRAIN_SNIPPET = """
import time, numpy as np
import mcaae
from mcaae.autoencoder import AugmentationConfig, TrainConfig, build_autoencoder, train
from mcaae.data import synth_generate
ds = synth_generate('bars-vs-blobs', 250, {side}, np.random.default_rng(1))
model = build_autoencoder({side}**2, np.random.default_rng(2), hidden_widths=(256, 64), latent_dim=10)
cfg = TrainConfig(epochs={epochs}, batch_size=64, learning_rate=1e-4, keep_prob=0.67, seed=3)
t0 = time.perf_counter()
train(model, ds.images, cfg, AugmentationConfig())
dt = (time.perf_counter() - t0) / {epochs}
print(f'{{mcaae.kernel_backend}}: {{dt * 1e3:.0f}} ms/epoch')
"""


def bench_end_to_end(epochs):
    print(f"\nfull training epochs (batch 64, {SIDE}x{SIDE}, {N_PARAMS / 1e6:.1f}M params):")
    for backend in ("numpy", "compiled"):
        env = dict(os.environ, MCAAE_BACKEND=backend)
        code = TRAIN_SNIPPET.format(side=SIDE, epochs=epochs)
        proc = subprocess.run(
            [sys.executable, "-c", code], env=env, capture_output=True, text=True
        )
        if proc.returncode:
            print(f"{backend}: failed\n{proc.stderr.strip()}")
        else:
            print(proc.stdout.strip())


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--epochs", type=int, default=3, help="epochs per end-to-end run")
    parser.add_argument("--skip-end-to-end", action="store_true")
    args = parser.parse_args()

    if compiled_backend is None:
        print("compiled backend unavailable; showing numpy fallback only")
    bench_kernels()
    if not args.skip_end_to_end:
        bench_end_to_end(args.epochs)


if __name__ == "__main__":
    main()
