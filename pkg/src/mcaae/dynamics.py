"""A trained autoencoder under one frozen dropout mask, viewed as a
discrete dynamical system x -> decode(encode(x)).

Orbits, fixed-point residuals, power-iteration estimates of the Jacobian
spectral radius (via finite-difference Jacobian-vector products) and
basin-of-attraction probes. Everything is pure given (model, mask) and
deterministic.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from .autoencoder import Autoencoder, reconstruct
from .data import write_pgm
from .errors import ValidationError
from .nncore import DropoutMask, mask_fingerprint


@dataclass
class Orbit:
    """Iterate sequence x, f(x), ..., f^k(x) with step residuals.

    residuals[i] = ||iterates[i+1] - iterates[i]||_2; the mask is bound at
    creation time and recorded by fingerprint.
    """

    iterates: list[np.ndarray]
    residuals: list[float]
    mask_id: str


@dataclass
class FixedPointReport:
    residual: float  # ||f(x) - x||_2
    epsilon: float
    is_fixed: bool


@dataclass
class SpectralReport:
    radius_estimate: float
    iterations_used: int
    converged: bool


DEFAULT_EPSILON = 0.05  # L2 over a 64x64 image, about 7.8e-4 per pixel
FD_STEP = 1e-4


def iterate(ae: Autoencoder, x: np.ndarray, mask: DropoutMask | None, k: int) -> Orbit:
    """Apply decode(encode(.)) k times under one frozen mask."""
    if k < 0:
        raise ValidationError(f"k must be >= 0, got {k}")
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    iterates = [x]
    residuals = []
    for _ in range(k):
        nxt = reconstruct(ae, iterates[-1], mask)
        residuals.append(float(np.linalg.norm(nxt - iterates[-1])))
        iterates.append(nxt)
    return Orbit(iterates, residuals, mask_fingerprint(mask))


def fixed_point_residual(
    ae: Autoencoder,
    x: np.ndarray,
    mask: DropoutMask | None = None,
    epsilon: float = DEFAULT_EPSILON,
) -> FixedPointReport:
    """How far x is from being a fixed point, against tolerance epsilon."""
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    residual = float(np.linalg.norm(reconstruct(ae, x, mask) - x))
    return FixedPointReport(residual, epsilon, residual <= epsilon)


def power_iteration_radius(
    map_fn: Callable[[np.ndarray], np.ndarray],
    x: np.ndarray,
    max_iters: int = 200,
    tol: float = 1e-6,
    fd_step: float = FD_STEP,
    seed: int = 0,
    max_restarts: int = 3,
) -> SpectralReport:
    """Dominant |eigenvalue| of the Jacobian of map_fn at x.

    Power iteration on v -> J v with the product approximated by central
    differences, (f(x + h v) - f(x - h v)) / 2h, v renormalized each step.
    Converged means the estimate's relative change dropped below tol. A
    collapsed direction (J v ~ 0) restarts from a fresh random unit vector
    up to max_restarts times before giving up.
    """
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(x.shape[0])
    v /= np.linalg.norm(v)
    estimate = np.inf
    restarts = 0
    for it in range(1, max_iters + 1):
        jv = (map_fn(x + fd_step * v) - map_fn(x - fd_step * v)) / (2.0 * fd_step)
        norm = float(np.linalg.norm(jv))
        if norm < 1e-12:
            restarts += 1
            if restarts > max_restarts:
                return SpectralReport(0.0, it, False)
            v = rng.standard_normal(x.shape[0])
            v /= np.linalg.norm(v)
            estimate = np.inf
            continue
        v = jv / norm
        if np.isfinite(estimate) and abs(norm - estimate) <= tol * max(norm, 1e-30):
            return SpectralReport(norm, it, True)
        estimate = norm
    return SpectralReport(float(estimate), max_iters, False)


def jacobian_spectral_radius(
    ae: Autoencoder,
    x: np.ndarray,
    mask: DropoutMask | None = None,
    max_iters: int = 200,
    tol: float = 1e-6,
    seed: int = 0,
) -> SpectralReport:
    """Spectral-radius estimate of the reconstruction map's Jacobian at x.

    Below 1 near a fixed point means the point is locally attracting."""
    return power_iteration_radius(
        lambda p: reconstruct(ae, p, mask), x, max_iters=max_iters, tol=tol, seed=seed
    )


def basin_probe(
    ae: Autoencoder,
    x_star: np.ndarray,
    mask: DropoutMask | None,
    radius: float,
    trials: int,
    k: int,
    rng: np.random.Generator,
    details: bool = False,
):
    """Fraction of radius-ball perturbations whose k-step orbit ends within
    delta of x_star, with delta = max(3 * residual(x_star), 1e-3).

    Perturbed starts are clamped to the [0, 1] pixel range. With
    details=True also returns the perturbed starts and orbit endpoints.
    """
    if trials < 1:
        raise ValidationError(f"trials must be >= 1, got {trials}")
    if radius < 0:
        raise ValidationError(f"radius must be >= 0, got {radius}")
    x_star = np.asarray(x_star, dtype=np.float64).reshape(-1)
    dim = x_star.shape[0]
    delta = max(3.0 * fixed_point_residual(ae, x_star, mask).residual, 1e-3)

    starts = np.empty((trials, dim))
    for t in range(trials):
        direction = rng.standard_normal(dim)
        direction /= np.linalg.norm(direction)
        r = radius * rng.uniform() ** (1.0 / dim)
        starts[t] = np.clip(x_star + r * direction, 0.0, 1.0)

    endpoints = np.empty_like(starts)
    for t in range(trials):
        endpoints[t] = iterate(ae, starts[t], mask, k).iterates[-1]
    hits = np.linalg.norm(endpoints - x_star, axis=1) <= delta
    fraction = float(hits.mean())
    if details:
        return fraction, starts, endpoints
    return fraction


def write_orbit_csv(path, orbit: Orbit) -> None:
    """Rows (step, residual); step i covers iterate i-1 -> i."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "residual"])
        for i, res in enumerate(orbit.residuals, start=1):
            writer.writerow([i, f"{res:.17g}"])


def write_orbit_strip(path, orbit: Orbit, image_shape: tuple[int, int]) -> None:
    """All iterates side by side as one PGM strip, input leftmost."""
    h, w = image_shape
    strip = np.concatenate([it.reshape(h, w) for it in orbit.iterates], axis=1)
    write_pgm(path, np.clip(strip, 0.0, 1.0))
