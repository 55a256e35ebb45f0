"""Orbits, fixed points, spectral-radius estimation and basin probes on
constructed maps with known behavior."""

import numpy as np
import pytest

from mcaae.autoencoder import Autoencoder, build_autoencoder, sample_autoencoder_mask
from mcaae.dynamics import (
    basin_probe,
    fixed_point_residual,
    iterate,
    jacobian_spectral_radius,
    power_iteration_radius,
    write_orbit_csv,
    write_orbit_strip,
)
from mcaae.errors import ValidationError
from mcaae.nncore import DenseLayer, Network


def identity_autoencoder(dim):
    enc = Network([DenseLayer(np.eye(dim), np.zeros(dim), "identity")])
    dec = Network([DenseLayer(np.eye(dim), np.zeros(dim), "identity")])
    return Autoencoder(enc, dec, dim)


def linear_autoencoder(matrix):
    """f(x) = matrix @ x, split as encode = matrix, decode = identity."""
    dim = matrix.shape[0]
    enc = Network([DenseLayer(matrix, np.zeros(dim), "identity")])
    dec = Network([DenseLayer(np.eye(dim), np.zeros(dim), "identity")])
    return Autoencoder(enc, dec, dim)


# --------------------------------------------------------------------------
# orbits


def test_orbit_k_zero_is_just_the_start():
    ae = identity_autoencoder(4)
    x = np.linspace(0, 1, 4)
    orbit = iterate(ae, x, None, 0)
    assert len(orbit.iterates) == 1
    assert orbit.residuals == []
    assert np.array_equal(orbit.iterates[0], x)


def test_identity_autoencoder_has_zero_residuals():
    ae = identity_autoencoder(5)
    orbit = iterate(ae, np.linspace(0, 1, 5), None, 6)
    assert orbit.residuals == [0.0] * 6


def test_orbit_residuals_recomputable_from_iterates():
    rng = np.random.default_rng(0)
    ae = build_autoencoder(16, rng, hidden_widths=(8,), latent_dim=3)
    mask = sample_autoencoder_mask(ae, 0.6, rng)
    orbit = iterate(ae, rng.random(16), mask, 5)
    for i, res in enumerate(orbit.residuals):
        assert res == float(np.linalg.norm(orbit.iterates[i + 1] - orbit.iterates[i]))


def test_orbit_deterministic_and_mask_bound():
    rng = np.random.default_rng(1)
    ae = build_autoencoder(16, rng, hidden_widths=(8,), latent_dim=3)
    mask = sample_autoencoder_mask(ae, 0.6, rng)
    x = rng.random(16)
    a = iterate(ae, x, mask, 4)
    b = iterate(ae, x, mask, 4)
    assert a.mask_id == b.mask_id == mask.fingerprint()
    for ia, ib in zip(a.iterates, b.iterates):
        assert np.array_equal(ia, ib)


def test_orbit_rejects_negative_k():
    with pytest.raises(ValidationError):
        iterate(identity_autoencoder(2), np.zeros(2), None, -1)


# --------------------------------------------------------------------------
# fixed-point residuals


def test_identity_map_is_fixed_for_any_positive_epsilon():
    ae = identity_autoencoder(4)
    report = fixed_point_residual(ae, np.linspace(0, 1, 4), epsilon=1e-12)
    assert report.residual == 0.0
    assert report.is_fixed


def test_epsilon_zero_rejects_any_nonidentity_model():
    rng = np.random.default_rng(2)
    ae = build_autoencoder(16, rng, hidden_widths=(8,), latent_dim=3)
    report = fixed_point_residual(ae, rng.random(16), epsilon=0.0)
    assert not report.is_fixed
    assert report.residual > 0.0


def test_is_fixed_tracks_epsilon_boundary():
    ae = identity_autoencoder(3)
    report = fixed_point_residual(ae, np.ones(3), epsilon=0.0)
    assert report.is_fixed  # residual exactly 0 <= 0


# --------------------------------------------------------------------------
# spectral radius


def test_power_iteration_scalar_contraction():
    report = power_iteration_radius(lambda x: 0.5 * x, np.zeros(3), seed=1)
    assert report.converged
    assert abs(report.radius_estimate - 0.5) <= 1e-3


def test_power_iteration_diagonal_dominant_eigenvalue():
    diag = np.array([0.9, 0.2])
    report = power_iteration_radius(lambda x: diag * x, np.zeros(2), seed=2)
    assert report.converged
    assert abs(report.radius_estimate - 0.9) <= 1e-3


@pytest.mark.parametrize("seed", range(5))
def test_power_iteration_random_diagonal_with_gap(seed):
    rng = np.random.default_rng(500 + seed)
    dim = int(rng.integers(3, 8))
    # dominant eigenvalue separated from the rest by at least 0.2
    rest = rng.uniform(0.05, 0.6, size=dim - 1)
    top = rest.max() + rng.uniform(0.2, 0.5)
    diag = np.concatenate([[top], rest])
    signs = rng.choice([-1.0, 1.0], size=dim)
    matrix = np.diag(diag * signs)
    report = power_iteration_radius(lambda x: matrix @ x, np.zeros(dim), seed=seed)
    assert report.converged
    assert abs(report.radius_estimate - top) <= 1e-3


def test_power_iteration_rotated_matrix():
    rng = np.random.default_rng(3)
    q, _ = np.linalg.qr(rng.standard_normal((4, 4)))
    diag = np.array([0.85, 0.3, 0.2, 0.1])
    matrix = q @ np.diag(diag) @ q.T
    report = power_iteration_radius(lambda x: matrix @ x, np.zeros(4), seed=4)
    assert abs(report.radius_estimate - 0.85) <= 1e-3


def test_power_iteration_zero_map_reports_not_converged():
    report = power_iteration_radius(lambda x: np.zeros_like(x), np.zeros(3), seed=5)
    assert not report.converged
    assert report.radius_estimate == 0.0


def test_jacobian_spectral_radius_on_linear_autoencoder():
    matrix = np.diag([0.7, 0.3, 0.1])
    ae = linear_autoencoder(matrix)
    report = jacobian_spectral_radius(ae, np.full(3, 0.5))
    assert report.converged
    assert abs(report.radius_estimate - 0.7) <= 1e-3


# --------------------------------------------------------------------------
# basin probes


def test_basin_radius_zero_at_fixed_point_gives_one():
    ae = identity_autoencoder(6)
    x = np.full(6, 0.5)
    fraction = basin_probe(ae, x, None, 0.0, 10, 3, np.random.default_rng(6))
    assert fraction == 1.0


def test_basin_identity_map_matches_geometric_oracle():
    # identity map: endpoint == start, delta = 1e-3 floor, so the fraction
    # is exactly the share of perturbed starts inside the delta-ball
    ae = identity_autoencoder(8)
    x = np.full(8, 0.5)
    fraction, starts, endpoints = basin_probe(
        ae, x, None, 0.1, 40, 5, np.random.default_rng(7), details=True
    )
    assert np.array_equal(starts, endpoints)
    oracle = float((np.linalg.norm(starts - x, axis=1) <= 1e-3).mean())
    assert fraction == oracle


def test_basin_validates_arguments():
    ae = identity_autoencoder(2)
    with pytest.raises(ValidationError):
        basin_probe(ae, np.zeros(2), None, -0.1, 5, 2, np.random.default_rng(0))
    with pytest.raises(ValidationError):
        basin_probe(ae, np.zeros(2), None, 0.1, 0, 2, np.random.default_rng(0))


# --------------------------------------------------------------------------
# dumps


def test_orbit_dumps(tmp_path):
    rng = np.random.default_rng(8)
    ae = build_autoencoder(16, rng, hidden_widths=(8,), latent_dim=3)
    orbit = iterate(ae, rng.random(16), None, 3)
    write_orbit_csv(tmp_path / "orbit.csv", orbit)
    lines = (tmp_path / "orbit.csv").read_text().strip().splitlines()
    assert lines[0] == "step,residual"
    assert len(lines) == 4
    write_orbit_strip(tmp_path / "orbit.pgm", orbit, (4, 4))
    from mcaae.data import read_pgm

    strip = read_pgm(tmp_path / "orbit.pgm")
    assert strip.shape == (4, 16)  # input plus 3 iterates side by side
