import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from coarse_hydro.error import NodeError, RepresentationError
from coarse_hydro.grid import WaveFunction, make_grid, to_position, to_spectral
from coarse_hydro.madelung import (
    correlation_fields,
    current_velocity,
    decompose,
    fit_phase_structure,
    hydro_fields,
    moment,
    moments,
    recompose,
    velocity_and_vorticity,
)
from coarse_hydro.state import Representation


def normalized(grid, values):
    w = WaveFunction(grid, values)
    return w.with_values(values / w.norm())


def gaussian(x, center=0.0, width=1.0):
    return np.exp(-((x - center) ** 2) / (2 * width**2)) / math.sqrt(2 * np.pi * width**2)


def test_decompose_plane_wave():
    grid = make_grid(20.0, 64, 1, 1)
    m = 2.0
    v = 2 * np.pi * 3 / (20.0 * m)
    dec = decompose(WaveFunction(grid, np.exp(1j * m * v * grid.coordinates)), m)
    np.testing.assert_allclose(dec.amplitude, 1.0)
    np.testing.assert_allclose(np.diff(dec.phase) / grid.spacing, v, rtol=1e-10)
    assert not dec.node_mask.any()


def test_decompose_positive_gaussian():
    grid = make_grid(20.0, 64, 1, 1)
    dec = decompose(WaveFunction(grid, np.exp(-(grid.coordinates**2) / 2)), 1.0)
    np.testing.assert_array_equal(dec.phase, 0.0)


def test_decompose_odd_packet():
    grid = make_grid(20.0, 64, 1, 1)
    x = grid.coordinates
    w = WaveFunction(grid, x * np.exp(-(x**2) / 2))
    dec = decompose(w, 1.0)
    assert dec.node_mask[32]
    assert np.all(dec.amplitude >= 0)
    wide = decompose(w, 1.0, eps_node=0.6)
    assert wide.node_mask[31:34].all()
    off = ~dec.node_mask
    np.testing.assert_allclose(recompose(dec).values[off], w.values[off], atol=1e-14)


def test_decompose_errors():
    grid = make_grid(20.0, 16, 1, 1)
    with pytest.raises(NodeError):
        decompose(WaveFunction(grid, np.zeros(16)), 1.0)
    with pytest.raises(RepresentationError):
        decompose(to_spectral(WaveFunction(grid, np.ones(16))), 1.0)


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), particles=st.sampled_from([1, 2]), m=st.floats(0.5, 3.0))
def test_round_trip_random_smooth_states(seed, particles, m):
    grid = make_grid(20.0, 32, 1, particles)
    rng = np.random.default_rng(seed)
    spectrum = np.zeros(grid.shape, dtype=complex)
    low = (slice(0, 4),) * particles
    spectrum[low] = rng.standard_normal(spectrum[low].shape) + 1j * rng.standard_normal(spectrum[low].shape)
    w = to_position(WaveFunction(grid, spectrum, Representation.spectral))
    dec = decompose(w, m)
    off = ~dec.node_mask
    scale = np.max(np.abs(w.values))
    assert np.max(np.abs(recompose(dec).values[off] - w.values[off])) <= 1e-10 * scale


def test_fit_single_particle():
    grid = make_grid(20.0, 16, 1, 1)
    s = np.sin(grid.coordinates)
    fit = fit_phase_structure(s, grid, 1)
    np.testing.assert_array_equal(fit.varphi[0], s)
    np.testing.assert_array_equal(fit.mu[0], 0)
    assert fit.fit_residual == 0.0


def test_fit_separable_phase():
    grid = make_grid(20.0, 32, 1, 2)
    x = grid.coordinates
    f = np.cos(2 * np.pi * x / 20.0) + 0.1 * x
    s = f[:, None] + f[None, :]
    fit = fit_phase_structure(s, grid, 2)
    assert fit.converged
    assert fit.relative_residual <= 1e-8
    np.testing.assert_allclose(fit.mu[0][:, None] * fit.mu[1][None, :], 0.0, atol=1e-6)


def test_fit_pair_product():
    grid = make_grid(20.0, 32, 1, 2)
    x = grid.coordinates
    g = 0.5 * np.sin(2 * np.pi * x / 20.0) + 0.2 * np.cos(4 * np.pi * x / 20.0)
    s = g[:, None] * g[None, :]
    fit = fit_phase_structure(s, grid, 2)
    assert fit.relative_residual <= 1e-6
    assert fit.mu[0][np.argmax(np.abs(fit.mu[0]))] > 0
    np.testing.assert_allclose(np.linalg.norm(fit.mu[0]), np.linalg.norm(fit.mu[1]), rtol=1e-10)
    centred = fit.mu[0] - fit.mu[0].mean()
    expected = g - g.mean()
    correlation = abs(np.dot(centred, expected)) / (np.linalg.norm(centred) * np.linalg.norm(expected))
    assert correlation == pytest.approx(1.0, abs=1e-6)


def test_fit_three_particles():
    grid = make_grid(20.0, 16, 1, 3)
    x = grid.coordinates
    g = 0.4 * np.sin(2 * np.pi * x / 20.0)
    f = 0.3 * x
    s = (
        f[:, None, None]
        + f[None, :, None]
        + f[None, None, :]
        + g[:, None, None] * g[None, :, None]
        + g[:, None, None] * g[None, None, :]
        + g[None, :, None] * g[None, None, :]
    )
    fit = fit_phase_structure(s, grid, 3)
    assert fit.relative_residual <= 1e-6


def test_fit_reports_non_representable_part():
    grid = make_grid(8.0, 32, 1, 2)
    x = grid.coordinates
    g = 0.5 * np.sin(2 * np.pi * x / 8.0)
    s = g[:, None] * g[None, :] + np.sin(x[:, None] * x[None, :] ** 2)
    fit = fit_phase_structure(s, grid, 2)
    assert fit.fit_residual > 1e-2
    assert 0 < fit.relative_residual < 1


def test_moments_product_state():
    grid = make_grid(20.0, 64, 1, 2)
    f = gaussian(grid.coordinates, width=1.5)
    prob = f[:, None] * f[None, :]
    mom = moments(prob, grid)
    np.testing.assert_allclose(mom.rho, 2 * f, rtol=1e-10)
    assert np.sum(mom.rho) * grid.spacing == pytest.approx(2.0, rel=1e-8)
    assert mom.rho3 is None


def test_moments_normalization_and_marginals():
    grid = make_grid(20.0, 64, 1, 2)
    x = grid.coordinates
    a = np.exp(-((x[:, None] - 1) ** 2) / 4 - (x[None, :] + 2) ** 2 / 3 + 0.3j * x[:, None] * x[None, :])
    w = normalized(grid, a + a.T)
    mom = moments(np.abs(w.values) ** 2, grid)
    h = grid.spacing
    assert np.sum(mom.rho) * h == pytest.approx(2 * w.norm_sq(), rel=1e-8)
    np.testing.assert_allclose(np.sum(mom.rho2, axis=1) * h, (2 - 1) * mom.rho, rtol=1e-8, atol=1e-14)


def test_moments_three_particle_chain():
    grid = make_grid(20.0, 16, 1, 3)
    rng = np.random.default_rng(1)
    prob = rng.random(grid.shape)
    mom = moments(prob, grid)
    h = grid.spacing
    np.testing.assert_allclose(np.sum(mom.rho3, axis=2) * h, (3 - 2) * mom.rho2, rtol=1e-10)
    np.testing.assert_allclose(np.sum(mom.rho2, axis=1) * h, (3 - 1) * mom.rho, rtol=1e-10)


def test_moment_order_errors():
    grid = make_grid(20.0, 16, 1, 1)
    mom = moments(np.ones(16), grid)
    assert mom.rho2 is None and mom.rho3 is None
    with pytest.raises(ValueError):
        moment(np.ones(16), grid, 2)


def test_correlation_fields_trivial():
    grid = make_grid(20.0, 32, 1, 2)
    f = gaussian(grid.coordinates, width=2.0)
    mom = moments(f[:, None] * f[None, :], grid)
    lam, kappa_sq, clamp = correlation_fields(mom, np.zeros(32))
    np.testing.assert_array_equal(lam, 0)
    np.testing.assert_array_equal(kappa_sq, 0)
    lam, kappa_sq, clamp = correlation_fields(mom, np.full(32, 0.7))
    np.testing.assert_allclose(lam, 0.7, rtol=1e-12)
    np.testing.assert_allclose(kappa_sq, 0.0, atol=1e-12)
    assert clamp <= 1e-12


def test_correlation_fields_mixture_has_variance():
    grid = make_grid(20.0, 64, 1, 2)
    x = grid.coordinates
    prob = 0.5 * (np.outer(gaussian(x, -2.0), gaussian(x, 2.0)) + np.outer(gaussian(x, 2.0), gaussian(x, -2.0)))
    mom = moments(prob, grid)
    lam, kappa_sq, clamp = correlation_fields(mom, x)
    assert clamp <= 1e-8
    assert np.all(kappa_sq >= 0)
    assert kappa_sq[32] > 1.0
    # conditional mean at x1 = 0 is the average partner position
    assert lam[32] == pytest.approx(0.0, abs=1e-10)


def test_correlation_fields_vanishing_density():
    grid = make_grid(20.0, 16, 1, 2)
    prob = np.zeros(grid.shape)
    prob[4:8, 4:8] = 1.0
    mom = moments(prob, grid)
    with pytest.raises(NodeError):
        correlation_fields(mom, np.ones(16))
    lam, _, _ = correlation_fields(mom, np.ones(16), mask=mom.rho <= 0)
    np.testing.assert_allclose(lam[4:8], 1.0)


def test_velocity_one_dimension():
    grid = make_grid(20.0, 64, 1, 1)
    x = grid.coordinates
    u, vorticity, defect = velocity_and_vorticity(0.7 * x, np.zeros(64), np.zeros(64), grid, ramp=True)
    np.testing.assert_allclose(u[0], 0.7, atol=1e-10)
    np.testing.assert_array_equal(vorticity, 0)
    assert defect == 0.0


def test_vorticity_two_dimensions():
    grid = make_grid(20.0, 32, 2, 1)
    x = grid.axis_coordinates(0) + np.zeros(grid.shape)
    y = grid.axis_coordinates(1) + np.zeros(grid.shape)
    u, vorticity, defect = velocity_and_vorticity(np.zeros(grid.shape), x, y, grid, ramp=True)
    np.testing.assert_allclose(u[0], 0.0, atol=1e-10)
    np.testing.assert_allclose(u[1], x, atol=1e-10)
    np.testing.assert_allclose(vorticity, 1.0, atol=1e-10)
    assert defect <= 1e-8


def pair_state(grid, m, p, mu):
    x = grid.coordinates
    f = np.exp(-(x**2) / 2)
    phase = p * (x[:, None] + x[None, :]) + mu[:, None] * mu[None, :]
    return normalized(grid, f[:, None] * f[None, :] * np.exp(1j * m * phase))


def test_current_velocity_matches_pair_ansatz():
    grid = make_grid(20.0, 64, 1, 2)
    x = grid.coordinates
    m = 1.0
    p = 2 * np.pi * 2 / 20.0
    mu = 0.3 * np.sin(2 * np.pi * x / 20.0)
    dmu = 0.3 * (2 * np.pi / 20.0) * np.cos(2 * np.pi * x / 20.0)
    w = pair_state(grid, m, p, mu)
    mom = moments(np.abs(w.values) ** 2, grid)
    mask = mom.rho < 1e-6 * mom.rho.max()
    lam, _, _ = correlation_fields(mom, mu, mask)
    u = current_velocity(w, m, mask)
    off = ~mask
    np.testing.assert_allclose(u[0][off], (p + lam * dmu)[off], atol=1e-8)


def test_velocity_gauge_invariance():
    grid = make_grid(20.0, 32, 1, 2)
    x = grid.coordinates
    w = pair_state(grid, 1.0, 0.0, 0.4 * np.sin(2 * np.pi * x / 20.0))
    dec = decompose(w, 1.0)
    fit = fit_phase_structure(dec.phase, grid, 2)
    mom = moments(dec.amplitude**2, grid)
    lam, _, _ = correlation_fields(mom, fit.mu[1])
    flipped, _, _ = correlation_fields(mom, -fit.mu[1])
    u, _, _ = velocity_and_vorticity(fit.varphi[0], lam, fit.mu[0], grid)
    v, _, _ = velocity_and_vorticity(fit.varphi[0], flipped, -fit.mu[0], grid)
    np.testing.assert_allclose(u, v, atol=1e-10)


def test_hydro_fields_single_packet():
    grid = make_grid(20.0, 64, 1, 1)
    x = grid.coordinates
    p = 2 * np.pi * 3 / 20.0
    w = normalized(grid, np.exp(-(x**2) / 2 + 1j * p * x))
    fields = hydro_fields(w, 1.0)
    assert np.sum(fields.rho) * grid.spacing == pytest.approx(1.0, rel=1e-10)
    off = ~fields.mask
    np.testing.assert_allclose(fields.u[0][off], p, atol=1e-8)
    np.testing.assert_array_equal(fields.lam, 0)
    np.testing.assert_array_equal(fields.kappa_sq, 0)
    np.testing.assert_array_equal(fields.vorticity, 0)
    assert fields.rho2 is None


def test_hydro_fields_two_particles():
    grid = make_grid(20.0, 32, 1, 2)
    x = grid.coordinates
    w = pair_state(grid, 1.0, 0.0, 0.4 * np.sin(2 * np.pi * x / 20.0))
    fields = hydro_fields(w, 1.0)
    assert np.sum(fields.rho) * grid.spacing == pytest.approx(2.0, rel=1e-8)
    assert fields.kappa_clamp <= 1e-8
    assert np.all(fields.kappa_sq >= 0)
    assert fields.fit_residual <= 1e-6
    assert fields.grid == grid.one_particle()


def test_hydro_fields_winding_phase_two_dimensions():
    grid = make_grid(20.0, 32, 2, 1)
    x = grid.axis_coordinates(0)
    y = grid.axis_coordinates(1)
    kx, ky = 2 * np.pi * 2 / 20.0, 2 * np.pi / 20.0
    w = normalized(grid, (1 + 0.3 * np.cos(2 * np.pi * y / 20.0)) * np.exp(1j * (kx * x + ky * y)))
    fields = hydro_fields(w, 1.0)
    np.testing.assert_allclose(fields.u[0], kx, atol=1e-8)
    np.testing.assert_allclose(fields.u[1], ky, atol=1e-8)
    np.testing.assert_allclose(fields.vorticity, 0.0, atol=1e-12)
    assert fields.curl_defect <= 1e-8
    # the unwrapped phase is a linear ramp; only the ramp-aware gradient recovers the current
    u, _, _ = velocity_and_vorticity(fields.varphi, fields.lam, fields.mu, grid, ramp=True)
    np.testing.assert_allclose(u, fields.u, atol=1e-8)
    plain, _, _ = velocity_and_vorticity(fields.varphi, fields.lam, fields.mu, grid)
    assert np.max(np.abs(plain - fields.u)) > 1e-2
