import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from coarse_hydro.error import DegenerateFitError, GridMismatchError
from coarse_hydro.grid import WaveFunction, make_grid, to_spectral
from coarse_hydro.projector import (
    build_kernels,
    build_symbol,
    coarse_grain,
    expansion_report,
    loglog_slope,
    projector_defect,
)


def test_symbol_zero_length():
    grid = make_grid(20.0, 32, 1, 1)
    np.testing.assert_array_equal(build_symbol(grid, 0.0).values, 1.0)
    np.testing.assert_array_equal(build_symbol(grid, 0.0).complement, 0.0)


def test_symbol_values():
    grid = make_grid(2 * np.pi, 8, 1, 1)
    assert build_symbol(grid, math.sqrt(2), 0.5).values[1] == pytest.approx(math.exp(-1))
    grid2 = make_grid(2 * np.pi, 8, 1, 2)
    assert build_symbol(grid2, 1.0, 0.5).values[1, 1] == pytest.approx(math.exp(-1))
    assert build_symbol(grid2, 1.0, 0.25).values[1, 1] == pytest.approx(math.exp(-0.5))


def test_symbol_negative_length():
    with pytest.raises(ValueError):
        build_symbol(make_grid(20.0, 8, 1, 1), -0.1)


def test_symbol_monotone():
    grid = make_grid(20.0, 32, 1, 1)
    small = build_symbol(grid, 0.2).values
    large = build_symbol(grid, 0.6).values
    assert np.all(large <= small)
    assert np.all(large > 0)
    assert large[0] == 1.0
    order = np.argsort(np.abs(grid.fft_wavenumbers), kind="stable")
    assert np.all(np.diff(large[order]) <= 0)


def test_coarse_grain_constant_and_plane_wave():
    grid = make_grid(20.0, 32, 1, 1)
    symbol = build_symbol(grid, 0.7)
    constant = WaveFunction(grid, np.full(32, 0.3 + 0.1j))
    np.testing.assert_allclose(coarse_grain(constant, symbol).values, constant.values, atol=1e-14)
    k0 = 4 * grid.dk
    wave = WaveFunction(grid, np.exp(1j * k0 * grid.coordinates))
    expected = math.exp(-0.5 * k0**2 * 0.7**2) * wave.values
    np.testing.assert_allclose(coarse_grain(wave, symbol).values, expected, atol=1e-13)


def test_coarse_grain_keeps_representation():
    grid = make_grid(20.0, 16, 1, 1)
    w = to_spectral(WaveFunction(grid, np.exp(-grid.coordinates**2)))
    assert coarse_grain(w, build_symbol(grid, 0.5)).representation == w.representation


def test_coarse_grain_grid_mismatch():
    w = WaveFunction(make_grid(20.0, 16, 1, 1), np.ones(16))
    with pytest.raises(GridMismatchError):
        coarse_grain(w, build_symbol(make_grid(20.0, 32, 1, 1), 0.5))


def test_coarse_grain_matches_gaussian_convolution():
    grid = make_grid(20.0, 64, 1, 1)
    x = grid.coordinates
    l_av = 1.0
    impulse = np.zeros(64)
    impulse[32] = 1.0 / grid.spacing
    smeared = coarse_grain(WaveFunction(grid, impulse), build_symbol(grid, l_av)).values
    # exp(-k^2 l^2 / 2) is the transform of a normalized Gaussian of width l
    gaussian = np.exp(-(x**2) / (2 * l_av**2)) / math.sqrt(2 * np.pi * l_av**2)
    np.testing.assert_allclose(smeared.real, gaussian, atol=1e-8)


def test_coarse_grain_narrow_packet_flattens():
    grid = make_grid(20.0, 32, 1, 1)
    x = grid.coordinates
    w = WaveFunction(grid, np.exp(-(x**2) / 0.5))
    smeared = coarse_grain(w, build_symbol(grid, 2.0))
    assert np.max(np.abs(smeared.values)) < 0.5 * np.max(np.abs(w.values))
    assert smeared.norm() <= w.norm()


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), l_av=st.floats(0.0, 3.0))
def test_coarse_grain_contraction(seed, l_av):
    grid = make_grid(20.0, 32, 1, 1)
    rng = np.random.default_rng(seed)
    w = WaveFunction(grid, rng.standard_normal(32) + 1j * rng.standard_normal(32))
    assert coarse_grain(w, build_symbol(grid, l_av)).norm_sq() <= w.norm_sq() * (1 + 1e-12)


def test_projector_defect():
    grid = make_grid(2 * np.pi, 16, 1, 1)
    assert projector_defect(build_symbol(grid, 0.0), 4.0) == 0.0
    # P(k=1) = 1/2 for c_P l^2 = ln 2
    symbol = build_symbol(grid, math.sqrt(2 * math.log(2)), 0.5)
    assert symbol.values[1] == pytest.approx(0.5)
    assert projector_defect(symbol, 1.0) == pytest.approx(0.25)
    assert projector_defect(symbol, 7.0) <= 0.25


def test_projector_defect_quadratic():
    grid = make_grid(20.0, 128, 1, 1)
    k_max = 2.0
    l_values = np.array([0.01, 0.02, 0.03, 0.04, 0.05])
    defects = np.array([projector_defect(build_symbol(grid, l), k_max) for l in l_values])
    assert np.all(defects <= 0.5 * k_max**2 * l_values**2 + (k_max * l_values) ** 4)
    assert loglog_slope(k_max * l_values, defects) == pytest.approx(2.0, abs=0.2)


def test_kernels_zero_length():
    grid = make_grid(20.0, 32, 1, 1)
    kernels = build_kernels(grid, 0.0, 1.0)
    np.testing.assert_allclose(kernels.H, kernels.omega.values)
    np.testing.assert_array_equal(kernels.G(0.4), 0)
    np.testing.assert_array_equal(kernels.F(0.4), 0)


def test_kernels_plug_in():
    # k = 2 with m = 1 gives omega = 2; c_P l^2 k^2 = ln 2 gives P = 1/2
    grid = make_grid(2 * np.pi, 16, 1, 1)
    kernels = build_kernels(grid, math.sqrt(math.log(2) / 2), 1.0, 0.5)
    assert kernels.omega.values[2] == pytest.approx(2.0)
    assert kernels.symbol.values[2] == pytest.approx(0.5)
    assert kernels.G(0.0)[2] == pytest.approx(0.25)
    assert kernels.F(0.0)[2] == pytest.approx(0.25)
    assert kernels.H[2] == pytest.approx(0.5)


def test_kernels_phase_only_time_dependence():
    grid = make_grid(20.0, 32, 1, 1)
    kernels = build_kernels(grid, 0.6, 1.0)
    np.testing.assert_allclose(np.abs(kernels.G(3.7)), np.abs(kernels.G(0.0)), rtol=1e-14)
    np.testing.assert_allclose(np.abs(kernels.F(3.7)), np.abs(kernels.F(0.0)), rtol=1e-14)


def test_expansion_report_slopes():
    grid = make_grid(20.0, 128, 1, 1)
    report = expansion_report(grid, 1.0, [0.005, 0.01, 0.02, 0.04, 0.08], k_max=3.0)
    assert report.h_residual_slope == pytest.approx(2.0, abs=0.2)
    assert report.g_leading_slope == pytest.approx(4.0, abs=0.2)
    assert report.f_leading_slope == pytest.approx(4.0, abs=0.2)
    assert report.g_residual_slope == pytest.approx(6.0, abs=0.3)
    assert report.g_reference_slope == pytest.approx(8.0, abs=0.2)
    assert not report.g_reference_consistent
    assert len(report.rows()) == 5
    assert report.summary()["g_reference_consistent"] is False


def test_expansion_reference_forms_match_at_quarter_exponent():
    # at c_P = 1/4 the reference F form equals the leading order omega x^2 P
    report = expansion_report(make_grid(20.0, 64, 1, 1), 1.0, [0.01, 0.02, 0.04], k_max=5.0, c_p=0.25)
    assert report.f_reference_ratio == pytest.approx(1.0, rel=1e-2)
    assert report.f_reference_consistent
    assert report.f_reference_slope == pytest.approx(4.0, abs=0.05)
    assert report.g_reference_slope == pytest.approx(8.0, abs=0.05)
    assert report.g_reference_ratio < 1e-3


def test_expansion_report_errors():
    grid = make_grid(20.0, 64, 1, 1)
    with pytest.raises(DegenerateFitError):
        expansion_report(grid, 1.0, [0.01, 0.02], k_max=2.0)
    with pytest.raises(ValueError):
        expansion_report(grid, 1.0, [0.1, 0.2, 0.8], k_max=2.0)
