"""Gaussian coarse-graining symbol and the exact spectral kernels of the projected equation."""

from __future__ import annotations

from dataclasses import dataclass, field
from logging import Logger

import numpy as np

from coarse_hydro.error import DegenerateFitError, GridMismatchError
from coarse_hydro.grid import Grid, OmegaTable, WaveFunction, dispersion, spectral_values, to_position
from coarse_hydro.state import Representation
from coarse_hydro.util import get_logger

DEFAULT_EXPONENT_FACTOR = 0.5


@dataclass(frozen=True)
class ProjectorSymbol:
    """P(k_1..k_N) = exp(-c_P * sum_j |k_j|^2 * l_av^2) on the FFT-ordered spectral lattice."""

    grid: Grid
    l_av: float
    exponent_factor: float
    values: np.ndarray = field(repr=False)
    complement: np.ndarray = field(repr=False)
    """1 - P, evaluated without cancellation"""


def _exponent(grid: Grid, l_av: float, c_p: float) -> np.ndarray:
    return c_p * grid.k_squared() * l_av**2


def build_symbol(grid: Grid, l_av: float, c_p: float = DEFAULT_EXPONENT_FACTOR) -> ProjectorSymbol:
    if l_av < 0:
        raise ValueError(f"averaging length must be non-negative, got {l_av}")
    if c_p <= 0:
        raise ValueError(f"exponent factor must be positive, got {c_p}")
    x = _exponent(grid, l_av, c_p)
    return ProjectorSymbol(grid, float(l_av), float(c_p), np.exp(-x), -np.expm1(-x))


def coarse_grain(w: WaveFunction, symbol: ProjectorSymbol, workers: int = 1) -> WaveFunction:
    """Applies the projector as a pointwise spectral multiplier.

    The result keeps the representation of the input.
    """
    if w.grid != symbol.grid:
        raise GridMismatchError("wave function and projector symbol")
    smeared = w.with_values(spectral_values(w, workers) * symbol.values, Representation.spectral)
    if w.representation == Representation.position:
        return to_position(smeared, workers)
    return smeared


def band_mask(grid: Grid, k_max: float) -> np.ndarray:
    """Spectral points with |k| = sqrt(sum_j |k_j|^2) <= k_max."""
    return grid.k_squared() <= k_max**2 * (1.0 + 1e-12)


def projector_defect(symbol: ProjectorSymbol, k_max: float) -> float:
    """max |P^2 - P| over the band |k| <= k_max."""
    mask = band_mask(symbol.grid, k_max)
    defect = symbol.values * symbol.complement
    return float(np.max(defect[mask])) if np.any(mask) else 0.0


@dataclass(frozen=True)
class KernelSet:
    """Spectral multipliers of H^P, G^P(tau) and F^P(tau) at a fixed averaging length.

    G and F depend on tau only through the unimodular phase exp(-i omega tau);
    their moduli are stored as g_amplitude and f_amplitude.
    """

    symbol: ProjectorSymbol
    omega: OmegaTable
    H: np.ndarray = field(repr=False)
    g_amplitude: np.ndarray = field(repr=False)
    f_amplitude: np.ndarray = field(repr=False)

    @property
    def grid(self) -> Grid:
        return self.symbol.grid

    @property
    def l_av(self) -> float:
        return self.symbol.l_av

    @property
    def mass(self) -> float:
        return self.omega.mass

    def phase(self, tau: float) -> np.ndarray:
        return np.exp(-1j * self.omega.values * tau)

    def G(self, tau: float) -> np.ndarray:
        return self.g_amplitude * self.phase(tau)

    def F(self, tau: float) -> np.ndarray:
        return self.f_amplitude * self.phase(tau)


def build_kernels(grid: Grid, l_av: float, m: float, c_p: float = DEFAULT_EXPONENT_FACTOR) -> KernelSet:
    symbol = build_symbol(grid, l_av, c_p)
    omega = dispersion(grid, m)
    p, q, w = symbol.values, symbol.complement, omega.values
    return KernelSet(
        symbol=symbol,
        omega=omega,
        H=w * p**2,
        g_amplitude=w**2 * (p * q) ** 2,
        f_amplitude=w * p * q**2,
    )


@dataclass
class ExpansionReport:
    """Low-order expansion diagnostics of the kernels over a band |k| <= k_max.

    The *_leading_slope entries are fitted log-log slopes of the exact multiplier
    norms in l_av, the *_residual_slope entries those of |exact - leading order|.
    The reference forms are l_av^8/64 (sum k^2)^4 omega^2 for G and
    l_av^4/16 (sum k^2)^2 omega P for F.
    """

    l_values: np.ndarray
    k_max: float
    exponent_factor: float
    h_residual: np.ndarray
    g_exact: np.ndarray
    g_residual: np.ndarray
    g_reference: np.ndarray
    f_exact: np.ndarray
    f_residual: np.ndarray
    f_reference: np.ndarray
    h_residual_slope: float
    g_leading_slope: float
    g_residual_slope: float
    g_reference_slope: float
    f_leading_slope: float
    f_residual_slope: float
    f_reference_slope: float

    @property
    def g_reference_consistent(self) -> bool:
        """True if the reference G form has the derived leading order in l_av."""
        return abs(self.g_reference_slope - self.g_leading_slope) <= 0.2

    @property
    def f_reference_consistent(self) -> bool:
        return abs(self.f_reference_slope - self.f_leading_slope) <= 0.2

    @property
    def g_reference_ratio(self) -> float:
        """Reference / exact G norm at the smallest l_av."""
        return float(self.g_reference[0] / self.g_exact[0]) if self.g_exact[0] > 0 else float("nan")

    @property
    def f_reference_ratio(self) -> float:
        return float(self.f_reference[0] / self.f_exact[0]) if self.f_exact[0] > 0 else float("nan")

    def rows(self) -> list[dict]:
        return [
            {
                "l_av": float(l),
                "h_residual": float(self.h_residual[i]),
                "g_exact": float(self.g_exact[i]),
                "g_residual": float(self.g_residual[i]),
                "g_reference": float(self.g_reference[i]),
                "f_exact": float(self.f_exact[i]),
                "f_residual": float(self.f_residual[i]),
                "f_reference": float(self.f_reference[i]),
            }
            for i, l in enumerate(self.l_values)
        ]

    def summary(self) -> dict:
        return {
            "k_max": self.k_max,
            "exponent_factor": self.exponent_factor,
            "h_residual_slope": self.h_residual_slope,
            "g_leading_slope": self.g_leading_slope,
            "g_residual_slope": self.g_residual_slope,
            "g_reference_slope": self.g_reference_slope,
            "g_reference_consistent": self.g_reference_consistent,
            "g_reference_ratio": self.g_reference_ratio,
            "f_leading_slope": self.f_leading_slope,
            "f_residual_slope": self.f_residual_slope,
            "f_reference_slope": self.f_reference_slope,
            "f_reference_consistent": self.f_reference_consistent,
            "f_reference_ratio": self.f_reference_ratio,
        }


def loglog_slope(x: np.ndarray, y: np.ndarray) -> float:
    """Least-squares slope of log(y) against log(x); non-positive y are skipped."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    ok = (x > 0) & (y > 0)
    if np.count_nonzero(ok) < 3:
        raise DegenerateFitError(int(np.count_nonzero(ok)))
    slope, _ = np.polyfit(np.log(x[ok]), np.log(y[ok]), 1)
    return float(slope)


def expansion_report(
    grid: Grid,
    m: float,
    l_values,
    k_max: float,
    c_p: float = DEFAULT_EXPONENT_FACTOR,
    logger: Logger | None = None,
) -> ExpansionReport:
    """Compares the exact kernels against their leading order in l_av.

    With x = c_P |k|^2 l_av^2 the series are 1 - P^2 = 2x + O(x^2),
    P (1 - P) = x + O(x^2) and (1 - P)^2 = x^2 + O(x^3), so the leading
    orders are omega for H, omega^2 x^2 for G and omega x^2 for F.
    """
    logger = get_logger(logger)
    l_values = np.asarray(sorted(l_values), dtype=float)
    if len(l_values) < 3:
        raise DegenerateFitError(len(l_values))
    if np.any(l_values * k_max > 1.0):
        raise ValueError(f"expansion requires l_av * k_max <= 1, got max {l_values[-1] * k_max:.3g}")

    mask = band_mask(grid, k_max)
    ksq = grid.k_squared()[mask]
    omega = dispersion(grid, m).values[mask]

    def norm(values: np.ndarray) -> float:
        return float(np.sqrt(np.sum(np.abs(values) ** 2)))

    rows = {key: [] for key in ("h_res", "g_ex", "g_res", "g_ref", "f_ex", "f_res", "f_ref")}
    for l_av in l_values:
        x = c_p * ksq * l_av**2
        p = np.exp(-x)
        q = -np.expm1(-x)
        g_exact = omega**2 * (p * q) ** 2
        f_exact = omega * p * q**2
        rows["h_res"].append(norm(omega * -np.expm1(-2.0 * x)))
        rows["g_ex"].append(norm(g_exact))
        rows["g_res"].append(norm(g_exact - omega**2 * x**2))
        rows["g_ref"].append(norm(l_av**8 / 64.0 * ksq**4 * omega**2))
        rows["f_ex"].append(norm(f_exact))
        rows["f_res"].append(norm(f_exact - omega * x**2))
        rows["f_ref"].append(norm(l_av**4 / 16.0 * ksq**2 * omega * p))

    arrays = {key: np.asarray(values) for key, values in rows.items()}
    report = ExpansionReport(
        l_values=l_values,
        k_max=float(k_max),
        exponent_factor=float(c_p),
        h_residual=arrays["h_res"],
        g_exact=arrays["g_ex"],
        g_residual=arrays["g_res"],
        g_reference=arrays["g_ref"],
        f_exact=arrays["f_ex"],
        f_residual=arrays["f_res"],
        f_reference=arrays["f_ref"],
        h_residual_slope=loglog_slope(l_values, arrays["h_res"]),
        g_leading_slope=loglog_slope(l_values, arrays["g_ex"]),
        g_residual_slope=loglog_slope(l_values, arrays["g_res"]),
        g_reference_slope=loglog_slope(l_values, arrays["g_ref"]),
        f_leading_slope=loglog_slope(l_values, arrays["f_ex"]),
        f_residual_slope=loglog_slope(l_values, arrays["f_res"]),
        f_reference_slope=loglog_slope(l_values, arrays["f_ref"]),
    )
    if not report.g_reference_consistent:
        logger.warning(
            "[kernels] reference G expansion scales as l_av^%.2f, derived leading order is l_av^%.2f",
            report.g_reference_slope,
            report.g_leading_slope,
        )
    if not report.f_reference_consistent:
        logger.warning(
            "[kernels] reference F expansion scales as l_av^%.2f, derived leading order is l_av^%.2f",
            report.f_reference_slope,
            report.f_leading_slope,
        )
    return report
