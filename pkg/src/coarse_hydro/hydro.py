"""Energies, functional derivatives and equation-of-motion residuals of the fluid description.

The fluid equations are not integrated forward. Trajectories come from the
projected wave equation and the continuity, Bernoulli and Euler forms are
evaluated on the fields extracted from them, so every residual measures how
well the fluid description holds on the microscopic solution.

E_P denotes the coarse-graining part of the energy, E_P = <a|G a> - <a|zeta>,
where G a is the memory integral M of the integrator and zeta the fluctuation
term. It is complex in general and only its real part enters forces.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from logging import Logger
from typing import Callable

import numpy as np

from coarse_hydro.error import GridMismatchError, HistoryError, MaskCoverageError, SnapshotError
from coarse_hydro.evolution import (
    FluctuationSource,
    Trajectory,
    fluctuation_term,
    memory_increment,
    product_weights,
)
from coarse_hydro.grid import (
    Grid,
    WaveFunction,
    divergence,
    gradient,
    laplacian,
    position_values,
    spectral_values,
    to_position,
)
from coarse_hydro.madelung import DEFAULT_NODE_EPS, HydroFields, hydro_fields
from coarse_hydro.projector import KernelSet
from coarse_hydro.state import KappaReading, PrefactorMode
from coarse_hydro.util import get_logger, parallel_map

DEFAULT_GATEAUX_EPS = 1e-6
"""Gateaux step relative to the sup norm of the perturbed field"""

MAX_MASK_COVERAGE = 0.5

FIELD_NAMES = ("rho", "varphi", "lam", "mu", "kappa")

Functional = Callable[[dict[str, np.ndarray]], complex]


def _prefactor(mode: PrefactorMode, m: float) -> float:
    if mode == PrefactorMode.mass_scaled:
        return m**2
    if mode == PrefactorMode.mass_scaled_signed:
        return -(m**2)
    return 1.0


def quantum_energy(
    rho: np.ndarray,
    m: float,
    grid: Grid,
    prefactor_mode: PrefactorMode = PrefactorMode.standard,
    eps_node: float = DEFAULT_NODE_EPS,
) -> tuple[float, np.ndarray]:
    """Quantum energy and quantum potential of a one-particle density.

    Standard mode: E = (1/2m) integral |grad sqrt(rho)|^2 and
    Q = -(1/2m) laplace(sqrt(rho)) / sqrt(rho). The mass-scaled modes scale both by
    m^2 and -m^2. Q is 0 where rho < eps_node^2 * max(rho).

    Returns:
    * (E_qm, Q)
    """
    if not m > 0:
        raise ValueError(f"mass must be positive, got {m}")
    rho = np.asarray(rho, dtype=float)
    if np.any(rho < 0):
        raise ValueError("density must be non-negative")
    one = grid.one_particle()
    if rho.shape != one.shape:
        raise GridMismatchError(f"density {rho.shape} and one-particle grid {one.shape}")
    peak = float(np.max(rho))
    if peak == 0:
        return 0.0, np.zeros(one.shape)
    s = np.sqrt(rho)
    energy = float(np.sum(gradient(s, one) ** 2)) * one.cell_volume / (2.0 * m)
    mask = rho < eps_node**2 * peak
    q = np.where(mask, 0.0, -laplacian(s, one) / (2.0 * m * np.where(mask, 1.0, s)))
    factor = _prefactor(prefactor_mode, m)
    return factor * energy, factor * q


def _inner(bra: np.ndarray, ket: np.ndarray, grid: Grid) -> complex:
    """<bra|ket> of spectral values."""
    return complex(np.sum(np.conj(bra) * ket) * grid.spectral_cell_volume)


def _memory_at(history: Trajectory | None, kernels: KernelSet, t: float) -> np.ndarray:
    if history is None:
        if t > 0 and kernels.l_av > 0:
            raise HistoryError(t, 0.0)
        return np.zeros(kernels.grid.shape, dtype=complex)
    if history.grid != kernels.grid:
        raise GridMismatchError("history and kernels")
    if history.memory is not None:
        return history.memory[history.index_of(t)]
    return memory_increment(history, kernels, t, history.spacing).values


def coarse_energy(
    a: WaveFunction,
    kernels: KernelSet,
    src: FluctuationSource,
    t: float,
    history: Trajectory | None = None,
    workers: int = 1,
) -> complex:
    """E_P = <a|M(t)> - <a|zeta(t)>, M the memory integral int_0^t G(tau) a(t - tau).

    M is read from the history's stored memory integrals when present and
    otherwise summed from its snapshots; without a history only t = 0 (or
    l_av = 0) is defined.
    """
    if a.grid != kernels.grid:
        raise GridMismatchError("wave function and kernels")
    zeta = fluctuation_term(src, kernels, t, workers).values
    memory = _memory_at(history, kernels, t)
    return _inner(spectral_values(a, workers), memory - zeta, kernels.grid)


@dataclass(frozen=True)
class EnergyBreakdown:
    E_qm: float
    E_P: complex
    quantum_potential: np.ndarray = field(repr=False)
    prefactor_mode: PrefactorMode = PrefactorMode.standard

    def summary(self) -> dict:
        return {
            "E_qm": self.E_qm,
            "E_P_real": self.E_P.real,
            "E_P_imag": self.E_P.imag,
            "prefactor_mode": self.prefactor_mode.name,
        }


def energy_breakdown(
    w: WaveFunction,
    fields: HydroFields,
    kernels: KernelSet | None = None,
    src: FluctuationSource | None = None,
    history: Trajectory | None = None,
    prefactor_mode: PrefactorMode = PrefactorMode.standard,
    workers: int = 1,
) -> EnergyBreakdown:
    """E_qm from the extracted density and E_P from the state at w.time."""
    e_qm, q = quantum_energy(fields.rho, fields.mass, fields.grid, prefactor_mode)
    e_p = 0j
    if kernels is not None and src is not None and kernels.l_av > 0:
        e_p = coarse_energy(w, kernels, src, w.time, history, workers)
    return EnergyBreakdown(e_qm, e_p, q, prefactor_mode)


def bump(grid: Grid, center: tuple[int, ...], width: float = 0.0) -> np.ndarray:
    """Unit-integral bump on the one-particle lattice.

    width 0 gives the lattice delta 1/h^d at center, otherwise a periodic
    Gaussian of the given standard deviation.
    """
    one = grid.one_particle()
    if width < 0:
        raise ValueError(f"bump width must be non-negative, got {width}")
    if width == 0:
        b = np.zeros(one.shape)
        b[center] = 1.0 / one.cell_volume
        return b
    r2 = np.zeros(one.shape)
    x = one.coordinates
    for axis, index in enumerate(center):
        d = np.mod(x - x[index] + 0.5 * one.box_length, one.box_length) - 0.5 * one.box_length
        shape = [1] * one.ndim
        shape[axis] = one.points_per_dim
        r2 = r2 + d.reshape(shape) ** 2
    b = np.exp(-r2 / (2.0 * width**2))
    return b / (np.sum(b) * one.cell_volume)


def gateaux(
    functional: Functional,
    fields: dict[str, np.ndarray],
    sigma: str,
    grid: Grid,
    center: tuple[int, ...],
    width: float = 0.0,
    eps: float = DEFAULT_GATEAUX_EPS,
) -> complex:
    """Central-difference derivative of functional in field sigma along a bump at center.

    The step is eps times the sup norm of fields[sigma] (eps itself when the
    field vanishes).
    """
    if not eps > 0:
        raise ValueError(f"gateaux step must be positive, got {eps}")
    base = np.asarray(fields[sigma], dtype=float)
    scale = float(np.max(np.abs(base)))
    step = eps * (scale if scale > 0 else 1.0)
    b = bump(grid, center, width)
    plus = dict(fields)
    minus = dict(fields)
    plus[sigma] = base + step * b
    minus[sigma] = base - step * b
    return complex(functional(plus) - functional(minus)) / (2.0 * step)


def gateaux_field(
    functional: Functional,
    fields: dict[str, np.ndarray],
    sigma: str,
    grid: Grid,
    width: float = 0.0,
    eps: float = DEFAULT_GATEAUX_EPS,
    mask: np.ndarray | None = None,
    workers: int = 1,
    logger: Logger | None = None,
) -> np.ndarray:
    """delta F / delta sigma over the one-particle lattice, one bump per unmasked point."""
    logger = get_logger(logger)
    one = grid.one_particle()
    centers = [c for c in np.ndindex(*one.shape) if mask is None or not mask[c]]
    logger.debug("[gateaux] d/d%s over %i centers", sigma, len(centers))
    values = parallel_map(lambda c: gateaux(functional, fields, sigma, one, c, width, eps), centers, workers)
    out = np.zeros(one.shape, dtype=complex)
    for c, v in zip(centers, values):
        out[c] = v
    return out


def _on_particle(values: np.ndarray, grid: Grid, particle: int) -> np.ndarray:
    shape = [1] * grid.ndim
    for axis in grid.particle_axes(particle):
        shape[axis] = grid.points_per_dim
    return np.asarray(values).reshape(shape)


class CoarseEnergyFunctional:
    """E_P as a function of the one-particle fields, around a reference state at time t.

    A field set is mapped to a perturbed state a' by
    * rho: a (1 + sum_i d_rho(x_i) / 2 rho(x_i)), first order in d_rho
    * varphi: a exp(i m sum_i d_varphi(x_i))
    * mu: a exp(i m sum_{i<j} [mu' mu' - mu mu](x_i, x_j))
    and E_P[a'] = <a'|zeta(t) - i (M(t) + g_0 (a' - a))>, g_0 the weight of the
    current state in the memory quadrature. lambda and kappa do not enter a'.
    """

    def __init__(
        self,
        state: WaveFunction,
        fields: HydroFields,
        kernels: KernelSet,
        memory: np.ndarray,
        zeta: np.ndarray,
        dt: float,
        workers: int = 1,
    ):
        if state.grid != kernels.grid:
            raise GridMismatchError("state and kernels")
        self._grid = kernels.grid
        self._mass = fields.mass
        self._workers = workers
        self._position = position_values(state, workers)
        self._spectral = spectral_values(state, workers)
        weight_a, _ = product_weights(kernels.omega.values, dt)
        self._current = kernels.g_amplitude * weight_a
        self._memory = np.asarray(memory)
        self._zeta = np.asarray(zeta)
        self._mask = fields.mask
        self._base = {
            "rho": fields.rho.copy(),
            "varphi": fields.varphi.copy(),
            "lam": fields.lam.copy(),
            "mu": fields.mu.copy(),
            "kappa": np.sqrt(fields.kappa_sq),
        }

    @classmethod
    def from_trajectory(
        cls,
        trajectory: Trajectory,
        index: int,
        fields: HydroFields,
        kernels: KernelSet,
        src: FluctuationSource,
        workers: int = 1,
    ) -> CoarseEnergyFunctional:
        t = float(trajectory.times[index])
        if trajectory.memory is not None:
            memory, dt = trajectory.memory[index], trajectory.dt
        else:
            memory, dt = memory_increment(trajectory, kernels, t, trajectory.spacing).values, trajectory.spacing
        zeta = fluctuation_term(src, kernels, t, workers).values
        return cls(trajectory.state(index), fields, kernels, memory, zeta, dt, workers)

    @property
    def grid(self) -> Grid:
        return self._grid

    def base_fields(self) -> dict[str, np.ndarray]:
        return {name: values.copy() for name, values in self._base.items()}

    def perturbed_state(self, fields: dict[str, np.ndarray]) -> np.ndarray:
        """Position values of a' for the given field set."""
        grid = self._grid
        base = self._base
        safe = np.where(self._mask, 1.0, base["rho"])
        ratio = np.where(self._mask, 0.0, (fields["rho"] - base["rho"]) / (2.0 * safe))
        d_varphi = fields["varphi"] - base["varphi"]
        amplitude = 1.0
        phase = 0.0
        for i in range(grid.particles):
            amplitude = amplitude + _on_particle(ratio, grid, i)
            phase = phase + _on_particle(d_varphi, grid, i)
            for j in range(i + 1, grid.particles):
                phase = phase + (
                    _on_particle(fields["mu"], grid, i) * _on_particle(fields["mu"], grid, j)
                    - _on_particle(base["mu"], grid, i) * _on_particle(base["mu"], grid, j)
                )
        return self._position * amplitude * np.exp(1j * self._mass * phase)

    def __call__(self, fields: dict[str, np.ndarray]) -> complex:
        perturbed = WaveFunction(self._grid, self.perturbed_state(fields))
        spectral = spectral_values(perturbed, self._workers)
        k = self._memory + self._current * (spectral - self._spectral) - self._zeta
        return _inner(spectral, k, self._grid)


@dataclass(frozen=True)
class EnergyDerivatives:
    """Functional derivatives of E_qm (real) and E_P (complex) in each fluid field."""

    grid: Grid
    qm: dict[str, np.ndarray] = field(repr=False)
    coarse: dict[str, np.ndarray] = field(repr=False)

    def total(self, name: str) -> np.ndarray:
        """delta (E_qm + Re E_P) / delta name"""
        return self.qm[name] + self.coarse[name].real

    @property
    def imag_norm(self) -> float:
        """Sup norm of the imaginary parts of the E_P derivatives"""
        return max(float(np.max(np.abs(v.imag))) for v in self.coarse.values())


def energy_derivatives(
    fields: HydroFields,
    prefactor_mode: PrefactorMode = PrefactorMode.standard,
    functional: CoarseEnergyFunctional | None = None,
    width: float = 0.0,
    eps: float = DEFAULT_GATEAUX_EPS,
    workers: int = 1,
    logger: Logger | None = None,
) -> EnergyDerivatives:
    """Derivatives of the energies in (rho, varphi, lam, mu, kappa).

    The E_qm part is the closed-form quantum potential; the E_P part is
    scanned with Gateaux bumps when a functional is given and 0 otherwise.
    """
    one = fields.grid
    zero = np.zeros(one.shape)
    _, q = quantum_energy(fields.rho, fields.mass, one, prefactor_mode)
    qm = {name: zero for name in FIELD_NAMES}
    qm["rho"] = np.where(fields.mask, 0.0, q)
    coarse = {name: zero.astype(complex) for name in FIELD_NAMES}
    if functional is not None:
        base = functional.base_fields()
        for name in ("rho", "varphi", "mu"):
            if name == "mu" and fields.particles == 1:
                continue
            coarse[name] = gateaux_field(functional, base, name, one, width, eps, fields.mask, workers, logger)
    return EnergyDerivatives(one, qm, coarse)


def _wrap(values: np.ndarray, period: float) -> np.ndarray:
    return values - period * np.round(values / period)


@dataclass(frozen=True)
class FieldRates:
    """Centered time derivatives of the fluid fields at the middle of a window."""

    rho: np.ndarray = field(repr=False)
    varphi: np.ndarray = field(repr=False)
    mu: np.ndarray = field(repr=False)
    rho_lam: np.ndarray = field(repr=False)
    rho_u: np.ndarray = field(repr=False)


def field_rates(before: HydroFields, after: HydroFields, spacing: float) -> FieldRates:
    """(after - before) / spacing for each field; phase-like fields wrapped modulo 2 pi / m."""
    period = 2.0 * math.pi / before.mass
    return FieldRates(
        rho=(after.rho - before.rho) / spacing,
        varphi=_wrap(after.varphi - before.varphi, period) / spacing,
        mu=_wrap(after.mu - before.mu, period) / spacing,
        rho_lam=(after.rho * after.lam - before.rho * before.lam) / spacing,
        rho_u=(after.rho * after.u - before.rho * before.u) / spacing,
    )


@dataclass(frozen=True)
class WindowFields:
    """Fields at three consecutive snapshots; derivatives are taken at the middle one."""

    before: HydroFields
    center: HydroFields
    after: HydroFields
    spacing: float
    state: WaveFunction
    """position-space state at the middle snapshot"""
    index: int
    """index of the middle snapshot in the source trajectory"""

    @property
    def mask(self) -> np.ndarray:
        return self.before.mask | self.center.mask | self.after.mask

    @property
    def rates(self) -> FieldRates:
        return field_rates(self.before, self.after, 2.0 * self.spacing)


def window_fields(
    trajectory: Trajectory,
    m: float,
    index: int | None = None,
    eps_node: float = DEFAULT_NODE_EPS,
    logger: Logger | None = None,
) -> WindowFields:
    """Extracts the fields at snapshots index-1, index, index+1 (default: the middle snapshot)."""
    if len(trajectory) < 3:
        raise SnapshotError(len(trajectory), 3)
    index = len(trajectory) // 2 if index is None else index
    if index < 1 or index > len(trajectory) - 2:
        raise SnapshotError(len(trajectory), index + 2)
    states = [to_position(trajectory.state(i)) for i in (index - 1, index, index + 1)]
    before, center, after = (hydro_fields(w, m, eps_node, logger) for w in states)
    return WindowFields(before, center, after, trajectory.spacing, states[1], index)


def _check_coverage(mask: np.ndarray) -> float:
    coverage = float(np.mean(mask))
    if coverage > MAX_MASK_COVERAGE:
        raise MaskCoverageError(coverage)
    return coverage


def _div_tensor(tensor: np.ndarray, grid: Grid) -> np.ndarray:
    """(div T)_i = sum_j d_j T_ij"""
    return np.stack([divergence(tensor[i], grid) for i in range(grid.ndim)])


def _outer(first: np.ndarray, second: np.ndarray) -> np.ndarray:
    return first[:, None] * second[None, :]


def _varphi_gradient(fields: HydroFields, grad_mu: np.ndarray) -> np.ndarray:
    # u = grad varphi + lambda grad mu
    return fields.u - fields.lam[None] * grad_mu


def force_bracket(
    fields: HydroFields,
    derivatives: dict[str, np.ndarray],
    mask: np.ndarray,
    kappa_reading: KappaReading = KappaReading.outer,
) -> np.ndarray:
    """kappa term + grad(rho d_rho) - grad(rho) d_rho - sum grad(sigma) d_sigma over varphi, lam, mu.

    derivatives maps each field name to a real functional derivative.
    """
    f = fields
    one = f.grid
    grad_mu = gradient(f.mu, one)
    safe = np.where(mask, 1.0, f.rho)
    ratio = np.where(mask, 0.0, np.sqrt(f.kappa_sq) / (2.0 * safe))
    d_kappa = derivatives["kappa"]
    d_rho = derivatives["rho"]
    if kappa_reading == KappaReading.outer:
        kappa_term = f.rho[None] * gradient(ratio * d_kappa, one)
    else:
        kappa_term = f.rho[None] * gradient(ratio, one) * d_kappa[None]
    rho_term = gradient(f.rho * d_rho, one) - gradient(f.rho, one) * d_rho[None]
    others = (
        _varphi_gradient(f, grad_mu) * derivatives["varphi"][None]
        + gradient(f.lam, one) * derivatives["lam"][None]
        + grad_mu * derivatives["mu"][None]
    )
    return kappa_term + rho_term - others


def _euler(
    wf: WindowFields, derivatives: EnergyDerivatives, kappa_reading: KappaReading
) -> tuple[np.ndarray, np.ndarray]:
    f = wf.center
    one = f.grid
    mask = wf.mask
    grad_mu = gradient(f.mu, one)
    flux = _outer(f.rho[None] * f.u, f.u) + f.rho * f.kappa_sq * _outer(grad_mu, grad_mu)
    lhs = wf.rates.rho_u + _div_tensor(flux, one)
    totals = {name: derivatives.total(name) for name in FIELD_NAMES}
    rhs = -force_bracket(f, totals, mask, kappa_reading) / f.mass
    return np.where(mask[None], 0.0, lhs - rhs), np.where(mask[None], 0.0, lhs)


@dataclass(frozen=True)
class ResidualSet:
    """Residual fields of the fluid equations at one instant, 0 on the mask."""

    grid: Grid
    time: float
    r_varphi: np.ndarray = field(repr=False)
    """continuity"""
    r_lambda: np.ndarray = field(repr=False)
    r_mu: np.ndarray = field(repr=False)
    r_rho: np.ndarray = field(repr=False)
    """Bernoulli form"""
    r_kappa: np.ndarray = field(repr=False)
    r_euler: np.ndarray = field(repr=False)
    perfect_fluid: np.ndarray = field(repr=False)
    """left side of the Euler form alone"""
    mask: np.ndarray = field(repr=False)
    coverage: float = 0.0
    imag_norm: float = 0.0

    def norms(self) -> dict[str, tuple[float, float]]:
        """(L2, sup) norm of every residual field."""
        out = {}
        for name in ("r_varphi", "r_lambda", "r_mu", "r_rho", "r_kappa", "r_euler", "perfect_fluid"):
            values = getattr(self, name)
            magnitude = np.sqrt(np.sum(values**2, axis=0)) if values.ndim > self.grid.ndim else np.abs(values)
            out[name] = (
                math.sqrt(float(np.sum(magnitude**2)) * self.grid.cell_volume),
                float(np.max(magnitude)),
            )
        return out


def eom_residuals(
    wf: WindowFields,
    derivatives: EnergyDerivatives | None = None,
    prefactor_mode: PrefactorMode = PrefactorMode.standard,
    kappa_reading: KappaReading = KappaReading.outer,
    logger: Logger | None = None,
) -> ResidualSet:
    """Evaluates the five field equations and the Euler form on a window of extracted fields.

    Without derivatives only E_qm enters (E_P = 0, the l_av = 0 case).
    Raises MaskCoverageError when more than half of the lattice is masked.
    """
    logger = get_logger(logger)
    f = wf.center
    one = f.grid
    m = f.mass
    mask = wf.mask
    coverage = _check_coverage(mask)
    if derivatives is None:
        derivatives = energy_derivatives(f, prefactor_mode)
    rates = wf.rates
    grad_mu = gradient(f.mu, one)
    grad_mu_sq = np.sum(grad_mu**2, axis=0)
    u_sq = np.sum(f.u**2, axis=0)
    u_dot_grad_mu = np.sum(f.u * grad_mu, axis=0)

    r_varphi = rates.rho + divergence(f.rho[None] * f.u, one) + derivatives.total("varphi") / m
    r_lambda = f.rho * (rates.mu + u_dot_grad_mu) + derivatives.total("lam") / m
    r_mu = (
        rates.rho_lam
        + divergence(f.rho * f.lam * f.u + f.rho * f.kappa_sq * grad_mu, one)
        + derivatives.total("mu") / m
    )
    r_rho = (
        rates.varphi
        + f.lam * rates.mu
        + 0.5 * u_sq
        + 0.5 * f.kappa_sq * grad_mu_sq
        + derivatives.total("rho") / m
    )
    r_kappa = f.rho * np.sqrt(f.kappa_sq) * grad_mu_sq + derivatives.total("kappa") / m
    euler, lhs = _euler(wf, derivatives, kappa_reading)

    def clean(values: np.ndarray) -> np.ndarray:
        return np.where(mask, 0.0, values)

    result = ResidualSet(
        grid=one,
        time=f.time,
        r_varphi=clean(r_varphi),
        r_lambda=clean(r_lambda),
        r_mu=clean(r_mu),
        r_rho=clean(r_rho),
        r_kappa=clean(r_kappa),
        r_euler=euler,
        perfect_fluid=lhs,
        mask=mask,
        coverage=coverage,
        imag_norm=derivatives.imag_norm,
    )
    for name, (l2, sup) in result.norms().items():
        logger.debug("[residual] t=%g %s l2=%.3e sup=%.3e", f.time, name, l2, sup)
    return result


def euler_residual(
    wf: WindowFields,
    derivatives: EnergyDerivatives | None = None,
    prefactor_mode: PrefactorMode = PrefactorMode.standard,
    kappa_reading: KappaReading = KappaReading.outer,
) -> tuple[np.ndarray, np.ndarray]:
    """Euler form LHS - RHS and the perfect-fluid residual LHS, each of shape (d, ...)."""
    _check_coverage(wf.mask)
    if derivatives is None:
        derivatives = energy_derivatives(wf.center, prefactor_mode)
    return _euler(wf, derivatives, kappa_reading)


@dataclass(frozen=True)
class PressureReport:
    tensor: np.ndarray = field(repr=False)
    """shape (d, d, ...)"""
    eigenvalues: np.ndarray = field(repr=False)
    """shape (..., d), ascending"""
    min_eigenvalue: float = 0.0
    scale: float = 0.0

    @property
    def positive(self) -> bool:
        return self.min_eigenvalue >= -1e-12 * max(self.scale, 1.0)


def thermal_pressure(
    rho: np.ndarray, kappa_sq: np.ndarray, mu: np.ndarray, grid: Grid, ramp: bool = False
) -> PressureReport:
    """P = rho kappa^2 grad mu (x) grad mu with its pointwise eigenvalues."""
    kappa_sq = np.asarray(kappa_sq, dtype=float)
    if np.any(kappa_sq < 0):
        raise ValueError("kappa^2 must be non-negative")
    one = grid.one_particle()
    grad_mu = gradient(mu, one, ramp)
    tensor = (np.asarray(rho) * kappa_sq) * _outer(grad_mu, grad_mu)
    moved = np.moveaxis(tensor, (0, 1), (-2, -1))
    eigenvalues = np.linalg.eigvalsh(moved)
    return PressureReport(tensor, eigenvalues, float(np.min(eigenvalues)), float(np.max(np.abs(tensor))))


def lagrangian(fields: HydroFields, rates: FieldRates, E_qm: float, E_P: complex) -> float:
    """-m int rho (varphi' + lambda mu') - m/2 int rho (u^2 + kappa^2 |grad mu|^2) - E_qm - Re E_P"""
    one = fields.grid
    m = fields.mass
    grad_mu = gradient(fields.mu, one)
    transport = fields.rho * (rates.varphi + fields.lam * rates.mu)
    kinetic = fields.rho * (np.sum(fields.u**2, axis=0) + fields.kappa_sq * np.sum(grad_mu**2, axis=0))
    keep = ~fields.mask
    integral = float(np.sum((m * transport + 0.5 * m * kinetic)[keep])) * one.cell_volume
    return -integral - E_qm - complex(E_P).real


def wave_lagrangian(
    before: WaveFunction,
    state: WaveFunction,
    after: WaveFunction,
    kernels: KernelSet,
    spacing: float,
    memory: np.ndarray | None = None,
    zeta: np.ndarray | None = None,
    sign_h: float = -1.0,
) -> float:
    """Re <a| i d/dt a + s_H H a - M + zeta>, with d/dt a centered over before and after."""
    grid = kernels.grid
    if not before.grid == state.grid == after.grid == grid:
        raise GridMismatchError("wave functions and kernels")
    a = spectral_values(state)
    rate = (spectral_values(after) - spectral_values(before)) / (2.0 * spacing)
    k = np.zeros(grid.shape, dtype=complex)
    if memory is not None:
        k = k + memory
    if zeta is not None:
        k = k - zeta
    return _inner(a, 1j * rate + sign_h * kernels.H * a - k, grid).real
