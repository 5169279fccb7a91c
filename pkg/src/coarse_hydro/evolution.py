"""Per-mode integration of the projected evolution equation.

Every spectral point k evolves independently under

    d/dt a(k, t) = i s_H H(k) a(k, t) - i zeta(k, t) - M(k, t),
    M(k, t) = integral_0^t G(k, tau) a(k, t - tau) dtau,

with H, G and the fluctuation kernel F taken from a KernelSet. The memory
integral uses product-trapezoid weights; since G(k, tau) = g(k) exp(-i omega tau)
its discrete sum obeys a one-step recursion, so the full history enters
without being stored.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from logging import Logger

import numpy as np

from coarse_hydro.error import DivergenceError, GridMismatchError, HistoryError, StabilityError
from coarse_hydro.grid import Grid, WaveFunction, dispersion, spectral_values, to_position
from coarse_hydro.projector import KernelSet, coarse_grain
from coarse_hydro.state import FluctuationMode, Representation
from coarse_hydro.util import get_logger, parallel_map

STABILITY_LIMIT = 0.5
"""Upper bound on dt * max(H)"""

PRECONDITION_TOLERANCE = 1e-10

_SERIES_RADIUS = 1e-2


@dataclass(frozen=True)
class FluctuationSource:
    """Unsmeared initial state a(1..N; 0) driving the fluctuation term."""

    initial_full: WaveFunction
    mode: FluctuationMode = FluctuationMode.deterministic
    seed: int = 0
    irrelevant_amplitude: float = 0.0
    threshold: float = 0.5
    """Ensemble components are drawn only where 1 - P exceeds this value"""
    sign: float = 1.0
    """Global sign s_zeta of the fluctuation term"""

    @property
    def grid(self) -> Grid:
        return self.initial_full.grid

    def drive(self, kernels: KernelSet, workers: int = 1) -> np.ndarray:
        """Spectral values of the unsmeared state entering zeta.

        Ensemble mode adds seeded zero-mean complex Gaussian components on the
        modes the projector suppresses; equal seeds give identical draws.
        """
        if self.grid != kernels.grid:
            raise GridMismatchError("fluctuation source and kernels")
        values = np.array(spectral_values(self.initial_full, workers))
        if self.mode == FluctuationMode.ensemble and self.irrelevant_amplitude > 0:
            rng = np.random.default_rng(self.seed)
            shape = values.shape
            noise = (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / math.sqrt(2.0)
            values = values + np.where(kernels.symbol.complement > self.threshold, self.irrelevant_amplitude * noise, 0)
        return values


@dataclass
class Trajectory:
    """Spectral snapshots of an integration run at a fixed stride.

    spectra[i] and memory[i] hold a(k, times[i]) and the memory integral
    M(k, times[i]); memory is None for externally assembled histories.
    """

    grid: Grid
    dt: float
    stride: int
    times: np.ndarray
    spectra: np.ndarray = field(repr=False)
    memory: np.ndarray | None = field(default=None, repr=False)
    history_depth: int = 0
    """Integration steps entering the memory integral of the last snapshot"""

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        if len(self.times) != len(self.spectra):
            raise ValueError(f"{len(self.times)} times but {len(self.spectra)} snapshots")
        if self.spectra.shape[1:] != self.grid.shape:
            raise GridMismatchError(f"snapshots {self.spectra.shape[1:]} and grid {self.grid.shape}")
        if len(self.times) > 1:
            steps = np.diff(self.times)
            if np.any(steps <= 0) or not np.allclose(steps, self.spacing, rtol=1e-9, atol=0):
                raise ValueError("snapshot times must be strictly increasing with uniform spacing")

    def __len__(self) -> int:
        return len(self.times)

    @property
    def spacing(self) -> float:
        """Time between consecutive snapshots"""
        return self.dt * self.stride

    def state(self, index: int) -> WaveFunction:
        return WaveFunction(self.grid, self.spectra[index], Representation.spectral, float(self.times[index]))

    @property
    def states(self) -> list[WaveFunction]:
        return [self.state(i) for i in range(len(self))]

    @property
    def final(self) -> WaveFunction:
        return self.state(len(self) - 1)

    def index_of(self, t: float) -> int:
        """Snapshot index of time t; raises HistoryError if t is not covered."""
        covered = float(self.times[-1])
        if t < -1e-12 or t > covered + 1e-9 * max(self.spacing, 1.0):
            raise HistoryError(t, covered)
        index = int(round((t - self.times[0]) / self.spacing))
        if abs(self.times[index] - t) > 1e-9 * max(self.spacing, 1.0):
            raise HistoryError(t, covered)
        return index

    def window(self, start: int, stop: int) -> Trajectory:
        """Consecutive snapshots start..stop-1 as a trajectory of their own."""
        return Trajectory(
            self.grid,
            self.dt,
            self.stride,
            self.times[start:stop],
            self.spectra[start:stop],
            None if self.memory is None else self.memory[start:stop],
            self.history_depth,
        )


def product_weights(omega: np.ndarray, dt: float) -> tuple[np.ndarray, np.ndarray]:
    """Product-trapezoid weights of integral_0^dt e^(-i omega s) a(s) ds with a linear in s.

    Returns (A, B), the weights of a(0) and a(dt): with z = -i omega dt,
    A = dt (phi1(z) - psi(z)), B = dt psi(z), phi1 = (e^z - 1)/z, psi = (e^z (z - 1) + 1)/z^2.
    """
    z = -1j * np.asarray(omega, dtype=float) * dt
    small = np.abs(z) < _SERIES_RADIUS
    zs = np.where(small, 1.0, z)
    ez = np.exp(zs)
    phi1 = (ez - 1.0) / zs
    psi = (ez * (zs - 1.0) + 1.0) / zs**2
    # Taylor series near z = 0: phi1 = sum z^n/(n+1)!, psi = sum z^n/(n! (n+2))
    phi1_series = np.zeros_like(z)
    psi_series = np.zeros_like(z)
    term = np.ones_like(z)
    for n in range(8):
        phi1_series += term / (n + 1)
        psi_series += term / (n + 2)
        term = term * z / (n + 1)
    phi1 = np.where(small, phi1_series, phi1)
    psi = np.where(small, psi_series, psi)
    return dt * (phi1 - psi), dt * psi


def schrodinger_reference(w0: WaveFunction, m: float, t: float, workers: int = 1) -> WaveFunction:
    """Exact free propagation a(k, t) = a(k, 0) exp(-i omega(k) t).

    The result keeps the representation of w0.
    """
    if t < 0:
        raise ValueError(f"time must be non-negative, got {t}")
    omega = dispersion(w0.grid, m)
    evolved = w0.with_values(
        spectral_values(w0, workers) * np.exp(-1j * omega.values * t), Representation.spectral, w0.time + t
    )
    if w0.representation == Representation.position:
        return to_position(evolved, workers)
    return evolved


def fluctuation_term(src: FluctuationSource, kernels: KernelSet, t: float, workers: int = 1) -> WaveFunction:
    """zeta(k, t) = s_zeta F(k, t) a_full(k, 0), spectral."""
    if t < 0:
        raise ValueError(f"time must be non-negative, got {t}")
    values = src.sign * kernels.F(t) * src.drive(kernels, workers)
    return WaveFunction(kernels.grid, values, Representation.spectral, t)


def memory_increment(history: Trajectory, kernels: KernelSet, t: float, dt: float) -> WaveFunction:
    """Product-trapezoid quadrature of integral_0^t G(k, tau) a(k, t - tau) dtau from the stored history.

    The history must be sampled at spacing dt from time 0; the sum runs over
    the complete history, with a interpolated linearly between samples.
    """
    if history.grid != kernels.grid:
        raise GridMismatchError("history and kernels")
    if not math.isclose(history.spacing, dt, rel_tol=1e-9):
        raise ValueError(f"history spacing {history.spacing:.6g} differs from dt={dt:.6g}")
    if abs(history.times[0]) > 1e-12:
        raise HistoryError(t, float(history.times[-1]))
    n = history.index_of(t)
    total = np.zeros(kernels.grid.shape, dtype=complex)
    if n == 0:
        return WaveFunction(kernels.grid, total, Representation.spectral, t)
    weight_a, weight_b = product_weights(kernels.omega.values, dt)
    phase = np.ones(kernels.grid.shape, dtype=complex)
    step = kernels.phase(dt)
    for j in range(n):
        total += phase * (weight_a * history.spectra[n - j] + weight_b * history.spectra[n - j - 1])
        phase = phase * step
    return WaveFunction(kernels.grid, kernels.g_amplitude * total, Representation.spectral, t)


@dataclass(frozen=True)
class _StepTables:
    """Flattened per-mode constants of one integration step."""

    e_lambda: np.ndarray
    e_omega: np.ndarray
    omega: np.ndarray
    g_a: np.ndarray
    g_b: np.ndarray
    zeta0: np.ndarray


def _integrate_chunk(
    index: np.ndarray,
    a0: np.ndarray,
    tables: _StepTables,
    dt: float,
    steps: int,
    stride: int,
    logger: Logger | None,
) -> tuple[np.ndarray, np.ndarray]:
    e_lambda = tables.e_lambda[index]
    e_omega = tables.e_omega[index]
    omega = tables.omega[index]
    g_a = tables.g_a[index]
    g_b = tables.g_b[index]
    zeta0 = tables.zeta0[index]
    half = 0.5 * dt
    denominator = 1.0 + half * g_a

    a = a0[index].copy()
    mem = np.zeros_like(a)
    rate = -1j * zeta0 - mem
    snapshots = [a.copy()]
    memories = [mem.copy()]
    report = max(steps // 10, 1)
    for n in range(steps):
        zeta_next = zeta0 * np.exp(-1j * omega * (n + 1) * dt)
        a_next = (e_lambda * a + half * (e_lambda * rate - 1j * zeta_next - e_omega * mem - g_b * a)) / denominator
        mem = e_omega * mem + g_a * a_next + g_b * a
        a = a_next
        rate = -1j * zeta_next - mem
        if not (np.all(np.isfinite(a)) and np.all(np.isfinite(mem))):
            raise DivergenceError(n + 1, (n + 1) * dt)
        if (n + 1) % stride == 0:
            snapshots.append(a.copy())
            memories.append(mem.copy())
        if logger is not None and (n + 1) % report == 0:
            logger.debug("[evolve] step %i/%i", n + 1, steps)
    return np.stack(snapshots), np.stack(memories)


def evolve_zwanzig(
    w0: WaveFunction,
    src: FluctuationSource,
    kernels: KernelSet,
    dt: float,
    T: float,
    stride: int = 1,
    sign_h: float = -1.0,
    workers: int = 1,
    logger: Logger | None = None,
) -> Trajectory:
    """Integrates the projected equation from w0 up to time T.

    Arguments:
    * w0: coarse-grained initial state, equal to coarse_grain(src.initial_full)
    * src: fluctuation source
    * kernels: kernel tables at the run's averaging length
    * dt: time step, with dt * max(H) <= 0.5
    * T: final time, a multiple of dt
    * stride: steps between stored snapshots, must divide T / dt
    * sign_h: coefficient of the H term on the left of i d/dt a = ...; -1 gives exp(-i omega t) at l_av = 0
    * workers: number of threads the spectral points are partitioned across

    Returns:
    * trajectory: spectral snapshots, memory integrals and times
    """
    logger = get_logger(logger)
    grid = kernels.grid
    if w0.grid != grid or src.grid != grid:
        raise GridMismatchError("initial state, fluctuation source and kernels")
    if not dt > 0:
        raise ValueError(f"time step must be positive, got {dt}")
    if T < 0:
        raise ValueError(f"final time must be non-negative, got {T}")
    h_max = float(np.max(kernels.H))
    if dt * h_max > STABILITY_LIMIT:
        raise StabilityError(dt, h_max)
    steps = int(round(T / dt))
    if not math.isclose(steps * dt, T, rel_tol=1e-9, abs_tol=1e-12):
        raise ValueError(f"final time {T} is not a multiple of dt={dt}")
    if stride < 1 or (steps and steps % stride):
        raise ValueError(f"snapshot stride {stride} does not divide {steps} steps")

    a0 = spectral_values(w0, workers)
    expected = spectral_values(coarse_grain(src.initial_full, kernels.symbol, workers), workers)
    scale = max(float(np.linalg.norm(a0)), np.finfo(float).tiny)
    if np.linalg.norm(expected - a0) > PRECONDITION_TOLERANCE * scale:
        raise ValueError("initial state is not the coarse-grained initial state of the fluctuation source")

    weight_a, weight_b = product_weights(kernels.omega.values, dt)
    tables = _StepTables(
        e_lambda=np.exp(1j * sign_h * kernels.H * dt).ravel(),
        e_omega=kernels.phase(dt).ravel(),
        omega=kernels.omega.values.ravel(),
        g_a=(kernels.g_amplitude * weight_a).ravel(),
        g_b=(kernels.g_amplitude * weight_b).ravel(),
        zeta0=(src.sign * kernels.f_amplitude * src.drive(kernels, workers)).ravel(),
    )
    chunks = [c for c in np.array_split(np.arange(grid.size), max(workers, 1)) if len(c)]
    logger.info(
        "[evolve] l_av=%g dt=%g T=%g steps=%i stride=%i chunks=%i", kernels.l_av, dt, T, steps, stride, len(chunks)
    )
    a0_flat = np.asarray(a0).ravel()
    results = parallel_map(
        lambda item: _integrate_chunk(item[1], a0_flat, tables, dt, steps, stride, logger if item[0] == 0 else None),
        list(enumerate(chunks)),
        workers,
    )
    snapshots = steps // stride + 1
    spectra = np.empty((snapshots, grid.size), dtype=complex)
    memory = np.empty((snapshots, grid.size), dtype=complex)
    for chunk, (values, mem) in zip(chunks, results):
        spectra[:, chunk] = values
        memory[:, chunk] = mem
    times = w0.time + dt * stride * np.arange(snapshots)
    trajectory = Trajectory(
        grid,
        dt,
        stride,
        times,
        spectra.reshape((snapshots, *grid.shape)),
        memory.reshape((snapshots, *grid.shape)),
        steps + 1,
    )
    drift = norm_history(trajectory)
    logger.info("[evolve] done, norm ratio at T: %.12f", drift[-1])
    return trajectory


def norm_history(trajectory: Trajectory) -> np.ndarray:
    """||a(t)|| / ||a(0)|| for every snapshot."""
    norms = np.sqrt(np.sum(np.abs(trajectory.spectra) ** 2, axis=tuple(range(1, trajectory.spectra.ndim))))
    if norms[0] == 0:
        return np.ones_like(norms)
    return norms / norms[0]
