"""Periodic configuration-space lattice for N particles in d dimensions.

Axis layout of every configuration-space array: particle j, dimension a is
axis ``j * d + a``. Spectral values are kept in FFT order and scaled like the
continuous transform, ``a_hat = h^n (2 pi)^(-n/2) DFT(a)`` with ``n = N d``,
so that the spectral norm ``sum |a_hat|^2 dk^n`` equals the position norm
``sum |a|^2 h^n``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from logging import Logger

import numpy as np
import scipy.fft

from coarse_hydro.error import GridError, GridMismatchError, RepresentationError
from coarse_hydro.state import Representation
from coarse_hydro.util import get_logger

DEFAULT_MEMORY_BUDGET = 1 << 24
"""Default cap on the number of configuration-space points, M^(N d)"""


class Grid:
    """Periodic cubic lattice of M points per axis on a box of length L, for N particles in d dimensions."""

    def __init__(self, box_length: float, points_per_dim: int, dims: int, particles: int):
        self._box_length = float(box_length)
        self._points_per_dim = int(points_per_dim)
        self._dims = int(dims)
        self._particles = int(particles)
        n = np.arange(self._points_per_dim) - self._points_per_dim // 2
        self._wavenumbers = 2.0 * np.pi * n / self._box_length
        self._fft_wavenumbers = 2.0 * np.pi * np.fft.fftfreq(self._points_per_dim, d=self.spacing)
        self._coordinates = -0.5 * self._box_length + self.spacing * np.arange(self._points_per_dim)

    def __repr__(self) -> str:
        return (
            f"Grid(box_length={self._box_length}, points_per_dim={self._points_per_dim}, "
            f"dims={self._dims}, particles={self._particles})"
        )

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Grid):
            return NotImplemented
        return self._key() == other._key()

    def __hash__(self) -> int:
        return hash(self._key())

    def _key(self) -> tuple:
        return (self._box_length, self._points_per_dim, self._dims, self._particles)

    @property
    def box_length(self) -> float:
        return self._box_length

    @property
    def points_per_dim(self) -> int:
        return self._points_per_dim

    @property
    def dims(self) -> int:
        return self._dims

    @property
    def particles(self) -> int:
        return self._particles

    @property
    def spacing(self) -> float:
        """Lattice spacing h = L / M"""
        return self._box_length / self._points_per_dim

    @property
    def dk(self) -> float:
        """Wavenumber spacing 2 pi / L"""
        return 2.0 * np.pi / self._box_length

    @property
    def ndim(self) -> int:
        """Rank of configuration-space arrays, N d"""
        return self._particles * self._dims

    @property
    def shape(self) -> tuple[int, ...]:
        return (self._points_per_dim,) * self.ndim

    @property
    def size(self) -> int:
        return self._points_per_dim**self.ndim

    @property
    def cell_volume(self) -> float:
        """Configuration-space quadrature weight h^(N d)"""
        return self.spacing**self.ndim

    @property
    def spectral_cell_volume(self) -> float:
        """Spectral quadrature weight (2 pi / L)^(N d)"""
        return self.dk**self.ndim

    @property
    def wavenumbers(self) -> np.ndarray:
        """Per-axis wavenumbers 2 pi n / L for n = -M/2 ... M/2 - 1, in increasing order"""
        return self._wavenumbers.copy()

    @property
    def fft_wavenumbers(self) -> np.ndarray:
        """Per-axis wavenumbers in FFT order"""
        return self._fft_wavenumbers.copy()

    @property
    def coordinates(self) -> np.ndarray:
        """Per-axis sample positions -L/2 + j h; x = 0 is the sample j = M/2"""
        return self._coordinates.copy()

    def one_particle(self) -> Grid:
        """The single-particle lattice in the same box."""
        return Grid(self._box_length, self._points_per_dim, self._dims, 1)

    def particle_axes(self, particle: int) -> tuple[int, ...]:
        """Configuration-space axes belonging to the given particle (0-based)."""
        return tuple(range(particle * self._dims, (particle + 1) * self._dims))

    def _broadcast(self, values: np.ndarray, axis: int) -> np.ndarray:
        shape = [1] * self.ndim
        shape[axis] = self._points_per_dim
        return values.reshape(shape)

    def axis_coordinates(self, axis: int) -> np.ndarray:
        """Sample positions along one axis, broadcastable against configuration arrays."""
        return self._broadcast(self._coordinates, axis)

    def axis_wavenumbers(self, axis: int) -> np.ndarray:
        """FFT-ordered wavenumbers along one axis, broadcastable against spectral arrays."""
        return self._broadcast(self._fft_wavenumbers, axis)

    def k_squared(self) -> np.ndarray:
        """Sum over particles and dimensions of k^2, on the full spectral lattice."""
        ksq = np.zeros(self.shape)
        for axis in range(self.ndim):
            ksq = ksq + self.axis_wavenumbers(axis) ** 2
        return ksq

    def particle_k_squared(self, particle: int) -> np.ndarray:
        """|k_j|^2 of a single particle on the full spectral lattice (broadcast shape)."""
        ksq = np.zeros([1] * self.ndim)
        for axis in self.particle_axes(particle):
            ksq = ksq + self.axis_wavenumbers(axis) ** 2
        return ksq

    def transform_scale(self) -> float:
        """Factor between DFT output and continuous-transform spectral values."""
        return self.cell_volume / (2.0 * np.pi) ** (0.5 * self.ndim)


def make_grid(
    box_length: float,
    points_per_dim: int,
    dims: int,
    particles: int,
    memory_budget: int = DEFAULT_MEMORY_BUDGET,
    logger: Logger | None = None,
) -> Grid:
    """Creates a validated lattice.

    Arguments:
    * box_length: box length L per dimension, e.g. 20.0
    * points_per_dim: lattice points M per axis, a power of two
    * dims: spatial dimension d in {1, 2, 3}
    * particles: particle number N in {1, 2, 3}
    * memory_budget: maximum number of configuration points M^(N d)

    Returns:
    * grid: Grid instance
    """
    if not box_length > 0:
        raise GridError(f"box length must be positive, got {box_length}")
    if points_per_dim < 2 or points_per_dim & (points_per_dim - 1):
        raise GridError(f"points per dimension must be a power of two, got {points_per_dim}")
    if dims not in (1, 2, 3):
        raise GridError(f"dimension must be 1, 2 or 3, got {dims}")
    if particles not in (1, 2, 3):
        raise GridError(f"particle number must be 1, 2 or 3, got {particles}")
    size = points_per_dim ** (dims * particles)
    if size > memory_budget:
        raise GridError(f"budget exceeded, {points_per_dim}^{dims * particles} = {size} > {memory_budget} points")
    if dims * particles > 3:
        get_logger(logger).warning("[grid] configuration space of rank %i (d*N > 3)", dims * particles)
    return Grid(box_length, points_per_dim, dims, particles)


@dataclass(frozen=True)
class WaveFunction:
    """Complex amplitude over N-particle configuration space."""

    grid: Grid
    values: np.ndarray
    representation: Representation = Representation.position
    time: float = 0.0

    def __post_init__(self):
        values = np.asarray(self.values, dtype=complex)
        if values.shape != self.grid.shape:
            raise GridMismatchError(f"values {values.shape} and grid {self.grid.shape}")
        object.__setattr__(self, "values", values)

    def with_values(self, values: np.ndarray, representation: Representation | None = None, time: float | None = None):
        return replace(
            self,
            values=values,
            representation=self.representation if representation is None else representation,
            time=self.time if time is None else time,
        )

    def norm_sq(self) -> float:
        """Squared norm with the quadrature weight of the current representation."""
        weight = (
            self.grid.cell_volume if self.representation == Representation.position else self.grid.spectral_cell_volume
        )
        return float(np.sum(np.abs(self.values) ** 2) * weight)

    def norm(self) -> float:
        return math.sqrt(self.norm_sq())


@dataclass(frozen=True)
class OmegaTable:
    """Free dispersion omega(k_1..k_N) = sum_j |k_j|^2 / 2m, FFT ordered."""

    grid: Grid
    mass: float
    values: np.ndarray = field(repr=False)


def to_spectral(w: WaveFunction, workers: int = 1) -> WaveFunction:
    if w.representation != Representation.position:
        raise RepresentationError("position", w.representation.name)
    values = scipy.fft.fftn(w.values, workers=workers) * w.grid.transform_scale()
    return w.with_values(values, Representation.spectral)


def to_position(w: WaveFunction, workers: int = 1) -> WaveFunction:
    if w.representation != Representation.spectral:
        raise RepresentationError("spectral", w.representation.name)
    values = scipy.fft.ifftn(w.values / w.grid.transform_scale(), workers=workers)
    return w.with_values(values, Representation.position)


def spectral_values(w: WaveFunction, workers: int = 1) -> np.ndarray:
    """Spectral values of w whatever its representation."""
    return w.values if w.representation == Representation.spectral else to_spectral(w, workers).values


def position_values(w: WaveFunction, workers: int = 1) -> np.ndarray:
    """Position values of w whatever its representation."""
    return w.values if w.representation == Representation.position else to_position(w, workers).values


def dispersion(grid: Grid, m: float) -> OmegaTable:
    """Free non-relativistic dispersion (hbar = 1) on the spectral lattice."""
    if not m > 0:
        raise ValueError(f"mass must be positive, got {m}")
    return OmegaTable(grid, float(m), grid.k_squared() / (2.0 * m))


def _ramp(values: np.ndarray, grid: Grid, axis: int) -> np.ndarray:
    """Per-line slope of the linear part of a field along an axis.

    The closing step from the last sample back to the first period is
    extrapolated from the two end steps, so linear fields are recovered exactly.
    """
    m = grid.points_per_dim
    first = np.take(values, 0, axis=axis)
    second = np.take(values, 1, axis=axis)
    penult = np.take(values, m - 2, axis=axis)
    last = np.take(values, m - 1, axis=axis)
    closing = 0.5 * ((second - first) + (last - penult))
    return np.expand_dims((last - first + closing) / grid.box_length, axis)


def derivative(values: np.ndarray, grid: Grid, axis: int, ramp: bool = False) -> np.ndarray:
    """Spectral first derivative of a real field along one axis.

    Arguments:
    * values: real array with shape grid.shape
    * grid: lattice of the field
    * axis: axis to differentiate along
    * ramp: remove a per-line linear ramp first (for non-periodic, linearly growing fields)
    """
    f = np.asarray(values, dtype=float)
    slope = None
    if ramp:
        slope = _ramp(f, grid, axis)
        f = f - slope * (grid.axis_coordinates(axis) - grid.coordinates[0])
    k = grid.fft_wavenumbers
    k[grid.points_per_dim // 2] = 0.0
    shape = [1] * f.ndim
    shape[axis] = grid.points_per_dim
    df = scipy.fft.ifft(1j * k.reshape(shape) * scipy.fft.fft(f, axis=axis), axis=axis).real
    return df + slope if ramp else df


def gradient(values: np.ndarray, grid: Grid, ramp: bool = False) -> np.ndarray:
    """Spectral gradient over all lattice axes; result has shape (ndim, *grid.shape)."""
    return np.stack([derivative(values, grid, axis, ramp) for axis in range(grid.ndim)])


def divergence(vector: np.ndarray, grid: Grid) -> np.ndarray:
    """Spectral divergence of a (ndim, *grid.shape) vector field."""
    return sum(derivative(vector[axis], grid, axis) for axis in range(grid.ndim))


def laplacian(values: np.ndarray, grid: Grid) -> np.ndarray:
    """Spectral Laplacian of a real field."""
    f = scipy.fft.fftn(np.asarray(values, dtype=float))
    return scipy.fft.ifftn(-grid.k_squared() * f).real


def complex_gradient(values: np.ndarray, grid: Grid, axes: tuple[int, ...] | None = None) -> np.ndarray:
    """Spectral gradient of a complex configuration-space array over the given axes."""
    axes = tuple(range(grid.ndim)) if axes is None else axes
    k = grid.fft_wavenumbers
    k[grid.points_per_dim // 2] = 0.0
    out = []
    for axis in axes:
        shape = [1] * grid.ndim
        shape[axis] = grid.points_per_dim
        out.append(scipy.fft.ifft(1j * k.reshape(shape) * scipy.fft.fft(values, axis=axis), axis=axis))
    return np.stack(out)
