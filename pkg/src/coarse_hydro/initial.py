"""Unsmeared initial states built from an initial_state configuration section."""

from __future__ import annotations

from logging import Logger

import numpy as np

from coarse_hydro.config import InitialStateConfig, PacketConfig
from coarse_hydro.error import ConfigError, GridMismatchError
from coarse_hydro.grid import Grid, WaveFunction
from coarse_hydro.output import read_array
from coarse_hydro.state import InitialStateKind
from coarse_hydro.util import get_logger


def _one_particle_axes(grid: Grid) -> list[np.ndarray]:
    one = grid.one_particle()
    return [one.axis_coordinates(axis) for axis in range(one.ndim)]


def gaussian_packet(
    grid: Grid,
    center: tuple[float, ...],
    width: float,
    momentum: tuple[float, ...],
    order: int = 0,
) -> np.ndarray:
    """One-particle packet exp(-|x - c|^2 / 4 width^2 + i p.x), times (x_1 - c_1) / width for order 1.

    Distances are taken periodically so the packet is centered anywhere in the box.
    """
    one = grid.one_particle()
    r2 = 0.0
    phase = 0.0
    first = None
    for axis, x in enumerate(_one_particle_axes(grid)):
        d = np.mod(x - center[axis] + 0.5 * one.box_length, one.box_length) - 0.5 * one.box_length
        r2 = r2 + d**2
        phase = phase + momentum[axis] * x
        if first is None:
            first = d
    values = np.exp(-r2 / (4.0 * width**2) + 1j * phase)
    if order == 1:
        values = values * first / width
    return np.broadcast_to(values, one.shape).astype(complex)


def plane_wave(grid: Grid, mode: tuple[int, ...]) -> np.ndarray:
    """exp(i k.x) with k = mode * dk, periodic on the box."""
    one = grid.one_particle()
    phase = sum(n * one.dk * x for n, x in zip(mode, _one_particle_axes(grid)))
    return np.broadcast_to(np.exp(1j * phase), one.shape).astype(complex)


def _packet(grid: Grid, packet: PacketConfig) -> np.ndarray:
    return gaussian_packet(grid, packet.center, packet.width, packet.momentum, packet.order)


def symmetric_product(one: np.ndarray, grid: Grid) -> np.ndarray:
    """psi(x_1) ... psi(x_N) on the configuration lattice."""
    values = np.ones([1] * grid.ndim, dtype=complex)
    for particle in range(grid.particles):
        shape = [1] * grid.ndim
        for axis in grid.particle_axes(particle):
            shape[axis] = grid.points_per_dim
        values = values * one.reshape(shape)
    return np.broadcast_to(values, grid.shape).copy()


def normalize(grid: Grid, values: np.ndarray) -> WaveFunction:
    w = WaveFunction(grid, values)
    norm = w.norm()
    if norm == 0:
        raise ConfigError("initial_state", "state vanishes on the lattice")
    return w.with_values(values / norm)


def build_initial_state(config: InitialStateConfig, grid: Grid, logger: Logger | None = None) -> WaveFunction:
    """Returns the unit-norm unsmeared initial state a(1..N; 0).

    Arguments:
    * config: initial_state section of a RunConfig
    * grid: configuration lattice

    Returns:
    * w: position-space WaveFunction at t = 0
    """
    logger = get_logger(logger)
    kind = config.kind
    if kind == InitialStateKind.file:
        values = read_array(config.path)
        if values.shape != grid.shape:
            raise GridMismatchError(f"state file {values.shape} and grid {grid.shape}")
        logger.info("[initial] loaded %s", config.path)
        return normalize(grid, values.astype(complex))
    if kind == InitialStateKind.gaussian_packet:
        one = _packet(grid, config.packet)
    elif kind == InitialStateKind.plane_wave:
        one = plane_wave(grid, config.mode)
    else:
        one = sum(c.weight * _packet(grid, c) for c in config.components)
    logger.info("[initial] %s state for %i particle(s)", kind.name, grid.particles)
    return normalize(grid, symmetric_product(np.asarray(one), grid))
