"""Amplitude/phase decomposition and the one-particle fluid fields of an N-particle state.

The phase is stored as S = arg(a) / m so that a = phi exp(i m S). Its pair
structure S = sum_i varphi(x_i) + sum_{i<j} mu(x_i) mu(x_j) is extracted by
alternating least squares, and the reduced moments give the one-particle
density rho, the conditional mean lambda and the conditional variance kappa^2
of the partners' mu.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from logging import Logger

import numpy as np

from coarse_hydro.error import NodeError, RepresentationError
from coarse_hydro.grid import Grid, WaveFunction, complex_gradient, derivative, gradient
from coarse_hydro.state import Representation
from coarse_hydro.util import get_logger

DEFAULT_NODE_EPS = 1e-6
FIT_TOLERANCE = 1e-10
FIT_MAX_ITERATIONS = 200


@dataclass(frozen=True)
class MadelungDecomposition:
    grid: Grid
    amplitude: np.ndarray = field(repr=False)
    phase: np.ndarray = field(repr=False)
    """S = unwrapped arg(a) / m"""
    mass: float
    node_mask: np.ndarray = field(repr=False)


@dataclass(frozen=True)
class PhaseStructure:
    """One-body phases varphi_i and pair factors mu_i, each on the one-particle lattice."""

    varphi: list[np.ndarray] = field(repr=False)
    mu: list[np.ndarray] = field(repr=False)
    fit_residual: float
    """L2 norm of S - sum varphi - sum_{i<j} mu_i mu_j over unmasked points"""
    relative_residual: float
    iterations: int
    converged: bool


@dataclass(frozen=True)
class Moments:
    """rho = rho^(1), rho^(2), rho^(3); higher orders are None when N is too small."""

    grid: Grid
    rho: np.ndarray = field(repr=False)
    rho2: np.ndarray | None = field(default=None, repr=False)
    rho3: np.ndarray | None = field(default=None, repr=False)


@dataclass(frozen=True)
class HydroFields:
    """One-particle fluid fields of a state at one instant."""

    grid: Grid
    """one-particle lattice"""
    mass: float
    particles: int
    time: float
    rho: np.ndarray = field(repr=False)
    rho2: np.ndarray | None = field(repr=False)
    rho3: np.ndarray | None = field(repr=False)
    varphi: np.ndarray = field(repr=False)
    lam: np.ndarray = field(repr=False)
    mu: np.ndarray = field(repr=False)
    kappa_sq: np.ndarray = field(repr=False)
    u: np.ndarray = field(repr=False)
    vorticity: np.ndarray = field(repr=False)
    mask: np.ndarray = field(repr=False)
    """points where rho is too small for the fields to be defined"""
    kappa_clamp: float = 0.0
    """magnitude of the most negative kappa^2 before clamping"""
    fit_residual: float = 0.0
    curl_defect: float = 0.0


def _unwrap(phase: np.ndarray) -> np.ndarray:
    """Lexicographic unwrap: last axis first, then each leading axis through its anchor line."""
    if phase.ndim == 1:
        return np.unwrap(phase)
    inner = np.stack([_unwrap(phase[i]) for i in range(phase.shape[0])])
    anchor_index = (slice(None),) + (0,) * (inner.ndim - 1)
    anchor = inner[anchor_index]
    shift = np.unwrap(anchor) - anchor
    return inner + shift.reshape((-1,) + (1,) * (inner.ndim - 1))


def decompose(w: WaveFunction, m: float, eps_node: float = DEFAULT_NODE_EPS) -> MadelungDecomposition:
    """Splits a position-space state into phi = |a| and S = arg(a) / m."""
    if w.representation != Representation.position:
        raise RepresentationError("position", w.representation.name)
    if not m > 0:
        raise ValueError(f"mass must be positive, got {m}")
    amplitude = np.abs(w.values)
    peak = float(np.max(amplitude))
    if not peak > 0 or not np.isfinite(peak):
        raise NodeError("the state vanishes everywhere")
    phase = _unwrap(np.angle(w.values)) / m
    return MadelungDecomposition(w.grid, amplitude, phase, float(m), amplitude < eps_node * peak)


def recompose(dec: MadelungDecomposition) -> WaveFunction:
    return WaveFunction(dec.grid, dec.amplitude * np.exp(1j * dec.mass * dec.phase))


def _on_axis(values: np.ndarray, axis: int, particles: int) -> np.ndarray:
    shape = [1] * particles
    shape[axis] = values.size
    return values.reshape(shape)


def _other_axes(axis: int, particles: int) -> tuple[int, ...]:
    return tuple(a for a in range(particles) if a != axis)


def _pair_sum(mu: list[np.ndarray], particles: int, skip: int | None = None) -> np.ndarray | float:
    total: np.ndarray | float = 0.0
    for i in range(particles):
        for j in range(i + 1, particles):
            if skip in (i, j):
                continue
            total = total + _on_axis(mu[i], i, particles) * _on_axis(mu[j], j, particles)
    return total


def _model(varphi: list[np.ndarray], mu: list[np.ndarray], particles: int) -> np.ndarray:
    total = sum(_on_axis(v, i, particles) for i, v in enumerate(varphi))
    return total + _pair_sum(mu, particles)


def _initial_pair_factors(s: np.ndarray, particles: int) -> list[np.ndarray]:
    """Leading singular pair of the double-centred (0, 1) slice of S."""
    pair = s.mean(axis=tuple(range(2, particles))) if particles > 2 else s
    centred = pair - pair.mean(axis=0, keepdims=True) - pair.mean(axis=1, keepdims=True) + pair.mean()
    u, sv, vt = np.linalg.svd(centred)
    scale = math.sqrt(sv[0])
    first = scale * u[:, 0]
    second = scale * vt[0]
    return [first, second] + [first.copy() for _ in range(particles - 2)]


def fit_phase_structure(
    S: np.ndarray,
    grid: Grid,
    N: int | None = None,
    mask: np.ndarray | None = None,
    logger: Logger | None = None,
) -> PhaseStructure:
    """Fits S(x_1..x_N) by sum_i varphi_i(x_i) + sum_{i<j} mu_i(x_i) mu_j(x_j).

    Alternating weighted least squares over the varphi_i and the mu_i, with
    masked points excluded. Stops when the relative residual decrease drops
    below 1e-10 or after 200 sweeps; non-convergence is logged, not raised.
    """
    logger = get_logger(logger)
    particles = grid.particles if N is None else N
    if particles not in (1, 2, 3) or particles != grid.particles:
        raise ValueError(f"particle number {particles} does not match the grid ({grid.particles})")
    one_shape = grid.one_particle().shape
    s = np.asarray(S, dtype=float)
    if particles == 1:
        return PhaseStructure([s.copy()], [np.zeros(one_shape)], 0.0, 0.0, 0, True)

    points = grid.points_per_dim**grid.dims
    s = s.reshape((points,) * particles)
    weight = np.ones_like(s) if mask is None else (~np.asarray(mask)).reshape(s.shape).astype(float)
    volume = grid.cell_volume
    s_norm = math.sqrt(float(np.sum(weight * s**2)) * volume)

    varphi = [np.zeros(points) for _ in range(particles)]
    mu = _initial_pair_factors(s, particles)

    def residual() -> float:
        return math.sqrt(float(np.sum(weight * (s - _model(varphi, mu, particles)) ** 2)) * volume)

    previous = residual()
    converged = False
    iterations = 0
    for iterations in range(1, FIT_MAX_ITERATIONS + 1):
        for i in range(particles):
            others = _other_axes(i, particles)
            rest = s - sum(_on_axis(varphi[j], j, particles) for j in others) - _pair_sum(mu, particles)
            count = np.sum(weight, axis=others)
            varphi[i] = np.where(count > 0, np.sum(weight * rest, axis=others) / np.maximum(count, 1e-300), 0.0)
        for i in range(particles):
            others = _other_axes(i, particles)
            partners = sum(_on_axis(mu[j], j, particles) for j in others)
            target = s - sum(_on_axis(v, j, particles) for j, v in enumerate(varphi)) - _pair_sum(mu, particles, i)
            target = np.broadcast_to(target, s.shape)
            partners = np.broadcast_to(partners, s.shape)
            numerator = np.sum(weight * target * partners, axis=others)
            denominator = np.sum(weight * partners**2, axis=others)
            mu[i] = np.where(denominator > 0, numerator / np.where(denominator > 0, denominator, 1.0), 0.0)
        current = residual()
        if current <= 1e-14 * max(s_norm, 1e-300) or previous - current < FIT_TOLERANCE * previous:
            converged = True
            previous = current
            break
        previous = current
    if not converged:
        logger.warning("[fit] phase structure not converged after %i sweeps, residual %.3e", iterations, previous)

    if particles == 2:
        a, b = float(np.linalg.norm(mu[0])), float(np.linalg.norm(mu[1]))
        if a > 0 and b > 0:
            scale = math.sqrt(b / a)
            mu = [mu[0] * scale, mu[1] / scale]
    if np.any(mu[0]) and mu[0][np.argmax(np.abs(mu[0]))] < 0:
        mu = [-v for v in mu]

    logger.debug("[fit] %i sweeps, residual %.3e (relative %.3e)", iterations, previous, previous / max(s_norm, 1e-300))
    return PhaseStructure(
        [v.reshape(one_shape) for v in varphi],
        [v.reshape(one_shape) for v in mu],
        previous,
        previous / s_norm if s_norm > 0 else 0.0,
        iterations,
        converged,
    )


def moment(prob: np.ndarray, grid: Grid, order: int) -> np.ndarray:
    """rho^(order) = N!/(N-order)! * integral of phi^2 over the particles order+1..N."""
    particles = grid.particles
    if order < 1 or order > particles:
        raise ValueError(f"moment order must be within 1..{particles}, got {order}")
    axes = tuple(range(order * grid.dims, grid.ndim))
    factor = math.factorial(particles) / math.factorial(particles - order)
    reduced = np.sum(prob, axis=axes) if axes else np.asarray(prob, dtype=float)
    return factor * reduced * grid.spacing ** (grid.dims * (particles - order))


def moments(prob: np.ndarray, grid: Grid) -> Moments:
    prob = np.asarray(prob, dtype=float)
    if np.any(prob < 0):
        raise ValueError("phi^2 must be non-negative")
    particles = grid.particles
    return Moments(
        grid,
        moment(prob, grid, 1),
        moment(prob, grid, 2) if particles >= 2 else None,
        moment(prob, grid, 3) if particles >= 3 else None,
    )


def partner_mu(fit: PhaseStructure) -> np.ndarray:
    """The mu field of particle 1's partners entering lambda and kappa^2."""
    if len(fit.mu) == 1:
        return np.zeros_like(fit.mu[0])
    return np.mean(fit.mu[1:], axis=0)


def correlation_fields(
    mom: Moments, mu: np.ndarray, mask: np.ndarray | None = None
) -> tuple[np.ndarray, np.ndarray, float]:
    """lambda and kappa^2 from the reduced moments.

    rho lambda = integral rho2(1,2) mu(2) d2,
    rho kappa^2 = integral rho3(1,2,3) mu(2) mu(3) d2 d3 + integral rho2(1,2) mu(2)^2 d2 - rho lambda^2.

    Returns (lambda, kappa^2, clamp), kappa^2 clamped at 0 and clamp the
    magnitude of the most negative value removed. Both fields are 0 on mask.
    """
    grid = mom.grid
    one_shape = grid.one_particle().shape
    rho = mom.rho
    mask = np.zeros(one_shape, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    if np.any((rho <= 0) & ~mask):
        raise NodeError("rho vanishes on unmasked points")
    if mom.rho2 is None:
        return np.zeros(one_shape), np.zeros(one_shape), 0.0

    points = grid.points_per_dim**grid.dims
    cell = grid.spacing**grid.dims
    m = np.asarray(mu, dtype=float).reshape(points)
    rho2 = mom.rho2.reshape(points, points)
    first = (rho2 @ m) * cell
    second = (rho2 @ m**2) * cell
    if mom.rho3 is not None:
        rho3 = mom.rho3.reshape(points, points, points)
        second = second + np.einsum("abc,b,c->a", rho3, m, m) * cell**2
    flat_rho = rho.reshape(points)
    flat_mask = mask.reshape(points)
    safe = np.where(flat_mask, 1.0, flat_rho)
    lam = np.where(flat_mask, 0.0, first / safe)
    raw = np.where(flat_mask, 0.0, second / safe - lam**2)
    clamp = float(max(0.0, -np.min(raw)))
    return lam.reshape(one_shape), np.maximum(raw, 0.0).reshape(one_shape), clamp


def current_velocity(w: WaveFunction, m: float, mask: np.ndarray | None = None) -> np.ndarray:
    """u(x_1) = integral Im(a* grad_1 a) d2..dN / (m integral |a|^2 d2..dN).

    Equal to grad varphi + lambda grad mu for the pair ansatz; evaluated from
    spectral derivatives of a, so unwrapped phases are never differentiated.
    """
    if w.representation != Representation.position:
        raise RepresentationError("position", w.representation.name)
    grid = w.grid
    a = w.values
    grad = complex_gradient(a, grid, grid.particle_axes(0))
    axes = tuple(range(grid.dims + 1, grid.ndim + 1))
    flux = np.imag(np.conj(a)[None] * grad)
    density = np.abs(a) ** 2
    if axes:
        flux = np.sum(flux, axis=axes)
        density = np.sum(density, axis=tuple(axis - 1 for axis in axes))
    if mask is None:
        mask = density <= 0
    safe = np.where(mask, 1.0, density)
    return np.where(mask[None], 0.0, flux / (m * safe[None]))


def _vorticity(grad_lam: np.ndarray, grad_mu: np.ndarray, dims: int) -> np.ndarray:
    if dims == 1:
        return np.zeros(grad_lam.shape[1:])
    if dims == 2:
        return grad_lam[0] * grad_mu[1] - grad_lam[1] * grad_mu[0]
    return np.cross(grad_lam, grad_mu, axis=0)


def _curl(u: np.ndarray, grid: Grid, ramp: bool) -> np.ndarray:
    if grid.dims == 1:
        return np.zeros(u.shape[1:])

    def d(i: int, axis: int) -> np.ndarray:
        return derivative(u[i], grid, axis, ramp)

    if grid.dims == 2:
        return d(1, 0) - d(0, 1)
    return np.stack([d(2, 1) - d(1, 2), d(0, 2) - d(2, 0), d(1, 0) - d(0, 1)])


def velocity_and_vorticity(
    varphi: np.ndarray, lam: np.ndarray, mu: np.ndarray, grid: Grid, ramp: bool = False
) -> tuple[np.ndarray, np.ndarray, float]:
    """u = grad varphi + lambda grad mu and the vorticity grad lambda x grad mu.

    The vorticity is 0 for d = 1, the scalar z component for d = 2 and a vector
    for d = 3. The third result is the sup norm of curl u - vorticity.
    Unwrapped phases wind by 2 pi / m across the box, so hydro_fields passes
    ramp=True.
    """
    one = grid.one_particle()
    grad_mu = gradient(mu, one, ramp)
    u = gradient(varphi, one, ramp) + lam[None] * grad_mu
    vorticity = _vorticity(gradient(lam, one, ramp), grad_mu, one.dims)
    defect = float(np.max(np.abs(_curl(u, one, ramp) - vorticity))) if one.dims > 1 else 0.0
    return u, vorticity, defect


def hydro_fields(
    w: WaveFunction, m: float, eps_node: float = DEFAULT_NODE_EPS, logger: Logger | None = None
) -> HydroFields:
    """Extracts the one-particle fluid fields of a position-space state.

    decompose -> phase fit -> moments -> lambda, kappa^2 -> u from the
    probability current -> vorticity.
    """
    logger = get_logger(logger)
    grid = w.grid
    one = grid.one_particle()
    dec = decompose(w, m, eps_node)
    fit = fit_phase_structure(dec.phase, grid, grid.particles, dec.node_mask, logger)
    mom = moments(dec.amplitude**2, grid)
    mask = mom.rho < eps_node**2 * float(np.max(mom.rho))
    lam, kappa_sq, clamp = correlation_fields(mom, partner_mu(fit), mask)
    u = current_velocity(w, m, mask)
    mu = fit.mu[0]
    _, vorticity, defect = velocity_and_vorticity(fit.varphi[0], lam, mu, grid, ramp=True)
    if clamp > 0:
        logger.debug("[madelung] kappa^2 clamped by %.3e", clamp)
    return HydroFields(
        grid=one,
        mass=float(m),
        particles=grid.particles,
        time=w.time,
        rho=mom.rho,
        rho2=mom.rho2,
        rho3=mom.rho3,
        varphi=fit.varphi[0],
        lam=lam,
        mu=mu,
        kappa_sq=kappa_sq,
        u=u,
        vorticity=vorticity,
        mask=mask,
        kappa_clamp=clamp,
        fit_residual=fit.fit_residual,
        curl_defect=defect,
    )
