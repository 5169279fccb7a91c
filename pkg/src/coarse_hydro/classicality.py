"""Classicality conditions on the averaging length.

* stationarity in l: the fluid fields and the energy stop changing with l
* absence of nodal regions in the coarse-grained state
* the quantum force stays below the coarse-graining force
* scale separation l_av << l_obs

plus the temperature assigned to an averaging length and the combined verdict.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from logging import Logger
from typing import Sequence

import numpy as np
import scipy.constants
import scipy.fft
import scipy.ndimage

from coarse_hydro.error import CoarseHydroError, GridMismatchError
from coarse_hydro.evolution import FluctuationSource, Trajectory, evolve_zwanzig, norm_history
from coarse_hydro.grid import Grid, WaveFunction, position_values, to_position
from coarse_hydro.hydro import (
    CoarseEnergyFunctional,
    EnergyDerivatives,
    coarse_energy,
    energy_derivatives,
    force_bracket,
    quantum_energy,
)
from coarse_hydro.madelung import DEFAULT_NODE_EPS, HydroFields, hydro_fields
from coarse_hydro.projector import DEFAULT_EXPONENT_FACTOR, ProjectorSymbol, build_kernels, coarse_grain
from coarse_hydro.state import BoundNorm, PrefactorMode, UnitMode
from coarse_hydro.util import get_logger, parallel_map

DEFAULT_TOLERANCE = 1e-3
DEFAULT_RATIO_THRESHOLD = 0.1
SPECTRAL_QUANTILE = 0.95
BOUND_ATOL = 1e-12
DERIVATIVE_ATOL = 1e-9
"""l-derivatives below this count as zero regardless of the field scale"""

SWEEP_FIELDS = ("rho", "varphi", "lam", "mu", "kappa")
_PHASE_FIELDS = ("varphi", "mu")


@dataclass(frozen=True)
class NodalRegions:
    """Connected sets of lattice points where the coarse-grained amplitude nearly vanishes."""

    mask: np.ndarray = field(repr=False)
    labels: np.ndarray = field(repr=False)
    volumes: list[float]

    @property
    def count(self) -> int:
        return len(self.volumes)

    @property
    def empty(self) -> bool:
        return not self.volumes

    def contains(self, index: tuple[int, ...]) -> bool:
        return bool(self.mask[index])


def _periodic_label(mask: np.ndarray) -> tuple[np.ndarray, int]:
    """scipy.ndimage.label with components joined across opposite faces of the box."""
    labels, count = scipy.ndimage.label(mask)
    if count == 0:
        return labels, 0
    parent = list(range(count + 1))

    def find(i: int) -> int:
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for axis in range(mask.ndim):
        first = np.take(labels, 0, axis=axis)
        last = np.take(labels, -1, axis=axis)
        for a, b in zip(first[(first > 0) & (last > 0)], last[(first > 0) & (last > 0)]):
            ra, rb = find(int(a)), find(int(b))
            if ra != rb:
                parent[max(ra, rb)] = min(ra, rb)
    roots = sorted({find(i) for i in range(1, count + 1)})
    relabel = np.zeros(count + 1, dtype=labels.dtype)
    for i in range(1, count + 1):
        relabel[i] = roots.index(find(i)) + 1
    return relabel[labels], len(roots)


def _regions(values: np.ndarray, grid: Grid, eps_node: float) -> NodalRegions:
    amplitude = np.abs(values)
    peak = float(np.max(amplitude))
    mask = amplitude < eps_node * peak if peak > 0 else np.ones(amplitude.shape, dtype=bool)
    labels, count = _periodic_label(mask)
    sizes = np.bincount(labels.ravel(), minlength=count + 1)[1:]
    return NodalRegions(mask, labels, [float(s) * grid.cell_volume for s in sizes])


def nodal_regions(w: WaveFunction, symbol: ProjectorSymbol, eps_node: float = DEFAULT_NODE_EPS) -> NodalRegions:
    """Omega = {x : |P a(x)| < eps_node max |P a|} as connected components."""
    if w.grid != symbol.grid:
        raise GridMismatchError("wave function and projector symbol")
    return _regions(position_values(coarse_grain(w, symbol)), w.grid, eps_node)


def scan_nodes(trajectory: Trajectory, eps_node: float = DEFAULT_NODE_EPS) -> list[NodalRegions]:
    """Nodal regions of every snapshot; the snapshots are taken as already coarse-grained."""
    return [_regions(to_position(s).values, trajectory.grid, eps_node) for s in trajectory.states]


def _snapshot_stride(steps: int, samples: int) -> int:
    """Largest stride dividing steps that still yields at least the requested samples."""
    if steps == 0:
        return 1
    wanted = max(samples - 1, 1)
    for stride in range(max(steps // wanted, 1), 0, -1):
        if steps % stride == 0:
            return stride
    return 1


def _node_free(
    w0: WaveFunction,
    src: FluctuationSource,
    l_av: float,
    horizon: float,
    m: float,
    dt: float,
    eps_node: float,
    stride: int,
    c_p: float,
    sign_h: float,
    workers: int,
    logger: Logger,
) -> bool | None:
    """True when every sampled state is node-free, None when the evolution failed."""
    kernels = build_kernels(w0.grid, l_av, m, c_p)
    try:
        trajectory = evolve_zwanzig(
            coarse_grain(w0, kernels.symbol, workers), src, kernels, dt, horizon, stride, sign_h, workers
        )
    except CoarseHydroError as e:
        logger.warning("[nodes] l=%g skipped: %s", l_av, e)
        return None
    counts = [regions.count for regions in scan_nodes(trajectory, eps_node)]
    logger.debug("[nodes] l=%g regions per sample %s", l_av, counts)
    return not any(counts)


def node_free_map(
    w0: WaveFunction,
    l_grid: Sequence[float],
    horizon: float,
    m: float,
    dt: float,
    eps_node: float = DEFAULT_NODE_EPS,
    samples: int = 3,
    c_p: float = DEFAULT_EXPONENT_FACTOR,
    src: FluctuationSource | None = None,
    sign_h: float = -1.0,
    workers: int = 1,
    logger: Logger | None = None,
) -> dict[float, bool]:
    """Node-freeness over [0, horizon] for every grid l; failed evolutions count as not node-free."""
    logger = get_logger(logger)
    src = FluctuationSource(w0) if src is None else src
    stride = _snapshot_stride(int(round(horizon / dt)), samples)
    return {
        float(l_av): bool(_node_free(w0, src, l_av, horizon, m, dt, eps_node, stride, c_p, sign_h, workers, logger))
        for l_av in sorted(l_grid)
    }


def min_l_no_nodes(
    w0: WaveFunction,
    l_grid: Sequence[float],
    horizon: float,
    m: float,
    dt: float,
    eps_node: float = DEFAULT_NODE_EPS,
    samples: int = 3,
    c_p: float = DEFAULT_EXPONENT_FACTOR,
    src: FluctuationSource | None = None,
    sign_h: float = -1.0,
    workers: int = 1,
    logger: Logger | None = None,
) -> float | None:
    """Smallest grid l whose coarse-grained evolution of w0 stays node-free over [0, horizon].

    Returns None when no grid value qualifies.
    """
    logger = get_logger(logger)
    src = FluctuationSource(w0) if src is None else src
    stride = _snapshot_stride(int(round(horizon / dt)), samples)
    for l_av in sorted(l_grid):
        if _node_free(w0, src, l_av, horizon, m, dt, eps_node, stride, c_p, sign_h, workers, logger):
            return float(l_av)
    return None


@dataclass(frozen=True)
class BoundReport:
    """Quantum force rho grad delta_rho E_qm against the coarse-graining force bracket of E_P."""

    lhs: tuple[float, float]
    """(L2, sup)"""
    rhs: tuple[float, float]
    """(L2, sup)"""

    @property
    def satisfied(self) -> tuple[bool, bool]:
        return tuple(q <= p + BOUND_ATOL for q, p in zip(self.lhs, self.rhs))

    @property
    def margin(self) -> tuple[float, float]:
        """rhs / lhs per norm"""
        return tuple(p / q if q > 0 else math.inf for q, p in zip(self.lhs, self.rhs))

    def holds(self, norm: BoundNorm = BoundNorm.l2) -> bool:
        return self.satisfied[int(norm)]


def _vector_norms(values: np.ndarray, mask: np.ndarray, grid: Grid) -> tuple[float, float]:
    magnitude = np.where(mask, 0.0, np.sqrt(np.sum(values**2, axis=0)))
    return math.sqrt(float(np.sum(magnitude**2)) * grid.cell_volume), float(np.max(magnitude))


def quantum_force_bound(fields: HydroFields, derivatives: EnergyDerivatives) -> BoundReport:
    """Compares |rho grad delta_rho E_qm| with the force bracket applied to E_P, in L2 and sup norm."""
    qm = {name: derivatives.qm[name] for name in SWEEP_FIELDS}
    coarse = {name: derivatives.coarse[name].real for name in SWEEP_FIELDS}
    lhs = force_bracket(fields, qm, fields.mask)
    rhs = force_bracket(fields, coarse, fields.mask)
    return BoundReport(_vector_norms(lhs, fields.mask, fields.grid), _vector_norms(rhs, fields.mask, fields.grid))


def temperature(l_av: float, m: float, unit_mode: UnitMode = UnitMode.natural) -> float:
    """T = hbar^2 / (2 m l_av^2 k_B); infinite at l_av = 0."""
    if l_av < 0:
        raise ValueError(f"averaging length must be non-negative, got {l_av}")
    if not m > 0:
        raise ValueError(f"mass must be positive, got {m}")
    if l_av == 0:
        return math.inf
    if unit_mode == UnitMode.si:
        return scipy.constants.hbar**2 / (2.0 * m * l_av**2 * scipy.constants.k)
    return 1.0 / (2.0 * m * l_av**2)


def observation_length(rho: np.ndarray, grid: Grid, quantile: float = SPECTRAL_QUANTILE) -> float:
    """2 pi / k_q, k_q the smallest |k| below which a fraction quantile of the spectral weight of rho lies."""
    one = grid.one_particle()
    weight = np.abs(scipy.fft.fftn(np.asarray(rho, dtype=float))) ** 2
    total = float(np.sum(weight))
    if total == 0:
        return math.inf
    k = np.sqrt(one.k_squared()).ravel()
    order = np.argsort(k, kind="stable")
    cumulative = np.cumsum(weight.ravel()[order]) / total
    k_q = float(k[order][np.searchsorted(cumulative, quantile - 1e-12)])
    return math.inf if k_q == 0 else 2.0 * math.pi / k_q


@dataclass
class SweepLeg:
    """Result at one averaging length; fields is None when the leg failed."""

    l_av: float
    fields: HydroFields | None = field(default=None, repr=False)
    E_qm: float = math.nan
    E_P: complex = complex(math.nan, math.nan)
    norm_drift: float = math.nan
    density_response: float = math.nan
    """integral rho delta_rho (E_qm + Re E_P)"""
    bound: BoundReport | None = None
    nodes: int = -1
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.error is None

    @property
    def energy(self) -> float:
        return self.E_qm + self.E_P.real

    def row(self) -> dict:
        return {
            "l_av": self.l_av,
            "E_qm": self.E_qm,
            "E_P_real": self.E_P.real,
            "E_P_imag": self.E_P.imag,
            "norm_drift": self.norm_drift,
            "density_response": self.density_response,
            "bound_lhs_l2": self.bound.lhs[0] if self.bound else math.nan,
            "bound_rhs_l2": self.bound.rhs[0] if self.bound else math.nan,
            "nodes": self.nodes,
            "error": self.error or "",
        }


@dataclass
class SweepReport:
    """Per-l results with centered l-derivative norms at the interior grid points."""

    l_grid: np.ndarray
    legs: list[SweepLeg]
    derivatives: dict[str, np.ndarray]
    """norm of d sigma / dl per field, plus 'energy' for |d(E_qm + Re E_P)/dl|"""
    scales: dict[str, float]
    tol: float
    stationary_candidates: list[float]

    @property
    def interior(self) -> np.ndarray:
        return self.l_grid[1:-1]

    def rows(self) -> list[dict]:
        rows = []
        for i, leg in enumerate(self.legs):
            row = leg.row()
            for name, values in self.derivatives.items():
                row[f"d_{name}_dl"] = values[i - 1] if 0 < i < len(self.legs) - 1 else math.nan
            row["stationary"] = leg.l_av in self.stationary_candidates
            rows.append(row)
        return rows


def _field(fields: HydroFields, name: str) -> np.ndarray:
    if name == "kappa":
        return np.sqrt(fields.kappa_sq)
    return getattr(fields, name)


def _gauge_free(values: np.ndarray, mask: np.ndarray) -> np.ndarray:
    keep = ~mask
    return values - (float(np.mean(values[keep])) if np.any(keep) else 0.0)


def _l2(values: np.ndarray, mask: np.ndarray, grid: Grid) -> float:
    return math.sqrt(float(np.sum(values[~mask] ** 2)) * grid.cell_volume)


def _field_scale(legs: list[SweepLeg], name: str) -> float:
    scale = 0.0
    for leg in legs:
        if leg.fields is None:
            continue
        values = _field(leg.fields, name)
        if name in _PHASE_FIELDS:
            values = _gauge_free(values, leg.fields.mask)
        scale = max(scale, _l2(values, leg.fields.mask, leg.fields.grid))
    return scale


def _derivative_tables(l_grid: np.ndarray, legs: list[SweepLeg]) -> dict[str, np.ndarray]:
    tables = {name: np.full(len(legs) - 2, np.nan) for name in (*SWEEP_FIELDS, "energy")}
    for i in range(1, len(legs) - 1):
        before, after = legs[i - 1], legs[i + 1]
        if before.fields is None or after.fields is None:
            continue
        span = float(l_grid[i + 1] - l_grid[i - 1])
        mask = before.fields.mask | after.fields.mask
        for name in SWEEP_FIELDS:
            diff = _field(after.fields, name) - _field(before.fields, name)
            if name in _PHASE_FIELDS:
                period = 2.0 * math.pi / after.fields.mass
                diff = _gauge_free(diff - period * np.round(diff / period), mask)
            tables[name][i - 1] = _l2(diff, mask, after.fields.grid) / span
        tables["energy"][i - 1] = abs(after.energy - before.energy) / span
    return tables


def _within(value: float, tol: float, scale: float) -> bool:
    if math.isinf(tol):
        return not math.isnan(value)
    return value <= tol * scale + DERIVATIVE_ATOL


def find_stationary_l(report: SweepReport, tol: float | None = None) -> list[float]:
    """Interior l values at which every l-derivative is below tol relative to its field scale."""
    tol = report.tol if tol is None else tol
    candidates = []
    for i, l_av in enumerate(report.interior):
        if all(_within(float(report.derivatives[name][i]), tol, report.scales[name]) for name in report.derivatives):
            candidates.append(float(l_av))
    return candidates


def _density_response(
    fields: HydroFields, e_qm_potential: np.ndarray, functional: CoarseEnergyFunctional | None, eps: float
) -> float:
    """integral rho delta_rho E, the E_P part as a derivative along rho -> (1 + s) rho."""
    one = fields.grid
    keep = ~fields.mask
    total = float(np.sum((fields.rho * e_qm_potential)[keep])) * one.cell_volume
    if functional is not None:
        base = functional.base_fields()
        plus, minus = dict(base), dict(base)
        plus["rho"] = base["rho"] * (1.0 + eps)
        minus["rho"] = base["rho"] * (1.0 - eps)
        total += complex(functional(plus) - functional(minus)).real / (2.0 * eps)
    return total


def _run_leg(
    w0: WaveFunction,
    src: FluctuationSource,
    l_av: float,
    t_probe: float,
    m: float,
    dt: float,
    c_p: float,
    sign_h: float,
    eps_node: float,
    prefactor_mode: PrefactorMode,
    gateaux_eps: float,
    bump_width: float,
    with_bound: bool,
    logger: Logger,
) -> SweepLeg:
    leg = SweepLeg(float(l_av))
    try:
        kernels = build_kernels(w0.grid, l_av, m, c_p)
        steps = int(round(t_probe / dt))
        trajectory = evolve_zwanzig(
            coarse_grain(w0, kernels.symbol), src, kernels, dt, t_probe, max(steps, 1), sign_h, logger=logger
        )
        final = to_position(trajectory.final)
        fields = hydro_fields(final, m, eps_node, logger)
        leg.fields = fields
        leg.E_qm, potential = quantum_energy(fields.rho, m, fields.grid, prefactor_mode)
        leg.E_P = coarse_energy(final, kernels, src, final.time, trajectory) if l_av > 0 else 0j
        leg.norm_drift = float(norm_history(trajectory)[-1])
        leg.nodes = _regions(final.values, w0.grid, eps_node).count
        functional = None
        if l_av > 0:
            functional = CoarseEnergyFunctional.from_trajectory(
                trajectory, len(trajectory) - 1, fields, kernels, src
            )
        leg.density_response = _density_response(fields, np.where(fields.mask, 0.0, potential), functional, gateaux_eps)
        if with_bound:
            derivatives = energy_derivatives(fields, prefactor_mode, functional, bump_width, gateaux_eps, logger=logger)
            leg.bound = quantum_force_bound(fields, derivatives)
    except (CoarseHydroError, ValueError) as e:
        leg.error = str(e)
        logger.warning("[sweep] l=%g failed: %s", l_av, e)
    return leg


def sweep_l(
    w0: WaveFunction,
    src: FluctuationSource,
    l_grid: Sequence[float],
    t_probe: float,
    m: float,
    dt: float,
    tol: float = DEFAULT_TOLERANCE,
    c_p: float = DEFAULT_EXPONENT_FACTOR,
    sign_h: float = -1.0,
    eps_node: float = DEFAULT_NODE_EPS,
    prefactor_mode: PrefactorMode = PrefactorMode.standard,
    gateaux_eps: float = 1e-6,
    bump_width: float = 0.0,
    with_bound: bool = True,
    workers: int = 1,
    logger: Logger | None = None,
) -> SweepReport:
    """Coarse-grains w0 at every l, evolves to t_probe and compares the extracted fields across l.

    A failing leg is recorded with its error and the sweep continues. Legs run
    in parallel when workers > 1; the report is ordered by l.
    """
    logger = get_logger(logger)
    l_values = np.asarray(l_grid, dtype=float)
    if len(l_values) < 3:
        raise ValueError(f"l sweep needs at least 3 values, got {len(l_values)}")
    if np.any(l_values <= 0) or np.any(np.diff(l_values) <= 0):
        raise ValueError("l values must be positive and strictly increasing")
    if w0.grid != src.grid:
        raise GridMismatchError("initial state and fluctuation source")
    logger.info("[sweep] %i values of l in [%g, %g], t_probe=%g", len(l_values), l_values[0], l_values[-1], t_probe)
    legs = parallel_map(
        lambda l_av: _run_leg(
            w0,
            src,
            l_av,
            t_probe,
            m,
            dt,
            c_p,
            sign_h,
            eps_node,
            prefactor_mode,
            gateaux_eps,
            bump_width,
            with_bound,
            logger,
        ),
        list(l_values),
        workers,
    )
    derivatives = _derivative_tables(l_values, legs)
    scales = {name: _field_scale(legs, name) for name in SWEEP_FIELDS}
    scales["energy"] = max((abs(leg.energy) for leg in legs if leg.ok), default=0.0)
    report = SweepReport(l_values, legs, derivatives, scales, tol, [])
    report.stationary_candidates = find_stationary_l(report)
    logger.info("[sweep] stationary candidates: %s", report.stationary_candidates or "none")
    return report


def l_variation_balance(report: SweepReport) -> list[dict]:
    """Both sides of d/dl integral rho delta_rho E = dE/dl at the interior l, E = E_qm + Re E_P."""
    rows = []
    for i in range(1, len(report.legs) - 1):
        before, after = report.legs[i - 1], report.legs[i + 1]
        span = float(report.l_grid[i + 1] - report.l_grid[i - 1])
        lhs = (after.density_response - before.density_response) / span
        rhs = (after.energy - before.energy) / span
        rows.append({"l_av": float(report.l_grid[i]), "lhs": lhs, "rhs": rhs, "difference": lhs - rhs})
    return rows


def cell_averaged_quantum_force(
    rho: np.ndarray,
    m: float,
    grid: Grid,
    l: float,
    prefactor_mode: PrefactorMode = PrefactorMode.standard,
    eps_node: float = DEFAULT_NODE_EPS,
) -> float:
    """sup_x |integral over the box cell of width l around x of rho grad delta_rho E_qm|."""
    one = grid.one_particle()
    rho = np.asarray(rho, dtype=float)
    _, q = quantum_energy(rho, m, one, prefactor_mode, eps_node)
    mask = rho < eps_node**2 * float(np.max(rho))
    zero = np.zeros(one.shape)
    derivatives = {name: zero for name in SWEEP_FIELDS}
    derivatives["rho"] = q
    fields = _DensityOnly(one, rho)
    force = force_bracket(fields, derivatives, mask)
    width = min(max(int(round(l / one.spacing)), 1), one.points_per_dim)
    cell = (width * one.spacing) ** one.dims
    averaged = np.stack([scipy.ndimage.uniform_filter(f, size=width, mode="wrap") for f in force])
    return float(np.max(np.sqrt(np.sum(averaged**2, axis=0)))) * cell


@dataclass(frozen=True)
class _DensityOnly:
    """The fields force_bracket reads, for a bare density."""

    grid: Grid
    rho: np.ndarray

    @property
    def kappa_sq(self) -> np.ndarray:
        return np.zeros_like(self.rho)

    @property
    def lam(self) -> np.ndarray:
        return np.zeros_like(self.rho)

    @property
    def mu(self) -> np.ndarray:
        return np.zeros_like(self.rho)

    @property
    def u(self) -> np.ndarray:
        return np.zeros((self.grid.ndim, *self.rho.shape))


@dataclass(frozen=True)
class Verdict:
    stationary_l_exists: bool
    nodes_absent: bool
    bound_satisfied: bool
    scale_separation: bool
    chosen_l: float | None
    temperature: float | None
    rows: list[dict] = field(default_factory=list, repr=False)

    def summary(self) -> dict:
        return {
            "stationary_l_exists": self.stationary_l_exists,
            "nodes_absent": self.nodes_absent,
            "bound_satisfied": self.bound_satisfied,
            "scale_separation": self.scale_separation,
            "chosen_l": self.chosen_l,
            "temperature": self.temperature,
        }


def classicality_verdict(
    sweep: SweepReport,
    node_free: dict[float, bool] | None = None,
    ratio_threshold: float = DEFAULT_RATIO_THRESHOLD,
    bound_norm: BoundNorm = BoundNorm.l2,
    unit_mode: UnitMode = UnitMode.natural,
) -> Verdict:
    """Intersects the four conditions over the swept l values; chosen_l is the smallest l meeting all.

    node_free maps l to the outcome of a node scan; by default the nodal
    count of each leg's final state is used.
    """
    candidates = set(sweep.stationary_candidates)
    rows = []
    for leg in sweep.legs:
        no_nodes = node_free.get(leg.l_av, False) if node_free is not None else leg.nodes == 0
        bound = leg.bound is not None and leg.bound.holds(bound_norm)
        l_obs = observation_length(leg.fields.rho, leg.fields.grid) if leg.fields is not None else math.nan
        separated = leg.ok and leg.l_av / l_obs < ratio_threshold
        rows.append(
            {
                "l_av": leg.l_av,
                "stationary": leg.l_av in candidates,
                "node_free": bool(no_nodes),
                "bound": bool(bound),
                "l_obs": l_obs,
                "separated": bool(separated),
            }
        )
    chosen = [r["l_av"] for r in rows if r["stationary"] and r["node_free"] and r["bound"] and r["separated"]]
    chosen_l = min(chosen) if chosen else None
    mass = next((leg.fields.mass for leg in sweep.legs if leg.fields is not None), None)
    return Verdict(
        stationary_l_exists=bool(candidates),
        nodes_absent=any(r["node_free"] for r in rows),
        bound_satisfied=any(r["bound"] for r in rows),
        scale_separation=any(r["separated"] for r in rows),
        chosen_l=chosen_l,
        temperature=temperature(chosen_l, mass, unit_mode) if chosen_l is not None and mass else None,
        rows=rows,
    )
