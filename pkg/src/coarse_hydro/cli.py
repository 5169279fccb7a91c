import argparse
import logging
import math
import sys
import time
from dataclasses import dataclass
from logging import Logger

import numpy as np

from coarse_hydro.__about__ import __version__
from coarse_hydro.classicality import (
    cell_averaged_quantum_force,
    classicality_verdict,
    l_variation_balance,
    node_free_map,
    observation_length,
    quantum_force_bound,
    sweep_l,
    temperature,
)
from coarse_hydro.config import RunConfig, get_config
from coarse_hydro.error import CoarseHydroError, ConfigError, GridError
from coarse_hydro.evolution import (
    FluctuationSource,
    Trajectory,
    evolve_zwanzig,
    fluctuation_term,
    norm_history,
    schrodinger_reference,
)
from coarse_hydro.grid import Grid, WaveFunction, make_grid, position_values, to_position
from coarse_hydro.hydro import (
    CoarseEnergyFunctional,
    energy_breakdown,
    energy_derivatives,
    eom_residuals,
    lagrangian,
    thermal_pressure,
    wave_lagrangian,
    window_fields,
)
from coarse_hydro.initial import build_initial_state
from coarse_hydro.madelung import hydro_fields
from coarse_hydro.output import RunManifest, write_manifest
from coarse_hydro.projector import KernelSet, build_kernels, coarse_grain, expansion_report
from coarse_hydro.util import LOGGER_NAME, get_logger, getlogger

COMMANDS = ("evolve", "sweep", "diagnose", "kernels")

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_NUMERIC = 2


@dataclass(frozen=True)
class Setup:
    """Lattice, initial state and kernels shared by the run commands."""

    grid: Grid
    initial: WaveFunction
    src: FluctuationSource
    kernels: KernelSet
    workers: int


def _setup(config: RunConfig, logger: Logger) -> Setup:
    g = config.grid
    grid = make_grid(g.box_length, g.points_per_dim, g.dims, g.particles, config.budget.memory, logger)
    initial = build_initial_state(config.initial_state, grid, logger)
    f = config.fluctuation
    src = FluctuationSource(initial, f.mode, f.seed, f.irrelevant_amplitude, f.threshold, config.physics.sign_zeta)
    p = config.physics
    kernels = build_kernels(grid, p.l_av, p.mass, p.c_p)
    return Setup(grid, initial, src, kernels, config.budget.threads)


def _evolve(config: RunConfig, setup: Setup, manifest: RunManifest, logger: Logger) -> Trajectory:
    started = time.perf_counter()
    a0 = coarse_grain(setup.initial, setup.kernels.symbol, setup.workers)
    t = config.time
    trajectory = evolve_zwanzig(
        a0,
        setup.src,
        setup.kernels,
        t.dt,
        t.final,
        t.snapshot_stride,
        config.physics.sign_h,
        setup.workers,
        logger,
    )
    manifest.timed("evolve", started)
    drift = norm_history(trajectory)
    manifest.scalars["snapshots"] = len(trajectory)
    manifest.scalars["norm_drift"] = float(np.max(np.abs(drift - 1.0)))
    if setup.kernels.l_av == 0:
        match = 0.0
        for state in trajectory.states:
            reference = schrodinger_reference(a0, config.physics.mass, state.time - a0.time, setup.workers)
            match = max(match, float(np.max(np.abs(position_values(state) - position_values(reference)))))
        manifest.scalars["schrodinger_match"] = match
        logger.info("[evolve] sup distance to the free propagator: %.3g", match)
    if "cgh1" in config.output.formats:
        manifest.array("snapshots.cgh1", trajectory.spectra)
        manifest.array("times.cgh1", trajectory.times)
    if "csv" in config.output.formats:
        manifest.table("norm.csv", [{"time": t, "norm_ratio": r} for t, r in zip(trajectory.times, drift)])
    return trajectory


def _functional(setup: Setup, trajectory: Trajectory, index: int, fields):
    if setup.kernels.l_av == 0:
        return None
    return CoarseEnergyFunctional.from_trajectory(trajectory, index, fields, setup.kernels, setup.src, setup.workers)


def _window_indices(length: int, count: int) -> list[int]:
    if length < 3:
        return []
    return sorted({int(round(i)) for i in np.linspace(1, length - 2, count)})


def _residuals(config: RunConfig, setup: Setup, trajectory: Trajectory, manifest: RunManifest, logger: Logger):
    started = time.perf_counter()
    d = config.diagnostics
    p = config.physics
    rows = []
    worst: dict[str, float] = {}
    windows = []
    for index in _window_indices(len(trajectory), d.residual_window):
        wf = window_fields(trajectory, p.mass, index, d.eps_node, logger)
        functional = _functional(setup, trajectory, index, wf.center)
        derivatives = energy_derivatives(
            wf.center, p.prefactor_mode, functional, d.bump_width, d.gateaux_eps, setup.workers, logger
        )
        residuals = eom_residuals(wf, derivatives, p.prefactor_mode, p.kappa_reading, logger)
        for name, (l2, sup) in residuals.norms().items():
            rows.append({"time": residuals.time, "residual": name, "l2": l2, "sup": sup})
            worst[name] = max(worst.get(name, 0.0), sup)
        manifest.scalars.setdefault("mask_coverage", []).append(residuals.coverage)
        manifest.scalars.setdefault("derivative_imag_norm", []).append(residuals.imag_norm)
        windows.append((wf, derivatives))
    if not windows:
        logger.warning("[residual] fewer than 3 snapshots, residuals skipped")
    manifest.scalars["residual_sup"] = worst
    if rows and "csv" in config.output.formats:
        manifest.table("residuals.csv", rows)
    manifest.timed("residuals", started)
    return windows


def _dump_fields(config: RunConfig, manifest: RunManifest, fields) -> None:
    if not (config.output.fields and "cgh1" in config.output.formats):
        return
    for name in ("rho", "varphi", "lam", "mu", "kappa_sq", "u", "vorticity"):
        manifest.array(f"field_{name}.cgh1", getattr(fields, name))


def _final_energies(config: RunConfig, setup: Setup, trajectory: Trajectory, manifest: RunManifest, logger: Logger):
    p = config.physics
    final = to_position(trajectory.final, setup.workers)
    fields = hydro_fields(final, p.mass, config.diagnostics.eps_node, logger)
    breakdown = energy_breakdown(final, fields, setup.kernels, setup.src, trajectory, p.prefactor_mode, setup.workers)
    manifest.scalars.update(breakdown.summary())
    manifest.scalars["kappa_clamp"] = fields.kappa_clamp
    manifest.scalars["fit_residual"] = fields.fit_residual
    manifest.scalars["curl_defect"] = fields.curl_defect
    _dump_fields(config, manifest, fields)
    return fields, breakdown


def _manifest(command: str, config: RunConfig, manifest: RunManifest | None) -> RunManifest:
    return manifest if manifest is not None else RunManifest(command, config.to_dict(), config.output.directory)


def run_evolve(config: RunConfig, logger: Logger | None = None, manifest: RunManifest | None = None) -> RunManifest:
    """coarse-grain, evolve, extract the fluid fields and evaluate the residuals."""
    logger = get_logger(logger)
    manifest = _manifest("evolve", config, manifest)
    setup = _setup(config, logger)
    trajectory = _evolve(config, setup, manifest, logger)
    _final_energies(config, setup, trajectory, manifest, logger)
    _residuals(config, setup, trajectory, manifest, logger)
    write_manifest(manifest)
    return manifest


def run_diagnose(config: RunConfig, logger: Logger | None = None, manifest: RunManifest | None = None) -> RunManifest:
    """run_evolve plus thermal pressure, quantum-force bound, Lagrangians and length scales."""
    logger = get_logger(logger)
    manifest = _manifest("diagnose", config, manifest)
    setup = _setup(config, logger)
    p = config.physics
    trajectory = _evolve(config, setup, manifest, logger)
    fields, breakdown = _final_energies(config, setup, trajectory, manifest, logger)
    windows = _residuals(config, setup, trajectory, manifest, logger)

    pressure = thermal_pressure(fields.rho, fields.kappa_sq, fields.mu, fields.grid)
    manifest.scalars["pressure_min_eigenvalue"] = pressure.min_eigenvalue
    manifest.scalars["pressure_scale"] = pressure.scale
    manifest.scalars["pressure_positive"] = pressure.positive

    l_obs = observation_length(fields.rho, fields.grid)
    manifest.scalars["l_obs"] = l_obs
    manifest.scalars["temperature"] = temperature(p.l_av, p.mass, config.sweep.unit_mode)
    if p.l_av > 0:
        manifest.scalars["cell_averaged_quantum_force"] = cell_averaged_quantum_force(
            fields.rho, p.mass, fields.grid, p.l_av, p.prefactor_mode, config.diagnostics.eps_node
        )
    if windows:
        wf, derivatives = windows[len(windows) // 2]
        bound = quantum_force_bound(wf.center, derivatives)
        manifest.scalars["bound_lhs"] = list(bound.lhs)
        manifest.scalars["bound_rhs"] = list(bound.rhs)
        manifest.scalars["bound_satisfied"] = list(bound.satisfied)
        e = energy_breakdown(wf.state, wf.center, setup.kernels, setup.src, trajectory, p.prefactor_mode)
        manifest.scalars["lagrangian_hydro"] = lagrangian(wf.center, wf.rates, e.E_qm, e.E_P)
        memory = trajectory.memory[wf.index] if trajectory.memory is not None else None
        zeta = fluctuation_term(setup.src, setup.kernels, wf.state.time, setup.workers).values
        manifest.scalars["lagrangian_wave"] = wave_lagrangian(
            trajectory.state(wf.index - 1),
            trajectory.state(wf.index),
            trajectory.state(wf.index + 1),
            setup.kernels,
            trajectory.spacing,
            memory,
            zeta,
            p.sign_h,
        )
    logger.info("[diagnose] E_qm=%.6g E_P=%s l_obs=%g", breakdown.E_qm, breakdown.E_P, l_obs)
    write_manifest(manifest)
    return manifest


def run_sweep(config: RunConfig, logger: Logger | None = None, manifest: RunManifest | None = None) -> RunManifest:
    """l sweep, node scan and classicality verdict."""
    logger = get_logger(logger)
    manifest = _manifest("sweep", config, manifest)
    setup = _setup(config, logger)
    p = config.physics
    s = config.sweep
    d = config.diagnostics
    started = time.perf_counter()
    report = sweep_l(
        setup.initial,
        setup.src,
        s.l_grid,
        s.t_probe,
        p.mass,
        config.time.dt,
        s.tol,
        p.c_p,
        p.sign_h,
        d.eps_node,
        p.prefactor_mode,
        d.gateaux_eps,
        d.bump_width,
        s.with_bound,
        setup.workers,
        logger,
    )
    manifest.timed("sweep", started)
    started = time.perf_counter()
    node_free = node_free_map(
        setup.initial,
        s.l_grid,
        s.node_horizon,
        p.mass,
        config.time.dt,
        d.eps_node,
        s.node_samples,
        p.c_p,
        setup.src,
        p.sign_h,
        setup.workers,
        logger,
    )
    manifest.timed("nodes", started)
    verdict = classicality_verdict(report, node_free, s.ratio_threshold, s.bound_norm, s.unit_mode)

    rows = []
    for row, check in zip(report.rows(), verdict.rows):
        row.update({k: v for k, v in check.items() if k != "l_av"})
        row["temperature"] = temperature(row["l_av"], p.mass, s.unit_mode)
        rows.append(row)
    if "csv" in config.output.formats:
        manifest.table("sweep.csv", rows)
        manifest.table("balance.csv", l_variation_balance(report))
    manifest.scalars["stationary_candidates"] = report.stationary_candidates
    manifest.scalars["tol"] = s.tol
    manifest.scalars["verdict"] = verdict.summary()
    manifest.scalars["failed_legs"] = [leg.l_av for leg in report.legs if not leg.ok]
    logger.info("[sweep] chosen l=%s T=%s", verdict.chosen_l, verdict.temperature)
    write_manifest(manifest)
    return manifest


def run_kernels(config: RunConfig, logger: Logger | None = None, manifest: RunManifest | None = None) -> RunManifest:
    """Multiplier tables at l_av and the small-l expansion report over the sweep grid."""
    logger = get_logger(logger)
    manifest = _manifest("kernels", config, manifest)
    g = config.grid
    p = config.physics
    grid = make_grid(g.box_length, g.points_per_dim, g.dims, g.particles, config.budget.memory, logger)
    kernels = build_kernels(grid, p.l_av, p.mass, p.c_p)
    if "cgh1" in config.output.formats:
        manifest.array("symbol.cgh1", kernels.symbol.values)
        manifest.array("omega.cgh1", kernels.omega.values)
        manifest.array("kernel_H.cgh1", kernels.H)
        manifest.array("kernel_G.cgh1", kernels.g_amplitude)
        manifest.array("kernel_F.cgh1", kernels.f_amplitude)
    l_values = config.sweep.l_grid
    k_nyquist = math.pi / grid.spacing
    k_max = min(k_nyquist, 1.0 / max(l_values))
    report = expansion_report(grid, p.mass, l_values, k_max, p.c_p, logger)
    if "csv" in config.output.formats:
        manifest.table("expansion.csv", report.rows())
    manifest.scalars["expansion"] = report.summary()
    manifest.scalars["kernel_H_max"] = float(np.max(kernels.H))
    manifest.scalars["kernel_G_max"] = float(np.max(kernels.g_amplitude))
    manifest.scalars["kernel_F_max"] = float(np.max(kernels.f_amplitude))
    write_manifest(manifest)
    return manifest


RUNNERS = {"evolve": run_evolve, "sweep": run_sweep, "diagnose": run_diagnose, "kernels": run_kernels}


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="coarse-hydro",
        description="Coarse-grained quantum dynamics and its classical hydrodynamic limit",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter,
    )
    parser.add_argument("command", help="run to execute", choices=COMMANDS)
    parser.add_argument("-c", "--config", help="JSON run configuration, e.g. 'runs/a.json'", type=str, required=True)
    parser.add_argument("-o", "--out", help="output directory, overrides output.directory", type=str, default=None)
    parser.add_argument("-s", "--seed", help="ensemble seed, overrides fluctuation.seed", type=int, default=None)
    parser.add_argument("-t", "--threads", help="worker threads, overrides budget.threads", type=int, default=None)
    parser.add_argument("-V", "--verbose", help="be verbose", action="store_true")
    parser.add_argument("-v", "--version", action="version", version=__version__)

    args = parser.parse_args(argv)
    level = logging.DEBUG if args.verbose else logging.INFO
    logger = getlogger(LOGGER_NAME, level=level)

    manifest = None
    try:
        config = get_config(args.config).with_overrides(args.seed, args.threads, args.out)
        logger = getlogger(LOGGER_NAME, config.output.directory, level)
        for key, value in config.items():
            logger.log(logging.INFO if args.verbose else logging.DEBUG, "%-32s: %s", key, value)
        manifest = RunManifest(args.command, config.to_dict(), config.output.directory)
        RUNNERS[args.command](config, logger, manifest)
    except (ConfigError, GridError) as e:
        logger.error("%s", e)
        return EXIT_CONFIG
    except (CoarseHydroError, ValueError) as e:
        logger.exception("[%s] failed", args.command)
        if manifest is not None:
            manifest.status = "failed"
            manifest.scalars["error"] = str(e)
            write_manifest(manifest)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
