import json
import math
import os
from enum import IntEnum
from typing import Any, TypeVar

import numpy as np

from coarse_hydro.error import ConfigError, UnknownKeyError
from coarse_hydro.grid import DEFAULT_MEMORY_BUDGET
from coarse_hydro.state import (
    BoundNorm,
    FluctuationMode,
    InitialStateKind,
    KappaReading,
    PrefactorMode,
    UnitMode,
)

MEMORY_BUDGET_ENV = "COARSE_HYDRO_MEMORY_BUDGET"
OUTPUT_FORMATS = ("cgh1", "csv")

E = TypeVar("E", bound=IntEnum)


def _section(tree: Any, path: str, allowed: tuple[str, ...]) -> dict:
    if tree is None:
        return {}
    if not isinstance(tree, dict):
        raise ConfigError(path, "expected a key-value section")
    for key in tree:
        if key not in allowed:
            raise UnknownKeyError(f"{path}.{key}" if path else key)
    return tree


def _float(tree: dict, path: str, key: str, default: float | None = None, positive: bool = False) -> float:
    full = f"{path}.{key}"
    if key not in tree:
        if default is None:
            raise ConfigError(full, "required")
        return default
    value = tree[key]
    if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
        raise ConfigError(full, f"expected a finite number, got {value!r}")
    if positive and not value > 0:
        raise ConfigError(full, f"must be positive, got {value}")
    return float(value)


def _int(tree: dict, path: str, key: str, default: int | None = None, minimum: int | None = None) -> int:
    full = f"{path}.{key}"
    if key not in tree:
        if default is None:
            raise ConfigError(full, "required")
        return default
    value = tree[key]
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(full, f"expected an integer, got {value!r}")
    if minimum is not None and value < minimum:
        raise ConfigError(full, f"must be at least {minimum}, got {value}")
    return value


def _is_multiple(value: float, step: float) -> bool:
    return math.isclose(round(value / step) * step, value, rel_tol=1e-9, abs_tol=1e-12)


def _sign(tree: dict, path: str, key: str, default: int) -> int:
    value = _int(tree, path, key, default)
    if value not in (-1, 1):
        raise ConfigError(f"{path}.{key}", f"must be -1 or 1, got {value}")
    return value


def _enum(tree: dict, path: str, key: str, enum: type[E], default: E) -> E:
    if key not in tree:
        return default
    try:
        return enum[tree[key]]
    except (KeyError, TypeError):
        names = ", ".join(e.name for e in enum)
        raise ConfigError(f"{path}.{key}", f"expected one of {names}, got {tree[key]!r}") from None


def _vector(tree: dict, path: str, key: str, dims: int, default: float) -> tuple[float, ...]:
    """A scalar (broadcast over dims) or a list of dims numbers."""
    value = tree.get(key, default)
    values = value if isinstance(value, list) else [value] * dims
    if len(values) != dims:
        raise ConfigError(f"{path}.{key}", f"expected {dims} components, got {len(values)}")
    return tuple(_float({key: v}, path, key) for v in values)


class GridConfig:
    def __init__(self, tree: dict):
        path = "grid"
        grid = _section(tree, path, ("box_length", "M", "d", "N"))
        self._box_length = _float(grid, path, "box_length", 20.0, positive=True)
        self._points_per_dim = _int(grid, path, "M", minimum=2)
        self._dims = _int(grid, path, "d", 1, minimum=1)
        self._particles = _int(grid, path, "N", 1, minimum=1)
        if self._dims > 3:
            raise ConfigError("grid.d", f"must be at most 3, got {self._dims}")

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

    def to_dict(self) -> dict:
        return {"box_length": self.box_length, "M": self.points_per_dim, "d": self.dims, "N": self.particles}


class PhysicsConfig:
    def __init__(self, tree: dict):
        path = "physics"
        physics = _section(
            tree, path, ("m", "l_av", "c_P", "prefactor_mode", "sign_h", "sign_zeta", "kappa_reading")
        )
        self._mass = _float(physics, path, "m", 1.0, positive=True)
        self._l_av = _float(physics, path, "l_av", 0.0)
        if self._l_av < 0:
            raise ConfigError("physics.l_av", f"must be non-negative, got {self._l_av}")
        self._c_p = _float(physics, path, "c_P", 0.5, positive=True)
        self._prefactor_mode = _enum(physics, path, "prefactor_mode", PrefactorMode, PrefactorMode.standard)
        self._sign_h = _sign(physics, path, "sign_h", -1)
        self._sign_zeta = _sign(physics, path, "sign_zeta", 1)
        self._kappa_reading = _enum(physics, path, "kappa_reading", KappaReading, KappaReading.outer)

    @property
    def mass(self) -> float:
        return self._mass

    @property
    def l_av(self) -> float:
        return self._l_av

    @property
    def c_p(self) -> float:
        return self._c_p

    @property
    def prefactor_mode(self) -> PrefactorMode:
        return self._prefactor_mode

    @property
    def sign_h(self) -> int:
        return self._sign_h

    @property
    def sign_zeta(self) -> int:
        return self._sign_zeta

    @property
    def kappa_reading(self) -> KappaReading:
        return self._kappa_reading

    def to_dict(self) -> dict:
        return {
            "m": self.mass,
            "l_av": self.l_av,
            "c_P": self.c_p,
            "prefactor_mode": self.prefactor_mode.name,
            "sign_h": self.sign_h,
            "sign_zeta": self.sign_zeta,
            "kappa_reading": self.kappa_reading.name,
        }


class TimeConfig:
    def __init__(self, tree: dict):
        path = "time"
        time = _section(tree, path, ("dt", "T", "snapshot_stride"))
        self._dt = _float(time, path, "dt", 1e-3, positive=True)
        self._final = _float(time, path, "T", 1.0)
        if self._final < 0:
            raise ConfigError("time.T", f"must be non-negative, got {self._final}")
        self._stride = _int(time, path, "snapshot_stride", 10, minimum=1)
        steps = round(self._final / self._dt)
        if not _is_multiple(self._final, self._dt):
            raise ConfigError("time.T", f"must be a multiple of dt={self._dt}")
        if steps % self._stride:
            raise ConfigError("time.snapshot_stride", f"must divide the {steps} integration steps")

    @property
    def dt(self) -> float:
        return self._dt

    @property
    def final(self) -> float:
        return self._final

    @property
    def steps(self) -> int:
        return round(self._final / self._dt)

    @property
    def snapshot_stride(self) -> int:
        return self._stride

    def to_dict(self) -> dict:
        return {"dt": self.dt, "T": self.final, "snapshot_stride": self.snapshot_stride}


class PacketConfig:
    """One Gaussian packet (Hermite order 0 or 1) with a complex weight."""

    def __init__(self, tree: dict, path: str, dims: int, weighted: bool = False):
        keys = ("center", "width", "momentum", "order") + (("weight",) if weighted else ())
        packet = _section(tree, path, keys)
        self._center = _vector(packet, path, "center", dims, 0.0)
        self._width = _float(packet, path, "width", 1.0, positive=True)
        self._momentum = _vector(packet, path, "momentum", dims, 0.0)
        self._order = _int(packet, path, "order", 0, minimum=0)
        if self._order > 1:
            raise ConfigError(f"{path}.order", f"must be 0 or 1, got {self._order}")
        weight = packet.get("weight", 1.0)
        parts = weight if isinstance(weight, list) else [weight, 0.0]
        if len(parts) != 2:
            raise ConfigError(f"{path}.weight", "expected a number or [re, im]")
        self._weight = complex(_float({"re": parts[0]}, path, "re"), _float({"im": parts[1]}, path, "im"))
        self._weighted = weighted

    @property
    def center(self) -> tuple[float, ...]:
        return self._center

    @property
    def width(self) -> float:
        return self._width

    @property
    def momentum(self) -> tuple[float, ...]:
        return self._momentum

    @property
    def order(self) -> int:
        return self._order

    @property
    def weight(self) -> complex:
        return self._weight

    def to_dict(self) -> dict:
        d = {"center": list(self.center), "width": self.width, "momentum": list(self.momentum), "order": self.order}
        if self._weighted:
            d["weight"] = [self.weight.real, self.weight.imag]
        return d


class InitialStateConfig:
    def __init__(self, tree: dict, dims: int):
        path = "initial_state"
        state = _section(tree, path, ("kind", "center", "width", "momentum", "order", "mode", "components", "path"))
        self._kind = _enum(state, path, "kind", InitialStateKind, InitialStateKind.gaussian_packet)
        packet = {k: state[k] for k in ("center", "width", "momentum", "order") if k in state}
        self._packet = PacketConfig(packet, path, dims)
        mode = state.get("mode", 0)
        modes = mode if isinstance(mode, list) else [mode] * dims
        if len(modes) != dims or not all(isinstance(n, int) and not isinstance(n, bool) for n in modes):
            raise ConfigError(f"{path}.mode", f"expected {dims} integer wave indices")
        self._mode = tuple(modes)
        components = state.get("components", [])
        if not isinstance(components, list):
            raise ConfigError(f"{path}.components", "expected a list of packets")
        self._components = [
            PacketConfig(c, f"{path}.components[{i}]", dims, weighted=True) for i, c in enumerate(components)
        ]
        if self._kind == InitialStateKind.superposition and not self._components:
            raise ConfigError(f"{path}.components", "required for a superposition")
        self._path = state.get("path")
        if self._kind == InitialStateKind.file and not isinstance(self._path, str):
            raise ConfigError(f"{path}.path", "required for a file state")

    @property
    def kind(self) -> InitialStateKind:
        return self._kind

    @property
    def packet(self) -> PacketConfig:
        return self._packet

    @property
    def mode(self) -> tuple[int, ...]:
        """wave indices of a plane wave, k = mode * dk"""
        return self._mode

    @property
    def components(self) -> list[PacketConfig]:
        return self._components

    @property
    def path(self) -> str | None:
        return self._path

    def to_dict(self) -> dict:
        d = {"kind": self.kind.name, **self.packet.to_dict(), "mode": list(self.mode)}
        d["components"] = [c.to_dict() for c in self.components]
        if self.path is not None:
            d["path"] = self.path
        return d


class FluctuationConfig:
    def __init__(self, tree: dict):
        path = "fluctuation"
        fluctuation = _section(tree, path, ("mode", "seed", "irrelevant_amplitude", "threshold"))
        self._mode = _enum(fluctuation, path, "mode", FluctuationMode, FluctuationMode.deterministic)
        self._seed = _int(fluctuation, path, "seed", 0, minimum=0)
        self._irrelevant_amplitude = _float(fluctuation, path, "irrelevant_amplitude", 0.0)
        if self._irrelevant_amplitude < 0:
            raise ConfigError("fluctuation.irrelevant_amplitude", "must be non-negative")
        self._threshold = _float(fluctuation, path, "threshold", 0.5)
        if not 0 <= self._threshold < 1:
            raise ConfigError("fluctuation.threshold", f"must lie in [0, 1), got {self._threshold}")

    @property
    def mode(self) -> FluctuationMode:
        return self._mode

    @property
    def seed(self) -> int:
        return self._seed

    @property
    def irrelevant_amplitude(self) -> float:
        return self._irrelevant_amplitude

    @property
    def threshold(self) -> float:
        return self._threshold

    def to_dict(self) -> dict:
        return {
            "mode": self.mode.name,
            "seed": self.seed,
            "irrelevant_amplitude": self.irrelevant_amplitude,
            "threshold": self.threshold,
        }


class SweepConfig:
    def __init__(self, tree: dict, dt: float):
        path = "sweep"
        sweep = _section(
            tree,
            path,
            (
                "l_grid",
                "t_probe",
                "tol",
                "ratio_threshold",
                "node_horizon",
                "node_samples",
                "bound_norm",
                "unit_mode",
                "with_bound",
            ),
        )
        self._l_grid = self._parse_l_grid(sweep.get("l_grid", {"start": 0.05, "stop": 0.5, "points": 10}))
        self._t_probe = _float(sweep, path, "t_probe", 0.1)
        if self._t_probe < 0:
            raise ConfigError("sweep.t_probe", "must be non-negative")
        if not _is_multiple(self._t_probe, dt):
            raise ConfigError("sweep.t_probe", f"must be a multiple of dt={dt}")
        self._tol = _float(sweep, path, "tol", 1e-3, positive=True)
        self._ratio_threshold = _float(sweep, path, "ratio_threshold", 0.1, positive=True)
        self._node_horizon = _float(sweep, path, "node_horizon", 0.1)
        if self._node_horizon < 0:
            raise ConfigError("sweep.node_horizon", "must be non-negative")
        if not _is_multiple(self._node_horizon, dt):
            raise ConfigError("sweep.node_horizon", f"must be a multiple of dt={dt}")
        self._node_samples = _int(sweep, path, "node_samples", 3, minimum=1)
        self._bound_norm = _enum(sweep, path, "bound_norm", BoundNorm, BoundNorm.l2)
        self._unit_mode = _enum(sweep, path, "unit_mode", UnitMode, UnitMode.natural)
        with_bound = sweep.get("with_bound", True)
        if not isinstance(with_bound, bool):
            raise ConfigError("sweep.with_bound", "expected true or false")
        self._with_bound = with_bound

    @staticmethod
    def _parse_l_grid(value: Any) -> tuple[float, ...]:
        path = "sweep.l_grid"
        if isinstance(value, dict):
            bounds = _section(value, path, ("start", "stop", "points"))
            start = _float(bounds, path, "start", positive=True)
            stop = _float(bounds, path, "stop", positive=True)
            points = _int(bounds, path, "points", minimum=3)
            values = tuple(float(v) for v in np.linspace(start, stop, points))
        elif isinstance(value, list):
            values = tuple(_float({"l": v}, path, "l", positive=True) for v in value)
        else:
            raise ConfigError(path, "expected a list or {start, stop, points}")
        if len(values) < 3:
            raise ConfigError(path, f"needs at least 3 values, got {len(values)}")
        if any(b <= a for a, b in zip(values, values[1:])):
            raise ConfigError(path, "must be strictly increasing")
        return values

    @property
    def l_grid(self) -> tuple[float, ...]:
        return self._l_grid

    @property
    def t_probe(self) -> float:
        return self._t_probe

    @property
    def tol(self) -> float:
        return self._tol

    @property
    def ratio_threshold(self) -> float:
        return self._ratio_threshold

    @property
    def node_horizon(self) -> float:
        return self._node_horizon

    @property
    def node_samples(self) -> int:
        return self._node_samples

    @property
    def bound_norm(self) -> BoundNorm:
        return self._bound_norm

    @property
    def unit_mode(self) -> UnitMode:
        return self._unit_mode

    @property
    def with_bound(self) -> bool:
        return self._with_bound

    def to_dict(self) -> dict:
        return {
            "l_grid": list(self.l_grid),
            "t_probe": self.t_probe,
            "tol": self.tol,
            "ratio_threshold": self.ratio_threshold,
            "node_horizon": self.node_horizon,
            "node_samples": self.node_samples,
            "bound_norm": self.bound_norm.name,
            "unit_mode": self.unit_mode.name,
            "with_bound": self.with_bound,
        }


class DiagnosticsConfig:
    def __init__(self, tree: dict):
        path = "diagnostics"
        diagnostics = _section(tree, path, ("eps_node", "gateaux_eps", "bump_width", "residual_window"))
        self._eps_node = _float(diagnostics, path, "eps_node", 1e-6, positive=True)
        self._gateaux_eps = _float(diagnostics, path, "gateaux_eps", 1e-6, positive=True)
        self._bump_width = _float(diagnostics, path, "bump_width", 0.0)
        if self._bump_width < 0:
            raise ConfigError("diagnostics.bump_width", "must be non-negative")
        self._residual_window = _int(diagnostics, path, "residual_window", 3, minimum=1)

    @property
    def eps_node(self) -> float:
        return self._eps_node

    @property
    def gateaux_eps(self) -> float:
        return self._gateaux_eps

    @property
    def bump_width(self) -> float:
        return self._bump_width

    @property
    def residual_window(self) -> int:
        """number of snapshot windows, evenly spread over the run, at which residuals are evaluated"""
        return self._residual_window

    def to_dict(self) -> dict:
        return {
            "eps_node": self.eps_node,
            "gateaux_eps": self.gateaux_eps,
            "bump_width": self.bump_width,
            "residual_window": self.residual_window,
        }


class OutputConfig:
    def __init__(self, tree: dict):
        path = "output"
        output = _section(tree, path, ("directory", "formats", "fields"))
        self._directory = output.get("directory", "out")
        if not isinstance(self._directory, str) or not self._directory:
            raise ConfigError("output.directory", "expected a non-empty path")
        formats = output.get("formats", list(OUTPUT_FORMATS))
        if not isinstance(formats, list) or any(f not in OUTPUT_FORMATS for f in formats):
            raise ConfigError("output.formats", f"expected a subset of {list(OUTPUT_FORMATS)}")
        self._formats = tuple(formats)
        fields = output.get("fields", True)
        if not isinstance(fields, bool):
            raise ConfigError("output.fields", "expected true or false")
        self._fields = fields

    @property
    def directory(self) -> str:
        return self._directory

    @property
    def formats(self) -> tuple[str, ...]:
        return self._formats

    @property
    def fields(self) -> bool:
        """dump the extracted fluid fields"""
        return self._fields

    def to_dict(self) -> dict:
        return {"directory": self.directory, "formats": list(self.formats), "fields": self.fields}


class BudgetConfig:
    def __init__(self, tree: dict, environ: dict[str, str] | None = None):
        path = "budget"
        budget = _section(tree, path, ("memory", "threads"))
        self._memory = _int(budget, path, "memory", DEFAULT_MEMORY_BUDGET, minimum=1)
        environ = os.environ if environ is None else environ
        if MEMORY_BUDGET_ENV in environ:
            try:
                self._memory = int(environ[MEMORY_BUDGET_ENV])
            except ValueError:
                value = environ[MEMORY_BUDGET_ENV]
                raise ConfigError(MEMORY_BUDGET_ENV, f"expected an integer, got {value!r}") from None
            if self._memory < 1:
                raise ConfigError(MEMORY_BUDGET_ENV, "must be positive")
        self._threads = _int(budget, path, "threads", 1, minimum=1)

    @property
    def memory(self) -> int:
        """maximum number of configuration-space lattice points"""
        return self._memory

    @property
    def threads(self) -> int:
        return self._threads

    def to_dict(self) -> dict:
        return {"memory": self.memory, "threads": self.threads}


class RunConfig:
    """Validated run configuration with every default filled in."""

    SECTIONS = (
        "grid",
        "physics",
        "time",
        "initial_state",
        "fluctuation",
        "sweep",
        "diagnostics",
        "output",
        "budget",
    )

    def __init__(self, config: dict, environ: dict[str, str] | None = None):
        tree = _section(config, "", self.SECTIONS)
        self._grid = GridConfig(tree.get("grid"))
        self._physics = PhysicsConfig(tree.get("physics"))
        self._time = TimeConfig(tree.get("time"))
        self._initial_state = InitialStateConfig(tree.get("initial_state"), self._grid.dims)
        self._fluctuation = FluctuationConfig(tree.get("fluctuation"))
        self._sweep = SweepConfig(tree.get("sweep"), self._time.dt)
        self._diagnostics = DiagnosticsConfig(tree.get("diagnostics"))
        self._output = OutputConfig(tree.get("output"))
        self._budget = BudgetConfig(tree.get("budget"), environ)

    @property
    def grid(self) -> GridConfig:
        return self._grid

    @property
    def physics(self) -> PhysicsConfig:
        return self._physics

    @property
    def time(self) -> TimeConfig:
        return self._time

    @property
    def initial_state(self) -> InitialStateConfig:
        return self._initial_state

    @property
    def fluctuation(self) -> FluctuationConfig:
        return self._fluctuation

    @property
    def sweep(self) -> SweepConfig:
        return self._sweep

    @property
    def diagnostics(self) -> DiagnosticsConfig:
        return self._diagnostics

    @property
    def output(self) -> OutputConfig:
        return self._output

    @property
    def budget(self) -> BudgetConfig:
        return self._budget

    def to_dict(self) -> dict:
        return {name: getattr(self, name).to_dict() for name in self.SECTIONS}

    def __eq__(self, other: object) -> bool:
        return isinstance(other, RunConfig) and self.to_dict() == other.to_dict()

    def with_overrides(
        self, seed: int | None = None, threads: int | None = None, directory: str | None = None
    ) -> "RunConfig":
        """A copy with the command-line overrides applied."""
        tree = self.to_dict()
        if seed is not None:
            tree["fluctuation"]["seed"] = seed
        if threads is not None:
            tree["budget"]["threads"] = threads
        if directory is not None:
            tree["output"]["directory"] = directory
        return RunConfig(tree, environ={})

    def items(self) -> list[tuple[str, Any]]:
        """Flattened (dotted key, value) pairs of the full tree."""

        def walk(prefix: str, value: Any):
            if isinstance(value, dict):
                for key, v in value.items():
                    yield from walk(f"{prefix}.{key}" if prefix else key, v)
            else:
                yield prefix, value

        return list(walk("", self.to_dict()))


def parse_config(text: str, environ: dict[str, str] | None = None) -> RunConfig:
    """Returns a validated RunConfig for a JSON document.

    Arguments:
    * text: JSON text of the configuration tree
    * environ: environment used for overrides, defaults to os.environ

    Returns:
    * config: RunConfig instance
    """
    try:
        tree = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError("", f"malformed JSON: {e}") from None
    return RunConfig(tree, environ)


def get_config(fname: str, environ: dict[str, str] | None = None) -> RunConfig:
    """Returns a RunConfig instance for the given file.

    Arguments:
    * fname: path of the JSON configuration file, e.g. 'runs/packet.json'

    Returns:
    * config: RunConfig instance
    """
    try:
        with open(fname) as f:
            text = f.read()
    except OSError as e:
        raise ConfigError(fname, f"cannot read: {e.strerror}") from None
    return parse_config(text, environ)
