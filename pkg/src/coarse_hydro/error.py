class CoarseHydroError(Exception):
    """Base class of all coarse-hydro failures."""


class ConfigError(CoarseHydroError):
    def __init__(self, path: str, reason: str):
        self.path = path
        super().__init__(f"Invalid configuration [{path}]: {reason}")


class UnknownKeyError(ConfigError):
    def __init__(self, path: str):
        super().__init__(path, "unknown key")


class GridError(CoarseHydroError):
    def __init__(self, reason: str):
        super().__init__(f"Invalid grid: {reason}")


class GridMismatchError(CoarseHydroError):
    def __init__(self, what: str = "operands"):
        super().__init__(f"Grid mismatch between {what}")


class RepresentationError(CoarseHydroError):
    def __init__(self, expected: str, actual: str):
        super().__init__(f"Expected {expected} representation, got {actual}")


class NumericError(CoarseHydroError):
    def __init__(self, reason: str):
        super().__init__(f"Numeric failure: {reason}")


class StabilityError(NumericError):
    def __init__(self, dt: float, h_max: float):
        self.dt = dt
        self.h_max = h_max
        super().__init__(f"stability guard violated, dt*max(H) = {dt * h_max:.4g} > 0.5 (dt={dt:.4g})")


class DivergenceError(NumericError):
    def __init__(self, step: int, time: float):
        self.step = step
        self.time = time
        super().__init__(f"non-finite state at step {step} (t={time:.6g})")


class HistoryError(NumericError):
    def __init__(self, t: float, covered: float):
        super().__init__(f"history covers [0, {covered:.6g}] but t={t:.6g} was requested")


class DegenerateFitError(NumericError):
    def __init__(self, points: int):
        super().__init__(f"log-log fit needs at least 3 points, got {points}")


class NodeError(NumericError):
    def __init__(self, reason: str):
        super().__init__(f"nodal input: {reason}")


class SnapshotError(NumericError):
    def __init__(self, available: int, required: int):
        super().__init__(f"{available} snapshots available, {required} required")


class MaskCoverageError(NumericError):
    def __init__(self, coverage: float):
        self.coverage = coverage
        super().__init__(f"node mask covers {100.0 * coverage:.1f}% of the lattice (limit 50%)")


class ArtifactError(CoarseHydroError):
    def __init__(self, fname: str, reason: str):
        super().__init__(f"Invalid artifact {fname}: {reason}")
