"""Run artifacts: CGH1 binary arrays, CSV tables and the run manifest.

CGH1 layout, little endian: the magic b"CGH1", a u32 rank, one u64 size per
dimension, then the row-major data as f64 (complex arrays as interleaved
re, im pairs). A real array is marked by the high bit of the rank word.
"""

from __future__ import annotations

import csv
import io
import json
import os
import time
from dataclasses import dataclass, field
from typing import Any, Iterable

import numpy as np

from coarse_hydro.__about__ import __version__
from coarse_hydro.error import ArtifactError
from coarse_hydro.util import atomic_write, sha256sum

MAGIC = b"CGH1"
_REAL_FLAG = 1 << 31
MANIFEST_NAME = "manifest.json"


def encode_array(values: np.ndarray) -> bytes:
    values = np.asarray(values)
    real = not np.iscomplexobj(values)
    rank = values.ndim | (_REAL_FLAG if real else 0)
    header = MAGIC + np.array([rank], dtype="<u4").tobytes() + np.array(values.shape, dtype="<u8").tobytes()
    data = values.astype("<f8") if real else values.astype("<c16")
    return header + np.ascontiguousarray(data).tobytes()


def decode_array(data: bytes, fname: str = "<bytes>") -> np.ndarray:
    if data[:4] != MAGIC:
        raise ArtifactError(fname, "bad magic")
    word = int(np.frombuffer(data, dtype="<u4", count=1, offset=4)[0])
    real = bool(word & _REAL_FLAG)
    rank = word & ~_REAL_FLAG
    shape = tuple(int(n) for n in np.frombuffer(data, dtype="<u8", count=rank, offset=8))
    offset = 8 + 8 * rank
    dtype = "<f8" if real else "<c16"
    count = int(np.prod(shape, dtype=np.int64))
    if len(data) != offset + count * np.dtype(dtype).itemsize:
        raise ArtifactError(fname, f"size does not match shape {shape}")
    return np.frombuffer(data, dtype=dtype, count=count, offset=offset).reshape(shape).copy()


def write_array(fname: str, values: np.ndarray) -> None:
    """Writes values in CGH1 format, atomically."""
    atomic_write(fname, encode_array(values))


def read_array(fname: str) -> np.ndarray:
    try:
        with open(fname, "rb") as f:
            data = f.read()
    except OSError as e:
        raise ArtifactError(fname, e.strerror or "cannot read") from None
    return decode_array(data, fname)


def write_csv(fname: str, rows: Iterable[dict], columns: list[str] | None = None) -> None:
    """Writes rows as CSV with a header row; columns default to the keys of the first row."""
    rows = list(rows)
    if columns is None:
        columns = list(rows[0]) if rows else []
    buffer = io.StringIO()
    writer = csv.DictWriter(buffer, fieldnames=columns, lineterminator="\n", extrasaction="ignore")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: _plain(v) for k, v in row.items()})
    atomic_write(fname, buffer.getvalue().encode())


def _plain(value: Any) -> Any:
    """JSON/CSV representation of numpy scalars, enums, complex numbers and infinities."""
    if isinstance(value, dict):
        return {k: _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if isinstance(value, np.ndarray):
        return _plain(value.tolist())
    if isinstance(value, np.generic):
        value = value.item()
    if hasattr(value, "name") and isinstance(value, int) and not isinstance(value, bool):
        return value.name
    if isinstance(value, complex):
        return [_plain(value.real), _plain(value.imag)]
    if isinstance(value, float) and not np.isfinite(value):
        return str(value)
    return value


@dataclass
class RunManifest:
    """Everything a run reports: config echo, scalars, timings and file inventory."""

    command: str
    config: dict
    directory: str
    version: str = __version__
    scalars: dict[str, Any] = field(default_factory=dict)
    timings: dict[str, float] = field(default_factory=dict)
    files: list[str] = field(default_factory=list)
    status: str = "ok"

    def path(self, name: str) -> str:
        return os.path.join(self.directory, name)

    def add_file(self, name: str) -> str:
        if name not in self.files:
            self.files.append(name)
        return self.path(name)

    def array(self, name: str, values: np.ndarray) -> None:
        write_array(self.add_file(name), values)

    def table(self, name: str, rows: Iterable[dict], columns: list[str] | None = None) -> None:
        write_csv(self.add_file(name), rows, columns)

    def timed(self, stage: str, started: float) -> None:
        self.timings[stage] = time.perf_counter() - started

    def inventory(self) -> dict[str, str]:
        return {name: sha256sum(self.path(name)) for name in self.files}

    def to_dict(self) -> dict:
        return {
            "command": self.command,
            "version": self.version,
            "status": self.status,
            "config": self.config,
            "scalars": _plain(self.scalars),
            "timings": self.timings,
            "files": self.inventory(),
        }


def write_manifest(manifest: RunManifest) -> str:
    """Writes manifest.json atomically into the run directory; returns its path."""
    fname = manifest.path(MANIFEST_NAME)
    atomic_write(fname, (json.dumps(manifest.to_dict(), indent=2, sort_keys=True) + "\n").encode())
    return fname


def read_manifest(directory: str) -> dict:
    with open(os.path.join(directory, MANIFEST_NAME)) as f:
        return json.load(f)
