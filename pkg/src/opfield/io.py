"""Text artifacts: model files, observation CSVs, matrices and tables.

Every output starts with one comment line carrying the tool version, the
command, the seed and the model hash. Files are written to a temporary name
and renamed into place.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import os
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp

from . import __version__
from .assembly import OperatorSpec
from .errors import ConfigError
from .mesh import mesh_to_dict


@dataclass(frozen=True)
class Provenance:
    command: str
    seed: int | None
    model_hash: str

    def line(self) -> str:
        seed = "none" if self.seed is None else str(self.seed)
        return f"opfield {__version__} | command: {self.command} | seed: {seed} | model: {self.model_hash}"

    def as_dict(self) -> dict:
        return {"tool": f"opfield {__version__}", "command": self.command,
                "seed": self.seed, "model_hash": self.model_hash}


def model_hash(mesh, model: dict) -> str:
    blob = json.dumps({"mesh": mesh_to_dict(mesh), "model": model}, sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def atomic_write(path: str | Path, text: str):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence], prov: Provenance):
    buf = io.StringIO()
    buf.write(f"# {prov.line()}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    atomic_write(path, buf.getvalue())


def read_csv(path) -> tuple[list[str], np.ndarray | list]:
    """Header and rows of a CSV, skipping ``#`` comment lines."""
    try:
        lines = [ln for ln in Path(path).read_text().splitlines() if ln and not ln.startswith("#")]
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    reader = csv.reader(lines)
    header = next(reader)
    return header, [row for row in reader]


def write_json(path, obj: dict, prov: Provenance):
    atomic_write(path, json.dumps({**prov.as_dict(), **obj}, indent=1, sort_keys=False) + "\n")


def write_matrix(path, A, prov: Provenance):
    """Symmetric coordinate (Matrix Market) text, lower triangle, 1-based."""
    A = sp.coo_matrix(A)
    low = A.row >= A.col
    r, c, v = A.row[low], A.col[low], A.data[low]
    order = np.lexsort((r, c))
    buf = io.StringIO()
    buf.write("%%MatrixMarket matrix coordinate real symmetric\n")
    buf.write(f"% {prov.line()}\n")
    buf.write(f"{A.shape[0]} {A.shape[1]} {r.size}\n")
    for i, j, x in zip(r[order], c[order], v[order]):
        buf.write(f"{i + 1} {j + 1} {float(x)!r}\n")
    atomic_write(path, buf.getvalue())


def load_model(path) -> dict:
    try:
        d = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read model file {path}: {exc}") from exc
    if not isinstance(d, dict):
        raise ConfigError("model file must hold a JSON object")
    OperatorSpec.from_json(d)
    return d


@dataclass(frozen=True)
class PointData:
    points: np.ndarray
    values: np.ndarray
    noise_sd: np.ndarray

    def __len__(self):
        return self.values.size


def load_observations(path, dim: int) -> PointData:
    """Observation CSV with columns ``x[,y],value,noise_sd``."""
    header, rows = read_csv(path)
    names = ["x", "y"][:dim] + ["value", "noise_sd"]
    header = [h.strip() for h in header]
    missing = [n for n in names if n not in header]
    if missing:
        raise ConfigError(f"observation file {path} lacks columns {missing}")
    try:
        data = np.array([[float(row[header.index(n)]) for n in names] for row in rows], dtype=float)
    except (ValueError, IndexError) as exc:
        raise ConfigError(f"bad observation row in {path}: {exc}") from exc
    data = data.reshape(-1, len(names))
    if not np.all(np.isfinite(data)) or np.any(data[:, -1] < 0):
        raise ConfigError("observations must be finite with noise_sd >= 0")
    return PointData(data[:, :dim], data[:, dim], data[:, dim + 1])
