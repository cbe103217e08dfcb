"""Interval meshes and structured rectangular grids with boundary/interface tags.

Interfaces are node-aligned in 1D and grid-line-aligned in 2D. Requested
interface positions are snapped to the nearest node (line); the snap distance
is kept on the mesh so callers can report it.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from .errors import ConfigError, ConflictError, DomainError

BC_KINDS = ("dirichlet", "neumann", "robin")
SIDES_2D = ("left", "right", "bottom", "top")


@dataclass(frozen=True)
class BoundaryCondition:
    """Boundary condition attached to one boundary-piece tag.

    Dirichlet values are homogeneous; data enter through observations.
    ``beta`` is the Robin coefficient and is ignored for the other kinds.
    """

    tag: str
    kind: str = "neumann"
    beta: float = 0.0

    def __post_init__(self):
        kind = self.kind.lower()
        if kind not in BC_KINDS:
            raise ConfigError(f"unknown boundary condition kind {self.kind!r}")
        object.__setattr__(self, "kind", kind)
        if kind == "robin" and not (np.isfinite(self.beta) and self.beta >= 0):
            raise ConfigError(f"Robin coefficient must be finite and >= 0, got {self.beta}")


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


def _check_increasing(nodes: np.ndarray, name: str, min_elements: int = 2):
    if nodes.ndim != 1 or nodes.size < min_elements + 1:
        raise ConfigError(f"{name} needs at least {min_elements} elements")
    if not np.all(np.isfinite(nodes)) or np.any(np.diff(nodes) <= 0):
        raise ConfigError(f"{name} must be finite and strictly increasing")


@dataclass(frozen=True)
class Mesh1D:
    nodes: np.ndarray
    boundary_left: str = "left"
    boundary_right: str = "right"
    interface_nodes: tuple[tuple[int, str], ...] = ()
    units: str = ""
    snap_distances: tuple[float, ...] = field(default=(), compare=False)

    def __post_init__(self):
        nodes = _frozen(self.nodes)
        _check_increasing(nodes, "nodes")
        object.__setattr__(self, "nodes", nodes)
        ifaces = tuple((int(i), str(s)) for i, s in self.interface_nodes)
        n = nodes.size - 1
        seen = set()
        for i, _ in ifaces:
            if not 0 < i < n:
                raise DomainError(f"interface node {i} is not interior (0 < i < {n})")
            if i in seen:
                raise ConflictError(f"node {i} carries two interface identifiers")
            seen.add(i)
        object.__setattr__(self, "interface_nodes", ifaces)

    dim = 1

    @property
    def n_elements(self) -> int:
        return self.nodes.size - 1

    @property
    def n_nodes(self) -> int:
        return self.nodes.size

    @property
    def coords(self) -> np.ndarray:
        return self.nodes[:, None]

    @property
    def bounds(self) -> tuple[float, float]:
        return float(self.nodes[0]), float(self.nodes[-1])

    @property
    def boundary_tags(self) -> set[str]:
        return {self.boundary_left, self.boundary_right}

    @property
    def interface_ids(self) -> list[str]:
        return [s for _, s in self.interface_nodes]

    def interface_positions(self) -> list[float]:
        return [float(self.nodes[i]) for i, _ in self.interface_nodes]

    def boundary_nodes(self) -> dict[str, list[int]]:
        out: dict[str, list[int]] = {}
        out.setdefault(self.boundary_left, []).append(0)
        out.setdefault(self.boundary_right, []).append(self.n_nodes - 1)
        return out

    def scaled(self, factor: float) -> "Mesh1D":
        return Mesh1D(self.nodes * factor, self.boundary_left, self.boundary_right,
                      self.interface_nodes, self.units, self.snap_distances)


@dataclass(frozen=True)
class Grid2D:
    """Tensor-product grid; node (i, j) has flat index ``j * (nx + 1) + i``.

    ``edge_tags`` maps each side to one tag per boundary segment (element
    edge) along that side, ordered by increasing coordinate. With
    ``periodic_y`` the bottom and top lines are identified and the y extent is
    read as one period.
    """

    x_nodes: np.ndarray
    y_nodes: np.ndarray
    edge_tags: dict = field(default_factory=dict)
    interface_lines: tuple[tuple[str, int, str], ...] = ()
    periodic_y: bool = False
    units: str = ""
    snap_distances: tuple[float, ...] = field(default=(), compare=False)

    dim = 2

    def __post_init__(self):
        x = _frozen(self.x_nodes)
        y = _frozen(self.y_nodes)
        _check_increasing(x, "x_nodes")
        _check_increasing(y, "y_nodes")
        object.__setattr__(self, "x_nodes", x)
        object.__setattr__(self, "y_nodes", y)
        counts = {"left": y.size - 1, "right": y.size - 1,
                  "bottom": x.size - 1, "top": x.size - 1}
        tags = {}
        raw = dict(self.edge_tags)
        for side in SIDES_2D:
            if self.periodic_y and side in ("bottom", "top"):
                continue
            t = raw.pop(side, side)
            if isinstance(t, str):
                t = (t,) * counts[side]
            t = tuple(str(s) for s in t)
            if len(t) != counts[side]:
                raise ConfigError(f"side {side!r} needs {counts[side]} segment tags, got {len(t)}")
            tags[side] = t
        if self.periodic_y:
            raw.pop("bottom", None)
            raw.pop("top", None)
        if raw:
            raise ConfigError(f"unknown grid sides {sorted(raw)}")
        object.__setattr__(self, "edge_tags", tags)

        lines = tuple((str(a).lower(), int(k), str(s)) for a, k, s in self.interface_lines)
        seen = set()
        for axis, k, _ in lines:
            if axis == "x":
                lo, hi = 0, x.size - 1
            elif axis == "y":
                lo, hi = (-1, y.size - 1) if self.periodic_y else (0, y.size - 1)
            else:
                raise ConfigError(f"interface axis must be 'x' or 'y', got {axis!r}")
            if not lo < k < hi:
                raise DomainError(f"interface line {axis}={k} is not an interior grid line")
            if (axis, k) in seen:
                raise ConflictError(f"grid line {axis}={k} carries two interface identifiers")
            seen.add((axis, k))
        object.__setattr__(self, "interface_lines", lines)

    @property
    def nx(self) -> int:
        return self.x_nodes.size - 1

    @property
    def ny(self) -> int:
        return self.y_nodes.size - 1

    @property
    def n_nodes(self) -> int:
        return self.x_nodes.size * self.y_nodes.size

    @property
    def coords(self) -> np.ndarray:
        X, Y = np.meshgrid(self.x_nodes, self.y_nodes)
        return np.column_stack([X.ravel(), Y.ravel()])

    @property
    def bounds(self) -> tuple[tuple[float, float], tuple[float, float]]:
        return ((float(self.x_nodes[0]), float(self.x_nodes[-1])),
                (float(self.y_nodes[0]), float(self.y_nodes[-1])))

    @property
    def boundary_tags(self) -> set[str]:
        return {t for tags in self.edge_tags.values() for t in tags}

    @property
    def interface_ids(self) -> list[str]:
        return [s for _, _, s in self.interface_lines]

    def node(self, i: int, j: int) -> int:
        return j * self.x_nodes.size + i

    def boundary_segments(self) -> list[tuple[str, int, int]]:
        """All boundary segments as ``(tag, node_a, node_b)``."""
        nx, ny = self.nx, self.ny
        segs = []
        for side, tags in self.edge_tags.items():
            for k, tag in enumerate(tags):
                if side == "left":
                    a, b = self.node(0, k), self.node(0, k + 1)
                elif side == "right":
                    a, b = self.node(nx, k), self.node(nx, k + 1)
                elif side == "bottom":
                    a, b = self.node(k, 0), self.node(k + 1, 0)
                else:
                    a, b = self.node(k, ny), self.node(k + 1, ny)
                segs.append((tag, a, b))
        return segs

    def interface_segments(self) -> list[tuple[str, int, int]]:
        """Segments of every interface line as ``(id, node_a, node_b)``."""
        segs = []
        for axis, k, sid in self.interface_lines:
            if axis == "x":
                segs += [(sid, self.node(k, j), self.node(k, j + 1)) for j in range(self.ny)]
            else:
                kk = k % self.ny if self.periodic_y else k
                segs += [(sid, self.node(i, kk), self.node(i + 1, kk)) for i in range(self.nx)]
        return segs


def _snap(nodes: np.ndarray, positions: Sequence[float], open_lo: float, open_hi: float,
          what: str) -> tuple[list[int], list[float]]:
    positions = [float(p) for p in positions]
    if len(set(positions)) != len(positions):
        raise ConflictError(f"{what} positions must be distinct")
    tol = 1e-12 * (open_hi - open_lo)
    idx, dist = [], []
    for p in positions:
        if not open_lo < p < open_hi:
            raise DomainError(f"{what} position {p} outside the open domain ({open_lo}, {open_hi})")
        d = np.abs(nodes - p)
        # nearest node; ties (to rounding) go to the smaller index
        k = int(np.flatnonzero(d <= d.min() + tol)[0])
        if k in idx:
            raise ConflictError(f"{what} positions {positions} snap to the same node {k}")
        idx.append(k)
        dist.append(float(d[k]))
    return idx, dist


def _uniform(lo: float, hi: float, n: int) -> np.ndarray:
    nodes = lo + (hi - lo) * np.arange(n + 1) / n
    nodes[-1] = hi
    return nodes


def uniform_interval(L: float, n: int, interfaces: Sequence[float] = (), *,
                     symmetric: bool = False, interface_ids: Sequence[str] | None = None,
                     units: str = "") -> Mesh1D:
    """Equally spaced mesh on (0, L), or on (-L, L) with ``symmetric=True``.

    Each interface position is snapped to its nearest node; see
    ``Mesh1D.snap_distances``.
    """
    if not (L > 0 and np.isfinite(L)):
        raise DomainError(f"L must be positive, got {L}")
    if int(n) != n or n < 2:
        raise DomainError(f"need at least 2 elements, got {n}")
    lo = -L if symmetric else 0.0
    nodes = _uniform(lo, L, int(n))
    idx, dist = _snap(nodes, interfaces, lo, L, "interface")
    if interface_ids is None:
        interface_ids = [f"S{k}" for k in range(len(idx))]
    if len(interface_ids) != len(idx):
        raise ConfigError("one identifier per interface position required")
    if idx and (min(idx) == 0 or max(idx) == n):
        raise ConflictError("an interface snapped onto a boundary node; refine the mesh")
    return Mesh1D(nodes, "left", "right", tuple(zip(idx, interface_ids)), units, tuple(dist))


def uniform_grid(Lx: float, Ly: float, nx: int, ny: int,
                 interface_x_positions: Sequence[float] = (), *,
                 periodic_y: bool = False, edge_tags: dict | None = None,
                 interface_ids: Sequence[str] | None = None, units: str = "") -> Grid2D:
    """Uniform grid on (0, Lx) x (0, Ly) with vertical interface lines."""
    for name, v in (("Lx", Lx), ("Ly", Ly)):
        if not (v > 0 and np.isfinite(v)):
            raise DomainError(f"{name} must be positive, got {v}")
    for name, v in (("nx", nx), ("ny", ny)):
        if int(v) != v or v < 2:
            raise DomainError(f"{name} must be an integer >= 2, got {v}")
    x = _uniform(0.0, Lx, int(nx))
    y = _uniform(0.0, Ly, int(ny))
    idx, dist = _snap(x, interface_x_positions, 0.0, Lx, "interface")
    if idx and (min(idx) == 0 or max(idx) == nx):
        raise ConflictError("an interface snapped onto a boundary line; refine the grid")
    if interface_ids is None:
        interface_ids = [f"S{k}" for k in range(len(idx))]
    if len(interface_ids) != len(idx):
        raise ConfigError("one identifier per interface position required")
    lines = tuple(("x", k, s) for k, s in zip(idx, interface_ids))
    return Grid2D(x, y, edge_tags or {}, lines, periodic_y, units, tuple(dist))


# -- file format ------------------------------------------------------------

def mesh_to_dict(mesh: Mesh1D | Grid2D) -> dict[str, Any]:
    if isinstance(mesh, Mesh1D):
        return {
            "dim": 1,
            "nodes": [float(v) for v in mesh.nodes],
            "boundary": {"left": mesh.boundary_left, "right": mesh.boundary_right},
            "interfaces": [{"node": i, "id": s} for i, s in mesh.interface_nodes],
            "units": mesh.units,
        }
    return {
        "dim": 2,
        "x_nodes": [float(v) for v in mesh.x_nodes],
        "y_nodes": [float(v) for v in mesh.y_nodes],
        "edges": {side: list(tags) for side, tags in mesh.edge_tags.items()},
        "interfaces": [{"axis": a, "index": k, "id": s} for a, k, s in mesh.interface_lines],
        "periodic_y": mesh.periodic_y,
        "units": mesh.units,
    }


def mesh_from_dict(d: dict[str, Any]) -> Mesh1D | Grid2D:
    """Build a mesh from its JSON object.

    Besides the explicit form written by :func:`mesh_to_dict`, a generator
    form is accepted: ``{"dim": 1, "uniform": {"L": 1, "n": 200,
    "interfaces": [0.5], "symmetric": false}}`` or, in 2D, ``{"dim": 2,
    "uniform": {"Lx", "Ly", "nx", "ny", "interfaces", "periodic_y"}}``.
    """
    try:
        dim = int(d["dim"])
        if "uniform" in d:
            u = dict(d["uniform"])
            if dim == 1:
                return uniform_interval(u["L"], u["n"], u.get("interfaces", []),
                                        symmetric=bool(u.get("symmetric", False)),
                                        interface_ids=u.get("interface_ids"),
                                        units=d.get("units", ""))
            return uniform_grid(u["Lx"], u["Ly"], u["nx"], u["ny"], u.get("interfaces", []),
                                periodic_y=bool(u.get("periodic_y", False)),
                                edge_tags=d.get("edges"), interface_ids=u.get("interface_ids"),
                                units=d.get("units", ""))
        if dim == 1:
            b = d.get("boundary", {})
            return Mesh1D(
                np.asarray(d["nodes"], dtype=float),
                b.get("left", "left"),
                b.get("right", "right"),
                tuple((f["node"], f["id"]) for f in d.get("interfaces", [])),
                d.get("units", ""),
            )
        if dim == 2:
            return Grid2D(
                np.asarray(d["x_nodes"], dtype=float),
                np.asarray(d["y_nodes"], dtype=float),
                d.get("edges", {}),
                tuple((f["axis"], f["index"], f["id"]) for f in d.get("interfaces", [])),
                bool(d.get("periodic_y", False)),
                d.get("units", ""),
            )
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"malformed mesh description: {exc!r}") from exc
    raise ConfigError(f"unsupported mesh dimension {d.get('dim')!r}")


def save_mesh(mesh: Mesh1D | Grid2D, path: str | Path):
    Path(path).write_text(json.dumps(mesh_to_dict(mesh), indent=1) + "\n")


def load_mesh(path: str | Path) -> Mesh1D | Grid2D:
    try:
        d = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read mesh file {path}: {exc}") from exc
    return mesh_from_dict(d)
