"""Galerkin assembly of sparse precision matrices.

The precision of the discrete field is the matrix of the bilinear form

    a(u, v) = int grad u . A grad v + int c u v
              + sum_Robin beta int_edge u v + sum_S alpha int_S u v

restricted to piecewise (bi)linear functions, with homogeneous Dirichlet
nodes eliminated. Mass matrices are consistent, not lumped.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Any, Callable, Mapping

import numpy as np
import scipy.sparse as sp

from .errors import ConfigError, DomainError, ModelError, NumericError
from .mesh import BoundaryCondition, Grid2D, Mesh1D

GAUSS_2 = np.array([-1.0, 1.0]) / np.sqrt(3.0)


# -- coefficient fields -----------------------------------------------------

@dataclass(frozen=True)
class Coefficient:
    """A coefficient field described by a named built-in.

    kinds
        ``constant``: ``value`` is a scalar, or a 2x2 matrix for a diffusion
        tensor.
        ``piecewise_x``: ``values[k]`` on ``breaks[k-1] <= x < breaks[k]``
        (``len(values) == len(breaks) + 1``).
        ``affine``: ``value + gradient . x``.
        ``callable``: ``func(points) -> values`` for library use; not
        serializable.
    """

    kind: str = "constant"
    params: Mapping[str, Any] = field(default_factory=dict)
    func: Callable | None = field(default=None, compare=False)

    @classmethod
    def constant(cls, value) -> "Coefficient":
        return cls("constant", {"value": value})

    @classmethod
    def from_json(cls, obj) -> "Coefficient":
        if isinstance(obj, (int, float)) or (isinstance(obj, list) and obj and isinstance(obj[0], list)):
            return cls.constant(obj)
        if not isinstance(obj, dict) or "kind" not in obj:
            raise ConfigError(f"cannot read coefficient {obj!r}")
        params = {k: v for k, v in obj.items() if k != "kind"}
        c = cls(obj["kind"], params)
        c.evaluate(np.zeros((1, 2)))  # validate parameters early
        return c

    def to_json(self):
        if self.kind == "callable":
            raise ConfigError("callable coefficients cannot be serialized")
        return {"kind": self.kind, **{k: v for k, v in self.params.items()}}

    def evaluate(self, pts: np.ndarray) -> np.ndarray:
        """Values at ``pts`` of shape (k, d); scalars (k,) or tensors (k, 2, 2)."""
        pts = np.atleast_2d(pts)
        k = pts.shape[0]
        p = self.params
        try:
            if self.kind == "constant":
                v = np.asarray(p["value"], dtype=float)
                return np.broadcast_to(v, (k,) + v.shape).copy()
            if self.kind == "piecewise_x":
                breaks = np.asarray(p["breaks"], dtype=float)
                values = np.asarray(p["values"], dtype=float)
                if values.shape[0] != breaks.size + 1:
                    raise ConfigError("piecewise_x needs len(values) == len(breaks) + 1")
                return values[np.searchsorted(breaks, pts[:, 0], side="right")]
            if self.kind == "affine":
                g = np.zeros(pts.shape[1])
                grad = np.atleast_1d(np.asarray(p.get("gradient", 0.0), dtype=float))
                g[: min(grad.size, g.size)] = grad[: g.size]
                return float(p["value"]) + pts @ g
            if self.kind == "callable":
                return np.asarray(self.func(pts), dtype=float)
        except KeyError as exc:
            raise ConfigError(f"coefficient {self.kind!r} missing parameter {exc}") from exc
        raise ConfigError(f"unknown coefficient kind {self.kind!r}")


def _coef(v) -> Coefficient:
    if isinstance(v, Coefficient):
        return v
    if callable(v):
        return Coefficient("callable", {}, v)
    return Coefficient.constant(v)


@dataclass(frozen=True)
class OperatorSpec:
    """Coefficients, boundary conditions and interface penalties of the form.

    ``bcs`` maps boundary tags to conditions; the tag ``"*"`` supplies the
    condition for every tag not listed. ``interface_penalties`` maps
    interface ids to ``alpha >= 0``; interfaces not listed get 0.
    """

    coeff_a: Coefficient = field(default_factory=lambda: Coefficient.constant(1.0))
    coeff_c: Coefficient = field(default_factory=lambda: Coefficient.constant(1.0))
    bcs: Mapping[str, BoundaryCondition] = field(default_factory=dict)
    interface_penalties: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "coeff_a", _coef(self.coeff_a))
        object.__setattr__(self, "coeff_c", _coef(self.coeff_c))
        bcs = {}
        for tag, bc in dict(self.bcs).items():
            if isinstance(bc, str):
                bc = BoundaryCondition(tag, bc)
            bcs[tag] = bc
        object.__setattr__(self, "bcs", bcs)
        pen = {str(k): float(v) for k, v in dict(self.interface_penalties).items()}
        for k, v in pen.items():
            if not (v >= 0 and np.isfinite(v)):
                raise ModelError(f"interface penalty for {k!r} must be finite and >= 0, got {v}")
        object.__setattr__(self, "interface_penalties", pen)

    @classmethod
    def from_mass(cls, m: float, bcs: Mapping | str = "dirichlet", *,
                  alpha_prime: float | None = None,
                  interface_penalties: Mapping[str, float] | None = None) -> "OperatorSpec":
        """Operator ``-k Laplace + m^2`` with ``k = 1/(2 pi alpha')`` (or 1).

        A string ``bcs`` applies that condition kind to every boundary tag.
        """
        if not m > 0:
            raise ModelError(f"mass must be positive, got {m}")
        k = 1.0 if alpha_prime is None else 1.0 / (2 * np.pi * alpha_prime)
        if isinstance(bcs, str):
            bcs = {"*": BoundaryCondition("*", bcs)}
        return cls(Coefficient.constant(k), Coefficient.constant(m * m), bcs,
                   interface_penalties or {})

    def with_bcs(self, bcs: Mapping | str) -> "OperatorSpec":
        if isinstance(bcs, str):
            bcs = {"*": BoundaryCondition("*", bcs)}
        return OperatorSpec(self.coeff_a, self.coeff_c, bcs, self.interface_penalties)

    def with_penalties(self, penalties: Mapping[str, float]) -> "OperatorSpec":
        return OperatorSpec(self.coeff_a, self.coeff_c, self.bcs, penalties)

    def bc_for(self, tag: str) -> BoundaryCondition:
        if tag in self.bcs:
            return self.bcs[tag]
        if "*" in self.bcs:
            return self.bcs["*"]
        raise ConfigError(f"no boundary condition given for boundary tag {tag!r}")

    def to_json(self) -> dict:
        return {
            "a": self.coeff_a.to_json(),
            "c": self.coeff_c.to_json(),
            "bcs": {t: {"kind": b.kind, **({"beta": b.beta} if b.kind == "robin" else {})}
                    for t, b in self.bcs.items()},
            "interfaces": dict(self.interface_penalties),
        }

    @classmethod
    def from_json(cls, d: Mapping) -> "OperatorSpec":
        """Read a model object (see ``schema/model.schema.json``)."""
        try:
            if "m" in d:
                k = 1.0 if d.get("alpha_prime") is None else 1.0 / (2 * np.pi * float(d["alpha_prime"]))
                a = Coefficient.constant(k) if "a" not in d else Coefficient.from_json(d["a"])
                c = Coefficient.constant(float(d["m"]) ** 2)
            else:
                a = Coefficient.from_json(d.get("a", 1.0))
                c = Coefficient.from_json(d.get("c", 0.0))
            bcs = {}
            for tag, b in d.get("bcs", {"*": "dirichlet"}).items():
                if isinstance(b, str):
                    b = {"kind": b}
                bcs[tag] = BoundaryCondition(tag, b["kind"], float(b.get("beta", 0.0)))
            return cls(a, c, bcs, d.get("interfaces", {}))
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"malformed model description: {exc!r}") from exc

    def hash(self) -> str:
        blob = json.dumps(self.to_json(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


# -- assembled precision ----------------------------------------------------

@dataclass(frozen=True)
class SparsePrecision:
    """Precision over free dofs plus the dof <-> node bookkeeping.

    ``dof_map[k]`` is the mesh node of free dof ``k``. ``node_alias`` sends
    every node to its representative (identity except for periodic
    identification); Dirichlet nodes are listed in ``dirichlet_nodes``.
    """

    Q: sp.csr_matrix
    dof_map: np.ndarray
    coords: np.ndarray
    dirichlet_nodes: np.ndarray
    node_alias: np.ndarray
    mesh: Any = field(default=None, compare=False, repr=False)
    spec: OperatorSpec | None = field(default=None, compare=False, repr=False)

    @property
    def n(self) -> int:
        return self.Q.shape[0]

    @property
    def n_nodes(self) -> int:
        return self.coords.shape[0]

    @property
    def dof_coords(self) -> np.ndarray:
        return self.coords[self.dof_map]

    @property
    def dof_of_node(self) -> np.ndarray:
        """Free dof index of each node (``-1`` for eliminated nodes)."""
        out = -np.ones(self.n_nodes, dtype=int)
        out[self.dof_map] = np.arange(self.dof_map.size)
        return out[self.node_alias]

    def dense(self) -> np.ndarray:
        return self.Q.toarray()

    def node_covariance(self) -> np.ndarray:
        """Dense ``Q^{-1}`` spread over all mesh nodes (zero rows at Dirichlet nodes)."""
        C = np.linalg.inv(self.dense())
        C = 0.5 * (C + C.T)
        d = self.dof_of_node
        full = np.zeros((self.n_nodes, self.n_nodes))
        ok = d >= 0
        full[np.ix_(ok, ok)] = C[np.ix_(d[ok], d[ok])]
        return full


def _check_coefficients(a_vals: np.ndarray, c_vals: np.ndarray, spd_anchor: bool):
    if a_vals.ndim == 1:
        if not np.all(np.isfinite(a_vals)) or np.any(a_vals <= 0):
            raise ModelError("diffusion coefficient must be finite and positive at every quadrature point")
    else:
        if not np.all(np.isfinite(a_vals)):
            raise ModelError("diffusion tensor must be finite")
        if np.any(a_vals != np.swapaxes(a_vals, -1, -2)):
            raise ModelError("diffusion tensor must be symmetric")
        if np.any(np.linalg.eigvalsh(a_vals)[:, 0] <= 0):
            raise ModelError("diffusion tensor is not uniformly elliptic at some quadrature point")
    if not np.all(np.isfinite(c_vals)) or np.any(c_vals < 0):
        raise ModelError("reaction coefficient c must be finite and >= 0")
    if not (c_vals.min() > 0 or spd_anchor):
        raise ModelError("need c >= c0 > 0 everywhere or at least one Dirichlet/Robin(beta>0) piece")


def _check_tags(mesh, spec: OperatorSpec):
    tags = mesh.boundary_tags
    extra = set(spec.bcs) - tags - {"*"}
    if extra:
        raise ConfigError(f"boundary conditions given for tags not on the mesh: {sorted(extra)}")
    missing = [t for t in tags if t not in spec.bcs and "*" not in spec.bcs]
    if missing:
        raise ConfigError(f"no boundary condition for mesh tags {sorted(missing)}")
    extra = set(spec.interface_penalties) - set(mesh.interface_ids)
    if extra:
        raise ConfigError(f"penalties given for interfaces not on the mesh: {sorted(extra)}")


def _finish(K: sp.spmatrix, n_nodes: int, dirichlet: set[int], alias: np.ndarray,
            coords: np.ndarray, mesh, spec) -> SparsePrecision:
    K = K.tocsr()
    K.sum_duplicates()
    reps = np.flatnonzero(alias == np.arange(n_nodes))
    free = np.array([i for i in reps if i not in dirichlet], dtype=int)
    if free.size == 0:
        raise ModelError("every node is eliminated by Dirichlet conditions")
    Q = K[free][:, free].tocsr()
    Q.sort_indices()
    return SparsePrecision(Q, free, coords, np.array(sorted(dirichlet), dtype=int), alias, mesh, spec)


def _element_matrices_1d(nodes: np.ndarray, a_fn: Coefficient | None, c_fn: Coefficient):
    h = np.diff(nodes)
    mid = 0.5 * (nodes[:-1] + nodes[1:])
    a = a_fn.evaluate(mid[:, None]) if a_fn is not None else np.zeros_like(h)
    c = c_fn.evaluate(mid[:, None])
    if a.ndim != 1 or c.ndim != 1:
        raise ModelError("1D coefficients must be scalar fields")
    return h, a, c


def _coo_1d(n_el: int, local: np.ndarray) -> sp.coo_matrix:
    """Scatter per-element 2x2 blocks ``local[e]`` onto nodes ``e, e+1``."""
    e = np.arange(n_el)
    rows = np.stack([e, e, e + 1, e + 1], axis=1).ravel()
    cols = np.stack([e, e + 1, e, e + 1], axis=1).ravel()
    return sp.coo_matrix((local.reshape(n_el, 4).ravel(), (rows, cols)), shape=(n_el + 1, n_el + 1))


def assemble_1d(mesh: Mesh1D, spec: OperatorSpec) -> SparsePrecision:
    """Piecewise-linear precision of ``-(a u')' + c u`` on an interval mesh.

    Element ``e`` of length ``h`` contributes ``a_e/h [[1,-1],[-1,1]]`` and
    ``c_e h/6 [[2,1],[1,2]]`` with coefficients taken at the midpoint. Robin
    adds ``beta`` at its boundary node, an interface node gets ``+alpha``.
    """
    if not isinstance(mesh, Mesh1D):
        raise ConfigError("assemble_1d needs a Mesh1D")
    _check_tags(mesh, spec)
    h, a, c = _element_matrices_1d(mesh.nodes, spec.coeff_a, spec.coeff_c)
    bcs = {0: spec.bc_for(mesh.boundary_left), mesh.n_elements: spec.bc_for(mesh.boundary_right)}
    anchor = any(b.kind == "dirichlet" or (b.kind == "robin" and b.beta > 0) for b in bcs.values())
    _check_coefficients(a, c, anchor)

    K1 = np.array([[1.0, -1.0], [-1.0, 1.0]])
    M1 = np.array([[2.0, 1.0], [1.0, 2.0]]) / 6.0
    local = (a / h)[:, None, None] * K1 + (c * h)[:, None, None] * M1
    K = _coo_1d(mesh.n_elements, local).tocsr()

    diag = np.zeros(mesh.n_nodes)
    dirichlet = set()
    for node, bc in bcs.items():
        if bc.kind == "dirichlet":
            dirichlet.add(node)
        elif bc.kind == "robin":
            diag[node] += bc.beta
    for node, sid in mesh.interface_nodes:
        diag[node] += spec.interface_penalties.get(sid, 0.0)
    K = K + sp.diags(diag)
    alias = np.arange(mesh.n_nodes)
    return _finish(K, mesh.n_nodes, dirichlet, alias, mesh.coords, mesh, spec)


def _bilinear_reference():
    """Shape values N[q, a] and reference gradients dN[q, a, (xi, eta)] at 2x2 Gauss points."""
    sx = np.array([-1.0, 1.0, 1.0, -1.0])
    sy = np.array([-1.0, -1.0, 1.0, 1.0])
    qx, qy = np.meshgrid(GAUSS_2, GAUSS_2, indexing="xy")
    qx, qy = qx.ravel(), qy.ravel()
    N = 0.25 * (1 + qx[:, None] * sx) * (1 + qy[:, None] * sy)
    dN = np.stack([0.25 * sx * (1 + qy[:, None] * sy),
                   0.25 * sy * (1 + qx[:, None] * sx)], axis=-1)
    return qx, qy, N, dN


def _grid_elements(grid: Grid2D):
    """Element node indices (counter-clockwise) and per-element geometry."""
    nx, ny = grid.nx, grid.ny
    I, J = np.meshgrid(np.arange(nx), np.arange(ny), indexing="xy")
    I, J = I.ravel(), J.ravel()
    conn = np.stack([grid.node(I, J), grid.node(I + 1, J),
                     grid.node(I + 1, J + 1), grid.node(I, J + 1)], axis=1)
    x0, hx = grid.x_nodes[I], np.diff(grid.x_nodes)[I]
    y0, hy = grid.y_nodes[J], np.diff(grid.y_nodes)[J]
    return conn, x0, y0, hx, hy


def _edge_mass(n_nodes: int, segs, coords: np.ndarray, weight: Callable[[str], float]) -> sp.coo_matrix:
    rows, cols, vals = [], [], []
    for sid, p, q in segs:
        w = weight(sid)
        if w == 0:
            continue
        h = float(np.linalg.norm(coords[q] - coords[p]))
        loc = w * h / 6.0 * np.array([2.0, 1.0, 1.0, 2.0])
        rows += [p, p, q, q]
        cols += [p, q, p, q]
        vals += list(loc)
    return sp.coo_matrix((vals, (rows, cols)), shape=(n_nodes, n_nodes))


def assemble_2d(grid: Grid2D, spec: OperatorSpec) -> SparsePrecision:
    """Bilinear-quadrilateral precision of ``-div(A grad u) + c u`` on a grid.

    Stiffness and mass use 2x2 Gauss quadrature. Each interface line adds
    ``alpha`` times its 1D linear-element mass matrix (the discrete surface
    penalty); Robin edges add ``beta`` times their edge mass matrix.
    """
    if not isinstance(grid, Grid2D):
        raise ConfigError("assemble_2d needs a Grid2D")
    _check_tags(grid, spec)
    conn, x0, y0, hx, hy = _grid_elements(grid)
    qx, qy, N, dN = _bilinear_reference()
    n_el = conn.shape[0]
    # physical Gauss points, (n_el, 4, 2)
    px = x0[:, None] + 0.5 * hx[:, None] * (1 + qx)
    py = y0[:, None] + 0.5 * hy[:, None] * (1 + qy)
    pts = np.stack([px, py], axis=-1).reshape(-1, 2)

    a = spec.coeff_a.evaluate(pts)
    if a.ndim == 1:
        A = a[:, None, None] * np.eye(2)
    elif a.shape[1:] == (2, 2):
        A = a
    else:
        raise ModelError("2D diffusion must be a scalar or a 2x2 tensor field")
    c = spec.coeff_c.evaluate(pts)
    if c.ndim != 1:
        raise ModelError("reaction coefficient must be a scalar field")

    segs = grid.boundary_segments()
    bc_of = {tag: spec.bc_for(tag) for tag, _, _ in segs}
    anchor = any(b.kind == "dirichlet" or (b.kind == "robin" and b.beta > 0) for b in bc_of.values())
    _check_coefficients(a if a.ndim == 1 else A, c, anchor)

    A = A.reshape(n_el, 4, 2, 2)
    c = c.reshape(n_el, 4)
    detJ = 0.25 * hx * hy
    # physical gradients: dN/dx = dN/dxi * 2/hx, dN/dy = dN/deta * 2/hy
    scale = np.stack([2.0 / hx, 2.0 / hy], axis=-1)  # (n_el, 2)
    G = dN[None, :, :, :] * scale[:, None, None, :]  # (n_el, q, a, d)
    Ke = np.einsum("eqad,eqdk,eqbk->eab", G, A, G) * detJ[:, None, None]
    Me = np.einsum("eq,qa,qb->eab", c, N, N) * detJ[:, None, None]
    local = Ke + Me
    local = 0.5 * (local + np.swapaxes(local, 1, 2))

    alias = np.arange(grid.n_nodes)
    if grid.periodic_y:
        top = grid.node(np.arange(grid.nx + 1), grid.ny)
        alias[top] = grid.node(np.arange(grid.nx + 1), 0)
    conn = alias[conn]
    rows = np.repeat(conn, 4, axis=1).ravel()
    cols = np.tile(conn, (1, 4)).ravel()
    K = sp.coo_matrix((local.ravel(), (rows, cols)), shape=(grid.n_nodes, grid.n_nodes))

    coords = grid.coords
    dirichlet = set()
    for tag, p, q in segs:
        if bc_of[tag].kind == "dirichlet":
            dirichlet.update((int(alias[p]), int(alias[q])))
    robin = _edge_mass(grid.n_nodes, [(t, alias[p], alias[q]) for t, p, q in segs], coords,
                       lambda t: bc_of[t].beta if bc_of[t].kind == "robin" else 0.0)
    iface = _edge_mass(grid.n_nodes, [(s, alias[p], alias[q]) for s, p, q in grid.interface_segments()],
                       coords, lambda s: spec.interface_penalties.get(s, 0.0))
    K = K.tocsr() + robin.tocsr() + iface.tocsr()
    return _finish(K, grid.n_nodes, dirichlet, alias, coords, grid, spec)


def assemble(mesh, spec: OperatorSpec) -> SparsePrecision:
    if isinstance(mesh, Mesh1D):
        return assemble_1d(mesh, spec)
    return assemble_2d(mesh, spec)


def mass_matrix(prec: SparsePrecision) -> sp.csr_matrix:
    """Unit-coefficient consistent mass matrix on the free dofs of ``prec``."""
    mesh = prec.mesh
    if isinstance(mesh, Mesh1D):
        h = np.diff(mesh.nodes)
        M1 = np.array([[2.0, 1.0], [1.0, 2.0]]) / 6.0
        M = _coo_1d(mesh.n_elements, h[:, None, None] * M1).tocsr()
    else:
        conn, _, _, hx, hy = _grid_elements(mesh)
        _, _, N, _ = _bilinear_reference()
        Me = np.einsum("qa,qb->ab", N, N)[None] * (0.25 * hx * hy)[:, None, None]
        conn = prec.node_alias[conn]
        M = sp.coo_matrix((Me.ravel(), (np.repeat(conn, 4, axis=1).ravel(), np.tile(conn, (1, 4)).ravel())),
                          shape=(mesh.n_nodes, mesh.n_nodes)).tocsr()
    f = prec.dof_map
    return M[f][:, f].tocsr()


def interpolation_matrix(prec: SparsePrecision, points) -> sp.csr_matrix:
    """Rows of hat-function weights evaluating the field at ``points``.

    Weights on eliminated (Dirichlet) nodes are dropped since the field is
    zero there.
    """
    mesh = prec.mesh
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if isinstance(mesh, Mesh1D) and pts.shape[0] == 1 and pts.shape[1] != 1:
        pts = pts.T
    dof = prec.dof_of_node
    rows, cols, vals = [], [], []

    def locate(nodes, v):
        lo, hi = nodes[0], nodes[-1]
        tol = 1e-12 * (hi - lo)
        if not (lo - tol <= v <= hi + tol):
            raise DomainError(f"point coordinate {v} outside the mesh [{lo}, {hi}]")
        k = int(np.clip(np.searchsorted(nodes, v, side="right") - 1, 0, nodes.size - 2))
        t = (v - nodes[k]) / (nodes[k + 1] - nodes[k])
        return k, float(np.clip(t, 0.0, 1.0))

    for r, p in enumerate(pts):
        if isinstance(mesh, Mesh1D):
            k, t = locate(mesh.nodes, p[0])
            entries = [(k, 1 - t), (k + 1, t)]
        else:
            i, s = locate(mesh.x_nodes, p[0])
            yv = p[1]
            if mesh.periodic_y:
                y0, y1 = mesh.y_nodes[0], mesh.y_nodes[-1]
                yv = y0 + np.mod(yv - y0, y1 - y0)
            j, t = locate(mesh.y_nodes, yv)
            entries = [(mesh.node(i, j), (1 - s) * (1 - t)), (mesh.node(i + 1, j), s * (1 - t)),
                       (mesh.node(i + 1, j + 1), s * t), (mesh.node(i, j + 1), (1 - s) * t)]
        for node, w in entries:
            if w != 0 and dof[node] >= 0:
                rows.append(r)
                cols.append(dof[node])
                vals.append(w)
    R = sp.coo_matrix((vals, (rows, cols)), shape=(pts.shape[0], prec.n)).tocsr()
    R.sum_duplicates()
    return R


# -- product with a circle --------------------------------------------------

def circle_eigenvalue(n: int, radius: float) -> float:
    return (n / radius) ** 2


def _mode_weight(n: int, radius: float, measure: str) -> float:
    """Sum over the cos/sin pair of phi_n phi_n' equals weight * cos(n (theta - theta'))."""
    if measure == "riemannian":
        return 1.0 / (2 * np.pi * radius) if n == 0 else 1.0 / (np.pi * radius)
    if measure == "normalized":
        return 1.0 if n == 0 else 2.0
    raise ConfigError(f"unknown circle measure {measure!r}")


def product_mode_solve(base: SparsePrecision, radius: float, n_modes: int,
                       rhs_modes: Mapping[int, np.ndarray]) -> dict[int, np.ndarray]:
    """Solve ``(Q_base + lambda_n M) u_n = f_n`` for each requested circle mode.

    ``lambda_n = (n / radius)^2`` shifts the effective mass to
    ``m^2 + lambda_n``; cosine and sine partners share the same system.
    """
    from .gaussian import Cholesky

    if n_modes < 0 or not radius > 0:
        raise DomainError("need n_modes >= 0 and radius > 0")
    M = mass_matrix(base)
    out = {}
    for n, f in sorted(rhs_modes.items()):
        if not 0 <= n <= n_modes:
            raise DomainError(f"mode {n} outside the retained range 0..{n_modes}")
        Qn = base.Q + circle_eigenvalue(n, radius) * M
        try:
            out[n] = Cholesky(Qn).solve(np.asarray(f, dtype=float))
        except NumericError as exc:
            raise NumericError(f"shifted system for mode {n} is singular") from exc
    return out


@dataclass
class ProductCovariance:
    cov: np.ndarray
    mode_values: np.ndarray  # (n_modes + 1, len(a), len(b)) weighted G_n(sigma, sigma') terms
    tail_bound: float | None = None


def product_covariance(base: SparsePrecision, radius: float, n_modes: int,
                       points_a, points_b, *, measure: str = "riemannian",
                       tail: bool = False, tail_extra: int = 64) -> ProductCovariance:
    """Covariance between points ``(sigma, theta)`` of interval x circle.

    ``theta`` is the angle on the circle of the given radius (arc length
    ``radius * theta``). The sum over the retained modes ``0..n_modes`` is

        C = sum_n w_n G_n(sigma, sigma') cos(n (theta - theta')),

    with ``G_n`` the discrete Green matrix of the shifted base system and
    ``w_n`` from the chosen circle measure (``riemannian``: arc length;
    ``normalized``: unit total mass, so mode 0 is the plain base field).

    With ``tail=True`` an upper bound on the pointwise variance carried by
    the discarded modes is returned: ``tail_extra`` further modes exactly,
    and beyond that the Loewner bound ``(Q + lambda M)^{-1} <= M^{-1}/lambda``.
    """
    from .gaussian import Cholesky

    pa = np.atleast_2d(np.asarray(points_a, dtype=float))
    pb = np.atleast_2d(np.asarray(points_b, dtype=float))
    Ra = interpolation_matrix(base, pa[:, :1])
    Rb = interpolation_matrix(base, pb[:, :1])
    M = mass_matrix(base)
    dtheta = pa[:, 1][:, None] - pb[:, 1][None, :]
    terms = []
    for n in range(n_modes + 1):
        F = Cholesky(base.Q + circle_eigenvalue(n, radius) * M)
        Gn = Ra @ F.solve(Rb.T.toarray())
        terms.append(_mode_weight(n, radius, measure) * Gn * np.cos(n * dtheta))
    terms = np.array(terms)
    bound = None
    if tail:
        var = np.zeros(base.n)
        for n in range(n_modes + 1, n_modes + 1 + tail_extra):
            F = Cholesky(base.Q + circle_eigenvalue(n, radius) * M)
            var += _mode_weight(n, radius, measure) * F.diag_inverse()
        K = n_modes + tail_extra
        minv = Cholesky(M).diag_inverse()
        # sum_{n > K} w / (n/r)^2 <= w r^2 / K
        var += _mode_weight(1, radius, measure) * minv * radius ** 2 / K
        bound = float(var.max())
    return ProductCovariance(terms.sum(axis=0), terms, bound)
