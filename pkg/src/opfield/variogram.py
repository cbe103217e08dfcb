"""Exact and empirical variograms, pair-class diagnostics and pullbacks."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .assembly import OperatorSpec, assemble
from .errors import DomainError

CLASSES = ("all", "interior", "near_boundary", "same_side", "cross_interface")
MAX_DENSE_NODES = 500


def variogram_matrix(C, idx=None) -> np.ndarray:
    """``gamma_ij = (C_ii + C_jj - 2 C_ij) / 2`` over the (optionally indexed) points."""
    C = np.atleast_2d(np.asarray(C, dtype=float))
    if idx is not None:
        idx = np.asarray(idx, dtype=int)
        C = C[np.ix_(idx, idx)]
    d = np.diag(C)
    g = 0.5 * (d[:, None] + d[None, :] - 2 * C)
    g = 0.5 * (g + g.T)
    np.fill_diagonal(g, 0.0)
    return np.maximum(g, 0.0)


def correlation_matrix(C) -> np.ndarray:
    """Covariance of the standardized field ``Z / sd``; points with zero variance are dropped to 0."""
    C = np.atleast_2d(np.asarray(C, dtype=float))
    d = np.sqrt(np.clip(np.diag(C), 0.0, None))
    inv = np.divide(1.0, d, out=np.zeros_like(d), where=d > 0)
    return C * inv[:, None] * inv[None, :]


def empirical_variogram_matrix(samples) -> np.ndarray:
    """Pairwise mean of ``(Z_i - Z_j)^2 / 2`` over samples (columns)."""
    Z = np.atleast_2d(np.asarray(samples, dtype=float))
    S = Z @ Z.T / Z.shape[1]
    return variogram_matrix(S)


@dataclass(frozen=True)
class PairClasses:
    """How pairs are split into classes.

    ``bounds`` gives ``(lo, hi)`` per axis; axes listed in ``periodic_axes``
    have no boundary. A point is near the boundary when its distance to it is
    at most ``buffer``. ``interfaces`` are positions (1D) or ``(axis,
    position)`` pairs; a point's side is the number of interfaces strictly
    below it along each axis, so a point on an interface belongs to the lower
    side.
    """

    bounds: Sequence[tuple[float, float]]
    buffer: float | None = None
    interfaces: Sequence = ()
    periodic_axes: Sequence[int] = ()

    def boundary_distance(self, pts: np.ndarray) -> np.ndarray:
        d = np.full(pts.shape[0], np.inf)
        for ax, (lo, hi) in enumerate(self.bounds):
            if ax in self.periodic_axes:
                continue
            d = np.minimum(d, np.minimum(pts[:, ax] - lo, hi - pts[:, ax]))
        return d

    def sides(self, pts: np.ndarray) -> np.ndarray:
        out = np.zeros((pts.shape[0], len(self.bounds)), dtype=int)
        for f in self.interfaces:
            ax, pos = (0, f) if np.ndim(f) == 0 else (int(f[0]), float(f[1]))
            out[:, ax] += pts[:, ax] > pos
        return out


@dataclass
class VariogramTable:
    """Rows ``(lag, pair class, pair count, mean semivariance)``."""

    lag: np.ndarray
    pair_class: list[str]
    count: np.ndarray
    semivariance: np.ndarray
    meta: dict = field(default_factory=dict)

    def select(self, cls: str) -> "VariogramTable":
        k = np.array([c == cls for c in self.pair_class], dtype=bool)
        return VariogramTable(self.lag[k], [cls] * int(k.sum()), self.count[k], self.semivariance[k])

    def rows(self):
        for row in zip(self.lag, self.pair_class, self.count, self.semivariance):
            yield float(row[0]), row[1], int(row[2]), float(row[3])

    def __len__(self):
        return self.lag.size


def default_bins(points, n_bins: int = 15) -> np.ndarray:
    """Equal-width lag bins up to half the diameter of the point set."""
    pts = _points(points)
    diam = float(np.linalg.norm(pts.max(axis=0) - pts.min(axis=0)))
    return np.linspace(0.0, 0.5 * diam, n_bins + 1)


def _points(points) -> np.ndarray:
    pts = np.asarray(points, dtype=float)
    return pts[:, None] if pts.ndim == 1 else pts


def pair_masks(points, classes: PairClasses | None) -> dict[str, np.ndarray]:
    """Boolean (n, n) masks of the i<j pairs in each emitted class."""
    pts = _points(points)
    n = pts.shape[0]
    upper = np.triu(np.ones((n, n), dtype=bool), 1)
    masks = {"all": upper}
    if classes is None:
        return masks
    if classes.buffer is not None:
        near = classes.boundary_distance(pts) <= classes.buffer
        either = near[:, None] | near[None, :]
        masks["interior"] = upper & ~either
        masks["near_boundary"] = upper & either
    if len(classes.interfaces):
        s = classes.sides(pts)
        same = np.all(s[:, None, :] == s[None, :, :], axis=-1)
        masks["same_side"] = upper & same
        masks["cross_interface"] = upper & ~same
    return masks


def bin_variogram(gamma, points, bins=None, classes: PairClasses | None = None) -> VariogramTable:
    """Average a pairwise semivariance matrix by lag bin and pair class.

    Empty class/bin combinations are omitted.
    """
    pts = _points(points)
    gamma = np.asarray(gamma, dtype=float)
    bins = default_bins(pts) if bins is None else np.asarray(bins, dtype=float)
    if bins.ndim != 1 or bins.size < 2 or np.any(np.diff(bins) <= 0):
        raise DomainError("lag bin edges must be strictly increasing")
    lag = np.linalg.norm(pts[:, None, :] - pts[None, :, :], axis=-1)
    which = np.searchsorted(bins, lag, side="right") - 1
    which[lag == bins[-1]] = bins.size - 2
    inside = (which >= 0) & (which < bins.size - 1)
    centers = 0.5 * (bins[:-1] + bins[1:])
    L, C, N, G = [], [], [], []
    for cls, mask in pair_masks(pts, classes).items():
        sel = mask & inside
        w = which[sel]
        g = gamma[sel]
        cnt = np.bincount(w, minlength=bins.size - 1)
        tot = np.bincount(w, weights=g, minlength=bins.size - 1)
        for b in np.flatnonzero(cnt):
            L.append(centers[b])
            C.append(cls)
            N.append(cnt[b])
            G.append(tot[b] / cnt[b])
    return VariogramTable(np.array(L), C, np.array(N, dtype=int), np.array(G))


def empirical_variogram(samples, points, bins=None, classes: PairClasses | None = None,
                        standardize: bool = False) -> VariogramTable:
    """Binned empirical semivariance from centered field samples (one column per sample).

    With ``standardize`` each point's samples are divided by their empirical
    standard deviation first, so the table estimates ``1 - correlation``.
    """
    Z = np.atleast_2d(np.asarray(samples, dtype=float))
    if Z.shape[1] < 2:
        raise DomainError("need at least 2 samples")
    if Z.shape[0] != _points(points).shape[0]:
        raise DomainError("samples and points disagree on the number of points")
    if standardize:
        sd = np.sqrt(np.mean(Z * Z, axis=1))
        Z = Z * np.divide(1.0, sd, out=np.zeros_like(sd), where=sd > 0)[:, None]
    table = bin_variogram(empirical_variogram_matrix(Z), points, bins, classes)
    table.meta["n_samples"] = Z.shape[1]
    table.meta["standardized"] = standardize
    return table


def pullback_covariance(C_W: Callable, f: Callable, points, domain=None) -> np.ndarray:
    """Covariance ``C_W(f(x), f(x'))`` of the deformed field ``W(f(x))``.

    ``domain`` is ``(lo, hi)`` (1D) or a list of per-axis bounds; images
    outside it raise :class:`DomainError`.
    """
    pts = np.asarray(points, dtype=float)
    fx = np.asarray(f(pts), dtype=float)
    if domain is not None:
        dom = np.atleast_2d(np.asarray(domain, dtype=float))
        img = fx[:, None] if fx.ndim == 1 else fx
        if np.any(img < dom[:, 0]) or np.any(img > dom[:, 1]):
            raise DomainError("mapping sends points outside the domain of the covariance")
    if fx.ndim == 1:
        C = np.asarray(C_W(fx[:, None], fx[None, :]), dtype=float)
    else:
        C = np.asarray(C_W(fx[:, None, :], fx[None, :, :]), dtype=float)
    return 0.5 * (C + C.T)


@dataclass
class BCComparison:
    coords: np.ndarray
    C_D: np.ndarray
    C_N: np.ndarray
    gamma_D: np.ndarray
    gamma_N: np.ndarray

    @property
    def diff(self) -> np.ndarray:
        return self.gamma_D - self.gamma_N

    def argmax_diff(self) -> tuple[int, int]:
        i, j = np.unravel_index(np.argmax(np.abs(self.diff)), self.diff.shape)
        return int(min(i, j)), int(max(i, j))

    def row_max_diff(self) -> np.ndarray:
        return np.abs(self.diff).max(axis=1)


def bc_compare(mesh, spec_D: OperatorSpec, spec_N: OperatorSpec) -> BCComparison:
    """Dirichlet and Neumann assemblies of one operator, inverted densely over all nodes."""
    if mesh.n_nodes > MAX_DENSE_NODES:
        raise DomainError(f"bc_compare inverts densely; {mesh.n_nodes} nodes > {MAX_DENSE_NODES}")
    PD = assemble(mesh, spec_D)
    PN = assemble(mesh, spec_N)
    CD = PD.node_covariance()
    CN = PN.node_covariance()
    return BCComparison(PD.coords, CD, CN, variogram_matrix(CD), variogram_matrix(CN))
