"""Exact Gaussian linear algebra on sparse precisions.

All solves, log-determinants and samples go through :class:`Cholesky`, a
banded Cholesky factorization after a reverse Cuthill-McKee reordering. For
the 1D meshes and structured grids used here the bandwidth after reordering
is O(1) and O(min(nx, ny)) respectively, so the factor stays sparse.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
from scipy.linalg import lapack
from scipy.sparse.csgraph import reverse_cuthill_mckee

from .assembly import SparsePrecision, interpolation_matrix
from .errors import ConfigError, ConstraintDegeneracyError, DomainError, ModelError, NumericError


def rng_for(seed: int, stream: int = 0) -> np.random.Generator:
    """Counter-based (Philox) generator for ``(seed, stream)``."""
    if not 0 <= int(seed) < 2 ** 64:
        raise ConfigError(f"seed must be an unsigned 64-bit integer, got {seed}")
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(stream)])))


def _csr(Q) -> sp.csr_matrix:
    if isinstance(Q, SparsePrecision):
        return Q.Q
    if sp.issparse(Q):
        return sp.csr_matrix(Q)
    return sp.csr_matrix(np.atleast_2d(np.asarray(Q, dtype=float)))


def as_precision(Q) -> SparsePrecision:
    """Wrap a bare matrix as a :class:`SparsePrecision` over abstract dofs."""
    if isinstance(Q, SparsePrecision):
        return Q
    Q = _csr(Q)
    n = Q.shape[0]
    idx = np.arange(n)
    return SparsePrecision(Q, idx, idx[:, None].astype(float), np.array([], dtype=int), idx)


class Cholesky:
    """``P Q P^T = U^T U`` with ``P`` the RCM permutation and ``U`` banded upper.

    Immutable after construction; concurrent solves are safe.
    """

    def __init__(self, Q):
        Q = _csr(Q)
        n = Q.shape[0]
        if Q.shape != (n, n) or n == 0:
            raise DomainError(f"need a nonempty square matrix, got shape {Q.shape}")
        perm = reverse_cuthill_mckee(Q, symmetric_mode=True)
        Qp = Q[perm][:, perm].tocoo()
        upper = Qp.col >= Qp.row
        r, c, v = Qp.row[upper], Qp.col[upper], Qp.data[upper]
        bw = int((c - r).max()) if r.size else 0
        ab = np.zeros((bw + 1, n))
        np.add.at(ab, (bw + r - c, c), v)
        try:
            U = sla.cholesky_banded(ab, lower=False, check_finite=True)
        except (np.linalg.LinAlgError, ValueError) as exc:
            raise NumericError(f"Cholesky factorization failed: {exc}") from exc
        self.n = n
        self.bandwidth = bw
        self.perm = perm
        self.iperm = np.argsort(perm)
        self._U = U
        self._U.setflags(write=False)

    @property
    def logdet(self) -> float:
        return 2.0 * float(np.sum(np.log(self._U[-1])))

    def solve(self, b) -> np.ndarray:
        """``Q^{-1} b`` for a vector or a matrix of right-hand sides."""
        b = np.asarray(b, dtype=float)
        x = sla.cho_solve_banded((self._U, False), b[self.perm], check_finite=False)
        return x[self.iperm]

    def solve_upper(self, xi) -> np.ndarray:
        """``eta`` with ``U eta = xi`` (then un-permuted); ``eta ~ N(0, Q^{-1})`` for white ``xi``."""
        xi = np.asarray(xi, dtype=float)
        vec = xi.ndim == 1
        x, info = lapack.dtbtrs(self._U, xi.reshape(self.n, -1), uplo="U", trans="N", diag="N")
        if info != 0:
            raise NumericError(f"triangular solve failed (info={info})")
        x = x[self.iperm]
        return x[:, 0] if vec else x

    def diag_inverse(self) -> np.ndarray:
        """Diagonal of ``Q^{-1}`` by the Takahashi recursion on the banded factor."""
        n, bw, U = self.n, self.bandwidth, self._U
        diag = np.empty(n)
        win = np.zeros((bw + 1, bw + 1))  # Sigma over permuted indices i..i+bw
        for i in range(n - 1, -1, -1):
            k = min(bw, n - 1 - i)
            uii = U[bw, i]
            u = U[bw - np.arange(1, k + 1), i + np.arange(1, k + 1)]
            new = np.zeros_like(win)
            new[1:, 1:] = win[:-1, :-1]
            row = -(u @ new[1:k + 1, 1:k + 1]) / uii
            new[0, 1:k + 1] = row
            new[1:k + 1, 0] = row
            new[0, 0] = 1.0 / uii ** 2 - (u @ row) / uii
            diag[i] = new[0, 0]
            win = new
        return diag[self.iperm]

    def inverse(self) -> np.ndarray:
        C = self.solve(np.eye(self.n))
        return 0.5 * (C + C.T)


# -- observations and posteriors ---------------------------------------------

@dataclass(frozen=True)
class ObservationSet:
    """``z = R Z + eps`` with ``eps ~ N(0, diag(noise))``.

    ``noise`` holds variances. Zero entries are allowed only for
    :func:`hard_condition`. A 2D ``z`` of shape (k, r) holds ``r``
    independent realizations observed through the same design; only the
    likelihood functions accept that form.
    """

    R: sp.csr_matrix
    z: np.ndarray
    noise: np.ndarray
    coords: np.ndarray | None = None

    def __post_init__(self):
        R = sp.csr_matrix(self.R)
        z = np.atleast_1d(np.asarray(self.z, dtype=float))
        if z.ndim > 2:
            raise ConfigError("observed values must be a vector or a (k, r) matrix")
        try:
            N = np.broadcast_to(np.asarray(self.noise, dtype=float), z.shape[:1]).copy()
        except ValueError as exc:
            raise ConfigError(f"{z.shape[0]} values but noise of shape {np.shape(self.noise)}") from exc
        if R.shape[0] != z.shape[0]:
            raise ConfigError(f"design has {R.shape[0]} rows but {z.shape[0]} values")
        if np.any(N < 0) or not np.all(np.isfinite(N)):
            raise ConfigError("noise variances must be finite and >= 0")
        if R.shape[0] and np.any(np.diff(R.indptr) == 0):
            raise ConfigError("an observation row touches no free dof (e.g. a point on a Dirichlet boundary)")
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "z", z)
        object.__setattr__(self, "noise", N)

    def __len__(self):
        return self.z.shape[0]

    @property
    def replicated(self) -> bool:
        return self.z.ndim == 2

    @classmethod
    def empty(cls, n: int) -> "ObservationSet":
        return cls(sp.csr_matrix((0, n)), np.zeros(0), np.zeros(0))

    def permuted(self, order) -> "ObservationSet":
        order = np.asarray(order)
        coords = None if self.coords is None else self.coords[order]
        return ObservationSet(self.R[order], self.z[order], self.noise[order], coords)


def point_observations(prec: SparsePrecision, points, values, noise_sd=0.0) -> ObservationSet:
    """Point evaluations of the field through hat-function interpolation weights."""
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 1:
        pts = pts[:, None]
    R = interpolation_matrix(prec, pts)
    sd = np.broadcast_to(np.asarray(noise_sd, dtype=float), (pts.shape[0],))
    return ObservationSet(R, values, sd ** 2, pts)


def _sample_from(factor: Cholesky, mean: np.ndarray, count: int, seed: int, stream: int) -> np.ndarray:
    xi = rng_for(seed, stream).standard_normal((factor.n, int(count)))
    return mean[:, None] + factor.solve_upper(xi)


@dataclass(frozen=True)
class Posterior:
    """Gaussian ``N(mean, Q_post^{-1})`` with the factorization of ``Q_post`` kept."""

    mean: np.ndarray
    Q: sp.csr_matrix
    factor: Cholesky = field(repr=False)
    prec: SparsePrecision | None = field(default=None, repr=False)

    @property
    def logdet(self) -> float:
        return self.factor.logdet

    def variance(self) -> np.ndarray:
        return self.factor.diag_inverse()

    def sd(self) -> np.ndarray:
        return np.sqrt(self.variance())

    def covariance(self) -> np.ndarray:
        return self.factor.inverse()

    def sample(self, count: int, seed: int, stream: int = 0) -> np.ndarray:
        return _sample_from(self.factor, self.mean, count, seed, stream)


@dataclass(frozen=True)
class HardPosterior:
    """Prior conditioned on exact linear constraints ``R Z = z``.

    ``CRt = Q^{-1} R^T`` and the Cholesky factor of ``S = R Q^{-1} R^T`` are
    kept so the posterior covariance ``C - CRt S^{-1} CRt^T`` can be applied
    without forming ``C``.
    """

    mean: np.ndarray
    prior_factor: Cholesky = field(repr=False)
    CRt: np.ndarray = field(repr=False)
    S_chol: Any = field(repr=False)
    R: sp.csr_matrix = field(repr=False)
    prec: SparsePrecision | None = field(default=None, repr=False)

    def variance(self) -> np.ndarray:
        W = sla.cho_solve(self.S_chol, self.CRt.T)
        v = self.prior_factor.diag_inverse() - np.einsum("ij,ji->i", self.CRt, W)
        return np.maximum(v, 0.0)

    def sd(self) -> np.ndarray:
        return np.sqrt(self.variance())

    def covariance(self) -> np.ndarray:
        C = self.prior_factor.inverse()
        C = C - self.CRt @ sla.cho_solve(self.S_chol, self.CRt.T)
        return 0.5 * (C + C.T)

    def sample(self, count: int, seed: int, stream: int = 0) -> np.ndarray:
        """Conditioning by kriging: prior draw corrected by the kriged residual."""
        eta = _sample_from(self.prior_factor, np.zeros(self.prior_factor.n), count, seed, stream)
        resid = self.R @ eta
        return self.mean[:, None] + eta - self.CRt @ sla.cho_solve(self.S_chol, resid)


def condition_covariance(Sxx, Sxy, Syy, x) -> tuple[np.ndarray, np.ndarray]:
    """Law of ``Y | X = x`` for a centered joint Gaussian given in covariance blocks.

    Returns ``(Syx Sxx^{-1} x, Syy - Syx Sxx^{-1} Sxy)``.
    """
    Sxx = np.atleast_2d(np.asarray(Sxx, dtype=float))
    Sxy = np.asarray(Sxy, dtype=float).reshape(Sxx.shape[0], -1)
    Syy = np.atleast_2d(np.asarray(Syy, dtype=float))
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if Syy.shape != (Sxy.shape[1],) * 2 or x.size != Sxx.shape[0]:
        raise DomainError("covariance blocks and observed vector have inconsistent shapes")
    if Sxx.shape[0] == 0:
        return np.zeros(Syy.shape[0]), Syy.copy()
    try:
        cf = sla.cho_factor(Sxx)
    except np.linalg.LinAlgError as exc:
        raise NumericError("observed-block covariance is not SPD") from exc
    mean = Sxy.T @ sla.cho_solve(cf, x)
    cov = Syy - Sxy.T @ sla.cho_solve(cf, Sxy)
    return mean, 0.5 * (cov + cov.T)


def condition_precision(Q, obs: ObservationSet) -> Posterior:
    """Precision-form update ``Q_post = Q + R^T N^{-1} R``, ``Q_post mean = R^T N^{-1} z``."""
    prec = Q if isinstance(Q, SparsePrecision) else None
    Q = _csr(Q)
    if obs.R.shape[1] != Q.shape[0]:
        raise ConfigError(f"observations are over {obs.R.shape[1]} dofs, precision over {Q.shape[0]}")
    if np.any(obs.noise <= 0):
        raise ConfigError("zero observation noise: use hard_condition for exact interpolation")
    if obs.replicated:
        raise ConfigError("condition one realization at a time")
    Ninv = sp.diags(1.0 / obs.noise) if len(obs) else sp.csr_matrix((0, 0))
    Qpost = (Q + obs.R.T @ Ninv @ obs.R).tocsr() if len(obs) else Q.copy()
    factor = Cholesky(Qpost)
    b = obs.R.T @ (obs.z / obs.noise) if len(obs) else np.zeros(Q.shape[0])
    return Posterior(factor.solve(b), Qpost, factor, prec)


def hard_condition(Q, R, z) -> HardPosterior:
    """Exact interpolation ``R Z = z`` by the covariance-form kriging identity.

    ``mean = C R^T (R C R^T)^{-1} z`` with ``C = Q^{-1}`` applied through
    solves with ``Q``.
    """
    prec = Q if isinstance(Q, SparsePrecision) else None
    if isinstance(R, ObservationSet):
        R, z = R.R, R.z
    R = sp.csr_matrix(R)
    z = np.atleast_1d(np.asarray(z, dtype=float))
    if z.ndim != 1:
        raise ConfigError("condition one realization at a time")
    factor = Cholesky(Q)
    if R.shape != (z.size, factor.n):
        raise ConfigError(f"constraint matrix shape {R.shape} does not match {z.size} values x {factor.n} dofs")
    CRt = factor.solve(R.T.toarray())
    S = R @ CRt
    S = 0.5 * (S + S.T)
    if z.size:
        ev = np.linalg.eigvalsh(S)
        if ev[0] <= 1e-12 * max(ev[-1], np.finfo(float).tiny):
            raise ConstraintDegeneracyError("constraints are rank deficient under the prior covariance")
    S_chol = sla.cho_factor(S) if z.size else (np.zeros((0, 0)), False)
    w = sla.cho_solve(S_chol, z) if z.size else np.zeros(0)
    # one step of iterative refinement tightens R mean = z
    if z.size:
        w = w + sla.cho_solve(S_chol, z - S @ w)
    mean = CRt @ w
    return HardPosterior(mean, factor, CRt, S_chol, R, prec)


# -- reduction ---------------------------------------------------------------

def schur_marginal(Q, keep) -> SparsePrecision:
    """Marginal precision ``Q_KK - Q_KE Q_EE^{-1} Q_EK`` on the ``keep`` dofs."""
    P = as_precision(Q)
    keep = np.atleast_1d(np.asarray(keep, dtype=int))
    n = P.n
    if keep.size == 0:
        raise DomainError("keep set is empty")
    if np.any(keep < 0) or np.any(keep >= n) or np.unique(keep).size != keep.size:
        raise DomainError("keep must be distinct dof indices of the precision")
    mask = np.ones(n, dtype=bool)
    mask[keep] = False
    elim = np.flatnonzero(mask)
    Qc = P.Q
    QKK = Qc[keep][:, keep]
    if elim.size == 0:
        Qeff = QKK.tocsr()
    else:
        QEK = Qc[elim][:, keep].toarray()
        X = Cholesky(Qc[elim][:, elim]).solve(QEK)
        D = QKK.toarray() - QEK.T @ X
        Qeff = sp.csr_matrix(0.5 * (D + D.T))
    return SparsePrecision(Qeff, P.dof_map[keep], P.coords, P.dirichlet_nodes, P.node_alias, P.mesh, P.spec)


def dtn_discrete(Q, boundary_dofs) -> np.ndarray:
    """Discrete Dirichlet-to-Neumann matrix: the Schur complement onto ``boundary_dofs``.

    ``Q`` must come from an assembly that keeps the boundary nodes free
    (Neumann or Robin on the targeted pieces).
    """
    n = _csr(Q).shape[0]
    b = np.atleast_1d(np.asarray(boundary_dofs, dtype=int))
    if b.size == 0:
        raise DomainError("boundary dof set is empty")
    if np.any(b < 0) or np.any(b >= n):
        raise DomainError("boundary dofs are not a subset of the dofs")
    return schur_marginal(Q, b).Q.toarray()


def harmonic_extension(Q, boundary_dofs, phi) -> np.ndarray:
    """Full dof vector equal to ``phi`` on the boundary dofs and discrete-harmonic inside."""
    Qc = _csr(Q)
    n = Qc.shape[0]
    b = np.atleast_1d(np.asarray(boundary_dofs, dtype=int))
    mask = np.ones(n, dtype=bool)
    mask[b] = False
    inner = np.flatnonzero(mask)
    u = np.zeros(n)
    u[b] = phi
    if inner.size:
        rhs = -(Qc[inner][:, b] @ np.asarray(phi, dtype=float))
        u[inner] = Cholesky(Qc[inner][:, inner]).solve(rhs)
    return u


def boundary_dofs(prec: SparsePrecision) -> np.ndarray:
    """Free dofs sitting on the outer boundary of the mesh."""
    mesh = prec.mesh
    if mesh is None:
        raise ConfigError("precision carries no mesh")
    if mesh.dim == 1:
        nodes = [0, mesh.n_nodes - 1]
    else:
        nodes = sorted({n for _, p, q in mesh.boundary_segments() for n in (p, q)})
    d = prec.dof_of_node[np.asarray(nodes)]
    return np.unique(d[d >= 0])


# -- sampling and identities -------------------------------------------------

def sample(post, count: int, seed: int, stream: int = 0) -> np.ndarray:
    """``count`` draws as columns; a bare precision is sampled with zero mean."""
    if isinstance(post, (Posterior, HardPosterior)):
        return post.sample(count, seed, stream)
    factor = post if isinstance(post, Cholesky) else Cholesky(post)
    return _sample_from(factor, np.zeros(factor.n), count, seed, stream)


@dataclass(frozen=True)
class GeneratingFunctionalCheck:
    empirical: float
    exact: float
    quadratic_form: float

    @property
    def ratio(self) -> float:
        return self.empirical / self.exact


def generating_functional_check(Q, J, n_samples: int, seed: int) -> GeneratingFunctionalCheck:
    """Monte Carlo ``E[exp(J^T Z)]`` against ``exp(J^T Q^{-1} J / 2)``."""
    factor = Cholesky(Q)
    J = np.atleast_1d(np.asarray(J, dtype=float))
    q = float(J @ factor.solve(J))
    if q > 40:
        raise NumericError(f"J^T Q^-1 J = {q:.3g} > 40; the exponential moment would overflow or be unstable")
    Z = sample(factor, n_samples, seed)
    emp = float(np.mean(np.exp(J @ Z)))
    return GeneratingFunctionalCheck(emp, float(np.exp(0.5 * q)), q)


def linear_image(C, A) -> np.ndarray:
    """Covariance ``A C A^T`` of ``A Z`` for ``Z ~ N(0, C)``."""
    C = np.atleast_2d(np.asarray(C, dtype=float))
    A = np.atleast_2d(np.asarray(A, dtype=float))
    out = A @ C @ A.T
    return 0.5 * (out + out.T)


def separable_precision(G, Q0) -> sp.csr_matrix:
    """Block precision ``G^{-1} kron Q0`` of a separable multivariate field.

    Variables are the outer blocks: dof ``i`` of variable ``k`` sits at
    ``k * n0 + i``. The covariance is ``G kron Q0^{-1}``.
    """
    G = np.atleast_2d(np.asarray(G, dtype=float))
    if G.shape[0] != G.shape[1] or np.any(G != G.T):
        raise ModelError("cross-variable covariance must be square and symmetric")
    try:
        cf = sla.cho_factor(G)
    except np.linalg.LinAlgError as exc:
        raise ModelError("cross-variable covariance is not SPD") from exc
    Ginv = sla.cho_solve(cf, np.eye(G.shape[0]))
    Ginv = 0.5 * (Ginv + Ginv.T)
    return sp.kron(sp.csr_matrix(Ginv), _csr(Q0), format="csr")


def krige_from_covariance(cov, variance, obs_points, values, noise_var, targets) -> tuple[np.ndarray, np.ndarray]:
    """Kriging mean and variance at ``targets`` from a covariance evaluator.

    ``cov(a, b)`` returns the cross-covariance matrix of two point sets and
    ``variance(a)`` the prior pointwise variances. Only the diagonal of the
    target covariance is formed.
    """
    values = np.atleast_1d(np.asarray(values, dtype=float))
    prior = np.asarray(variance(targets), dtype=float)
    if values.size == 0:
        return np.zeros(prior.size), prior
    Sxx = cov(obs_points, obs_points) + np.diag(np.broadcast_to(noise_var, values.shape))
    Sxy = cov(obs_points, targets)
    try:
        cf = sla.cho_factor(0.5 * (Sxx + Sxx.T))
    except np.linalg.LinAlgError as exc:
        raise NumericError("observation covariance is not SPD") from exc
    W = sla.cho_solve(cf, Sxy)
    return W.T @ values, np.maximum(prior - np.sum(Sxy * W, axis=0), 0.0)
