"""Marginal likelihood of operator hyperparameters and Nelder-Mead fitting.

Exposed parameters:

``m``
    mass; the reaction coefficient becomes ``m**2``.
``alpha``
    penalty applied to every interface of the mesh.
``anisotropy``
    2D only; the diffusion ``A`` becomes ``D A D`` with
    ``D = diag(1, sqrt(anisotropy))``.
``stretch``
    affine deformation: the field is observed on the mesh coordinates
    scaled by ``stretch`` (a pullback of the model on the stretched domain).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
import scipy.linalg as sla
from scipy.optimize import minimize

from .assembly import Coefficient, OperatorSpec, SparsePrecision, assemble
from .errors import ConfigError, ModelError, NumericError
from .gaussian import Cholesky, ObservationSet, condition_precision, point_observations

PARAMETERS = ("m", "alpha", "anisotropy", "stretch")
LOG2PI = np.log(2 * np.pi)


@dataclass(frozen=True)
class ParameterVector:
    values: Mapping[str, float]
    bounds: Mapping[str, tuple[float, float]] = field(default_factory=dict)

    def __post_init__(self):
        for k, v in self.values.items():
            if k not in PARAMETERS:
                raise ConfigError(f"unknown parameter {k!r}; expected one of {PARAMETERS}")
            if not np.isfinite(v):
                raise ModelError(f"parameter {k} = {v} is not finite")
            if k == "alpha" and v < 0 or k != "alpha" and v <= 0:
                raise ModelError(f"parameter {k} = {v} outside its natural range")
            lo, hi = self.bounds.get(k, (-np.inf, np.inf))
            if not lo <= v <= hi:
                raise ModelError(f"parameter {k} = {v} outside bounds [{lo}, {hi}]")

    def __getitem__(self, k):
        return self.values[k]

    def as_dict(self) -> dict[str, float]:
        return {k: float(v) for k, v in self.values.items()}


@dataclass(frozen=True)
class ModelTemplate:
    """A mesh and base operator whose hyperparameters are supplied per evaluation."""

    mesh: object
    base: OperatorSpec

    def spec_for(self, theta: Mapping[str, float]) -> OperatorSpec:
        spec = self.base
        a, c = spec.coeff_a, spec.coeff_c
        if "m" in theta:
            c = Coefficient.constant(float(theta["m"]) ** 2)
        if "anisotropy" in theta:
            if self.mesh.dim != 2:
                raise ConfigError("anisotropy needs a 2D grid")
            base_a = a
            ratio = float(theta["anisotropy"])

            def tensor(pts, base_a=base_a, ratio=ratio):
                v = base_a.evaluate(pts)
                if v.ndim == 1:
                    v = v[:, None, None] * np.eye(2)
                return v * np.array([[1.0, np.sqrt(ratio)], [np.sqrt(ratio), ratio]])

            a = Coefficient("callable", {}, tensor)
        pen = dict(spec.interface_penalties)
        if "alpha" in theta:
            pen = {sid: float(theta["alpha"]) for sid in self.mesh.interface_ids}
        return OperatorSpec(a, c, spec.bcs, pen)

    def precision(self, theta: Mapping[str, float]) -> SparsePrecision:
        mesh = self.mesh
        if "stretch" in theta:
            s = float(theta["stretch"])
            if mesh.dim == 1:
                mesh = mesh.scaled(s)
            else:
                raise ConfigError("stretch is implemented for 1D meshes only")
        return assemble(mesh, self.spec_for(theta))

    def observe(self, points, values, noise_sd) -> ObservationSet:
        """Observation design on the template's (undeformed) dof layout.

        Hat-function weights are invariant under uniform stretching, so the
        same design serves every ``stretch``.
        """
        return point_observations(assemble(self.mesh, self.base), points, values, noise_sd)


def _theta_dict(theta) -> dict[str, float]:
    if isinstance(theta, ParameterVector):
        return theta.as_dict()
    ParameterVector(dict(theta))
    return {k: float(v) for k, v in theta.items()}


def obs_covariance(theta, template: ModelTemplate, obs: ObservationSet) -> np.ndarray:
    """``Sigma = R Q^{-1} R^T + N`` by sparse solves against the columns of ``R^T``."""
    th = _theta_dict(theta)
    try:
        F = Cholesky(template.precision(th).Q)
    except (NumericError, ModelError) as exc:
        raise ModelError(f"precision not SPD at theta={th}: {exc}") from exc
    X = F.solve(obs.R.T.toarray())
    S = obs.R @ X + np.diag(obs.noise)
    return 0.5 * (S + S.T)


def marginal_loglik(theta, template: ModelTemplate, obs: ObservationSet) -> float:
    """Gaussian log density of the observed values, ``-(k/2) log 2 pi`` included.

    With replicated observations (``z`` of shape (k, r)) the log densities of
    the ``r`` independent realizations are summed.
    """
    th = _theta_dict(theta)
    k = len(obs)
    if k == 0:
        return 0.0
    S = obs_covariance(th, template, obs)
    try:
        cf = sla.cho_factor(S)
    except np.linalg.LinAlgError as exc:
        raise ModelError(f"observation covariance not SPD at theta={th}") from exc
    Z = obs.z.reshape(k, -1)
    quad = float(np.sum(Z * sla.cho_solve(cf, Z)))
    logdet = 2.0 * float(np.sum(np.log(np.diag(cf[0]))))
    r = Z.shape[1]
    return -0.5 * quad - 0.5 * r * (logdet + k * LOG2PI)


def marginal_loglik_precision(theta, template: ModelTemplate, obs: ObservationSet) -> float:
    """Same value through the precision form.

    ``log det Sigma = log det Q_post - log det Q + log det N`` and
    ``z^T Sigma^{-1} z = z^T N^{-1} z - b^T Q_post^{-1} b`` with
    ``b = R^T N^{-1} z``.
    """
    th = _theta_dict(theta)
    k = len(obs)
    if k == 0:
        return 0.0
    prec = template.precision(th)
    Z = obs.z.reshape(k, -1)
    post = condition_precision(prec, ObservationSet(obs.R, np.zeros(k), obs.noise))
    B = obs.R.T @ (Z / obs.noise[:, None])
    quad = float(np.sum(Z * (Z / obs.noise[:, None])) - np.sum(B * post.factor.solve(B)))
    logdet = post.logdet - Cholesky(prec.Q).logdet + float(np.sum(np.log(obs.noise)))
    return -0.5 * quad - 0.5 * Z.shape[1] * (logdet + k * LOG2PI)


# -- fitting -----------------------------------------------------------------

def _to_free(name: str, v: float) -> float:
    return np.log1p(v) if name == "alpha" else np.log(v)


def _from_free(name: str, u: float) -> float:
    return float(np.expm1(u)) if name == "alpha" else float(np.exp(u))


@dataclass
class FitResult:
    theta: dict[str, float]
    loglik: float
    converged: bool
    n_evals: int
    trace: list[dict] = field(repr=False, default_factory=list)
    message: str = ""

    def to_json(self) -> dict:
        def finite(v):
            return float(v) if np.isfinite(v) else None

        trace = [{"theta": t["theta"], "loglik": finite(t["loglik"])} for t in self.trace]
        return {"theta": self.theta, "loglik": finite(self.loglik), "converged": self.converged,
                "n_evals": self.n_evals, "message": self.message, "trace": trace}


def fit(template: ModelTemplate, obs: ObservationSet, theta_init: Mapping[str, float],
        bounds: Mapping[str, tuple[float, float]] | None = None, budget: int = 400,
        fixed: Mapping[str, float] | None = None, xatol: float = 1e-5,
        fatol: float = 1e-8) -> FitResult:
    """Maximize the marginal likelihood over 1-4 free parameters.

    Nelder-Mead runs on ``log`` of positive parameters and ``log(1 + alpha)``.
    Returns the best point seen; ``converged`` is False when the evaluation
    budget ran out first. Deterministic for a given ``theta_init``.
    """
    names = list(theta_init)
    if not 1 <= len(names) <= 4:
        raise ConfigError("fit needs between 1 and 4 free parameters")
    fixed = dict(fixed or {})
    bounds = dict(bounds or {})
    ParameterVector({**fixed, **theta_init}, bounds)
    x0 = np.array([_to_free(k, theta_init[k]) for k in names])
    tb = []
    for k in names:
        lo, hi = bounds.get(k, (0.0, np.inf))
        tlo = _to_free(k, lo) if lo > 0 or k == "alpha" else None
        thi = _to_free(k, hi) if np.isfinite(hi) else None
        tb.append((tlo, thi))

    trace: list[dict] = []
    best = {"loglik": -np.inf, "theta": None}

    def objective(u):
        th = {k: _from_free(k, ui) for k, ui in zip(names, u)}
        th.update(fixed)
        try:
            ll = marginal_loglik(th, template, obs)
        except (ModelError, NumericError):
            ll = -np.inf
        trace.append({"theta": th, "loglik": ll})
        if ll > best["loglik"]:
            best.update(loglik=ll, theta=th)
        return -ll if np.isfinite(ll) else np.inf

    res = minimize(objective, x0, method="Nelder-Mead", bounds=tb,
                   options={"maxfev": int(budget), "xatol": xatol, "fatol": fatol})
    if best["theta"] is None:
        raise ModelError(f"no valid parameter value reached from {dict(theta_init)}")
    return FitResult(best["theta"], float(best["loglik"]), bool(res.success),
                     len(trace), trace, str(res.message))
