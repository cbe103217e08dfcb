"""Command line interface.

    opfield <command> --mesh MESH.json --model MODEL.json [--obs OBS.csv]
                      [--seed N] [--out DIR] [--hard] [command options]

Exit codes: 0 success, 2 configuration/parse error, 3 numeric/model error,
4 fit did not converge.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .assembly import (
    OperatorSpec,
    assemble,
    mass_matrix,
    product_covariance,
    circle_eigenvalue,
)
from .errors import ConfigError, DomainError, OpfieldError
from .gaussian import (
    Cholesky,
    ObservationSet,
    boundary_dofs,
    condition_precision,
    dtn_discrete,
    hard_condition,
    harmonic_extension,
    krige_from_covariance,
    point_observations,
    rng_for,
    schur_marginal,
)
from .inference import ModelTemplate, fit
from .io import (
    PointData,
    Provenance,
    load_model,
    load_observations,
    model_hash,
    write_csv,
    write_json,
    write_matrix,
)
from .kernels import Kernel1DParams, green_1d, green_interface_1d
from .mesh import Mesh1D, load_mesh
from .variogram import (
    PairClasses,
    bc_compare,
    bin_variogram,
    correlation_matrix,
    empirical_variogram,
    variogram_matrix,
)

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_NOT_CONVERGED = 0, 2, 3, 4


# -- shared setup -------------------------------------------------------------

class Run:
    """Parsed inputs shared by every command."""

    def __init__(self, args, argv):
        self.args = args
        self.mesh = load_mesh(args.mesh)
        self.model = load_model(args.model)
        self.spec = OperatorSpec.from_json(self.model)
        self.out = Path(args.out)
        self.seed = int(args.seed)
        if not 0 <= self.seed < 2 ** 64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        self.prov = Provenance(_command_line(argv), self.seed, model_hash(self.mesh, self.model))

    def data(self, dim=None) -> PointData:
        dim = self.mesh.dim if dim is None else dim
        if self.args.obs is None:
            return PointData(np.zeros((0, dim)), np.zeros(0), np.zeros(0))
        return load_observations(self.args.obs, dim)

    def coord_names(self) -> list[str]:
        return ["x", "y"][: self.mesh.dim]


def _command_line(argv) -> str:
    toks, skip = [], False
    for t in argv:
        if skip:
            skip = False
            continue
        if t == "--out":
            skip = True
            continue
        if t.startswith("--out="):
            continue
        toks.append(t)
    return " ".join(["opfield"] + toks)


def _constant(coef) -> float | None:
    if coef.kind != "constant":
        return None
    v = np.asarray(coef.params["value"], dtype=float)
    return float(v) if v.ndim == 0 else None


def _intrinsic_length(spec: OperatorSpec) -> float | None:
    a, c = _constant(spec.coeff_a), _constant(spec.coeff_c)
    if a is None or c is None or c <= 0:
        return None
    return float(np.sqrt(a / c))


def _pair_classes(mesh, buffer) -> PairClasses:
    if mesh.dim == 1:
        return PairClasses([mesh.bounds], buffer, mesh.interface_positions())
    faces = [(0 if ax == "x" else 1, float((mesh.x_nodes if ax == "x" else mesh.y_nodes)[k]))
             for ax, k, _ in mesh.interface_lines]
    return PairClasses(list(mesh.bounds), buffer, faces, (1,) if mesh.periodic_y else ())


def _posterior(run: Run, prec):
    data = run.data()
    if len(data) == 0:
        return condition_precision(prec, ObservationSet.empty(prec.n))
    if run.args.hard:
        obs = point_observations(prec, data.points, data.values, 0.0)
        return hard_condition(prec, obs.R, obs.z)
    obs = point_observations(prec, data.points, data.values, data.noise_sd)
    return condition_precision(prec, obs)


def _dof_rows(prec):
    for k, node in enumerate(prec.dof_map):
        yield [k, int(node), *prec.coords[node]]


# -- commands -----------------------------------------------------------------

def cmd_assemble(run: Run) -> int:
    prec = assemble(run.mesh, run.spec)
    write_matrix(run.out / "Q.mtx", prec.Q, run.prov)
    write_csv(run.out / "dofs.csv", ["dof", "node", *run.coord_names()], _dof_rows(prec), run.prov)
    return EXIT_OK


def cmd_krige(run: Run) -> int:
    prec = assemble(run.mesh, run.spec)
    post = _posterior(run, prec)
    sd = post.sd()
    rows = ([*r, post.mean[k], sd[k]] for k, r in enumerate(_dof_rows(prec)))
    write_csv(run.out / "posterior.csv", ["dof", "node", *run.coord_names(), "mean", "sd"], rows, run.prov)
    return EXIT_OK


def cmd_simulate(run: Run) -> int:
    prec = assemble(run.mesh, run.spec)
    post = _posterior(run, prec)
    S = post.sample(run.args.count, run.seed)
    head = ["dof", "node", *run.coord_names()] + [f"s{j}" for j in range(S.shape[1])]
    rows = ([*r, *S[k]] for k, r in enumerate(_dof_rows(prec)))
    write_csv(run.out / "samples.csv", head, rows, run.prov)
    return EXIT_OK


def _keep_set(spec: str, prec) -> np.ndarray:
    if spec == "all":
        return np.arange(prec.n)
    if spec == "boundary":
        return boundary_dofs(prec)
    if spec == "interface":
        nodes = [n for n, _ in getattr(prec.mesh, "interface_nodes", ())]
        return np.array([prec.dof_of_node[n] for n in nodes if prec.dof_of_node[n] >= 0], dtype=int)
    if spec == "interior":
        return np.setdiff1d(np.arange(prec.n), boundary_dofs(prec))
    if spec.startswith("dofs:"):
        return np.array([int(t) for t in spec[5:].split(",") if t.strip()], dtype=int)
    if spec.startswith("x:"):
        lo, hi = (float(t) for t in spec[2:].split(":"))
        x = prec.dof_coords[:, 0]
        return np.flatnonzero((x >= lo) & (x <= hi))
    raise ConfigError(f"unknown keep specification {spec!r} (all | boundary | interface | interior | dofs:i,j | x:lo:hi)")


def cmd_reduce(run: Run) -> int:
    prec = assemble(run.mesh, run.spec)
    keep = _keep_set(run.args.keep, prec)
    red = schur_marginal(prec, keep)
    write_matrix(run.out / "reduced.mtx", red.Q, run.prov)
    rows = ([k, int(keep[k]), int(node), *prec.coords[node]] for k, node in enumerate(red.dof_map))
    write_csv(run.out / "reduced_dofs.csv", ["k", "dof", "node", *run.coord_names()], rows, run.prov)
    checks = [["kept", keep.size], ["eliminated", prec.n - keep.size]]
    if prec.n <= 200:
        C = np.linalg.inv(prec.dense())
        err = np.abs(np.linalg.inv(red.Q.toarray()) - C[np.ix_(keep, keep)]).max()
        checks.append(["max_abs_inverse_error", float(err)])
        if run.args.keep == "boundary":
            phi = rng_for(run.seed).standard_normal(keep.size)
            lam = dtn_discrete(prec, keep)
            u = harmonic_extension(prec, keep, phi)
            checks.append(["dtn_energy_error", float(abs(phi @ lam @ phi - u @ (prec.Q @ u)))])
    write_csv(run.out / "reduce_check.csv", ["key", "value"], checks, run.prov)
    return EXIT_OK


def cmd_variogram(run: Run) -> int:
    prec = assemble(run.mesh, run.spec)
    post = _posterior(run, prec)
    buffer = run.args.buffer if run.args.buffer is not None else _intrinsic_length(run.spec)
    classes = _pair_classes(run.mesh, buffer)
    pts = prec.dof_coords
    bins = np.linspace(0.0, 0.5 * float(np.linalg.norm(np.ptp(pts, axis=0))), run.args.bins + 1)
    S = post.sample(run.args.count, run.seed) - post.mean[:, None]
    table = empirical_variogram(S, pts, bins, classes, standardize=run.args.standardize)
    write_csv(run.out / "variogram.csv", ["lag", "class", "count", "semivariance"], table.rows(), run.prov)
    if prec.n <= 500:
        C = post.covariance()
        if run.args.standardize:
            C = correlation_matrix(C)
        exact = bin_variogram(variogram_matrix(C), pts, bins, classes)
        write_csv(run.out / "variogram_exact.csv", ["lag", "class", "count", "semivariance"],
                  exact.rows(), run.prov)
    return EXIT_OK


def _nearest_node(mesh, x: float) -> int:
    return int(np.argmin(np.abs(mesh.nodes - x)))


def cmd_bc_compare(run: Run) -> int:
    mesh = run.mesh
    if not isinstance(mesh, Mesh1D):
        raise ConfigError("bc-compare works on 1D meshes")
    cmp = bc_compare(mesh, run.spec.with_bcs("dirichlet"), run.spec.with_bcs("neumann"))
    lo, hi = mesh.bounds
    x = mesh.nodes
    ref = _nearest_node(mesh, run.args.ref if run.args.ref is not None else 0.5 * (lo + hi))
    buffer = run.args.buffer if run.args.buffer is not None else _intrinsic_length(run.spec)
    dist = np.minimum(x - lo, hi - x)

    a, c = _constant(run.spec.coeff_a), _constant(run.spec.coeff_c)
    exact = a is not None and c is not None and c > 0 and not any(
        run.spec.interface_penalties.get(s, 0.0) for s in mesh.interface_ids)
    if exact:
        X, Y = np.meshgrid(x - lo, x - lo, indexing="ij")
        GD = green_1d("dirichlet", a, c, hi - lo, X, Y)
        GN = green_1d("neumann", a, c, hi - lo, X, Y)
        gD, gN = variogram_matrix(GD), variogram_matrix(GN)
    else:
        GD = GN = gD = gN = np.full_like(cmp.C_D, np.nan)

    rowmax = cmp.row_max_diff()
    rows = ([i, x[i], cmp.C_D[i, i], cmp.C_N[i, i], cmp.gamma_D[ref, i], cmp.gamma_N[ref, i], rowmax[i],
             dist[i], GD[i, i], GN[i, i], gD[ref, i], gN[ref, i], np.abs(gD - gN)[i].max()]
            for i in range(x.size))
    write_csv(run.out / "bc_compare.csv",
              ["node", "x", "var_D", "var_N", "gamma_D_ref", "gamma_N_ref", "row_max_abs_diff",
               "boundary_distance", "var_D_exact", "var_N_exact", "gamma_D_ref_exact",
               "gamma_N_ref_exact", "row_max_abs_diff_exact"], rows, run.prov)

    iu, ju = np.triu_indices(x.size, 1)
    rows = ([i, j, x[i], x[j], cmp.gamma_D[i, j], cmp.gamma_N[i, j], cmp.diff[i, j]] for i, j in zip(iu, ju))
    write_csv(run.out / "bc_compare_pairs.csv", ["i", "j", "x_i", "x_j", "gamma_D", "gamma_N", "diff"],
              rows, run.prov)

    i, j = cmp.argmax_diff()
    pair_dist = float(min(dist[i], dist[j]))
    summary = [
        ["reference_node", ref], ["reference_x", x[ref]],
        ["max_abs_diff", float(np.abs(cmp.diff).max())], ["argmax_i", i], ["argmax_j", j],
        ["argmax_x_i", x[i]], ["argmax_x_j", x[j]], ["argmax_boundary_distance", pair_dist],
        ["buffer", np.nan if buffer is None else buffer],
        ["argmax_within_buffer", int(buffer is not None and pair_dist <= buffer)],
        ["oracle_max_abs_error_gamma_D", float(np.abs(cmp.gamma_D - gD).max())],
        ["oracle_max_abs_error_gamma_N", float(np.abs(cmp.gamma_N - gN).max())],
    ]
    write_csv(run.out / "bc_compare_summary.csv", ["key", "value"], summary, run.prov)
    return EXIT_OK


def _parse_floats(s: str) -> list[float]:
    try:
        return [float(t) for t in s.split(",") if t.strip()]
    except ValueError as exc:
        raise ConfigError(f"expected a comma-separated list of numbers, got {s!r}") from exc


def cmd_interface_sweep(run: Run) -> int:
    mesh = run.mesh
    if not isinstance(mesh, Mesh1D) or not mesh.interface_nodes:
        raise ConfigError("interface-sweep needs a 1D mesh with at least one interface")
    alphas = _parse_floats(run.args.alphas)
    if any(al < 0 for al in alphas):
        raise ConfigError("penalties must be >= 0")
    lo, hi = mesh.bounds
    center, half = 0.5 * (lo + hi), 0.5 * (hi - lo)
    cross = _parse_floats(run.args.pair) if run.args.pair else [center - 0.5 * half, center + 0.5 * half]
    same = _parse_floats(run.args.same_pair) if run.args.same_pair else [center - 0.75 * half, center - 0.25 * half]
    if len(cross) != 2 or len(same) != 2:
        raise ConfigError("--pair and --same-pair take two coordinates each")
    s_pos = mesh.interface_positions()[0]

    a, c = _constant(run.spec.coeff_a), _constant(run.spec.coeff_c)
    oracle = (a is not None and c is not None and c > 0 and len(mesh.interface_nodes) == 1
              and abs(s_pos - center) <= 1e-12 * half
              and all(run.spec.bc_for(t).kind == "dirichlet" for t in mesh.boundary_tags))

    def exact(al, u, v):
        if not oracle:
            return np.nan
        p = Kernel1DParams(float(np.sqrt(c / a)), half, al / a)
        return green_interface_1d(p, np.asarray(u) - center, np.asarray(v) - center) / a

    ref = cross[0]
    summary, curves = [], []
    for al in alphas:
        spec = run.spec.with_penalties({sid: al for sid in mesh.interface_ids})
        prec = assemble(mesh, spec)
        F = Cholesky(prec.Q)
        pts = np.array(cross + same + [s_pos])
        from .assembly import interpolation_matrix
        R = interpolation_matrix(prec, pts[:, None])
        C = R @ F.solve(R.T.toarray())
        summary.append([al, cross[0], cross[1], C[0, 1], exact(al, cross[0], cross[1]),
                        same[0], same[1], C[2, 3], exact(al, same[0], same[1]),
                        C[4, 4], exact(al, s_pos, s_pos)])
        Rref = interpolation_matrix(prec, [[ref]])
        Rall = interpolation_matrix(prec, mesh.nodes[:, None])
        col = Rall @ F.solve(Rref.T.toarray())[:, 0]
        var = np.zeros(mesh.n_nodes)
        var[prec.dof_of_node >= 0] = F.diag_inverse()[prec.dof_of_node[prec.dof_of_node >= 0]]
        vref = float((Rref @ F.solve(Rref.T.toarray()))[0, 0])
        for k, xk in enumerate(mesh.nodes):
            ce = exact(al, ref, xk)
            ge = np.nan if not oracle else 0.5 * (exact(al, ref, ref) + exact(al, xk, xk)) - ce
            curves.append([al, k, xk, col[k], ce, 0.5 * (vref + var[k]) - col[k], ge])
    write_csv(run.out / "interface_sweep.csv",
              ["alpha", "x1", "x2", "cross_cov", "cross_cov_exact", "same_x1", "same_x2", "same_cov",
               "same_cov_exact", "var_interface", "var_interface_exact"], summary, run.prov)
    write_csv(run.out / "interface_sweep_curves.csv",
              ["alpha", "node", "x", "cov_ref", "cov_ref_exact", "gamma_ref", "gamma_ref_exact"],
              curves, run.prov)
    return EXIT_OK


def cmd_fit(run: Run) -> int:
    cfg = run.model.get("fit")
    if not cfg or "params" not in cfg:
        raise ConfigError("model file needs a 'fit' section with 'params'")
    data = run.data()
    if len(data) == 0:
        raise ConfigError("fit needs observations (--obs)")
    template = ModelTemplate(run.mesh, run.spec)
    obs = template.observe(data.points, data.values, data.noise_sd)
    init = {k: float(v["init"]) for k, v in cfg["params"].items()}
    bounds = {k: tuple(v["bounds"]) for k, v in cfg["params"].items() if "bounds" in v}
    res = fit(template, obs, init, bounds, budget=int(cfg.get("budget", 400)), fixed=cfg.get("fixed"))
    write_json(run.out / "fit.json", res.to_json(), run.prov)
    return EXIT_OK if res.converged else EXIT_NOT_CONVERGED


def cmd_modes(run: Run) -> int:
    mesh = run.mesh
    if not isinstance(mesh, Mesh1D):
        raise ConfigError("modes takes a 1D base mesh; the circle factor is added analytically")
    prod = run.model.get("product", {})
    radius = float(run.args.radius if run.args.radius is not None else prod.get("radius", 1.0))
    n_modes = int(run.args.modes if run.args.modes is not None else prod.get("modes", 16))
    if radius <= 0 or n_modes < 0:
        raise ConfigError("need radius > 0 and modes >= 0")
    prec = assemble(mesh, run.spec)
    data = run.data(dim=2)
    noise = 0.0 if run.args.hard else data.noise_sd ** 2
    if len(data) and not run.args.hard and np.any(noise <= 0):
        raise ConfigError("zero observation noise: pass --hard for exact interpolation")

    def cov(a, b):
        return product_covariance(prec, radius, n_modes, a, b, measure="normalized").cov

    def variance(t):
        return np.diag(cov(t, t))

    thetas = 2 * np.pi * np.arange(run.args.ntheta) / run.args.ntheta
    xs = prec.dof_coords[:, 0]
    targets = np.array([[xv, th] for th in thetas for xv in xs])
    mean, var = krige_from_covariance(cov, variance, data.points, data.values, noise, targets)
    rows = ([k % xs.size, int(prec.dof_map[k % xs.size]), t[0], t[1], mean[k], np.sqrt(var[k])]
            for k, t in enumerate(targets))
    write_csv(run.out / "modes_krige.csv", ["dof", "node", "x", "theta", "mean", "sd"], rows, run.prov)

    M = mass_matrix(prec)
    c0 = _constant(run.spec.coeff_c)
    mid = int(np.argmin(np.abs(xs - 0.5 * sum(mesh.bounds))))
    table = []
    for n in range(n_modes + 1):
        lam = circle_eigenvalue(n, radius)
        d = Cholesky(prec.Q + lam * M).diag_inverse()
        table.append([n, lam, np.nan if c0 is None else c0 + lam, 1.0 if n == 0 else 2.0, d[mid], d.max()])
    write_csv(run.out / "modes.csv", ["n", "lambda", "effective_mass2", "weight", "variance_mid", "variance_max"],
              table, run.prov)
    tail = product_covariance(prec, radius, n_modes, [[xs[mid], 0.0]], [[xs[mid], 0.0]],
                              measure="normalized", tail=True).tail_bound
    write_csv(run.out / "modes_summary.csv", ["key", "value"],
              [["radius", radius], ["modes", n_modes], ["tail_variance_bound", tail]], run.prov)
    return EXIT_OK


COMMANDS = {
    "assemble": cmd_assemble,
    "krige": cmd_krige,
    "simulate": cmd_simulate,
    "reduce": cmd_reduce,
    "variogram": cmd_variogram,
    "bc-compare": cmd_bc_compare,
    "interface-sweep": cmd_interface_sweep,
    "fit": cmd_fit,
    "modes": cmd_modes,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--mesh", required=True, help="mesh JSON file")
    common.add_argument("--model", required=True, help="model JSON file")
    common.add_argument("--obs", help="observations CSV: x[,y],value,noise_sd")
    common.add_argument("--seed", type=int, default=0, help="unsigned 64-bit seed (default 0)")
    common.add_argument("--out", default=".", help="output directory")
    common.add_argument("--hard", action="store_true", help="condition by exact interpolation")

    p = argparse.ArgumentParser(prog="opfield", description=__doc__.split("\n")[0])
    p.add_argument("--version", action="version", version=f"opfield {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for name in ("assemble", "krige"):
        sub.add_parser(name, parents=[common])
    s = sub.add_parser("simulate", parents=[common])
    s.add_argument("--count", type=int, default=10)
    s = sub.add_parser("reduce", parents=[common])
    s.add_argument("--keep", default="boundary", help="all | boundary | interface | interior | dofs:i,j,.. | x:lo:hi")
    s = sub.add_parser("variogram", parents=[common])
    s.add_argument("--count", type=int, default=2000)
    s.add_argument("--bins", type=int, default=15)
    s.add_argument("--buffer", type=float, default=None, help="boundary buffer (default 1/m)")
    s.add_argument("--standardize", action="store_true", help="semivariance of Z/sd (1 - correlation)")
    s = sub.add_parser("bc-compare", parents=[common])
    s.add_argument("--ref", type=float, default=None, help="reference point for gamma curves")
    s.add_argument("--buffer", type=float, default=None)
    s = sub.add_parser("interface-sweep", parents=[common])
    s.add_argument("--alphas", default="0,1,10,100")
    s.add_argument("--pair", default=None, help="cross-interface pair 'x1,x2'")
    s.add_argument("--same-pair", default=None, help="same-side pair 'x1,x2'")
    sub.add_parser("fit", parents=[common])
    s = sub.add_parser("modes", parents=[common])
    s.add_argument("--radius", type=float, default=None)
    s.add_argument("--modes", type=int, default=None)
    s.add_argument("--ntheta", type=int, default=8)
    return p


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    args = build_parser().parse_args(argv)
    try:
        run = Run(args, argv)
        return COMMANDS[args.command](run)
    except OpfieldError as exc:
        print(f"opfield {args.command}: error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
