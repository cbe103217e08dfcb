import numpy as np
import pytest
import scipy.sparse as sp

from opfield.assembly import (
    Coefficient,
    OperatorSpec,
    assemble,
    circle_eigenvalue,
    interpolation_matrix,
    mass_matrix,
    product_covariance,
    product_mode_solve,
)
from opfield.errors import ConfigError, DomainError, ModelError
from opfield.gaussian import Cholesky
from opfield.kernels import Kernel1DParams, green_dirichlet_1d
from opfield.mesh import BoundaryCondition, Grid2D, uniform_grid, uniform_interval


def spec(a=1.0, c=1.0, bcs="dirichlet", pen=None):
    if isinstance(bcs, str):
        bcs = {"*": BoundaryCondition("*", bcs)}
    return OperatorSpec(a, c, bcs, pen or {})


def is_spd(Q):
    D = Q.toarray()
    return np.array_equal(D, D.T) and np.linalg.eigvalsh(D)[0] > 0


def test_two_element_hand_assembly():
    prec = assemble(uniform_interval(1.0, 2), spec(1.0, 0.0))
    np.testing.assert_allclose(prec.dense(), [[4.0]])
    assert prec.dof_map.tolist() == [1]


def test_element_matrices_neumann():
    Q = assemble(uniform_interval(1.0, 2), spec(2.0, 3.0, "neumann")).dense()
    h = 0.5
    K = 2.0 / h * np.array([[1, -1, 0], [-1, 2, -1], [0, -1, 1]])
    M = 3.0 * h / 6 * np.array([[2, 1, 0], [1, 4, 1], [0, 1, 2]])
    np.testing.assert_allclose(Q, K + M, rtol=1e-15)


def test_robin_adds_beta_on_boundary_diagonal():
    mesh = uniform_interval(1.0, 5)
    QN = assemble(mesh, spec(bcs="neumann")).dense()
    QR = assemble(mesh, spec(bcs={"left": BoundaryCondition("left", "robin", 2.5),
                                  "right": "neumann"})).dense()
    D = QR - QN
    assert D[0, 0] == pytest.approx(2.5)
    D[0, 0] = 0
    assert np.all(D == 0)


def test_robin_counts_as_anchor():
    prec = assemble(uniform_interval(1.0, 5), spec(c=0.0, bcs={"left": BoundaryCondition("left", "robin", 1.0),
                                                             "right": "neumann"}))
    assert is_spd(prec.Q)
    with pytest.raises(ModelError):
        assemble(uniform_interval(1.0, 5), spec(c=0.0, bcs="neumann"))


def test_zero_penalty_matches_interface_free_mesh():
    with_s = uniform_interval(1.0, 10, [0.5])
    without = uniform_interval(1.0, 10)
    Q1 = assemble(with_s, spec(pen={"S0": 0.0})).Q
    Q2 = assemble(without, spec()).Q
    assert (Q1 != Q2).nnz == 0
    # unlisted interfaces default to zero penalty
    assert (assemble(with_s, spec()).Q != Q2).nnz == 0


def test_interface_penalty_on_diagonal():
    mesh = uniform_interval(1.0, 10, [0.5])
    D = assemble(mesh, spec(pen={"S0": 3.0})).dense() - assemble(mesh, spec()).dense()
    k = mesh.interface_nodes[0][0] - 1  # first node is eliminated
    assert D[k, k] == pytest.approx(3.0)
    assert np.count_nonzero(D) == 1


def test_green_column_oracle():
    prec = assemble(uniform_interval(1.0, 200), spec(c=1.0))
    C = prec.node_covariance()
    exact = green_dirichlet_1d(Kernel1DParams(1, 1), prec.coords[:, 0], 0.5)
    assert np.abs(C[:, 100] - exact).max() < 1e-3


def test_sherman_morrison_and_monotone_in_alpha():
    mesh = uniform_interval(1.0, 80, [0.0], symmetric=True)
    s = mesh.interface_nodes[0][0]
    C0 = assemble(mesh, spec()).node_covariance()
    x = mesh.nodes
    left, right = x < 0, x > 0
    prev = C0
    for alpha in (0.5, 1.0, 4.0, 20.0, 500.0):
        Ca = assemble(mesh, spec(pen={"S0": alpha})).node_covariance()
        q = C0[:, s]
        np.testing.assert_allclose(Ca, C0 - alpha * np.outer(q, q) / (1 + alpha * C0[s, s]), atol=1e-10, rtol=0)
        cross = Ca[np.ix_(left, right)]
        assert np.all(cross <= prev[np.ix_(left, right)] + 1e-15)
        prev = Ca


@pytest.mark.parametrize("bcs", ["dirichlet", "neumann"])
@pytest.mark.parametrize("coef", [
    (1.0, 1.0),
    (Coefficient("piecewise_x", {"breaks": [0.3, 0.6], "values": [1.0, 5.0, 0.5]}), 2.0),
    (Coefficient("affine", {"value": 1.0, "gradient": [2.0]}), Coefficient("affine", {"value": 0.5, "gradient": 1.0})),
])
def test_1d_symmetric_spd(bcs, coef):
    prec = assemble(uniform_interval(1.0, 30, [0.5]), spec(*coef, bcs=bcs, pen={"S0": 2.0}))
    assert is_spd(prec.Q)


def test_piecewise_coefficient_at_midpoints():
    mesh = uniform_interval(1.0, 4)
    a = Coefficient("piecewise_x", {"breaks": [0.5], "values": [1.0, 3.0]})
    Q = assemble(mesh, spec(a, 0.0)).dense()
    # free nodes 0.25, 0.5, 0.75; left elements a=1, right a=3, h=1/4
    np.testing.assert_allclose(Q, 4 * np.array([[2, -1, 0], [-1, 4, -3], [0, -3, 6]]))


def test_coefficient_json_round_trip():
    for obj in (2.0, [[1.0, 0.2], [0.2, 2.0]], {"kind": "piecewise_x", "breaks": [0.5], "values": [1, 2]},
                {"kind": "affine", "value": 1.0, "gradient": [0.5, 0.0]}):
        c = Coefficient.from_json(obj)
        pts = np.random.default_rng(0).uniform(0, 1, (5, 2))
        np.testing.assert_array_equal(Coefficient.from_json(c.to_json()).evaluate(pts), c.evaluate(pts))
    with pytest.raises(ConfigError):
        Coefficient.from_json({"kind": "spline"})
    with pytest.raises(ConfigError):
        Coefficient.from_json({"kind": "piecewise_x", "breaks": [0.5], "values": [1]})


def test_spec_json_and_hash():
    d = {"m": 2.0, "alpha_prime": 0.5, "bcs": {"left": "dirichlet", "right": {"kind": "robin", "beta": 1.5}},
         "interfaces": {"S0": 3.0}}
    s = OperatorSpec.from_json(d)
    assert s.coeff_a.evaluate(np.zeros((1, 1)))[0] == pytest.approx(1 / np.pi)
    assert s.coeff_c.evaluate(np.zeros((1, 1)))[0] == 4.0
    assert s.bc_for("right").beta == 1.5
    back = OperatorSpec.from_json(s.to_json())
    assert back.hash() == s.hash()
    assert s.with_penalties({"S0": 1.0}).hash() != s.hash()
    with pytest.raises(ConfigError):
        OperatorSpec.from_json({"bcs": {"left": {"beta": 1}}})


@pytest.mark.parametrize("bad, err", [
    (dict(a=-1.0), ModelError),
    (dict(a=0.0), ModelError),
    (dict(c=-0.5), ModelError),
    (dict(bcs={"left": "dirichlet"}), ConfigError),
    (dict(bcs={"*": "dirichlet", "top": "neumann"}), ConfigError),
    (dict(pen={"T9": 1.0}), ConfigError),
])
def test_assembly_errors_1d(bad, err):
    with pytest.raises(err):
        assemble(uniform_interval(1.0, 6, [0.5]), spec(**bad))


def test_negative_penalty_rejected():
    with pytest.raises(ModelError):
        spec(pen={"S0": -1.0})


# -- 2D ------------------------------------------------------------------------

def test_2d_unit_patch_constant_energy():
    prec = assemble(uniform_grid(1, 1, 2, 2), spec(1.0, 1.0, "neumann"))
    one = np.ones(prec.n)
    assert one @ prec.Q @ one == pytest.approx(1.0, rel=1e-14)
    # stiffness annihilates constants
    K = prec.dense() - assemble(uniform_grid(1, 1, 2, 2), spec(1.0, 2.0, "neumann")).dense() + mass_matrix(prec).toarray()
    np.testing.assert_allclose(K @ one, 0, atol=1e-14)


def rectangle_element(hx, hy, c):
    """Closed-form bilinear stiffness + c * mass, nodes counter-clockwise from (0,0)."""
    kx = np.array([[2, -2, -1, 1], [-2, 2, 1, -1], [-1, 1, 2, -2], [1, -1, -2, 2]]) * hy / (6 * hx)
    ky = np.array([[2, 1, -1, -2], [1, 2, -2, -1], [-1, -2, 2, 1], [-2, -1, 1, 2]]) * hx / (6 * hy)
    m = np.array([[4, 2, 1, 2], [2, 4, 2, 1], [1, 2, 4, 2], [2, 1, 2, 4]]) * hx * hy / 36
    return kx + ky + c * m


def test_2d_matches_closed_form_element_matrices():
    grid = uniform_grid(1.0, 0.5, 2, 2)
    Q = assemble(grid, spec(1.0, 3.0, "neumann")).dense()
    expect = np.zeros((9, 9))
    loc = rectangle_element(0.5, 0.25, 3.0)
    for j in range(2):
        for i in range(2):
            nodes = [grid.node(i, j), grid.node(i + 1, j), grid.node(i + 1, j + 1), grid.node(i, j + 1)]
            expect[np.ix_(nodes, nodes)] += loc
    np.testing.assert_allclose(Q, expect, rtol=1e-13, atol=1e-15)


def test_2d_dirichlet_dof_count():
    prec = assemble(uniform_grid(1, 1, 4, 4), spec())
    assert prec.n == 9
    assert is_spd(prec.Q)


def test_2d_interface_line_penalty_is_psd_on_line():
    grid = uniform_grid(1, 1, 4, 4, [0.5])
    P0 = assemble(grid, spec(bcs="neumann"))
    D = assemble(grid, spec(bcs="neumann", pen={"S0": 2.0})).dense() - P0.dense()
    assert np.linalg.eigvalsh(D)[0] > -1e-14
    on_line = {grid.node(2, j) for j in range(5)}
    rows = {P0.dof_map[i] for i in np.flatnonzero(np.abs(D).sum(axis=1))}
    assert rows == on_line
    one = np.ones(P0.n)
    assert one @ D @ one == pytest.approx(2.0 * 1.0)


def test_2d_interface_corner_accumulates_both_penalties():
    grid = Grid2D(np.linspace(0, 1, 5), np.linspace(0, 1, 5), interface_lines=(("x", 2, "V"), ("y", 2, "H")))
    base = assemble(grid, spec(bcs="neumann")).dense()
    DV = assemble(grid, spec(bcs="neumann", pen={"V": 1.0})).dense() - base
    DH = assemble(grid, spec(bcs="neumann", pen={"H": 3.0})).dense() - base
    DB = assemble(grid, spec(bcs="neumann", pen={"V": 1.0, "H": 3.0})).dense() - base
    np.testing.assert_allclose(DB, DV + DH, atol=1e-14)
    k = grid.node(2, 2)
    assert DB[k, k] == pytest.approx((1.0 + 3.0) * 2 * 0.25 * 2 / 6)


def test_2d_robin_edge_mass():
    grid = uniform_grid(1, 2, 3, 4)
    base = assemble(grid, spec(bcs="neumann")).dense()
    R = assemble(grid, spec(bcs={"*": "neumann", "left": BoundaryCondition("left", "robin", 0.5)})).dense()
    one = np.ones(base.shape[0])
    assert one @ (R - base) @ one == pytest.approx(0.5 * 2.0)


def test_2d_tensor_coefficient():
    grid = uniform_grid(1, 1, 5, 5)
    iso = assemble(grid, spec(a=2.0)).dense()
    ten = assemble(grid, spec(a=[[2.0, 0.0], [0.0, 2.0]])).dense()
    np.testing.assert_allclose(iso, ten, rtol=1e-14)
    aniso = assemble(grid, spec(a=[[2.0, 0.7], [0.7, 1.0]]))
    assert is_spd(aniso.Q)
    with pytest.raises(ModelError):
        assemble(grid, spec(a=[[1.0, 2.0], [2.0, 1.0]]))
    with pytest.raises(ModelError):
        assemble(grid, spec(a=Coefficient("callable", {}, lambda p: np.tile([[1.0, 0.5], [0.2, 1.0]], (len(p), 1, 1)))))


def test_2d_anisotropy_matches_stretched_grid():
    # A = diag(1, k^2) on (0,1)^2 equals the isotropic operator on y' = y/k, up to
    # the volume factor k, when c is scaled accordingly
    k = 2.0
    a = assemble(uniform_grid(1, 1, 4, 4), spec(a=[[1.0, 0.0], [0.0, k * k]], c=1.0)).dense()
    b = assemble(uniform_grid(1, 1 / k, 4, 4), spec(a=1.0, c=1.0)).dense()
    np.testing.assert_allclose(a, k * b, rtol=1e-12)


def test_periodic_strip_translation_invariant():
    grid = uniform_grid(1, 1, 4, 6, periodic_y=True)
    prec = assemble(grid, spec(bcs="neumann"))
    assert prec.n == 5 * 6
    C = np.linalg.inv(prec.dense())
    d = prec.dof_of_node
    i = 2
    c01 = C[d[grid.node(i, 0)], d[grid.node(i, 1)]]
    c45 = C[d[grid.node(i, 4)], d[grid.node(i, 5)]]
    c50 = C[d[grid.node(i, 5)], d[grid.node(i, 0)]]
    assert c01 == pytest.approx(c45, rel=1e-12) and c01 == pytest.approx(c50, rel=1e-12)


def test_dirichlet_and_neumann_differ():
    mesh = uniform_grid(1, 1, 4, 4)
    assert assemble(mesh, spec(bcs="dirichlet")).n != assemble(mesh, spec(bcs="neumann")).n
    m1 = uniform_interval(1.0, 20)
    CD = assemble(m1, spec()).node_covariance()
    CN = assemble(m1, spec(bcs="neumann")).node_covariance()
    assert np.abs(CD - CN).max() > 0.1


# -- interpolation and mass ---------------------------------------------------

def test_interpolation_weights():
    prec = assemble(uniform_interval(1.0, 4), spec())
    R = interpolation_matrix(prec, [[0.25], [0.375], [0.1], [1.0]]).toarray()
    np.testing.assert_allclose(R[0], [1, 0, 0])
    np.testing.assert_allclose(R[1], [0.5, 0.5, 0])
    np.testing.assert_allclose(R[2], [0.4, 0, 0])  # Dirichlet weight dropped
    np.testing.assert_allclose(R[3], [0, 0, 0])
    with pytest.raises(DomainError):
        interpolation_matrix(prec, [[1.5]])


def test_interpolation_2d_and_periodic():
    grid = uniform_grid(1, 1, 2, 4, periodic_y=True)
    prec = assemble(grid, spec(bcs="neumann"))
    R1 = interpolation_matrix(prec, [[0.3, 0.1]]).toarray()
    R2 = interpolation_matrix(prec, [[0.3, 1.1]]).toarray()
    np.testing.assert_allclose(R1, R2, atol=1e-12)
    assert R1.sum() == pytest.approx(1.0)


def test_mass_matrix_total():
    for mesh in (uniform_interval(2.0, 7), uniform_grid(1.5, 0.5, 3, 4)):
        M = mass_matrix(assemble(mesh, spec(bcs="neumann")))
        assert M.sum() == pytest.approx(2.0 if mesh.dim == 1 else 0.75)


# -- product with a circle -----------------------------------------------------

def test_mode_zero_is_plain_solve():
    base = assemble(uniform_interval(1.0, 20), spec())
    f = np.arange(base.n, dtype=float)
    out = product_mode_solve(base, 1.0, 4, {0: f})
    np.testing.assert_allclose(out[0], np.linalg.solve(base.dense(), f), rtol=1e-12)


def test_mode_shift_is_effective_mass():
    mesh = uniform_interval(1.0, 20)
    base = assemble(mesh, OperatorSpec.from_mass(1.0))
    f = np.ones(base.n)
    n, r = 3, 0.7
    u = product_mode_solve(base, r, 5, {n: f})[n]
    shifted = assemble(mesh, OperatorSpec.from_mass(np.sqrt(1.0 + circle_eigenvalue(n, r))))
    np.testing.assert_allclose(u, np.linalg.solve(shifted.dense(), f), rtol=1e-12)
    with pytest.raises(DomainError):
        product_mode_solve(base, r, 2, {3: f})


def test_product_alternating_modes():
    base = assemble(uniform_interval(1.0, 64), OperatorSpec.from_mass(1.0))
    pc = product_covariance(base, 1.0, 8, [[0.5, 0.0]], [[0.5, 0.0], [0.5, np.pi]])
    assert pc.cov[0, 1] < pc.cov[0, 0]
    normalized = product_covariance(base, 1.0, 8, [[0.5, 0.0]], [[0.5, np.pi]], measure="normalized")
    assert normalized.cov[0, 0] == pytest.approx(2 * np.pi * pc.cov[0, 1], rel=1e-12)


def test_product_tail_bound_dominates_discarded_modes():
    base = assemble(uniform_interval(1.0, 32), OperatorSpec.from_mass(1.0))
    N = 4
    pc = product_covariance(base, 1.0, N, [[0.5, 0.0]], [[0.5, 0.0]], tail=True, tail_extra=8)
    M = mass_matrix(base)
    tail = np.zeros(base.n)
    for n in range(N + 1, N + 400):
        tail += Cholesky(base.Q + circle_eigenvalue(n, 1.0) * M).diag_inverse() / np.pi
    assert tail.max() <= pc.tail_bound


def test_product_unknown_measure():
    base = assemble(uniform_interval(1.0, 8), OperatorSpec.from_mass(1.0))
    with pytest.raises(ConfigError):
        product_covariance(base, 1.0, 2, [[0.5, 0]], [[0.5, 0]], measure="haar")
