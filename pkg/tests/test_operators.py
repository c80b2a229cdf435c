from dataclasses import replace

import numpy as np
import pytest
import scipy.sparse as sp

from cpmdd.band import NodeSet, build_band_tube
from cpmdd.errors import BandConstructionError, ConfigError
from cpmdd.geometry import Circle, Sphere
from cpmdd.operators import (
    GlobalOperators,
    assemble_helmholtz,
    build_ambient_laplacian,
    build_extension,
    direct_solve,
    export_matrix_market,
    interp_weights_1d,
    stabilized_laplace_beltrami,
)
from cpmdd.problems import circle_mode, sphere_exp


def test_weights_midpoint_and_exact_hit():
    np.testing.assert_allclose(interp_weights_1d(1, 0.5), [0.5, 0.5])
    np.testing.assert_array_equal(interp_weights_1d(3, 1.0), [0.0, 1.0, 0.0, 0.0])


def test_weights_match_lagrange_basis():
    t = 0.3
    nodes = np.arange(3.0)
    expected = [np.prod([(t - nodes[m]) / (nodes[j] - nodes[m]) for m in range(3) if m != j]) for j in range(3)]
    w = interp_weights_1d(2, t)
    np.testing.assert_allclose(w, expected, atol=1e-14)
    assert w.sum() == pytest.approx(1.0, abs=1e-14)


def test_weights_reject_offsets_outside_stencil():
    with pytest.raises(BandConstructionError):
        interp_weights_1d(2, 2.5)


def test_extension_shape_and_partition_of_unity(circle_grid, circle_ops):
    E = circle_ops.E
    n = circle_grid.n_active + circle_grid.n_ghost
    assert E.shape == (n, circle_grid.n_active)
    np.testing.assert_array_equal(np.diff(E.indptr), (circle_grid.p + 1) ** 2)
    np.testing.assert_allclose(E @ np.ones(E.shape[1]), 1.0, atol=1e-13)


def test_extension_reproduces_quadratics(circle_grid, circle_ops):
    def g(P):
        return 1 + P[:, 0] + 2 * P[:, 1] - P[:, 0] * P[:, 1] + P[:, 1] ** 2

    values = circle_ops.E @ g(circle_grid.active.points)
    np.testing.assert_allclose(values, g(circle_grid.all_cp), atol=1e-10 * 5)


def test_extension_row_of_grid_point_cp_is_unit(circle_grid, circle_ops):
    # (1, 0) lies on the lattice and on the circle
    row = int(circle_grid.lookup(circle_grid.nearest_keys(np.array([[1.2, 0.0]])))[0])
    values = circle_ops.E[row].toarray().ravel()
    assert np.count_nonzero(values) == 1
    assert values.max() == pytest.approx(1.0)


def test_ambient_laplacian(circle_grid, circle_ops):
    L = circle_ops.L
    d = circle_grid.dim
    assert L.shape == (circle_grid.n_active, circle_grid.n_active + circle_grid.n_ghost)
    np.testing.assert_array_equal(np.diff(L.indptr), 2 * d + 1)
    np.testing.assert_allclose(L @ np.ones(L.shape[1]), 0.0, atol=1e-9)
    x = circle_grid.all_points[:, 0]
    np.testing.assert_allclose(L @ x**2, 2.0, atol=1e-8)


def test_ambient_laplacian_matches_dense_loop(circle_grid, circle_ops, rng):
    v = rng.normal(size=circle_grid.n_active + circle_grid.n_ghost)
    h = circle_grid.h
    out = np.empty(circle_grid.n_active)
    for i, key in enumerate(circle_grid.active.keys):
        nb = circle_grid.lookup(circle_grid.neighbour_keys(np.array([key]))[0])
        out[i] = (v[nb].sum() - 4 * v[i]) / h**2
    np.testing.assert_allclose(circle_ops.L @ v, out, rtol=1e-12, atol=1e-12 * np.abs(out).max())


def test_helmholtz_constant_kernel(circle_grid, circle_ops):
    np.testing.assert_allclose(circle_ops.A @ np.ones(circle_grid.n_active), circle_ops.c, atol=1e-10)


def test_stabilized_operator_relation(circle_grid, circle_ops):
    LS = stabilized_laplace_beltrami(circle_grid, circle_ops.E, circle_ops.L)
    np.testing.assert_allclose(LS @ np.ones(circle_grid.n_active), 0.0, atol=1e-10)
    diff = circle_ops.c * sp.identity(circle_grid.n_active) - LS - circle_ops.A
    assert abs(diff).max() < 1e-9


def test_nonpositive_shift_is_config_error(circle_grid, circle_ops):
    with pytest.raises(ConfigError):
        assemble_helmholtz(circle_grid, circle_ops.E, circle_ops.L, 0.0)


def test_direct_solve_recovers_manufactured_vector(circle_ops, rng):
    g = rng.normal(size=circle_ops.A.shape[0])
    u = direct_solve(circle_ops.A, circle_ops.A @ g)
    np.testing.assert_allclose(u, g, rtol=1e-8, atol=1e-8 * np.abs(g).max())


def test_matrix_market_export(circle_ops, tmp_path):
    path = tmp_path / "A.mtx"
    export_matrix_market(path, circle_ops.A)
    assert path.read_text().startswith("%%MatrixMarket")


def test_missing_stencil_node_is_band_error(circle_grid):
    dropped = circle_grid.stencil_keys(circle_grid.active.cp[:1])[0, 0]
    keep = circle_grid.active.keys != dropped
    a = circle_grid.active
    active = NodeSet(a.keys[keep], a.index[keep], a.points[keep], a.cp[keep], a.normal[keep], a.dist[keep])
    with pytest.raises(BandConstructionError):
        build_extension(replace(circle_grid, active=active))


def test_circle_mode_second_order():
    errors = []
    for h in (1 / 32, 1 / 64, 1 / 128):
        grid = build_band_tube(Circle(1.0), h, 3)
        ops = GlobalOperators.build(grid, 1.0)
        problem = circle_mode(1.0, k=2)
        u = direct_solve(ops.A, problem.rhs_values(grid))
        errors.append(np.abs(u - problem.exact_values(grid)).max())
    orders = np.log2(np.array(errors[:-1]) / np.array(errors[1:]))
    assert np.all(orders >= 1.7)


@pytest.mark.slow
def test_sphere_rms_error_levels():
    problem = sphere_exp(1.0)
    rms = []
    for h in (1 / 25, 1 / 50):
        grid = build_band_tube(Sphere(1.0), h, 2)
        ops = GlobalOperators.build(grid, 1.0)
        u = direct_solve(ops.A, problem.rhs_values(grid))
        rms.append(np.linalg.norm(u - problem.exact_values(grid)) / np.sqrt(grid.n_active))
    # right-of-centre quadratic stencils sit about 1.5x above 4.486e-3
    assert 4.486e-3 <= rms[0] <= 1.7 * 4.486e-3
    assert rms[1] <= rms[0] / 2
