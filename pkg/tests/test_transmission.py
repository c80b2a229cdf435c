from dataclasses import replace

import numpy as np
import pytest
import scipy.sparse as sp
from scipy.sparse.linalg import LinearOperator, splu

from cpmdd.errors import SingularSubdomainError, SubdomainError
from cpmdd.models import Method, SolverConfig, TransmissionKind, TransmissionSpec
from cpmdd.partition import PartitionMap, partition_graph
from cpmdd.pipeline import split
from cpmdd.solve import stationary_solve
from cpmdd.subdomain import build_subdomains
from cpmdd.transmission import (
    LocalOperator,
    assemble_local,
    build_transmission_rows,
    degenerate_rows,
    factor,
    local_index,
    local_rhs,
    local_solve,
    robin_scale,
)

DIRICHLET = TransmissionSpec()
ROBIN = TransmissionSpec(kind=TransmissionKind.ROBIN, alpha=2.0, alpha_cross=20.0)


def _algebraic_ras(A, subdomains):
    """Σ R̃ᵀ (R A Rᵀ)⁻¹ R assembled from A alone."""
    A = sp.csr_matrix(A)
    factors = [(sub, splu(sp.csc_matrix(A[sub.overlap][:, sub.overlap]))) for sub in subdomains]

    def matvec(r):
        r = np.asarray(r, dtype=float).ravel()
        z = np.zeros(A.shape[0])
        for sub, lu in factors:
            z[sub.disjoint] = lu.solve(r[sub.overlap])[sub.disjoint_local]
        return z

    return LinearOperator(A.shape, matvec=matvec, dtype=np.float64)


def _on_node(grid, sub):
    """BC nodes whose local boundary point is the node itself."""
    gap = grid.all_points[sub.bc_nodes] - sub.geometry.cp_local
    return np.linalg.norm(gap, axis=1) < 1e-12


@pytest.fixture(scope="module")
def robin_subs(circle, circle_grid, circle_graph, circle_ops):
    pmap = partition_graph(circle_graph, 2, seed=0)
    return build_subdomains(circle, circle_grid, circle_graph, circle_ops.E, pmap, 3, robin=True)


def test_single_subdomain_is_the_global_matrix(circle, circle_grid, circle_graph, circle_ops):
    pmap = PartitionMap(np.zeros(circle_grid.n_active, dtype=np.int64), 1)
    (sub,) = build_subdomains(circle, circle_grid, circle_graph, circle_ops.E, pmap, 2, robin=True)
    local = assemble_local(circle_grid, sub, circle_ops, ROBIN)
    assert local.n_bc == 0
    assert abs(local.matrix - circle_ops.A).max() < 1e-14


def test_local_index_layout(circle_grid, robin_subs):
    sub = robin_subs[0]
    g2l = local_index(circle_grid, sub)
    np.testing.assert_array_equal(g2l[sub.overlap], np.arange(sub.overlap.size))
    np.testing.assert_array_equal(g2l[sub.bc_nodes], sub.overlap.size + np.arange(sub.n_bc))
    assert (g2l >= 0).sum() == sub.overlap.size + sub.n_bc


def test_robin_scale_formula(robin_subs):
    sub = robin_subs[0]
    g = sub.geometry
    flags = np.zeros(sub.n_bc, dtype=bool)
    flags[::3] = True
    flagged = replace(sub, cross_flagged=flags)
    proj = np.einsum("ij,ij->i", g.offset, g.conormal)
    expected = 1.0 / (1.0 + np.where(flags, 20.0, 2.0) * proj)
    np.testing.assert_allclose(robin_scale(flagged, ROBIN), expected)
    assert np.all(proj >= 0)


def test_cross_flags_are_neutral_when_weights_agree(circle_grid, circle_ops, robin_subs):
    spec = TransmissionSpec(kind=TransmissionKind.ROBIN, alpha=3.0)
    sub = robin_subs[1]
    flagged = replace(sub, cross_flagged=np.ones(sub.n_bc, dtype=bool))
    a = assemble_local(circle_grid, sub, circle_ops, spec).matrix
    b = assemble_local(circle_grid, flagged, circle_ops, spec).matrix
    assert abs(a - b).max() == 0


def test_row_sums_on_constants(circle_grid, circle_ops, robin_subs):
    for sub in robin_subs:
        for spec in (DIRICHLET, ROBIN):
            local = assemble_local(circle_grid, sub, circle_ops, spec)
            sums = local.matrix @ np.ones(local.size)
            np.testing.assert_allclose(sums[: local.n_interior], circle_ops.c, atol=1e-9)
            expected = np.where(_on_node(circle_grid, sub), 1.0, 1.0 - robin_scale(sub, spec)) if spec.robin else 1.0
            np.testing.assert_allclose(sums[local.n_interior:], expected, atol=1e-12)


def test_dirichlet_rows_are_unit(circle_grid, circle_ops, robin_subs):
    sub = robin_subs[0]
    rows = build_transmission_rows(sub, DIRICHLET, circle_grid, circle_ops.E)
    expected = sp.hstack([sp.csr_matrix((sub.n_bc, sub.overlap.size)), sp.identity(sub.n_bc)])
    assert abs(rows - expected).max() == 0


def test_robin_rows_interpolate_at_the_local_boundary_point(circle_grid, circle_ops, robin_subs):
    sub = robin_subs[0]
    rows = build_transmission_rows(sub, ROBIN, circle_grid, circle_ops.E)
    # a field linear in x: interpolation is exact at cp_local
    x = circle_grid.all_points
    g2l = local_index(circle_grid, sub)
    v = np.zeros(sub.overlap.size + sub.n_bc)
    ids = np.flatnonzero(g2l >= 0)
    v[g2l[ids]] = x[ids, 0]
    own = x[sub.bc_nodes, 0]
    expected = np.where(_on_node(circle_grid, sub), own, own - robin_scale(sub, ROBIN) * sub.geometry.cp_local[:, 0])
    np.testing.assert_allclose(rows @ v, expected, atol=1e-10)


def test_factor_and_solve_identity():
    local = factor(LocalOperator(0, sp.identity(4, format="csc"), 4, 0))
    assert local.factored
    b = np.arange(4.0)
    np.testing.assert_array_equal(local_solve(local, b), b)


def test_factor_random_system(rng):
    M = sp.random(30, 30, density=0.2, random_state=3, format="csc") + 10 * sp.identity(30, format="csc")
    local = factor(LocalOperator(1, sp.csc_matrix(M), 30, 0))
    b = rng.normal(size=30)
    np.testing.assert_allclose(M @ local_solve(local, b), b, atol=1e-10)


def test_singular_local_operator():
    with pytest.raises(SingularSubdomainError) as info:
        factor(LocalOperator(5, sp.csc_matrix(np.ones((2, 2))), 2, 0))
    assert info.value.subdomain == 5


def test_unfactored_solve_is_an_error():
    with pytest.raises(SubdomainError):
        local_solve(LocalOperator(0, sp.identity(2, format="csc"), 2, 0), np.ones(2))


def test_local_rhs_has_homogeneous_transmission_data(circle_grid, circle_ops, robin_subs, rng):
    sub = robin_subs[0]
    local = assemble_local(circle_grid, sub, circle_ops, ROBIN)
    r = rng.normal(size=circle_grid.n_active)
    b = local_rhs(local, sub, r)
    np.testing.assert_array_equal(b[: local.n_interior], r[sub.overlap])
    assert not b[local.n_interior:].any()


def test_dirichlet_iterates_equal_algebraic_ras(circle_disc):
    solver = SolverConfig(method=Method.RAS, n_sub=2, n_overlap=4)
    splitting = split(circle_disc, solver)
    reference = _algebraic_ras(circle_disc.ops.A, splitting.subdomains)
    A, f = circle_disc.ops.A, circle_disc.f
    u_cpm = np.zeros_like(f)
    u_alg = np.zeros_like(f)
    for _ in range(10):
        u_cpm = u_cpm + splitting.preconditioner.matvec(f - A @ u_cpm)
        u_alg = u_alg + reference.matvec(f - A @ u_alg)
        np.testing.assert_allclose(u_cpm, u_alg, rtol=0, atol=1e-10 * np.abs(u_alg).max())


def test_robin_scale_limit_cases(robin_subs):
    sub = robin_subs[0]
    offset = np.tile([0.1, 0.0], (sub.n_bc, 1))
    conormal = np.tile([1.0, 0.0], (sub.n_bc, 1))
    conormal[0] = 0.0
    synthetic = replace(
        sub,
        geometry=replace(sub.geometry, offset=offset, conormal=conormal),
        cross_flagged=np.zeros(sub.n_bc, dtype=bool),
    )
    s = robin_scale(synthetic, TransmissionSpec(kind=TransmissionKind.ROBIN, alpha=1.0))
    assert s[0] == 1.0
    np.testing.assert_allclose(s[1:], 1 / 1.1)


def test_degenerate_rows_detects_cancelled_rows():
    rows = sp.csr_matrix(np.array([[1.0, -0.5, 0.0], [0.0, 0.0, 0.0], [0.0, 1e-14, -1e-14]]))
    np.testing.assert_array_equal(degenerate_rows(rows), [False, True, True])
    assert degenerate_rows(sp.csr_matrix((2, 3))).all()


@pytest.mark.parametrize("n_sub", [2, 4])
def test_oras_local_operators_factor_on_the_fine_circle(circle_disc, n_sub):
    solver = SolverConfig(method=Method.ORAS, n_sub=n_sub, n_overlap=4, alpha=1.0, seed=0)
    splitting = split(circle_disc, solver)
    for sub, local in zip(splitting.subdomains, splitting.locals):
        assert local.factored
        tail = local.matrix.tocsr()[local.n_interior:]
        assert not degenerate_rows(tail).any(), sub.id
    u, history = stationary_solve(circle_disc.ops.A, circle_disc.f, splitting.preconditioner, solver)
    assert history.converged


def test_ghost_type_layer_leaves_interior_corrections_unchanged(circle_grid, circle_ops, robin_subs, rng):
    for sub in robin_subs:
        keep = ~sub.bc_ghost_type
        assert not keep.all()
        g = sub.geometry
        trimmed = replace(
            sub,
            bc_nodes=sub.bc_nodes[keep],
            bc_ghost_type=sub.bc_ghost_type[keep],
            geometry=replace(
                g,
                source=g.source[keep],
                cp_local=g.cp_local[keep],
                normal=g.normal[keep],
                offset=g.offset[keep],
                conormal=g.conormal[keep],
            ),
            cross_flagged=sub.cross_flagged[keep],
        )
        full = factor(assemble_local(circle_grid, sub, circle_ops, ROBIN))
        lean = factor(assemble_local(circle_grid, trimmed, circle_ops, ROBIN))
        r = rng.normal(size=circle_grid.n_active)
        a = local_solve(full, local_rhs(full, sub, r))[: full.n_interior]
        b = local_solve(lean, local_rhs(lean, trimmed, r))[: lean.n_interior]
        np.testing.assert_allclose(a, b, rtol=1e-9, atol=1e-12)
