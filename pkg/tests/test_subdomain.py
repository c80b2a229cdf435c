import numpy as np
import pandas as pd
import pytest
from scipy.sparse.csgraph import shortest_path

from cpmdd.errors import SubdomainError
from cpmdd.geometry import Sphere
from cpmdd.operators import build_extension
from cpmdd.partition import PartitionMap, build_graph, partition_graph
from cpmdd.subdomain import (
    build_boundary_geometry,
    build_subdomains,
    collect_ghost_and_bc,
    conormals,
    cross_nodes,
    grow_overlap,
    write_subdomain_csv,
)


@pytest.fixture(scope="module")
def circle_pmap(circle_graph):
    return partition_graph(circle_graph, 2, seed=0)


@pytest.fixture(scope="module")
def circle_subs(circle, circle_grid, circle_graph, circle_ops, circle_pmap):
    return build_subdomains(circle, circle_grid, circle_graph, circle_ops.E, circle_pmap, 3, robin=True)


def test_overlap_matches_breadth_first_distance(circle_graph, circle_pmap):
    n_o = 3
    for j, (overlap, final) in enumerate(grow_overlap(circle_graph, circle_pmap, n_o)):
        dist = shortest_path(circle_graph.adjacency, unweighted=True, directed=False,
                             indices=circle_pmap.members(j)).min(axis=0)
        np.testing.assert_array_equal(overlap, np.flatnonzero(dist <= n_o))
        np.testing.assert_array_equal(final, np.flatnonzero(dist == n_o))


def test_overlap_grows_monotonically(circle_graph, circle_pmap):
    previous = None
    for n_o in (1, 2, 4):
        overlap, _ = grow_overlap(circle_graph, circle_pmap, n_o)[0]
        if previous is not None:
            assert np.isin(previous, overlap).all()
            assert overlap.size > previous.size
        previous = overlap


def test_overlap_saturates(circle_graph, circle_pmap):
    overlap, final = grow_overlap(circle_graph, circle_pmap, 10_000)[0]
    assert overlap.size == circle_graph.n_nodes
    assert final.size > 0


def test_overlap_needs_a_layer(circle_graph, circle_pmap):
    with pytest.raises(SubdomainError):
        grow_overlap(circle_graph, circle_pmap, 0)


def test_single_subdomain_has_no_boundary(circle_grid, circle_ops):
    overlap = np.arange(circle_grid.n_active)
    ghosts, bc, flags = collect_ghost_and_bc(circle_grid, circle_ops.E, overlap, robin=True)
    np.testing.assert_array_equal(ghosts, np.arange(circle_grid.n_ghost))
    assert bc.size == 0 and flags.size == 0


def test_local_stencils_are_covered(circle_grid, circle_ops, circle_subs):
    n_a = circle_grid.n_active
    for sub in circle_subs:
        active_bc = sub.bc_nodes[~sub.bc_ghost_type]
        assert np.all(active_bc < n_a)
        assert not np.isin(active_bc, sub.overlap).any()
        cols = np.unique(circle_ops.A[sub.overlap].indices)
        assert np.isin(cols, np.union1d(sub.overlap, active_bc)).all()
        fd_cols = np.unique(circle_ops.L[sub.overlap].indices)
        np.testing.assert_array_equal(fd_cols[fd_cols >= n_a] - n_a, sub.ghosts)


def test_robin_adds_ghost_type_layer(circle_grid, circle_ops, circle_subs):
    for sub in circle_subs:
        _, bc_dir, flags_dir = collect_ghost_and_bc(circle_grid, circle_ops.E, sub.overlap, robin=False)
        assert not flags_dir.any()
        np.testing.assert_array_equal(bc_dir, sub.bc_nodes[~sub.bc_ghost_type])
        extra = sub.bc_nodes[sub.bc_ghost_type]
        assert extra.size > 0
        taken = np.concatenate([sub.overlap, sub.ghosts + circle_grid.n_active, bc_dir])
        assert not np.isin(extra, taken).any()


def test_conormals_are_unit_tangents():
    normal = np.array([[0.0, 0.0, 1.0], [0.0, 0.0, 1.0], [1.0, 0.0, 0.0]])
    offset = np.array([[3.0, 4.0, 7.0], [0.0, 0.0, 2.0], [0.0, 0.0, 0.0]])
    out = conormals(offset, normal)
    np.testing.assert_allclose(out[0], [0.6, 0.8, 0.0])
    np.testing.assert_array_equal(out[1:], 0.0)


def test_boundary_points_are_nearest_on_the_final_layer(circle_grid, circle_subs):
    for sub in circle_subs:
        g = sub.geometry
        lam = sub.boundary_points
        np.testing.assert_array_equal(lam, circle_grid.active.cp[sub.final_layer])
        x = circle_grid.all_points[sub.bc_nodes]
        brute = np.linalg.norm(x[:, None, :] - lam[None, :, :], axis=2).min(axis=1)
        np.testing.assert_allclose(np.linalg.norm(g.offset, axis=1), brute, atol=1e-12)
        np.testing.assert_allclose(circle_grid.active.cp[g.source], g.cp_local)


def test_circle_conormals_are_tangent(circle_subs):
    for sub in circle_subs:
        g = sub.geometry
        radial = g.cp_local / np.linalg.norm(g.cp_local, axis=1, keepdims=True)
        np.testing.assert_allclose(np.einsum("ij,ij->i", g.conormal, radial), 0.0, atol=1e-10)
        lengths = np.linalg.norm(g.conormal, axis=1)
        assert np.all(np.isclose(lengths, 1.0) | (lengths == 0.0))


def test_boundary_geometry_empty(circle, circle_grid):
    g = build_boundary_geometry(circle, circle_grid, np.arange(3), np.empty(0, dtype=np.int64))
    assert g.points.shape == (0, 2)


def test_two_arcs_have_no_cross_points(circle_graph, circle_pmap, circle_subs):
    assert cross_nodes(circle_graph, circle_pmap).size == 0
    assert not any(sub.cross_flagged.any() for sub in circle_subs)


@pytest.fixture(scope="module")
def sphere_split(sphere_grid):
    graph = build_graph(sphere_grid)
    pmap = partition_graph(graph, 8, seed=0)
    E = build_extension(sphere_grid)
    subs = build_subdomains(Sphere(1.0), sphere_grid, graph, E, pmap, 2, robin=True)
    return graph, pmap, subs


def test_eight_patches_meet_at_cross_points(sphere_grid, sphere_split):
    graph, pmap, subs = sphere_split
    cross = cross_nodes(graph, pmap)
    assert cross.size > 0
    assert any(sub.cross_flagged.any() for sub in subs)
    reach = 2 * 2 * sphere_grid.h
    pts = sphere_grid.active.points[cross]
    for sub in subs:
        x = sphere_grid.all_points[sub.bc_nodes]
        nearest = np.linalg.norm(x[:, None, :] - pts[None, :, :], axis=2).min(axis=1)
        np.testing.assert_array_equal(sub.cross_flagged, nearest <= reach * (1 + 1e-12))


def test_threaded_build_matches_serial(circle, circle_grid, circle_graph, circle_ops, circle_pmap, circle_subs):
    threaded = build_subdomains(circle, circle_grid, circle_graph, circle_ops.E, circle_pmap, 3, robin=True, workers=2)
    for a, b in zip(circle_subs, threaded):
        np.testing.assert_array_equal(a.overlap, b.overlap)
        np.testing.assert_array_equal(a.bc_nodes, b.bc_nodes)
        np.testing.assert_array_equal(a.geometry.cp_local, b.geometry.cp_local)


def test_boundary_node_records(circle_subs):
    sub = circle_subs[0]
    nodes = sub.boundary_nodes()
    assert len(nodes) == sub.n_bc
    assert [n.is_ghost_type for n in nodes] == sub.bc_ghost_type.tolist()


def test_subdomain_dump(tmp_path, circle_grid, circle_subs):
    path = tmp_path / "subdomains.csv"
    write_subdomain_csv(path, circle_grid, circle_subs)
    df = pd.read_csv(path)
    assert set(df["role"]) == {"disjoint", "overlap", "ghost", "bc", "bc_ghost_type"}
    assert (df["role"] == "disjoint").sum() == circle_grid.n_active
