"""
Overlapping subdomains.

For each part of the disjoint partition this module grows N_O overlap layers
and sorts every lattice node a local problem touches into one role:

- overlap   Σ_j     unknowns with a PDE row
- ghosts    Σ_j^G   global ghosts completing FD stencils of Σ_j, eliminated by E
- bc        Σ_j^BC  remaining stencil nodes, closed by transmission rows;
                    with Robin transmission a further lattice layer around the
                    active BC nodes is added and flagged ghost-type

BC nodes are stored as extended ids (active ordinal, or N_A + ghost ordinal).
Each BC node also gets its local boundary point on Λ_j (closest points of the
final overlap layer), offset, conormal and cross-point flag.
"""
from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Tuple

import numpy as np
import pandas as pd
import scipy.sparse as sp
from sklearn.neighbors import NearestNeighbors

from .band import BandGrid
from .errors import BandConstructionError, SubdomainError
from .geometry import Surface
from .partition import NodeGraph, PartitionMap

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class BoundaryNode:
    node: int
    is_ghost_type: bool
    cp_local: np.ndarray
    offset: np.ndarray
    conormal: np.ndarray
    cross_flagged: bool


@dataclass
class BoundaryGeometry:
    points: np.ndarray        # Λ_j
    source: np.ndarray        # final-layer active ordinal whose CP is cp_local
    cp_local: np.ndarray
    normal: np.ndarray
    offset: np.ndarray
    conormal: np.ndarray
    fallback: int = 0


@dataclass
class Subdomain:
    """Node sets of one subproblem.

    ``overlap`` and ``disjoint`` are sorted active ordinals; the
    ``restrict_*`` views name them as the restrictions R_j and R̃_j.
    """

    id: int
    disjoint: np.ndarray
    overlap: np.ndarray
    final_layer: np.ndarray
    ghosts: np.ndarray
    bc_nodes: np.ndarray
    bc_ghost_type: np.ndarray
    geometry: BoundaryGeometry
    cross_flagged: np.ndarray
    warnings: List[str] = field(default_factory=list)

    @property
    def restrict_overlap(self) -> np.ndarray:
        return self.overlap

    @property
    def restrict_disjoint(self) -> np.ndarray:
        return self.disjoint

    @property
    def disjoint_local(self) -> np.ndarray:
        """Positions of the disjoint nodes inside the overlap ordering."""
        return np.searchsorted(self.overlap, self.disjoint)

    @property
    def boundary_points(self) -> np.ndarray:
        return self.geometry.points

    @property
    def n_bc(self) -> int:
        return int(self.bc_nodes.size)

    def boundary_nodes(self) -> List[BoundaryNode]:
        g = self.geometry
        return [
            BoundaryNode(
                node=int(self.bc_nodes[r]),
                is_ghost_type=bool(self.bc_ghost_type[r]),
                cp_local=g.cp_local[r],
                offset=g.offset[r],
                conormal=g.conormal[r],
                cross_flagged=bool(self.cross_flagged[r]),
            )
            for r in range(self.n_bc)
        ]


def grow_overlap(graph: NodeGraph, pmap: PartitionMap, n_overlap: int) -> List[Tuple[np.ndarray, np.ndarray]]:
    """(Σ_j, final layer) per part after N_O breadth-first layers."""
    if n_overlap < 1:
        raise SubdomainError("overlap needs at least one layer")
    out = []
    for j in range(pmap.n_parts):
        inside = pmap.part == j
        final = np.empty(0, dtype=np.int64)
        for _ in range(n_overlap):
            reach = graph.adjacency @ inside.astype(float) > 0
            new = reach & ~inside
            if not new.any():
                break
            inside |= new
            final = np.flatnonzero(new)
        out.append((np.flatnonzero(inside), final))
    return out


def collect_ghost_and_bc(
    grid: BandGrid,
    E: sp.csr_matrix,
    overlap: np.ndarray,
    robin: bool,
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(ghost ordinals, BC extended ids, ghost-type flags) for one overlap set.

    With ``robin`` one more lattice layer around the active BC nodes is
    appended and flagged. Those columns appear only in their own Robin rows
    (the interpolation rows of final-layer CPs stay inside Σ_j and the
    active BC set), so the local matrix is block triangular in them and the
    Σ_j part of every local solve does not depend on the extra layer.
    """
    n_a = grid.n_active
    fd = grid.lookup(grid.neighbour_keys(grid.active.keys[overlap]))
    if np.any(fd < 0):
        raise BandConstructionError("overlap node has a neighbour outside the band")
    fd = np.union1d(overlap, fd.ravel())
    ghosts = fd[fd >= n_a] - n_a

    in_overlap = np.zeros(n_a, dtype=bool)
    in_overlap[overlap] = True
    fd_active = fd[fd < n_a]
    stencil = np.unique(E[fd].indices)
    bc_active = np.union1d(fd_active[~in_overlap[fd_active]], stencil[~in_overlap[stencil]])

    ghost_type = np.empty(0, dtype=np.int64)
    if robin and bc_active.size:
        nb = grid.lookup(grid.neighbour_keys(grid.active.keys[bc_active]))
        if np.any(nb < 0):
            raise BandConstructionError("boundary node has a neighbour outside the band")
        known = np.union1d(np.union1d(overlap, ghosts + n_a), bc_active)
        ghost_type = np.setdiff1d(np.unique(nb), known, assume_unique=True)

    bc = np.concatenate([bc_active, ghost_type]).astype(np.int64)
    flags = np.concatenate([np.zeros(bc_active.size, bool), np.ones(ghost_type.size, bool)])
    return ghosts.astype(np.int64), bc, flags


def conormals(offset: np.ndarray, normal: np.ndarray) -> np.ndarray:
    """Unit tangential part of each offset, or zero when it vanishes."""
    tangential = offset - np.einsum("ij,ij->i", offset, normal)[:, None] * normal
    tnorm = np.linalg.norm(tangential, axis=1)
    onorm = np.linalg.norm(offset, axis=1)
    out = np.zeros_like(offset)
    usable = (onorm > 0) & (tnorm > 1e-12 * onorm)
    out[usable] = tangential[usable] / tnorm[usable, None]
    return out


def build_boundary_geometry(
    surface: Surface,
    grid: BandGrid,
    final_layer: np.ndarray,
    bc_nodes: np.ndarray,
) -> BoundaryGeometry:
    dim = grid.dim
    empty = np.empty((0, dim))
    if bc_nodes.size == 0:
        return BoundaryGeometry(empty, np.empty(0, np.int64), empty, empty, empty, empty)
    if final_layer.size == 0:
        raise SubdomainError("boundary nodes present but the final overlap layer is empty")

    lam = grid.active.cp[final_layer]
    x = grid.all_points[bc_nodes]
    radius = (grid.p + 1) * grid.h * np.sqrt(dim) / 2 + grid.h

    # visit BC nodes from each boundary point; keep the closest, lowest index on ties
    dist, hits = NearestNeighbors(radius=radius, algorithm="kd_tree").fit(x).radius_neighbors(lam)
    counts = np.array([len(hh) for hh in hits])
    y_idx = np.repeat(np.arange(lam.shape[0]), counts)
    bc_idx = np.concatenate(hits).astype(np.int64) if counts.sum() else np.empty(0, np.int64)
    d_all = np.concatenate(dist) if counts.sum() else np.empty(0)
    order = np.lexsort((y_idx, d_all, bc_idx))
    choice = np.full(bc_nodes.size, -1, dtype=np.int64)
    first = np.ones(order.size, dtype=bool)
    first[1:] = bc_idx[order][1:] != bc_idx[order][:-1]
    choice[bc_idx[order][first]] = y_idx[order][first]

    missing = np.flatnonzero(choice < 0)
    if missing.size:
        _, nearest = NearestNeighbors(n_neighbors=1, algorithm="kd_tree").fit(lam).kneighbors(x[missing])
        choice[missing] = nearest[:, 0]
        log.warning("%d boundary nodes had no boundary point within %.3g; used global nearest", missing.size, radius)

    cp_local = lam[choice]
    _, normal, _ = surface.closest_points(cp_local)
    offset = x - cp_local
    return BoundaryGeometry(
        points=lam,
        source=final_layer[choice],
        cp_local=cp_local,
        normal=normal,
        offset=offset,
        conormal=conormals(offset, normal),
        fallback=int(missing.size),
    )


def cross_nodes(graph: NodeGraph, pmap: PartitionMap) -> np.ndarray:
    """Active nodes with graph neighbours in at least two other parts."""
    coo = graph.adjacency.tocoo()
    part = pmap.part
    other = part[coo.row] != part[coo.col]
    pairs = np.unique(np.column_stack([coo.row[other], part[coo.col[other]]]), axis=0)
    if pairs.size == 0:
        return np.empty(0, dtype=np.int64)
    counts = np.bincount(pairs[:, 0], minlength=graph.n_nodes)
    return np.flatnonzero(counts >= 2)


def find_cross_points(
    grid: BandGrid,
    graph: NodeGraph,
    pmap: PartitionMap,
    subdomains: List[Subdomain],
    n_overlap: int,
) -> np.ndarray:
    """Flag every BC node within 2·N_O·h of a cross node; returns the cross nodes."""
    cross = cross_nodes(graph, pmap)
    for sub in subdomains:
        sub.cross_flagged = np.zeros(sub.n_bc, dtype=bool)
    if cross.size == 0:
        return cross
    tree = NearestNeighbors(n_neighbors=1, algorithm="kd_tree").fit(grid.active.points[cross])
    reach = 2 * n_overlap * grid.h * (1 + 1e-12)
    for sub in subdomains:
        if sub.n_bc:
            dist, _ = tree.kneighbors(grid.all_points[sub.bc_nodes])
            sub.cross_flagged = dist[:, 0] <= reach
    log.info("%d cross nodes; %d boundary nodes flagged", cross.size, sum(int(s.cross_flagged.sum()) for s in subdomains))
    return cross


def _build_one(surface, grid, E, pmap, j, overlap, final, robin) -> Subdomain:
    ghosts, bc, flags = collect_ghost_and_bc(grid, E, overlap, robin)
    geometry = build_boundary_geometry(surface, grid, final, bc)
    sub = Subdomain(
        id=j,
        disjoint=pmap.members(j),
        overlap=overlap,
        final_layer=final,
        ghosts=ghosts,
        bc_nodes=bc,
        bc_ghost_type=flags,
        geometry=geometry,
        cross_flagged=np.zeros(bc.size, dtype=bool),
    )
    if geometry.fallback:
        sub.warnings.append(f"{geometry.fallback} boundary nodes used the nearest-point fallback")
    return sub


def build_subdomains(
    surface: Surface,
    grid: BandGrid,
    graph: NodeGraph,
    E: sp.csr_matrix,
    pmap: PartitionMap,
    n_overlap: int,
    robin: bool,
    workers: int = 1,
) -> List[Subdomain]:
    layers = grow_overlap(graph, pmap, n_overlap)
    jobs = [(j, ov, fin) for j, (ov, fin) in enumerate(layers)]
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            subs = list(pool.map(lambda a: _build_one(surface, grid, E, pmap, *a, robin), jobs))
    else:
        subs = [_build_one(surface, grid, E, pmap, *a, robin) for a in jobs]
    find_cross_points(grid, graph, pmap, subs, n_overlap)
    for sub in subs:
        log.debug("subdomain %d: |disjoint|=%d |overlap|=%d |ghost|=%d |bc|=%d",
                  sub.id, sub.disjoint.size, sub.overlap.size, sub.ghosts.size, sub.n_bc)
    return subs


def write_subdomain_csv(path: Path, grid: BandGrid, subdomains: List[Subdomain]) -> None:
    n_a = grid.n_active
    frames = []
    for sub in subdomains:
        interior = np.setdiff1d(sub.overlap, sub.disjoint, assume_unique=True)
        roles = [
            ("disjoint", sub.disjoint),
            ("overlap", interior),
            ("ghost", sub.ghosts + n_a),
            ("bc", sub.bc_nodes[~sub.bc_ghost_type]),
            ("bc_ghost_type", sub.bc_nodes[sub.bc_ghost_type]),
        ]
        for role, ids in roles:
            pts = grid.all_points[ids]
            data = {"subdomain": sub.id, "role": role, "node": ids}
            data.update({f"x{k}": pts[:, k] for k in range(grid.dim)})
            frames.append(pd.DataFrame(data))
    pd.concat(frames, ignore_index=True).to_csv(path, index=False)
