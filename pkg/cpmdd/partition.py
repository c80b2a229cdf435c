"""
Graph partitioning of the active nodes.

- NodeGraph: adjacency between active axis-neighbours (the ambient Laplacian stencil)
- partition_graph: seeded multilevel recursive bisection
  (heavy-edge coarsening, greedy growing from pseudo-peripheral nodes,
  boundary refinement, stray-component repair)
- align_interfaces: migrate interface nodes to the part of the lattice node
  nearest their closest point, all flagged nodes moving at once per pass
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components, shortest_path

from .band import BandGrid
from .errors import PartitionError

log = logging.getLogger(__name__)

COARSEST_SIZE = 100
BALANCE_SLACK = 0.02
REFINE_PASSES = 8


@dataclass
class NodeGraph:
    adjacency: sp.csr_matrix

    @property
    def n_nodes(self) -> int:
        return self.adjacency.shape[0]

    @property
    def n_edges(self) -> int:
        return self.adjacency.nnz // 2

    def degree(self) -> np.ndarray:
        return np.diff(self.adjacency.indptr)


@dataclass
class PartitionMap:
    part: np.ndarray
    n_parts: int

    def __post_init__(self):
        self.part = np.asarray(self.part, dtype=np.int64)
        if self.part.size and (self.part.min() < 0 or self.part.max() >= self.n_parts):
            raise PartitionError(f"part ids must lie in [0, {self.n_parts})")
        sizes = np.bincount(self.part, minlength=self.n_parts)
        empty = np.flatnonzero(sizes == 0)
        if empty.size:
            raise PartitionError(f"parts {empty.tolist()} are empty")

    def sizes(self) -> np.ndarray:
        return np.bincount(self.part, minlength=self.n_parts)

    def members(self, j: int) -> np.ndarray:
        return np.flatnonzero(self.part == j)


def build_graph(grid: BandGrid) -> NodeGraph:
    nb = grid.lookup_active(grid.neighbour_keys(grid.active.keys))
    rows = np.repeat(np.arange(grid.n_active), nb.shape[1])
    cols = nb.ravel()
    keep = cols >= 0
    n = grid.n_active
    adj = sp.csr_matrix((np.ones(int(keep.sum())), (rows[keep], cols[keep])), shape=(n, n))
    return NodeGraph(adj)


def _heavy_edge_matching(adj: sp.csr_matrix, rng: np.random.Generator) -> np.ndarray:
    n = adj.shape[0]
    match = np.full(n, -1, dtype=np.int64)
    indptr, indices, data = adj.indptr, adj.indices, adj.data
    for u in rng.permutation(n):
        if match[u] >= 0:
            continue
        best, best_w = u, -1.0
        for pos in range(indptr[u], indptr[u + 1]):
            v = indices[pos]
            if v != u and match[v] < 0 and (data[pos] > best_w or (data[pos] == best_w and v < best)):
                best, best_w = v, data[pos]
        match[u] = best
        match[best] = u
    # coarse ids follow the smaller fine id of each pair
    leader = np.minimum(np.arange(n), match)
    _, cmap = np.unique(leader, return_inverse=True)
    return cmap


def _coarsen(adj: sp.csr_matrix, weights: np.ndarray, cmap: np.ndarray):
    n = adj.shape[0]
    nc = int(cmap.max()) + 1
    P = sp.csr_matrix((np.ones(n), (np.arange(n), cmap)), shape=(n, nc))
    coarse = (P.T @ adj @ P).tocsr()
    coarse = (coarse - sp.diags(coarse.diagonal())).tocsr()
    coarse.eliminate_zeros()
    return coarse, P.T @ weights


def _grow_bisection(adj: sp.csr_matrix, weights: np.ndarray, fraction: float) -> np.ndarray:
    """Left side = nodes closest to one end of a pseudo-peripheral pair."""
    n = adj.shape[0]

    def distances(src: int) -> np.ndarray:
        d = shortest_path(adj, unweighted=True, directed=False, indices=[src])[0]
        finite = np.isfinite(d)
        d[~finite] = d[finite].max() + 1
        return d

    a = int(np.argmax(distances(0)))
    da = distances(a)
    b = int(np.argmax(da))
    db = distances(b)
    order = np.lexsort((np.arange(n), da - db))
    cum = np.cumsum(weights[order])
    target = fraction * cum[-1]
    m = int(np.searchsorted(cum, target)) + 1
    if m > 1 and abs(cum[m - 2] - target) <= abs(cum[m - 1] - target):
        m -= 1
    m = min(max(m, 1), n - 1)
    left = np.zeros(n, dtype=bool)
    left[order[:m]] = True
    return left


def _refine(adj: sp.csr_matrix, weights: np.ndarray, left: np.ndarray, fraction: float) -> np.ndarray:
    """Greedy boundary moves with positive cut gain that keep both sides within slack."""
    left = left.copy()
    total = weights.sum()
    caps = ((1 + BALANCE_SLACK) * fraction * total, (1 + BALANCE_SLACK) * (1 - fraction) * total)
    side_w = [weights[left].sum(), weights[~left].sum()]
    indptr, indices, data = adj.indptr, adj.indices, adj.data
    coo = adj.tocoo()

    for _ in range(REFINE_PASSES):
        cut = left[coo.row] != left[coo.col]
        ext = np.bincount(coo.row, weights=coo.data * cut, minlength=left.size)
        inner = np.bincount(coo.row, weights=coo.data * ~cut, minlength=left.size)
        gain = ext - inner
        boundary = np.flatnonzero((ext > 0) & (gain > 0))
        moved = 0
        for u in boundary[np.lexsort((boundary, -gain[boundary]))]:
            nbrs = indices[indptr[u]:indptr[u + 1]]
            w = data[indptr[u]:indptr[u + 1]]
            same = left[nbrs] == left[u]
            g = w[~same].sum() - w[same].sum()
            dest = 1 if left[u] else 0
            src = 1 - dest
            # a side must keep at least one node
            if g <= 0 or side_w[dest] + weights[u] > caps[dest] or side_w[src] - weights[u] <= 0:
                continue
            left[u] = not left[u]
            side_w[dest] += weights[u]
            side_w[src] -= weights[u]
            moved += 1
        if not moved:
            break
    return left


def _bisect(adj: sp.csr_matrix, fraction: float, rng: np.random.Generator) -> np.ndarray:
    levels = []
    A, w = adj, np.ones(adj.shape[0])
    while A.shape[0] > COARSEST_SIZE:
        cmap = _heavy_edge_matching(A, rng)
        if cmap.max() + 1 > 0.9 * A.shape[0]:
            break
        levels.append((A, w, cmap))
        A, w = _coarsen(A, w, cmap)
    left = _refine(A, w, _grow_bisection(A, w, fraction), fraction)
    for A, w, cmap in reversed(levels):
        left = _refine(A, w, left[cmap], fraction)
    return left


def _recurse(adj, nodes, n_parts, first, part, rng) -> None:
    if n_parts == 1:
        part[nodes] = first
        return
    k_left = n_parts // 2
    left = _bisect(adj, k_left / n_parts, rng)
    if left.sum() < k_left or (~left).sum() < n_parts - k_left:
        raise PartitionError(f"cannot split {nodes.size} nodes into {n_parts} parts")
    for mask, k, start in ((left, k_left, first), (~left, n_parts - k_left, first + k_left)):
        idx = np.flatnonzero(mask)
        _recurse(adj[idx][:, idx].tocsr(), nodes[idx], k, start, part, rng)


def _repair_connectivity(adj: sp.csr_matrix, part: np.ndarray, n_parts: int) -> int:
    """Hand stray components of each part to the neighbouring part sharing most edges."""
    moved = 0
    coo = adj.tocoo()
    for j in range(n_parts):
        nodes = np.flatnonzero(part == j)
        ncomp, labels = connected_components(adj[nodes][:, nodes], directed=False)
        if ncomp <= 1:
            continue
        keep = int(np.argmax(np.bincount(labels)))
        for comp in range(ncomp):
            if comp == keep:
                continue
            members = np.zeros(part.size, dtype=bool)
            members[nodes[labels == comp]] = True
            edges = members[coo.row] & (part[coo.col] != j)
            if not edges.any():
                continue  # isolated component of a disconnected graph
            votes = np.bincount(part[coo.col[edges]], minlength=n_parts)
            part[members] = int(np.argmax(votes))
            moved += int(members.sum())
    return moved


def partition_graph(graph: NodeGraph, n_parts: int, seed: int = 0) -> PartitionMap:
    n = graph.n_nodes
    if n_parts < 1:
        raise PartitionError("need at least one part")
    if n_parts > n:
        raise PartitionError(f"cannot split {n} nodes into {n_parts} parts")
    part = np.zeros(n, dtype=np.int64)
    if n_parts > 1:
        ncomp, _ = connected_components(graph.adjacency, directed=False)
        if ncomp > 1:
            log.warning("node graph has %d connected components", ncomp)
        rng = np.random.default_rng(seed)
        _recurse(graph.adjacency, np.arange(n), n_parts, 0, part, rng)
        moved = _repair_connectivity(graph.adjacency, part, n_parts)
        if moved:
            log.info("reassigned %d nodes from disconnected part fragments", moved)
    pmap = PartitionMap(part, n_parts)
    largest = pmap.sizes().max()
    if largest > 1.1 * n / n_parts:
        log.warning("partition imbalance: largest part %d vs mean %.1f", largest, n / n_parts)
    return pmap


def save_partition(path: Path, pmap: PartitionMap) -> None:
    np.savetxt(path, pmap.part, fmt="%d")


def load_partition(path: Path, n_active: Optional[int] = None) -> PartitionMap:
    part = np.atleast_1d(np.loadtxt(path, dtype=np.int64))
    if n_active is not None and part.size != n_active:
        raise PartitionError(f"{path}: {part.size} entries for {n_active} active nodes")
    if part.size == 0:
        raise PartitionError(f"{path}: empty partition file")
    if part.min() < 0:
        raise PartitionError(f"{path}: negative part id")
    return PartitionMap(part, int(part.max()) + 1)


def interface_mask(graph: NodeGraph, part: np.ndarray) -> np.ndarray:
    coo = graph.adjacency.tocoo()
    mask = np.zeros(graph.n_nodes, dtype=bool)
    mask[coo.row[part[coo.row] != part[coo.col]]] = True
    return mask


def _targets(grid: BandGrid) -> np.ndarray:
    return grid.lookup_active(grid.nearest_keys(grid.active.cp))


def count_misaligned(grid: BandGrid, graph: NodeGraph, pmap: PartitionMap) -> int:
    part = pmap.part
    target = _targets(grid)
    flagged = interface_mask(graph, part) & (target >= 0)
    return int(np.sum(part[flagged] != part[target[flagged]]))


def align_interfaces(
    grid: BandGrid,
    graph: NodeGraph,
    pmap: PartitionMap,
    passes: Optional[int] = None,
) -> PartitionMap:
    passes = grid.p + 1 if passes is None else passes
    part = pmap.part.copy()
    target = _targets(grid)
    for step in range(passes):
        flagged = interface_mask(graph, part) & (target >= 0)
        flagged[flagged] = part[flagged] != part[target[flagged]]
        if not flagged.any():
            break
        part[flagged] = part[target[flagged]]
        log.debug("alignment pass %d moved %d nodes", step + 1, int(flagged.sum()))
        sizes = np.bincount(part, minlength=pmap.n_parts)
        if np.any(sizes == 0):
            raise PartitionError(
                f"interface alignment emptied parts {np.flatnonzero(sizes == 0).tolist()}; "
                "too many subdomains for this resolution"
            )
    return PartitionMap(part, pmap.n_parts)

