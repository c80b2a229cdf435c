"""
Computational band on a uniform lattice.

- Nodes are addressed by integer lattice indices; position = origin + h·ix.
- Each index is packed into one int64 key whose natural order is the
  lexicographic order of the indices, so sorted key arrays double as the
  node ordering and as lookup tables (``np.searchsorted``).
- Active nodes carry the unknowns; ghost nodes only complete the
  finite-difference stencils of active nodes.

Two constructions are provided: the tube (distance threshold, flood fill from
surface samples) and the algorithmic band (seed nodes only). Both finish with
a closure pass that adds the interpolation stencils of the closest points of
active nodes and of their finite-difference neighbours.
"""
from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np
import pandas as pd

from .errors import BandConstructionError, EmptyBandError
from .geometry import Surface
from .models import BandMode, BandStats

log = logging.getLogger(__name__)

OFFSET = 1 << 20
BASE = 1 << 21


def axis_strides(dim: int) -> np.ndarray:
    return np.array([BASE ** (dim - 1 - k) for k in range(dim)], dtype=np.int64)


def encode(index: np.ndarray) -> np.ndarray:
    idx = np.asarray(index, dtype=np.int64)
    if idx.ndim == 1:
        idx = idx.reshape(1, -1)
    shifted = idx + OFFSET
    if shifted.size and (shifted.min() < 0 or shifted.max() >= BASE):
        raise BandConstructionError("lattice index outside the addressable range")
    return shifted @ axis_strides(idx.shape[1])


def decode(keys: np.ndarray, dim: int) -> np.ndarray:
    keys = np.asarray(keys, dtype=np.int64)
    out = np.empty((keys.size, dim), dtype=np.int64)
    rest = keys.copy()
    for k in range(dim - 1, -1, -1):
        out[:, k] = rest % BASE - OFFSET
        rest //= BASE
    return out


def neighbour_steps(dim: int) -> np.ndarray:
    """Key increments of the 2d axis neighbours, ordered (-e0, +e0, -e1, ...)."""
    strides = axis_strides(dim)
    return np.ravel(np.column_stack([-strides, strides]))


def _sorted_lookup(sorted_keys: np.ndarray, query: np.ndarray) -> np.ndarray:
    query = np.asarray(query, dtype=np.int64)
    if sorted_keys.size == 0:
        return np.full(query.shape, -1, dtype=np.int64)
    pos = np.searchsorted(sorted_keys, query)
    pos = np.minimum(pos, sorted_keys.size - 1)
    return np.where(sorted_keys[pos] == query, pos, -1)


@dataclass
class NodeSet:
    """Lattice nodes sorted by key, with their closest-point data."""

    keys: np.ndarray
    index: np.ndarray
    points: np.ndarray
    cp: np.ndarray
    normal: np.ndarray
    dist: np.ndarray

    @classmethod
    def empty(cls, dim: int) -> "NodeSet":
        z = np.empty((0, dim))
        return cls(np.empty(0, np.int64), np.empty((0, dim), np.int64), z, z.copy(), z.copy(), np.empty(0))

    @classmethod
    def build(cls, keys, points, cp, normal, dist, dim: int) -> "NodeSet":
        keys = np.asarray(keys, dtype=np.int64)
        order = np.argsort(keys, kind="stable")
        return cls(
            keys=keys[order],
            index=decode(keys[order], dim),
            points=np.asarray(points)[order],
            cp=np.asarray(cp)[order],
            normal=np.asarray(normal)[order],
            dist=np.asarray(dist)[order],
        )

    def __len__(self) -> int:
        return int(self.keys.size)


@dataclass
class BandGrid:
    h: float
    dim: int
    p: int
    origin: np.ndarray
    active: NodeSet
    ghost: NodeSet
    construction: BandMode
    tube_radius: Optional[float] = None
    n_closure: int = 0
    warnings: List[str] = field(default_factory=list)

    @property
    def n_active(self) -> int:
        return len(self.active)

    @property
    def n_ghost(self) -> int:
        return len(self.ghost)

    @cached_property
    def all_keys(self) -> np.ndarray:
        return np.concatenate([self.active.keys, self.ghost.keys])

    @cached_property
    def all_points(self) -> np.ndarray:
        return np.vstack([self.active.points, self.ghost.points])

    @cached_property
    def all_cp(self) -> np.ndarray:
        return np.vstack([self.active.cp, self.ghost.cp])

    @cached_property
    def all_normal(self) -> np.ndarray:
        return np.vstack([self.active.normal, self.ghost.normal])

    @cached_property
    def stencil_offsets(self) -> np.ndarray:
        """(p+1)^d offsets in ``itertools.product`` order (axis 0 slowest)."""
        return np.array(list(itertools.product(range(self.p + 1), repeat=self.dim)), dtype=np.int64)

    @cached_property
    def stencil_key_offsets(self) -> np.ndarray:
        return self.stencil_offsets @ axis_strides(self.dim)

    def lookup(self, keys) -> np.ndarray:
        """Extended ids: active ordinal, N_A + ghost ordinal, or -1 if absent."""
        keys = np.asarray(keys, dtype=np.int64)
        out = _sorted_lookup(self.active.keys, keys)
        g = _sorted_lookup(self.ghost.keys, keys)
        return np.where(out >= 0, out, np.where(g >= 0, g + self.n_active, -1))

    def lookup_active(self, keys) -> np.ndarray:
        return _sorted_lookup(self.active.keys, keys)

    def key_points(self, keys) -> np.ndarray:
        return self.origin + self.h * decode(keys, self.dim)

    def lattice_coords(self, points) -> np.ndarray:
        return (np.asarray(points, dtype=float) - self.origin) / self.h

    def nearest_keys(self, points) -> np.ndarray:
        """Nearest lattice node, rounding half up componentwise."""
        return encode(np.floor(self.lattice_coords(points) + 0.5).astype(np.int64))

    def stencil_base(self, points) -> np.ndarray:
        return stencil_base(self.lattice_coords(points), self.p)

    def stencil_keys(self, points) -> np.ndarray:
        """(n, (p+1)^d) keys of the interpolation stencil around each point."""
        base = encode(self.stencil_base(points))
        return base[:, None] + self.stencil_key_offsets[None, :]

    def neighbour_keys(self, keys) -> np.ndarray:
        return np.asarray(keys, dtype=np.int64)[:, None] + neighbour_steps(self.dim)[None, :]


def stencil_base(t: np.ndarray, p: int) -> np.ndarray:
    """Lower corner of the (p+1)^d stencil for lattice coordinates ``t``.

    The query sits in the central cell for odd p and in the cell right of the
    centre node for even p. A query exactly on a grid plane uses the lower cell.
    """
    cell = np.ceil(np.asarray(t, dtype=float)).astype(np.int64) - 1
    return cell - p // 2


def default_tube_radius(h: float, p: int) -> float:
    return h * ((p + 1) / 2 + 1)


class _Collector:
    """Accumulates queried nodes before they are frozen into a NodeSet."""

    def __init__(self, dim: int):
        self.dim = dim
        self.parts: List[Tuple[np.ndarray, ...]] = []

    def add(self, keys, points, cp, normal, dist) -> None:
        if len(keys):
            self.parts.append((keys, points, cp, normal, dist))

    def keys(self) -> np.ndarray:
        if not self.parts:
            return np.empty(0, np.int64)
        return np.sort(np.concatenate([p[0] for p in self.parts]))

    def freeze(self) -> NodeSet:
        if not self.parts:
            return NodeSet.empty(self.dim)
        cols = [np.concatenate([p[k] for p in self.parts]) for k in range(5)]
        return NodeSet.build(*cols, dim=self.dim)


def _query(surface: Surface, keys: np.ndarray, h: float, origin: np.ndarray, dim: int):
    points = origin + h * decode(keys, dim)
    cp, normal, dist = surface.closest_points(points)
    return points, cp, normal, dist


def _close_stencils(surface, collector: _Collector, fresh_keys: np.ndarray, fresh_cp: np.ndarray, h, p, origin, dim) -> int:
    """Grow the active set until it holds the interpolation stencil of the CP
    of every active node and of every FD neighbour of an active node."""
    offsets = np.array(list(itertools.product(range(p + 1), repeat=dim)), dtype=np.int64) @ axis_strides(dim)
    steps = neighbour_steps(dim)
    added = 0
    known = collector.keys()
    seen = np.empty(0, dtype=np.int64)
    while fresh_keys.size:
        nb = np.unique((fresh_keys[:, None] + steps[None, :]).ravel())
        ghosts = np.setdiff1d(np.setdiff1d(nb, known, assume_unique=True), seen, assume_unique=True)
        seen = np.union1d(seen, ghosts)
        _, ghost_cp, _, _ = _query(surface, ghosts, h, origin, dim)
        cps = np.vstack([fresh_cp, ghost_cp])
        base = encode(stencil_base((cps - origin) / h, p))
        needed = np.unique((base[:, None] + offsets[None, :]).ravel())
        missing = np.setdiff1d(needed, known, assume_unique=True)
        if missing.size == 0:
            break
        points, cp, normal, dist = _query(surface, missing, h, origin, dim)
        collector.add(missing, points, cp, normal, dist)
        known = np.union1d(known, missing)
        added += int(missing.size)
        fresh_keys, fresh_cp = missing, cp
    return added


def _ghost_layer(surface, active: NodeSet, h, origin, dim) -> NodeSet:
    nb = np.unique((active.keys[:, None] + neighbour_steps(dim)[None, :]).ravel())
    ghost_keys = np.setdiff1d(nb, active.keys, assume_unique=True)
    points, cp, normal, dist = _query(surface, ghost_keys, h, origin, dim)
    return NodeSet.build(ghost_keys, points, cp, normal, dist, dim)


def _seed_keys(surface: Surface, h: float, origin: np.ndarray) -> np.ndarray:
    samples = surface.sample_points()
    return np.unique(encode(np.floor((samples - origin) / h + 0.5).astype(np.int64)))


def _finish(surface, collector, h, p, origin, dim, mode, radius, n_closure) -> BandGrid:
    active = collector.freeze()
    if len(active) == 0:
        raise EmptyBandError(f"no lattice node within the band at h={h:g}")
    ghost = _ghost_layer(surface, active, h, origin, dim)
    grid = BandGrid(
        h=h, dim=dim, p=p, origin=origin, active=active, ghost=ghost,
        construction=mode, tube_radius=radius, n_closure=n_closure,
    )
    kappa = surface.curvature_bound()
    if kappa is not None:
        reach = float(active.dist.max())
        if reach * kappa >= 1.0:
            msg = f"band reaches {reach:.4g} from the surface, beyond 1/kappa = {1 / kappa:.4g}"
            log.warning(msg)
            grid.warnings.append(msg)
    log.info("%s band: N_A=%d N_G=%d (closure added %d)", mode.value, grid.n_active, grid.n_ghost, n_closure)
    return grid


def build_band_tube(
    surface: Surface,
    h: float,
    p: int,
    origin: Optional[np.ndarray] = None,
    tube_radius: Optional[float] = None,
) -> BandGrid:
    """Active nodes within ``tube_radius`` of the surface, closed under interpolation stencils."""
    if h <= 0:
        raise ValueError("h must be positive")
    dim = surface.dim
    origin = np.zeros(dim) if origin is None else np.asarray(origin, dtype=float)
    radius = default_tube_radius(h, p) if tube_radius is None else float(tube_radius)
    steps = neighbour_steps(dim)

    collector = _Collector(dim)
    frontier = _seed_keys(surface, h, origin)
    visited = frontier
    while frontier.size:
        points, cp, normal, dist = _query(surface, frontier, h, origin, dim)
        inside = dist <= radius
        collector.add(frontier[inside], points[inside], cp[inside], normal[inside], dist[inside])
        nb = np.unique((frontier[inside][:, None] + steps[None, :]).ravel())
        frontier = np.setdiff1d(nb, visited, assume_unique=True)
        visited = np.union1d(visited, frontier)

    if not collector.parts:
        raise EmptyBandError(f"tube of radius {radius:g} contains no lattice node at h={h:g}")
    tube = collector.freeze()
    n_closure = _close_stencils(surface, collector, tube.keys, tube.cp, h, p, origin, dim)
    return _finish(surface, collector, h, p, origin, dim, BandMode.TUBE, radius, n_closure)


def build_band_algorithmic(
    surface: Surface,
    h: float,
    p: int,
    origin: Optional[np.ndarray] = None,
) -> BandGrid:
    """Smallest stencil-closed node set containing the seed nodes."""
    if h <= 0:
        raise ValueError("h must be positive")
    dim = surface.dim
    origin = np.zeros(dim) if origin is None else np.asarray(origin, dtype=float)
    seeds = _seed_keys(surface, h, origin)
    points, cp, normal, dist = _query(surface, seeds, h, origin, dim)
    base = encode(stencil_base((cp - origin) / h, p))
    own = decode(seeds, dim) - decode(base, dim)
    contained = np.all((own >= 0) & (own <= p), axis=1)
    if not contained.any():
        log.debug("no seed lies in its own stencil; seeding from all nearest nodes")
        contained[:] = True

    collector = _Collector(dim)
    collector.add(seeds[contained], points[contained], cp[contained], normal[contained], dist[contained])
    _close_stencils(surface, collector, seeds[contained], cp[contained], h, p, origin, dim)
    return _finish(surface, collector, h, p, origin, dim, BandMode.ALGORITHMIC, None, 0)


def build_band(surface: Surface, h: float, p: int, mode: BandMode) -> BandGrid:
    if mode is BandMode.TUBE:
        return build_band_tube(surface, h, p)
    return build_band_algorithmic(surface, h, p)


def band_stats(grid: BandGrid) -> BandStats:
    pts = grid.all_points
    dist = np.concatenate([grid.active.dist, grid.ghost.dist])
    return BandStats(
        construction=grid.construction,
        h=grid.h,
        p=grid.p,
        dim=grid.dim,
        n_active=grid.n_active,
        n_ghost=grid.n_ghost,
        n_closure=grid.n_closure,
        bbox_min=pts.min(axis=0).tolist(),
        bbox_max=pts.max(axis=0).tolist(),
        dist_min=float(dist.min()),
        dist_max=float(dist.max()),
        warnings=list(grid.warnings),
    )


def write_band_stats(path: Path, stats: BandStats) -> None:
    pd.DataFrame([stats.to_row()]).to_csv(path, index=False)


def read_band_stats(path: Path) -> BandStats:
    df = pd.read_csv(path, keep_default_na=False)
    return BandStats.from_row(df.iloc[0].to_dict())


def mesh_frame(grid: BandGrid) -> pd.DataFrame:
    axes = range(grid.dim)
    frames = []
    for role, nodes in (("active", grid.active), ("ghost", grid.ghost)):
        data = {"role": [role] * len(nodes)}
        data.update({f"ix{k}": nodes.index[:, k] for k in axes})
        data.update({f"x{k}": nodes.points[:, k] for k in axes})
        data.update({f"cp{k}": nodes.cp[:, k] for k in axes})
        data["dist"] = nodes.dist
        frames.append(pd.DataFrame(data))
    return pd.concat(frames, ignore_index=True)


def write_mesh_csv(path: Path, grid: BandGrid) -> None:
    mesh_frame(grid).to_csv(path, index=False)
