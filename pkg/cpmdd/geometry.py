"""
Closest-point geometry.

Every surface answers the same three questions for points of the embedding
space: where is the closest surface point, what is the unit normal there, and
how far away is it. Analytic kinds use closed-form projections; triangulated
meshes use a uniform spatial hash over triangle bounding boxes.

Queries are read-only after construction and may be issued from several
threads at once.
"""
from __future__ import annotations

import itertools
import logging
import math
from abc import ABC, abstractmethod
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Optional, Tuple

import numpy as np

from .errors import InvalidSurfaceError
from .models import SurfaceKind, SurfaceSpec

log = logging.getLogger(__name__)

CpArrays = Tuple[np.ndarray, np.ndarray, np.ndarray]


@dataclass(frozen=True)
class CpResult:
    cp: np.ndarray
    normal: np.ndarray
    dist: float


def _as_points(X, dim: int) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X.reshape(1, -1)
    if X.shape[1] != dim:
        raise ValueError(f"expected points of dimension {dim}, got {X.shape[1]}")
    return X


class Surface(ABC):
    """Closest-point interface shared by analytic surfaces and meshes."""

    dim: int

    @abstractmethod
    def closest_points(self, X) -> CpArrays:
        """Return (cp, normal, dist) arrays for an (n, dim) batch of points."""

    @abstractmethod
    def curvature_bound(self) -> Optional[float]:
        """κ∞, or None when unknown."""

    @abstractmethod
    def sample_points(self) -> np.ndarray:
        """Points on the surface used to seed band construction."""

    def closest_point(self, x) -> CpResult:
        cp, normal, dist = self.closest_points(_as_points(x, self.dim))
        return CpResult(cp=cp[0], normal=normal[0], dist=float(dist[0]))


class _RoundSurface(Surface):
    def __init__(self, radius: float = 1.0):
        if radius <= 0:
            raise InvalidSurfaceError("radius must be positive")
        self.radius = float(radius)

    def closest_points(self, X) -> CpArrays:
        X = _as_points(X, self.dim)
        rho = np.linalg.norm(X, axis=1)
        direction = np.zeros_like(X)
        off_centre = rho > 0
        direction[off_centre] = X[off_centre] / rho[off_centre, None]
        direction[~off_centre, 0] = 1.0  # centre is equidistant; pick +x
        cp = self.radius * direction
        return cp, direction, np.linalg.norm(X - cp, axis=1)

    def curvature_bound(self) -> float:
        return 1.0 / self.radius

    def sample_points(self) -> np.ndarray:
        pt = np.zeros((1, self.dim))
        pt[0, 0] = self.radius
        return pt


class Circle(_RoundSurface):
    dim = 2


class Sphere(_RoundSurface):
    dim = 3


class Arc(Surface):
    """Circular arc, a curve with two boundary points.

    Points whose angle falls outside [angle_min, angle_max] map to the nearer
    endpoint, which is the Euclidean argmin over the arc.
    """

    dim = 2

    def __init__(self, radius: float = 1.0, angle_min: float = 0.0, angle_max: float = 2.0):
        if radius <= 0:
            raise InvalidSurfaceError("radius must be positive")
        if not 0 < angle_max - angle_min < 2 * math.pi:
            raise InvalidSurfaceError("arc needs angle_min < angle_max < angle_min + 2π")
        self.radius = float(radius)
        self.angle_min = float(angle_min)
        self.angle_max = float(angle_max)

    @property
    def endpoints(self) -> np.ndarray:
        angles = np.array([self.angle_min, self.angle_max])
        return self.radius * np.column_stack([np.cos(angles), np.sin(angles)])

    def tangent_at(self, theta) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        return np.stack([-np.sin(theta), np.cos(theta)], axis=-1)

    def endpoint_of(self, X) -> np.ndarray:
        """-1 where the projection is interior, else 0 (angle_min) or 1 (angle_max)."""
        X = _as_points(X, 2)
        theta = np.arctan2(X[:, 1], X[:, 0])
        rel = np.mod(theta - self.angle_min, 2 * math.pi)
        inside = rel <= self.angle_max - self.angle_min
        ends = self.endpoints
        d0 = np.linalg.norm(X - ends[0], axis=1)
        d1 = np.linalg.norm(X - ends[1], axis=1)
        which = np.where(d1 < d0, 1, 0)
        return np.where(inside, -1, which)

    def angle_of(self, P) -> np.ndarray:
        """Arc parameter of points already on the arc, measured from angle_min."""
        P = _as_points(P, 2)
        theta = np.arctan2(P[:, 1], P[:, 0])
        span = self.angle_max - self.angle_min
        rel = np.mod(theta - self.angle_min, 2 * math.pi)
        # rounding can push the angle_min end just below zero
        rel = np.where(rel > span + 0.5 * (2 * math.pi - span), rel - 2 * math.pi, rel)
        return self.angle_min + np.clip(rel, 0.0, span)

    def closest_points(self, X) -> CpArrays:
        X = _as_points(X, 2)
        rho = np.linalg.norm(X, axis=1)
        direction = np.zeros_like(X)
        off_centre = rho > 0
        direction[off_centre] = X[off_centre] / rho[off_centre, None]
        direction[~off_centre, 0] = 1.0
        cp = self.radius * direction
        which = self.endpoint_of(X)
        ends = self.endpoints
        for k in (0, 1):
            mask = which == k
            cp[mask] = ends[k]
        normal = cp / self.radius
        return cp, normal, np.linalg.norm(X - cp, axis=1)

    def curvature_bound(self) -> float:
        return 1.0 / self.radius

    def sample_points(self) -> np.ndarray:
        mid = 0.5 * (self.angle_min + self.angle_max)
        return self.radius * np.array([[math.cos(mid), math.sin(mid)]])


class Torus(Surface):
    """Torus around the z axis: ring radius R in the xy-plane, tube radius r."""

    dim = 3

    def __init__(self, major_radius: float = 2.0 / 3.0, minor_radius: float = 1.0 / 3.0):
        if not 0 < minor_radius < major_radius:
            raise InvalidSurfaceError("torus needs 0 < minor_radius < major_radius")
        self.major_radius = float(major_radius)
        self.minor_radius = float(minor_radius)

    def closest_points(self, X) -> CpArrays:
        X = _as_points(X, 3)
        rho = np.hypot(X[:, 0], X[:, 1])
        ring_dir = np.zeros_like(X)
        off_axis = rho > 0
        ring_dir[off_axis, 0] = X[off_axis, 0] / rho[off_axis]
        ring_dir[off_axis, 1] = X[off_axis, 1] / rho[off_axis]
        # on the axis the ring projection is not unique; such points lie
        # outside any valid band, so azimuth 0 is taken
        ring_dir[~off_axis, 0] = 1.0
        ring = self.major_radius * ring_dir
        v = X - ring
        vn = np.linalg.norm(v, axis=1)
        normal = ring_dir.copy()
        off_ring = vn > 0
        normal[off_ring] = v[off_ring] / vn[off_ring, None]
        cp = ring + self.minor_radius * normal
        return cp, normal, np.linalg.norm(X - cp, axis=1)

    def curvature_bound(self) -> float:
        return max(1.0 / self.minor_radius, 1.0 / (self.major_radius - self.minor_radius))

    def sample_points(self) -> np.ndarray:
        return np.array([[self.major_radius + self.minor_radius, 0.0, 0.0]])


# region codes returned by closest_on_triangles
VERTEX_A, VERTEX_B, VERTEX_C, EDGE_AB, EDGE_AC, EDGE_BC, FACE = range(7)
_EDGE_CORNERS = {EDGE_AB: (0, 1), EDGE_AC: (0, 2), EDGE_BC: (1, 2)}


def closest_on_triangles(p: np.ndarray, A: np.ndarray, B: np.ndarray, C: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Closest point on each triangle (A[k], B[k], C[k]) to p, with the feature region hit.

    Voronoi-region classification of the point against the triangle's
    vertices, edges and face, evaluated for all triangles at once.
    """
    ab = B - A
    ac = C - A
    ap = p - A
    bp = p - B
    cp_ = p - C
    d1 = np.einsum("ij,ij->i", ab, ap)
    d2 = np.einsum("ij,ij->i", ac, ap)
    d3 = np.einsum("ij,ij->i", ab, bp)
    d4 = np.einsum("ij,ij->i", ac, bp)
    d5 = np.einsum("ij,ij->i", ab, cp_)
    d6 = np.einsum("ij,ij->i", ac, cp_)
    va = d3 * d6 - d5 * d4
    vb = d5 * d2 - d1 * d6
    vc = d1 * d4 - d3 * d2

    region = np.select(
        [
            (d1 <= 0) & (d2 <= 0),
            (d3 >= 0) & (d4 <= d3),
            (vc <= 0) & (d1 >= 0) & (d3 <= 0),
            (d6 >= 0) & (d5 <= d6),
            (vb <= 0) & (d2 >= 0) & (d6 <= 0),
            (va <= 0) & ((d4 - d3) >= 0) & ((d5 - d6) >= 0),
        ],
        [VERTEX_A, VERTEX_B, EDGE_AB, VERTEX_C, EDGE_AC, EDGE_BC],
        default=FACE,
    )

    out = np.empty_like(A)
    with np.errstate(divide="ignore", invalid="ignore"):
        m = region == VERTEX_A
        out[m] = A[m]
        m = region == VERTEX_B
        out[m] = B[m]
        m = region == VERTEX_C
        out[m] = C[m]
        m = region == EDGE_AB
        v = d1[m] / (d1[m] - d3[m])
        out[m] = A[m] + v[:, None] * ab[m]
        m = region == EDGE_AC
        w = d2[m] / (d2[m] - d6[m])
        out[m] = A[m] + w[:, None] * ac[m]
        m = region == EDGE_BC
        w = (d4[m] - d3[m]) / ((d4[m] - d3[m]) + (d5[m] - d6[m]))
        out[m] = B[m] + w[:, None] * (C[m] - B[m])
        m = region == FACE
        denom = 1.0 / (va[m] + vb[m] + vc[m])
        v = vb[m] * denom
        w = vc[m] * denom
        out[m] = A[m] + v[:, None] * ab[m] + w[:, None] * ac[m]
    return out, region


class TriMesh(Surface):
    """Triangulated surface with a uniform spatial hash over triangle boxes."""

    dim = 3

    def __init__(self, vertices, triangles, curvature_bound: Optional[float] = None):
        V = np.asarray(vertices, dtype=float).reshape(-1, 3)
        T = np.asarray(triangles, dtype=np.int64).reshape(-1, 3)
        if T.shape[0] == 0:
            raise InvalidSurfaceError("mesh has no triangles")
        if T.min() < 0 or T.max() >= V.shape[0]:
            raise InvalidSurfaceError("triangle references a missing vertex")

        cross = np.cross(V[T[:, 1]] - V[T[:, 0]], V[T[:, 2]] - V[T[:, 0]])
        area2 = np.linalg.norm(cross, axis=1)
        extent = float(np.ptp(V, axis=0).max()) if V.shape[0] > 1 else 0.0
        degenerate = area2 <= 1e-14 * max(extent, 1e-300) ** 2
        self.n_degenerate = int(degenerate.sum())
        if self.n_degenerate:
            log.warning("skipping %d degenerate triangles", self.n_degenerate)
        if self.n_degenerate == T.shape[0]:
            raise InvalidSurfaceError("every triangle is degenerate")

        self.vertices = V
        self.triangles = T[~degenerate]
        self.face_normals = cross[~degenerate] / area2[~degenerate, None]
        self._curvature_bound = curvature_bound
        self._build_pseudo_normals()
        self._build_hash()

    def _build_pseudo_normals(self) -> None:
        V, T, fn = self.vertices, self.triangles, self.face_normals
        vn = np.zeros_like(V)
        for k in range(3):
            e1 = V[T[:, (k + 1) % 3]] - V[T[:, k]]
            e2 = V[T[:, (k + 2) % 3]] - V[T[:, k]]
            cosang = np.einsum("ij,ij->i", e1, e2) / (
                np.linalg.norm(e1, axis=1) * np.linalg.norm(e2, axis=1)
            )
            angle = np.arccos(np.clip(cosang, -1.0, 1.0))
            np.add.at(vn, T[:, k], angle[:, None] * fn)
        norms = np.linalg.norm(vn, axis=1)
        used = norms > 0
        vn[used] /= norms[used, None]
        self.vertex_normals = vn

        nv = V.shape[0]
        pairs = np.concatenate([T[:, [0, 1]], T[:, [0, 2]], T[:, [1, 2]]])
        pairs.sort(axis=1)
        keys = pairs[:, 0] * nv + pairs[:, 1]
        uniq, inverse = np.unique(keys, return_inverse=True)
        en = np.zeros((uniq.size, 3))
        np.add.at(en, inverse, np.tile(fn, (3, 1)))
        en /= np.linalg.norm(en, axis=1)[:, None]
        self._edge_keys = uniq
        self.edge_normals = en

    def _build_hash(self) -> None:
        V, T = self.vertices, self.triangles
        tri = V[T]
        lo = tri.min(axis=1)
        hi = tri.max(axis=1)
        self.cell_size = float((hi - lo).max())
        lo_cell = np.floor(lo / self.cell_size).astype(np.int64)
        hi_cell = np.floor(hi / self.cell_size).astype(np.int64)
        buckets: Dict[Tuple[int, int, int], list] = {}
        for t in range(T.shape[0]):
            ranges = [range(lo_cell[t, k], hi_cell[t, k] + 1) for k in range(3)]
            for cell in itertools.product(*ranges):
                buckets.setdefault(cell, []).append(t)
        self._buckets = {cell: np.asarray(ids, dtype=np.int64) for cell, ids in buckets.items()}
        self._cell_lo = lo_cell.min(axis=0)
        self._cell_hi = hi_cell.max(axis=0)
        self._ring_cache: Dict[int, np.ndarray] = {}

    def _ring_offsets(self, k: int) -> np.ndarray:
        if k not in self._ring_cache:
            axis = np.arange(-k, k + 1)
            grid = np.stack(np.meshgrid(axis, axis, axis, indexing="ij"), axis=-1).reshape(-1, 3)
            self._ring_cache[k] = grid[np.abs(grid).max(axis=1) == k]
        return self._ring_cache[k]

    def _candidates(self, centre: np.ndarray, k: int) -> np.ndarray:
        found = []
        for off in self._ring_offsets(k):
            ids = self._buckets.get(tuple(int(c) for c in centre + off))
            if ids is not None:
                found.append(ids)
        if not found:
            return np.empty(0, dtype=np.int64)
        return np.unique(np.concatenate(found))

    def _feature_normal(self, tri: int, region: int) -> np.ndarray:
        corners = self.triangles[tri]
        if region == FACE:
            return self.face_normals[tri]
        if region in (VERTEX_A, VERTEX_B, VERTEX_C):
            return self.vertex_normals[corners[region]]
        i, j = sorted(corners[list(_EDGE_CORNERS[region])])
        pos = np.searchsorted(self._edge_keys, i * self.vertices.shape[0] + j)
        return self.edge_normals[pos]

    def query(self, x: np.ndarray) -> Tuple[np.ndarray, np.ndarray, float, int]:
        """Closest point, pseudo-normal, distance and triangle index for one point."""
        x = np.asarray(x, dtype=float)
        centre = np.floor(x / self.cell_size).astype(np.int64)
        k_max = int(max(np.max(centre - self._cell_lo), np.max(self._cell_hi - centre), 0))
        best = (math.inf, -1, None, -1)  # (d2, tri, cp, region)
        for k in range(k_max + 1):
            ids = self._candidates(centre, k)
            if ids.size:
                tri = self.vertices[self.triangles[ids]]
                pts, region = closest_on_triangles(x, tri[:, 0], tri[:, 1], tri[:, 2])
                d2 = np.einsum("ij,ij->i", pts - x, pts - x)
                order = np.lexsort((ids, d2))
                j = order[0]
                if (d2[j], ids[j]) < best[:2]:
                    best = (float(d2[j]), int(ids[j]), pts[j], int(region[j]))
            # unvisited triangles sit in rings > k, at least k cells away
            if best[1] >= 0 and best[0] <= (k * self.cell_size) ** 2:
                break
        d2, tri, cp, region = best
        return cp, self._feature_normal(tri, region), math.sqrt(d2), tri

    def closest_points(self, X) -> CpArrays:
        X = _as_points(X, 3)
        cp = np.empty_like(X)
        normal = np.empty_like(X)
        dist = np.empty(X.shape[0])
        for i, x in enumerate(X):
            cp[i], normal[i], dist[i], _ = self.query(x)
        return cp, normal, dist

    def curvature_bound(self) -> Optional[float]:
        return self._curvature_bound

    def sample_points(self) -> np.ndarray:
        used = np.unique(self.triangles)
        return self.vertices[used]


def closest_point(surface: Surface, x) -> CpResult:
    return surface.closest_point(x)


def closest_point_trimesh(mesh: TriMesh, x) -> CpResult:
    cp, normal, dist, _ = mesh.query(np.asarray(x, dtype=float))
    return CpResult(cp=cp, normal=normal, dist=dist)


def curvature_bound(surface: Surface) -> Optional[float]:
    """κ∞ of the surface; None for meshes without a supplied bound."""
    return surface.curvature_bound()


def load_obj(
    path: Path,
    scale_height: Optional[float] = None,
    height_axis: int = 1,
    curvature_bound: Optional[float] = None,
) -> TriMesh:
    """Read the `v` / triangular `f` subset of a Wavefront OBJ file.

    With ``scale_height`` the mesh is recentred on its bounding box and scaled
    uniformly so that its extent along ``height_axis`` equals that height.
    """
    vertices = []
    faces = []
    skipped = 0
    with open(path, "r", encoding="utf-8", errors="replace") as fh:
        for line in fh:
            parts = line.split()
            if not parts:
                continue
            if parts[0] == "v":
                vertices.append([float(v) for v in parts[1:4]])
            elif parts[0] == "f":
                if len(parts) != 4:
                    skipped += 1
                    continue
                face = []
                for token in parts[1:]:
                    idx = int(token.split("/")[0])
                    face.append(len(vertices) + idx if idx < 0 else idx - 1)
                faces.append(face)
    if skipped:
        log.warning("%s: ignored %d non-triangular faces", path, skipped)
    if not faces:
        raise InvalidSurfaceError(f"{path}: no triangles found")
    V = np.asarray(vertices, dtype=float)
    if scale_height is not None:
        lo, hi = V.min(axis=0), V.max(axis=0)
        extent = hi[height_axis] - lo[height_axis]
        if extent <= 0:
            raise InvalidSurfaceError(f"{path}: mesh has zero height along axis {height_axis}")
        V = (V - 0.5 * (lo + hi)) * (scale_height / extent)
    log.info("loaded %s: %d vertices, %d triangles", path, V.shape[0], len(faces))
    return TriMesh(V, np.asarray(faces, dtype=np.int64), curvature_bound=curvature_bound)


def make_surface(spec: SurfaceSpec) -> Surface:
    if spec.kind is SurfaceKind.CIRCLE:
        return Circle(spec.radius)
    if spec.kind is SurfaceKind.ARC:
        return Arc(spec.radius, spec.angle_min, spec.angle_max)
    if spec.kind is SurfaceKind.SPHERE:
        return Sphere(spec.radius)
    if spec.kind is SurfaceKind.TORUS:
        return Torus(spec.major_radius, spec.minor_radius)
    return load_obj(spec.obj_path, spec.scale_height, spec.height_axis, spec.curvature_bound)
