"""
Manufactured problems for (c − Δ_S) u = f.

Right-hand sides and exact solutions are evaluated at the closest points of
the active nodes, so both are constant along normals.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp

from .band import BandGrid
from .errors import BandConstructionError, ConfigError
from .geometry import Arc, Circle, Sphere, Surface
from .operators import build_ambient_laplacian, extension_rows

Field = Callable[[np.ndarray], np.ndarray]


@dataclass
class Problem:
    name: str
    rhs: Field
    exact: Optional[Field] = None

    def rhs_values(self, grid: BandGrid) -> np.ndarray:
        return self.rhs(grid.active.cp)

    def exact_values(self, grid: BandGrid) -> Optional[np.ndarray]:
        return None if self.exact is None else self.exact(grid.active.cp)


def circle_mode(c: float, k: int = 2, radius: float = 1.0) -> Problem:
    """u = sin(kθ) on a circle; an eigenfunction of Δ_S with eigenvalue −k²/r²."""

    def exact(P):
        return np.sin(k * np.arctan2(P[:, 1], P[:, 0]))

    return Problem("circle-mode", lambda P: (c + k**2 / radius**2) * exact(P), exact)


def sphere_angles(P: np.ndarray):
    r = np.linalg.norm(P, axis=1)
    theta = np.arctan2(P[:, 1], P[:, 0])
    phi = np.arccos(np.clip(P[:, 2] / r, -1.0, 1.0))
    return theta, phi


def sphere_exp_exact(P: np.ndarray) -> np.ndarray:
    theta, phi = sphere_angles(P)
    return np.sin(phi) ** 2 * np.exp(np.cos(theta))


def sphere_exp_laplacian(P: np.ndarray, radius: float = 1.0) -> np.ndarray:
    theta, phi = sphere_angles(P)
    g = np.exp(np.cos(theta))
    bracket = 4 * np.cos(phi) ** 2 - 2 * np.sin(phi) ** 2 + np.sin(theta) ** 2 - np.cos(theta)
    return g * bracket / radius**2


def sphere_exp(c: float, radius: float = 1.0) -> Problem:
    """u = sin²φ e^{cos θ} (θ azimuth, φ polar)."""
    return Problem(
        "sphere-exp",
        lambda P: c * sphere_exp_exact(P) - sphere_exp_laplacian(P, radius),
        sphere_exp_exact,
    )


def constant(c: float) -> Problem:
    return Problem("constant", lambda P: np.full(P.shape[0], c), lambda P: np.ones(P.shape[0]))


def smooth(c: float) -> Problem:
    """A smooth right-hand side with no closed-form solution."""
    return Problem("smooth", lambda P: 1.0 + P[:, 0] + np.cos(np.pi * P[:, 1]))


def make_problem(name: str, surface: Surface, c: float) -> Problem:
    if name == "circle-mode":
        if not isinstance(surface, Circle):
            raise ConfigError("circle-mode needs a circle surface")
        return circle_mode(c, radius=surface.radius)
    if name == "sphere-exp":
        if not isinstance(surface, Sphere):
            raise ConfigError("sphere-exp needs a sphere surface")
        return sphere_exp(c, surface.radius)
    if name == "constant":
        return constant(c)
    if name == "smooth":
        return smooth(c)
    raise ConfigError(f"unknown manufactured problem {name!r}")


def load_rhs(path, n_active: int) -> np.ndarray:
    values = np.atleast_1d(np.loadtxt(path, dtype=float))
    if values.size != n_active:
        raise ConfigError(f"{path}: {values.size} values for {n_active} active nodes")
    return values


# arc boundary-value problem: c = 1, f = 1 − θ², u(0) = 0, u' + u = 0 at θ = 2

ARC_C = 1.0
ARC_ALPHA = 1.0


def arc_exact(theta: np.ndarray) -> np.ndarray:
    b = 9 * math.exp(-2) - 1
    return np.cosh(theta) + b * np.sinh(theta) - theta**2 - 1


def arc_rhs(theta: np.ndarray) -> np.ndarray:
    return 1 - theta**2


@dataclass
class ArcSystem:
    E: sp.csr_matrix
    A: sp.csr_matrix
    f: np.ndarray
    exact: np.ndarray


def arc_extension(grid: BandGrid, arc: Arc, alpha: float = ARC_ALPHA) -> sp.csr_matrix:
    """Extension with boundary closures at the two arc ends.

    Nodes whose closest point is interior use the plain interpolation row.
    Nodes clamped to the Robin end (angle_max) scale that row by
    1 / (1 + α d·q̂). Nodes clamped to the Dirichlet end (angle_min) take the
    negated value interpolated at the closest point of their mirror image
    2·e − x, giving u = 0 at the end to second order.
    """
    X = grid.all_points
    cp = grid.all_cp.copy()
    which = arc.endpoint_of(X)
    scale = np.ones(X.shape[0])

    robin = which == 1
    if robin.any():
        e = arc.endpoints[1]
        d = X[robin] - e
        normal = e / arc.radius
        tangential = d - (d @ normal)[:, None] * normal
        scale[robin] = 1.0 / (1.0 + alpha * np.linalg.norm(tangential, axis=1))

    mirror = which == 0
    if mirror.any():
        reflected = 2 * arc.endpoints[0] - X[mirror]
        cp[mirror], _, _ = arc.closest_points(reflected)
        scale[mirror] = -1.0

    cols, weights = extension_rows(grid, cp)
    weights *= scale[:, None]
    n, m = cols.shape
    return sp.csr_matrix((weights.ravel(), cols.ravel(), np.arange(0, n * m + 1, m)), shape=(n, grid.n_active))


def assemble_arc_problem(grid: BandGrid, arc: Arc, c: float = ARC_C, alpha: float = ARC_ALPHA) -> ArcSystem:
    if grid.dim != 2:
        raise BandConstructionError("arc problem needs a planar band")
    E = arc_extension(grid, arc, alpha)
    L = build_ambient_laplacian(grid)
    shift = 2.0 * grid.dim / grid.h**2
    n = grid.n_active
    A = ((c + shift) * sp.identity(n, format="csr") - (L @ E + shift * E[:n])).tocsr()
    theta = arc.angle_of(grid.active.cp) - arc.angle_min
    return ArcSystem(E=E, A=A, f=arc_rhs(theta), exact=arc_exact(theta))
