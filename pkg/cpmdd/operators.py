"""
Sparse operators of the closest point discretization.

- E: extension by tensor-product barycentric interpolation at closest points
- L: second-order centred ambient Laplacian over active + ghost columns
- A: stabilized Helmholtz matrix (c + 2d/h²)I − (L + (2d/h²)I_pad)E
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from math import comb
from pathlib import Path
from typing import Tuple

import numpy as np
import scipy.io
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .band import BandGrid
from .errors import BandConstructionError, ConfigError

log = logging.getLogger(__name__)


def _barycentric_weights(p: int) -> np.ndarray:
    return np.array([(-1) ** j * comb(p, j) for j in range(p + 1)], dtype=float)


def interp_weights(p: int, t: np.ndarray) -> np.ndarray:
    """Lagrange weights on nodes 0..p for every offset in ``t``; shape (n, p+1)."""
    t = np.atleast_1d(np.asarray(t, dtype=float))
    if np.any(t < -1e-10) or np.any(t > p + 1e-10):
        raise BandConstructionError(f"interpolation offset outside [0, {p}]")
    nodes = np.arange(p + 1, dtype=float)
    diff = t[:, None] - nodes[None, :]
    hit = np.isclose(diff, 0.0, rtol=0.0, atol=1e-14)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = _barycentric_weights(p)[None, :] / diff
        w = terms / terms.sum(axis=1, keepdims=True)
    rows = hit.any(axis=1)
    w[rows] = hit[rows].astype(float)
    return w


def interp_weights_1d(p: int, t: float) -> np.ndarray:
    return interp_weights(p, np.array([t]))[0]


def extension_rows(grid: BandGrid, points: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Active-node columns and tensor-product weights interpolating at ``points``."""
    points = np.atleast_2d(points)
    t = grid.lattice_coords(points)
    base = grid.stencil_base(points)
    offsets = grid.stencil_offsets
    weights = np.ones((points.shape[0], offsets.shape[0]))
    for k in range(grid.dim):
        w1 = interp_weights(grid.p, t[:, k] - base[:, k])
        weights *= w1[:, offsets[:, k]]
    cols = grid.lookup_active(grid.stencil_keys(points))
    if np.any(cols < 0):
        raise BandConstructionError("interpolation stencil reaches outside the active set")
    return cols, weights


def _rows_to_csr(cols: np.ndarray, vals: np.ndarray, ncols: int) -> sp.csr_matrix:
    n, m = cols.shape
    indptr = np.arange(0, n * m + 1, m)
    # explicit zeros are kept so every row has the full stencil pattern
    return sp.csr_matrix((vals.ravel(), cols.ravel(), indptr), shape=(n, ncols))


def build_extension(grid: BandGrid) -> sp.csr_matrix:
    cols, weights = extension_rows(grid, grid.all_cp)
    return _rows_to_csr(cols, weights, grid.n_active)


def build_ambient_laplacian(grid: BandGrid) -> sp.csr_matrix:
    d, h = grid.dim, grid.h
    n = grid.n_active
    nb = grid.lookup(grid.neighbour_keys(grid.active.keys))
    if np.any(nb < 0):
        raise BandConstructionError("finite-difference neighbour missing from the band")
    cols = np.column_stack([np.arange(n), nb])
    vals = np.empty(cols.shape)
    vals[:, 0] = -2.0 * d / h**2
    vals[:, 1:] = 1.0 / h**2
    return _rows_to_csr(cols, vals, n + grid.n_ghost)


def stabilized_laplace_beltrami(grid: BandGrid, E: sp.csr_matrix, L: sp.csr_matrix) -> sp.csr_matrix:
    shift = 2.0 * grid.dim / grid.h**2
    n = grid.n_active
    return (L @ E + shift * E[:n] - shift * sp.identity(n, format="csr")).tocsr()


def assemble_helmholtz(grid: BandGrid, E: sp.csr_matrix, L: sp.csr_matrix, c: float) -> sp.csr_matrix:
    if not c > 0:
        raise ConfigError("the Helmholtz shift c must be positive")
    shift = 2.0 * grid.dim / grid.h**2
    n = grid.n_active
    A = (c + shift) * sp.identity(n, format="csr") - (L @ E + shift * E[:n])
    A = A.tocsr()
    A.sort_indices()
    return A


@dataclass
class GlobalOperators:
    E: sp.csr_matrix
    L: sp.csr_matrix
    A: sp.csr_matrix
    c: float

    @classmethod
    def build(cls, grid: BandGrid, c: float) -> "GlobalOperators":
        E = build_extension(grid)
        L = build_ambient_laplacian(grid)
        A = assemble_helmholtz(grid, E, L, c)
        log.info("global matrix: %d unknowns, %d nonzeros", A.shape[0], A.nnz)
        return cls(E=E, L=L, A=A, c=c)


def direct_solve(A: sp.spmatrix, f: np.ndarray) -> np.ndarray:
    return splu(sp.csc_matrix(A)).solve(np.asarray(f, dtype=float))


def export_matrix_market(path: Path, M: sp.spmatrix) -> None:
    scipy.io.mmwrite(str(path), sp.coo_matrix(M))
