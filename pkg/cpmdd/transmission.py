"""
Local operators with transmission rows.

Local unknown layout: the overlap nodes Σ_j in global order, then the BC
nodes in subdomain order. PDE rows are the global stabilized Helmholtz rows
of Σ_j with their columns renumbered into this layout; transmission rows
close the BC unknowns.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import SuperLU, splu

from .band import BandGrid
from .errors import SingularSubdomainError, SubdomainError
from .models import TransmissionSpec
from .operators import GlobalOperators
from .subdomain import Subdomain

log = logging.getLogger(__name__)

_DEGENERATE_TOL = 1e-10


@dataclass
class LocalOperator:
    subdomain: int
    matrix: sp.csc_matrix
    n_interior: int
    n_bc: int
    lu: Optional[SuperLU] = None

    @property
    def size(self) -> int:
        return self.n_interior + self.n_bc

    @property
    def factored(self) -> bool:
        return self.lu is not None


def local_index(grid: BandGrid, sub: Subdomain) -> np.ndarray:
    """Extended id -> local column, -1 for nodes outside the layout."""
    g2l = np.full(grid.n_active + grid.n_ghost, -1, dtype=np.int64)
    g2l[sub.overlap] = np.arange(sub.overlap.size)
    g2l[sub.bc_nodes] = sub.overlap.size + np.arange(sub.n_bc)
    return g2l


def _renumber(M: sp.csr_matrix, g2l: np.ndarray, ncols: int, sub: Subdomain) -> sp.csr_matrix:
    M = M.tocsr()
    cols = g2l[M.indices]
    if np.any(cols < 0):
        raise SubdomainError(f"subdomain {sub.id}: column outside the local layout")
    return sp.csr_matrix((M.data, cols, M.indptr), shape=(M.shape[0], ncols))


def robin_scale(sub: Subdomain, spec: TransmissionSpec) -> np.ndarray:
    """s_i = 1 / (1 + α_i d_i·q̂_i), with α_i = α× on cross-flagged nodes."""
    g = sub.geometry
    alpha = np.where(sub.cross_flagged, spec.alpha_cross, spec.alpha)
    denom = 1.0 + alpha * np.einsum("ij,ij->i", g.offset, g.conormal)
    if np.any(denom <= 0):
        raise SubdomainError(f"subdomain {sub.id}: non-positive Robin denominator")
    return 1.0 / denom


def build_transmission_rows(
    sub: Subdomain,
    spec: TransmissionSpec,
    grid: BandGrid,
    E: sp.csr_matrix,
    g2l: Optional[np.ndarray] = None,
) -> sp.csr_matrix:
    n_loc = sub.overlap.size + sub.n_bc
    own = sp.csr_matrix(
        (np.ones(sub.n_bc), (np.arange(sub.n_bc), sub.overlap.size + np.arange(sub.n_bc))),
        shape=(sub.n_bc, n_loc),
    )
    if not spec.robin or sub.n_bc == 0:
        return own
    if g2l is None:
        g2l = local_index(grid, sub)
    # CP_{S_j}(x_i) is the stored CP of a final-layer node, so its
    # interpolation row is that node's extension row
    W = _renumber(E[sub.geometry.source], g2l, n_loc, sub)
    rows = (own - sp.diags(robin_scale(sub, spec)) @ W).tocsr()
    dead = degenerate_rows(rows)
    if dead.any():
        # the boundary point sits on the BC node itself: d = 0 and the
        # interpolation row is e_m, so the Robin row cancels to zero
        log.debug("subdomain %d: %d Robin rows closed with u = 0", sub.id, int(dead.sum()))
        keep = sp.diags((~dead).astype(float))
        rows = (keep @ rows + sp.diags(dead.astype(float)) @ own).tocsr()
    return rows


def degenerate_rows(rows: sp.csr_matrix, tol: float = _DEGENERATE_TOL) -> np.ndarray:
    """Rows whose largest entry magnitude is at most ``tol``."""
    rows = rows.tocsr()
    peak = np.zeros(rows.shape[0])
    counts = np.diff(rows.indptr)
    filled = counts > 0
    if rows.nnz:
        peak[filled] = np.maximum.reduceat(np.abs(rows.data), rows.indptr[:-1][filled])
    return peak <= tol


def assemble_local(grid: BandGrid, sub: Subdomain, ops: GlobalOperators, spec: TransmissionSpec) -> LocalOperator:
    g2l = local_index(grid, sub)
    n_loc = sub.overlap.size + sub.n_bc
    pde = _renumber(ops.A[sub.overlap], g2l, n_loc, sub)
    rows = build_transmission_rows(sub, spec, grid, ops.E, g2l)
    matrix = sp.vstack([pde, rows], format="csc")
    matrix.sort_indices()
    return LocalOperator(subdomain=sub.id, matrix=matrix, n_interior=sub.overlap.size, n_bc=sub.n_bc)


def factor(local: LocalOperator) -> LocalOperator:
    try:
        local.lu = splu(local.matrix)
    except RuntimeError as exc:
        raise SingularSubdomainError(local.subdomain, str(exc)) from exc
    log.debug("factored subdomain %d: %d unknowns, nnz(L+U)=%d",
              local.subdomain, local.size, local.lu.L.nnz + local.lu.U.nnz)
    return local


def local_solve(local: LocalOperator, b: np.ndarray) -> np.ndarray:
    if local.lu is None:
        raise SubdomainError(f"subdomain {local.subdomain} has not been factored")
    return local.lu.solve(np.asarray(b, dtype=float))


def local_rhs(local: LocalOperator, sub: Subdomain, r: np.ndarray) -> np.ndarray:
    """[R_j r ; 0]: transmission data is homogeneous in correction form."""
    b = np.zeros(local.size)
    b[: local.n_interior] = r[sub.restrict_overlap]
    return b
