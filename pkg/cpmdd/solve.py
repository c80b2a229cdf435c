"""
Schwarz solvers.

- SchwarzPreconditioner: M⁻¹ r = Σ_j R̃_jᵀ (A_j⁻¹ [R_j r; 0]) restricted to Σ̃_j,
  local solves run on a thread pool and scatter into disjoint index ranges
- stationary_solve: u ← u + M⁻¹(f − A u) from u⁰ = 0
- gmres_solve: right-preconditioned GMRES, modified Gram-Schmidt Arnoldi,
  Givens rotations, optional restart
"""
from __future__ import annotations

import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
import scipy.sparse as sp
from scipy.linalg import solve_triangular
from scipy.sparse.linalg import LinearOperator

from .errors import DivergenceError
from .models import SolveReport, SolverConfig
from .operators import direct_solve
from .subdomain import Subdomain
from .transmission import LocalOperator, local_rhs, local_solve

log = logging.getLogger(__name__)

Callback = Callable[[int, np.ndarray], None]


@dataclass
class IterationLog:
    residuals: List[float] = field(default_factory=list)
    elapsed: List[float] = field(default_factory=list)
    timings: Dict[str, float] = field(default_factory=dict)
    converged: bool = False

    @property
    def iterations(self) -> int:
        return len(self.residuals) - 1

    def record(self, residual: float, start: float) -> None:
        self.residuals.append(float(residual))
        self.elapsed.append(time.perf_counter() - start)

    def frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            {
                "iter": np.arange(len(self.residuals)),
                "residual_2norm": self.residuals,
                "elapsed_seconds": self.elapsed,
            }
        )


class SchwarzPreconditioner(LinearOperator):
    """Restricted additive Schwarz preconditioner over factored local operators."""

    def __init__(self, n: int, subdomains: Sequence[Subdomain], locals_: Sequence[LocalOperator], workers: int = 1):
        super().__init__(dtype=np.float64, shape=(n, n))
        self.subdomains = list(subdomains)
        self.locals = list(locals_)
        self.workers = workers

    def _local(self, k: int, r: np.ndarray) -> np.ndarray:
        sub, loc = self.subdomains[k], self.locals[k]
        z = local_solve(loc, local_rhs(loc, sub, r))
        return z[sub.disjoint_local]

    def _matvec(self, r):
        r = np.asarray(r, dtype=float).ravel()
        idx = range(len(self.subdomains))
        if self.workers > 1 and len(self.subdomains) > 1:
            with ThreadPoolExecutor(max_workers=self.workers) as pool:
                parts = list(pool.map(lambda k: self._local(k, r), idx))
        else:
            parts = [self._local(k, r) for k in idx]
        z = np.zeros(self.shape[0])
        for sub, vals in zip(self.subdomains, parts):
            z[sub.restrict_disjoint] = vals
        return z


def apply_preconditioner(precond: LinearOperator, r: np.ndarray) -> np.ndarray:
    return precond.matvec(np.asarray(r, dtype=float))


def _identity(n: int) -> LinearOperator:
    return LinearOperator((n, n), matvec=lambda r: np.asarray(r, dtype=float).ravel(), dtype=np.float64)


def stationary_solve(
    A: sp.spmatrix,
    f: np.ndarray,
    precond: LinearOperator,
    cfg: SolverConfig,
    callback: Optional[Callback] = None,
) -> Tuple[np.ndarray, IterationLog]:
    start = time.perf_counter()
    f = np.asarray(f, dtype=float)
    u = np.zeros_like(f)
    r = f.copy()
    r0 = float(np.linalg.norm(r))
    log_ = IterationLog()
    log_.record(r0, start)
    if r0 == 0.0:
        log_.converged = True
        return u, log_
    for n in range(1, cfg.iteration_cap() + 1):
        u = u + apply_preconditioner(precond, r)
        r = f - A @ u
        rn = float(np.linalg.norm(r))
        log_.record(rn, start)
        if callback is not None:
            callback(n, u)
        if not math.isfinite(rn) or rn > cfg.divergence_factor * r0:
            log.warning("stationary iteration diverged at step %d", n)
            raise DivergenceError(n, rn, log_)
        if rn <= cfg.rel_tol * r0:
            log_.converged = True
            break
    log.info("stationary %s: %d iterations, converged=%s", cfg.method.value, log_.iterations, log_.converged)
    return u, log_


def gmres_solve(
    A: sp.spmatrix,
    f: np.ndarray,
    precond: Optional[LinearOperator],
    cfg: SolverConfig,
    callback: Optional[Callback] = None,
) -> Tuple[np.ndarray, IterationLog]:
    """Solve A M⁻¹ y = f and return u = M⁻¹ y.

    The per-iteration residual is the Arnoldi estimate; at the end of each
    cycle it is replaced by the true residual ‖f − A u‖.
    """
    start = time.perf_counter()
    f = np.asarray(f, dtype=float)
    n = f.size
    M = precond if precond is not None else _identity(n)
    u = np.zeros(n)
    r = f.copy()
    r0 = float(np.linalg.norm(r))
    target = cfg.rel_tol * r0
    log_ = IterationLog()
    log_.record(r0, start)
    cap = cfg.iteration_cap()
    it = 0
    beta = r0

    while beta > target and it < cap:
        m = min(cfg.gmres_restart or cap, cap - it)
        V = [r / beta]
        H = np.zeros((m + 1, m))
        cs = np.zeros(m)
        sn = np.zeros(m)
        g = np.zeros(m + 1)
        g[0] = beta
        breakdown = False
        k_end = 0
        for k in range(m):
            w = A @ M.matvec(V[k])
            it += 1
            w_norm = np.linalg.norm(w)
            for i in range(k + 1):
                H[i, k] = np.dot(w, V[i])
                w = w - H[i, k] * V[i]
            h_next = float(np.linalg.norm(w))
            H[k + 1, k] = h_next
            for i in range(k):
                tmp = cs[i] * H[i, k] + sn[i] * H[i + 1, k]
                H[i + 1, k] = -sn[i] * H[i, k] + cs[i] * H[i + 1, k]
                H[i, k] = tmp
            denom = math.hypot(H[k, k], H[k + 1, k])
            breakdown = h_next <= 1e-14 * max(w_norm, 1e-300)
            cs[k] = H[k, k] / denom if denom > 0 else 1.0
            sn[k] = H[k + 1, k] / denom if denom > 0 else 0.0
            H[k, k] = denom
            H[k + 1, k] = 0.0
            g[k + 1] = -sn[k] * g[k]
            g[k] = cs[k] * g[k]
            estimate = abs(g[k + 1])
            log_.record(estimate, start)
            k_end = k + 1
            if not math.isfinite(estimate):
                raise DivergenceError(it, estimate, log_)
            if estimate <= target or breakdown or it >= cap:
                break
            V.append(w / h_next)
        y = solve_triangular(H[:k_end, :k_end], g[:k_end])
        u = u + M.matvec(np.column_stack(V[:k_end]) @ y)
        r = f - A @ u
        beta = float(np.linalg.norm(r))
        log_.residuals[-1] = beta
        if callback is not None:
            callback(it, u)
        if not math.isfinite(beta):
            raise DivergenceError(it, beta, log_)
        if breakdown:
            log_.converged = True
            break
    if beta <= target:
        log_.converged = True
    log.info("gmres %s: %d iterations, converged=%s", cfg.method.value, log_.iterations, log_.converged)
    return u, log_


def reconstruct_and_check(
    u: np.ndarray,
    A: sp.spmatrix,
    f: np.ndarray,
    exact: Optional[np.ndarray] = None,
    u_direct: Optional[np.ndarray] = None,
) -> SolveReport:
    if u_direct is None:
        u_direct = direct_solve(A, f)
    res = float(np.linalg.norm(f - A @ u))
    fnorm = float(np.linalg.norm(f)) or 1.0
    diff = float(np.linalg.norm(u - u_direct))
    dnorm = float(np.linalg.norm(u_direct)) or 1.0
    report = SolveReport(
        final_residual=res,
        relative_residual=res / fnorm,
        direct_difference=diff,
        relative_direct_difference=diff / dnorm,
    )
    if exact is not None:
        err = u - exact
        report.error_2norm = float(np.linalg.norm(err))
        report.error_rms = report.error_2norm / math.sqrt(err.size)
        report.error_inf = float(np.abs(err).max())
    return report
