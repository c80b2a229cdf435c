"""
End-to-end run: mesh → partition → subdomains → solve → report.

Phases are timed under the names written to timings.csv:
meshing, global_matrix, local_operators, and solver or preconditioned_solve.
"""
from __future__ import annotations

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Dict, Iterator, List, Optional

import numpy as np
import pandas as pd

from .band import BandGrid, build_band
from .geometry import Surface, make_surface
from .models import Mode, RunConfig, SolveReport, SolverConfig
from .operators import GlobalOperators, direct_solve
from .partition import NodeGraph, PartitionMap, align_interfaces, build_graph, load_partition, partition_graph
from .problems import Problem, load_rhs, make_problem
from .solve import Callback, IterationLog, SchwarzPreconditioner, gmres_solve, reconstruct_and_check, stationary_solve
from .subdomain import Subdomain, build_subdomains
from .transmission import LocalOperator, assemble_local, factor

log = logging.getLogger(__name__)


class PhaseTimer:
    def __init__(self):
        self.seconds: Dict[str, float] = {}

    @contextmanager
    def phase(self, name: str) -> Iterator[None]:
        start = time.perf_counter()
        try:
            yield
        finally:
            self.seconds[name] = self.seconds.get(name, 0.0) + time.perf_counter() - start

    def frame(self) -> pd.DataFrame:
        return pd.DataFrame({"phase": list(self.seconds), "seconds": list(self.seconds.values())})


@dataclass
class Discretization:
    surface: Surface
    grid: BandGrid
    ops: GlobalOperators
    f: np.ndarray
    exact: Optional[np.ndarray]
    graph: NodeGraph
    problem: Optional[Problem] = None
    _direct: Optional[np.ndarray] = field(default=None, repr=False)

    def direct_solution(self) -> np.ndarray:
        if self._direct is None:
            self._direct = direct_solve(self.ops.A, self.f)
        return self._direct


@dataclass
class Splitting:
    pmap: PartitionMap
    subdomains: List[Subdomain]
    locals: List[LocalOperator]
    preconditioner: SchwarzPreconditioner


@dataclass
class RunResult:
    disc: Discretization
    splitting: Splitting
    u: np.ndarray
    log: IterationLog
    report: SolveReport
    timer: PhaseTimer


def discretize(cfg: RunConfig, timer: Optional[PhaseTimer] = None) -> Discretization:
    timer = timer or PhaseTimer()
    c = cfg.solver.c
    with timer.phase("meshing"):
        surface = make_surface(cfg.surface)
        grid = build_band(surface, cfg.h, cfg.degree, cfg.band_mode)
        graph = build_graph(grid)
    with timer.phase("global_matrix"):
        ops = GlobalOperators.build(grid, c)
    if cfg.rhs == "file":
        problem = None
        f, exact = load_rhs(cfg.rhs_file, grid.n_active), None
    else:
        problem = make_problem(cfg.rhs, surface, c)
        f, exact = problem.rhs_values(grid), problem.exact_values(grid)
    return Discretization(surface, grid, ops, f, exact, graph, problem)


def make_partition(disc: Discretization, solver: SolverConfig, partition_file=None) -> PartitionMap:
    if partition_file is not None:
        return load_partition(partition_file, disc.grid.n_active)
    pmap = partition_graph(disc.graph, solver.n_sub, solver.seed)
    if solver.align and solver.n_sub > 1:
        pmap = align_interfaces(disc.grid, disc.graph, pmap, solver.align_passes)
    return pmap


def split(
    disc: Discretization,
    solver: SolverConfig,
    pmap: Optional[PartitionMap] = None,
    timer: Optional[PhaseTimer] = None,
) -> Splitting:
    timer = timer or PhaseTimer()
    spec = solver.transmission()
    with timer.phase("meshing"):
        if pmap is None:
            pmap = make_partition(disc, solver)
        subs = build_subdomains(
            disc.surface, disc.grid, disc.graph, disc.ops.E, pmap, solver.n_overlap, spec.robin, solver.workers
        )
    with timer.phase("local_operators"):
        def build(sub: Subdomain) -> LocalOperator:
            return factor(assemble_local(disc.grid, sub, disc.ops, spec))

        if solver.workers > 1:
            with ThreadPoolExecutor(max_workers=solver.workers) as pool:
                locals_ = list(pool.map(build, subs))
        else:
            locals_ = [build(sub) for sub in subs]
    precond = SchwarzPreconditioner(disc.grid.n_active, subs, locals_, solver.workers)
    return Splitting(pmap, subs, locals_, precond)


def iterate(
    disc: Discretization,
    splitting: Splitting,
    solver: SolverConfig,
    timer: Optional[PhaseTimer] = None,
    callback: Optional[Callback] = None,
):
    timer = timer or PhaseTimer()
    if solver.mode is Mode.STATIONARY:
        with timer.phase("solver"):
            return stationary_solve(disc.ops.A, disc.f, splitting.preconditioner, solver, callback)
    with timer.phase("preconditioned_solve"):
        return gmres_solve(disc.ops.A, disc.f, splitting.preconditioner, solver, callback)


def run(cfg: RunConfig) -> RunResult:
    timer = PhaseTimer()
    disc = discretize(cfg, timer)
    with timer.phase("meshing"):
        pmap = make_partition(disc, cfg.solver, cfg.partition_file)
    splitting = split(disc, cfg.solver, pmap, timer)
    u, ilog = iterate(disc, splitting, cfg.solver, timer)
    ilog.timings = dict(timer.seconds)
    report = reconstruct_and_check(u, disc.ops.A, disc.f, disc.exact, disc.direct_solution())
    return RunResult(disc, splitting, u, ilog, report, timer)
