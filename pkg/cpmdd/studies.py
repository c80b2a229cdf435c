"""
Canned parameter studies.

Each study returns a DataFrame shaped like a results table: rows are solver
variants (or the swept parameter), columns hold iteration counts or errors.
Runs that diverge or hit the iteration cap are recorded as "DNC" and the
study carries on.
"""
from __future__ import annotations

import logging
import math
from typing import Callable, Dict, List, Optional, Sequence, Union

import numpy as np
import pandas as pd

from .band import build_band_tube
from .errors import ConfigError, DivergenceError
from .geometry import Arc
from .models import Method, Mode, RunConfig, SolverConfig, SurfaceKind
from .operators import direct_solve
from .pipeline import Discretization, discretize, iterate, make_partition, split
from .partition import PartitionMap
from .problems import assemble_arc_problem

log = logging.getLogger(__name__)

DNC = "DNC"
Cell = Union[int, str]


def _iterations(disc: Discretization, solver: SolverConfig, pmap: PartitionMap, modes: Sequence[Mode]) -> Dict[Mode, Cell]:
    splitting = split(disc, solver, pmap)
    out: Dict[Mode, Cell] = {}
    for mode in modes:
        cfg = solver.model_copy(update={"mode": mode})
        try:
            _, ilog = iterate(disc, splitting, cfg)
        except DivergenceError as exc:
            log.info("%s %s diverged at iteration %d", cfg.method.value, mode.value, exc.iteration)
            out[mode] = DNC
            continue
        out[mode] = ilog.iterations if ilog.converged else DNC
    return out


def _label(mode: Mode) -> str:
    return "solver" if mode is Mode.STATIONARY else "preconditioner"


def arc_robin(cfg: RunConfig, values: Optional[Sequence[float]] = None) -> pd.DataFrame:
    """Direct solves of the arc boundary-value problem; first order from the Robin end."""
    hs = list(values or [1 / 64, 1 / 128, 1 / 256])
    arc = Arc(1.0, 0.0, 2.0)
    rows = []
    for h in hs:
        grid = build_band_tube(arc, h, 3)
        system = assemble_arc_problem(grid, arc)
        u = direct_solve(system.A, system.f)
        err = float(np.abs(u - system.exact).max())
        rows.append({"h": h, "n_active": grid.n_active, "error_inf": err})
    df = pd.DataFrame(rows)
    df["ratio"] = df["error_inf"].shift(1) / df["error_inf"]
    return df


def sphere_consistency(cfg: RunConfig, values: Optional[Sequence[float]] = None) -> pd.DataFrame:
    """Distance of DD iterates to the direct solution against the truncation error."""
    base = cfg.model_copy(update={"rhs": "sphere-exp"})
    disc = discretize(base)
    u_direct = disc.direct_solution()
    continuous = float(np.linalg.norm(u_direct - disc.exact) / math.sqrt(disc.grid.n_active))
    solver = cfg.solver.model_copy(update={"n_sub": 4, "n_overlap": 4, "mode": Mode.STATIONARY})
    pmap = make_partition(disc, solver)
    variants = {
        "RAS": solver.model_copy(update={"method": Method.RAS}),
        "ORAS": solver.model_copy(update={"method": Method.ORAS, "alpha": 4.0, "alpha_cross": 40.0}),
    }
    frames = []
    for name, sc in variants.items():
        trace: List[float] = [float(np.linalg.norm(u_direct))]

        def record(_, u, trace=trace):
            trace.append(float(np.linalg.norm(u - u_direct)))

        splitting = split(disc, sc, pmap)
        try:
            _, ilog = iterate(disc, splitting, sc, callback=record)
            residuals = ilog.residuals
        except DivergenceError as exc:
            residuals = exc.log.residuals if exc.log else [math.nan] * len(trace)
        frames.append(
            pd.DataFrame(
                {
                    "method": name,
                    "iter": np.arange(len(trace)),
                    "residual_2norm": residuals[: len(trace)],
                    "direct_difference": trace,
                    "continuous_error_rms": continuous,
                }
            )
        )
    return pd.concat(frames, ignore_index=True)


def _robin_solver(solver: SolverConfig, alpha: float, cross_factor: float) -> SolverConfig:
    if math.isinf(alpha):
        return solver.model_copy(update={"method": Method.RAS})
    return SolverConfig.model_validate(
        {**solver.model_dump(), "method": Method.ORAS, "alpha": alpha, "alpha_cross": alpha * cross_factor}
    )


def _cross_factor(solver: SolverConfig) -> float:
    if solver.alpha_cross is None:
        return 1.0
    return solver.alpha_cross / solver.alpha


def alpha_sweep(cfg: RunConfig, values: Optional[Sequence[float]] = None) -> pd.DataFrame:
    alphas = list(values or [0.5, 1.0, 2.0, 4.0, 8.0, math.inf])
    disc = discretize(cfg)
    pmap = make_partition(disc, cfg.solver)
    factor = _cross_factor(cfg.solver)
    table: Dict[str, Dict[str, Cell]] = {_label(m): {} for m in Mode}
    for alpha in alphas:
        counts = _iterations(disc, _robin_solver(cfg.solver, alpha, factor), pmap, list(Mode))
        col = "inf" if math.isinf(alpha) else f"{alpha:g}"
        for mode, cell in counts.items():
            table[_label(mode)][col] = cell
    return pd.DataFrame.from_dict(table, orient="index").rename_axis("mode").reset_index()


def _method_rows(disc, solver: SolverConfig, pmap, column: str, table) -> None:
    for method in Method:
        sc = solver.model_copy(update={"method": method})
        for mode, cell in _iterations(disc, sc, pmap, list(Mode)).items():
            table.setdefault(f"{method.value.upper()} {_label(mode)}", {})[column] = cell


def overlap_sweep(cfg: RunConfig, values: Optional[Sequence[float]] = None) -> pd.DataFrame:
    overlaps = [int(v) for v in (values or [2, 4, 8])]
    disc = discretize(cfg)
    pmap = make_partition(disc, cfg.solver)
    table: Dict[str, Dict[str, Cell]] = {}
    for n_o in overlaps:
        _method_rows(disc, cfg.solver.model_copy(update={"n_overlap": n_o}), pmap, str(n_o), table)
    return pd.DataFrame.from_dict(table, orient="index").rename_axis("variant").reset_index()


def nsub_sweep(cfg: RunConfig, values: Optional[Sequence[float]] = None) -> pd.DataFrame:
    counts = [int(v) for v in (values or [4, 8, 16])]
    disc = discretize(cfg)
    table: Dict[str, Dict[str, Cell]] = {}
    for n_s in counts:
        solver = cfg.solver.model_copy(update={"n_sub": n_s})
        _method_rows(disc, solver, make_partition(disc, solver), str(n_s), table)
    return pd.DataFrame.from_dict(table, orient="index").rename_axis("variant").reset_index()


def cross_sweep(cfg: RunConfig, values: Optional[Sequence[float]] = None) -> pd.DataFrame:
    """ORAS at fixed α with the cross-point weight α× = factor·α swept."""
    factors = list(values or [1.0, 10.0, 20.0, 40.0])
    disc = discretize(cfg)
    pmap = make_partition(disc, cfg.solver)
    table: Dict[str, Dict[str, Cell]] = {_label(m): {} for m in Mode}
    for fac in factors:
        counts = _iterations(disc, _robin_solver(cfg.solver, cfg.solver.alpha, fac), pmap, list(Mode))
        for mode, cell in counts.items():
            table[_label(mode)][f"{fac:g}"] = cell
    return pd.DataFrame.from_dict(table, orient="index").rename_axis("mode").reset_index()


STUDIES: Dict[str, Callable[[RunConfig, Optional[Sequence[float]]], pd.DataFrame]] = {
    "arc-robin": arc_robin,
    "sphere-consistency": sphere_consistency,
    "alpha-sweep": alpha_sweep,
    "overlap-sweep": overlap_sweep,
    "nsub-sweep": nsub_sweep,
    "cross-sweep": cross_sweep,
}


def run_study(name: str, cfg: RunConfig, values: Optional[Sequence[float]] = None) -> pd.DataFrame:
    if name == "sphere-consistency" and cfg.surface.kind is not SurfaceKind.SPHERE:
        raise ConfigError("sphere-consistency needs a sphere surface")
    if name not in STUDIES:
        raise ConfigError(f"unknown study {name!r}; choose from {', '.join(STUDIES)}")
    return STUDIES[name](cfg, values)
