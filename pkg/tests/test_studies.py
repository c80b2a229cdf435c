import math

import numpy as np
import pandas as pd
import pytest

from cpmdd.models import Method, Mode, RunConfig, SolverConfig
from cpmdd.pipeline import discretize, iterate, make_partition, split
from cpmdd.studies import DNC, alpha_sweep, cross_sweep, nsub_sweep, overlap_sweep, run_study


@pytest.fixture(scope="module")
def small_circle():
    return RunConfig(
        surface={"kind": "circle"},
        h=0.1,
        rhs="circle-mode",
        solver=SolverConfig(n_sub=2, n_overlap=2, alpha=2.0),
    )


def _stationary_ras(cfg):
    disc = discretize(cfg)
    solver = cfg.solver.model_copy(update={"method": Method.RAS, "mode": Mode.STATIONARY})
    splitting = split(disc, solver, make_partition(disc, solver))
    _, log = iterate(disc, splitting, solver)
    return log.iterations


def test_alpha_sweep_shape_and_ras_column(small_circle):
    df = alpha_sweep(small_circle, [1.0, 4.0, math.inf])
    assert list(df.columns) == ["mode", "1", "4", "inf"]
    assert df["mode"].tolist() == ["solver", "preconditioner"]
    solver_row = df.set_index("mode").loc["solver"]
    assert solver_row["inf"] == _stationary_ras(small_circle)


def test_overlap_sweep_ras_is_non_increasing(small_circle):
    df = overlap_sweep(small_circle, [2, 4, 8]).set_index("variant")
    assert set(df.index) == {"RAS solver", "RAS preconditioner", "ORAS solver", "ORAS preconditioner"}
    ras = df.loc["RAS solver"]
    assert DNC not in ras.tolist()
    counts = [int(ras[k]) for k in ("2", "4", "8")]
    assert counts == sorted(counts, reverse=True)


def test_nsub_sweep_columns(small_circle):
    df = nsub_sweep(small_circle, [2, 3])
    assert list(df.columns) == ["variant", "2", "3"]
    assert len(df) == 4


def test_cross_factor_is_irrelevant_without_cross_points(small_circle):
    df = cross_sweep(small_circle, [1.0, 10.0]).set_index("mode")
    pd.testing.assert_series_equal(df["1"], df["10"], check_names=False)


@pytest.mark.slow
def test_sphere_iterates_settle_far_below_truncation_error():
    cfg = RunConfig(surface={"kind": "sphere"}, h="1/25", solver=SolverConfig(rel_tol=1e-10))
    df = run_study("sphere-consistency", cfg)
    for method, rows in df.groupby("method"):
        trace = rows["direct_difference"].to_numpy()
        assert trace[-1] <= 1e-6 * trace[0], method
        assert trace[-1] < rows["continuous_error_rms"].iloc[0]


@pytest.fixture(scope="module")
def sphere_50():
    cfg = RunConfig(surface={"kind": "sphere"}, h="1/50", rhs="sphere-exp",
                    solver=SolverConfig(n_sub=2, n_overlap=4, alpha=1.0))
    disc = discretize(cfg)
    return cfg, disc, make_partition(disc, cfg.solver)


def _count(disc, pmap, solver):
    _, log = iterate(disc, split(disc, solver, pmap), solver)
    assert log.converged
    return log.iterations


@pytest.mark.slow
def test_oras_beats_ras_on_the_sphere(sphere_50):
    cfg, disc, pmap = sphere_50
    counts = {}
    for method in Method:
        for mode in Mode:
            counts[method, mode] = _count(disc, pmap, cfg.solver.model_copy(update={"method": method, "mode": mode}))
    assert counts[Method.ORAS, Mode.STATIONARY] <= 0.5 * counts[Method.RAS, Mode.STATIONARY]
    for method in Method:
        assert counts[method, Mode.GMRES] < counts[method, Mode.STATIONARY]


@pytest.mark.slow
def test_huge_alpha_reproduces_ras(sphere_50):
    cfg, disc, pmap = sphere_50
    ras = _count(disc, pmap, cfg.solver.model_copy(update={"method": Method.RAS}))
    robin = SolverConfig.model_validate({**cfg.solver.model_dump(), "method": "oras", "alpha": 1e12})
    assert _count(disc, pmap, robin) == ras


@pytest.mark.slow
def test_cross_point_weights_keep_oras_convergent():
    base = RunConfig(surface={"kind": "sphere"}, h="1/20", rhs="sphere-exp",
                     solver=SolverConfig(method="oras", n_sub=8, n_overlap=4, alpha=2.0, max_iter=2000))
    sweep = run_study("cross-sweep", base, [10.0, 20.0, 40.0]).set_index("mode")
    for factor in ("10", "20", "40"):
        assert sweep.loc["solver", factor] != DNC, factor
    # the preconditioner barely depends on the cross weight
    gmres = np.array([int(v) for v in sweep.loc["preconditioner"]])
    assert gmres.max() <= 1.3 * gmres.min()


@pytest.mark.slow
def test_iterations_grow_with_subdomain_count():
    cfg = RunConfig(surface={"kind": "sphere"}, h="1/25", rhs="sphere-exp",
                    solver=SolverConfig(n_overlap=4, alpha=2.0, alpha_cross=40.0))
    df = run_study("nsub-sweep", cfg, [4, 8, 16]).set_index("variant")
    for method in ("RAS", "ORAS"):
        row = [int(v) for v in df.loc[f"{method} solver"]]
        assert row == sorted(row)
