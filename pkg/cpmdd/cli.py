from __future__ import annotations

import configparser
import json
import logging
import math
from functools import wraps
from pathlib import Path
from typing import Any, Dict, List, Optional

import pandas as pd
import typer
from pydantic import ValidationError
from rich import box, print
from rich.logging import RichHandler
from rich.table import Table

from .band import band_stats, build_band, write_band_stats, write_mesh_csv
from .errors import ConfigError, CpmddError, DivergenceError
from .geometry import make_surface
from .models import RunConfig, parse_length
from .operators import export_matrix_market
from .partition import save_partition
from .pipeline import run
from .studies import STUDIES, run_study

app = typer.Typer(help="Closest point method surface solver with Schwarz domain decomposition")

log = logging.getLogger("cpmdd")

EXIT_CONFIG, EXIT_DIVERGED, EXIT_IO, EXIT_OTHER = 2, 3, 4, 1


def _setup_logging(verbose: bool) -> None:
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(message)s",
        handlers=[RichHandler(rich_tracebacks=False, show_path=False)],
        force=True,
    )


def _coerce(value: str) -> Any:
    text = value.strip()
    if text.lower() in ("true", "yes", "on"):
        return True
    if text.lower() in ("false", "no", "off"):
        return False
    if text.lower() in ("", "none"):
        return None
    return text


def load_config(path: Optional[Path]) -> Dict[str, Any]:
    """Read a JSON (nested) or INI ([run], [solver], [surface]) config into a dict."""
    if path is None:
        return {}
    if path.suffix.lower() == ".json":
        return json.loads(path.read_text())
    parser = configparser.ConfigParser()
    with open(path, "r", encoding="utf-8") as fh:
        parser.read_file(fh)
    data: Dict[str, Any] = {}
    if parser.has_section("run"):
        data.update({k: _coerce(v) for k, v in parser.items("run")})
    for section in ("solver", "surface"):
        if parser.has_section(section):
            data[section] = {k: _coerce(v) for k, v in parser.items(section)}
    return data


def build_config(path: Optional[Path], run_overrides: Dict[str, Any], solver_overrides: Dict[str, Any], surface_overrides: Dict[str, Any]) -> RunConfig:
    data = load_config(path)
    data.update({k: v for k, v in run_overrides.items() if v is not None})
    for key, extra in (("solver", solver_overrides), ("surface", surface_overrides)):
        section = dict(data.get(key) or {})
        section.update({k: v for k, v in extra.items() if v is not None})
        data[key] = section
    return RunConfig.model_validate(data)


def _surface_overrides(kind, obj, scale_height, curvature_bound) -> Dict[str, Any]:
    return {"kind": kind, "obj_path": obj, "scale_height": scale_height, "curvature_bound": curvature_bound}


def guarded(fn):
    """Map package errors to exit codes."""

    @wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except (ConfigError, ValidationError) as exc:
            log.error("configuration error: %s", exc)
            raise typer.Exit(EXIT_CONFIG)
        except DivergenceError as exc:
            log.error("%s", exc)
            raise typer.Exit(EXIT_DIVERGED)
        except OSError as exc:
            log.error("I/O error: %s", exc)
            raise typer.Exit(EXIT_IO)
        except CpmddError as exc:
            log.error("%s", exc)
            raise typer.Exit(EXIT_OTHER)

    return wrapper


def _report_table(title: str, rows: Dict[str, Any]) -> Table:
    table = Table(title=title, box=box.SIMPLE)
    table.add_column("Metric")
    table.add_column("Value", justify="right")
    for k, v in rows.items():
        if v is None:
            continue
        table.add_row(k, f"{v:.4e}" if isinstance(v, float) else str(v))
    return table


ConfigOpt = typer.Option(None, "--config", "-c", help="INI or JSON run configuration")
SurfaceOpt = typer.Option(None, help="circle | arc | sphere | torus | trimesh")
ObjOpt = typer.Option(None, help="OBJ file for trimesh surfaces")
HOpt = typer.Option(None, "--h", help="lattice spacing, fractions allowed (1/25)")
POpt = typer.Option(None, "--p", help="interpolation degree")
BandOpt = typer.Option(None, "--band", help="tube | algorithmic")
ScaleOpt = typer.Option(None, "--scale-height", help="rescale an OBJ mesh to this bounding-box height")
KappaOpt = typer.Option(None, "--curvature-bound", help="curvature bound for OBJ meshes")
MethodOpt = typer.Option(None, help="ras | oras")
SeedOpt = typer.Option(None, help="partition seed")
OutOpt = typer.Option(None, "--output-dir", "-o")
VerboseOpt = typer.Option(False, "--verbose", "-v")


@app.command()
@guarded
def mesh(
    config: Optional[Path] = ConfigOpt,
    surface: Optional[str] = SurfaceOpt,
    obj: Optional[Path] = ObjOpt,
    h: Optional[str] = HOpt,
    p: Optional[int] = POpt,
    band: Optional[str] = BandOpt,
    scale_height: Optional[float] = ScaleOpt,
    curvature_bound: Optional[float] = KappaOpt,
    output_dir: Optional[Path] = OutOpt,
    verbose: bool = VerboseOpt,
):
    """Build the band and write mesh_stats.csv and mesh.csv."""
    _setup_logging(verbose)
    cfg = build_config(
        config,
        {"h": h, "p": p, "band_mode": band, "output_dir": output_dir},
        {},
        _surface_overrides(surface, obj, scale_height, curvature_bound),
    )
    grid = build_band(make_surface(cfg.surface), cfg.h, cfg.degree, cfg.band_mode)
    stats = band_stats(grid)
    cfg.output_dir.mkdir(parents=True, exist_ok=True)
    write_band_stats(cfg.output_dir / "mesh_stats.csv", stats)
    write_mesh_csv(cfg.output_dir / "mesh.csv", grid)
    print(_report_table(f"Band: {cfg.surface.kind.value}, h={cfg.h:g}", {
        "N_A": stats.n_active,
        "N_G": stats.n_ghost,
        "closure nodes": stats.n_closure,
        "dist max": stats.dist_max,
        "warnings": "; ".join(stats.warnings) or None,
    }))


@app.command()
@guarded
def solve(
    config: Optional[Path] = ConfigOpt,
    surface: Optional[str] = SurfaceOpt,
    obj: Optional[Path] = ObjOpt,
    h: Optional[str] = HOpt,
    p: Optional[int] = POpt,
    band: Optional[str] = BandOpt,
    scale_height: Optional[float] = ScaleOpt,
    curvature_bound: Optional[float] = KappaOpt,
    rhs: Optional[str] = typer.Option(None, help="manufactured problem or 'file'"),
    rhs_file: Optional[Path] = typer.Option(None),
    method: Optional[str] = MethodOpt,
    mode: Optional[str] = typer.Option(None, help="stationary | gmres"),
    n_sub: Optional[int] = typer.Option(None, "--n-sub"),
    n_overlap: Optional[int] = typer.Option(None, "--n-overlap"),
    alpha: Optional[float] = typer.Option(None),
    alpha_cross: Optional[float] = typer.Option(None, "--alpha-cross"),
    c: Optional[float] = typer.Option(None, "--c"),
    rel_tol: Optional[float] = typer.Option(None, "--rel-tol"),
    max_iter: Optional[int] = typer.Option(None, "--max-iter"),
    restart: Optional[int] = typer.Option(None, "--restart"),
    seed: Optional[int] = SeedOpt,
    workers: Optional[int] = typer.Option(None),
    partition_file: Optional[Path] = typer.Option(None, "--partition-file"),
    no_align: bool = typer.Option(False, "--no-align"),
    export_matrix: bool = typer.Option(False, "--export-matrix"),
    output_dir: Optional[Path] = OutOpt,
    verbose: bool = VerboseOpt,
):
    """Run mesh → partition → subdomains → solve and write the run artifacts."""
    _setup_logging(verbose)
    cfg = build_config(
        config,
        {
            "h": h, "p": p, "band_mode": band, "rhs": rhs, "rhs_file": rhs_file,
            "output_dir": output_dir, "partition_file": partition_file,
            "export_matrix": export_matrix or None,
        },
        {
            "method": method, "mode": mode, "n_sub": n_sub, "n_overlap": n_overlap,
            "alpha": alpha, "alpha_cross": alpha_cross, "c": c, "rel_tol": rel_tol,
            "max_iter": max_iter, "gmres_restart": restart, "seed": seed, "workers": workers,
            "align": False if no_align else None,
        },
        _surface_overrides(surface, obj, scale_height, curvature_bound),
    )
    out = cfg.output_dir
    out.mkdir(parents=True, exist_ok=True)
    try:
        result = run(cfg)
    except DivergenceError as exc:
        if exc.log is not None:
            exc.log.frame().to_csv(out / "iterations.csv", index=False)
        raise

    grid = result.disc.grid
    write_band_stats(out / "mesh_stats.csv", band_stats(grid))
    cp = grid.active.cp
    cols = {name: cp[:, k] for k, name in enumerate("xyz"[: grid.dim])}
    pd.DataFrame({**cols, "u": result.u}).to_csv(out / "solution.csv", index=False)
    result.log.frame().to_csv(out / "iterations.csv", index=False)
    result.timer.frame().to_csv(out / "timings.csv", index=False)
    pd.DataFrame([result.report.model_dump()]).to_csv(out / "report.csv", index=False)
    save_partition(out / "partition.txt", result.splitting.pmap)
    if cfg.export_matrix:
        export_matrix_market(out / "matrix.mtx", result.disc.ops.A)

    print(_report_table(
        f"{cfg.solver.method.value.upper()} {cfg.solver.mode.value}: N_A={grid.n_active}, N_S={cfg.solver.n_sub}",
        {
            "iterations": result.log.iterations,
            "converged": result.log.converged,
            **{k: v for k, v in result.report.model_dump().items()},
        },
    ))
    if not result.log.converged:
        log.warning("iteration cap reached without convergence")


@app.command()
@guarded
def study(
    name: str = typer.Argument(..., help=", ".join(STUDIES)),
    config: Optional[Path] = ConfigOpt,
    surface: Optional[str] = SurfaceOpt,
    obj: Optional[Path] = ObjOpt,
    h: Optional[str] = HOpt,
    p: Optional[int] = POpt,
    band: Optional[str] = BandOpt,
    scale_height: Optional[float] = ScaleOpt,
    curvature_bound: Optional[float] = KappaOpt,
    values: Optional[str] = typer.Option(None, help="comma-separated sweep values, e.g. 1/64,1/128"),
    method: Optional[str] = MethodOpt,
    n_sub: Optional[int] = typer.Option(None, "--n-sub"),
    n_overlap: Optional[int] = typer.Option(None, "--n-overlap"),
    alpha: Optional[float] = typer.Option(None),
    alpha_cross: Optional[float] = typer.Option(None, "--alpha-cross"),
    max_iter: Optional[int] = typer.Option(None, "--max-iter"),
    seed: Optional[int] = SeedOpt,
    workers: Optional[int] = typer.Option(None),
    output_dir: Optional[Path] = OutOpt,
    verbose: bool = VerboseOpt,
):
    """Run a canned study and write study_<name>.csv."""
    _setup_logging(verbose)
    cfg = build_config(
        config,
        {"h": h, "p": p, "band_mode": band, "output_dir": output_dir},
        {
            "method": method, "n_sub": n_sub, "n_overlap": n_overlap, "alpha": alpha,
            "alpha_cross": alpha_cross, "max_iter": max_iter, "seed": seed, "workers": workers,
        },
        _surface_overrides(surface, obj, scale_height, curvature_bound),
    )
    sweep: Optional[List[float]] = None
    if values:
        try:
            sweep = [math.inf if v.strip() in ("inf", "∞") else parse_length(v) for v in values.split(",")]
        except (ValueError, ZeroDivisionError) as exc:
            raise ConfigError(f"bad --values entry: {exc}") from exc
    df = run_study(name, cfg, sweep)
    cfg.output_dir.mkdir(parents=True, exist_ok=True)
    df.to_csv(cfg.output_dir / f"study_{name}.csv", index=False)

    table = Table(title=f"Study: {name}", box=box.SIMPLE)
    for col in df.columns:
        table.add_column(str(col), justify="right")
    for row in df.itertuples(index=False):
        table.add_row(*[f"{v:.4g}" if isinstance(v, float) else str(v) for v in row])
    print(table)


if __name__ == "__main__":
    app()
