"""
Configuration and report models.

These models describe everything a run needs before any compute starts:
- the surface (analytic kind or triangulated mesh)
- the lattice band (spacing h, interpolation degree p, construction mode)
- the Schwarz solver (method, mode, overlap, Robin weights, tolerances)

All lengths are in embedding-space units. Validation errors surface as
pydantic ``ValidationError`` and are reported by the CLI as config errors.
"""
from __future__ import annotations

import math
from enum import Enum
from fractions import Fraction
from pathlib import Path
from typing import Dict, List, Optional

from pydantic import BaseModel, Field, field_validator, model_validator


class SurfaceKind(str, Enum):
    CIRCLE = "circle"     # d = 2
    ARC = "arc"           # d = 2, open
    SPHERE = "sphere"     # d = 3
    TORUS = "torus"       # d = 3
    TRIMESH = "trimesh"   # d = 3, OBJ input


class BandMode(str, Enum):
    TUBE = "tube"
    ALGORITHMIC = "algorithmic"


class Method(str, Enum):
    RAS = "ras"     # Dirichlet transmission
    ORAS = "oras"   # Robin transmission


class Mode(str, Enum):
    STATIONARY = "stationary"
    GMRES = "gmres"


class TransmissionKind(str, Enum):
    DIRICHLET = "dirichlet"
    ROBIN = "robin"


def parse_length(value) -> float:
    """Accept floats and fraction strings such as ``"1/25"``."""
    if isinstance(value, str):
        value = float(Fraction(value.strip()))
    return float(value)


class SurfaceSpec(BaseModel):
    kind: SurfaceKind = SurfaceKind.SPHERE
    radius: float = Field(1.0, description="circle/arc/sphere radius")
    angle_min: float = Field(0.0, description="arc start angle (radians)")
    angle_max: float = Field(2.0, description="arc end angle (radians)")
    major_radius: float = Field(2.0 / 3.0, description="torus ring radius R")
    minor_radius: float = Field(1.0 / 3.0, description="torus tube radius r")
    obj_path: Optional[Path] = Field(None, description="Wavefront OBJ file for trimesh")
    scale_height: Optional[float] = Field(None, description="rescale mesh to this bounding-box height")
    height_axis: int = Field(1, ge=0, le=2, description="axis measured by scale_height")
    curvature_bound: Optional[float] = Field(None, description="κ∞ for meshes; unknown when unset")

    @model_validator(mode="after")
    def _check_geometry(self) -> "SurfaceSpec":
        if self.kind in (SurfaceKind.CIRCLE, SurfaceKind.ARC, SurfaceKind.SPHERE) and self.radius <= 0:
            raise ValueError("radius must be positive")
        if self.kind is SurfaceKind.ARC:
            span = self.angle_max - self.angle_min
            if not 0 < span < 2 * math.pi:
                raise ValueError("arc needs angle_min < angle_max < angle_min + 2π")
        if self.kind is SurfaceKind.TORUS and not 0 < self.minor_radius < self.major_radius:
            raise ValueError("torus needs 0 < minor_radius < major_radius")
        if self.kind is SurfaceKind.TRIMESH and self.obj_path is None:
            raise ValueError("trimesh surface needs obj_path")
        if self.scale_height is not None and self.scale_height <= 0:
            raise ValueError("scale_height must be positive")
        if self.curvature_bound is not None and self.curvature_bound <= 0:
            raise ValueError("curvature_bound must be positive")
        return self

    @property
    def dim(self) -> int:
        return 2 if self.kind in (SurfaceKind.CIRCLE, SurfaceKind.ARC) else 3


class TransmissionSpec(BaseModel):
    kind: TransmissionKind = TransmissionKind.DIRICHLET
    alpha: float = Field(1.0, description="Robin weight α")
    alpha_cross: Optional[float] = Field(None, description="α× near cross points (defaults to α)")

    @model_validator(mode="after")
    def _check_weights(self) -> "TransmissionSpec":
        if self.alpha_cross is None:
            self.alpha_cross = self.alpha
        if self.kind is TransmissionKind.ROBIN:
            if not (math.isfinite(self.alpha) and self.alpha > 0):
                raise ValueError("Robin transmission needs a finite alpha > 0")
            if not math.isfinite(self.alpha_cross) or self.alpha_cross < self.alpha:
                raise ValueError("alpha_cross must be finite and >= alpha")
        return self

    @property
    def robin(self) -> bool:
        return self.kind is TransmissionKind.ROBIN


class SolverConfig(BaseModel):
    method: Method = Method.RAS
    mode: Mode = Mode.STATIONARY
    rel_tol: float = Field(1e-6, gt=0, lt=1, description="residual reduction factor")
    max_iter: Optional[int] = Field(None, ge=1, description="default 5000 stationary / 2000 gmres")
    gmres_restart: Optional[int] = Field(None, ge=1, description="None = full GMRES")
    c: float = Field(1.0, gt=0, description="Helmholtz shift c")
    n_overlap: int = Field(4, ge=1, description="N_O overlap layers")
    n_sub: int = Field(2, ge=1, description="N_S subdomains")
    alpha: float = Field(1.0, description="Robin weight α")
    alpha_cross: Optional[float] = Field(None, description="α× near cross points")
    seed: int = 0
    workers: int = Field(1, ge=1, description="thread cap for subdomain work")
    align: bool = Field(True, description="run interface alignment after partitioning")
    align_passes: Optional[int] = Field(None, ge=0, description="default p+1")
    divergence_factor: float = Field(1e8, gt=1, description="abort when residual exceeds this × r0")

    @model_validator(mode="after")
    def _check_robin(self) -> "SolverConfig":
        if self.method is Method.ORAS:
            if not (math.isfinite(self.alpha) and self.alpha > 0):
                raise ValueError("ORAS needs a finite alpha > 0")
            if self.alpha_cross is not None and (
                not math.isfinite(self.alpha_cross) or self.alpha_cross < self.alpha
            ):
                raise ValueError("alpha_cross must be finite and >= alpha")
        return self

    def iteration_cap(self) -> int:
        if self.max_iter is not None:
            return self.max_iter
        return 5000 if self.mode is Mode.STATIONARY else 2000

    def transmission(self) -> TransmissionSpec:
        if self.method is Method.RAS:
            return TransmissionSpec(kind=TransmissionKind.DIRICHLET)
        return TransmissionSpec(kind=TransmissionKind.ROBIN, alpha=self.alpha, alpha_cross=self.alpha_cross)


class RunConfig(BaseModel):
    surface: SurfaceSpec = Field(default_factory=SurfaceSpec)
    h: float = Field(0.04, description="lattice spacing")
    p: Optional[int] = Field(None, ge=1, le=5, description="interpolation degree (3 in 2-D, 2 in 3-D)")
    band_mode: BandMode = BandMode.TUBE
    rhs: str = Field("smooth", description="manufactured problem name or 'file'")
    rhs_file: Optional[Path] = Field(None, description="one value of f per active node")
    solver: SolverConfig = Field(default_factory=SolverConfig)
    output_dir: Path = Path("out")
    partition_file: Optional[Path] = None
    export_matrix: bool = False

    @field_validator("h", mode="before")
    @classmethod
    def _parse_h(cls, v):
        return parse_length(v)

    @field_validator("h")
    @classmethod
    def _positive_h(cls, v: float) -> float:
        if not (math.isfinite(v) and v > 0):
            raise ValueError("h must be positive")
        return v

    @model_validator(mode="after")
    def _check_rhs(self) -> "RunConfig":
        if self.rhs == "file" and self.rhs_file is None:
            raise ValueError("rhs 'file' needs rhs_file")
        return self

    @property
    def degree(self) -> int:
        if self.p is not None:
            return self.p
        return 3 if self.surface.dim == 2 else 2


class BandStats(BaseModel):
    construction: BandMode
    h: float
    p: int
    dim: int
    n_active: int
    n_ghost: int
    n_closure: int = Field(0, description="nodes added by the stencil-closure pass")
    bbox_min: List[float]
    bbox_max: List[float]
    dist_min: float
    dist_max: float
    warnings: List[str] = Field(default_factory=list)

    def to_row(self) -> Dict[str, object]:
        row: Dict[str, object] = {
            "construction": self.construction.value,
            "h": self.h,
            "p": self.p,
            "dim": self.dim,
            "n_active": self.n_active,
            "n_ghost": self.n_ghost,
            "n_closure": self.n_closure,
            "dist_min": self.dist_min,
            "dist_max": self.dist_max,
            "warnings": "; ".join(self.warnings),
        }
        for k, (lo, hi) in enumerate(zip(self.bbox_min, self.bbox_max)):
            row[f"bbox_min_{k}"] = lo
            row[f"bbox_max_{k}"] = hi
        return row

    @classmethod
    def from_row(cls, row: Dict[str, object]) -> "BandStats":
        dim = int(row["dim"])
        warnings = str(row.get("warnings") or "")
        return cls(
            construction=BandMode(row["construction"]),
            h=float(row["h"]),
            p=int(row["p"]),
            dim=dim,
            n_active=int(row["n_active"]),
            n_ghost=int(row["n_ghost"]),
            n_closure=int(row["n_closure"]),
            bbox_min=[float(row[f"bbox_min_{k}"]) for k in range(dim)],
            bbox_max=[float(row[f"bbox_max_{k}"]) for k in range(dim)],
            dist_min=float(row["dist_min"]),
            dist_max=float(row["dist_max"]),
            warnings=[w for w in warnings.split("; ") if w and w != "nan"],
        )


class SolveReport(BaseModel):
    final_residual: float = Field(..., description="‖f − A u‖₂")
    relative_residual: float
    direct_difference: float = Field(..., description="‖u − u_direct‖₂")
    relative_direct_difference: float
    error_2norm: Optional[float] = Field(None, description="‖u − u_exact‖₂ over active nodes")
    error_rms: Optional[float] = Field(None, description="2-norm error divided by √N_A")
    error_inf: Optional[float] = None
