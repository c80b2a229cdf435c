"""
Exception hierarchy.

Hard failures raise a subclass of ``CpmddError``; the CLI maps them to exit
codes (config → 2, divergence → 3, IO errors are plain ``OSError`` → 4).
"""
from __future__ import annotations

from typing import TYPE_CHECKING, Optional

if TYPE_CHECKING:
    from .solve import IterationLog


class CpmddError(Exception):
    """Base class for every error raised by this package."""


class ConfigError(CpmddError):
    """Invalid run configuration detected before any compute."""


class InvalidSurfaceError(CpmddError):
    """Surface definition cannot answer closest-point queries."""


class EmptyBandError(CpmddError):
    """No lattice node lies inside the computational tube."""


class BandConstructionError(CpmddError):
    """A stencil references a node that the band does not contain."""


class PartitionError(CpmddError):
    """Partition request or partition file is inconsistent."""


class SubdomainError(CpmddError):
    """Subdomain node sets or boundary geometry cannot be built."""


class SingularSubdomainError(CpmddError):
    def __init__(self, subdomain: int, detail: str = ""):
        self.subdomain = subdomain
        msg = f"local operator of subdomain {subdomain} is singular"
        super().__init__(f"{msg}: {detail}" if detail else msg)


class DivergenceError(CpmddError):
    def __init__(self, iteration: int, residual: float, log: Optional["IterationLog"] = None):
        self.iteration = iteration
        self.residual = residual
        self.log = log
        super().__init__(f"iteration diverged at step {iteration} (residual {residual:.3e})")
