"""Closest point method surface PDEs with overlapping Schwarz domain decomposition."""
__all__ = [
    "band",
    "geometry",
    "models",
    "operators",
    "partition",
    "pipeline",
    "problems",
    "solve",
    "studies",
    "subdomain",
    "transmission",
]
__version__ = "0.1.0"
