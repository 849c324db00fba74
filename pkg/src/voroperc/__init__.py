"""Monte Carlo toolkit for Poisson-Voronoi percolation on flat, hyperbolic,
product, and graph geometries."""

from .geometry import (
    Euclidean,
    GraphSpace,
    GraphWorld,
    GrowthParams,
    Hyperbolic2,
    ProductH2xH2,
    Space,
    fit_growth,
    parse_backend,
)
from .rng import RandomStream

__version__ = "0.1.0"

__all__ = [
    "Euclidean",
    "GraphSpace",
    "GraphWorld",
    "GrowthParams",
    "Hyperbolic2",
    "ProductH2xH2",
    "RandomStream",
    "Space",
    "fit_growth",
    "parse_backend",
    "__version__",
]
