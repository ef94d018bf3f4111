"""Parking processes on Galton-Watson trees: simulation, exact laws and series."""
from .errors import TreeparkError
from .model import (
    ArrivalFamily,
    Model,
    OffspringDist,
    Regime,
    build_model,
    classify,
    geometric_poisson,
    mean_flux_curve,
    theoretical_flux_mean,
)
from .parking import ParkingResult, clusters, park, park_sequential
from .treegen import (
    CarAssignment,
    PlaneTree,
    sample_arrivals,
    sample_gw,
    sample_gw_conditioned,
    sample_spine_tree,
)

__version__ = "0.1.0"

__all__ = [
    "ArrivalFamily", "CarAssignment", "Model", "OffspringDist", "ParkingResult", "PlaneTree", "Regime",
    "TreeparkError", "build_model", "classify", "clusters", "geometric_poisson", "mean_flux_curve",
    "park", "park_sequential", "sample_arrivals", "sample_gw", "sample_gw_conditioned",
    "sample_spine_tree", "theoretical_flux_mean",
]
