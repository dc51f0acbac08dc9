"""Dense depth from a single calibrated endoscopic image."""
from .energy import DepthEnergy, Parameterization, edge_weights
from .maps import (
    DepthMap,
    NormalMap,
    convert_parameterization,
    initial_depth,
    normals_from_depth,
    photometric_cost,
    ray_grid,
    regularizer_cost,
)
from .solver import ConvergenceReport, DepthSolution, EnergyConfig, minimise, solve_depth

__all__ = [
    "ConvergenceReport",
    "DepthEnergy",
    "DepthMap",
    "DepthSolution",
    "EnergyConfig",
    "NormalMap",
    "Parameterization",
    "convert_parameterization",
    "edge_weights",
    "initial_depth",
    "minimise",
    "normals_from_depth",
    "photometric_cost",
    "ray_grid",
    "regularizer_cost",
    "solve_depth",
]
