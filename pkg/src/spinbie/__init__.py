"""Spin integral equation solver for Maxwell and Helmholtz scattering off closed surfaces."""
from . import clifford, geometry, kernels, operators, scattering, solve
from .scattering import (
    Dipole,
    PlaneWave,
    PointSource,
    ScatteringProblem,
    SolverSettings,
    spin_solve,
    verify_interior_source,
)

__version__ = "0.1.0"

__all__ = [
    "clifford",
    "geometry",
    "kernels",
    "operators",
    "scattering",
    "solve",
    "Dipole",
    "PlaneWave",
    "PointSource",
    "ScatteringProblem",
    "SolverSettings",
    "spin_solve",
    "verify_interior_source",
]
