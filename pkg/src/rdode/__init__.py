"""Regular stationary solutions of reaction-diffusion-ODE systems and their instability."""

__version__ = "0.1.0"

from .grid import Grid, NeumannLaplacian, make_grid, neumann_laplacian  # noqa: E402
from .model import SystemModel, find_equilibria, get_model  # noqa: E402

__all__ = [
    "Grid",
    "NeumannLaplacian",
    "SystemModel",
    "find_equilibria",
    "get_model",
    "make_grid",
    "neumann_laplacian",
]
