"""Coulomb gases at low temperature on the 3-torus and in R^3."""
from .equilibrium import EquilibriumMeasure, solve_quadratic_equilibrium
from .kernel import FreeKernel, TorusKernel
from .system import ConfiningPotential, Configuration

__version__ = "0.1.0"

__all__ = [
    "ConfiningPotential",
    "Configuration",
    "EquilibriumMeasure",
    "FreeKernel",
    "TorusKernel",
    "solve_quadratic_equilibrium",
]
