"""Spectral Picard iteration for the incompressible Navier-Stokes equations in R^3.

The whole space is approximated by a periodic box centered at the origin.
Each iteration solves a linear Stokes problem with the heat kernel and the
divergence-free projection in Fourier space, with the nonlinear term taken
from the previous iterate.
"""

__version__ = "0.1.0"

from .spectral import Grid, ScalarField, SpectralScalarField, SpectralVectorField, VectorField
from .stokes import StokesConfig, Trajectory, solve_stokes
from .picard import PicardConfig, PicardState, Status, iterate_to_fixed_point
from .reference import GaussianForceParams, convergence_ratio, gaussian_force_sampler, u11_closed_form

__all__ = [
    "Grid", "ScalarField", "SpectralScalarField", "SpectralVectorField", "VectorField",
    "StokesConfig", "Trajectory", "solve_stokes",
    "PicardConfig", "PicardState", "Status", "iterate_to_fixed_point",
    "GaussianForceParams", "convergence_ratio", "gaussian_force_sampler", "u11_closed_form",
]
