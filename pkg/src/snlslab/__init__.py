"""Spectral Galerkin / implicit midpoint solver and convergence lab for a stochastic
semiclassical Schroedinger equation on the one-dimensional torus."""
from __future__ import annotations

from importlib.metadata import PackageNotFoundError, version

try:
    __version__ = version("artifact")
except PackageNotFoundError:  # running from a source tree
    __version__ = "0.0.0"

from .coefficients import CoefficientSet, make_coefficients
from .noise import NoisePath, NoiseSpec, sample_path
from .solver import SolverConfig, Trajectory, integrate, midpoint_step, reference_solve
from .spectral import FourierGrid, SpectralField

__all__ = [
    "CoefficientSet",
    "FourierGrid",
    "NoisePath",
    "NoiseSpec",
    "SolverConfig",
    "SpectralField",
    "Trajectory",
    "integrate",
    "make_coefficients",
    "midpoint_step",
    "reference_solve",
    "sample_path",
]
