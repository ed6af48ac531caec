"""Simulation lab for stochastic reaction-diffusion equations with additive noise.

Spectral Galerkin discretization on (0, 1), exponential Euler time stepping,
coupling by change of measure, Monte Carlo checks of Harnack-type
inequalities and long-run ergodic diagnostics.
"""

from importlib.metadata import PackageNotFoundError, version

try:
    __version__ = version("srdlab")
except PackageNotFoundError:  # pragma: no cover - source checkout without install
    __version__ = "0.0.0"

from .drift import DriftSpec, compute_lambda
from .integrator import Model, SchemeSpec
from .noise import NoiseSpec
from .spectral import GridSpec, SpectralField

__all__ = ["DriftSpec", "GridSpec", "Model", "NoiseSpec", "SchemeSpec", "SpectralField", "__version__",
           "compute_lambda"]
