"""Pseudo-spectral Galerkin simulator for the stochastic tamed MHD equations on the 3-torus."""

__version__ = "0.1.0"

from .spectral import GridSpec, SpectralField, StatePair  # noqa: E402,F401
from .operators import TamingSpec, eval_taming, operator_A, operator_B, hs_norm_B, energy_pairing  # noqa: E402,F401
from .noise import CoefficientFamily, RngStream, make_family, sample_increments  # noqa: E402,F401
from .integrator import InitialCondition, SimConfig, simulate, twin_simulate  # noqa: E402,F401
