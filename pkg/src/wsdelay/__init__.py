"""Statistics of the Wigner-Smith time-delay matrix of disordered multichannel wires."""
from __future__ import annotations

__version__ = "0.1.0"

from .linalg import HermitianMatrix, MatrixError, SymmetryClass, UnitaryMatrix
from .noise import NoiseSpec, RngStream, sample_increment, verify_correlator
from .params import ModelParams, SdeConfig, WeakDisorderWarning
from .moments import mc_moments, mean_trace, proper_time_stats, second_moments
from .resolvent import ResolventGrid, density_from_resolvent, empirical_density, solve_resolvent_pde
from .rmt import WishartSpec, sample_wishart_eigs, stationary_density
from .sde import (exp_functional, integrate_coupled, integrate_lambda, integrate_qtilde,
                  lyapunov_spectrum)
from .microscopic import build_potential, krein_friedel, smatrix, wigner_smith

__all__ = [
    "HermitianMatrix", "MatrixError", "ModelParams", "NoiseSpec", "ResolventGrid", "RngStream",
    "SdeConfig", "SymmetryClass", "UnitaryMatrix", "WeakDisorderWarning", "WishartSpec",
    "__version__", "build_potential", "density_from_resolvent", "empirical_density",
    "exp_functional", "integrate_coupled", "integrate_lambda", "integrate_qtilde",
    "krein_friedel", "lyapunov_spectrum", "mc_moments", "mean_trace", "proper_time_stats",
    "sample_increment", "sample_wishart_eigs", "second_moments", "smatrix",
    "solve_resolvent_pde", "stationary_density", "verify_correlator", "wigner_smith",
]
