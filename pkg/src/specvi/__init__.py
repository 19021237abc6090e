"""Spectral variational integrators for Lagrangian systems.

Chebyshev-Lagrange Galerkin curves combined with Gauss quadrature give a
symplectic, momentum-preserving one-step map that converges geometrically as
the basis size grows at a fixed (possibly very large) time step.
"""

from specvi.basis import BasisTable, ChebyshevNodeSet, basis_deriv, basis_eval, chebyshev_points, tabulate
from specvi.curve import GalerkinCurve, Trajectory, sobolev_error, sup_error
from specvi.diagnostics import (
    RateFit,
    SeriesReport,
    discrete_noether_series,
    energy_series,
    fit_geometric,
    fit_order,
    noether_series,
)
from specvi.quadrature import QuadratureRule, gauss_legendre
from specvi.stepper import (
    GalerkinCoefficients,
    IntegrationError,
    NoConvergence,
    PhaseState,
    SolverConfig,
    SpectralStepper,
    StepFailure,
    StepResult,
    integrate,
    step,
)
from specvi.system import (
    CanonicalLagrangian,
    LagrangianSystem,
    NoetherGenerator,
    PotentialDomainError,
    canonical_to_system,
    continuous_legendre,
    energy,
)

__version__ = "0.1.0"

__all__ = [
    "BasisTable", "ChebyshevNodeSet", "basis_deriv", "basis_eval", "chebyshev_points", "tabulate",
    "GalerkinCurve", "Trajectory", "sobolev_error", "sup_error",
    "RateFit", "SeriesReport", "discrete_noether_series", "energy_series", "fit_geometric", "fit_order",
    "noether_series",
    "QuadratureRule", "gauss_legendre",
    "GalerkinCoefficients", "IntegrationError", "NoConvergence", "PhaseState", "SolverConfig",
    "SpectralStepper", "StepFailure", "StepResult", "integrate", "step",
    "CanonicalLagrangian", "LagrangianSystem", "NoetherGenerator", "PotentialDomainError",
    "canonical_to_system", "continuous_legendre", "energy",
]
