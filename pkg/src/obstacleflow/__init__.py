"""Incompressible flow under a pointwise speed obstacle.

Simulates viscous incompressible flow in a box whose velocity magnitude is
capped cellwise by a time-dependent obstacle field, via an implicit Euler
scheme whose every step solves a variational inequality over the intersection
of the divergence-free subspace and the cellwise speed balls.  Ships the
obstacle regularization ladder, per-step splitting solver, energy/BV/residual
diagnostics, scenario I/O, and a CLI.
"""

from .errors import (
    ConfigurationError,
    DomainError,
    NumericalError,
    ScenarioValidationError,
    StepNonConvergence,
)
from .grid import (
    ConstantsReport,
    MacGrid,
    ScalarField,
    VectorField,
    convection_form,
    divergence,
    dual_norm_W_star,
    embedding_constants,
    leray_project,
    norm_L2,
    norm_W14,
    poincare_constant,
    seminorm_H1,
)

__version__ = "0.1.0"

__all__ = [
    "ConfigurationError",
    "DomainError",
    "NumericalError",
    "ScenarioValidationError",
    "StepNonConvergence",
    "ConstantsReport",
    "MacGrid",
    "ScalarField",
    "VectorField",
    "convection_form",
    "divergence",
    "dual_norm_W_star",
    "embedding_constants",
    "leray_project",
    "norm_L2",
    "norm_W14",
    "poincare_constant",
    "seminorm_H1",
    "__version__",
]
