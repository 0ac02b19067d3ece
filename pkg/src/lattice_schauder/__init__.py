"""Parabolic difference equations on the discrete torus.

Operators and bilinear forms live in ``lattice``, time integration in
``solvers``, the polylinear extension in ``interpolation``, Hoelder and
Campanato quantities in ``norms`` and fundamental solutions in
``parametrix``. ``experiments`` and ``cli`` drive the verification runs.
"""

from . import interpolation, lattice, norms, parametrix, solvers
from ._kernels import backend
from .errors import (
    EnvelopeError,
    HypothesisError,
    IntegratorInstabilityError,
    InvariantError,
    LatticeMismatchError,
    LatticeSchauderError,
    PreconditionError,
    QuadratureError,
    SizeGuardError,
)
from .interpolation import InterpolatedField, interp_partial, interpolate
from .lattice import (
    ConstantCoefficients,
    Direction,
    EdgeCoefficients,
    TorusLattice,
    constant_laplacian,
    dirichlet_form,
    divergence_operator,
    grad_dual,
    grad_forward,
    inner_product,
    laplacian,
    nondivergence_operator,
    sbp_residual,
    torus_distance,
)
from .parametrix import KernelGrid, OperatorLt, parametrix_kernel, rewrite_divergence
from .solvers import (
    LinearProblem,
    Nonlinearity,
    ParabolicCylinder,
    Trajectory,
    coefficients_from_state,
    propagator,
    solve_gradient_system,
    solve_heat_on_cylinder,
    solve_linear_divergence,
    solve_nondivergence_psi,
    solve_quasilinear,
)

__version__ = "0.1.0"

__all__ = [
    "ConstantCoefficients",
    "Direction",
    "EdgeCoefficients",
    "EnvelopeError",
    "HypothesisError",
    "IntegratorInstabilityError",
    "InterpolatedField",
    "InvariantError",
    "KernelGrid",
    "LatticeMismatchError",
    "LatticeSchauderError",
    "LinearProblem",
    "Nonlinearity",
    "OperatorLt",
    "ParabolicCylinder",
    "PreconditionError",
    "QuadratureError",
    "SizeGuardError",
    "TorusLattice",
    "Trajectory",
    "backend",
    "coefficients_from_state",
    "constant_laplacian",
    "dirichlet_form",
    "divergence_operator",
    "grad_dual",
    "grad_forward",
    "inner_product",
    "interp_partial",
    "interpolate",
    "interpolation",
    "laplacian",
    "lattice",
    "nondivergence_operator",
    "norms",
    "parametrix",
    "parametrix_kernel",
    "propagator",
    "rewrite_divergence",
    "sbp_residual",
    "solve_gradient_system",
    "solve_heat_on_cylinder",
    "solve_linear_divergence",
    "solve_nondivergence_psi",
    "solve_quasilinear",
    "solvers",
    "torus_distance",
]
