"""Fractional Laplacian operators, the weighted harmonic extension and
boundary reaction problems on periodic and line grids."""

from __future__ import annotations

__version__ = "0.1.0"

from .grid import (
    BoundaryGrid,
    Constants,
    ExtensionField,
    ExtensionGrid,
    FracParams,
    GridError,
    GridFunction,
    UncalibratedError,
    make_extension_grid,
    make_line_grid,
    make_torus_grid,
    weighted_energy,
)
from .ops import (
    CalibrationError,
    TruncationWarning,
    calibrate_constants,
    fraclap_fourier,
    fraclap_singular,
    poisson_extend,
)
from .extension import (
    ExtensionSolveError,
    SolveReport,
    dirichlet_to_neumann,
    neumann_trace,
    solve_boundary_reaction,
    solve_extension_dirichlet,
    weak_residual,
)
from .nonlinearity import Nonlinearity, NonlinearityError, builtin, parse_nonlinearity
from .stability import StabilityReport, caccioppoli_check, lambda_min, sign_classification
from .liouville import (
    energy_scan,
    hamiltonian_gap,
    liouville_suite,
    one_d_alignment,
    trichotomy_suite,
)

__all__ = [
    "__version__",
    "BoundaryGrid",
    "Constants",
    "ExtensionField",
    "ExtensionGrid",
    "FracParams",
    "GridError",
    "GridFunction",
    "UncalibratedError",
    "make_extension_grid",
    "make_line_grid",
    "make_torus_grid",
    "weighted_energy",
    "CalibrationError",
    "TruncationWarning",
    "calibrate_constants",
    "fraclap_fourier",
    "fraclap_singular",
    "poisson_extend",
    "ExtensionSolveError",
    "SolveReport",
    "dirichlet_to_neumann",
    "neumann_trace",
    "solve_boundary_reaction",
    "solve_extension_dirichlet",
    "weak_residual",
    "energy_scan",
    "hamiltonian_gap",
    "liouville_suite",
    "one_d_alignment",
    "trichotomy_suite",
    "Nonlinearity",
    "NonlinearityError",
    "builtin",
    "parse_nonlinearity",
    "StabilityReport",
    "caccioppoli_check",
    "lambda_min",
    "sign_classification",
]
