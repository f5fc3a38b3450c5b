"""driftlab: numerics for a drift-parametrized conformal constraint system.

Layers, bottom up:

* grids / fields / calculus — torus and ball grids, immutable field
  containers, spectral and stencil calculus.
* elliptic — periodic scalar and Lame solvers, fundamental solutions,
  Green representation checks.
* conformal — the dictionary between physical initial-data sets and the
  general drift system, conformal-change covariance, blow-up rescaling.
* driftsystem — residuals, the coupled solver, interior positivity floor,
  manufactured solutions.
* bubbles — flat-space bubble profiles, drift profiles, the Pohozaev
  balance and asymptotic remainder extraction.
* diagnostics — concentration detection, Harnack quotients, influence
  radii, stability sweeps.
* cli — the `driftlab` command.
"""

from .grids import BallGrid, TorusGrid, sphere_area
from .fields import (ScalarField, SobolevExponents, SymTensorField,
                     VectorField, sym_size)
from .elliptic import (neumann_green_build, solve_lame_periodic,
                       solve_scalar_periodic)
from .conformal import (GeneralCoefficients, PhysicalCoefficients,
                        blowup_rescale, concentration_scale,
                        constraint_residual, physical_to_general,
                        reconstruct_initial_data, transform_system,
                        volumetric_momentum)

__all__ = [
    "BallGrid",
    "TorusGrid",
    "sphere_area",
    "ScalarField",
    "SobolevExponents",
    "SymTensorField",
    "VectorField",
    "sym_size",
    "neumann_green_build",
    "solve_lame_periodic",
    "solve_scalar_periodic",
    "GeneralCoefficients",
    "PhysicalCoefficients",
    "blowup_rescale",
    "concentration_scale",
    "constraint_residual",
    "physical_to_general",
    "reconstruct_initial_data",
    "transform_system",
    "volumetric_momentum",
]

__version__ = "0.1.0"
