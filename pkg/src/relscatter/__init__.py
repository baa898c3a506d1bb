"""Relativistic small-angle scattering: dynamics, a priori bounds and X-ray inversion.

Submodules:

* :mod:`relscatter.potential` -- potential models and decay-constant certification
* :mod:`relscatter.dynamics` -- reference integrator and the Picard fixed-point solver
* :mod:`relscatter.bounds` -- contraction constants, speed thresholds and bound functions
* :mod:`relscatter.scattering` -- scattering data and checks of the high-speed estimates
* :mod:`relscatter.xray` -- line integrals, high-speed extrapolation and reconstruction
* :mod:`relscatter.cli` -- command-line front end
"""

__version__ = "0.1.0"

from .bounds import BoundInputs, BoundSet, HypothesisError, eval_bounds, solve_thresholds
from .dynamics import PicardConfig, integrate_oracle, picard_solve
from .potential import PotentialModel, anisotropic, bumps, certify_decay, free, isotropic
from .scattering import (CaptureError, scattering_batch, scattering_via_functionals,
                         scattering_via_oracle, verify_theorem31, verify_theorem32)
from .xray import ReconstructionSpec, fbp_invert, reconstruct_force, w_functional, xray_forward

__all__ = [
    "__version__",
    "BoundInputs", "BoundSet", "HypothesisError", "eval_bounds", "solve_thresholds",
    "PicardConfig", "integrate_oracle", "picard_solve",
    "PotentialModel", "anisotropic", "bumps", "certify_decay", "free", "isotropic",
    "CaptureError", "scattering_batch", "scattering_via_functionals", "scattering_via_oracle",
    "verify_theorem31", "verify_theorem32",
    "ReconstructionSpec", "fbp_invert", "reconstruct_force", "w_functional", "xray_forward",
]
