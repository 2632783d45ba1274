"""Phase-field cohesive fracture: material laws, effective densities, solvers
and Gamma-convergence sweeps."""
from .laws import (MaterialLaw, DimensionError, NonConvergentRecessionError, psi_eval, psi_infty_eval,
                   h_eval, f_damage, f_eps, gamma_eps, h_scal, h_scal_conv, phi_map, make_law)

__version__ = "0.1.0"
