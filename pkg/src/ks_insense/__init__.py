"""Insensitizing controls for a 1D stabilized Kuramoto-Sivashinsky/heat system."""

from .errors import (BadInterval, CgStalled, ConfigError, DegenerateObservation, DegenerateParams,
                     EigFailed, KsInsenseError, SearchFailed, SingularMatrix)
from .grid import (BandedMatrix, Grid, IndicatorMask, TimeGrid, assemble_d1, assemble_d2, assemble_d3,
                   assemble_d4, banded_lu_solve, build_mask)
from .hum import HumConfig, HumResult, gramian_apply, gramian_norm, solve_hum
from .observability import (carleman_ratio, estimate_observability, eval_I_H, eval_I_KS, log_I_H,
                            log_I_KS)
from .sentinel import (SentinelConfig, derivative_analytic, derivative_fd, evaluate_sentinel,
                       verify_insensitivity)
from .solvers import (KSHeatSystem, PhysicsParams, solve_adjoint, solve_cascade, solve_forward,
                      step_operator)
from .weights import (CarlemanParams, audit_good_sign, audit_weight_estimates, build_nu, build_weights,
                      check_source_admissibility, search_k)

__version__ = "0.1.0"
