"""Windowed least-squares model reduction for nonlinear dynamical systems."""
from .basis import (SpaceTimeBasis, SpatialBasis, WeightingMatrix, build_st_basis,
                    collect_snapshots, pod_basis, qsample)
from .core_ode import (ADAMS_BASHFORTH2, BACKWARD_EULER, CRANK_NICOLSON, FORWARD_EULER,
                       LmsScheme, OdeModel, Trajectory, WindowPartition, get_scheme,
                       integrate_fom, lms_residual, uniform_grid)
from .errors import (ConfigError, ContractViolation, NonConvergenceError, NumericalFailure,
                     PhysicalStateError, SingularSystemError, StepFailure, WlsError)
from .gauss_newton import GaussNewtonConfig, gauss_newton
from .metrics import continuous_objective, space_time_error, trajectory_objective
from .models import SodConfig, make_linear_model, make_sod_model, sod_initial_state
from .rom_classic import ReducedOperators, RomRun, run_galerkin, run_lspg
from .wls_s import (FbsmConfig, WlsWindowProblem, run_wls_direct, run_wls_indirect,
                    solve_window_direct, solve_window_fbsm)
from .wls_st import StConfig, StWindowProblem, run_wls_st, solve_st_direct, solve_st_indirect

__version__ = "0.1.0"
