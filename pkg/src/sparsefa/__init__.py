"""Sparse oblique factor analysis by penalized maximum likelihood."""

__version__ = "0.1.0"

from .criteria import agfi_parameters, information_criteria
from .em import SolverError, SolverOptions, cd_update_row, e_step, fit, phi_update, psi_update
from .io import load_data, load_harman
from .kernels import BACKEND
from .model import (
    DataError,
    FactorSolution,
    FitDiagnostics,
    SampleMoments,
    gfi_agfi,
    implied_covariance,
    log_likelihood,
    penalized_objective,
)
from .path import PathGrid, SolutionPath, default_grid, rho_grid, select_model, solution_path
from .penalty import THRESHOLD_MODES, PenaltySpec, penalty_value, scalar_threshold
from .rotation import RotationSpec, min_l1_G, ml_fit, rotate
from .simulation import StudyConfig, StudyReport, TrueModel, generate_dataset, run_study
