"""Four-field quasi-static Biot equations: discretization, norms and
stability verification."""

from .assembly import OperatorSet, assemble_operators
from .mesh import Mesh, read_mesh, refine_uniform, unit_square_mesh
from .norms import data_norm, dual_norm_P, dual_norm_U, trial_norm
from .problem import BoundaryConfig, MaterialParams, SpaceConfig, gamma, select_spaces
from .solver import FourFieldTrajectory, LoadData, run_trajectory

__all__ = [
    "BoundaryConfig", "FourFieldTrajectory", "LoadData", "MaterialParams", "Mesh", "OperatorSet",
    "SpaceConfig", "assemble_operators", "data_norm", "dual_norm_P", "dual_norm_U", "gamma", "read_mesh",
    "refine_uniform", "run_trajectory", "select_spaces", "trial_norm", "unit_square_mesh",
]
