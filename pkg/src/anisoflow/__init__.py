"""Anisotropic Stokes-flow simulation and fluidic topology optimization on regular grids."""

from .assembly import DirichletSet, StokesSystem, assemble
from .errors import AnisoflowError, ConfigurationError, DomainError, SolverError
from .grid import GridSpec, gauss_rule, shape_values_and_gradients
from .material import DesignField, MaterialHyperparams, MaterialTensors, build_tensors
from .objective import ObjectiveWeights
from .gradients import fd_check, total_gradient
from .mma import MMA
from .optimize import OptimizationHistory, OptimizationResult
from .solver import FlowState, simulate, solve_kkt
from .task import Patch, TaskSpec, load_task, task_from_dict

__version__ = "0.1.0"
