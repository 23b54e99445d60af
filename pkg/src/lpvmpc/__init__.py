"""LPV model predictive path tracking for a dynamic bicycle model."""

from .controller import ControlCommand, ControllerConfig, MpcController, run_pipeline
from .metrics import MetricsSummary, summarize
from .mpc_assembly import WeightSet, build_constraints, build_cost, build_prediction
from .qp_solver import QpSettings, QpSolution, QpSolver, solve
from .simulator import RunLog, SimConfig, run_closed_loop
from .trajectory import ReferenceTrajectory, generate, load_trajectory
from .tuner import DEFAULT_TABLE, TuningTable, analyze_path, select_weights
from .vehicle_model import (
    ControlInput, VehicleParams, VehicleState, discretize, lpv_matrices, nonlinear_derivative,
)

__version__ = "0.1.0"
