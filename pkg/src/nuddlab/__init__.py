"""Simulation of nested Uhrig dynamical decoupling on a two-qubit subspace."""

from .engine import FidelityTrace, LindbladBackend, RunPlan, SpinBathBackend, run_nudd
from .harness import ExperimentConfig, batch_random_states, load_config, run_paper_protocol, verify_suite
from .noise_models import LindbladConfig, SpinBathConfig, SystemParams
from .opalgebra import ControlId, build_control, build_y_basis
from .states import StateSpec, prepare_state
from .udd_timing import build_nudd_schedule

__version__ = "0.1.0"

__all__ = [
    "ControlId",
    "ExperimentConfig",
    "FidelityTrace",
    "LindbladBackend",
    "LindbladConfig",
    "RunPlan",
    "SpinBathBackend",
    "SpinBathConfig",
    "StateSpec",
    "SystemParams",
    "batch_random_states",
    "build_control",
    "build_nudd_schedule",
    "build_y_basis",
    "load_config",
    "prepare_state",
    "run_paper_protocol",
    "verify_suite",
]
