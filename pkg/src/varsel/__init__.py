from .config import LearnerSettings, MnrSettings, PlannerSettings, RunConfig, load_run_config
from .errors import (
    ConditioningCycleError,
    ConfigurationError,
    ContractViolationError,
    DatasetFormatError,
    DatasetNotFoundError,
    TransitionTableError,
    UnknownStateVariableError,
    VarselError,
)
from .fsm_env import FsmEnvironment, run_continual_experiment, run_trial
from .learner import check_step_preservation, process_environment_step
from .mnr import MnrModel, learn_sample, predict, predicted_label
from .otel import configure_varsel
from .planner import Planner, generate_action_network
from .significance import apply_significance_policy, nce
from .spn import StatePolynetwork, generate_assignments, refine_by, statistical_refine
from .sv_core import Model, SvState, Unconditionality
from .trace import varsel_trace
from .vision import image_to_spn, load_mnist

__all__ = [
    "varsel_trace",
    "configure_varsel",
    "LearnerSettings",
    "MnrSettings",
    "PlannerSettings",
    "RunConfig",
    "load_run_config",
    "VarselError",
    "UnknownStateVariableError",
    "ContractViolationError",
    "ConditioningCycleError",
    "DatasetFormatError",
    "DatasetNotFoundError",
    "ConfigurationError",
    "TransitionTableError",
    "Model",
    "SvState",
    "Unconditionality",
    "process_environment_step",
    "check_step_preservation",
    "nce",
    "apply_significance_policy",
    "generate_action_network",
    "Planner",
    "FsmEnvironment",
    "run_trial",
    "run_continual_experiment",
    "StatePolynetwork",
    "refine_by",
    "statistical_refine",
    "generate_assignments",
    "MnrModel",
    "learn_sample",
    "predict",
    "predicted_label",
    "image_to_spn",
    "load_mnist",
]
