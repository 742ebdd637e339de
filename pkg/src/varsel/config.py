"""Settings for the learners and the run configuration loaded by the CLI."""

import json
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Optional

from .errors import ConfigurationError

DATA_DIR_ENV = "VARSEL_DATA_DIR"

MODES = ("fsm", "mnist")

# per N_C: (samples per class per cycle, test samples per class)
MNIST_SIZES = {3: (20, 50), 5: (10, 20), 10: (5, 10)}


@dataclass(frozen=True)
class LearnerSettings:
    instance_capacity: int = 256
    # inactive targets with only some positive sources active make the CSV Active
    partial_sources_activate: bool = False
    nce_cutoff: Optional[float] = None
    record_instances: bool = True


@dataclass(frozen=True)
class PlannerSettings:
    epsilon: float = 0.1
    depth_cap: int = 12
    reuse_network: bool = False


@dataclass(frozen=True)
class MnrSettings:
    t_ref: float = 0.05
    t_sign: float = 0.05
    population: int = 10
    max_depth: int = 4
    capture_pre_refinement: bool = True
    softmax_temperature: float = 1.0
    filter_enabled: bool = True


@dataclass(frozen=True)
class Phase:
    subtype: str
    steps: int
    learning: bool = True


VANILLA_SCHEDULE = (
    Phase("RS", 1000, True),
    Phase("SGS", 1000, True),
    Phase("NEG", 1000, True),
    Phase("RS", 1000, False),
    Phase("SGS", 1000, False),
)

READAPTATION_SCHEDULE = tuple(
    Phase(subtype, 500, True) for subtype in ("RS", "SGS", "NEG", "RS", "SGS", "NEG")
)


@dataclass
class RunConfig:
    """Everything needed to reproduce one experiment invocation."""

    mode: str = "fsm"
    seed: int = 0
    trial_count: int = 5
    out: str = "runs/latest"
    workers: int = 1
    # fsm
    schedule: list[Phase] = field(default_factory=lambda: list(VANILLA_SCHEDULE))
    random_variant: bool = False
    readaptation: bool = False
    nce_filter: Optional[bool] = None
    episode_cap: int = 2000
    # mnist
    n_classes: int = 3
    n_sample: Optional[int] = None
    test_per_class: Optional[int] = None
    cycles: int = 10
    data_dir: Optional[str] = None
    # thresholds
    t_ref: float = 0.05
    t_sign: float = 0.05
    nce_cutoff: float = 0.25
    epsilon: float = 0.1
    population: int = 10
    max_depth: int = 4
    export_dot: Optional[str] = None

    def __post_init__(self):
        self.schedule = [p if isinstance(p, Phase) else Phase(**p) for p in self.schedule]
        sizes = MNIST_SIZES.get(self.n_classes, (5, 10))
        if self.n_sample is None:
            self.n_sample = sizes[0]
        if self.test_per_class is None:
            self.test_per_class = sizes[1]

    @property
    def filter_enabled(self) -> bool:
        return self.random_variant if self.nce_filter is None else self.nce_filter

    def learner_settings(self) -> LearnerSettings:
        return LearnerSettings(nce_cutoff=self.nce_cutoff if self.filter_enabled else None)

    def planner_settings(self) -> PlannerSettings:
        return PlannerSettings(epsilon=self.epsilon)

    def mnr_settings(self) -> MnrSettings:
        return MnrSettings(
            t_ref=self.t_ref,
            t_sign=self.t_sign,
            population=self.population,
            max_depth=self.max_depth,
        )

    def resolved_data_dir(self) -> Path:
        return Path(self.data_dir or os.getenv(DATA_DIR_ENV, "data/mnist"))

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


def validate_run_config(config: RunConfig) -> RunConfig:
    """Check documented ranges and raise ConfigurationError on the first violation."""
    if config.mode not in MODES:
        raise ConfigurationError(f"mode must be one of {MODES}, got {config.mode!r}")
    if config.trial_count < 1:
        raise ConfigurationError("trial_count must be at least 1")
    if config.workers < 1:
        raise ConfigurationError("workers must be at least 1")
    for name in ("t_ref", "t_sign"):
        value = getattr(config, name)
        if not 0.0 < value < 1.0:
            raise ConfigurationError(f"{name} must lie in (0, 1), got {value}")
    if config.nce_cutoff <= 0.0:
        raise ConfigurationError("nce_cutoff must be positive")
    if not 0.0 <= config.epsilon <= 1.0:
        raise ConfigurationError("epsilon must lie in [0, 1]")
    if config.population < 1:
        raise ConfigurationError("population must be at least 1")
    if config.mode == "fsm":
        if not config.schedule:
            raise ConfigurationError("schedule must contain at least one phase")
        for phase in config.schedule:
            if phase.steps <= 0:
                raise ConfigurationError(f"phase {phase.subtype} has non-positive duration")
            if phase.subtype not in ("RS", "SGS", "NEG", "Complete"):
                raise ConfigurationError(f"unknown subtype {phase.subtype!r}")
        if config.episode_cap < 1:
            raise ConfigurationError("episode_cap must be at least 1")
    else:
        if not 1 <= config.n_classes <= 10:
            raise ConfigurationError("n_classes must lie in [1, 10]")
        if config.n_sample < 1 or config.test_per_class < 1 or config.cycles < 1:
            raise ConfigurationError("n_sample, test_per_class and cycles must be positive")
    return config


def load_run_config(path: Optional[str] = None, **overrides: Any) -> RunConfig:
    """Load a JSON config file and apply non-None overrides on top of it."""
    data: dict[str, Any] = {}
    if path is not None:
        try:
            data = json.loads(Path(path).read_text())
        except FileNotFoundError as e:
            raise ConfigurationError(f"config file not found: {path}") from e
        except json.JSONDecodeError as e:
            raise ConfigurationError(f"config file {path} is not valid JSON: {e}") from e
        if not isinstance(data, dict):
            raise ConfigurationError(f"config file {path} must hold a JSON object")

    known = {f.name for f in fields(RunConfig)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigurationError(f"unknown config fields: {', '.join(unknown)}")

    merged = dict(data)
    merged.update((k, v) for k, v in overrides.items() if v is not None)
    if merged.get("readaptation") and "schedule" not in merged:
        merged["schedule"] = [asdict(p) for p in READAPTATION_SCHEDULE]
    unknown = sorted(set(merged) - known)
    if unknown:
        raise ConfigurationError(f"unknown settings: {', '.join(unknown)}")
    try:
        config = RunConfig(**merged)
    except TypeError as e:
        raise ConfigurationError(f"invalid configuration: {e}") from e
    return validate_run_config(config)
