"""Two-cell finite-state-machine environment and the continual-learning runner."""

import logging
import math
from dataclasses import dataclass, field
from importlib import resources
from typing import Iterable, Optional

import numpy as np

from .config import LearnerSettings, Phase, PlannerSettings
from .errors import ContractViolationError, TransitionTableError
from .learner import process_environment_step
from .planner import Planner
from .sv_core import Model, SvState
from .trace import varsel_trace

logger = logging.getLogger(__name__)

SYMBOLS = ("-", "DC", "DO", "W", "SG1", "SG2", "G", "X")
SUBTYPES = ("RS", "SGS", "NEG", "Complete")
N_ACTIONS = 20
RANDOM_BSVS = ("RX1", "RX2")
EMPTY = ("-", "-")

Cells = tuple[str, str]
TransitionTable = dict[str, dict[tuple[Cells, int], list[Cells]]]


@dataclass
class FsmTables:
    version: str
    rules: TransitionTable

    def outcomes(self, subtype: str, cells: Cells, action: int) -> list[Cells]:
        return self.rules[subtype].get((cells, action), [])


def parse_tables(text: str) -> FsmTables:
    version = "unversioned"
    rules: TransitionTable = {s: {} for s in SUBTYPES}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if line.startswith("#"):
            if line[1:].strip().startswith("version:"):
                version = line.split(":", 1)[1].strip()
            continue
        if not line:
            continue
        parts = line.split()
        if len(parts) != 6:
            raise TransitionTableError(f"line {lineno}: expected 6 columns, got {len(parts)}")
        subtype, pre1, pre2, action, post1, post2 = parts
        if subtype not in SUBTYPES or subtype == "Complete":
            raise TransitionTableError(f"line {lineno}: unknown subtype {subtype!r}")
        for symbol in (pre1, pre2, post1, post2):
            if symbol not in SYMBOLS:
                raise TransitionTableError(f"line {lineno}: unknown symbol {symbol!r}")
        try:
            index = int(action)
        except ValueError:
            raise TransitionTableError(
                f"line {lineno}: action {action!r} is not an integer"
            ) from None
        if not 0 <= index < N_ACTIONS:
            raise TransitionTableError(f"line {lineno}: action {index} out of range")
        for target in (subtype, "Complete"):
            rules[target].setdefault(((pre1, pre2), index), []).append((post1, post2))
    return FsmTables(version, rules)


def load_tables() -> FsmTables:
    text = resources.files("varsel").joinpath("data/fsm_tables.txt").read_text()
    return parse_tables(text)


def cell_bsv_names() -> list[str]:
    return [f"{cell}{symbol}" for cell in (1, 2) for symbol in SYMBOLS]


def action_bsv_names() -> list[str]:
    return [f"a{i}" for i in range(N_ACTIONS)]


@dataclass
class EnvState:
    cell1: str = "-"
    cell2: str = "-"
    subtype: str = "RS"
    random_variant: bool = False
    random_bits: tuple[bool, bool] = (False, False)
    prev_action: Optional[int] = None
    step_count: int = 0
    episode_count: int = 0
    episode_steps: int = 0

    @property
    def cells(self) -> Cells:
        return (self.cell1, self.cell2)

    @property
    def done(self) -> bool:
        return self.cell1 == "G"


class FsmEnvironment:
    def __init__(
        self,
        subtype: str = "RS",
        random_variant: bool = False,
        seed: Optional[int] = None,
        tables: Optional[FsmTables] = None,
    ):
        if subtype not in SUBTYPES:
            raise ContractViolationError(f"unknown subtype {subtype!r}")
        self.tables = tables or load_tables()
        self.rng = np.random.default_rng(seed)
        self.state = EnvState(subtype=subtype, random_variant=random_variant)

    def bsv_names(self) -> list[str]:
        names = cell_bsv_names()
        if self.state.random_variant:
            names += list(RANDOM_BSVS)
        return names

    def set_subtype(self, subtype: str) -> None:
        if subtype not in SUBTYPES:
            raise ContractViolationError(f"unknown subtype {subtype!r}")
        self.state.subtype = subtype

    def reset(self) -> EnvState:
        s = self.state
        s.cell1, s.cell2 = EMPTY
        s.prev_action = None
        s.episode_steps = 0
        s.episode_count += 1
        return s

    def observe(self) -> dict[str, SvState]:
        s = self.state
        obs = {}
        for cell, content in ((1, s.cell1), (2, s.cell2)):
            for symbol in SYMBOLS:
                obs[f"{cell}{symbol}"] = SvState.ACTIVE if content == symbol else SvState.INACTIVE
        if s.random_variant:
            for name, bit in zip(RANDOM_BSVS, s.random_bits):
                obs[name] = SvState.ACTIVE if bit else SvState.INACTIVE
        for i, name in enumerate(action_bsv_names()):
            obs[name] = SvState.ACTIVE if i == s.prev_action else SvState.INACTIVE
        return obs

    def step(self, action: int) -> EnvState:
        if not 0 <= action < N_ACTIONS:
            raise ContractViolationError(f"action {action} outside [0, {N_ACTIONS})")
        s = self.state
        outcomes = self.tables.outcomes(s.subtype, s.cells, action)
        if outcomes:
            s.cell1, s.cell2 = outcomes[int(self.rng.integers(len(outcomes)))]
        if s.random_variant:
            s.random_bits = tuple(bool(b) for b in self.rng.random(len(RANDOM_BSVS)) < 0.5)
        s.prev_action = action
        s.step_count += 1
        s.episode_steps += 1
        return s


def reachable_configurations(tables: FsmTables, subtype: str) -> set[Cells]:
    seen = {EMPTY}
    frontier = [EMPTY]
    while frontier:
        cells = frontier.pop()
        for action in range(N_ACTIONS):
            for nxt in tables.outcomes(subtype, cells, action):
                if nxt not in seen:
                    seen.add(nxt)
                    frontier.append(nxt)
    return seen


def goal_reachable_everywhere(tables: FsmTables, subtype: str) -> bool:
    """Whether cell1=G can be reached from every reachable non-terminal configuration."""
    states = reachable_configurations(tables, subtype)
    good = {c for c in states if c[0] == "G"}
    changed = True
    while changed:
        changed = False
        for cells in states - good:
            if cells[0] == "G":
                continue
            if any(
                nxt in good
                for action in range(N_ACTIONS)
                for nxt in tables.outcomes(subtype, cells, action)
            ):
                good.add(cells)
                changed = True
    return good == states


def build_fsm_model(env: FsmEnvironment, settings: Optional[LearnerSettings] = None) -> Model:
    settings = settings or LearnerSettings()
    model = Model(instance_capacity=settings.instance_capacity)
    for name in env.bsv_names():
        model.add_bsv(name)
    for name in action_bsv_names():
        model.add_bsv(name, is_action=True)
    return model


def to_observations(model: Model, observed: dict[str, SvState]) -> dict[int, SvState]:
    return {model.id_of(name): state for name, state in observed.items()}


def action_indices(model: Model) -> dict[int, int]:
    """Map action BSV ids to the environment's action numbers."""
    return {model.id_of(name): i for i, name in enumerate(action_bsv_names())}


@dataclass(frozen=True)
class EpisodeRecord:
    phase: int
    subtype: str
    learning: bool
    episode: int
    duration: int
    reached_goal: bool


@dataclass
class TrialResult:
    trial: int
    agent: str
    episodes: list[EpisodeRecord] = field(default_factory=list)
    csv_counts: list[int] = field(default_factory=list)
    steps: int = 0
    model: Optional[Model] = field(default=None, repr=False)

    def phase_durations(self, phase: int) -> list[int]:
        return [e.duration for e in self.episodes if e.phase == phase]

    def phase_mean(self, phase: int) -> float:
        durations = self.phase_durations(phase)
        return float(np.mean(durations)) if durations else math.nan


@dataclass(frozen=True)
class PhaseSummary:
    phase: int
    subtype: str
    learning: bool
    mean: float
    stderr: float
    trials: int


def _prime(model: Model, env: FsmEnvironment, settings: LearnerSettings) -> None:
    process_environment_step(model, to_observations(model, env.observe()), settings, learn=False)
    model.clear_events()


@varsel_trace(name="fsm.run_trial")
def run_trial(
    schedule: Iterable[Phase],
    trial: int = 0,
    seed: int = 0,
    agent: str = "planner",
    random_variant: bool = False,
    learner_settings: Optional[LearnerSettings] = None,
    planner_settings: Optional[PlannerSettings] = None,
    episode_cap: int = 2000,
) -> TrialResult:
    """Run one agent through the phase schedule.

    ``agent`` is ``"planner"`` (learn, plan, act) or ``"random"``. Phase switches wait for
    the ongoing episode to end.
    """
    if agent not in ("planner", "random"):
        raise ContractViolationError(f"unknown agent {agent!r}")
    schedule = list(schedule)
    learner_settings = learner_settings or LearnerSettings()
    planner_settings = planner_settings or PlannerSettings()
    rng = np.random.default_rng(seed)
    env = FsmEnvironment(schedule[0].subtype, random_variant, seed=seed)
    result = TrialResult(trial, agent)

    model = planner = None
    action_index: dict[int, int] = {}
    if agent == "planner":
        model = result.model = build_fsm_model(env, learner_settings)
        planner = Planner(model, (model.id_of("1G"), "1"), planner_settings, rng)
        action_index = action_indices(model)

    env.reset()
    if model is not None:
        _prime(model, env, learner_settings)

    episode = 0
    for index, phase in enumerate(schedule):
        env.set_subtype(phase.subtype)
        logger.info(
            "trial %d (%s): phase %d %s learning=%s",
            trial,
            agent,
            index,
            phase.subtype,
            phase.learning,
        )
        phase_steps = 0
        while phase_steps < phase.steps or env.state.episode_steps > 0:
            action = action_index[planner.act()] if planner else int(rng.integers(N_ACTIONS))
            env.step(action)
            phase_steps += 1
            result.steps += 1
            if model is not None:
                record = process_environment_step(
                    model,
                    to_observations(model, env.observe()),
                    learner_settings,
                    learn=phase.learning,
                )
                if record.events:
                    planner.invalidate()
                result.csv_counts.append(len(model.csvs))
            if env.state.done or env.state.episode_steps >= episode_cap:
                result.episodes.append(
                    EpisodeRecord(
                        index,
                        phase.subtype,
                        phase.learning,
                        episode,
                        env.state.episode_steps,
                        env.state.done,
                    )
                )
                episode += 1
                env.reset()
                if model is not None:
                    _prime(model, env, learner_settings)
    return result


def summarize(results: list[TrialResult], schedule: list[Phase]) -> list[PhaseSummary]:
    """Mean and standard error across trials of each trial's per-phase mean duration."""
    summaries = []
    for index, phase in enumerate(schedule):
        means = np.array([r.phase_mean(index) for r in results], dtype=float)
        means = means[~np.isnan(means)]
        mean = float(means.mean()) if means.size else math.nan
        stderr = float(means.std(ddof=1) / np.sqrt(means.size)) if means.size > 1 else 0.0
        summaries.append(
            PhaseSummary(index, phase.subtype, phase.learning, mean, stderr, int(means.size))
        )
    return summaries


@dataclass
class ExperimentResult:
    trials: list[TrialResult]
    baseline: list[TrialResult]
    summary: list[PhaseSummary]
    baseline_summary: list[PhaseSummary]


def run_continual_experiment(
    schedule: Iterable[Phase],
    seeds: Iterable[int],
    random_variant: bool = False,
    learner_settings: Optional[LearnerSettings] = None,
    planner_settings: Optional[PlannerSettings] = None,
    episode_cap: int = 2000,
) -> ExperimentResult:
    """Run the planner agent and a random baseline with identical seeds per trial."""
    schedule = list(schedule)
    if not schedule or any(p.steps <= 0 for p in schedule):
        raise ContractViolationError("schedule needs phases with positive durations")
    trials, baseline = [], []
    for trial, seed in enumerate(seeds):
        for agent, sink in (("planner", trials), ("random", baseline)):
            sink.append(
                run_trial(
                    schedule,
                    trial,
                    seed,
                    agent,
                    random_variant,
                    learner_settings,
                    planner_settings,
                    episode_cap,
                )
            )
    return ExperimentResult(
        trials, baseline, summarize(trials, schedule), summarize(baseline, schedule)
    )
