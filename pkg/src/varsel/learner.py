"""Per-step adaptation of a model to observations.

Each call to ``process_environment_step`` assigns the observed BSV states, deduces DSV
events, computes every CSV state level by level (refining sources on the way), explains
unexplained activity with at most one new CSV, and finally prunes empty and duplicate
CSVs. Every structural change is logged in the returned ``StepRecord``.
"""

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Mapping, Optional

from .config import LearnerSettings
from .errors import ContractViolationError, UnknownStateVariableError
from .significance import NceStats, apply_significance_policy
from .sv_core import (
    OBSERVED,
    Csv,
    CsvShape,
    Model,
    ModelSnapshot,
    SvState,
    Unconditionality,
    add_computation_levels,
    deduce_dsv_states,
    raise_flag,
    sources_satisfied,
)
from .trace import varsel_trace

logger = logging.getLogger(__name__)


class EventKind(Enum):
    CSV_CREATED = "csv_created"
    POS_REFINED = "pos_refined"
    NEG_REFINED = "neg_refined"
    NEG_FORMED = "neg_formed"
    DUPLICATED = "duplicated"
    FLAG_CHANGED = "flag_changed"
    CSV_REMOVED = "csv_removed"


class EligibilityMode(Enum):
    POSITIVE = "positive"
    NEGATIVE = "negative"


@dataclass(frozen=True)
class StructuralEvent:
    kind: EventKind
    sv_id: int
    detail: tuple = ()


@dataclass(frozen=True)
class Instance:
    step_index: int
    source_states: Mapping[int, SvState]
    target_states: Mapping[int, SvState]


@dataclass
class StepRecord:
    step_index: int
    states_before: dict[int, SvState]
    states_after: dict[int, SvState] = field(default_factory=dict)
    events: list[StructuralEvent] = field(default_factory=list)

    def touched(self, *kinds: EventKind) -> set[int]:
        return {e.sv_id for e in self.events if not kinds or e.kind in kinds}


@dataclass(frozen=True)
class EligibilityResult:
    sources: tuple[int, ...]
    targets: tuple[int, ...]


class StepContext:
    """State shared by the operations of one learning step."""

    def __init__(
        self,
        model: Model,
        source_states: Mapping[int, SvState],
        settings: LearnerSettings,
        record: StepRecord,
        learn: bool = True,
    ):
        self.model = model
        self.source_states = source_states
        self.settings = settings
        self.record = record
        self.learn = learn

    def log(self, kind: EventKind, sv_id: int, *detail) -> None:
        self.record.events.append(StructuralEvent(kind, sv_id, tuple(detail)))

    def target_states(self, csv: Csv) -> dict[int, SvState]:
        return {t: self.model.state_of(t) for t in sorted(csv.targets)}

    def raise_flag(self, sv, flag: Unconditionality) -> None:
        if raise_flag(sv, flag):
            self.log(EventKind.FLAG_CHANGED, sv.id, flag.value)


def _record_stats(csv: Csv, ctx: StepContext) -> None:
    ss = sources_satisfied(csv, ctx.source_states)
    for t, state in ctx.target_states(csv).items():
        csv.stats.setdefault(t, NceStats()).record(ss, state)


def _record_instance(csv: Csv, ctx: StepContext) -> None:
    if not ctx.settings.record_instances or csv.state not in OBSERVED:
        return
    if not sources_satisfied(csv, ctx.source_states):
        return
    csv.instances.append(
        Instance(
            ctx.record.step_index,
            {s: ctx.source_states[s] for s in sorted(csv.sources)},
            ctx.target_states(csv),
        )
    )


def _duplicate(csv: Csv, targets: Iterable[int], ctx: StepContext) -> Csv:
    """Copy csv with a restricted target set; the copy is conditioned like the original."""
    model = ctx.model
    targets = set(targets)
    copy = model.add_csv(csv.pos_sources, csv.neg_sources, targets, origin=csv.id)
    copy.unconditionality = csv.unconditionality
    copy.neg_connections_formed = csv.neg_connections_formed
    copy.blocked = csv.blocked
    copy.stats = {t: s.copy() for t, s in csv.stats.items() if t in targets}
    for inst in csv.instances:
        copy.instances.append(
            Instance(
                inst.step_index,
                inst.source_states,
                {t: v for t, v in inst.target_states.items() if t in targets},
            )
        )
    for c in csv.conditioners:
        upstream = model.csvs[c]
        model.retarget(upstream, upstream.targets | {copy.id})
    return copy


def separate_targets(csv: Csv, ctx: StepContext) -> list[Csv]:
    """Split csv when its targets are observed both Active and Inactive this step.

    Unobserved targets go into both copies and the original id is retired.
    """
    states = ctx.target_states(csv)
    active = {t for t, s in states.items() if s is SvState.ACTIVE}
    inactive = {t for t, s in states.items() if s is SvState.INACTIVE}
    if not (active and inactive):
        return [csv]
    unobserved = csv.targets - active - inactive
    first = _duplicate(csv, active | unobserved, ctx)
    second = _duplicate(csv, inactive | unobserved, ctx)
    ctx.model.remove_csv(csv.id)
    ctx.log(EventKind.DUPLICATED, csv.id, first.id, second.id)
    return [first, second]


def trivial_sources(model: Model, target: int) -> set[int]:
    """Sources over the downstream closure of ``target``, plus the BSVs of reached DSVs."""
    trivial: set[int] = set()
    seen: set[int] = set()
    frontier = [target]
    while frontier:
        sv_id = frontier.pop()
        if sv_id in seen:
            continue
        seen.add(sv_id)
        if sv_id in model.dsvs:
            trivial.add(model.dsvs[sv_id].parent)
        elif sv_id in model.csvs:
            csv = model.csvs[sv_id]
            trivial |= csv.sources
            frontier.extend(csv.targets)
    return trivial


def upstream_positive_sources(model: Model, csv: Csv) -> set[int]:
    """Positive sources of csv and, recursively, of all its conditioners."""
    collected: set[int] = set()
    seen: set[int] = set()
    frontier = [csv.id]
    while frontier:
        csv_id = frontier.pop()
        if csv_id in seen or csv_id not in model.csvs:
            continue
        seen.add(csv_id)
        collected |= model.csvs[csv_id].pos_sources
        frontier.extend(model.csvs[csv_id].conditioners)
    return collected


def source_eligibility(
    model: Model,
    candidate_sources: Iterable[int],
    prospective_targets: Iterable[int],
    mode: EligibilityMode,
    for_csv: Optional[Csv] = None,
) -> EligibilityResult:
    candidates = sorted(set(candidate_sources))
    targets = sorted(set(prospective_targets))
    trivial = {t: trivial_sources(model, t) for t in targets}

    if mode is EligibilityMode.POSITIVE:
        kept = [c for c in candidates if any(c not in trivial[t] for t in targets)]
        kept_targets = [t for t in targets if any(c not in trivial[t] for c in kept)]
        return EligibilityResult(tuple(kept), tuple(kept_targets))

    if for_csv is None:
        raise ContractViolationError("negative eligibility needs the CSV being extended")
    excluded = upstream_positive_sources(model, for_csv)
    for t in targets:
        excluded |= trivial[t]
    kept = [c for c in candidates if c not in excluded]
    return EligibilityResult(tuple(kept), tuple(targets))


def _active_sources(ctx: StepContext) -> list[int]:
    model = ctx.model
    return [
        sv_id
        for sv_id, state in sorted(ctx.source_states.items())
        if state is SvState.ACTIVE and (sv_id in model.bsvs or sv_id in model.dsvs)
    ]


def form_negative_connections(csv: Csv, ctx: StepContext) -> Csv:
    """Attach the current actives as suppressor candidates of an Inactive CSV."""
    if csv.neg_connections_formed:
        raise ContractViolationError(f"{csv.name} already formed negative connections")
    states = ctx.target_states(csv)
    unobserved = {t for t, s in states.items() if s is SvState.UNOBSERVED}
    if unobserved and len(unobserved) < len(states):
        protected = _duplicate(csv, unobserved, ctx)
        ctx.model.retarget(csv, csv.targets - unobserved)
        ctx.log(EventKind.DUPLICATED, csv.id, csv.id, protected.id)

    eligible = source_eligibility(
        ctx.model, _active_sources(ctx), csv.targets, EligibilityMode.NEGATIVE, for_csv=csv
    )
    csv.neg_connections_formed = True
    if eligible.sources:
        csv.neg_sources = set(eligible.sources)
        ctx.log(EventKind.NEG_FORMED, csv.id, *eligible.sources)
    else:
        ctx.raise_flag(csv, Unconditionality.CONDITIONAL)
    return csv


def _refine(csv: Csv, ctx: StepContext, pos_keep: set[int], neg_keep: set[int]) -> None:
    dropped_pos = csv.pos_sources - pos_keep
    dropped_neg = csv.neg_sources - neg_keep
    if dropped_pos:
        csv.pos_sources -= dropped_pos
        ctx.log(EventKind.POS_REFINED, csv.id, *sorted(dropped_pos))
    if dropped_neg:
        csv.neg_sources -= dropped_neg
        ctx.log(EventKind.NEG_REFINED, csv.id, *sorted(dropped_neg))


def _settle(csv: Csv, ctx: StepContext) -> SvState:
    src = ctx.source_states
    active = {s for s in csv.sources if src[s] is SvState.ACTIVE}
    targets = set(ctx.target_states(csv).values())
    all_pos = csv.pos_sources <= active
    neg_active = csv.neg_sources & active

    if SvState.ACTIVE in targets:
        csv.state = SvState.ACTIVE
        if ctx.learn:
            _refine(csv, ctx, csv.pos_sources & active, csv.neg_sources - active)
    elif SvState.INACTIVE in targets:
        if not all_pos:
            partial = ctx.settings.partial_sources_activate
            csv.state = SvState.ACTIVE if partial else SvState.UNOBSERVED
        elif neg_active:
            csv.state = SvState.UNOBSERVED
            if ctx.learn:
                _refine(csv, ctx, csv.pos_sources, neg_active)
        else:
            csv.state = SvState.INACTIVE
    else:
        csv.state = SvState.UNOBSERVED

    if not ctx.learn:
        return csv.state
    _record_stats(csv, ctx)
    _record_instance(csv, ctx)
    if csv.state is SvState.INACTIVE:
        if csv.neg_connections_formed:
            ctx.raise_flag(csv, Unconditionality.CONDITIONAL)
        else:
            form_negative_connections(csv, ctx)
    return csv.state


def compute_csv_state(csv: Csv, ctx: StepContext) -> SvState:
    """Compute csv's state for this step. In learning mode this also refines the CSV,
    splits heterogeneous targets and forms negative connections."""
    if not any(ctx.source_states[s] is SvState.ACTIVE for s in csv.pos_sources):
        csv.state = SvState.UNOBSERVED
        if ctx.learn:
            _record_stats(csv, ctx)
        return csv.state
    if not ctx.learn:
        return _settle(csv, ctx)
    states = [_settle(c, ctx) for c in separate_targets(csv, ctx)]
    return states[0]


def collect_unexplained(model: Model) -> list[int]:
    """Active DSVs, then CSVs by ascending level, with no Active conditioner and not
    Unconditional. Blocked CSVs are skipped."""
    unexplained = [
        d.id
        for d in sorted(model.dsvs.values(), key=lambda d: d.id)
        if d.state is SvState.ACTIVE
        and d.unconditionality is not Unconditionality.UNCONDITIONAL
        and not model.conditioner_active(d.id)
    ]
    leveled = [csv_id for level in model.computation_levels for csv_id in level]
    # CSVs split off this step are not layered yet
    fresh = sorted(set(model.csvs) - set(leveled))
    for csv_id in leveled + fresh:
        csv = model.csvs.get(csv_id)
        if (
            csv is not None
            and csv.state is SvState.ACTIVE
            and not csv.blocked
            and csv.unconditionality is not Unconditionality.UNCONDITIONAL
            and not model.conditioner_active(csv_id)
        ):
            unexplained.append(csv_id)
    return unexplained


def generate_explanatory_csv(
    model: Model,
    unexplained: Iterable[int],
    actives: Iterable[int],
    ctx: Optional[StepContext] = None,
) -> Optional[Csv]:
    unexplained = list(unexplained)
    if not unexplained:
        return None
    eligible = source_eligibility(model, actives, unexplained, EligibilityMode.POSITIVE)
    for t in unexplained:
        if t not in eligible.targets:
            sv = model.sv(t)
            if ctx is not None:
                ctx.raise_flag(sv, Unconditionality.POSSIBLY_CONDITIONAL)
            else:
                raise_flag(sv, Unconditionality.POSSIBLY_CONDITIONAL)
    if not eligible.sources or not eligible.targets:
        return None

    csv = model.add_csv(eligible.sources, (), eligible.targets)
    csv.state = SvState.ACTIVE
    if ctx is not None:
        ctx.log(EventKind.CSV_CREATED, csv.id, *eligible.targets)
        _record_stats(csv, ctx)
        _record_instance(csv, ctx)
    logger.debug("created %s explaining %s", csv.name, [model.name_of(t) for t in csv.targets])
    return csv


def model_refinement(model: Model, ctx: StepContext) -> list[int]:
    """Remove CSVs without positive sources or targets and merge identical CSVs."""
    removed: list[int] = []
    changed = True
    while changed:
        changed = False
        for csv_id in sorted(model.csvs):
            csv = model.csvs[csv_id]
            if not csv.pos_sources or not csv.targets:
                model.remove_csv(csv_id)
                ctx.log(EventKind.CSV_REMOVED, csv_id)
                removed.append(csv_id)
                changed = True

    kept: dict[CsvShape, Csv] = {}
    for csv_id in sorted(model.csvs):
        csv = model.csvs[csv_id]
        key = CsvShape(
            frozenset(csv.pos_sources), frozenset(csv.neg_sources), frozenset(csv.targets), False
        )
        older = kept.get(key)
        if older is None:
            kept[key] = csv
            continue
        for t, stats in csv.stats.items():
            older.stats.setdefault(t, NceStats()).merge(stats)
        for c in sorted(csv.conditioners):
            upstream = model.csvs[c]
            model.retarget(upstream, (upstream.targets - {csv_id}) | {older.id})
        if csv.state is SvState.ACTIVE:
            older.state = SvState.ACTIVE
        model.remove_csv(csv_id)
        ctx.log(EventKind.CSV_REMOVED, csv_id, "merged", older.id)
        removed.append(csv_id)
    return removed


def _validate_observations(
    model: Model, observations: Mapping[int, SvState]
) -> dict[int, SvState]:
    for bsv_id, state in observations.items():
        if bsv_id not in model.bsvs:
            raise UnknownStateVariableError(bsv_id, "observation for a non-BSV")
        if state not in OBSERVED:
            raise ContractViolationError(
                f"BSV {model.bsvs[bsv_id].name} observed as {state.name}"
            )
    missing = [b.name for b in model.bsvs.values() if not b.is_action and b.id not in observations]
    if missing:
        raise ContractViolationError(f"observations missing BSVs: {', '.join(missing)}")
    return {
        b.id: observations.get(b.id, SvState.INACTIVE) for b in model.bsvs.values()
    }


@varsel_trace(name="learner.process_environment_step")
def process_environment_step(
    model: Model,
    observations: Mapping[int, SvState],
    settings: Optional[LearnerSettings] = None,
    learn: bool = True,
) -> StepRecord:
    """Run one step of adaptation.

    ``observations`` maps BSV ids to Active/Inactive and must cover every non-action BSV;
    action BSVs default to Inactive. With ``learn=False`` states are computed but the
    structure, statistics and flags are left untouched.
    """
    settings = settings or LearnerSettings()
    observed = _validate_observations(model, observations)
    record = StepRecord(model.step_index, model.current_states())

    source_states = dict(model.source_snapshot)
    for bsv_id, bsv in model.bsvs.items():
        if bsv.is_action:
            source_states[bsv_id] = observed[bsv_id]
        bsv.prev_state, bsv.state = bsv.state, observed[bsv_id]
    deduce_dsv_states(model, {i: s for i, s in observed.items() if not model.bsvs[i].is_action})

    ctx = StepContext(model, source_states, settings, record, learn)
    for level in [list(lv) for lv in model.computation_levels]:
        for csv_id in level:
            csv = model.csvs.get(csv_id)
            if csv is not None:
                compute_csv_state(csv, ctx)

    if learn:
        generate_explanatory_csv(model, collect_unexplained(model), _active_sources(ctx), ctx)
        model_refinement(model, ctx)
        if settings.nce_cutoff is not None:
            apply_significance_policy(model, settings.nce_cutoff)
        add_computation_levels(model)

    snapshot = {i: b.state for i, b in model.bsvs.items()}
    snapshot.update((i, d.source_state) for i, d in model.dsvs.items())
    model.source_snapshot = snapshot
    record.states_after = model.current_states()
    model.step_index += 1
    return record


def observed_response(instance: Instance, targets: Iterable[int]) -> SvState:
    """What the targets did in ``instance``: Active if any was, else Inactive if any was."""
    states = {instance.target_states[t] for t in targets if t in instance.target_states}
    if SvState.ACTIVE in states:
        return SvState.ACTIVE
    if SvState.INACTIVE in states:
        return SvState.INACTIVE
    return SvState.UNOBSERVED


def replay_response(shape: CsvShape, instance: Instance, targets: Iterable[int]) -> SvState:
    if not sources_satisfied(shape, instance.source_states):
        return SvState.UNOBSERVED
    return observed_response(instance, targets)


def verify_response_preservation(
    before: ModelSnapshot, after: ModelSnapshot, instance: Instance, csv_id: int
) -> Optional[bool]:
    """Replay ``instance`` through both versions of a CSV.

    Returns None (skipped) when the CSV is gone, when a negative-connection formation
    separates the versions, or when the before-version's response disagreed with what the
    targets did. Otherwise whether both responses agree on the after-version's
    targets. CSVs split off during the step are compared with their ancestor.
    """
    shape_after = after.csvs.get(csv_id)
    shape_before = before.resolve(csv_id, after.lineage)
    if shape_after is None or shape_before is None:
        return None
    keys = instance.source_states.keys()
    if not (shape_after.sources <= keys and shape_before.sources <= keys):
        return None
    if shape_before.neg_connections_formed != shape_after.neg_connections_formed:
        return None
    targets = sorted(shape_after.targets)
    expected = replay_response(shape_before, instance, targets)
    if expected is not observed_response(instance, targets):
        return None
    return replay_response(shape_after, instance, targets) is expected


@dataclass
class PreservationReport:
    checked: int = 0
    preserved: int = 0
    skipped: int = 0
    violations: list[tuple[int, int]] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations


def check_step_preservation(
    model: Model, before: ModelSnapshot, report: Optional[PreservationReport] = None
) -> PreservationReport:
    """Replay every stored instance of every CSV whose shape changed since ``before``."""
    report = report or PreservationReport()
    after = model.snapshot()
    for csv_id, csv in sorted(model.csvs.items()):
        if before.csvs.get(csv_id) == after.csvs[csv_id]:
            continue
        for inst in list(csv.instances):
            if inst.step_index >= before.step_index:
                continue
            verdict = verify_response_preservation(before, after, inst, csv_id)
            if verdict is None:
                report.skipped += 1
                continue
            report.checked += 1
            if verdict:
                report.preserved += 1
            else:
                report.violations.append((csv_id, inst.step_index))
    return report
