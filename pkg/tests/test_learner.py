import pytest

from varsel.config import LearnerSettings
from varsel.errors import ContractViolationError, UnknownStateVariableError
from varsel.learner import (
    EligibilityMode,
    EventKind,
    Instance,
    StepContext,
    StepRecord,
    check_step_preservation,
    collect_unexplained,
    compute_csv_state,
    form_negative_connections,
    generate_explanatory_csv,
    process_environment_step,
    separate_targets,
    source_eligibility,
    trivial_sources,
    verify_response_preservation,
)
from varsel.sv_core import SvState, Unconditionality

A, I, U = SvState.ACTIVE, SvState.INACTIVE, SvState.UNOBSERVED

# Active BSVs per step of a small conditioning scenario: X0 causes Y and X2 suppresses it.
SCENARIO = [
    ("X0", "X1"),
    ("X0", "X1", "Y"),
    ("X0",),
    ("X0", "Y"),
    ("X0", "X2", "X3"),
    ("X0", "X2", "X3"),
    ("X0", "X2"),
    ("X0", "X2"),
]


def run(model, observe, steps, **kwargs):
    return [process_environment_step(model, observe(model, *s), **kwargs) for s in steps]


def names(model, ids):
    return {model.name_of(i) for i in ids}


def csvs_for(model, target_name):
    target = model.id_of(target_name)
    return [c for c in model.csvs.values() if target in c.targets]


class TestScenario:
    """Test the learner step by step on the conditioning scenario."""

    def test_first_step_flags_unexplained_events(self, xy_model, observe):
        """Test that events without any active source are flagged, not explained."""
        run(xy_model, observe, SCENARIO[:1])
        assert xy_model.csvs == {}
        for name in ("X0_A", "X1_A"):
            dsv = xy_model.sv(xy_model.id_of(name))
            assert dsv.unconditionality is Unconditionality.POSSIBLY_CONDITIONAL

    def test_explanatory_csv_created(self, xy_model, observe):
        """Test that Y's activation is explained by everything active one step earlier."""
        records = run(xy_model, observe, SCENARIO[:2])
        (csv,) = csvs_for(xy_model, "Y_A")
        assert names(xy_model, csv.pos_sources) == {"X0", "X1", "X0_A", "X1_A"}
        assert csv.neg_sources == set()
        assert csv.state is A
        assert csv.id in records[-1].touched(EventKind.CSV_CREATED)

    def test_positive_refinement(self, xy_model, observe):
        """Test that a recurring activation keeps only the sources active both times."""
        records = run(xy_model, observe, SCENARIO[:4])
        (csv,) = csvs_for(xy_model, "Y_A")
        assert names(xy_model, csv.pos_sources) == {"X0"}
        assert csv.id in records[-1].touched(EventKind.POS_REFINED)

    def test_negative_formation(self, xy_model, observe):
        """Test that a satisfied CSV with an inactive target gains suppressor candidates."""
        records = run(xy_model, observe, SCENARIO[:6])
        (csv,) = csvs_for(xy_model, "Y_A")
        assert csv.neg_connections_formed
        assert names(xy_model, csv.neg_sources) == {"X2", "X3", "X2_A", "X3_A", "Y_D"}
        assert csv.id in records[-1].touched(EventKind.NEG_FORMED)

    def test_final_model(self, xy_model, observe):
        """Test that the scenario ends with Y_A explained by X0 and suppressed by X2."""
        run(xy_model, observe, SCENARIO)
        (csv,) = csvs_for(xy_model, "Y_A")
        assert names(xy_model, csv.pos_sources) == {"X0"}
        assert names(xy_model, csv.neg_sources) == {"X2"}
        assert xy_model.step_index == len(SCENARIO)

    def test_levels_cover_all_csvs(self, xy_model, observe):
        """Test that every CSV is placed on a computation level after each step."""
        for step in SCENARIO:
            process_environment_step(xy_model, observe(xy_model, *step))
            leveled = {c for level in xy_model.computation_levels for c in level}
            assert leveled == set(xy_model.csvs)


class TestQuiescentStep:
    """Test steps without any BSV change."""

    def test_source_states_carry_over(self, xy_model, observe):
        """Test that an event stays visible to sources until the next change."""
        run(xy_model, observe, [("X0",), ("X0",)])
        x0_a = xy_model.id_of("X0_A")
        assert xy_model.state_of(x0_a) is U
        assert xy_model.source_snapshot[x0_a] is A

    def test_nothing_created_when_idle(self, xy_model, observe):
        """Test that an all-inactive run creates no structure."""
        records = run(xy_model, observe, [(), (), ()])
        assert xy_model.csvs == {}
        assert all(not r.events for r in records)


class TestSeparation:
    """Test target separation."""

    def test_mixed_targets_split(self, xy_model, observe):
        """Test that a CSV whose targets disagree is split into two copies."""
        steps = [("X0",), ("X0", "X1", "Y"), ("X0",)]
        run(xy_model, observe, steps)
        (joint,) = [c for c in csvs_for(xy_model, "Y_A") if len(c.targets) > 1]
        assert names(xy_model, joint.targets) == {"X1_A", "Y_A"}

        record = process_environment_step(xy_model, observe(xy_model, "X0", "Y"))
        assert joint.id not in xy_model.csvs
        assert joint.id in record.touched(EventKind.DUPLICATED)
        children = [c for c in xy_model.csvs.values() if xy_model.lineage.get(c.id) == joint.id]
        assert {frozenset(names(xy_model, c.targets)) for c in children} == {
            frozenset({"X1_A"}),
            frozenset({"Y_A"}),
        }


class TestEligibility:
    """Test source eligibility."""

    def test_trivial_sources_of_dsv(self, xy_model):
        """Test that a DSV's own BSV is a trivial source."""
        assert trivial_sources(xy_model, xy_model.id_of("Y_A")) == {xy_model.id_of("Y")}

    def test_trivial_sources_follow_csv_targets(self, xy_model):
        """Test that trivial sources of a CSV include its sources and downstream ones."""
        x0, x1, y_a = (xy_model.id_of(n) for n in ("X0", "X1", "Y_A"))
        lower = xy_model.add_csv([x0], [x1], [y_a])
        assert trivial_sources(xy_model, lower.id) == {x0, x1, xy_model.id_of("Y")}

    def test_positive_drops_trivial_candidates(self, xy_model):
        """Test that a target with only trivial candidates is dropped."""
        y, x0 = xy_model.id_of("Y"), xy_model.id_of("X0")
        y_a, x0_a = xy_model.id_of("Y_A"), xy_model.id_of("X0_A")
        result = source_eligibility(xy_model, [y], [y_a, x0_a], EligibilityMode.POSITIVE)
        assert result.sources == (y,)
        assert result.targets == (x0_a,)

        result = source_eligibility(xy_model, [x0], [x0_a], EligibilityMode.POSITIVE)
        assert result.sources == ()
        assert result.targets == ()

    def test_negative_excludes_upstream_positives(self, xy_model):
        """Test that negative candidates exclude positives of the CSV and its conditioners."""
        x0, x1, x2, y_a = (xy_model.id_of(n) for n in ("X0", "X1", "X2", "Y_A"))
        lower = xy_model.add_csv([x0], [], [y_a])
        xy_model.add_csv([x1], [], [lower.id])
        result = source_eligibility(
            xy_model, [x0, x1, x2], [y_a], EligibilityMode.NEGATIVE, for_csv=lower
        )
        assert result.sources == (x2,)

    def test_negative_needs_csv(self, xy_model):
        """Test that negative eligibility without a CSV is a contract violation."""
        with pytest.raises(ContractViolationError):
            source_eligibility(xy_model, [], [], EligibilityMode.NEGATIVE)


class TestCollectUnexplained:
    """Test the unexplained set."""

    def test_blocked_and_unconditional_skipped(self, xy_model):
        """Test that blocked CSVs and Unconditional DSVs are never unexplained."""
        x0, y_a, x1_a = (xy_model.id_of(n) for n in ("X0", "Y_A", "X1_A"))
        xy_model.sv(y_a).state = A
        xy_model.sv(x1_a).state = A
        xy_model.sv(x1_a).unconditionality = Unconditionality.UNCONDITIONAL
        csv = xy_model.add_csv([x0], [], [y_a])
        csv.state = A
        csv.unconditionality = Unconditionality.CONDITIONAL
        assert collect_unexplained(xy_model) == [csv.id]

        csv.blocked = True
        assert collect_unexplained(xy_model) == []


class TestLearnFlag:
    """Test inference-only steps."""

    def test_learn_false_leaves_structure(self, xy_model, observe):
        """Test that learn=False computes states without changing structure or counts."""
        run(xy_model, observe, SCENARIO[:4])
        before = xy_model.snapshot()
        stats = {c.id: {t: s.copy() for t, s in c.stats.items()} for c in xy_model.csvs.values()}

        record = process_environment_step(xy_model, observe(xy_model, "X0", "X2"), learn=False)
        assert record.events == []
        assert xy_model.snapshot().csvs == before.csvs
        for csv in xy_model.csvs.values():
            assert csv.stats == stats[csv.id]

    def test_learn_false_still_predicts(self, xy_model, observe):
        """Test that CSV states are still computed in inference mode."""
        run(xy_model, observe, SCENARIO[:4])
        (csv,) = csvs_for(xy_model, "Y_A")
        process_environment_step(xy_model, observe(xy_model, "X0"), learn=False)
        process_environment_step(xy_model, observe(xy_model, "X0", "Y"), learn=False)
        assert csv.state is A


class TestObservationValidation:
    """Test observation contracts."""

    def test_missing_bsv(self, xy_model, observe):
        """Test that every non-action BSV must be observed."""
        obs = observe(xy_model, "X0")
        del obs[xy_model.id_of("Y")]
        with pytest.raises(ContractViolationError, match="missing BSVs: Y"):
            process_environment_step(xy_model, obs)

    def test_non_bsv_id(self, xy_model, observe):
        """Test that an observation for a DSV is rejected."""
        obs = observe(xy_model)
        obs[xy_model.id_of("Y_A")] = A
        with pytest.raises(UnknownStateVariableError):
            process_environment_step(xy_model, obs)

    def test_unobserved_value(self, xy_model, observe):
        """Test that a BSV cannot be observed as Unobserved."""
        obs = observe(xy_model)
        obs[xy_model.id_of("X0")] = U
        with pytest.raises(ContractViolationError, match="observed as UNOBSERVED"):
            process_environment_step(xy_model, obs)

    def test_action_bsvs_default_inactive(self, xy_model, observe):
        """Test that action BSVs may be left out of the observations."""
        act = xy_model.add_bsv("a0", is_action=True)
        obs = observe(xy_model)
        del obs[act.id]
        process_environment_step(xy_model, obs)
        assert xy_model.state_of(act.id) is I


class TestPreservation:
    """Test response preservation of stored instances across structural edits."""

    def test_scenario_preserves_responses(self, xy_model, observe):
        """Test that every step's edits keep earlier instances' responses."""
        for step in SCENARIO:
            before = xy_model.snapshot()
            process_environment_step(xy_model, observe(xy_model, *step))
            report = check_step_preservation(xy_model, before)
            assert report.ok, report.violations


class TestStepContext:
    """Test StepContext helpers."""

    def test_raise_flag_logs_once(self, xy_model):
        """Test that a flag change is logged only when the flag moves."""
        x0, y_a = xy_model.id_of("X0"), xy_model.id_of("Y_A")
        csv = xy_model.add_csv([x0], [], [y_a])
        record = StepRecord(0, {})
        ctx = StepContext(xy_model, {}, LearnerSettings(), record)
        ctx.raise_flag(csv, Unconditionality.CONDITIONAL)
        ctx.raise_flag(csv, Unconditionality.CONDITIONAL)
        assert record.touched(EventKind.FLAG_CHANGED) == {csv.id}
        assert len(record.events) == 1


@pytest.fixture
def layered(xy_model):
    """Three CSVs over Y_A in states Active, Inactive and Unobserved."""
    y_a = xy_model.id_of("Y_A")
    lower = {}
    for name, state in (("X1", A), ("X2", I), ("X3", U)):
        csv = xy_model.add_csv([xy_model.id_of(name)], [], [y_a])
        csv.state = state
        lower[state] = csv
    return lower


def context(model, states, learn=True):
    ids = {model.id_of(n): s for n, s in states.items()}
    return StepContext(model, ids, LearnerSettings(), StepRecord(0, {}), learn)


class TestStepOperations:
    """Test the per-step operations in isolation."""

    def test_separate_targets_mixed(self, xy_model, layered):
        """Test that Unobserved targets go to both copies and the original is retired."""
        x0 = xy_model.id_of("X0")
        upper = xy_model.add_csv([x0], [], [c.id for c in layered.values()])
        ctx = context(xy_model, {"X0": A})
        first, second = separate_targets(upper, ctx)
        assert first.targets == {layered[A].id, layered[U].id}
        assert second.targets == {layered[I].id, layered[U].id}
        assert upper.id not in xy_model.csvs
        assert xy_model.lineage[first.id] == xy_model.lineage[second.id] == upper.id
        assert layered[U].conditioners == {first.id, second.id}
        assert ctx.record.touched(EventKind.DUPLICATED) == {upper.id}

    def test_separate_targets_agreeing(self, xy_model, layered):
        """Test that a CSV without both Active and Inactive targets is left alone."""
        upper = xy_model.add_csv([xy_model.id_of("X0")], [], [layered[A].id, layered[U].id])
        assert separate_targets(upper, context(xy_model, {"X0": A})) == [upper]
        assert upper.id in xy_model.csvs

    def test_form_negative_connections(self, xy_model, layered):
        """Test that only non-trivial actives become suppressors, and only once."""
        x0, x1 = xy_model.id_of("X0"), xy_model.id_of("X1")
        upper = xy_model.add_csv([x0], [], [layered[I].id])
        ctx = context(xy_model, {"X0": A, "X1": A, "X2": A, "Y": I})
        form_negative_connections(upper, ctx)
        assert upper.neg_sources == {x1}
        assert upper.neg_connections_formed
        assert ctx.record.touched(EventKind.NEG_FORMED) == {upper.id}
        with pytest.raises(ContractViolationError, match="already formed"):
            form_negative_connections(upper, ctx)

    def test_form_negative_connections_without_candidates(self, xy_model, layered):
        """Test that a CSV with no eligible suppressor is flagged conditional."""
        upper = xy_model.add_csv([xy_model.id_of("X0")], [], [layered[I].id])
        form_negative_connections(upper, context(xy_model, {"X0": A}))
        assert upper.neg_sources == set()
        assert upper.unconditionality is Unconditionality.CONDITIONAL

    def test_compute_state_without_active_positives(self, xy_model):
        """Test that a CSV with no Active positive source is Unobserved."""
        csv = xy_model.add_csv([xy_model.id_of("X0")], [], [xy_model.id_of("Y_A")])
        assert compute_csv_state(csv, context(xy_model, {"X0": I}, learn=False)) is U
        assert csv.stats == {}

    def test_no_explanation_for_nothing(self, xy_model):
        """Test that an empty unexplained list creates no CSV."""
        assert generate_explanatory_csv(xy_model, [], [xy_model.id_of("X0")]) is None
        assert xy_model.csvs == {}

    def test_response_preserved_without_edits(self, xy_model):
        """Test that an unchanged CSV reproduces its response and a removed one is skipped."""
        x0, y_a = xy_model.id_of("X0"), xy_model.id_of("Y_A")
        csv = xy_model.add_csv([x0], [], [y_a])
        instance = Instance(0, {x0: A}, {y_a: A})
        before = xy_model.snapshot()
        assert verify_response_preservation(before, xy_model.snapshot(), instance, csv.id)
        xy_model.remove_csv(csv.id)
        assert verify_response_preservation(before, xy_model.snapshot(), instance, csv.id) is None

    def test_corrected_response_is_skipped(self, xy_model):
        """Test that dropping a suppressor that had silenced a true response is not a violation."""
        x0, x1, y_a = xy_model.id_of("X0"), xy_model.id_of("X1"), xy_model.id_of("Y_A")
        csv = xy_model.add_csv([x0], [x1], [y_a])
        csv.neg_connections_formed = True
        instance = Instance(0, {x0: A, x1: A}, {y_a: A})
        before = xy_model.snapshot()
        csv.neg_sources.clear()
        assert verify_response_preservation(before, xy_model.snapshot(), instance, csv.id) is None

    def test_lost_response_is_a_violation(self, xy_model):
        """Test that a CSV which stops responding to an instance it got right is caught."""
        x0, x1, y_a = xy_model.id_of("X0"), xy_model.id_of("X1"), xy_model.id_of("Y_A")
        csv = xy_model.add_csv([x0], [], [y_a])
        instance = Instance(0, {x0: A, x1: I}, {y_a: A})
        before = xy_model.snapshot()
        csv.pos_sources.add(x1)
        assert verify_response_preservation(before, xy_model.snapshot(), instance, csv.id) is False

    def test_split_child_checked_against_ancestor(self, xy_model):
        """Test that a CSV split off after the snapshot is replayed against its ancestor."""
        x0, y_a = xy_model.id_of("X0"), xy_model.id_of("Y_A")
        parent = xy_model.add_csv([x0], [], [y_a])
        instance = Instance(0, {x0: A}, {y_a: A})
        before = xy_model.snapshot()
        child = xy_model.add_csv([x0], [], [y_a], origin=parent.id)
        xy_model.remove_csv(parent.id)
        assert verify_response_preservation(before, xy_model.snapshot(), instance, child.id)
