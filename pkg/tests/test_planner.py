import numpy as np
import pytest

from varsel.config import PlannerSettings
from varsel.errors import ContractViolationError, UnknownStateVariableError
from varsel.planner import (
    CSV_MODE,
    PRECONDITION,
    Planner,
    build_gsvs,
    choose_action,
    generate_action_network,
)
from varsel.sv_core import Model, SvState


@pytest.fixture
def chain():
    """a0 activates P; a1 together with an active P activates G."""
    model = Model()
    a0 = model.add_bsv("a0", is_action=True).id
    a1 = model.add_bsv("a1", is_action=True).id
    p = model.add_bsv("P").id
    g = model.add_bsv("G").id
    first = model.add_csv([a0], [], [model.id_of("P_A")])
    second = model.add_csv([a1, p], [], [model.id_of("G_A")])
    return model, {"a0": a0, "a1": a1, "P": p, "G": g, "first": first.id, "second": second.id}


class TestPreconditions:
    """Test the mode map."""

    def test_mode_map(self):
        """Test that each mode is preceded by its opposite level or event."""
        assert PRECONDITION == {"A": "0", "D": "1", "1": "A", "0": "D"}


class TestGroups:
    """Test GSV preprocessing."""

    def test_multi_bsv_sources_grouped(self, chain):
        """Test that a CSV with two BSV positive sources gets a source group."""
        model, ids = chain
        index = build_gsvs(model)
        group = index.source_groups[ids["second"]]
        assert index.gsvs[group].constituents == frozenset({ids["a1"], ids["P"]})
        assert ids["first"] not in index.source_groups

    def test_collective_events_grouped(self):
        """Test that a CSV predicting several activations gets an event group."""
        model = Model()
        a0 = model.add_bsv("a0", is_action=True).id
        for name in ("P", "Q"):
            model.add_bsv(name)
        csv = model.add_csv([a0], [], [model.id_of("P_A"), model.id_of("Q_A")])
        index = build_gsvs(model)
        ((group, kind),) = index.event_groups[csv.id]
        assert kind.value == "A"
        assert index.gsvs[group].constituents == frozenset({model.id_of("P"), model.id_of("Q")})

    def test_constituencies(self):
        """Test that a group records the larger groups that contain it."""
        model = Model()
        x, y, z = (model.add_bsv(n).id for n in ("X", "Y", "Z"))
        model.add_csv([x, y], [], [model.id_of("Z_A")])
        model.add_csv([x, y, z], [], [model.id_of("X_D")])
        index = build_gsvs(model)
        small = index.by_members[frozenset({x, y})]
        large = index.by_members[frozenset({x, y, z})]
        assert index.gsvs[small].constituencies == frozenset({large})
        assert index.gsvs[large].constituencies == frozenset()


class TestActionNetwork:
    """Test action network generation."""

    def test_two_step_chain(self, chain):
        """Test that both CSVs of the chain end up in the network."""
        model, ids = chain
        an = generate_action_network(model, set(), (ids["G"], "A"))
        assert an.reachable and not an.empty
        assert an.csv_nodes() == sorted([ids["first"], ids["second"]])
        assert (ids["a0"], "1") in an.actionable
        assert (ids["a1"], "1") in an.actionable
        assert (ids["P"], "0") in an.roots

    def test_goal_already_satisfied(self, chain):
        """Test that a satisfied goal is its own root."""
        model, ids = chain
        an = generate_action_network(model, {ids["G"]}, (ids["G"], "1"))
        assert an.reachable
        assert an.roots == {(ids["G"], "1")}

    def test_depth_cap_gives_empty_network(self, chain):
        """Test that an unreachable goal yields an empty network, not an error."""
        model, ids = chain
        an = generate_action_network(model, set(), (ids["G"], "1"), depth_cap=1)
        assert an.empty
        assert an.graph.number_of_nodes() == 0
        assert not an.roots and not an.actionable

    def test_unknown_goal(self, chain):
        """Test that unknown goal ids and groups are rejected."""
        model, _ = chain
        with pytest.raises(UnknownStateVariableError):
            generate_action_network(model, set(), (999, "1"))
        with pytest.raises(UnknownStateVariableError, match="unknown group"):
            generate_action_network(model, set(), ("G7", "1"))

    def test_action_actives_ignored(self, chain):
        """Test that action BSVs never count as satisfied nodes."""
        model, ids = chain
        an = generate_action_network(model, {ids["a1"]}, (ids["G"], "A"))
        assert (ids["a1"], "1") not in an.roots

    def test_shorter_path_reexpands(self):
        """Test that a node first met near the depth cap is expanded again from a shorter path."""
        model = Model()
        a0 = model.add_bsv("a0", is_action=True).id
        h = model.add_bsv("H").id
        g = model.add_bsv("G").id
        h_a, g_a = model.id_of("H_A"), model.id_of("G_A")
        model.add_csv([h], [], [g_a])
        model.add_csv([h_a], [], [g_a])
        feeder = model.add_csv([a0], [], [h_a])
        an = generate_action_network(model, set(), (g, "A"), depth_cap=4)
        assert feeder.id in an.csv_nodes()
        assert (a0, "1") in an.actionable


class TestChooseAction:
    """Test action selection."""

    def test_first_step_of_chain(self, chain):
        """Test that only the action whose requirements hold now is chosen."""
        model, ids = chain
        an = generate_action_network(model, set(), (ids["G"], "A"))
        rng = np.random.default_rng(0)
        for _ in range(10):
            assert choose_action(an, model, set(), rng, epsilon=0.0) == ids["a0"]

    def test_second_step_of_chain(self, chain):
        """Test that a1 becomes eligible once P is active."""
        model, ids = chain
        an = generate_action_network(model, {ids["P"]}, (ids["G"], "A"))
        rng = np.random.default_rng(0)
        picks = {choose_action(an, model, {ids["P"]}, rng, 0.0) for _ in range(20)}
        assert ids["a1"] in picks
        assert picks <= {ids["a0"], ids["a1"]}

    def test_suppressed_csv_not_eligible(self, chain):
        """Test that an active member of a CSV's negative group rules its action out."""
        model, ids = chain
        q, r = model.add_bsv("Q").id, model.add_bsv("R").id
        model.csvs[ids["second"]].neg_sources = {q, r}
        an = generate_action_network(model, {ids["P"]}, (ids["G"], "A"))
        group = an.index.negative_groups[ids["second"]]
        assert an.index.gsvs[group].constituents == frozenset({q, r})
        rng = np.random.default_rng(0)
        picks = {choose_action(an, model, {ids["P"], q}, rng, 0.0) for _ in range(20)}
        assert picks == {ids["a0"]}
        picks = {choose_action(an, model, {ids["P"]}, rng, 0.0) for _ in range(20)}
        assert ids["a1"] in picks

    def test_epsilon_one_is_random(self, chain):
        """Test that epsilon=1 ignores the network."""
        model, ids = chain
        an = generate_action_network(model, set(), (ids["G"], "A"))
        rng = np.random.default_rng(1)
        picks = {choose_action(an, model, set(), rng, 1.0) for _ in range(60)}
        assert picks == {ids["a0"], ids["a1"]}

    def test_empty_network_falls_back_to_random(self, chain):
        """Test that an empty network still yields a valid action."""
        model, ids = chain
        an = generate_action_network(model, set(), (ids["G"], "1"), depth_cap=0)
        rng = np.random.default_rng(2)
        assert choose_action(an, model, set(), rng, 0.0) in (ids["a0"], ids["a1"])

    def test_no_actions(self):
        """Test that a model without action BSVs cannot act."""
        model = Model()
        g = model.add_bsv("G").id
        an = generate_action_network(model, set(), (g, "A"))
        with pytest.raises(ContractViolationError, match="no action BSVs"):
            choose_action(an, model, set(), np.random.default_rng(0), 0.0)


class TestPlanner:
    """Test the Planner wrapper."""

    def test_reuse_network(self, chain):
        """Test that the network is cached only with reuse enabled."""
        model, ids = chain
        planner = Planner(model, (ids["G"], "A"), PlannerSettings(reuse_network=True))
        assert planner.network() is planner.network()
        planner.invalidate()
        cached = planner.network()
        assert cached is planner.network()

        fresh = Planner(model, (ids["G"], "A"), PlannerSettings(reuse_network=False))
        assert fresh.network() is not fresh.network()

    def test_current_actives_skip_actions(self, chain):
        """Test that current actives come from the source snapshot without actions."""
        model, ids = chain
        model.source_snapshot[ids["P"]] = SvState.ACTIVE
        model.source_snapshot[ids["a0"]] = SvState.ACTIVE
        planner = Planner(model, (ids["G"], "A"))
        assert planner.current_actives() == {ids["P"]}

    def test_act_follows_chain(self, chain):
        """Test that a greedy planner picks the first action of the chain."""
        model, ids = chain
        planner = Planner(
            model, (ids["G"], "A"), PlannerSettings(epsilon=0.0), np.random.default_rng(3)
        )
        assert planner.act() == ids["a0"]
        assert all(node[1] != CSV_MODE or node[0] in model.csvs for node in planner.network().graph)
