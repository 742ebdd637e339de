"""Backward-chaining planner over a learned model.

The planner opens an action network (AN) upstream from a goal node until it reaches
nodes satisfied by the current actives. Nodes are ``(sv, mode)`` pairs where ``sv`` is a
BSV id, a CSV id or a group id (``"G3"``), and ``mode`` is one of ``A`` (activation),
``D`` (deactivation), ``1`` (active), ``0`` (not active) or ``*`` for CSVs.
"""

import logging
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence, Union

import networkx as nx
import numpy as np

from .config import PlannerSettings
from .errors import ContractViolationError, UnknownStateVariableError
from .sv_core import DsvKind, Model, SvState
from .trace import varsel_trace

logger = logging.getLogger(__name__)

Node = tuple[Union[int, str], str]

PRECONDITION = {"A": "0", "D": "1", "1": "A", "0": "D"}
CSV_MODE = "*"


@dataclass(frozen=True)
class Gsv:
    id: str
    constituents: frozenset[int]
    constituencies: frozenset[str] = frozenset()


@dataclass
class GroupIndex:
    """Group SVs derived from a model, plus how each CSV is rewired through them."""

    gsvs: dict[str, Gsv] = field(default_factory=dict)
    by_members: dict[frozenset[int], str] = field(default_factory=dict)
    source_groups: dict[int, str] = field(default_factory=dict)
    negative_groups: dict[int, str] = field(default_factory=dict)
    event_groups: dict[int, list[tuple[str, DsvKind]]] = field(default_factory=dict)

    def group_for(self, members: Iterable[int]) -> str:
        key = frozenset(members)
        if key not in self.by_members:
            gsv_id = f"G{len(self.gsvs)}"
            self.gsvs[gsv_id] = Gsv(gsv_id, key)
            self.by_members[key] = gsv_id
        return self.by_members[key]

    def containing(self, members: frozenset[int]) -> list[str]:
        return sorted(
            (g.id for g in self.gsvs.values() if members < g.constituents),
            key=lambda g: int(g[1:]),
        )


def build_gsvs(model: Model) -> GroupIndex:
    """Group multi-BSV source sets and collectively predicted BSV events of every CSV."""
    index = GroupIndex()
    for csv_id in sorted(model.csvs):
        csv = model.csvs[csv_id]
        pos = sorted(s for s in csv.pos_sources if s in model.bsvs)
        if len(pos) >= 2:
            index.source_groups[csv_id] = index.group_for(pos)
        neg = sorted(s for s in csv.neg_sources if s in model.bsvs)
        if len(neg) >= 2:
            index.negative_groups[csv_id] = index.group_for(neg)
        for kind in DsvKind:
            parents = sorted(
                model.dsvs[t].parent
                for t in csv.targets
                if t in model.dsvs and model.dsvs[t].kind is kind
            )
            if len(parents) >= 2:
                index.event_groups.setdefault(csv_id, []).append(
                    (index.group_for(parents), kind)
                )

    for gsv_id, gsv in list(index.gsvs.items()):
        constituencies = frozenset(index.containing(gsv.constituents))
        index.gsvs[gsv_id] = Gsv(gsv_id, gsv.constituents, constituencies)
    return index


@dataclass
class ActionNetwork:
    goal: Node
    graph: nx.DiGraph = field(default_factory=nx.DiGraph)
    roots: set[Node] = field(default_factory=set)
    actionable: set[Node] = field(default_factory=set)
    reachable: bool = False
    index: GroupIndex = field(default_factory=GroupIndex, repr=False)

    @property
    def empty(self) -> bool:
        return not self.reachable

    def csv_nodes(self) -> list[int]:
        return sorted(sv for sv, mode in self.graph.nodes if mode == CSV_MODE)

    def __contains__(self, node: Node) -> bool:
        return node in self.graph


class _Expansion:
    def __init__(self, model: Model, index: GroupIndex, actives: set[int], depth_cap: int):
        self.model = model
        self.index = index
        self.actives = actives
        self.depth_cap = depth_cap
        self.an: Optional[ActionNetwork] = None
        # shallowest depth each node has been expanded at
        self.expanded: dict[Node, int] = {}

    def members(self, sv: Union[int, str]) -> frozenset[int]:
        if isinstance(sv, str):
            return self.index.gsvs[sv].constituents
        return frozenset((sv,))

    def satisfied(self, node: Node) -> bool:
        sv, mode = node
        if mode == "1":
            return self.members(sv) <= self.actives
        if mode == "0":
            return not (self.members(sv) & self.actives)
        return False

    def is_action(self, sv) -> bool:
        return isinstance(sv, int) and sv in self.model.bsvs and self.model.bsvs[sv].is_action

    def source_nodes(self, csv_id: int) -> list[Node]:
        csv = self.model.csvs[csv_id]
        nodes: list[Node] = []
        bsv_sources = sorted(s for s in csv.pos_sources if s in self.model.bsvs)
        if csv_id in self.index.source_groups:
            nodes.append((self.index.source_groups[csv_id], "1"))
        else:
            nodes.extend((s, "1") for s in bsv_sources)
        for s in sorted(csv.pos_sources):
            if s in self.model.dsvs:
                dsv = self.model.dsvs[s]
                nodes.append((dsv.parent, dsv.kind.value))
        return nodes

    def conditioner_nodes(self, sv, mode: str) -> list[Node]:
        if isinstance(sv, str):
            kind = DsvKind(mode)
            return [
                (csv_id, CSV_MODE)
                for csv_id, groups in sorted(self.index.event_groups.items())
                if (sv, kind) in groups and csv_id in self.model.csvs
            ]
        dsv = self.model.dsv_of(sv, DsvKind(mode))
        return [(c, CSV_MODE) for c in sorted(dsv.conditioners)]

    def pathways(self, node: Node) -> list[Node]:
        sv, mode = node
        if mode == CSV_MODE:
            csv = self.model.csvs[sv]
            return self.source_nodes(sv) + [(c, CSV_MODE) for c in sorted(csv.conditioners)]
        found: list[Node] = [(sv, PRECONDITION[mode])]
        if isinstance(sv, str):
            found.extend((m, mode) for m in sorted(self.index.gsvs[sv].constituents))
        found.extend((g, mode) for g in self.index.containing(self.members(sv)))
        if mode in ("A", "D"):
            found.extend(self.conditioner_nodes(sv, mode))
        return found

    def expand(self, node: Node, depth: int) -> None:
        an = self.an
        an.graph.add_node(node)
        if self.expanded.get(node, self.depth_cap + 1) <= depth:
            return
        self.expanded[node] = depth
        if self.satisfied(node):
            an.roots.add(node)
            return
        if self.is_action(node[0]):
            if node[1] in ("1", "A"):
                an.actionable.add(node)
            return
        if depth >= self.depth_cap:
            return
        for upstream in self.pathways(node):
            an.graph.add_edge(upstream, node)
            self.expand(upstream, depth + 1)

    def run(self, goal: Node) -> ActionNetwork:
        self.an = ActionNetwork(goal, index=self.index)
        self.expand(goal, 0)
        an = self.an
        grounded = set(an.roots) | set(an.actionable)
        for seed in list(grounded):
            grounded |= nx.descendants(an.graph, seed)
        an.graph.remove_nodes_from([n for n in list(an.graph) if n not in grounded])
        an.reachable = goal in grounded
        if not an.reachable:
            an.graph.clear()
            an.roots.clear()
            an.actionable.clear()
        return an


@varsel_trace(name="planner.generate_action_network")
def generate_action_network(
    model: Model,
    current_actives: Iterable[int],
    goal: Node,
    index: Optional[GroupIndex] = None,
    depth_cap: int = 12,
) -> ActionNetwork:
    """Open the upstream action network of ``goal``.

    Nodes that cannot be traced back to a satisfied node or an action are pruned. An
    unreachable goal yields an empty network rather than an error.
    """
    sv, mode = goal
    if isinstance(sv, str):
        if index is None or sv not in index.gsvs:
            raise UnknownStateVariableError(sv, "unknown group")
    elif sv not in model:
        raise UnknownStateVariableError(sv)
    index = index if index is not None else build_gsvs(model)
    actives = {a for a in current_actives if a in model.bsvs and not model.bsvs[a].is_action}
    return _Expansion(model, index, actives, depth_cap).run(goal)


def _requirements(model: Model, csv_id: int) -> set[int]:
    """Non-action positive sources of a CSV and of its downstream CSV targets."""
    required: set[int] = set()
    seen: set[int] = set()
    frontier = [csv_id]
    while frontier:
        current = frontier.pop()
        if current in seen or current not in model.csvs:
            continue
        seen.add(current)
        csv = model.csvs[current]
        required |= {
            s for s in csv.pos_sources if not (s in model.bsvs and model.bsvs[s].is_action)
        }
        frontier.extend(csv.targets)
    return required


def _suppressed(an: ActionNetwork, model: Model, csv_id: int, actives: set[int]) -> bool:
    """Whether a negative source of the CSV, or its negative group, is active now."""
    sources = set(model.csvs[csv_id].neg_sources)
    group = an.index.negative_groups.get(csv_id)
    if group is not None:
        constituents = an.index.gsvs[group].constituents
        if constituents & actives:
            return True
        sources -= constituents
    return bool(sources & actives)


def choose_action(
    an: ActionNetwork,
    model: Model,
    current_actives: Iterable[int],
    rng: np.random.Generator,
    epsilon: float,
) -> int:
    """Pick an action that can fire a CSV of the network now, or a random one.

    ``current_actives`` are the BSV and DSV ids whose source state is Active this step. CSVs
    suppressed by an active negative source are passed over.
    """
    actions: Sequence[int] = model.action_ids
    if not actions:
        raise ContractViolationError("model has no action BSVs")
    if rng.random() < epsilon:
        return int(rng.choice(actions))
    actives = set(current_actives)
    eligible: set[int] = set()
    for csv_id in an.csv_nodes():
        csv = model.csvs.get(csv_id)
        if csv is None:
            continue
        action_sources = {s for s in csv.pos_sources if s in model.bsvs and model.bsvs[s].is_action}
        if action_sources and _requirements(model, csv_id) <= actives:
            if _suppressed(an, model, csv_id, actives):
                continue
            eligible |= action_sources
    if eligible:
        return int(rng.choice(sorted(eligible)))
    return int(rng.choice(actions))


class Planner:
    """Plans toward a fixed goal, regenerating the network every step unless reuse is set."""

    def __init__(
        self,
        model: Model,
        goal: Node,
        settings: Optional[PlannerSettings] = None,
        rng: Optional[np.random.Generator] = None,
    ):
        self.model = model
        self.goal = goal
        self.settings = settings or PlannerSettings()
        self.rng = rng if rng is not None else np.random.default_rng()
        self._network: Optional[ActionNetwork] = None

    def invalidate(self) -> None:
        self._network = None

    def current_actives(self) -> set[int]:
        return {
            sv_id
            for sv_id, state in self.model.source_snapshot.items()
            if state is SvState.ACTIVE
            and not (sv_id in self.model.bsvs and self.model.bsvs[sv_id].is_action)
        }

    def network(self) -> ActionNetwork:
        if self._network is None or not self.settings.reuse_network:
            actives = {
                b.id
                for b in self.model.bsvs.values()
                if b.state is SvState.ACTIVE and not b.is_action
            }
            self._network = generate_action_network(
                self.model, actives, self.goal, depth_cap=self.settings.depth_cap
            )
        return self._network

    def act(self) -> int:
        if self.rng.random() < self.settings.epsilon:
            return int(self.rng.choice(self.model.action_ids))
        return choose_action(self.network(), self.model, self.current_actives(), self.rng, 0.0)
