"""State variables and the model container.

A model holds three kinds of state variables (SVs):

* ``Bsv``: observed each step, Active or Inactive. Action BSVs report the action the
  agent took on the previous step.
* ``Dsv``: activation/deactivation events of a non-action BSV.
* ``Csv``: a unit relating positive and negative sources (BSVs and DSVs) to targets
  (DSVs and other CSVs).

Every SV has an integer id drawn from one counter, so ids are unique across kinds and
sort in creation order.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from typing import TYPE_CHECKING, Iterable, Mapping, Optional, Union

import networkx as nx

from .errors import ConditioningCycleError, ContractViolationError, UnknownStateVariableError

if TYPE_CHECKING:
    from .learner import Instance
    from .significance import NceStats


class SvState(Enum):
    ACTIVE = 1
    INACTIVE = -1
    UNOBSERVED = 0


class Unconditionality(Enum):
    UNCONDITIONAL = "unconditional"
    CONDITIONAL = "conditional"
    POSSIBLY_CONDITIONAL = "possibly_conditional"


_FLAG_ORDER = {
    Unconditionality.UNCONDITIONAL: 0,
    Unconditionality.CONDITIONAL: 1,
    Unconditionality.POSSIBLY_CONDITIONAL: 2,
}


class DsvKind(Enum):
    ACTIVATION = "A"
    DEACTIVATION = "D"


OBSERVED = (SvState.ACTIVE, SvState.INACTIVE)


@dataclass(eq=False)
class Bsv:
    id: int
    name: str
    is_action: bool = False
    state: SvState = SvState.INACTIVE
    prev_state: SvState = SvState.INACTIVE
    activation: Optional[int] = None
    deactivation: Optional[int] = None


@dataclass(eq=False)
class Dsv:
    id: int
    name: str
    parent: int
    kind: DsvKind
    state: SvState = SvState.UNOBSERVED
    # value seen by CSVs reading this DSV as a source; persists across quiet steps
    source_state: SvState = SvState.UNOBSERVED
    unconditionality: Unconditionality = Unconditionality.CONDITIONAL
    conditioners: set[int] = field(default_factory=set)


@dataclass(frozen=True)
class CsvShape:
    """Structural part of a CSV, enough to replay its response to an instance."""

    pos_sources: frozenset[int]
    neg_sources: frozenset[int]
    targets: frozenset[int]
    neg_connections_formed: bool

    @property
    def sources(self) -> frozenset[int]:
        return self.pos_sources | self.neg_sources


@dataclass(eq=False)
class Csv:
    id: int
    name: str
    pos_sources: set[int]
    neg_sources: set[int]
    targets: set[int]
    state: SvState = SvState.UNOBSERVED
    unconditionality: Unconditionality = Unconditionality.UNCONDITIONAL
    neg_connections_formed: bool = False
    conditioners: set[int] = field(default_factory=set)
    stats: dict[int, "NceStats"] = field(default_factory=dict)
    blocked: bool = False
    created_step: int = 0
    origin: Optional[int] = None
    instances: deque["Instance"] = field(default_factory=deque)

    @property
    def sources(self) -> set[int]:
        return self.pos_sources | self.neg_sources

    def shape(self) -> CsvShape:
        return CsvShape(
            frozenset(self.pos_sources),
            frozenset(self.neg_sources),
            frozenset(self.targets),
            self.neg_connections_formed,
        )


StateVariable = Union[Bsv, Dsv, Csv]


@dataclass(frozen=True)
class ModelSnapshot:
    step_index: int
    csvs: Mapping[int, CsvShape]
    lineage: Mapping[int, int]

    def resolve(
        self, csv_id: int, lineage: Optional[Mapping[int, int]] = None
    ) -> Optional[CsvShape]:
        """Shape of csv_id, following duplication lineage back to an ancestor present here.

        Pass a later model's ``lineage`` to resolve CSVs split off after this snapshot.
        """
        links = {**self.lineage, **(lineage or {})}
        current: Optional[int] = csv_id
        while current is not None:
            if current in self.csvs:
                return self.csvs[current]
            current = links.get(current)
        return None


def raise_flag(sv: Union[Dsv, Csv], flag: Unconditionality) -> bool:
    """Move sv's flag forward to ``flag``; flags never move back. Returns True on change."""
    if _FLAG_ORDER[flag] <= _FLAG_ORDER[sv.unconditionality]:
        return False
    sv.unconditionality = flag
    return True


class Model:
    def __init__(self, instance_capacity: int = 256):
        self.bsvs: dict[int, Bsv] = {}
        self.dsvs: dict[int, Dsv] = {}
        self.csvs: dict[int, Csv] = {}
        self.computation_levels: list[list[int]] = []
        self.instance_capacity = instance_capacity
        self.step_index = 0
        # child csv id -> the csv it was split off from
        self.lineage: dict[int, int] = {}
        # states read by CSV sources at the next step
        self.source_snapshot: dict[int, SvState] = {}
        self._next_id = 0
        self._next_csv_name = 0
        self._by_name: dict[str, int] = {}

    def __repr__(self) -> str:
        return (
            f"Model(bsvs={len(self.bsvs)}, dsvs={len(self.dsvs)}, "
            f"csvs={len(self.csvs)}, step={self.step_index})"
        )

    def _new_id(self) -> int:
        self._next_id += 1
        return self._next_id - 1

    def _new_csv_name(self) -> str:
        self._next_csv_name += 1
        return f"C{self._next_csv_name - 1}"

    def add_bsv(self, name: str, is_action: bool = False) -> Bsv:
        if name in self._by_name:
            raise ContractViolationError(f"BSV name {name!r} already registered")
        bsv = Bsv(self._new_id(), name, is_action)
        self.bsvs[bsv.id] = bsv
        self._by_name[name] = bsv.id
        self.source_snapshot[bsv.id] = bsv.state
        if not is_action:
            for kind in DsvKind:
                dsv = Dsv(self._new_id(), f"{name}_{kind.value}", bsv.id, kind)
                self.dsvs[dsv.id] = dsv
                self._by_name[dsv.name] = dsv.id
                self.source_snapshot[dsv.id] = dsv.source_state
                if kind is DsvKind.ACTIVATION:
                    bsv.activation = dsv.id
                else:
                    bsv.deactivation = dsv.id
        return bsv

    def id_of(self, name: str) -> int:
        try:
            return self._by_name[name]
        except KeyError:
            raise UnknownStateVariableError(name) from None

    def dsv_of(self, bsv_id: int, kind: DsvKind) -> Dsv:
        bsv = self.bsvs.get(bsv_id)
        if bsv is None:
            raise UnknownStateVariableError(bsv_id, "not a BSV")
        if bsv.is_action:
            raise ContractViolationError(f"action BSV {bsv.name} has no DSVs")
        dsv_id = bsv.activation if kind is DsvKind.ACTIVATION else bsv.deactivation
        return self.dsvs[dsv_id]

    def sv(self, sv_id: int) -> StateVariable:
        for table in (self.bsvs, self.dsvs, self.csvs):
            if sv_id in table:
                return table[sv_id]
        raise UnknownStateVariableError(sv_id)

    def __contains__(self, sv_id: int) -> bool:
        return sv_id in self.bsvs or sv_id in self.dsvs or sv_id in self.csvs

    def name_of(self, sv_id: int) -> str:
        return self.sv(sv_id).name

    def state_of(self, sv_id: int) -> SvState:
        return self.sv(sv_id).state

    @property
    def action_ids(self) -> list[int]:
        return [b.id for b in self.bsvs.values() if b.is_action]

    def current_states(self) -> dict[int, SvState]:
        states = {i: b.state for i, b in self.bsvs.items()}
        states.update((i, d.state) for i, d in self.dsvs.items())
        states.update((i, c.state) for i, c in self.csvs.items())
        return states

    def add_csv(
        self,
        pos_sources: Iterable[int],
        neg_sources: Iterable[int],
        targets: Iterable[int],
        origin: Optional[int] = None,
    ) -> Csv:
        pos, neg, tgt = set(pos_sources), set(neg_sources), set(targets)
        for sv_id in pos | neg:
            if sv_id not in self.bsvs and sv_id not in self.dsvs:
                raise UnknownStateVariableError(sv_id, "CSV sources must be BSVs or DSVs")
        for sv_id in tgt:
            if sv_id not in self.dsvs and sv_id not in self.csvs:
                raise UnknownStateVariableError(sv_id, "CSV targets must be DSVs or CSVs")
        csv = Csv(
            self._new_id(),
            self._new_csv_name(),
            pos,
            neg,
            tgt,
            created_step=self.step_index,
            origin=origin,
            instances=deque(maxlen=self.instance_capacity),
        )
        self.csvs[csv.id] = csv
        for t in tgt:
            self.sv(t).conditioners.add(csv.id)
        if origin is not None:
            self.lineage[csv.id] = origin
        return csv

    def retarget(self, csv: Csv, targets: Iterable[int]) -> None:
        """Replace csv's target set, keeping conditioner back-links in sync."""
        new = set(targets)
        for t in csv.targets - new:
            self.sv(t).conditioners.discard(csv.id)
        for t in new - csv.targets:
            self.sv(t).conditioners.add(csv.id)
        csv.targets = new

    def remove_csv(self, csv_id: int) -> Csv:
        csv = self.csvs.pop(csv_id, None)
        if csv is None:
            raise UnknownStateVariableError(csv_id, "not a CSV")
        for t in csv.targets:
            target = self.dsvs.get(t) or self.csvs.get(t)
            if target is not None:
                target.conditioners.discard(csv_id)
        for c in csv.conditioners:
            upstream = self.csvs.get(c)
            if upstream is not None:
                upstream.targets.discard(csv_id)
        for level in self.computation_levels:
            if csv_id in level:
                level.remove(csv_id)
        return csv

    def conditioner_active(self, sv_id: int) -> bool:
        return any(self.csvs[c].state is SvState.ACTIVE for c in self.sv(sv_id).conditioners)

    def clear_events(self) -> None:
        """Forget pending DSV events, e.g. after an environment reset."""
        for dsv in self.dsvs.values():
            dsv.state = dsv.source_state = SvState.UNOBSERVED
            self.source_snapshot[dsv.id] = SvState.UNOBSERVED

    def snapshot(self) -> ModelSnapshot:
        return ModelSnapshot(
            self.step_index,
            {i: c.shape() for i, c in self.csvs.items()},
            dict(self.lineage),
        )


def deduce_dsv_states(model: Model, curr_bsv_states: Mapping[int, SvState]) -> dict[int, SvState]:
    """Apply the per-step event table to every BSV in ``curr_bsv_states``.

    ``prev_state`` of each BSV must already hold the previous observation. If none of the
    given BSVs changed, DSV source states carry over from the previous step.
    """
    updated: dict[int, SvState] = {}
    any_event = False
    for bsv_id, curr in curr_bsv_states.items():
        bsv = model.bsvs.get(bsv_id)
        if bsv is None:
            raise UnknownStateVariableError(bsv_id, "not a BSV")
        if bsv.is_action:
            raise ContractViolationError(f"action BSV {bsv.name} has no DSVs")
        if curr not in OBSERVED:
            raise ContractViolationError(f"BSV {bsv.name} observed as {curr.name}")
        prev = bsv.prev_state
        if prev is SvState.INACTIVE:
            a_state, d_state = curr, SvState.UNOBSERVED
        else:
            a_state = SvState.UNOBSERVED
            d_state = SvState.INACTIVE if curr is SvState.ACTIVE else SvState.ACTIVE
        activation = model.dsvs[bsv.activation]
        deactivation = model.dsvs[bsv.deactivation]
        activation.state, deactivation.state = a_state, d_state
        updated[activation.id], updated[deactivation.id] = a_state, d_state
        any_event = any_event or prev is not curr

    if any_event:
        for dsv in model.dsvs.values():
            dsv.source_state = dsv.state
    return updated


def sources_satisfied(csv: Union[Csv, CsvShape], prev_states: Mapping[int, SvState]) -> bool:
    try:
        return all(prev_states[s] is SvState.ACTIVE for s in csv.pos_sources) and not any(
            prev_states[s] is SvState.ACTIVE for s in csv.neg_sources
        )
    except KeyError as e:
        raise UnknownStateVariableError(e.args[0], "dangling CSV source") from None


def conditioning_graph(model: Model) -> nx.DiGraph:
    """Directed graph with an edge from each CSV to each of its CSV targets."""
    graph = nx.DiGraph()
    graph.add_nodes_from(sorted(model.csvs))
    for csv_id in sorted(model.csvs):
        for t in sorted(model.csvs[csv_id].targets):
            if t in model.csvs:
                graph.add_edge(csv_id, t)
    return graph


def add_computation_levels(model: Model) -> list[list[int]]:
    """Layer CSVs so that every CSV sits strictly above all of its CSV targets."""
    graph = conditioning_graph(model)
    if not nx.is_directed_acyclic_graph(graph):
        cycle = nx.find_cycle(graph)
        raise ConditioningCycleError(f"conditioning cycle through {cycle}")

    level: dict[int, int] = {}
    for csv_id in reversed(list(nx.lexicographical_topological_sort(graph))):
        below = [level[t] for t in graph.successors(csv_id)]
        level[csv_id] = max(below) + 1 if below else 0

    layers: list[list[int]] = [[] for _ in range(max(level.values(), default=-1) + 1)]
    for csv_id in sorted(level):
        layers[level[csv_id]].append(csv_id)
    model.computation_levels = layers
    return layers
