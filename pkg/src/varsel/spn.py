"""State networks (SNs) and state polynetworks (SPNs).

An SPN is an ordered set of keyed, typed directed graphs over one shared node table. A
partial node assignment ``f`` from a source SPN ``p0`` to a refiner SPN ``p1`` satisfies
``p0`` when every node of ``p0`` is mapped and every edge ``(a, b)`` of every SN has a
directed path ``f(a) -> f(b)`` in the same-key SN of ``p1``.
"""

import logging
import math
from collections import deque
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, Optional

import networkx as nx
import numpy as np

from .errors import ContractViolationError
from .trace import varsel_trace

logger = logging.getLogger(__name__)

DEFAULT_DIAGONAL = math.hypot(28, 28)

Position = tuple[float, float]
Element = tuple  # ("node", n) or ("edge", key, u, v)


@dataclass
class NodeData:
    node_type: str
    position: Optional[Position] = None
    n_positions: int = 0
    times_present: int = 0
    times_refined_against: int = 0

    def observe_position(self, position: Optional[Position]) -> None:
        """Fold ``position`` into the running mean."""
        if position is None:
            return
        if self.position is None or self.n_positions == 0:
            self.position, self.n_positions = (float(position[0]), float(position[1])), 1
            return
        n = self.n_positions + 1
        x, y = self.position
        self.position = (x + (position[0] - x) / n, y + (position[1] - y) / n)
        self.n_positions = n

    def absence_ratio(self) -> float:
        if self.times_refined_against == 0:
            return 0.0
        return 1.0 - self.times_present / self.times_refined_against


class StateNetwork:
    """One keyed directed graph. Edge attributes carry presence statistics."""

    def __init__(self, key: str, graph: Optional[nx.DiGraph] = None):
        self.key = key
        self.graph = graph if graph is not None else nx.DiGraph()

    def __repr__(self) -> str:
        n, e = self.graph.number_of_nodes(), self.graph.number_of_edges()
        return f"StateNetwork({self.key!r}, nodes={n}, edges={e})"

    def add_edge(self, u: int, v: int, present: int = 1, exposures: int = 1) -> None:
        if u == v:
            return
        self.graph.add_edge(u, v, times_present=present, times_refined_against=exposures)

    def edges(self) -> list[tuple[int, int]]:
        return sorted(self.graph.edges)

    def copy(self) -> "StateNetwork":
        return StateNetwork(self.key, self.graph.copy())


class StatePolynetwork:
    def __init__(self, keys: Iterable[str] = ()):
        self.nodes: dict[int, NodeData] = {}
        self.networks: dict[str, StateNetwork] = {k: StateNetwork(k) for k in keys}

    def __repr__(self) -> str:
        return f"StatePolynetwork(keys={list(self.networks)}, nodes={len(self.nodes)})"

    def __getitem__(self, key: str) -> StateNetwork:
        return self.networks[key]

    def keys(self) -> list[str]:
        return list(self.networks)

    def items(self):
        return self.networks.items()

    def add_node(
        self, node_id: int, node_type: str, position: Optional[Position] = None
    ) -> NodeData:
        data = NodeData(node_type)
        data.observe_position(position)
        self.nodes[node_id] = data
        for sn in self.networks.values():
            sn.graph.add_node(node_id)
        return data

    def add_edge(self, key: str, u: int, v: int) -> None:
        if u not in self.nodes or v not in self.nodes:
            raise ContractViolationError(f"edge ({u}, {v}) in {key} has unknown endpoints")
        self.networks[key].add_edge(u, v)

    def edge_count(self) -> int:
        return sum(sn.graph.number_of_edges() for sn in self.networks.values())

    def copy(self) -> "StatePolynetwork":
        other = StatePolynetwork()
        other.nodes = {n: replace(d) for n, d in self.nodes.items()}
        other.networks = {k: sn.copy() for k, sn in self.networks.items()}
        return other

    def structure(self) -> tuple:
        """Hashable view of node types and edges, ignoring statistics and positions."""
        return (
            tuple(sorted((n, d.node_type) for n, d in self.nodes.items())),
            tuple((k, tuple(sn.edges())) for k, sn in self.networks.items()),
        )

    def remove_node(self, node_id: int) -> list[tuple[str, int, int]]:
        """Remove a node, bridging each predecessor to each successor in every SN."""
        created = []
        for key, sn in self.networks.items():
            g = sn.graph
            if node_id not in g:
                continue
            preds = sorted(p for p in g.predecessors(node_id) if p != node_id)
            succs = sorted(s for s in g.successors(node_id) if s != node_id)
            for p in preds:
                for s in succs:
                    if p != s and not g.has_edge(p, s):
                        sn.add_edge(p, s)
                        created.append((key, p, s))
            g.remove_node(node_id)
        self.nodes.pop(node_id, None)
        return created


def check_keys(p0: StatePolynetwork, p1: StatePolynetwork) -> None:
    if set(p0.keys()) != set(p1.keys()):
        raise ContractViolationError(
            f"SPN key sets differ: {sorted(p0.keys())} vs {sorted(p1.keys())}"
        )


class Reachability:
    """Memoized descendant sets of a refiner SPN, valid while it is not mutated."""

    def __init__(self, spn: StatePolynetwork):
        self.spn = spn
        self._cache: dict[tuple[str, int], set[int]] = {}

    def has_path(self, key: str, a: int, b: int) -> bool:
        entry = self._cache.get((key, a))
        if entry is None:
            g = self.spn[key].graph
            entry = nx.descendants(g, a) if a in g else set()
            self._cache[(key, a)] = entry
        return b in entry


@dataclass
class Assignment:
    mapping: dict[int, int] = field(default_factory=dict)
    mismatch: int = 0

    def __contains__(self, node: int) -> bool:
        return node in self.mapping

    def __getitem__(self, node: int) -> int:
        return self.mapping[node]

    def get(self, node: int, default=None):
        return self.mapping.get(node, default)

    def restricted_to(self, nodes: Iterable[int]) -> "Assignment":
        keep = set(nodes)
        return Assignment({k: v for k, v in self.mapping.items() if k in keep}, self.mismatch)


def _edge_realized(key, u, v, f: Mapping[int, int], reach: Reachability) -> bool:
    return u in f and v in f and reach.has_path(key, f[u], f[v])


def mismatch(
    p0: StatePolynetwork,
    p1: StatePolynetwork,
    f: Mapping[int, int],
    reach: Optional[Reachability] = None,
) -> int:
    """Unmapped source nodes plus source edges without a path between their images."""
    check_keys(p0, p1)
    reach = reach or Reachability(p1)
    score = sum(1 for n in p0.nodes if n not in f)
    for key, sn in p0.items():
        score += sum(1 for u, v in sn.graph.edges if not _edge_realized(key, u, v, f, reach))
    return score


def is_satisfied_by(p0: StatePolynetwork, p1: StatePolynetwork, f) -> bool:
    mapping = f.mapping if isinstance(f, Assignment) else f
    return mismatch(p0, p1, mapping) == 0


def remove_with_rerelation(
    sn: StateNetwork, n0: int, n1: int, forbidden: Iterable[tuple[int, int]] = ()
) -> list[tuple[int, int]]:
    """Remove edge (n0, n1) after linking each predecessor of n0 to each successor of n1.

    Returns the edges created. Self-loops, existing edges and ``forbidden`` pairs are not
    added.
    """
    g = sn.graph
    if not g.has_edge(n0, n1):
        raise ContractViolationError(f"edge ({n0}, {n1}) not in {sn.key}")
    forbidden = set(forbidden)
    created = []
    for p in sorted(g.predecessors(n0)):
        for s in sorted(g.successors(n1)):
            if p == s or g.has_edge(p, s) or (p, s) in forbidden:
                continue
            sn.add_edge(p, s)
            created.append((p, s))
    g.remove_edge(n0, n1)
    return created


def _prune_edges(
    p0: StatePolynetwork,
    f: Mapping[int, int],
    reach: Reachability,
    should_remove,
    queued: Iterable[tuple[str, int, int]] = (),
) -> list[Element]:
    """Remove edges selected by ``should_remove``; rerelation edges are checked in turn."""
    discarded: list[Element] = []
    queue = deque((key, u, v) for key, sn in p0.items() for u, v in sn.edges())
    queue.extend(queued)
    removed: dict[str, set[tuple[int, int]]] = {k: set() for k in p0.keys()}
    while queue:
        key, u, v = queue.popleft()
        sn = p0[key]
        if not sn.graph.has_edge(u, v):
            continue
        if not should_remove(key, u, v):
            continue
        created = remove_with_rerelation(sn, u, v, forbidden=removed[key])
        removed[key].add((u, v))
        discarded.append(("edge", key, u, v))
        for p, s in created:
            realized = _edge_realized(key, p, s, f, reach)
            sn.graph.edges[p, s]["times_present"] = int(realized)
            queue.append((key, p, s))
    return discarded


@varsel_trace(name="spn.refine_by")
def refine_by(p0: StatePolynetwork, p1: StatePolynetwork, f) -> StatePolynetwork:
    """Minimally refine ``p0`` in place so that ``p1`` satisfies it under ``f``."""
    check_keys(p0, p1)
    mapping = f.mapping if isinstance(f, Assignment) else f
    reach = Reachability(p1)
    bridged = []
    for n in sorted(p0.nodes):
        if n not in mapping:
            bridged += p0.remove_node(n)
    _prune_edges(
        p0,
        mapping,
        reach,
        lambda key, u, v: not _edge_realized(key, u, v, mapping, reach),
        bridged,
    )
    return p0


@varsel_trace(name="spn.statistical_refine")
def statistical_refine(
    p0: StatePolynetwork, p1: StatePolynetwork, f, t_ref: float
) -> list[Element]:
    """Count presence of every element of ``p0`` in ``p1`` and drop frequently absent ones.

    An element is removed only when it is absent now and its absence ratio exceeds
    ``t_ref``. Returns the discarded elements.
    """
    if not 0.0 <= t_ref < 1.0:
        raise ValueError("t_ref must lie in [0, 1)")
    check_keys(p0, p1)
    mapping = f.mapping if isinstance(f, Assignment) else f
    reach = Reachability(p1)

    for n, data in p0.nodes.items():
        data.times_refined_against += 1
        data.times_present += n in mapping
    for key, sn in p0.items():
        for u, v, attrs in sn.graph.edges(data=True):
            attrs["times_refined_against"] += 1
            attrs["times_present"] += _edge_realized(key, u, v, mapping, reach)

    discarded: list[Element] = []
    bridged = []
    for n in sorted(p0.nodes):
        if n not in mapping and p0.nodes[n].absence_ratio() > t_ref:
            bridged += p0.remove_node(n)
            discarded.append(("node", n))

    def should_remove(key, u, v):
        if _edge_realized(key, u, v, mapping, reach):
            return False
        attrs = p0[key].graph.edges[u, v]
        ratio = 1.0 - attrs["times_present"] / max(attrs["times_refined_against"], 1)
        return ratio > t_ref

    for key, p, s in bridged:
        if p0[key].graph.has_edge(p, s):
            realized = _edge_realized(key, p, s, mapping, reach)
            p0[key].graph.edges[p, s]["times_present"] = int(realized)
    discarded += _prune_edges(p0, mapping, reach, should_remove, bridged)
    return discarded


def update_positions(p0: StatePolynetwork, p1: StatePolynetwork, f) -> None:
    """Fold the positions of mapped refiner nodes into ``p0``'s running means."""
    mapping = f.mapping if isinstance(f, Assignment) else f
    for n, data in p0.nodes.items():
        if n in mapping and mapping[n] in p1.nodes:
            data.observe_position(p1.nodes[mapping[n]].position)


def _softmax(x: np.ndarray) -> np.ndarray:
    z = np.exp(x - x.max())
    return z / z.sum()


@varsel_trace(name="spn.generate_assignments")
def generate_assignments(
    p0: StatePolynetwork,
    p1: StatePolynetwork,
    population: int,
    rng: np.random.Generator,
    seed: Optional[Mapping[int, int]] = None,
    temperature: float = 1.0,
    diagonal: float = DEFAULT_DIAGONAL,
) -> Assignment:
    """Sample candidate assignments and return the one with the lowest mismatch.

    The first candidate maps each node to its nearest unused compatible node; the rest
    draw compatible nodes with probability softmax(-distance / diagonal / temperature).
    ``seed`` pre-fixes part of the mapping. Ties go to the earliest candidate.
    """
    if population < 1:
        raise ValueError("population must be at least 1")
    check_keys(p0, p1)
    by_type: dict[str, list[int]] = {}
    for m in sorted(p1.nodes):
        by_type.setdefault(p1.nodes[m].node_type, []).append(m)
    fixed = {
        k: v
        for k, v in (seed or {}).items()
        if k in p0.nodes and v in p1.nodes and p0.nodes[k].node_type == p1.nodes[v].node_type
    }
    free = [n for n in sorted(p0.nodes) if n not in fixed]

    def distance(n: int, m: int) -> float:
        a, b = p0.nodes[n].position, p1.nodes[m].position
        if a is None or b is None:
            return 0.0
        return math.hypot(a[0] - b[0], a[1] - b[1])

    def build(greedy: bool) -> dict[int, int]:
        mapping = dict(fixed)
        used = set(mapping.values())
        order = free if greedy else [free[i] for i in rng.permutation(len(free))]
        for n in order:
            options = [m for m in by_type.get(p0.nodes[n].node_type, []) if m not in used]
            if not options:
                continue
            d = np.array([distance(n, m) for m in options])
            if greedy:
                choice = options[int(np.argmin(d))]
            else:
                weights = _softmax(-d / diagonal / temperature)
                choice = options[int(rng.choice(len(options), p=weights))]
            mapping[n] = choice
            used.add(choice)
        return mapping

    reach = Reachability(p1)
    seen = set()
    best: Optional[Assignment] = None
    draws = 0
    candidates = 0
    while candidates < population and draws < population * 5:
        mapping = build(greedy=draws == 0)
        draws += 1
        key = frozenset(mapping.items())
        if key in seen:
            continue
        seen.add(key)
        candidates += 1
        score = mismatch(p0, p1, mapping, reach)
        if best is None or score < best.mismatch:
            best = Assignment(mapping, score)
    return best


def dumps_spn(spn: StatePolynetwork) -> str:
    """Serialize to the line-oriented text format read by ``loads_spn``."""
    lines = [f"spn {len(spn.nodes)} {len(spn.networks)}"]
    for n in sorted(spn.nodes):
        d = spn.nodes[n]
        pos = "- -" if d.position is None else f"{d.position[0]!r} {d.position[1]!r}"
        lines.append(
            f"node {n} {d.node_type} {pos} {d.n_positions} "
            f"{d.times_present} {d.times_refined_against}"
        )
    for key, sn in spn.items():
        lines.append(f"sn {key}")
        for u, v in sn.edges():
            attrs = sn.graph.edges[u, v]
            lines.append(f"edge {u} {v} {attrs['times_present']} {attrs['times_refined_against']}")
    return "\n".join(lines) + "\n"


def loads_spn(text: str) -> StatePolynetwork:
    spn = StatePolynetwork()
    current: Optional[StateNetwork] = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        parts = raw.split()
        if not parts:
            continue
        tag = parts[0]
        try:
            if tag == "spn":
                continue
            if tag == "node":
                _, n, node_type, x, y, n_pos, present, exposures = parts
                position = None if x == "-" else (float(x), float(y))
                spn.nodes[int(n)] = NodeData(
                    node_type, position, int(n_pos), int(present), int(exposures)
                )
            elif tag == "sn":
                current = StateNetwork(parts[1])
                current.graph.add_nodes_from(spn.nodes)
                spn.networks[current.key] = current
            elif tag == "edge":
                _, u, v, present, exposures = parts
                current.add_edge(int(u), int(v), int(present), int(exposures))
            else:
                raise ValueError(f"unknown record {tag!r}")
        except (ValueError, AttributeError) as e:
            raise ContractViolationError(f"malformed SPN text at line {lineno}: {e}") from e
    return spn
