"""Model inspection: JSON summaries and DOT graphs.

DOT graphs are built with ``graphviz.Digraph``; only ``.source`` is needed to write
them, so the Graphviz binaries are optional.
"""

import logging
from pathlib import Path
from typing import Any, Iterable, Optional, Union

from graphviz import Digraph

from .mnr import MnrModel, Polarity
from .planner import CSV_MODE, ActionNetwork, Node
from .significance import nce
from .spn import StatePolynetwork
from .sv_core import Model, Unconditionality

logger = logging.getLogger(__name__)

FAMILY_COLORS = {"contour": "black", "inner": "blue", "outer": "darkgreen", "all": "gray70"}


def _nce_by_target(model: Model, csv) -> dict[str, Optional[float]]:
    return {
        model.name_of(t): nce(csv.stats[t])
        for t in sorted(csv.targets)
        if t in csv.stats and t in model
    }


def model_to_dict(model: Model) -> dict[str, Any]:
    """Every SV with its state, flag, sources, targets and NCE values."""
    return {
        "step_index": model.step_index,
        "bsvs": [
            {"id": b.id, "name": b.name, "is_action": b.is_action, "state": b.state.name}
            for b in model.bsvs.values()
        ],
        "dsvs": [
            {
                "id": d.id,
                "name": d.name,
                "parent": d.parent,
                "kind": d.kind.value,
                "state": d.state.name,
                "unconditionality": d.unconditionality.value,
                "conditioners": sorted(d.conditioners),
            }
            for d in model.dsvs.values()
        ],
        "csvs": [
            {
                "id": c.id,
                "name": c.name,
                "pos_sources": sorted(c.pos_sources),
                "neg_sources": sorted(c.neg_sources),
                "targets": sorted(c.targets),
                "state": c.state.name,
                "unconditionality": c.unconditionality.value,
                "neg_connections_formed": c.neg_connections_formed,
                "blocked": c.blocked,
                "conditioners": sorted(c.conditioners),
                "created_step": c.created_step,
                "origin": c.origin,
                "nce": _nce_by_target(model, c),
            }
            for c in model.csvs.values()
        ],
        "computation_levels": [list(level) for level in model.computation_levels],
    }


def predictive_pathway(model: Model, sv: Union[int, str]) -> set[int]:
    """SVs that predict ``sv``: its events, their conditioners and everything they read.

    Raises UnknownStateVariableError for an unknown id or name.
    """
    sv_id = model.id_of(sv) if isinstance(sv, str) else sv
    root = model.sv(sv_id)
    keep = {sv_id}
    frontier = [sv_id]
    if sv_id in model.bsvs and not root.is_action:
        frontier += [root.activation, root.deactivation]
    while frontier:
        current = frontier.pop()
        keep.add(current)
        if current in model.bsvs:
            continue
        item = model.sv(current)
        for c in item.conditioners:
            if c not in keep and c in model.csvs:
                frontier.append(c)
        if current in model.csvs:
            # sources are leaves of the pathway
            for s in item.sources:
                keep.add(s)
                if s in model.dsvs:
                    keep.add(model.dsvs[s].parent)
    return keep


def model_to_dot(
    model: Model,
    reliable_only: bool = False,
    pathway: Optional[Union[int, str]] = None,
    name: str = "model",
) -> Digraph:
    """Source edges point into a CSV, conditioning edges point from a CSV to its targets.

    ``reliable_only`` keeps Unconditional CSVs; ``pathway`` keeps the predictive pathway
    of one SV.
    """
    allowed = predictive_pathway(model, pathway) if pathway is not None else None
    graph = Digraph(name=name)
    graph.attr(rankdir="LR")

    csvs = [
        c
        for c in model.csvs.values()
        if (not reliable_only or c.unconditionality is Unconditionality.UNCONDITIONAL)
        and (allowed is None or c.id in allowed)
    ]
    shown = {c.id for c in csvs}
    for c in csvs:
        shown |= c.sources | {t for t in c.targets if t not in model.csvs}
    if allowed is not None:
        shown |= {sv for sv in allowed if sv not in model.csvs}

    for b in model.bsvs.values():
        if b.id in shown:
            graph.node(str(b.id), b.name, shape="box" if b.is_action else "ellipse")
    for d in model.dsvs.values():
        if d.id in shown:
            graph.node(str(d.id), d.name, shape="ellipse", style="dashed")
            if d.parent in shown:
                graph.edge(str(d.parent), str(d.id), style="dotted", arrowhead="none")
    for c in csvs:
        reliable = c.unconditionality is Unconditionality.UNCONDITIONAL
        values = ", ".join(
            f"{t}: {'n/a' if v is None else format(v, '+.2f')}"
            for t, v in _nce_by_target(model, c).items()
        )
        label = f"{c.name}\\nNCE {values}" if values else c.name
        graph.node(
            str(c.id),
            label,
            shape="diamond",
            penwidth="2" if reliable else "1",
            style="filled" if c.blocked else "solid",
            fillcolor="gray85",
        )
        for s in sorted(c.pos_sources):
            graph.edge(str(s), str(c.id))
        for s in sorted(c.neg_sources):
            graph.edge(str(s), str(c.id), arrowhead="tee", color="red")
        for t in sorted(c.targets):
            if t in shown:
                graph.edge(str(c.id), str(t), color="blue", penwidth="2" if reliable else "1")
    return graph


def spn_to_dot(
    spn: StatePolynetwork, name: str = "spn", keys: Optional[Iterable[str]] = None
) -> Digraph:
    """Nodes are pinned at their mean positions (y flipped so the image reads upright)."""
    graph = Digraph(name=name)
    for node_id, data in sorted(spn.nodes.items()):
        attrs = {"shape": "circle"}
        if data.position is not None:
            attrs["pos"] = f"{data.position[0]:.2f},{-data.position[1]:.2f}!"
        graph.node(f"n{node_id}", f"{data.node_type}_{node_id}", **attrs)
    for key in keys if keys is not None else spn.keys():
        color = FAMILY_COLORS.get(key.rsplit("_", 1)[0], "black")
        for u, v in spn[key].edges():
            graph.edge(f"n{u}", f"n{v}", label=key, color=color)
    return graph


def mnr_conditioners_by_depth(model: MnrModel) -> dict[int, list[dict[str, Any]]]:
    """Learned shapes per depth, each with its SPN nodes and positions."""
    by_depth: dict[int, list[dict[str, Any]]] = {}
    for csv in sorted(model.csvs.values(), key=lambda c: (c.depth, c.id)):
        cls = model.class_by_id(csv.target)
        by_depth.setdefault(csv.depth, []).append(
            {
                "id": csv.id,
                "name": csv.name,
                "target": cls.label if cls is not None else csv.target,
                "targets_class": cls is not None,
                "polarity": csv.polarity.value,
                "unconditional": csv.unconditional,
                "p_effect_given_ss": csv.stats.p_effect_given_ss(),
                "nodes": [
                    {"id": n, "type": d.node_type, "position": d.position}
                    for n, d in sorted(csv.source.nodes.items())
                ],
                "edges": {k: sn.edges() for k, sn in csv.source.items()},
            }
        )
    return by_depth


def mnr_to_dot(model: MnrModel, name: str = "mnr") -> Digraph:
    graph = Digraph(name=name)
    graph.attr(rankdir="BT")
    for cls in model.classes.values():
        graph.node(f"k{cls.id}", f"class {cls.label}", shape="doubleoctagon")
    for csv in model.csvs.values():
        label = (
            f"{csv.name} d{csv.depth}\\n{len(csv.source.nodes)} nodes, "
            f"{csv.source.edge_count()} edges\\nP(I|SS)={csv.stats.p_effect_given_ss():.2f}"
        )
        graph.node(f"k{csv.id}", label, shape="diamond")
        attrs = {"color": "blue"}
        if csv.polarity is Polarity.NEGATIVE:
            attrs = {"color": "red", "arrowhead": "tee"}
        graph.edge(f"k{csv.id}", f"k{csv.target}", **attrs)
    return graph


def _an_label(model: Model, node: Node) -> str:
    sv, mode = node
    name = sv if isinstance(sv, str) else model.name_of(sv)
    return name if mode == CSV_MODE else f"{name}:{mode}"


def action_network_to_dot(an: ActionNetwork, model: Model, name: str = "action_network") -> Digraph:
    graph = Digraph(name=name)
    ids = {node: f"a{i}" for i, node in enumerate(sorted(an.graph.nodes, key=str))}
    for node, node_id in ids.items():
        attrs = {"shape": "diamond" if node[1] == CSV_MODE else "ellipse"}
        if node == an.goal:
            attrs["peripheries"] = "2"
        if node in an.roots:
            attrs.update(style="filled", fillcolor="palegreen")
        elif node in an.actionable:
            attrs.update(style="filled", fillcolor="orange")
        graph.node(node_id, _an_label(model, node), **attrs)
    for u, v in sorted(an.graph.edges, key=str):
        graph.edge(ids[u], ids[v])
    return graph


def write_dot(graph: Digraph, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(graph.source)
    logger.info("wrote %s", path)
    return path
