"""Class learning with SPN-sourced conditioners.

Every conditioner (``MnrCsv``) has one source SPN and exactly one target: a class
variable or another conditioner. Positive conditioners predict their target's activity;
negative conditioners suppress it. Samples refine the best-matching conditioners toward
the shared structure of a class, and unexplained observations spawn new conditioners.
"""

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Optional

import numpy as np

from .config import MnrSettings
from .errors import ContractViolationError
from .spn import (
    Assignment,
    StatePolynetwork,
    dumps_spn,
    generate_assignments,
    loads_spn,
    mismatch,
    statistical_refine,
    update_positions,
)
from .sv_core import SvState
from .trace import varsel_trace

logger = logging.getLogger(__name__)


class Polarity(Enum):
    POSITIVE = "pos"
    NEGATIVE = "neg"


@dataclass
class MnrStats:
    n_effect: int = 0
    n_ss: int = 0
    n_concurrence: int = 0

    def record(self, satisfied: bool, effect: bool) -> None:
        self.n_effect += effect
        self.n_ss += satisfied
        self.n_concurrence += satisfied and effect

    def p_effect_given_ss(self) -> float:
        return self.n_concurrence / self.n_ss if self.n_ss else 0.0

    def p_ss_given_effect(self) -> Optional[float]:
        return self.n_concurrence / self.n_effect if self.n_effect else None


@dataclass
class ClassVariable:
    id: int
    label: int
    n_incidence: int = 0
    state: SvState = SvState.UNOBSERVED
    conditioners: list[int] = field(default_factory=list)


@dataclass(eq=False)
class MnrCsv:
    id: int
    source: StatePolynetwork
    target: int
    polarity: Polarity
    depth: int = 0
    unconditional: bool = True
    stats: MnrStats = field(default_factory=MnrStats)
    state: SvState = SvState.UNOBSERVED
    conditioners: list[int] = field(default_factory=list)
    # source node -> node of the target CSV's source it corresponds to
    anchor: dict[int, int] = field(default_factory=dict)
    created_at: int = 0

    @property
    def name(self) -> str:
        sign = "+" if self.polarity is Polarity.POSITIVE else "-"
        return f"M{self.id}{sign}"


class MnrModel:
    def __init__(self, settings: Optional[MnrSettings] = None, seed: Optional[int] = None):
        self.settings = settings or MnrSettings()
        self.rng = np.random.default_rng(seed)
        self.classes: dict[int, ClassVariable] = {}
        self.csvs: dict[int, MnrCsv] = {}
        self.keys: Optional[list[str]] = None
        self.samples_seen = 0
        self._next_id = 0

    def __repr__(self) -> str:
        return f"MnrModel(classes={sorted(self.classes)}, csvs={len(self.csvs)})"

    def _new_id(self) -> int:
        self._next_id += 1
        return self._next_id - 1

    def ensure_class(self, label: int) -> ClassVariable:
        if label not in self.classes:
            self.classes[label] = ClassVariable(self._new_id(), label)
        return self.classes[label]

    def class_by_id(self, target: int) -> Optional[ClassVariable]:
        for cls in self.classes.values():
            if cls.id == target:
                return cls
        return None

    def conditioners_of(self, target: int) -> list[MnrCsv]:
        cls = self.class_by_id(target)
        ids = cls.conditioners if cls is not None else self.csvs[target].conditioners
        return [self.csvs[c] for c in ids if c in self.csvs]

    def add_conditioner(
        self,
        source: StatePolynetwork,
        target: int,
        polarity: Polarity,
        depth: int,
        anchor: Optional[dict[int, int]] = None,
    ) -> MnrCsv:
        csv = MnrCsv(
            self._new_id(),
            source,
            target,
            polarity,
            depth=depth,
            anchor=dict(anchor or {}),
            created_at=self.samples_seen,
        )
        self.csvs[csv.id] = csv
        cls = self.class_by_id(target)
        (cls.conditioners if cls is not None else self.csvs[target].conditioners).append(csv.id)
        logger.debug("created %s targeting %s at depth %d", csv.name, target, depth)
        return csv

    def remove_conditioner(self, csv_id: int) -> list[int]:
        """Remove a conditioner together with everything conditioning it."""
        removed = []
        stack = [csv_id]
        while stack:
            current = self.csvs.pop(stack.pop(), None)
            if current is None:
                continue
            removed.append(current.id)
            stack.extend(current.conditioners)
            cls = self.class_by_id(current.target)
            owner = cls.conditioners if cls is not None else None
            if owner is None and current.target in self.csvs:
                owner = self.csvs[current.target].conditioners
            if owner is not None and current.id in owner:
                owner.remove(current.id)
        return removed

    def to_dict(self) -> dict[str, Any]:
        return {
            "keys": self.keys,
            "samples_seen": self.samples_seen,
            "classes": [
                {
                    "id": c.id,
                    "label": c.label,
                    "n_incidence": c.n_incidence,
                    "conditioners": list(c.conditioners),
                }
                for c in self.classes.values()
            ],
            "csvs": [
                {
                    "id": c.id,
                    "target": c.target,
                    "polarity": c.polarity.value,
                    "depth": c.depth,
                    "unconditional": c.unconditional,
                    "stats": [c.stats.n_effect, c.stats.n_ss, c.stats.n_concurrence],
                    "conditioners": list(c.conditioners),
                    "anchor": [[k, v] for k, v in sorted(c.anchor.items())],
                    "created_at": c.created_at,
                    "source": dumps_spn(c.source),
                }
                for c in self.csvs.values()
            ],
        }

    @classmethod
    def from_dict(
        cls, data: dict[str, Any], settings: Optional[MnrSettings] = None, seed=None
    ) -> "MnrModel":
        model = cls(settings, seed)
        model.keys = data["keys"]
        model.samples_seen = data["samples_seen"]
        top = -1
        for c in data["classes"]:
            model.classes[c["label"]] = ClassVariable(
                c["id"], c["label"], c["n_incidence"], conditioners=list(c["conditioners"])
            )
            top = max(top, c["id"])
        for c in data["csvs"]:
            model.csvs[c["id"]] = MnrCsv(
                c["id"],
                loads_spn(c["source"]),
                c["target"],
                Polarity(c["polarity"]),
                depth=c["depth"],
                unconditional=c["unconditional"],
                stats=MnrStats(*c["stats"]),
                conditioners=list(c["conditioners"]),
                anchor={k: v for k, v in c["anchor"]},
                created_at=c["created_at"],
            )
            top = max(top, c["id"])
        model._next_id = top + 1
        return model


def _seed_from(csv: MnrCsv, parent: Optional[Assignment]) -> Optional[dict[int, int]]:
    if parent is None or not csv.anchor:
        return None
    return {n: parent.mapping[a] for n, a in csv.anchor.items() if a in parent.mapping}


def _fresh_source(spn: StatePolynetwork) -> StatePolynetwork:
    source = spn.copy()
    for data in source.nodes.values():
        data.times_present = data.times_refined_against = 0
    for sn in source.networks.values():
        for _, _, attrs in sn.graph.edges(data=True):
            attrs["times_present"] = attrs["times_refined_against"] = 0
    return source


class _Learning:
    """One learn_sample pass."""

    def __init__(self, model: MnrModel, spn: StatePolynetwork):
        self.model = model
        self.spn = spn
        self.settings = model.settings
        self.assignments: dict[int, Assignment] = {}

    def assign(self, csv: MnrCsv, parent: Optional[Assignment]) -> Assignment:
        f = generate_assignments(
            csv.source,
            self.spn,
            self.settings.population,
            self.model.rng,
            seed=_seed_from(csv, parent),
            temperature=self.settings.softmax_temperature,
        )
        self.assignments[csv.id] = f
        return f

    def refine(self, csv: MnrCsv, f: Assignment) -> tuple[bool, Optional[StatePolynetwork]]:
        """Statistically refine csv toward the sample. Returns (satisfied, pre-refinement
        source if anything was discarded)."""
        before = csv.source.copy()
        discarded = statistical_refine(csv.source, self.spn, f, self.settings.t_ref)
        update_positions(csv.source, self.spn, f)
        kept = f.restricted_to(csv.source.nodes)
        kept.mismatch = mismatch(csv.source, self.spn, kept.mapping)
        self.assignments[csv.id] = kept
        return kept.mismatch == 0, before if discarded else None

    def new_from_sample(
        self, target: int, polarity: Polarity, depth: int, parent: Optional[Assignment]
    ) -> Optional[MnrCsv]:
        if depth > self.settings.max_depth:
            return None
        anchor = {}
        if parent is not None:
            anchor = {sample_node: node for node, sample_node in parent.mapping.items()}
        csv = self.model.add_conditioner(
            _fresh_source(self.spn), target, polarity, depth, anchor
        )
        csv.state = SvState.ACTIVE
        csv.stats.record(True, True)
        self.assignments[csv.id] = Assignment({n: n for n in self.spn.nodes}, 0)
        return csv

    def explain(
        self,
        target: int,
        target_state: SvState,
        depth: int,
        parent: Optional[Assignment],
        may_create: bool,
    ) -> None:
        """Compute the conditioners of ``target`` and recurse into the observed ones."""
        if target_state not in (SvState.ACTIVE, SvState.INACTIVE):
            return
        conditioners = self.model.conditioners_of(target)
        fs = {c.id: self.assign(c, parent) for c in conditioners}
        satisfied = {c.id: fs[c.id].mismatch == 0 for c in conditioners}
        # polarity whose conditioners are expected to fire for this target state
        wanted = Polarity.POSITIVE if target_state is SvState.ACTIVE else Polarity.NEGATIVE

        for c in conditioners:
            if satisfied[c.id] and c.polarity is wanted:
                self.refine(c, fs[c.id])

        if not any(satisfied[c.id] for c in conditioners if c.polarity is wanted):
            candidates = [c for c in conditioners if c.polarity is wanted and c.unconditional]
            if candidates:
                best = min(candidates, key=lambda c: (fs[c.id].mismatch, c.id))
                ok, pre = self.refine(best, fs[best.id])
                satisfied[best.id] = ok
                if (
                    ok
                    and pre is not None
                    and self.settings.capture_pre_refinement
                    and best.depth < self.settings.max_depth
                ):
                    shared = {n: n for n in pre.nodes if n in best.source.nodes}
                    self.model.add_conditioner(
                        pre, best.id, Polarity.POSITIVE, best.depth + 1, shared
                    )

        for c in conditioners:
            effect = target_state is (
                SvState.ACTIVE if c.polarity is Polarity.POSITIVE else SvState.INACTIVE
            )
            c.stats.record(satisfied[c.id], effect)
            if not satisfied[c.id]:
                c.state = SvState.UNOBSERVED
                continue
            c.state = SvState.ACTIVE if effect else SvState.INACTIVE
            if c.state is SvState.INACTIVE:
                c.unconditional = False

        explained = any(satisfied[c.id] for c in conditioners if c.polarity is wanted)
        if not explained and may_create:
            self.new_from_sample(target, wanted, depth, parent)

        for c in conditioners:
            if c.state in (SvState.ACTIVE, SvState.INACTIVE):
                # conditional actives and all inactives may gain new conditioners
                creatable = c.state is SvState.INACTIVE or not c.unconditional
                self.explain(c.id, c.state, c.depth + 1, self.assignments[c.id], creatable)


@varsel_trace(name="mnr.learn_sample")
def learn_sample(model: MnrModel, spn: StatePolynetwork, label: int) -> MnrModel:
    """Learn one labelled sample, then prune insignificant conditioners."""
    if model.keys is None:
        model.keys = spn.keys()
    elif set(model.keys) != set(spn.keys()):
        raise ContractViolationError(
            f"sample SPN keys {sorted(spn.keys())} differ from model keys {sorted(model.keys)}"
        )
    model.ensure_class(label)
    model.samples_seen += 1
    learning = _Learning(model, spn)
    for cls in sorted(model.classes.values(), key=lambda c: c.label):
        active = cls.label == label
        cls.state = SvState.ACTIVE if active else SvState.INACTIVE
        cls.n_incidence += active
        learning.explain(cls.id, cls.state, 0, None, may_create=active)
    if model.settings.filter_enabled:
        filter_insignificant(model, model.settings.t_sign)
    return model


def filter_insignificant(model: MnrModel, t_sign: float) -> list[int]:
    """Drop conditioners with P(SS(C)|effect) < t_sign, with everything upstream of them.

    A conditioner is judged once it has seen enough effects for a single concurrence to
    clear the threshold. The last conditioner of a class is never removed.
    """
    if not 0.0 < t_sign < 1.0:
        raise ValueError("t_sign must lie in (0, 1)")
    min_effects = math.ceil(1.0 / t_sign)
    removed: list[int] = []
    for csv_id in sorted(model.csvs):
        csv = model.csvs.get(csv_id)
        if csv is None or csv.stats.n_effect < min_effects:
            continue
        ratio = csv.stats.p_ss_given_effect()
        if ratio is None or ratio >= t_sign:
            continue
        cls = model.class_by_id(csv.target)
        if cls is not None and len([c for c in cls.conditioners if c in model.csvs]) <= 1:
            continue
        dropped = model.remove_conditioner(csv_id)
        logger.debug("removed insignificant %s and %d upstream", csv.name, len(dropped) - 1)
        removed += dropped
    return removed


class _Prediction:
    def __init__(self, model: MnrModel, spn: StatePolynetwork):
        self.model = model
        self.spn = spn

    def probability(self, csv: MnrCsv, parent: Optional[Assignment]) -> Optional[float]:
        """Activation probability of csv, or None when its source is not satisfied."""
        settings = self.model.settings
        f = generate_assignments(
            csv.source,
            self.spn,
            settings.population,
            self.model.rng,
            seed=_seed_from(csv, parent),
            temperature=settings.softmax_temperature,
        )
        if f.mismatch > 0:
            return None
        own = csv.stats.p_effect_given_ss()
        conditioners = self.model.conditioners_of(csv.id)
        if not conditioners:
            return own
        pos, neg = [], []
        for c in conditioners:
            p = self.probability(c, f)
            if p is not None:
                (pos if c.polarity is Polarity.POSITIVE else neg).append(p)
        p_pos = max(pos) if pos else own
        p_neg = max(neg) if neg else 0.0
        return (1.0 - p_neg) * p_pos


@varsel_trace(name="mnr.predict")
def predict(model: MnrModel, spn: StatePolynetwork) -> dict[int, float]:
    """Per-class scores: the best probability over each class's positive conditioners."""
    if not model.classes:
        raise ContractViolationError("model has no classes")
    if model.keys is not None and set(model.keys) != set(spn.keys()):
        raise ContractViolationError(
            f"sample SPN keys {sorted(spn.keys())} differ from model keys {sorted(model.keys)}"
        )
    prediction = _Prediction(model, spn)
    scores = {}
    for label, cls in sorted(model.classes.items()):
        probs = [
            prediction.probability(c, None)
            for c in model.conditioners_of(cls.id)
            if c.polarity is Polarity.POSITIVE
        ]
        scores[label] = max((p for p in probs if p is not None), default=0.0)
    return scores


def predicted_label(scores: dict[int, float]) -> Optional[int]:
    """Arg-max label, or None (abstain) when every score is 0."""
    if not scores or max(scores.values()) <= 0.0:
        return None
    return max(sorted(scores), key=lambda label: scores[label])