"""Per-(CSV, target) event counts and the normalized causal effect (NCE)."""

import logging
from dataclasses import dataclass
from typing import Optional

from .sv_core import Model, SvState

logger = logging.getLogger(__name__)


@dataclass
class NceStats:
    n_observed: int = 0
    n_incidence: int = 0
    n_ss: int = 0
    n_concurrence: int = 0

    def record(self, ss: bool, target_state: SvState) -> "NceStats":
        """Count one step. Steps with an unobserved target leave every counter untouched."""
        if target_state is SvState.UNOBSERVED:
            return self
        active = target_state is SvState.ACTIVE
        self.n_observed += 1
        self.n_incidence += active
        self.n_ss += ss
        self.n_concurrence += ss and active
        return self

    def copy(self) -> "NceStats":
        return NceStats(self.n_observed, self.n_incidence, self.n_ss, self.n_concurrence)

    def merge(self, other: "NceStats") -> None:
        self.n_observed += other.n_observed
        self.n_incidence += other.n_incidence
        self.n_ss += other.n_ss
        self.n_concurrence += other.n_concurrence


def nce(stats: NceStats) -> Optional[float]:
    """(P(I|SS) - P(I)) / P(I), or None when any of the ratios is undefined."""
    if stats.n_observed == 0 or stats.n_ss == 0 or stats.n_incidence == 0:
        return None
    p_incidence = stats.n_incidence / stats.n_observed
    p_given_ss = stats.n_concurrence / stats.n_ss
    return (p_given_ss - p_incidence) / p_incidence


def apply_significance_policy(model: Model, threshold: float) -> set[int]:
    """Block CSVs with a defined |NCE| below ``threshold`` against any target.

    Blocking is re-evaluated every call, so a CSV whose NCE recovers is unblocked.
    """
    if threshold <= 0:
        raise ValueError("threshold must be positive")
    blocked: set[int] = set()
    for csv_id, csv in model.csvs.items():
        values = [nce(csv.stats[t]) for t in sorted(csv.targets) if t in csv.stats]
        is_blocked = any(v is not None and abs(v) < threshold for v in values)
        if is_blocked != csv.blocked:
            logger.debug("%s %s", "blocking" if is_blocked else "unblocking", csv.name)
        csv.blocked = is_blocked
        if is_blocked:
            blocked.add(csv_id)
    return blocked
