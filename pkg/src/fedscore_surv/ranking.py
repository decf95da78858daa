"""Per-site variable importance and weighted aggregation of local ranks."""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .forest import ForestConfig, random_forest_vimp
from .survival import SurvivalDataset

log = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class VariableRanking:
    """Local ranking at one site; ``ranks[k]`` is 1 for the most important variable."""

    site_id: int
    variables: tuple
    importance: np.ndarray
    ranks: np.ndarray

    def __post_init__(self):
        ranks = np.asarray(self.ranks, dtype=int)
        if sorted(ranks.tolist()) != list(range(1, len(self.variables) + 1)):
            raise ValueError("ranks must be a permutation of 1..P")
        object.__setattr__(self, "ranks", ranks)
        object.__setattr__(self, "importance", np.asarray(self.importance, dtype=float))
        object.__setattr__(self, "variables", tuple(self.variables))

    @property
    def ordered(self) -> list[str]:
        return ordered_variables(self.variables, self.ranks)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["variable", "vimp", "rank"])
            for v, imp, r in zip(self.variables, self.importance, self.ranks):
                w.writerow([v, repr(float(imp)), int(r)])

    @classmethod
    def from_csv(cls, path, site_id: int = 0) -> "VariableRanking":
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        return cls(site_id, [r["variable"] for r in rows],
                   [float(r["vimp"]) for r in rows], [int(r["rank"]) for r in rows])


@dataclass(frozen=True, eq=False)
class SiteWeights:
    weights: np.ndarray = field()

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float).reshape(-1)
        if w.size == 0 or np.any(w < 0) or not np.all(np.isfinite(w)) or w.sum() <= 0:
            raise ValueError(f"invalid site weights {self.weights!r}")
        w = w / w.sum()
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    @classmethod
    def from_sample_sizes(cls, sizes: Sequence[int]) -> "SiteWeights":
        return cls(np.asarray(sizes, dtype=float))

    def __len__(self):
        return self.weights.size

    def __iter__(self):
        return iter(self.weights.tolist())


def ordered_variables(variables: Sequence[str], ranks) -> list[str]:
    order = np.argsort(np.asarray(ranks), kind="stable")
    return [variables[i] for i in order]


def ranks_from_scores(scores, descending: bool = True) -> np.ndarray:
    """Dense 1..P ranks; ties keep input order."""
    scores = np.asarray(scores, dtype=float)
    order = np.argsort(-scores if descending else scores, kind="stable")
    ranks = np.empty(scores.size, dtype=int)
    ranks[order] = np.arange(1, scores.size + 1)
    return ranks


@dataclass(frozen=True)
class CollinearityReport:
    pairs: list  # (var_a, var_b, r) sorted by |r| descending
    degenerate: list  # zero-variance variables


def multicollinearity_screen(data: SurvivalDataset, threshold: float = 0.8) -> CollinearityReport:
    """Flag variable pairs whose absolute Pearson correlation exceeds ``threshold``."""
    if data.p < 2:
        raise ValueError("need at least two variables to screen")
    X = data.X
    sd = X.std(axis=0)
    degenerate = [v for v, s in zip(data.variable_names, sd) if s == 0]
    ok = np.flatnonzero(sd > 0)
    pairs = []
    if ok.size >= 2:
        R = np.corrcoef(X[:, ok], rowvar=False)
        for a in range(ok.size):
            for b in range(a + 1, ok.size):
                r = float(np.clip(R[a, b], -1.0, 1.0))
                if abs(r) > threshold:
                    pairs.append((data.variable_names[ok[a]], data.variable_names[ok[b]], r))
    pairs.sort(key=lambda t: -abs(t[2]))
    return CollinearityReport(pairs, degenerate)


def rsf_importance(data: SurvivalDataset, config: ForestConfig | None = None) -> VariableRanking:
    """Rank variables by random-survival-forest permutation importance."""
    config = config or ForestConfig()
    if data.p == 1:
        # nothing to compare against, no forest needed
        return VariableRanking(data.site_id, data.variable_names, [float("nan")], [1])
    res = random_forest_vimp(data, config)
    return VariableRanking(data.site_id, data.variable_names, res.importance,
                           ranks_from_scores(res.importance))


def aggregate_ranks(local: Sequence[VariableRanking], weights: SiteWeights) -> np.ndarray:
    """Global ranks from the weighted sum of local ranks.

    Variables are ordered by ascending ``sum_j w_j q_j``.  Ties go to the
    variable ranked better at the highest-weight site (lowest index among
    equal weights), then to input order.

    Returns
    -------
    np.ndarray
        Global rank of each variable, aligned with ``local[0].variables``.
    """
    if not local:
        raise ValueError("no local rankings")
    if len(weights) != len(local):
        raise ValueError(f"{len(weights)} weights for {len(local)} sites")
    variables = local[0].variables
    for r in local[1:]:
        if set(r.variables) != set(variables) or len(r.variables) != len(variables):
            raise ValueError("local rankings cover different variable sets")
    q = np.array([[dict(zip(r.variables, r.ranks))[v] for v in variables] for r in local],
                 dtype=float)
    w = weights.weights
    total = np.zeros(len(variables))
    for j in range(len(local)):
        total = total + w[j] * q[j]
    total = np.round(total, 12)
    top = int(np.argmax(w))
    keys = sorted(range(len(variables)), key=lambda k: (total[k], q[top, k], k))
    ranks = np.empty(len(variables), dtype=int)
    ranks[keys] = np.arange(1, len(variables) + 1)
    return ranks
