"""Quantile categorisation of continuous variables and dummy encoding.

Intervals are left-closed: ``(-inf, c1), [c1, c2), ..., [ck, inf)``.  The
lowest interval (or first level group for categorical variables) is the
reference category and gets no dummy column.
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Mapping, Sequence

import numpy as np

from .survival import CATEGORICAL, CONTINUOUS, SurvivalDataset

log = logging.getLogger(__name__)

DEFAULT_PERCENTILES = (20, 40, 60, 80)


def fmt_number(x: float) -> str:
    return f"{x:g}"


@dataclass(frozen=True)
class LocalCutoffs:
    variable: str
    raw: tuple  # one nearest-rank quantile per requested percentile
    cutoffs: tuple  # usable: deduplicated, each leaves a nonempty lower interval
    degenerate: bool

    def padded(self) -> tuple | None:
        """Position-aligned cutoffs for unification.

        Positions removed by deduplication contribute the surviving cutoff
        nearest in value (lower one on ties).
        """
        if self.degenerate:
            return None
        kept = np.asarray(self.cutoffs)
        out = []
        for r in self.raw:
            k = int(np.argmin(np.abs(kept - r)))
            out.append(float(kept[k]))
        return tuple(out)


def nearest_rank_quantile(sorted_values: np.ndarray, q: float) -> float:
    n = sorted_values.size
    r = math.ceil(Fraction(q) * n / 100)
    r = min(max(r, 1), n)
    return float(sorted_values[r - 1])


def local_quantile_cutoffs(data: SurvivalDataset, variable: str,
                           percentiles: Sequence[float] = DEFAULT_PERCENTILES) -> LocalCutoffs:
    """Nearest-rank quantile cutoffs of one continuous variable at one site.

    A cutoff equal to the sample minimum would leave an empty lowest
    interval, so it is not usable; a constant column has no usable cutoffs
    and is flagged degenerate.
    """
    if data.kind(variable) != CONTINUOUS:
        raise ValueError(f"{variable} is not continuous")
    _check_percentiles(percentiles)
    if data.n < len(percentiles) + 1:
        raise ValueError(f"need at least {len(percentiles) + 1} records for {variable}")
    x = np.sort(data.column(variable))
    raw = tuple(nearest_rank_quantile(x, q) for q in percentiles)
    usable = tuple(float(c) for c in np.unique(raw) if c > x[0])
    return LocalCutoffs(variable, raw, usable, degenerate=len(usable) == 0)


def _check_percentiles(percentiles):
    p = list(percentiles)
    if not p or any(not 0 < q < 100 for q in p) or any(b <= a for a, b in zip(p, p[1:])):
        raise ValueError(f"percentiles must be strictly increasing in (0, 100): {p}")


def unify_cutoffs(local: Sequence, weights) -> tuple:
    """Weighted position-wise average of per-site cutoffs.

    Parameters
    ----------
    local : sequence
        One entry per site: a ``LocalCutoffs`` (its padded form is used), a
        plain sequence of cutoff values, or ``None`` for a site with no usable
        cutoffs.  Excluded sites have their weight spread over the rest.
    weights : SiteWeights or sequence of floats
    """
    w = np.asarray(getattr(weights, "weights", weights), dtype=float)
    if w.size != len(local):
        raise ValueError(f"{w.size} weights for {len(local)} sites")
    vecs, ws = [], []
    for entry, wj in zip(local, w):
        if isinstance(entry, LocalCutoffs):
            entry = entry.padded()
        if entry is None or len(entry) == 0:
            continue
        vecs.append(np.asarray(entry, dtype=float))
        ws.append(wj)
    if not vecs:
        log.warning("no site has usable cutoffs; variable left untransformed")
        return ()
    if len({v.size for v in vecs}) != 1:
        raise ValueError("sites supplied different numbers of cutoffs; pad them first")
    ws = np.asarray(ws)
    if ws.sum() <= 0:
        ws = np.ones_like(ws)
    ws = ws / ws.sum()
    V = np.vstack(vecs)
    unified = np.zeros(V.shape[1])
    for j in range(V.shape[0]):
        unified = unified + ws[j] * V[j]
    lo, hi = V.min(axis=0), V.max(axis=0)
    unified = np.where(lo == hi, lo, np.clip(unified, lo, hi))
    return tuple(float(c) for c in np.unique(unified))


@dataclass(frozen=True)
class CutoffScheme:
    """Per-variable category definitions.

    ``cutoffs[v]`` for continuous variables; ``groups[v]`` for categorical
    variables (tuple of level groups, first group is the reference).
    """

    variables: tuple
    cutoffs: Mapping = field(default_factory=dict)
    groups: Mapping = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "variables", tuple(self.variables))
        cut = {v: tuple(float(c) for c in cs) for v, cs in self.cutoffs.items()}
        grp = {v: tuple(tuple(float(x) for x in g) for g in gs) for v, gs in self.groups.items()}
        for v in self.variables:
            if (v in cut) == (v in grp):
                raise ValueError(f"variable {v} must be exactly one of continuous/categorical")
        for v, cs in cut.items():
            if any(b <= a for a, b in zip(cs, cs[1:])):
                raise ValueError(f"cutoffs for {v} must be strictly increasing")
        for v, gs in grp.items():
            if not gs:
                raise ValueError(f"categorical {v} has no levels")
        object.__setattr__(self, "cutoffs", cut)
        object.__setattr__(self, "groups", grp)

    def kind(self, v: str) -> str:
        return CONTINUOUS if v in self.cutoffs else CATEGORICAL

    def n_categories(self, v: str) -> int:
        return len(self.cutoffs[v]) + 1 if v in self.cutoffs else len(self.groups[v])

    def labels(self, v: str) -> list[str]:
        if v in self.cutoffs:
            cs = self.cutoffs[v]
            if not cs:
                return ["all"]
            f = [fmt_number(c) for c in cs]
            return [f"<{f[0]}"] + [f"[{a},{b})" for a, b in zip(f, f[1:])] + [f">={f[-1]}"]
        return [",".join(fmt_number(x) for x in g) for g in self.groups[v]]

    def assign(self, v: str, values) -> np.ndarray:
        """0-based category index of each value."""
        values = np.asarray(values, dtype=float)
        if v in self.cutoffs:
            return np.searchsorted(np.asarray(self.cutoffs[v]), values, side="right")
        out = np.full(values.shape, -1, dtype=np.intp)
        for k, g in enumerate(self.groups[v]):
            out[np.isin(values, g)] = k
        if np.any(out < 0):
            bad = np.unique(values[out < 0])
            raise ValueError(f"unknown level(s) {bad.tolist()} for {v}")
        return out

    def restrict(self, variables: Sequence[str]) -> "CutoffScheme":
        return CutoffScheme(tuple(variables),
                            {v: self.cutoffs[v] for v in variables if v in self.cutoffs},
                            {v: self.groups[v] for v in variables if v in self.groups})

    def merge_boundaries(self, v: str, boundaries: Sequence[int]) -> "CutoffScheme":
        """Remove the boundaries between category ``i`` and ``i + 1`` for each i given."""
        drop = set(boundaries)
        if not drop:
            return self
        cut = dict(self.cutoffs)
        grp = dict(self.groups)
        if v in cut:
            cut[v] = tuple(c for i, c in enumerate(cut[v]) if i not in drop)
        else:
            merged, cur = [], list(grp[v][0])
            for i, g in enumerate(grp[v][1:]):
                if i in drop:
                    cur.extend(g)
                else:
                    merged.append(tuple(cur))
                    cur = list(g)
            merged.append(tuple(cur))
            grp[v] = tuple(merged)
        return CutoffScheme(self.variables, cut, grp)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["variable", "position", "cutoff", "kind"])
            for v in self.variables:
                if v in self.cutoffs:
                    if not self.cutoffs[v]:
                        w.writerow([v, "", "", CONTINUOUS])
                    for i, c in enumerate(self.cutoffs[v], start=1):
                        w.writerow([v, i, repr(c), CONTINUOUS])
                else:
                    for i, g in enumerate(self.groups[v], start=1):
                        for x in g:
                            w.writerow([v, i, repr(x), CATEGORICAL])

    @classmethod
    def from_csv(cls, path) -> "CutoffScheme":
        order, cut, grp = [], {}, {}
        with open(path, newline="") as fh:
            for row in csv.DictReader(fh):
                v = row["variable"]
                if v not in order:
                    order.append(v)
                if row["kind"] == CONTINUOUS:
                    cut.setdefault(v, [])
                    if row["cutoff"] != "":
                        cut[v].append(float(row["cutoff"]))
                else:
                    gs = grp.setdefault(v, {})
                    gs.setdefault(int(row["position"]), []).append(float(row["cutoff"]))
        groups = {v: [gs[k] for k in sorted(gs)] for v, gs in grp.items()}
        return cls(tuple(order), cut, groups)


def categorical_levels(datasets: Sequence[SurvivalDataset], variable: str) -> tuple:
    """Sorted union of observed levels; each level starts as its own group."""
    levels = np.unique(np.concatenate([d.column(variable) for d in datasets]))
    return tuple((float(x),) for x in levels)


def design_columns(scheme: CutoffScheme, variables: Sequence[str] | None = None) -> list:
    variables = scheme.variables if variables is None else variables
    return [(v, c) for v in variables for c in range(1, scheme.n_categories(v))]


def column_name(v: str, c: int) -> str:
    return f"{v}[{c}]"


@dataclass(frozen=True, eq=False)
class CategoricalDesign:
    scheme: CutoffScheme
    variables: tuple
    categories: np.ndarray  # (n, V) 0-based category per variable
    matrix: np.ndarray  # (n, n_columns) dummy encoding
    columns: tuple  # (variable, category) per matrix column

    @property
    def column_names(self) -> list[str]:
        return [column_name(v, c) for v, c in self.columns]

    def dataset(self, data: SurvivalDataset) -> SurvivalDataset:
        """The survival data re-expressed on the dummy columns."""
        return data.with_covariates(self.matrix, self.column_names)


def categorize(data: SurvivalDataset, scheme: CutoffScheme,
               variables: Sequence[str] | None = None) -> CategoricalDesign:
    variables = tuple(scheme.variables if variables is None else variables)
    cats = np.column_stack([scheme.assign(v, data.column(v)) for v in variables]) \
        if variables else np.zeros((data.n, 0), dtype=np.intp)
    cols = design_columns(scheme, variables)
    M = np.zeros((data.n, len(cols)))
    pos = {v: k for k, v in enumerate(variables)}
    for j, (v, c) in enumerate(cols):
        M[:, j] = cats[:, pos[v]] == c
    return CategoricalDesign(scheme, variables, cats, M, tuple(cols))


def _per_variable(beta, columns, scheme, variables):
    beta = np.asarray(beta, dtype=float).reshape(-1)
    if beta.size != len(columns):
        raise ValueError(f"{beta.size} coefficients for {len(columns)} design columns")
    out = {v: np.zeros(scheme.n_categories(v)) for v in variables}
    for b, (v, c) in zip(beta, columns):
        out[v][c] = b
    return out


def merge_similar_categories(design: CategoricalDesign, fit, epsilon: float = 0.1) -> CutoffScheme:
    """One pass merging neighbouring categories with near-equal effects.

    ``fit`` is a ``CoxFit`` or a coefficient vector aligned with
    ``design.columns``; the reference category counts as 0.  Every boundary
    whose two sides differ by less than ``epsilon`` is removed.
    """
    beta = getattr(fit, "beta_hat", fit)
    coefs = _per_variable(beta, design.columns, design.scheme, design.variables)
    scheme = design.scheme
    for v in design.variables:
        b = coefs[v]
        drop = [i for i in range(b.size - 1) if abs(b[i + 1] - b[i]) < epsilon]
        scheme = scheme.merge_boundaries(v, drop)
    return scheme


def category_event_counts(data: SurvivalDataset, scheme: CutoffScheme) -> dict:
    """Events per category for every scheme variable (a site-level aggregate)."""
    out = {}
    for v in scheme.variables:
        k = scheme.assign(v, data.column(v))
        out[v] = np.bincount(k[data.event == 1], minlength=scheme.n_categories(v)).astype(int)
    return out


def merge_sparse_categories(scheme: CutoffScheme, site_counts: Sequence[dict],
                            min_events: int = 1) -> CutoffScheme:
    """Merge categories holding fewer than ``min_events`` events at any site.

    The sparsest offending category is folded into whichever neighbour has
    fewer events at its worst site, until every category qualifies or only
    one remains.  A lone category leaves the variable with no dummy columns.
    """
    for v in scheme.variables:
        counts = np.vstack([np.asarray(c[v]) for c in site_counts])
        boundaries = list(range(counts.shape[1] - 1))  # original boundary ids still present
        while counts.shape[1] > 1:
            worst = counts.min(axis=0)
            bad = np.flatnonzero(worst < min_events)
            if bad.size == 0:
                break
            i = int(bad[np.argmin(worst[bad])])
            if i == 0:
                j = 1
            elif i == counts.shape[1] - 1:
                j = i - 1
            else:
                j = i - 1 if worst[i - 1] <= worst[i + 1] else i + 1
            lo = min(i, j)
            counts = np.column_stack([counts[:, :lo], counts[:, lo] + counts[:, lo + 1],
                                      counts[:, lo + 2:]])
            removed = boundaries.pop(lo)
            log.info("merged sparse categories of %s at boundary %d", v, removed)
        keep = set(boundaries)
        drop = [b for b in range(scheme.n_categories(v) - 1) if b not in keep]
        scheme = scheme.merge_boundaries(v, drop)
    return scheme
