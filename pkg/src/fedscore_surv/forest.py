"""Random survival forest with log-rank splitting and permutation VIMP."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from .errors import DegenerateForestError
from .streams import stream
from .survival import SurvivalDataset


@dataclass(frozen=True)
class ForestConfig:
    n_trees: int = 500
    mtry: int | None = None  # None -> ceil(sqrt(p))
    min_node_events: int = 3
    min_node_size: int = 15
    min_leaf_size: int = 5
    max_cuts: int = 32
    seed: int = 0


@dataclass(eq=False)
class SurvivalTree:
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    mortality: np.ndarray  # leaf value; meaningless for internal nodes

    @property
    def is_stump(self) -> bool:
        return self.feature.shape[0] == 1

    def apply(self, X: np.ndarray) -> np.ndarray:
        node = np.zeros(X.shape[0], dtype=np.intp)
        rows = np.arange(X.shape[0])
        active = self.feature[node] >= 0
        while active.any():
            r = rows[active]
            nd = node[active]
            go_left = X[r, self.feature[nd]] <= self.threshold[nd]
            node[active] = np.where(go_left, self.left[nd], self.right[nd])
            active = self.feature[node] >= 0
        return node

    def predict(self, X: np.ndarray) -> np.ndarray:
        return self.mortality[self.apply(X)]


def _thin_index(m: int, k: int, max_cuts: int) -> int:
    # round-half-up of k * (m - 1) / (max_cuts - 1) in integer arithmetic
    return (2 * k * (m - 1) + (max_cuts - 1)) // (2 * (max_cuts - 1))


def candidate_cuts(values: np.ndarray, max_cuts: int) -> np.ndarray:
    """Midpoints between distinct sorted values, thinned to ``max_cuts``."""
    u = np.unique(values)
    if u.size < 2:
        return u[:0]
    mids = 0.5 * (u[:-1] + u[1:])
    if mids.size > max_cuts:
        pick = np.unique([_thin_index(mids.size, k, max_cuts) for k in range(max_cuts)])
        mids = mids[pick]
    return mids


@njit(cache=True)
def _logrank_stat(col, cut, rn, dn):
    """Two-sample log-rank chi-square for ``col <= cut`` vs the rest.

    Rows are sorted by time rank ``rn``; swept from the latest time backwards
    so the risk sets accumulate.
    """
    m = col.shape[0]
    N = 0.0
    NL = 0.0
    diff = 0.0
    var = 0.0
    i = m - 1
    while i >= 0:
        r = rn[i]
        cnt = 0.0
        cnt_l = 0.0
        D = 0.0
        DL = 0.0
        j = i
        while j >= 0 and rn[j] == r:
            cnt += 1.0
            D += dn[j]
            if col[j] <= cut:
                cnt_l += 1.0
                DL += dn[j]
            j -= 1
        N += cnt
        NL += cnt_l
        if D > 0:
            f = NL / N
            diff += DL - f * D
            if N > 1:
                var += D * (N - D) / (N - 1.0) * f * (1.0 - f)
        i = j
    if var > 0:
        return diff * diff / var
    return 0.0


@njit(cache=True)
def _best_split_nb(Xn, rn, dn, variables, max_cuts, min_leaf):
    m = Xn.shape[0]
    best_stat = 0.0
    best_var = -1
    best_cut = 0.0
    for v in variables:
        col = Xn[:, v].copy()
        u = np.unique(col)
        if u.size < 2:
            continue
        mids = 0.5 * (u[:-1] + u[1:])
        M = mids.size
        n_c = M if M <= max_cuts else max_cuts
        last = -1
        for k in range(n_c):
            if M <= max_cuts:
                ci = k
            else:
                ci = (2 * k * (M - 1) + (max_cuts - 1)) // (2 * (max_cuts - 1))
            if ci == last:
                continue
            last = ci
            cut = mids[ci]
            nleft = 0
            for i in range(m):
                if col[i] <= cut:
                    nleft += 1
            if nleft < min_leaf or m - nleft < min_leaf:
                continue
            stat = _logrank_stat(col, cut, rn, dn)
            if stat > best_stat:
                best_stat = stat
                best_var = v
                best_cut = cut
    return best_var, best_cut, best_stat


@njit(cache=True)
def _leaf_mortality(ranks, d, tail_count):
    """Sum of the leaf's Nelson-Aalen cumulative hazard over the event-time grid.

    ``ranks`` (sorted) index the global distinct times; ``tail_count[r]`` is
    the number of grid times >= time r.
    """
    m = ranks.shape[0]
    total = 0.0
    i = 0
    while i < m:
        r = ranks[i]
        deaths = 0.0
        j = i
        while j < m and ranks[j] == r:
            deaths += d[j]
            j += 1
        if deaths > 0:
            total += deaths / (m - i) * tail_count[r]
        i = j
    return total


def grow_tree(X, ranks, d, rng, mtry, cfg: ForestConfig, tail_count) -> SurvivalTree:
    """Grow one tree on rows already sorted by time (``ranks`` nondecreasing)."""
    p = X.shape[1]
    feature, threshold, left_c, right_c, mort = [], [], [], [], []

    def new_node():
        feature.append(-1)
        threshold.append(0.0)
        left_c.append(-1)
        right_c.append(-1)
        mort.append(0.0)
        return len(feature) - 1

    root = new_node()
    stack = [(root, np.arange(X.shape[0]))]
    while stack:
        node, idx = stack.pop()
        dn = d[idx]
        rn = ranks[idx]
        split = None
        if idx.size >= cfg.min_node_size and dn.sum() >= cfg.min_node_events:
            var, cut, stat = _best_split_nb(X[idx], rn, dn, rng.choice(p, size=mtry, replace=False),
                                            cfg.max_cuts, cfg.min_leaf_size)
            if var >= 0:
                split = (var, cut)
        if split is None:
            mort[node] = _leaf_mortality(rn, dn, tail_count)
            continue
        var, cut = split
        go_left = X[idx, var] <= cut
        feature[node] = var
        threshold[node] = cut
        lnode, rnode = new_node(), new_node()
        left_c[node], right_c[node] = lnode, rnode
        stack.append((rnode, idx[~go_left]))
        stack.append((lnode, idx[go_left]))
    return SurvivalTree(np.array(feature, dtype=np.intp), np.array(threshold),
                        np.array(left_c, dtype=np.intp), np.array(right_c, dtype=np.intp),
                        np.array(mort))


def harrell_c(time, event, risk) -> float:
    """Harrell's concordance; higher risk should mean earlier event."""
    time = np.asarray(time, dtype=float)
    event = np.asarray(event).astype(bool)
    risk = np.asarray(risk, dtype=float)
    ti = time[event][:, None]
    ri = risk[event][:, None]
    comparable = ti < time[None, :]
    n_pairs = comparable.sum()
    if n_pairs == 0:
        return float("nan")
    conc = ((ri > risk[None, :]) & comparable).sum() + 0.5 * ((ri == risk[None, :]) & comparable).sum()
    return float(conc / n_pairs)


@dataclass(eq=False)
class ForestResult:
    importance: np.ndarray
    oob_error: float
    n_stumps: int


def canonical_order(data: SurvivalDataset) -> np.ndarray:
    """Record order that does not depend on how the rows arrived."""
    keys = [data.X[:, k] for k in range(data.p - 1, -1, -1)] + [data.event, data.time]
    return np.lexsort(keys)


def random_forest_vimp(data: SurvivalDataset, cfg: ForestConfig) -> ForestResult:
    """Grow a survival forest and return permutation importance per variable.

    Importance is the rise in OOB error, 1 - Harrell's C of the ensemble
    mortality, after permuting a variable's OOB values tree by tree.
    """
    if data.n_events < 2:
        raise DegenerateForestError("need at least 2 events to grow a forest")
    canon = data.subset(canonical_order(data))
    n, p = canon.n, canon.p
    X = canon.X
    uniq, ranks = np.unique(canon.time, return_inverse=True)
    grid_ranks = np.unique(ranks[canon.event == 1])
    tail_count = grid_ranks.size - np.searchsorted(grid_ranks, np.arange(uniq.size), side="left")
    d = canon.event.astype(float)
    mtry = cfg.mtry or math.ceil(math.sqrt(p))
    mtry = min(mtry, p)

    oob_sum = np.zeros(n)
    oob_cnt = np.zeros(n)
    perm_sum = np.zeros((p, n))
    stumps = 0
    for b in range(cfg.n_trees):
        rng = stream(cfg.seed, "tree", b)
        boot = np.sort(rng.integers(0, n, size=n))
        # canonical rows are not time-sorted; order the bootstrap by time rank
        boot = boot[np.argsort(ranks[boot], kind="stable")]
        tree = grow_tree(X[boot], ranks[boot], d[boot], rng, mtry, cfg, tail_count)
        if tree.is_stump:
            stumps += 1
        inbag = np.zeros(n, dtype=bool)
        inbag[boot] = True
        oob = np.flatnonzero(~inbag)
        if oob.size == 0:
            continue
        Xo = X[oob]
        oob_sum[oob] += tree.predict(Xo)
        oob_cnt[oob] += 1
        stacked = np.repeat(Xo[None, :, :], p, axis=0)
        for k in range(p):
            stacked[k, :, k] = Xo[rng.permutation(oob.size), k]
        perm_sum[:, oob] += tree.predict(stacked.reshape(-1, p)).reshape(p, oob.size)
    if stumps == cfg.n_trees:
        raise DegenerateForestError()
    seen = oob_cnt > 0
    t, e = canon.time[seen], canon.event[seen]
    base = 1.0 - harrell_c(t, e, oob_sum[seen] / oob_cnt[seen])
    vimp = np.empty(p)
    for k in range(p):
        vimp[k] = (1.0 - harrell_c(t, e, perm_sum[k, seen] / oob_cnt[seen])) - base
    return ForestResult(vimp, base, stumps)
