"""Time-dependent discrimination, bootstrap intervals and parsimony-based model selection."""
from __future__ import annotations

import csv
import logging
import warnings
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import FedScoreError, UnstableMetricError
from .streams import stream
from .survival import SurvivalDataset, _time_event, censoring_km, kaplan_meier

log = logging.getLogger(__name__)

_CHUNK = 256


def auc_curve(scores, data, times) -> np.ndarray:
    """Cumulative/dynamic AUC(t) with inverse-probability-of-censoring weights.

    Cases at ``t`` have an event at or before ``t`` and are weighted by
    ``1 / G(T_i-)``, with ``G`` the Kaplan-Meier estimate of the censoring
    distribution; controls are still under observation after ``t``.  Score
    ties count one half.  Undefined points (no case or no control) are nan.
    """
    time, event = _time_event(data)
    s = np.asarray(scores, dtype=float).reshape(-1)
    if s.size != time.size:
        raise ValueError(f"{s.size} scores for {time.size} subjects")
    times = np.atleast_1d(np.asarray(times, dtype=float))
    order = np.argsort(time, kind="stable")
    ts, es, ss = time[order], event[order], s[order]
    n = ts.size
    k = np.searchsorted(ts, times, side="right")  # positions >= k are controls
    n_ctrl = n - k
    case_pos = np.flatnonzero(es == 1)
    out = np.full(times.size, np.nan)
    if case_pos.size == 0:
        return out
    G = censoring_km(time, event)
    g = G.left_limit(ts[case_pos])
    w = np.zeros_like(g)
    np.divide(1.0, g, out=w, where=g > 0)
    num = np.zeros(times.size)
    den = np.zeros(times.size)
    for a in range(0, case_pos.size, _CHUNK):
        pos = case_pos[a:a + _CHUNK]
        sc = ss[pos][:, None]
        C = (sc > ss[None, :]) + 0.5 * (sc == ss[None, :])
        R = np.zeros((pos.size, n + 1))
        R[:, :n] = np.cumsum(C[:, ::-1], axis=1)[:, ::-1]
        active = pos[:, None] < k[None, :]
        wa = w[a:a + _CHUNK][:, None] * active
        num += (wa * R[:, k]).sum(axis=0)
        den += wa.sum(axis=0)
    den = den * n_ctrl
    ok = den > 0
    out[ok] = num[ok] / den[ok]
    return out


def auc_at_time(scores, data, t: float) -> float:
    return float(auc_curve(scores, data, [t])[0])


def weighted_iauc(auc, weights) -> float:
    """Weighted mean of the defined AUC values, weights renormalised over them."""
    auc = np.asarray(auc, dtype=float)
    w = np.asarray(weights, dtype=float)
    ok = np.isfinite(auc)
    if not ok.any():
        raise FedScoreError("AUC(t) undefined at every grid point")
    wd = w[ok]
    if not wd.sum() > 0:
        return float(np.mean(auc[ok]))
    return float(np.sum(auc[ok] * wd) / wd.sum())


def default_grid(data, t_range: tuple | None = None) -> np.ndarray:
    """Distinct event times, optionally restricted to ``[lo, hi]``."""
    time, event = _time_event(data)
    grid = np.unique(time[event == 1])
    if t_range is not None:
        grid = grid[(grid >= t_range[0]) & (grid <= t_range[1])]
    return grid


def event_weights(data, grid) -> np.ndarray:
    """Increments of ``F = 1 - KM`` between consecutive grid points (from F(0) = 0)."""
    km = kaplan_meier(data)
    F = 1.0 - km(np.asarray(grid, dtype=float))
    return np.diff(np.concatenate([[0.0], F]))


def integrated_auc(scores, data, grid=None, weighting: str = "event",
                   t_range: tuple | None = None) -> float:
    """Integrated AUC over ``grid`` (distinct event times by default).

    ``weighting="event"`` weights AUC(t) by the increments of the event-time
    distribution; ``"uniform"`` integrates by the trapezoid rule over time.
    """
    grid = default_grid(data, t_range) if grid is None else np.asarray(grid, dtype=float)
    if grid.size == 0:
        raise FedScoreError("empty evaluation grid")
    auc = auc_curve(scores, data, grid)
    return _integrate(auc, grid, data, weighting)


def _integrate(auc, grid, data, weighting):
    if weighting == "event":
        return weighted_iauc(auc, event_weights(data, grid))
    if weighting == "uniform":
        ok = np.isfinite(auc)
        if not ok.any():
            raise FedScoreError("AUC(t) undefined at every grid point")
        t, a = grid[ok], auc[ok]
        if t.size == 1 or t[-1] == t[0]:
            return float(a.mean())
        return float(np.sum(0.5 * (a[1:] + a[:-1]) * np.diff(t)) / (t[-1] - t[0]))
    raise ValueError(f"unknown weighting {weighting!r}")


def _resample(data, idx):
    if isinstance(data, SurvivalDataset):
        return data.subset(idx)
    time, event = _time_event(data)
    return time[idx], event[idx]


def _n_subjects(data) -> int:
    return _time_event(data)[0].size


def bootstrap_replicates(scores, data, metric: Callable, n_boot: int = 200, seed: int = 0,
                         key: Sequence = ()) -> np.ndarray:
    """Metric over subject-level resamples; undefined replicates are nan.

    Replicate ``b`` draws from its own stream ``(seed, "bootstrap", *key, b)``.
    """
    scores = np.asarray(scores, dtype=float)
    n = _n_subjects(data)
    if n < 10:
        raise ValueError("bootstrap needs at least 10 subjects")
    reps = []
    for b in range(n_boot):
        idx = stream(seed, "bootstrap", *key, b).integers(0, n, size=n)
        try:
            val = metric(scores[idx], _resample(data, idx))
        except FedScoreError:
            val = np.nan
        reps.append(np.asarray(val, dtype=float))
    return np.array(reps)


def percentile_interval(reps, level: float = 0.95):
    if not 0 <= level < 1:
        raise ValueError("level must lie in [0, 1)")
    a = (1.0 - level) / 2.0
    return np.nanquantile(reps, a, axis=0), np.nanquantile(reps, 1.0 - a, axis=0)


def bootstrap_ci(scores, data, metric: Callable, n_boot: int = 200, level: float = 0.95,
                 seed: int = 0, key: Sequence = ()) -> tuple[float, float]:
    """Percentile bootstrap interval of a scalar metric."""
    reps = bootstrap_replicates(scores, data, metric, n_boot, seed, key)
    if np.mean(~np.isfinite(reps)) > 0.5:
        raise UnstableMetricError()
    lo, hi = percentile_interval(reps, level)
    return float(lo), float(hi)


@dataclass(eq=False)
class EvaluationReport:
    times: np.ndarray
    auc: np.ndarray
    ci_low: np.ndarray
    ci_high: np.ndarray
    iauc: float
    iauc_ci: tuple
    n_bootstrap: int
    grid: np.ndarray

    @property
    def auc_t(self) -> list[tuple]:
        return list(zip(self.times.tolist(), self.auc.tolist(), self.ci_low.tolist(),
                        self.ci_high.tolist()))

    def mean_ci_width(self, mask=None) -> float:
        width = self.ci_high - self.ci_low
        ok = np.isfinite(width) if mask is None else mask & np.isfinite(width)
        return float(np.mean(width[ok])) if ok.any() else float("nan")

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t", "auc", "ci_low", "ci_high"])
            for row in self.auc_t:
                w.writerow([_cell(x) for x in row])

    def summary(self) -> dict:
        return {"iauc": self.iauc, "iauc_ci_low": self.iauc_ci[0],
                "iauc_ci_high": self.iauc_ci[1], "n_bootstrap": self.n_bootstrap}


def _cell(x) -> str:
    return "" if not np.isfinite(x) else repr(float(x))


def evaluate_scores(scores, data: SurvivalDataset, times=None, grid=None,
                    t_range: tuple | None = None, n_boot: int = 200, level: float = 0.95,
                    seed: int = 0, key: Sequence = (), weighting: str = "event") -> EvaluationReport:
    """AUC(t) at ``times`` and iAUC over ``grid``, each with bootstrap intervals.

    ``times`` defaults to whole days ``1..ceil(max time)``; ``grid`` to the
    distinct event times inside ``t_range``.  Time points undefined in more
    than half the resamples get no interval.  Intervals are widened if needed
    so they contain the point estimate.
    """
    time, _ = _time_event(data)
    if times is None:
        times = np.arange(1, int(np.ceil(time.max())) + 1, dtype=float)
    times = np.asarray(times, dtype=float)
    grid = default_grid(data, t_range) if grid is None else np.asarray(grid, dtype=float)
    scores = np.asarray(scores, dtype=float)
    auc = auc_curve(scores, data, times)
    iauc = _integrate(auc_curve(scores, data, grid), grid, data, weighting)

    def metric(s, d):
        curve = auc_curve(s, d, times)
        try:
            ia = _integrate(auc_curve(s, d, grid), grid, d, weighting)
        except FedScoreError:
            ia = np.nan
        return np.concatenate([curve, [ia]])

    reps = bootstrap_replicates(scores, data, metric, n_boot, seed, key)
    bad = np.mean(~np.isfinite(reps), axis=0) > 0.5
    if bad[-1]:
        raise UnstableMetricError()
    with warnings.catch_warnings():
        # all-nan columns are expected for undefined time points
        warnings.simplefilter("ignore", RuntimeWarning)
        lo, hi = percentile_interval(reps, level)
    lo[bad] = np.nan
    hi[bad] = np.nan
    point = np.concatenate([auc, [iauc]])
    defined = np.isfinite(point) & ~bad
    lo[defined] = np.minimum(lo[defined], point[defined])
    hi[defined] = np.maximum(hi[defined], point[defined])
    lo[~np.isfinite(point)] = np.nan
    hi[~np.isfinite(point)] = np.nan
    return EvaluationReport(times, auc, lo[:-1], hi[:-1], iauc, (float(lo[-1]), float(hi[-1])),
                            n_boot, grid)


@dataclass(eq=False)
class ParsimonyCurve:
    """Validation performance as variables are added in global-rank order.

    ``variables[m-1]`` is the top-m set; ``phi[m-1, j]`` the mean fold iAUC
    at site j; ``psi[m-1] = sum_j w_j phi[m-1, j]``.
    """

    variables: list
    phi: np.ndarray
    psi: np.ndarray
    site_ids: tuple = ()

    @classmethod
    def from_values(cls, psi, variables: Sequence[str] | None = None) -> "ParsimonyCurve":
        psi = np.asarray(psi, dtype=float)
        names = list(variables) if variables is not None else [f"x{k + 1}" for k in range(psi.size)]
        return cls([tuple(names[:m]) for m in range(1, psi.size + 1)],
                   psi[:, None].copy(), psi.copy(), (0,))

    @property
    def ordered_variables(self) -> list[str]:
        return list(self.variables[-1]) if self.variables else []

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["m", "variable", "psi"] + [f"phi_site{s}" for s in self.site_ids])
            for m, vs in enumerate(self.variables, start=1):
                w.writerow([m, vs[-1], _cell(self.psi[m - 1])]
                           + [_cell(x) for x in self.phi[m - 1]])

    @classmethod
    def from_csv(cls, path) -> "ParsimonyCurve":
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        head, body = rows[0], rows[1:]
        sites = tuple(int(h[len("phi_site"):]) for h in head[3:])
        names = [r[1] for r in body]

        def num(x):
            return float(x) if x else np.nan
        psi = np.array([num(r[2]) for r in body])
        phi = np.array([[num(x) for x in r[3:]] for r in body]).reshape(len(body), len(sites))
        return cls([tuple(names[:m]) for m in range(1, len(names) + 1)], phi, psi, sites)


def select_model(curve: ParsimonyCurve, D: int = 10, delta: float = 0.01) -> tuple[int, tuple]:
    """Smallest ``m <= D`` whose Psi is within ``delta`` of the best Psi up to ``D``."""
    if D < 1:
        raise ValueError("D must be at least 1")
    psi = np.asarray(curve.psi, dtype=float)
    if psi.size == 0:
        raise ValueError("empty parsimony curve")
    cap = min(D, psi.size)
    head = np.where(np.isfinite(psi[:cap]), psi[:cap], -np.inf)
    if not np.isfinite(head).any():
        raise FedScoreError("parsimony curve undefined for every m <= D")
    best = head.max()
    d = int(np.flatnonzero(head >= best - delta)[0]) + 1
    return d, tuple(curve.variables[d - 1])


def stratified_folds(event, k: int, rng: np.random.Generator) -> np.ndarray:
    """Fold label per subject, events and non-events dealt round-robin after shuffling."""
    event = np.asarray(event)
    folds = np.empty(event.size, dtype=int)
    offset = 0
    for flag in (1, 0):
        idx = np.flatnonzero(event == flag)
        idx = idx[rng.permutation(idx.size)]
        folds[idx] = (offset + np.arange(idx.size)) % k
        offset = (offset + idx.size) % k
    return folds


def parsimony_curve(global_ranks, sites: Sequence[SurvivalDataset], weights, cv_folds: int = 5,
                    config=None, variables: Sequence[str] | None = None) -> ParsimonyCurve:
    """Cross-validated Psi_m for the top-m variables, m = 1..P.

    For each fold the model (cutoffs, fit, points) is rebuilt from every
    site's training folds and scored on each site's held-out fold.  Folds
    that cannot be fitted or scored are skipped with a warning.
    """
    from .pipeline import PipelineConfig, build_model

    config = config or PipelineConfig()
    variables = list(variables or sites[0].variable_names)
    ranks = np.asarray(global_ranks)
    ordered = [variables[i] for i in np.argsort(ranks, kind="stable")]
    w = np.asarray(getattr(weights, "weights", weights), dtype=float)
    for d in sites:
        if d.n_events < cv_folds:
            raise ValueError(f"site {d.site_id} has fewer than {cv_folds} events")
    folds = [stratified_folds(d.event, cv_folds, stream(config.seed, "cv", d.site_id))
             for d in sites]
    P = len(ordered)
    phi = np.full((P, len(sites)), np.nan)
    for m in range(1, P + 1):
        use = ordered[:m]
        per_fold = [[] for _ in sites]
        for f in range(cv_folds):
            train = [d.subset(np.flatnonzero(fl != f)) for d, fl in zip(sites, folds)]
            valid = [d.subset(np.flatnonzero(fl == f)) for d, fl in zip(sites, folds)]
            try:
                model = build_model(train, use, config)
            except FedScoreError as exc:
                log.warning("m=%d fold %d skipped: %s", m, f, exc)
                continue
            for j, (tr, va) in enumerate(zip(train, valid)):
                if va.n_events == 0:
                    log.warning("m=%d fold %d site %d has no events; skipped", m, f, va.site_id)
                    continue
                try:
                    per_fold[j].append(integrated_auc(
                        model.score(va), va, t_range=(tr.time.min(), tr.time.max()),
                        weighting=config.iauc_weighting))
                except FedScoreError as exc:
                    log.warning("m=%d fold %d site %d skipped: %s", m, f, va.site_id, exc)
        for j, vals in enumerate(per_fold):
            if vals:
                phi[m - 1, j] = float(np.mean(vals))
    if not np.isfinite(phi).any():
        raise FedScoreError("every cross-validation fold was skipped")
    psi = np.full(P, np.nan)
    for m in range(P):
        ok = np.isfinite(phi[m])
        if ok.any():
            wm = w[ok] / w[ok].sum()
            psi[m] = float(np.sum(wm * phi[m, ok]))
    return ParsimonyCurve([tuple(ordered[:m]) for m in range(1, P + 1)], phi, psi,
                          tuple(d.site_id for d in sites))
