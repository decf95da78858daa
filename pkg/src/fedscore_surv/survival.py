"""Survival data containers and nonparametric estimators."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Iterable, Iterator, Sequence

import numpy as np
from scipy import stats

from .errors import EmptyDatasetError, NoEventsError

CONTINUOUS = "continuous"
CATEGORICAL = "categorical"
_KINDS = (CONTINUOUS, CATEGORICAL)


@dataclass(frozen=True)
class SurvivalRecord:
    time: float
    event: int
    covariates: tuple
    site_id: int = 0

    def __post_init__(self):
        if not np.isfinite(self.time) or self.time < 0:
            raise ValueError(f"time must be a nonnegative real, got {self.time!r}")
        if self.event not in (0, 1):
            raise ValueError(f"event must be 0 or 1, got {self.event!r}")


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class SurvivalDataset:
    """One site's right-censored observations.

    Stored column-wise: ``time`` (n,), ``event`` (n,) in {0, 1} and the
    covariate matrix ``X`` (n, p).  Arrays are read-only; every transform
    returns a new dataset.
    """

    time: np.ndarray
    event: np.ndarray
    X: np.ndarray
    variable_names: tuple
    variable_kinds: tuple = None
    site_id: int = 0

    def __post_init__(self):
        time = np.array(self.time, dtype=float).reshape(-1)
        event = np.array(self.event).reshape(-1)
        X = np.array(self.X, dtype=float)
        n = time.shape[0]
        if n == 0:
            raise EmptyDatasetError()
        names = tuple(str(v) for v in self.variable_names)
        if X.ndim == 1:
            X = X.reshape(n, -1) if len(names) else X.reshape(n, 0)
        if X.shape != (n, len(names)):
            raise ValueError(
                f"covariate matrix has shape {X.shape}, expected {(n, len(names))}"
            )
        if len(set(names)) != len(names):
            raise ValueError("variable names must be unique")
        kinds = self.variable_kinds
        if kinds is None:
            kinds = (CONTINUOUS,) * len(names)
        kinds = tuple(kinds)
        if len(kinds) != len(names) or any(k not in _KINDS for k in kinds):
            raise ValueError(f"bad variable kinds {kinds!r}")
        if event.shape != (n,):
            raise ValueError("event vector length differs from time vector")
        if not np.all(np.isfinite(time)) or np.any(time < 0):
            raise ValueError("times must be finite and nonnegative")
        if not np.all(np.isin(event, (0, 1))):
            raise ValueError("event indicators must be 0 or 1")
        if not np.all(np.isfinite(X)):
            raise ValueError("covariates contain missing or non-finite values")
        object.__setattr__(self, "time", _frozen(time))
        object.__setattr__(self, "event", _frozen(event.astype(np.int8)))
        object.__setattr__(self, "X", _frozen(X))
        object.__setattr__(self, "variable_names", names)
        object.__setattr__(self, "variable_kinds", kinds)

    @property
    def n(self) -> int:
        return self.time.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    @property
    def n_events(self) -> int:
        return int(self.event.sum())

    @property
    def records(self) -> list[SurvivalRecord]:
        return list(self.iter_records())

    def iter_records(self) -> Iterator[SurvivalRecord]:
        for i in range(self.n):
            yield SurvivalRecord(
                float(self.time[i]), int(self.event[i]), tuple(self.X[i]), self.site_id
            )

    @classmethod
    def from_records(cls, records: Iterable[SurvivalRecord], variable_names,
                     variable_kinds=None, site_id: int | None = None):
        records = list(records)
        if not records:
            raise EmptyDatasetError()
        p = len(variable_names)
        for r in records:
            if len(r.covariates) != p:
                raise ValueError("record covariate length differs from declared p")
        return cls(
            time=[r.time for r in records],
            event=[r.event for r in records],
            X=np.array([r.covariates for r in records], dtype=float).reshape(len(records), p),
            variable_names=variable_names,
            variable_kinds=variable_kinds,
            site_id=records[0].site_id if site_id is None else site_id,
        )

    def column(self, name: str) -> np.ndarray:
        return self.X[:, self.variable_names.index(name)]

    def kind(self, name: str) -> str:
        return self.variable_kinds[self.variable_names.index(name)]

    def subset(self, idx) -> "SurvivalDataset":
        idx = np.asarray(idx)
        return SurvivalDataset(self.time[idx], self.event[idx], self.X[idx],
                               self.variable_names, self.variable_kinds, self.site_id)

    def select(self, variables: Sequence[str]) -> "SurvivalDataset":
        cols = [self.variable_names.index(v) for v in variables]
        return SurvivalDataset(self.time, self.event, self.X[:, cols], tuple(variables),
                               tuple(self.variable_kinds[c] for c in cols), self.site_id)

    def with_covariates(self, X, names, kinds=None) -> "SurvivalDataset":
        return SurvivalDataset(self.time, self.event, X, names, kinds, self.site_id)

    def with_site(self, site_id: int) -> "SurvivalDataset":
        return SurvivalDataset(self.time, self.event, self.X, self.variable_names,
                               self.variable_kinds, site_id)


@dataclass(frozen=True, eq=False)
class StepSurvivalCurve:
    """Right-continuous survival step function; equals 1 before ``times[0]``."""

    times: np.ndarray
    survival: np.ndarray
    at_risk: np.ndarray
    events: np.ndarray

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        k = np.searchsorted(self.times, t, side="right")
        vals = np.concatenate(([1.0], self.survival))[k]
        return vals if vals.ndim else float(vals)

    def left_limit(self, t):
        """S(t-)."""
        t = np.asarray(t, dtype=float)
        k = np.searchsorted(self.times, t, side="left")
        vals = np.concatenate(([1.0], self.survival))[k]
        return vals if vals.ndim else float(vals)

    def to_csv(self, path) -> None:
        _write_curve(path, ("time", "survival", "at_risk", "events"),
                     self.times, self.survival, self.at_risk, self.events)


@dataclass(frozen=True, eq=False)
class CumulativeHazardCurve:
    """Nondecreasing cumulative-hazard step function; 0 before ``times[0]``."""

    times: np.ndarray
    cumhaz: np.ndarray
    at_risk: np.ndarray
    events: np.ndarray

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        k = np.searchsorted(self.times, t, side="right")
        vals = np.concatenate(([0.0], self.cumhaz))[k]
        return vals if vals.ndim else float(vals)

    def to_csv(self, path) -> None:
        _write_curve(path, ("time", "cumhaz", "at_risk", "events"),
                     self.times, self.cumhaz, self.at_risk, self.events)


def _write_curve(path, header, *cols):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in zip(*cols):
            w.writerow([repr(float(row[0])), repr(float(row[1])), int(row[2]), int(row[3])])


def _event_table(time, event):
    """Distinct event times with (at risk, deaths)."""
    time = np.asarray(time, dtype=float)
    event = np.asarray(event)
    order = np.argsort(time, kind="stable")
    t = time[order]
    d = event[order]
    uniq, first = np.unique(t, return_index=True)
    deaths = np.add.reduceat(d.astype(float), first) if len(t) else np.array([])
    at_risk = len(t) - first
    keep = deaths > 0
    return uniq[keep], at_risk[keep].astype(int), deaths[keep].astype(int)


def kaplan_meier(data) -> StepSurvivalCurve:
    """Product-limit estimate of the survival function.

    Censored observations at a time shared with events are still counted in
    the risk set at that time (events precede censorings).
    """
    time, event = _time_event(data)
    times, at_risk, deaths = _event_table(time, event)
    surv = np.cumprod(1.0 - deaths / at_risk)
    return StepSurvivalCurve(times, surv, at_risk, deaths)


def censoring_km(time, event) -> StepSurvivalCurve:
    """KM estimate of the censoring distribution G.

    At tied times subjects with an event leave the risk set before the
    censorings are counted.
    """
    time = np.asarray(time, dtype=float)
    cens = 1 - np.asarray(event, dtype=int)
    uniq = np.unique(time[cens == 1])
    if uniq.size == 0:
        return StepSurvivalCurve(np.array([]), np.array([]), np.array([], int), np.array([], int))
    st = np.sort(time)
    # at risk for censoring at u: T > u, plus those censored exactly at u
    n_gt = len(st) - np.searchsorted(st, uniq, side="right")
    c_sorted = np.sort(time[cens == 1])
    c_at = np.searchsorted(c_sorted, uniq, side="right") - np.searchsorted(c_sorted, uniq, side="left")
    at_risk = n_gt + c_at
    surv = np.cumprod(1.0 - c_at / at_risk)
    return StepSurvivalCurve(uniq, surv, at_risk, c_at)


def nelson_aalen(data) -> CumulativeHazardCurve:
    time, event = _time_event(data)
    times, at_risk, deaths = _event_table(time, event)
    return CumulativeHazardCurve(times, np.cumsum(deaths / at_risk), at_risk, deaths)


def _time_event(data):
    if isinstance(data, SurvivalDataset):
        return data.time, data.event
    time, event = data
    time = np.asarray(time, dtype=float)
    if time.size == 0:
        raise EmptyDatasetError()
    return time, np.asarray(event)


def logrank_test(groups: Sequence) -> dict:
    """K-sample log-rank test.

    Parameters
    ----------
    groups : sequence of SurvivalDataset or (time, event) pairs
        At least two nonempty groups.

    Returns
    -------
    dict with ``chi_square``, ``df`` (K - 1) and ``p_value``.
    """
    if len(groups) < 2:
        raise ValueError("log-rank test needs at least two groups")
    tes = [_time_event(g) for g in groups]
    K = len(tes)
    time = np.concatenate([t for t, _ in tes])
    event = np.concatenate([e for _, e in tes]).astype(int)
    label = np.concatenate([np.full(len(t), k) for k, (t, _) in enumerate(tes)])
    if event.sum() == 0:
        raise NoEventsError()

    ev_times = np.unique(time[event == 1])
    # per group: number at risk (T >= u) and deaths at u
    n_kt = np.empty((K, ev_times.size))
    d_kt = np.empty((K, ev_times.size))
    for k in range(K):
        tk = np.sort(time[label == k])
        n_kt[k] = tk.size - np.searchsorted(tk, ev_times, side="left")
        dk = np.sort(time[(label == k) & (event == 1)])
        d_kt[k] = np.searchsorted(dk, ev_times, side="right") - np.searchsorted(dk, ev_times, side="left")
    N = n_kt.sum(axis=0)
    D = d_kt.sum(axis=0)
    frac = n_kt / N
    observed = d_kt.sum(axis=1)
    expected = (frac * D).sum(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        c = np.where(N > 1, D * (N - D) / (N - 1), 0.0)
    V = np.einsum("t,kt,lt->kl", c, frac, frac) * -1.0
    V[np.diag_indices(K)] += (c * frac).sum(axis=1)
    U = observed - expected
    u = U[: K - 1]
    v = V[: K - 1, : K - 1]
    chi2 = float(u @ np.linalg.pinv(v) @ u)
    chi2 = max(chi2, 0.0)
    return {
        "chi_square": chi2,
        "df": K - 1,
        "p_value": float(stats.chi2.sf(chi2, K - 1)),
        "observed": observed,
        "expected": expected,
    }


def breslow_baseline_hazard(data: SurvivalDataset, beta) -> CumulativeHazardCurve:
    """Breslow estimate of the cumulative baseline hazard at covariates = 0."""
    beta = np.asarray(beta, dtype=float).reshape(-1)
    if beta.shape[0] != data.p:
        raise ValueError(f"beta has length {beta.shape[0]}, expected {data.p}")
    lp = data.X @ beta
    shift = lp.max()
    w = np.exp(lp - shift)
    order = np.argsort(data.time, kind="stable")
    t = data.time[order]
    w = w[order]
    d = data.event[order].astype(float)
    uniq, first = np.unique(t, return_index=True)
    deaths = np.add.reduceat(d, first)
    risk = np.cumsum(w[::-1])[::-1][first]
    keep = deaths > 0
    incr = deaths[keep] / risk[keep] * np.exp(-shift)
    at_risk = (len(t) - first)[keep]
    return CumulativeHazardCurve(uniq[keep], np.cumsum(incr), at_risk, deaths[keep].astype(int))
