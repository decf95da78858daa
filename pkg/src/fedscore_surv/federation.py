"""Synthetic heterogeneous multi-site survival data and the comparison experiment.

The default benchmark imitates an emergency-department mortality cohort:
two sites drawn from one population and four from another, with shifted
covariate distributions and different Weibull baseline hazards but a shared
covariate effect, followed for 30 days.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .evaluation import EvaluationReport, evaluate_scores
from .pipeline import PipelineConfig, PipelineResult, run_pipeline
from .ranking import SiteWeights
from .streams import stream
from .survival import CATEGORICAL, CONTINUOUS, SurvivalDataset, logrank_test

log = logging.getLogger(__name__)

BISECTION_STEPS = 100


@dataclass(frozen=True)
class VariableSpec:
    """One covariate.  ``mean``/``sd`` are per site; for binary flags ``mean`` is the prevalence."""

    name: str
    kind: str
    coef: float
    mean: tuple
    sd: tuple = ()
    center: float = 0.0  # value with zero contribution to the log hazard
    bounds: tuple = (-np.inf, np.inf)
    integer: bool = False


def _sites(a, b):
    return (a, a, b, b, b, b)


DEFAULT_VARIABLES = (
    VariableSpec("age", CONTINUOUS, 0.05, _sites(57.0, 62.7), _sites(21.5, 18.5), 60.0,
                 (21, 100), True),
    VariableSpec("pulse", CONTINUOUS, 0.02, _sites(86.5, 80.0), _sites(19.3, 18.0), 82.0,
                 (30, 180), True),
    VariableSpec("respiration", CONTINUOUS, 0.2, _sites(17.7, 17.3), _sites(2.7, 1.5), 17.5,
                 (8, 40), True),
    VariableSpec("spo2", CONTINUOUS, -0.12, _sites(98.3, 97.8), _sites(2.9, 4.5), 98.0,
                 (70, 100), True),
    VariableSpec("sbp", CONTINUOUS, -0.02, _sites(132.7, 128.0), _sites(26.0, 21.9), 130.0,
                 (60, 240), True),
    VariableSpec("dbp", CONTINUOUS, 0.0, _sites(75.0, 68.9), _sites(21.0, 15.5), 72.0,
                 (30, 140), True),
    VariableSpec("male", CATEGORICAL, 0.2, _sites(0.47, 0.52)),
    VariableSpec("chf", CATEGORICAL, 0.6, _sites(0.097, 0.078)),
    VariableSpec("stroke", CATEGORICAL, 0.4, _sites(0.055, 0.12)),
    VariableSpec("dementia", CATEGORICAL, 0.7, _sites(0.021, 0.042)),
    VariableSpec("kidney", CATEGORICAL, 0.5, _sites(0.128, 0.229)),
    VariableSpec("liver_severe", CATEGORICAL, 0.9, _sites(0.024, 0.019)),
)


@dataclass(frozen=True)
class GeneratorConfig:
    """Multi-site generator settings.

    Event times are Weibull with cumulative baseline hazard
    ``(t / scale_j) ** shape_j`` and hazard ratio ``exp(sum_k coef_k (x_k - center_k))``.
    """

    n: tuple = (700, 700, 400, 800, 1200, 1600)
    shape: tuple = _sites(1.2, 0.8)
    scale: tuple = _sites(200.0, 350.0)
    censoring: tuple = _sites(0.88, 0.84)  # target censored fraction per site
    t_max: float = 30.0
    variables: tuple = DEFAULT_VARIABLES
    seed: int = 2024

    def __post_init__(self):
        K = len(self.n)
        for name in ("shape", "scale", "censoring"):
            v = getattr(self, name)
            if np.ndim(v) == 0:
                object.__setattr__(self, name, (float(v),) * K)
            elif len(v) != K:
                raise ValueError(f"{name} needs one value per site ({K})")
        object.__setattr__(self, "n", tuple(int(x) for x in self.n))
        if K < 1 or any(x < 1 for x in self.n):
            raise ValueError("every site needs n_j >= 1")
        if any(not 0 <= c < 1 for c in self.censoring):
            raise ValueError("censoring targets must lie in [0, 1)")
        if not self.t_max > 0:
            raise ValueError("t_max must be positive")
        if any(s <= 0 for s in self.shape) or any(s <= 0 for s in self.scale):
            raise ValueError("Weibull shape and scale must be positive")
        for v in self.variables:
            if len(v.mean) < K or (v.kind == CONTINUOUS and len(v.sd) < K):
                raise ValueError(f"variable {v.name} lacks per-site parameters for {K} sites")

    @property
    def K(self) -> int:
        return len(self.n)

    @property
    def beta(self) -> np.ndarray:
        return np.array([v.coef for v in self.variables])

    @property
    def variable_names(self) -> tuple:
        return tuple(v.name for v in self.variables)


def _covariates(cfg: GeneratorConfig, j: int, n: int, rng) -> np.ndarray:
    X = np.empty((n, len(cfg.variables)))
    for k, v in enumerate(cfg.variables):
        if v.kind == CONTINUOUS:
            x = rng.normal(v.mean[j], v.sd[j], size=n)
            x = np.clip(x, *v.bounds)
            X[:, k] = np.round(x) if v.integer else x
        else:
            X[:, k] = (rng.uniform(size=n) < v.mean[j]).astype(float)
    return X


def calibrate_censoring(T, E, target: float, t_max: float) -> float:
    """Exponential censoring rate giving censored fraction ``target``.

    ``E`` are standard exponential draws, so ``C = E / rate``.  The censored
    fraction is monotone in the rate; it is bisected on ``u = rate / (1 + rate)``.
    """
    def frac(rate):
        C = np.full_like(E, np.inf) if rate == 0 else E / rate
        return float(np.mean(T > np.minimum(C, t_max)))

    if frac(0.0) >= target:
        if frac(0.0) - target > max(2.0 / T.size, 0.005):
            raise ValueError(f"censoring target {target} unattainable: administrative censoring "
                             f"alone gives {frac(0.0):.3f}")
        return 0.0
    lo, hi = 0.0, 1.0
    for _ in range(BISECTION_STEPS):
        mid = 0.5 * (lo + hi)
        if frac(mid / (1.0 - mid)) < target:
            lo = mid
        else:
            hi = mid
    rate = hi / (1.0 - hi)
    if abs(frac(rate) - target) > max(2.0 / T.size, 0.005):
        raise ValueError(f"censoring target {target} not reached after {BISECTION_STEPS} steps")
    return rate


def generate_site(cfg: GeneratorConfig, j: int, site_id: int | None = None) -> SurvivalDataset:
    n = cfg.n[j]
    rng = stream(cfg.seed, "site", j)
    X = _covariates(cfg, j, n, rng)
    center = np.array([v.center for v in cfg.variables])
    lp = (X - center) @ cfg.beta
    # inverse of the cumulative hazard: (t / scale)^shape * exp(lp) = -log U
    u = rng.uniform(size=n)
    T = cfg.scale[j] * (-np.log1p(-u) * np.exp(-lp)) ** (1.0 / cfg.shape[j])
    E = rng.exponential(size=n)
    rate = calibrate_censoring(T, E, cfg.censoring[j], cfg.t_max)
    C = np.full(n, np.inf) if rate == 0 else E / rate
    stop = np.minimum(C, cfg.t_max)
    time = np.minimum(T, stop)
    event = (T <= stop).astype(int)
    kinds = [v.kind for v in cfg.variables]
    sid = j + 1 if site_id is None else site_id
    return SurvivalDataset(time, event, X, cfg.variable_names, kinds, site_id=sid)


def generate_sites(cfg: GeneratorConfig) -> list[SurvivalDataset]:
    """One dataset per site, with site ids 1..K."""
    return [generate_site(cfg, j) for j in range(cfg.K)]


def train_test_split(data: SurvivalDataset, test_fraction: float = 0.4, seed: int = 0):
    """Split stratified by event status; returns ``(train, test)``."""
    rng = stream(seed, "split", data.site_id)
    test = np.zeros(data.n, dtype=bool)
    for flag in (1, 0):
        idx = np.flatnonzero(data.event == flag)
        idx = idx[rng.permutation(idx.size)]
        test[idx[:int(round(test_fraction * idx.size))]] = True
    return data.subset(np.flatnonzero(~test)), data.subset(np.flatnonzero(test))


@dataclass(eq=False)
class SiteHandle:
    """A participant with its private train/test split.

    The datasets stay in the handle; only protocol messages built by the
    pipeline ever leave it.
    """

    site_id: int
    train: SurvivalDataset
    test: SurvivalDataset
    weight: float = float("nan")


def make_handles(datasets: Sequence[SurvivalDataset], test_fraction: float = 0.4,
                 seed: int = 0) -> list[SiteHandle]:
    handles = []
    for d in datasets:
        tr, te = train_test_split(d, test_fraction, seed)
        handles.append(SiteHandle(d.site_id, tr, te))
    w = SiteWeights.from_sample_sizes([h.train.n for h in handles]).weights
    for h, wj in zip(handles, w):
        h.weight = float(wj)
    return handles


@dataclass(eq=False)
class ExperimentResult:
    handles: list
    federated: PipelineResult
    federated_reports: dict  # site_id -> EvaluationReport
    local: dict  # site_id -> PipelineResult
    local_reports: dict  # site_id -> EvaluationReport
    heterogeneity: dict
    extras: dict = field(default_factory=dict)

    def comparison_rows(self) -> list[dict]:
        rows = []
        for h in self.handles:
            f = self.federated_reports[h.site_id]
            loc = self.local_reports[h.site_id]
            both = np.isfinite(f.ci_high - f.ci_low) & np.isfinite(loc.ci_high - loc.ci_low)
            rows.append({
                "site": h.site_id, "n_train": h.train.n, "n_test": h.test.n,
                "events_test": h.test.n_events,
                "federated_iauc": f.iauc, "federated_ci_low": f.iauc_ci[0],
                "federated_ci_high": f.iauc_ci[1],
                "local_iauc": loc.iauc, "local_ci_low": loc.iauc_ci[0],
                "local_ci_high": loc.iauc_ci[1],
                "local_variables": len(self.local[h.site_id].selected),
                "federated_mean_ci_width": f.mean_ci_width(both),
                "local_mean_ci_width": loc.mean_ci_width(both),
            })
        return rows


def evaluate_model(model, handle: SiteHandle, config: PipelineConfig) -> EvaluationReport:
    return evaluate_site_scores(model.score(handle.test), handle, config)


def evaluate_site_scores(scores, handle: SiteHandle, config: PipelineConfig) -> EvaluationReport:
    """Test-set AUC(t) on whole days and iAUC over the training time range."""
    tr = handle.train
    return evaluate_scores(scores, handle.test,
                           times=np.arange(1, int(np.ceil(tr.time.max())) + 1, dtype=float),
                           t_range=(tr.time.min(), tr.time.max()), n_boot=config.n_bootstrap,
                           level=config.level, seed=config.seed, key=("eval", handle.site_id),
                           weighting=config.iauc_weighting)


def run_experiment(handles: Sequence[SiteHandle], config: PipelineConfig,
                   local_baselines: bool = True) -> ExperimentResult:
    """Federated pipeline over all sites plus the single-site pipeline at each site.

    Both models of a site are evaluated on that site's test set with the same
    bootstrap resamples.
    """
    handles = sorted(handles, key=lambda h: h.site_id)
    if not handles:
        raise ValueError("need at least one site")
    trains = [h.train for h in handles]
    fed = run_pipeline(trains, config.with_(method="odach"))
    fed_reports = {h.site_id: evaluate_model(fed.model, h, config) for h in handles}
    local, local_reports = {}, {}
    if local_baselines:
        rankings = {r.site_id: r for r in fed.local_rankings}
        for h in handles:
            # forests depend only on the site's own data and seed, so reuse them
            res = run_pipeline([h.train], config.with_(method="local", weights=None),
                               local_rankings=[rankings[h.site_id]])
            local[h.site_id] = res
            local_reports[h.site_id] = evaluate_model(res.model, h, config)
    het = logrank_test([(h.train.time.tolist() + h.test.time.tolist(),
                         h.train.event.tolist() + h.test.event.tolist()) for h in handles]) \
        if len(handles) > 1 else {}
    return ExperimentResult(list(handles), fed, fed_reports, local, local_reports, het)
