"""End-to-end score construction: rank, transform, fit, select, score."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from . import cox
from .errors import UninformativeModelError
from .evaluation import ParsimonyCurve, parsimony_curve, select_model
from .forest import ForestConfig
from .odach import run_odach
from .ranking import (CollinearityReport, SiteWeights, VariableRanking, aggregate_ranks,
                      multicollinearity_screen, rsf_importance)
from .scoring import ScoringTable, derive_scores
from .streams import derive_seed
from .survival import CONTINUOUS, SurvivalDataset
from .transform import (DEFAULT_PERCENTILES, CutoffScheme, categorical_levels, categorize,
                        category_event_counts, local_quantile_cutoffs, merge_similar_categories,
                        merge_sparse_categories, unify_cutoffs)

log = logging.getLogger(__name__)

METHODS = ("odach", "local")


@dataclass(frozen=True)
class PipelineConfig:
    percentiles: tuple = DEFAULT_PERCENTILES
    s_max: int = 100
    D: int = 10
    delta: float = 0.01
    cv_folds: int = 5
    n_bootstrap: int = 200
    level: float = 0.95
    weights: tuple | None = None  # custom site weights; None -> training sample sizes
    n_trees: int = 500
    mtry: int | None = None
    min_node_events: int = 3
    min_node_size: int = 15
    min_leaf_size: int = 5
    max_cuts: int = 32
    merge_epsilon: float | None = None  # None -> no similar-category merging
    min_category_events: int = 2  # per category, at every site
    collinearity_threshold: float = 0.8
    iauc_weighting: str = "event"
    method: str = "odach"
    seed: int = 0

    def __post_init__(self):
        p = list(self.percentiles)
        if not p or any(not 0 < q < 100 for q in p) or any(b <= a for a, b in zip(p, p[1:])):
            raise ValueError("percentiles must be strictly increasing in (0, 100)")
        object.__setattr__(self, "percentiles", tuple(float(q) for q in p))
        if self.D < 1:
            raise ValueError("D must be at least 1")
        if self.s_max < 1:
            raise ValueError("s_max must be positive")
        if self.cv_folds < 2:
            raise ValueError("cv_folds must be at least 2")
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}")
        if self.iauc_weighting not in ("event", "uniform"):
            raise ValueError("iauc_weighting must be 'event' or 'uniform'")
        if self.weights is not None:
            object.__setattr__(self, "weights", tuple(SiteWeights(self.weights).weights.tolist()))

    def forest_config(self, site_id: int) -> ForestConfig:
        return ForestConfig(n_trees=self.n_trees, mtry=self.mtry,
                            min_node_events=self.min_node_events,
                            min_node_size=self.min_node_size, min_leaf_size=self.min_leaf_size,
                            max_cuts=self.max_cuts, seed=derive_seed(self.seed, "forest", site_id))

    def with_(self, **kw) -> "PipelineConfig":
        return replace(self, **kw)


@dataclass(eq=False)
class Model:
    """A fitted score: category scheme, Cox coefficients and the points table."""

    variables: tuple
    scheme: CutoffScheme
    columns: tuple
    beta: np.ndarray
    table: ScoringTable
    fit: object = None

    def score(self, data: SurvivalDataset) -> np.ndarray:
        return self.table.score_dataset(data)


def site_weights(sites: Sequence[SurvivalDataset], config: PipelineConfig) -> SiteWeights:
    if config.weights is not None:
        if len(config.weights) != len(sites):
            raise ValueError(f"{len(config.weights)} custom weights for {len(sites)} sites")
        return SiteWeights(config.weights)
    return SiteWeights.from_sample_sizes([d.n for d in sites])


def build_scheme(sites: Sequence[SurvivalDataset], variables: Sequence[str], weights,
                 config: PipelineConfig) -> CutoffScheme:
    """Unified categories for ``variables``, with sparse categories merged away."""
    cutoffs, groups = {}, {}
    for v in variables:
        if sites[0].kind(v) == CONTINUOUS:
            local = [local_quantile_cutoffs(d, v, config.percentiles) for d in sites]
            cutoffs[v] = unify_cutoffs(local, weights)
        else:
            groups[v] = categorical_levels(sites, v)
    scheme = CutoffScheme(tuple(variables), cutoffs, groups)
    counts = [category_event_counts(d, scheme) for d in sites]
    return merge_sparse_categories(scheme, counts, config.min_category_events)


def fit_design(sites: Sequence[SurvivalDataset], scheme: CutoffScheme, variables: Sequence[str],
               method: str = "odach"):
    """Cox coefficients on the dummy design; returns ``(beta, columns, fit)``."""
    designs = [categorize(d, scheme, variables) for d in sites]
    columns = designs[0].columns
    if not columns:
        raise UninformativeModelError("no variable has more than one category")
    data = [des.dataset(d) for des, d in zip(designs, sites)]
    if method == "local":
        if len(data) != 1:
            raise ValueError("local fitting takes exactly one site")
        fit = cox.fit_cox(data[0])
        return np.array(fit.beta_hat), columns, fit
    fit = run_odach(data)
    return np.array(fit.beta_final), columns, fit


def build_model(sites: Sequence[SurvivalDataset], variables: Sequence[str],
                config: PipelineConfig, weights=None, scheme: CutoffScheme | None = None) -> Model:
    """Transformation, fit and scoring for a fixed variable set.

    Categories are computed from ``sites`` unless a precomputed ``scheme``
    (covering at least ``variables``) is given.
    """
    variables = tuple(variables)
    weights = site_weights(sites, config) if weights is None else weights
    if scheme is None:
        scheme = build_scheme(sites, variables, weights, config)
    else:
        scheme = scheme.restrict(variables)
    beta, columns, fit = fit_design(sites, scheme, variables, config.method)
    if config.merge_epsilon is not None:
        design = categorize(sites[0], scheme, variables)
        merged = merge_similar_categories(design, beta, config.merge_epsilon)
        if merged != scheme:
            scheme = merged
            beta, columns, fit = fit_design(sites, scheme, variables, config.method)
    table = derive_scores(beta, scheme, variables, config.s_max, source=config.method)
    return Model(variables, scheme, tuple(columns), beta, table, fit)


def rank_variables(sites: Sequence[SurvivalDataset], config: PipelineConfig, weights=None,
                   variables: Sequence[str] | None = None):
    """Local forest rankings at every site and their weighted aggregate."""
    weights = site_weights(sites, config) if weights is None else weights
    variables = tuple(variables or sites[0].variable_names)
    local = [rsf_importance(d.select(variables), config.forest_config(d.site_id)) for d in sites]
    return local, aggregate_ranks(local, weights)


@dataclass(eq=False)
class PipelineResult:
    weights: SiteWeights
    variables: tuple
    local_rankings: list
    global_ranks: np.ndarray
    collinearity: list
    parsimony: ParsimonyCurve
    selected: tuple
    model: Model
    extras: dict = field(default_factory=dict)

    @property
    def table(self) -> ScoringTable:
        return self.model.table


def run_pipeline(train_sites: Sequence[SurvivalDataset], config: PipelineConfig,
                 variables: Sequence[str] | None = None,
                 local_rankings: Sequence[VariableRanking] | None = None) -> PipelineResult:
    """Rank, pick the model size on the parsimony curve, refit and score.

    ``local_rankings`` may be supplied to reuse forests already grown on the
    same training data with the same configuration.
    """
    if not train_sites:
        raise ValueError("need at least one site")
    train_sites = sorted(train_sites, key=lambda d: d.site_id)
    variables = tuple(variables or train_sites[0].variable_names)
    weights = site_weights(train_sites, config)
    collinearity: list[CollinearityReport] = []
    if len(variables) >= 2:
        for d in train_sites:
            rep = multicollinearity_screen(d.select(variables), config.collinearity_threshold)
            for a, b, r in rep.pairs:
                log.warning("site %d: %s and %s correlated (r = %.3f)", d.site_id, a, b, r)
            collinearity.append(rep)
    if local_rankings is None:
        local_rankings, global_ranks = rank_variables(train_sites, config, weights, variables)
    else:
        local_rankings = list(local_rankings)
        global_ranks = aggregate_ranks(local_rankings, weights)
        order = local_rankings[0].variables
        if tuple(order) != variables:
            pos = {v: k for k, v in enumerate(order)}
            global_ranks = np.asarray([global_ranks[pos[v]] for v in variables])
    curve = parsimony_curve(global_ranks, train_sites, weights, config.cv_folds, config,
                            variables)
    d, selected = select_model(curve, config.D, config.delta)
    model = build_model(train_sites, selected, config, weights)
    return PipelineResult(weights, variables, list(local_rankings), np.asarray(global_ranks),
                          collinearity, curve, tuple(selected), model)
