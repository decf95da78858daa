import numpy as np
import pytest

from fedscore_surv.federation import (GeneratorConfig, VariableSpec, calibrate_censoring,
                                      generate_site, generate_sites, make_handles,
                                      run_experiment, train_test_split)
from fedscore_surv.pipeline import PipelineConfig
from fedscore_surv.survival import CONTINUOUS, kaplan_meier, logrank_test

NULL_VAR = (VariableSpec("x", CONTINUOUS, 0.0, (0.0, 0.0), (1.0, 1.0)),)
FAST = PipelineConfig(n_trees=60, n_bootstrap=40, cv_folds=3, seed=11)


def test_exponential_baseline_recovered():
    cfg = GeneratorConfig(n=(20000,), shape=1.0, scale=5.0, censoring=0.0, t_max=np.inf,
                          variables=NULL_VAR[:1], seed=1)
    d = generate_site(cfg, 0)
    assert d.n_events == d.n
    km = kaplan_meier(d)
    # the sup of a right-continuous step vs a continuous curve is reached at the jumps
    left = np.concatenate([[1.0], km.survival[:-1]])
    truth = np.exp(-km.times / 5.0)
    sup = max(np.max(np.abs(km.survival - truth)), np.max(np.abs(left - truth)))
    assert sup < 0.02


def test_event_fraction_matches_target():
    cfg = GeneratorConfig(n=(6000, 6000), shape=1.0, scale=(1.0, 3.0), censoring=(0.3, 0.6),
                          t_max=np.inf, variables=NULL_VAR, seed=3)
    for d, c in zip(generate_sites(cfg), cfg.censoring):
        assert abs(d.event.mean() - (1 - c)) <= 0.03


def test_unattainable_censoring_rejected():
    T = np.linspace(1, 100, 1000)
    E = np.random.default_rng(0).exponential(size=1000)
    with pytest.raises(ValueError):
        calibrate_censoring(T, E, 0.1, t_max=10.0)


def test_baseline_heterogeneity_detected():
    cfg = GeneratorConfig(n=(2000, 2000), shape=1.0, scale=(1.0, 1.5), censoring=0.2,
                          t_max=np.inf, variables=NULL_VAR, seed=5)
    assert logrank_test(generate_sites(cfg))["p_value"] < 0.05


def test_default_benchmark_shape():
    sites = generate_sites(GeneratorConfig())
    assert [d.n for d in sites] == [700, 700, 400, 800, 1200, 1600]
    assert [d.site_id for d in sites] == [1, 2, 3, 4, 5, 6]
    assert all(d.time.max() <= 30.0 for d in sites)
    assert logrank_test(sites)["p_value"] < 0.05


def test_generator_deterministic():
    a = generate_sites(GeneratorConfig(seed=9))
    b = generate_sites(GeneratorConfig(seed=9))
    for x, y in zip(a, b):
        assert np.array_equal(x.time, y.time) and np.array_equal(x.X, y.X)


def test_split_is_stratified_forty_sixty():
    d = generate_sites(GeneratorConfig(seed=2))[4]
    tr, te = train_test_split(d, 0.4, seed=2)
    assert tr.n + te.n == d.n
    assert te.n == pytest.approx(0.4 * d.n, abs=2)
    assert te.n_events == round(0.4 * d.n_events)
    tr2, te2 = train_test_split(d, 0.4, seed=2)
    assert np.array_equal(te.time, te2.time)


def test_handles_weights_from_training_sizes():
    hs = make_handles(generate_sites(GeneratorConfig(seed=2)), 0.4, 2)
    w = np.array([h.weight for h in hs])
    n = np.array([h.train.n for h in hs])
    np.testing.assert_allclose(w, n / n.sum())


def small_config(K, seed=4):
    return GeneratorConfig(n=(900,) * K, shape=1.0, scale=(200.0, 300.0)[:K],
                           censoring=(0.8, 0.86)[:K], seed=seed,
                           variables=tuple(v for v in GeneratorConfig().variables
                                           if v.name in ("age", "respiration", "spo2", "chf")))


def test_single_site_federated_equals_local():
    cfg = small_config(1)
    res = run_experiment(make_handles(generate_sites(cfg), 0.4, 4), FAST)
    local = res.local[1]
    assert res.federated.selected == local.selected
    assert res.federated.table == local.table
    assert np.array_equal(res.federated.model.beta, local.model.beta)
    assert res.federated_reports[1].iauc == res.local_reports[1].iauc


def test_experiment_reproducible():
    cfg = small_config(2)
    handles = make_handles(generate_sites(cfg), 0.4, 4)
    a = run_experiment(handles, FAST, local_baselines=False)
    b = run_experiment(handles, FAST, local_baselines=False)
    assert a.federated.table == b.federated.table
    assert a.federated.model.fit.transcript_bytes() == b.federated.model.fit.transcript_bytes()
    assert a.federated_reports[1].iauc_ci == b.federated_reports[1].iauc_ci
