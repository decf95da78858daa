import numpy as np
import pytest

from fedscore_surv.federation import GeneratorConfig, generate_sites
from fedscore_surv.pipeline import PipelineConfig, build_model, build_scheme, site_weights
from fedscore_surv.streams import derive_seed, stream

VARS = ("age", "respiration", "spo2", "chf")


@pytest.fixture(scope="module")
def sites():
    cfg = GeneratorConfig(n=(900, 1200), shape=1.0, scale=(200.0, 250.0), censoring=(0.8, 0.84),
                          seed=6)
    return generate_sites(cfg)


def test_precomputed_scheme_gives_same_model(sites):
    cfg = PipelineConfig()
    full = build_scheme(sites, sites[0].variable_names, site_weights(sites, cfg), cfg)
    a = build_model(sites, VARS, cfg)
    b = build_model(sites, VARS, cfg, scheme=full)
    assert a.table == b.table
    np.testing.assert_array_equal(a.beta, b.beta)


def test_similarity_merge_never_adds_categories(sites):
    base = build_model(sites, VARS, PipelineConfig())
    merged = build_model(sites, VARS, PipelineConfig(merge_epsilon=0.3))
    for v in VARS:
        assert merged.scheme.n_categories(v) <= base.scheme.n_categories(v)
    assert merged.table.max_total <= 100


def test_config_validation():
    with pytest.raises(ValueError):
        PipelineConfig(D=0)
    with pytest.raises(ValueError):
        PipelineConfig(percentiles=(20, 20, 60))
    with pytest.raises(ValueError):
        PipelineConfig(method="pooled")
    assert PipelineConfig(weights=(2, 6)).weights == (0.25, 0.75)


def test_streams_are_keyed_and_reproducible():
    a = stream(1, "tree", 3).random(4)
    assert np.array_equal(a, stream(1, "tree", 3).random(4))
    assert not np.array_equal(a, stream(1, "tree", 4).random(4))
    assert not np.array_equal(a, stream(2, "tree", 3).random(4))
    assert derive_seed(1, "forest", 2) == derive_seed(1, "forest", 2) != derive_seed(1, "forest", 3)
