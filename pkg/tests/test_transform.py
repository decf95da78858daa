import numpy as np
import pytest
from hypothesis import given, strategies as st

from fedscore_surv.survival import CATEGORICAL
from fedscore_surv.transform import (CutoffScheme, LocalCutoffs, categorize,
                                     category_event_counts, local_quantile_cutoffs,
                                     merge_similar_categories, merge_sparse_categories,
                                     nearest_rank_quantile, unify_cutoffs)

from conftest import make_data


def one_var(values, events=None):
    values = np.asarray(values, dtype=float)
    events = np.ones(values.size) if events is None else events
    return make_data(np.arange(1, values.size + 1), events, values[:, None], names=["x"])


def test_nearest_rank_on_one_to_ten():
    lc = local_quantile_cutoffs(one_var(np.arange(1, 11)), "x")
    assert lc.cutoffs == (2.0, 4.0, 6.0, 8.0)
    assert not lc.degenerate


def test_nearest_rank_definition_oracle():
    # rank = ceil(q n / 100), 1-based
    x = np.sort(np.random.default_rng(0).normal(size=37))
    for q in (1, 20, 33.3, 50, 80, 99):
        r = int(np.ceil(q * 37 / 100))
        assert nearest_rank_quantile(x, q) == x[r - 1]


def test_constant_column_degenerate():
    lc = local_quantile_cutoffs(one_var([3.0] * 10), "x")
    assert lc.degenerate and lc.cutoffs == ()
    assert lc.padded() is None


def test_tied_values_deduplicated():
    lc = local_quantile_cutoffs(one_var([1, 1, 1, 1, 2, 2, 2, 2, 3, 3]), "x")
    assert lc.raw == (1.0, 1.0, 2.0, 2.0)
    # a cutoff at the sample minimum would leave the lowest interval empty
    assert lc.cutoffs == (2.0,)
    assert lc.padded() == (2.0, 2.0, 2.0, 2.0)


def test_unify_examples():
    assert unify_cutoffs([(10.0,), (20.0,)], [0.25, 0.75]) == (17.5,)
    assert unify_cutoffs([(2.0, 4.0, 6.0)], [1.0]) == (2.0, 4.0, 6.0)
    assert unify_cutoffs([(1.0, 5.0)] * 3, [0.2, 0.3, 0.5]) == (1.0, 5.0)


def test_unify_skips_degenerate_site():
    deg = LocalCutoffs("x", (3.0,), (), True)
    assert unify_cutoffs([deg, (10.0,), (20.0,)], [0.5, 0.25, 0.25]) == (15.0,)


@given(st.lists(st.lists(st.floats(-100, 100), min_size=3, max_size=3), min_size=1, max_size=5),
       st.lists(st.floats(0.01, 5), min_size=5, max_size=5))
def test_unify_is_convex_combination(local, w):
    local = [tuple(sorted(c)) for c in local]
    out = unify_cutoffs(local, w[:len(local)])
    V = np.array(local)
    # duplicates collapse, so check every output lies in some position's hull
    for c in out:
        assert any(V[:, i].min() - 1e-9 <= c <= V[:, i].max() + 1e-9 for i in range(3))


def test_categorize_examples():
    s = CutoffScheme(("x",), {"x": (2.0, 4.0, 6.0, 8.0)})
    assert s.assign("x", [4.0]).tolist() == [2]  # third of five, left-closed
    assert s.labels("x")[2] == "[4,6)"
    assert s.assign("x", [-100.0]).tolist() == [0]
    assert (s.assign("x", [1, 3, 5, 7, 9]) + 1).tolist() == [1, 2, 3, 4, 5]


@given(st.lists(st.floats(-50, 50), min_size=1, max_size=30),
       st.lists(st.floats(-50, 50), min_size=1, max_size=4, unique=True))
def test_dummy_rows_sum_to_at_most_one(values, cuts):
    d = one_var(values)
    s = CutoffScheme(("x",), {"x": tuple(sorted(cuts))})
    design = categorize(d, s)
    assert np.all(design.matrix.sum(axis=1) <= 1)
    assert design.matrix.shape[1] == len(cuts)


def test_categorical_groups():
    d = make_data([1, 2, 3], [1, 1, 1], [[0.0], [1.0], [2.0]], names=["g"], kinds=[CATEGORICAL])
    s = CutoffScheme(("g",), {}, {"g": ((0.0,), (1.0, 2.0))})
    assert s.assign("g", d.column("g")).tolist() == [0, 1, 1]
    with pytest.raises(ValueError):
        s.assign("g", [5.0])


def test_merge_similar_example():
    s = CutoffScheme(("x",), {"x": (2.0, 4.0)})
    design = categorize(one_var([1, 3, 5]), s)
    merged = merge_similar_categories(design, [0.05, 0.9], 0.1)
    assert merged.cutoffs["x"] == (4.0,)
    assert merge_similar_categories(design, [0.5, 0.9], 0.1) == s
    assert merge_similar_categories(design, [0.05, 0.9], 0.0) == s


@given(st.lists(st.floats(-2, 2), min_size=4, max_size=4), st.floats(0, 1))
def test_merging_never_adds_or_reorders(beta, eps):
    s = CutoffScheme(("x",), {"x": (1.0, 2.0, 3.0, 4.0)})
    design = categorize(one_var([0, 1.5, 2.5, 3.5, 4.5]), s)
    m = merge_similar_categories(design, beta, eps)
    assert m.n_categories("x") <= 5
    assert list(m.cutoffs["x"]) == sorted(m.cutoffs["x"])
    assert set(m.cutoffs["x"]) <= set(s.cutoffs["x"])


def test_sparse_categories_merged_at_every_site():
    s = CutoffScheme(("x",), {"x": (2.0, 4.0)})
    a = one_var([1, 1, 3, 3, 5, 5], [1, 1, 1, 1, 1, 1])
    b = one_var([1, 1, 3, 3, 5, 5], [1, 1, 0, 0, 1, 1])
    counts = [category_event_counts(d, s) for d in (a, b)]
    m = merge_sparse_categories(s, counts, min_events=1)
    assert m.n_categories("x") == 2


def test_scheme_csv_round_trip(tmp_path):
    s = CutoffScheme(("x", "g"), {"x": (1.5, 17.5)}, {"g": ((0.0,), (1.0, 2.0))})
    s.to_csv(tmp_path / "c.csv")
    assert CutoffScheme.from_csv(tmp_path / "c.csv") == s


def test_scheme_deterministic():
    rng = np.random.default_rng(4)
    d = one_var(rng.normal(size=200))
    assert local_quantile_cutoffs(d, "x") == local_quantile_cutoffs(d, "x")
