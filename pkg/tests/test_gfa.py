import json

import numpy as np
import pytest
from scipy.special import expit

from treeinner import attribution as A
from treeinner.data import Dataset, ShapeError
from treeinner.gbt import ConfigError, GBTRegressor, TrainConfig, fit
from treeinner.gfa import (
    GFAResult,
    TreeInnerSelector,
    abs_gfa,
    compute_gfa,
    forest_inner,
    permutation_importance,
    tree_inner,
)
from treeinner.metrics import auc, normalize_l1

from .conftest import TOY_X, TOY_Y


def _oracle_tree_inner(model, data, ifa):
    """Materialize every per-tree IFA and residual, then take inner products."""
    attr = A.predecomp(model, data.features, ifa)
    scores = np.zeros(data.n_features)
    for m in range(model.n_trees):
        raw = model.raw_predict(data.features, m)
        resid = data.labels - (expit(raw) if model.loss == "logistic" else raw)
        scores += attr.per_tree[m].T @ resid
    return scores / model.config_.eta


# worked example ---------------------------------------------------------------


@pytest.mark.parametrize("family", ["tree_inner", "forest_inner"])
def test_structure_one_inner_families(structure1, toy, family):
    res = compute_gfa(structure1, family, toy, "train")
    np.testing.assert_allclose(res.scores, [5 / 6, 0.0], atol=1e-12)


def test_structure_one_abs(structure1, toy):
    res = abs_gfa(structure1, "predecomp", toy, "train")
    np.testing.assert_allclose(res.scores, [7 / 18, 0.0], atol=1e-12)


def test_zero_residuals_give_zero_scores(structure1):
    # with M=1 the only residual is y - f_[0] = y
    zero = Dataset(TOY_X, np.zeros(3))
    np.testing.assert_array_equal(tree_inner(structure1, "predecomp", zero).scores, 0.0)
    np.testing.assert_array_equal(forest_inner(structure1, "predecomp", zero).scores, 0.0)


# families against oracles -----------------------------------------------------


@pytest.mark.parametrize("ifa", A.IFA_KINDS)
def test_tree_inner_matches_materialized_oracle(small_models, sim_regression, sim_classification, ifa):
    for idx in (1, 4):
        model, _train = small_models[idx]
        valid = (sim_regression if idx < 3 else sim_classification)[1]
        got = tree_inner(model, ifa, valid).scores
        np.testing.assert_allclose(got, _oracle_tree_inner(model, valid, ifa), rtol=1e-10, atol=1e-10)
        # an explicit AttributionMatrix gives the same answer as the streamed path
        attr = A.predecomp(model, valid.features, ifa)
        np.testing.assert_allclose(tree_inner(model, attr, valid).scores, got, rtol=1e-12, atol=1e-12)


def test_forest_inner_and_abs_match_materialized(small_models, sim_regression):
    model, _ = small_models[2]
    valid = sim_regression[1]
    attr = A.predecomp(model, valid.features)
    forest = attr.per_tree.sum(axis=0)
    np.testing.assert_allclose(
        forest_inner(model, "predecomp", valid).scores, valid.labels @ forest / model.config_.eta, rtol=1e-10
    )
    np.testing.assert_allclose(abs_gfa(model, "predecomp", valid).scores, np.abs(forest).mean(axis=0), rtol=1e-10)
    np.testing.assert_allclose(abs_gfa(model, attr, valid).scores, np.abs(forest).mean(axis=0), rtol=1e-12)


def test_abs_per_tree_aggregate(small_models, sim_regression, structure1, toy):
    model, _ = small_models[1]
    valid = sim_regression[1]
    attr = A.predecomp(model, valid.features)
    expected = np.abs(attr.per_tree).mean(axis=1).sum(axis=0)
    np.testing.assert_allclose(abs_gfa(model, "predecomp", valid, aggregate="tree").scores, expected, rtol=1e-12)
    np.testing.assert_allclose(abs_gfa(model, attr, valid, aggregate="tree").scores, expected, rtol=1e-12)
    # one tree: nothing to cancel, both aggregates agree
    np.testing.assert_allclose(abs_gfa(structure1, "predecomp", toy, aggregate="tree").scores, [7 / 18, 0.0])
    with pytest.raises(ValueError):
        abs_gfa(model, "predecomp", valid, aggregate="sum")


def test_tree_inner_train_equals_total_gain(small_models):
    for model, train in small_models:
        got = tree_inner(model, "predecomp", train, "train").scores
        _, tg = A.total_gain(model)
        np.testing.assert_allclose(got, tg, rtol=1e-8, atol=1e-10 * np.abs(tg).max())


def test_abs_nonnegative_and_inner_can_be_negative(sim_regression):
    train, valid, truth = sim_regression
    model = fit(train, TrainConfig(eta=0.1, max_depth=4, num_boost_round=60))
    assert np.all(abs_gfa(model, "predecomp", valid).scores >= 0)
    assert np.any(tree_inner(model, "predecomp", valid).scores < 0)


def test_rescaling_scores_keeps_auc(small_models, sim_regression):
    model, _ = small_models[1]
    train, valid, truth = sim_regression
    s = tree_inner(model, "predecomp", valid).scores
    rel = truth.relevance()
    assert auc(s, rel) == auc(3.7 * s, rel) == auc(normalize_l1(s), rel)


def test_shape_mismatch(structure1):
    with pytest.raises(ShapeError):
        tree_inner(structure1, "predecomp", Dataset(np.zeros((2, 3)), np.zeros(2)))
    attr = A.predecomp(structure1, TOY_X[:2])
    with pytest.raises(ShapeError):
        tree_inner(structure1, attr, Dataset(TOY_X, TOY_Y))


# permutation ---------------------------------------------------------------


def test_permutation_ignored_feature_scores_zero(structure1, toy):
    for seed in range(5):
        res = permutation_importance(structure1, toy, "train", seed=seed)
        assert res.scores[1] == 0.0
        assert res.ifa_kind == "none"


def test_permutation_single_leaf_model_all_zero():
    X = np.random.default_rng(0).normal(size=(30, 3))
    model = GBTRegressor(num_boost_round=3).fit(X, np.ones(30))
    assert all(t.n_nodes == 1 for t in model.trees_)
    res = permutation_importance(model, Dataset(X, np.ones(30)), n_repeats=3)
    np.testing.assert_array_equal(res.scores, 0.0)


@pytest.mark.parametrize("n", [0, -1, 1.5])
def test_permutation_repeats_validated(structure1, toy, n):
    with pytest.raises(ConfigError):
        permutation_importance(structure1, toy, n_repeats=n)


def test_permutation_seeded(small_models, sim_regression):
    model, _ = small_models[1]
    valid = sim_regression[1]
    a = permutation_importance(model, valid, seed=3, n_repeats=2)
    b = permutation_importance(model, valid, seed=3, n_repeats=2)
    np.testing.assert_array_equal(a.scores, b.scores)
    assert a.repeat_scores.shape == (2, valid.n_features)


def test_permutation_standard_error_shrinks(sim_regression):
    train, valid, truth = sim_regression
    k = truth.relevant[-1]
    sub = Dataset(valid.features[:, : k + 1], valid.labels)
    model_k = fit(Dataset(train.features[:, : k + 1], train.labels), TrainConfig(eta=0.1, max_depth=3, num_boost_round=40))
    # spread of the repeat-averaged score over independent seeds, per repeat count
    spreads = {}
    for r in (1, 4, 16):
        vals = [permutation_importance(model_k, sub, n_repeats=r, seed=s).scores[k] for s in range(40)]
        spreads[r] = np.std(vals, ddof=1)
    # halving per 4x repeats, with generous sampling slack
    assert 0.3 < spreads[4] / spreads[1] < 0.8
    assert 0.3 < spreads[16] / spreads[4] < 0.8


# results and selector --------------------------------------------------------


def test_result_invariants():
    with pytest.raises(ValueError):
        GFAResult(np.array([np.nan]), "tree_inner", "predecomp", "valid")
    with pytest.raises(ValueError):
        GFAResult(np.array([1.0]), "permutation", "predecomp", "valid")
    with pytest.raises(ValueError):
        GFAResult(np.array([1.0]), "abs", "none", "valid")


def test_result_exports(tmp_path, structure1, toy):
    res = tree_inner(structure1, "predecomp", toy, "train", model_id="m.json")
    res.to_csv(tmp_path / "g.csv")
    lines = (tmp_path / "g.csv").read_text().splitlines()
    assert lines[0] == "feature,score,family,ifa,domain"
    assert lines[1].startswith("x1,") and lines[1].endswith(",tree_inner,predecomp,train")
    res.to_json(tmp_path / "g.json")
    doc = json.loads((tmp_path / "g.json").read_text())
    assert doc["metadata"] == {"family": "tree_inner", "ifa": "predecomp", "domain": "train", "model_id": "m.json"}
    assert doc["scores"] == pytest.approx([5 / 6, 0.0])


def test_selector_picks_relevant_features(sim_regression):
    train, valid, truth = sim_regression
    sel = TreeInnerSelector(GBTRegressor(eta=0.1, max_depth=3, num_boost_round=50), n_features_to_select=5)
    sel.fit(train.features, train.labels, eval_set=(valid.features, valid.labels))
    assert sel.transform(valid.features).shape == (valid.n_samples, 5)
    assert sel.get_support().sum() == 5
    assert sel.scores_.shape == (50,)


def test_selector_default_keeps_positive(structure1):
    sel = TreeInnerSelector(GBTRegressor(eta=1.0, max_depth=1, num_boost_round=1)).fit(TOY_X, TOY_Y)
    np.testing.assert_array_equal(sel.get_support(), [True, False])
