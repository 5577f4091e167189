import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from innovation_index.dataset import SupervisedMatrix
from innovation_index.exceptions import DataError, TrainingError
from innovation_index.forest import (
    ForestModel,
    ForestParams,
    Tree,
    derive_tree_seed,
    evaluate,
    evaluate_detailed,
    fit_forest,
    fit_tree,
    load_model,
    oob_predictions,
    predict_forest,
    predict_tree,
    save_model,
)
from innovation_index.metrics import r2_score

from .oracles import brute_force_r2, expected_oob_fraction, nested_tree, oracle_forest_predict, oracle_predict


def leaf(value):
    return Tree(
        feature=np.array([-1]),
        threshold=np.array([0.0]),
        left=np.array([-1]),
        right=np.array([-1]),
        value=np.array([float(value)]),
        n_samples=np.array([1]),
    )


def manual_forest(trees, k=1):
    return ForestModel(
        trees=trees,
        params=ForestParams(n_trees=len(trees), bootstrap=False, features_per_split=k),
        master_seed=0,
        tree_seeds=[0] * len(trees),
        oob_indices=[np.empty(0, dtype=np.int64)] * len(trees),
        feature_names=[f"m{j}" for j in range(k)],
    )


def random_data(seed, n=80, k=5):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, k))
    y = X @ rng.normal(size=k) + 0.3 * rng.normal(size=n)
    return SupervisedMatrix.from_arrays(X, y)


ALL_ROWS_PARAMS = ForestParams(n_trees=1, min_samples_leaf=1, bootstrap=False)


class TestFitTree:
    def test_two_point_split(self):
        data = SupervisedMatrix.from_arrays([[0.0], [1.0]], [0.0, 10.0])
        tree = fit_tree(data, [0, 1], ALL_ROWS_PARAMS, rng_seed=0)
        assert tree.value[0] == 5.0
        assert tree.feature[0] == 0 and tree.threshold[0] == 0.5
        assert tree.value[tree.left[0]] == 0.0 and tree.value[tree.right[0]] == 10.0

    def test_constant_target_is_single_leaf(self):
        data = SupervisedMatrix.from_arrays([[0.0], [1.0], [2.0]], [4.0, 4.0, 4.0])
        tree = fit_tree(data, [0, 1, 2], ALL_ROWS_PARAMS, 0)
        assert tree.n_nodes == 1 and tree.value[0] == 4.0

    def test_max_depth_zero(self):
        data = SupervisedMatrix.from_arrays([[0.0], [1.0], [2.0]], [1.0, 2.0, 6.0])
        tree = fit_tree(data, [0, 1, 2], ForestParams(max_depth=0, min_samples_leaf=1), 0)
        assert tree.n_nodes == 1 and tree.value[0] == pytest.approx(3.0)

    def test_empty_subset_rejected(self):
        data = SupervisedMatrix.from_arrays([[0.0]], [1.0])
        with pytest.raises(TrainingError):
            fit_tree(data, [], ALL_ROWS_PARAMS, 0)

    def test_features_per_split_bounds(self):
        data = SupervisedMatrix.from_arrays([[0.0, 1.0]], [1.0])
        with pytest.raises(TrainingError):
            fit_tree(data, [0], ForestParams(features_per_split=3), 0)

    def test_tie_prefers_lower_feature(self):
        # identical columns give identical split scores
        x = np.array([0.0, 1.0, 2.0, 3.0])
        data = SupervisedMatrix.from_arrays(np.column_stack([x, x]), [0.0, 0.0, 5.0, 5.0])
        tree = fit_tree(data, range(4), ForestParams(min_samples_leaf=1, features_per_split=2), 0)
        assert tree.feature[0] == 0 and tree.threshold[0] == 1.5

    def test_adjacent_float_threshold_still_separates(self):
        lo = 1.0
        hi = np.nextafter(lo, 2.0)
        data = SupervisedMatrix.from_arrays([[lo], [hi]], [0.0, 1.0])
        tree = fit_tree(data, [0, 1], ALL_ROWS_PARAMS, 0)
        assert predict_tree(tree, [lo]) == 0.0 and predict_tree(tree, [hi]) == 1.0

    def test_min_samples_leaf_respected(self):
        data = random_data(3, n=120)
        tree = fit_tree(data, range(120), ForestParams(min_samples_leaf=7), 0)
        leaves = tree.feature < 0
        assert tree.n_samples[leaves].min() >= 7

    def test_max_depth_respected(self):
        tree = fit_tree(random_data(4), range(80), ForestParams(max_depth=3, min_samples_leaf=1), 0)
        assert tree.depth() <= 3

    def test_duplicated_rows_counted_with_multiplicity(self):
        data = SupervisedMatrix.from_arrays([[0.0], [1.0]], [0.0, 9.0])
        tree = fit_tree(data, [0, 1, 1], ForestParams(max_depth=0, min_samples_leaf=1), 0)
        assert tree.value[0] == 6.0 and tree.n_samples[0] == 3


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 4))
def test_split_node_mean_is_weighted_child_mean(seed, min_leaf):
    rng = np.random.default_rng(seed)
    data = random_data(seed, n=60)
    rows = rng.integers(0, 60, size=60)
    tree = fit_tree(data, rows, ForestParams(min_samples_leaf=min_leaf, features_per_split=2), seed)
    for i in np.flatnonzero(tree.feature >= 0):
        l, r = tree.left[i], tree.right[i]
        assert tree.n_samples[i] == tree.n_samples[l] + tree.n_samples[r]
        weighted = (tree.n_samples[l] * tree.value[l] + tree.n_samples[r] * tree.value[r]) / tree.n_samples[i]
        assert abs(weighted - tree.value[i]) <= 1e-9


class TestPredict:
    def test_path_walk_example(self):
        data = SupervisedMatrix.from_arrays([[0.0], [1.0]], [0.0, 10.0])
        tree = fit_tree(data, [0, 1], ALL_ROWS_PARAMS, 0)
        assert predict_tree(tree, [1.0]) == 10.0
        assert predict_tree(tree, [0.5]) == 0.0  # exactly at threshold goes left

    def test_single_leaf(self):
        assert predict_tree(leaf(4.0), [123.0]) == 4.0

    def test_non_finite_rejected(self):
        with pytest.raises(DataError):
            predict_tree(leaf(4.0), [np.nan])

    def test_forest_is_tree_mean(self):
        assert predict_forest(manual_forest([leaf(2.0), leaf(4.0)]), [0.0]) == 3.0

    def test_single_tree_forest_equals_tree(self):
        data = random_data(5)
        model = fit_forest(data, ForestParams(n_trees=1, bootstrap=False), master_seed=11)
        X = np.random.default_rng(1).normal(size=(20, 5))
        np.testing.assert_array_equal(model.predict(X), model.trees[0].predict(X))

    def test_held_out_row_matches_oracle(self):
        data = random_data(6)
        model = fit_forest(data, ForestParams(n_trees=10, min_samples_leaf=2), master_seed=2)
        sample = np.random.default_rng(99).normal(size=5)
        trees = [nested_tree(t.to_dict()) for t in model.trees]
        assert predict_forest(model, sample) == oracle_forest_predict(trees, list(sample))

    def test_wrong_width_rejected(self):
        model = fit_forest(random_data(7), ForestParams(n_trees=2), master_seed=0)
        with pytest.raises(DataError):
            model.predict(np.zeros((1, 4)))


class TestFitForest:
    def test_deterministic_serialization(self):
        data = random_data(8)
        params = ForestParams(n_trees=15, min_samples_leaf=2)
        a = fit_forest(data, params, master_seed=42)
        b = fit_forest(data, params, master_seed=42)
        assert a.dumps() == b.dumps()
        assert a.model_hash == b.model_hash

    def test_thread_count_does_not_change_result(self):
        data = random_data(9)
        params = ForestParams(n_trees=20, min_samples_leaf=2)
        assert fit_forest(data, params, 5, n_jobs=1).dumps() == fit_forest(data, params, 5, n_jobs=4).dumps()

    def test_different_seeds_differ(self):
        data = random_data(10)
        params = ForestParams(n_trees=5)
        assert fit_forest(data, params, 1).dumps() != fit_forest(data, params, 2).dumps()

    def test_tree_seeds_are_per_index(self):
        model = fit_forest(random_data(11), ForestParams(n_trees=4), master_seed=3)
        assert model.tree_seeds == [derive_tree_seed(3, t) for t in range(4)]
        assert len(set(model.tree_seeds)) == 4

    def test_defaults_resolve_features_per_split(self):
        model = fit_forest(random_data(12, k=10), ForestParams(n_trees=2), master_seed=0)
        assert model.params.features_per_split == 4
        assert model.params.n_trees == 2 and model.params.min_samples_leaf == 5

    def test_default_params(self):
        p = ForestParams()
        assert (p.n_trees, p.max_depth, p.min_samples_leaf, p.features_per_split, p.bootstrap) == (500, None, 5, None, True)

    def test_oob_sets_are_complements_of_bag(self):
        model = fit_forest(random_data(13, n=100), ForestParams(n_trees=50), master_seed=4)
        sizes = [len(o) for o in model.oob_indices]
        expected = 100 * expected_oob_fraction(100)
        assert 30 <= np.mean(sizes) <= 44
        assert abs(np.mean(sizes) - expected) < 4

    def test_no_bootstrap_means_no_oob(self):
        model = fit_forest(random_data(14), ForestParams(n_trees=3, bootstrap=False), master_seed=0)
        assert all(o.size == 0 for o in model.oob_indices)
        with pytest.raises(DataError):
            evaluate(model, random_data(14), "oob")

    def test_feature_indices_within_range(self):
        model = fit_forest(random_data(15, k=7), ForestParams(n_trees=10, min_samples_leaf=1), master_seed=0)
        assert all(t.feature.max() < 7 for t in model.trees)

    def test_invalid_params(self):
        with pytest.raises(TrainingError):
            ForestParams(n_trees=0)
        with pytest.raises(TrainingError):
            ForestParams(min_samples_leaf=0)


class TestSerialization:
    def test_round_trip_bit_exact(self, tmp_path):
        data = random_data(16)
        model = fit_forest(data, ForestParams(n_trees=12, min_samples_leaf=1), master_seed=7)
        path = save_model(model, tmp_path / "m.json")
        back = load_model(path)
        X = np.random.default_rng(0).normal(size=(50, 5))
        np.testing.assert_array_equal(back.predict(X), model.predict(X))
        assert back.dumps() == model.dumps()
        assert back.model_hash == model.model_hash

    def test_document_is_versioned(self):
        model = fit_forest(random_data(17), ForestParams(n_trees=1), master_seed=0)
        doc = model.to_dict()
        assert doc["format"] == "innovation-index-forest" and doc["version"] == 1
        doc["version"] = 99
        with pytest.raises(TrainingError):
            ForestModel.from_dict(doc)

    def test_garbage_rejected(self, tmp_path):
        (tmp_path / "bad.json").write_text("not json")
        with pytest.raises(TrainingError):
            load_model(tmp_path / "bad.json")


class TestEvaluate:
    def test_r2_hand_example(self):
        assert r2_score([1, 2, 3], [1, 2, 4]) == pytest.approx(0.5)
        assert brute_force_r2([1, 2, 3], [1, 2, 4]) == pytest.approx(0.5)

    def test_r2_perfect_and_mean(self):
        y = np.array([1.0, 4.0, 2.0])
        assert r2_score(y, y) == 1.0
        assert r2_score(y, np.full(3, y.mean())) == 0.0

    def test_constant_target_rejected(self):
        with pytest.raises(DataError):
            r2_score([2, 2, 2], [1, 2, 3])

    def test_in_sample_matches_brute_force(self):
        data = random_data(18)
        model = fit_forest(data, ForestParams(n_trees=10), master_seed=1)
        assert evaluate(model, data) == pytest.approx(brute_force_r2(list(data.target), list(model.predict(data.X))), abs=1e-12)

    def test_oob_uses_only_unseen_trees(self):
        data = random_data(19, n=40)
        model = fit_forest(data, ForestParams(n_trees=8, min_samples_leaf=1), master_seed=3)
        preds, counts = oob_predictions(model, data.X)
        trees = [nested_tree(t.to_dict()) for t in model.trees]
        for i in range(40):
            unseen = [trees[t] for t in range(8) if i in set(model.oob_indices[t].tolist())]
            assert counts[i] == len(unseen)
            if unseen:
                expected = sum(oracle_predict(t, list(data.X[i])) for t in unseen) / len(unseen)
                assert preds[i] == pytest.approx(expected, abs=1e-12)
            else:
                assert np.isnan(preds[i])

    def test_oob_skips_rows_never_out_of_bag(self):
        data = random_data(20, n=40)
        model = fit_forest(data, ForestParams(n_trees=2, min_samples_leaf=1), master_seed=0)
        ev = evaluate_detailed(model, data, "oob")
        _, counts = oob_predictions(model, data.X)
        assert ev.n_skipped == int((counts == 0).sum()) > 0
        assert ev.n_rows + ev.n_skipped == 40

    def test_unknown_mode(self):
        data = random_data(21)
        model = fit_forest(data, ForestParams(n_trees=1), master_seed=0)
        with pytest.raises(DataError):
            evaluate(model, data, "holdout")

    def test_memorization(self):
        data = random_data(22, n=60)
        params = ForestParams(n_trees=3, bootstrap=False, min_samples_leaf=1, features_per_split=5)
        model = fit_forest(data, params, master_seed=0)
        assert abs(evaluate(model, data) - 1.0) <= 1e-12
