"""Acceptance criteria. Each test is tagged with its criterion number; the
terminal summary prints one PASS/FAIL line per criterion."""

import time

import numpy as np
import pytest
import yaml

from innovation_index.analysis import compare_pair, diff_vector
from innovation_index.attribution import contribution_matrix, tree_contributions
from innovation_index.cli import main
from innovation_index.clustering import best_of_restarts, kmeanspp_init
from innovation_index.dataset import Panel, SupervisedMatrix, apply_scaler, fit_scaler
from innovation_index.forest import ForestParams, evaluate, fit_forest, predict_tree
from innovation_index.metrics import r2_score
from innovation_index.synth import make_blobs, make_linear

from .oracles import expected_oob_fraction, nested_tree, oracle_contributions, oracle_predict
from .test_clustering import label_agreement


def random_forest_case(rng):
    k = int(rng.integers(2, 31))
    n = int(rng.integers(30, 61))
    X = rng.normal(size=(n, k))
    w = rng.normal(size=k)
    y = X @ w + rng.normal(size=n) * rng.uniform(0.1, 2.0)
    params = ForestParams(
        n_trees=int(rng.choice([1, 10, 50])),
        max_depth=[None, 1, 2, 4, 8][int(rng.integers(5))],
        min_samples_leaf=int(rng.integers(1, 6)),
        features_per_split=int(rng.integers(1, k + 1)),
        bootstrap=bool(rng.integers(2)),
    )
    model = fit_forest(SupervisedMatrix.from_arrays(X, y), params, master_seed=int(rng.integers(1 << 31)))
    return model, k


@pytest.mark.acceptance(1, "additive identity on 200 random forests x 50 samples")
def test_additive_identity_suite(record_property):
    rng = np.random.default_rng(2024)
    start = time.perf_counter()
    worst = 0.0
    for _ in range(200):
        model, k = random_forest_case(rng)
        samples = rng.normal(scale=1.5, size=(50, k))
        panel = Panel([(f"s{i}", 0) for i in range(50)], model.feature_names, samples, np.zeros(samples.shape, bool))
        cm = contribution_matrix(model, panel)
        predicted = model.predict(samples)
        gap = np.abs(predicted - cm.baseline - cm.contributions.sum(axis=1)) / np.maximum(1.0, np.abs(predicted))
        worst = max(worst, float(gap.max()))
        assert np.all(gap <= 1e-9)
    elapsed = time.perf_counter() - start
    record_property("max_rel_gap", f"{worst:.1e}")
    record_property("seconds", f"{elapsed:.1f}")
    assert elapsed < 30.0


@pytest.mark.acceptance(2, "path-walk oracle equals predict_tree and tree_contributions on 1000 pairs")
def test_oracle_equivalence():
    rng = np.random.default_rng(7)
    pairs = 0
    while pairs < 1000:
        model, k = random_forest_case(rng)
        tree = model.trees[int(rng.integers(len(model.trees)))]
        oracle = nested_tree(tree.to_dict())
        for sample in rng.normal(scale=1.5, size=(10, k)):
            assert predict_tree(tree, sample) == oracle_predict(oracle, sample)
            baseline, c = tree_contributions(tree, sample)
            o_base, o_c = oracle_contributions(oracle, sample, k)
            assert baseline == o_base
            assert c.tolist() == o_c
            pairs += 1


@pytest.mark.acceptance(3, "synthetic linear regression: held-out R2 >= 0.8, |OOB - held-out| <= 0.1")
def test_synthetic_regression(record_property):
    start = time.perf_counter()
    train, holdout = make_linear(200, 10, seed=0, noise_ratio=0.1, n_holdout=200)
    data = SupervisedMatrix.from_arrays(train.X, train.y)
    model = fit_forest(data, master_seed=0)
    held = r2_score(holdout.y, model.predict(holdout.X))
    oob = evaluate(model, data, mode="oob")
    elapsed = time.perf_counter() - start
    record_property("held_out_r2", f"{held:.3f}")
    record_property("oob_r2", f"{oob:.3f}")
    record_property("seconds", f"{elapsed:.1f}")
    assert held >= 0.8
    assert abs(oob - held) <= 0.1
    assert elapsed < 10.0


@pytest.mark.acceptance(3, "synthetic linear regression: held-out R2 >= 0.8, |OOB - held-out| <= 0.1")
def test_oob_tracks_held_out_across_seeds(record_property):
    gaps = []
    for seed in range(1, 6):
        train, holdout = make_linear(200, 10, seed=seed, n_holdout=200)
        data = SupervisedMatrix.from_arrays(train.X, train.y)
        model = fit_forest(data, ForestParams(n_trees=200), master_seed=seed)
        gaps.append(abs(evaluate(model, data, "oob") - r2_score(holdout.y, model.predict(holdout.X))))
    record_property("max_oob_gap_seeds_1_5", f"{max(gaps):.3f}")
    assert max(gaps) <= 0.1


@pytest.mark.acceptance(4, "memorization: in-sample R2 = 1 within 1e-12")
def test_memorization(record_property):
    rng = np.random.default_rng(11)
    X = rng.normal(size=(150, 6))
    y = X @ rng.normal(size=6) + rng.normal(size=150)
    data = SupervisedMatrix.from_arrays(X, y)
    params = ForestParams(n_trees=10, max_depth=None, min_samples_leaf=1, bootstrap=False)
    model = fit_forest(data, params, master_seed=3)
    r2 = evaluate(model, data, mode="in-sample")
    record_property("in_sample_r2", repr(r2))
    assert abs(r2 - 1.0) <= 1e-12


@pytest.mark.acceptance(5, "standardization with 20% missingness: moments and imputation equivalence")
def test_standardization_suite():
    for seed in range(200):
        rng = np.random.default_rng(seed)
        n, k = int(rng.integers(10, 80)), int(rng.integers(1, 12))
        values = rng.normal(loc=rng.uniform(-1e3, 1e3, k), scale=rng.uniform(1e-3, 1e2, k), size=(n, k))
        if k > 1:
            values[:, 0] = values[0, 0]  # one constant column
        missing = rng.random((n, k)) < 0.2
        panel = Panel([(f"c{i}", 2000) for i in range(n)], [f"m{j}" for j in range(k)], values, missing)
        params = fit_scaler(panel)
        out = apply_scaler(panel, params)
        for j in np.flatnonzero(~params.constant):
            present = out.values[~missing[:, j], j]
            assert abs(present.mean()) <= 1e-9
            assert abs(present.var() - 1.0) <= 1e-9
        imputed = np.where(missing, params.mean[None, :], values)
        safe = np.where(params.constant, 1.0, params.std)
        by_mean = np.where(params.constant[None, :], 0.0, (imputed - params.mean) / safe)
        np.testing.assert_allclose(out.values, by_mean, rtol=0, atol=1e-9)
        assert np.all(out.values[missing] == 0.0)


@pytest.mark.acceptance(6, "k-means: blob recovery >= 95%, non-increasing inertia, forced D2 draw")
def test_clustering_suite(record_property):
    worst = 1.0
    for seed in range(5):
        points, labels = make_blobs(n_per_blob=50, n_blobs=3, n_dims=5, sigma=1.0, separation=10.0, seed=seed)
        best, runs = best_of_restarts(points, 3, seed=seed, restarts=10)
        assert len(runs) == 10
        for run in runs:
            trace = run.inertia_trace
            assert all(b <= a for a, b in zip(trace, trace[1:]))
        worst = min(worst, label_agreement(best.assignments, labels))
    record_property("min_agreement", f"{worst:.3f}")
    assert worst >= 0.95
    for seed in range(50):
        centers = kmeanspp_init([[0.0, 0.0], [3.0, 4.0]], 2, rng_seed=seed)
        assert sorted(map(tuple, centers.tolist())) == [(0.0, 0.0), (3.0, 4.0)]


@pytest.mark.acceptance(7, "comparison antisymmetry and diff-sum identity on 100 pairs")
def test_comparison_suite():
    rng = np.random.default_rng(5)
    X = rng.normal(size=(120, 8))
    data = SupervisedMatrix.from_arrays(X, X @ rng.normal(size=8) + rng.normal(size=120),
                                        row_ids=[(f"C{i:03d}", 2010) for i in range(120)])
    cm = contribution_matrix(fit_forest(data, ForestParams(n_trees=30), master_seed=1), data)
    for _ in range(100):
        i, j = rng.choice(len(cm), size=2, replace=False)
        a, b = cm.row(int(i)), cm.row(int(j))
        ab, ba = compare_pair(a, b, top_n=8), compare_pair(b, a, top_n=8)
        assert [e.metric_id for e in ab.entries] == [e.metric_id for e in ba.entries]
        assert all(x.diff == -y.diff for x, y in zip(ab.entries, ba.entries))
        np.testing.assert_array_equal(diff_vector(a, b), -diff_vector(b, a))
        assert abs(diff_vector(a, b).sum() - (a.predicted - b.predicted)) <= 1e-9


def run_pipeline(config, out_dir):
    for cmd in ("train", "evaluate", "contribute", "cluster", "compare"):
        assert main([cmd, "--config", str(config), "--output-dir", str(out_dir)]) == 0, cmd


@pytest.mark.acceptance(8, "two end-to-end CLI runs give byte-identical output directories")
def test_determinism_suite(tmp_path, record_property):
    assert main(["synth", "--out", str(tmp_path / "data"), "--seed", "4"]) == 0
    config = tmp_path / "data" / "config.yaml"
    cfg = yaml.safe_load(config.read_text())
    cfg["forest"]["n_trees"] = 60
    config.write_text(yaml.safe_dump(cfg))
    run_pipeline(config, tmp_path / "run1")
    run_pipeline(config, tmp_path / "run2")
    files1 = sorted(p.relative_to(tmp_path / "run1") for p in (tmp_path / "run1").rglob("*") if p.is_file())
    files2 = sorted(p.relative_to(tmp_path / "run2") for p in (tmp_path / "run2").rglob("*") if p.is_file())
    assert files1 == files2 and len(files1) > 8
    for rel in files1:
        assert (tmp_path / "run1" / rel).read_bytes() == (tmp_path / "run2" / rel).read_bytes(), rel
    record_property("files", len(files1))


@pytest.mark.acceptance(9, "mean OOB fraction over 50 trees in [0.30, 0.44]")
def test_oob_sanity(record_property):
    rng = np.random.default_rng(0)
    n = 200
    X = rng.normal(size=(n, 4))
    model = fit_forest(SupervisedMatrix.from_arrays(X, X[:, 0]), ForestParams(n_trees=50), master_seed=8)
    frac = float(np.mean([idx.size / n for idx in model.oob_indices]))
    record_property("mean_oob_fraction", f"{frac:.4f}")
    record_property("expected", f"{expected_oob_fraction(n):.4f}")
    assert 0.30 <= frac <= 0.44
