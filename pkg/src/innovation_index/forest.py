"""CART regression trees and bagged random forests.

Trees are stored as flat arrays in preorder (node 0 is the root, a split
node's left child immediately follows it). A sample goes left when
``x[feature] <= threshold``.

All randomness is pre-derived: the master seed and tree index give a tree
seed, and the tree seed plus a node's preorder id give that node's feature
draw. Fitting is therefore bit-identical under any thread count.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from functools import cached_property
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from .dataset import ScalerParams, SupervisedMatrix
from .exceptions import DataError, TrainingError
from .metrics import r2_score

MODEL_FORMAT = "innovation-index-forest"
MODEL_VERSION = 1

_BOOTSTRAP_STREAM = 0
_NODE_STREAM = 1


@dataclass(frozen=True)
class ForestParams:
    n_trees: int = 500
    max_depth: int | None = None
    min_samples_leaf: int = 5
    features_per_split: int | None = None
    bootstrap: bool = True

    def __post_init__(self) -> None:
        if self.n_trees < 1:
            raise TrainingError(f"n_trees must be >= 1, got {self.n_trees}")
        if self.max_depth is not None and self.max_depth < 0:
            raise TrainingError(f"max_depth must be >= 0 or None, got {self.max_depth}")
        if self.min_samples_leaf < 1:
            raise TrainingError(f"min_samples_leaf must be >= 1, got {self.min_samples_leaf}")

    def resolve(self, n_features: int) -> ForestParams:
        """Fill in ``features_per_split`` (default ceil(K/3)) and validate it against K."""
        m = self.features_per_split
        if m is None:
            m = max(1, math.ceil(n_features / 3))
        if not 1 <= m <= n_features:
            raise TrainingError(f"features_per_split must be in [1, {n_features}], got {m}")
        return replace(self, features_per_split=m)

    def to_dict(self) -> dict[str, Any]:
        return {
            "n_trees": self.n_trees,
            "max_depth": self.max_depth,
            "min_samples_leaf": self.min_samples_leaf,
            "features_per_split": self.features_per_split,
            "bootstrap": self.bootstrap,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> ForestParams:
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise TrainingError(f"unknown hyperparameters: {sorted(unknown)}")
        return cls(**d)


@dataclass(frozen=True, eq=False)
class Tree:
    """A fitted regression tree.

    ``feature[i] == -1`` marks a leaf. ``value[i]`` is the mean training
    target of the samples that reached node ``i`` (counted with bootstrap
    multiplicity), for leaves and split nodes alike.
    """

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    n_samples: np.ndarray

    @property
    def n_nodes(self) -> int:
        return int(self.feature.shape[0])

    @property
    def root_value(self) -> float:
        return float(self.value[0])

    def is_leaf(self, node: int) -> bool:
        return self.feature[node] < 0

    def depth(self) -> int:
        depths = np.zeros(self.n_nodes, dtype=np.int64)
        for i in range(self.n_nodes):
            if self.feature[i] >= 0:
                depths[self.left[i]] = depths[self.right[i]] = depths[i] + 1
        return int(depths.max())

    def apply(self, X: np.ndarray) -> np.ndarray:
        """Leaf index reached by each row of ``X``."""
        X = check_samples(X, None)
        node = np.zeros(X.shape[0], dtype=np.int64)
        rows = np.flatnonzero(self.feature[node] >= 0)
        while rows.size:
            at = node[rows]
            f = self.feature[at]
            go_left = X[rows, f] <= self.threshold[at]
            node[rows] = np.where(go_left, self.left[at], self.right[at])
            rows = rows[self.feature[node[rows]] >= 0]
        return node

    def predict(self, X: np.ndarray) -> np.ndarray:
        return self.value[self.apply(X)]

    def to_dict(self) -> dict[str, list]:
        return {
            "feature": self.feature.tolist(),
            "threshold": [float(t) for t in self.threshold],
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "value": [float(v) for v in self.value],
            "n_samples": self.n_samples.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict[str, list]) -> Tree:
        tree = cls(
            feature=np.asarray(d["feature"], dtype=np.int64),
            threshold=np.asarray(d["threshold"], dtype=np.float64),
            left=np.asarray(d["left"], dtype=np.int64),
            right=np.asarray(d["right"], dtype=np.int64),
            value=np.asarray(d["value"], dtype=np.float64),
            n_samples=np.asarray(d["n_samples"], dtype=np.int64),
        )
        n = tree.n_nodes
        if n == 0 or any(a.shape != (n,) for a in (tree.threshold, tree.left, tree.right, tree.value, tree.n_samples)):
            raise TrainingError("malformed tree: node arrays are empty or of unequal length")
        return tree


@dataclass(frozen=True, eq=False)
class ForestModel:
    trees: list[Tree]
    params: ForestParams
    master_seed: int
    tree_seeds: list[int]
    oob_indices: list[np.ndarray]
    feature_names: list[str]
    scaler: ScalerParams | None = None
    target_name: str = "target"
    n_train: int = 0

    def __post_init__(self) -> None:
        if len(self.trees) != self.params.n_trees:
            raise TrainingError(f"model has {len(self.trees)} trees, params say {self.params.n_trees}")
        k = len(self.feature_names)
        for tree in self.trees:
            if tree.feature.size and tree.feature.max() >= k:
                raise TrainingError("tree splits on a feature index beyond feature_names")

    @property
    def n_features(self) -> int:
        return len(self.feature_names)

    def predict(self, X: np.ndarray) -> np.ndarray:
        X = check_samples(X, self.n_features)
        total = np.zeros(X.shape[0])
        for tree in self.trees:
            total += tree.predict(X)
        return total / len(self.trees)

    def to_dict(self) -> dict[str, Any]:
        return {
            "format": MODEL_FORMAT,
            "version": MODEL_VERSION,
            "params": self.params.to_dict(),
            "master_seed": self.master_seed,
            "tree_seeds": list(self.tree_seeds),
            "feature_names": list(self.feature_names),
            "target_name": self.target_name,
            "n_train": self.n_train,
            "scaler": None if self.scaler is None else self.scaler.to_dict(),
            "oob_indices": [idx.tolist() for idx in self.oob_indices],
            "trees": [tree.to_dict() for tree in self.trees],
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> ForestModel:
        if d.get("format") != MODEL_FORMAT:
            raise TrainingError(f"not a forest model document (format={d.get('format')!r})")
        if d.get("version") != MODEL_VERSION:
            raise TrainingError(f"unsupported model version {d.get('version')!r}")
        return cls(
            trees=[Tree.from_dict(t) for t in d["trees"]],
            params=ForestParams.from_dict(d["params"]),
            master_seed=int(d["master_seed"]),
            tree_seeds=[int(s) for s in d["tree_seeds"]],
            oob_indices=[np.asarray(i, dtype=np.int64) for i in d["oob_indices"]],
            feature_names=[str(f) for f in d["feature_names"]],
            scaler=None if d.get("scaler") is None else ScalerParams.from_dict(d["scaler"]),
            target_name=str(d.get("target_name", "target")),
            n_train=int(d.get("n_train", 0)),
        )

    def dumps(self) -> str:
        """Serialize to the versioned JSON model document.

        Header fields are pretty-printed; each tree is one compact line.
        """
        doc = self.to_dict()
        trees = doc.pop("trees")
        oob = doc.pop("oob_indices")
        doc["trees"] = "@@TREES@@"
        doc["oob_indices"] = "@@OOB@@"
        text = json.dumps(doc, indent=2, sort_keys=True)

        def block(items: list) -> str:
            if not items:
                return "[]"
            body = ",\n".join("    " + json.dumps(it, sort_keys=True, separators=(",", ":")) for it in items)
            return "[\n" + body + "\n  ]"

        text = text.replace('"@@TREES@@"', block(trees)).replace('"@@OOB@@"', block(oob))
        return text + "\n"

    @classmethod
    def loads(cls, text: str) -> ForestModel:
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise TrainingError(f"model file is not valid JSON: {exc}") from None
        return cls.from_dict(doc)

    @cached_property
    def model_hash(self) -> str:
        return hashlib.sha256(self.dumps().encode("utf-8")).hexdigest()


def save_model(model: ForestModel, path: str | os.PathLike[str]) -> Path:
    path = Path(path)
    path.write_text(model.dumps(), encoding="utf-8")
    return path


def load_model(path: str | os.PathLike[str]) -> ForestModel:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise TrainingError(f"cannot read model file {path}: {exc}") from None
    return ForestModel.loads(text)


def check_samples(X, n_features: int | None) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2:
        raise DataError(f"samples must be a vector or a 2-D matrix, got shape {X.shape}")
    if n_features is not None and X.shape[1] != n_features:
        raise DataError(f"samples have {X.shape[1]} features, model expects {n_features}")
    if not np.all(np.isfinite(X)):
        raise DataError("samples contain non-finite feature values")
    return X


def derive_tree_seed(master_seed: int, tree_index: int) -> int:
    if master_seed < 0:
        raise TrainingError(f"seed must be a non-negative integer, got {master_seed}")
    state = np.random.SeedSequence([master_seed, tree_index]).generate_state(2, np.uint32)
    return int(state[0]) << 32 | int(state[1])


def _node_rng(tree_seed: int, node_id: int) -> np.random.Generator:
    return np.random.default_rng([tree_seed, _NODE_STREAM, node_id])


def _best_split(
    Xn: np.ndarray, y: np.ndarray, min_leaf: int
) -> tuple[int, float] | None:
    """Best (candidate column, threshold) for one node, or None.

    Minimizing the children's summed squared error is the same as maximizing
    ``S_l^2/n_l + S_r^2/n_r`` over the target sums of each side.
    """
    n = y.shape[0]
    order = np.argsort(Xn, axis=0, kind="stable")
    xs = np.take_along_axis(Xn, order, axis=0)
    ys = y[order]
    csum = np.cumsum(ys, axis=0)
    total = csum[-1]
    left_sum = csum[:-1]
    n_left = np.arange(1, n, dtype=np.float64)[:, None]
    n_right = n - n_left
    gain = left_sum**2 / n_left + (total - left_sum) ** 2 / n_right
    valid = xs[1:] > xs[:-1]
    if min_leaf > 1:
        valid[: min_leaf - 1] = False
        valid[n - min_leaf :] = False
    if not valid.any():
        return None
    score = np.where(valid, -gain, np.inf)
    # column-major flatten so argmin's first-hit rule prefers lower feature, then lower threshold
    flat = int(np.argmin(score.T.ravel()))
    col, pos = divmod(flat, n - 1)
    lo, hi = xs[pos, col], xs[pos + 1, col]
    threshold = (lo + hi) / 2.0
    if threshold >= hi:
        threshold = lo
    return col, float(threshold)


def _grow(
    X: np.ndarray,
    y: np.ndarray,
    rows: np.ndarray,
    params: ForestParams,
    tree_seed: int,
) -> Tree:
    n_features = X.shape[1]
    m = params.features_per_split
    max_depth = math.inf if params.max_depth is None else params.max_depth
    min_leaf = params.min_samples_leaf

    feature: list[int] = []
    threshold: list[float] = []
    left: list[int] = []
    right: list[int] = []
    value: list[float] = []
    n_samples: list[int] = []

    # (rows, depth, parent id, is-left-child); right pushed before left gives preorder
    stack: list[tuple[np.ndarray, int, int, bool]] = [(rows, 0, -1, True)]
    while stack:
        node_rows, depth, parent, is_left = stack.pop()
        node_id = len(feature)
        if parent >= 0:
            (left if is_left else right)[parent] = node_id
        y_node = y[node_rows]
        mean = float(np.mean(y_node))
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        value.append(mean)
        n_samples.append(int(node_rows.size))

        if depth >= max_depth or node_rows.size < 2 * min_leaf or np.all(y_node == y_node[0]):
            continue
        if m == n_features:
            candidates = np.arange(n_features)
        else:
            candidates = np.sort(_node_rng(tree_seed, node_id).choice(n_features, size=m, replace=False))
        split = _best_split(X[np.ix_(node_rows, candidates)], y_node - mean, min_leaf)
        if split is None:
            continue
        col, thr = split
        f = int(candidates[col])
        feature[node_id] = f
        threshold[node_id] = thr
        go_left = X[node_rows, f] <= thr
        stack.append((node_rows[~go_left], depth + 1, node_id, False))
        stack.append((node_rows[go_left], depth + 1, node_id, True))

    return Tree(
        feature=np.asarray(feature, dtype=np.int64),
        threshold=np.asarray(threshold, dtype=np.float64),
        left=np.asarray(left, dtype=np.int64),
        right=np.asarray(right, dtype=np.int64),
        value=np.asarray(value, dtype=np.float64),
        n_samples=np.asarray(n_samples, dtype=np.int64),
    )


def fit_tree(
    data: SupervisedMatrix,
    row_subset: Sequence[int] | np.ndarray,
    params: ForestParams,
    rng_seed: int,
) -> Tree:
    """Fit one CART tree on ``row_subset`` (duplicates allowed, as in a bootstrap draw)."""
    rows = np.asarray(row_subset, dtype=np.int64)
    if rows.size == 0:
        raise TrainingError("cannot fit a tree on an empty row subset")
    n = data.X.shape[0]
    if rows.min() < 0 or rows.max() >= n:
        raise TrainingError("row subset indexes outside the training matrix")
    params = params.resolve(data.X.shape[1])
    return _grow(data.X, data.target, rows, params, rng_seed)


def _fit_one(data: SupervisedMatrix, params: ForestParams, tree_seed: int) -> tuple[Tree, np.ndarray]:
    n = data.X.shape[0]
    if params.bootstrap:
        rng = np.random.default_rng([tree_seed, _BOOTSTRAP_STREAM])
        rows = np.sort(rng.integers(0, n, size=n))
        in_bag = np.zeros(n, dtype=bool)
        in_bag[rows] = True
        oob = np.flatnonzero(~in_bag)
    else:
        rows = np.arange(n)
        oob = np.empty(0, dtype=np.int64)
    return _grow(data.X, data.target, rows, params, tree_seed), oob.astype(np.int64)


def fit_forest(
    data: SupervisedMatrix,
    params: ForestParams | None = None,
    master_seed: int = 0,
    n_jobs: int = 1,
) -> ForestModel:
    """Fit a bagged random forest.

    Tree ``t`` draws its bootstrap sample and per-node feature subsets from
    seeds derived from ``(master_seed, t)`` only, so ``n_jobs`` never changes
    the result.
    """
    params = (params or ForestParams()).resolve(data.X.shape[1])
    if data.X.shape[0] == 0:
        raise TrainingError("cannot fit a forest on zero rows")
    seeds = [derive_tree_seed(master_seed, t) for t in range(params.n_trees)]
    if n_jobs == 1:
        fitted = [_fit_one(data, params, s) for s in seeds]
    else:
        with ThreadPoolExecutor(max_workers=n_jobs if n_jobs > 0 else None) as pool:
            fitted = list(pool.map(lambda s: _fit_one(data, params, s), seeds))
    return ForestModel(
        trees=[t for t, _ in fitted],
        params=params,
        master_seed=master_seed,
        tree_seeds=seeds,
        oob_indices=[oob for _, oob in fitted],
        feature_names=list(data.feature_names),
        scaler=data.scaler,
        target_name=data.target_name,
        n_train=data.X.shape[0],
    )


def predict_tree(tree: Tree, sample) -> float:
    return float(tree.predict(check_samples(sample, None))[0])


def predict_forest(model: ForestModel, sample) -> float:
    return float(model.predict(sample)[0])


def oob_predictions(model: ForestModel, X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Mean prediction of each training row over the trees that did not see it.

    Returns ``(predictions, counts)``; rows with ``counts == 0`` get NaN.
    """
    X = check_samples(X, model.n_features)
    n = X.shape[0]
    if not model.params.bootstrap:
        raise DataError("out-of-bag evaluation requires a forest trained with bootstrap=true")
    if model.n_train and n != model.n_train:
        raise DataError(f"OOB evaluation needs the {model.n_train} training rows, got {n}")
    total = np.zeros(n)
    counts = np.zeros(n, dtype=np.int64)
    for tree, oob in zip(model.trees, model.oob_indices):
        if oob.size:
            total[oob] += tree.predict(X[oob])
            counts[oob] += 1
    with np.errstate(invalid="ignore", divide="ignore"):
        preds = np.where(counts > 0, total / np.maximum(counts, 1), np.nan)
    return preds, counts


@dataclass(frozen=True)
class Evaluation:
    mode: str
    r2: float
    n_rows: int
    n_skipped: int = 0
    skipped: list = field(default_factory=list)


def evaluate_detailed(model: ForestModel, data: SupervisedMatrix, mode: str = "in-sample") -> Evaluation:
    if mode == "in-sample":
        return Evaluation(mode, r2_score(data.target, model.predict(data.X)), data.X.shape[0])
    if mode == "oob":
        preds, counts = oob_predictions(model, data.X)
        seen = counts > 0
        if not seen.any():
            raise DataError("no row is out-of-bag for any tree")
        skipped = [data.row_ids[i] for i in np.flatnonzero(~seen)]
        return Evaluation(
            mode,
            r2_score(data.target[seen], preds[seen]),
            int(seen.sum()),
            len(skipped),
            skipped,
        )
    raise DataError(f"unknown evaluation mode {mode!r}; expected 'in-sample' or 'oob'")


def evaluate(model: ForestModel, data: SupervisedMatrix, mode: str = "in-sample") -> float:
    """R^2 of in-sample or out-of-bag predictions against ``data.target``.

    In OOB mode, rows that were in the bag of every tree are skipped; use
    :func:`evaluate_detailed` to see which.
    """
    return evaluate_detailed(model, data, mode).r2
