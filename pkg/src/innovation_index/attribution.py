"""Decision-path contributions.

Walking a sample from the root to its leaf, each split on feature ``f``
moves the running node mean from the parent's value to the child's. We
credit that difference to ``f``. The differences telescope, so

    leaf value = root value + sum of contributions

for every tree, and by linearity for the forest average as well.
"""

from __future__ import annotations

import csv
import io
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence, TextIO

import numpy as np

from .dataset import Panel, RowId, SupervisedMatrix
from .exceptions import DataError
from .forest import ForestModel, Tree, check_samples


@dataclass(frozen=True, eq=False)
class ContributionVector:
    sample_id: RowId
    baseline: float
    contributions: np.ndarray
    predicted: float
    feature_names: tuple[str, ...] = ()
    model_hash: str = ""

    def residual(self) -> float:
        """``predicted - baseline - sum(contributions)``; zero up to rounding."""
        return self.predicted - self.baseline - float(np.sum(self.contributions))


@dataclass(frozen=True, eq=False)
class ContributionMatrix:
    sample_ids: list[RowId]
    baseline: np.ndarray
    contributions: np.ndarray
    predicted: np.ndarray
    feature_names: list[str]
    model_hash: str

    def __post_init__(self) -> None:
        n = len(self.sample_ids)
        if self.contributions.shape != (n, len(self.feature_names)):
            raise DataError(
                f"contributions have shape {self.contributions.shape}, "
                f"expected ({n}, {len(self.feature_names)})"
            )
        if self.baseline.shape != (n,) or self.predicted.shape != (n,):
            raise DataError("baseline/predicted must have one entry per sample")

    def __len__(self) -> int:
        return len(self.sample_ids)

    def row(self, i: int) -> ContributionVector:
        return ContributionVector(
            sample_id=self.sample_ids[i],
            baseline=float(self.baseline[i]),
            contributions=self.contributions[i].copy(),
            predicted=float(self.predicted[i]),
            feature_names=tuple(self.feature_names),
            model_hash=self.model_hash,
        )

    @property
    def rows(self) -> list[ContributionVector]:
        return [self.row(i) for i in range(len(self))]

    def index_of(self, sample_id: RowId) -> int:
        try:
            return self.sample_ids.index(sample_id)
        except ValueError:
            raise DataError(f"sample {sample_id!r} not in contribution matrix") from None


def _tree_contributions_batch(tree: Tree, X: np.ndarray) -> np.ndarray:
    contrib = np.zeros(X.shape, dtype=np.float64)
    node = np.zeros(X.shape[0], dtype=np.int64)
    rows = np.flatnonzero(tree.feature[node] >= 0)
    while rows.size:
        at = node[rows]
        f = tree.feature[at]
        go_left = X[rows, f] <= tree.threshold[at]
        child = np.where(go_left, tree.left[at], tree.right[at])
        # one (row, feature) cell per row per step, so plain fancy-index += is safe
        contrib[rows, f] += tree.value[child] - tree.value[at]
        node[rows] = child
        rows = rows[tree.feature[child] >= 0]
    return contrib


def tree_contributions(tree: Tree, sample) -> tuple[float, np.ndarray]:
    """Baseline (root mean) and per-feature contributions of one tree for one sample."""
    X = check_samples(sample, None)
    if X.shape[0] != 1:
        raise DataError("tree_contributions takes a single sample")
    return tree.root_value, _tree_contributions_batch(tree, X)[0]


def _forest_contributions_batch(model: ForestModel, X: np.ndarray) -> tuple[float, np.ndarray]:
    total = np.zeros(X.shape, dtype=np.float64)
    base = 0.0
    for tree in model.trees:
        total += _tree_contributions_batch(tree, X)
        base += tree.root_value
    n = len(model.trees)
    return base / n, total / n


def forest_contributions(model: ForestModel, sample, sample_id: RowId = ("", 0)) -> ContributionVector:
    X = check_samples(sample, model.n_features)
    if X.shape[0] != 1:
        raise DataError("forest_contributions takes a single sample")
    baseline, contrib = _forest_contributions_batch(model, X)
    return ContributionVector(
        sample_id=sample_id,
        baseline=baseline,
        contributions=contrib[0],
        predicted=float(model.predict(X)[0]),
        feature_names=tuple(model.feature_names),
        model_hash=model.model_hash,
    )


def contribution_matrix(model: ForestModel, data: SupervisedMatrix | Panel) -> ContributionMatrix:
    """Contribution vectors for every row of ``data``, in row order."""
    panel = data.features if isinstance(data, SupervisedMatrix) else data
    if list(panel.column_ids) != list(model.feature_names):
        raise DataError("data columns do not match the model's feature names")
    if panel.shape[0] == 0:
        raise DataError("contribution matrix needs at least one row")
    X = check_samples(panel.values, model.n_features)
    baseline, contrib = _forest_contributions_batch(model, X)
    return ContributionMatrix(
        sample_ids=list(panel.row_ids),
        baseline=np.full(X.shape[0], baseline),
        contributions=contrib,
        predicted=model.predict(X),
        feature_names=list(model.feature_names),
        model_hash=model.model_hash,
    )


BASELINE_COLUMN = "baseline"
PREDICTED_COLUMN = "predicted"


def write_contributions(
    matrix: ContributionMatrix, dest: str | os.PathLike[str] | TextIO
) -> None:
    """Wide CSV: country, year, baseline, one column per metric, predicted.

    The first line is a ``# model_hash: ...`` comment.
    """
    if {BASELINE_COLUMN, PREDICTED_COLUMN, "country", "year"} & set(matrix.feature_names):
        raise DataError("metric names collide with reserved contribution CSV columns")
    owned = isinstance(dest, (str, os.PathLike))
    fh = open(dest, "w", newline="", encoding="utf-8") if owned else dest
    try:
        fh.write(f"# model_hash: {matrix.model_hash}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["country", "year", BASELINE_COLUMN, *matrix.feature_names, PREDICTED_COLUMN])
        for i, (country, year) in enumerate(matrix.sample_ids):
            writer.writerow(
                [
                    country,
                    year,
                    repr(float(matrix.baseline[i])),
                    *(repr(float(v)) for v in matrix.contributions[i]),
                    repr(float(matrix.predicted[i])),
                ]
            )
    finally:
        if owned:
            fh.close()


def contributions_to_csv(matrix: ContributionMatrix) -> str:
    buf = io.StringIO()
    write_contributions(matrix, buf)
    return buf.getvalue()


def read_contributions(source: str | os.PathLike[str] | TextIO) -> ContributionMatrix:
    owned = isinstance(source, (str, os.PathLike))
    fh = open(source, newline="", encoding="utf-8") if owned else source
    try:
        lines = fh.read().splitlines()
    finally:
        if owned:
            fh.close()
    model_hash = ""
    body = []
    for line in lines:
        if line.startswith("#"):
            key, _, val = line[1:].partition(":")
            if key.strip() == "model_hash":
                model_hash = val.strip()
        elif line.strip():
            body.append(line)
    rows = list(csv.reader(body))
    if not rows:
        raise DataError("contribution CSV has no header")
    header = rows[0]
    if header[:3] != ["country", "year", BASELINE_COLUMN] or header[-1] != PREDICTED_COLUMN:
        raise DataError(f"not a contribution CSV header: {header!r}")
    names = header[3:-1]
    ids: list[RowId] = []
    vals = []
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != len(header):
            raise DataError(f"contribution CSV line {lineno}: {len(row)} fields, expected {len(header)}")
        try:
            ids.append((row[0], int(row[1])))
            vals.append([float(v) for v in row[2:]])
        except ValueError:
            raise DataError(f"contribution CSV line {lineno}: non-numeric entry") from None
    if not vals:
        raise DataError("contribution CSV has no data rows")
    arr = np.asarray(vals, dtype=np.float64)
    return ContributionMatrix(
        sample_ids=ids,
        baseline=arr[:, 0],
        contributions=arr[:, 1:-1],
        predicted=arr[:, -1],
        feature_names=names,
        model_hash=model_hash,
    )


def matrix_from_vectors(vectors: Sequence[ContributionVector]) -> ContributionMatrix:
    if not vectors:
        raise DataError("need at least one contribution vector")
    hashes = {v.model_hash for v in vectors}
    if len(hashes) != 1:
        raise DataError("contribution vectors come from different models")
    names = vectors[0].feature_names or tuple(f"m{j}" for j in range(vectors[0].contributions.size))
    return ContributionMatrix(
        sample_ids=[v.sample_id for v in vectors],
        baseline=np.array([v.baseline for v in vectors]),
        contributions=np.vstack([v.contributions for v in vectors]),
        predicted=np.array([v.predicted for v in vectors]),
        feature_names=list(names),
        model_hash=hashes.pop(),
    )


def save_contributions(matrix: ContributionMatrix, path: str | os.PathLike[str]) -> Path:
    path = Path(path)
    write_contributions(matrix, path)
    return path
