"""Comparison reports and run summaries.

``compare_pair`` ranks metrics by how differently they pushed two samples'
predictions. A positive ``diff`` means the metric raised A's score relative
to B's.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from typing import Any, Hashable, Sequence

import numpy as np

from .attribution import ContributionMatrix, ContributionVector
from .clustering import Clustering
from .dataset import SupervisedMatrix
from .exceptions import DataError
from .forest import ForestModel, evaluate_detailed

DEFAULT_TOP_N = 8


def format_sample_id(sample_id: Hashable) -> str:
    if isinstance(sample_id, tuple) and len(sample_id) == 2:
        return f"{sample_id[0]}/{sample_id[1]}"
    return str(sample_id)


@dataclass(frozen=True)
class ComparisonEntry:
    metric_id: str
    c_a: float
    c_b: float
    diff: float


@dataclass(frozen=True)
class ComparisonReport:
    pair: tuple[Hashable, Hashable]
    entries: list[ComparisonEntry]
    predicted_a: float
    predicted_b: float
    baseline: float
    top_n: int
    model_hash: str = ""

    @property
    def metric_ids(self) -> list[str]:
        return [e.metric_id for e in self.entries]


def _names(v: ContributionVector) -> list[str]:
    return list(v.feature_names) if v.feature_names else [f"m{j}" for j in range(v.contributions.size)]


def diff_vector(a: ContributionVector, b: ContributionVector) -> np.ndarray:
    """Untruncated ``c_A - c_B`` over all metrics."""
    if a.model_hash != b.model_hash:
        raise DataError(
            f"contribution vectors come from different models ({a.model_hash[:12]} vs {b.model_hash[:12]})"
        )
    if a.contributions.shape != b.contributions.shape or _names(a) != _names(b):
        raise DataError("contribution vectors have different metric sets")
    return a.contributions - b.contributions


def compare_pair(a: ContributionVector, b: ContributionVector, top_n: int = DEFAULT_TOP_N) -> ComparisonReport:
    if top_n < 1:
        raise DataError(f"top_n must be >= 1, got {top_n}")
    diff = diff_vector(a, b)
    names = _names(a)
    nonzero = [j for j in range(diff.size) if diff[j] != 0.0]
    nonzero.sort(key=lambda j: (-abs(diff[j]), names[j]))
    entries = [
        ComparisonEntry(names[j], float(a.contributions[j]), float(b.contributions[j]), float(diff[j]))
        for j in nonzero[:top_n]
    ]
    return ComparisonReport(
        pair=(a.sample_id, b.sample_id),
        entries=entries,
        predicted_a=a.predicted,
        predicted_b=b.predicted,
        baseline=a.baseline,
        top_n=top_n,
        model_hash=a.model_hash,
    )


def group_mean(matrix: ContributionMatrix, group: Sequence[Hashable]) -> ContributionVector:
    """Componentwise mean of a group's vectors; a singleton keeps its own sample id."""
    if not group:
        raise DataError("comparison group is empty")
    rows = [matrix.index_of(sid) for sid in group]
    label: Hashable = group[0] if len(group) == 1 else "+".join(format_sample_id(s) for s in group)
    return ContributionVector(
        sample_id=label,
        baseline=float(matrix.baseline[rows].mean()),
        contributions=matrix.contributions[rows].mean(axis=0),
        predicted=float(matrix.predicted[rows].mean()),
        feature_names=tuple(matrix.feature_names),
        model_hash=matrix.model_hash,
    )


def compare_groups(
    matrix: ContributionMatrix,
    group_a: Sequence[Hashable],
    group_b: Sequence[Hashable],
    top_n: int = DEFAULT_TOP_N,
) -> ComparisonReport:
    overlap = set(group_a) & set(group_b)
    if overlap:
        raise DataError(f"comparison groups overlap: {sorted(map(format_sample_id, overlap))}")
    return compare_pair(group_mean(matrix, group_a), group_mean(matrix, group_b), top_n)


def suggest_similar(matrix: ContributionMatrix, sample_id: Hashable, n: int = 3) -> list[tuple[Hashable, float]]:
    """Nearest samples to ``sample_id`` by Euclidean distance in contribution space.

    A convenience for picking comparison partners; ties go to earlier rows.
    """
    i = matrix.index_of(sample_id)
    d = np.sqrt(np.sum((matrix.contributions - matrix.contributions[i]) ** 2, axis=1))
    order = [j for j in np.argsort(d, kind="stable") if j != i]
    return [(matrix.sample_ids[j], float(d[j])) for j in order[:n]]


def report_text(report: ComparisonReport) -> str:
    a, b = (format_sample_id(s) for s in report.pair)
    lines = [
        f"Comparison: {a} vs {b}",
        f"model_hash: {report.model_hash}",
        f"baseline: {report.baseline:.6f}",
        f"predicted {a}: {report.predicted_a:.6f}",
        f"predicted {b}: {report.predicted_b:.6f}",
        f"top {report.top_n} metrics by |c_A - c_B|:",
    ]
    if not report.entries:
        lines.append("  (no differing contributions)")
    width = max((len(e.metric_id) for e in report.entries), default=0)
    for e in report.entries:
        lines.append(f"  {e.metric_id:<{width}}  c_A={e.c_a:+.6f}  c_B={e.c_b:+.6f}  diff={e.diff:+.6f}")
    return "\n".join(lines) + "\n"


def _csv_text(header: list[str], rows: list[list[Any]], model_hash: str) -> str:
    buf = io.StringIO()
    buf.write(f"# model_hash: {model_hash}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue()


def report_csv(report: ComparisonReport) -> str:
    rows = [[e.metric_id, repr(e.c_a), repr(e.c_b), repr(e.diff)] for e in report.entries]
    return _csv_text(["metric_id", "c_a", "c_b", "diff"], rows, report.model_hash)


def plot_data_csv(report: ComparisonReport) -> str:
    """Bar-chart data, largest positive difference first, most negative last."""
    ordered = sorted(report.entries, key=lambda e: (-e.diff, e.metric_id))
    rows = [[e.metric_id, repr(e.c_a), repr(e.c_b)] for e in ordered]
    return _csv_text(["metric_id", "c_a", "c_b"], rows, report.model_hash)


def roster_text(clustering: Clustering, model_hash: str = "") -> str:
    lines = [f"model_hash: {model_hash}"] if model_hash else []
    for j, members in enumerate(clustering.rosters(), start=1):
        lines.append(f"Cluster {j}: " + ", ".join(format_sample_id(m) for m in members))
    return "\n".join(lines) + "\n"


def assignments_csv(clustering: Clustering, model_hash: str = "") -> str:
    """One row per clustered sample; cluster numbers are 1-based like the roster."""
    if clustering.sample_ids and isinstance(clustering.sample_ids[0], tuple):
        header = ["country", "year", "cluster"]
        rows = [[c, y, int(lab) + 1] for (c, y), lab in zip(clustering.sample_ids, clustering.assignments)]
    else:
        header = ["country", "cluster"]
        rows = [[c, int(lab) + 1] for c, lab in zip(clustering.sample_ids, clustering.assignments)]
    return _csv_text(header, rows, model_hash)


@dataclass(frozen=True)
class RunSummary:
    document: dict[str, Any] = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(self.document, indent=2, sort_keys=True) + "\n"

    def to_text(self) -> str:
        d = self.document
        lines = [
            f"model_hash: {d['model_hash']}",
            f"target: {d['target_name']}",
            f"rows: {d['n_rows']} (dropped for missing target: {d['dropped_rows']})",
            f"features: {d['n_features']}",
            f"master_seed: {d['master_seed']}",
            "hyperparams: " + ", ".join(f"{k}={v}" for k, v in sorted(d["hyperparams"].items())),
            f"in-sample R2: {d['r2']['in_sample']:.6f}",
        ]
        oob = d["r2"].get("oob")
        if oob is None:
            lines.append("OOB R2: n/a (bootstrap disabled)")
        else:
            lines.append(f"OOB R2: {oob:.6f} (rows never out-of-bag: {d['r2']['oob_skipped_rows']})")
        cl = d.get("clustering")
        if cl:
            lines.append(
                f"clustering: k={cl['k']} seed={cl['seed']} restarts={cl['restarts']} "
                f"best_restart={cl['best_restart']} inertia={cl['inertia']:.6f}"
            )
            for j, members in enumerate(cl["rosters"], start=1):
                lines.append(f"Cluster {j}: " + ", ".join(members))
        return "\n".join(lines) + "\n"


def summarize_run(
    model: ForestModel,
    data: SupervisedMatrix,
    clustering: Clustering | None = None,
    cluster_seed: int | None = None,
    restarts: int | None = None,
) -> RunSummary:
    in_sample = evaluate_detailed(model, data, "in-sample")
    doc: dict[str, Any] = {
        "model_hash": model.model_hash,
        "target_name": data.target_name,
        "n_rows": int(data.X.shape[0]),
        "n_features": model.n_features,
        "dropped_rows": int(data.dropped),
        "master_seed": model.master_seed,
        "hyperparams": model.params.to_dict(),
        "r2": {"in_sample": in_sample.r2, "oob": None, "oob_skipped_rows": None},
    }
    if model.params.bootstrap:
        oob = evaluate_detailed(model, data, "oob")
        doc["r2"]["oob"] = oob.r2
        doc["r2"]["oob_skipped_rows"] = oob.n_skipped
    if clustering is not None:
        doc["clustering"] = {
            "k": clustering.k,
            "seed": cluster_seed,
            "restart_seed": clustering.seed,
            "restarts": restarts,
            "best_restart": clustering.restart,
            "inertia": clustering.inertia,
            "iterations_run": clustering.iterations_run,
            "rosters": [[format_sample_id(m) for m in r] for r in clustering.rosters()],
        }
    return RunSummary(doc)
