"""Indicator panels: CSV ingestion, standardization and target alignment.

A :class:`Panel` is a dense country-year by metric matrix with a missingness
mask. Missing cells always hold 0, which after standardization coincides with
mean imputation.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Iterable, Sequence, TextIO

import numpy as np

from .exceptions import DataError

RowId = tuple[str, int]

DEFAULT_MISSING = ("", "NA", "..")


@dataclass(frozen=True)
class Schema:
    """Column roles for an input table.

    ``layout="wide"`` means one metric per column; ``layout="long"`` means
    one (country, year, metric, value) observation per line.
    """

    country: str = "country"
    year: str = "year"
    layout: str = "wide"
    metric: str = "metric"
    value: str = "value"
    metrics: tuple[str, ...] | None = None
    exclude: tuple[str, ...] = ()
    missing_values: tuple[str, ...] = DEFAULT_MISSING
    delimiter: str = ","

    def __post_init__(self) -> None:
        if self.layout not in ("wide", "long"):
            raise DataError(f"unknown layout {self.layout!r}; expected 'wide' or 'long'")

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> Schema:
        d = dict(d)
        for key in ("metrics", "exclude", "missing_values"):
            if d.get(key) is not None:
                d[key] = tuple(str(v) for v in d[key])
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise DataError(f"unknown schema keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict[str, Any]:
        return {
            "country": self.country,
            "year": self.year,
            "layout": self.layout,
            "metric": self.metric,
            "value": self.value,
            "metrics": None if self.metrics is None else list(self.metrics),
            "exclude": list(self.exclude),
            "missing_values": list(self.missing_values),
            "delimiter": self.delimiter,
        }


@dataclass(frozen=True, eq=False)
class Panel:
    row_ids: list[RowId]
    column_ids: list[str]
    values: np.ndarray
    missing: np.ndarray

    def __post_init__(self) -> None:
        values = np.asarray(self.values, dtype=np.float64)
        missing = np.asarray(self.missing, dtype=bool)
        shape = (len(self.row_ids), len(self.column_ids))
        if values.shape != shape or missing.shape != shape:
            raise DataError(
                f"panel arrays have shapes {values.shape}/{missing.shape}, expected {shape}"
            )
        if len(set(self.row_ids)) != len(self.row_ids):
            raise DataError("panel row ids must be unique")
        if len(set(self.column_ids)) != len(self.column_ids):
            raise DataError("panel column ids must be unique")
        values = np.where(missing, 0.0, values)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "missing", missing)

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def take_rows(self, indices: Sequence[int]) -> Panel:
        idx = np.asarray(indices, dtype=np.intp)
        return Panel(
            row_ids=[self.row_ids[i] for i in idx],
            column_ids=list(self.column_ids),
            values=self.values[idx],
            missing=self.missing[idx],
        )


@dataclass(frozen=True, eq=False)
class ScalerParams:
    column_ids: list[str]
    mean: np.ndarray
    std: np.ndarray
    constant: np.ndarray

    def to_dict(self) -> dict[str, Any]:
        return {
            "column_ids": list(self.column_ids),
            "mean": [float(v) for v in self.mean],
            "std": [float(v) for v in self.std],
            "constant": [bool(v) for v in self.constant],
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> ScalerParams:
        return cls(
            column_ids=[str(c) for c in d["column_ids"]],
            mean=np.asarray(d["mean"], dtype=np.float64),
            std=np.asarray(d["std"], dtype=np.float64),
            constant=np.asarray(d["constant"], dtype=bool),
        )


@dataclass(frozen=True, eq=False)
class SupervisedMatrix:
    features: Panel
    target: np.ndarray
    target_name: str
    dropped: int = 0
    scaler: ScalerParams | None = field(default=None)

    def __post_init__(self) -> None:
        target = np.asarray(self.target, dtype=np.float64)
        if target.shape != (self.features.shape[0],):
            raise DataError(
                f"target has {target.shape[0]} entries for {self.features.shape[0]} feature rows"
            )
        if not np.all(np.isfinite(target)):
            raise DataError("target contains missing or non-finite entries")
        object.__setattr__(self, "target", target)

    @classmethod
    def from_arrays(
        cls,
        X,
        y,
        feature_names: Sequence[str] | None = None,
        row_ids: Sequence[RowId] | None = None,
        target_name: str = "target",
    ) -> SupervisedMatrix:
        """Wrap plain arrays, e.g. synthetic data that never went through a CSV."""
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2:
            raise DataError(f"feature matrix must be 2-D, got shape {X.shape}")
        n, k = X.shape
        names = list(feature_names) if feature_names is not None else [f"m{j}" for j in range(k)]
        ids = list(row_ids) if row_ids is not None else [(f"s{i}", 0) for i in range(n)]
        panel = Panel(row_ids=ids, column_ids=names, values=X, missing=np.zeros((n, k), dtype=bool))
        return cls(features=panel, target=y, target_name=target_name)

    @property
    def X(self) -> np.ndarray:
        return self.features.values

    @property
    def row_ids(self) -> list[RowId]:
        return self.features.row_ids

    @property
    def feature_names(self) -> list[str]:
        return self.features.column_ids


def _open_text(source: str | os.PathLike[str] | TextIO) -> tuple[TextIO, bool]:
    if isinstance(source, (str, os.PathLike)):
        return open(source, newline="", encoding="utf-8-sig"), True
    return source, False


def _parse_year(cell: str, line: int) -> int:
    text = cell.strip()
    try:
        return int(text)
    except ValueError:
        pass
    try:
        as_float = float(text)
    except ValueError:
        raise DataError(f"line {line}: year {cell!r} is not an integer") from None
    if not as_float.is_integer():
        raise DataError(f"line {line}: year {cell!r} is not an integer")
    return int(as_float)


def _parse_value(cell: str, sentinels: frozenset[str]) -> float | None:
    text = cell.strip()
    if text in sentinels:
        return None
    try:
        v = float(text)
    except ValueError:
        return None
    return v if math.isfinite(v) else None


def _read_rows(fh: TextIO, delimiter: str) -> tuple[list[str], list[tuple[int, list[str]]]]:
    reader = csv.reader((line for line in fh if not line.startswith("#")), delimiter=delimiter)
    try:
        header = next(reader)
    except StopIteration:
        raise DataError("input table is empty (no header row)") from None
    header = [h.strip() for h in header]
    if any(h == "" for h in header):
        raise DataError(f"malformed header: empty column name in {header!r}")
    dupes = sorted({h for h in header if header.count(h) > 1})
    if dupes:
        raise DataError(f"malformed header: duplicate column names {dupes}")
    rows = []
    for lineno, row in enumerate(reader, start=2):
        if not row or all(c.strip() == "" for c in row):
            continue
        if len(row) != len(header):
            raise DataError(f"line {lineno}: {len(row)} fields, header has {len(header)}")
        rows.append((lineno, row))
    return header, rows


def _require_columns(header: list[str], names: Iterable[str]) -> None:
    for name in names:
        if name not in header:
            raise DataError(f"malformed header: required column {name!r} not found in {header!r}")


def load_panel(source: str | os.PathLike[str] | TextIO, schema: Schema | None = None) -> Panel:
    """Read a delimited table into a :class:`Panel`.

    Rows keep their first-appearance order. Empty, non-numeric, non-finite and
    sentinel cells become missing with value 0.
    """
    schema = schema or Schema()
    fh, owned = _open_text(source)
    try:
        header, rows = _read_rows(fh, schema.delimiter)
    finally:
        if owned:
            fh.close()
    sentinels = frozenset(schema.missing_values)
    if schema.layout == "wide":
        return _load_wide(header, rows, schema, sentinels)
    return _load_long(header, rows, schema, sentinels)


def _load_wide(header, rows, schema: Schema, sentinels) -> Panel:
    _require_columns(header, (schema.country, schema.year))
    if schema.metrics is not None:
        _require_columns(header, schema.metrics)
        metric_cols = list(schema.metrics)
    else:
        skip = {schema.country, schema.year, *schema.exclude}
        metric_cols = [h for h in header if h not in skip]
    if not metric_cols:
        raise DataError("input table has zero metric columns")
    ci, yi = header.index(schema.country), header.index(schema.year)
    mi = [header.index(m) for m in metric_cols]

    row_ids: list[RowId] = []
    seen: dict[RowId, int] = {}
    values = np.zeros((len(rows), len(metric_cols)))
    missing = np.zeros((len(rows), len(metric_cols)), dtype=bool)
    for r, (lineno, row) in enumerate(rows):
        rid = (row[ci].strip(), _parse_year(row[yi], lineno))
        if rid in seen:
            raise DataError(f"line {lineno}: duplicate row for country {rid[0]!r}, year {rid[1]}")
        seen[rid] = lineno
        row_ids.append(rid)
        for c, j in enumerate(mi):
            v = _parse_value(row[j], sentinels)
            if v is None:
                missing[r, c] = True
            else:
                values[r, c] = v
    return Panel(row_ids=row_ids, column_ids=metric_cols, values=values, missing=missing)


def _load_long(header, rows, schema: Schema, sentinels) -> Panel:
    _require_columns(header, (schema.country, schema.year, schema.metric, schema.value))
    ci, yi = header.index(schema.country), header.index(schema.year)
    mi, vi = header.index(schema.metric), header.index(schema.value)
    wanted = None if schema.metrics is None else set(schema.metrics)
    excluded = set(schema.exclude)

    row_index: dict[RowId, int] = {}
    col_index: dict[str, int] = {}
    cells: dict[tuple[int, int], float | None] = {}
    for lineno, row in rows:
        metric = row[mi].strip()
        if metric in excluded or (wanted is not None and metric not in wanted):
            continue
        rid = (row[ci].strip(), _parse_year(row[yi], lineno))
        r = row_index.setdefault(rid, len(row_index))
        c = col_index.setdefault(metric, len(col_index))
        if (r, c) in cells:
            raise DataError(
                f"line {lineno}: duplicate observation for country {rid[0]!r}, "
                f"year {rid[1]}, metric {metric!r}"
            )
        cells[(r, c)] = _parse_value(row[vi], sentinels)
    if not col_index:
        raise DataError("input table has zero metric columns")
    if schema.metrics is not None:
        absent = [m for m in schema.metrics if m not in col_index]
        if absent:
            raise DataError(f"metrics not present in long table: {absent}")
        order = list(schema.metrics)
    else:
        order = list(col_index)
    values = np.zeros((len(row_index), len(order)))
    missing = np.ones((len(row_index), len(order)), dtype=bool)
    pos = {m: k for k, m in enumerate(order)}
    names = list(col_index)
    for (r, c), v in cells.items():
        if v is not None:
            k = pos[names[c]]
            values[r, k] = v
            missing[r, k] = False
    return Panel(row_ids=list(row_index), column_ids=order, values=values, missing=missing)


def fit_scaler(panel: Panel) -> ScalerParams:
    """Per-column mean and population std over the non-missing entries."""
    n_cols = panel.shape[1]
    mean = np.zeros(n_cols)
    std = np.zeros(n_cols)
    constant = np.ones(n_cols, dtype=bool)
    for j in range(n_cols):
        present = panel.values[~panel.missing[:, j], j]
        if present.size == 0:
            continue
        mean[j] = present.mean()
        # exact-equality test; np.std of identical floats can be a tiny nonzero
        if present.max() == present.min():
            continue
        std[j] = present.std()
        constant[j] = False
    return ScalerParams(column_ids=list(panel.column_ids), mean=mean, std=std, constant=constant)


def _check_columns(panel: Panel, params: ScalerParams) -> None:
    if list(panel.column_ids) != list(params.column_ids):
        raise DataError("scaler was fit on different column ids than this panel")


def apply_scaler(panel: Panel, params: ScalerParams) -> Panel:
    _check_columns(panel, params)
    safe_std = np.where(params.constant, 1.0, params.std)
    scaled = (panel.values - params.mean) / safe_std
    scaled[:, params.constant] = 0.0
    scaled[panel.missing] = 0.0
    return Panel(
        row_ids=list(panel.row_ids),
        column_ids=list(panel.column_ids),
        values=scaled,
        missing=panel.missing.copy(),
    )


def invert_scaler(panel: Panel, params: ScalerParams) -> Panel:
    """Undo :func:`apply_scaler` on non-missing, non-constant entries.

    Constant columns come back as their mean; missing cells stay 0.
    """
    _check_columns(panel, params)
    restored = params.mean + params.std * panel.values
    restored[:, params.constant] = params.mean[params.constant]
    return Panel(
        row_ids=list(panel.row_ids),
        column_ids=list(panel.column_ids),
        values=restored,
        missing=panel.missing.copy(),
    )


def align_target(features: Panel, targets: Panel, target_column: str) -> SupervisedMatrix:
    """Join features to a target column on (country, year).

    Rows without a matching, non-missing target are dropped; the count is kept
    in ``SupervisedMatrix.dropped``.
    """
    if target_column not in targets.column_ids:
        raise DataError(
            f"target column {target_column!r} not found; available: {targets.column_ids}"
        )
    tj = targets.column_ids.index(target_column)
    lookup = {
        rid: targets.values[i, tj]
        for i, rid in enumerate(targets.row_ids)
        if not targets.missing[i, tj]
    }
    keep = [i for i, rid in enumerate(features.row_ids) if rid in lookup]
    if not keep:
        raise DataError(f"no feature rows have a non-missing {target_column!r} value")
    kept = features.take_rows(keep)
    y = np.array([lookup[rid] for rid in kept.row_ids])
    return SupervisedMatrix(
        features=kept,
        target=y,
        target_name=target_column,
        dropped=features.shape[0] - len(keep),
    )


def prepare_supervised(features: Panel, targets: Panel, target_column: str) -> SupervisedMatrix:
    """Align raw features to the target, then standardize and impute.

    The scaler is fit on the rows that survive alignment only.
    """
    raw = align_target(features, targets, target_column)
    params = fit_scaler(raw.features)
    return replace(raw, features=apply_scaler(raw.features, params), scaler=params)


def _format_float(v: float) -> str:
    return repr(float(v))


def write_panel(panel: Panel, dest: str | os.PathLike[str] | TextIO, schema: Schema | None = None) -> None:
    """Write a panel as wide CSV; missing cells are written empty."""
    schema = schema or Schema()
    fh, owned = (open(dest, "w", newline="", encoding="utf-8"), True) if isinstance(
        dest, (str, os.PathLike)
    ) else (dest, False)
    try:
        writer = csv.writer(fh, delimiter=schema.delimiter, lineterminator="\n")
        writer.writerow([schema.country, schema.year, *panel.column_ids])
        for i, (country, year) in enumerate(panel.row_ids):
            cells = [
                "" if panel.missing[i, j] else _format_float(panel.values[i, j])
                for j in range(panel.shape[1])
            ]
            writer.writerow([country, year, *cells])
    finally:
        if owned:
            fh.close()


def panel_to_csv(panel: Panel, schema: Schema | None = None) -> str:
    buf = io.StringIO()
    write_panel(panel, buf, schema)
    return buf.getvalue()


def save_panel(
    panel: Panel,
    path: str | os.PathLike[str],
    schema: Schema | None = None,
    scaler: ScalerParams | None = None,
) -> Path:
    """Write ``path`` as wide CSV plus a ``.meta.json`` sidecar; returns the sidecar path."""
    schema = schema or Schema()
    path = Path(path)
    write_panel(panel, path, schema)
    meta = {
        "schema": {**schema.to_dict(), "layout": "wide"},
        "n_rows": panel.shape[0],
        "column_ids": list(panel.column_ids),
        "scaler": None if scaler is None else scaler.to_dict(),
    }
    sidecar = path.with_suffix(".meta.json")
    sidecar.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return sidecar


def load_saved_panel(path: str | os.PathLike[str]) -> tuple[Panel, ScalerParams | None]:
    path = Path(path)
    sidecar = path.with_suffix(".meta.json")
    meta = json.loads(sidecar.read_text(encoding="utf-8"))
    schema = Schema.from_dict({**meta["schema"], "missing_values": [""]})
    panel = load_panel(path, schema)
    scaler = None if meta.get("scaler") is None else ScalerParams.from_dict(meta["scaler"])
    return panel, scaler
