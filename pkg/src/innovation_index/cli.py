"""Command-line entry point: ``innovation-index <command> [--config FILE] [overrides]``.

Exit codes: 0 success, 1 configuration or usage error, 2 data error,
3 training or model-file error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import re
import sys
from dataclasses import replace
from pathlib import Path
from typing import Any, Sequence

import yaml

from . import analysis, synth
from .attribution import ContributionMatrix, contribution_matrix, read_contributions, write_contributions
from .clustering import cluster_contributions
from .config import RunConfig, load_config, parse_config, with_overrides
from .dataset import (
    Panel,
    SupervisedMatrix,
    align_target,
    apply_scaler,
    load_panel,
    prepare_supervised,
    write_panel,
)
from .exceptions import ConfigError, DataError, InnovationIndexError, TrainingError
from .forest import ForestModel, evaluate_detailed, fit_forest, load_model, save_model

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_TRAINING = 0, 1, 2, 3
MANIFEST = "manifest.json"


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # argparse exits 2 by default; usage errors are config errors here
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _display(path: Path, cfg: RunConfig) -> str:
    """Paths under the output dir are recorded relative to it, so two output dirs can match byte-for-byte."""
    try:
        return Path(path).resolve().relative_to(cfg.output_dir.resolve()).as_posix()
    except ValueError:
        return str(path)


def _write(cfg: RunConfig, name: str, text: str) -> Path:
    path = cfg.output_dir / name
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")
    return path


def _record(cfg: RunConfig, command: str, inputs: dict[str, Path], outputs: list[Path], **extra: Any) -> None:
    manifest_path = cfg.output_dir / MANIFEST
    manifest: dict[str, Any] = {"commands": {}}
    if manifest_path.is_file():
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    manifest["commands"][command] = {
        "inputs": {k: {"path": _display(p, cfg), "sha256": _sha256(p)} for k, p in sorted(inputs.items())},
        "outputs": {_display(p, cfg): _sha256(p) for p in sorted(outputs)},
        **extra,
    }
    manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _read_panels(cfg: RunConfig) -> tuple[Panel, Panel]:
    features = load_panel(cfg.require_file("features"), cfg.features_schema)
    targets = load_panel(cfg.require_file("targets"), cfg.targets_schema)
    return features, targets


def _scaled_with_model(panel: Panel, model: ForestModel) -> Panel:
    if list(panel.column_ids) != list(model.feature_names):
        raise DataError("feature columns do not match the model's feature names")
    if model.scaler is None:
        return panel
    return apply_scaler(panel, model.scaler)


def _supervised_for_model(cfg: RunConfig, model: ForestModel) -> SupervisedMatrix:
    features, targets = _read_panels(cfg)
    raw = align_target(features, targets, cfg.target_column)
    return replace(raw, features=_scaled_with_model(raw.features, model), scaler=model.scaler)


def cmd_train(cfg: RunConfig) -> int:
    features, targets = _read_panels(cfg)
    data = prepare_supervised(features, targets, cfg.target_column)
    model = fit_forest(data, cfg.forest, master_seed=cfg.seed, n_jobs=cfg.n_jobs)
    cfg.output_dir.mkdir(parents=True, exist_ok=True)
    cfg.model_path.parent.mkdir(parents=True, exist_ok=True)
    model_path = save_model(model, cfg.model_path)
    summary = analysis.summarize_run(model, data)
    outputs = [
        model_path,
        _write(cfg, "train_summary.json", summary.to_json()),
        _write(cfg, "train_summary.txt", summary.to_text()),
    ]
    _record(
        cfg,
        "train",
        {"features": cfg.features, "targets": cfg.targets},
        outputs,
        seeds={"master_seed": cfg.seed},
        model_hash=model.model_hash,
    )
    r2 = summary.document["r2"]
    print(f"model: {_display(model_path, cfg)}")
    print(f"model_hash: {model.model_hash}")
    print(f"rows: {data.X.shape[0]} dropped: {data.dropped}")
    print(f"in-sample R2: {r2['in_sample']:.6f}")
    if r2["oob"] is not None:
        print(f"OOB R2: {r2['oob']:.6f}")
    return EXIT_OK


def cmd_evaluate(cfg: RunConfig) -> int:
    model = load_model(cfg.require_file("model"))
    data = _supervised_for_model(cfg, model)
    doc: dict[str, Any] = {"model_hash": model.model_hash, "n_rows": int(data.X.shape[0]), "dropped_rows": data.dropped}
    lines = [f"model_hash: {model.model_hash}"]
    for mode in cfg.eval_modes:
        if mode == "oob" and not model.params.bootstrap:
            doc[mode] = None
            lines.append("OOB R2: n/a (bootstrap disabled)")
            continue
        ev = evaluate_detailed(model, data, mode)
        doc[mode] = {"r2": ev.r2, "n_rows": ev.n_rows, "n_skipped": ev.n_skipped}
        label = "in-sample R2" if mode == "in-sample" else "OOB R2"
        lines.append(f"{label}: {ev.r2:.6f}")
    text = "\n".join(lines) + "\n"
    outputs = [
        _write(cfg, "evaluation.json", json.dumps(doc, indent=2, sort_keys=True) + "\n"),
        _write(cfg, "evaluation.txt", text),
    ]
    _record(cfg, "evaluate", {"features": cfg.features, "targets": cfg.targets, "model": cfg.model_path}, outputs, model_hash=model.model_hash)
    sys.stdout.write(text)
    return EXIT_OK


def cmd_contribute(cfg: RunConfig) -> int:
    model = load_model(cfg.require_file("model"))
    features = load_panel(cfg.require_file("features"), cfg.features_schema)
    matrix = contribution_matrix(model, _scaled_with_model(features, model))
    cfg.output_dir.mkdir(parents=True, exist_ok=True)
    path = cfg.contributions_path
    path.parent.mkdir(parents=True, exist_ok=True)
    write_contributions(matrix, path)
    _record(cfg, "contribute", {"features": cfg.features, "model": cfg.model_path}, [path], model_hash=model.model_hash)
    print(f"contributions: {_display(path, cfg)} ({len(matrix)} rows x {len(matrix.feature_names)} metrics)")
    print(f"model_hash: {model.model_hash}")
    return EXIT_OK


def cmd_cluster(cfg: RunConfig) -> int:
    matrix = read_contributions(cfg.require_file("contributions"))
    cl = cfg.clustering
    clustering = cluster_contributions(
        matrix,
        k=cl.k,
        seed=cfg.seed,
        restarts=cl.restarts,
        aggregate_years=cl.aggregate_years,
        max_iter=cl.max_iter,
        tol=cl.tol,
        n_jobs=cfg.n_jobs,
    )
    roster = analysis.roster_text(clustering, matrix.model_hash)
    doc = {
        "model_hash": matrix.model_hash,
        "k": clustering.k,
        "seed": cfg.seed,
        "restarts": cl.restarts,
        "best_restart": clustering.restart,
        "restart_seed": clustering.seed,
        "aggregate_years": cl.aggregate_years,
        "inertia": clustering.inertia,
        "iterations_run": clustering.iterations_run,
        "rosters": [[analysis.format_sample_id(m) for m in r] for r in clustering.rosters()],
    }
    outputs = [
        _write(cfg, "clusters.txt", roster),
        _write(cfg, "cluster_assignments.csv", analysis.assignments_csv(clustering, matrix.model_hash)),
        _write(cfg, "clustering.json", json.dumps(doc, indent=2, sort_keys=True) + "\n"),
    ]
    _record(cfg, "cluster", {"contributions": cfg.contributions_path}, outputs, seeds={"seed": cfg.seed}, model_hash=matrix.model_hash)
    sys.stdout.write(roster)
    return EXIT_OK


def _parse_member(token: str, matrix: ContributionMatrix) -> list:
    """``"KE/2010"`` names one country-year row; ``"KE"`` names every row of that country."""
    country, sep, year = token.rpartition("/")
    if sep:
        try:
            sid = (country, int(year))
        except ValueError:
            raise DataError(f"bad sample id {token!r}; expected COUNTRY or COUNTRY/YEAR") from None
        matrix.index_of(sid)
        return [sid]
    rows = [sid for sid in matrix.sample_ids if sid[0] == token]
    if not rows:
        raise DataError(f"country {token!r} not in contribution matrix")
    return rows


def _slug(text: str) -> str:
    return re.sub(r"[^A-Za-z0-9_.-]+", "-", text).strip("-") or "sample"


def compare_report(matrix: ContributionMatrix, a: str, b: str, top_n: int) -> analysis.ComparisonReport:
    ga, gb = _parse_member(a, matrix), _parse_member(b, matrix)
    if len(ga) == 1 and len(gb) == 1:
        return analysis.compare_pair(matrix.row(matrix.index_of(ga[0])), matrix.row(matrix.index_of(gb[0])), top_n)
    report = analysis.compare_groups(matrix, ga, gb, top_n)
    return replace(report, pair=(a, b))


def cmd_compare(cfg: RunConfig) -> int:
    matrix = read_contributions(cfg.require_file("contributions"))
    cmp_ = cfg.comparison
    if not cmp_.pairs and not cmp_.suggest:
        raise ConfigError("no comparison pairs configured (comparison.pairs or --pair A B)")
    outputs: list[Path] = []
    for a, b in cmp_.pairs:
        report = compare_report(matrix, a, b, cmp_.top_n)
        stem = f"compare/{_slug(a)}__vs__{_slug(b)}"
        outputs += [
            _write(cfg, f"{stem}.txt", analysis.report_text(report)),
            _write(cfg, f"{stem}.csv", analysis.report_csv(report)),
            _write(cfg, f"{stem}.plot.csv", analysis.plot_data_csv(report)),
        ]
        sys.stdout.write(analysis.report_text(report))
    if cmp_.suggest:
        lines = [f"model_hash: {matrix.model_hash}", "nearest neighbours in contribution space (convenience suggestion):"]
        for sid in matrix.sample_ids:
            near = analysis.suggest_similar(matrix, sid, cmp_.suggest)
            lines.append(
                f"{analysis.format_sample_id(sid)}: "
                + ", ".join(f"{analysis.format_sample_id(s)} ({d:.4f})" for s, d in near)
            )
        outputs.append(_write(cfg, "compare/suggestions.txt", "\n".join(lines) + "\n"))
    _record(cfg, "compare", {"contributions": cfg.contributions_path}, outputs, model_hash=matrix.model_hash)
    return EXIT_OK


def cmd_synth(args: argparse.Namespace) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.kind == "panel":
        features, targets = synth.make_country_panel(
            n_countries=args.countries, n_metrics=args.metrics, seed=args.seed
        )
        write_panel(features, out / "features.csv")
        write_panel(targets, out / "targets.csv")
        config = {
            "seed": args.seed,
            "paths": {"features": "features.csv", "targets": "targets.csv", "output_dir": "out"},
            "data": {"target_column": "innovation"},
            "forest": {"n_trees": 100},
            "clustering": {"k": 5, "restarts": 10, "aggregate_years": True},
            "comparison": {"pairs": [["C000", "C001"], ["C002/2010", "C003/2010"]], "top_n": 8},
        }
        (out / "config.yaml").write_text(yaml.safe_dump(config, sort_keys=True), encoding="utf-8")
        print(f"wrote {out / 'features.csv'}, {out / 'targets.csv'}, {out / 'config.yaml'}")
    else:
        points, labels = synth.make_blobs(seed=args.seed)
        write_contributions(synth.blobs_matrix(points), out / "blobs.csv")
        (out / "blob_labels.csv").write_text(
            "country,year,label\n" + "".join(f"B{i:03d},0,{int(l)}\n" for i, l in enumerate(labels)),
            encoding="utf-8",
        )
        print(f"wrote {out / 'blobs.csv'}, {out / 'blob_labels.csv'}")
    return EXIT_OK


COMMANDS = {
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "contribute": cmd_contribute,
    "cluster": cmd_cluster,
    "compare": cmd_compare,
}


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="innovation-index", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", metavar="{train,evaluate,contribute,cluster,compare,synth}")
    sub.required = True

    helps = {
        "train": "fit the forest and write model.json",
        "evaluate": "report in-sample and OOB R2 of a saved model",
        "contribute": "write per-sample metric contributions",
        "cluster": "k-means on contribution vectors",
        "compare": "rank metric differences between two samples or countries",
    }
    for name in COMMANDS:
        p = sub.add_parser(name, help=helps[name])
        p.add_argument("--config", help="YAML run config")
        p.add_argument("--seed", type=int)
        p.add_argument("--output-dir")
        p.add_argument("--features")
        p.add_argument("--targets")
        p.add_argument("--target-column")
        p.add_argument("--model", help="model file (default: <output-dir>/model.json)")
        p.add_argument("--contributions")
        p.add_argument("--n-jobs", type=int)
        p.add_argument("--n-trees", type=int)
        p.add_argument("--max-depth", type=int)
        p.add_argument("--min-samples-leaf", type=int)
        p.add_argument("--features-per-split", type=int)
        p.add_argument("--k", type=int)
        p.add_argument("--restarts", type=int)
        p.add_argument("--cluster-rows", action="store_true", help="cluster country-year rows instead of country means")
        p.add_argument("--top-n", type=int)
        p.add_argument("--pair", nargs=2, action="append", metavar=("A", "B"), help="COUNTRY or COUNTRY/YEAR; repeatable")

    p = sub.add_parser("synth", help="write synthetic fixtures")
    p.add_argument("--kind", choices=["panel", "blobs"], default="panel")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--countries", type=int, default=40)
    p.add_argument("--metrics", type=int, default=12)
    return parser


def _config_from_args(args: argparse.Namespace) -> RunConfig:
    if args.config:
        cfg = load_config(args.config)
    else:
        if args.seed is None:
            raise ConfigError("no --config given and no --seed; an explicit seed is required")
        cfg = parse_config({"seed": args.seed})
    return with_overrides(
        cfg,
        seed=args.seed,
        output_dir=Path(args.output_dir) if args.output_dir else None,
        features=Path(args.features) if args.features else None,
        targets=Path(args.targets) if args.targets else None,
        target_column=args.target_column,
        model=Path(args.model) if args.model else None,
        contributions=Path(args.contributions) if args.contributions else None,
        n_jobs=args.n_jobs,
        n_trees=args.n_trees,
        max_depth=args.max_depth,
        min_samples_leaf=args.min_samples_leaf,
        features_per_split=args.features_per_split,
        k=args.k,
        restarts=args.restarts,
        aggregate_years=False if args.cluster_rows else None,
        top_n=args.top_n,
        pairs=[tuple(p) for p in args.pair] if args.pair else None,
    )


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "synth":
            return cmd_synth(args)
        cfg = _config_from_args(args)
        return COMMANDS[args.command](cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except TrainingError as exc:
        print(f"training error: {exc}", file=sys.stderr)
        return EXIT_TRAINING
    except InnovationIndexError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
