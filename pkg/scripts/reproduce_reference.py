#!/usr/bin/env python3
"""Fit the default forest on user-supplied indicator panels and report how far
the achieved R2 lands from a reference value.

The reference presets are R2 = 0.93 for competitiveness-survey metrics
(``--preset gci``) and 0.88 for development-indicator metrics (``--preset wdi``).
The source panels are not redistributable, so bring your own CSVs:

    python3 scripts/reproduce_reference.py --features gci_metrics.csv \\
        --targets gci_scores.csv --target-column innovation --preset gci

Reported numbers: OOB R2, and k-fold cross-validated R2 (``--folds``, 0 to skip).
Standardization is fit once on all aligned rows, as in the main pipeline.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from innovation_index.dataset import Schema, SupervisedMatrix, load_panel, prepare_supervised
from innovation_index.exceptions import InnovationIndexError
from innovation_index.forest import ForestParams, evaluate, fit_forest
from innovation_index.metrics import r2_score

PRESETS = {"gci": 0.93, "wdi": 0.88}


def cross_validated_r2(data: SupervisedMatrix, params: ForestParams, folds: int, seed: int, n_jobs: int) -> float:
    n = len(data.target)
    order = np.random.default_rng(seed).permutation(n)
    pred = np.empty(n)
    for f, test in enumerate(np.array_split(order, folds)):
        train = np.setdiff1d(order, test)
        sub = SupervisedMatrix(features=data.features.take_rows(train), target=data.target[train], target_name=data.target_name)
        model = fit_forest(sub, params, master_seed=seed + f, n_jobs=n_jobs)
        pred[test] = model.predict(data.X[test])
    return r2_score(data.target, pred)


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--features", required=True)
    ap.add_argument("--targets", required=True)
    ap.add_argument("--target-column", default="innovation")
    ap.add_argument("--layout", choices=("wide", "long"), default="wide")
    ref = ap.add_mutually_exclusive_group(required=True)
    ref.add_argument("--preset", choices=sorted(PRESETS))
    ref.add_argument("--reference", type=float)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--n-trees", type=int, default=500)
    ap.add_argument("--folds", type=int, default=5)
    ap.add_argument("--n-jobs", type=int, default=1)
    args = ap.parse_args(argv)

    reference = PRESETS[args.preset] if args.preset else args.reference
    try:
        schema = Schema(layout=args.layout)
        data = prepare_supervised(load_panel(args.features, schema), load_panel(args.targets, schema), args.target_column)
        params = ForestParams(n_trees=args.n_trees)
        model = fit_forest(data, params, master_seed=args.seed, n_jobs=args.n_jobs)
        result = {"rows": len(data.target), "dropped_rows": data.dropped, "reference_r2": reference,
                  "oob_r2": evaluate(model, data, mode="oob")}
        if args.folds > 1:
            result["cv_r2"] = cross_validated_r2(data, params, args.folds, args.seed, args.n_jobs)
    except InnovationIndexError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    for key in ("oob_r2", "cv_r2"):
        if key in result:
            result[key.replace("_r2", "_deviation")] = result[key] - reference
    print(json.dumps(result, indent=2))
    return 0


if __name__ == "__main__":
    sys.exit(main())
