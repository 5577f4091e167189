"""k-means over contribution vectors (k-means++ seeding, Lloyd iterations).

Distances are squared Euclidean on the raw contributions, which share the
target's units, so no re-scaling is applied.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Hashable, Sequence

import numpy as np

from .attribution import ContributionMatrix
from .exceptions import DataError


@dataclass(frozen=True, eq=False)
class Clustering:
    centers: np.ndarray
    assignments: np.ndarray
    inertia: float
    iterations_run: int
    seed: int | None = None
    inertia_trace: list[float] = field(default_factory=list)
    sample_ids: list[Hashable] = field(default_factory=list)
    restart: int = 0

    @property
    def k(self) -> int:
        return int(self.centers.shape[0])

    def members(self, cluster: int) -> list[Hashable]:
        return [self.sample_ids[i] for i in np.flatnonzero(self.assignments == cluster)]

    def rosters(self) -> list[list[Hashable]]:
        return [self.members(j) for j in range(self.k)]


def _check_points(points) -> np.ndarray:
    X = np.asarray(points, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2 or X.shape[0] == 0:
        raise DataError(f"points must be a non-empty 2-D matrix, got shape {X.shape}")
    if not np.all(np.isfinite(X)):
        raise DataError("points contain non-finite values")
    return X


def squared_distances(points: np.ndarray, centers: np.ndarray) -> np.ndarray:
    diff = points[:, None, :] - centers[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def kmeanspp_init(points, k: int, rng_seed: int) -> np.ndarray:
    """k-means++ seeding: uniform first center, then D^2-weighted draws."""
    X = _check_points(points)
    if k < 1:
        raise DataError(f"k must be >= 1, got {k}")
    n_distinct = np.unique(X, axis=0).shape[0]
    if k > n_distinct:
        raise DataError(f"k={k} exceeds the number of distinct points ({n_distinct})")
    rng = np.random.default_rng(rng_seed)
    n = X.shape[0]
    chosen = [int(rng.integers(n))]
    d2 = squared_distances(X, X[chosen])[:, 0]
    for _ in range(1, k):
        idx = int(rng.choice(n, p=d2 / d2.sum()))
        chosen.append(idx)
        d2 = np.minimum(d2, squared_distances(X, X[idx : idx + 1])[:, 0])
    return X[chosen].copy()


def _assign(X: np.ndarray, centers: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    d2 = squared_distances(X, centers)
    labels = np.argmin(d2, axis=1)  # first minimum, i.e. ties go to the lowest index
    return labels, d2[np.arange(X.shape[0]), labels]


def _update(X: np.ndarray, labels: np.ndarray, dist: np.ndarray, k: int) -> np.ndarray:
    centers = np.empty((k, X.shape[1]))
    dist = dist.copy()
    empty = []
    for j in range(k):
        mask = labels == j
        if mask.any():
            centers[j] = X[mask].mean(axis=0)
        else:
            empty.append(j)
    for j in empty:
        # re-seed at the point currently farthest from its own center
        far = int(np.argmax(dist))
        centers[j] = X[far]
        dist[far] = -1.0
    return centers


def _cost(X: np.ndarray, labels: np.ndarray, centers: np.ndarray) -> float:
    diff = X - centers[labels]
    return float(np.einsum("ij,ij->", diff, diff))


def lloyd(points, centers, max_iter: int = 300, tol: float = 1e-6) -> Clustering:
    """Run Lloyd iterations from the given centers.

    Each iteration assigns points to their nearest center and moves centers
    to their cluster means; the trace records the inertia after each move.
    Iteration stops once inertia improves by less than ``tol``. A final
    assignment pass makes every label point at its nearest final center.
    """
    X = _check_points(points)
    C = np.array(centers, dtype=np.float64, copy=True)
    if C.ndim != 2 or C.shape[1] != X.shape[1] or C.shape[0] < 1:
        raise DataError(f"centers must be k x {X.shape[1]}, got shape {C.shape}")
    if not np.all(np.isfinite(C)):
        raise DataError("centers contain non-finite values")
    if max_iter < 1:
        raise DataError(f"max_iter must be >= 1, got {max_iter}")
    k = C.shape[0]

    trace: list[float] = []
    labels, dist = _assign(X, C)
    previous = float(dist.sum())
    iterations = 0
    for _ in range(max_iter):
        iterations += 1
        C = _update(X, labels, dist, k)
        current = _cost(X, labels, C)
        trace.append(current)
        if previous - current < tol:
            break
        previous = current
        labels, dist = _assign(X, C)
    labels, dist = _assign(X, C)
    return Clustering(
        centers=C,
        assignments=labels,
        inertia=float(dist.sum()),
        iterations_run=iterations,
        inertia_trace=trace,
    )


def is_nearest_assignment(points, clustering: Clustering) -> bool:
    X = _check_points(points)
    labels, _ = _assign(X, clustering.centers)
    return bool(np.array_equal(labels, clustering.assignments))


def canonical_relabel(clustering: Clustering) -> Clustering:
    """Number clusters by the position of their first member; empty clusters go last."""
    labels = clustering.assignments
    order: list[int] = []
    for lab in labels:
        if int(lab) not in order:
            order.append(int(lab))
    order += [j for j in range(clustering.k) if j not in order]
    new_of = np.empty(clustering.k, dtype=np.int64)
    new_of[order] = np.arange(clustering.k)
    return replace(clustering, centers=clustering.centers[order], assignments=new_of[labels])


def restart_seed(seed: int, restart: int) -> int:
    state = np.random.SeedSequence([seed, restart]).generate_state(2, np.uint32)
    return int(state[0]) << 32 | int(state[1])


def aggregate_by_country(matrix: ContributionMatrix) -> tuple[list[str], np.ndarray]:
    """Mean contribution vector per country, countries in first-appearance order."""
    countries: list[str] = []
    index: dict[str, list[int]] = {}
    for i, (country, _year) in enumerate(matrix.sample_ids):
        if country not in index:
            index[country] = []
            countries.append(country)
        index[country].append(i)
    points = np.vstack([matrix.contributions[index[c]].mean(axis=0) for c in countries])
    return countries, points


def best_of_restarts(
    points,
    k: int,
    seed: int,
    restarts: int = 10,
    max_iter: int = 300,
    tol: float = 1e-6,
    n_jobs: int = 1,
) -> tuple[Clustering, list[Clustering]]:
    """Best (lowest-inertia, ties to the earliest) of ``restarts`` k-means++ runs, plus all runs."""
    X = _check_points(points)
    if restarts < 1:
        raise DataError(f"restarts must be >= 1, got {restarts}")

    def one(r: int) -> Clustering:
        s = restart_seed(seed, r)
        run = lloyd(X, kmeanspp_init(X, k, s), max_iter=max_iter, tol=tol)
        return replace(run, seed=s, restart=r)

    if n_jobs == 1:
        runs = [one(r) for r in range(restarts)]
    else:
        with ThreadPoolExecutor(max_workers=n_jobs if n_jobs > 0 else None) as pool:
            runs = list(pool.map(one, range(restarts)))
    best = min(runs, key=lambda c: (c.inertia, c.restart))
    return canonical_relabel(best), runs


def cluster_contributions(
    matrix: ContributionMatrix,
    k: int = 20,
    seed: int = 0,
    restarts: int = 10,
    aggregate_years: bool = True,
    max_iter: int = 300,
    tol: float = 1e-6,
    n_jobs: int = 1,
) -> Clustering:
    """Cluster contribution vectors.

    By default each country's vectors are averaged over years first, so the
    clustering is over countries; with ``aggregate_years=False`` every
    country-year row is a point.
    """
    if k < 1:
        raise DataError(f"k must be >= 1, got {k}")
    if len(matrix) == 0:
        raise DataError("contribution matrix is empty")
    if aggregate_years:
        ids: Sequence[Hashable]
        ids, points = aggregate_by_country(matrix)
    else:
        ids, points = list(matrix.sample_ids), matrix.contributions
    best, _ = best_of_restarts(points, k, seed, restarts, max_iter, tol, n_jobs)
    return replace(best, sample_ids=list(ids))
