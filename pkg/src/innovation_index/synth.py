"""Synthetic fixtures: indicator panels with a linear target, and Gaussian blobs.

Real indicator panels are strongly correlated (many metrics track a few
development factors), so metrics here are noisy linear mixes of a small
number of latent factors. The target is linear in the standardized metrics
plus Gaussian noise whose std is ``noise_ratio`` times the std of y.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .attribution import ContributionMatrix
from .dataset import Panel

SYNTHETIC_BLOBS_HASH = "synthetic-blobs"


@dataclass(frozen=True)
class LinearData:
    X: np.ndarray
    y: np.ndarray
    weights: np.ndarray


def _factor_metrics(rng: np.random.Generator, latent: np.ndarray, loadings: np.ndarray, idiosyncratic: float) -> np.ndarray:
    return latent @ loadings + idiosyncratic * rng.normal(size=(latent.shape[0], loadings.shape[1]))


def make_linear(
    n_rows: int,
    n_metrics: int,
    seed: int,
    noise_ratio: float = 0.1,
    n_factors: int = 3,
    idiosyncratic: float = 0.5,
    n_holdout: int = 0,
) -> tuple[LinearData, LinearData]:
    """``y = w . x + eps`` with standardized, factor-correlated ``x``.

    Returns a training set of ``n_rows`` and a held-out set of ``n_holdout``
    rows drawn from the same distribution (standardized with the training
    statistics).
    """
    rng = np.random.default_rng(seed)
    loadings = rng.normal(size=(n_factors, n_metrics))
    weights = rng.normal(size=n_metrics)
    total = n_rows + n_holdout
    X = _factor_metrics(rng, rng.normal(size=(total, n_factors)), loadings, idiosyncratic)
    mu, sd = X[:n_rows].mean(axis=0), X[:n_rows].std(axis=0)
    X = (X - mu) / sd
    signal = X @ weights
    # solve sigma = r * sqrt(var(signal) + sigma^2) so the ratio is against std(y)
    sigma = noise_ratio * signal[:n_rows].std() / np.sqrt(1.0 - noise_ratio**2)
    y = signal + sigma * rng.normal(size=total)
    return (
        LinearData(X[:n_rows], y[:n_rows], weights),
        LinearData(X[n_rows:], y[n_rows:], weights),
    )


def make_country_panel(
    n_countries: int = 40,
    years: tuple[int, ...] = tuple(range(2007, 2015)),
    n_metrics: int = 12,
    seed: int = 0,
    noise_ratio: float = 0.1,
    n_factors: int = 3,
    missing_rate: float = 0.05,
    target_drop_rate: float = 0.03,
) -> tuple[Panel, Panel]:
    """Raw (unstandardized) feature panel and a target panel named ``innovation``.

    Each country has a latent development profile that drifts slowly over the
    years. Metrics get arbitrary offsets and scales so standardization matters;
    ``missing_rate`` of feature cells and ``target_drop_rate`` of targets are
    blanked.
    """
    rng = np.random.default_rng(seed)
    countries = [f"C{i:03d}" for i in range(n_countries)]
    base = rng.normal(size=(n_countries, n_factors))
    drift = 0.1 * rng.normal(size=(n_countries, n_factors))
    loadings = rng.normal(size=(n_factors, n_metrics))
    weights = rng.normal(size=n_metrics)
    offsets = rng.uniform(-50, 50, size=n_metrics)
    scales = rng.lognormal(0.0, 1.0, size=n_metrics)

    row_ids = [(c, y) for c in countries for y in years]
    t = np.tile(np.arange(len(years)) - (len(years) - 1) / 2, n_countries)[:, None]
    latent = np.repeat(base, len(years), axis=0) + t * np.repeat(drift, len(years), axis=0)
    Z = _factor_metrics(rng, latent, loadings, 0.5)
    Zs = (Z - Z.mean(axis=0)) / Z.std(axis=0)
    signal = Zs @ weights
    y = signal + noise_ratio * signal.std() * rng.normal(size=signal.size)
    y = 4.0 + 0.8 * (y - y.mean()) / y.std()

    raw = offsets + scales * Z
    missing = rng.random(raw.shape) < missing_rate
    features = Panel(
        row_ids=row_ids,
        column_ids=[f"metric_{j:02d}" for j in range(n_metrics)],
        values=raw,
        missing=missing,
    )
    tmiss = rng.random(len(row_ids)) < target_drop_rate
    targets = Panel(row_ids=row_ids, column_ids=["innovation"], values=y[:, None], missing=tmiss[:, None])
    return features, targets


def make_blobs(
    n_per_blob: int = 50,
    n_blobs: int = 3,
    n_dims: int = 5,
    sigma: float = 1.0,
    separation: float = 10.0,
    seed: int = 0,
) -> tuple[np.ndarray, np.ndarray]:
    """Isotropic Gaussian blobs whose centers are ``separation * sigma`` apart pairwise."""
    if n_blobs > n_dims:
        raise ValueError("need n_dims >= n_blobs to place equidistant centers on axes")
    rng = np.random.default_rng(seed)
    centers = np.zeros((n_blobs, n_dims))
    centers[np.arange(n_blobs), np.arange(n_blobs)] = separation * sigma / np.sqrt(2.0)
    labels = np.repeat(np.arange(n_blobs), n_per_blob)
    perm = rng.permutation(labels.size)
    labels = labels[perm]
    points = centers[labels] + sigma * rng.normal(size=(labels.size, n_dims))
    return points, labels


def blobs_matrix(points: np.ndarray) -> ContributionMatrix:
    """Wrap blob points as a contribution matrix (zero baseline) for the clustering CLI."""
    n, k = points.shape
    return ContributionMatrix(
        sample_ids=[(f"B{i:03d}", 0) for i in range(n)],
        baseline=np.zeros(n),
        contributions=points.copy(),
        predicted=points.sum(axis=1),
        feature_names=[f"m{j}" for j in range(k)],
        model_hash=SYNTHETIC_BLOBS_HASH,
    )
