"""Weighted K-Means primitives shared by the dictionary builders.

Everything operates on column-sample matrices (M x T) with a per-sample
weight vector. The weighted objective being minimized is

    sum_k sum_{i in M_k} w_i ||x_i - mu_k||^2,

with assignment by nearest center (ties to the lowest center index) and
centers as weight-averaged members.
"""

from __future__ import annotations

import numpy as np

from .errors import ContractViolation


def squared_distances(samples: np.ndarray, centers: np.ndarray) -> np.ndarray:
    """Pairwise squared euclidean distances, shape (n_centers, T).

    Computed with the expansion ||x - mu||^2 = ||x||^2 - 2 mu^T x + ||mu||^2
    and clipped at zero to absorb rounding.
    """
    x_sq = np.sum(samples * samples, axis=0)
    c_sq = np.sum(centers * centers, axis=0)
    d = c_sq[:, None] - 2.0 * (centers.T @ samples) + x_sq[None, :]
    return np.maximum(d, 0.0)


def assign_to_centers(samples: np.ndarray, centers: np.ndarray) -> np.ndarray:
    """Index of the nearest center per sample; ties go to the lowest index."""
    return np.argmin(squared_distances(samples, centers), axis=0)


def weighted_cost(samples, weights, centers, labels=None) -> float:
    """Weighted K-Means objective for the given (or implied) assignment."""
    if labels is None:
        labels = assign_to_centers(samples, centers)
    diff = samples - centers[:, labels]
    return float(np.sum(weights * np.sum(diff * diff, axis=0)))


def _draw_index(rng, probs: np.ndarray) -> int:
    """Sample an index from an unnormalized non-negative weight vector."""
    total = probs.sum()
    if total <= 0.0:
        # degenerate distribution: fall back to a uniform draw
        return int(rng.integers(probs.shape[0]))
    return int(rng.choice(probs.shape[0], p=probs / total))


def weighted_kmeans_pp(samples: np.ndarray, weights: np.ndarray, k: int, rng) -> np.ndarray:
    """Weighted K-Means++ seeding; returns the chosen sample indices.

    The first index is drawn proportionally to the weights, each next one
    proportionally to weight times squared distance to the chosen set.
    """
    t = samples.shape[1]
    if not 1 <= k <= t:
        raise ContractViolation(f"need 1 <= k <= T, got k={k}, T={t}")
    chosen = np.empty(k, dtype=np.int64)
    chosen[0] = _draw_index(rng, np.maximum(weights, 0.0))
    d2 = squared_distances(samples, samples[:, [chosen[0]]])[0]
    for j in range(1, k):
        chosen[j] = _draw_index(rng, np.maximum(weights, 0.0) * d2)
        d2 = np.minimum(d2, squared_distances(samples, samples[:, [chosen[j]]])[0])
    return chosen


def weighted_lloyd(samples, weights, centers, max_iter: int = 100):
    """Weighted Lloyd refinement until assignment fixpoint (or ``max_iter``).

    Clusters whose total weight is zero keep their previous center, which
    preserves the non-increase of the weighted objective. Returns
    ``(centers, labels, cost)``.
    """
    samples = np.asarray(samples, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    centers = np.array(centers, dtype=np.float64)
    k = centers.shape[1]
    labels = assign_to_centers(samples, centers)
    for _ in range(max_iter):
        for j in range(k):
            members = labels == j
            mass = weights[members].sum()
            if mass > 0.0:
                centers[:, j] = (samples[:, members] @ weights[members]) / mass
        new_labels = assign_to_centers(samples, centers)
        if np.array_equal(new_labels, labels):
            break
        labels = new_labels
    return centers, labels, weighted_cost(samples, weights, centers, labels)
