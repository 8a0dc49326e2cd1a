"""Sparse-representation similarity graphs and spectral clustering.

Three graph families feed the same spectral pipeline: the l1 graph (each
sample coded over all the others, self-coefficient forced to zero), the
dictionary-code graph ``S = |A^T A|`` from lasso codes over one learned
dictionary, and the ensemble graphs built from 1-sparse codes over the
members of an :class:`~ensparse.ensemble.EnsembleModel`. Example-based
ensembles map each 1-sparse atom back to its source sample, producing
sample-indexed cumulative vectors; K-Means ensembles stack the per-round
code blocks.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from . import kmeans
from .dictionaries import TrainingSet
from .ensemble import EnsembleModel
from .errors import ContractViolation, DataError
from .sparse_coding import Dictionary, code_batch, one_sparse_batch

GRAPH_CONSTRUCTIONS = ("l1_graph", "dict_code", "ensemble_example", "ensemble_kmeans")

SYMMETRY_TOL = 1e-12
UNIT_NORM_TOL = 1e-9

SPECTRAL_RESTARTS = 20


@dataclass(frozen=True)
class SimilarityGraph:
    """Symmetric non-negative affinity matrix plus its construction recipe."""

    weights: np.ndarray
    construction: str

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        if w.ndim != 2 or w.shape[0] != w.shape[1]:
            raise ContractViolation(f"graph weights must be square, got {w.shape}")
        if self.construction not in GRAPH_CONSTRUCTIONS:
            raise ContractViolation(f"unknown construction {self.construction!r}")
        if np.any(w < 0.0):
            raise ContractViolation("graph weights must be non-negative")
        if np.max(np.abs(w - w.T), initial=0.0) > SYMMETRY_TOL:
            raise ContractViolation("graph weights must be symmetric")
        if self.construction == "l1_graph" and np.any(np.diag(w) != 0.0):
            raise ContractViolation("l1 graph must have a zero diagonal")
        object.__setattr__(self, "weights", w)

    @property
    def n_samples(self) -> int:
        return self.weights.shape[0]


@dataclass(frozen=True)
class ClusteringResult:
    """Cluster labels with optional ground-truth scores."""

    labels: np.ndarray
    k: int
    accuracy: float | None = None
    nmi: float | None = None

    def __post_init__(self):
        labels = np.asarray(self.labels, dtype=np.int64)
        if labels.ndim != 1:
            raise ContractViolation("labels must be a vector")
        if labels.size and (labels.min() < 0 or labels.max() >= self.k):
            raise ContractViolation(f"labels must lie in [0, {self.k})")
        object.__setattr__(self, "labels", labels)


def center_normalize(samples: np.ndarray) -> np.ndarray:
    """Preprocessing used throughout the clustering pipeline.

    Subtracts the dataset mean from every sample and scales each to unit l2
    norm; a sample equal to the mean cannot be normalized and is an error.
    """
    samples = np.asarray(samples, dtype=np.float64)
    if samples.ndim != 2:
        raise ContractViolation(f"samples must be M x T, got shape {samples.shape}")
    centered = samples - samples.mean(axis=1, keepdims=True)
    norms = np.linalg.norm(centered, axis=0)
    if np.any(norms == 0.0):
        raise ContractViolation("a sample coincides with the dataset mean")
    return centered / norms


def _require_unit_norm(samples: np.ndarray) -> None:
    norms = np.linalg.norm(samples, axis=0)
    if np.any(np.abs(norms - 1.0) > UNIT_NORM_TOL):
        raise ContractViolation(
            "samples must be unit-normalized (use center_normalize first)"
        )


def _symmetrize(a: np.ndarray) -> np.ndarray:
    s = np.abs(a) + np.abs(a.T)
    # exact symmetry regardless of rounding in |a| + |a^T|
    return (s + s.T) / 2.0


def _symmetrize_gram(codes: np.ndarray) -> np.ndarray:
    s = np.abs(codes.T @ codes)
    return (s + s.T) / 2.0


def build_l1_graph(data: TrainingSet, lam: float, max_iter: int = 10000,
                   tol: float = 1e-6) -> SimilarityGraph:
    """l1 graph: each sample coded over all the others, ``S = |A| + |A^T|``.

    Column i of the coefficient matrix is the lasso code of sample i against
    the dictionary of the remaining T-1 samples, with the self-coefficient
    pinned to zero by construction.
    """
    x = data.samples
    t = data.size
    if t < 2:
        raise ContractViolation("l1 graph needs at least two samples")
    _require_unit_norm(x)
    coeffs = np.zeros((t, t))
    others = np.arange(t)
    for i in range(t):
        keep = others != i
        dictionary = Dictionary(x[:, keep], "example_subset")
        code = code_batch(x[:, i], dictionary, lam, None, max_iter, tol)
        coeffs[keep, i] = code[:, 0]
    np.fill_diagonal(coeffs, 0.0)
    return SimilarityGraph(_symmetrize(coeffs), "l1_graph")


def build_dictionary_code_graph(data: TrainingSet, dictionary: Dictionary,
                                lam: float, max_iter: int = 10000,
                                tol: float = 1e-6) -> SimilarityGraph:
    """Code graph over a learned dictionary: ``S = |A^T A|``."""
    codes = code_batch(data.samples, dictionary, lam, None, max_iter, tol)
    return SimilarityGraph(_symmetrize_gram(codes), "dict_code")


def _example_path_vectors(model: EnsembleModel, x: np.ndarray) -> np.ndarray:
    """Cumulative sample-indexed vectors: column i holds sum_l beta_l a-bar_{l,i}."""
    t = x.shape[1]
    cumulative = np.zeros((t, t))
    for beta, d in zip(model.betas.betas, model.dictionaries):
        if d.source_indices is None:
            raise ContractViolation(
                "example-path graphs need dictionaries with source indices"
            )
        if d.source_indices.min() < 0 or d.source_indices.max() >= t:
            raise ContractViolation(
                "model example indices do not match the data (wrong training set?)"
            )
        idx, coeff = one_sparse_batch(d.atoms, x)
        cumulative[d.source_indices[idx], np.arange(t)] += beta * coeff
    return cumulative


def _kmeans_path_vectors(model: EnsembleModel, x: np.ndarray) -> np.ndarray:
    """Stacked per-round 1-sparse code blocks, shape (L*K, T)."""
    blocks = []
    for d in model.dictionaries:
        idx, coeff = one_sparse_batch(d.atoms, x)
        block = np.zeros((d.n_atoms, x.shape[1]))
        block[idx, np.arange(x.shape[1])] = coeff
        blocks.append(block)
    return np.concatenate(blocks, axis=0)


def build_ensemble_graph(data: TrainingSet, model: EnsembleModel) -> SimilarityGraph:
    """Ensemble-code similarity graph; the path depends on the model kind.

    Example-based models (RandExAv / BoostEx) rewrite each member's 1-sparse
    code over the normalized samples themselves (``D_l a = X-bar a-bar``),
    accumulate ``sum_l beta_l a-bar_{l,i}``, zero the self-coefficients, and
    symmetrize as ``|A| + |A^T|``. K-Means models stack the L 1-sparse code
    blocks into LK-length vectors and use ``S = |A^T A|``.
    """
    x = data.samples
    _require_unit_norm(x)
    if model.method in ("randexav", "boostex"):
        vectors = _example_path_vectors(model, x)
        np.fill_diagonal(vectors, 0.0)
        return SimilarityGraph(_symmetrize(vectors), "ensemble_example")
    if model.method == "boostkm":
        return SimilarityGraph(_symmetrize_gram(_kmeans_path_vectors(model, x)),
                               "ensemble_kmeans")
    raise ContractViolation(f"no graph path for ensemble method {model.method!r}")


def _spectral_embedding(graph: SimilarityGraph, k: int) -> np.ndarray:
    """Row-normalized top-k eigenvectors of the normalized affinity."""
    w = graph.weights
    degrees = w.sum(axis=1)
    pos = degrees > 0.0
    if not np.any(pos):
        raise ContractViolation("cannot cluster an all-zero graph")
    inv_sqrt = np.zeros_like(degrees)
    inv_sqrt[pos] = 1.0 / np.sqrt(degrees[pos])
    normalized = inv_sqrt[:, None] * w * inv_sqrt[None, :]
    _, vecs = np.linalg.eigh(normalized)
    embedding = vecs[:, -k:]
    row_norms = np.linalg.norm(embedding, axis=1)
    safe = np.where(row_norms > 0.0, row_norms, 1.0)
    return embedding / safe[:, None]


def spectral_cluster(graph: SimilarityGraph, k: int, seed=0,
                     truth: np.ndarray | None = None) -> ClusteringResult:
    """Normalized spectral clustering with multi-restart K-Means++.

    The best of ``SPECTRAL_RESTARTS`` K-Means++ seedings (by final cost) on
    the row-normalized eigenvector embedding wins; everything is a pure
    function of ``seed``. Supplying ``truth`` fills in accuracy and NMI.
    """
    if k < 2:
        raise ContractViolation("need k >= 2 clusters")
    if k > graph.n_samples:
        raise ContractViolation(f"k={k} exceeds {graph.n_samples} samples")
    embedding = _spectral_embedding(graph, k).T  # columns = samples
    t = embedding.shape[1]
    uniform = np.full(t, 1.0 / t)
    rng = np.random.default_rng(seed)
    best_labels, best_cost = None, np.inf
    for _ in range(SPECTRAL_RESTARTS):
        seed_idx = kmeans.weighted_kmeans_pp(embedding, uniform, k, rng)
        _, labels, cost = kmeans.weighted_lloyd(embedding, uniform,
                                                embedding[:, seed_idx])
        if cost < best_cost:
            best_labels, best_cost = labels, cost
    if truth is None:
        return ClusteringResult(best_labels, k)
    accuracy, nmi = score(best_labels, truth)
    return ClusteringResult(best_labels, k, accuracy, nmi)


def _contingency(labels: np.ndarray, truth: np.ndarray):
    label_ids, label_inv = np.unique(labels, return_inverse=True)
    truth_ids, truth_inv = np.unique(truth, return_inverse=True)
    table = np.zeros((label_ids.size, truth_ids.size))
    np.add.at(table, (label_inv, truth_inv), 1.0)
    return table


def score(labels, truth) -> tuple[float, float]:
    """(accuracy, NMI) of predicted labels against ground truth.

    Accuracy maximizes the matched fraction over label-to-class assignments
    (Hungarian algorithm on the contingency table, rectangular tables
    allowed). NMI normalizes mutual information by the geometric mean of the
    two entropies; degenerate single-cluster partitions score 1 only when
    both sides are single-cluster.
    """
    labels = np.asarray(labels).ravel()
    truth = np.asarray(truth).ravel()
    if labels.shape != truth.shape or labels.size == 0:
        raise ContractViolation("labels and truth must be equal-length, non-empty")
    table = _contingency(labels, truth)
    n = float(labels.size)

    rows, cols = linear_sum_assignment(-table)
    accuracy = float(table[rows, cols].sum() / n)

    joint = table / n
    p_label = joint.sum(axis=1)
    p_truth = joint.sum(axis=0)
    nz = joint > 0.0
    outer = p_label[:, None] * p_truth[None, :]
    mi = float(np.sum(joint[nz] * np.log(joint[nz] / outer[nz])))
    h_label = float(-np.sum(p_label[p_label > 0.0] * np.log(p_label[p_label > 0.0])))
    h_truth = float(-np.sum(p_truth[p_truth > 0.0] * np.log(p_truth[p_truth > 0.0])))
    if h_label == 0.0 and h_truth == 0.0:
        nmi = 1.0
    elif h_label == 0.0 or h_truth == 0.0:
        nmi = 0.0
    else:
        nmi = mi / np.sqrt(h_label * h_truth)
    return accuracy, float(min(max(nmi, 0.0), 1.0))


def load_dataset_csv(csv_path, manifest_path=None):
    """Load a clustering dataset: rows = samples, last column = integer label.

    Returns ``(samples, labels, manifest)`` with samples as an M x T float
    matrix. When a manifest JSON {name, T, M, k} is supplied its counts are
    validated against the file contents.
    """
    try:
        with open(csv_path, newline="") as fh:
            rows = [row for row in csv.reader(fh) if row]
    except OSError as err:
        raise DataError(f"cannot read {csv_path}: {err}") from err
    if not rows:
        raise DataError(f"{csv_path}: empty dataset")
    try:
        values = np.asarray([[float(v) for v in row] for row in rows])
    except ValueError as err:
        raise DataError(f"{csv_path}: non-numeric cell ({err})") from err
    if values.shape[1] < 2:
        raise DataError(f"{csv_path}: need at least one feature column plus a label")
    samples = values[:, :-1].T
    labels = values[:, -1]
    if np.any(labels != np.rint(labels)):
        raise DataError(f"{csv_path}: labels in the last column must be integers")
    labels = labels.astype(np.int64)
    manifest = None
    if manifest_path is not None:
        try:
            with open(manifest_path) as fh:
                manifest = json.load(fh)
        except (OSError, json.JSONDecodeError) as err:
            raise DataError(f"cannot read manifest {manifest_path}: {err}") from err
        expected = {"T": samples.shape[1], "M": samples.shape[0],
                    "k": int(np.unique(labels).size)}
        for key, actual in expected.items():
            if key in manifest and int(manifest[key]) != actual:
                raise DataError(
                    f"manifest {key}={manifest[key]} but dataset has {actual}"
                )
    return samples, labels, manifest
