"""Dictionary builders: Alt-Opt learning, example subsets, weighted K-Means.

A ``TrainingSet`` couples a column-sample matrix with a probability mass per
sample. The boosting trainers re-weight those masses between rounds and the
builders here consume them: example subsets are drawn proportionally to the
masses, and the K-Means path minimizes the mass-weighted clustering cost.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kmeans
from .errors import ContractViolation
from .sparse_coding import Dictionary, code_batch, normalize_columns

MASS_SUM_TOL = 1e-12


@dataclass(frozen=True)
class TrainingSet:
    """Samples (M x T) with a probability mass per sample (uniform default)."""

    samples: np.ndarray
    masses: np.ndarray | None = None

    def __post_init__(self):
        samples = np.ascontiguousarray(np.asarray(self.samples, dtype=np.float64))
        if samples.ndim != 2 or samples.shape[1] < 1:
            raise ContractViolation(f"samples must be M x T, got shape {samples.shape}")
        if not np.all(np.isfinite(samples)):
            raise ContractViolation("samples contain non-finite entries")
        object.__setattr__(self, "samples", samples)
        t = samples.shape[1]
        if self.masses is None:
            masses = np.full(t, 1.0 / t)
        else:
            masses = np.asarray(self.masses, dtype=np.float64)
            if masses.shape != (t,):
                raise ContractViolation(f"masses must have length {t}, got {masses.shape}")
            if np.any(masses < 0.0):
                raise ContractViolation("masses must be non-negative")
            if abs(masses.sum() - 1.0) > MASS_SUM_TOL:
                raise ContractViolation(f"masses must sum to 1, got {masses.sum():.15f}")
        object.__setattr__(self, "masses", masses)

    @property
    def dim(self) -> int:
        return self.samples.shape[0]

    @property
    def size(self) -> int:
        return self.samples.shape[1]

    def with_masses(self, masses) -> "TrainingSet":
        return TrainingSet(self.samples, masses)


@dataclass(frozen=True)
class ClusterState:
    """Centers (M x K), an assignment of every sample, and the weighted cost."""

    centers: np.ndarray
    labels: np.ndarray
    weighted_cost: float

    def __post_init__(self):
        centers = np.asarray(self.centers, dtype=np.float64)
        labels = np.asarray(self.labels, dtype=np.int64)
        if centers.ndim != 2:
            raise ContractViolation(f"centers must be M x K, got {centers.shape}")
        if labels.ndim != 1 or labels.min(initial=0) < 0 or \
                labels.max(initial=0) >= centers.shape[1]:
            raise ContractViolation("labels must index into the centers")
        object.__setattr__(self, "centers", centers)
        object.__setattr__(self, "labels", labels)

    @property
    def n_clusters(self) -> int:
        return self.centers.shape[1]

    def memberships(self) -> list[np.ndarray]:
        return [np.flatnonzero(self.labels == k) for k in range(self.n_clusters)]


def draw_random_example_dictionary(train: TrainingSet, k: int, seed) -> Dictionary:
    """K distinct samples drawn uniformly, normalized into atoms."""
    if k > train.size:
        raise ContractViolation(f"cannot draw {k} distinct samples from {train.size}")
    rng = np.random.default_rng(seed)
    indices = rng.choice(train.size, size=k, replace=False)
    atoms = normalize_columns(train.samples[:, indices])
    return Dictionary(atoms, "example_subset", indices)


def draw_boostex_dictionary(train: TrainingSet, k: int, seed) -> Dictionary:
    """K distinct samples drawn proportionally to the remaining masses.

    Sequential draws: each pick removes the sample and renormalizes the
    leftover masses, so high-mass (badly approximated) samples are selected
    early and duplicates never occur.
    """
    available = np.flatnonzero(train.masses > 0.0)
    if available.shape[0] < k:
        raise ContractViolation(
            f"need {k} samples with non-zero mass, have {available.shape[0]}"
        )
    rng = np.random.default_rng(seed)
    remaining = train.masses.copy()
    indices = np.empty(k, dtype=np.int64)
    for j in range(k):
        indices[j] = rng.choice(train.size, p=remaining / remaining.sum())
        remaining[indices[j]] = 0.0
    atoms = normalize_columns(train.samples[:, indices])
    return Dictionary(atoms, "example_subset", indices)


def weighted_kmeans_parallel_init(train: TrainingSet, k: int, q: int | None = None,
                                  s: int | None = None, seed=0) -> ClusterState:
    """Mass-weighted K-Means|| initialization producing K centers.

    Oversampling: after seeding one center from the masses, each of ``s``
    rounds draws ``q`` candidates independently with probability proportional
    to mass times squared distance to the chosen set. Candidates are then
    weighted by the masses of the samples they are nearest to, and reduced to
    K centers by weighted K-Means++ seeding plus weighted Lloyd refinement.
    Defaults: ``q = 2K``, ``s = 5``.
    """
    q = 2 * k if q is None else int(q)
    s = 5 if s is None else int(s)
    if s * q <= k:
        raise ContractViolation(f"need s*q > K, got s={s}, q={q}, K={k}")
    if k > train.size:
        raise ContractViolation(f"cannot form {k} clusters from {train.size} samples")
    rng = np.random.default_rng(seed)
    x = train.samples
    masses = train.masses

    first = kmeans._draw_index(rng, masses)
    candidate_idx = [first]
    d2 = kmeans.squared_distances(x, x[:, [first]])[0]
    for _ in range(s):
        probs = masses * d2
        total = probs.sum()
        for _ in range(q):
            if total > 0.0:
                idx = int(rng.choice(train.size, p=probs / total))
            else:
                # every sample coincides with a chosen center; the stated
                # distribution is degenerate, fall back to the raw masses
                idx = kmeans._draw_index(rng, masses)
            candidate_idx.append(idx)
        new = x[:, candidate_idx[-q:]]
        d2 = np.minimum(d2, np.min(kmeans.squared_distances(x, new), axis=0))

    candidates = x[:, candidate_idx]
    nearest = kmeans.assign_to_centers(x, candidates)
    cand_weights = np.bincount(nearest, weights=masses, minlength=len(candidate_idx))

    seed_idx = kmeans.weighted_kmeans_pp(candidates, cand_weights, k, rng)
    centers, _, _ = kmeans.weighted_lloyd(candidates, cand_weights,
                                          candidates[:, seed_idx])
    labels = kmeans.assign_to_centers(x, centers)
    return ClusterState(centers, labels, kmeans.weighted_cost(x, masses, centers, labels))


def dictionary_from_clusters(state: ClusterState,
                             train: TrainingSet | None = None) -> Dictionary:
    """Normalize cluster centers into atoms.

    A zero-norm center cannot be normalized; when ``train`` is supplied it is
    replaced by the highest-mass training sample, otherwise this is an error.
    """
    centers = state.centers.copy()
    norms = np.linalg.norm(centers, axis=0)
    for j in np.flatnonzero(norms == 0.0):
        if train is None:
            raise ContractViolation(f"center {j} has zero norm and no fallback samples")
        fallback = train.samples[:, int(np.argmax(train.masses))]
        if np.linalg.norm(fallback) == 0.0:
            raise ContractViolation("highest-mass sample is zero; cannot replace center")
        centers[:, j] = fallback
    return Dictionary(normalize_columns(centers), "kmeans_centers")


def dictionary_update(train: TrainingSet, codes: np.ndarray,
                      current: Dictionary) -> Dictionary:
    """Mass-weighted dictionary update with the codes held fixed.

    Block-coordinate descent per atom: the weighted quadratic cost is
    isotropic in each atom, so its constrained minimizer over the unit
    sphere is the normalized unconstrained least-squares solution. The
    previous (unit-norm) atom is always feasible, hence the weighted cost
    never increases. Atoms used by no sample (and atoms whose least-squares
    target is exactly zero) are retained bit-identically.
    """
    codes = np.asarray(codes, dtype=np.float64)
    if codes.shape != (current.n_atoms, train.size):
        raise ContractViolation(
            f"codes must be K x T = {(current.n_atoms, train.size)}, got {codes.shape}"
        )
    x = train.samples
    w = train.masses
    atoms = current.atoms.copy()
    residual = x - atoms @ codes
    for j in range(current.n_atoms):
        row = codes[j]
        usage = float((row * row) @ w)
        if usage == 0.0:
            continue
        target = residual @ (w * row) + atoms[:, j] * usage
        norm = np.linalg.norm(target)
        if norm == 0.0:
            continue
        new_atom = target / norm
        residual += np.outer(atoms[:, j] - new_atom, row)
        atoms[:, j] = new_atom
    return Dictionary(atoms, current.atom_source)


def empirical_cost(train: TrainingSet, dictionary: Dictionary, codes: np.ndarray,
                   lam: float) -> float:
    """Mass-weighted coding cost: sum_i p_i (||x_i - D a_i||^2 + lam ||a_i||_1)."""
    resid = train.samples - dictionary.atoms @ codes
    per_sample = np.sum(resid * resid, axis=0) + lam * np.sum(np.abs(codes), axis=0)
    return float(per_sample @ train.masses)


def _initial_dictionary(train: TrainingSet, k: int, seed) -> Dictionary:
    """Alt-Opt initialization: normalized centers of a plain K-Means run."""
    rng = np.random.default_rng(seed)
    uniform = np.full(train.size, 1.0 / train.size)
    seed_idx = kmeans.weighted_kmeans_pp(train.samples, uniform, k, rng)
    centers, labels, cost = kmeans.weighted_lloyd(
        train.samples, uniform, train.samples[:, seed_idx], max_iter=10
    )
    return dictionary_from_clusters(ClusterState(centers, labels, cost), train)


def learn_alt_opt(train: TrainingSet, k: int, lam: float, iterations: int = 100,
                  seed=0, return_trace: bool = False, max_iter: int = 10000,
                  tol: float = 1e-6):
    """Alternating minimization for the empirical dictionary-learning cost.

    Each alternation codes all samples against the current dictionary and
    then applies ``dictionary_update``. The recorded cost trace (one entry
    per alternation, evaluated right after coding) is non-increasing. The
    coding budget defaults above the solver-level 1000 because learned
    dictionaries develop correlated atoms whose certificates converge slowly.
    """
    if k > train.size:
        raise ContractViolation(f"need T >= K, got T={train.size}, K={k}")
    if iterations < 1:
        raise ContractViolation("iterations must be >= 1")
    dictionary = _initial_dictionary(train, k, seed)
    trace = np.empty(iterations)
    for it in range(iterations):
        codes = code_batch(train.samples, dictionary, lam, max_iter=max_iter, tol=tol)
        trace[it] = empirical_cost(train, dictionary, codes, lam)
        dictionary = dictionary_update(train, codes, dictionary)
    if return_trace:
        return dictionary, trace
    return dictionary
