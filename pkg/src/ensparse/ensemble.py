"""Ensemble sparse models: weight solvers, trainers, and inference.

An ensemble approximates a sample as ``sum_l beta_l D_l a_l`` over L weak
sparse models. The weight solvers here handle the four constraint cases
(unconstrained, non-negative, sum-to-one, simplex); the trainers build the
weak dictionaries by random example selection (RandExAv) or boosting
(BoostEx / BoostKM), and the multilevel Ex-MLD variant averages 1-sparse
example approximations over a residual cascade.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import nnls

from .dictionaries import (
    TrainingSet,
    dictionary_from_clusters,
    draw_boostex_dictionary,
    draw_random_example_dictionary,
    weighted_kmeans_parallel_init,
)
from .errors import ContractViolation
from .sparse_coding import (
    CodingProblem,
    Dictionary,
    as_sample,
    code_batch,
    one_sparse_batch,
    resolve_max_iter,
    solve_lasso,
)

CONSTRAINT_CASES = ("unconstrained", "nonneg", "sum_one", "simplex")

NONNEG_TOL = 1e-12
SUM_ONE_TOL = 1e-9

_SIMPLEX_ITERS = 10_000
_SIMPLEX_TOL = 1e-10

EARLY_STOP_REL_ERROR = 1e-10


@dataclass(frozen=True)
class ApproximationStack:
    """Per-model approximations as columns of C (M x L), plus the target x."""

    columns: np.ndarray
    target: np.ndarray

    def __post_init__(self):
        cols = np.asarray(self.columns, dtype=np.float64)
        if cols.ndim != 2 or cols.shape[1] < 1:
            raise ContractViolation(f"columns must be M x L with L >= 1, got {cols.shape}")
        if not np.all(np.isfinite(cols)):
            raise ContractViolation("approximation columns contain non-finite entries")
        target = as_sample(self.target)
        if target.shape[0] != cols.shape[0]:
            raise ContractViolation(
                f"target length {target.shape[0]} != column length {cols.shape[0]}"
            )
        object.__setattr__(self, "columns", cols)
        object.__setattr__(self, "target", target)

    @property
    def n_models(self) -> int:
        return self.columns.shape[1]


@dataclass(frozen=True)
class WeightVector:
    """Ensemble weights together with the constraint case they satisfy."""

    betas: np.ndarray
    constraint_case: str

    def __post_init__(self):
        betas = np.asarray(self.betas, dtype=np.float64)
        if betas.ndim != 1 or betas.size < 1:
            raise ContractViolation(f"betas must be a vector, got shape {betas.shape}")
        if self.constraint_case not in CONSTRAINT_CASES:
            raise ContractViolation(f"unknown constraint case {self.constraint_case!r}")
        if self.constraint_case in ("nonneg", "simplex") and np.any(betas < -NONNEG_TOL):
            raise ContractViolation(f"betas violate non-negativity: min {betas.min():.3e}")
        if self.constraint_case in ("sum_one", "simplex") and \
                abs(betas.sum() - 1.0) > SUM_ONE_TOL:
            raise ContractViolation(f"betas must sum to 1, got {betas.sum():.12f}")
        object.__setattr__(self, "betas", betas)


def residual(stack: ApproximationStack, weights: WeightVector) -> np.ndarray:
    """Total ensemble residual x - C beta."""
    if weights.betas.shape[0] != stack.n_models:
        raise ContractViolation(
            f"{weights.betas.shape[0]} weights for {stack.n_models} models"
        )
    return stack.target - stack.columns @ weights.betas


def _project_simplex(v: np.ndarray) -> np.ndarray:
    """Euclidean projection onto the probability simplex."""
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    rho = np.nonzero(u * np.arange(1, v.size + 1) > css)[0][-1]
    return np.maximum(v - css[rho] / (rho + 1.0), 0.0)


def _solve_sum_one(c: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Affine-hull least squares by eliminating the last weight."""
    l = c.shape[1]
    if l == 1:
        return np.ones(1)
    base = c[:, -1]
    diff = c[:, :-1] - base[:, None]
    gamma, *_ = np.linalg.lstsq(diff, x - base, rcond=None)
    return np.append(gamma, 1.0 - gamma.sum())


def _polish_simplex(c: np.ndarray, x: np.ndarray, betas: np.ndarray) -> np.ndarray:
    """Exact affine solve on the active support of a simplex iterate.

    If the support's sum-one least-squares solution is itself feasible and at
    least as good, use it; this sharpens the projected-gradient result to the
    exact optimum whenever the active set was identified correctly.
    """
    support = np.flatnonzero(betas > 0.0)
    if support.size == 0:
        return betas
    candidate = np.zeros_like(betas)
    candidate[support] = _solve_sum_one(c[:, support], x)
    if np.all(candidate >= -NONNEG_TOL):
        r_cand = x - c @ candidate
        r_cur = x - c @ betas
        if r_cand @ r_cand <= r_cur @ r_cur:
            return candidate
    return betas


def _solve_simplex(c: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Projected gradient on the simplex, polished by an active-set solve."""
    sum_one = _solve_sum_one(c, x)
    if np.all(sum_one >= -NONNEG_TOL):
        # the affine optimum already lies in the convex hull
        return sum_one
    gram = c.T @ c
    corr = c.T @ x
    lip = 2.0 * float(np.linalg.eigvalsh(gram)[-1])
    step = 1.0 / lip if lip > 0.0 else 1.0
    betas = _project_simplex(sum_one)
    for _ in range(_SIMPLEX_ITERS):
        new = _project_simplex(betas - 2.0 * step * (gram @ betas - corr))
        if np.max(np.abs(new - betas)) <= _SIMPLEX_TOL:
            betas = new
            break
        betas = new
    return _polish_simplex(c, x, betas)


def solve_weights(stack: ApproximationStack, case: str) -> WeightVector:
    """Minimize ||x - C beta|| under the given constraint case.

    Unconstrained and sum-one use (affine) least squares with the min-norm
    convention for rank-deficient C; non-negative uses active-set NNLS; the
    simplex case uses projected gradient with an exact active-set polish.
    Feasible relaxed solutions are reused directly (an unconstrained optimum
    that is already non-negative is the non-negative optimum, and likewise
    for sum-one vs simplex), keeping the nested-set residual orderings exact.
    """
    if case not in CONSTRAINT_CASES:
        raise ContractViolation(f"unknown constraint case {case!r}")
    c, x = stack.columns, stack.target
    if case == "unconstrained":
        betas, *_ = np.linalg.lstsq(c, x, rcond=None)
    elif case == "nonneg":
        relaxed, *_ = np.linalg.lstsq(c, x, rcond=None)
        betas = relaxed if np.all(relaxed >= 0.0) else nnls(c, x)[0]
    elif case == "sum_one":
        betas = _solve_sum_one(c, x)
    else:
        betas = _solve_simplex(c, x)
    return WeightVector(betas, case)


def optimal_alpha(x_mat: np.ndarray, x_prev: np.ndarray, candidate: np.ndarray) -> float:
    """Closed-form minimizer of ||X - ((1-a) X_prev + a candidate)||_F.

    Returns 0 when the candidate equals the previous cumulative approximation
    (any step is then optimal and 0 keeps the state unchanged).
    """
    x_mat = np.asarray(x_mat, dtype=np.float64)
    x_prev = np.asarray(x_prev, dtype=np.float64)
    candidate = np.asarray(candidate, dtype=np.float64)
    if not x_mat.shape == x_prev.shape == candidate.shape:
        raise ContractViolation("optimal_alpha requires three equal-shape matrices")
    direction = candidate - x_prev
    denom = float(np.sum(direction * direction))
    if denom == 0.0:
        return 0.0
    return float(np.sum((x_mat - x_prev) * direction)) / denom


def betas_from_alphas(alphas: np.ndarray) -> np.ndarray:
    """Greedy-forward weights: beta_l = alpha_l * prod_{t>l} (1 - alpha_t)."""
    alphas = np.asarray(alphas, dtype=np.float64)
    tail = np.ones_like(alphas)
    for l in range(alphas.size - 2, -1, -1):
        tail[l] = tail[l + 1] * (1.0 - alphas[l + 1])
    return alphas * tail


@dataclass(frozen=True)
class BoostRoundTrace:
    """Per-round boosting diagnostics (1-based round index)."""

    round: int
    alpha: float
    per_sample_error: np.ndarray
    masses_next: np.ndarray
    cumulative_error: float


@dataclass(frozen=True)
class EnsembleModel:
    """L weak dictionaries plus their combination weights.

    ``alphas`` is present only for boosted models and satisfies the
    greedy-forward identity with ``betas``; RandExAv models carry uniform
    1/L weights. ``trained_operator`` stores the descriptor of the
    degradation the boosted model was trained against, if any.
    """

    dictionaries: list
    betas: WeightVector
    alphas: np.ndarray | None = None
    lambda_train: float | None = None
    trained_operator: dict | None = None
    method: str = "randexav"

    def __post_init__(self):
        if not self.dictionaries:
            raise ContractViolation("an ensemble needs at least one dictionary")
        dims = {d.dim for d in self.dictionaries}
        if len(dims) != 1:
            raise ContractViolation(f"dictionaries disagree on dimension: {dims}")
        l = len(self.dictionaries)
        if self.betas.betas.shape[0] != l:
            raise ContractViolation("one beta per dictionary required")
        if self.alphas is not None:
            alphas = np.asarray(self.alphas, dtype=np.float64)
            if alphas.shape != (l,):
                raise ContractViolation("one alpha per dictionary required")
            expected = betas_from_alphas(alphas)
            if np.max(np.abs(expected - self.betas.betas)) > 1e-9:
                raise ContractViolation("betas do not match the greedy-forward identity")
            object.__setattr__(self, "alphas", alphas)
        else:
            if np.max(np.abs(self.betas.betas - 1.0 / l)) > 1e-12:
                raise ContractViolation("non-boosted ensembles must carry uniform 1/L betas")

    @property
    def n_models(self) -> int:
        return len(self.dictionaries)

    @property
    def dim(self) -> int:
        return self.dictionaries[0].dim


def _sub_seeds(seed, n: int):
    """Deterministic per-round seeds: children of one master SeedSequence."""
    return np.random.SeedSequence(seed).spawn(n)


def train_randexav(train: TrainingSet, k: int, n_models: int, seed=0,
                   lambda_train: float | None = None) -> EnsembleModel:
    """L random-example dictionaries with uniform 1/L weights."""
    seeds = _sub_seeds(seed, n_models)
    dicts = [draw_random_example_dictionary(train, k, s) for s in seeds]
    betas = WeightVector(np.full(n_models, 1.0 / n_models), "sum_one")
    return EnsembleModel(dicts, betas, None, lambda_train, None, "randexav")


def _build_round_dictionary(builder, train, masses, k, sub_seed, q, s):
    weighted = train.with_masses(masses)
    if builder == "boostex":
        return draw_boostex_dictionary(weighted, k, sub_seed)
    if builder == "boostkm":
        state = weighted_kmeans_parallel_init(weighted, k, q, s, sub_seed)
        return dictionary_from_clusters(state, weighted)
    raise ContractViolation(f"unknown builder {builder!r}")


def train_boosted(train: TrainingSet, k: int, n_models: int, lam: float,
                  builder: str, operator=None, seed=0, q: int | None = None,
                  s: int | None = None, max_iter: int | None = None, tol: float = 1e-6):
    """Greedy boosted ensemble training (BoostEx or BoostKM).

    Round 1 starts from uniform masses and takes its model fully
    (``alpha_1 = 1``); later rounds code the training set with the round
    dictionary (through ``operator`` when given), blend with the closed-form
    alpha, and re-weight the masses proportionally to the per-sample
    round-model errors. ``max_iter=None`` selects the coding budget from the
    domain (1000 clean, 30000 degraded). Returns ``(model, traces)``.
    """
    max_iter = resolve_max_iter(max_iter, operator)
    x = train.samples
    t = train.size
    observations = operator.apply(x) if operator is not None else x
    seeds = _sub_seeds(seed, n_models)
    masses = np.full(t, 1.0 / t)
    x_norm = float(np.linalg.norm(x))

    dicts: list[Dictionary] = []
    alphas: list[float] = []
    traces: list[BoostRoundTrace] = []
    cumulative = np.zeros_like(x)
    for l in range(n_models):
        d_l = _build_round_dictionary(builder, train, masses, k, seeds[l], q, s)
        codes = code_batch(observations, d_l, lam, operator, max_iter, tol)
        approx = d_l.atoms @ codes
        alpha = 1.0 if l == 0 else optimal_alpha(x, cumulative, approx)
        cumulative = (1.0 - alpha) * cumulative + alpha * approx

        round_residual = x - approx
        errors = np.sum(round_residual * round_residual, axis=0)
        total_err = errors.sum()
        if total_err > 0.0:
            masses = errors / total_err
        else:
            masses = np.full(t, 1.0 / t)
        cum_err = float(np.linalg.norm(x - cumulative))
        dicts.append(d_l)
        alphas.append(alpha)
        traces.append(BoostRoundTrace(l + 1, alpha, errors, masses.copy(), cum_err))
        if total_err == 0.0 or (x_norm > 0.0 and cum_err / x_norm < EARLY_STOP_REL_ERROR):
            break

    alphas_arr = np.asarray(alphas)
    betas = WeightVector(betas_from_alphas(alphas_arr), "sum_one")
    op_desc = operator.descriptor() if operator is not None else None
    model = EnsembleModel(dicts, betas, alphas_arr, lam, op_desc, builder)
    return model, traces


def ensemble_code_batch(model: EnsembleModel, observations: np.ndarray, lam: float,
                        operator=None, max_iter: int | None = None, tol: float = 1e-6):
    """Per-model code matrices for a batch of observations (list of K_l x T)."""
    max_iter = resolve_max_iter(max_iter, operator)
    return [
        code_batch(observations, d, lam, operator, max_iter, tol)
        for d in model.dictionaries
    ]


def apply_ensemble_batch(model: EnsembleModel, observations: np.ndarray, lam: float,
                         operator=None, max_iter: int | None = None, tol: float = 1e-6) -> np.ndarray:
    """Ensemble estimates for a batch: sum_l beta_l D_l A_l, shape (M, T)."""
    max_iter = resolve_max_iter(max_iter, operator)
    observations = np.asarray(observations, dtype=np.float64)
    if observations.ndim == 1:
        observations = observations[:, None]
    estimate = np.zeros((model.dim, observations.shape[1]))
    for beta, d in zip(model.betas.betas, model.dictionaries):
        codes = code_batch(observations, d, lam, operator, max_iter, tol)
        estimate += beta * (d.atoms @ codes)
    return estimate


def apply_ensemble(model: EnsembleModel, observation, lam: float, operator=None,
                   max_iter: int | None = None, tol: float = 1e-6) -> np.ndarray:
    """Ensemble estimate of one sample; lives in clean-data space."""
    max_iter = resolve_max_iter(max_iter, operator)
    observation = as_sample(observation)
    estimate = np.zeros(model.dim)
    for beta, d in zip(model.betas.betas, model.dictionaries):
        problem = CodingProblem(observation, d, lam, operator)
        code = solve_lasso(problem, max_iter, tol)
        estimate += beta * (d.atoms @ code.coefficients)
    return estimate


@dataclass(frozen=True)
class ExMLDModel:
    """Multilevel example-dictionary model: one RandExAv bank per level."""

    level_dictionaries: list
    atoms_per_level: int
    n_models: int
    level_energies: np.ndarray = field(repr=False)

    def __post_init__(self):
        if not self.level_dictionaries:
            raise ContractViolation("need at least one level")

    @property
    def n_levels(self) -> int:
        return len(self.level_dictionaries)

    @property
    def dim(self) -> int:
        return self.level_dictionaries[0][0].dim


_EXMLD_ZERO_NORM = 1e-12


def _one_sparse_average(dictionaries, effective_list, observations: np.ndarray):
    """Mean of per-dictionary 1-sparse approximations, in clean and observed space.

    ``effective_list`` holds the operator-composed atom matrices (same as the
    clean atoms when no operator is involved). Returns ``(clean, observed)``.
    """
    clean = np.zeros((dictionaries[0].dim, observations.shape[1]))
    observed = np.zeros_like(observations)
    for d, eff in zip(dictionaries, effective_list):
        idx, coeff = one_sparse_batch(eff, observations)
        clean += d.atoms[:, idx] * coeff
        observed += eff[:, idx] * coeff
    clean /= len(dictionaries)
    observed /= len(dictionaries)
    return clean, observed


def train_ex_mld(train: TrainingSet, levels: int, atoms_per_level: int,
                 n_models: int, seed=0):
    """Multilevel RandExAv training on a residual cascade.

    Each level draws L example dictionaries from the current residual set
    (only residuals with non-negligible norm are eligible), averages the L
    1-sparse approximations, and passes the new residuals to the next level.
    Levels are truncated once fewer than K eligible residuals remain.
    Returns ``(model, level_energies)`` where the energies are the Frobenius
    norms of the residual set before each level (plus the final one).
    """
    if levels < 1:
        raise ContractViolation("levels must be >= 1")
    level_seeds = _sub_seeds(seed, levels)
    residuals = train.samples.copy()
    banks = []
    energies = [float(np.linalg.norm(residuals))]
    for lev in range(levels):
        norms = np.linalg.norm(residuals, axis=0)
        eligible = np.flatnonzero(norms > _EXMLD_ZERO_NORM)
        if eligible.shape[0] < atoms_per_level:
            break
        pool = TrainingSet(residuals[:, eligible])
        bank = []
        for sub in level_seeds[lev].spawn(n_models):
            d = draw_random_example_dictionary(pool, atoms_per_level, sub)
            # remap atom provenance to indices into the full training set
            bank.append(Dictionary(d.atoms, "example_subset",
                                   eligible[d.source_indices]))
        approx, _ = _one_sparse_average(bank, [d.atoms for d in bank], residuals)
        residuals = residuals - approx
        banks.append(bank)
        energies.append(float(np.linalg.norm(residuals)))
    if not banks:
        raise ContractViolation(
            f"training residuals provide fewer than {atoms_per_level} usable samples"
        )
    energies = np.asarray(energies)
    return ExMLDModel(banks, atoms_per_level, n_models, energies), energies


def apply_ex_mld_batch(model: ExMLDModel, observations: np.ndarray,
                       operator=None) -> np.ndarray:
    """Multilevel estimates for a batch of (possibly degraded) observations.

    Mirrors training: per level the 1-sparse correlations run against the
    operator-composed atoms, the clean-space estimate accumulates, and the
    observed-space residual cascades to the next level.
    """
    observations = np.asarray(observations, dtype=np.float64)
    if observations.ndim == 1:
        observations = observations[:, None]
    expected = model.dim if operator is None else operator.out_dim
    if observations.shape[0] != expected:
        raise ContractViolation(
            f"observations have dim {observations.shape[0]}, expected {expected}"
        )
    estimate = np.zeros((model.dim, observations.shape[1]))
    resid = observations.copy()
    for bank in model.level_dictionaries:
        if operator is None:
            effective = [d.atoms for d in bank]
        else:
            effective = [operator.compose(d.atoms) for d in bank]
        clean, observed = _one_sparse_average(bank, effective, resid)
        estimate += clean
        resid -= observed
    return estimate


def apply_ex_mld(model: ExMLDModel, observation, operator=None) -> np.ndarray:
    """Multilevel estimate of a single observation."""
    return apply_ex_mld_batch(model, as_sample(observation), operator)[:, 0]
