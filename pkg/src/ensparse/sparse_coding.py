"""l1-penalized sparse coding against unit-norm dictionaries.

The central problem is ``min_a ||x - D a||^2 + lam * ||a||_1``; the degraded
variant codes an observation ``z = op(x)`` against the effective atom matrix
``op(D)``. A hard 1-sparse coder (used by the multilevel and graph paths)
lives here too.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import ContractViolation, ConvergenceError

ATOM_SOURCES = ("learned", "example_subset", "kmeans_centers")

UNIT_NORM_TOL = 1e-9

DEFAULT_MAX_ITER = 1000
# Degraded-domain problems (N-dim observations of M-dim signals, N << M, via a
# random projection) have rank-deficient Grams whose stationarity residual
# decays slowly; pipelines that code through an operator use this budget.
DEGRADED_MAX_ITER = 30000


def resolve_max_iter(max_iter: int | None, operator) -> int:
    """Operator-aware iteration budget: ``None`` picks the matching default."""
    if max_iter is not None:
        return max_iter
    return DEGRADED_MAX_ITER if operator is not None else DEFAULT_MAX_ITER


def as_sample(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.size == 0:
        raise ContractViolation(f"sample must be a non-empty vector, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ContractViolation("sample contains non-finite entries")
    return x


def normalize_columns(matrix: np.ndarray) -> np.ndarray:
    """Scale every column to unit l2 norm; zero columns are an error."""
    matrix = np.asarray(matrix, dtype=np.float64)
    norms = np.linalg.norm(matrix, axis=0)
    if np.any(norms <= 0.0):
        raise ContractViolation("cannot normalize an all-zero column")
    return matrix / norms


@dataclass(frozen=True)
class Dictionary:
    """Unit-norm atom matrix (M x K) plus provenance.

    ``source_indices`` records, for example-subset dictionaries, which
    training sample each atom was drawn from (needed by the graph builders).
    """

    atoms: np.ndarray
    atom_source: str = "learned"
    source_indices: np.ndarray | None = None

    def __post_init__(self):
        atoms = np.ascontiguousarray(np.asarray(self.atoms, dtype=np.float64))
        object.__setattr__(self, "atoms", atoms)
        if atoms.ndim != 2 or atoms.shape[1] < 1:
            raise ContractViolation(f"atoms must be M x K with K >= 1, got {atoms.shape}")
        if not np.all(np.isfinite(atoms)):
            raise ContractViolation("atoms contain non-finite entries")
        norms = np.linalg.norm(atoms, axis=0)
        if np.any(np.abs(norms - 1.0) > UNIT_NORM_TOL):
            worst = float(np.max(np.abs(norms - 1.0)))
            raise ContractViolation(f"atom norms deviate from 1 by {worst:.3e}")
        if self.atom_source not in ATOM_SOURCES:
            raise ContractViolation(f"unknown atom_source {self.atom_source!r}")
        if self.source_indices is not None:
            idx = np.asarray(self.source_indices, dtype=np.int64)
            if idx.shape != (atoms.shape[1],):
                raise ContractViolation("source_indices must have one entry per atom")
            object.__setattr__(self, "source_indices", idx)

    @property
    def dim(self) -> int:
        return self.atoms.shape[0]

    @property
    def n_atoms(self) -> int:
        return self.atoms.shape[1]


@dataclass(frozen=True)
class SparseCode:
    """Coefficient vector with the penalty it was computed under.

    ``lam`` is 0.0 for hard 1-sparse codes, where no l1 penalty applies.
    ``objective_trace`` is only populated when requested from the solver.
    """

    coefficients: np.ndarray
    lam: float
    objective_value: float
    objective_trace: np.ndarray | None = field(default=None, repr=False, compare=False)

    @property
    def support(self) -> np.ndarray:
        return np.flatnonzero(self.coefficients)


@dataclass(frozen=True)
class CodingProblem:
    """A target vector, a dictionary, a penalty, and an optional degradation."""

    target: np.ndarray
    dictionary: Dictionary
    lam: float
    operator: object | None = None

    def __post_init__(self):
        object.__setattr__(self, "target", as_sample(self.target))
        if self.lam <= 0.0:
            raise ContractViolation(f"lam must be positive, got {self.lam}")
        if self.operator is None:
            if self.target.shape[0] != self.dictionary.dim:
                raise ContractViolation(
                    f"target length {self.target.shape[0]} != atom length "
                    f"{self.dictionary.dim}"
                )
        else:
            if self.operator.in_dim != self.dictionary.dim:
                raise ContractViolation(
                    f"operator input dim {self.operator.in_dim} != atom length "
                    f"{self.dictionary.dim}"
                )
            if self.target.shape[0] != self.operator.out_dim:
                raise ContractViolation(
                    f"target length {self.target.shape[0]} != operator output dim "
                    f"{self.operator.out_dim}"
                )

    def effective_atoms(self) -> np.ndarray:
        """Atom matrix seen by the solver: op(D) when degraded, else D."""
        if self.operator is None:
            return self.dictionary.atoms
        return self.operator.compose(self.dictionary.atoms)


def _gram_and_step(effective: np.ndarray):
    """Gram matrix and the 1/(2*sigma_max^2) step for the proximal iteration."""
    gram = np.ascontiguousarray(effective.T @ effective)
    m, k = effective.shape
    if m < k:
        smax2 = float(np.linalg.eigvalsh(effective @ effective.T)[-1])
    else:
        smax2 = float(np.linalg.eigvalsh(gram)[-1])
    if smax2 <= 0.0:
        return gram, None
    return gram, 1.0 / (2.0 * smax2)


def solve_lasso(problem: CodingProblem, max_iter: int = 1000, tol: float = 1e-6,
                record_objective: bool = False) -> SparseCode:
    """Solve the l1-penalized coding problem to a stationarity certificate.

    Stops once the subgradient-optimality residual (see ``kkt_residual``)
    drops below ``tol``; raises ``ConvergenceError`` carrying the final
    residual if the iteration budget runs out first.
    """
    effective = problem.effective_atoms()
    x = problem.target
    gram, step = _gram_and_step(effective)
    corr = effective.T @ x
    xtx = float(x @ x)
    return _solve_prepared(effective, gram, step, corr, xtx, x, problem.lam,
                           max_iter, tol, record_objective)


def _solve_prepared(effective, gram, step, corr, xtx, x, lam, max_iter, tol,
                    record_objective) -> SparseCode:
    if step is None:
        # all-zero effective atoms: the zero code is optimal
        coeffs = np.zeros(effective.shape[1])
        return SparseCode(coeffs, lam, xtx)
    coeffs, kkt, _, converged, trace = kernels.lasso_kernel(
        gram, corr, xtx, lam, step, max_iter, tol, record_objective
    )
    if not converged:
        raise ConvergenceError(
            f"coding did not reach stationarity tol {tol:g} within {max_iter} "
            f"iterations (final residual {kkt:.3e})",
            kkt_residual=kkt,
        )
    resid = x - effective @ coeffs
    objective = float(resid @ resid + lam * np.sum(np.abs(coeffs)))
    return SparseCode(coeffs, lam, objective, trace if record_objective else None)


def kkt_residual(problem: CodingProblem, code: SparseCode) -> float:
    """Largest violation of the stationarity conditions of the coding problem.

    With residual ``r = x - E a`` over effective atoms E, optimality requires
    ``|2 e_j^T r| <= lam`` wherever ``a_j = 0`` and ``2 e_j^T r = lam *
    sign(a_j)`` elsewhere. Returns the maximum violation magnitude; a value
    below a small tolerance certifies the code as optimal.
    """
    effective = problem.effective_atoms()
    a = np.asarray(code.coefficients, dtype=np.float64)
    if a.shape[0] != effective.shape[1]:
        raise ContractViolation(
            f"code length {a.shape[0]} != number of atoms {effective.shape[1]}"
        )
    g = effective.T @ (problem.target - effective @ a)
    lam = problem.lam
    on = a != 0.0
    viol_on = np.abs(2.0 * g - lam * np.sign(a))
    viol_off = np.maximum(2.0 * np.abs(g) - lam, 0.0)
    return float(np.max(np.where(on, viol_on, viol_off)))


def code_one_sparse(sample, dictionary: Dictionary) -> SparseCode:
    """Best single-atom approximation: argmax_j |d_j^T x|, ties to lowest j.

    The coefficient is the least-squares value ``d_j^T x`` (atoms are unit
    norm). Returns a code with ``lam = 0`` since no l1 penalty is involved.
    """
    x = as_sample(sample)
    if x.shape[0] != dictionary.dim:
        raise ContractViolation(
            f"sample length {x.shape[0]} != atom length {dictionary.dim}"
        )
    corr = dictionary.atoms.T @ x
    j = int(np.argmax(np.abs(corr)))
    coeffs = np.zeros(dictionary.n_atoms)
    coeffs[j] = corr[j]
    resid = x - coeffs[j] * dictionary.atoms[:, j]
    return SparseCode(coeffs, 0.0, float(resid @ resid))


def one_sparse_batch(effective: np.ndarray, samples: np.ndarray):
    """Vectorized 1-sparse coding against a possibly non-unit atom matrix.

    Picks, per column of ``samples``, the atom minimizing the single-atom
    least-squares residual (ties to lowest index; zero-norm atoms are never
    selected unless every atom is zero). Returns ``(indices, coefficients)``.
    """
    samples = np.asarray(samples, dtype=np.float64)
    if samples.ndim == 1:
        samples = samples[:, None]
    norms_sq = np.sum(effective * effective, axis=0)
    safe = np.where(norms_sq > 0.0, norms_sq, 1.0)
    corr = effective.T @ samples  # (K, T)
    scores = np.where(norms_sq[:, None] > 0.0, corr**2 / safe[:, None], -1.0)
    indices = np.argmax(scores, axis=0)
    cols = np.arange(corr.shape[1])
    coeffs = np.where(norms_sq[indices] > 0.0, corr[indices, cols] / safe[indices], 0.0)
    return indices, coeffs


def code_batch(samples, dictionary: Dictionary, lam: float, operator=None,
               max_iter: int = 1000, tol: float = 1e-6) -> np.ndarray:
    """Code every column of ``samples``; returns the K x T coefficient matrix.

    Column i equals ``solve_lasso`` on sample i exactly: the Gram matrix and
    step are shared, but each sample runs the identical per-sample iteration,
    so batching never changes the result.
    """
    samples = np.asarray(samples, dtype=np.float64)
    if samples.ndim == 1:
        samples = samples[:, None]
    if samples.ndim != 2:
        raise ContractViolation(f"samples must be M x T, got shape {samples.shape}")
    probe = CodingProblem(samples[:, 0], dictionary, lam, operator)
    effective = probe.effective_atoms()
    gram, step = _gram_and_step(effective)
    codes = np.empty((dictionary.n_atoms, samples.shape[1]))
    for i in range(samples.shape[1]):
        x = samples[:, i]
        if not np.all(np.isfinite(x)):
            raise ContractViolation(f"sample {i} contains non-finite entries")
        try:
            code = _solve_prepared(effective, gram, step, effective.T @ x,
                                   float(x @ x), x, lam, max_iter, tol, False)
        except ConvergenceError as err:
            raise ConvergenceError(
                f"sample {i}: {err}", kkt_residual=err.kkt_residual
            ) from err
        codes[:, i] = code.coefficients
    return codes


def reconstruct(dictionary: Dictionary, codes: np.ndarray) -> np.ndarray:
    """Map codes back to signal space: ``D @ codes``."""
    return dictionary.atoms @ codes
