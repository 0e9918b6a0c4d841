"""Linear assignment and the score-weighted surrogate for the repro objective.

``hungarian_solve`` is the O(n^3) primal-dual (shortest augmenting path)
Hungarian method with explicit row/column potentials.  ``surrogate_argmin``
replaces the projection least-squares search over ``P_{n,k}`` by a single
assignment problem with costs

    Omega_ij = (Y_i - m_j)^2 + lam1 * [j != i] - lam2 * [j == i] (Y_i - m_i)^2,

where ``m`` is the projection of ``Y`` onto ``range(X, u*)``.

Assigning row ``i`` to column ``j`` sets ``Pi[i, j] = 1``; the returned
:class:`SparsePermutation` is that ``Pi`` in the row-action convention of
:mod:`permreg.permutations`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, LengthMismatch, NegativePenalty, NonFinite
from .numerics import as_matrix, as_vector, project, residual_norm_sq
from .permutations import PermutationClass, SparsePermutation, enumerate_class


@dataclass(frozen=True)
class LapSolution:
    assignment: SparsePermutation
    objective: float
    row_duals: np.ndarray
    col_duals: np.ndarray
    col_of_row: np.ndarray


def hungarian_solve(costs) -> LapSolution:
    """Exact minimiser of ``sum_i costs[i, col(i)]`` over all permutations.

    Potentials start from the row reduction ``a_i = min_j costs[i, j]``,
    ``b_j = 0``.  Rows are inserted in increasing order; among equal slacks
    the smallest column index is taken.
    """
    C = np.asarray(costs, dtype=float)
    if C.ndim != 2 or C.shape[0] != C.shape[1] or C.shape[0] < 1:
        raise DomainError(f"cost matrix must be square and non-empty, got shape {C.shape}")
    if not np.all(np.isfinite(C)):
        raise NonFinite("cost matrix has non-finite entries")
    n = C.shape[0]

    # 1-based layout; index 0 is the virtual column holding the row being inserted
    Cp = np.zeros((n + 1, n + 1))
    Cp[1:, 1:] = C
    u = np.zeros(n + 1)
    u[1:] = C.min(axis=1)
    v = np.zeros(n + 1)
    match = np.zeros(n + 1, dtype=np.int64)  # match[j] = row assigned to column j
    way = np.zeros(n + 1, dtype=np.int64)
    minv = np.empty(n + 1)
    used = np.empty(n + 1, dtype=bool)
    inf = np.inf

    for i in range(1, n + 1):
        match[0] = i
        j0 = 0
        minv.fill(inf)
        used.fill(False)
        while True:
            used[j0] = True
            i0 = match[j0]
            free = ~used
            cur = Cp[i0] - u[i0] - v
            better = free & (cur < minv)
            minv[better] = cur[better]
            way[better] = j0
            masked = np.where(free, minv, inf)
            j1 = int(np.argmin(masked))
            delta = masked[j1]
            u[match[used]] += delta
            v[used] -= delta
            minv[free] -= delta
            j0 = j1
            if match[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            match[j0] = match[j1]
            j0 = j1

    col_of_row = np.empty(n, dtype=np.int64)
    col_of_row[match[1:] - 1] = np.arange(n)
    objective = math.fsum(C[np.arange(n), col_of_row])
    # Pi[i, col(i)] = 1 is the row action v -> v[col], i.e. pi^{-1} = col
    assignment = SparsePermutation.from_images(col_of_row).inverse()
    return LapSolution(assignment, objective, u[1:].copy(), v[1:].copy(), col_of_row)


def build_cost_matrix(Y, m, lam1: float, lam2: float) -> np.ndarray:
    Y = as_vector(Y)
    m = as_vector(m)
    if Y.shape != m.shape:
        raise LengthMismatch(f"Y has length {Y.shape[0]} but m has length {m.shape[0]}")
    if lam1 < 0 or lam2 < 0:
        raise NegativePenalty(f"penalties must be non-negative, got ({lam1}, {lam2})")
    omega = (Y[:, None] - m[None, :]) ** 2
    diag = np.diag(omega).copy()
    omega += lam1
    np.fill_diagonal(omega, diag - lam2 * diag)
    return omega


def repro_design(X, ustar, p: SparsePermutation, Z=None) -> np.ndarray:
    """``[Pi X | Z | u*]`` (``Z`` optional)."""
    X = as_matrix(X)
    blocks = [p.apply(X)]
    if Z is not None:
        blocks.append(as_matrix(Z))
    blocks.append(as_vector(ustar, X.shape[0])[:, None])
    return np.hstack(blocks)


def repro_objective(Y, X, ustar, p: SparsePermutation, Z=None) -> float:
    """``||(I - M_{(Pi X, [Z,] u*)}) Y||^2``."""
    return residual_norm_sq(repro_design(X, ustar, p, Z), Y)


def bruteforce_argmin(objective, n: int, k: int) -> tuple[SparsePermutation, float]:
    """Minimise ``objective(pi)`` over ``P_{n,k}``; ties go to the earliest enumerated."""
    best, best_val = None, math.inf
    for pi in enumerate_class(PermutationClass(n, k)):
        val = objective(pi)
        if val < best_val:
            best, best_val = pi, val
    return best, best_val


def repro_argmin_bruteforce(Y, X, ustar, k: int, Z=None) -> tuple[SparsePermutation, float]:
    X = as_matrix(X)
    return bruteforce_argmin(lambda pi: repro_objective(Y, X, ustar, pi, Z), X.shape[0], k)


@dataclass(frozen=True)
class SurrogateSolution:
    permutation: SparsePermutation
    violation: bool  # moved more than k points
    residual_sq: float  # ||Y - m||^2
    objective: float  # optimal assignment cost


def score_weighted_lap(Y, m, lam1: float, lam2: float, k: int) -> SurrogateSolution:
    Y = as_vector(Y)
    sol = hungarian_solve(build_cost_matrix(Y, m, lam1, lam2))
    r = Y - as_vector(m)
    return SurrogateSolution(sol.assignment, sol.assignment.distance > k, float(r @ r), sol.objective)


def fitted_values(Y, X, ustar, Z=None) -> np.ndarray:
    """``m = M_{(X, [Z,] u*)} Y``, the unpermuted fit the surrogate costs are built from."""
    X = as_matrix(X)
    return project(repro_design(X, ustar, SparsePermutation.identity(X.shape[0]), Z), Y)


def surrogate_argmin(Y, X, ustar, lam1: float, lam2: float, k: int, Z=None) -> SurrogateSolution:
    """Score-weighted LAP solution; ``violation`` is set when it leaves ``P_{n,k}``."""
    return score_weighted_lap(Y, fitted_values(Y, X, ustar, Z), lam1, lam2, k)
