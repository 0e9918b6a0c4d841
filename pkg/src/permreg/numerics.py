"""Linear-algebra kernels, random streams and the F distribution.

Projections onto ``range(A)`` always go through a thin, column-pivoted QR
factorisation; the ``n x n`` projector is never formed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg
from scipy import optimize, special

from .errors import DomainError, LengthMismatch, NonFinite, RankDeficient

RANK_TOL = 1e-10

__all__ = [
    "RANK_TOL",
    "RngStream",
    "as_matrix",
    "as_vector",
    "f_cdf",
    "f_pdf",
    "f_quantile",
    "gaussian_vector",
    "ols_fit",
    "orthonormal_basis",
    "project",
    "residual",
    "residual_norm_sq",
]


def as_matrix(A) -> np.ndarray:
    """Coerce to a finite 2-D float array (a 1-D input becomes one column)."""
    A = np.asarray(A, dtype=float)
    if A.ndim == 1:
        A = A[:, None]
    if A.ndim != 2 or A.shape[0] < 1 or A.shape[1] < 1:
        raise DomainError(f"expected a non-empty matrix, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise NonFinite("matrix has non-finite entries")
    return A


def as_vector(v, n: int | None = None) -> np.ndarray:
    v = np.asarray(v, dtype=float).reshape(-1)
    if n is not None and v.shape[0] != n:
        raise LengthMismatch(f"expected length {n}, got {v.shape[0]}")
    if not np.all(np.isfinite(v)):
        raise NonFinite("vector has non-finite entries")
    return v


def _pivoted_qr(A: np.ndarray):
    n, p = A.shape
    if n < p:
        raise RankDeficient(f"{n} rows cannot span {p} columns")
    Q, R, piv = scipy.linalg.qr(A, mode="economic", pivoting=True, check_finite=False)
    diag = np.abs(np.diag(R))
    if diag[0] == 0.0 or diag[-1] <= RANK_TOL * diag[0]:
        raise RankDeficient(
            f"design is numerically rank deficient (|R_pp|/|R_11| = {diag[-1] / max(diag[0], 1e-300):.3g})"
        )
    return Q, R, piv


def orthonormal_basis(A) -> np.ndarray:
    """Orthonormal basis ``Q`` of ``range(A)``; the projector is ``Q @ Q.T``."""
    Q, _, _ = _pivoted_qr(as_matrix(A))
    return Q


def project(A, v) -> np.ndarray:
    """Orthogonal projection of ``v`` onto ``range(A)``."""
    A = as_matrix(A)
    v = as_vector(v, A.shape[0])
    Q = orthonormal_basis(A)
    return Q @ (Q.T @ v)


def residual(A, v) -> np.ndarray:
    """``(I - M_A) v``."""
    v = as_vector(v)
    return v - project(A, v)


def residual_norm_sq(A, v) -> float:
    """``||(I - M_A) v||^2``."""
    r = residual(A, v)
    return float(r @ r)


def ols_fit(A, v) -> tuple[np.ndarray, float]:
    """Least-squares coefficients of ``v`` on ``A`` and the residual sum of squares."""
    A = as_matrix(A)
    v = as_vector(v, A.shape[0])
    Q, R, piv = _pivoted_qr(A)
    qtv = Q.T @ v
    coef = np.empty(A.shape[1])
    coef[piv] = scipy.linalg.solve_triangular(R, qtv, check_finite=False)
    r = v - Q @ qtv
    return coef, float(r @ r)


def _check_df(d1: int, d2: int) -> None:
    if d1 < 1 or d2 < 1:
        raise DomainError(f"degrees of freedom must be >= 1, got ({d1}, {d2})")


def f_cdf(d1: int, d2: int, x: float) -> float:
    """CDF of the F(d1, d2) distribution via the regularized incomplete beta."""
    _check_df(d1, d2)
    if x <= 0.0:
        return 0.0
    if np.isinf(x):
        return 1.0
    t = d1 * x / (d1 * x + d2)
    return float(special.betainc(d1 / 2.0, d2 / 2.0, t))


def f_pdf(d1: int, d2: int, x: float) -> float:
    _check_df(d1, d2)
    if x <= 0.0:
        return 0.0
    a, b = d1 / 2.0, d2 / 2.0
    log_pdf = (
        a * np.log(d1 / d2)
        + (a - 1.0) * np.log(x)
        - (a + b) * np.log1p(d1 * x / d2)
        - special.betaln(a, b)
    )
    return float(np.exp(log_pdf))


def f_quantile(d1: int, d2: int, q: float) -> float:
    """Quantile function of F(d1, d2).

    Root-finds ``I_t(d1/2, d2/2) = q`` on the bracket ``t in (0, 1)`` and maps
    back with ``x = d2 t / (d1 (1 - t))``.
    """
    _check_df(d1, d2)
    if not 0.0 < q < 1.0:
        raise DomainError(f"quantile level must lie in (0, 1), got {q}")
    a, b = d1 / 2.0, d2 / 2.0
    t = optimize.brentq(
        lambda s: special.betainc(a, b, s) - q, 0.0, 1.0, xtol=1e-300, rtol=4 * np.finfo(float).eps, maxiter=500
    )
    if t >= 1.0:
        return float("inf")
    return float(d2 * t / (d1 * (1.0 - t)))


@dataclass(frozen=True)
class RngStream:
    """A reproducible random stream addressed by ``(seed, stream ids...)``.

    Distinct id tuples give statistically independent streams (SeedSequence
    spawn keys over a counter-based Philox generator).
    """

    seed: int
    stream: tuple[int, ...] = ()

    def child(self, *ids: int) -> RngStream:
        return RngStream(self.seed, self.stream + tuple(int(i) for i in ids))

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(int(self.seed) & 0xFFFFFFFFFFFFFFFF, spawn_key=self.stream)
        return np.random.Generator(np.random.Philox(ss))


def gaussian_vector(rng: RngStream, n: int) -> np.ndarray:
    """``n`` i.i.d. standard normal draws, fully determined by ``rng``."""
    if n < 1:
        raise DomainError("n must be >= 1")
    return rng.generator().standard_normal(n)
