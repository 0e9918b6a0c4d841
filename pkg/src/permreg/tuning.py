"""Penalty selection for the score-weighted LAP and computable theory bounds.

``select_lambdas`` is the plug-in window rule: estimate the largest diagonal
residual, the projection-mismatch term and the objective gap, then spend a
0.9 fraction of the remaining budget equally on the two penalties.  The
mismatch term scales with ``||Y||^2``, so for desk-scale ``n`` the budget is
usually clipped to zero; ``fallback=True`` then switches to penalties scaled
by the residual variance of the repro fit (see :func:`select_lambdas`).
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .assignment import fitted_values, repro_design, repro_objective, score_weighted_lap
from .errors import DomainError, PreconditionViolated
from .numerics import RngStream, as_matrix, as_vector, residual_norm_sq
from .permutations import PermutationClass, SparsePermutation, count_class, derangements, enumerate_class

SAFETY = 0.9
DEFAULT_XI = 0.05
DEFAULT_SWAPS = 50
# fallback penalties are this multiple of the repro residual variance: a
# transposition then pays only when |r_i - r_j| exceeds about 2.8 noise sds
DEFAULT_FALLBACK_SCALE = 2.0


@dataclass(frozen=True)
class TuningReport:
    b_diag_hat: float
    eta_op_hat: float
    delta_f_hat: float
    budget_b: float
    lam1: float
    lam2: float
    xi: float
    swaps_tried: int
    k: int
    window_ok: bool
    rule: str  # "window" or "fallback"
    noise_var_hat: float

    def to_json(self) -> dict:
        out = asdict(self)
        for key, val in out.items():
            if isinstance(val, float) and not math.isfinite(val):
                out[key] = str(val)
        return out

    @classmethod
    def from_json(cls, obj: dict) -> TuningReport:
        obj = dict(obj)
        for key in ("b_diag_hat", "eta_op_hat", "delta_f_hat", "budget_b", "lam1", "lam2", "xi", "noise_var_hat"):
            obj[key] = float(obj[key])
        return cls(**obj)


def _k_term(k: int, xi: float) -> float:
    lk = math.log((4 * k + 2) / xi)
    return math.sqrt(k + 2 * math.sqrt(k * lk) + 2 * lk)


def eta_op(b_y: float, n: int, p: int, k: int, xi: float) -> float:
    """Projection-mismatch constant; ``inf`` when its denominator is not positive."""
    s = _k_term(k, xi)
    inner = (n - p) - 2 * math.sqrt((n - p) * math.log(2 / xi))
    if inner <= 0:
        return math.inf
    den = math.sqrt(inner) - 2 * s
    if den <= 0:
        return math.inf
    return 8 * b_y * s / den


def _batched_rss(designs: np.ndarray, Y: np.ndarray) -> np.ndarray:
    """``||(I - M_A) Y||^2`` for a stack of full-rank designs ``A``."""
    Q, _ = np.linalg.qr(designs)
    r = Y - np.einsum("bij,bj->bi", Q, np.einsum("bij,i->bj", Q, Y))
    return np.einsum("bi,bi->b", r, r)


def select_lambdas(
    Y,
    X,
    ustar,
    k: int,
    xi: float = DEFAULT_XI,
    rng: RngStream | None = None,
    n_swaps: int = DEFAULT_SWAPS,
    Z=None,
    n_perm: int | None = None,
    fallback: bool = False,
    fallback_scale: float = DEFAULT_FALLBACK_SCALE,
) -> TuningReport:
    """Data-driven ``(lam1, lam2)`` for one repro draw.

    Every occurrence of the unknown ``B_Y`` inside the mismatch constant is
    replaced by ``||Y||^2``.  The gap estimate is the smallest positive
    change of the repro objective over ``n_swaps`` random two-row swaps of
    the unpenalised assignment; with no positive change the gap is 0.

    With ``fallback=True`` and an empty budget, ``lam1 = c * s2`` and
    ``lam2 = c * s2 / B_diag`` where ``c = fallback_scale`` and
    ``s2 = ||Y - m||^2 / (n - q - 1)`` is the residual variance of the repro
    fit (``q`` non-repro design columns).
    ``rule`` records which branch produced the penalties.

    ``n_perm`` restricts swaps to the leading rows (augmented ridge designs).
    """
    if not 0 < xi < 1:
        raise DomainError("xi must lie in (0, 1)")
    if k < 1:
        raise DomainError("select_lambdas needs k >= 1")
    if n_swaps < 1:
        raise DomainError("n_swaps must be >= 1")
    Y = as_vector(Y)
    X = as_matrix(X)
    n = X.shape[0] if n_perm is None else n_perm
    q = X.shape[1] + (0 if Z is None else as_matrix(Z).shape[1])
    rng = rng or RngStream(0)

    m = fitted_values(Y, X, ustar, Z)
    r = (Y - m)[:n]
    b_diag = float(np.max(r**2))
    eta = eta_op(float(Y @ Y), n, q, k, xi)

    N = X.shape[0]
    base = score_weighted_lap(Y[:n], m[:n], 0.0, 0.0, k).permutation
    base_full = SparsePermutation(N, base.moved)
    f_base = repro_objective(Y, X, ustar, base_full, Z)
    g = rng.generator()
    swaps = np.array([g.choice(n, size=2, replace=False) for _ in range(n_swaps)])
    # (a b) o base permutes the rows of the base design: swap rows a and b of Pi_base X
    base_X = base_full.apply(X)
    idx = np.tile(np.arange(N), (n_swaps, 1))
    rows = np.arange(n_swaps)
    idx[rows, swaps[:, 0]], idx[rows, swaps[:, 1]] = swaps[:, 1], swaps[:, 0]
    tail = repro_design(X, ustar, SparsePermutation.identity(N), Z)[:, X.shape[1] :]  # [Z | u*], never permuted
    designs = np.concatenate([base_X[idx], np.broadcast_to(tail, (n_swaps, *tail.shape))], axis=2)
    diffs = _batched_rss(designs, Y) - f_base
    positive = diffs[diffs > 0]
    delta_f = float(positive.min()) if positive.size else 0.0

    budget = SAFETY * max(delta_f / (2 * k) - eta, 0.0)
    lam1 = budget / 2
    lam2 = budget / (2 * max(b_diag, 1e-12))
    window_ok = lam1 + lam2 * b_diag + eta < delta_f / (2 * k)
    noise_var = float(r @ r) / max(n - q - 1, 1)
    rule = "window"
    if fallback and budget == 0.0:
        rule = "fallback"
        lam1 = fallback_scale * noise_var
        lam2 = fallback_scale * noise_var / max(b_diag, 1e-12)
    return TuningReport(
        b_diag_hat=b_diag,
        eta_op_hat=eta,
        delta_f_hat=delta_f,
        budget_b=budget,
        lam1=lam1,
        lam2=lam2,
        xi=xi,
        swaps_tried=n_swaps,
        k=k,
        window_ok=bool(window_ok),
        rule=rule,
        noise_var_hat=noise_var,
    )


# ---------------------------------------------------------------------------
# theory constants (need the true parameters)


def c_min_bruteforce(X, beta0, pi0: SparsePermutation, k: int) -> float:
    """Separation constant: min over ``Pi != Pi0`` in ``P_{n,k}`` of
    ``||(I - M_{Pi X}) Pi0 X beta0||^2 / (n max(d(Pi0) - d(Pi), 1))``."""
    X = as_matrix(X)
    n = X.shape[0]
    signal = pi0.apply(X @ as_vector(beta0, X.shape[1]))
    best = math.inf
    for pi in enumerate_class(PermutationClass(n, k), limit=10**6):
        if pi == pi0:
            continue
        val = residual_norm_sq(pi.apply(X), signal) / (n * max(pi0.distance - pi.distance, 1))
        best = min(best, val)
    return best


def _psi(x: float) -> float:
    return x - 1 - math.log(x)


def delta_gamma_bound(n: int, p: int, k: int, sigma0: float, c_min: float, gamma: float) -> float:
    """Candidate-set miss bound ``Delta(gamma)`` (before the alignment term)."""
    if not 0 < gamma <= 0.25:
        raise DomainError("gamma must lie in (0, 1/4]")
    if c_min <= 0 or sigma0 <= 0:
        raise DomainError("c_min and sigma0 must be positive")
    if n <= p + 1:
        raise DomainError("need n > p + 1")
    le = math.log(math.e / gamma)
    x1 = max(1.0, c_min * le / (2 * sigma0**2 * gamma))
    x2 = max(1.0, c_min * le**2 / (16 * sigma0**2))
    inner = math.exp(-n / 2 * _psi(x1)) + math.exp(-n / 2 * _psi(x2))
    total = 0.0
    for m in range(n - k, n + 1):
        weight = math.comb(n, m) * derangements(n - m)
        if weight and inner > 0:
            total += math.exp(math.log(weight) + math.log(inner))
    size = count_class(PermutationClass(n, k))
    log_last = (n - p - 2) * math.log(math.pi / 2) + math.log(size) + (n - p - 1) / 2 * math.log(gamma * le)
    return total + math.exp(log_last)


def gamma_l(n: int, L: int) -> float:
    if L < 2 or n < 2:
        raise DomainError("need L >= 2 and n >= 2")
    return min(0.25, ((n - 1) * math.log(math.e * L) / L) ** (1.0 / (n - 1)))


def alignment_miss(n: int, gamma: float, L: int) -> float:
    """``(1 - gamma^{n-1}/(n-1))^L``."""
    return math.exp(L * math.log1p(-(gamma ** (n - 1)) / (n - 1)))


def delta_l_bound(n: int, p: int, k: int, sigma0: float, c_min: float, L: int) -> float:
    g = gamma_l(n, L)
    return delta_gamma_bound(n, p, k, sigma0, c_min, g) + alignment_miss(n, g, L)


@dataclass(frozen=True)
class TheoryConstants:
    c_min: float
    b_y: float
    b_diag: float
    eta_op: float
    delta_under: float
    xi: float

    def to_json(self) -> dict:
        return {key: (val if math.isfinite(val) else str(val)) for key, val in asdict(self).items()}


def theory_constants(X, beta0, pi0: SparsePermutation, sigma0: float, k: int, xi: float = DEFAULT_XI, c_min=None):
    """Oracle constants of the LAP/least-squares equivalence window."""
    X = as_matrix(X)
    n, p = X.shape
    if c_min is None:
        c_min = c_min_bruteforce(X, beta0, pi0, k)
    signal = pi0.apply(X @ as_vector(beta0, p))
    s_norm = float(np.linalg.norm(signal))
    l2 = math.log(2 / xi)
    b_y = s_norm**2 + 2 * sigma0 * s_norm * math.sqrt(2 * l2) + sigma0**2 * (n + 2 * math.sqrt(n * l2) + 2 * l2)
    w = math.sqrt(residual_norm_sq(X, signal))
    l16 = math.log(16 * n / xi)
    b_diag = w**2 + sigma0**2 + 2 * sigma0 * w * math.sqrt(2 * l16) + 2 * sigma0**2 * (math.sqrt(l16) + l16)
    eta = eta_op(b_y, n, p, k, xi)
    m_k = count_class(PermutationClass(n, k))
    theta1 = (xi / (6 * m_k)) ** (1.0 / (n - p - 1))
    gamma1 = math.cos(theta1)
    bar_bu = 1 + 2 * math.sqrt(math.log(6 / xi) / n) + 2 * math.log(6 / xi) / n
    delta_under = (1 - gamma1**2) * c_min - 2 * sigma0 * math.sqrt(c_min * bar_bu) - sigma0**2 * bar_bu
    return TheoryConstants(c_min, b_y, b_diag, eta, delta_under, xi)


# ---------------------------------------------------------------------------


def counterexample(n: int, p: int, k: int):
    """Full-rank ``X`` with ``Pi1 X beta1 == X beta0`` for a transposition ``Pi1``.

    Valid when ``p < n``, ``n - 2k <= p - 1`` and ``k >= 2``; returns
    ``(X, beta0, beta1, pi1)`` with rows 0 and 1 swapped by ``pi1``.
    """
    if not (p < n and n - 2 * k <= p - 1 and k >= 2 and p >= 1):
        raise PreconditionViolated(f"counterexample needs p < n, n - 2k <= p - 1, k >= 2 (got n={n}, p={p}, k={k})")
    a, b = 0, 1
    pi1 = SparsePermutation.transposition(n, a, b)
    X = np.zeros((n, p))
    if p == 1:
        X[a, 0], X[b, 0] = 1.0, -1.0
        return X, np.array([1.0]), np.array([-1.0]), pi1

    v, w = np.eye(p)[0], np.eye(p)[1]
    X[a], X[b] = w + v, w - v
    t = max(n - 2 * k, 0)
    rest = list(range(2, n))
    tied, free = rest[:t], rest[t:]
    for j, i in enumerate(tied):
        X[i] = np.eye(p)[j + 1]
    # remaining basis vectors e_{t+1}, ..., e_{p-1}, then fillers inside v-perp
    missing = list(range(t + 1, p))
    for idx, i in enumerate(free):
        X[i] = np.eye(p)[missing[idx]] if idx < len(missing) else w
    beta0 = -0.5 * v + 0.5 * w
    beta1 = beta0 + v
    return X, beta0, beta1, pi1
