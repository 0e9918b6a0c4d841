"""Conditional Monte Carlo sparsity test and union confidence regions.

Sparsity test of ``H0: Pi0 in P_{n,k0}``: the statistic is the Hamming
distance of the least-squares fit over a fixed candidate set.  For each
null-compatible candidate ``Pi`` the test conditions on the sufficient pair
``s1 = M_{Pi X} Y``, ``s2 = ||(I - M_{Pi X}) Y||`` and simulates

    Y*_m = s1 + s2 (I - M_{Pi X}) u*_m / ||(I - M_{Pi X}) u*_m||,

whose statistic values calibrate a conservative empirical quantile.  The
composite critical value is the maximum over the localised null set.

Confidence regions are unions of F-ellipsoids, one per candidate.  ``alpha``
is the *coverage* level here (e.g. 0.95), the threshold being
``F^{-1}_{p, n-p}(alpha)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .candidates import CandidateSet, localized_null
from .errors import DimMismatch, DomainError, EmptyRegion, EmptySet, LengthMismatch
from .numerics import (
    RngStream,
    as_matrix,
    as_vector,
    f_quantile,
    gaussian_vector,
    ols_fit,
    orthonormal_basis,
    residual,
)
from .permutations import SparsePermutation

MEMBERSHIP_TOL = 1e-12
MIN_VOLUME_SAMPLES = 1000


@dataclass(frozen=True)
class SparsityTestConfig:
    k0: int = 0
    alpha: float = 0.05
    M: int = 200
    seed: int = 0

    def __post_init__(self) -> None:
        if not 0 < self.alpha < 1:
            raise DomainError("alpha must lie in (0, 1)")
        if self.k0 < 0:
            raise DomainError("k0 must be >= 0")
        # the order statistic index ceil((1 - alpha)(M + 1)) must not exceed M
        if self.M < 1 or _order_index(self.alpha, self.M) > self.M:
            raise DomainError(f"M = {self.M} is too small for alpha = {self.alpha}: need alpha (M + 1) >= 1")

    def to_json(self) -> dict:
        return {"k0": self.k0, "alpha": self.alpha, "M": self.M, "seed": self.seed}


def _order_index(alpha: float, M: int) -> int:
    """1-based index ``ceil((1 - alpha)(M + 1))`` (guarded against round-off)."""
    return math.ceil((1 - alpha) * (M + 1) - 1e-9)


# ---------------------------------------------------------------------------
# least-squares fit over a candidate set


class _FitScanner:
    """Residual sums of squares of many responses against every candidate design.

    Only candidates inside ``P_{n,k}`` take part: draws whose assignment
    moved more than ``k`` rows stay in the candidate set as diagnostics but
    are not least-squares candidates.

    Candidates are scanned in (distance, moved-pairs) order and a later one
    wins only if it improves the best RSS by more than a relative ``1e-12``,
    so near-ties go to the sparser permutation.
    """

    def __init__(self, X: np.ndarray, cs: CandidateSet):
        if not len(cs):
            raise EmptySet("empty candidate set")
        # if every draw was flagged, the flagged permutations are all there is
        members = [pi for pi in cs.uniques if pi.distance <= cs.k] or list(cs.uniques)
        self.perms = sorted(members, key=lambda pi: (pi.distance, pi.moved))
        self.bases = [orthonormal_basis(pi.apply(X)) for pi in self.perms]

    def rss(self, Ys: np.ndarray) -> np.ndarray:
        """``(|cs|, m)`` array of RSS values for the columns of ``Ys``."""
        out = np.empty((len(self.bases), Ys.shape[1]))
        for j, Q in enumerate(self.bases):
            R = Ys - Q @ (Q.T @ Ys)
            out[j] = np.einsum("ij,ij->j", R, R)
        return out

    def best(self, Ys: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Index into ``self.perms`` of the best fit and its RSS, per column."""
        rss = self.rss(Ys)
        tol = 1e-12 * np.einsum("ij,ij->j", Ys, Ys)
        idx = np.zeros(Ys.shape[1], dtype=np.int64)
        best = rss[0].copy()
        for j in range(1, rss.shape[0]):
            better = rss[j] < best - tol
            idx[better] = j
            best[better] = rss[j][better]
        return idx, best

    def distances(self, Ys: np.ndarray) -> np.ndarray:
        d = np.array([pi.distance for pi in self.perms])
        return d[self.best(Ys)[0]]


def best_fit_in_set(Y, X, cs: CandidateSet) -> tuple[SparsePermutation, float]:
    """Least-squares permutation over the candidate set and its RSS."""
    X = as_matrix(X)
    Y = as_vector(Y, X.shape[0])
    scan = _FitScanner(X, cs)
    idx, rss = scan.best(Y[:, None])
    return scan.perms[int(idx[0])], float(rss[0])


def test_statistic(Y, X, cs: CandidateSet) -> int:
    """``D(Y)``: Hamming distance of the best-fitting candidate."""
    return best_fit_in_set(Y, X, cs)[0].distance


def sufficient_stats(Y, X, p: SparsePermutation) -> tuple[np.ndarray, float]:
    """``(M_{Pi X} Y, ||(I - M_{Pi X}) Y||)``."""
    X = as_matrix(X)
    Y = as_vector(Y, X.shape[0])
    r = residual(p.apply(X), Y)
    return Y - r, float(np.linalg.norm(r))


def mc_stream(seed: int, null_index: int, m: int) -> RngStream:
    return RngStream(seed, (1, null_index, m))


def synthetic_responses(Y, X, null_pi: SparsePermutation, M: int, seed: int, null_index: int = 0) -> np.ndarray:
    """``n x M`` matrix of conditional draws ``Y*_m`` given the sufficient statistics of ``null_pi``."""
    X = as_matrix(X)
    n = X.shape[0]
    Y = as_vector(Y, n)
    Q = orthonormal_basis(null_pi.apply(X))
    s1, s2 = sufficient_stats(Y, X, null_pi)
    U = np.column_stack([gaussian_vector(mc_stream(seed, null_index, m), n) for m in range(1, M + 1)])
    R = U - Q @ (Q.T @ U)
    return s1[:, None] + s2 * R / np.linalg.norm(R, axis=0)


def _null_distances(Y, X, null_pi, scan: _FitScanner, cfg: SparsityTestConfig, null_index: int) -> np.ndarray:
    return scan.distances(synthetic_responses(Y, X, null_pi, cfg.M, cfg.seed, null_index))


def conditional_mc_quantile(
    Y, X, null_pi: SparsePermutation, cs: CandidateSet, cfg: SparsityTestConfig, null_index: int = 0
) -> int:
    """Conservative ``ceil((1 - alpha)(M + 1))``-th order statistic of the calibration draws."""
    X = as_matrix(X)
    scan = _FitScanner(X, cs)
    d = np.sort(_null_distances(Y, X, null_pi, scan, cfg, null_index))
    return int(d[_order_index(cfg.alpha, cfg.M) - 1])


@dataclass(frozen=True)
class SparsityTestReport:
    d_obs: int
    c_hat: int
    quantiles: tuple[int, ...]
    null_set: tuple[SparsePermutation, ...]
    p_value: float
    reject: bool
    null_set_size: int
    degenerate_null: bool
    config: SparsityTestConfig

    def to_json(self) -> dict:
        return {
            "kind": "sparsity_test",
            "config": self.config.to_json(),
            "d_obs": self.d_obs,
            "c_hat": self.c_hat,
            "quantiles": list(self.quantiles),
            "null_set": [pi.to_json() for pi in self.null_set],
            "p_value": self.p_value,
            "reject": self.reject,
            "null_set_size": self.null_set_size,
            "degenerate_null": self.degenerate_null,
        }

    @classmethod
    def from_json(cls, obj: dict) -> SparsityTestReport:
        return cls(
            int(obj["d_obs"]),
            int(obj["c_hat"]),
            tuple(int(q) for q in obj["quantiles"]),
            tuple(SparsePermutation.from_json(p) for p in obj["null_set"]),
            float(obj["p_value"]),
            bool(obj["reject"]),
            int(obj["null_set_size"]),
            bool(obj["degenerate_null"]),
            SparsityTestConfig(**obj["config"]),
        )


def sparsity_test(Y, X, cs: CandidateSet, cfg: SparsityTestConfig) -> SparsityTestReport:
    """Conditional Monte Carlo test of ``H0: Pi0 in P_{n,k0}`` localised on ``cs``.

    The p-value inverts the rejection rule over the level: with ``N_j`` the
    number of calibration draws for null candidate ``j`` strictly below
    ``d_obs``, the test rejects at level ``a`` iff
    ``ceil((1 - a)(M + 1)) <= min_j N_j``, so the smallest rejecting level on
    the ``1/(M+1)`` grid is ``1 - min_j N_j / (M + 1)``.
    """
    X = as_matrix(X)
    Y = as_vector(Y, X.shape[0])
    scan = _FitScanner(X, cs)
    idx, _ = scan.best(Y[:, None])
    d_obs = scan.perms[int(idx[0])].distance
    null = localized_null(cs, cfg.k0)
    if not null:
        return SparsityTestReport(d_obs, -1, (), (), 0.0, True, 0, True, cfg)

    kth = _order_index(cfg.alpha, cfg.M)
    quantiles, below = [], []
    for j, pi in enumerate(null):
        d = np.sort(_null_distances(Y, X, pi, scan, cfg, j))
        quantiles.append(int(d[kth - 1]))
        below.append(int(np.count_nonzero(d < d_obs)))
    c_hat = max(quantiles)
    p_value = 1.0 - min(below) / (cfg.M + 1)
    return SparsityTestReport(d_obs, c_hat, tuple(quantiles), tuple(null), p_value, d_obs > c_hat, len(null), False, cfg)


# ---------------------------------------------------------------------------
# confidence regions


@dataclass(frozen=True)
class Ellipsoid:
    """``{b : (b - center)^T shape (b - center) <= radius_sq}``."""

    center: np.ndarray
    shape: np.ndarray
    radius_sq: float

    def __post_init__(self) -> None:
        c = as_vector(self.center)
        S = as_matrix(self.shape)
        if S.shape != (c.shape[0], c.shape[0]):
            raise DimMismatch("shape must be p x p")
        if not np.allclose(S, S.T, rtol=0, atol=1e-10 * max(1.0, float(np.abs(S).max()))):
            raise DomainError("shape must be symmetric")
        if self.radius_sq < 0:
            raise DomainError("radius_sq must be >= 0")
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "shape", S)

    @property
    def dim(self) -> int:
        return self.center.shape[0]

    def quad(self, beta) -> np.ndarray:
        """Quadratic form for a vector (scalar) or a batch of rows."""
        D = np.atleast_2d(beta) - self.center
        val = np.einsum("ij,jk,ik->i", D, self.shape, D)
        return val if np.ndim(beta) == 2 else float(val[0])

    def half_widths(self) -> np.ndarray:
        return np.sqrt(self.radius_sq * np.diag(np.linalg.inv(self.shape)))

    def volume(self) -> float:
        p = self.dim
        unit = math.pi ** (p / 2) / math.gamma(p / 2 + 1)
        return unit * self.radius_sq ** (p / 2) / math.sqrt(np.linalg.det(self.shape))

    def to_json(self) -> dict:
        return {"center": self.center.tolist(), "shape": self.shape.tolist(), "radius_sq": self.radius_sq}

    @classmethod
    def from_json(cls, obj: dict) -> Ellipsoid:
        return cls(np.array(obj["center"], dtype=float), np.array(obj["shape"], dtype=float), float(obj["radius_sq"]))


@dataclass(frozen=True)
class ConfidenceRegion:
    pieces: tuple[tuple[SparsePermutation, Ellipsoid], ...]
    alpha: float
    kind: str = "coef"

    @property
    def dim(self) -> int:
        return self.pieces[0][1].dim

    def contains(self, beta) -> bool:
        return coef_region_membership(self, beta)

    def to_json(self) -> dict:
        return {
            "kind": f"confidence_region/{self.kind}",
            "alpha": self.alpha,
            "pieces": [{"permutation": pi.to_json(), **ell.to_json()} for pi, ell in self.pieces],
        }

    @classmethod
    def from_json(cls, obj: dict) -> ConfidenceRegion:
        pieces = tuple((SparsePermutation.from_json(p["permutation"]), Ellipsoid.from_json(p)) for p in obj["pieces"])
        return cls(pieces, float(obj["alpha"]), obj["kind"].split("/", 1)[1])

    def __eq__(self, other) -> bool:
        if not isinstance(other, ConfidenceRegion):
            return NotImplemented
        return self.to_json() == other.to_json()


def f_statistic(Y, X, p: SparsePermutation, beta) -> float:
    """``T(Y, (Pi, beta)) = [||M_{Pi X}(Y - Pi X beta)||^2 / p] / [||(I - M_{Pi X}) Y||^2 / (n - p)]``."""
    X = as_matrix(X)
    n, q = X.shape
    Y = as_vector(Y, n)
    PX = p.apply(X)
    r = residual(PX, Y)
    e = Y - PX @ as_vector(beta, q)
    num = float(np.sum((e - residual(PX, e)) ** 2)) / q
    return num / (float(r @ r) / (n - q))


def _piece(center, shape, rss: float, d1: int, d2: int, alpha: float) -> Ellipsoid:
    radius_sq = d1 / d2 * rss * f_quantile(d1, d2, alpha)
    shape = (shape + shape.T) / 2
    return Ellipsoid(center, shape, max(radius_sq, 0.0))


def _check_alpha(alpha: float) -> None:
    if not 0 < alpha < 1:
        raise DomainError("alpha must lie in (0, 1)")


def coef_region(Y, X, cs: CandidateSet, alpha: float) -> ConfidenceRegion:
    """Union over candidates of ``{beta : T(Y, (Pi, beta)) <= F^{-1}_{p, n-p}(alpha)}``."""
    _check_alpha(alpha)
    X = as_matrix(X)
    n, p = X.shape
    Y = as_vector(Y, n)
    if n <= p:
        raise DomainError("need n > p")
    if not len(cs):
        raise EmptySet("empty candidate set")
    pieces = []
    for pi in cs.uniques:
        PX = pi.apply(X)
        coef, rss = ols_fit(PX, Y)
        pieces.append((pi, _piece(coef, PX.T @ PX, rss, p, n - p, alpha)))
    return ConfidenceRegion(tuple(pieces), alpha, "coef")


def partial_coef_region(Y, X, Z, cs: CandidateSet, alpha: float, mode: str = "beta1_only") -> ConfidenceRegion:
    """Regions for the permuted block ``beta1`` with unpermuted covariates ``Z``.

    ``joint`` covers ``(beta1, beta2)`` with design ``[Pi X | Z]``;
    ``beta1_only`` treats ``beta2`` as a nuisance (partialled-out F statistic).
    ``Z=None`` means no nuisance block.
    """
    _check_alpha(alpha)
    if mode not in ("joint", "beta1_only"):
        raise DomainError("mode must be 'joint' or 'beta1_only'")
    X = as_matrix(X)
    n, p1 = X.shape
    Y = as_vector(Y, n)
    if Z is not None:
        Z = as_matrix(Z)
        if Z.shape[0] != n:
            raise LengthMismatch("Z must have n rows")
    p2 = 0 if Z is None else Z.shape[1]
    if n <= p1 + p2:
        raise DomainError("need n > p1 + p2")
    if not len(cs):
        raise EmptySet("empty candidate set")
    pieces = []
    for pi in cs.uniques:
        PX = pi.apply(X)
        W = PX if Z is None else np.hstack([PX, Z])
        coef, rss = ols_fit(W, Y)
        if mode == "joint":
            ell = _piece(coef, W.T @ W, rss, p1 + p2, n - p1 - p2, alpha)
        else:
            Xt, Yt = PX, Y
            if Z is not None:
                Qz = orthonormal_basis(Z)
                Xt = PX - Qz @ (Qz.T @ PX)
                Yt = Y - Qz @ (Qz.T @ Y)
            center, _ = ols_fit(Xt, Yt)
            ell = _piece(center, Xt.T @ Xt, rss, p1, n - p1 - p2, alpha)
        pieces.append((pi, ell))
    return ConfidenceRegion(tuple(pieces), alpha, mode if Z is not None else "coef")


def coef_region_membership(region: ConfidenceRegion, beta) -> bool:
    beta = as_vector(beta)
    if beta.shape[0] != region.dim:
        raise DimMismatch(f"beta has length {beta.shape[0]}, region lives in R^{region.dim}")
    return any(ell.quad(beta) <= ell.radius_sq + MEMBERSHIP_TOL for _, ell in region.pieces)


def region_volume_mc(region: ConfidenceRegion, rng: RngStream, samples: int = 100_000) -> tuple[float, float]:
    """Hit-or-miss volume of the union over its bounding box; returns ``(volume, stderr)``."""
    if not region.pieces:
        raise EmptyRegion("region has no pieces")
    if samples < MIN_VOLUME_SAMPLES:
        raise DomainError(f"need at least {MIN_VOLUME_SAMPLES} samples")
    lo = np.min([e.center - e.half_widths() for _, e in region.pieces], axis=0)
    hi = np.max([e.center + e.half_widths() for _, e in region.pieces], axis=0)
    box = float(np.prod(hi - lo))
    if box == 0.0:
        return 0.0, 0.0
    g = rng.generator()
    hits, chunk = 0, 50_000
    for start in range(0, samples, chunk):
        m = min(chunk, samples - start)
        pts = lo + (hi - lo) * g.random((m, region.dim))
        inside = np.zeros(m, dtype=bool)
        for _, e in region.pieces:
            inside |= e.quad(pts) <= e.radius_sq + MEMBERSHIP_TOL
        hits += int(inside.sum())
    rate = hits / samples
    return rate * box, box * math.sqrt(rate * (1 - rate) / samples)
