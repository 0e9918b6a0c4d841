"""Repro-sample localisation of the unknown permutation.

Each draw ``l`` generates artificial noise ``u*_l`` from stream ``(seed, 0, l)``
and solves the repro least-squares problem over ``P_{n,k}`` (exactly by
enumeration, or through the score-weighted LAP).  The optimisers over all
draws form the candidate set.

Design variants change only the regression problem each draw sees:

* ``plain``   -- ``[Pi X | u*]``
* ``partial`` -- ``[Pi X | Z | u*]`` with ``Z`` never permuted
* ``ridge``   -- the ``(n+p)``-row augmentation ``[X; sqrt(lam) I]`` with
  ``u*`` padded by zeros; only the top ``n`` rows are permuted.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .assignment import bruteforce_argmin, fitted_values, repro_objective, score_weighted_lap
from .errors import ClassTooLarge, DomainError, EmptySet, IdentifiabilityViolated, LengthMismatch
from .numerics import RngStream, as_matrix, as_vector, gaussian_vector, ols_fit
from .permutations import PermutationClass, SparsePermutation, count_class
from .tuning import DEFAULT_FALLBACK_SCALE, DEFAULT_SWAPS, DEFAULT_XI, select_lambdas

BRUTE_FORCE_LIMIT = 10**6
SOLVERS = ("surrogate-lap", "brute-force")


@dataclass(frozen=True)
class DesignVariant:
    kind: str = "plain"
    Z: np.ndarray | None = None
    ridge_lambda: float | None = None

    def __post_init__(self) -> None:
        if self.kind not in ("plain", "partial", "ridge"):
            raise DomainError(f"unknown design variant {self.kind!r}")
        if self.kind == "partial":
            if self.Z is None:
                raise DomainError("partial design needs Z")
            object.__setattr__(self, "Z", as_matrix(self.Z))
        if self.kind == "ridge" and not (self.ridge_lambda is not None and self.ridge_lambda > 0):
            raise DomainError("ridge design needs lambda > 0")

    @classmethod
    def plain(cls) -> DesignVariant:
        return cls()

    @classmethod
    def partial(cls, Z) -> DesignVariant:
        return cls("partial", Z=Z)

    @classmethod
    def ridge(cls, lam: float) -> DesignVariant:
        return cls("ridge", ridge_lambda=float(lam))


@dataclass(frozen=True)
class ReproConfig:
    L: int
    k: int
    lam1: float | None = None  # None -> tuned per draw
    lam2: float | None = None
    solver: str = "surrogate-lap"
    seed: int = 0
    xi: float = DEFAULT_XI
    n_swaps: int = DEFAULT_SWAPS
    fallback_scale: float = DEFAULT_FALLBACK_SCALE

    def __post_init__(self) -> None:
        if self.L < 1:
            raise DomainError("L must be >= 1")
        if self.k < 0:
            raise DomainError("k must be >= 0")
        if self.solver not in SOLVERS:
            raise DomainError(f"solver must be one of {SOLVERS}")
        if (self.lam1 is None) != (self.lam2 is None):
            raise DomainError("give both penalties or neither")

    @property
    def auto(self) -> bool:
        return self.lam1 is None


@dataclass(frozen=True)
class DrawRecord:
    index: int
    stream: tuple[int, ...]
    unique_index: int
    objective: float
    violation: bool
    lam1: float
    lam2: float
    rule: str

    def to_json(self) -> dict:
        return {
            "index": self.index,
            "stream": list(self.stream),
            "unique_index": self.unique_index,
            "objective": self.objective,
            "violation": self.violation,
            "lam1": self.lam1,
            "lam2": self.lam2,
            "rule": self.rule,
        }

    @classmethod
    def from_json(cls, obj: dict) -> DrawRecord:
        return cls(
            int(obj["index"]),
            tuple(obj["stream"]),
            int(obj["unique_index"]),
            float(obj["objective"]),
            bool(obj["violation"]),
            float(obj["lam1"]),
            float(obj["lam2"]),
            str(obj["rule"]),
        )


@dataclass
class CandidateSet:
    """Distinct permutations found by the repro draws, in order of first appearance."""

    n: int
    k: int
    uniques: list[SparsePermutation] = field(default_factory=list)
    multiplicity: list[int] = field(default_factory=list)
    draws: list[DrawRecord] = field(default_factory=list)

    @classmethod
    def from_permutations(cls, perms, k: int | None = None) -> CandidateSet:
        """Candidate set built directly from permutations (no draw records)."""
        cs = None
        for pi in perms:
            if cs is None:
                cs = cls(pi.n, k if k is not None else 0)
            cs._add(pi)
        if cs is None:
            raise EmptySet("no permutations given")
        if k is None:
            cs.k = max(p.distance for p in cs.uniques)
        return cs

    def _add(self, pi: SparsePermutation) -> int:
        try:
            j = self.uniques.index(pi)
        except ValueError:
            self.uniques.append(pi)
            self.multiplicity.append(0)
            j = len(self.uniques) - 1
        self.multiplicity[j] += 1
        return j

    def __len__(self) -> int:
        return len(self.uniques)

    def __iter__(self):
        return iter(self.uniques)

    def __contains__(self, pi: SparsePermutation) -> bool:
        return pi in self.uniques

    @property
    def L(self) -> int:
        return sum(self.multiplicity)

    def min_objective(self, j: int) -> float | None:
        vals = [d.objective for d in self.draws if d.unique_index == j]
        return min(vals) if vals else None

    def to_json(self) -> dict:
        return {
            "n": self.n,
            "k": self.k,
            "L": self.L,
            "size": len(self.uniques),
            "uniques": [
                {"permutation": pi.to_json(), "multiplicity": mult, "min_objective": self.min_objective(j)}
                for j, (pi, mult) in enumerate(zip(self.uniques, self.multiplicity))
            ],
            "draws": [d.to_json() for d in self.draws],
        }

    @classmethod
    def from_json(cls, obj: dict) -> CandidateSet:
        return cls(
            int(obj["n"]),
            int(obj["k"]),
            [SparsePermutation.from_json(u["permutation"]) for u in obj["uniques"]],
            [int(u["multiplicity"]) for u in obj["uniques"]],
            [DrawRecord.from_json(d) for d in obj.get("draws", [])],
        )

    def __eq__(self, other) -> bool:
        if not isinstance(other, CandidateSet):
            return NotImplemented
        return (self.n, self.k, self.uniques, self.multiplicity, self.draws) == (
            other.n,
            other.k,
            other.uniques,
            other.multiplicity,
            other.draws,
        )


# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class _Problem:
    Y: np.ndarray
    X: np.ndarray
    Z: np.ndarray | None
    n: int  # permutable rows

    @property
    def N(self) -> int:
        return self.Y.shape[0]

    def pad(self, u: np.ndarray) -> np.ndarray:
        if self.N == self.n:
            return u
        return np.concatenate([u, np.zeros(self.N - self.n)])

    def embed(self, pi: SparsePermutation) -> SparsePermutation:
        return pi if self.N == self.n else SparsePermutation(self.N, pi.moved)

    def objective(self, pi: SparsePermutation, u: np.ndarray) -> float:
        return repro_objective(self.Y, self.X, u, self.embed(pi), self.Z)


def _problem(Y, X, variant: DesignVariant) -> _Problem:
    X = as_matrix(X)
    n, p = X.shape
    Y = as_vector(Y, n)
    if variant.kind == "plain":
        prob = _Problem(Y, X, None, n)
    elif variant.kind == "partial":
        if variant.Z.shape[0] != n:
            raise LengthMismatch("Z must have n rows")
        prob = _Problem(Y, X, variant.Z, n)
    else:
        Xa = np.vstack([X, math.sqrt(variant.ridge_lambda) * np.eye(p)])
        prob = _Problem(np.concatenate([Y, np.zeros(p)]), Xa, None, n)
    q = p + (0 if prob.Z is None else prob.Z.shape[1])
    if variant.kind != "ridge" and n <= q + 1:
        raise DomainError(f"need n > {q + 1} rows, got {n}")
    return prob


def draw_stream(seed: int, index: int) -> RngStream:
    return RngStream(seed, (0, index))


def generate_candidates(Y, X, variant: DesignVariant | None, cfg: ReproConfig) -> CandidateSet:
    """Candidate set from ``cfg.L`` repro draws (deterministic given ``cfg.seed``)."""
    variant = variant or DesignVariant.plain()
    prob = _problem(Y, X, variant)
    n, k = prob.n, cfg.k
    if cfg.solver == "brute-force" and count_class(PermutationClass(n, k)) > BRUTE_FORCE_LIMIT:
        raise ClassTooLarge(f"brute force over P_(n={n},k={k}) exceeds {BRUTE_FORCE_LIMIT}")

    cs = CandidateSet(n, k)
    identity = SparsePermutation.identity(n)
    for ell in range(cfg.L):
        stream = draw_stream(cfg.seed, ell)
        u = prob.pad(gaussian_vector(stream, n))
        lam1, lam2, rule = (cfg.lam1, cfg.lam2, "fixed") if not cfg.auto else (0.0, 0.0, "none")
        violation = False
        if k == 0:
            pi = identity
        elif cfg.solver == "brute-force":
            pi, _ = bruteforce_argmin(lambda q: prob.objective(q, u), n, k)
        else:
            if cfg.auto:
                rep = select_lambdas(
                    prob.Y,
                    prob.X,
                    u,
                    k,
                    xi=cfg.xi,
                    rng=stream.child(1),
                    n_swaps=cfg.n_swaps,
                    Z=prob.Z,
                    n_perm=n,
                    fallback=True,
                    fallback_scale=cfg.fallback_scale,
                )
                lam1, lam2, rule = rep.lam1, rep.lam2, rep.rule
            m = fitted_values(prob.Y, prob.X, u, prob.Z)
            sol = score_weighted_lap(prob.Y[:n], m[:n], lam1, lam2, k)
            pi, violation = sol.permutation, sol.violation
        j = cs._add(pi)
        cs.draws.append(
            DrawRecord(ell, stream.stream, j, prob.objective(pi, u), violation, float(lam1), float(lam2), rule)
        )
    return cs


@dataclass(frozen=True)
class OracleRecovery:
    permutation: SparsePermutation
    beta: np.ndarray
    sigma: float


def oracle_recover(Y, X, u_rel, k: int) -> OracleRecovery:
    """Brute-force recovery of ``(Pi0, beta0, sigma0)`` given the realised noise."""
    X = as_matrix(X)
    n, p = X.shape
    if n - 2 * k < p:
        raise IdentifiabilityViolated(f"n - 2k = {n - 2 * k} < p = {p}")
    u_rel = as_vector(u_rel, n)
    pi, _ = bruteforce_argmin(lambda q: repro_objective(Y, X, u_rel, q), n, k)
    coef, _ = ols_fit(np.column_stack([pi.apply(X), u_rel]), Y)
    return OracleRecovery(pi, coef[:p], float(coef[p]))


def matching_fraction(cs: CandidateSet, truth: SparsePermutation) -> float:
    """``1 - min_l d(Pi_l, truth) / n``."""
    if not len(cs):
        raise EmptySet("empty candidate set")
    inv = truth.inverse()
    best = min(pi.compose(inv).distance for pi in cs.uniques)
    return 1.0 - best / truth.n


def localized_null(cs: CandidateSet, k0: int) -> list[SparsePermutation]:
    if k0 < 0:
        raise DomainError("k0 must be >= 0")
    return [pi for pi in cs.uniques if pi.distance <= k0]
