"""Sparse permutations, the k-sparse class, counting and enumeration.

A permutation ``pi`` of ``{0, ..., n-1}`` acts on vectors by
``(apply(pi, v))[pi(j)] = v[j]``, i.e. it is the matrix with
``Pi[i, pi^{-1}(i)] = 1`` so that ``apply(pi, X)`` is ``Pi @ X``.
Only the moved points are stored.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from functools import cached_property, lru_cache
from typing import Iterator

import numpy as np

from .errors import ClassTooLarge, CountOverflow, DomainError, InvalidDistance, LengthMismatch
from .numerics import RngStream

ENUMERATION_LIMIT = 10**7
_INT128_MAX = 2**127 - 1


@dataclass(frozen=True)
class SparsePermutation:
    """Permutation of ``range(n)`` stored as its sorted ``(i, pi(i))`` pairs with ``pi(i) != i``."""

    n: int
    moved: tuple[tuple[int, int], ...] = ()

    def __post_init__(self) -> None:
        moved = tuple(sorted((int(i), int(j)) for i, j in self.moved))
        object.__setattr__(self, "moved", moved)
        src = [i for i, _ in moved]
        dst = sorted(j for _, j in moved)
        if len(set(src)) != len(src) or src != dst:
            raise DomainError("moved pairs do not form a bijection of the moved set")
        if any(i == j for i, j in moved):
            raise DomainError("a listed pair is a fixed point")
        if moved and (moved[0][0] < 0 or moved[-1][0] >= self.n):
            raise DomainError("index out of range")

    # construction ---------------------------------------------------------

    @classmethod
    def identity(cls, n: int) -> SparsePermutation:
        return cls(n, ())

    @classmethod
    def transposition(cls, n: int, a: int, b: int) -> SparsePermutation:
        return cls(n, ((a, b), (b, a)))

    @classmethod
    def from_images(cls, images) -> SparsePermutation:
        """Build from the dense image array ``images[i] = pi(i)``."""
        images = np.asarray(images, dtype=np.int64)
        n = images.shape[0]
        if not np.array_equal(np.sort(images), np.arange(n)):
            raise DomainError("images are not a permutation")
        idx = np.flatnonzero(images != np.arange(n))
        return cls(n, tuple((int(i), int(images[i])) for i in idx))

    # views ----------------------------------------------------------------

    @cached_property
    def images(self) -> np.ndarray:
        img = np.arange(self.n)
        for i, j in self.moved:
            img[i] = j
        img.setflags(write=False)
        return img

    @property
    def distance(self) -> int:
        """Hamming distance to the identity."""
        return len(self.moved)

    @property
    def is_identity(self) -> bool:
        return not self.moved

    def inverse(self) -> SparsePermutation:
        return SparsePermutation(self.n, tuple((j, i) for i, j in self.moved))

    def compose(self, other: SparsePermutation) -> SparsePermutation:
        """``self o other``: apply ``other`` first, then ``self``."""
        if other.n != self.n:
            raise LengthMismatch("permutations of different sizes")
        return SparsePermutation.from_images(self.images[other.images])

    def apply(self, v) -> np.ndarray:
        """Row action ``Pi @ v`` for a vector or a matrix (rows permuted)."""
        v = np.asarray(v)
        if v.shape[0] != self.n:
            raise LengthMismatch(f"expected {self.n} rows, got {v.shape[0]}")
        out = np.empty_like(v)
        out[self.images] = v
        return out

    def to_json(self) -> dict:
        return {"n": self.n, "moved": [[i, j] for i, j in self.moved]}

    @classmethod
    def from_json(cls, obj: dict) -> SparsePermutation:
        return cls(int(obj["n"]), tuple((int(i), int(j)) for i, j in obj["moved"]))

    def __repr__(self) -> str:
        return f"SparsePermutation(n={self.n}, moved={list(self.moved)})"


def hamming_distance(p: SparsePermutation) -> int:
    return p.distance


def apply(p: SparsePermutation, v) -> np.ndarray:
    return p.apply(v)


@dataclass(frozen=True)
class PermutationClass:
    """``P_{n,k}``: permutations of ``n`` points moving at most ``k`` of them."""

    n: int
    k: int

    def __post_init__(self) -> None:
        if self.n < 1 or not 0 <= self.k <= self.n:
            raise DomainError(f"invalid class (n={self.n}, k={self.k})")

    def __contains__(self, p: SparsePermutation) -> bool:
        return p.n == self.n and p.distance <= self.k


@lru_cache(maxsize=None)
def derangements(m: int) -> int:
    """Number of fixed-point-free permutations of ``m`` points."""
    if m < 0:
        raise DomainError("m must be >= 0")
    a, b = 1, 0  # D_0, D_1
    if m == 0:
        return a
    for j in range(2, m + 1):
        a, b = b, (j - 1) * (a + b)
    return b


def count_class(cls: PermutationClass) -> int:
    """``|P_{n,k}| = sum_{m=n-k}^{n} C(n, m) D_{n-m}`` exactly."""
    total = sum(math.comb(cls.n, m) * derangements(cls.n - m) for m in range(cls.n - cls.k, cls.n + 1))
    if total > _INT128_MAX:
        raise CountOverflow(f"|P_(n={cls.n},k={cls.k})| does not fit in 128 bits")
    return total


def _derangement_images(items: tuple[int, ...]) -> Iterator[tuple[int, ...]]:
    for perm in itertools.permutations(items):
        if all(a != b for a, b in zip(items, perm)):
            yield perm


def enumerate_class(cls: PermutationClass, limit: int = ENUMERATION_LIMIT) -> Iterator[SparsePermutation]:
    """Yield every member of ``P_{n,k}`` once.

    Order: identity, then by increasing distance, ties broken lexicographically
    on the moved-pair list.
    """
    try:
        size = count_class(cls)
    except CountOverflow:
        size = None
    if size is None or size > limit:
        raise ClassTooLarge(f"|P_(n={cls.n},k={cls.k})| exceeds the enumeration limit {limit}")
    yield SparsePermutation.identity(cls.n)
    for d in range(2, cls.k + 1):
        level = []
        for support in itertools.combinations(range(cls.n), d):
            for img in _derangement_images(support):
                level.append(tuple(zip(support, img)))
        level.sort()
        for moved in level:
            yield SparsePermutation(cls.n, moved)


def random_k_sparse(rng: RngStream, cls: PermutationClass, exact_d: int) -> SparsePermutation:
    """Uniform draw among permutations with exactly ``exact_d`` moved points."""
    if exact_d == 1 or exact_d < 0 or exact_d > cls.k:
        raise InvalidDistance(f"cannot draw a permutation moving exactly {exact_d} points (k={cls.k})")
    if exact_d == 0:
        return SparsePermutation.identity(cls.n)
    g = rng.generator()
    support = np.sort(g.choice(cls.n, size=exact_d, replace=False))
    while True:
        order = g.permutation(exact_d)
        if np.all(order != np.arange(exact_d)):
            break
    return SparsePermutation(cls.n, tuple(zip(support.tolist(), support[order].tolist())))
