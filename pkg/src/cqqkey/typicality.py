"""Types, type classes, delta-typical sets and the typical-set tail bound."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np

from .exceptions import ResourceError, ValidationError
from .linalg import check_distribution

TAIL_CONSTANT = 2.0 / math.log(2.0)
MAX_TYPES = 5_000_000


@dataclass(frozen=True)
class TypeClass:
    counts: tuple[int, ...]

    def __post_init__(self):
        if any(c < 0 for c in self.counts):
            raise ValidationError("type counts must be nonnegative")

    @property
    def n(self) -> int:
        return sum(self.counts)

    @property
    def distribution(self) -> np.ndarray:
        return np.asarray(self.counts, dtype=float) / self.n

    def size(self) -> int:
        return type_class_size(self.counts)

    def log_probability_of_member(self, p) -> float:
        """log2 p^n(x^n) for any x^n of this type (-inf if impossible)."""
        p = np.asarray(p, dtype=float)
        total = 0.0
        for c, px in zip(self.counts, p):
            if c == 0:
                continue
            if px == 0:
                return -math.inf
            total += c * math.log2(px)
        return total

    def probability(self, p) -> float:
        """p^n(T_lambda^n)."""
        lp = self.log_probability_of_member(p)
        if lp == -math.inf:
            return 0.0
        return math.exp(math.log(self.size()) + lp * math.log(2.0))


def count_types(n: int, alphabet_size: int) -> int:
    return math.comb(n + alphabet_size - 1, alphabet_size - 1)


def _compositions(n: int, k: int) -> Iterator[tuple[int, ...]]:
    if k == 1:
        yield (n,)
        return
    for first in range(n, -1, -1):
        for rest in _compositions(n - first, k - 1):
            yield (first,) + rest


def enumerate_types(n: int, alphabet_size: int) -> list[TypeClass]:
    if n < 1 or alphabet_size < 1:
        raise ValidationError("need n >= 1 and alphabet_size >= 1")
    if count_types(n, alphabet_size) > MAX_TYPES:
        raise ResourceError(f"{count_types(n, alphabet_size)} types exceed the enumeration guard")
    return [TypeClass(c) for c in _compositions(n, alphabet_size)]


def type_of(seq: Sequence[int], alphabet_size: int | None = None) -> TypeClass:
    seq = [int(a) for a in seq]
    k = alphabet_size if alphabet_size is not None else (max(seq) + 1 if seq else 1)
    if any(a < 0 or a >= k for a in seq):
        raise ValidationError("letter out of range")
    counts = [0] * k
    for a in seq:
        counts[a] += 1
    return TypeClass(tuple(counts))


def type_class_size(counts: Sequence[int]) -> int:
    """Multinomial coefficient n! / prod(counts!), exact."""
    size = math.factorial(sum(counts))
    for c in counts:
        size //= math.factorial(c)
    return size


def is_typical_type(t: TypeClass, p, delta: float) -> bool:
    p = np.asarray(p, dtype=float)
    lam = t.distribution
    if np.any((p == 0) & (np.asarray(t.counts) > 0)):
        return False
    return bool(np.all(np.abs(lam - p) <= delta + 1e-15))


@dataclass(frozen=True)
class TypicalSet:
    """The delta-typical set of p at blocklength n, decided per type class."""

    p: np.ndarray
    delta: float
    n: int

    def __contains__(self, seq) -> bool:
        return is_typical_type(type_of(seq, self.p.size), self.p, self.delta)

    def types(self) -> list[TypeClass]:
        return [t for t in enumerate_types(self.n, self.p.size) if is_typical_type(t, self.p, self.delta)]

    def exact_probability(self) -> float:
        return math.fsum(t.probability(self.p) for t in self.types())


def delta_typical(p, delta: float, n: int) -> TypicalSet:
    if delta <= 0:
        raise ValidationError("delta must be positive")
    return TypicalSet(check_distribution(p), float(delta), int(n))


def tail_bound_check(p, delta: float, n: int) -> dict:
    """Compare the exact mass outside T_{p,delta}^n with 2^(-n c delta^2), c = 2/ln 2."""
    ts = delta_typical(p, delta, n)
    outside = [t for t in enumerate_types(n, ts.p.size) if not is_typical_type(t, ts.p, delta)]
    # summing the complement directly keeps tiny tails accurate
    tail = math.fsum(t.probability(ts.p) for t in outside)
    bound = 2.0 ** (-n * TAIL_CONSTANT * delta ** 2)
    return {"exact_tail": tail, "bound": bound, "holds": tail <= bound,
            "p": ts.p.tolist(), "delta": delta, "n": n}
