"""Monomial multi-index sets: construction, ordering, and reduction.

A multi-index alpha in N^d identifies the monomial
phi_alpha(y) = prod_j y_j^alpha_j.  Sets of multi-indices are kept in
graded lexicographic order (total degree major, lexicographic minor), so
that truncating to any degree gives a prefix and the sets are nested.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import BasisSizeError, DimensionMismatchError

MultiIndex = tuple[int, ...]

# Guard against accidental astronomically-large enumerations.
MAX_CARDINALITY = 50_000_000

KIND_TOTAL_DEGREE = "total_degree"
KIND_HYPERBOLIC_CROSS = "hyperbolic_cross"
KIND_CUSTOM = "custom"


def total_degree(alpha: MultiIndex) -> int:
    return sum(alpha)


def support(alpha: MultiIndex) -> tuple[int, ...]:
    """Coordinates with a positive exponent."""
    return tuple(i for i, a in enumerate(alpha) if a > 0)


def grlex_key(alpha: MultiIndex):
    return (sum(alpha), alpha)


@dataclass(frozen=True)
class BasisSet:
    """An ordered, duplicate-free collection of multi-indices in N^d."""

    dim: int
    indices: tuple[MultiIndex, ...]
    kind: str = KIND_CUSTOM
    degree: int | None = None
    _positions: dict = field(init=False, repr=False, compare=False, hash=False)

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError("dimension must be at least 1")
        positions = {}
        for pos, alpha in enumerate(self.indices):
            if len(alpha) != self.dim:
                raise DimensionMismatchError(
                    f"index {alpha} has length {len(alpha)}, expected {self.dim}"
                )
            if any(a < 0 for a in alpha):
                raise ValueError(f"negative exponent in {alpha}")
            if alpha in positions:
                raise ValueError(f"duplicate multi-index {alpha}")
            positions[alpha] = pos
        object.__setattr__(self, "_positions", positions)

    def __len__(self) -> int:
        return len(self.indices)

    def __contains__(self, alpha) -> bool:
        return tuple(alpha) in self._positions

    def position(self, alpha) -> int:
        return self._positions[tuple(alpha)]

    def exponent_matrix(self) -> np.ndarray:
        return np.array(self.indices, dtype=np.int64).reshape(len(self), self.dim)

    def to_text(self) -> str:
        """Plain-text listing: header 'd n kind', then one index per line."""
        deg = self.degree if self.degree is not None else -1
        lines = [f"{self.dim} {deg} {self.kind}"]
        lines.extend(" ".join(str(a) for a in alpha) for alpha in self.indices)
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "BasisSet":
        lines = [ln for ln in text.splitlines() if ln.strip()]
        d_str, n_str, kind = lines[0].split()
        dim, deg = int(d_str), int(n_str)
        indices = tuple(tuple(int(t) for t in ln.split()) for ln in lines[1:])
        return cls(dim=dim, indices=indices, kind=kind,
                   degree=None if deg < 0 else deg)


def total_degree_indices(d: int, n: int) -> BasisSet:
    """All alpha in N^d with |alpha| <= n, in graded lexicographic order."""
    if d < 1:
        raise ValueError("d must be >= 1")
    if n < 0:
        raise ValueError("n must be >= 0")
    card = math.comb(n + d, d)
    if card > MAX_CARDINALITY:
        raise BasisSizeError(
            f"total-degree set of dimension {d}, degree {n} has {card} elements"
        )
    indices = []
    for s in range(n + 1):
        indices.extend(_compositions_lex(d, s))
    return BasisSet(dim=d, indices=tuple(indices), kind=KIND_TOTAL_DEGREE, degree=n)


def _compositions_lex(d: int, s: int):
    """Compositions of s into d non-negative parts, lexicographically ascending."""
    if d == 1:
        yield (s,)
        return
    for first in range(s + 1):
        for rest in _compositions_lex(d - 1, s - first):
            yield (first,) + rest


def hyperbolic_cross_indices(d: int, n: int) -> BasisSet:
    """All alpha in N^d with prod(alpha_j + 1) <= n + 1, graded order."""
    if d < 1:
        raise ValueError("d must be >= 1")
    if n < 0:
        raise ValueError("n must be >= 0")
    indices: list[MultiIndex] = []

    def extend(prefix: list[int], budget: int, coord: int):
        if len(indices) > MAX_CARDINALITY:
            raise BasisSizeError(
                f"hyperbolic-cross set of dimension {d}, order {n} is too large"
            )
        if coord == d:
            indices.append(tuple(prefix))
            return
        a = 0
        while (a + 1) <= budget:
            prefix.append(a)
            extend(prefix, budget // (a + 1), coord + 1)
            prefix.pop()
            a += 1

    extend([], n + 1, 0)
    indices.sort(key=grlex_key)
    return BasisSet(dim=d, indices=tuple(indices),
                    kind=KIND_HYPERBOLIC_CROSS, degree=n)


def strip_low_order(basis: BasisSet) -> BasisSet:
    """Drop every index of total degree <= 1.

    The remaining span consists of polynomials with v(0) = 0 and
    grad v(0) = 0 identically.
    """
    kept = tuple(a for a in basis.indices if total_degree(a) > 1)
    return BasisSet(dim=basis.dim, indices=kept, kind=basis.kind,
                    degree=basis.degree)


def is_b_orthogonal(alpha, B) -> bool:
    """True iff B^T grad phi_alpha vanishes identically.

    Equivalent to every row of B indexed by the support of alpha being zero.
    """
    alpha = tuple(alpha)
    B = np.atleast_2d(np.asarray(B, dtype=float))
    if B.shape[0] != len(alpha):
        raise DimensionMismatchError(
            f"B has {B.shape[0]} rows but alpha has dimension {len(alpha)}"
        )
    return all(not B[i].any() for i in support(alpha))


def reduce_basis(basis: BasisSet, B) -> BasisSet:
    """Remove indices whose monomials contribute nothing through B.

    Drops every alpha with is_b_orthogonal(alpha, B); order is preserved.
    """
    kept = tuple(a for a in basis.indices if not is_b_orthogonal(a, B))
    return BasisSet(dim=basis.dim, indices=kept, kind=basis.kind,
                    degree=basis.degree)


def downward_closure(dim: int, indices) -> BasisSet:
    """Smallest downward-closed set (under coordinate decrements) containing
    the given indices.  Always contains the zero index."""
    seen: set[MultiIndex] = set()
    stack = [tuple(a) for a in indices]
    root = (0,) * dim
    stack.append(root)
    while stack:
        alpha = stack.pop()
        if alpha in seen:
            continue
        seen.add(alpha)
        for i, a in enumerate(alpha):
            if a > 0:
                stack.append(alpha[:i] + (a - 1,) + alpha[i + 1:])
    ordered = tuple(sorted(seen, key=grlex_key))
    return BasisSet(dim=dim, indices=ordered, kind=KIND_CUSTOM)
