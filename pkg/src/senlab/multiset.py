"""Multisets over R^d and the delta-equivalence relation.

A multiset is a finite collection of equal-dimension real vectors where
repetition counts. Two multisets are delta-equivalent when a bijection
between their elements exists that moves no element further than delta
(in the chosen norm). Equivalence at a given delta is decided by maximum
matching on the thresholded bipartite distance graph; the bottleneck
matching distance is recovered by searching the finite set of pairwise
distances.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

NORMS = ("l1", "l2", "linf")

_NORM_ORD = {"l1": 1, "l2": 2, "linf": np.inf}


def pairwise_distances(a: np.ndarray, b: np.ndarray, norm: str) -> np.ndarray:
    """All-pairs distances between rows of a (k x d) and b (m x d)."""
    if norm not in NORMS:
        raise ValueError(f"unknown norm {norm!r}, expected one of {NORMS}")
    diff = a[:, None, :] - b[None, :, :]
    if norm == "l1":
        return np.abs(diff).sum(axis=2)
    if norm == "l2":
        return np.sqrt((diff * diff).sum(axis=2))
    return np.abs(diff).max(axis=2)


def vector_norm(v: np.ndarray, norm: str) -> float:
    if norm not in NORMS:
        raise ValueError(f"unknown norm {norm!r}, expected one of {NORMS}")
    return float(np.linalg.norm(v, ord=_NORM_ORD[norm]))


class DimensionMismatchError(ValueError):
    """Two multisets (or a multiset and a point set) disagree on dimension."""


@dataclass(frozen=True)
class Multiset:
    """Finite multiset of vectors in R^d, multiplicity by repetition.

    ``elements`` is an (n, dim) float array; n may be zero. When
    ``normalized`` is set, every coordinate is asserted to lie in [-1, 1].
    """

    elements: np.ndarray
    dim: int
    normalized: bool = False

    def __post_init__(self):
        arr = np.asarray(self.elements, dtype=float)
        if arr.ndim == 1 and arr.size == 0:
            arr = arr.reshape(0, self.dim)
        if arr.ndim != 2:
            raise ValueError("elements must be a 2-D array of shape (n, dim)")
        if self.dim <= 0:
            raise ValueError("dim must be a positive integer")
        if arr.shape[1] != self.dim:
            raise ValueError(
                f"element length {arr.shape[1]} does not match dim {self.dim}"
            )
        if self.normalized and arr.size and np.abs(arr).max() > 1.0:
            raise ValueError("normalized multiset has a coordinate outside [-1, 1]")
        arr.setflags(write=False)
        object.__setattr__(self, "elements", arr)

    @classmethod
    def of(cls, rows: Iterable[Sequence[float]], dim: int | None = None,
           normalized: bool = False) -> "Multiset":
        rows = [np.asarray(r, dtype=float).reshape(-1) for r in rows]
        if rows:
            d = len(rows[0])
            arr = np.stack(rows)
        else:
            if dim is None:
                raise ValueError("empty multiset needs an explicit dim")
            d = dim
            arr = np.zeros((0, d))
        if dim is not None and dim != d:
            raise ValueError(f"rows have length {d}, expected dim {dim}")
        return cls(arr, d, normalized)

    def __len__(self) -> int:
        return self.elements.shape[0]

    def canonical(self) -> np.ndarray:
        """Elements sorted lexicographically by coordinates.

        Gives a representation independent of input order, used for
        hashing/equality and to make float reductions permutation exact.
        """
        if len(self) == 0:
            return self.elements
        order = np.lexsort(self.elements.T[::-1])
        return self.elements[order]

    def key(self) -> tuple:
        return tuple(map(tuple, self.canonical()))

    def same_as(self, other: "Multiset") -> bool:
        return self.dim == other.dim and self.key() == other.key()


@dataclass(frozen=True)
class DomainBox:
    """Axis-aligned bounded domain, default [-1, 1]^d."""

    dim: int
    lower: np.ndarray = None  # type: ignore[assignment]
    upper: np.ndarray = None  # type: ignore[assignment]

    def __post_init__(self):
        lo = self.lower if self.lower is not None else -np.ones(self.dim)
        hi = self.upper if self.upper is not None else np.ones(self.dim)
        lo = np.asarray(lo, dtype=float).reshape(-1)
        hi = np.asarray(hi, dtype=float).reshape(-1)
        if lo.shape != (self.dim,) or hi.shape != (self.dim,):
            raise ValueError("bounds must have length dim")
        if not np.all(lo < hi):
            raise ValueError("every lower bound must be strictly below its upper")
        lo.setflags(write=False)
        hi.setflags(write=False)
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    def volume(self) -> float:
        return float(np.prod(self.upper - self.lower))

    def contains(self, point: np.ndarray) -> bool:
        p = np.asarray(point, dtype=float)
        return bool(np.all(p >= self.lower) and np.all(p <= self.upper))


@dataclass(frozen=True)
class MatchResult:
    """Outcome of a delta-equivalence query.

    When ``matched``, ``pairing`` is a bijection (i in X, j in Y) whose
    largest pair distance is ``bottleneck`` (never above the queried delta).
    """

    matched: bool
    pairing: tuple[tuple[int, int], ...] | None = None
    bottleneck: float | None = None


def _max_matching(adj: list[list[int]], n_left: int, n_right: int) -> list[int]:
    """Augmenting-path maximum matching. Returns match_right (len n_right)."""
    match_left = [-1] * n_left
    match_right = [-1] * n_right

    def try_augment(u: int, seen: list[bool]) -> bool:
        for v in adj[u]:
            if seen[v]:
                continue
            seen[v] = True
            if match_right[v] == -1 or try_augment(match_right[v], seen):
                match_left[u] = v
                match_right[v] = u
                return True
        return False

    for u in range(n_left):
        try_augment(u, [False] * n_right)
    return match_right


def delta_equivalent(x: Multiset, y: Multiset, delta: float,
                     norm: str = "linf") -> MatchResult:
    """Decide whether a bijection X -> Y exists moving no element more than delta.

    Cardinality mismatch is a definite non-match (no bijection exists), not
    an error. Threshold comparison is a plain <= with no epsilon padding.
    """
    if x.dim != y.dim:
        raise DimensionMismatchError(f"dim {x.dim} vs {y.dim}")
    if delta < 0:
        raise ValueError("delta must be nonnegative")
    n = len(x)
    if n != len(y):
        return MatchResult(matched=False)
    if n == 0:
        return MatchResult(matched=True, pairing=(), bottleneck=0.0)

    dist = pairwise_distances(x.elements, y.elements, norm)
    adj = [list(np.nonzero(dist[i] <= delta)[0]) for i in range(n)]
    match_right = _max_matching(adj, n, n)
    if any(m == -1 for m in match_right):
        return MatchResult(matched=False)
    pairing = tuple(sorted((u, v) for v, u in enumerate(match_right)))
    bottleneck = max(float(dist[u, v]) for u, v in pairing)
    return MatchResult(matched=True, pairing=pairing, bottleneck=bottleneck)


def multiset_distance_lower(x: Multiset, y: Multiset,
                            norm: str = "linf") -> float:
    """Bottleneck matching distance between two multisets.

    The optimum is always one of the pairwise distances, so binary-search
    the sorted distance grid for the smallest delta at which
    delta_equivalent matches. Unequal cardinalities give the inf sentinel.
    """
    if x.dim != y.dim:
        raise DimensionMismatchError(f"dim {x.dim} vs {y.dim}")
    if len(x) != len(y):
        return math.inf
    if len(x) == 0:
        return 0.0
    candidates = np.unique(pairwise_distances(x.elements, y.elements, norm))
    lo, hi = 0, len(candidates) - 1
    if not delta_equivalent(x, y, float(candidates[hi]), norm).matched:
        # cannot happen: at the max distance every edge is present
        raise AssertionError("no matching at maximal threshold")
    while lo < hi:
        mid = (lo + hi) // 2
        if delta_equivalent(x, y, float(candidates[mid]), norm).matched:
            hi = mid
        else:
            lo = mid + 1
    return float(candidates[lo])


def grid_cover(box: DomainBox, delta: float, norm: str = "linf") -> np.ndarray:
    """Axis-aligned grid whose l-inf cells of radius <= delta cover the box.

    Per axis the box is split into ceil(span / (2 delta)) equal cells and
    the cell midpoints are returned (Cartesian product across axes), so
    every point of the box is within delta of some grid point.
    """
    if norm != "linf":
        raise ValueError("grid_cover is defined for the linf norm")
    if delta <= 0:
        raise ValueError("delta must be positive")
    axes = []
    for lo, hi in zip(box.lower, box.upper):
        span = hi - lo
        k = max(1, math.ceil(span / (2.0 * delta)))
        h = span / k
        axes.append(lo + h * (np.arange(k) + 0.5))
    prod = list(itertools.product(*axes))
    return np.array(prod, dtype=float).reshape(len(prod), box.dim)


def parse_multiset_text(text: str) -> Multiset:
    """Parse the fixture format: 'dim <d>' header then one element per line."""
    lines = [ln.strip() for ln in text.splitlines()]
    lines = [ln for ln in lines if ln and not ln.startswith("#")]
    if not lines or not lines[0].startswith("dim"):
        raise ValueError("fixture must start with a 'dim <d>' line")
    parts = lines[0].split()
    if len(parts) != 2:
        raise ValueError(f"malformed dim header: {lines[0]!r}")
    d = int(parts[1])
    rows = []
    for ln in lines[1:]:
        coords = [float(tok) for tok in ln.split()]
        if len(coords) != d:
            raise ValueError(f"element {ln!r} has {len(coords)} coords, expected {d}")
        rows.append(coords)
    return Multiset.of(rows, dim=d)


def format_multiset_text(x: Multiset) -> str:
    lines = [f"dim {x.dim}"]
    for row in x.elements:
        lines.append(" ".join(repr(float(v)) for v in row))
    return "\n".join(lines) + "\n"


def load_multiset(path) -> Multiset:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_multiset_text(fh.read())
