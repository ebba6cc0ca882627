"""Permutation-invariant multiset aggregators.

Three aggregators are provided:

* ``sum_aggregate`` -- sum of an element-wise map phi over the multiset.
* ``phist`` -- the projective histogram: per output coordinate, a 1-D
  histogram of kernel responses around fixed equidistant bin centers.
* ``voronoi_sum`` -- element counts per cell of a Voronoi tessellation.

For the d-ary grid tessellation the projective histogram is an exact
linear image of the Voronoi counts: ``vec(phist(X)) = A h(X)`` with the
0/1 matrix built by :func:`build_projection_matrix`. A set of b*d grid
cells whose columns of A are linearly independent is built by
:func:`support_set`; it certifies that vectors supported on those cells
survive the projection.

All aggregators reduce elements in canonical sorted order, so outputs are
bitwise identical under any permutation of the element list.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

import numpy as np

from .multiset import Multiset, pairwise_distances

KERNELS = ("uniform", "triangular", "raised-cosine")

# Remap target for elements pushed out of scope by a cell-permutation map:
# far enough outside [-1, 1] that every kernel response is exactly zero.
NULL_REMAP_VALUE = 3.0

# Guard for build_projection_matrix: b**d above this is refused.
MAX_GRID_CELLS = 2_000_000


def bin_centers(b: int) -> np.ndarray:
    """The b equidistant bin centers p_l = (2l - 1)/b - 1, l = 1..b."""
    if b < 1:
        raise ValueError("bin count must be >= 1")
    l = np.arange(1, b + 1, dtype=float)
    return (2.0 * l - 1.0) / b - 1.0


@dataclass(frozen=True)
class HistogramSpec:
    """Bin layout and kernel for the projective histogram.

    The uniform kernel is the theory mode: width is exactly 1/b and bins
    partition [-1, 1] as half-open intervals (last bin closed), so counts
    are integers. Triangular and raised-cosine kernels are the smooth
    training mode, default width 2/b (adjacent bins overlap and responses
    form a partition of unity on [p_1, p_b]).
    """

    bins: int
    kernel: str = "uniform"
    width: float | None = None

    def __post_init__(self):
        if self.bins < 1:
            raise ValueError("bins must be >= 1")
        if self.kernel not in KERNELS:
            raise ValueError(f"unknown kernel {self.kernel!r}")
        w = self.width
        if self.kernel == "uniform":
            if w is None:
                w = 1.0 / self.bins
            if w != 1.0 / self.bins:
                raise ValueError("uniform kernel requires width exactly 1/bins")
        else:
            if w is None:
                w = 2.0 / self.bins
            if w <= 0:
                raise ValueError("kernel width must be positive")
        object.__setattr__(self, "width", float(w))

    @property
    def centers(self) -> np.ndarray:
        return bin_centers(self.bins)


def kernel_response(u: np.ndarray, kind: str, width: float) -> np.ndarray:
    """Kernel value at nonnegative distance u from a bin center."""
    u = np.asarray(u, dtype=float)
    if kind == "uniform":
        # membership is resolved at bin level (half-open intervals); the
        # symmetric indicator here serves direct kernel queries only
        return (u <= width).astype(float)
    if kind == "triangular":
        return np.maximum(0.0, 1.0 - u / width)
    if kind == "raised-cosine":
        out = np.zeros_like(u)
        inside = u <= width
        out[inside] = 0.5 * (1.0 + np.cos(np.pi * u[inside] / width))
        return out
    raise ValueError(f"unknown kernel {kind!r}")


@dataclass(frozen=True)
class VoronoiTessellation:
    """A finite point set and the nearest-point cells it induces.

    ``grid`` marks the special case points = P^d (d-ary Cartesian power of
    the b bin centers) in lexicographic order, coordinate 1 most
    significant; the A-matrix and support-set constructions rely on that
    enumeration order.
    """

    points: np.ndarray
    norm: str = "linf"
    grid: tuple[int, int] | None = None  # (b, d)

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        if pts.ndim != 2 or pts.shape[0] == 0:
            raise ValueError("points must be a nonempty (m, d) array")
        if self.grid is None and pts.shape[0] > 1:
            d = pairwise_distances(pts, pts, self.norm)
            np.fill_diagonal(d, np.inf)
            if d.min() == 0.0:
                raise ValueError("tessellation points must be pairwise distinct")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    @classmethod
    def grid_power(cls, b: int, d: int, norm: str = "linf") -> "VoronoiTessellation":
        """The grid P^d of bin centers, enumerated lexicographically."""
        centers = bin_centers(b)
        pts = np.array(list(itertools.product(centers, repeat=d)), dtype=float)
        return cls(pts.reshape(b ** d, d), norm=norm, grid=(b, d))

    @property
    def n_cells(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def assign(self, elements: np.ndarray) -> np.ndarray:
        """Nearest tessellation point per row; ties go to the lowest index."""
        elements = np.asarray(elements, dtype=float)
        if elements.size == 0:
            return np.zeros(0, dtype=int)
        dist = pairwise_distances(elements, self.points, self.norm)
        return np.argmin(dist, axis=1)

    def cell_diameter(self) -> float:
        """Upper bound on cell diameter for an axis-aligned grid (linf)."""
        if self.norm != "linf":
            raise ValueError("cell_diameter implemented for linf grids only")
        spacing = []
        for j in range(self.dim):
            vals = np.unique(self.points[:, j])
            spacing.append(vals[1] - vals[0] if len(vals) > 1 else np.inf)
        return float(max(np.max(s) if np.ndim(s) else s for s in spacing))


@dataclass(frozen=True)
class PhiFunction:
    """Element-wise preprocessing map applied before aggregation.

    kinds:
      identity         -- phi(x) = x
      cell-indicator   -- 0/1 vector over a selected cell subset S of a
                          tessellation (1 at the cell containing x)
      cell-permutation -- x is replaced by the center of an image cell
                          under an injective cell -> cell map; elements in
                          unmapped cells go to the null remap value, which
                          contributes zero to every histogram bin
      learned          -- wraps an arbitrary vectorized callable
    """

    kind: str
    tessellation: VoronoiTessellation | None = None
    cells: tuple[int, ...] | None = None
    cell_map: Mapping[int, int] | None = None
    func: Callable[[np.ndarray], np.ndarray] | None = None
    out_dim: int | None = None

    def output_dim(self, in_dim: int) -> int:
        if self.kind == "identity":
            return in_dim
        if self.kind == "cell-indicator":
            return len(self.cells)
        if self.kind == "cell-permutation":
            return self.tessellation.dim
        if self.kind == "learned":
            if self.out_dim is None:
                raise ValueError("learned phi needs an explicit out_dim")
            return self.out_dim
        raise ValueError(f"unknown phi kind {self.kind!r}")

    def apply(self, elements: np.ndarray) -> np.ndarray:
        """Map an (n, d) element array to (n, output_dim)."""
        elements = np.asarray(elements, dtype=float)
        n, d = elements.shape
        if self.kind == "identity":
            return elements
        if self.kind == "cell-indicator":
            idx = self.tessellation.assign(elements)
            out = np.zeros((n, len(self.cells)))
            for col, cell in enumerate(self.cells):
                out[idx == cell, col] = 1.0
            return out
        if self.kind == "cell-permutation":
            if not all(v >= 0 for v in self.cell_map.values()):
                raise ValueError("cell map images must be valid cell indices")
            if len(set(self.cell_map.values())) != len(self.cell_map):
                raise ValueError("cell map must be injective")
            idx = self.tessellation.assign(elements)
            out = np.full((n, d), NULL_REMAP_VALUE)
            for src, dst in self.cell_map.items():
                out[idx == src] = self.tessellation.points[dst]
            return out
        if self.kind == "learned":
            out = np.asarray(self.func(elements), dtype=float)
            if out.shape != (n, self.output_dim(d)):
                raise ValueError("learned phi returned a wrong shape")
            return out
        raise ValueError(f"unknown phi kind {self.kind!r}")


PHI_IDENTITY = PhiFunction(kind="identity")


def _canonical_rows(rows: np.ndarray) -> np.ndarray:
    if rows.shape[0] <= 1:
        return rows
    order = np.lexsort(rows.T[::-1])
    return rows[order]


def sum_aggregate(x: Multiset, phi: PhiFunction = PHI_IDENTITY) -> np.ndarray:
    """Sum of phi over the multiset; the empty multiset gives the zero vector."""
    out_dim = phi.output_dim(x.dim)
    if len(x) == 0:
        return np.zeros(out_dim)
    mapped = phi.apply(x.elements)
    return _canonical_rows(mapped).sum(axis=0)


def _uniform_bin_index(values: np.ndarray, b: int) -> np.ndarray:
    """Half-open uniform bins [p_l - w, p_l + w) on [-1, 1], last bin closed.

    Returns -1 for values outside [-1, 1].
    """
    idx = np.floor((values + 1.0) * (b / 2.0)).astype(int)
    idx[values == 1.0] = b - 1
    idx[(values < -1.0) | (values > 1.0)] = -1
    return idx


def phist(x: Multiset, spec: HistogramSpec,
          phi: PhiFunction = PHI_IDENTITY) -> np.ndarray:
    """Projective histogram: entry (i, l) sums kernel responses of the i-th
    phi-output coordinate around bin center p_l.

    In uniform (theory) mode membership is the exact half-open partition of
    [-1, 1], so entries are integer counts; every phi output must then lie
    in [-1, 1], except values with all coordinates at distance >= 2 (the
    null remap convention), which contribute nothing.
    """
    out_dim = phi.output_dim(x.dim)
    out = np.zeros((out_dim, spec.bins))
    if len(x) == 0:
        return out
    mapped = _canonical_rows(phi.apply(x.elements))
    if spec.kernel == "uniform":
        in_range = np.abs(mapped) <= 1.0
        far_out = np.abs(mapped) >= 2.0
        bad = ~(in_range | far_out)
        if bad.any():
            i, j = np.argwhere(bad)[0]
            raise ValueError(
                f"uniform-kernel phist needs outputs in [-1, 1]; element {i} "
                f"coordinate {j} is {mapped[i, j]}"
            )
        for i in range(out_dim):
            idx = _uniform_bin_index(mapped[:, i], spec.bins)
            idx = idx[idx >= 0]
            out[i] = np.bincount(idx, minlength=spec.bins)
        return out
    centers = spec.centers
    # responses: (n, out_dim, bins), reduced over elements in canonical order
    u = np.abs(mapped[:, :, None] - centers[None, None, :])
    out = kernel_response(u, spec.kernel, spec.width).sum(axis=0)
    return out


def voronoi_sum(x: Multiset, tess: VoronoiTessellation) -> np.ndarray:
    """Element count per Voronoi cell; entries sum to |X|."""
    if x.dim != tess.dim:
        raise ValueError(f"multiset dim {x.dim} vs tessellation dim {tess.dim}")
    idx = tess.assign(x.elements)
    return np.bincount(idx, minlength=tess.n_cells)


@dataclass(frozen=True)
class ProjectionMatrix:
    """0/1 matrix A with vec(phist(X)) = A h(X) on the grid tessellation.

    Row (i, l) selects the grid points whose i-th coordinate is the l-th
    bin center; stored sparsely as per-row column lists. Rows are ordered
    i-major ((i, l) -> i*b + l), matching the row-major vec of the (d, b)
    histogram matrix; columns follow the lexicographic grid enumeration.
    """

    d: int
    b: int
    row_cols: tuple[tuple[int, ...], ...]

    @property
    def shape(self) -> tuple[int, int]:
        return (self.b * self.d, self.b ** self.d)

    def apply(self, h: np.ndarray) -> np.ndarray:
        h = np.asarray(h)
        out = np.zeros(self.b * self.d, dtype=h.dtype)
        for r, cols in enumerate(self.row_cols):
            out[r] = h[list(cols)].sum()
        return out

    def dense(self) -> np.ndarray:
        a = np.zeros(self.shape)
        for r, cols in enumerate(self.row_cols):
            a[r, list(cols)] = 1.0
        return a

    def submatrix(self, cols: Sequence[int]) -> np.ndarray:
        return self.dense()[:, list(cols)]


def build_projection_matrix(d: int, b: int) -> ProjectionMatrix:
    """Construct A for the grid P^d: row (i, l) has a one at every grid
    point whose i-th coordinate equals the l-th bin center.

    Each row carries b^(d-1) ones and each column exactly d ones.
    """
    if d < 1 or b < 1:
        raise ValueError("d and b must be >= 1")
    if b ** d > MAX_GRID_CELLS:
        raise ValueError(f"grid size b**d = {b ** d} exceeds cap {MAX_GRID_CELLS}")
    m_v = b ** d
    # lexicographic enumeration: coordinate 1 most significant
    digits = np.zeros((m_v, d), dtype=int)
    idx = np.arange(m_v)
    for i in range(d - 1, -1, -1):
        digits[:, i] = idx % b
        idx //= b
    rows: list[tuple[int, ...]] = []
    for i in range(d):
        for l in range(b):
            rows.append(tuple(np.nonzero(digits[:, i] == l)[0]))
    return ProjectionMatrix(d=d, b=b, row_cols=tuple(rows))


@dataclass(frozen=True)
class SupportSet:
    """b*d grid-cell column indices whose A-submatrix has full rank b*d."""

    d: int
    b: int
    indices: tuple[int, ...]


def _grid_index(digits: Sequence[int], b: int) -> int:
    idx = 0
    for a in digits:
        idx = idx * b + a
    return idx


def support_set(d: int, b: int) -> SupportSet:
    """Build the rank-certifying cell set by coordinate recurrence.

    Start with the points whose every coordinate except the first sits at
    the maximum bin index; each further coordinate i contributes the
    analogous line plus the single point with coordinates i and i-1 at the
    minimum index and all others at the maximum. Exactly b cells are added
    per coordinate, |S*| = b*d, and the corresponding columns of A are
    verified to be linearly independent.
    """
    if d < 1:
        raise ValueError("d must be >= 1")
    if b < 2 and d > 1:
        raise ValueError("b must be >= 2 for d > 1")
    lo, hi = 0, b - 1
    cells: set[tuple[int, ...]] = set()
    for a in range(b):
        digits = [hi] * d
        digits[0] = a
        cells.add(tuple(digits))
    for i in range(1, d):
        for a in range(b):
            digits = [hi] * d
            digits[i] = a
            cells.add(tuple(digits))
        digits = [hi] * d
        digits[i] = lo
        digits[i - 1] = lo
        cells.add(tuple(digits))
    if len(cells) != b * d:
        raise AssertionError(
            f"support-set recurrence produced {len(cells)} cells, expected {b * d}"
        )
    indices = tuple(sorted(_grid_index(c, b) for c in cells))
    a_matrix = build_projection_matrix(d, b)
    rank = np.linalg.matrix_rank(a_matrix.submatrix(indices))
    if rank != b * d:
        raise AssertionError(
            f"support-set submatrix rank {rank}, expected {b * d}"
        )
    return SupportSet(d=d, b=b, indices=indices)
