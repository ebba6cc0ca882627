"""Graph representation, normalized Laplacian, and Chebyshev spectral convolution.

The convolution computes sum_k T_k(Lr) X Theta_k + bias, where Lr is the
rescaled normalized Laplacian L - I (the lambda_max = 2 rescaling, valid
for every normalized Laplacian) and T_k follows the Chebyshev recurrence
T_k = 2 Lr T_{k-1} - T_{k-2}. Inputs may carry a leading batch axis, which
is how one-hot impulse responses are computed for many nodes at once.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import autodiff as ad
from .autodiff import Value


@dataclass(frozen=True)
class Graph:
    """Weighted graph on nodes 0..n-1; edges are (i, j, weight) triples.

    Directed inputs are allowed but the spectral path symmetrizes weights
    by averaging. Self-loops are rejected.
    """

    n: int
    edges: tuple[tuple[int, int, float], ...]
    directed: bool = False

    def __post_init__(self):
        if self.n < 0:
            raise ValueError("node count must be nonnegative")
        norm_edges = []
        for i, j, w in self.edges:
            i, j, w = int(i), int(j), float(w)
            if not (0 <= i < self.n and 0 <= j < self.n):
                raise ValueError(f"edge ({i}, {j}) out of range for n={self.n}")
            if i == j:
                raise ValueError(f"self-loop at node {i} not allowed")
            if w <= 0:
                raise ValueError(f"edge ({i}, {j}) has non-positive weight {w}")
            norm_edges.append((i, j, w))
        object.__setattr__(self, "edges", tuple(norm_edges))

    @classmethod
    def undirected(cls, n: int, pairs, weight: float = 1.0) -> "Graph":
        return cls(n, tuple((i, j, weight) for i, j in pairs), directed=False)

    def weight_matrix(self) -> np.ndarray:
        """Dense symmetric weight matrix; directed inputs averaged."""
        w = np.zeros((self.n, self.n))
        for i, j, wt in self.edges:
            if self.directed:
                w[i, j] += wt
            else:
                w[i, j] += wt
                w[j, i] += wt
        if self.directed:
            w = 0.5 * (w + w.T)
        return w

    def permuted(self, perm: np.ndarray) -> "Graph":
        """Relabel nodes: node i becomes perm[i]."""
        perm = np.asarray(perm, dtype=int)
        edges = tuple((int(perm[i]), int(perm[j]), w) for i, j, w in self.edges)
        return Graph(self.n, edges, self.directed)


class SpectralOperator:
    """Rescaled normalized Laplacian Lr = L - I with spectrum in [-1, 1].

    Holds the sparse matrices plus a dense copy and a per-order cache of
    Chebyshev polynomial matrices used for batched impulse responses.
    """

    def __init__(self, laplacian: sp.csr_matrix, rescaled: sp.csr_matrix):
        self.n = laplacian.shape[0]
        self.laplacian = laplacian
        self.matrix = rescaled
        self._dense: np.ndarray | None = None
        self._cheb_cache: dict[int, np.ndarray] = {}

    @property
    def dense(self) -> np.ndarray:
        if self._dense is None:
            self._dense = self.matrix.toarray()
        return self._dense

    def cheb_matrices(self, order: int) -> np.ndarray:
        """Dense stack (order + 1, n, n) of T_k(Lr), cached per order."""
        cached = self._cheb_cache.get(order)
        if cached is not None:
            return cached
        mats = [np.eye(self.n)]
        if order >= 1:
            mats.append(self.dense.copy())
        for _ in range(2, order + 1):
            mats.append(2.0 * (self.dense @ mats[-1]) - mats[-2])
        stack = np.stack(mats)
        if self.n <= 512:
            self._cheb_cache[order] = stack
        return stack

    def impulse_basis(self, nodes, order: int) -> np.ndarray:
        """Constant (k, n, order + 1) tensor: entry [a, :, k] is the column of
        T_k(Lr) at the a-th requested node."""
        nodes = np.asarray(nodes, dtype=int)
        stack = self.cheb_matrices(order)  # (K+1, n, n); columns of T_k
        return np.ascontiguousarray(stack[:, :, nodes].transpose(2, 1, 0))


def normalized_laplacian(g: Graph) -> SpectralOperator:
    """L = I - D^{-1/2} W D^{-1/2}; isolated nodes keep diagonal 1.

    Returns the operator holding both L and the rescaled Lr = L - I.
    """
    if g.n == 0:
        raise ValueError("empty graph has no Laplacian")
    w = g.weight_matrix()
    deg = w.sum(axis=1)
    inv_sqrt = np.zeros_like(deg)
    nz = deg > 0
    inv_sqrt[nz] = 1.0 / np.sqrt(deg[nz])
    norm_w = inv_sqrt[:, None] * w * inv_sqrt[None, :]
    lap = np.eye(g.n) - norm_w
    return SpectralOperator(sp.csr_matrix(lap), sp.csr_matrix(-norm_w))


@dataclass
class ConvLayerParams:
    """One spectral convolution layer: coefficients Theta of shape
    (order + 1, in_channels, out_channels) plus a bias per output channel."""

    order: int
    in_channels: int
    out_channels: int
    theta: Value
    bias: Value

    def __post_init__(self):
        expected = (self.order + 1, self.in_channels, self.out_channels)
        if tuple(self.theta.data.shape) != expected:
            raise ValueError(f"theta shape {self.theta.data.shape}, expected {expected}")
        if tuple(self.bias.data.shape) != (self.out_channels,):
            raise ValueError("bias shape mismatch")
        if not (np.all(np.isfinite(self.theta.data))
                and np.all(np.isfinite(self.bias.data))):
            raise ValueError("layer parameters must be finite")

    @classmethod
    def init(cls, order: int, in_channels: int, out_channels: int,
             rng: np.random.Generator) -> "ConvLayerParams":
        fan_in = (order + 1) * in_channels
        bound = np.sqrt(6.0 / (fan_in + out_channels))
        theta = ad.leaf(rng.uniform(-bound, bound,
                                    size=(order + 1, in_channels, out_channels)))
        bias = ad.leaf(np.zeros(out_channels))
        return cls(order, in_channels, out_channels, theta, bias)


def _theta_flat(params: ConvLayerParams) -> Value:
    k1, cin, cout = params.theta.data.shape
    return ad.reshape(params.theta, (k1 * cin, cout))


def cheb_conv(op: SpectralOperator, x, params: ConvLayerParams) -> Value:
    """Chebyshev convolution of node features.

    ``x`` is (n, in_channels) or (batch, n, in_channels); the output has
    the same leading shape with out_channels features.
    """
    x = ad.as_value(x)
    if x.data.shape[-1] != params.in_channels:
        raise ValueError(
            f"input has {x.data.shape[-1]} channels, layer expects {params.in_channels}"
        )
    if x.data.shape[-2] != op.n:
        raise ValueError("input node axis does not match the operator")
    lr = op.dense
    terms = [x]
    if params.order >= 1:
        terms.append(ad.matmul(ad.constant(lr), x))
    for _ in range(2, params.order + 1):
        nxt = ad.sub(ad.scale(ad.matmul(ad.constant(lr), terms[-1]), 2.0),
                     terms[-2])
        terms.append(nxt)
    stacked = ad.concat_last(terms) if len(terms) > 1 else terms[0]
    out = ad.matmul(stacked, _theta_flat(params))
    return ad.add(out, params.bias)


_ACTIVATIONS = {"relu": ad.relu, "tanh": ad.tanh, "none": lambda v: v}


def impulse_responses(op: SpectralOperator, nodes, layers, activations) -> Value:
    """Run one-hot node indicators through a convolution stack, batched.

    Returns a Value of shape (len(nodes), n, d_out): for each requested
    node, the stack's response to its indicator column. The first layer
    must have in_channels = 1; since one-hot inputs are constant, its
    Chebyshev terms reduce to fixed columns of T_k(Lr), precomputed by the
    operator.
    """
    nodes = np.asarray(nodes, dtype=int)
    if nodes.size and (nodes.min() < 0 or nodes.max() >= op.n):
        raise IndexError("node index out of range")
    if len(layers) != len(activations):
        raise ValueError("need one activation tag per layer")
    first = layers[0]
    if first.in_channels != 1:
        raise ValueError("impulse responses need first-layer in_channels = 1")
    basis = ad.constant(op.impulse_basis(nodes, first.order))  # (k, n, K+1)
    out = ad.add(ad.matmul(basis, _theta_flat(first)), first.bias)
    out = _ACTIVATIONS[activations[0]](out)
    for layer, act in zip(layers[1:], activations[1:]):
        out = cheb_conv(op, out, layer)
        out = _ACTIVATIONS[act](out)
    return out
