"""ROI-aware graph-isomorphism convolution.

Each node gets its own effective weight matrix, mixed from a small shared
basis by non-negative per-node cluster scores, so regions can update their
embeddings differently without a full per-node parameter set.  The update is
GIN-style: a (1 + eps)-weighted self term plus an edge-weighted neighbor
aggregation, followed by a 2-layer MLP.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import tensor as T
from .errors import BadEdgeIndex, ConfigError, ShapeMismatch
from .fnc import Edge
from .tensor import InitScheme, Tensor

AGGREGATIONS = ("sum", "mean")


@dataclass
class RginParams:
    """Learnable state of one convolution layer.

    cluster_scores: K x N, column i -> node i's (pre-ReLU) cluster scores
    basis: K matrices d_out x d_in mixed per node
    bias: d_out x d_in shared additive weight
    epsilon: scalar self-loop emphasis
    mlp_*: 2-layer update MLP (hidden width = d_out, ReLU)
    """

    theta1: Tensor
    theta2: list[Tensor]
    bias: Tensor
    epsilon: Tensor
    mlp_w1: Tensor
    mlp_b1: Tensor
    mlp_w2: Tensor
    mlp_b2: Tensor

    @property
    def n_clusters(self) -> int:
        return len(self.theta2)

    @property
    def d_in(self) -> int:
        return self.bias.shape[1]

    @property
    def d_out(self) -> int:
        return self.bias.shape[0]

    @property
    def n_nodes(self) -> int:
        return self.theta1.shape[1]

    def tensors(self, prefix: str) -> dict[str, Tensor]:
        named = {
            f"{prefix}.theta1": self.theta1,
            f"{prefix}.bias": self.bias,
            f"{prefix}.epsilon": self.epsilon,
            f"{prefix}.mlp_w1": self.mlp_w1,
            f"{prefix}.mlp_b1": self.mlp_b1,
            f"{prefix}.mlp_w2": self.mlp_w2,
            f"{prefix}.mlp_b2": self.mlp_b2,
        }
        for u, beta in enumerate(self.theta2):
            named[f"{prefix}.theta2.{u}"] = beta
        return named


def create_rgin_params(
    n_nodes: int,
    d_in: int,
    d_out: int,
    n_clusters: int,
    rng: np.random.Generator,
) -> RginParams:
    """Fan-average uniform for matrices, zeros for biases and epsilon."""
    if n_clusters < 1:
        raise ConfigError("clusters_k must be >= 1")

    def uniform(shape):
        fan_in, fan_out = (shape[1], shape[0]) if len(shape) == 2 else (shape[0], 1)
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        return T.parameter(rng.uniform(-bound, bound, size=shape))

    return RginParams(
        theta1=uniform((n_clusters, n_nodes)),
        theta2=[uniform((d_out, d_in)) for _ in range(n_clusters)],
        bias=uniform((d_out, d_in)),
        epsilon=T.parameter(np.zeros(1)),
        mlp_w1=uniform((d_out, d_out)),
        mlp_b1=T.parameter(np.zeros(d_out)),
        mlp_w2=uniform((d_out, d_out)),
        mlp_b2=T.parameter(np.zeros(d_out)),
    )


def cluster_assignments(theta1: Tensor, onehot) -> Tensor:
    """Non-negative cluster scores per node: ReLU of the selected columns.

    With identity encodings row i is ReLU of column i of theta1; a permuted
    encoding selects the matching columns, keeping scores attached to nodes.
    """
    return T.relu(T.matmul(T.constant(onehot), T.transpose(theta1)))


def node_weight(alpha_row: Tensor, theta2: list[Tensor], bias: Tensor) -> Tensor:
    """Effective weight of one node: sum_u alpha_u * basis_u + bias."""
    if alpha_row.shape != (len(theta2),):
        raise ShapeMismatch(
            f"node_weight: {alpha_row.shape} scores for {len(theta2)} basis matrices"
        )
    w = bias
    for u, beta in enumerate(theta2):
        w = w + T.gather(alpha_row, [u]) * beta
    return w


def edges_to_adjacency(edges: list[Edge], n_nodes: int) -> tuple[sp.csr_matrix, np.ndarray]:
    """Weighted adjacency (row i holds e_ij toward neighbors j) and neighbor
    counts.  Zero-weight edges still count as neighbors."""
    rows, cols, data = [], [], []
    degree = np.zeros(n_nodes)
    for i, j, w in edges:
        if not (0 <= i < n_nodes and 0 <= j < n_nodes):
            raise BadEdgeIndex(f"edge ({i}, {j}) outside 0..{n_nodes - 1}")
        rows.append(i)
        cols.append(j)
        data.append(float(w))
        degree[i] += 1.0
    adj = sp.csr_matrix((data, (rows, cols)), shape=(n_nodes, n_nodes))
    return adj, degree


def transform_nodes(h: Tensor, alpha: Tensor, params: RginParams) -> Tensor:
    """Apply each node's mixed weight: row j of the result is W_j @ h_j."""
    if h.shape[1] != params.d_in:
        raise ShapeMismatch(f"features {h.shape} vs weights expecting d_in={params.d_in}")
    out = T.matmul(h, T.transpose(params.bias))
    for u, beta in enumerate(params.theta2):
        out = out + T.mul(T.matmul(h, T.transpose(beta)), T.gather_col(alpha, u))
    return out


def conv_nodes(
    h: Tensor,
    alpha: Tensor,
    adjacency: sp.csr_matrix,
    degree: np.ndarray,
    params: RginParams,
    mode: str = "sum",
) -> Tensor:
    """Convolution over stacked node rows (one graph or a block-diagonal batch)."""
    if mode not in AGGREGATIONS:
        raise ConfigError(f"aggregation must be one of {AGGREGATIONS}, got {mode!r}")
    transformed = transform_nodes(h, alpha, params)
    neighbors = T.spmm(adjacency, transformed)
    if mode == "mean":
        inv_deg = np.zeros((degree.size, 1))
        nonzero = degree > 0
        inv_deg[nonzero, 0] = 1.0 / degree[nonzero]
        neighbors = T.mul(neighbors, T.constant(inv_deg))
    combined = T.mul(transformed, params.epsilon + 1.0) + neighbors
    hidden = T.relu(T.matmul(combined, T.transpose(params.mlp_w1)) + params.mlp_b1)
    return T.matmul(hidden, T.transpose(params.mlp_w2)) + params.mlp_b2


def rgin_forward(
    h,
    edges: list[Edge],
    params: RginParams,
    mode: str = "sum",
    onehot=None,
) -> Tensor:
    """Single-graph convolution: N x d_in features to N x d_out.

    ``onehot`` defaults to the identity position encoding; pass a permuted
    encoding to keep cluster scores attached to relabeled nodes.
    """
    h = T.constant(h)
    if h.ndim != 2:
        raise ShapeMismatch(f"node features must be 2-D, got {h.shape}")
    n = h.shape[0]
    if not np.isfinite(h.data).all():
        raise ShapeMismatch("node features must be finite")
    if onehot is None:
        onehot = np.eye(params.n_nodes)
    if params.n_nodes != n:
        raise ShapeMismatch(
            f"params built for {params.n_nodes} nodes, graph has {n}"
        )
    adjacency, degree = edges_to_adjacency(edges, n)
    alpha = cluster_assignments(params.theta1, onehot)
    return conv_nodes(h, alpha, adjacency, degree, params, mode)
