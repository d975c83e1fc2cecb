"""TopK node pooling: score, normalize, select, gate, re-index.

Nodes are scored by projection onto a learnable direction, scores are
standardized per graph, the top fraction survives, and surviving features are
gated by the sigmoid of their standardized score so the gradient reaches the
projection vector.  Index selection itself is non-differentiable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ConfigError, ShapeMismatch, ZeroProjection
from .fnc import Edge
from .tensor import Tensor

STD_FLOOR = 1e-8


@dataclass
class PoolParams:
    """Learnable projection vector plus the keep ratio."""

    omega: Tensor
    ratio: float

    def __post_init__(self):
        if not (0.0 < self.ratio <= 1.0):
            raise ConfigError(f"pool ratio must be in (0, 1], got {self.ratio}")


@dataclass
class PoolSelection:
    """Per-graph record of one pooling decision."""

    kept_indices: list[int]  # strictly increasing, into the pre-pool node set
    gated_scores: list[float]  # sigmoid of standardized scores, kept nodes only
    raw_scores: list[float]  # standardized scores of all pre-pool nodes

    def to_dict(self) -> dict:
        return {
            "kept_indices": self.kept_indices,
            "gated_scores": self.gated_scores,
            "raw_scores": self.raw_scores,
        }


def keep_count(ratio: float, n_nodes: int) -> int:
    """Number of surviving nodes: max(1, ceil(ratio * N))."""
    if not (0.0 < ratio <= 1.0):
        raise ConfigError(f"pool ratio must be in (0, 1], got {ratio}")
    return max(1, math.ceil(ratio * n_nodes))


def node_scores(h: Tensor, omega: Tensor) -> Tensor:
    """Project node features to a scalar per node: H @ omega / ||omega||."""
    h = T.constant(h)
    if h.ndim != 2 or omega.ndim != 1 or h.shape[1] != omega.shape[0]:
        raise ShapeMismatch(f"scores: features {h.shape} vs omega {omega.shape}")
    norm = float(np.linalg.norm(omega.data))
    if norm < 1e-12:
        raise ZeroProjection(f"projection vector norm {norm} is too small")
    return T.div(T.matmul(h, omega), T.norm2(omega))


def normalize_score_rows(scores: Tensor) -> Tensor:
    """Standardize each row (population std); rows with std below the floor
    become all-zero instead of exploding."""
    if scores.ndim != 2:
        raise ShapeMismatch(f"expected a row matrix of scores, got {scores.shape}")
    centered = scores - T.tmean(scores, axis=1, keepdims=True)
    std = T.sqrt(T.tmean(T.mul(centered, centered), axis=1, keepdims=True))
    live = (std.data >= STD_FLOOR).astype(np.float64)
    safe_std = T.clip(std, STD_FLOOR, np.inf)
    return T.mul(T.div(centered, safe_std), T.constant(live))


def normalize_scores(scores: Tensor) -> Tensor:
    """Standardize a single graph's score vector."""
    if scores.ndim != 1:
        raise ShapeMismatch(f"expected a score vector, got {scores.shape}")
    if scores.shape[0] < 2:
        raise ShapeMismatch("need at least 2 scores to standardize")
    rows = T.reshape(scores, (1, scores.shape[0]))
    return T.reshape(normalize_score_rows(rows), (scores.shape[0],))


def select_topk(normalized: np.ndarray, ratio: float) -> np.ndarray:
    """Indices of the k = max(1, ceil(ratio*N)) largest scores, ascending.

    Ties prefer the smaller index (stable sort on the negated scores).
    """
    values = np.asarray(normalized, dtype=np.float64).reshape(-1)
    k = keep_count(ratio, values.size)
    order = np.argsort(-values, kind="stable")[:k]
    return np.sort(order)


def select_topk_rows(normalized: np.ndarray, ratio: float) -> np.ndarray:
    """Row-wise top-k selection for a batch of graphs; each row ascending."""
    values = np.asarray(normalized, dtype=np.float64)
    k = keep_count(ratio, values.shape[1])
    order = np.argsort(-values, axis=1, kind="stable")[:, :k]
    return np.sort(order, axis=1)


def gate_and_select(h: Tensor, normalized: Tensor, flat_kept: np.ndarray) -> Tensor:
    """Multiply features by sigmoid(scores) per node and keep selected rows."""
    gates = T.reshape(T.sigmoid(normalized), (h.shape[0], 1))
    return T.gather(T.mul(h, gates), flat_kept)


def induced_edges(edges: list[Edge], kept: np.ndarray) -> list[Edge]:
    """Edges whose endpoints both survive, re-indexed to the compact range."""
    remap = {int(old): new for new, old in enumerate(kept)}
    out: list[Edge] = []
    for i, j, w in edges:
        if i in remap and j in remap:
            out.append((remap[i], remap[j], w))
    return out


def pool(
    h: Tensor,
    edges: list[Edge],
    normalized: Tensor,
    kept: np.ndarray,
) -> tuple[Tensor, list[Edge], PoolSelection]:
    """Gate features by sigmoid of standardized scores and keep selected nodes."""
    h = T.constant(h)
    kept = np.asarray(kept, dtype=np.intp)
    if kept.size == 0 or kept.min() < 0 or kept.max() >= h.shape[0]:
        raise ShapeMismatch(f"kept indices out of range for {h.shape[0]} nodes")
    pooled = gate_and_select(h, normalized, kept)
    gates = 1.0 / (1.0 + np.exp(-normalized.data))
    selection = PoolSelection(
        kept_indices=[int(i) for i in kept],
        gated_scores=[float(gates[i]) for i in kept],
        raw_scores=[float(s) for s in normalized.data],
    )
    return pooled, induced_edges(edges, kept), selection
