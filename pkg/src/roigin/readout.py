"""Graph-level readouts: squeeze-excitation and key-query attention over
nodes, plus the plain mean+max summary.

The attention readouts follow the feature-major convention (H is D x N, one
column per node); the batched row-major helpers used by the model share the
same arithmetic.  The squeeze-excitation readout indexes nodes directly
through its second weight matrix, so it is deliberately sensitive to node
order; the key-query readout is permutation invariant.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import EmptyInput, ShapeMismatch
from .tensor import Tensor


@dataclass
class SeroParams:
    """Squeeze-excitation weights: w1 is D x D, w2 is N x D (node-indexed)."""

    w1: Tensor
    w2: Tensor

    @property
    def n_nodes(self) -> int:
        return self.w2.shape[0]


@dataclass
class GaroParams:
    """Key/query embeddings, both D x D."""

    w_key: Tensor
    w_query: Tensor


def _check_feature_major(h: Tensor) -> None:
    if h.ndim != 2:
        raise ShapeMismatch(f"readout expects a D x N matrix, got {h.shape}")
    if not np.isfinite(h.data).all():
        raise ShapeMismatch("readout input must be finite")


# -- row-major batched cores (stacked graphs of equal node count) -----------


def sero_rows(h: Tensor, params: SeroParams, n_graphs: int) -> tuple[Tensor, Tensor]:
    """h: (G*n) x D stacked node rows -> (G x D summaries, G x n attentions)."""
    n = params.n_nodes
    if h.shape[0] != n_graphs * n:
        raise ShapeMismatch(
            f"sero: {h.shape[0]} rows vs {n_graphs} graphs of {n} nodes"
        )
    squeezed = T.segment_mean(h, n_graphs)  # G x D
    excited = T.relu(T.matmul(squeezed, T.transpose(params.w1)))
    z_space = T.sigmoid(T.matmul(excited, T.transpose(params.w2)))  # G x n
    gates = T.reshape(z_space, (n_graphs * n, 1))
    summary = T.segment_sum(T.mul(h, gates), n_graphs)
    return summary, z_space


def garo_rows(h: Tensor, params: GaroParams, n_graphs: int) -> tuple[Tensor, Tensor]:
    """h: (G*n) x D stacked node rows -> (G x D summaries, G x n attentions)."""
    rows, dim = h.shape
    if rows % n_graphs:
        raise ShapeMismatch(f"garo: {rows} rows vs {n_graphs} graphs")
    n = rows // n_graphs
    keys = T.matmul(h, T.transpose(params.w_key))  # (G*n) x D
    query = T.matmul(T.segment_mean(h, n_graphs), T.transpose(params.w_query))  # G x D
    logits = T.tsum(T.mul(keys, T.expand_rows(query, n)), axis=1, keepdims=True)
    z_space = T.sigmoid(T.div(logits, math.sqrt(dim)))  # (G*n) x 1
    summary = T.segment_sum(T.mul(h, z_space), n_graphs)
    return summary, T.reshape(z_space, (n_graphs, n))


def meanmax_rows(h: Tensor, n_graphs: int) -> Tensor:
    """Mean and max per feature over each graph's nodes, concatenated.

    The mean sums values in sorted order so the summary is bit-identical
    under node relabeling.
    """
    mean_part = T.segment_mean(h, n_graphs, sort_values=True)
    max_part = T.segment_max(h, n_graphs)
    return T.concat([mean_part, max_part], axis=1)


# -- feature-major single-graph surface -------------------------------------


def sero(h: Tensor, params: SeroParams) -> tuple[Tensor, Tensor]:
    """Squeeze-excitation readout of a D x N graph.

    Returns the D-vector summary and the N-vector node attention.
    """
    h = T.constant(h)
    _check_feature_major(h)
    d, n = h.shape
    if params.w2.shape != (n, d) or params.w1.shape != (d, d):
        raise ShapeMismatch(
            f"sero: H {h.shape} vs w1 {params.w1.shape}, w2 {params.w2.shape}"
        )
    summary, z_space = sero_rows(T.transpose(h), params, 1)
    return T.reshape(summary, (d,)), T.reshape(z_space, (n,))


def garo(h: Tensor, params: GaroParams) -> tuple[Tensor, Tensor]:
    """Key-query attention readout of a D x N graph."""
    h = T.constant(h)
    _check_feature_major(h)
    d, n = h.shape
    if params.w_key.shape != (d, d) or params.w_query.shape != (d, d):
        raise ShapeMismatch(
            f"garo: H {h.shape} vs w_key {params.w_key.shape}, "
            f"w_query {params.w_query.shape}"
        )
    summary, z_space = garo_rows(T.transpose(h), params, 1)
    return T.reshape(summary, (d,)), T.reshape(z_space, (n,))


def meanmax(h: Tensor) -> Tensor:
    """Concatenated per-feature mean and max of a D x N graph (2D vector)."""
    h = T.constant(h)
    _check_feature_major(h)
    d, _ = h.shape
    return T.reshape(meanmax_rows(T.transpose(h), 1), (2 * d,))


def concat_layers(summaries: list[Tensor]) -> Tensor:
    """Concatenate per-block summary vectors in block order."""
    if not summaries:
        raise EmptyInput("no summaries to concatenate")
    return T.concat(summaries, axis=0)
