"""Network assembly and the batched forward pass.

Three convolution+pooling blocks, a readout per block, concatenated block
summaries, and a fully connected head producing one score per graph.  All
graphs share a node count, so a batch stacks node rows into one matrix per
layer and the per-graph adjacencies become one block-diagonal sparse matrix.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from . import tensor as T
from .errors import ConfigError, ShapeMismatch
from .pool import (
    PoolParams,
    PoolSelection,
    keep_count,
    gate_and_select,
    node_scores,
    normalize_score_rows,
    select_topk_rows,
)
from .readout import GaroParams, SeroParams, garo_rows, meanmax_rows, sero_rows
from .rgin import AGGREGATIONS, RginParams, conv_nodes, create_rgin_params
from .tensor import Tensor

READOUTS = ("sero", "garo", "meanmax")


@dataclass
class ModelConfig:
    layer_dims: tuple[int, int, int] = (32, 128, 256)
    pool_ratios: tuple[float, float, float] = (0.38, 0.38, 0.38)
    clusters_k: int = 7
    aggregation: str = "sum"
    readout: str = "sero"
    edge_keep_pct: float = 1.0
    head_hidden: int | None = None

    def __post_init__(self):
        self.layer_dims = tuple(int(d) for d in self.layer_dims)
        self.pool_ratios = tuple(float(r) for r in self.pool_ratios)
        if len(self.layer_dims) != 3:
            raise ConfigError(f"layer_dims: expected 3 blocks, got {self.layer_dims}")
        if any(d <= 0 for d in self.layer_dims):
            raise ConfigError(f"layer_dims: dims must be positive, got {self.layer_dims}")
        if len(self.pool_ratios) != 3:
            raise ConfigError(f"pool_ratios: expected 3 ratios, got {self.pool_ratios}")
        if any(not (0.0 < r <= 1.0) for r in self.pool_ratios):
            raise ConfigError(f"pool_ratios: ratios must be in (0, 1], got {self.pool_ratios}")
        if self.clusters_k < 1:
            raise ConfigError(f"clusters_k: must be >= 1, got {self.clusters_k}")
        if self.aggregation not in AGGREGATIONS:
            raise ConfigError(f"aggregation: {self.aggregation!r} not in {AGGREGATIONS}")
        if self.readout not in READOUTS:
            raise ConfigError(f"readout: {self.readout!r} not in {READOUTS}")
        if not (0.0 < self.edge_keep_pct <= 1.0):
            raise ConfigError(f"edge_keep_pct: must be in (0, 1], got {self.edge_keep_pct}")
        if self.head_hidden is not None and self.head_hidden < 1:
            raise ConfigError(f"head_hidden: must be >= 1 or null, got {self.head_hidden}")

    def to_dict(self) -> dict:
        return {
            "layer_dims": list(self.layer_dims),
            "pool_ratios": list(self.pool_ratios),
            "clusters_k": self.clusters_k,
            "aggregation": self.aggregation,
            "readout": self.readout,
            "edge_keep_pct": self.edge_keep_pct,
            "head_hidden": self.head_hidden,
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "ModelConfig":
        return cls(**payload)


@dataclass
class Block:
    conv: RginParams
    pool: PoolParams
    n_nodes_in: int
    n_nodes_out: int


@dataclass
class ForwardResult:
    pred: Tensor  # (B,) scores
    sorted_scores: list[Tensor]  # per layer, B x N_l sigmoid scores sorted descending
    selections: list[list[PoolSelection]] | None  # per layer, per graph
    attention: list[np.ndarray] | None  # per layer, B x k_l readout attention


def _block_diag_csr(blocks: np.ndarray) -> sp.csr_matrix:
    """Block-diagonal CSR from a stack of equal-size dense blocks (B, n, n)."""
    b, n, _ = blocks.shape
    data = blocks.reshape(b * n, n)
    indptr = np.arange(0, b * n * n + 1, n)
    offsets = np.repeat(np.arange(b) * n, n * n)
    indices = np.tile(np.tile(np.arange(n), n), b) + offsets
    return sp.csr_matrix((data.reshape(-1), indices, indptr), shape=(b * n, b * n))


class Model:
    """Assembled network with named parameters and a batched forward pass."""

    def __init__(self, config: ModelConfig, n_nodes: int = 53, seed: int = 0):
        if n_nodes < 2:
            raise ConfigError(f"n_nodes: need at least 2 nodes, got {n_nodes}")
        self.config = config
        self.n_nodes = n_nodes
        rng = np.random.default_rng(seed)

        def uniform(shape):
            fan_in, fan_out = (shape[1], shape[0]) if len(shape) == 2 else (shape[0], 1)
            bound = np.sqrt(6.0 / (fan_in + fan_out))
            return T.parameter(rng.uniform(-bound, bound, size=shape))

        self.blocks: list[Block] = []
        self.readouts: list[SeroParams | GaroParams | None] = []
        n_in, d_in = n_nodes, n_nodes
        summary_dim = 0
        for d_out, ratio in zip(config.layer_dims, config.pool_ratios):
            conv = create_rgin_params(n_in, d_in, d_out, config.clusters_k, rng)
            pool_p = PoolParams(omega=uniform((d_out,)), ratio=ratio)
            n_out = keep_count(ratio, n_in)
            self.blocks.append(Block(conv, pool_p, n_in, n_out))
            if config.readout == "sero":
                self.readouts.append(SeroParams(w1=uniform((d_out, d_out)), w2=uniform((n_out, d_out))))
                summary_dim += d_out
            elif config.readout == "garo":
                self.readouts.append(GaroParams(w_key=uniform((d_out, d_out)), w_query=uniform((d_out, d_out))))
                summary_dim += d_out
            else:
                self.readouts.append(None)
                summary_dim += 2 * d_out
            n_in, d_in = n_out, d_out
        self.summary_dim = summary_dim
        if config.head_hidden:
            self.head_w1 = uniform((config.head_hidden, summary_dim))
            self.head_b1 = T.parameter(np.zeros(config.head_hidden))
            self.head_w2 = uniform((1, config.head_hidden))
        else:
            self.head_w1 = None
            self.head_b1 = None
            self.head_w2 = uniform((1, summary_dim))
        self.head_b2 = T.parameter(np.zeros(1))

    # -- parameter registry ------------------------------------------------

    def parameters(self) -> dict[str, Tensor]:
        named: dict[str, Tensor] = {}
        for l_idx, block in enumerate(self.blocks):
            named.update(block.conv.tensors(f"block{l_idx}"))
            named[f"block{l_idx}.omega"] = block.pool.omega
            readout = self.readouts[l_idx]
            if isinstance(readout, SeroParams):
                named[f"readout{l_idx}.w1"] = readout.w1
                named[f"readout{l_idx}.w2"] = readout.w2
            elif isinstance(readout, GaroParams):
                named[f"readout{l_idx}.w_key"] = readout.w_key
                named[f"readout{l_idx}.w_query"] = readout.w_query
        if self.head_w1 is not None:
            named["head.w1"] = self.head_w1
            named["head.b1"] = self.head_b1
        named["head.w2"] = self.head_w2
        named["head.b2"] = self.head_b2
        return named

    def pool_params(self) -> list[PoolParams]:
        return [block.pool for block in self.blocks]

    # -- forward -------------------------------------------------------------

    def forward(
        self,
        features: np.ndarray,
        adjacency: np.ndarray,
        edge_mask: np.ndarray,
        record_selections: bool = False,
        record_attention: bool = False,
    ) -> ForwardResult:
        """Run a stacked batch: features/adjacency/mask are (B, N, N)."""
        if features.ndim != 3 or features.shape[1:] != (self.n_nodes, self.n_nodes):
            raise ShapeMismatch(
                f"batch features {features.shape} vs model nodes {self.n_nodes}"
            )
        n_graphs = features.shape[0]
        h = T.constant(features.reshape(n_graphs * self.n_nodes, self.n_nodes))
        adj_blocks = adjacency
        mask_blocks = edge_mask

        sorted_scores: list[Tensor] = []
        selections: list[list[PoolSelection]] | None = [] if record_selections else None
        attention: list[np.ndarray] | None = [] if record_attention else None
        summaries: list[Tensor] = []

        for block, readout in zip(self.blocks, self.readouts):
            n = block.n_nodes_in
            alpha = T.relu(
                T.tile_rows(T.transpose(block.conv.theta1), n_graphs)
            )  # (B*n) x K; identity encoding selects matching columns
            adj_sparse = _block_diag_csr(adj_blocks)
            degree = mask_blocks.sum(axis=2).reshape(-1).astype(np.float64)
            h = conv_nodes(h, alpha, adj_sparse, degree, block.conv, self.config.aggregation)

            raw = node_scores(h, block.pool.omega)
            score_rows = normalize_score_rows(T.reshape(raw, (n_graphs, n)))
            kept = select_topk_rows(score_rows.data, block.pool.ratio)  # B x k
            k = kept.shape[1]

            gate_rows = T.sigmoid(score_rows)
            desc = np.argsort(-score_rows.data, axis=1, kind="stable")
            flat_desc = (desc + np.arange(n_graphs)[:, None] * n).reshape(-1)
            flat_gates = T.reshape(gate_rows, (n_graphs * n,))
            sorted_scores.append(
                T.reshape(T.gather(flat_gates, flat_desc), (n_graphs, n))
            )

            flat_kept = (kept + np.arange(n_graphs)[:, None] * n).reshape(-1)
            score_flat = T.reshape(score_rows, (n_graphs * n,))
            h = gate_and_select(h, score_flat, flat_kept)

            if selections is not None:
                gates = gate_rows.data
                selections.append(
                    [
                        PoolSelection(
                            kept_indices=[int(i) for i in kept[g]],
                            gated_scores=[float(gates[g, i]) for i in kept[g]],
                            raw_scores=[float(v) for v in score_rows.data[g]],
                        )
                        for g in range(n_graphs)
                    ]
                )

            rows_idx = kept[:, :, None]
            cols_idx = kept[:, None, :]
            adj_blocks = np.take_along_axis(
                np.take_along_axis(adj_blocks, rows_idx, axis=1), cols_idx, axis=2
            )
            mask_blocks = np.take_along_axis(
                np.take_along_axis(mask_blocks, rows_idx, axis=1), cols_idx, axis=2
            )

            if isinstance(readout, SeroParams):
                summary, z_space = sero_rows(h, readout, n_graphs)
            elif isinstance(readout, GaroParams):
                summary, z_space = garo_rows(h, readout, n_graphs)
            else:
                summary = meanmax_rows(h, n_graphs)
                z_space = None
            summaries.append(summary)
            if attention is not None:
                attention.append(
                    z_space.data.copy() if z_space is not None else np.zeros((n_graphs, k))
                )

        combined = T.concat(summaries, axis=1)  # B x summary_dim
        if self.head_w1 is not None:
            combined = T.relu(T.matmul(combined, T.transpose(self.head_w1)) + self.head_b1)
        pred = T.matmul(combined, T.transpose(self.head_w2)) + self.head_b2
        return ForwardResult(
            pred=T.reshape(pred, (n_graphs,)),
            sorted_scores=sorted_scores,
            selections=selections,
            attention=attention,
        )

    def predict(self, features, adjacency, edge_mask) -> np.ndarray:
        return self.forward(features, adjacency, edge_mask).pred.data.copy()

    # -- persistence ---------------------------------------------------------

    def save(self, path: str | Path) -> None:
        T.save_checkpoint(self.parameters(), path)

    def load(self, path: str | Path) -> None:
        T.load_checkpoint_into(self.parameters(), path)

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {name: t.data.copy() for name, t in self.parameters().items()}

    def load_state_arrays(self, state: dict[str, np.ndarray]) -> None:
        params = self.parameters()
        for name, values in state.items():
            params[name].data[...] = values


def assemble(config: ModelConfig, n_nodes: int = 53, seed: int = 0) -> Model:
    """Build the 3-block network for graphs of ``n_nodes`` regions."""
    return Model(config, n_nodes=n_nodes, seed=seed)
