"""On-disk and in-memory dataset of connectivity graphs.

All graphs in a dataset share the same node count, so node features stack
into a dense S x N x N block; the edge-presence mask is kept separately from
the weights because a retained zero-correlation edge still counts as a
neighbor.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ShapeMismatch
from .fnc import FncGraph


@dataclass
class GraphDataset:
    features: np.ndarray  # S x N x N node-feature rows
    adjacency: np.ndarray  # S x N x N signed edge weights, 0 where absent
    edge_mask: np.ndarray  # S x N x N boolean edge presence
    labels: np.ndarray  # S raw target scores
    subject_ids: list[str]
    covariates: dict[str, list[str]] = field(default_factory=dict)

    def __post_init__(self):
        s = self.features.shape[0]
        if not (self.adjacency.shape == self.features.shape == self.edge_mask.shape):
            raise ShapeMismatch(
                f"feature/adjacency/mask shapes differ: {self.features.shape}, "
                f"{self.adjacency.shape}, {self.edge_mask.shape}"
            )
        if self.labels.shape != (s,) or len(self.subject_ids) != s:
            raise ShapeMismatch(f"{s} graphs but {self.labels.shape} labels")
        for name, col in self.covariates.items():
            if len(col) != s:
                raise ShapeMismatch(f"covariate {name!r} has {len(col)} rows for {s}")

    def __len__(self) -> int:
        return self.features.shape[0]

    @property
    def n_nodes(self) -> int:
        return self.features.shape[1]

    def subset(self, indices: np.ndarray) -> "GraphDataset":
        idx = np.asarray(indices, dtype=np.intp)
        return GraphDataset(
            features=self.features[idx],
            adjacency=self.adjacency[idx],
            edge_mask=self.edge_mask[idx],
            labels=self.labels[idx],
            subject_ids=[self.subject_ids[i] for i in idx],
            covariates={k: [v[i] for i in idx] for k, v in self.covariates.items()},
        )

    def with_labels(self, labels: np.ndarray) -> "GraphDataset":
        return GraphDataset(
            features=self.features,
            adjacency=self.adjacency,
            edge_mask=self.edge_mask,
            labels=np.asarray(labels, dtype=np.float64),
            subject_ids=self.subject_ids,
            covariates=self.covariates,
        )


def from_graphs(
    graphs: list[FncGraph],
    subject_ids: list[str],
    covariates: dict[str, list[str]] | None = None,
) -> GraphDataset:
    if not graphs:
        raise ShapeMismatch("no graphs to stack")
    n = graphs[0].n_nodes
    s = len(graphs)
    features = np.zeros((s, n, n))
    adjacency = np.zeros((s, n, n))
    mask = np.zeros((s, n, n), dtype=bool)
    labels = np.zeros(s)
    for g_idx, graph in enumerate(graphs):
        if graph.n_nodes != n:
            raise ShapeMismatch(f"graph {g_idx} has {graph.n_nodes} nodes, expected {n}")
        features[g_idx] = graph.node_features
        weights, present = graph.adjacency()
        adjacency[g_idx] = weights
        mask[g_idx] = present
        labels[g_idx] = graph.label
    return GraphDataset(features, adjacency, mask, labels, list(subject_ids), covariates or {})


def save_store(dataset: GraphDataset, store_dir: str | Path, meta: dict | None = None) -> None:
    store = Path(store_dir)
    store.mkdir(parents=True, exist_ok=True)
    cov_names = sorted(dataset.covariates)
    cov_values = np.asarray(
        [dataset.covariates[c] for c in cov_names], dtype=str
    ) if cov_names else np.zeros((0, len(dataset)), dtype=str)
    np.savez_compressed(
        store / "graphs.npz",
        features=dataset.features,
        adjacency=dataset.adjacency,
        edge_mask=dataset.edge_mask,
        labels=dataset.labels,
        subject_ids=np.asarray(dataset.subject_ids, dtype=str),
        covariate_names=np.asarray(cov_names, dtype=str),
        covariate_values=cov_values,
    )
    (store / "meta.json").write_text(json.dumps(meta or {}, indent=2, sort_keys=True) + "\n")


def rethreshold(dataset: GraphDataset, keep_pct: float) -> GraphDataset:
    """Rebuild the edge set at a different keep fraction.

    Node features are the full connectivity rows, so any threshold can be
    reapplied from them exactly.
    """
    from .fnc import FncMatrix, threshold_edges

    s, n = len(dataset), dataset.n_nodes
    adjacency = np.zeros((s, n, n))
    mask = np.zeros((s, n, n), dtype=bool)
    for g in range(s):
        fnc = FncMatrix(dataset.features[g])
        for i, j, w in threshold_edges(fnc, keep_pct):
            adjacency[g, i, j] = w
            mask[g, i, j] = True
    return GraphDataset(
        features=dataset.features,
        adjacency=adjacency,
        edge_mask=mask,
        labels=dataset.labels,
        subject_ids=dataset.subject_ids,
        covariates=dataset.covariates,
    )


def load_store(store_dir: str | Path) -> GraphDataset:
    path = Path(store_dir) / "graphs.npz"
    with np.load(path, allow_pickle=False) as archive:
        cov_names = [str(c) for c in archive["covariate_names"]]
        cov_values = archive["covariate_values"]
        covariates = {
            name: [str(v) for v in cov_values[c_idx]]
            for c_idx, name in enumerate(cov_names)
        }
        return GraphDataset(
            features=archive["features"],
            adjacency=archive["adjacency"],
            edge_mask=archive["edge_mask"].astype(bool),
            labels=archive["labels"],
            subject_ids=[str(s) for s in archive["subject_ids"]],
            covariates=covariates,
        )
