"""Functional-connectivity graph construction.

A subject enters as an N-region time-series matrix (or a precomputed
correlation matrix), becomes an N x N Pearson matrix, and leaves as a graph
whose node features are the full correlation rows and whose edge set keeps
the strongest-magnitude off-diagonal pairs.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import BadEdgeIndex, InvalidThreshold, NonFinite, ShapeMismatch, ZeroVariance

Edge = tuple[int, int, float]


@dataclass
class TimeSeries:
    """Signal matrix for one subject: N regions x T samples."""

    values: np.ndarray
    region_ids: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise ShapeMismatch(f"time series must be 2-D, got {self.values.shape}")
        n, t = self.values.shape
        if n < 2:
            raise ShapeMismatch(f"need at least 2 regions, got {n}")
        if t < 3:
            raise ShapeMismatch(f"need at least 3 samples, got {t}")
        if not self.region_ids:
            self.region_ids = [f"roi_{i}" for i in range(n)]
        if len(self.region_ids) != n:
            raise ShapeMismatch(
                f"{len(self.region_ids)} region ids for {n} regions"
            )
        bad = np.argwhere(~np.isfinite(self.values))
        if bad.size:
            raise NonFinite(f"non-finite sample at index {(int(bad[0][0]), int(bad[0][1]))}")
        variances = self.values.var(axis=1)
        flat = np.flatnonzero(variances == 0.0)
        if flat.size:
            raise ZeroVariance(f"region {self.region_ids[flat[0]]} is constant")

    @property
    def n_regions(self) -> int:
        return self.values.shape[0]


@dataclass
class FncMatrix:
    """Symmetric Pearson-correlation matrix with unit diagonal."""

    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        v = self.values
        if v.ndim != 2 or v.shape[0] != v.shape[1]:
            raise ShapeMismatch(f"connectivity matrix must be square, got {v.shape}")
        if not np.isfinite(v).all():
            raise NonFinite("connectivity matrix has non-finite entries")
        if not np.array_equal(np.diag(v), np.ones(v.shape[0])):
            raise ShapeMismatch("connectivity diagonal must be exactly 1")
        if np.abs(v).max() > 1.0:
            raise ShapeMismatch("correlations must lie in [-1, 1]")
        if not np.allclose(v, v.T, atol=1e-12, rtol=0.0):
            raise ShapeMismatch("connectivity matrix must be symmetric")

    @property
    def n_regions(self) -> int:
        return self.values.shape[0]


@dataclass
class FncGraph:
    """One subject's graph: full-row node features plus thresholded edges."""

    node_features: np.ndarray  # N x N, row i = correlations of node i
    edges: list[Edge]  # both directions per retained pair
    onehot: np.ndarray  # N x N identity (node position encoding)
    label: float = 0.0

    @property
    def n_nodes(self) -> int:
        return self.node_features.shape[0]

    def adjacency(self) -> tuple[np.ndarray, np.ndarray]:
        """Dense weighted adjacency and boolean edge-presence mask."""
        n = self.n_nodes
        weights = np.zeros((n, n))
        present = np.zeros((n, n), dtype=bool)
        for i, j, w in self.edges:
            weights[i, j] = w
            present[i, j] = True
        return weights, present


def pearson_fnc(ts: TimeSeries) -> FncMatrix:
    """Pairwise Pearson correlation of region time series.

    The diagonal is set to 1 by definition rather than computed, which avoids
    0/0 on rows that are constant after centering in exact arithmetic.
    """
    x = ts.values
    centered = x - x.mean(axis=1, keepdims=True)
    norms = np.sqrt((centered * centered).sum(axis=1))
    unit = centered / norms[:, None]
    corr = unit @ unit.T
    corr = 0.5 * (corr + corr.T)
    np.clip(corr, -1.0, 1.0, out=corr)
    np.fill_diagonal(corr, 1.0)
    return FncMatrix(corr)


def keep_count(keep_pct: float, n_pairs: int) -> int:
    if not (0.0 < keep_pct <= 1.0):
        raise InvalidThreshold(f"keep fraction must be in (0, 1], got {keep_pct}")
    return math.ceil(keep_pct * n_pairs)


def threshold_edges(fnc: FncMatrix, keep_pct: float) -> list[Edge]:
    """Retain the strongest-|correlation| off-diagonal pairs as directed edges.

    Keeps ceil(keep_pct * N(N-1)/2) undirected pairs ranked by |value|, ties
    broken by ascending (i, j); each kept pair is emitted in both directions
    with its signed weight.
    """
    v = fnc.values
    n = v.shape[0]
    iu, ju = np.triu_indices(n, k=1)
    k = keep_count(keep_pct, iu.size)
    order = np.lexsort((ju, iu, -np.abs(v[iu, ju])))
    sel = order[:k]
    edges: list[Edge] = []
    for i, j in zip(iu[sel], ju[sel]):
        w = float(v[i, j])
        edges.append((int(i), int(j), w))
        edges.append((int(j), int(i), w))
    return edges


def build_graph(fnc: FncMatrix, keep_pct: float, label: float = 0.0) -> FncGraph:
    """Assemble a graph: unthresholded correlation rows as node features,
    thresholding applied to the edge set only, no self-edges."""
    return FncGraph(
        node_features=fnc.values.copy(),
        edges=threshold_edges(fnc, keep_pct),
        onehot=np.eye(fnc.n_regions),
        label=float(label),
    )


def validate_edges(edges: list[Edge], n_nodes: int) -> None:
    for i, j, _ in edges:
        if not (0 <= i < n_nodes and 0 <= j < n_nodes):
            raise BadEdgeIndex(f"edge ({i}, {j}) outside 0..{n_nodes - 1}")
        if i == j:
            raise BadEdgeIndex(f"self-edge at node {i}")


# -- CSV interfaces ---------------------------------------------------------


def _is_number(token: str) -> bool:
    try:
        float(token)
        return True
    except ValueError:
        return False


def read_subject_csv(path: str | Path) -> np.ndarray:
    """Load one subject's numeric matrix; a non-numeric first row is a header."""
    rows: list[list[str]] = []
    with open(path, newline="") as fh:
        for record in csv.reader(fh):
            if record:
                rows.append(record)
    if not rows:
        raise ShapeMismatch(f"{path}: empty file")
    if not all(_is_number(tok) for tok in rows[0]):
        rows = rows[1:]
    if not rows:
        raise ShapeMismatch(f"{path}: header only, no data")
    return np.asarray([[float(tok) for tok in row] for row in rows])


def looks_like_fnc(matrix: np.ndarray) -> bool:
    """Heuristic for precomputed-connectivity input: square, unit diagonal,
    symmetric, bounded."""
    if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
        return False
    if not np.allclose(np.diag(matrix), 1.0, atol=1e-9):
        return False
    if np.abs(matrix).max() > 1.0 + 1e-9:
        return False
    return np.allclose(matrix, matrix.T, atol=1e-9)


def load_subject(path: str | Path, kind: str = "auto") -> FncMatrix:
    """Read a subject file as either time series or precomputed connectivity."""
    matrix = read_subject_csv(path)
    if kind == "auto":
        kind = "fnc" if looks_like_fnc(matrix) else "timeseries"
    if kind == "fnc":
        sym = 0.5 * (matrix + matrix.T)
        np.clip(sym, -1.0, 1.0, out=sym)
        np.fill_diagonal(sym, 1.0)
        return FncMatrix(sym)
    if kind == "timeseries":
        return pearson_fnc(TimeSeries(matrix))
    raise ValueError(f"unknown subject kind: {kind!r}")


@dataclass
class LabelTable:
    """Parsed labels file: subject_id, score, and covariate columns."""

    subject_ids: list[str]
    scores: np.ndarray
    covariates: dict[str, list[str]]

    def score_for(self, subject_id: str) -> float:
        return float(self.scores[self.subject_ids.index(subject_id)])


def read_labels_csv(path: str | Path, target: str = "score") -> LabelTable:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or "subject_id" not in reader.fieldnames:
            raise ShapeMismatch(f"{path}: labels file needs a subject_id column")
        if target not in reader.fieldnames:
            raise ShapeMismatch(f"{path}: no {target!r} column")
        records = list(reader)
    ids = [r["subject_id"] for r in records]
    scores = np.asarray([float(r[target]) for r in records])
    covariate_names = [
        c for c in records[0].keys() if c not in ("subject_id", target)
    ] if records else []
    covariates = {c: [r[c] for r in records] for c in covariate_names}
    return LabelTable(ids, scores, covariates)
