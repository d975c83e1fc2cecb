"""Salient-region extraction: how often each region survives the first
pooling layer across a held-out set, and which regions clear a frequency
threshold."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import GraphDataset
from .errors import ConfigError
from .model import Model
from .pool import PoolSelection
from .trainer import batch_indices


@dataclass
class RoiFrequency:
    roi_id: int
    label: str
    freq: float

    def to_dict(self) -> dict:
        return {"roi_id": self.roi_id, "label": self.label, "freq": self.freq}


def collect_selections(
    model: Model, dataset: GraphDataset, batch_size: int = 64
) -> list[list[PoolSelection]]:
    """Per-layer, per-subject pooling records over a dataset."""
    per_layer: list[list[PoolSelection]] = [[] for _ in model.blocks]
    for idx in batch_indices(len(dataset), batch_size):
        result = model.forward(
            dataset.features[idx],
            dataset.adjacency[idx],
            dataset.edge_mask[idx],
            record_selections=True,
        )
        for layer, records in enumerate(result.selections):
            per_layer[layer].extend(records)
    return per_layer


def roi_frequencies(
    model: Model,
    dataset: GraphDataset,
    batch_size: int = 64,
    labels: dict[int, str] | None = None,
) -> list[RoiFrequency]:
    """Fraction of subjects whose first pooling layer kept each region."""
    if len(dataset) == 0:
        raise ConfigError("cannot interpret an empty dataset")
    selections = collect_selections(model, dataset, batch_size)[0]
    counts = np.zeros(model.n_nodes)
    for record in selections:
        counts[record.kept_indices] += 1.0
    freqs = counts / len(dataset)
    labels = labels or {}
    return [
        RoiFrequency(roi_id=r, label=labels.get(r, f"roi_{r}"), freq=float(freqs[r]))
        for r in range(model.n_nodes)
    ]


def top_rois(freqs: list[RoiFrequency], threshold: float) -> list[RoiFrequency]:
    """Regions at or above the frequency threshold, strongest first."""
    if not (0.0 < threshold <= 1.0):
        raise ConfigError(f"threshold must be in (0, 1], got {threshold}")
    hits = [f for f in freqs if f.freq >= threshold]
    return sorted(hits, key=lambda f: (-f.freq, f.roi_id))


def read_roi_labels(path: str | Path) -> dict[int, str]:
    """Optional sidecar: roi_id,label per row."""
    labels: dict[int, str] = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or "roi_id" not in reader.fieldnames:
            raise ConfigError(f"{path}: expected roi_id,label columns")
        for row in reader:
            labels[int(row["roi_id"])] = row.get("label", "") or f"roi_{row['roi_id']}"
    return labels


def write_frequencies_csv(freqs: list[RoiFrequency], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["roi_id", "label", "freq"])
        for f in freqs:
            writer.writerow([f.roi_id, f.label, repr(f.freq)])


def write_top_rois_json(rois: list[RoiFrequency], path: str | Path) -> None:
    Path(path).write_text(
        json.dumps([r.to_dict() for r in rois], indent=2) + "\n"
    )


def write_selections_json(
    selections: list[list[PoolSelection]],
    subject_ids: list[str],
    path: str | Path,
) -> None:
    """Per-subject pooling records for every layer (layer 0 first)."""
    payload = {
        sid: [layer[s_idx].to_dict() for layer in selections]
        for s_idx, sid in enumerate(subject_ids)
    }
    Path(path).write_text(json.dumps(payload, indent=2) + "\n")
