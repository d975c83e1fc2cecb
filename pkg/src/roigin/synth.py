"""Synthetic subjects with a planted connectivity-to-score signal.

A chosen set of salient regions shares a latent time course whose
subject-specific loading sets the strength of their pairwise correlations;
the score is a function of exactly those correlation entries plus planted
age and site effects and optional noise.  Ground truth is therefore known
for learning, covariate-regression, and interpretability tests.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import GraphDataset, from_graphs
from .errors import ConfigError, ShapeMismatch
from .fnc import FncMatrix, TimeSeries, build_graph, pearson_fnc

BACKGROUND_LOADING = 0.15
LOADING_RANGE = (0.25, 0.95)
AGE_GRID = tuple(np.linspace(9.0, 11.0, 9))
AGE_EFFECT = 1.5  # score units per year away from the grid center
SITE_SHIFTS = (-2.0, -0.8, 0.7, 2.1)


@dataclass
class SignalSpec:
    """What the generator plants: which regions carry signal and how the
    score reads it out."""

    salient_rois: tuple[int, ...] = (3, 7, 12, 21, 33, 45)
    weights: tuple[float, ...] | None = None  # one per salient pair; default 1
    noise_sd: float = 0.0
    nonlinearity: str = "linear"

    def __post_init__(self):
        self.salient_rois = tuple(sorted(int(r) for r in self.salient_rois))
        if len(set(self.salient_rois)) != len(self.salient_rois):
            raise ConfigError("salient_rois: duplicate region indices")
        if self.noise_sd < 0:
            raise ConfigError(f"noise_sd: must be >= 0, got {self.noise_sd}")
        if self.nonlinearity not in ("linear", "tanh"):
            raise ConfigError(f"nonlinearity: {self.nonlinearity!r}")
        n_pairs = len(self.salient_pairs())
        if self.weights is not None:
            self.weights = tuple(float(w) for w in self.weights)
            if len(self.weights) != n_pairs:
                raise ConfigError(
                    f"weights: {len(self.weights)} given for {n_pairs} salient pairs"
                )

    def salient_pairs(self) -> list[tuple[int, int]]:
        rois = self.salient_rois
        return [(rois[a], rois[b]) for a in range(len(rois)) for b in range(a + 1, len(rois))]

    def pair_weights(self) -> np.ndarray:
        n_pairs = len(self.salient_pairs())
        if self.weights is None:
            return np.ones(n_pairs)
        return np.asarray(self.weights)

    def to_dict(self) -> dict:
        return {
            "salient_rois": list(self.salient_rois),
            "weights": list(self.weights) if self.weights is not None else None,
            "noise_sd": self.noise_sd,
            "nonlinearity": self.nonlinearity,
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "SignalSpec":
        return cls(
            salient_rois=tuple(payload["salient_rois"]),
            weights=tuple(payload["weights"]) if payload.get("weights") else None,
            noise_sd=payload.get("noise_sd", 0.0),
            nonlinearity=payload.get("nonlinearity", "linear"),
        )


@dataclass
class SynthDataset:
    series: list[TimeSeries]
    fnc: list[FncMatrix]
    scores: np.ndarray
    covariates: dict[str, list[str]]
    spec: SignalSpec
    seed: int
    n_regions: int
    t_samples: int
    subject_ids: list[str] = field(default_factory=list)

    def __post_init__(self):
        if not self.subject_ids:
            self.subject_ids = [f"sub-{i:04d}" for i in range(len(self.series))]

    def __len__(self) -> int:
        return len(self.series)


def signal_value(spec: SignalSpec, fnc_values: np.ndarray) -> float:
    """Score contribution of one subject's connectivity: weighted sum of the
    (optionally tanh-squashed) salient-pair entries."""
    pairs = spec.salient_pairs()
    entries = np.asarray([fnc_values[i, j] for i, j in pairs])
    if spec.nonlinearity == "tanh":
        entries = np.tanh(entries)
    return float(entries @ spec.pair_weights())


def generate(
    n_subjects: int,
    n_regions: int = 53,
    t_samples: int = 200,
    spec: SignalSpec | None = None,
    seed: int = 0,
) -> SynthDataset:
    """Draw a dataset; deterministic per seed, with per-subject derived seeds
    so subjects could be generated independently."""
    spec = spec or SignalSpec()
    if n_subjects < 1:
        raise ConfigError(f"n_subjects: must be >= 1, got {n_subjects}")
    if t_samples < n_regions:
        raise ConfigError(
            f"t_samples: need at least n_regions samples, got {t_samples} < {n_regions}"
        )
    if spec.salient_rois and (min(spec.salient_rois) < 0 or max(spec.salient_rois) >= n_regions):
        raise ConfigError(
            f"salient_rois: indices must lie in [0, {n_regions}), got {spec.salient_rois}"
        )
    salient = set(spec.salient_rois)
    lo, hi = LOADING_RANGE
    background_rest = np.sqrt(1.0 - BACKGROUND_LOADING**2)

    series: list[TimeSeries] = []
    matrices: list[FncMatrix] = []
    scores = np.zeros(n_subjects)
    ages: list[str] = []
    sites: list[str] = []
    for subject in range(n_subjects):
        rng = np.random.default_rng([seed, subject])
        loading = rng.uniform(lo, hi)
        shared = rng.standard_normal(t_samples)
        background = rng.standard_normal(t_samples)
        noise = rng.standard_normal((n_regions, t_samples))
        values = np.empty((n_regions, t_samples))
        rest = np.sqrt(max(1.0 - loading**2 - BACKGROUND_LOADING**2, 1e-6))
        for region in range(n_regions):
            if region in salient:
                values[region] = (
                    loading * shared
                    + BACKGROUND_LOADING * background
                    + rest * noise[region]
                )
            else:
                values[region] = (
                    BACKGROUND_LOADING * background + background_rest * noise[region]
                )
        ts = TimeSeries(values)
        fnc = pearson_fnc(ts)
        age = float(rng.choice(np.asarray(AGE_GRID)))
        site = int(rng.integers(0, len(SITE_SHIFTS)))
        scores[subject] = (
            signal_value(spec, fnc.values)
            + AGE_EFFECT * (age - 10.0)
            + SITE_SHIFTS[site]
            + spec.noise_sd * rng.standard_normal()
        )
        series.append(ts)
        matrices.append(fnc)
        ages.append(repr(age))
        sites.append(f"site_{site}")

    dataset = SynthDataset(
        series=series,
        fnc=matrices,
        scores=scores,
        covariates={"age": ages, "site": sites},
        spec=spec,
        seed=seed,
        n_regions=n_regions,
        t_samples=t_samples,
    )
    _check_signal_detectable(dataset)
    return dataset


def _check_signal_detectable(dataset: SynthDataset) -> None:
    """The planted pairs must carry visibly stronger correlations on average."""
    spec = dataset.spec
    if len(spec.salient_rois) < 2:
        return
    n = dataset.n_regions
    pair_set = set(spec.salient_pairs())
    salient_mask = np.zeros((n, n), dtype=bool)
    for i, j in pair_set:
        salient_mask[i, j] = True
    iu, ju = np.triu_indices(n, k=1)
    stacked = np.abs(np.stack([m.values for m in dataset.fnc]))
    mean_abs = stacked.mean(axis=0)
    salient_vals = mean_abs[iu, ju][salient_mask[iu, ju]]
    other_vals = mean_abs[iu, ju][~salient_mask[iu, ju]]
    if salient_vals.mean() <= other_vals.mean():
        raise ShapeMismatch(
            "planted signal is not detectable: salient pairs are no stronger "
            "than background"
        )


def to_graph_dataset(dataset: SynthDataset, edge_keep_pct: float = 1.0) -> GraphDataset:
    """Stack generated subjects into the training container."""
    graphs = [
        build_graph(fnc, edge_keep_pct, label=score)
        for fnc, score in zip(dataset.fnc, dataset.scores)
    ]
    return from_graphs(graphs, dataset.subject_ids, dict(dataset.covariates))


def pair_feature_matrix(features: np.ndarray, spec: SignalSpec) -> np.ndarray:
    """Salient-pair connectivity entries per subject from stacked FNC rows."""
    pairs = spec.salient_pairs()
    if not pairs:
        return np.zeros((features.shape[0], 0))
    rows = np.asarray([p[0] for p in pairs])
    cols = np.asarray([p[1] for p in pairs])
    return features[:, rows, cols]


def write_dataset(dataset: SynthDataset, out_dir: str | Path) -> None:
    """Emit the same CSV layout the ingestion path consumes."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for sid, ts in zip(dataset.subject_ids, dataset.series):
        lines = [",".join(repr(float(v)) for v in row) for row in ts.values]
        (out / f"{sid}.csv").write_text("\n".join(lines) + "\n")
    header = "subject_id,score,age,site"
    rows = [header]
    for idx, sid in enumerate(dataset.subject_ids):
        rows.append(
            f"{sid},{float(dataset.scores[idx])!r},"
            f"{dataset.covariates['age'][idx]},{dataset.covariates['site'][idx]}"
        )
    (out / "labels.csv").write_text("\n".join(rows) + "\n")
    manifest = {
        "seed": dataset.seed,
        "n_subjects": len(dataset),
        "n_regions": dataset.n_regions,
        "t_samples": dataset.t_samples,
        "signal": dataset.spec.to_dict(),
    }
    (out / "signal_spec.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
