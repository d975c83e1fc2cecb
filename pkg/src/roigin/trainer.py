"""Training loop, data splitting, covariate regression, and evaluation.

Runs are deterministic given a seed: the split shuffle, parameter init, and
per-epoch batch order all derive from it, and the optimizer walks parameters
in a fixed order.
"""

from __future__ import annotations

import csv
import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.linalg

from .data import GraphDataset
from .errors import ConfigError, DegenerateVarianceWarning, Diverged, RankDeficientWarning
from .losses import LossWeights, loss_breakdown
from .model import Model, ModelConfig, assemble
from .tensor import Tensor


@dataclass
class TrainConfig:
    lr0: float = 0.001
    lr_decay_every: int = 30
    lr_decay_factor: float = 0.5
    epochs: int = 60
    batch_size: int = 64
    lambda1: float = 0.1
    seeds: tuple[int, ...] = (0, 1, 2, 3)
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    unit_loss_mode: str = "signed"
    split_fractions: tuple[float, float, float] = (0.70, 0.15, 0.15)

    def __post_init__(self):
        self.seeds = tuple(int(s) for s in self.seeds)
        self.split_fractions = tuple(float(f) for f in self.split_fractions)
        if self.lr0 <= 0:
            raise ConfigError(f"lr0: must be positive, got {self.lr0}")
        if self.epochs < 0:
            raise ConfigError(f"epochs: must be >= 0, got {self.epochs}")
        if self.lr_decay_every < 1:
            raise ConfigError(f"lr_decay_every: must be >= 1, got {self.lr_decay_every}")
        if not (0.0 < self.lr_decay_factor <= 1.0):
            raise ConfigError(
                f"lr_decay_factor: must be in (0, 1], got {self.lr_decay_factor}"
            )
        if self.batch_size < 1:
            raise ConfigError(f"batch_size: must be >= 1, got {self.batch_size}")
        if abs(sum(self.split_fractions) - 1.0) > 1e-9:
            raise ConfigError(
                f"split_fractions: must sum to 1, got {self.split_fractions}"
            )
        if self.unit_loss_mode not in ("signed", "abs"):
            raise ConfigError(f"unit_loss_mode: {self.unit_loss_mode!r}")

    def to_dict(self) -> dict:
        return {
            "lr0": self.lr0,
            "lr_decay_every": self.lr_decay_every,
            "lr_decay_factor": self.lr_decay_factor,
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "lambda1": self.lambda1,
            "seeds": list(self.seeds),
            "adam_beta1": self.adam_beta1,
            "adam_beta2": self.adam_beta2,
            "adam_eps": self.adam_eps,
            "unit_loss_mode": self.unit_loss_mode,
            "split_fractions": list(self.split_fractions),
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "TrainConfig":
        return cls(**payload)

    def learning_rate(self, epoch: int) -> float:
        """Step schedule: the rate halves (by the decay factor) at epochs
        lr_decay_every, 2*lr_decay_every, ...; ``epoch`` is 1-indexed."""
        return self.lr0 * self.lr_decay_factor ** (epoch // self.lr_decay_every)


def split(
    n_subjects: int,
    fractions: tuple[float, float, float] = (0.70, 0.15, 0.15),
    seed: int = 0,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Deterministic disjoint exhaustive train/val/test index split."""
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ConfigError(f"split fractions must sum to 1, got {fractions}")
    order = np.random.default_rng(seed).permutation(n_subjects)
    n_train = int(np.floor(fractions[0] * n_subjects))
    n_val = int(np.floor(fractions[1] * n_subjects))
    return order[:n_train], order[n_train : n_train + n_val], order[n_train + n_val :]


# -- covariate regression ----------------------------------------------------


def _is_numeric_column(values: list[str]) -> bool:
    try:
        for v in values:
            float(v)
        return True
    except (TypeError, ValueError):
        return False


def design_matrix(
    covariates: dict[str, list[str]],
    columns: list[str] | None = None,
) -> tuple[np.ndarray, list[str]]:
    """Intercept plus numeric columns verbatim and categorical columns one-hot
    encoded (first category dropped to keep the intercept independent)."""
    names = list(columns) if columns is not None else sorted(covariates)
    for name in names:
        if name not in covariates:
            raise ConfigError(f"covariate column {name!r} not present")
    n = len(next(iter(covariates.values()))) if covariates else 0
    parts: list[np.ndarray] = []
    labels: list[str] = ["intercept"]
    for name in names:
        values = covariates[name]
        n = len(values)
        if _is_numeric_column(values):
            parts.append(np.asarray([float(v) for v in values])[:, None])
            labels.append(name)
        else:
            categories = sorted(set(values))
            for category in categories[1:]:
                parts.append(
                    np.asarray([1.0 if v == category else 0.0 for v in values])[:, None]
                )
                labels.append(f"{name}={category}")
    intercept = np.ones((n, 1))
    design = np.hstack([intercept] + parts) if parts else intercept
    return design, labels


@dataclass
class CovariateModel:
    """OLS fit of scores on a covariate design, reusable across splits."""

    coef: np.ndarray
    kept_columns: np.ndarray  # indices into the design the fit survived on

    def residuals(self, scores: np.ndarray, design: np.ndarray) -> np.ndarray:
        return scores - design[:, self.kept_columns] @ self.coef


def fit_covariates(scores: np.ndarray, design: np.ndarray) -> CovariateModel:
    """Least-squares fit; collinear design columns are dropped with a warning."""
    scores = np.asarray(scores, dtype=np.float64)
    design = np.asarray(design, dtype=np.float64)
    if design.ndim != 2 or design.shape[0] != scores.shape[0]:
        raise ConfigError(
            f"design {design.shape} does not match {scores.shape[0]} scores"
        )
    _, r, pivots = scipy.linalg.qr(design, mode="economic", pivoting=True)
    diag = np.abs(np.diag(r))
    tol = max(design.shape) * np.finfo(np.float64).eps * (diag[0] if diag.size else 0.0)
    rank = int((diag > tol).sum())
    kept = np.sort(pivots[:rank])
    if rank < design.shape[1]:
        dropped = sorted(set(range(design.shape[1])) - set(kept.tolist()))
        warnings.warn(
            f"design matrix is rank deficient; dropping columns {dropped}",
            RankDeficientWarning,
        )
    coef, *_ = np.linalg.lstsq(design[:, kept], scores, rcond=None)
    return CovariateModel(coef=coef, kept_columns=kept)


def regress_covariates(scores: np.ndarray, design: np.ndarray) -> np.ndarray:
    """Residuals of scores after removing the design's least-squares fit."""
    model = fit_covariates(scores, design)
    return model.residuals(scores, design)


# -- metrics -----------------------------------------------------------------


def pearson_corr(a: np.ndarray, b: np.ndarray) -> float:
    """Pearson correlation; constant or non-finite inputs yield 0 with a warning."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    with np.errstate(all="ignore"):
        da, db = a - a.mean(), b - b.mean()
        sa, sb = np.sqrt((da * da).sum()), np.sqrt((db * db).sum())
        if sa == 0.0 or sb == 0.0 or not (np.isfinite(sa) and np.isfinite(sb)):
            warnings.warn(
                "constant or non-finite values make the correlation undefined; reporting 0",
                DegenerateVarianceWarning,
            )
            return 0.0
        value = (da * db).sum() / (sa * sb)
    if not np.isfinite(value):
        warnings.warn(
            "constant or non-finite values make the correlation undefined; reporting 0",
            DegenerateVarianceWarning,
        )
        return 0.0
    return float(np.clip(value, -1.0, 1.0))


@dataclass
class EvalReport:
    mse: float
    pearson_corr: float
    n: int
    predictions: list[tuple[str, float, float]] = field(default_factory=list)
    per_seed: list[dict] = field(default_factory=list)

    def to_dict(self, include_predictions: bool = True) -> dict:
        payload = {
            "mse": self.mse,
            "pearson_corr": self.pearson_corr,
            "n": self.n,
        }
        if self.per_seed:
            payload["per_seed"] = self.per_seed
        if include_predictions:
            payload["predictions"] = [
                {"subject_id": s, "prediction": p, "target": t}
                for s, p, t in self.predictions
            ]
        return payload


def batch_indices(n: int, batch_size: int) -> list[np.ndarray]:
    order = np.arange(n)
    return [order[i : i + batch_size] for i in range(0, n, batch_size)]


def predict_dataset(model: Model, dataset: GraphDataset, batch_size: int = 64) -> np.ndarray:
    preds = np.zeros(len(dataset))
    for idx in batch_indices(len(dataset), batch_size):
        preds[idx] = model.predict(
            dataset.features[idx], dataset.adjacency[idx], dataset.edge_mask[idx]
        )
    return preds


def evaluate(model: Model, dataset: GraphDataset, batch_size: int = 64) -> EvalReport:
    """MSE and Pearson correlation of model predictions on a split."""
    if len(dataset) == 0:
        raise ConfigError("cannot evaluate an empty split")
    preds = predict_dataset(model, dataset, batch_size)
    with np.errstate(over="ignore"):
        errors = preds - dataset.labels
        mse = float(np.mean(errors * errors))
    return EvalReport(
        mse=mse,
        pearson_corr=pearson_corr(preds, dataset.labels),
        n=len(dataset),
        predictions=[
            (sid, float(p), float(t))
            for sid, p, t in zip(dataset.subject_ids, preds, dataset.labels)
        ],
    )


# -- optimizer ----------------------------------------------------------------


class Adam:
    """Adaptive moment estimation over a named parameter dict (fixed order)."""

    def __init__(
        self,
        params: dict[str, Tensor],
        lr: float = 1e-3,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {name: np.zeros_like(p.data) for name, p in params.items()}
        self.v = {name: np.zeros_like(p.data) for name, p in params.items()}

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()

    def step(self) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        bias1 = 1.0 - b1**self.t
        bias2 = 1.0 - b2**self.t
        for name, p in self.params.items():
            g = p.grad
            m = self.m[name]
            v = self.v[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p.data -= self.lr * (m / bias1) / (np.sqrt(v / bias2) + self.eps)
            if not np.isfinite(p.data).all():
                raise Diverged(f"parameter {name} became non-finite")


# -- training loop -------------------------------------------------------------


@dataclass
class History:
    rows: list[dict] = field(default_factory=list)

    COLUMNS = ("epoch", "lr", "smooth_l1", "unit", "tpk", "total", "val_mse", "val_corr")

    def append(self, **row) -> None:
        self.rows.append({k: row[k] for k in self.COLUMNS})

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(self.COLUMNS)
            for row in self.rows:
                writer.writerow([repr(row[c]) if isinstance(row[c], float) else row[c] for c in self.COLUMNS])


@dataclass
class TrainResult:
    best_state: dict[str, np.ndarray]
    best_epoch: int
    best_val_mse: float
    history: History
    diverged: bool = False


def train(
    model: Model,
    train_ds: GraphDataset,
    val_ds: GraphDataset,
    cfg: TrainConfig,
    seed: int = 0,
) -> TrainResult:
    """Gradient descent on the total loss with a stepped learning rate.

    The checkpoint with the lowest validation MSE is retained; a non-finite
    loss aborts the run and keeps the last good checkpoint.
    """
    if len(train_ds) == 0:
        raise ConfigError("training split is empty")
    params = model.parameters()
    optimizer = Adam(
        params,
        lr=cfg.lr0,
        beta1=cfg.adam_beta1,
        beta2=cfg.adam_beta2,
        eps=cfg.adam_eps,
    )
    weights = LossWeights(lambda1=cfg.lambda1)
    pool_params = model.pool_params()
    history = History()
    best_state = model.state_arrays()
    best_val = np.inf
    best_epoch = 0
    diverged = False

    for epoch in range(1, cfg.epochs + 1):
        lr = cfg.learning_rate(epoch)
        optimizer.lr = lr
        order = np.random.default_rng([seed, epoch]).permutation(len(train_ds))
        sums = {"smooth_l1": 0.0, "unit": 0.0, "tpk": 0.0, "total": 0.0}
        count = 0
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            result = model.forward(
                train_ds.features[idx],
                train_ds.adjacency[idx],
                train_ds.edge_mask[idx],
            )
            loss, components = loss_breakdown(
                result.pred,
                train_ds.labels[idx],
                pool_params,
                result.sorted_scores,
                weights,
                cfg.unit_loss_mode,
            )
            if not np.isfinite(components["total"]):
                diverged = True
                break
            optimizer.zero_grad()
            loss.backward()
            try:
                optimizer.step()
            except Diverged:
                diverged = True
                break
            for key in sums:
                sums[key] += components[key] * len(idx)
            count += len(idx)
        if diverged:
            break
        val_report = evaluate(model, val_ds, cfg.batch_size)
        if not np.isfinite(val_report.mse):
            diverged = True
            break
        history.append(
            epoch=epoch,
            lr=lr,
            smooth_l1=sums["smooth_l1"] / count,
            unit=sums["unit"] / count,
            tpk=sums["tpk"] / count,
            total=sums["total"] / count,
            val_mse=val_report.mse,
            val_corr=val_report.pearson_corr,
        )
        if val_report.mse < best_val:
            best_val = val_report.mse
            best_epoch = epoch
            best_state = model.state_arrays()

    return TrainResult(
        best_state=best_state,
        best_epoch=best_epoch,
        best_val_mse=float(best_val) if np.isfinite(best_val) else float("nan"),
        history=history,
        diverged=diverged,
    )


# -- end-to-end single-seed run -------------------------------------------------


@dataclass
class SeedRun:
    seed: int
    model: Model
    result: TrainResult
    val_report: EvalReport
    test_report: EvalReport
    splits: tuple[np.ndarray, np.ndarray, np.ndarray]
    residual_labels: np.ndarray


def residualize_labels(
    dataset: GraphDataset,
    train_idx: np.ndarray,
    covariate_columns: list[str] | None = None,
) -> np.ndarray:
    """Remove covariate effects fitted on the training split from all labels."""
    columns = covariate_columns
    if columns is None:
        columns = sorted(dataset.covariates)
    usable = {c: dataset.covariates[c] for c in columns if c in dataset.covariates}
    design, _ = design_matrix(usable) if usable else (
        np.ones((len(dataset), 1)),
        ["intercept"],
    )
    fit = fit_covariates(dataset.labels[train_idx], design[train_idx])
    return fit.residuals(dataset.labels, design)


def run_seed(
    dataset: GraphDataset,
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    seed: int,
    covariate_columns: list[str] | None = None,
) -> SeedRun:
    """Split, residualize, train, and evaluate one seed end to end."""
    train_idx, val_idx, test_idx = split(len(dataset), train_cfg.split_fractions, seed)
    residuals = residualize_labels(dataset, train_idx, covariate_columns)
    prepared = dataset.with_labels(residuals)
    model = assemble(model_cfg, n_nodes=dataset.n_nodes, seed=seed)
    result = train(
        model,
        prepared.subset(train_idx),
        prepared.subset(val_idx),
        train_cfg,
        seed=seed,
    )
    model.load_state_arrays(result.best_state)
    val_report = evaluate(model, prepared.subset(val_idx), train_cfg.batch_size)
    test_report = evaluate(model, prepared.subset(test_idx), train_cfg.batch_size)
    return SeedRun(
        seed=seed,
        model=model,
        result=result,
        val_report=val_report,
        test_report=test_report,
        splits=(train_idx, val_idx, test_idx),
        residual_labels=residuals,
    )


def aggregate_reports(runs: list[SeedRun]) -> EvalReport:
    """Arithmetic mean of per-seed test MSE and correlation."""
    per_seed = [
        {
            "seed": run.seed,
            "mse": run.test_report.mse,
            "pearson_corr": run.test_report.pearson_corr,
            "best_epoch": run.result.best_epoch,
            "val_mse": run.val_report.mse,
        }
        for run in runs
    ]
    return EvalReport(
        mse=float(np.mean([r["mse"] for r in per_seed])),
        pearson_corr=float(np.mean([r["pearson_corr"] for r in per_seed])),
        n=runs[0].test_report.n if runs else 0,
        per_seed=per_seed,
    )


def write_report(report: EvalReport, path: str | Path, include_predictions: bool = True) -> None:
    Path(path).write_text(
        json.dumps(report.to_dict(include_predictions), indent=2, sort_keys=True) + "\n"
    )
