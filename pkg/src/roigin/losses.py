"""Training losses: robust regression error, projection-norm regularizer,
and the ranking loss that separates kept from dropped pooling scores.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import BadK, ShapeMismatch
from .pool import PoolParams, keep_count
from .tensor import Tensor

SCORE_CLAMP = 1e-7
UNIT_LOSS_MODES = ("signed", "abs")


@dataclass
class LossWeights:
    """Relative weight of the score-ranking regularizer."""

    lambda1: float = 0.1

    def __post_init__(self):
        if not np.isfinite(self.lambda1) or self.lambda1 < 0.0:
            raise ValueError(f"lambda1 must be finite and >= 0, got {self.lambda1}")


def smooth_l1(pred, target) -> Tensor:
    """Quadratic inside |x - y| < 1, linear outside; mean over a batch."""
    pred, target = T.constant(pred), T.constant(target)
    if pred.shape != target.shape:
        raise ShapeMismatch(f"smooth_l1: {pred.shape} vs {target.shape}")
    return T.tmean(T.huber_unit(pred - target))


def unit_loss(omega: Tensor, mode: str = "signed") -> Tensor:
    """Deviation of the projection vector from unit length.

    'signed' is ||omega|| - 1 verbatim; 'abs' is the magnitude variant that
    actually anchors the norm at 1 instead of shrinking it without bound.
    """
    if mode not in UNIT_LOSS_MODES:
        raise ValueError(f"unit loss mode must be one of {UNIT_LOSS_MODES}")
    deviation = T.norm2(omega) - 1.0
    if mode == "abs":
        deviation = T.sqrt(T.mul(deviation, deviation) + 1e-24)
    return deviation


def tpk_loss(sorted_scores: Tensor, k: int) -> Tensor:
    """Binary-cross-entropy separation of ranked pooling scores.

    ``sorted_scores`` is M x N, each row the sigmoid scores of one graph
    sorted descending.  The first k entries are pushed toward 1 and the rest
    toward 0; only the selected sum carries the 1/N factor, as specified.
    """
    scores = T.constant(sorted_scores)
    if scores.ndim != 2:
        raise ShapeMismatch(f"tpk: expected M x N scores, got {scores.shape}")
    m, n = scores.shape
    if not (1 <= k <= n - 1):
        raise BadK(f"k must be in [1, {n - 1}], got {k}")
    diffs = np.diff(scores.data, axis=1)
    if diffs.size and diffs.max() > 1e-12:
        raise ShapeMismatch("tpk: rows must be sorted descending")
    clamped = T.clip(scores, SCORE_CLAMP, 1.0 - SCORE_CLAMP)
    selected = T.gather(T.transpose(clamped), np.arange(k))
    rest = T.gather(T.transpose(clamped), np.arange(k, n))
    per_graph = T.div(T.tsum(T.log(selected), axis=0), n) + T.tsum(
        T.log(1.0 - rest), axis=0
    )
    return T.neg(T.tmean(per_graph))


def loss_breakdown(
    pred_batch,
    target_batch,
    pool_params_per_layer: list[PoolParams],
    scores_per_layer: list[Tensor],
    weights: LossWeights,
    unit_mode: str = "signed",
) -> tuple[Tensor, dict[str, float]]:
    """Total loss tensor plus its component values for logging.

    ``scores_per_layer[l]`` holds the M x N_l descending-sorted sigmoid scores
    of pooling layer l; its k comes from that layer's ratio.  Layers that keep
    every node have no unselected side and contribute no ranking term.
    """
    if len(pool_params_per_layer) != len(scores_per_layer):
        raise ShapeMismatch(
            f"{len(pool_params_per_layer)} pooling layers vs "
            f"{len(scores_per_layer)} score matrices"
        )
    regression = smooth_l1(pred_batch, target_batch)
    total = regression
    unit_value = 0.0
    tpk_value = 0.0
    for params, scores in zip(pool_params_per_layer, scores_per_layer):
        unit = unit_loss(params.omega, unit_mode)
        unit_value += float(unit.data)
        total = total + unit
        n = scores.shape[1]
        k = keep_count(params.ratio, n)
        if k <= n - 1:
            ranking = tpk_loss(scores, k)
            tpk_value += float(ranking.data)
            total = total + weights.lambda1 * ranking
    components = {
        "smooth_l1": float(regression.data),
        "unit": unit_value,
        "tpk": tpk_value,
        "total": float(total.data),
    }
    return total, components


def total_loss(
    pred_batch,
    target_batch,
    pool_params_per_layer: list[PoolParams],
    scores_per_layer: list[Tensor],
    weights: LossWeights,
    unit_mode: str = "signed",
) -> Tensor:
    """Regression loss + per-layer norm regularizers + weighted ranking losses."""
    total, _ = loss_breakdown(
        pred_batch,
        target_batch,
        pool_params_per_layer,
        scores_per_layer,
        weights,
        unit_mode,
    )
    return total
