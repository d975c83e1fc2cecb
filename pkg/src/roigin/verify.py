"""Finite-difference verification battery.

Each check builds a small random configuration, wraps a scalar objective
around one differentiable component, and compares every analytic parameter
gradient against central differences.  The CLI surfaces the table and the
acceptance suite asserts the tolerance.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import tensor as T
from .losses import LossWeights, smooth_l1, total_loss, tpk_loss, unit_loss
from .model import Model, ModelConfig
from .pool import PoolParams, node_scores, normalize_scores, pool, select_topk
from .readout import GaroParams, SeroParams, garo, meanmax, sero
from .rgin import create_rgin_params, rgin_forward
from .tensor import Tensor, grad_check

TOLERANCE = 1e-4
DEFAULT_EPS = 1e-5


@dataclass
class CheckResult:
    name: str
    max_rel_err: float
    n_entries: int

    @property
    def passed(self) -> bool:
        return self.max_rel_err <= TOLERANCE


def _random_edges(rng: np.random.Generator, n: int) -> list[tuple[int, int, float]]:
    edges = []
    for i in range(n):
        for j in range(i + 1, n):
            if rng.random() < 0.7:
                w = float(rng.uniform(-1, 1))
                edges.append((i, j, w))
                edges.append((j, i, w))
    return edges


def _entry_count(params: list[Tensor]) -> int:
    return int(sum(p.data.size for p in params))


def check_rgin_layer(seed: int, eps: float) -> CheckResult:
    rng = np.random.default_rng(seed)
    n, d_in, d_out, k = 5, 3, 4, 3
    params = create_rgin_params(n, d_in, d_out, k, rng)
    h = T.parameter(rng.standard_normal((n, d_in)) * 0.5)
    edges = _random_edges(rng, n)
    tensors = list(params.tensors("conv").values()) + [h]

    def objective():
        out = rgin_forward(h, edges, params, mode="sum")
        return T.tsum(T.sigmoid(out))

    return CheckResult("rgin_layer", grad_check(objective, tensors, eps), _entry_count(tensors))


def check_pooling_gate(seed: int, eps: float) -> CheckResult:
    rng = np.random.default_rng(seed)
    n, d = 7, 4
    h = T.parameter(rng.standard_normal((n, d)) * 0.5)
    omega = T.parameter(rng.standard_normal(d))
    edges = _random_edges(rng, n)
    tensors = [h, omega]

    def objective():
        scores = normalize_scores(node_scores(h, omega))
        kept = select_topk(scores.data, 0.6)
        pooled, _, _ = pool(h, edges, scores, kept)
        return T.tsum(T.sigmoid(pooled))

    return CheckResult("pooling_gate", grad_check(objective, tensors, eps), _entry_count(tensors))


def check_sero(seed: int, eps: float) -> CheckResult:
    rng = np.random.default_rng(seed)
    d, n = 4, 5
    h = T.parameter(rng.standard_normal((d, n)) * 0.5)
    params = SeroParams(
        w1=T.parameter(rng.standard_normal((d, d)) * 0.5),
        w2=T.parameter(rng.standard_normal((n, d)) * 0.5),
    )
    tensors = [h, params.w1, params.w2]

    def objective():
        summary, _ = sero(h, params)
        return T.tsum(T.sigmoid(summary))

    return CheckResult("sero", grad_check(objective, tensors, eps), _entry_count(tensors))


def check_garo(seed: int, eps: float) -> CheckResult:
    rng = np.random.default_rng(seed)
    d, n = 4, 5
    h = T.parameter(rng.standard_normal((d, n)) * 0.5)
    params = GaroParams(
        w_key=T.parameter(rng.standard_normal((d, d)) * 0.5),
        w_query=T.parameter(rng.standard_normal((d, d)) * 0.5),
    )
    tensors = [h, params.w_key, params.w_query]

    def objective():
        summary, _ = garo(h, params)
        return T.tsum(T.sigmoid(summary))

    return CheckResult("garo", grad_check(objective, tensors, eps), _entry_count(tensors))


def check_meanmax(seed: int, eps: float) -> CheckResult:
    rng = np.random.default_rng(seed)
    h = T.parameter(rng.standard_normal((4, 5)) * 0.5)

    def objective():
        return T.tsum(T.sigmoid(meanmax(h)))

    return CheckResult("meanmax", grad_check(objective, [h], eps), h.data.size)


def check_loss_smooth_l1(seed: int, eps: float) -> CheckResult:
    rng = np.random.default_rng(seed)
    pred = T.parameter(rng.standard_normal(6) * 2.0)
    target = rng.standard_normal(6) * 2.0

    def objective():
        return smooth_l1(pred, target)

    return CheckResult("loss_smooth_l1", grad_check(objective, [pred], eps), pred.data.size)


def check_loss_unit(seed: int, eps: float) -> CheckResult:
    rng = np.random.default_rng(seed)
    omega = T.parameter(rng.standard_normal(5))
    worst = 0.0
    for mode in ("signed", "abs"):
        worst = max(worst, grad_check(lambda: unit_loss(omega, mode), [omega], eps))
    return CheckResult("loss_unit", worst, omega.data.size)


def check_loss_tpk(seed: int, eps: float) -> CheckResult:
    rng = np.random.default_rng(seed)
    logits = T.parameter(rng.standard_normal((3, 6)))

    def objective():
        gates = T.sigmoid(logits)
        order = np.argsort(-gates.data, axis=1, kind="stable")
        flat = (order + np.arange(3)[:, None] * 6).reshape(-1)
        ranked = T.reshape(T.gather(T.reshape(gates, (18,)), flat), (3, 6))
        return tpk_loss(ranked, 2)

    return CheckResult("loss_tpk", grad_check(objective, [logits], eps), logits.data.size)


def check_loss_total(seed: int, eps: float) -> CheckResult:
    rng = np.random.default_rng(seed)
    pred = T.parameter(rng.standard_normal(4))
    target = rng.standard_normal(4)
    omega = T.parameter(rng.standard_normal(5))
    logits = T.parameter(rng.standard_normal((4, 6)))
    pool_params = [PoolParams(omega=omega, ratio=0.5)]
    tensors = [pred, omega, logits]

    def objective():
        gates = T.sigmoid(logits)
        order = np.argsort(-gates.data, axis=1, kind="stable")
        flat = (order + np.arange(4)[:, None] * 6).reshape(-1)
        ranked = T.reshape(T.gather(T.reshape(gates, (24,)), flat), (4, 6))
        return total_loss(pred, target, pool_params, [ranked], LossWeights(0.1))

    return CheckResult("loss_total", grad_check(objective, tensors, eps), _entry_count(tensors))


def check_full_model(seed: int, eps: float) -> CheckResult:
    rng = np.random.default_rng(seed)
    n_nodes, n_graphs = 6, 2
    config = ModelConfig(
        layer_dims=(4, 5, 6),
        pool_ratios=(0.7, 0.7, 0.7),
        clusters_k=3,
        aggregation="sum",
        readout="sero",
    )
    model = Model(config, n_nodes=n_nodes, seed=seed)
    base = rng.standard_normal((n_graphs, n_nodes, n_nodes)) * 0.4
    features = 0.5 * (base + base.transpose(0, 2, 1))
    adjacency = features.copy()
    for g in range(n_graphs):
        np.fill_diagonal(features[g], 1.0)
        np.fill_diagonal(adjacency[g], 0.0)
    mask = np.ones_like(adjacency, dtype=bool)
    for g in range(n_graphs):
        np.fill_diagonal(mask[g], False)
    targets = rng.standard_normal(n_graphs)
    params = model.parameters()
    tensors = list(params.values())

    def objective():
        result = model.forward(features, adjacency, mask)
        return total_loss(
            result.pred,
            targets,
            model.pool_params(),
            result.sorted_scores,
            LossWeights(0.1),
        )

    return CheckResult("full_model", grad_check(objective, tensors, eps), _entry_count(tensors))


CHECKS: dict[str, Callable[[int, float], CheckResult]] = {
    "rgin_layer": check_rgin_layer,
    "pooling_gate": check_pooling_gate,
    "sero": check_sero,
    "garo": check_garo,
    "meanmax": check_meanmax,
    "loss_smooth_l1": check_loss_smooth_l1,
    "loss_unit": check_loss_unit,
    "loss_tpk": check_loss_tpk,
    "loss_total": check_loss_total,
    "full_model": check_full_model,
}


def run_battery(
    base_seed: int = 1, n_seeds: int = 5, eps: float = DEFAULT_EPS
) -> list[CheckResult]:
    """Every check at ``n_seeds`` consecutive seeds; rows report the worst."""
    results = []
    for name, check in CHECKS.items():
        worst = CheckResult(name, 0.0, 0)
        for offset in range(n_seeds):
            outcome = check(base_seed + offset, eps)
            if outcome.max_rel_err >= worst.max_rel_err:
                worst = outcome
        results.append(worst)
    return results


def format_table(results: list[CheckResult]) -> str:
    width = max(len(r.name) for r in results)
    lines = [f"{'check'.ljust(width)}  {'entries':>8}  {'max rel err':>12}  status"]
    for r in results:
        status = "ok" if r.passed else "FAIL"
        lines.append(
            f"{r.name.ljust(width)}  {r.n_entries:>8d}  {r.max_rel_err:>12.3e}  {status}"
        )
    return "\n".join(lines)
