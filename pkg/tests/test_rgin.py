"""Convolution layer: cluster scores, mixed node weights, hand-checked
forwards, equivariance, the shared-weight reduction, and gradient fidelity."""

import numpy as np
import pytest

from roigin import tensor as T
from roigin.errors import BadEdgeIndex, ShapeMismatch
from roigin.rgin import (
    RginParams,
    cluster_assignments,
    create_rgin_params,
    node_weight,
    rgin_forward,
)


def identity_mlp_params(n_nodes, d, k=2, theta1=None, theta2=None, bias=None, epsilon=0.0):
    """Layer whose MLP is w2 @ relu(w1 x) with identity weights: MLP(x) = x
    for non-negative x."""
    eye = np.eye(d)
    return RginParams(
        theta1=T.parameter(theta1 if theta1 is not None else np.zeros((k, n_nodes))),
        theta2=[
            T.parameter(theta2[u] if theta2 is not None else np.zeros((d, d)))
            for u in range(k)
        ],
        bias=T.parameter(bias if bias is not None else eye.copy()),
        epsilon=T.parameter(np.array([epsilon])),
        mlp_w1=T.parameter(eye.copy()),
        mlp_b1=T.parameter(np.zeros(d)),
        mlp_w2=T.parameter(eye.copy()),
        mlp_b2=T.parameter(np.zeros(d)),
    )


class TestClusterAssignments:
    def test_zero_theta_gives_zero_scores(self):
        theta1 = T.parameter(np.zeros((3, 4)))
        alpha = cluster_assignments(theta1, np.eye(4))
        assert not alpha.data.any()

    def test_relu_of_theta_column(self):
        theta1 = T.parameter(np.array([[1.0, 0.0], [-1.0, 0.0], [2.0, 0.0]]))
        alpha = cluster_assignments(theta1, np.eye(2))
        assert alpha.data[0].tolist() == [1.0, 0.0, 2.0]

    def test_scores_nonnegative(self):
        rng = np.random.default_rng(0)
        theta1 = T.parameter(rng.standard_normal((5, 9)))
        alpha = cluster_assignments(theta1, np.eye(9))
        assert (alpha.data >= 0.0).all()


class TestNodeWeight:
    def test_zero_scores_give_bias(self):
        bias = T.parameter(np.arange(6.0).reshape(2, 3))
        w = node_weight(T.parameter(np.zeros(2)), [T.parameter(np.ones((2, 3)))] * 2, bias)
        assert np.array_equal(w.data, bias.data)

    def test_single_cluster_unit_score(self):
        beta = T.parameter(np.array([[1.0, 2.0], [3.0, 4.0]]))
        w = node_weight(T.parameter(np.ones(1)), [beta], T.parameter(np.zeros((2, 2))))
        assert np.array_equal(w.data, beta.data)

    def test_half_half_mix_of_identity_bases(self):
        w = node_weight(
            T.parameter(np.array([0.5, 0.5])),
            [T.parameter(np.eye(3)), T.parameter(2.0 * np.eye(3))],
            T.parameter(np.zeros((3, 3))),
        )
        assert np.allclose(w.data, 1.5 * np.eye(3), atol=1e-15)

    def test_score_length_mismatch(self):
        with pytest.raises(ShapeMismatch):
            node_weight(
                T.parameter(np.zeros(3)),
                [T.parameter(np.eye(2))],
                T.parameter(np.zeros((2, 2))),
            )


class TestForward:
    def test_isolated_node_identity_config(self):
        params = identity_mlp_params(n_nodes=2, d=2)
        h = np.array([[0.5, 1.0], [2.0, 0.25]])
        out = rgin_forward(h, [], params)
        assert np.allclose(out.data, h, atol=1e-15)

    def test_two_node_hand_evaluation(self):
        params = identity_mlp_params(n_nodes=2, d=1)
        h = np.array([[1.0], [2.0]])
        edges = [(0, 1, 0.5), (1, 0, 0.5)]
        out = rgin_forward(h, edges, params)
        assert out.data[0, 0] == pytest.approx(1.0 + 0.5 * 2.0, abs=1e-15)
        assert out.data[1, 0] == pytest.approx(2.0 + 0.5 * 1.0, abs=1e-15)

    def test_mean_equals_sum_for_single_neighbor(self):
        rng = np.random.default_rng(1)
        params = create_rgin_params(3, 2, 2, 2, rng)
        h = rng.standard_normal((3, 2))
        edges = [(0, 1, 0.3), (1, 0, 0.3), (1, 2, -0.2), (2, 1, -0.2)]
        s = rgin_forward(h, edges, params, mode="sum")
        m = rgin_forward(h, edges, params, mode="mean")
        assert np.allclose(s.data[0], m.data[0], atol=1e-14)
        assert np.allclose(s.data[2], m.data[2], atol=1e-14)
        assert not np.allclose(s.data[1], m.data[1], atol=1e-6)

    def test_mean_divides_by_neighbor_count(self):
        params = identity_mlp_params(n_nodes=3, d=1)
        h = np.array([[1.0], [2.0], [4.0]])
        edges = [(0, 1, 1.0), (1, 0, 1.0), (0, 2, 1.0), (2, 0, 1.0)]
        out = rgin_forward(h, edges, params, mode="mean")
        assert out.data[0, 0] == pytest.approx(1.0 + (2.0 + 4.0) / 2, abs=1e-15)

    def test_bad_edge_index(self):
        params = identity_mlp_params(n_nodes=2, d=1)
        with pytest.raises(BadEdgeIndex):
            rgin_forward(np.ones((2, 1)), [(0, 5, 1.0)], params)

    def test_wrong_feature_width(self):
        rng = np.random.default_rng(2)
        params = create_rgin_params(3, 2, 2, 2, rng)
        with pytest.raises(ShapeMismatch):
            rgin_forward(rng.standard_normal((3, 4)), [], params)


def _random_graph(rng, n, d):
    h = rng.standard_normal((n, d))
    edges = []
    for i in range(n):
        for j in range(i + 1, n):
            if rng.random() < 0.6:
                w = float(rng.uniform(-1, 1))
                edges.append((i, j, w))
                edges.append((j, i, w))
    return h, edges


class TestProperties:
    def test_permutation_equivariance(self):
        rng = np.random.default_rng(3)
        n, d = 6, 4
        params = create_rgin_params(n, d, d, 3, rng)
        h, edges = _random_graph(rng, n, d)
        base = rgin_forward(h, edges, params).data
        for seed in range(5):
            perm = np.random.default_rng(seed).permutation(n)
            inv = np.argsort(perm)
            h_p = h[perm]
            edges_p = [(int(inv[i]), int(inv[j]), w) for i, j, w in edges]
            onehot_p = np.eye(n)[perm]
            out_p = rgin_forward(h_p, edges_p, params, onehot=onehot_p).data
            assert np.abs(out_p - base[perm]).max() <= 1e-12

    def test_zero_theta1_shares_weights(self):
        rng = np.random.default_rng(4)
        n, d = 5, 3
        params = create_rgin_params(n, d, d, 2, rng)
        params.theta1.data[...] = 0.0
        h = np.ones((n, d))
        out = rgin_forward(h, [], params).data
        for i in range(1, n):
            assert np.array_equal(out[i], out[0])

    def test_gradients_pass_finite_differences(self):
        rng = np.random.default_rng(5)
        n, d_in, d_out = 6, 3, 4
        params = create_rgin_params(n, d_in, d_out, 3, rng)
        h, edges = _random_graph(rng, n, d_in)
        h_t = T.parameter(h)
        tensors = list(params.tensors("conv").values()) + [h_t]
        for mode in ("sum", "mean"):
            err = T.grad_check(
                lambda: T.tsum(T.sigmoid(rgin_forward(h_t, edges, params, mode=mode))),
                tensors,
                eps=1e-5,
            )
            assert err <= 1e-4, f"mode {mode}: {err}"


def shared_weight_gin_reference(h, edges, w, eps, mlp_weights):
    """Plain-numpy evaluator of the classic edge-weighted update with one
    shared weight matrix: mlp((1+eps) * W h_i + sum_j e_ij W h_j)."""
    w1, b1, w2, b2 = mlp_weights
    n = h.shape[0]
    out = np.zeros((n, w2.shape[0]))
    for i in range(n):
        acc = (1.0 + eps) * (w @ h[i])
        for a, b, weight in edges:
            if a == i:
                acc = acc + weight * (w @ h[b])
        out[i] = w2 @ np.maximum(w1 @ acc + b1, 0.0) + b2
    return out


class TestSharedWeightReduction:
    def test_matches_independent_evaluator_on_20_graphs(self):
        for seed in range(20):
            rng = np.random.default_rng(100 + seed)
            n, d_in, d_out = 5, 3, 4
            params = create_rgin_params(n, d_in, d_out, 3, rng)
            params.theta1.data[...] = 0.0  # every node weight collapses to bias
            eps = float(rng.uniform(-0.5, 0.5))
            params.epsilon.data[...] = eps
            h, edges = _random_graph(rng, n, d_in)
            ours = rgin_forward(h, edges, params).data
            reference = shared_weight_gin_reference(
                h,
                edges,
                params.bias.data,
                eps,
                (
                    params.mlp_w1.data,
                    params.mlp_b1.data,
                    params.mlp_w2.data,
                    params.mlp_b2.data,
                ),
            )
            assert np.abs(ours - reference).max() <= 1e-10
