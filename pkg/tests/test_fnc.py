"""Connectivity construction: correlation values against an independent
textbook formula, threshold ranking against brute force, and graph assembly
invariants."""

import numpy as np
import pytest

from roigin.errors import InvalidThreshold, NonFinite, ShapeMismatch, ZeroVariance
from roigin.fnc import (
    FncMatrix,
    TimeSeries,
    build_graph,
    load_subject,
    pearson_fnc,
    read_labels_csv,
    read_subject_csv,
    threshold_edges,
)


def textbook_pearson(x: np.ndarray, y: np.ndarray) -> float:
    """Direct covariance / (sigma_x sigma_y) evaluation, kept independent of
    the library path."""
    mx, my = x.mean(), y.mean()
    cov = ((x - mx) * (y - my)).sum()
    return cov / np.sqrt(((x - mx) ** 2).sum() * ((y - my) ** 2).sum())


class TestPearson:
    def test_identical_rows_give_one(self):
        row = np.array([1.0, 2.0, 4.0, 0.5, -1.0])
        ts = TimeSeries(np.vstack([row, row + 0.0, row * 1.0 + 5.0]))
        fnc = pearson_fnc(ts)
        assert fnc.values[0, 1] == pytest.approx(1.0, abs=1e-12)
        assert fnc.values[0, 2] == pytest.approx(1.0, abs=1e-12)

    def test_negated_row_gives_minus_one(self):
        row = np.array([0.3, -1.2, 2.2, 0.9])
        ts = TimeSeries(np.vstack([row, -row]))
        assert pearson_fnc(ts).values[0, 1] == pytest.approx(-1.0, abs=1e-12)

    def test_matches_textbook_formula_entrywise(self):
        rng = np.random.default_rng(7)
        values = rng.standard_normal((3, 5))
        fnc = pearson_fnc(TimeSeries(values))
        for i in range(3):
            for j in range(3):
                expected = 1.0 if i == j else textbook_pearson(values[i], values[j])
                assert fnc.values[i, j] == pytest.approx(expected, abs=1e-12)

    def test_diagonal_exactly_one(self):
        rng = np.random.default_rng(1)
        fnc = pearson_fnc(TimeSeries(rng.standard_normal((6, 40))))
        assert np.array_equal(np.diag(fnc.values), np.ones(6))

    def test_symmetric_and_bounded_property(self):
        for seed in range(20):
            rng = np.random.default_rng(seed)
            n, t = rng.integers(2, 12), rng.integers(3, 60)
            values = rng.standard_normal((n, t)) * rng.uniform(0.1, 10)
            fnc = pearson_fnc(TimeSeries(values))
            assert np.allclose(fnc.values, fnc.values.T, atol=1e-12, rtol=0)
            assert np.abs(fnc.values).max() <= 1.0

    def test_relabeling_permutes_exactly(self):
        rng = np.random.default_rng(3)
        values = rng.standard_normal((7, 30))
        base = pearson_fnc(TimeSeries(values)).values
        for seed in range(5):
            perm = np.random.default_rng(seed).permutation(7)
            permuted = pearson_fnc(TimeSeries(values[perm])).values
            assert np.array_equal(permuted, base[np.ix_(perm, perm)])

    def test_constant_row_raises(self):
        values = np.vstack([np.ones(5), np.arange(5.0)])
        with pytest.raises(ZeroVariance) as exc:
            TimeSeries(values)
        assert "roi_0" in str(exc.value)

    def test_nonfinite_raises_with_index(self):
        values = np.random.default_rng(0).standard_normal((3, 5))
        values[1, 2] = np.nan
        with pytest.raises(NonFinite) as exc:
            TimeSeries(values)
        assert "(1, 2)" in str(exc.value)

    def test_too_few_regions_or_samples(self):
        with pytest.raises(ShapeMismatch):
            TimeSeries(np.ones((1, 5)) * np.arange(5))
        with pytest.raises(ShapeMismatch):
            TimeSeries(np.random.default_rng(0).standard_normal((3, 2)))


def _random_fnc(rng, n):
    base = rng.uniform(-1, 1, size=(n, n))
    sym = 0.5 * (base + base.T)
    np.fill_diagonal(sym, 1.0)
    return FncMatrix(np.clip(sym, -1, 1))


class TestThreshold:
    def test_full_keep_on_53_nodes_gives_2756_directed_edges(self):
        fnc = _random_fnc(np.random.default_rng(0), 53)
        assert len(threshold_edges(fnc, 1.0)) == 53 * 52

    def test_full_keep_retains_every_pair(self):
        fnc = _random_fnc(np.random.default_rng(1), 6)
        edges = {(i, j) for i, j, _ in threshold_edges(fnc, 1.0)}
        expected = {(i, j) for i in range(6) for j in range(6) if i != j}
        assert edges == expected

    def test_half_keep_matches_bruteforce_sort(self):
        values = np.array(
            [
                [1.0, 0.9, -0.2, 0.5],
                [0.9, 1.0, 0.7, -0.1],
                [-0.2, 0.7, 1.0, 0.3],
                [0.5, -0.1, 0.3, 1.0],
            ]
        )
        fnc = FncMatrix(values)
        pairs = [(i, j) for i in range(4) for j in range(i + 1, 4)]
        ranked = sorted(pairs, key=lambda p: (-abs(values[p]), p))
        expected = set(ranked[:3])  # ceil(0.5 * 6)
        kept = {(i, j) for i, j, _ in threshold_edges(fnc, 0.5) if i < j}
        assert kept == expected == {(0, 1), (1, 2), (0, 3)}

    def test_signed_weights_preserved(self):
        fnc = _random_fnc(np.random.default_rng(2), 5)
        for i, j, w in threshold_edges(fnc, 1.0):
            assert w == fnc.values[i, j]

    def test_tie_break_is_lexicographic(self):
        values = np.eye(4)
        values[0, 1] = values[1, 0] = 0.5
        values[2, 3] = values[3, 2] = -0.5
        values[0, 2] = values[2, 0] = 0.5
        fnc = FncMatrix(values)
        kept = {(i, j) for i, j, _ in threshold_edges(fnc, 1 / 6) if i < j}
        assert kept == {(0, 1)}

    def test_invalid_fraction(self):
        fnc = _random_fnc(np.random.default_rng(3), 4)
        for bad in (0.0, -0.1, 1.3):
            with pytest.raises(InvalidThreshold):
                threshold_edges(fnc, bad)


class TestBuildGraph:
    def test_no_self_edges(self):
        graph = build_graph(_random_fnc(np.random.default_rng(4), 8), 1.0)
        assert all(i != j for i, j, _ in graph.edges)

    def test_zero_offdiagonal_keeps_all_zero_weight_edges(self):
        graph = build_graph(FncMatrix(np.eye(5)), 1.0)
        assert len(graph.edges) == 5 * 4
        assert all(w == 0.0 for _, _, w in graph.edges)

    def test_node_features_are_full_rows(self):
        fnc = _random_fnc(np.random.default_rng(5), 53)
        graph = build_graph(fnc, 0.3, label=2.5)
        assert graph.node_features.shape == (53, 53)
        assert np.array_equal(graph.node_features, fnc.values)
        assert graph.label == 2.5

    def test_onehot_is_identity(self):
        graph = build_graph(_random_fnc(np.random.default_rng(6), 7), 1.0)
        assert np.array_equal(graph.onehot, np.eye(7))

    def test_full_keep_edge_count_identity(self):
        for seed in range(5):
            n = int(np.random.default_rng(seed).integers(3, 20))
            graph = build_graph(_random_fnc(np.random.default_rng(seed), n), 1.0)
            assert len(graph.edges) == n * (n - 1)

    def test_adjacency_roundtrip(self):
        fnc = _random_fnc(np.random.default_rng(7), 6)
        graph = build_graph(fnc, 0.5)
        weights, present = graph.adjacency()
        assert np.array_equal(weights, weights.T)
        assert np.array_equal(present, present.T)
        assert present.sum() == len(graph.edges)


class TestCsvInterfaces:
    def test_subject_csv_with_and_without_header(self, tmp_path):
        body = "1.0,2.0,3.0\n4.0,5.0,6.0\n"
        bare = tmp_path / "bare.csv"
        bare.write_text(body)
        headed = tmp_path / "headed.csv"
        headed.write_text("t0,t1,t2\n" + body)
        assert np.array_equal(read_subject_csv(bare), read_subject_csv(headed))

    def test_load_subject_autodetects_fnc(self, tmp_path):
        fnc = _random_fnc(np.random.default_rng(8), 4)
        path = tmp_path / "sub.csv"
        path.write_text("\n".join(",".join(repr(float(v)) for v in row) for row in fnc.values))
        loaded = load_subject(path, kind="auto")
        assert np.allclose(loaded.values, fnc.values, atol=1e-15)

    def test_load_subject_timeseries(self, tmp_path):
        rng = np.random.default_rng(9)
        values = rng.standard_normal((4, 30))
        path = tmp_path / "sub.csv"
        path.write_text("\n".join(",".join(repr(float(v)) for v in row) for row in values))
        loaded = load_subject(path, kind="auto")
        expected = pearson_fnc(TimeSeries(values))
        assert np.array_equal(loaded.values, expected.values)

    def test_labels_csv_roundtrip(self, tmp_path):
        path = tmp_path / "labels.csv"
        path.write_text(
            "subject_id,score,age,site\nsub-0,1.5,9.25,site_1\nsub-1,-0.5,10.0,site_0\n"
        )
        table = read_labels_csv(path)
        assert table.subject_ids == ["sub-0", "sub-1"]
        assert table.scores.tolist() == [1.5, -0.5]
        assert table.covariates == {
            "age": ["9.25", "10.0"],
            "site": ["site_1", "site_0"],
        }
        assert table.score_for("sub-1") == -0.5

    def test_labels_csv_custom_target(self, tmp_path):
        path = tmp_path / "labels.csv"
        path.write_text("subject_id,score,fluid\nsub-0,1.0,7.5\n")
        table = read_labels_csv(path, target="fluid")
        assert table.scores.tolist() == [7.5]
        with pytest.raises(ShapeMismatch):
            read_labels_csv(path, target="missing")
