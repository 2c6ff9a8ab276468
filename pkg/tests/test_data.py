from pathlib import Path

import networkx as nx
import numpy as np
import pytest

from graphkd.data import (
    DatasetError,
    Graph,
    build_features,
    load_dataset,
    make_batch,
    parse_tu_dataset,
    star_graph,
    stratified_kfold,
    stratified_subset,
    toy_dataset,
    write_tu_dataset,
)

DATA = Path(__file__).parent / "data"
MUTAG_ROOT = Path(__file__).parents[1] / "data"


def adj(n, edges):
    a = np.zeros((n, n), dtype=np.int8)
    for i, j in edges:
        a[i, j] = a[j, i] = 1
    return a


FIXTURE_ADJ = [
    adj(3, [(0, 1), (1, 2), (0, 2)]),
    adj(3, [(0, 1), (1, 2)]),
    adj(2, [(0, 1)]),
    adj(4, [(0, 1), (1, 2), (2, 3), (3, 0)]),
    adj(4, [(0, 1), (0, 2), (0, 3)]),
    adj(2, []),
]


@pytest.fixture(scope="module")
def fixture_raw():
    return parse_tu_dataset(DATA, "FIXTURE")


@pytest.fixture(scope="module")
def mutag():
    return load_dataset(MUTAG_ROOT, "MUTAG")


class TestParse:
    def test_fixture_matches_hand_built_graphs(self, fixture_raw):
        assert len(fixture_raw) == 6 and fixture_raw.num_classes == 2
        for g, expected in zip(fixture_raw.graphs, FIXTURE_ADJ):
            np.testing.assert_array_equal(g.adjacency, expected)
            g.validate()
        assert [g.label for g in fixture_raw.graphs] == [1, 0, 0, 1, 0, 1]
        assert fixture_raw.label_values == [-1, 1]
        assert fixture_raw.avg_nodes == pytest.approx(18 / 6, abs=1e-9)

    def test_node_labels_split_per_graph(self, fixture_raw):
        np.testing.assert_array_equal(fixture_raw.graphs[0].node_labels, [0, 1, 0])
        np.testing.assert_array_equal(fixture_raw.graphs[5].node_labels, [1, 1])

    def test_single_edge_is_symmetrised(self, tmp_path):
        (tmp_path / "ONE_A.txt").write_text("1, 2\n")
        (tmp_path / "ONE_graph_indicator.txt").write_text("1\n1\n")
        (tmp_path / "ONE_graph_labels.txt").write_text("0\n")
        g = parse_tu_dataset(tmp_path, "ONE").graphs[0]
        np.testing.assert_array_equal(g.adjacency, [[0, 1], [1, 0]])

    def test_missing_file_named(self, tmp_path):
        (tmp_path / "X_A.txt").write_text("1, 2\n")
        with pytest.raises(DatasetError, match="X_graph_indicator.txt"):
            parse_tu_dataset(tmp_path, "X")

    def test_cross_graph_edge_reports_line(self, tmp_path):
        (tmp_path / "X_A.txt").write_text("1, 2\n2, 3\n")
        (tmp_path / "X_graph_indicator.txt").write_text("1\n1\n2\n")
        (tmp_path / "X_graph_labels.txt").write_text("0\n1\n")
        with pytest.raises(DatasetError, match=":2:"):
            parse_tu_dataset(tmp_path, "X")

    def test_empty_graph_rejected(self, tmp_path):
        (tmp_path / "X_A.txt").write_text("1, 2\n")
        (tmp_path / "X_graph_indicator.txt").write_text("1\n1\n")
        (tmp_path / "X_graph_labels.txt").write_text("0\n1\n")
        with pytest.raises(DatasetError, match="graph 2 has no nodes"):
            parse_tu_dataset(tmp_path, "X")

    def test_mutag_statistics(self, mutag):
        assert len(mutag) == 188
        assert mutag.num_classes == 2
        assert mutag.avg_nodes == pytest.approx(17.93, abs=0.01)
        assert mutag.feature_dim == 7

    def test_round_trip(self, fixture_raw, tmp_path):
        write_tu_dataset(fixture_raw, tmp_path, "RT")
        again = parse_tu_dataset(tmp_path, "RT")
        assert again.label_values == fixture_raw.label_values
        for g, h in zip(fixture_raw.graphs, again.graphs):
            assert g.label == h.label
            gn, hn = nx.from_numpy_array(g.adjacency), nx.from_numpy_array(h.adjacency)
            assert nx.is_isomorphic(gn, hn)
            np.testing.assert_array_equal(g.node_labels, h.node_labels)


class TestFeatures:
    def test_degree_onehot_path(self):
        raw = toy_dataset(2)
        path = Graph(adjacency=adj(3, [(0, 1), (1, 2)]), label=0)
        ds = build_features(raw.__class__([path], 1), "degree-onehot", cap_degree=10)
        np.testing.assert_array_equal(ds.graphs[0].features.argmax(axis=1), [1, 2, 1])
        assert np.all(ds.graphs[0].features.sum(axis=1) == 1)

    def test_node_label_onehot(self, fixture_raw):
        ds = build_features(fixture_raw, "node-label-onehot")
        assert ds.feature_dim == 3
        np.testing.assert_array_equal(ds.graphs[0].features[:, :2], [[1, 0], [0, 1], [1, 0]])

    def test_degree_cap_top_bin(self):
        raw = toy_dataset(2)
        star = Graph(adjacency=star_graph(13), label=0)
        ds = build_features(raw.__class__([star], 1), "degree-onehot", cap_degree=10)
        f = ds.graphs[0].features
        assert f.shape[1] == 11
        assert f[0].argmax() == 10 and f[0].sum() == 1

    def test_constant(self, fixture_raw):
        ds = build_features(fixture_raw, "constant")
        assert ds.feature_dim == 1 and all(np.all(g.features == 1) for g in ds.graphs)

    def test_node_label_policy_without_labels(self, tmp_path):
        (tmp_path / "X_A.txt").write_text("1, 2\n")
        (tmp_path / "X_graph_indicator.txt").write_text("1\n1\n")
        (tmp_path / "X_graph_labels.txt").write_text("0\n")
        raw = parse_tu_dataset(tmp_path, "X")
        with pytest.raises(DatasetError, match="degree-onehot"):
            build_features(raw, "node-label-onehot")


class TestFolds:
    def test_balanced_twenty(self):
        plan = stratified_kfold([0] * 10 + [1] * 10, 10, seed=3)
        labels = np.array([0] * 10 + [1] * 10)
        for f in plan.folds:
            assert sorted(labels[list(f)]) == [0, 1]

    def test_mutag_folds(self, mutag):
        plan = stratified_kfold(mutag, 10, seed=0)
        sizes = sorted(len(f) for f in plan.folds)
        assert set(sizes) <= {18, 19}
        labels = mutag.labels
        all_idx = sorted(i for f in plan.folds for i in f)
        assert all_idx == list(range(188))
        for f in plan.folds:
            for c in (0, 1):
                expected = (labels == c).sum() * len(f) / 188
                assert abs((labels[list(f)] == c).sum() - expected) <= 1

    def test_deterministic(self, mutag):
        assert stratified_kfold(mutag, 10, 5) == stratified_kfold(mutag, 10, 5)
        assert stratified_kfold(mutag, 10, 5) != stratified_kfold(mutag, 10, 6)

    def test_too_many_folds(self):
        with pytest.raises(DatasetError):
            stratified_kfold([0, 1, 0], 10)

    def test_relaxed_flag(self):
        assert stratified_kfold([0] * 8 + [1] * 3, 5).relaxed

    def test_split_partitions(self):
        plan = stratified_kfold([0, 1] * 10, 5)
        train, val = plan.split(2)
        assert sorted(train + val) == list(range(20)) and not set(train) & set(val)

    def test_stratified_subset(self):
        labels = [0] * 30 + [1] * 70
        idx = stratified_subset(labels, 0.1, seed=0)
        assert len(idx) == 10
        assert sum(labels[i] for i in idx) == 7
        assert len(stratified_subset(labels, 0.001, seed=0)) == 1


class TestBatch:
    def test_mask_sums(self):
        pool = toy_dataset(40, sizes=(3, 5)).graphs
        gs = [next(g for g in pool if g.n == 3), next(g for g in pool if g.n == 5)]
        b = make_batch(gs)
        assert b.n_max == 5
        np.testing.assert_array_equal(b.node_mask.sum(axis=1), [3, 5])

    def test_exact_fit_identity(self):
        g = toy_dataset(1).graphs[0]
        b = make_batch([g], g.n)
        np.testing.assert_array_equal(b.features[0], g.features)
        np.testing.assert_array_equal(b.adjacency[0], g.adjacency)

    def test_padding_zero(self):
        g = toy_dataset(1).graphs[0]
        b = make_batch([g], g.n + 4)
        assert np.all(b.features[0, g.n :] == 0)
        assert np.all(b.adjacency[0, g.n :] == 0) and np.all(b.adjacency[0, :, g.n :] == 0)

    def test_errors(self):
        with pytest.raises(DatasetError):
            make_batch([])
        g = toy_dataset(1).graphs[0]
        with pytest.raises(DatasetError):
            make_batch([g], g.n - 1)


def test_toy_dataset_classes_separable_by_mean_degree():
    ds = toy_dataset(20, seed=0)
    for g in ds.graphs:
        g.validate()
        has_leaf = (g.degrees() == 1).any()
        assert has_leaf == (g.label == 1)
