import numpy as np
import pytest

from src.dataset import (
    ANOMALOUS, NORMAL, Dataset, GraphRecord, SplitSpec, dataset_statistics, flip_pairs, generate_er_corpus,
    parse_tudataset, perturb_dataset, stratified_split, write_tudataset,
)
from src.errors import ConfigError, DataError, DatasetLoadError, DatasetParseError, SplitError
from src.utils import make_rng
from tests.conftest import write_tu_files


def _labelled_corpus(normal, anomalous):
    rng = make_rng(0, "corpus")
    records = [GraphRecord(3, [(0, 1)], np.eye(3)[rng.integers(0, 3, size=3)], NORMAL) for _ in range(normal)]
    records += [GraphRecord(3, [(0, 1), (1, 2)], np.eye(3), ANOMALOUS) for _ in range(anomalous)]
    return Dataset(tuple(records), 3, "corpus")


class TestGraphRecord:
    def test_edges_are_canonical(self):
        record = GraphRecord(3, [(2, 1), (1, 0)], np.eye(3))
        assert record.edges.tolist() == [[0, 1], [1, 2]]
        assert not record.edges.flags.writeable

    @pytest.mark.parametrize("edges", [[(0, 0)], [(0, 3)], [(0, 1), (1, 0)]])
    def test_invalid_edges(self, edges):
        with pytest.raises(DataError):
            GraphRecord(3, edges, np.eye(3))

    def test_feature_rows_must_match_nodes(self):
        with pytest.raises(DataError, match="rows"):
            GraphRecord(3, [], np.eye(2))

    def test_permuted_round_trip(self, k3):
        permuted = k3.permuted([2, 0, 1])
        assert permuted.permuted([1, 2, 0]) == k3


class TestParse:
    def test_two_graph_corpus(self, two_graph_dir):
        dataset = parse_tudataset(two_graph_dir, "TWO")
        assert len(dataset) == 2
        assert dataset.feature_dim == 2
        first, second = dataset.records
        assert first.node_count == 2 and second.node_count == 2
        assert first.features.tolist() == [[1.0, 0.0], [0.0, 1.0]]
        assert first.edges.tolist() == [[0, 1]]
        # tie between raw labels 1 and -1: the larger raw label is anomalous
        assert (first.label, second.label) == (ANOMALOUS, NORMAL)

    def test_edgeless_graph(self, tmp_path):
        write_tu_files(tmp_path, "E", "", "1\n1\n1\n", "0\n", "2\n2\n2\n")
        dataset = parse_tudataset(tmp_path, "E")
        assert len(dataset) == 1
        assert dataset.records[0].node_count == 3
        assert dataset.records[0].edge_count == 0

    def test_node_out_of_range(self, tmp_path):
        write_tu_files(tmp_path, "B", "1, 2\n2, 5\n", "1\n1\n2\n2\n", "0\n1\n", "0\n0\n0\n0\n")
        with pytest.raises(DatasetParseError) as info:
            parse_tudataset(tmp_path, "B")
        assert info.value.line_number == 2
        assert "B_A.txt:2" in str(info.value)

    def test_non_integer_token(self, tmp_path):
        write_tu_files(tmp_path, "N", "1, 2\n", "1\nx\n", "0\n", "0\n0\n")
        with pytest.raises(DatasetParseError) as info:
            parse_tudataset(tmp_path, "N")
        assert info.value.line_number == 2

    def test_missing_file(self, tmp_path):
        with pytest.raises(DatasetLoadError, match="MISSING_A.txt"):
            parse_tudataset(tmp_path, "MISSING")

    def test_whitespace_tolerated(self, tmp_path):
        write_tu_files(tmp_path, "W", " 1 ,2 \n2,  1\n", "1\n1\n", "0\n", "4\n7\n")
        dataset = parse_tudataset(tmp_path, "W")
        assert dataset.records[0].edges.tolist() == [[0, 1]]

    def test_round_trip(self, tmp_path, two_graph_dir):
        original = parse_tudataset(two_graph_dir, "TWO")
        write_tudataset(original, tmp_path / "out", "TWO")
        assert parse_tudataset(tmp_path / "out", "TWO") == original

    def test_minority_class_is_anomalous(self, tmp_path):
        write_tu_files(tmp_path, "M", "", "1\n2\n3\n", "5\n5\n3\n", "0\n0\n0\n")
        assert parse_tudataset(tmp_path, "M").labels.tolist() == [NORMAL, NORMAL, ANOMALOUS]


class TestSplit:
    def test_exact_counts(self):
        train, val, test = stratified_split(_labelled_corpus(90, 10), SplitSpec((0.7, 0.15, 0.15), seed=4))
        assert train.class_counts == (63, 7)
        assert val.class_counts == (13, 1)
        assert test.class_counts == (14, 2)

    def test_partition_and_determinism(self):
        dataset = _labelled_corpus(30, 9)
        spec = SplitSpec(seed=2)
        first = stratified_split(dataset, spec)
        second = stratified_split(dataset, spec)
        assert all(a == b for a, b in zip(first, second))
        assert sum(len(part) for part in first) == len(dataset)

    def test_stratification(self):
        dataset = _labelled_corpus(50, 12)
        prior = 12 / 62
        for part in stratified_split(dataset, SplitSpec(seed=1)):
            assert abs(part.class_counts[1] / len(part) - prior) <= 1 / len(part)

    def test_invalid_ratios(self):
        with pytest.raises(ConfigError):
            SplitSpec((1.0, 0.0, 0.0))

    def test_small_class(self):
        with pytest.raises(SplitError):
            stratified_split(_labelled_corpus(10, 2), SplitSpec())


class TestPerturb:
    def test_zero_probability_only_relabels(self):
        corpus = generate_er_corpus(20, 8, 0.3, 4, seed=1)
        result = perturb_dataset(corpus, 0.25, 0.0, seed=1)
        perturbed = [r for r in result if r.label == ANOMALOUS]
        assert len(perturbed) == 5
        originals = [(r.edges.tolist(), r.features.tolist()) for r in corpus]
        for record in perturbed:
            assert (record.edges.tolist(), record.features.tolist()) in originals

    def test_full_flip_on_p2(self, p2):
        flipped, flips = flip_pairs(p2, 1.0, make_rng(0, "flip"))
        assert flipped.edge_count == 0
        assert flips == 1

    def test_counts(self):
        corpus = generate_er_corpus(1000, 5, 0.3, 2, seed=0)
        result = perturb_dataset(corpus, 0.05, 0.15, seed=0)
        assert result.class_counts == (950, 50)

    def test_determinism(self):
        corpus = generate_er_corpus(30, 6, 0.4, 3, seed=2)
        assert perturb_dataset(corpus, 0.2, 0.3, 5) == perturb_dataset(corpus, 0.2, 0.3, 5)

    def test_invalid_probability(self):
        corpus = generate_er_corpus(5, 4, 0.5, 2, seed=0)
        with pytest.raises(ConfigError):
            perturb_dataset(corpus, 0.5, 1.5, 0)

    def test_flip_count_statistics(self):
        record = GraphRecord(10, [], np.eye(10))
        rng = make_rng(9, "flip-stats")
        counts = np.array([flip_pairs(record, 0.2, rng)[1] for _ in range(2000)])
        pairs = 45
        standard_error = np.sqrt(pairs * 0.2 * 0.8 / len(counts))
        assert abs(counts.mean() - 0.2 * pairs) <= 3 * standard_error


def test_dataset_statistics():
    stats = dataset_statistics(_labelled_corpus(6, 3))
    assert stats["graphs"] == 9
    assert (stats["n_n"], stats["n_a"]) == (6, 3)
    assert stats["anomaly_ratio"] == pytest.approx(1 / 3)
    assert stats["avg_nodes"] == 3.0
    assert stats["avg_edges"] == pytest.approx((6 * 1 + 3 * 2) / 9)
