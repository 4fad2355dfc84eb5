"""
Graph corpora: TUDataset ingestion, stratified splits and perturbation datasets.
"""

import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from src.config.model_config import SPLIT_PARAMS, SYNTHETIC_PARAMS
from src.errors import (
    ConfigError,
    DataError,
    DatasetLoadError,
    DatasetParseError,
    SplitError,
)
from src.utils import ensure_dir, make_rng

NORMAL = 0
ANOMALOUS = 1

TU_SUFFIXES = ("A", "graph_indicator", "graph_labels", "node_labels")


def _canonical_edges(edges, node_count):
    """Sort, orient (i < j) and validate an edge array."""
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    if edges.size == 0:
        return np.zeros((0, 2), dtype=np.int64)
    if edges.min() < 0 or edges.max() >= node_count:
        raise DataError(f"Edge endpoint outside [0, {node_count})")
    if np.any(edges[:, 0] == edges[:, 1]):
        raise DataError("Self-loops are not allowed")
    edges = np.sort(edges, axis=1)
    order = np.lexsort((edges[:, 1], edges[:, 0]))
    edges = edges[order]
    if np.any(np.all(edges[1:] == edges[:-1], axis=1)):
        raise DataError("Duplicate edge")
    return edges


@dataclass(frozen=True, eq=False)
class GraphRecord:
    """One attributed, undirected graph.

    Edges are stored once per unordered pair as an (m, 2) array with i < j,
    sorted lexicographically. Arrays are read-only after construction.
    """

    node_count: int
    edges: np.ndarray
    features: np.ndarray
    label: int = NORMAL

    def __post_init__(self):
        if self.node_count < 1:
            raise DataError(f"Graph needs at least one node, got {self.node_count}")
        edges = _canonical_edges(self.edges, self.node_count)
        features = np.array(self.features, dtype=np.float64, ndmin=2)
        if features.shape[0] != self.node_count:
            raise DataError(
                f"Feature matrix has {features.shape[0]} rows for {self.node_count} nodes"
            )
        if self.label not in (NORMAL, ANOMALOUS):
            raise DataError(f"Graph label must be 0 or 1, got {self.label}")
        edges.flags.writeable = False
        features.flags.writeable = False
        object.__setattr__(self, "edges", edges)
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "label", int(self.label))

    @property
    def edge_count(self):
        return int(self.edges.shape[0])

    @property
    def feature_dim(self):
        return int(self.features.shape[1])

    def adjacency(self):
        """Dense symmetric 0/1 adjacency matrix."""
        adj = np.zeros((self.node_count, self.node_count))
        if self.edge_count:
            adj[self.edges[:, 0], self.edges[:, 1]] = 1.0
            adj[self.edges[:, 1], self.edges[:, 0]] = 1.0
        return adj

    @classmethod
    def from_adjacency(cls, adjacency, features, label=NORMAL):
        """Build a record from a dense symmetric adjacency matrix."""
        adjacency = np.asarray(adjacency)
        rows, cols = np.nonzero(np.triu(adjacency, k=1))
        return cls(adjacency.shape[0], np.column_stack([rows, cols]), features, label)

    def permuted(self, permutation):
        """Relabel nodes: new node k is old node permutation[k]."""
        permutation = np.asarray(permutation)
        inverse = np.empty_like(permutation)
        inverse[permutation] = np.arange(len(permutation))
        return GraphRecord(self.node_count, inverse[self.edges], self.features[permutation], self.label)

    def __eq__(self, other):
        if not isinstance(other, GraphRecord):
            return NotImplemented
        return (
            self.node_count == other.node_count
            and self.label == other.label
            and np.array_equal(self.edges, other.edges)
            and np.array_equal(self.features, other.features)
        )

    __hash__ = None


@dataclass(frozen=True)
class Dataset:
    """An immutable collection of graphs sharing one feature dimension."""

    records: tuple
    feature_dim: int
    name: str = field(default="dataset", compare=False)

    def __post_init__(self):
        object.__setattr__(self, "records", tuple(self.records))
        if self.feature_dim <= 0:
            raise DataError(f"Feature dimension must be positive, got {self.feature_dim}")
        for index, record in enumerate(self.records):
            if record.feature_dim != self.feature_dim:
                raise DataError(
                    f"Graph {index} has {record.feature_dim} features, expected {self.feature_dim}"
                )

    @property
    def class_counts(self):
        """(n_n, n_a): number of normal and anomalous graphs."""
        labels = self.labels
        anomalous = int(labels.sum())
        return (len(labels) - anomalous, anomalous)

    @property
    def labels(self):
        return np.array([r.label for r in self.records], dtype=np.int64)

    def subset(self, indices, name=None):
        return Dataset(
            tuple(self.records[i] for i in indices),
            self.feature_dim,
            name or self.name,
        )

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)


@dataclass(frozen=True)
class SplitSpec:
    """Train/validation/test ratios and the seed used to shuffle each class."""

    ratios: tuple = (
        SPLIT_PARAMS["train_ratio"],
        SPLIT_PARAMS["val_ratio"],
        SPLIT_PARAMS["test_ratio"],
    )
    seed: int = 0

    def __post_init__(self):
        if len(self.ratios) != 3:
            raise ConfigError(f"Expected three split ratios, got {self.ratios}")
        if any(not 0.0 < r < 1.0 for r in self.ratios):
            raise ConfigError(f"Every split ratio must lie in (0, 1), got {self.ratios}")
        if abs(sum(self.ratios) - 1.0) > 1e-9:
            raise ConfigError(f"Split ratios must sum to 1, got {sum(self.ratios)}")


# TUDataset text format

def _tu_path(directory, name, suffix):
    return Path(directory) / f"{name}_{suffix}.txt"


def _read_lines(path):
    if not path.is_file():
        raise DatasetLoadError(f"Dataset file not found: {path}", path=str(path))
    try:
        with open(path) as f:
            return f.read().splitlines()
    except OSError as e:
        raise DatasetLoadError(f"Failed to read {path}: {e}", path=str(path))


def _parse_int(token, path, line_number):
    try:
        return int(token.strip())
    except ValueError:
        raise DatasetParseError(f"Expected an integer, got {token.strip()!r}", str(path), line_number)


def _read_int_column(path):
    """Read one integer per non-blank line."""
    values = []
    for line_number, line in enumerate(_read_lines(path), start=1):
        if not line.strip():
            continue
        values.append(_parse_int(line, path, line_number))
    return values


def _anomaly_label_map(raw_labels):
    """Map raw graph labels to {0, 1}: the minority class becomes anomalous.

    Ties go to the numerically larger raw label.
    """
    values, counts = np.unique(raw_labels, return_counts=True)
    if len(values) > 2:
        raise DataError(f"Expected at most two graph classes, found {values.tolist()}")
    if len(values) == 1:
        return {int(values[0]): NORMAL}
    if counts[0] < counts[1]:
        anomalous = values[0]
    else:
        anomalous = values[1]
    return {int(v): (ANOMALOUS if v == anomalous else NORMAL) for v in values}


def parse_tudataset(directory_path, dataset_name):
    """
    Parse a TUDataset-format corpus into a Dataset.

    Node labels are one-hot encoded over the sorted vocabulary of distinct
    node labels; the minority graph class becomes label 1.

    Args:
        directory_path (str or Path): Directory holding the `<name>_*.txt` files
        dataset_name (str): File prefix

    Returns:
        Dataset

    Raises:
        DatasetLoadError: If one of the four files is missing
        DatasetParseError: For non-integer tokens or out-of-range node ids
    """
    directory = Path(directory_path)
    paths = {s: _tu_path(directory, dataset_name, s) for s in TU_SUFFIXES}
    for path in paths.values():
        if not path.is_file():
            raise DatasetLoadError(f"Dataset file not found: {path}", path=str(path))

    indicator = _read_int_column(paths["graph_indicator"])
    node_total = len(indicator)
    graph_ids = list(dict.fromkeys(indicator))
    local_index = np.empty(node_total, dtype=np.int64)
    members = {gid: [] for gid in graph_ids}
    for node, gid in enumerate(indicator):
        local_index[node] = len(members[gid])
        members[gid].append(node)

    node_labels = _read_int_column(paths["node_labels"])
    if len(node_labels) != node_total:
        raise DatasetParseError(
            f"{len(node_labels)} node labels for {node_total} nodes", str(paths["node_labels"]), len(node_labels)
        )
    raw_graph_labels = _read_int_column(paths["graph_labels"])
    if len(raw_graph_labels) != len(graph_ids):
        raise DatasetParseError(
            f"{len(raw_graph_labels)} graph labels for {len(graph_ids)} graphs",
            str(paths["graph_labels"]),
            len(raw_graph_labels),
        )

    edges = {gid: set() for gid in graph_ids}
    for line_number, line in enumerate(_read_lines(paths["A"]), start=1):
        if not line.strip():
            continue
        tokens = line.split(",")
        if len(tokens) != 2:
            raise DatasetParseError(f"Expected 'i, j', got {line.strip()!r}", str(paths["A"]), line_number)
        i, j = (_parse_int(t, paths["A"], line_number) for t in tokens)
        for node in (i, j):
            if not 1 <= node <= node_total:
                raise DatasetParseError(
                    f"Node {node} outside indicator range 1..{node_total}", str(paths["A"]), line_number
                )
        gid = indicator[i - 1]
        if indicator[j - 1] != gid:
            raise DatasetParseError(f"Edge ({i}, {j}) joins two graphs", str(paths["A"]), line_number)
        if i == j:
            logging.debug(f"Dropping self-loop on node {i}")
            continue
        a, b = local_index[i - 1], local_index[j - 1]
        edges[gid].add((min(a, b), max(a, b)))

    vocabulary = sorted(set(node_labels))
    column = {value: k for k, value in enumerate(vocabulary)}
    one_hot = np.zeros((node_total, len(vocabulary)))
    one_hot[np.arange(node_total), [column[v] for v in node_labels]] = 1.0

    label_map = _anomaly_label_map(raw_graph_labels)
    records = []
    for gid, raw_label in zip(graph_ids, raw_graph_labels):
        nodes = members[gid]
        records.append(GraphRecord(
            node_count=len(nodes),
            edges=sorted(edges[gid]),
            features=one_hot[nodes],
            label=label_map[raw_label],
        ))

    dataset = Dataset(tuple(records), len(vocabulary), dataset_name)
    n_n, n_a = dataset.class_counts
    logging.info(
        f"Parsed {dataset_name}: {len(records)} graphs ({n_n} normal, {n_a} anomalous), "
        f"{len(vocabulary)} node labels"
    )
    return dataset


def write_tudataset(dataset, directory_path, dataset_name):
    """
    Write a Dataset in TUDataset text format (both edge directions listed).

    Node labels are written as the column index of each one-hot row and
    graph labels as 0/1.

    Returns:
        Path: The directory written to

    Raises:
        DataError: If some feature row is not one-hot
    """
    directory = ensure_dir(directory_path)
    adjacency_lines, indicator_lines, node_label_lines, graph_label_lines = [], [], [], []
    offset = 0
    for gid, record in enumerate(dataset.records, start=1):
        features = record.features
        if not (np.all((features == 0) | (features == 1)) and np.all(features.sum(axis=1) == 1)):
            raise DataError(f"Graph {gid} has non one-hot features; cannot write node labels")
        for i, j in record.edges:
            adjacency_lines.append(f"{offset + i + 1}, {offset + j + 1}")
            adjacency_lines.append(f"{offset + j + 1}, {offset + i + 1}")
        indicator_lines.extend([str(gid)] * record.node_count)
        node_label_lines.extend(str(int(k)) for k in features.argmax(axis=1))
        graph_label_lines.append(str(record.label))
        offset += record.node_count

    contents = {
        "A": adjacency_lines,
        "graph_indicator": indicator_lines,
        "graph_labels": graph_label_lines,
        "node_labels": node_label_lines,
    }
    for suffix, lines in contents.items():
        with open(_tu_path(directory, dataset_name, suffix), 'w') as f:
            f.write("\n".join(lines) + ("\n" if lines else ""))
    logging.info(f"Wrote {len(dataset)} graphs to {directory}/{dataset_name}_*.txt")
    return directory


# Splits and synthetic corpora

def stratified_split(dataset, spec):
    """
    Split a dataset into train/validation/test with per-class proportions.

    Each class is shuffled with its own seeded stream and cut at
    floor(train * n) and floor(val * n); the remainder goes to test.

    Returns:
        tuple: (train, val, test) Datasets, each in original record order

    Raises:
        SplitError: If a class has fewer than three graphs
    """
    labels = dataset.labels
    parts = ([], [], [])
    for label in (NORMAL, ANOMALOUS):
        members = np.flatnonzero(labels == label)
        if len(members) < 3:
            raise SplitError(f"Class {label} has {len(members)} graphs; at least 3 are needed to split")
        shuffled = make_rng(spec.seed, "split", label).permutation(members)
        n_train = math.floor(spec.ratios[0] * len(members) + 1e-9)
        n_val = math.floor(spec.ratios[1] * len(members) + 1e-9)
        parts[0].extend(shuffled[:n_train])
        parts[1].extend(shuffled[n_train:n_train + n_val])
        parts[2].extend(shuffled[n_train + n_val:])

    names = ("train", "val", "test")
    splits = tuple(
        dataset.subset(sorted(int(i) for i in part), f"{dataset.name}-{split_name}")
        for part, split_name in zip(parts, names)
    )
    logging.info("Split sizes: " + ", ".join(f"{n}={len(s)} {s.class_counts}" for n, s in zip(names, splits)))
    return splits


def flip_pairs(record, flip_prob, rng):
    """Flip every unordered node pair independently with probability flip_prob.

    Returns:
        tuple: (perturbed GraphRecord with the same label, number of flipped pairs)
    """
    n = record.node_count
    rows, cols = np.triu_indices(n, k=1)
    flips = rng.random(len(rows)) < flip_prob
    adjacency = record.adjacency()
    adjacency[rows[flips], cols[flips]] = 1.0 - adjacency[rows[flips], cols[flips]]
    return GraphRecord.from_adjacency(adjacency, record.features, record.label), int(flips.sum())


def perturb_dataset(dataset, sample_fraction, flip_prob, seed):
    """
    Build a perturbation anomaly dataset from normal graphs.

    ceil(sample_fraction * |normal|) normal graphs are drawn, their node-pair
    adjacency bits flipped independently with probability flip_prob, and the
    copies labelled anomalous. The output holds the untouched normal graphs
    followed by the perturbed copies; the originals of perturbed graphs are
    dropped.

    Raises:
        ConfigError: If sample_fraction is outside (0, 1] or flip_prob outside [0, 1]
    """
    if not 0.0 < sample_fraction <= 1.0:
        raise ConfigError(f"sample_fraction must lie in (0, 1], got {sample_fraction}")
    if not 0.0 <= flip_prob <= 1.0:
        raise ConfigError(f"flip_prob must lie in [0, 1], got {flip_prob}")

    normal = [r for r in dataset.records if r.label == NORMAL]
    if len(normal) < len(dataset):
        logging.info(f"Ignoring {len(dataset) - len(normal)} anomalous graphs before perturbation")
    if not normal:
        raise DataError("Perturbation needs at least one normal graph")

    count = math.ceil(sample_fraction * len(normal) - 1e-9)
    rng = make_rng(seed, "perturb")
    selected = np.sort(rng.choice(len(normal), size=count, replace=False))
    chosen = set(selected.tolist())

    kept = [r for k, r in enumerate(normal) if k not in chosen]
    perturbed = []
    for k in selected:
        record, _ = flip_pairs(normal[k], flip_prob, rng)
        perturbed.append(replace(record, label=ANOMALOUS))

    result = Dataset(tuple(kept + perturbed), dataset.feature_dim, f"{dataset.name}-p{flip_prob:g}")
    logging.info(f"Perturbed {len(perturbed)} of {len(normal)} normal graphs with flip_prob={flip_prob}")
    return result


def er_graph(num_nodes, edge_prob, num_node_labels, rng, label=NORMAL):
    """Erdős–Rényi graph with uniformly random one-hot node labels."""
    rows, cols = np.triu_indices(num_nodes, k=1)
    present = rng.random(len(rows)) < edge_prob
    features = np.zeros((num_nodes, num_node_labels))
    features[np.arange(num_nodes), rng.integers(0, num_node_labels, size=num_nodes)] = 1.0
    return GraphRecord(num_nodes, np.column_stack([rows[present], cols[present]]), features, label)


def generate_er_corpus(num_graphs=SYNTHETIC_PARAMS["num_graphs"],
                       num_nodes=SYNTHETIC_PARAMS["num_nodes"],
                       edge_prob=SYNTHETIC_PARAMS["edge_prob"],
                       num_node_labels=SYNTHETIC_PARAMS["num_node_labels"],
                       seed=0):
    """Generate a corpus of normal Erdős–Rényi graphs."""
    rng = make_rng(seed, "er-corpus")
    records = tuple(er_graph(num_nodes, edge_prob, num_node_labels, rng) for _ in range(num_graphs))
    return Dataset(records, num_node_labels, "synthetic-er")


def dataset_statistics(dataset):
    """Summary statistics of a corpus.

    Returns:
        dict: graphs, n_n, n_a, anomaly_ratio, avg_nodes, avg_edges, feature_dim
    """
    n_n, n_a = dataset.class_counts
    total = len(dataset)
    return {
        "name": dataset.name,
        "graphs": total,
        "n_n": n_n,
        "n_a": n_a,
        "anomaly_ratio": n_a / total if total else 0.0,
        "avg_nodes": float(np.mean([r.node_count for r in dataset])) if total else 0.0,
        "avg_edges": float(np.mean([r.edge_count for r in dataset])) if total else 0.0,
        "feature_dim": dataset.feature_dim,
    }
