from dataclasses import dataclass
from functools import cached_property
from math import floor, sqrt
from pathlib import Path
from typing import Optional, Union
import logging
import warnings

import networkx as nx
import numpy as np
from scipy import sparse

from .constants import Constants
from .errors import DatasetError
from .methods import Methods
from .types import SparseOperator


@dataclass(frozen=True, eq=False)
class GraphDataset:
    """
    An undirected, attributed, labelled graph. `edges` is a symmetric CSR adjacency matrix with unit weights,
    sorted column indices, no duplicates and no stored self-loops
    """

    name: str
    features: np.ndarray
    labels: np.ndarray
    edges: sparse.csr_matrix
    num_classes: int

    def __post_init__(self):
        n = self.labels.shape[0]

        if self.features.ndim != 2 or self.features.shape[0] != n:
            raise DatasetError(f"feature row count does not match the number of nodes: {self.features.shape}")
        if self.edges.shape != (n, n):
            raise DatasetError(f"adjacency shape does not match the number of nodes: {self.edges.shape}")
        if self.edges.indptr.shape[0] != n + 1:
            raise DatasetError(f"invalid CSR row pointer length: {self.edges.indptr.shape[0]}")
        if np.any(np.diff(self.edges.indptr) < 0):
            raise DatasetError("CSR row pointer is not monotone")

        row_of_entry = np.repeat(np.arange(n), np.diff(self.edges.indptr))
        unsorted = (row_of_entry[1:] == row_of_entry[:-1]) & (np.diff(self.edges.indices) <= 0)
        if np.any(unsorted):
            raise DatasetError(
                f"CSR column indices are not strictly increasing in row: {row_of_entry[1:][unsorted][0]}"
            )
        if np.any(self.edges.indices == row_of_entry):
            raise DatasetError(f"self-loop stored in adjacency: {row_of_entry[self.edges.indices == row_of_entry][0]}")
        if (self.edges != self.edges.T).nnz != 0:
            raise DatasetError("adjacency is not symmetric")
        if n and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise DatasetError(f"labels outside [0, {self.num_classes}): {np.unique(self.labels)}")

    @property
    def num_nodes(self) -> int:
        return int(self.labels.shape[0])

    @property
    def feature_dim(self) -> int:
        return int(self.features.shape[1])

    @property
    def num_edges(self) -> int:
        """
        Number of undirected edges
        """

        return int(self.edges.nnz // 2)

    @cached_property
    def gcn_operator(self) -> SparseOperator:
        return gcn_normalize(self)

    @cached_property
    def row_operator(self) -> SparseOperator:
        return row_normalize(self)

    def permuted(self, permutation: np.ndarray) -> "GraphDataset":
        """
        Returns the same graph with node `permutation[i]` renamed to `i`
        """

        permutation = np.asarray(permutation)
        edges = self.edges[permutation][:, permutation].tocsr()
        edges.sort_indices()

        return GraphDataset(
            name=self.name,
            features=self.features[permutation],
            labels=self.labels[permutation],
            edges=edges,
            num_classes=self.num_classes
        )


@dataclass(frozen=True)
class ClassPartition:
    id_classes: tuple[int, ...]
    ood_classes: tuple[int, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "id_classes", tuple(sorted(int(c) for c in self.id_classes)))
        object.__setattr__(self, "ood_classes", tuple(sorted(int(c) for c in self.ood_classes)))

        if len(self.id_classes) < 2:
            raise DatasetError(f"at least two ID classes are required: {self.id_classes}")
        if set(self.id_classes) & set(self.ood_classes):
            raise DatasetError(f"ID and OOD classes overlap: {set(self.id_classes) & set(self.ood_classes)}")

    @classmethod
    def leave_out(cls, ood_classes: tuple[int, ...], num_classes: int) -> "ClassPartition":
        partition = cls(
            id_classes=tuple(c for c in range(num_classes) if c not in set(ood_classes)),
            ood_classes=tuple(ood_classes)
        )
        partition.check(num_classes)

        return partition

    def check(self, num_classes: int) -> None:
        for c in (*self.id_classes, *self.ood_classes):
            if not 0 <= c < num_classes:
                raise DatasetError(f"class index outside [0, {num_classes}): {c}")

    @property
    def num_id_classes(self) -> int:
        return len(self.id_classes)


@dataclass(frozen=True, eq=False)
class SplitMasks:
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray

    def __post_init__(self):
        if np.any(self.train & self.val) or np.any(self.train & self.test) or np.any(self.val & self.test):
            raise DatasetError("split masks are not pairwise disjoint")

    def check_no_leak(self, labels: np.ndarray, partition: ClassPartition) -> None:
        """
        Raises if any training node carries an OOD (or otherwise non-ID) label
        """

        leaked = self.train & ~np.isin(labels, partition.id_classes)
        if np.any(leaked):
            raise DatasetError(f"training mask contains non-ID nodes: {np.flatnonzero(leaked)[:10].tolist()}")

    def name_of(self, node: int) -> str:
        if self.train[node]:
            return "train"
        if self.val[node]:
            return "val"
        if self.test[node]:
            return "test"
        return "unused"


@dataclass(frozen=True)
class CsbmParams:
    nodes_per_class: int
    num_classes: int
    p_in: float
    p_out: float
    feature_dim: int
    mean_separation: float = 1.5
    noise_sigma: float = 1.0
    seed: int = 0

    def __post_init__(self):
        for name in ("p_in", "p_out"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise DatasetError(f"{name} must be a probability: {getattr(self, name)}")
        for name in ("nodes_per_class", "num_classes", "feature_dim"):
            if getattr(self, name) < 1:
                raise DatasetError(f"{name} must be at least 1: {getattr(self, name)}")
        if self.noise_sigma <= 0:
            raise DatasetError(f"noise_sigma must be positive: {self.noise_sigma}")
        if self.feature_dim < self.num_classes:
            # Class means sit on one-hot axes, so every class needs its own feature axis
            raise DatasetError(
                f"feature_dim must be at least num_classes: {self.feature_dim} < {self.num_classes}"
            )


@dataclass(frozen=True)
class DatasetSplitSpec:
    """
    Contents of an optional split.json beside a dataset
    """

    ood_classes: tuple[int, ...] = ()
    train_frac: float = Constants.DEFAULT_TRAIN_FRAC
    val_frac: float = Constants.DEFAULT_VAL_FRAC
    seed: int = 0


def build_adjacency(num_nodes: int, sources: np.ndarray, targets: np.ndarray) -> sparse.csr_matrix:
    """
    Symmetrises and deduplicates an edge list, dropping self-loops
    """

    sources = np.asarray(sources, dtype=np.int64)
    targets = np.asarray(targets, dtype=np.int64)
    keep = sources != targets
    rows = np.concatenate((sources[keep], targets[keep]))
    cols = np.concatenate((targets[keep], sources[keep]))

    adjacency = sparse.coo_matrix(
        (np.ones(rows.shape[0], dtype=np.float64), (rows, cols)), shape=(num_nodes, num_nodes)
    ).tocsr()
    adjacency.sum_duplicates()
    adjacency.data[:] = 1.0
    adjacency.sort_indices()

    return adjacency


def load_dataset(directory: Union[str, Path], logger: Optional[logging.Logger] = None) -> GraphDataset:
    logger = logger or logging.getLogger(__name__)
    directory = Path(directory)

    for file_name in (
            Constants.META_FILE_NAME, Constants.EDGES_FILE_NAME,
            Constants.FEATURES_FILE_NAME, Constants.LABELS_FILE_NAME
    ):
        if not (directory / file_name).is_file():
            raise DatasetError(f"dataset file not found: {directory / file_name}")

    meta: dict = Methods.read_json(directory / Constants.META_FILE_NAME)
    try:
        num_nodes = int(meta["num_nodes"])
        num_classes = int(meta["num_classes"])
        feature_dim = int(meta["feature_dim"])
        name = str(meta.get("name", directory.name))
    except (KeyError, TypeError, ValueError) as ex:
        raise DatasetError(f"invalid dataset meta file: {meta}") from ex

    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")  # numpy warns on an empty edges file
            edge_array = np.loadtxt(directory / Constants.EDGES_FILE_NAME, dtype=np.int64, delimiter="\t", ndmin=2)
    except ValueError as ex:
        raise DatasetError(f"invalid edges file: {ex}") from ex
    edge_array = edge_array.reshape(-1, 2)
    if edge_array.size and (edge_array.min() < 0 or edge_array.max() >= num_nodes):
        raise DatasetError(f"node index out of range [0, {num_nodes}) in edges file")

    try:
        features = np.loadtxt(directory / Constants.FEATURES_FILE_NAME, dtype=np.float64, delimiter=",", ndmin=2)
    except ValueError as ex:
        raise DatasetError(f"invalid features file: {ex}") from ex
    if features.size == num_nodes * feature_dim:
        # Single-row and single-column files come back with the wrong orientation
        features = features.reshape(num_nodes, feature_dim)
    if features.shape != (num_nodes, feature_dim):
        raise DatasetError(
            f"features shape does not match meta file: {features.shape} != {(num_nodes, feature_dim)}"
        )

    with open(directory / Constants.LABELS_FILE_NAME, "r", encoding="utf-8") as labels_file:
        label_lines = [line.strip() for line in labels_file.read().split("\n") if line.strip()]
    try:
        labels = np.array([int(line) for line in label_lines], dtype=np.int64)
    except ValueError as ex:
        raise DatasetError(f"non-integer label in labels file: {ex}") from ex
    if labels.shape[0] != num_nodes:
        raise DatasetError(f"label count does not match meta file: {labels.shape[0]} != {num_nodes}")

    dataset = GraphDataset(
        name=name,
        features=features,
        labels=labels,
        edges=build_adjacency(num_nodes, edge_array[:, 0], edge_array[:, 1]),
        num_classes=num_classes
    )
    logger.info(
        f"Dataset '{name}' loaded: {dataset.num_nodes} nodes, {dataset.num_edges} edges, {num_classes} classes."
    )

    return dataset


def load_split_spec(directory: Union[str, Path]) -> Optional[DatasetSplitSpec]:
    path = Path(directory) / Constants.SPLIT_FILE_NAME
    if not path.is_file():
        return None

    data: dict = Methods.read_json(path)
    return DatasetSplitSpec(
        ood_classes=tuple(int(label) for label in data.get("ood_classes", ())),
        train_frac=float(data.get("train_frac", Constants.DEFAULT_TRAIN_FRAC)),
        val_frac=float(data.get("val_frac", Constants.DEFAULT_VAL_FRAC)),
        seed=int(data.get("seed", 0))
    )


def save_dataset(dataset: GraphDataset, directory: Union[str, Path], split_spec: Optional[DatasetSplitSpec] = None) -> None:
    """
    Writes the canonical directory form; loading and re-saving it reproduces the files byte for byte
    """

    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)

    Methods.write_json(directory / Constants.META_FILE_NAME, {
        "num_nodes": dataset.num_nodes,
        "num_classes": dataset.num_classes,
        "feature_dim": dataset.feature_dim,
        "name": dataset.name
    })

    upper = sparse.triu(dataset.edges, k=1).tocoo()
    order = np.lexsort((upper.col, upper.row))
    with open(directory / Constants.EDGES_FILE_NAME, "w", encoding="utf-8", newline="\n") as edges_file:
        edges_file.write("".join(f"{upper.row[i]}\t{upper.col[i]}\n" for i in order))

    with open(directory / Constants.FEATURES_FILE_NAME, "w", encoding="utf-8", newline="\n") as features_file:
        np.savetxt(features_file, dataset.features, fmt="%.17g", delimiter=",", newline="\n")

    with open(directory / Constants.LABELS_FILE_NAME, "w", encoding="utf-8", newline="\n") as labels_file:
        labels_file.write("".join(f"{label}\n" for label in dataset.labels))

    if split_spec is not None:
        Methods.write_json(directory / Constants.SPLIT_FILE_NAME, {
            "ood_classes": list(split_spec.ood_classes),
            "train_frac": split_spec.train_frac,
            "val_frac": split_spec.val_frac,
            "seed": split_spec.seed
        })


def gcn_normalize(dataset: GraphDataset) -> SparseOperator:
    """
    D^-1/2 (A + I) D^-1/2, with D the degree matrix of A + I
    """

    with_loops = (dataset.edges + sparse.identity(dataset.num_nodes, format="csr")).tocsr()
    degrees = np.asarray(with_loops.sum(axis=1)).ravel()
    scaling = sparse.diags(1.0 / np.sqrt(degrees))

    operator = (scaling @ with_loops @ scaling).tocsr()
    operator.sort_indices()

    return operator


def row_normalize(dataset: GraphDataset) -> SparseOperator:
    """
    Mean aggregation over neighbours: entry (u, v) = 1/deg(u). Rows of isolated nodes stay empty
    """

    degrees = np.asarray(dataset.edges.sum(axis=1)).ravel()
    inverse = np.zeros_like(degrees)
    np.divide(1.0, degrees, out=inverse, where=degrees > 0)

    operator = (sparse.diags(inverse) @ dataset.edges).tocsr()
    operator.eliminate_zeros()
    operator.sort_indices()

    return operator


def _split_counts(size: int, train_frac: float, val_frac: float) -> tuple[int, int, int]:
    """
    Floor-with-minimum rule: every subset gets at least one node when the class has at least three.
    A two-node class gets one train and one test node, a single node goes to train
    """

    if size >= 3:
        n_train = max(1, min(floor(train_frac * size), size - 2))
        n_val = max(1, min(floor(val_frac * size), size - n_train - 1))
    else:
        # Too small to fill every subset; train first, then test
        n_train = 1 if size >= 1 else 0
        n_val = 0

    return n_train, n_val, size - n_train - n_val


def leave_out_class_split(
        dataset: GraphDataset, partition: ClassPartition, train_frac: float, val_frac: float, seed: int
) -> SplitMasks:
    if not (0 < train_frac < 1 and 0 < val_frac < 1 and train_frac + val_frac < 1):
        raise DatasetError(f"invalid split fractions (train_frac={train_frac}, val_frac={val_frac})")
    partition.check(dataset.num_classes)

    rng = np.random.default_rng(seed)
    train = np.zeros(dataset.num_nodes, dtype=bool)
    val = np.zeros(dataset.num_nodes, dtype=bool)
    test = np.zeros(dataset.num_nodes, dtype=bool)

    for class_index in partition.id_classes:
        nodes = rng.permutation(np.flatnonzero(dataset.labels == class_index))
        if nodes.shape[0] == 0:
            raise DatasetError(f"ID class has no nodes: {class_index}")

        n_train, n_val, _ = _split_counts(nodes.shape[0], train_frac, val_frac)
        train[nodes[:n_train]] = True
        val[nodes[n_train:n_train + n_val]] = True
        test[nodes[n_train + n_val:]] = True

    ood_nodes = rng.permutation(np.flatnonzero(np.isin(dataset.labels, partition.ood_classes)))
    if ood_nodes.shape[0]:
        test_frac = 1.0 - train_frac - val_frac
        n_val_ood = int(round(ood_nodes.shape[0] * val_frac / (val_frac + test_frac)))
        if ood_nodes.shape[0] >= 2:
            n_val_ood = min(max(n_val_ood, 1), ood_nodes.shape[0] - 1)
        val[ood_nodes[:n_val_ood]] = True
        test[ood_nodes[n_val_ood:]] = True

    split = SplitMasks(train=train, val=val, test=test)
    split.check_no_leak(dataset.labels, partition)

    return split


def remap_id_labels(labels: np.ndarray, partition: ClassPartition) -> np.ndarray:
    """
    ID classes become 0..|C_ID|-1 in ascending original order; every other node becomes -1
    """

    lookup = np.full(int(max(labels.max(initial=0), *partition.id_classes)) + 1, Constants.OOD_LABEL, dtype=np.int64)
    lookup[list(partition.id_classes)] = np.arange(partition.num_id_classes)

    return lookup[labels]


def generate_csbm(params: CsbmParams) -> GraphDataset:
    sizes = [params.nodes_per_class] * params.num_classes
    probabilities = [
        [params.p_in if row == col else params.p_out for col in range(params.num_classes)]
        for row in range(params.num_classes)
    ]
    graph = nx.stochastic_block_model(sizes, probabilities, seed=params.seed, directed=False, selfloops=False)
    edge_list = np.array(sorted(graph.edges()), dtype=np.int64).reshape(-1, 2)

    num_nodes = params.nodes_per_class * params.num_classes
    labels = np.repeat(np.arange(params.num_classes, dtype=np.int64), params.nodes_per_class)

    # One-hot axes scaled so that every pair of class means is `mean_separation` apart
    means = np.zeros((params.num_classes, params.feature_dim))
    means[np.arange(params.num_classes), np.arange(params.num_classes)] = params.mean_separation / sqrt(2.0)
    rng = np.random.default_rng(params.seed)
    features = means[labels] + params.noise_sigma * rng.standard_normal((num_nodes, params.feature_dim))

    return GraphDataset(
        name=f"csbm_c{params.num_classes}_n{params.nodes_per_class}_s{params.seed}",
        features=features,
        labels=labels,
        edges=build_adjacency(num_nodes, edge_list[:, 0], edge_list[:, 1]),
        num_classes=params.num_classes
    )


def edge_homophily(dataset: GraphDataset) -> float:
    if dataset.num_edges == 0:
        raise DatasetError(f"undefined homophily (graph has no edges): {dataset.name}")

    upper = sparse.triu(dataset.edges, k=1).tocoo()
    return float(np.mean(dataset.labels[upper.row] == dataset.labels[upper.col]))
