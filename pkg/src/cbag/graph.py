"""Graph data model, symmetric adjacency normalization and seeded splits."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import SizeError

# Feature matrices with more entries than this are kept in CSR form.
DENSE_FEATURE_LIMIT = 64_000_000

TRAIN_FRACTION = 0.2
VAL_FRACTION = 0.2


def canonical_edges(pairs, num_nodes: int | None = None) -> np.ndarray:
    """Symmetrize, drop self-loops and deduplicate an edge list.

    Returns an (E, 2) int64 array with ``src < dst`` on every row, rows
    sorted lexicographically.
    """
    arr = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    if num_nodes is not None and arr.size:
        if arr.min() < 0 or arr.max() >= num_nodes:
            raise ValueError("edge endpoint out of range")
    arr = arr[arr[:, 0] != arr[:, 1]]
    arr = np.sort(arr, axis=1)
    if not arr.size:
        return np.zeros((0, 2), dtype=np.int64)
    return np.unique(arr, axis=0)


def _freeze(a):
    if isinstance(a, np.ndarray):
        a.flags.writeable = False
    elif sp.issparse(a):
        for part in (a.data, a.indices, a.indptr):
            part.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class Graph:
    """Undirected, unweighted attributed graph.

    ``features`` is a dense float64 array unless the matrix exceeds
    ``DENSE_FEATURE_LIMIT`` entries, in which case it is CSR. ``edges`` is the
    canonical (E, 2) array produced by :func:`canonical_edges`.
    """

    features: np.ndarray | sp.csr_matrix
    labels: np.ndarray
    edges: np.ndarray
    num_classes: int

    def __post_init__(self):
        n = self.labels.shape[0]
        if self.features.shape[0] != n:
            raise ValueError(
                f"features have {self.features.shape[0]} rows but there are {n} labels")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise ValueError("label outside [0, num_classes)")
        e = self.edges
        if e.ndim != 2 or e.shape[1] != 2:
            raise ValueError("edges must be an (E, 2) array")
        if e.size:
            if e.min() < 0 or e.max() >= n:
                raise ValueError("edge endpoint outside [0, num_nodes)")
            if np.any(e[:, 0] >= e[:, 1]):
                raise ValueError("edges must be stored with src < dst (no self-loops)")
            if len(np.unique(e, axis=0)) != len(e):
                raise ValueError("duplicate edges")
        data = self.features.data if sp.issparse(self.features) else self.features
        if not np.all(np.isfinite(data)):
            raise ValueError("non-finite feature value")
        _freeze(self.features)
        _freeze(self.labels)
        _freeze(self.edges)

    @classmethod
    def build(cls, features, labels, edges, num_classes: int | None = None) -> "Graph":
        """Construct a graph from loose inputs, canonicalizing edges and feature storage."""
        labels = np.array(labels, dtype=np.int64)
        n = labels.shape[0]
        if sp.issparse(features):
            features = sp.csr_matrix(features, dtype=np.float64)
            if features.shape[0] * features.shape[1] <= DENSE_FEATURE_LIMIT:
                features = features.toarray()
        else:
            features = np.array(features, dtype=np.float64)
            if features.ndim != 2:
                raise ValueError("features must be a 2-D matrix")
            if features.size > DENSE_FEATURE_LIMIT:
                features = sp.csr_matrix(features)
        if sp.issparse(features):
            features.sort_indices()
        if num_classes is None:
            num_classes = int(labels.max()) + 1 if n else 0
        return cls(features, labels, canonical_edges(edges, n), int(num_classes))

    @property
    def num_nodes(self) -> int:
        return int(self.labels.shape[0])

    @property
    def num_features(self) -> int:
        return int(self.features.shape[1])

    @property
    def num_edges(self) -> int:
        return int(self.edges.shape[0])

    def feature_row(self, node: int) -> np.ndarray:
        """Dense copy of one node's feature vector."""
        if sp.issparse(self.features):
            return self.features[node].toarray().ravel()
        return np.array(self.features[node], dtype=np.float64)

    def adjacency(self) -> sp.csr_matrix:
        """Binary symmetric adjacency matrix A (no self-loops)."""
        n = self.num_nodes
        src, dst = self.edges[:, 0], self.edges[:, 1]
        rows = np.concatenate([src, dst])
        cols = np.concatenate([dst, src])
        vals = np.ones(rows.shape[0], dtype=np.float64)
        return sp.csr_matrix((vals, (rows, cols)), shape=(n, n))


def build_normalized_adjacency(graph: Graph) -> sp.csr_matrix:
    """Return D^-1/2 (A + I) D^-1/2 as a CSR matrix with sorted indices."""
    a_tilde = (graph.adjacency() + sp.identity(graph.num_nodes, format="csr")).tocsr()
    deg = np.asarray(a_tilde.sum(axis=1)).ravel()
    inv_sqrt = 1.0 / np.sqrt(deg)
    coo = a_tilde.tocoo()
    vals = coo.data * inv_sqrt[coo.row] * inv_sqrt[coo.col]
    ahat = sp.csr_matrix((vals, (coo.row, coo.col)), shape=a_tilde.shape)
    ahat.sort_indices()
    return ahat


@dataclass(frozen=True, eq=False)
class DataSplit:
    train_idx: np.ndarray
    val_idx: np.ndarray
    test_idx: np.ndarray
    seed: int

    def __post_init__(self):
        for a in (self.train_idx, self.val_idx, self.test_idx):
            _freeze(a)


def make_split(num_nodes: int, seed: int) -> DataSplit:
    """Uniform random 20/20/60 train/validation/test partition of the node ids.

    Each index array is returned sorted ascending.
    """
    if num_nodes < 5:
        raise SizeError(f"need at least 5 nodes to split, got {num_nodes}")
    perm = np.random.default_rng(seed).permutation(num_nodes)
    n_train = int(np.floor(TRAIN_FRACTION * num_nodes))
    n_val = int(np.floor(VAL_FRACTION * num_nodes))
    return DataSplit(
        train_idx=np.sort(perm[:n_train]),
        val_idx=np.sort(perm[n_train:n_train + n_val]),
        test_idx=np.sort(perm[n_train + n_val:]),
        seed=seed,
    )


def global_feature_max(graph: Graph) -> float:
    x = graph.features
    if sp.issparse(x):
        # Implicit zeros count as entries.
        m = x.data.max() if x.nnz else 0.0
        if x.nnz < x.shape[0] * x.shape[1]:
            m = max(m, 0.0)
        return float(m)
    return float(x.max())
