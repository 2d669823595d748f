"""Citation-dataset ingestion and the canonical on-disk bundle format.

A bundle is a directory with three tab-separated text files:

``meta.tsv``
    ``key<TAB>value`` lines. The first five keys are always ``name``,
    ``num_nodes``, ``num_features``, ``num_classes`` and ``target_label``;
    they are followed by ``num_edges``, ``label_names`` (comma separated, in
    id order), the raw/dropped edge counters from ingestion and SHA-256
    digests of the other two files.
``nodes.tsv``
    ``id<TAB>label_id<TAB>idx:val,idx:val,...`` with ascending indices and
    values written with at most 9 significant digits.
``edges.tsv``
    ``src<TAB>dst`` with ``src < dst``, sorted by the numeric pair.
"""
from __future__ import annotations

import gzip
import hashlib
import logging
import os
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .errors import CorruptBundleError, FormatError
from .graph import Graph, canonical_edges

log = logging.getLogger(__name__)

META_FILE = "meta.tsv"
NODES_FILE = "nodes.tsv"
EDGES_FILE = "edges.tsv"

# Target label per dataset, final column of the benchmark statistics table.
DEFAULT_TARGET_LABELS = {"cora": 6, "citeseer": 0, "cora_ml": 5, "pubmed": 0}

# Class ordering under which the published per-class counts line up with the
# published target-label ids (e.g. Cora's 180-node class is id 6).
CORA_LABEL_ORDER = (
    "Theory",
    "Reinforcement_Learning",
    "Genetic_Algorithms",
    "Neural_Networks",
    "Probabilistic_Methods",
    "Case_Based",
    "Rule_Learning",
)


@dataclass(eq=False)
class DatasetBundle:
    name: str
    labels: np.ndarray
    features: sp.csr_matrix
    edges: np.ndarray
    label_names: tuple[str, ...]
    target_label: int
    raw_edge_lines: int = 0
    dropped_edges: int = 0

    @property
    def num_nodes(self) -> int:
        return int(self.labels.shape[0])

    @property
    def num_features(self) -> int:
        return int(self.features.shape[1])

    @property
    def num_classes(self) -> int:
        return len(self.label_names)

    def to_graph(self) -> Graph:
        return Graph.build(self.features, self.labels, self.edges, self.num_classes)

    @cached_property
    def graph(self) -> Graph:
        """Graph view built once per bundle; the bundle must not be mutated afterwards."""
        return self.to_graph()


def _open_text(path):
    path = Path(path)
    if path.suffix == ".gz":
        return gzip.open(path, "rt", encoding="utf-8")
    return open(path, "r", encoding="utf-8")


def default_target_label(name: str) -> int:
    return DEFAULT_TARGET_LABELS.get(name.lower(), 0)


def ingest_content_cites(content_path, cites_path, name: str,
                         label_order=None, target_label: int | None = None) -> DatasetBundle:
    """Parse a ``.content`` / ``.cites`` pair into a bundle.

    Node ids are remapped to ``[0, N)`` in order of first appearance in the
    content file. Labels are numbered by sorted label name unless
    ``label_order`` lists every label name explicitly. Citations that mention
    an id missing from the content file are dropped and counted.
    """
    raw_ids: dict[str, int] = {}
    label_strs: list[str] = []
    rows, cols, vals = [], [], []
    width = None
    with _open_text(content_path) as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) < 3:
                raise FormatError(f"{content_path}:{lineno}: expected id, features and label")
            feats = parts[1:-1]
            if width is None:
                width = len(feats)
            elif len(feats) != width:
                raise FormatError(
                    f"{content_path}:{lineno}: {len(feats)} feature values, expected {width}")
            if parts[0] in raw_ids:
                raise FormatError(f"{content_path}:{lineno}: duplicate node id {parts[0]!r}")
            node = len(raw_ids)
            raw_ids[parts[0]] = node
            label_strs.append(parts[-1])
            try:
                x = np.array(feats, dtype=np.float64)
            except ValueError as exc:
                raise FormatError(f"{content_path}:{lineno}: {exc}") from None
            nz = np.flatnonzero(x)
            rows.append(np.full(nz.shape, node))
            cols.append(nz)
            vals.append(x[nz])
    if not raw_ids:
        raise FormatError(f"{content_path}: no node records")

    names = sorted(set(label_strs))
    if label_order is not None:
        label_order = tuple(label_order)
        if sorted(label_order) != names:
            raise FormatError(
                f"label order {label_order} does not match labels present: {names}")
        names = list(label_order)
    label_id = {s: i for i, s in enumerate(names)}
    labels = np.array([label_id[s] for s in label_strs], dtype=np.int64)

    n = len(raw_ids)
    features = sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(n, width))
    features.sort_indices()

    pairs = []
    raw_lines = dropped = 0
    with _open_text(cites_path) as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != 2:
                raise FormatError(f"{cites_path}:{lineno}: expected two ids")
            raw_lines += 1
            a, b = raw_ids.get(parts[0]), raw_ids.get(parts[1])
            if a is None or b is None:
                dropped += 1
                continue
            pairs.append((a, b))
    if raw_lines == 0:
        raise FormatError(f"{cites_path}: no citation records")
    if dropped:
        log.warning("%s: dropped %d citations referencing unknown ids", name, dropped)

    if target_label is None:
        target_label = default_target_label(name)
    return DatasetBundle(
        name=name,
        labels=labels,
        features=features,
        edges=canonical_edges(pairs, n),
        label_names=tuple(names),
        target_label=int(target_label),
        raw_edge_lines=raw_lines,
        dropped_edges=dropped,
    )


def bundle_from_graph(graph: Graph, name: str, target_label: int = 0,
                      label_names=None) -> DatasetBundle:
    if label_names is None:
        label_names = tuple(f"class{i}" for i in range(graph.num_classes))
    return DatasetBundle(
        name=name,
        labels=np.array(graph.labels),
        features=sp.csr_matrix(graph.features),
        edges=np.array(graph.edges),
        label_names=tuple(label_names),
        target_label=int(target_label),
        raw_edge_lines=graph.num_edges,
    )


def _format_value(v: float) -> str:
    return f"{v:.9g}"


def _nodes_text(bundle: DatasetBundle) -> str:
    x = sp.csr_matrix(bundle.features)
    x.sort_indices()
    out = []
    for i in range(bundle.num_nodes):
        lo, hi = x.indptr[i], x.indptr[i + 1]
        entries = ",".join(f"{j}:{_format_value(v)}"
                           for j, v in zip(x.indices[lo:hi], x.data[lo:hi]) if v != 0)
        out.append(f"{i}\t{bundle.labels[i]}\t{entries}\n")
    return "".join(out)


def _edges_text(bundle: DatasetBundle) -> str:
    return "".join(f"{s}\t{d}\n" for s, d in canonical_edges(bundle.edges))


def _sha256(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def atomic_write_text(path, text: str) -> None:
    """Write ``text`` to ``path`` via a temporary sibling and a rename."""
    path = Path(path)
    tmp = path.with_name(f".{path.name}.tmp{os.getpid()}")
    with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)
    os.replace(tmp, path)


def save_bundle(bundle: DatasetBundle, path) -> None:
    for name in bundle.label_names:
        if "," in name or "\t" in name or "\n" in name:
            raise ValueError(f"label name {name!r} cannot be stored in meta.tsv")
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    nodes = _nodes_text(bundle)
    edges = _edges_text(bundle)
    meta = [
        ("name", bundle.name),
        ("num_nodes", bundle.num_nodes),
        ("num_features", bundle.num_features),
        ("num_classes", bundle.num_classes),
        ("target_label", bundle.target_label),
        ("num_edges", len(canonical_edges(bundle.edges))),
        ("label_names", ",".join(bundle.label_names)),
        ("raw_edge_lines", bundle.raw_edge_lines),
        ("dropped_edges", bundle.dropped_edges),
        ("nodes_sha256", _sha256(nodes)),
        ("edges_sha256", _sha256(edges)),
    ]
    atomic_write_text(path / NODES_FILE, nodes)
    atomic_write_text(path / EDGES_FILE, edges)
    atomic_write_text(path / META_FILE, "".join(f"{k}\t{v}\n" for k, v in meta))


def _read(path: Path) -> str:
    try:
        return path.read_text(encoding="utf-8")
    except FileNotFoundError:
        raise CorruptBundleError(f"missing bundle file {path}") from None


def read_bundle(path) -> DatasetBundle:
    """Read a bundle directory, verifying digests and record counts."""
    path = Path(path)
    if not path.is_dir():
        raise CorruptBundleError(f"{path} is not a bundle directory")
    meta_text = _read(path / META_FILE)
    nodes_text = _read(path / NODES_FILE)
    edges_text = _read(path / EDGES_FILE)

    meta = {}
    for line in meta_text.splitlines():
        key, sep, value = line.partition("\t")
        if not sep:
            raise CorruptBundleError(f"malformed meta line {line!r}")
        meta[key] = value
    try:
        meta["name"]
        n = int(meta["num_nodes"])
        d = int(meta["num_features"])
        c = int(meta["num_classes"])
        target = int(meta["target_label"])
    except (KeyError, ValueError) as exc:
        raise CorruptBundleError(f"bad or missing meta field: {exc}") from None

    for key, text in (("nodes_sha256", nodes_text), ("edges_sha256", edges_text)):
        if key in meta and meta[key] != _sha256(text):
            raise CorruptBundleError(f"{key} mismatch in {path}")

    labels = np.empty(n, dtype=np.int64)
    rows, cols, vals = [], [], []
    node_lines = nodes_text.splitlines()
    if len(node_lines) != n:
        raise CorruptBundleError(f"nodes.tsv has {len(node_lines)} records, meta says {n}")
    try:
        for i, line in enumerate(node_lines):
            nid, lab, entries = line.split("\t")
            if int(nid) != i:
                raise CorruptBundleError(f"node record {i} carries id {nid}")
            labels[i] = int(lab)
            if entries:
                for item in entries.split(","):
                    j, v = item.split(":")
                    rows.append(i)
                    cols.append(int(j))
                    vals.append(float(v))
    except ValueError as exc:
        raise CorruptBundleError(f"malformed nodes.tsv: {exc}") from None
    cols_arr = np.array(cols, dtype=np.int64)
    if cols_arr.size and (cols_arr.min() < 0 or cols_arr.max() >= d):
        raise CorruptBundleError("feature index out of range")
    if n and (labels.min() < 0 or labels.max() >= c):
        raise CorruptBundleError("label id out of range")
    features = sp.csr_matrix((np.array(vals, dtype=np.float64),
                              (np.array(rows, dtype=np.int64), cols_arr)), shape=(n, d))
    features.sort_indices()

    try:
        edges = np.array([[int(t) for t in line.split("\t")] for line in edges_text.splitlines()],
                         dtype=np.int64).reshape(-1, 2)
    except ValueError as exc:
        raise CorruptBundleError(f"malformed edges.tsv: {exc}") from None
    if edges.size and (edges.min() < 0 or edges.max() >= n or np.any(edges[:, 0] >= edges[:, 1])):
        raise CorruptBundleError("edge endpoint out of range or not src < dst")
    if "num_edges" in meta and int(meta["num_edges"]) != len(edges):
        raise CorruptBundleError(f"edges.tsv has {len(edges)} records, meta says {meta['num_edges']}")

    names = tuple(meta["label_names"].split(",")) if meta.get("label_names") else \
        tuple(f"class{i}" for i in range(c))
    if len(names) != c:
        raise CorruptBundleError("label_names length disagrees with num_classes")
    return DatasetBundle(
        name=meta["name"],
        labels=labels,
        features=features,
        edges=edges,
        label_names=names,
        target_label=target,
        raw_edge_lines=int(meta.get("raw_edge_lines", len(edges))),
        dropped_edges=int(meta.get("dropped_edges", 0)),
    )


def load_bundle(path) -> Graph:
    return read_bundle(path).to_graph()


def verify_bundle(path) -> dict:
    """Integrity report for a bundle directory; raises CorruptBundleError on failure."""
    bundle = read_bundle(path)
    graph = bundle.to_graph()
    counts = np.bincount(graph.labels, minlength=graph.num_classes)
    return {
        "name": bundle.name,
        "num_nodes": graph.num_nodes,
        "num_features": graph.num_features,
        "num_classes": graph.num_classes,
        "num_edges": graph.num_edges,
        "raw_edge_lines": bundle.raw_edge_lines,
        "dropped_edges": bundle.dropped_edges,
        "target_label": bundle.target_label,
        "class_counts": [int(c) for c in counts],
        "label_names": list(bundle.label_names),
    }
