"""Conversion of Planetoid-format pickles (CiteSeer, PubMed) into canonical bundles.

The Planetoid distribution stores ``x, y, tx, ty, allx, ally, graph`` as
pickled scipy/numpy objects plus a plain ``test.index`` file. Test rows are
placed back at their node ids; ids missing from the test index (CiteSeer has
15 isolated ones) get an all-zero feature row and label 0, which is the
convention the published class counts were computed under.
"""
from __future__ import annotations

import pickle
import warnings
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .datasets import DatasetBundle, default_target_label
from .errors import FormatError
from .graph import canonical_edges

PARTS = ("x", "y", "tx", "ty", "allx", "ally", "graph")


def _load_pickle(path: Path):
    try:
        with open(path, "rb") as fh, warnings.catch_warnings():
            warnings.simplefilter("ignore", DeprecationWarning)
            return pickle.load(fh, encoding="latin1")
    except FileNotFoundError:
        raise FormatError(f"missing Planetoid file {path}") from None


def convert_planetoid(directory, prefix: str, name: str | None = None,
                      target_label: int | None = None) -> DatasetBundle:
    """Build a bundle from ``<directory>/ind.<prefix>.*`` files."""
    directory = Path(directory)
    name = name or prefix
    objs = {p: _load_pickle(directory / f"ind.{prefix}.{p}") for p in PARTS}
    test_index = [int(line) for line in
                  (directory / f"ind.{prefix}.test.index").read_text().split()]

    allx = sp.csr_matrix(objs["allx"], dtype=np.float64)
    tx = sp.csr_matrix(objs["tx"], dtype=np.float64)
    ally = np.asarray(objs["ally"])
    ty = np.asarray(objs["ty"])
    graph = objs["graph"]

    n_test_range = max(test_index) - min(test_index) + 1
    n = allx.shape[0] + n_test_range
    if n < len(graph):
        n = len(graph)
    d = allx.shape[1]
    c = ally.shape[1]

    # Scatter test rows to their node ids.
    tx_full = sp.lil_matrix((n - allx.shape[0], d))
    ty_full = np.zeros((n - allx.shape[0], c), dtype=ally.dtype)
    offset = allx.shape[0]
    order = np.asarray(test_index) - offset
    tx_full[order, :] = tx
    ty_full[order, :] = ty
    features = sp.vstack([allx, tx_full.tocsr()]).tocsr()
    features.eliminate_zeros()
    features.sort_indices()
    labels = np.vstack([ally, ty_full]).argmax(axis=1).astype(np.int64)

    pairs = [(u, v) for u, nbrs in graph.items() for v in nbrs]
    raw = len(pairs)
    edges = canonical_edges(pairs, n)
    if target_label is None:
        target_label = default_target_label(name)
    return DatasetBundle(
        name=name,
        labels=labels,
        features=features,
        edges=edges,
        label_names=tuple(f"class{i}" for i in range(c)),
        target_label=int(target_label),
        raw_edge_lines=raw,
        dropped_edges=0,
    )
