import gzip
import shutil

import numpy as np
import pytest

from cbag.datasets import (CORA_LABEL_ORDER, bundle_from_graph, ingest_content_cites,
                           load_bundle, read_bundle, save_bundle, verify_bundle)
from cbag.errors import CorruptBundleError, FormatError
from cbag.planetoid import convert_planetoid

from conftest import BUNDLES, RAW, random_graph


@pytest.fixture
def tiny_files(tmp_path):
    content = tmp_path / "tiny.content"
    content.write_text("p9 1 0 1 beta\n"
                       "p3 0 0 0 alpha\n"
                       "p7 0 1 1 beta\n")
    cites = tmp_path / "tiny.cites"
    cites.write_text("p9 p3\n"
                     "p3 p9\n"
                     "p7 p7\n"
                     "p7 ghost\n"
                     "p3 p7\n")
    return content, cites


def test_ingest_tiny(tiny_files):
    b = ingest_content_cites(*tiny_files, name="tiny")
    assert (b.num_nodes, b.num_features, b.num_classes) == (3, 3, 2)
    assert b.label_names == ("alpha", "beta")
    # first-appearance id order: p9 -> 0, p3 -> 1, p7 -> 2
    assert b.labels.tolist() == [1, 0, 1]
    assert b.features.toarray().tolist() == [[1, 0, 1], [0, 0, 0], [0, 1, 1]]
    assert b.edges.tolist() == [[0, 1], [1, 2]]
    assert b.dropped_edges == 1
    assert b.raw_edge_lines == 5


def test_ingest_label_order(tiny_files):
    b = ingest_content_cites(*tiny_files, name="tiny", label_order=("beta", "alpha"))
    assert b.labels.tolist() == [0, 1, 0]
    with pytest.raises(FormatError):
        ingest_content_cites(*tiny_files, name="tiny", label_order=("beta",))


def test_ingest_inconsistent_width(tmp_path, tiny_files):
    content = tmp_path / "bad.content"
    content.write_text("a 1 0 x\nb 1 y\n")
    with pytest.raises(FormatError):
        ingest_content_cites(content, tiny_files[1], name="bad")


def test_ingest_empty_files(tmp_path, tiny_files):
    empty = tmp_path / "empty"
    empty.write_text("")
    with pytest.raises(FormatError):
        ingest_content_cites(empty, tiny_files[1], name="x")
    with pytest.raises(FormatError):
        ingest_content_cites(tiny_files[0], empty, name="x")


def test_ingest_reads_gzip(tmp_path, tiny_files):
    gz = []
    for f in tiny_files:
        target = tmp_path / (f.name + ".gz")
        with open(f, "rb") as src, gzip.open(target, "wb") as dst:
            shutil.copyfileobj(src, dst)
        gz.append(target)
    a = ingest_content_cites(*tiny_files, name="t")
    b = ingest_content_cites(*gz, name="t")
    assert a.edges.tolist() == b.edges.tolist()
    assert (a.features != b.features).nnz == 0


def test_ingest_is_byte_deterministic(tmp_path, tiny_files):
    for out in ("a", "b"):
        save_bundle(ingest_content_cites(*tiny_files, name="tiny"), tmp_path / out)
    for f in ("meta.tsv", "nodes.tsv", "edges.tsv"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_round_trip_random(tmp_path, rng):
    g = random_graph(rng, 10, 6, 3)
    # Round-trip is exact at 9 significant digits.
    x = np.array([[float(f"{v:.9g}") for v in row] for row in g.features])
    g = type(g).build(x, g.labels, g.edges, g.num_classes)
    save_bundle(bundle_from_graph(g, "rand", target_label=2), tmp_path / "b")
    back = load_bundle(tmp_path / "b")
    assert back.num_nodes == g.num_nodes
    np.testing.assert_array_equal(back.edges, g.edges)
    np.testing.assert_array_equal(back.labels, g.labels)
    np.testing.assert_array_equal(back.features, g.features)
    assert read_bundle(tmp_path / "b").target_label == 2


def test_bundle_file_format(tmp_path, tiny_files):
    save_bundle(ingest_content_cites(*tiny_files, name="tiny"), tmp_path)
    meta = (tmp_path / "meta.tsv").read_text().splitlines()
    assert [line.split("\t")[0] for line in meta[:5]] == [
        "name", "num_nodes", "num_features", "num_classes", "target_label"]
    assert (tmp_path / "nodes.tsv").read_text() == "0\t1\t0:1,2:1\n1\t0\t\n2\t1\t1:1,2:1\n"
    assert (tmp_path / "edges.tsv").read_text() == "0\t1\n1\t2\n"


def test_missing_edges_file(tmp_path, tiny_files):
    save_bundle(ingest_content_cites(*tiny_files, name="tiny"), tmp_path)
    (tmp_path / "edges.tsv").unlink()
    with pytest.raises(CorruptBundleError):
        load_bundle(tmp_path)


def test_tampered_bundle(tmp_path, tiny_files):
    save_bundle(ingest_content_cites(*tiny_files, name="tiny"), tmp_path)
    nodes = tmp_path / "nodes.tsv"
    nodes.write_text(nodes.read_text().replace("0:1", "0:2", 1))
    with pytest.raises(CorruptBundleError):
        load_bundle(tmp_path)


def test_count_mismatch(tmp_path, tiny_files):
    save_bundle(ingest_content_cites(*tiny_files, name="tiny"), tmp_path)
    meta = tmp_path / "meta.tsv"
    lines = [l for l in meta.read_text().splitlines() if "sha256" not in l]
    meta.write_text("\n".join(l.replace("num_nodes\t3", "num_nodes\t4") for l in lines) + "\n")
    with pytest.raises(CorruptBundleError):
        load_bundle(tmp_path)


def test_cora_raw_ingest():
    b = ingest_content_cites(RAW / "cora" / "cora.content.gz", RAW / "cora" / "cora.cites.gz",
                             "cora", label_order=CORA_LABEL_ORDER)
    assert (b.num_nodes, b.num_features, b.num_classes) == (2708, 1433, 7)
    assert b.raw_edge_lines == 5429
    # Reciprocal citations collapse once the graph is treated as undirected.
    assert len(b.edges) == 5278
    assert np.bincount(b.labels).tolist() == [351, 217, 418, 818, 426, 298, 180]
    assert b.target_label == 6
    assert b.label_names[6] == "Rule_Learning"


def test_shipped_cora_bundle_matches_raw(tmp_path):
    b = ingest_content_cites(RAW / "cora" / "cora.content.gz", RAW / "cora" / "cora.cites.gz",
                             "cora", label_order=CORA_LABEL_ORDER)
    save_bundle(b, tmp_path)
    for f in ("meta.tsv", "nodes.tsv", "edges.tsv"):
        assert (tmp_path / f).read_bytes() == (BUNDLES / "cora" / f).read_bytes()


@pytest.mark.parametrize("name, n, d, c, counts, target", [
    ("cora", 2708, 1433, 7, [351, 217, 418, 818, 426, 298, 180], 6),
    ("citeseer", 3327, 3703, 6, [264, 590, 668, 701, 596, 508], 0),
])
def test_shipped_bundles(name, n, d, c, counts, target):
    r = verify_bundle(BUNDLES / name)
    assert (r["num_nodes"], r["num_features"], r["num_classes"]) == (n, d, c)
    assert r["class_counts"] == counts
    assert r["target_label"] == target


def test_planetoid_citeseer_conversion(tmp_path):
    b = convert_planetoid(RAW / "citeseer", "citeseer")
    assert (b.num_nodes, b.num_features, b.num_classes) == (3327, 3703, 6)
    # 15 test ids absent from the distribution become empty rows
    empty = np.flatnonzero(np.diff(b.features.indptr) == 0)
    assert len(empty) >= 15
    assert np.bincount(b.labels).tolist() == [264, 590, 668, 701, 596, 508]
    save_bundle(b, tmp_path)
    for f in ("meta.tsv", "nodes.tsv", "edges.tsv"):
        assert (tmp_path / f).read_bytes() == (BUNDLES / "citeseer" / f).read_bytes()


def test_planetoid_pubmed_conversion(tmp_path):
    b = convert_planetoid(RAW / "pubmed", "pubmed")
    assert (b.num_nodes, b.num_features, b.num_classes) == (19717, 500, 3)
    assert np.bincount(b.labels).tolist() == [4103, 7739, 7875]
    assert b.target_label == 0
    # TF-IDF features: continuous values, so the trigger value is not 1.0
    assert b.features.data.max() > 1.0
    save_bundle(b, tmp_path)
    assert load_bundle(tmp_path).num_edges == len(b.edges)
