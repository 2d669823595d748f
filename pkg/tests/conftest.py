from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest

from cbag.graph import Graph

ROOT = Path(__file__).resolve().parents[1]
BUNDLES = ROOT / "data" / "bundles"
RAW = ROOT / "data" / "raw"


def random_graph(rng: np.random.Generator, n: int, d: int, c: int,
                 edge_prob: float = 0.3, binary: bool = False) -> Graph:
    if binary:
        x = (rng.random((n, d)) < 0.3).astype(float)
    else:
        x = rng.random((n, d)) * (rng.random((n, d)) < 0.5)
    labels = rng.integers(0, c, size=n)
    iu = np.triu_indices(n, k=1)
    keep = rng.random(iu[0].shape) < edge_prob
    edges = np.stack([iu[0][keep], iu[1][keep]], axis=1)
    return Graph.build(x, labels, edges, num_classes=c)


@pytest.fixture
def rng():
    return np.random.default_rng(20240607)


@pytest.fixture
def make_graph():
    return random_graph


# Acceptance outcomes collected for the terminal summary.
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
