"""Label-only backdoor: trigger selection, node scoring, poisoning and activation.

The training graph (edges and features) is never modified. Only labels of a
few training nodes are rewritten to the target class; the trigger is applied
to a victim node's feature row at inference time.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .datasets import atomic_write_text
from .errors import InfeasibleRateError, NoTargetNodesError, StalePlanError
from .graph import Graph, global_feature_max


@dataclass(frozen=True)
class TriggerPattern:
    target_label: int
    feature_indices: tuple[int, ...]
    trigger_value: float

    def __post_init__(self):
        idx = tuple(int(i) for i in self.feature_indices)
        if not idx:
            raise ValueError("trigger needs at least one feature index")
        if list(idx) != sorted(set(idx)):
            raise ValueError("trigger feature indices must be sorted and unique")
        object.__setattr__(self, "feature_indices", idx)

    @property
    def k(self) -> int:
        return len(self.feature_indices)


@dataclass(frozen=True)
class PoisonEntry:
    node: int
    old_label: int
    new_label: int


@dataclass(frozen=True)
class PoisonPlan:
    entries: tuple[PoisonEntry, ...]
    poison_rate: float

    def __len__(self):
        return len(self.entries)

    @property
    def nodes(self) -> np.ndarray:
        return np.array([e.node for e in self.entries], dtype=np.int64)


def _train_rows(graph: Graph, idx) -> np.ndarray:
    x = graph.features[idx]
    return x.toarray() if sp.issparse(x) else np.asarray(x, dtype=np.float64)


def feature_importance(graph: Graph, train_idx, y_t: int) -> np.ndarray:
    """Mean feature vector of target-label training nodes minus the training mean."""
    train_idx = np.asarray(train_idx, dtype=np.int64)
    is_target = graph.labels[train_idx] == y_t
    m = int(is_target.sum())
    if m == 0:
        raise NoTargetNodesError(f"no training node carries target label {y_t}")
    x = graph.features[train_idx]
    total = np.asarray(x.sum(axis=0)).ravel()
    target_sum = np.asarray(x[is_target].sum(axis=0)).ravel()
    return target_sum / m - total / train_idx.size


def _top_k(values: np.ndarray, k: int) -> np.ndarray:
    # Stable sort on the negated values puts lower indices first among ties.
    order = np.argsort(-np.asarray(values, dtype=np.float64), kind="stable")
    return order[:k]


def select_trigger(importance, k: int, graph: Graph, y_t: int) -> TriggerPattern:
    importance = np.asarray(importance, dtype=np.float64)
    d = importance.shape[0]
    if not 1 <= k <= d:
        raise ValueError(f"trigger size k={k} must lie in [1, {d}]")
    chosen = np.sort(_top_k(importance, k))
    return TriggerPattern(int(y_t), tuple(int(i) for i in chosen), global_feature_max(graph))


def select_trigger_random(d: int, k: int, seed: int, graph: Graph, y_t: int) -> TriggerPattern:
    if not 1 <= k <= d:
        raise ValueError(f"trigger size k={k} must lie in [1, {d}]")
    chosen = np.sort(np.random.default_rng(seed).choice(d, size=k, replace=False))
    return TriggerPattern(int(y_t), tuple(int(i) for i in chosen), global_feature_max(graph))


def score_nodes(graph: Graph, candidates, feature_indices) -> dict[int, float]:
    """Sum of each candidate's feature values over the trigger indices."""
    candidates = np.asarray(candidates, dtype=np.int64)
    cols = np.asarray(list(feature_indices), dtype=np.int64)
    if cols.size == 0:
        return {int(v): 0.0 for v in candidates}
    sub = graph.features[candidates][:, cols]
    scores = np.asarray(sub.sum(axis=1)).ravel()
    return {int(v): float(s) for v, s in zip(candidates, scores)}


def poison_count(p: float, n_train: int) -> int:
    return int(np.floor(p * n_train))


def build_poison_plan(scores: dict, train_idx, labels, y_t: int, p: float) -> PoisonPlan:
    """Relabel the ``floor(p * |train|)`` highest-scoring non-target training nodes.

    Ties in score go to the lower node id.
    """
    if not 0 < p < 1:
        raise ValueError(f"poisoning rate must be in (0, 1), got {p}")
    labels = np.asarray(labels)
    train_idx = np.asarray(train_idx, dtype=np.int64)
    n = poison_count(p, train_idx.size)
    cands = np.array(sorted(int(v) for v in train_idx if labels[v] != y_t), dtype=np.int64)
    if n > cands.size:
        raise InfeasibleRateError(
            f"rate {p} needs {n} poisoned nodes but only {cands.size} non-target training nodes exist")
    missing = [int(v) for v in cands if int(v) not in scores]
    if missing:
        raise KeyError(f"no score for candidate nodes {missing[:5]}")
    vals = np.array([scores[int(v)] for v in cands], dtype=np.float64)
    picked = np.sort(cands[_top_k(vals, n)])
    entries = tuple(PoisonEntry(int(v), int(labels[v]), int(y_t)) for v in picked)
    return PoisonPlan(entries, float(p))


def apply_poison(labels, plan: PoisonPlan) -> np.ndarray:
    out = np.array(labels, copy=True)
    for e in plan.entries:
        if out[e.node] != e.old_label:
            raise StalePlanError(
                f"node {e.node} has label {out[e.node]}, plan recorded {e.old_label}")
        out[e.node] = e.new_label
    return out


def revert_poison(labels, plan: PoisonPlan) -> np.ndarray:
    out = np.array(labels, copy=True)
    for e in plan.entries:
        if out[e.node] != e.new_label:
            raise StalePlanError(f"node {e.node} does not carry the poisoned label")
        out[e.node] = e.old_label
    return out


def inject_trigger(x, node: int, trigger: TriggerPattern) -> np.ndarray:
    """Copy of row ``node`` with every trigger index set to the trigger value."""
    row = x[node].toarray().ravel() if sp.issparse(x) else np.array(x[node], dtype=np.float64)
    row[list(trigger.feature_indices)] = trigger.trigger_value
    return row


def save_trigger(trigger: TriggerPattern, path) -> None:
    lines = [f"target_label\t{trigger.target_label}",
             f"tau\t{trigger.trigger_value!r}",
             "indices\t" + ",".join(str(i) for i in trigger.feature_indices)]
    atomic_write_text(path, "\n".join(lines) + "\n")


def load_trigger(path) -> TriggerPattern:
    fields = dict(line.split("\t", 1) for line in Path(path).read_text().splitlines() if line)
    return TriggerPattern(int(fields["target_label"]),
                          tuple(int(i) for i in fields["indices"].split(",")),
                          float(fields["tau"]))


def save_plan(plan: PoisonPlan, path) -> None:
    lines = [f"# poison_rate\t{plan.poison_rate!r}"]
    lines += [f"{e.node}\t{e.old_label}\t{e.new_label}" for e in plan.entries]
    atomic_write_text(path, "\n".join(lines) + "\n")


def load_plan(path) -> PoisonPlan:
    rate = 0.0
    entries = []
    for line in Path(path).read_text().splitlines():
        if line.startswith("# poison_rate"):
            rate = float(line.split("\t")[1])
        elif line and not line.startswith("#"):
            node, old, new = (int(t) for t in line.split("\t"))
            entries.append(PoisonEntry(node, old, new))
    return PoisonPlan(tuple(entries), rate)
