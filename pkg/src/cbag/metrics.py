"""Attack success rate, clean accuracy drop and the clean-vs-backdoor experiment."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import attack as atk
from .config import ExperimentConfig
from .datasets import DatasetBundle, atomic_write_text
from .gcn import (GcnParams, IncrementalForward, accuracy, predict, replace_row,
                  save_params, train)
from .graph import Graph, build_normalized_adjacency, make_split

log = logging.getLogger(__name__)

RESULT_COLUMNS = ("dataset", "method", "seed", "p", "lambda", "y_t",
                  "acc_clean", "acc_backdoor", "cad", "asr")


def clean_accuracy(preds, labels, idx) -> float:
    return accuracy(preds, labels, idx)


def asr_eval_set(graph: Graph, test_idx, y_t: int) -> np.ndarray:
    """Test nodes whose true label is not the target label."""
    test_idx = np.asarray(test_idx, dtype=np.int64)
    return test_idx[graph.labels[test_idx] != y_t]


def triggered_predictions(params: GcnParams, ahat, graph: Graph,
                          trigger: atk.TriggerPattern, eval_set) -> np.ndarray:
    """Prediction for each node in ``eval_set`` with only that node triggered."""
    inc = IncrementalForward(params, ahat, graph.features)
    return np.array([inc.predict_for(int(v), atk.inject_trigger(graph.features, int(v), trigger))
                     for v in eval_set], dtype=np.int64)


def full_forward_prediction(params: GcnParams, ahat, graph: Graph,
                            trigger: atk.TriggerPattern, node: int) -> int:
    """Reference path: rebuild the whole feature matrix and run a full forward pass."""
    row = atk.inject_trigger(graph.features, node, trigger)
    x = replace_row(graph.features, node, row)
    return int(predict(params, ahat, x)[node])


def attack_success_rate(backdoor_params: GcnParams, ahat, graph: Graph,
                        trigger: atk.TriggerPattern, eval_set) -> float:
    eval_set = np.asarray(eval_set, dtype=np.int64)
    if eval_set.size == 0:
        raise ValueError("attack success rate over an empty evaluation set")
    preds = triggered_predictions(backdoor_params, ahat, graph, trigger, eval_set)
    return float(np.mean(preds == trigger.target_label))


@dataclass
class SeedResult:
    seed: int
    acc_clean: float
    acc_backdoor: float
    cad: float
    asr: float
    y_t: int
    k: int
    n_poisoned: int
    audit_checked: int = 0
    audit_mismatches: int = 0
    trigger: atk.TriggerPattern | None = field(default=None, repr=False)
    plan: atk.PoisonPlan | None = field(default=None, repr=False)
    clean_params: GcnParams | None = field(default=None, repr=False)
    backdoor_params: GcnParams | None = field(default=None, repr=False)
    poisoned_labels: np.ndarray | None = field(default=None, repr=False)


@dataclass
class MetricsReport:
    dataset: str
    config: ExperimentConfig
    y_t: int
    rows: list[SeedResult]
    asr: float = 0.0
    cad: float = 0.0
    acc_clean: float = 0.0
    acc_backdoor: float = 0.0

    def __post_init__(self):
        order = sorted(self.rows, key=lambda r: r.seed)
        self.asr = float(np.mean([r.asr for r in order]))
        self.acc_clean = float(np.mean([r.acc_clean for r in order]))
        self.acc_backdoor = float(np.mean([r.acc_backdoor for r in order]))
        self.cad = float(np.mean([r.cad for r in order]))
        assert abs(self.cad - (self.acc_clean - self.acc_backdoor)) <= 1e-12
        for r in order:
            assert abs(r.cad - (r.acc_clean - r.acc_backdoor)) <= 1e-12

    @property
    def audit_mismatches(self) -> int:
        return sum(r.audit_mismatches for r in self.rows)

    @property
    def audit_checked(self) -> int:
        return sum(r.audit_checked for r in self.rows)


def _trigger_size(lam: float, d: int) -> int:
    k = int(np.floor(lam * d))
    if k < 1:
        raise ValueError(f"lambda={lam} gives an empty trigger for d={d}")
    return k


def run_seed(graph: Graph, ahat, config: ExperimentConfig, y_t: int, seed: int,
             clean_cache: dict | None = None) -> SeedResult:
    split = make_split(graph.num_nodes, seed)
    tcfg = config.train_config(seed)

    key = (id(graph), seed, tcfg)
    if clean_cache is not None and key in clean_cache:
        clean_params = clean_cache[key]
    else:
        clean_params, _ = train(graph, ahat, graph.labels, split, tcfg)
        if clean_cache is not None:
            clean_cache[key] = clean_params

    k = _trigger_size(config.lam, graph.num_features)
    if config.method == "cbag":
        importance = atk.feature_importance(graph, split.train_idx, y_t)
        trigger = atk.select_trigger(importance, k, graph, y_t)
    else:
        # Separate stream: default_rng(seed) already drives the split permutation.
        trigger_seed = int(np.random.SeedSequence([seed, 3]).generate_state(1)[0])
        trigger = atk.select_trigger_random(graph.num_features, k, trigger_seed, graph, y_t)

    candidates = [int(v) for v in split.train_idx if graph.labels[v] != y_t]
    scores = atk.score_nodes(graph, candidates, trigger.feature_indices)
    plan = atk.build_poison_plan(scores, split.train_idx, graph.labels, y_t, config.p)
    poisoned = atk.apply_poison(graph.labels, plan)
    backdoor_params, _ = train(graph, ahat, poisoned, split, tcfg)

    x = graph.features
    acc_c = clean_accuracy(predict(clean_params, ahat, x), graph.labels, split.test_idx)
    acc_b = clean_accuracy(predict(backdoor_params, ahat, x), graph.labels, split.test_idx)
    eval_set = asr_eval_set(graph, split.test_idx, y_t)
    preds = triggered_predictions(backdoor_params, ahat, graph, trigger, eval_set)
    asr = float(np.mean(preds == y_t))

    checked = mismatches = 0
    if config.audit:
        rng = np.random.default_rng([seed, 2])
        sample = rng.choice(eval_set.size, size=min(config.audit, eval_set.size), replace=False)
        for i in np.sort(sample):
            ref = full_forward_prediction(backdoor_params, ahat, graph, trigger, int(eval_set[i]))
            checked += 1
            mismatches += int(ref != preds[i])

    log.info("seed %d: acc_c=%.4f acc_b=%.4f asr=%.4f poisoned=%d k=%d",
             seed, acc_c, acc_b, asr, len(plan), k)
    return SeedResult(seed=seed, acc_clean=acc_c, acc_backdoor=acc_b, cad=acc_c - acc_b,
                      asr=asr, y_t=y_t, k=k, n_poisoned=len(plan),
                      audit_checked=checked, audit_mismatches=mismatches,
                      trigger=trigger, plan=plan, clean_params=clean_params,
                      backdoor_params=backdoor_params, poisoned_labels=poisoned)


def run_experiment(bundle: DatasetBundle, config: ExperimentConfig,
                   clean_cache: dict | None = None) -> MetricsReport:
    """Train clean and backdoored models for every seed and aggregate the metrics.

    ``clean_cache`` lets sweeps reuse clean models, which do not depend on the
    attack settings.
    """
    graph = bundle.graph
    ahat = _ahat_for(graph)
    y_t = bundle.target_label if config.target_label is None else int(config.target_label)
    if not 0 <= y_t < graph.num_classes:
        raise ValueError(f"target label {y_t} outside [0, {graph.num_classes})")
    rows = [run_seed(graph, ahat, config, y_t, s, clean_cache) for s in sorted(config.seeds)]
    return MetricsReport(dataset=bundle.name, config=config, y_t=y_t, rows=rows)


_AHAT_CACHE: dict[int, tuple[Graph, object]] = {}


def _ahat_for(graph: Graph):
    hit = _AHAT_CACHE.get(id(graph))
    if hit is not None and hit[0] is graph:
        return hit[1]
    ahat = build_normalized_adjacency(graph)
    _AHAT_CACHE.clear()
    _AHAT_CACHE[id(graph)] = (graph, ahat)
    return ahat


SWEEP_AXES = {"p": "p", "lambda": "lam"}


def sweep(bundle: DatasetBundle, base: ExperimentConfig, axis: str, values) -> list[MetricsReport]:
    if axis not in SWEEP_AXES:
        raise ValueError(f"unknown sweep axis {axis!r}; expected 'p' or 'lambda'")
    values = [float(v) for v in values]
    if not values:
        raise ValueError("sweep needs at least one value")
    if values != sorted(values):
        raise ValueError("sweep values must be sorted ascending")
    if any(not 0 < v < 1 for v in values):
        raise ValueError("sweep values must lie in (0, 1)")
    cache: dict = {}
    return [run_experiment(bundle, base.with_(**{SWEEP_AXES[axis]: v}), cache) for v in values]


def _fmt(v: float) -> str:
    return f"{v:.6f}"


def result_lines(report: MetricsReport, include_mean: bool = True) -> list[str]:
    cfg = report.config
    head = [report.dataset, cfg.method]
    out = []
    for r in sorted(report.rows, key=lambda r: r.seed):
        out.append("\t".join(head + [str(r.seed), repr(cfg.p), repr(cfg.lam), str(report.y_t),
                                     _fmt(r.acc_clean), _fmt(r.acc_backdoor), _fmt(r.cad),
                                     _fmt(r.asr)]))
    if include_mean:
        out.append("\t".join(head + ["mean", repr(cfg.p), repr(cfg.lam), str(report.y_t),
                                     _fmt(report.acc_clean), _fmt(report.acc_backdoor),
                                     _fmt(report.cad), _fmt(report.asr)]))
    return out


def results_table(reports, config: ExperimentConfig, extra_echo=()) -> str:
    """Tab-separated results with the effective configuration echoed as comments."""
    lines = [f"# {k} = {v}" for k, v in list(config.echo()) + list(extra_echo)]
    lines.append("\t".join(RESULT_COLUMNS))
    for rep in reports:
        lines.extend(result_lines(rep))
    return "\n".join(lines) + "\n"


def read_results(path) -> list[dict]:
    rows = []
    header = None
    for line in Path(path).read_text().splitlines():
        if line.startswith("#") or not line:
            continue
        parts = line.split("\t")
        if header is None:
            header = parts
            continue
        rows.append(dict(zip(header, parts)))
    return rows


def write_run_outputs(report: MetricsReport, out) -> Path:
    """Write results.tsv plus per-seed trigger, poison plan and checkpoints."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    for r in report.rows:
        d = out / f"seed_{r.seed}"
        d.mkdir(exist_ok=True)
        if r.trigger is not None:
            atk.save_trigger(r.trigger, d / "trigger.tsv")
        if r.plan is not None:
            atk.save_plan(r.plan, d / "poison.tsv")
        if r.clean_params is not None:
            save_params(r.clean_params, d / "clean.params")
        if r.backdoor_params is not None:
            save_params(r.backdoor_params, d / "backdoor.params")
    path = out / "results.tsv"
    atomic_write_text(path, results_table([report], report.config))
    return path


def write_sweep_outputs(reports: list[MetricsReport], base: ExperimentConfig,
                        axis: str, out) -> Path:
    """Write the long-format sweep table and a per-value mean table for plotting."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "results.tsv"
    atomic_write_text(path, results_table(reports, base, [("sweep-axis", axis)]))
    lines = [f"{axis}\tasr\tcad\tacc_clean\tacc_backdoor"]
    for rep in reports:
        v = rep.config.p if axis == "p" else rep.config.lam
        lines.append("\t".join([repr(v), _fmt(rep.asr), _fmt(rep.cad),
                                _fmt(rep.acc_clean), _fmt(rep.acc_backdoor)]))
    atomic_write_text(out / f"sweep_{axis}.tsv", "\n".join(lines) + "\n")
    return path
