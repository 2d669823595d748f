"""Two-layer GCN written directly against numpy/scipy.

The model is ``logits = A_hat @ relu(A_hat @ X @ W0) @ W1`` trained with
full-batch softmax cross-entropy, an explicit L2 penalty on both weight
matrices, inverted dropout on the input features and the hidden layer, and
Adam.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .errors import NumericalError


@dataclass
class GcnParams:
    w0: np.ndarray
    w1: np.ndarray

    @property
    def shape(self) -> tuple[int, int, int]:
        d, h = self.w0.shape
        return d, h, self.w1.shape[1]

    def copy(self) -> "GcnParams":
        return GcnParams(self.w0.copy(), self.w1.copy())

    def equal(self, other: "GcnParams") -> bool:
        """Bitwise equality of both weight matrices."""
        return (self.w0.shape == other.w0.shape and self.w1.shape == other.w1.shape
                and self.w0.tobytes() == other.w0.tobytes()
                and self.w1.tobytes() == other.w1.tobytes())


@dataclass(frozen=True)
class TrainConfig:
    hidden: int = 32
    learning_rate: float = 0.01
    weight_decay: float = 5e-4
    dropout: float = 0.6
    epochs: int = 200
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if not 0 <= self.dropout < 1:
            raise ValueError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.hidden < 1:
            raise ValueError("hidden must be >= 1")


@dataclass
class TrainTrace:
    loss: list[float] = field(default_factory=list)
    train_acc: list[float] = field(default_factory=list)
    val_acc: list[float] = field(default_factory=list)

    def __len__(self):
        return len(self.loss)


@dataclass
class DropoutMask:
    """Pre-scaled multiplicative dropout masks.

    ``features`` matches ``X.data`` when X is sparse and ``X.shape`` when it
    is dense; ``hidden`` is N x h. Either may be None (no dropout there).
    """

    features: np.ndarray | None = None
    hidden: np.ndarray | None = None


def glorot(fan_in: int, fan_out: int, rng: np.random.Generator) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


def init_params(d: int, h: int, c: int, seed: int) -> GcnParams:
    if min(d, h, c) < 1:
        raise ValueError("dimensions must be >= 1")
    rng = np.random.default_rng(seed)
    w0 = glorot(d, h, rng)
    w1 = glorot(h, c, rng)
    return GcnParams(w0, w1)


def _check_finite(a: np.ndarray, what: str, epoch=None):
    if not np.all(np.isfinite(a)):
        where = f" at epoch {epoch}" if epoch is not None else ""
        raise NumericalError(f"non-finite values in {what}{where}")


def _apply_feature_mask(x, mask):
    if mask is None:
        return x
    if sp.issparse(x):
        out = x.copy()
        out.data = out.data * mask
        return out
    return x * mask


def _forward_parts(params, ahat, x, hidden_mask=None, epoch=None):
    xw = x @ params.w0
    z1 = ahat @ xw
    _check_finite(z1, "layer 1 pre-activation", epoch)
    h = np.maximum(z1, 0.0)
    hd = h if hidden_mask is None else h * hidden_mask
    ah = ahat @ hd
    logits = ah @ params.w1
    _check_finite(logits, "layer 2 logits", epoch)
    return z1, hd, ah, logits


def forward(params: GcnParams, ahat, x, dropout_mask: DropoutMask | None = None) -> np.ndarray:
    """Logits for every node. Evaluation mode when ``dropout_mask`` is None."""
    if dropout_mask is not None:
        x = _apply_feature_mask(x, dropout_mask.features)
        hidden_mask = dropout_mask.hidden
    else:
        hidden_mask = None
    return _forward_parts(params, ahat, x, hidden_mask)[3]


def log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def softmax(logits: np.ndarray) -> np.ndarray:
    return np.exp(log_softmax(logits))


def loss_and_grads(params: GcnParams, ahat, x, labels, idx,
                   dropout_mask: DropoutMask | None = None,
                   weight_decay: float = 5e-4, epoch=None):
    """Mean cross-entropy over ``idx`` plus ``weight_decay/2 * (|W0|^2 + |W1|^2)``.

    Returns ``(loss, GcnParams)`` where the second item holds the exact
    gradients.
    """
    idx = np.asarray(idx, dtype=np.int64)
    if idx.size == 0:
        raise ValueError("loss over an empty node set")
    labels = np.asarray(labels)
    mask = dropout_mask or DropoutMask()
    xd = _apply_feature_mask(x, mask.features)
    z1, hd, ah, logits = _forward_parts(params, ahat, xd, mask.hidden, epoch)

    logp = log_softmax(logits[idx])
    y = labels[idx]
    m = idx.size
    reg = 0.5 * weight_decay * (np.sum(params.w0 ** 2) + np.sum(params.w1 ** 2))
    loss = float(-logp[np.arange(m), y].mean() + reg)

    dlogits = np.zeros_like(logits)
    g = np.exp(logp)
    g[np.arange(m), y] -= 1.0
    # np.add.at keeps repeated indices correct.
    np.add.at(dlogits, idx, g / m)

    dw1 = ah.T @ dlogits + weight_decay * params.w1
    dhd = ahat.T @ (dlogits @ params.w1.T)
    dh = dhd if mask.hidden is None else dhd * mask.hidden
    dz1 = dh * (z1 > 0)
    dxw = ahat.T @ dz1
    dw0 = np.asarray(xd.T @ dxw) + weight_decay * params.w0
    _check_finite(dw0, "W0 gradient", epoch)
    _check_finite(dw1, "W1 gradient", epoch)
    return loss, GcnParams(dw0, dw1)


class Adam:
    """Adam with bias correction over the two weight matrices."""

    def __init__(self, params: GcnParams, lr=0.01, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(params.w0), np.zeros_like(params.w1)]
        self.v = [np.zeros_like(params.w0), np.zeros_like(params.w1)]
        self.t = 0

    def step(self, params: GcnParams, grads: GcnParams) -> GcnParams:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        out = []
        for i, (p, g) in enumerate(((params.w0, grads.w0), (params.w1, grads.w1))):
            self.m[i] = b1 * self.m[i] + (1.0 - b1) * g
            self.v[i] = b2 * self.v[i] + (1.0 - b2) * (g * g)
            mhat = self.m[i] / c1
            vhat = self.v[i] / c2
            out.append(p - self.lr * mhat / (np.sqrt(vhat) + self.eps))
        return GcnParams(*out)


def sample_dropout(x, n_hidden_rows: int, hidden: int, p: float,
                   rng: np.random.Generator) -> DropoutMask:
    if p == 0:
        return DropoutMask()
    scale = 1.0 / (1.0 - p)
    n_feat = x.data.shape[0] if sp.issparse(x) else x.shape
    feat = (rng.random(n_feat) >= p) * scale
    hid = (rng.random((n_hidden_rows, hidden)) >= p) * scale
    return DropoutMask(feat, hid)


def predict(params: GcnParams, ahat, x) -> np.ndarray:
    """Argmax class per node; ties go to the lowest class id."""
    return np.argmax(forward(params, ahat, x), axis=1)


def accuracy(preds, labels, idx) -> float:
    idx = np.asarray(idx, dtype=np.int64)
    if idx.size == 0:
        raise ValueError("accuracy over an empty node set")
    return float(np.mean(np.asarray(preds)[idx] == np.asarray(labels)[idx]))


def train(graph, ahat, labels, split, config: TrainConfig = TrainConfig()):
    """Full-batch training for exactly ``config.epochs`` Adam steps.

    Returns the final-epoch parameters and a per-epoch trace. Training and
    validation accuracies in the trace come from an evaluation-mode pass
    after each step.
    """
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape[0] != graph.num_nodes:
        raise ValueError("label vector length does not match the graph")
    # Sparse inputs make the per-epoch feature dropout proportional to nnz;
    # dropping an implicit zero would be a no-op anyway.
    x = graph.features if sp.issparse(graph.features) else sp.csr_matrix(graph.features)
    params = init_params(graph.num_features, config.hidden, graph.num_classes, config.seed)
    opt = Adam(params, config.learning_rate, config.beta1, config.beta2, config.eps)
    drop_rng = np.random.default_rng([config.seed, 1])
    trace = TrainTrace()
    for epoch in range(config.epochs):
        mask = sample_dropout(x, graph.num_nodes, config.hidden, config.dropout, drop_rng)
        loss, grads = loss_and_grads(params, ahat, x, labels, split.train_idx, mask,
                                     config.weight_decay, epoch=epoch)
        params = opt.step(params, grads)
        preds = predict(params, ahat, x)
        trace.loss.append(loss)
        trace.train_acc.append(accuracy(preds, labels, split.train_idx))
        trace.val_acc.append(accuracy(preds, labels, split.val_idx))
    return params, trace


class IncrementalForward:
    """Logits for one node after replacing that node's feature row.

    Caches ``X @ W0`` and the first-layer pre-activations of the unperturbed
    input. Replacing row v only moves first-layer rows in v's closed
    neighbourhood, and v's output row only reads those same rows, so each
    query touches ``deg(v) + 1`` hidden rows.
    """

    def __init__(self, params: GcnParams, ahat, x):
        self.params = params
        self.ahat = sp.csr_matrix(ahat)
        self.ahat.sort_indices()
        self.x = x
        self.xw = np.asarray(x @ params.w0)
        self.z1 = self.ahat @ self.xw
        self.hidden = np.maximum(self.z1, 0.0)
        self.logits = (self.ahat @ self.hidden) @ params.w1

    def _row(self, node: int) -> np.ndarray:
        if sp.issparse(self.x):
            return self.x[node].toarray().ravel()
        return np.asarray(self.x[node], dtype=np.float64)

    def logits_for(self, node: int, new_row) -> np.ndarray:
        a = self.ahat
        lo, hi = a.indptr[node], a.indptr[node + 1]
        nbrs = a.indices[lo:hi]
        weights = a.data[lo:hi]
        new_row = np.asarray(new_row, dtype=np.float64)
        delta = (new_row - self._row(node)) @ self.params.w0
        # A_hat is symmetric, so A_hat[u, node] == A_hat[node, u].
        z1_local = self.z1[nbrs] + weights[:, None] * delta[None, :]
        h_local = np.maximum(z1_local, 0.0)
        return (weights @ h_local) @ self.params.w1

    def predict_for(self, node: int, new_row) -> int:
        return int(np.argmax(self.logits_for(node, new_row)))


def incremental_forward(params: GcnParams, ahat, x, node: int, new_row,
                        cache: IncrementalForward | None = None) -> np.ndarray:
    if cache is None:
        cache = IncrementalForward(params, ahat, x)
    return cache.logits_for(node, new_row)


def replace_row(x, node: int, new_row):
    """Copy of ``x`` with one row replaced, preserving dense/sparse storage."""
    new_row = np.asarray(new_row, dtype=np.float64)
    if sp.issparse(x):
        out = sp.lil_matrix(x)
        out[node] = new_row
        return out.tocsr()
    out = np.array(x, dtype=np.float64)
    out[node] = new_row
    return out


def save_params(params: GcnParams, path) -> None:
    d, h, c = params.shape
    header = f"gcn v1 {d} {h} {c}\n".encode("ascii")
    body = np.concatenate([params.w0.ravel(), params.w1.ravel()]).astype("<f8").tobytes()
    path = Path(path)
    tmp = path.with_name(f".{path.name}.tmp")
    tmp.write_bytes(header + body)
    tmp.replace(path)


def load_params(path) -> GcnParams:
    raw = Path(path).read_bytes()
    nl = raw.index(b"\n")
    fields = raw[:nl].decode("ascii").split()
    if len(fields) != 5 or fields[:2] != ["gcn", "v1"]:
        raise ValueError(f"not a gcn v1 checkpoint: {path}")
    d, h, c = map(int, fields[2:])
    vals = np.frombuffer(raw[nl + 1:], dtype="<f8")
    if vals.size != d * h + h * c:
        raise ValueError(f"checkpoint {path} has {vals.size} values, expected {d * h + h * c}")
    return GcnParams(vals[:d * h].reshape(d, h).copy(), vals[d * h:].reshape(h, c).copy())


def with_seed(config: TrainConfig, seed: int) -> TrainConfig:
    return replace(config, seed=seed)
