"""Dual-branch GCN risk classifier.

Two GCN stacks embed the attribute tensor and the structural tensor over the
same propagation operator. The two embeddings are fused by an aggregator
(Hadamard product, sum, or concatenation) and a linear map followed by a
softmax gives per-node class probabilities. On dynamic graphs the fused
embedding of every timestamp is summed before the linear map.
"""

from __future__ import annotations

import enum
import hashlib
import json
import time
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from .nn import Parameter, Tape, glorot_uniform, make_optimizer, softmax_rows
from .validation import check_features, check_index, check_square


class AggregatorMode(str, enum.Enum):
    HA = "HA"  # Hadamard product
    SU = "SU"  # summation
    CO = "CO"  # column concatenation


# attribute branch alone, used as the plain GCN baseline
ATTRIBUTE_ONLY = "GCN"
MODES = ("HA", "SU", "CO", ATTRIBUTE_ONLY)


class RiskLevel(enum.IntEnum):
    RiskFree = 0
    Low = 1
    Medium = 2
    High = 3

    @property
    def label(self) -> str:
        return RISK_LABELS[self]


RISK_LABELS = ("risk_free", "low", "medium", "high")
LOW_MAX = 150
MEDIUM_MAX = 750


def assign_risk_label(n_infected_14d) -> RiskLevel:
    """Risk level from the number of infections over the last 14 days."""
    n = int(n_infected_14d)
    if n != n_infected_14d:
        raise ValueError(f"infection count must be an integer, got {n_infected_14d!r}")
    if n < 0:
        raise ValueError(f"infection count must be non-negative, got {n}")
    if n == 0:
        return RiskLevel.RiskFree
    if n <= LOW_MAX:
        return RiskLevel.Low
    if n <= MEDIUM_MAX:
        return RiskLevel.Medium
    return RiskLevel.High


def parse_risk_label(text: str) -> RiskLevel:
    try:
        return RiskLevel(RISK_LABELS.index(text.strip().lower()))
    except ValueError:
        raise ValueError(f"unknown risk label {text!r}; expected one of {', '.join(RISK_LABELS)}") from None


def aggregate(afet, sfet, mode) -> np.ndarray:
    afet = np.asarray(afet, dtype=np.float64)
    sfet = np.asarray(sfet, dtype=np.float64)
    mode = AggregatorMode(mode)
    if mode is AggregatorMode.CO:
        if afet.shape[0] != sfet.shape[0]:
            raise ValueError(f"row mismatch: {afet.shape} vs {sfet.shape}")
        return np.hstack([afet, sfet])
    if afet.shape != sfet.shape:
        raise ValueError(f"shape mismatch: {afet.shape} vs {sfet.shape}")
    return afet * sfet if mode is AggregatorMode.HA else afet + sfet


@dataclass
class GCNModel:
    """Weights of both branches and the classifier; ``mode`` may be ``"GCN"``."""

    mode: str
    class_count: int
    attr_weights: list[Parameter]
    struct_weights: list[Parameter]
    theta: Parameter

    @classmethod
    def init(cls, d_attr: int, d_struct: int, mode="HA", hidden: int = 64, class_count: int = 4,
             n_layers: int = 2, seed: int = 0) -> "GCNModel":
        mode = _check_mode(mode)
        if hidden < 1 or n_layers < 1 or class_count < 2:
            raise ValueError("hidden and n_layers must be >= 1, class_count >= 2")
        rng = np.random.default_rng(seed)

        def branch(prefix, d_in):
            dims = [d_in] + [hidden] * n_layers
            return [Parameter(f"{prefix}.W{i}", glorot_uniform(rng, dims[i], dims[i + 1])) for i in range(n_layers)]

        attr = branch("attr", d_attr)
        struct = branch("struct", d_struct) if mode != ATTRIBUTE_ONLY else []
        width = 2 * hidden if mode == "CO" else hidden
        theta = Parameter("theta", glorot_uniform(rng, width, class_count))
        return cls(mode=mode, class_count=class_count, attr_weights=attr, struct_weights=struct, theta=theta)

    @property
    def parameters(self) -> list[Parameter]:
        return [*self.attr_weights, *self.struct_weights, self.theta]

    @property
    def embedding_width(self) -> int:
        return self.theta.shape[0]

    def copy_values(self) -> dict[str, np.ndarray]:
        return {p.name: p.value.copy() for p in self.parameters}

    def load_values(self, values: dict[str, np.ndarray]) -> None:
        for p in self.parameters:
            v = np.asarray(values[p.name], dtype=np.float64)
            if v.shape != p.shape:
                raise ValueError(f"parameter {p.name}: shape {v.shape} != {p.shape}")
            p.value = v.copy()


def _check_mode(mode) -> str:
    mode = mode.value if isinstance(mode, AggregatorMode) else str(mode)
    if mode not in MODES:
        raise ValueError(f"unknown aggregator mode {mode!r}; expected one of {MODES}")
    return mode


def _embed(tape: Tape, P, X, weights) -> object:
    H = X
    last = len(weights) - 1
    for i, W in enumerate(weights):
        H = tape.gcn(P, H, W, "relu" if i < last else "identity")
    return H


def _record(model: GCNModel, tape: Tape, steps, track: bool):
    """Record the forward pass; returns ``(logits, aet)`` vars."""
    wrap = tape.param if track else (lambda p: tape.const(p.value))
    attr = [wrap(p) for p in model.attr_weights]
    struct = [wrap(p) for p in model.struct_weights]
    theta = wrap(model.theta)
    total = None
    for P, aft, sft in steps:
        Pv = tape.const(P)
        ea = _embed(tape, Pv, tape.const(aft), attr)
        if model.mode == ATTRIBUTE_ONLY:
            r = ea
        else:
            es = _embed(tape, Pv, tape.const(sft), struct)
            if model.mode == "HA":
                r = tape.mul(ea, es)
            elif model.mode == "SU":
                r = tape.add(ea, es)
            else:
                r = tape.concat(ea, es)
        total = r if total is None else tape.add(total, r)
    return tape.matmul(total, theta), total


def _check_steps(model: GCNModel, steps):
    steps = list(steps)
    if not steps:
        raise ValueError("at least one timestamp is required")
    n = None
    out = []
    for t, (P, aft, sft) in enumerate(steps):
        aft = check_features(aft, n_features=model.attr_weights[0].shape[0])
        n = aft.shape[0] if n is None else n
        if aft.shape[0] != n:
            raise ValueError(f"timestamp {t} has {aft.shape[0]} nodes, expected {n}")
        P = check_square(P, n)
        if model.mode != ATTRIBUTE_ONLY:
            sft = check_features(sft, n_features=model.struct_weights[0].shape[0])
            if sft.shape[0] != n:
                raise ValueError(f"timestamp {t}: structural tensor has {sft.shape[0]} rows, expected {n}")
        out.append((P, aft, sft))
    return out


def forward_dynamic(model: GCNModel, steps):
    """Probabilities from ``softmax(sum_t Agg(GCN(aft_t), GCN(sft_t)) @ theta)``.

    ``steps`` is a sequence of ``(P_t, aft_t, sft_t)``. Returns
    ``(probabilities, aggregated_embedding)``.
    """
    steps = _check_steps(model, steps)
    logits, aet = _record(model, Tape(order_invariant=True), steps, track=False)
    return softmax_rows(logits.value), aet.value


def forward_static(model: GCNModel, P, aft, sft):
    return forward_dynamic(model, [(P, aft, sft)])


def loss_and_grads(model: GCNModel, steps, Y: np.ndarray, rows: np.ndarray):
    """Mean cross-entropy over ``rows`` and the gradient of every parameter."""
    tape = Tape()
    logits, _ = _record(model, tape, steps, track=True)
    loss = tape.softmax_cross_entropy(logits, Y, rows)
    grads = tape.backward(loss)
    return float(loss.value), grads


def one_hot_labels(y, k: int) -> np.ndarray:
    y = np.asarray(y, dtype=np.int64)
    out = np.zeros((len(y), k), dtype=np.float64)
    out[np.arange(len(y)), y] = 1.0
    return out


@dataclass
class Metrics:
    accuracy: float
    macro_precision: float
    macro_recall: float
    macro_f1: float
    confusion: list
    iterations_to_converge: int = 0
    astt_seconds: float = 0.0
    oit_seconds: float = 0.0
    tet_seconds: float = 0.0
    per_class: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


def evaluate(predictions, labels, class_count: int | None = None) -> Metrics:
    """Accuracy and macro precision/recall/F1; ``predictions`` may be probabilities or labels."""
    pred = np.asarray(predictions)
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size == 0:
        raise ValueError("cannot evaluate an empty set")
    if pred.ndim == 2:
        k = pred.shape[1]
        pred = pred.argmax(axis=1)
    else:
        k = int(max(pred.max(), labels.max())) + 1
    k = class_count or k
    if pred.shape[0] != labels.shape[0]:
        raise ValueError(f"{pred.shape[0]} predictions for {labels.shape[0]} labels")
    if labels.min() < 0 or labels.max() >= k:
        raise ValueError(f"labels must lie in [0, {k})")
    cm = np.zeros((k, k), dtype=np.int64)
    np.add.at(cm, (labels, pred), 1)
    tp = np.diag(cm).astype(np.float64)
    pred_tot = cm.sum(axis=0)
    true_tot = cm.sum(axis=1)
    prec = np.divide(tp, pred_tot, out=np.zeros(k), where=pred_tot > 0)
    rec = np.divide(tp, true_tot, out=np.zeros(k), where=true_tot > 0)
    f1 = np.divide(2 * prec * rec, prec + rec, out=np.zeros(k), where=(prec + rec) > 0)
    present = (pred_tot > 0) | (true_tot > 0)
    return Metrics(
        accuracy=float(tp.sum() / labels.size),
        macro_precision=float(prec[present].mean()),
        macro_recall=float(rec[present].mean()),
        macro_f1=float(f1[present].mean()),
        confusion=cm.tolist(),
        per_class={"precision": prec.tolist(), "recall": rec.tolist(), "f1": f1.tolist()},
    )


class TrainingError(RuntimeError):
    def __init__(self, message, epoch, checkpoint):
        super().__init__(message)
        self.epoch = epoch
        self.checkpoint = checkpoint


@dataclass
class History:
    epoch: list = field(default_factory=list)
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    train_acc: list = field(default_factory=list)
    val_acc: list = field(default_factory=list)
    best_epoch: int = 0
    stopped_early: bool = False
    astt_seconds: float = 0.0
    oit_seconds: float = 0.0

    def rows(self):
        return zip(self.epoch, self.train_loss, self.val_loss, self.train_acc, self.val_acc)


def train(model: GCNModel, steps, y, train_idx, val_idx=None, lr: float = 0.01, max_epoch: int = 300,
          patience: int = 50, optimizer: str = "adam"):
    """Full-batch training with early stopping on validation loss.

    One epoch is a forward pass over the whole graph, the loss on training
    rows, a backward pass and one optimizer step. When ``val_idx`` is given
    and validation loss has not improved for ``patience`` epochs, training
    stops and the best-validation weights are restored.
    """
    steps = _check_steps(model, steps)
    n = steps[0][1].shape[0]
    y = np.asarray(y, dtype=np.int64)
    train_idx = check_index(train_idx, n, "train_idx")
    val_idx = check_index(val_idx, n, "val_idx") if val_idx is not None and len(val_idx) else None
    if y[train_idx].min() < 0 or y[train_idx].max() >= model.class_count:
        raise ValueError(f"training labels must lie in [0, {model.class_count})")
    if max_epoch < 1:
        raise ValueError("max_epoch must be >= 1")
    Y_train = one_hot_labels(y[train_idx], model.class_count)
    Y_val = one_hot_labels(y[val_idx], model.class_count) if val_idx is not None else None

    opt = make_optimizer(optimizer, lr)
    params = model.parameters
    hist = History()
    best_loss = np.inf
    best_values = model.copy_values()
    since_best = 0
    t_start = time.perf_counter()
    for epoch in range(1, max_epoch + 1):
        tape = Tape()
        logits, _ = _record(model, tape, steps, track=True)
        loss = tape.softmax_cross_entropy(logits, Y_train, train_idx)
        train_loss = float(loss.value)
        if not np.isfinite(train_loss):
            raise TrainingError(f"non-finite training loss at epoch {epoch}", epoch, best_values)
        probs = softmax_rows(logits.value)
        pred = probs.argmax(axis=1)
        train_acc = float(np.mean(pred[train_idx] == y[train_idx]))
        if val_idx is not None:
            val_loss = _ce(Y_val, probs[val_idx])
            val_acc = float(np.mean(pred[val_idx] == y[val_idx]))
        else:
            val_loss, val_acc = train_loss, train_acc
        hist.epoch.append(epoch)
        hist.train_loss.append(train_loss)
        hist.val_loss.append(val_loss)
        hist.train_acc.append(train_acc)
        hist.val_acc.append(val_acc)

        if val_loss < best_loss:
            best_loss, hist.best_epoch, since_best = val_loss, epoch, 0
            best_values = model.copy_values()
        else:
            since_best += 1
            if val_idx is not None and since_best >= patience:
                hist.stopped_early = True
                break

        tape.backward(loss)
        try:
            opt.step(params)
        except FloatingPointError as exc:
            raise TrainingError(f"{exc} at epoch {epoch}", epoch, best_values) from exc

    hist.oit_seconds = time.perf_counter() - t_start
    hist.astt_seconds = hist.oit_seconds / len(hist.epoch)
    model.load_values(best_values)
    return model, hist, opt


def _ce(Y, probs) -> float:
    return float(-(Y * np.log(np.maximum(probs, 1e-12))).sum() / Y.shape[0])


def _as_steps(X, propagation, structure):
    """Normalize static or per-timestamp inputs into a list of steps."""
    if isinstance(X, (list, tuple)):
        T = len(X)
        Ps = propagation if isinstance(propagation, (list, tuple)) else [propagation] * T
        Ss = structure if isinstance(structure, (list, tuple)) else [structure] * T
        if len(Ps) != T or len(Ss) != T:
            raise ValueError("propagation/structure lists must match the number of timestamps")
        return list(zip(Ps, X, Ss))
    return [(propagation, X, structure)]


class RiskGCNClassifier(ClassifierMixin, BaseEstimator):
    """Transductive node classifier over a fixed graph.

    ``X`` is the attribute tensor for every node (or a list of them, one per
    timestamp); the graph enters through ``propagation`` and ``structure``
    keyword arguments. Rows of ``y`` equal to ``-1`` are unlabelled.
    """

    def __init__(self, mode="HA", hidden=64, n_layers=2, lr=0.01, max_epoch=300, patience=50,
                 optimizer="adam", class_count=4, seed=0):
        self.mode = mode
        self.hidden = hidden
        self.n_layers = n_layers
        self.lr = lr
        self.max_epoch = max_epoch
        self.patience = patience
        self.optimizer = optimizer
        self.class_count = class_count
        self.seed = seed

    def fit(self, X, y, *, propagation, structure=None, train_idx=None, val_idx=None):
        steps = _as_steps(X, propagation, structure)
        y = np.asarray(y, dtype=np.int64)
        aft0 = check_features(steps[0][1])
        mode = _check_mode(self.mode)
        if mode != ATTRIBUTE_ONLY and steps[0][2] is None:
            raise ValueError(f"mode {mode} needs a structural tensor")
        if train_idx is None:
            train_idx = np.flatnonzero(y >= 0)
        d_struct = check_features(steps[0][2]).shape[1] if mode != ATTRIBUTE_ONLY else 0
        self.model_ = GCNModel.init(aft0.shape[1], d_struct, mode=mode, hidden=self.hidden,
                                    class_count=self.class_count, n_layers=self.n_layers, seed=self.seed)
        _, self.history_, self.optimizer_ = train(
            self.model_, steps, y, train_idx, val_idx, lr=self.lr, max_epoch=self.max_epoch,
            patience=self.patience, optimizer=self.optimizer,
        )
        self.classes_ = np.arange(self.class_count)
        self.n_features_in_ = aft0.shape[1]
        return self

    def predict_proba(self, X, *, propagation, structure=None):
        check_is_fitted(self, "model_")
        probs, _ = forward_dynamic(self.model_, _as_steps(X, propagation, structure))
        return probs

    def predict(self, X, *, propagation, structure=None):
        return self.predict_proba(X, propagation=propagation, structure=structure).argmax(axis=1)

    def embed(self, X, *, propagation, structure=None) -> np.ndarray:
        """Aggregated embedding (before the classifier) for every node."""
        check_is_fitted(self, "model_")
        _, aet = forward_dynamic(self.model_, _as_steps(X, propagation, structure))
        return aet

    def score(self, X, y, *, propagation, structure=None, idx=None):
        pred = self.predict(X, propagation=propagation, structure=structure)
        y = np.asarray(y)
        idx = np.flatnonzero(y >= 0) if idx is None else np.asarray(idx)
        return float(np.mean(pred[idx] == y[idx]))


# checkpoints ---------------------------------------------------------------

CHECKPOINT_FORMAT = "riskgraph-checkpoint/1"


def config_hash(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode()).hexdigest()


def checkpoint_dict(model: GCNModel, optimizer=None, config: dict | None = None, extra: dict | None = None) -> dict:
    config = config or {}
    return {
        "format": CHECKPOINT_FORMAT,
        "mode": model.mode,
        "class_count": model.class_count,
        "layers": {p.name: list(p.shape) for p in model.parameters},
        "params": {p.name: p.value.tolist() for p in model.parameters},
        "optimizer": optimizer.state_dict() if optimizer is not None else None,
        "config": config,
        "config_hash": config_hash(config),
        **(extra or {}),
    }


def model_from_checkpoint(ckpt: dict) -> GCNModel:
    if ckpt.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"not a checkpoint: format {ckpt.get('format')!r}")
    params = {k: np.asarray(v, dtype=np.float64) for k, v in ckpt["params"].items()}
    for name, shape in ckpt["layers"].items():
        if list(params[name].shape) != list(shape):
            raise ValueError(f"checkpoint parameter {name} has shape {params[name].shape}, declared {shape}")

    def collect(prefix):
        names = sorted((k for k in params if k.startswith(prefix + ".W")), key=lambda k: int(k.rsplit("W", 1)[1]))
        return [Parameter(k, params[k]) for k in names]

    return GCNModel(mode=ckpt["mode"], class_count=int(ckpt["class_count"]), attr_weights=collect("attr"),
                    struct_weights=collect("struct"), theta=Parameter("theta", params["theta"]))


def save_checkpoint(path, ckpt: dict) -> None:
    from .io_utils import atomic_write_text

    atomic_write_text(path, json.dumps(ckpt, indent=1, sort_keys=True) + "\n")


def load_checkpoint(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def history_csv(hist: History) -> str:
    lines = ["epoch,train_loss,val_loss,train_acc,val_acc"]
    for e, tl, vl, ta, va in hist.rows():
        lines.append(f"{e},{tl!r},{vl!r},{ta!r},{va!r}")
    return "\n".join(lines) + "\n"


def random_problem(n: int = 20, d_attr: int = 6, d_struct: int = 8, k: int = 4, p: float = 0.2,
                   seed: int = 0, timestamps: int = 1):
    """Small random graph, features and labels (for gradient checks and tests)."""
    from .graph import build_graph, renormalized_propagation

    rng = np.random.default_rng(seed)
    edges = [(i, j) for i in range(n) for j in range(i + 1, n) if rng.random() < p]
    P = renormalized_propagation(build_graph(range(n), edges))
    steps = [(P, rng.normal(size=(n, d_attr)), rng.random((n, d_struct))) for _ in range(timestamps)]
    y = rng.integers(0, k, size=n)
    return steps, y


def gradient_check(mode="HA", n: int = 20, hidden: int = 8, seed: int = 0, h: float = 1e-5,
                   timestamps: int = 1, n_samples: int = 100) -> float:
    """Max relative error of the analytic gradients on a random problem."""
    from .nn import grad_check

    steps, y = random_problem(n=n, seed=seed, timestamps=timestamps)
    model = GCNModel.init(steps[0][1].shape[1], steps[0][2].shape[1], mode=mode, hidden=hidden, seed=seed)
    rows = np.arange(n)
    Y = one_hot_labels(y, model.class_count)
    return grad_check(lambda: loss_and_grads(model, steps, Y, rows), model.parameters, h=h,
                      n_samples=n_samples, seed=seed)
