"""Dense float64 neural-network core with a small reverse-mode tape.

Only the handful of operations the GCN classifier needs are provided:
matrix products, ReLU, elementwise sum/product, column concatenation and a
fused softmax + cross-entropy loss.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

EPS = 1e-12


@dataclass
class Parameter:
    name: str
    value: np.ndarray
    grad: np.ndarray = field(default=None)

    def __post_init__(self):
        self.value = np.asarray(self.value, dtype=np.float64)
        if self.grad is None:
            self.grad = np.zeros_like(self.value)

    @property
    def shape(self):
        return self.value.shape

    def zero_grad(self):
        self.grad = np.zeros_like(self.value)


def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def relu(X):
    return np.maximum(X, 0.0)


def gcn_layer(P, H, W, activation: str = "relu") -> np.ndarray:
    """One propagation step ``act(P @ H @ W)``."""
    P = np.asarray(P, dtype=np.float64)
    H = np.asarray(H, dtype=np.float64)
    W = W.value if isinstance(W, Parameter) else np.asarray(W, dtype=np.float64)
    if P.shape[1] != H.shape[0] or H.shape[1] != W.shape[0]:
        raise ValueError(f"shape mismatch: P{P.shape} @ H{H.shape} @ W{W.shape}")
    out = P @ H @ W
    if activation == "relu":
        return relu(out)
    if activation == "identity":
        return out
    raise ValueError(f"unknown activation {activation!r}")


def propagate_sorted(P, H, block: int = 1 << 22) -> np.ndarray:
    """``P @ H`` with each output entry summed over its terms in sorted order.

    The result does not depend on how nodes are numbered: relabeling the
    graph permutes the output rows bit for bit. Memory stays bounded by
    processing rows in blocks of about ``block`` terms.
    """
    P = np.asarray(P, dtype=np.float64)
    H = np.asarray(H, dtype=np.float64)
    if P.shape[1] != H.shape[0]:
        raise ValueError(f"shape mismatch: P{P.shape} @ H{H.shape}")
    n, h = P.shape[0], H.shape[1]
    out = np.zeros((n, h))
    rows, cols = np.nonzero(P)
    if rows.size == 0 or h == 0:
        return out
    counts = np.bincount(rows, minlength=n)
    width = int(counts.max())
    starts = np.concatenate([[0], np.cumsum(counts)])
    step = max(1, block // max(1, width * h))
    for lo in range(0, n, step):
        hi = min(n, lo + step)
        sel = slice(starts[lo], starts[hi])
        r, c = rows[sel], cols[sel]
        pos = np.arange(starts[lo], starts[hi]) - starts[r]
        # zero padding is harmless: adding 0.0 never changes a partial sum
        terms = np.zeros((hi - lo, width, h))
        terms[r - lo, pos] = P[r, c, None] * H[c]
        terms.sort(axis=1)
        acc = terms[:, 0].copy()
        for j in range(1, width):
            acc += terms[:, j]
        out[lo:hi] = acc
    return out


def softmax_rows(logits) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def cross_entropy(Y, Yhat, return_clamped: bool = False):
    """Mean over rows of ``-sum(Y * ln Yhat)``; zero probabilities are clamped to 1e-12."""
    Y = np.asarray(Y, dtype=np.float64)
    Yhat = np.asarray(Yhat, dtype=np.float64)
    if Y.shape != Yhat.shape:
        raise ValueError(f"shape mismatch: Y{Y.shape} vs Yhat{Yhat.shape}")
    if Y.shape[0] == 0:
        raise ValueError("cross_entropy of an empty batch")
    clamped = bool(np.any((Yhat < EPS) & (Y > 0)))
    logp = np.log(np.maximum(Yhat, EPS))
    loss = float(-(Y * logp).sum() / Y.shape[0])
    return (loss, clamped) if return_clamped else loss


class Var:
    __slots__ = ("value", "grad", "requires_grad", "_backward", "_param")

    def __init__(self, value, requires_grad=False, backward=None, param=None):
        self.value = value
        self.grad = None
        self.requires_grad = requires_grad
        self._backward = backward
        self._param = param

    @property
    def shape(self):
        return self.value.shape

    def _accumulate(self, g):
        if not self.requires_grad:
            return
        self.grad = g if self.grad is None else self.grad + g


class Tape:
    """Records operations during a forward pass and replays them backwards."""

    def __init__(self, order_invariant: bool = False):
        self.order_invariant = order_invariant
        self._nodes: list[Var] = []
        self._params: list[Var] = []
        self.loss: Var | None = None

    def _emit(self, value, parents, backward):
        req = any(p.requires_grad for p in parents)
        v = Var(value, requires_grad=req, backward=backward if req else None)
        if req:
            self._nodes.append(v)
        return v

    def param(self, p: Parameter) -> Var:
        v = Var(p.value, requires_grad=True, param=p)
        self._params.append(v)
        return v

    def const(self, array) -> Var:
        return Var(np.asarray(array, dtype=np.float64))

    def matmul(self, a: Var, b: Var) -> Var:
        if a.shape[1] != b.shape[0]:
            raise ValueError(f"shape mismatch: {a.shape} @ {b.shape}")

        def backward(g):
            a._accumulate(g @ b.value.T)
            b._accumulate(a.value.T @ g)

        return self._emit(a.value @ b.value, (a, b), backward)

    def propagate(self, P: Var, H: Var) -> Var:
        """``P @ H`` for a constant propagation matrix ``P``."""
        if P.shape[1] != H.shape[0]:
            raise ValueError(f"shape mismatch: {P.shape} @ {H.shape}")

        def backward(g):
            H._accumulate(P.value.T @ g)

        value = propagate_sorted(P.value, H.value) if self.order_invariant else P.value @ H.value
        return self._emit(value, (H,), backward)

    def relu(self, a: Var) -> Var:
        mask = a.value > 0

        def backward(g):
            a._accumulate(g * mask)

        return self._emit(np.where(mask, a.value, 0.0), (a,), backward)

    def add(self, a: Var, b: Var) -> Var:
        if a.shape != b.shape:
            raise ValueError(f"shape mismatch: {a.shape} + {b.shape}")

        def backward(g):
            a._accumulate(g)
            b._accumulate(g)

        return self._emit(a.value + b.value, (a, b), backward)

    def mul(self, a: Var, b: Var) -> Var:
        if a.shape != b.shape:
            raise ValueError(f"shape mismatch: {a.shape} * {b.shape}")

        def backward(g):
            a._accumulate(g * b.value)
            b._accumulate(g * a.value)

        return self._emit(a.value * b.value, (a, b), backward)

    def concat(self, a: Var, b: Var) -> Var:
        if a.shape[0] != b.shape[0]:
            raise ValueError(f"row mismatch: {a.shape} | {b.shape}")
        k = a.shape[1]

        def backward(g):
            a._accumulate(g[:, :k])
            b._accumulate(g[:, k:])

        return self._emit(np.hstack([a.value, b.value]), (a, b), backward)

    def gcn(self, P: Var, H: Var, W: Var, activation: str = "relu") -> Var:
        out = self.matmul(self.propagate(P, H), W)
        if activation == "relu":
            return self.relu(out)
        if activation != "identity":
            raise ValueError(f"unknown activation {activation!r}")
        return out

    def softmax_cross_entropy(self, logits: Var, Y: np.ndarray, rows: np.ndarray) -> Var:
        """Mean cross-entropy of ``softmax(logits)`` over ``rows`` against one-hot ``Y``."""
        probs = softmax_rows(logits.value[rows])
        loss = cross_entropy(Y, probs)
        n = len(rows)

        def backward(g):
            dz = np.zeros_like(logits.value)
            dz[rows] = (probs - Y) / n
            logits._accumulate(g * dz)

        out = self._emit(np.asarray(loss), (logits,), backward)
        self.loss = out
        return out

    def backward(self, loss: Var | None = None):
        """Fill ``Parameter.grad`` for every parameter used on this tape."""
        loss = loss if loss is not None else self.loss
        if loss is None:
            raise RuntimeError("backward called before a forward pass recorded a loss")
        for p in self._params:
            p.grad = None
        for node in self._nodes:
            node.grad = None
        loss.grad = np.ones_like(loss.value)
        for node in reversed(self._nodes):
            if node.grad is not None and node._backward is not None:
                node._backward(node.grad)
        # a parameter may sit on the tape more than once (shared across timestamps)
        total: dict[int, np.ndarray] = {}
        owners: dict[int, Parameter] = {}
        for v in self._params:
            g = v.grad if v.grad is not None else np.zeros_like(v.value)
            key = id(v._param)
            total[key] = g if key not in total else total[key] + g
            owners[key] = v._param
        for key, p in owners.items():
            p.grad = total[key]
        return {p.name: p.grad for p in owners.values()}


class Adam:
    def __init__(self, lr=0.01, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, params):
        _check_grads(params)
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for p in params:
            m = self.m.get(p.name, np.zeros_like(p.value))
            v = self.v.get(p.name, np.zeros_like(p.value))
            m = b1 * m + (1 - b1) * p.grad
            v = b2 * v + (1 - b2) * p.grad * p.grad
            self.m[p.name], self.v[p.name] = m, v
            mhat = m / (1 - b1 ** self.t)
            vhat = v / (1 - b2 ** self.t)
            p.value = p.value - self.lr * mhat / (np.sqrt(vhat) + self.eps)

    def state_dict(self) -> dict:
        return {
            "kind": "adam",
            "lr": self.lr, "beta1": self.beta1, "beta2": self.beta2, "eps": self.eps, "t": self.t,
            "m": {k: v.tolist() for k, v in sorted(self.m.items())},
            "v": {k: v.tolist() for k, v in sorted(self.v.items())},
        }

    def load_state_dict(self, state: dict):
        self.lr, self.beta1, self.beta2, self.eps = state["lr"], state["beta1"], state["beta2"], state["eps"]
        self.t = state["t"]
        self.m = {k: np.asarray(v, dtype=np.float64) for k, v in state["m"].items()}
        self.v = {k: np.asarray(v, dtype=np.float64) for k, v in state["v"].items()}


class SGD:
    def __init__(self, lr=0.01):
        self.lr = lr
        self.t = 0

    def step(self, params):
        _check_grads(params)
        self.t += 1
        for p in params:
            p.value = p.value - self.lr * p.grad

    def state_dict(self) -> dict:
        return {"kind": "sgd", "lr": self.lr, "t": self.t}

    def load_state_dict(self, state: dict):
        self.lr, self.t = state["lr"], state["t"]


def make_optimizer(kind: str, lr: float):
    if kind == "adam":
        return Adam(lr=lr)
    if kind == "sgd":
        return SGD(lr=lr)
    raise ValueError(f"unknown optimizer {kind!r}")


def _check_grads(params):
    for p in params:
        if p.grad.shape != p.value.shape:
            raise ValueError(f"gradient for {p.name} has shape {p.grad.shape}, expected {p.value.shape}")
        if not np.all(np.isfinite(p.grad)):
            raise FloatingPointError(f"non-finite gradient in parameter {p.name}")


def grad_check(loss_and_grads, params, h: float = 1e-5, n_samples: int = 100, seed: int = 0,
               floor: float = 1e-4) -> float:
    """Largest relative error between analytic and central-difference gradients.

    ``loss_and_grads()`` must return ``(loss, {name: grad})`` for the current
    parameter values. Up to ``n_samples`` entries per parameter are checked
    (all of them when the parameter is smaller). The error of one entry is
    ``|analytic - numeric| / max(|numeric|, floor)``.
    """
    rng = np.random.default_rng(seed)
    _, grads = loss_and_grads()
    grads = {k: np.array(v, copy=True) for k, v in grads.items()}
    worst = 0.0
    for p in params:
        flat = p.value.reshape(-1)
        size = flat.size
        picks = np.arange(size) if size <= n_samples else rng.choice(size, n_samples, replace=False)
        for i in picks:
            orig = flat[i]
            flat[i] = orig + h
            lp, _ = loss_and_grads()
            flat[i] = orig - h
            lm, _ = loss_and_grads()
            flat[i] = orig
            num = (lp - lm) / (2 * h)
            ana = grads[p.name].reshape(-1)[i]
            worst = max(worst, abs(ana - num) / max(abs(num), floor))
    return worst
