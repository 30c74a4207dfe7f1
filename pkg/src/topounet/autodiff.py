"""Minimal reverse-mode autodiff over 2-D float64 matrices.

Tensors wrap numpy arrays and record the operations that produced them;
``backward`` walks the graph in reverse topological order and accumulates
gradients into every tensor with ``requires_grad`` set.  Only what the
network needs is provided: dense/sparse matrix products, broadcasting
elementwise arithmetic, a few nonlinearities, reductions, dropout, and fused
classification / regression losses.
"""
from __future__ import annotations

import json
import re
from pathlib import Path

import numpy as np
from scipy.special import expit

from .complexes import SparseMatrix

_NAME_RE = re.compile(r"^[A-Za-z0-9_.\-]+$")


class Tensor:
    """2-D float64 matrix with an optional gradient and graph bookkeeping."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1, 1)
        elif arr.ndim == 1:
            arr = arr.reshape(1, -1)
        elif arr.ndim != 2:
            raise ValueError(f"tensors are 2-D matrices, got shape {arr.shape}")
        self.data = arr
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        if self.size != 1:
            raise ValueError(f"item() needs a scalar tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents, backward_fn) -> Tensor:
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


def _unbroadcast(grad: np.ndarray, shape) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` along axes that were broadcast."""
    if grad.shape == shape:
        return grad
    out = grad
    if shape[0] == 1 and out.shape[0] != 1:
        out = out.sum(axis=0, keepdims=True)
    if shape[1] == 1 and out.shape[1] != 1:
        out = out.sum(axis=1, keepdims=True)
    return out


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out_data = a.data + b.data

    def backward(g, acc):
        acc(a, _unbroadcast(g, a.shape))
        acc(b, _unbroadcast(g, b.shape))

    return _make(out_data, (a, b), backward)


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out_data = a.data - b.data

    def backward(g, acc):
        acc(a, _unbroadcast(g, a.shape))
        acc(b, _unbroadcast(-g, b.shape))

    return _make(out_data, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out_data = a.data * b.data

    def backward(g, acc):
        acc(a, _unbroadcast(g * b.data, a.shape))
        acc(b, _unbroadcast(g * a.data, b.shape))

    return _make(out_data, (a, b), backward)


def div(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out_data = a.data / b.data

    def backward(g, acc):
        acc(a, _unbroadcast(g / b.data, a.shape))
        acc(b, _unbroadcast(-g * a.data / (b.data * b.data), b.shape))

    return _make(out_data, (a, b), backward)


def scale(a, c: float) -> Tensor:
    a = _as_tensor(a)

    def backward(g, acc):
        acc(a, g * c)

    return _make(a.data * c, (a,), backward)


def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    out_data = a.data @ b.data

    def backward(g, acc):
        acc(a, g @ b.data.T)
        acc(b, a.data.T @ g)

    return _make(out_data, (a, b), backward)


def sparse_matmul(s, x, transpose: bool = False) -> Tensor:
    """Apply a constant sparse operator: s @ x, or s.T @ x when ``transpose``.

    ``s`` may be a SparseMatrix or any operator exposing ``.matrix``.  The
    gradient with respect to ``x`` is the transposed application.
    """
    if not isinstance(s, SparseMatrix):
        s = s.matrix
    x = _as_tensor(x)
    cols = s.shape[0] if transpose else s.shape[1]
    if cols != x.shape[0]:
        op_shape = (s.shape[1], s.shape[0]) if transpose else s.shape
        raise ValueError(f"shape mismatch: operator {op_shape} applied to {x.shape}")
    out_data = s.apply(x.data, transpose=transpose)

    def backward(g, acc):
        acc(x, s.apply(g, transpose=not transpose))

    return _make(out_data, (x,), backward)


def transpose(a) -> Tensor:
    a = _as_tensor(a)

    def backward(g, acc):
        acc(a, g.T)

    return _make(a.data.T, (a,), backward)


def relu(a) -> Tensor:
    a = _as_tensor(a)
    mask = a.data > 0

    def backward(g, acc):
        acc(a, g * mask)

    return _make(a.data * mask, (a,), backward)


def sigmoid(a) -> Tensor:
    a = _as_tensor(a)
    s = expit(a.data)

    def backward(g, acc):
        acc(a, g * s * (1.0 - s))

    return _make(s, (a,), backward)


def exp(a) -> Tensor:
    a = _as_tensor(a)
    e = np.exp(a.data)

    def backward(g, acc):
        acc(a, g * e)

    return _make(e, (a,), backward)


def identity(a) -> Tensor:
    return _as_tensor(a)


POINTWISE = {"relu": relu, "identity": identity}


def pointwise(a, fn: str) -> Tensor:
    try:
        return POINTWISE[fn](a)
    except KeyError:
        raise ValueError(f"unknown pointwise function {fn!r}") from None


def tsum(a, axis: int | None = None) -> Tensor:
    a = _as_tensor(a)
    out_data = a.data.sum(axis=axis, keepdims=True)
    if axis is None:
        out_data = out_data.reshape(1, 1)

    def backward(g, acc):
        acc(a, np.broadcast_to(g, a.shape).copy())

    return _make(out_data, (a,), backward)


def mean_rows(a) -> Tensor:
    """Average over rows: (n, d) -> (1, d)."""
    a = _as_tensor(a)
    n = a.shape[0]

    def backward(g, acc):
        acc(a, np.broadcast_to(g / n, a.shape).copy())

    return _make(a.data.mean(axis=0, keepdims=True), (a,), backward)


def mean_all(a) -> Tensor:
    a = _as_tensor(a)
    n = a.size

    def backward(g, acc):
        acc(a, np.broadcast_to(g / n, a.shape).copy())

    return _make(a.data.mean().reshape(1, 1), (a,), backward)


def concat_cols(tensors) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    rows = {t.shape[0] for t in tensors}
    if len(rows) != 1:
        raise ValueError(f"concat_cols needs equal row counts, got {sorted(rows)}")
    out_data = np.concatenate([t.data for t in tensors], axis=1)
    splits = np.cumsum([t.shape[1] for t in tensors])[:-1]

    def backward(g, acc):
        for t, piece in zip(tensors, np.split(g, splits, axis=1)):
            acc(t, piece)

    return _make(out_data, tuple(tensors), backward)


def gather_rows(a, indices) -> Tensor:
    a = _as_tensor(a)
    idx = np.asarray(indices, dtype=np.int64)

    def backward(g, acc):
        ga = np.zeros_like(a.data)
        np.add.at(ga, idx, g)
        acc(a, ga)

    return _make(a.data[idx], (a,), backward)


def dropout(a, p: float, training: bool, rng: np.random.Generator | None = None) -> Tensor:
    """Inverted dropout; identity when not training or p == 0."""
    a = _as_tensor(a)
    if not training or p == 0.0:
        return a
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {p}")
    if rng is None:
        raise ValueError("dropout in training mode needs an explicit rng")
    mask = (rng.random(a.shape) >= p) / (1.0 - p)

    def backward(g, acc):
        acc(a, g * mask)

    return _make(a.data * mask, (a,), backward)


def linear(x, w, b=None) -> Tensor:
    """x @ w with an optional row-broadcast bias."""
    out = matmul(x, w)
    if b is not None:
        out = add(out, b)
    return out


def softmax_cross_entropy(logits, labels, row_indices=None) -> Tensor:
    """Mean cross-entropy of row-wise softmax against integer labels.

    ``row_indices`` restricts the loss to a subset of rows (e.g. a train
    mask); labels are indexed by the same rows as ``logits``.
    """
    logits = _as_tensor(logits)
    labels = np.asarray(labels, dtype=np.int64)
    if row_indices is None:
        rows = np.arange(logits.shape[0])
    else:
        rows = np.asarray(row_indices, dtype=np.int64)
    if len(rows) == 0:
        raise ValueError("loss mask selects zero rows")
    z = logits.data[rows]
    y = labels[rows]
    zmax = z.max(axis=1, keepdims=True)
    lse = zmax + np.log(np.exp(z - zmax).sum(axis=1, keepdims=True))
    losses = lse[:, 0] - z[np.arange(len(rows)), y]
    out_data = np.array([[losses.mean()]])

    def backward(g, acc):
        p = np.exp(z - lse)
        p[np.arange(len(rows)), y] -= 1.0
        full = np.zeros_like(logits.data)
        np.add.at(full, rows, p / len(rows))
        acc(logits, full * g[0, 0])

    return _make(out_data, (logits,), backward)


def mse_loss(pred, target) -> Tensor:
    """Mean squared error over all entries; the target is a constant."""
    pred = _as_tensor(pred)
    target = np.asarray(target, dtype=np.float64)
    if target.shape != pred.shape:
        raise ValueError(f"target shape {target.shape} != prediction shape {pred.shape}")
    diff = pred.data - target
    out_data = np.array([[(diff * diff).mean()]])

    def backward(g, acc):
        acc(pred, (2.0 / diff.size) * diff * g[0, 0])

    return _make(out_data, (pred,), backward)


def backward(loss: Tensor):
    """Populate gradients of every requires_grad tensor reachable from ``loss``.

    Repeated calls without zeroing accumulate into ``.grad``.
    """
    if loss.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    topo: list[Tensor] = []
    visited = set()
    stack = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in visited or not node.requires_grad:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            stack.append((p, False))

    adjoint: dict[int, np.ndarray] = {id(loss): np.ones((1, 1))}
    holder = {id(t): t for t in topo}

    def acc(t: Tensor, g: np.ndarray):
        if not t.requires_grad:
            return
        key = id(t)
        if key in adjoint:
            adjoint[key] = adjoint[key] + g
        else:
            adjoint[key] = g
            holder[key] = t

    for node in reversed(topo):
        g = adjoint.get(id(node))
        if g is None or node._backward is None:
            continue
        node._backward(g, acc)

    for key, g in adjoint.items():
        t = holder[key]
        if t._backward is None:  # leaves only; intermediates stay transient
            t.grad = g if t.grad is None else t.grad + g


GLOROT = "glorot"
ZEROS = "zeros"


def _glorot(rng: np.random.Generator, shape) -> np.ndarray:
    fan_in, fan_out = shape
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


class ParameterStore:
    """Named trainable tensors with per-parameter Adam state.

    Initialization draws are deterministic given the seed and the order in
    which parameters are created.
    """

    def __init__(self, seed: int = 0):
        self.seed = int(seed)
        self._rng = np.random.default_rng(np.random.SeedSequence(self.seed))
        self._params: dict[str, Tensor] = {}
        self._adam: dict[str, dict] = {}

    def add(self, name: str, shape, init: str = GLOROT) -> Tensor:
        if name in self._params:
            raise ValueError(f"duplicate parameter name {name!r}")
        if not _NAME_RE.match(name):
            raise ValueError(f"parameter name {name!r} is not filesystem-safe")
        shape = (int(shape[0]), int(shape[1]))
        if init == GLOROT:
            data = _glorot(self._rng, shape)
        elif init == ZEROS:
            data = np.zeros(shape)
        else:
            raise ValueError(f"unknown init {init!r}")
        t = Tensor(data, requires_grad=True)
        self._params[name] = t
        self._adam[name] = {"m": np.zeros(shape), "v": np.zeros(shape), "t": 0}
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def names(self):
        return list(self._params)

    def tensors(self):
        return list(self._params.values())

    def num_parameters(self) -> int:
        return sum(t.size for t in self._params.values())

    def zero_grad(self):
        for t in self._params.values():
            t.grad = None

    def adam_step(self, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999,
                  eps: float = 1e-8, weight_decay: float = 0.0):
        """Adam update with L2 weight decay folded into the gradient."""
        for name, t in self._params.items():
            if t.grad is None:
                raise ValueError(f"parameter {name!r} has no gradient")
            state = self._adam[name]
            g = t.grad + weight_decay * t.data
            state["t"] += 1
            state["m"] = beta1 * state["m"] + (1 - beta1) * g
            state["v"] = beta2 * state["v"] + (1 - beta2) * (g * g)
            mhat = state["m"] / (1 - beta1 ** state["t"])
            vhat = state["v"] / (1 - beta2 ** state["t"])
            t.data = t.data - lr * mhat / (np.sqrt(vhat) + eps)

    def snapshot(self) -> dict[str, np.ndarray]:
        return {name: t.data.copy() for name, t in self._params.items()}

    def restore(self, snap: dict[str, np.ndarray]):
        for name, data in snap.items():
            self._params[name].data = data.copy()

    def save(self, directory):
        """Checkpoint: JSON manifest plus one little-endian float64 blob per
        parameter."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        manifest = {"seed": self.seed, "params": []}
        for name, t in self._params.items():
            fname = f"{name}.bin"
            t.data.astype("<f8").tofile(directory / fname)
            manifest["params"].append(
                {
                    "name": name,
                    "shape": list(t.shape),
                    "file": fname,
                    "step": self._adam[name]["t"],
                }
            )
        (directory / "manifest.json").write_text(json.dumps(manifest, indent=2))

    @classmethod
    def load(cls, directory) -> "ParameterStore":
        directory = Path(directory)
        manifest = json.loads((directory / "manifest.json").read_text())
        store = cls(seed=manifest["seed"])
        for entry in manifest["params"]:
            shape = tuple(entry["shape"])
            data = np.fromfile(directory / entry["file"], dtype="<f8").reshape(shape)
            t = store.add(entry["name"], shape, init=ZEROS)
            t.data = data.astype(np.float64)
            store._adam[entry["name"]]["t"] = entry["step"]
        return store

    def load_into(self, directory):
        """Overwrite existing parameter values from a checkpoint directory."""
        directory = Path(directory)
        manifest = json.loads((directory / "manifest.json").read_text())
        for entry in manifest["params"]:
            name = entry["name"]
            if name not in self._params:
                raise ValueError(f"checkpoint parameter {name!r} not present in store")
            shape = tuple(entry["shape"])
            data = np.fromfile(directory / entry["file"], dtype="<f8").reshape(shape)
            self._params[name].data = data.astype(np.float64)
