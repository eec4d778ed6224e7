"""Small dense neural toolkit: tape-based reverse mode, GRU cell, MLPs, Adam.

Only the operations the two trajectory experts need are provided. Every
array is float64 so that finite-difference checks are meaningful.

GRU gate equations (the single definition used everywhere in the package)::

    r  = sigmoid(x W_ir + b_ir + h W_hr + b_hr)
    z  = sigmoid(x W_iz + b_iz + h W_hz + b_hz)
    n  = tanh(x W_in + b_in + r * (h W_hn + b_hn))
    h' = (1 - z) * n + z * h

The three gate blocks are stored side by side as ``[r | z | n]`` in the
``Wi`` (in, 3H), ``Wh`` (H, 3H), ``bi`` and ``bh`` (3H,) arrays.
"""

from __future__ import annotations

import hashlib
import io
import json
import os
from collections import OrderedDict
from dataclasses import dataclass, field

import numpy as np

FORMAT_VERSION = "xenad-weights/1"


# -- tape ---------------------------------------------------------------------


class Tensor:
    """Array value plus the recipe for pushing gradients to its parents."""

    __slots__ = ("value", "grad", "parents", "backward_fn", "requires_grad")

    def __init__(self, value, parents=(), backward_fn=None, requires_grad=False):
        self.value = np.asarray(value, dtype=float)
        self.grad = None
        self.parents = parents
        self.backward_fn = backward_fn
        self.requires_grad = requires_grad

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Tensor(shape={self.value.shape}, requires_grad={self.requires_grad})"

    __add__ = lambda self, o: add(self, o)
    __radd__ = lambda self, o: add(o, self)
    __sub__ = lambda self, o: sub(self, o)
    __rsub__ = lambda self, o: sub(o, self)
    __mul__ = lambda self, o: mul(self, o)
    __rmul__ = lambda self, o: mul(o, self)
    __matmul__ = lambda self, o: matmul(self, o)
    __neg__ = lambda self: mul(self, -1.0)
    __getitem__ = lambda self, idx: take(self, idx)

    def __truediv__(self, o):
        if isinstance(o, Tensor):
            raise TypeError("division by a Tensor is not supported")
        return mul(self, 1.0 / np.asarray(o, dtype=float))


def _t(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(value, parents, backward_fn) -> Tensor:
    if any(p.requires_grad for p in parents):
        return Tensor(value, parents, backward_fn, requires_grad=True)
    return Tensor(value)


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def add(a, b) -> Tensor:
    a, b = _t(a), _t(b)
    sa, sb = a.shape, b.shape
    return _node(a.value + b.value, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = _t(a), _t(b)
    sa, sb = a.shape, b.shape
    return _node(a.value - b.value, (a, b), lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb)))


def mul(a, b) -> Tensor:
    a, b = _t(a), _t(b)
    av, bv = a.value, b.value
    return _node(
        av * bv,
        (a, b),
        lambda g: (_unbroadcast(g * bv, av.shape), _unbroadcast(g * av, bv.shape)),
    )


def matmul(a, b) -> Tensor:
    a, b = _t(a), _t(b)
    av, bv = a.value, b.value
    return _node(av @ bv, (a, b), lambda g: (g @ bv.T, av.T @ g))


def sigmoid(a) -> Tensor:
    a = _t(a)
    y = 0.5 * (1.0 + np.tanh(0.5 * a.value))  # overflow-free logistic
    return _node(y, (a,), lambda g: (g * y * (1.0 - y),))


def tanh(a) -> Tensor:
    a = _t(a)
    y = np.tanh(a.value)
    return _node(y, (a,), lambda g: (g * (1.0 - y * y),))


def relu(a) -> Tensor:
    a = _t(a)
    mask = a.value > 0
    return _node(a.value * mask, (a,), lambda g: (g * mask,))


def exp(a) -> Tensor:
    a = _t(a)
    y = np.exp(a.value)
    return _node(y, (a,), lambda g: (g * y,))


def sqrt(a) -> Tensor:
    a = _t(a)
    y = np.sqrt(a.value)
    return _node(y, (a,), lambda g: (g * 0.5 / y,))


def square(a) -> Tensor:
    a = _t(a)
    av = a.value
    return _node(av * av, (a,), lambda g: (2.0 * g * av,))


def sum_(a, axis=None) -> Tensor:
    a = _t(a)
    shape = a.shape

    def back(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _node(a.value.sum(axis=axis), (a,), back)


def mean(a, axis=None) -> Tensor:
    a = _t(a)
    n = a.value.size if axis is None else a.value.shape[axis]
    return mul(sum_(a, axis), 1.0 / n)


def take(a, idx) -> Tensor:
    a = _t(a)
    shape = a.shape

    def back(g):
        out = np.zeros(shape)
        np.add.at(out, idx, g) if _fancy(idx) else out.__setitem__(idx, g)
        return (out,)

    return _node(a.value[idx], (a,), back)


def _fancy(idx) -> bool:
    items = idx if isinstance(idx, tuple) else (idx,)
    return any(isinstance(i, (list, np.ndarray)) for i in items)


def concat(tensors, axis=-1) -> Tensor:
    ts = [_t(x) for x in tensors]
    sizes = [t.value.shape[axis] for t in ts]
    cuts = np.cumsum(sizes)[:-1]
    return _node(
        np.concatenate([t.value for t in ts], axis=axis),
        tuple(ts),
        lambda g: tuple(np.split(g, cuts, axis=axis)),
    )


def stack(tensors, axis=0) -> Tensor:
    ts = [_t(x) for x in tensors]
    n = len(ts)
    return _node(
        np.stack([t.value for t in ts], axis=axis),
        tuple(ts),
        lambda g: tuple(np.take(g, i, axis=axis) for i in range(n)),
    )


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every leaf that requires it."""
    if loss.value.size != 1:
        raise ValueError(f"loss must be a scalar, got shape {loss.value.shape}")
    order, seen, stack_ = [], set(), [(loss, False)]
    while stack_:
        node, done = stack_.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen or not node.requires_grad:
            continue
        seen.add(id(node))
        stack_.append((node, True))
        for p in node.parents:
            if p.requires_grad and id(p) not in seen:
                stack_.append((p, False))
    grads = {id(loss): np.ones_like(loss.value)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.backward_fn is None:
            node.grad = g if node.grad is None else node.grad + g
            continue
        for p, gp in zip(node.parents, node.backward_fn(g)):
            if not p.requires_grad:
                continue
            k = id(p)
            grads[k] = gp if k not in grads else grads[k] + gp


# -- parameters ---------------------------------------------------------------


class ParamStore:
    """Named float64 arrays with shapes fixed at construction."""

    def __init__(self, arrays=None, version: str = FORMAT_VERSION):
        self.version = version
        self._arrays: OrderedDict[str, np.ndarray] = OrderedDict()
        for name, arr in (arrays or {}).items():
            self.add(name, arr)

    def add(self, name: str, arr) -> None:
        if name in self._arrays:
            raise KeyError(f"parameter {name!r} already defined")
        self._arrays[name] = np.array(arr, dtype=float)

    def __getitem__(self, name):
        return self._arrays[name]

    def __contains__(self, name):
        return name in self._arrays

    def __iter__(self):
        return iter(self._arrays)

    def __len__(self):
        return len(self._arrays)

    def items(self):
        return self._arrays.items()

    @property
    def shapes(self):
        return {k: v.shape for k, v in self._arrays.items()}

    def set(self, name, value) -> None:
        value = np.asarray(value, dtype=float)
        if value.shape != self._arrays[name].shape:
            raise ValueError(f"{name}: shape {value.shape} != {self._arrays[name].shape}")
        self._arrays[name][...] = value

    def copy(self) -> "ParamStore":
        return ParamStore({k: v.copy() for k, v in self._arrays.items()}, self.version)

    def leaves(self, requires_grad=True) -> dict:
        return {k: Tensor(v, requires_grad=requires_grad) for k, v in self._arrays.items()}

    def num_parameters(self) -> int:
        return int(sum(v.size for v in self._arrays.values()))

    def checksum(self) -> str:
        h = hashlib.sha256(self.version.encode())
        for k, v in self._arrays.items():
            h.update(k.encode())
            h.update(str(v.shape).encode())
            h.update(np.ascontiguousarray(v, dtype="<f8").tobytes())
        return h.hexdigest()

    def save(self, path, extra=None) -> None:
        """Write a self-describing ``.npz`` container (arrays + JSON header)."""
        meta = {
            "version": self.version,
            "names": list(self._arrays),
            "shapes": {k: list(v.shape) for k, v in self._arrays.items()},
            "checksum": self.checksum(),
            "extra": extra or {},
        }
        buf = io.BytesIO()
        arrays = {f"p{i}": np.ascontiguousarray(v, dtype="<f8") for i, v in enumerate(self._arrays.values())}
        np.savez(buf, __meta__=np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8), **arrays)
        tmp = f"{path}.tmp"
        with open(tmp, "wb") as fh:
            fh.write(buf.getvalue())
        os.replace(tmp, path)

    @classmethod
    def load(cls, path, expected_shapes=None, version: str = FORMAT_VERSION):
        """Read a container written by :meth:`save`; returns ``(store, extra)``."""
        with np.load(path) as data:
            meta = json.loads(bytes(data["__meta__"]).decode())
            if meta.get("version") != version:
                raise ValueError(f"{path}: weight format {meta.get('version')!r}, expected {version!r}")
            arrays = OrderedDict((name, data[f"p{i}"].astype(float)) for i, name in enumerate(meta["names"]))
        store = cls(arrays, meta["version"])
        for name, shape in meta["shapes"].items():
            if tuple(shape) != store[name].shape:
                raise ValueError(f"{path}: {name} stored with shape {store[name].shape}, header says {shape}")
        if store.checksum() != meta["checksum"]:
            raise ValueError(f"{path}: checksum mismatch, file is corrupt")
        if expected_shapes is not None:
            got = store.shapes
            want = {k: tuple(v) for k, v in expected_shapes.items()}
            if got != want:
                diff = sorted(set(got.items()) ^ set(want.items()))
                raise ValueError(f"{path}: parameter shapes do not match the model: {diff[:4]}")
        return store, meta.get("extra", {})


def init_dense(store: ParamStore, name: str, fan_in: int, fan_out: int, rng) -> None:
    k = 1.0 / np.sqrt(fan_in)
    store.add(f"{name}.W", rng.uniform(-k, k, size=(fan_in, fan_out)))
    store.add(f"{name}.b", rng.uniform(-k, k, size=fan_out))


def init_mlp(store: ParamStore, name: str, in_dim: int, layer_sizes, rng) -> None:
    for i, out in enumerate(layer_sizes):
        init_dense(store, f"{name}.{i}", in_dim, out, rng)
        in_dim = out


def init_gru(store: ParamStore, name: str, in_dim: int, hidden: int, rng) -> None:
    k = 1.0 / np.sqrt(hidden)
    store.add(f"{name}.Wi", rng.uniform(-k, k, size=(in_dim, 3 * hidden)))
    store.add(f"{name}.Wh", rng.uniform(-k, k, size=(hidden, 3 * hidden)))
    store.add(f"{name}.bi", rng.uniform(-k, k, size=3 * hidden))
    store.add(f"{name}.bh", rng.uniform(-k, k, size=3 * hidden))


# -- layers -------------------------------------------------------------------


def dense(x, params, name) -> Tensor:
    return add(matmul(x, params[f"{name}.W"]), params[f"{name}.b"])


def mlp_apply(x, params, name, activations) -> Tensor:
    """Affine layers ``name.0, name.1, ...`` each followed by its activation.

    ``activations`` holds one entry per layer: ``"relu"``, ``"tanh"`` or
    ``None`` for a purely affine layer.
    """
    for i, act in enumerate(activations):
        if f"{name}.{i}.W" not in params:
            raise KeyError(f"layer {name}.{i} missing from params")
        x = dense(x, params, f"{name}.{i}")
        if act == "relu":
            x = relu(x)
        elif act == "tanh":
            x = tanh(x)
        elif act is not None:
            raise ValueError(f"unknown activation {act!r}")
    return x


def gru_step(x, h_prev, params, name) -> Tensor:
    """One GRU update; see the module docstring for the gate equations."""
    x, h_prev = _t(x), _t(h_prev)
    wi = params[f"{name}.Wi"]
    hidden = (wi.value if isinstance(wi, Tensor) else np.asarray(wi)).shape[1] // 3
    if h_prev.shape[-1] != hidden:
        raise ValueError(f"{name}: hidden size {h_prev.shape[-1]} != {hidden}")
    gi = add(matmul(x, wi), params[f"{name}.bi"])
    gh = add(matmul(h_prev, params[f"{name}.Wh"]), params[f"{name}.bh"])
    H = hidden
    r = sigmoid(add(gi[..., :H], gh[..., :H]))
    z = sigmoid(add(gi[..., H : 2 * H], gh[..., H : 2 * H]))
    n = tanh(add(gi[..., 2 * H :], mul(r, gh[..., 2 * H :])))
    return add(n, mul(z, sub(h_prev, n)))


# -- optimization -------------------------------------------------------------


def grad(loss_fn, store: ParamStore):
    """Evaluate ``loss_fn(params)`` and its exact gradient w.r.t. every parameter.

    Returns ``(loss_value, {name: gradient array})``.
    """
    leaves = store.leaves()
    loss = loss_fn(leaves)
    if not isinstance(loss, Tensor) or loss.value.size != 1:
        raise ValueError("loss_fn must return a scalar Tensor")
    backward(loss)
    grads = {k: (t.grad if t.grad is not None else np.zeros_like(t.value)) for k, t in leaves.items()}
    return float(loss.value), grads


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def adam_step(store: ParamStore, grads: dict, state: AdamState, lr: float):
    """Bias-corrected Adam update, no weight decay. Updates ``store`` in place."""
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient for parameter {name!r}")
        if g.shape != store[name].shape:
            raise ValueError(f"{name}: gradient shape {g.shape} != {store[name].shape}")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    for name, g in grads.items():
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(g)
            state.v[name] = np.zeros_like(g)
        v = state.v[name]
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        store[name][...] -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return store, state


def finite_diff_check(loss_fn, store: ParamStore, eps: float = 1e-5, max_coords=None, seed=0,
                      rel_floor: float = 1e-4) -> float:
    """Largest relative error between analytic and central-difference gradients.

    The error of a coordinate is ``|a - n| / max(|a|, |n|, floor)`` where
    ``floor = rel_floor * max|a|`` over all parameters: near-zero entries are
    judged against the gradient's overall scale, since cancellation in the
    difference quotient leaves them with absolute noise around
    ``1e-16 * |loss| / eps``. ``max_coords`` samples that many coordinates
    per parameter.
    """
    if not 1e-7 <= eps <= 1e-3:
        raise ValueError("eps must lie in [1e-7, 1e-3]")
    _, analytic = grad(loss_fn, store)
    scale = max((float(np.abs(g).max()) for g in analytic.values() if g.size), default=0.0)
    floor = max(rel_floor * scale, 1e-12)
    rng = np.random.default_rng(seed)
    worst = 0.0
    for name, arr in store.items():
        flat = arr.reshape(-1)
        idx = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            idx = rng.choice(flat.size, size=max_coords, replace=False)
        ga = analytic[name].reshape(-1)
        for i in idx:
            old = flat[i]
            flat[i] = old + eps
            up = float(loss_fn(store.leaves(requires_grad=False)).value)
            flat[i] = old - eps
            down = float(loss_fn(store.leaves(requires_grad=False)).value)
            flat[i] = old
            num = (up - down) / (2 * eps)
            err = abs(ga[i] - num) / max(abs(ga[i]), abs(num), floor)
            worst = max(worst, err)
    return worst
