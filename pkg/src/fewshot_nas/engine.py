"""Minimal reverse-mode autodiff over numpy arrays.

Ops executed inside ``with Tape() as tape:`` are recorded when any input
requires a gradient; ``backward(tape, loss)`` sweeps the records once in
reverse. Outside a tape, ops just compute values (inference).

Training runs in float32, gradient checks in float64: every op keeps the
dtype of its inputs.
"""

from __future__ import annotations

import contextlib
import math
import threading
from typing import Callable, Mapping

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

BN_EPS = 1e-5

_local = threading.local()


class EngineError(RuntimeError):
    pass


class ShapeError(EngineError, ValueError):
    pass


class TapeError(EngineError):
    pass


class Tensor:
    __slots__ = ("data", "requires_grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data)
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self):
        tag = f" {self.name}" if self.name else ""
        return f"Tensor{tag}(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"


class Tape:
    """Records primitive ops in execution (hence topological) order."""

    def __init__(self):
        self.records: list[tuple[Tensor, tuple[Tensor, ...], Callable]] = []
        self.used = False

    def __enter__(self) -> "Tape":
        stack = getattr(_local, "tapes", None)
        if stack is None:
            stack = _local.tapes = []
        stack.append(self)
        return self

    def __exit__(self, *exc):
        _local.tapes.pop()
        return False


def _active_tape() -> Tape | None:
    stack = getattr(_local, "tapes", None)
    return stack[-1] if stack else None


def _result(data: np.ndarray, inputs: tuple[Tensor, ...], backward_fn: Callable) -> Tensor:
    needs = any(t.requires_grad for t in inputs)
    out = Tensor(data, requires_grad=needs)
    tape = _active_tape()
    if needs and tape is not None:
        if tape.used:
            raise TapeError("tape already swept; start a new Tape for another forward pass")
        tape.records.append((out, inputs, backward_fn))
    return out


def backward(tape: Tape, loss: Tensor) -> dict[Tensor, np.ndarray]:
    """Reverse sweep; returns gradients for every leaf tensor that requires one."""
    if tape.used:
        raise TapeError("backward called twice on the same tape")
    if loss.data.size != 1:
        raise EngineError(f"loss must be a scalar, got shape {loss.shape}")
    tape.used = True
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    produced = {id(out) for out, _, _ in tape.records}
    leaves: dict[int, Tensor] = {}
    for out, inputs, fn in reversed(tape.records):
        g = grads.pop(id(out), None)
        if g is None:
            continue
        for t, gi in zip(inputs, fn(g)):
            if gi is None or not t.requires_grad:
                continue
            if id(t) not in produced:
                leaves[id(t)] = t
            prev = grads.get(id(t))
            grads[id(t)] = gi if prev is None else prev + gi
    return {t: grads[i] for i, t in leaves.items() if i in grads}


# -- ReLU sign-pattern capture ------------------------------------------------

@contextlib.contextmanager
def record_relu_patterns():
    """Collect the boolean ``x > 0`` mask of every relu call in this block."""
    prev = getattr(_local, "relu_masks", None)
    masks: list[np.ndarray] = []
    _local.relu_masks = masks
    try:
        yield masks
    finally:
        _local.relu_masks = prev


# -- primitives ---------------------------------------------------------------

def _pad(x: np.ndarray, p: int) -> np.ndarray:
    if p == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))


def conv2d(x: Tensor, weight: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation of an NCHW input with an (O, C, s, s) weight."""
    if x.data.ndim != 4 or weight.data.ndim != 4:
        raise ShapeError(f"conv2d expects 4-d input and weight, got {x.shape} and {weight.shape}")
    n, c, h, w = x.shape
    o, cw, s, s2 = weight.shape
    if cw != c or s != s2:
        raise ShapeError(f"conv2d shape mismatch: input {x.shape}, weight {weight.shape}")
    if s % 2 == 0:
        raise ShapeError(f"conv2d kernel size must be odd, got {s}")
    ho = (h + 2 * padding - s) // stride + 1
    wo = (w + 2 * padding - s) // stride + 1
    if ho < 1 or wo < 1:
        raise ShapeError(f"conv2d output would be empty for input {x.shape}, kernel {s}")
    W = weight.data
    if s == 1 and padding == 0:
        xs = x.data[:, :, ::stride, ::stride]
        out = np.einsum("nchw,oc->nohw", xs, W[:, :, 0, 0], optimize=True)

        def bwd(g):
            gw = np.einsum("nohw,nchw->oc", g, xs, optimize=True)[:, :, None, None]
            gxs = np.einsum("nohw,oc->nchw", g, W[:, :, 0, 0], optimize=True)
            if stride == 1:
                gx = gxs
            else:
                gx = np.zeros_like(x.data)
                gx[:, :, ::stride, ::stride] = gxs
            return gx, gw

        return _result(np.ascontiguousarray(out), (x, weight), bwd)

    xp = _pad(x.data, padding)
    win = sliding_window_view(xp, (s, s), axis=(2, 3))[:, :, ::stride, ::stride][:, :, :ho, :wo]
    out = np.tensordot(win, W, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)

    def bwd(g):
        gw = np.tensordot(g, win, axes=([0, 2, 3], [0, 2, 3]))
        gxp = np.zeros_like(xp)
        for i in range(s):
            for j in range(s):
                contrib = np.tensordot(g, W[:, :, i, j], axes=([1], [0])).transpose(0, 3, 1, 2)
                gxp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += contrib
        gx = gxp[:, :, padding:padding + h, padding:padding + w] if padding else gxp
        return gx, gw

    return _result(np.ascontiguousarray(out), (x, weight), bwd)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    masks = getattr(_local, "relu_masks", None)
    if masks is not None:
        masks.append(mask)
    out = np.where(mask, x.data, 0).astype(x.dtype, copy=False)
    return _result(out, (x,), lambda g: (g * mask,))


def batchnorm(x: Tensor, gamma: Tensor, beta: Tensor, training: bool = True, eps: float = BN_EPS) -> Tensor:
    """Per-channel normalization with current-batch statistics.

    No running statistics are kept; evaluation also normalizes with the
    statistics of the batch it is given.
    """
    if x.data.ndim != 4:
        raise ShapeError(f"batchnorm expects NCHW input, got {x.shape}")
    n, c = x.shape[:2]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(f"batchnorm affine shapes {gamma.shape}/{beta.shape} do not match {c} channels")
    if training and n < 2:
        raise EngineError("batchnorm in training mode needs a batch of at least 2")
    axes = (0, 2, 3)
    m = x.data.size // c
    mean = x.data.mean(axis=axes, keepdims=True)
    xc = x.data - mean
    var = (xc * xc).mean(axis=axes, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    G = gamma.data.reshape(1, c, 1, 1)
    out = xhat * G + beta.data.reshape(1, c, 1, 1)

    def bwd(g):
        dgamma = (g * xhat).sum(axis=axes)
        dbeta = g.sum(axis=axes)
        dxhat = g * G
        dx = (inv / m) * (m * dxhat - dxhat.sum(axis=axes, keepdims=True)
                          - xhat * (dxhat * xhat).sum(axis=axes, keepdims=True))
        return dx, dgamma, dbeta

    return _result(out.astype(x.dtype, copy=False), (x, gamma, beta), bwd)


def avgpool(x: Tensor, kernel: int, stride: int = 1, padding: int = 0) -> Tensor:
    """Average pooling; padded cells are excluded from the divisor."""
    n, c, h, w = x.shape
    ho = (h + 2 * padding - kernel) // stride + 1
    wo = (w + 2 * padding - kernel) // stride + 1
    xp = _pad(x.data, padding)
    ones = _pad(np.ones((1, 1, h, w), dtype=x.dtype), padding)
    win = sliding_window_view(xp, (kernel, kernel), axis=(2, 3))[:, :, ::stride, ::stride][:, :, :ho, :wo]
    cnt_win = sliding_window_view(ones, (kernel, kernel), axis=(2, 3))[:, :, ::stride, ::stride][:, :, :ho, :wo]
    counts = cnt_win.sum(axis=(4, 5))
    out = win.sum(axis=(4, 5)) / counts

    def bwd(g):
        gs = g / counts
        gxp = np.zeros_like(xp)
        for i in range(kernel):
            for j in range(kernel):
                gxp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += gs
        gx = gxp[:, :, padding:padding + h, padding:padding + w] if padding else gxp
        return (gx,)

    return _result(out.astype(x.dtype, copy=False), (x,), bwd)


def global_avgpool(x: Tensor) -> Tensor:
    n, c, h, w = x.shape
    out = x.data.mean(axis=(2, 3))
    scale = 1.0 / (h * w)
    return _result(out, (x,), lambda g: (np.broadcast_to(g[:, :, None, None] * scale, x.shape).copy(),))


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    if x.data.ndim != 2 or weight.data.ndim != 2 or x.shape[1] != weight.shape[1]:
        raise ShapeError(f"linear shape mismatch: input {x.shape}, weight {weight.shape}")
    out = x.data @ weight.data.T
    if bias is not None:
        out = out + bias.data
        return _result(out, (x, weight, bias), lambda g: (g @ weight.data, g.T @ x.data, g.sum(axis=0)))
    return _result(out, (x, weight), lambda g: (g @ weight.data, g.T @ x.data))


def add(*xs: Tensor) -> Tensor:
    if not xs:
        raise EngineError("add needs at least one tensor")
    shape = xs[0].shape
    for t in xs[1:]:
        if t.shape != shape:
            raise ShapeError(f"add shape mismatch: {shape} vs {t.shape}")
    out = xs[0].data.copy()
    for t in xs[1:]:
        out += t.data
    return _result(out, tuple(xs), lambda g: tuple(g for _ in xs))


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def softmax_cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean cross-entropy over the batch."""
    labels = np.asarray(labels)
    n, c = logits.shape
    if labels.shape != (n,):
        raise ShapeError(f"labels shape {labels.shape} does not match batch {n}")
    if labels.size and (labels.min() < 0 or labels.max() >= c):
        raise ValueError(f"label out of range [0, {c})")
    lsm = log_softmax(logits.data)
    loss = -lsm[np.arange(n), labels].mean()

    def bwd(g):
        p = np.exp(lsm)
        p[np.arange(n), labels] -= 1.0
        return (p * (g / n),)

    return _result(np.asarray(loss, dtype=logits.dtype), (logits,), bwd)


# -- optimization -------------------------------------------------------------

def sgd_step(params: Mapping[str, Tensor], grads: Mapping[str, np.ndarray], lr: float,
             momentum: float = 0.0, weight_decay: float = 0.0,
             state: dict[str, np.ndarray] | None = None) -> None:
    """In-place momentum SGD with L2 weight decay folded into the gradient.

    Only parameters present in ``grads`` are touched.
    """
    for name, g in grads.items():
        p = params[name]
        if g.shape != p.shape:
            raise ShapeError(f"gradient shape {g.shape} does not match parameter {name} {p.shape}")
        d = g + weight_decay * p.data if weight_decay else g
        if momentum:
            if state is None:
                raise EngineError("momentum needs a state dict for its buffers")
            buf = state.get(name)
            buf = d.copy() if buf is None else momentum * buf + d
            state[name] = buf
            d = buf
        p.data -= (lr * d).astype(p.dtype, copy=False)


def cosine_lr(step: int, total_steps: int, lr0: float) -> float:
    if total_steps <= 0:
        raise ValueError("total_steps must be positive")
    if not 0 <= step <= total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps}]")
    return lr0 * 0.5 * (1.0 + math.cos(math.pi * step / total_steps))

