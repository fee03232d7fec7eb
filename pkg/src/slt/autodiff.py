"""Minimal reverse-mode autodiff over float64 numpy arrays.

Just the ops the translation model needs, built eagerly into a graph of Var
nodes; backward(root) accumulates .grad on every tracked node. Gradients of
the CTC dynamic programs are NOT taken through this tape: ctc.py supplies
them analytically and model.py splices them in via custom_op.
"""

from __future__ import annotations

import numpy as np


class Var:
    """One node: a float64 array value plus the closure that backpropagates."""

    __slots__ = ("value", "grad", "parents", "bwd", "tracked")

    def __init__(self, value, parents=(), bwd=None, tracked=None):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = None
        self.parents = tuple(p for p in parents if p.tracked)
        self.bwd = bwd
        if tracked is None:
            tracked = bool(self.parents)
        self.tracked = tracked

    @property
    def shape(self):
        return self.value.shape


def leaf(value):
    """Tracked leaf (a trainable parameter)."""
    return Var(value, tracked=True)


def const(value):
    """Untracked constant (inputs, masks, positional encodings)."""
    return Var(value, tracked=False)


def _as_var(x):
    return x if isinstance(x, Var) else const(x)


def ensure_grad(v: Var):
    if v.grad is None:
        v.grad = np.zeros_like(v.value)
    return v.grad


def backward(root: Var):
    """Accumulate gradients of the scalar root into every tracked node."""
    assert root.value.shape == (), "backward expects a scalar root"
    topo, seen, stack = [], set(), [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            stack.append((p, False))
    root.grad = np.ones(())
    for node in reversed(topo):
        if node.bwd is not None and node.grad is not None:
            node.bwd(node.grad)


def _unbroadcast(grad, shape):
    """Sum-reduce grad down to `shape` after numpy broadcasting."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def add(a, b):
    a, b = _as_var(a), _as_var(b)

    def bwd(g):
        if a.tracked:
            ensure_grad(a)[...] += _unbroadcast(g, a.value.shape)
        if b.tracked:
            ensure_grad(b)[...] += _unbroadcast(g, b.value.shape)

    return Var(a.value + b.value, (a, b), bwd)


def mul(a, b):
    a, b = _as_var(a), _as_var(b)

    def bwd(g):
        if a.tracked:
            ensure_grad(a)[...] += _unbroadcast(g * b.value, a.value.shape)
        if b.tracked:
            ensure_grad(b)[...] += _unbroadcast(g * a.value, b.value.shape)

    return Var(a.value * b.value, (a, b), bwd)


def scale(a, c):
    """a * c for a plain python/numpy scalar c."""
    a = _as_var(a)
    c = float(c)

    def bwd(g):
        if a.tracked:
            ensure_grad(a)[...] += g * c

    return Var(a.value * c, (a,), bwd)


def matmul(a, b):
    """Batched matmul via numpy @; either side may have fewer batch dims."""
    a, b = _as_var(a), _as_var(b)

    def bwd(g):
        if a.tracked:
            ga = g @ np.swapaxes(b.value, -1, -2)
            ensure_grad(a)[...] += _unbroadcast(ga, a.value.shape)
        if b.tracked:
            gb = np.swapaxes(a.value, -1, -2) @ g
            ensure_grad(b)[...] += _unbroadcast(gb, b.value.shape)

    return Var(a.value @ b.value, (a, b), bwd)


def transpose(a, axes):
    a = _as_var(a)
    inverse = tuple(np.argsort(axes))

    def bwd(g):
        if a.tracked:
            ensure_grad(a)[...] += g.transpose(inverse)

    return Var(a.value.transpose(axes), (a,), bwd)


def reshape(a, shape):
    a = _as_var(a)
    old = a.value.shape

    def bwd(g):
        if a.tracked:
            ensure_grad(a)[...] += g.reshape(old)

    return Var(a.value.reshape(shape), (a,), bwd)


def relu(a):
    a = _as_var(a)
    mask = a.value > 0

    def bwd(g):
        if a.tracked:
            ensure_grad(a)[...] += g * mask

    return Var(a.value * mask, (a,), bwd)


def layer_norm(x, gain, bias, eps=1e-6):
    """LayerNorm over the last axis."""
    x, gain, bias = _as_var(x), _as_var(gain), _as_var(bias)
    mu = x.value.mean(axis=-1, keepdims=True)
    var = x.value.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.value - mu) * inv

    def bwd(g):
        if gain.tracked:
            ensure_grad(gain)[...] += (g * xhat).sum(axis=tuple(range(g.ndim - 1)))
        if bias.tracked:
            ensure_grad(bias)[...] += g.sum(axis=tuple(range(g.ndim - 1)))
        if x.tracked:
            gy = g * gain.value
            m1 = gy.mean(axis=-1, keepdims=True)
            m2 = (gy * xhat).mean(axis=-1, keepdims=True)
            ensure_grad(x)[...] += inv * (gy - m1 - xhat * m2)

    return Var(xhat * gain.value + bias.value, (x, gain, bias), bwd)


def softmax(x):
    """Softmax over the last axis (attention weights)."""
    x = _as_var(x)
    z = x.value - x.value.max(axis=-1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=-1, keepdims=True)

    def bwd(g):
        if x.tracked:
            dot = (g * y).sum(axis=-1, keepdims=True)
            ensure_grad(x)[...] += y * (g - dot)

    return Var(y, (x,), bwd)


def log_softmax(x):
    """Log-softmax over the last axis (emission heads, decoder output)."""
    x = _as_var(x)
    z = x.value - x.value.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    y = z - lse

    def bwd(g):
        if x.tracked:
            gsum = g.sum(axis=-1, keepdims=True)
            ensure_grad(x)[...] += g - np.exp(y) * gsum

    return Var(y, (x,), bwd)


def embedding(table, ids):
    """Row gather table[ids]; backward scatter-adds."""
    table = _as_var(table)
    ids = np.asarray(ids)

    def bwd(g):
        if table.tracked:
            np.add.at(ensure_grad(table), ids, g)

    return Var(table.value[ids], (table,), bwd)


def smoothed_nll(log_probs, targets, mask, smoothing):
    """Label-smoothed NLL, averaged over positions where mask is true.

    log_probs: (..., V) log distributions; targets: integer array matching the
    leading shape; mask: same leading shape. Smoothing mass is spread
    uniformly over the whole vocabulary.
    """
    log_probs = _as_var(log_probs)
    targets = np.asarray(targets)
    mask = np.asarray(mask, dtype=np.float64)
    vocab = log_probs.value.shape[-1]
    n = mask.sum()
    assert n > 0, "smoothed_nll over an empty mask"
    picked = np.take_along_axis(log_probs.value, targets[..., None], axis=-1)[..., 0]
    nll = -(1.0 - smoothing) * picked - smoothing * log_probs.value.mean(axis=-1)
    value = (nll * mask).sum() / n

    def bwd(g):
        if log_probs.tracked:
            gl = ensure_grad(log_probs)
            coeff = g * mask / n
            gl[...] += (-smoothing / vocab) * coeff[..., None]
            np.add.at(
                gl.reshape(-1, vocab),
                (np.arange(targets.size), targets.reshape(-1)),
                -(1.0 - smoothing) * coeff.reshape(-1),
            )

    return Var(np.float64(value), (log_probs,), bwd)


def custom_op(value, parents, bwd):
    """Splice an externally computed (value, backward) pair into the graph."""
    return Var(value, parents, bwd)
