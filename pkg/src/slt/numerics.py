"""Deterministic numeric substrate.

Tensors are plain numpy float64 arrays (float32 only at checkpoint/manifest
boundaries). Randomness comes from counter-based Philox streams keyed by
(seed, derivation path), so data generation and initialization are
reproducible across platforms and independent of call order elsewhere.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from .errors import OracleError, UsageError

NEG_INF = float("-inf")


class Rng:
    """Deterministic random stream; `derive` yields independent child streams.

    Two Rng objects with the same (seed, path) produce identical draws.
    Instances are stateful and must not be shared between concurrent callers;
    derive one stream per worker/purpose instead.
    """

    def __init__(self, seed, _path=""):
        self.seed = int(seed)
        self.path = _path
        digest = hashlib.sha256(f"{self.seed}|{_path}".encode()).digest()
        key = int.from_bytes(digest[:16], "little")
        self._gen = np.random.Generator(np.random.Philox(key=key))

    def derive(self, *labels) -> "Rng":
        """Independent child stream named by the label tuple."""
        suffix = "/".join(str(x) for x in labels)
        return Rng(self.seed, _path=f"{self.path}/{suffix}")

    def normal(self, shape=()):
        return self._gen.standard_normal(shape, dtype=np.float64)

    def uniform(self, low, high, shape=()):
        return self._gen.uniform(low, high, shape)

    def integers(self, low, high, size=None):
        """Uniform integers in [low, high)."""
        return self._gen.integers(low, high, size=size)

    def random(self, size=None):
        return self._gen.random(size)

    def permutation(self, n):
        return self._gen.permutation(n)


def logsumexp(values):
    """log(sum(exp(values))) without overflow; -inf iff all inputs are -inf."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.size == 0:
        raise UsageError("logsumexp of an empty collection")
    m = arr.max()
    if m == NEG_INF:
        return NEG_INF
    return float(m + np.log(np.exp(arr - m).sum()))


def xavier_init(shape, rng: Rng, distribution="uniform"):
    """Xavier/Glorot init for a 2-D (fan_in, fan_out) weight.

    Uniform variant uses bound sqrt(6/(fan_in+fan_out)); the gaussian variant
    uses std sqrt(2/(fan_in+fan_out)). Biases are zero-initialized elsewhere,
    never here.
    """
    shape = tuple(int(s) for s in shape)
    if len(shape) != 2:
        raise UsageError(f"xavier_init needs a 2-D shape, got {shape}")
    fan_in, fan_out = shape
    if distribution == "uniform":
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        return rng.uniform(-bound, bound, shape)
    if distribution == "normal":
        std = np.sqrt(2.0 / (fan_in + fan_out))
        return rng.normal(shape) * std
    raise UsageError(f"unknown xavier distribution {distribution!r}")


@dataclass
class AdamState:
    """First/second moment estimates per named parameter plus the step count."""

    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0

    @classmethod
    def zeros_like(cls, params):
        return cls(
            m={k: np.zeros_like(p) for k, p in params.items()},
            v={k: np.zeros_like(p) for k, p in params.items()},
            t=0,
        )


def adam_step(params, grads, state, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """One bias-corrected Adam update over a dict of named tensors.

    Returns (new params, new state); inputs are left untouched.
    """
    if not 0.0 <= beta1 < 1.0 or not 0.0 <= beta2 < 1.0:
        raise UsageError("adam betas must lie in [0, 1)")
    if lr <= 0.0:
        raise UsageError("adam lr must be positive")
    if state is None:
        state = AdamState.zeros_like(params)
    if set(params) != set(grads) or set(params) != set(state.m):
        raise UsageError("adam_step: params/grads/state key sets differ")
    t = state.t + 1
    new_params, new_m, new_v = {}, {}, {}
    for name in params:
        p, g = params[name], grads[name]
        if p.shape != g.shape or p.shape != state.m[name].shape:
            raise UsageError(f"adam_step: shape mismatch for {name!r}")
        m = beta1 * state.m[name] + (1.0 - beta1) * g
        v = beta2 * state.v[name] + (1.0 - beta2) * g * g
        m_hat = m / (1.0 - beta1**t)
        v_hat = v / (1.0 - beta2**t)
        new_params[name] = p - lr * m_hat / (np.sqrt(v_hat) + eps)
        new_m[name], new_v[name] = m, v
    return new_params, AdamState(m=new_m, v=new_v, t=t)


def global_norm(grads):
    return float(np.sqrt(sum(float((g * g).sum()) for g in grads.values())))


def clip_global_norm(grads, max_norm):
    """Scale all gradients so the global L2 norm is at most max_norm."""
    norm = global_norm(grads)
    if max_norm <= 0 or norm <= max_norm:
        return grads, norm
    factor = max_norm / norm
    return {k: g * factor for k, g in grads.items()}, norm


def finite_diff_grad(f, x, h=1e-5):
    """Central-difference gradient of scalar f at x, one coordinate at a time."""
    if h <= 0:
        raise UsageError("finite_diff_grad: h must be positive")
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = float(f(x))
        flat[i] = orig - h
        fm = float(f(x))
        flat[i] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise OracleError(f"finite_diff_grad: f non-finite at coordinate {i}")
        gflat[i] = (fp - fm) / (2.0 * h)
    return grad


def max_rel_error(a, b, floor=1e-3):
    """max |a-b| / max(|a|, |b|, floor), elementwise over matching arrays."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise UsageError("max_rel_error: shape mismatch")
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float(np.max(np.abs(a - b) / denom)) if a.size else 0.0
