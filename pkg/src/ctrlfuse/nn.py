"""Small layer library on top of the tensor engine.

Layers hold named parameter Tensors; Module.named_params() flattens the
tree into "path/name" -> Tensor, which is what the optimizer and the
checkpoint writer consume. Frozen layers keep requires_grad=False weights:
input gradients still flow through them, parameter gradients do not.
"""

from __future__ import annotations

import math

import numpy as np

from . import tensor as T
from .tensor import Tensor


class Module:
    def modules(self):
        for name, val in vars(self).items():
            if isinstance(val, Module):
                yield name, val
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        yield f"{name}.{i}", item

    def params(self):
        """Direct parameters of this module as (name, Tensor)."""
        for name, val in vars(self).items():
            if isinstance(val, Tensor):
                yield name, val

    def named_params(self, prefix=""):
        out = {}
        for name, p in self.params():
            out[prefix + name] = p
        for name, m in self.modules():
            out.update(m.named_params(prefix + name + "/"))
        return out

    def trainable_params(self):
        return {k: p for k, p in self.named_params().items() if p.requires_grad}

    def zero_grad(self):
        for p in self.named_params().values():
            p.grad = None

    def freeze(self):
        for p in self.named_params().values():
            p.requires_grad = False
        return self


def _uniform(rng, shape, fan_in, trainable):
    bound = 1.0 / math.sqrt(fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=trainable)


# Kaiming gain for the leaky_relu(0.2) that follows nearly every conv.
# The plain 1/sqrt(fan_in) bound shrinks activation variance by ~3x per
# conv, which through the encoder + decoder stack collapses the outputs
# to a constant; the variance-preserving bound keeps signal at depth.
_CONV_GAIN = math.sqrt(2.0 / (1.0 + 0.2 ** 2))


class Conv2d(Module):
    def __init__(self, c_in, c_out, k, rng, stride=1, padding=None, bias=True,
                 trainable=True):
        self.stride = stride
        self.padding = k // 2 if padding is None else padding
        fan_in = c_in * k * k
        bound = _CONV_GAIN * math.sqrt(3.0 / fan_in)
        self.w = Tensor(rng.uniform(-bound, bound, size=(c_out, c_in, k, k)),
                        requires_grad=trainable)
        self.b = _uniform(rng, (c_out,), fan_in, trainable) if bias else None

    def __call__(self, x):
        return T.conv2d(x, self.w, self.b, stride=self.stride, padding=self.padding)


class Linear(Module):
    def __init__(self, d_in, d_out, rng, bias=True, trainable=True):
        self.w = _uniform(rng, (d_in, d_out), d_in, trainable)
        self.b = _uniform(rng, (d_out,), d_in, trainable) if bias else None

    def __call__(self, x):
        y = x @ self.w
        if self.b is not None:
            y = y + self.b.broadcast_to(y.shape)
        return y


class AttentionLayer(Module):
    """Single-head attention with learned q/k/v/out projections.

    Queries may live in a different feature space than keys/values
    (d_q vs d_kv); the internal head dim equals d_q.
    """

    def __init__(self, d_q, d_kv, rng, trainable=True):
        self.wq = _uniform(rng, (d_q, d_q), d_q, trainable)
        self.wk = _uniform(rng, (d_kv, d_q), d_kv, trainable)
        self.wv = _uniform(rng, (d_kv, d_q), d_kv, trainable)
        self.wo = _uniform(rng, (d_q, d_q), d_q, trainable)

    def __call__(self, q, kv):
        att = T.attention(q @ self.wq, kv @ self.wk, kv @ self.wv)
        return att @ self.wo


def checksum(params: dict) -> float:
    """Order-independent fingerprint of a named-parameter dict; used to
    verify frozen components never move during training."""
    total = 0.0
    for name in sorted(params):
        a = params[name].data
        total += float(np.sum(a * a)) + float(np.sum(a)) * len(name)
    return total
