"""Dense float64 tensors with reverse-mode automatic differentiation.

Everything downstream (encoders, attention, losses) is built from the
primitives here. The graph is held implicitly: every op output keeps
references to its parents plus a closure that routes the incoming gradient
back to them, so construction order is already a topological order.
"""

from __future__ import annotations

import math

import numpy as np


class ShapeError(ValueError):
    """Operand shapes are incompatible for the requested operation."""


class ContractError(RuntimeError):
    """An operation was called outside its contract (e.g. non-scalar backward)."""


# Set True (tests do) to assert no forward op emits NaN/Inf on finite inputs.
CHECK_FINITE = False


def _as_array(x):
    return np.asarray(x, dtype=np.float64)


def _unbroadcast(grad, shape):
    """Sum out broadcast axes so grad matches the original operand shape."""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and grad.shape[ax] != 1:
            grad = grad.sum(axis=ax, keepdims=True)
    return grad


def _accum(t, g):
    if t.requires_grad:
        t.grad = g if t.grad is None else t.grad + g


def _make(data, parents, backward):
    if CHECK_FINITE and not np.all(np.isfinite(data)):
        raise ContractError("forward op produced non-finite values")
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
    else:
        out.requires_grad = False
        out._parents = ()
        out._backward = None
    return out


def _broadcast_shape(a, b):
    try:
        return np.broadcast_shapes(a, b)
    except ValueError:
        raise ShapeError(f"shapes {a} and {b} do not broadcast") from None


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False):
        self.data = _as_array(data)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # ---- elementwise algebra -------------------------------------------

    def __add__(self, other):
        if not isinstance(other, Tensor):
            data = self.data + other

            def bwd(g, a=self):
                _accum(a, g)

            return _make(data, (self,), bwd)
        _broadcast_shape(self.shape, other.shape)
        data = self.data + other.data

        def bwd(g, a=self, b=other):
            _accum(a, _unbroadcast(g, a.shape))
            _accum(b, _unbroadcast(g, b.shape))

        return _make(data, (self, other), bwd)

    __radd__ = __add__

    def __neg__(self):
        def bwd(g, a=self):
            _accum(a, -g)

        return _make(-self.data, (self,), bwd)

    def __sub__(self, other):
        if not isinstance(other, Tensor):
            return self + (-other)
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if not isinstance(other, Tensor):
            c = float(other)
            data = self.data * c

            def bwd(g, a=self):
                _accum(a, g * c)

            return _make(data, (self,), bwd)
        _broadcast_shape(self.shape, other.shape)
        data = self.data * other.data

        def bwd(g, a=self, b=other):
            _accum(a, _unbroadcast(g * b.data, a.shape))
            _accum(b, _unbroadcast(g * a.data, b.shape))

        return _make(data, (self, other), bwd)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if not isinstance(other, Tensor):
            return self * (1.0 / float(other))
        _broadcast_shape(self.shape, other.shape)
        data = self.data / other.data

        def bwd(g, a=self, b=other):
            _accum(a, _unbroadcast(g / b.data, a.shape))
            _accum(b, _unbroadcast(-g * a.data / (b.data * b.data), b.shape))

        return _make(data, (self, other), bwd)

    def __pow__(self, p):
        p = float(p)
        data = self.data**p

        def bwd(g, a=self):
            _accum(a, g * p * a.data ** (p - 1.0))

        return _make(data, (self,), bwd)

    def abs(self):
        # subgradient at 0 is 0 (sign(0) = 0)
        data = np.abs(self.data)

        def bwd(g, a=self):
            _accum(a, g * np.sign(a.data))

        return _make(data, (self,), bwd)

    def leaky_relu(self, slope=0.2):
        mask = self.data >= 0
        data = np.where(mask, self.data, slope * self.data)

        def bwd(g, a=self, mask=mask):
            _accum(a, g * np.where(mask, 1.0, slope))

        return _make(data, (self,), bwd)

    def sigmoid(self):
        data = 1.0 / (1.0 + np.exp(-self.data))

        def bwd(g, a=self, d=data):
            _accum(a, g * d * (1.0 - d))

        return _make(data, (self,), bwd)

    def tanh(self):
        data = np.tanh(self.data)

        def bwd(g, a=self, d=data):
            _accum(a, g * (1.0 - d * d))

        return _make(data, (self,), bwd)

    def exp(self):
        data = np.exp(self.data)

        def bwd(g, a=self, d=data):
            _accum(a, g * d)

        return _make(data, (self,), bwd)

    def log(self):
        data = np.log(self.data)

        def bwd(g, a=self):
            _accum(a, g / a.data)

        return _make(data, (self,), bwd)

    def sqrt(self):
        data = np.sqrt(self.data)

        def bwd(g, a=self, d=data):
            _accum(a, g * 0.5 / d)

        return _make(data, (self,), bwd)

    def clamp(self, lo, hi):
        data = np.clip(self.data, lo, hi)
        mask = (self.data > lo) & (self.data < hi)

        def bwd(g, a=self, mask=mask):
            _accum(a, g * mask)

        return _make(data, (self,), bwd)

    # ---- reductions ----------------------------------------------------

    def sum(self, axis=None, keepdims=False):
        data = self.data.sum(axis=axis, keepdims=keepdims)

        def bwd(g, a=self):
            gg = g
            if axis is not None and not keepdims:
                gg = np.expand_dims(gg, axis)
            _accum(a, np.broadcast_to(gg, a.shape).copy())

        return _make(data, (self,), bwd)

    def mean(self, axis=None, keepdims=False):
        n = self.size if axis is None else self.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    # ---- linear algebra / shape ----------------------------------------

    def matmul(self, other):
        if self.ndim != 2 or other.ndim != 2:
            raise ShapeError("matmul expects 2-D operands")
        if self.shape[1] != other.shape[0]:
            raise ShapeError(
                f"matmul inner dims differ: {self.shape} vs {other.shape}"
            )
        data = self.data @ other.data

        def bwd(g, a=self, b=other):
            _accum(a, g @ b.data.T)
            _accum(b, a.data.T @ g)

        return _make(data, (self, other), bwd)

    __matmul__ = matmul

    def t(self):
        if self.ndim != 2:
            raise ShapeError("t() expects a 2-D tensor")

        def bwd(g, a=self):
            _accum(a, g.T)

        return _make(self.data.T.copy(), (self,), bwd)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        data = self.data.reshape(shape)

        def bwd(g, a=self):
            _accum(a, g.reshape(a.shape))

        return _make(data, (self,), bwd)

    def broadcast_to(self, shape):
        _broadcast_shape(self.shape, shape)
        data = np.broadcast_to(self.data, shape).copy()

        def bwd(g, a=self):
            _accum(a, _unbroadcast(g, a.shape))

        return _make(data, (self,), bwd)

    def __getitem__(self, idx):
        data = self.data[idx]
        if np.isscalar(data):
            data = np.asarray(data)

        def bwd(g, a=self, idx=idx):
            full = np.zeros_like(a.data)
            np.add.at(full, idx, g)
            _accum(a, full)

        return _make(data.copy(), (self,), bwd)

    # ---- backward ------------------------------------------------------

    def backward(self):
        if self.size != 1:
            raise ContractError("backward requires a scalar loss")
        topo = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)


# ---- module-level ops -----------------------------------------------------


def maximum(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise max; on ties the gradient routes to the first operand."""
    _broadcast_shape(a.shape, b.shape)
    mask = a.data >= b.data
    data = np.where(mask, a.data, b.data)

    def bwd(g, a=a, b=b, mask=mask):
        _accum(a, _unbroadcast(g * mask, a.shape))
        _accum(b, _unbroadcast(g * ~mask, b.shape))

    return _make(data, (a, b), bwd)


def concat(tensors, axis=0):
    tensors = list(tensors)
    ref = list(tensors[0].shape)
    for t in tensors[1:]:
        s = list(t.shape)
        if len(s) != len(ref) or any(
            i != axis and s[i] != ref[i] for i in range(len(s))
        ):
            raise ShapeError("concat operands differ off the concat axis")
    data = np.concatenate([t.data for t in tensors], axis=axis)
    splits = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def bwd(g, tensors=tensors, splits=splits):
        for t, gi in zip(tensors, np.split(g, splits, axis=axis)):
            _accum(t, gi)

    return _make(data, tuple(tensors), bwd)


def _pad2d(x: Tensor, ph: int, pw: int, mode: str) -> Tensor:
    """Pad the two trailing spatial axes. mode 'zero' pads both sides,
    mode 'edge' replicates and pads bottom/right only (pooling remainder)."""
    if ph == 0 and pw == 0:
        return x
    nd = x.ndim
    if mode == "zero":
        width = [(0, 0)] * (nd - 2) + [(ph, ph), (pw, pw)]
        data = np.pad(x.data, width)

        def bwd(g, a=x):
            sl = (Ellipsis, slice(ph, g.shape[-2] - ph), slice(pw, g.shape[-1] - pw))
            _accum(a, g[sl].copy())

        return _make(data, (x,), bwd)
    if mode == "edge":
        width = [(0, 0)] * (nd - 2) + [(0, ph), (0, pw)]
        data = np.pad(x.data, width, mode="edge")
        H, W = x.shape[-2], x.shape[-1]

        def bwd(g, a=x):
            gg = g.copy()
            if ph:
                gg[..., H - 1, :] += gg[..., H:, :].sum(axis=-2)
            gg = gg[..., :H, :]
            if pw:
                gg[..., :, W - 1] += gg[..., :, W:].sum(axis=-1)
            _accum(a, gg[..., :, :W].copy())

        return _make(data, (x,), bwd)
    raise ValueError(f"unknown pad mode {mode!r}")


def conv2d(x: Tensor, w: Tensor, bias: Tensor | None = None, stride: int = 1,
           padding: int | None = None) -> Tensor:
    """Cross-correlation of a C_in x H x W map with C_out x C_in x k x k weights.

    Default padding k//2 preserves the spatial size at stride 1.
    """
    if x.ndim != 3 or w.ndim != 4:
        raise ShapeError("conv2d expects x (C,H,W) and w (Co,Ci,k,k)")
    co, ci, k, k2 = w.shape
    if k != k2 or k % 2 == 0:
        raise ShapeError("conv2d kernel must be square with odd size")
    if x.shape[0] != ci:
        raise ShapeError(f"conv2d channel mismatch: x has {x.shape[0]}, w wants {ci}")
    if padding is None:
        padding = k // 2

    if k == 1 and stride == 1 and padding == 0:
        # 1x1 conv is a channel-mixing matmul; skip the im2col machinery
        _, h, w_ = x.shape
        cols = x.data.reshape(ci, h * w_)
        out = (w.data.reshape(co, ci) @ cols).reshape(co, h, w_)
        if bias is not None:
            out = out + bias.data.reshape(co, 1, 1)
        parents = (x, w) if bias is None else (x, w, bias)

        def bwd1(g, x=x, w=w, bias=bias, cols=cols):
            gm = g.reshape(co, -1)
            if w.requires_grad:
                _accum(w, (gm @ cols.T).reshape(w.shape))
            if bias is not None and bias.requires_grad:
                _accum(bias, g.sum(axis=(1, 2)))
            if x.requires_grad:
                _accum(x, (w.data.reshape(co, ci).T @ gm).reshape(x.shape))

        return _make(out, parents, bwd1)

    xd = np.pad(x.data, ((0, 0), (padding, padding), (padding, padding))) \
        if padding else x.data
    _, hp, wp = xd.shape
    ho = (hp - k) // stride + 1
    wo = (wp - k) // stride + 1
    if ho <= 0 or wo <= 0:
        raise ShapeError("conv2d input smaller than kernel")
    win = np.lib.stride_tricks.sliding_window_view(xd, (k, k), axis=(1, 2))
    win = win[:, ::stride, ::stride]  # (Ci, Ho, Wo, k, k)
    cols = win.transpose(0, 3, 4, 1, 2).reshape(ci * k * k, ho * wo)
    out = (w.data.reshape(co, -1) @ cols).reshape(co, ho, wo)
    if bias is not None:
        out = out + bias.data.reshape(co, 1, 1)

    parents = (x, w) if bias is None else (x, w, bias)

    def bwd(g, x=x, w=w, bias=bias, cols=cols):
        gm = g.reshape(co, -1)
        if w.requires_grad:
            _accum(w, (gm @ cols.T).reshape(w.shape))
        if bias is not None and bias.requires_grad:
            _accum(bias, g.sum(axis=(1, 2)))
        if x.requires_grad:
            dcols = (w.data.reshape(co, -1).T @ gm).reshape(ci, k, k, ho, wo)
            dx = np.zeros((ci, hp, wp))
            for i in range(k):
                for j in range(k):
                    dx[:, i:i + stride * ho:stride, j:j + stride * wo:stride] += dcols[:, i, j]
            if padding:
                dx = dx[:, padding:hp - padding, padding:wp - padding]
            _accum(x, np.ascontiguousarray(dx))

    return _make(np.ascontiguousarray(out), parents, bwd)


def avg_pool2d(x: Tensor, window) -> Tensor:
    """Mean over non-overlapping windows; non-divisible extents are padded
    by edge replication first. window may be an int or an (wh, ww) pair."""
    if x.ndim != 3:
        raise ShapeError("avg_pool2d expects (C,H,W)")
    wh, ww = (window, window) if isinstance(window, int) else window
    c, h, w = x.shape
    ph = (-h) % wh
    pw = (-w) % ww
    xp = _pad2d(x, ph, pw, "edge")
    hp, wp = h + ph, w + pw
    ho, wo = hp // wh, wp // ww
    data = xp.data.reshape(c, ho, wh, wo, ww).mean(axis=(2, 4))

    def bwd(g, xp=xp):
        gg = g[:, :, None, :, None] / (wh * ww)
        _accum(xp, np.broadcast_to(gg, (c, ho, wh, wo, ww)).reshape(c, hp, wp).copy())

    return _make(data, (xp,), bwd)


def downsample_avg2(x: Tensor) -> Tensor:
    return avg_pool2d(x, 2)


def upsample_nearest2(x: Tensor) -> Tensor:
    if x.ndim != 3:
        raise ShapeError("upsample_nearest2 expects (C,H,W)")
    c, h, w = x.shape
    data = np.repeat(np.repeat(x.data, 2, axis=1), 2, axis=2)

    def bwd(g, a=x):
        _accum(a, g.reshape(c, h, 2, w, 2).sum(axis=(2, 4)))

    return _make(data, (x,), bwd)


def flatten_spatial(x: Tensor) -> Tensor:
    """(C,H,W) -> (H*W, C) token layout."""
    if x.ndim != 3:
        raise ShapeError("flatten_spatial expects (C,H,W)")
    c, h, w = x.shape
    data = x.data.reshape(c, h * w).T.copy()

    def bwd(g, a=x):
        _accum(a, g.T.reshape(c, h, w).copy())

    return _make(data, (x,), bwd)


def view_spatial(x: Tensor, h: int, w: int) -> Tensor:
    """(H*W, C) -> (C,H,W); inverse of flatten_spatial."""
    if x.ndim != 2 or x.shape[0] != h * w:
        raise ShapeError("view_spatial row count must equal h*w")
    c = x.shape[1]
    data = x.data.T.reshape(c, h, w).copy()

    def bwd(g, a=x):
        _accum(a, g.reshape(c, h * w).T.copy())

    return _make(data, (x,), bwd)


def softmax_rows(x: Tensor) -> Tensor:
    if x.ndim != 2:
        raise ShapeError("softmax_rows expects a 2-D tensor")
    z = x.data - x.data.max(axis=1, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=1, keepdims=True)

    def bwd(g, a=x, p=p):
        _accum(a, p * (g - (g * p).sum(axis=1, keepdims=True)))

    return _make(p, (x,), bwd)


def attention(q: Tensor, k: Tensor, v: Tensor) -> Tensor:
    """softmax(q k^T / sqrt(D)) v. Single head; self-attention is q=k=v."""
    if q.ndim != 2 or k.ndim != 2 or v.ndim != 2:
        raise ShapeError("attention expects 2-D token matrices")
    if q.shape[1] != k.shape[1]:
        raise ShapeError("attention q/k feature dims differ")
    if k.shape[0] != v.shape[0]:
        raise ShapeError("attention k/v row counts differ")
    d = q.shape[1]
    logits = (q @ k.t()) * (1.0 / math.sqrt(d))
    return softmax_rows(logits) @ v


def grad_check(f, xs, eps=1e-5):
    """Max relative error between reverse-mode and central-difference grads.

    f takes one Tensor per entry of xs (a Tensor or a sequence of Tensors)
    and returns a scalar Tensor. f must be deterministic.
    """
    single = isinstance(xs, Tensor)
    xs = [xs] if single else list(xs)
    leaves = [Tensor(x.data.copy(), requires_grad=True) for x in xs]
    f(*leaves).backward()
    grads = [leaf.grad if leaf.grad is not None else np.zeros_like(leaf.data)
             for leaf in leaves]

    def value(arrs):
        return f(*[Tensor(a) for a in arrs]).item()

    worst = 0.0
    base = [leaf.data for leaf in leaves]
    for i, g_ad in enumerate(grads):
        flat = base[i].reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + eps
            fp = value(base)
            flat[j] = orig - eps
            fm = value(base)
            flat[j] = orig
            g_fd = (fp - fm) / (2 * eps)
            g = g_ad.reshape(-1)[j]
            err = abs(g - g_fd) / max(abs(g), abs(g_fd), 1e-8)
            worst = max(worst, err)
    return worst
