"""
Minimal tape-free reverse-mode differentiation on numpy arrays.

Every op returns a :class:`Var` holding its value, its parent Vars and a
closure mapping the upstream gradient to one gradient per parent. A Var
used several times (a shared block applied ``N_j`` times) simply has
several children, and :func:`grad` sums their contributions.

Images use the (B, H, W, C) layout throughout; convolution kernels are
(k, k, C_in, C_out).
"""

from __future__ import annotations

import math
from typing import Callable, Iterable, Mapping

import numpy as np

from ..errors import ShapeError


class Var:
    __slots__ = ("data", "parents", "backward_fn")

    def __init__(self, data, parents: tuple = (), backward_fn: Callable | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.parents = parents
        self.backward_fn = backward_fn

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Var(shape={self.data.shape})"


def as_var(x) -> Var:
    return x if isinstance(x, Var) else Var(x)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


def grad(loss: Var, wrt: Mapping[str, Var]) -> dict[str, np.ndarray]:
    """Gradient of a scalar ``loss`` with respect to each Var in ``wrt``.

    Vars that do not influence the loss get a zero gradient.
    """
    if loss.data.size != 1:
        raise ShapeError("loss must be a scalar")
    order: list[Var] = []
    seen: set[int] = set()
    stack = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if id(p) not in seen:
                stack.append((p, False))
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = grads.get(id(node))
        if g is None or node.backward_fn is None:
            continue
        for p, gp in zip(node.parents, node.backward_fn(g)):
            if gp is None:
                continue
            key = id(p)
            if key in grads:
                grads[key] = grads[key] + gp
            else:
                grads[key] = gp
    return {name: grads.get(id(v), np.zeros_like(v.data)) for name, v in wrt.items()}


# -- elementwise ----------------------------------------------------------------


def add(a, b) -> Var:
    a, b = as_var(a), as_var(b)
    return Var(
        a.data + b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    )


def sub(a, b) -> Var:
    a, b = as_var(a), as_var(b)
    return Var(
        a.data - b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)),
    )


def mul(a, b) -> Var:
    a, b = as_var(a), as_var(b)
    return Var(
        a.data * b.data,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
    )


def scale(a, c: float) -> Var:
    a = as_var(a)
    return Var(a.data * c, (a,), lambda g: (g * c,))


def one_minus(a) -> Var:
    a = as_var(a)
    return Var(1.0 - a.data, (a,), lambda g: (-g,))


def sigmoid(a) -> Var:
    a = as_var(a)
    # split form avoids overflow in exp for large |x|
    x = a.data
    e = np.exp(-np.abs(x))
    s = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return Var(s, (a,), lambda g: (g * s * (1.0 - s),))


_GELU_K = math.sqrt(2.0 / math.pi)


def gelu(a) -> Var:
    """GELU, tanh approximation."""
    a = as_var(a)
    x = a.data
    x2 = x * x
    inner = _GELU_K * x * (1.0 + 0.044715 * x2)
    t = np.tanh(inner)
    out = 0.5 * x * (1.0 + t)

    def back(g):
        d = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * _GELU_K * (1.0 + 3 * 0.044715 * x2)
        return (g * d,)

    return Var(out, (a,), back)


# -- shape ops --------------------------------------------------------------------


def reshape(a, shape) -> Var:
    a = as_var(a)
    return Var(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def transpose(a, axes) -> Var:
    a = as_var(a)
    inv = np.argsort(axes)
    return Var(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inv),))


def pad_hw(a, ph: int, pw: int) -> Var:
    """Zero-pad the bottom and right of a (B, H, W, C) tensor."""
    a = as_var(a)
    if ph == 0 and pw == 0:
        return a
    H, W = a.shape[1:3]
    out = np.pad(a.data, ((0, 0), (0, ph), (0, pw), (0, 0)))
    return Var(out, (a,), lambda g: (g[:, :H, :W, :],))


def crop_hw(a, H: int, W: int) -> Var:
    a = as_var(a)
    if a.shape[1] == H and a.shape[2] == W:
        return a
    full = a.shape

    def back(g):
        out = np.zeros(full)
        out[:, :H, :W, :] = g
        return (out,)

    return Var(a.data[:, :H, :W, :], (a,), back)


# -- linear algebra -----------------------------------------------------------------


def matmul(a, b) -> Var:
    """Batched ``a @ b`` over the last two axes (equal batch shapes)."""
    a, b = as_var(a), as_var(b)
    return Var(
        a.data @ b.data,
        (a, b),
        lambda g: (g @ np.swapaxes(b.data, -1, -2), np.swapaxes(a.data, -1, -2) @ g),
    )


def linear(x, w, b=None) -> Var:
    """``x @ w + b`` over the last axis; ``w`` is (C_in, C_out)."""
    x, w = as_var(x), as_var(w)
    cin, cout = w.shape
    x2 = x.data.reshape(-1, cin)
    out = x2 @ w.data
    parents: tuple = (x, w)
    if b is not None:
        b = as_var(b)
        out = out + b.data
        parents = (x, w, b)

    def back(g):
        g2 = g.reshape(-1, cout)
        gx = (g2 @ w.data.T).reshape(x.shape)
        gw = x2.T @ g2
        if b is None:
            return gx, gw
        return gx, gw, g2.sum(axis=0)

    return Var(out.reshape(x.shape[:-1] + (cout,)), parents, back)


def conv2d(x, w, b=None) -> Var:
    """'Same' 2-D convolution (cross-correlation) with zero padding.

    ``x`` is (B, H, W, C_in), ``w`` is (k, k, C_in, C_out) with odd ``k``.
    """
    x, w = as_var(x), as_var(w)
    k, k2, cin, cout = w.shape
    if k != k2 or k % 2 == 0:
        raise ShapeError(f"kernel must be square with odd size, got {w.shape[:2]}")
    if x.shape[-1] != cin:
        raise ShapeError(f"conv expects {cin} input channels, got {x.shape[-1]}")
    B, H, W, _ = x.shape
    if k == 1:
        return linear(x, reshape(w, (cin, cout)), b)
    cols = _im2col(x.data, k)
    wmat = w.data.reshape(k * k * cin, cout)
    out = cols @ wmat
    parents: tuple = (x, w)
    if b is not None:
        b = as_var(b)
        out = out + b.data
        parents = (x, w, b)

    def back(g):
        g2 = g.reshape(B * H * W, cout)
        gw = (cols.T @ g2).reshape(w.shape)
        # input gradient: same-padded correlation with the kernel rotated by
        # 180 degrees and its channel axes swapped
        wflip = w.data[::-1, ::-1].transpose(0, 1, 3, 2).reshape(k * k * cout, cin)
        gx = (_im2col(g, k) @ wflip).reshape(x.shape)
        if b is None:
            return gx, gw
        return gx, gw, g2.sum(axis=0)

    return Var(out.reshape(B, H, W, cout), parents, back)


def _im2col(x: np.ndarray, k: int) -> np.ndarray:
    """(B, H, W, C) -> (B*H*W, k*k*C) patches, zero padded, (ki, kj, c) order."""
    B, H, W, C = x.shape
    p = k // 2
    xp = np.pad(x, ((0, 0), (p, p), (p, p), (0, 0)))
    cols = np.empty((B, H, W, k, k, C))
    for i in range(k):
        for j in range(k):
            cols[:, :, :, i, j, :] = xp[:, i : i + H, j : j + W, :]
    return cols.reshape(B * H * W, k * k * C)


# -- normalisation / attention -----------------------------------------------------


def layer_norm(x, gain, bias, eps: float = 1e-6) -> Var:
    """Normalise over the last axis, then apply a learned gain and bias."""
    x, gain, bias = as_var(x), as_var(gain), as_var(bias)
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    n = x.shape[-1]

    def back(g):
        red = tuple(range(g.ndim - 1))
        ggain = (g * xhat).sum(axis=red)
        gbias = g.sum(axis=red)
        gx_hat = g * gain.data
        gx = inv / n * (
            n * gx_hat
            - gx_hat.sum(axis=-1, keepdims=True)
            - xhat * (gx_hat * xhat).sum(axis=-1, keepdims=True)
        )
        return gx, ggain, gbias

    return Var(xhat * gain.data + bias.data, (x, gain, bias), back)


def softmax(a) -> Var:
    """Softmax over the last axis."""
    a = as_var(a)
    e = np.exp(a.data - a.data.max(axis=-1, keepdims=True))
    s = e / e.sum(axis=-1, keepdims=True)

    def back(g):
        return (s * (g - (g * s).sum(axis=-1, keepdims=True)),)

    return Var(s, (a,), back)


# -- loss --------------------------------------------------------------------------


def charbonnier(target, pred, eps: float) -> Var:
    """Mean of ``sqrt((target - pred)**2 + eps**2)``."""
    target, pred = as_var(target), as_var(pred)
    if target.shape != pred.shape:
        raise ShapeError(f"shape mismatch: {target.shape} vs {pred.shape}")
    if not eps > 0:
        raise ValueError(f"eps must be positive, got {eps}")
    d = target.data - pred.data
    r = np.sqrt(d * d + eps * eps)
    n = d.size

    def back(g):
        gd = g * d / r / n
        return gd, -gd

    return Var(np.array(r.mean()), (target, pred), back)


def leaves(arrays: Mapping[str, np.ndarray]) -> dict[str, Var]:
    return {name: Var(a) for name, a in arrays.items()}


def values(vs: Iterable[Var]) -> list[np.ndarray]:
    return [v.data for v in vs]
