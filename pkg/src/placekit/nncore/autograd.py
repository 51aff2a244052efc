"""Minimal reverse-mode autodiff on numpy arrays.

Enough machinery for the compact backbones used here: convolution,
linear layers, pooling, pointwise nonlinearities, concatenation and the
loss heads. Forward passes are plain numpy; each op records a closure
that scatters the incoming gradient to its parents.
"""
from __future__ import annotations

import numpy as np

from ..errors import InputError


class Var:
    """One node in the computation tape."""

    __slots__ = ("data", "grad", "parents", "bwd", "name", "needs")

    def __init__(self, data, parents=(), bwd=None, name=None, needs=None):
        self.data = np.asarray(data)
        self.grad = None
        self.parents = parents
        self.bwd = bwd
        self.name = name
        # leaves default to needing gradients (safe); constant inputs can
        # opt out with needs=False to skip their backward work
        self.needs = any(p.needs for p in parents) if parents else \
            (True if needs is None else needs)

    @property
    def shape(self):
        return self.data.shape

    def accumulate(self, g):
        if self.grad is None:
            self.grad = np.array(g, dtype=self.data.dtype, copy=True)
        else:
            self.grad += g


def backward(root: Var):
    """Backpropagate from a scalar root through the recorded tape."""
    if root.data.size != 1:
        raise InputError("backward() expects a scalar loss")
    topo, seen, stack = [], set(), [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if id(p) not in seen:
                stack.append((p, False))
    root.grad = np.ones_like(root.data)
    for node in reversed(topo):
        if node.bwd is not None and node.grad is not None:
            node.bwd(node.grad)


# ---------------------------------------------------------------------------
# convolution


def _im2col(x, k, stride, pad):
    b, c, h, w = x.shape
    if pad:
        xp = np.zeros((b, c, h + 2 * pad, w + 2 * pad), dtype=x.dtype)
        xp[:, :, pad:pad + h, pad:pad + w] = x
        x = xp
    oh = (h + 2 * pad - k) // stride + 1
    ow = (w + 2 * pad - k) // stride + 1
    win = np.lib.stride_tricks.sliding_window_view(x, (k, k), axis=(2, 3))
    win = win[:, :, ::stride, ::stride]            # (b, c, oh, ow, k, k)
    cols = win.transpose(0, 1, 4, 5, 2, 3).reshape(b, c * k * k, oh * ow)
    return np.ascontiguousarray(cols), oh, ow


def _col2im(cols, x_shape, k, stride, pad):
    b, c, h, w = x_shape
    hp, wp = h + 2 * pad, w + 2 * pad
    oh = (hp - k) // stride + 1
    ow = (wp - k) // stride + 1
    dx = np.zeros((b, c, hp, wp), dtype=cols.dtype)
    cols = cols.reshape(b, c, k, k, oh, ow)
    for ki in range(k):
        for kj in range(k):
            dx[:, :, ki:ki + stride * oh:stride, kj:kj + stride * ow:stride] \
                += cols[:, :, ki, kj]
    if pad:
        dx = dx[:, :, pad:hp - pad, pad:wp - pad]
    return dx


def conv2d(x: Var, w: Var, bias: Var, stride=1, pad=1) -> Var:
    """2D convolution, kernel (O, C, k, k), bias (O,)."""
    b, c, _, _ = x.shape
    o, cw, k, _ = w.shape
    if cw != c:
        raise InputError(f"conv channel mismatch: input {c}, kernel {cw}")
    cols, oh, ow = _im2col(x.data, k, stride, pad)
    wmat = w.data.reshape(o, -1)
    out = np.matmul(wmat, cols)                    # (b, o, L)
    out = out.reshape(b, o, oh, ow) + bias.data[None, :, None, None]

    def bwd(g):
        gmat = g.reshape(b, o, oh * ow)
        w.accumulate(np.matmul(gmat, cols.transpose(0, 2, 1))
                     .sum(axis=0).reshape(w.shape))
        bias.accumulate(g.sum(axis=(0, 2, 3)))
        if x.needs:
            dcols = np.matmul(wmat.T, gmat)
            x.accumulate(_col2im(dcols, x.shape, k, stride, pad))

    return Var(out, (x, w, bias), bwd)


def linear(x: Var, w: Var, bias: Var) -> Var:
    """x (B, F) @ w (F, O) + bias (O,)."""
    out = x.data @ w.data + bias.data

    def bwd(g):
        w.accumulate(x.data.T @ g)
        bias.accumulate(g.sum(axis=0))
        x.accumulate(g @ w.data.T)

    return Var(out, (x, w, bias), bwd)


def maxpool2d(x: Var, k=2) -> Var:
    b, c, h, w = x.shape
    oh, ow = h // k, w // k
    win = x.data[:, :, :oh * k, :ow * k].reshape(b, c, oh, k, ow, k)
    flat = win.transpose(0, 1, 2, 4, 3, 5).reshape(b, c, oh, ow, k * k)
    idx = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, idx[..., None], axis=-1)[..., 0]

    def bwd(g):
        dflat = np.zeros_like(flat)
        np.put_along_axis(dflat, idx[..., None], g[..., None], axis=-1)
        dwin = dflat.reshape(b, c, oh, ow, k, k).transpose(0, 1, 2, 4, 3, 5)
        dx = np.zeros_like(x.data)
        dx[:, :, :oh * k, :ow * k] = dwin.reshape(b, c, oh * k, ow * k)
        x.accumulate(dx)

    return Var(out, (x,), bwd)


# ---------------------------------------------------------------------------
# pointwise and shape ops


def relu(x: Var) -> Var:
    mask = x.data > 0

    def bwd(g):
        x.accumulate(g * mask)

    return Var(x.data * mask, (x,), bwd)


def sigmoid(x: Var) -> Var:
    # exp may overflow to inf for very negative inputs; the result still
    # saturates to exactly 0, so silence the warning rather than branch
    with np.errstate(over="ignore"):
        s = 1.0 / (1.0 + np.exp(-x.data))

    def bwd(g):
        x.accumulate(g * s * (1.0 - s))

    return Var(s, (x,), bwd)


def spatial_mean(x: Var) -> Var:
    """(B, C, H, W) -> (B, C), mean over the spatial extent."""
    b, c, h, w = x.shape
    out = x.data.mean(axis=(2, 3))

    def bwd(g):
        x.accumulate(np.broadcast_to(g[:, :, None, None] / (h * w), x.shape))

    return Var(out, (x,), bwd)


def broadcast_to_map(v: Var, h: int, w: int) -> Var:
    """Tile (B, C) -> (B, C, h, w); gradient sums back over the tile."""
    out = np.broadcast_to(v.data[:, :, None, None], v.shape + (h, w)).copy()

    def bwd(g):
        v.accumulate(g.sum(axis=(2, 3)))

    return Var(out, (v,), bwd)


def concat(vars_, axis=1) -> Var:
    out = np.concatenate([v.data for v in vars_], axis=axis)
    sizes = [v.shape[axis] for v in vars_]

    def bwd(g):
        start = 0
        for v, s in zip(vars_, sizes):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(start, start + s)
            v.accumulate(g[tuple(sl)])
            start += s

    return Var(out, tuple(vars_), bwd)


def reshape(x: Var, shape) -> Var:
    def bwd(g):
        x.accumulate(g.reshape(x.shape))

    return Var(x.data.reshape(shape), (x,), bwd)


def permute(x: Var, axes) -> Var:
    inv = np.argsort(axes)

    def bwd(g):
        x.accumulate(g.transpose(inv))

    return Var(x.data.transpose(axes).copy(), (x,), bwd)


def gather_rows(x: Var, batch_idx, row_idx) -> Var:
    """Select rows (b, i) from a (B, N, F) tensor -> (len(idx), F)."""
    bi = np.asarray(batch_idx)
    ri = np.asarray(row_idx)

    def bwd(g):
        dx = np.zeros_like(x.data)
        np.add.at(dx, (bi, ri), g)
        x.accumulate(dx)

    return Var(x.data[bi, ri], (x,), bwd)


def add(a: Var, b: Var) -> Var:
    if a.shape != b.shape:
        raise InputError("add() requires matching shapes")

    def bwd(g):
        a.accumulate(g)
        b.accumulate(g)

    return Var(a.data + b.data, (a, b), bwd)


def scale(x: Var, c: float) -> Var:
    def bwd(g):
        x.accumulate(g * c)

    return Var(x.data * c, (x,), bwd)
