"""Differentiable operations on :class:`Tensor`.

Every op computes its forward value with numpy and registers a closure that
maps the output gradient to input gradients. Only suffix broadcasting is
supported (a bias of shape ``x.shape[-k:]`` added to ``x``), which is all the
model equations need.
"""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np

from .tensor import ShapeError, Tensor, record, tracked

LAYER_NORM_EPS = 1e-5


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _check_suffix(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape == b.shape:
        return
    if b.ndim <= a.ndim and a.shape[a.ndim - b.ndim:] == b.shape:
        return
    raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}")


def _reduce_to(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``g`` over the leading axes that were broadcast to reach its shape."""
    if g.shape == shape:
        return g
    lead = g.ndim - len(shape)
    return g.sum(axis=tuple(range(lead)))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product over the last two axes.

    ``a`` may be ``[m, k]`` or ``[B, m, k]``; ``b`` is ``[k, n]`` (shared) or
    ``[B, k, n]`` (per batch item).
    """
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: inner dimensions differ for {a.shape} and {b.shape}")
    if b.ndim == 3 and (a.ndim != 3 or a.shape[0] != b.shape[0]):
        raise ShapeError(f"matmul: batch dimensions differ for {a.shape} and {b.shape}")
    A, B = a.data, b.data
    need_a, need_b = tracked(a), tracked(b)
    if B.ndim == 2 and A.ndim == 3:
        # fold the batch into rows: one GEMM each way
        k, n = B.shape
        A2 = A.reshape(-1, k)
        out = (A2 @ B).reshape(A.shape[:-1] + (n,))

        def back(g):
            g2 = g.reshape(-1, n)
            ga = (g2 @ B.T).reshape(A.shape) if need_a else None
            gb = A2.T @ g2 if need_b else None
            return ga, gb
    else:
        out = A @ B

        def back(g):
            ga = g @ np.swapaxes(B, -1, -2) if need_a else None
            gb = np.swapaxes(A, -1, -2) @ g if need_b else None
            return ga, gb

    return record("matmul", out, (a, b), back)


def transpose_last(x: Tensor) -> Tensor:
    if x.ndim < 2:
        raise ShapeError(f"transpose_last: need rank >= 2, got {x.shape}")
    return record("transpose", np.swapaxes(x.data, -1, -2), (x,), lambda g: (np.swapaxes(g, -1, -2),))


def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_suffix("add", a, b)
    sa, sb = a.shape, b.shape
    return record("add", a.data + b.data, (a, b), lambda g: (g, _reduce_to(g, sb)))


def sub(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_suffix("sub", a, b)
    sb = b.shape
    return record("sub", a.data - b.data, (a, b), lambda g: (g, -_reduce_to(g, sb)))


def hadamard(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product."""
    a, b = _as_tensor(a), _as_tensor(b)
    _check_suffix("hadamard", a, b)
    A, B = a.data, b.data
    return record("hadamard", A * B, (a, b), lambda g: (g * B, _reduce_to(g * A, B.shape)))


def scale(x: Tensor, s: float) -> Tensor:
    s = float(s)
    return record("scale", x.data * s, (x,), lambda g: (g * s,))


def relu(x: Tensor) -> Tensor:
    # subgradient at exactly 0 is 0
    mask = x.data > 0
    return record("relu", np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,))


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def sigmoid(x: Tensor) -> Tensor:
    s = _sigmoid(x.data)
    return record("sigmoid", s, (x,), lambda g: (g * s * (1.0 - s),))


def tanh(x: Tensor) -> Tensor:
    t = np.tanh(x.data)
    return record("tanh", t, (x,), lambda g: (g * (1.0 - t * t),))


def softmax(x: Tensor, mask: Optional[np.ndarray] = None) -> Tensor:
    """Softmax over the last axis, stabilised by subtracting the row max.

    ``mask`` (boolean, broadcastable to ``x``) marks admissible entries;
    excluded entries get probability exactly 0. Every row needs at least
    one admissible entry.
    """
    z = x.data
    if mask is None:
        e = np.exp(z - z.max(axis=-1, keepdims=True))
    else:
        mask = np.broadcast_to(mask, z.shape)
        zm = np.where(mask, z, -np.inf)
        e = np.where(mask, np.exp(zm - zm.max(axis=-1, keepdims=True)), 0.0)
    p = e / e.sum(axis=-1, keepdims=True)

    def back(g):
        return (p * (g - (g * p).sum(axis=-1, keepdims=True)),)

    return record("softmax", p, (x,), back)


def softmax_rows(x: Tensor) -> Tensor:
    if x.ndim != 2:
        raise ShapeError(f"softmax_rows expects a matrix, got {x.shape}")
    return softmax(x)


def log_softmax(x: Tensor) -> Tensor:
    z = x.data
    shifted = z - z.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    out = shifted - lse
    p = np.exp(out)
    return record("log_softmax", out, (x,), lambda g: (g - p * g.sum(axis=-1, keepdims=True),))


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = LAYER_NORM_EPS) -> Tensor:
    """Normalise the last axis to zero mean / unit population variance, then affine."""
    d = x.shape[-1]
    if d < 2 or gain.shape != (d,) or bias.shape != (d,):
        raise ShapeError(f"layer_norm: input {x.shape}, gain {gain.shape}, bias {bias.shape}")
    X = x.data
    mu = X.mean(axis=-1, keepdims=True)
    xc = X - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    G = gain.data
    out = xhat * G + bias.data

    def back(g):
        gx_hat = g * G
        gx = inv * (gx_hat - gx_hat.mean(axis=-1, keepdims=True)
                    - xhat * (gx_hat * xhat).mean(axis=-1, keepdims=True))
        lead = tuple(range(g.ndim - 1))
        return gx, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return record("layer_norm", out, (x, gain, bias), back)


def concat_last_dim(a: Tensor, b: Tensor) -> Tensor:
    if a.shape[:-1] != b.shape[:-1]:
        raise ShapeError(f"concat_last_dim: leading shapes differ for {a.shape} and {b.shape}")
    k = a.shape[-1]
    out = np.concatenate([a.data, b.data], axis=-1)
    return record("concat", out, (a, b), lambda g: (g[..., :k], g[..., k:]))


def slice_last(x: Tensor, start: int, stop: int) -> Tensor:
    n = x.shape[-1]
    if not 0 <= start < stop <= n:
        raise ShapeError(f"slice_last: [{start}:{stop}] out of range for {x.shape}")
    shape = x.shape

    def back(g):
        full = np.zeros(shape)
        full[..., start:stop] = g
        return (full,)

    return record("slice", x.data[..., start:stop], (x,), back)


def mean_rows(x: Tensor, mask: Optional[np.ndarray] = None) -> Tensor:
    """Mean over the row axis (second to last): ``[N, d] -> [d]``, ``[B, N, d] -> [B, d]``.

    With ``mask`` (``[N]`` or ``[B, N]``, boolean) only admissible rows count.
    """
    if x.ndim < 2:
        raise ShapeError(f"mean_rows: need rank >= 2, got {x.shape}")
    if mask is None:
        w = np.full(x.shape[:-1], 1.0 / x.shape[-2])
    else:
        m = np.asarray(mask, dtype=np.float64)
        if m.shape != x.shape[:-1]:
            raise ShapeError(f"mean_rows: mask {m.shape} does not match {x.shape}")
        w = m / m.sum(axis=-1, keepdims=True)
    out = (x.data * w[..., None]).sum(axis=-2)
    return record("mean_rows", out, (x,), lambda g: (np.expand_dims(g, -2) * w[..., None],))


def embedding_lookup(table: Tensor, ids) -> Tensor:
    """Rows of ``table`` ([V, d]) selected by integer ``ids`` of any shape (rank <= 2)."""
    ids = np.asarray(ids, dtype=np.int64)
    if table.ndim != 2:
        raise ShapeError(f"embedding_lookup: table must be [V, d], got {table.shape}")
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise IndexError(f"embedding_lookup: ids outside [0, {table.shape[0]})")
    V, d = table.shape

    def back(g):
        gt = np.zeros((V, d))
        np.add.at(gt, ids.reshape(-1), g.reshape(-1, d))
        return (gt,)

    return record("embedding", table.data[ids], (table,), back)


def reshape(x: Tensor, shape) -> Tensor:
    old = x.shape
    return record("reshape", x.data.reshape(shape), (x,), lambda g: (g.reshape(old),))


def stack_steps(xs: Sequence[Tensor]) -> Tensor:
    """Stack ``T`` tensors of shape ``[B, d]`` into ``[B, T, d]``."""
    shape = xs[0].shape
    if any(t.shape != shape for t in xs) or len(shape) != 2:
        raise ShapeError(f"stack_steps: need equal [B, d] shapes, got {[t.shape for t in xs]}")
    out = np.stack([t.data for t in xs], axis=1)
    n = len(xs)
    return record("stack", out, tuple(xs), lambda g: tuple(g[:, i] for i in range(n)))


def sum_all(x: Tensor) -> Tensor:
    shape = x.shape
    return record("sum", np.asarray(x.data.sum()), (x,), lambda g: (np.broadcast_to(g, shape).copy(),))


def cross_entropy(logits: Tensor, targets, weights=None) -> Tensor:
    """Weighted mean of ``-log softmax(logits)[target]`` over all positions.

    ``targets`` has the shape of ``logits`` minus the last axis; ``weights``
    (same shape, default ones) zeroes out padding positions.
    """
    targets = np.asarray(targets, dtype=np.int64)
    if targets.shape != logits.shape[:-1]:
        raise ShapeError(f"cross_entropy: targets {targets.shape} vs logits {logits.shape}")
    w = np.ones(targets.shape) if weights is None else np.asarray(weights, dtype=np.float64)
    total = w.sum()
    if total <= 0:
        raise ValueError("cross_entropy: no positions carry weight")
    z = logits.data
    shifted = z - z.max(axis=-1, keepdims=True)
    logp = shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    picked = np.take_along_axis(logp, targets[..., None], axis=-1)[..., 0]
    loss = -(picked * w).sum() / total

    def back(g):
        grad = np.exp(logp)
        np.put_along_axis(grad, targets[..., None], np.take_along_axis(grad, targets[..., None], -1) - 1.0, -1)
        return (grad * (w / total)[..., None] * g,)

    return record("cross_entropy", np.asarray(loss), (logits,), back)


def dropout(x: Tensor, rate: float, rng: Optional[np.random.Generator]) -> Tensor:
    """Inverted dropout; identity when ``rate`` is 0 or ``rng`` is None."""
    if rate <= 0.0 or rng is None:
        return x
    keep = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return hadamard(x, Tensor(keep))
