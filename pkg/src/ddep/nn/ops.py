"""Differentiable ops: convolution, normalization, pooling, losses.

Layout convention is (batch, channel, height, width). Convolutions run as a
single GEMM over an im2col buffer laid out (C*k*k, B*Ho*Wo); on small desk
models that layout keeps BLAS busy even for the low-channel full-resolution
layers. The im2col buffer is kept alive on the graph node for the weight
gradient, so per-step memory is bounded by one buffer per conv layer.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import as_strided

from ddep.errors import InvalidArgumentError
from ddep.nn.tensor import Tensor, as_tensor, make_op


def _require(cond, message):
    if not cond:
        raise InvalidArgumentError(message)


# ---------------------------------------------------------------------------
# convolution


def _conv_out_extent(extent, k, stride, pad):
    return (extent + 2 * pad - k) // stride + 1


def _im2col(x, k, stride, pad):
    """(B,C,H,W) -> contiguous (C*k*k, B*Ho*Wo) patch matrix."""
    B, C, H, W = x.shape
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    Ho = _conv_out_extent(H, k, stride, pad)
    Wo = _conv_out_extent(W, k, stride, pad)
    s = x.strides
    windows = as_strided(
        x,
        shape=(C, k, k, B, Ho, Wo),
        strides=(s[1], s[2], s[3], s[0], s[2] * stride, s[3] * stride),
    )
    return windows.reshape(C * k * k, B * Ho * Wo), Ho, Wo


def _col2im(cols_grad, x_shape, k, stride, pad):
    """Scatter-add the im2col gradient back onto the (padded) input."""
    B, C, H, W = x_shape
    Hp, Wp = H + 2 * pad, W + 2 * pad
    Ho = _conv_out_extent(H, k, stride, pad)
    Wo = _conv_out_extent(W, k, stride, pad)
    gx = np.zeros((B, C, Hp, Wp), dtype=cols_grad.dtype)
    cg = cols_grad.reshape(C, k, k, B, Ho, Wo)
    for dy in range(k):
        for dx in range(k):
            gx[:, :, dy : dy + Ho * stride : stride, dx : dx + Wo * stride : stride] += (
                cg[:, dy, dx].transpose(1, 0, 2, 3)
            )
    if pad:
        gx = gx[:, :, pad : pad + H, pad : pad + W]
    return np.ascontiguousarray(gx)


def conv2d(x, weight, bias, stride=1, padding=1):
    """2-d cross-correlation with per-output-channel bias.

    weight is (O, C, k, k); spatial output extents follow the usual
    (H + 2*padding - k) // stride + 1 arithmetic.
    """
    x, weight, bias = as_tensor(x), as_tensor(weight), as_tensor(bias)
    B, C, H, W = x.shape
    O, Cw, k, k2 = weight.shape
    _require(k == k2, f"conv2d kernels must be square, got {weight.shape}")
    _require(
        C == Cw,
        f"conv2d channel mismatch: input {x.shape} vs weight {weight.shape}",
    )
    _require(bias.shape == (O,), f"conv2d bias must be ({O},), got {bias.shape}")
    _require(
        H + 2 * padding >= k and W + 2 * padding >= k,
        f"conv2d input {x.shape} smaller than kernel {weight.shape}",
    )

    cols, Ho, Wo = _im2col(x.data, k, stride, padding)
    out = weight.data.reshape(O, -1) @ cols
    out += bias.data[:, None]
    out = np.ascontiguousarray(out.reshape(O, B, Ho, Wo).transpose(1, 0, 2, 3))

    def vjp(grad):
        g = grad.transpose(1, 0, 2, 3).reshape(O, -1)
        gw = gb = gx = None
        if weight.requires_grad:
            gw = (g @ cols.T).reshape(weight.shape)
        if bias.requires_grad:
            gb = g.sum(axis=1)
        if x.requires_grad:
            cols_grad = weight.data.reshape(O, -1).T @ g
            gx = _col2im(cols_grad, x.shape, k, stride, padding)
        return gx, gw, gb

    return make_op(out, (x, weight, bias), vjp)


def upsample_nearest2x(x):
    """Nearest-neighbour 2x spatial upsampling."""
    x = as_tensor(x)
    _require(x.data.ndim == 4, f"upsample expects (B,C,H,W), got {x.shape}")
    out = np.repeat(np.repeat(x.data, 2, axis=2), 2, axis=3)

    def vjp(grad):
        B, C, H2, W2 = grad.shape
        g = grad.reshape(B, C, H2 // 2, 2, W2 // 2, 2).sum(axis=(3, 5))
        return (g,)

    return make_op(out, (x,), vjp)


# ---------------------------------------------------------------------------
# pointwise / normalization


def relu(x):
    x = as_tensor(x)
    out = np.maximum(x.data, 0)

    def vjp(grad):
        return (grad * (x.data > 0),)

    return make_op(out, (x,), vjp)


def add(a, b):
    """Elementwise sum of equal-shape tensors (residual connections)."""
    a, b = as_tensor(a), as_tensor(b)
    _require(a.shape == b.shape, f"add shape mismatch: {a.shape} vs {b.shape}")

    def vjp(grad):
        return grad, grad

    return make_op(a.data + b.data, (a, b), vjp)


def scale(x, s):
    x = as_tensor(x)
    s = float(s)

    def vjp(grad):
        return (grad * s,)

    return make_op(x.data * s, (x,), vjp)


def concat(tensors, axis=1):
    tensors = [as_tensor(t) for t in tensors]
    _require(len(tensors) > 0, "concat of zero tensors")
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def vjp(grad):
        slicer = [slice(None)] * grad.ndim
        grads = []
        for i in range(len(tensors)):
            slicer[axis] = slice(offsets[i], offsets[i + 1])
            grads.append(np.ascontiguousarray(grad[tuple(slicer)]))
        return tuple(grads)

    return make_op(out, tuple(tensors), vjp)


def group_norm(x, scale_p, shift_p, groups, eps=1e-5):
    """Normalize over (C/groups, H, W) blocks, then apply per-channel affine."""
    x, scale_p, shift_p = as_tensor(x), as_tensor(scale_p), as_tensor(shift_p)
    B, C, H, W = x.shape
    _require(C % groups == 0, f"group_norm: {C} channels not divisible by {groups} groups")
    _require(
        scale_p.shape == (C,) and shift_p.shape == (C,),
        f"group_norm affine params must be ({C},)",
    )
    xg = x.data.reshape(B, groups, C // groups, H, W)
    mean = xg.mean(axis=(2, 3, 4), keepdims=True)
    var = xg.var(axis=(2, 3, 4), keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = ((xg - mean) * inv).reshape(B, C, H, W)
    out = xhat * scale_p.data[None, :, None, None] + shift_p.data[None, :, None, None]

    def vjp(grad):
        gscale = gshift = gx = None
        if scale_p.requires_grad:
            gscale = (grad * xhat).sum(axis=(0, 2, 3))
        if shift_p.requires_grad:
            gshift = grad.sum(axis=(0, 2, 3))
        if x.requires_grad:
            dxhat = (grad * scale_p.data[None, :, None, None]).reshape(
                B, groups, C // groups, H, W
            )
            xh = xhat.reshape(B, groups, C // groups, H, W)
            m1 = dxhat.mean(axis=(2, 3, 4), keepdims=True)
            m2 = (dxhat * xh).mean(axis=(2, 3, 4), keepdims=True)
            gx = ((dxhat - m1 - xh * m2) * inv).reshape(B, C, H, W)
        return gx, gscale, gshift

    return make_op(out, (x, scale_p, shift_p), vjp)


# ---------------------------------------------------------------------------
# dense / attention building blocks


def dense(x, weight, bias):
    """Affine map over the last axis: (..., I) @ (I, O) + (O,)."""
    x, weight, bias = as_tensor(x), as_tensor(weight), as_tensor(bias)
    I, O = weight.shape
    _require(
        x.shape[-1] == I,
        f"dense shape mismatch: input {x.shape} vs weight {weight.shape}",
    )
    _require(bias.shape == (O,), f"dense bias must be ({O},), got {bias.shape}")
    out = x.data @ weight.data + bias.data

    def vjp(grad):
        gx = gw = gb = None
        if x.requires_grad:
            gx = grad @ weight.data.T
        if weight.requires_grad:
            gw = x.data.reshape(-1, I).T @ grad.reshape(-1, O)
        if bias.requires_grad:
            gb = grad.reshape(-1, O).sum(axis=0)
        return gx, gw, gb

    return make_op(out, (x, weight, bias), vjp)


def matmul(a, b):
    """Batched matrix product (B,N,M) @ (B,M,K)."""
    a, b = as_tensor(a), as_tensor(b)
    _require(
        a.data.ndim == 3 and b.data.ndim == 3 and a.shape[2] == b.shape[1],
        f"matmul shape mismatch: {a.shape} vs {b.shape}",
    )

    def vjp(grad):
        ga = gb = None
        if a.requires_grad:
            ga = grad @ b.data.transpose(0, 2, 1)
        if b.requires_grad:
            gb = a.data.transpose(0, 2, 1) @ grad
        return ga, gb

    return make_op(a.data @ b.data, (a, b), vjp)


def transpose(x, axes):
    x = as_tensor(x)
    inverse = tuple(np.argsort(axes))

    def vjp(grad):
        return (np.ascontiguousarray(grad.transpose(inverse)),)

    return make_op(np.ascontiguousarray(x.data.transpose(axes)), (x,), vjp)


def reshape(x, shape):
    x = as_tensor(x)
    in_shape = x.shape

    def vjp(grad):
        return (grad.reshape(in_shape),)

    return make_op(x.data.reshape(shape), (x,), vjp)


def softmax(x, axis=-1):
    x = as_tensor(x)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=axis, keepdims=True)

    def vjp(grad):
        inner = (grad * s).sum(axis=axis, keepdims=True)
        return (s * (grad - inner),)

    return make_op(s, (x,), vjp)


def global_avg_pool(x):
    """(B,C,H,W) -> (B,C) spatial mean."""
    x = as_tensor(x)
    _require(x.data.ndim == 4, f"global_avg_pool expects (B,C,H,W), got {x.shape}")
    B, C, H, W = x.shape
    out = x.data.mean(axis=(2, 3))

    def vjp(grad):
        g = np.broadcast_to(grad[:, :, None, None] / (H * W), (B, C, H, W))
        return (np.ascontiguousarray(g),)

    return make_op(out, (x,), vjp)


# ---------------------------------------------------------------------------
# losses


def mean_squared_error(prediction, target):
    """Mean over all elements of the squared difference (scalar output)."""
    prediction, target = as_tensor(prediction), as_tensor(target)
    _require(
        prediction.shape == target.shape,
        f"mse shape mismatch: {prediction.shape} vs {target.shape}",
    )
    diff = prediction.data - target.data
    n = diff.size
    out = np.asarray((diff * diff).mean(), dtype=diff.dtype)

    def vjp(grad):
        g = (2.0 / n) * grad * diff
        gp = g if prediction.requires_grad else None
        gt = -g if target.requires_grad else None
        return gp, gt

    return make_op(out, (prediction, target), vjp)


def softmax_cross_entropy(logits, labels, ignore_index=None):
    """Mean cross-entropy between logits and integer labels.

    logits: (B, C) or (B, C, H, W); labels: (B,) or (B, H, W). Positions whose
    label equals `ignore_index` contribute neither loss nor gradient.
    """
    logits = as_tensor(logits)
    labels = np.asarray(labels)
    _require(
        labels.dtype.kind in "iu",
        f"labels must be integers, got dtype {labels.dtype}",
    )
    if logits.data.ndim == 2:
        flat = logits.data
        flat_labels = labels.reshape(-1)
        _require(
            labels.shape == (logits.shape[0],),
            f"labels shape {labels.shape} does not match logits {logits.shape}",
        )
    elif logits.data.ndim == 4:
        B, C, H, W = logits.shape
        _require(
            labels.shape == (B, H, W),
            f"labels shape {labels.shape} does not match logits {logits.shape}",
        )
        flat = logits.data.transpose(0, 2, 3, 1).reshape(-1, C)
        flat_labels = labels.reshape(-1)
    else:
        raise InvalidArgumentError(f"logits must be 2-d or 4-d, got {logits.shape}")

    C = flat.shape[1]
    valid = np.ones(flat_labels.shape, dtype=bool)
    if ignore_index is not None:
        valid = flat_labels != ignore_index
    _require(valid.any(), "cross-entropy over zero scored positions")
    checked = flat_labels[valid]
    _require(
        checked.min() >= 0 and checked.max() < C,
        f"labels out of range [0,{C}) after ignore filtering",
    )

    shifted = flat - flat.max(axis=1, keepdims=True)
    logsumexp = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    logp = shifted - logsumexp
    n_valid = int(valid.sum())
    idx = np.where(valid)[0]
    loss = -logp[idx, flat_labels[idx]].sum() / n_valid
    out = np.asarray(loss, dtype=flat.dtype)

    def vjp(grad):
        p = np.exp(logp)
        p[idx, flat_labels[idx]] -= 1.0
        p[~valid] = 0.0
        p *= grad / n_valid
        if logits.data.ndim == 2:
            return (p.astype(flat.dtype, copy=False),)
        B, C2, H, W = logits.shape
        g = p.reshape(B, H, W, C2).transpose(0, 3, 1, 2)
        return (np.ascontiguousarray(g),)

    return make_op(out, (logits,), vjp)
