"""Differentiable neural-network operations on :class:`Tensor`.

Convolution and bilinear upsampling carry hand-written backward rules (the
hot paths); everything else is composed from the primitive ops in
``tensor.py`` and inherits its gradients.
"""

from __future__ import annotations

import math
from typing import Optional

import numpy as np

from ..errors import ShapeError, ValidationError
from .tensor import (
    Tensor,
    _make_output,
    concat,
    exp,
    log,
    matmul,
    mean,
    reshape,
    sqrt,
    sum_,
    tanh,
    transpose,
)

__all__ = [
    "relu",
    "sigmoid",
    "silu",
    "gelu",
    "linear",
    "conv2d",
    "bilinear_upsample2x",
    "layer_norm",
    "batch_norm",
    "softmax",
    "log_softmax",
    "cross_entropy",
    "global_avg_pool",
]


# -- activations -------------------------------------------------------------


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return _make_output(np.where(mask, x.data, 0), (x,), lambda g: (g * mask,))


def _sigmoid_stable(v: np.ndarray) -> np.ndarray:
    # exp(-|v|) never overflows; both branches share it.
    z = np.exp(-np.abs(v))
    return np.where(v >= 0, 1.0 / (1.0 + z), z / (1.0 + z))


def sigmoid(x: Tensor) -> Tensor:
    y = _sigmoid_stable(x.data)
    return _make_output(y, (x,), lambda g: (g * (y * (1.0 - y)),))


def silu(x: Tensor) -> Tensor:
    s = _sigmoid_stable(x.data)
    y = x.data * s

    def bw(g):
        return (g * (s * (1.0 + x.data * (1.0 - s))),)

    return _make_output(y, (x,), bw)


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(x: Tensor) -> Tensor:
    """GELU, tanh approximation: 0.5·x·(1 + tanh(√(2/π)(x + 0.044715x³)))."""
    v = x.data
    inner = _GELU_C * (v + 0.044715 * v**3)
    t = np.tanh(inner)
    y = 0.5 * v * (1.0 + t)

    def bw(g):
        dinner = _GELU_C * (1.0 + 3.0 * 0.044715 * v * v)
        return (g * (0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * dinner),)

    return _make_output(y, (x,), bw)


# -- linear / convolution ----------------------------------------------------


def linear(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """``x @ weight.T + bias`` over the last axis; weight is (out, in)."""
    if x.shape[-1] != weight.shape[1]:
        raise ShapeError(f"linear: input width {x.shape[-1]} != weight in-width {weight.shape[1]}")
    lead = x.shape[:-1]
    flat = reshape(x, (-1, x.shape[-1])) if x.ndim != 2 else x
    y = matmul(flat, transpose(weight, (1, 0)))
    if bias is not None:
        y = y + bias
    if x.ndim != 2:
        y = reshape(y, lead + (weight.shape[0],))
    return y


def _conv_out_extent(extent: int, k: int, stride: int, pad: int) -> int:
    out = (extent + 2 * pad - k) // stride + 1
    if out <= 0:
        raise ShapeError(f"conv2d: kernel {k} with pad {pad} exceeds input extent {extent}")
    return out


def conv2d(
    x: Tensor,
    weight: Tensor,
    bias: Optional[Tensor] = None,
    stride: int = 1,
    padding: int = 0,
    groups: int = 1,
) -> Tensor:
    """2-D cross-correlation, NCHW layout, square stride/padding.

    weight is (out_c, in_c/groups, kH, kW).  Implemented as a loop over the
    kH·kW kernel taps; each tap is a strided view contraction, so the cost is
    the standard MAC count without an im2col buffer.
    """
    if x.ndim != 4 or weight.ndim != 4:
        raise ShapeError("conv2d expects 4-D input and weight")
    n, cin, h, w = x.shape
    out_c, cpg, kh, kw = weight.shape
    if cin != cpg * groups:
        raise ShapeError(f"conv2d: {cin} input channels, weight wants {cpg}·groups({groups})")
    if out_c % groups:
        raise ShapeError(f"conv2d: out_channels {out_c} not divisible by groups {groups}")
    if bias is not None and bias.shape != (out_c,):
        raise ShapeError(f"conv2d: bias shape {bias.shape} != ({out_c},)")
    oh = _conv_out_extent(h, kh, stride, padding)
    ow = _conv_out_extent(w, kw, stride, padding)

    xp = x.data
    if padding:
        xp = np.pad(xp, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    wd = weight.data
    depthwise = groups == cin and cpg == 1 and out_c == cin
    opg = out_c // groups

    def tap_views(src):
        for di in range(kh):
            for dj in range(kw):
                yield di, dj, src[:, :, di : di + stride * oh : stride, dj : dj + stride * ow : stride]

    area = oh * ow
    y = np.zeros((n, out_c, area), dtype=x.data.dtype)
    for di, dj, view in tap_views(xp):
        if groups == 1:
            # (out_c, cin) @ (n, cin, area): BLAS-backed batched matmul
            y += np.matmul(wd[:, :, di, dj], view.reshape(n, cin, area))
        elif depthwise:
            y += (wd[:, 0, di, dj][None, :, None, None] * view).reshape(n, out_c, area)
        else:
            for gidx in range(groups):
                y[:, gidx * opg : (gidx + 1) * opg] += np.matmul(
                    wd[gidx * opg : (gidx + 1) * opg, :, di, dj],
                    view[:, gidx * cpg : (gidx + 1) * cpg].reshape(n, cpg, area),
                )
    y = y.reshape(n, out_c, oh, ow)
    if bias is not None:
        y += bias.data[None, :, None, None]

    inputs = (x, weight) if bias is None else (x, weight, bias)

    def bw(g):
        gxp = np.zeros_like(xp)
        gw = np.zeros_like(wd)
        gflat = g.reshape(n, out_c, area)
        for di, dj, view in tap_views(xp):
            gview = gxp[:, :, di : di + stride * oh : stride, dj : dj + stride * ow : stride]
            if groups == 1:
                vflat = view.reshape(n, cin, area)
                gw[:, :, di, dj] = np.tensordot(gflat, vflat, axes=([0, 2], [0, 2]))
                gview += np.matmul(wd[:, :, di, dj].T, gflat).reshape(n, cin, oh, ow)
            elif depthwise:
                gw[:, 0, di, dj] = np.einsum("nchw,nchw->c", g, view, optimize=True)
                gview += wd[:, 0, di, dj][None, :, None, None] * g
            else:
                for gi in range(groups):
                    go = gflat[:, gi * opg : (gi + 1) * opg]
                    vflat = view[:, gi * cpg : (gi + 1) * cpg].reshape(n, cpg, area)
                    gw[gi * opg : (gi + 1) * opg, :, di, dj] = np.tensordot(
                        go, vflat, axes=([0, 2], [0, 2])
                    )
                    gview[:, gi * cpg : (gi + 1) * cpg] += np.matmul(
                        wd[gi * opg : (gi + 1) * opg, :, di, dj].T, go
                    ).reshape(n, cpg, oh, ow)
        gx = gxp[:, :, padding : padding + h, padding : padding + w] if padding else gxp
        if bias is None:
            return gx, gw
        return gx, gw, g.sum(axis=(0, 2, 3))

    return _make_output(y, inputs, bw)


# -- bilinear upsampling -----------------------------------------------------


def _interp_matrix(out_len: int, in_len: int, dtype) -> np.ndarray:
    """Row-interpolation matrix for 2x bilinear upsampling, half-pixel
    centers (align_corners=False), edge-clamped."""
    m = np.zeros((out_len, in_len), dtype=dtype)
    for o in range(out_len):
        real = max((o + 0.5) / 2.0 - 0.5, 0.0)
        i0 = int(math.floor(real))
        i1 = min(i0 + 1, in_len - 1)
        frac = real - i0
        m[o, i0] += 1.0 - frac
        m[o, i1] += frac
    return m


def bilinear_upsample2x(x: Tensor) -> Tensor:
    """Double H and W by bilinear interpolation (half-pixel convention).

    Separable: out = R @ x @ Cᵀ with per-axis interpolation matrices, which
    also gives the exact transpose for the backward pass.
    """
    if x.ndim != 4:
        raise ShapeError("bilinear_upsample2x expects NCHW input")
    n, c, h, w = x.shape
    rmat = _interp_matrix(2 * h, h, x.data.dtype)
    cmat = _interp_matrix(2 * w, w, x.data.dtype)
    y = np.matmul(np.matmul(rmat, x.data), cmat.T)

    def bw(g):
        return (np.matmul(np.matmul(rmat.T, g), cmat),)

    return _make_output(y, (x,), bw)


# -- normalization -----------------------------------------------------------


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then affine with (C,) gamma/beta."""
    if gamma.shape != (x.shape[-1],) or beta.shape != (x.shape[-1],):
        raise ShapeError("layer_norm: gamma/beta must match the last axis extent")
    mu = mean(x, axis=-1, keepdims=True)
    xc = x - mu
    var = mean(xc * xc, axis=-1, keepdims=True)
    return (xc / sqrt(var + eps)) * gamma + beta


def batch_norm(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    training: bool,
    momentum: float = 0.1,
    eps: float = 1e-5,
) -> Tensor:
    """BatchNorm over (N, H, W) per channel for NCHW input.

    Training mode uses batch statistics (biased variance) and folds them into
    the running buffers in place.  Eval mode normalizes with the running
    buffers as constants.  A singleton batch in training cannot produce
    meaningful batch statistics and is rejected.  One fused op (the hot path
    in every block), so the backward rule is hand-written.
    """
    if x.ndim != 4:
        raise ShapeError("batch_norm expects NCHW input")
    c = x.shape[1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError("batch_norm: gamma/beta must be (C,)")
    axes = (0, 2, 3)
    if training:
        if x.shape[0] == 1:
            raise ValidationError(
                "batch_norm: singleton batch (N=1) in training gives degenerate statistics"
            )
        mu = x.data.mean(axis=axes, keepdims=True)
        var = np.square(x.data - mu).mean(axis=axes, keepdims=True)
        running_mean *= 1.0 - momentum
        running_mean += momentum * mu.reshape(c).astype(running_mean.dtype)
        running_var *= 1.0 - momentum
        running_var += momentum * var.reshape(c).astype(running_var.dtype)
    else:
        mu = running_mean.reshape(1, c, 1, 1).astype(x.data.dtype)
        var = running_var.reshape(1, c, 1, 1).astype(x.data.dtype)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv_std
    y = gamma.data[None, :, None, None] * xhat + beta.data[None, :, None, None]

    def bw(g):
        dbeta = g.sum(axis=axes)
        dgamma = (g * xhat).sum(axis=axes)
        scale = gamma.data[None, :, None, None] * inv_std
        if not training:
            return scale * g, dgamma, dbeta
        m = x.data.size // c
        dx = scale * (
            g
            - dbeta[None, :, None, None] / m
            - xhat * (dgamma[None, :, None, None] / m)
        )
        return dx, dgamma, dbeta

    return _make_output(y, (x, gamma, beta), bw)


# -- softmax / loss ----------------------------------------------------------


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    shifted = x - Tensor(x.data.max(axis=axis, keepdims=True))
    e = exp(shifted)
    return e / sum_(e, axis=axis, keepdims=True)


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    shifted = x - Tensor(x.data.max(axis=axis, keepdims=True))
    return shifted - log(sum_(exp(shifted), axis=axis, keepdims=True))


def cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean cross-entropy; logits (N, K, ...) against integer labels (N, ...)."""
    labels = np.asarray(labels)
    if labels.shape != logits.shape[:1] + logits.shape[2:]:
        raise ShapeError(
            f"cross_entropy: labels {labels.shape} do not match logits {logits.shape}"
        )
    k = logits.shape[1]
    if labels.min() < 0 or labels.max() >= k:
        raise ValidationError(f"cross_entropy: labels must lie in [0, {k})")
    ls = log_softmax(logits, axis=1)
    onehot = np.moveaxis(np.eye(k, dtype=logits.data.dtype)[labels], -1, 1)
    picked = sum_(ls * Tensor(onehot))
    return -picked / float(labels.size)


def global_avg_pool(x: Tensor) -> Tensor:
    """(N, C, H, W) → (N, C, 1, 1) spatial mean."""
    return mean(x, axis=(2, 3), keepdims=True)
