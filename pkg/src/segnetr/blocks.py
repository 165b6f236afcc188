"""Learnable building blocks.

Conventions used throughout: convolutional trunk tensors are NCHW; the
layout-facing pieces (window branches, patch merging, IRSC) work on HWC with
explicit transposes at the boundary.  Weights are Kaiming-uniform (fan-in),
biases and norm shifts start at zero, norm scales at one; every constructor
draws from the caller's generator in declaration order, so a seed fixes the
whole model.
"""

from __future__ import annotations

import math
from typing import Optional

import numpy as np

from .autodiff import functional as F
from .autodiff.module import Module, ModuleList, Parameter
from .autodiff.tensor import Tensor, concat, mean, reshape, transpose
from .errors import ConfigError, ShapeError
from .layout import (
    WindowStack,
    crop_hw,
    global_partition,
    global_reverse,
    local_partition,
    local_reverse,
    alternate_select,
    patch_reverse,
)

INTERACTION_MODES = ("without", "local", "global", "series", "parallel")


def _kaiming_uniform(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int, dtype):
    bound = math.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Conv2d(Module):
    def __init__(
        self,
        in_channels: int,
        out_channels: int,
        kernel_size: int,
        stride: int = 1,
        padding: int = 0,
        groups: int = 1,
        bias: bool = True,
        *,
        rng: np.random.Generator,
        dtype=np.float32,
    ):
        super().__init__()
        self.stride = stride
        self.padding = padding
        self.groups = groups
        k = kernel_size
        fan_in = (in_channels // groups) * k * k
        self.weight = Parameter(
            _kaiming_uniform(rng, (out_channels, in_channels // groups, k, k), fan_in, dtype)
        )
        self.bias = Parameter(np.zeros(out_channels, dtype=dtype)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return F.conv2d(x, self.weight, self.bias, self.stride, self.padding, self.groups)


class Linear(Module):
    def __init__(self, in_features: int, out_features: int, *, rng, dtype=np.float32):
        super().__init__()
        self.weight = Parameter(
            _kaiming_uniform(rng, (out_features, in_features), in_features, dtype)
        )
        self.bias = Parameter(np.zeros(out_features, dtype=dtype))

    def forward(self, x: Tensor) -> Tensor:
        return F.linear(x, self.weight, self.bias)


class BatchNorm2d(Module):
    def __init__(self, channels: int, momentum: float = 0.1, eps: float = 1e-5, *, dtype=np.float32):
        super().__init__()
        self.momentum = momentum
        self.eps = eps
        self.gamma = Parameter(np.ones(channels, dtype=dtype))
        self.beta = Parameter(np.zeros(channels, dtype=dtype))
        self.register_buffer("running_mean", np.zeros(channels, dtype=dtype))
        self.register_buffer("running_var", np.ones(channels, dtype=dtype))

    def forward(self, x: Tensor) -> Tensor:
        return F.batch_norm(
            x, self.gamma, self.beta, self.running_mean, self.running_var,
            self.training, self.momentum, self.eps,
        )


class LayerNorm(Module):
    def __init__(self, width: int, eps: float = 1e-5, *, dtype=np.float32):
        super().__init__()
        self.eps = eps
        self.gamma = Parameter(np.ones(width, dtype=dtype))
        self.beta = Parameter(np.zeros(width, dtype=dtype))

    def forward(self, x: Tensor) -> Tensor:
        return F.layer_norm(x, self.gamma, self.beta, self.eps)


class MBConv(Module):
    """Mobile inverted bottleneck: expand 1×1 (×4), depthwise 3×3,
    squeeze-excitation (reduce 4), project 1×1, residual.  Convolutions
    followed by a norm carry no bias."""

    EXPANSION = 4
    SE_REDUCTION = 4

    def __init__(self, channels: int, *, rng, dtype=np.float32):
        super().__init__()
        mid = channels * self.EXPANSION
        squeezed = max(1, mid // self.SE_REDUCTION)
        self.expand = Conv2d(channels, mid, 1, bias=False, rng=rng, dtype=dtype)
        self.expand_norm = BatchNorm2d(mid, dtype=dtype)
        self.depthwise = Conv2d(mid, mid, 3, padding=1, groups=mid, bias=False, rng=rng, dtype=dtype)
        self.depthwise_norm = BatchNorm2d(mid, dtype=dtype)
        self.se_reduce = Conv2d(mid, squeezed, 1, rng=rng, dtype=dtype)
        self.se_expand = Conv2d(squeezed, mid, 1, rng=rng, dtype=dtype)
        self.project = Conv2d(mid, channels, 1, bias=False, rng=rng, dtype=dtype)
        self.project_norm = BatchNorm2d(channels, dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        h = F.silu(self.expand_norm(self.expand(x)))
        h = F.silu(self.depthwise_norm(self.depthwise(h)))
        gate = F.sigmoid(self.se_expand(F.silu(self.se_reduce(F.global_avg_pool(h)))))
        h = h * gate
        return x + self.project_norm(self.project(h))


class WindowAttention(Module):
    """Per-window spatial attention: mean over channels, flatten to the
    window area, LayerNorm, two-layer FFN (hidden 2×area, GELU), softmax.
    Returns one probability row per window."""

    HIDDEN_RATIO = 2

    def __init__(self, area: int, *, rng, dtype=np.float32):
        super().__init__()
        self.area = area
        self.norm = LayerNorm(area, dtype=dtype)
        self.fc1 = Linear(area, self.HIDDEN_RATIO * area, rng=rng, dtype=dtype)
        self.fc2 = Linear(self.HIDDEN_RATIO * area, area, rng=rng, dtype=dtype)

    def forward(self, ws: WindowStack) -> Tensor:
        p = ws.grid.p
        if p * p != self.area:
            raise ShapeError(f"window area {p * p} does not match FFN width {self.area}")
        lead = ws.windows.shape[:-4]
        pooled = mean(ws.windows, axis=-1)
        flat = reshape(pooled, lead + (ws.grid.num_windows, self.area))
        return F.softmax(self.fc2(F.gelu(self.fc1(self.norm(flat)))), axis=-1)


class InteractionBranch(Module):
    """Windowed attention branch over an HWC tensor.

    ``kind="local"`` partitions into contiguous P×P windows; ``kind="global"``
    displaces patches first and uses 2P×2P windows (padding as needed).
    Attention is rescaled by the window area, so uniform attention is an
    exact identity on the values.
    """

    def __init__(self, p: int, kind: str, *, rng, dtype=np.float32, parity: str = "cross"):
        super().__init__()
        if kind not in ("local", "global"):
            raise ConfigError(f"branch kind must be local or global, got {kind!r}")
        self.p = p
        self.kind = kind
        self.parity = parity
        self.window = p if kind == "local" else 2 * p
        self.attention = WindowAttention(self.window * self.window, rng=rng, dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        if self.kind == "local":
            ws = local_partition(x, self.p, pad=True)
        else:
            ws = global_partition(x, self.p, pad=True, parity=self.parity)
        attn = self.attention(ws)
        lead = attn.shape[:-2]
        attn4 = reshape(attn, lead + (ws.grid.num_windows, self.window, self.window, 1))
        weighted = ws.windows * (attn4 * float(self.window * self.window))
        out_stack = WindowStack(
            weighted, ws.grid, ws.displaced, ws.spec, ws.pad_before, ws.orig_hw
        )
        return global_reverse(out_stack) if ws.displaced else local_reverse(out_stack)


def nchw_to_hwc(x: Tensor) -> Tensor:
    return transpose(x, (0, 2, 3, 1))


def hwc_to_nchw(x: Tensor) -> Tensor:
    return transpose(x, (0, 3, 1, 2))


class SegnetrBlock(Module):
    """MBConv followed by the configured local/global interaction.

    Fusion weights are learnable scalars starting at 0.5; series mode runs
    the local branch first and feeds its fused result to the global branch,
    keeping the MBConv output as the residual base.
    """

    def __init__(
        self,
        channels: int,
        p: int,
        mode: str = "parallel",
        *,
        rng,
        dtype=np.float32,
        parity: str = "cross",
    ):
        super().__init__()
        if mode not in INTERACTION_MODES:
            raise ConfigError(f"unknown interaction mode {mode!r}; pick from {INTERACTION_MODES}")
        self.mode = mode
        self.mbconv = MBConv(channels, rng=rng, dtype=dtype)
        if mode in ("local", "series", "parallel"):
            self.local_branch = InteractionBranch(p, "local", rng=rng, dtype=dtype, parity=parity)
            self.alpha_local = Parameter(np.asarray(0.5, dtype=dtype))
        if mode in ("global", "series", "parallel"):
            self.global_branch = InteractionBranch(p, "global", rng=rng, dtype=dtype, parity=parity)
            self.alpha_global = Parameter(np.asarray(0.5, dtype=dtype))

    def forward(self, x: Tensor) -> Tensor:
        m = self.mbconv(x)
        if self.mode == "without":
            return m
        h = nchw_to_hwc(m)
        if self.mode == "local":
            out = h + self.alpha_local * self.local_branch(h)
        elif self.mode == "global":
            out = h + self.alpha_global * self.global_branch(h)
        elif self.mode == "parallel":
            out = h + self.alpha_local * self.local_branch(h) + self.alpha_global * self.global_branch(h)
        else:
            inner = h + self.alpha_local * self.local_branch(h)
            out = h + self.alpha_global * self.global_branch(inner)
        return hwc_to_nchw(out)


def irsc_fuse(
    encoder_pm: Tensor,
    decoder_up: Tensor,
    pad_before: tuple[int, int] = (0, 0),
) -> Tensor:
    """Information-retention skip: alternate-select half the merged channels,
    patch-reverse them back to encoder resolution, concatenate with the
    upsampled decoder features.  Adds no parameters.

    ``pad_before`` crops the reconstruction when the encoder's patch merge
    ran on a padded grid (odd stage resolutions).
    """
    x_pr = patch_reverse(alternate_select(encoder_pm))
    th, tw = decoder_up.shape[-3], decoder_up.shape[-2]
    x_pr = crop_hw(x_pr, pad_before[0], pad_before[1], th, tw)
    if x_pr.shape[-3] != th or x_pr.shape[-2] != tw:
        raise ShapeError(
            f"irsc_fuse: reconstructed skip {x_pr.shape} does not cover decoder {decoder_up.shape}"
        )
    return concat([decoder_up, x_pr], axis=-1)
