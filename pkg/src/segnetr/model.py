"""Model assembly: SegNetr / SegNetr-S and a mini U-Net baseline.

Geometry: a stride-2 stem halves the input, then four encoder stages run at
resolution/2^(s+1) with channels (C, 2C, 4C, 8C) and the local patch
schedule (default 8, 4, 2, 1; global windows are always 2P).  Each stage ends
with patch merge (cached for the skip path) and a 1×1 projection; the decoder
mirrors the encoder with bilinear ×2 upsampling, skip fusion, a 1×1
projection, and the same blocks.  The head is a 1×1 conv to num_classes
followed by a final ×2 upsample back to the input resolution.

Odd stage resolutions (e.g. 7×7 from a 112 input) are handled by padding
before patch merge and cropping after the matching upsample, recorded per
stage so the round trip is exact.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from .autodiff import functional as F
from .autodiff.module import Module, ModuleList
from .autodiff.tensor import Tensor, concat
from .blocks import (
    INTERACTION_MODES,
    BatchNorm2d,
    Conv2d,
    SegnetrBlock,
    hwc_to_nchw,
    irsc_fuse,
    nchw_to_hwc,
)
from .errors import ConfigError, ContractError, ShapeError
from .layout import pad_to_multiple, patch_merge

NUM_STAGES = 4
STAGE_MULTIPLIERS = (1, 2, 4, 8)
VARIANTS = ("segnetr", "segnetr-s", "mini-unet")
SKIP_MODES = ("irsc", "concat")

_VARIANT_CHANNELS = {"segnetr": 64, "segnetr-s": 32, "mini-unet": 16}


@dataclass
class ModelConfig:
    variant: str = "segnetr"
    base_channels: Optional[int] = None
    patch_schedule: tuple[int, ...] = (8, 4, 2, 1)
    interaction_mode: str = "parallel"
    skip_mode: str = "irsc"
    num_classes: int = 2
    resolution: int = 224
    depths: tuple[int, ...] = (1, 1, 1, 1)
    seed: int = 0

    def __post_init__(self):
        if isinstance(self.patch_schedule, list):
            self.patch_schedule = tuple(self.patch_schedule)
        if isinstance(self.depths, list):
            self.depths = tuple(self.depths)
        if self.base_channels is None:
            self.base_channels = _VARIANT_CHANNELS.get(self.variant)

    @property
    def channels(self) -> tuple[int, ...]:
        return tuple(self.base_channels * m for m in STAGE_MULTIPLIERS)

    def stage_resolutions(self) -> tuple[int, ...]:
        return tuple(self.resolution // 2 ** (s + 1) for s in range(NUM_STAGES))

    def validate(self) -> None:
        """Raise ConfigError naming the first violated constraint."""
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.base_channels is None or self.base_channels < 2 or self.base_channels % 2:
            raise ConfigError(
                f"base_channels must be a positive even integer, got {self.base_channels!r}"
            )
        if self.interaction_mode not in INTERACTION_MODES:
            raise ConfigError(
                f"interaction_mode must be one of {INTERACTION_MODES}, got {self.interaction_mode!r}"
            )
        if self.skip_mode not in SKIP_MODES:
            raise ConfigError(f"skip_mode must be one of {SKIP_MODES}, got {self.skip_mode!r}")
        if self.num_classes < 2:
            raise ConfigError(f"num_classes must be at least 2, got {self.num_classes}")
        if len(self.depths) != NUM_STAGES or any(d < 1 for d in self.depths):
            raise ConfigError(f"depths must be {NUM_STAGES} positive integers, got {self.depths}")
        if self.resolution < 32 or self.resolution % 2**NUM_STAGES:
            raise ConfigError(
                f"resolution must be a multiple of {2**NUM_STAGES} and at least 32 "
                f"(stage resolutions {self.resolution}/2^(s+1) must be integers), "
                f"got {self.resolution}"
            )
        if len(self.patch_schedule) != NUM_STAGES or any(p < 1 for p in self.patch_schedule):
            raise ConfigError(
                f"patch_schedule must be {NUM_STAGES} positive integers, got {self.patch_schedule}"
            )
        for s, (p, r) in enumerate(zip(self.patch_schedule, self.stage_resolutions())):
            if r % p:
                raise ConfigError(
                    f"patch size {p} does not divide stage {s} resolution {r} "
                    f"(schedule {self.patch_schedule} at resolution {self.resolution})"
                )

    # -- JSON round trip -------------------------------------------------------

    def to_json(self) -> str:
        d = asdict(self)
        d["patch_schedule"] = list(self.patch_schedule)
        d["depths"] = list(self.depths)
        return json.dumps(d, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "ModelConfig":
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigError("config JSON must be an object")
        known = set(cls.__dataclass_fields__)
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**raw)

    @classmethod
    def load(cls, path: str) -> "ModelConfig":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_json(fh.read())


class SegnetrModel(Module):
    def __init__(self, cfg: ModelConfig, *, dtype=np.float32, parity: str = "cross"):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        rng = np.random.default_rng(cfg.seed)
        chans = cfg.channels
        c0 = chans[0]

        self.stem = Conv2d(3, c0, 3, stride=2, padding=1, bias=False, rng=rng, dtype=dtype)
        self.stem_norm = BatchNorm2d(c0, dtype=dtype)

        self.encoder_stages = ModuleList()
        self.merge_projections = ModuleList()
        for s in range(NUM_STAGES):
            blocks = ModuleList(
                SegnetrBlock(
                    chans[s], cfg.patch_schedule[s], cfg.interaction_mode,
                    rng=rng, dtype=dtype, parity=parity,
                )
                for _ in range(cfg.depths[s])
            )
            self.encoder_stages.append(blocks)
            out_c = chans[s + 1] if s + 1 < NUM_STAGES else chans[-1]
            self.merge_projections.append(Conv2d(4 * chans[s], out_c, 1, rng=rng, dtype=dtype))

        self.fuse_projections = ModuleList()
        self.decoder_stages = ModuleList()
        for s in reversed(range(NUM_STAGES)):
            carry = chans[s + 1] if s + 1 < NUM_STAGES else chans[-1]
            skip_c = chans[s] // 2 if cfg.skip_mode == "irsc" else chans[s]
            self.fuse_projections.append(Conv2d(carry + skip_c, chans[s], 1, rng=rng, dtype=dtype))
            blocks = ModuleList(
                SegnetrBlock(
                    chans[s], cfg.patch_schedule[s], cfg.interaction_mode,
                    rng=rng, dtype=dtype, parity=parity,
                )
                for _ in range(cfg.depths[s])
            )
            self.decoder_stages.append(blocks)

        self.head = Conv2d(c0, cfg.num_classes, 1, rng=rng, dtype=dtype)
        # At depth 8 the 0.5-weighted branch fusion compounds activation scale
        # by ~2x per block, which stalls optimization at a fixed 1e-4 learning
        # rate.  Ramping the fusion weights from zero (they stay learnable and
        # lift off immediately) and starting the head at zero logits keeps the
        # assembled model trainable; standalone blocks keep the 0.5 init.
        self.head.weight.data[...] = 0
        for name, p in self.named_parameters():
            if name.endswith(("alpha_local", "alpha_global")):
                p.data[...] = 0
        self.skips_consumed = 0

    def forward(self, x: Tensor) -> Tensor:
        res = self.cfg.resolution
        if x.ndim != 4 or x.shape[1] != 3 or x.shape[2] != res or x.shape[3] != res:
            raise ShapeError(f"expected input (N, 3, {res}, {res}), got {x.shape}")
        y = F.silu(self.stem_norm(self.stem(x)))
        skips = []
        for s in range(NUM_STAGES):
            for block in self.encoder_stages[s]:
                y = block(y)
            padded, before, _ = pad_to_multiple(nchw_to_hwc(y), 2)
            merged = patch_merge(padded)
            skips.append((y if self.cfg.skip_mode == "concat" else merged, before))
            y = self.merge_projections[s](hwc_to_nchw(merged))
        resolutions = self.cfg.stage_resolutions()
        for i, s in enumerate(reversed(range(NUM_STAGES))):
            y = F.bilinear_upsample2x(y)
            r = resolutions[s]
            payload, before = skips.pop()
            if self.cfg.skip_mode == "irsc":
                up = _crop_square(nchw_to_hwc(y), before, r)
                y = hwc_to_nchw(irsc_fuse(payload, up, before))
            else:
                y = _crop_square_nchw(y, before, r)
                y = concat([y, payload], axis=1)
            self.skips_consumed += 1
            y = self.fuse_projections[i](y)
            for block in self.decoder_stages[i]:
                y = block(y)
        if skips:
            raise ContractError(f"{len(skips)} cached skip tensors were never consumed")
        logits = self.head(y)
        return F.bilinear_upsample2x(logits)


def _crop_square(hwc: Tensor, before: tuple[int, int], r: int) -> Tensor:
    from .layout import crop_hw

    return crop_hw(hwc, before[0], before[1], r, r)


def _crop_square_nchw(y: Tensor, before: tuple[int, int], r: int) -> Tensor:
    if y.shape[-1] == r and y.shape[-2] == r:
        return y
    from .autodiff.tensor import slice_

    top, left = before
    return slice_(y, (Ellipsis, slice(top, top + r), slice(left, left + r)))


class DoubleConv(Module):
    """Two 3×3 conv + norm + SiLU layers at constant width."""

    def __init__(self, channels: int, *, rng, dtype=np.float32):
        super().__init__()
        self.conv1 = Conv2d(channels, channels, 3, padding=1, bias=False, rng=rng, dtype=dtype)
        self.norm1 = BatchNorm2d(channels, dtype=dtype)
        self.conv2 = Conv2d(channels, channels, 3, padding=1, bias=False, rng=rng, dtype=dtype)
        self.norm2 = BatchNorm2d(channels, dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        h = F.silu(self.norm1(self.conv1(x)))
        return F.silu(self.norm2(self.conv2(h)))


class MiniUnet(Module):
    """Four-stage double-conv U-Net sharing SegNetr's downsampling skeleton
    (patch merge + 1×1 projection), so the IRSC skip plugs in unchanged."""

    def __init__(self, cfg: ModelConfig, *, dtype=np.float32):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        rng = np.random.default_rng(cfg.seed)
        chans = cfg.channels
        c0 = chans[0]

        self.stem = Conv2d(3, c0, 3, stride=2, padding=1, bias=False, rng=rng, dtype=dtype)
        self.stem_norm = BatchNorm2d(c0, dtype=dtype)
        self.encoder_stages = ModuleList()
        self.merge_projections = ModuleList()
        for s in range(NUM_STAGES):
            self.encoder_stages.append(DoubleConv(chans[s], rng=rng, dtype=dtype))
            out_c = chans[s + 1] if s + 1 < NUM_STAGES else chans[-1]
            self.merge_projections.append(Conv2d(4 * chans[s], out_c, 1, rng=rng, dtype=dtype))
        self.fuse_projections = ModuleList()
        self.decoder_stages = ModuleList()
        for s in reversed(range(NUM_STAGES)):
            carry = chans[s + 1] if s + 1 < NUM_STAGES else chans[-1]
            skip_c = chans[s] // 2 if cfg.skip_mode == "irsc" else chans[s]
            self.fuse_projections.append(Conv2d(carry + skip_c, chans[s], 1, rng=rng, dtype=dtype))
            self.decoder_stages.append(DoubleConv(chans[s], rng=rng, dtype=dtype))
        self.head = Conv2d(c0, cfg.num_classes, 1, rng=rng, dtype=dtype)
        self.skips_consumed = 0

    def forward(self, x: Tensor) -> Tensor:
        res = self.cfg.resolution
        if x.ndim != 4 or x.shape[1] != 3 or x.shape[2] != res or x.shape[3] != res:
            raise ShapeError(f"expected input (N, 3, {res}, {res}), got {x.shape}")
        y = F.silu(self.stem_norm(self.stem(x)))
        skips = []
        for s in range(NUM_STAGES):
            y = self.encoder_stages[s](y)
            padded, before, _ = pad_to_multiple(nchw_to_hwc(y), 2)
            merged = patch_merge(padded)
            skips.append((y if self.cfg.skip_mode == "concat" else merged, before))
            y = self.merge_projections[s](hwc_to_nchw(merged))
        resolutions = self.cfg.stage_resolutions()
        for i, s in enumerate(reversed(range(NUM_STAGES))):
            y = F.bilinear_upsample2x(y)
            r = resolutions[s]
            payload, before = skips.pop()
            if self.cfg.skip_mode == "irsc":
                up = _crop_square(nchw_to_hwc(y), before, r)
                y = hwc_to_nchw(irsc_fuse(payload, up, before))
            else:
                y = _crop_square_nchw(y, before, r)
                y = concat([y, payload], axis=1)
            self.skips_consumed += 1
            y = self.fuse_projections[i](y)
            y = self.decoder_stages[i](y)
        logits = self.head(y)
        return F.bilinear_upsample2x(logits)


def build(cfg: ModelConfig, *, dtype=np.float32, parity: str = "cross") -> Module:
    """Construct the model named by ``cfg.variant`` (seeded, deterministic)."""
    cfg.validate()
    if cfg.variant == "mini-unet":
        return MiniUnet(cfg, dtype=dtype)
    return SegnetrModel(cfg, dtype=dtype, parity=parity)
