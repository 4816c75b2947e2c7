"""Encoder-decoder model family with swappable heads.

The encoder is a stack of residual double-conv stages, each followed by a
strided downsampling conv; stage outputs (pre-downsample) feed the decoder
as skip connections, pairing one-to-one with the upsampling stages. An
optional single self-attention block sits at the bottleneck. There is no
skip from the raw input to the output head, so predicting the clean image
and predicting the noise are genuinely different tasks.

Parameter names partition into exactly three prefixes: "encoder." (the
backbone), "decoder." (the upsampling path), and "head." (task-specific
output layer). Freezing, checkpoint transfer, and head swaps all operate on
those prefixes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum
from math import gcd

import numpy as np

from ddep import seeding
from ddep.errors import InvalidArgumentError
from ddep.nn import (
    ParamSet,
    add,
    as_tensor,
    concat,
    conv2d,
    dense,
    global_avg_pool,
    group_norm,
    matmul,
    relu,
    reshape,
    scale,
    softmax,
    transpose,
    upsample_nearest2x,
)


class Head(Enum):
    CLASSIFIER = "classifier"
    DENOISER = "denoiser"
    SEGMENTER = "segmenter"


class TrainScope(Enum):
    ALL = "all"
    DECODER_AND_HEAD_ONLY = "decoder_and_head_only"


@dataclass(frozen=True)
class ModelConfig:
    encoder_widths: tuple = (16, 32, 64, 128)
    base_decoder_widths: tuple = (64, 32, 16, 8)
    decoder_width_multiplier: int = 1
    bottleneck_attention: bool = False
    num_classes: int = 5
    head: Head = Head.SEGMENTER
    in_channels: int = 3

    def __post_init__(self):
        object.__setattr__(self, "encoder_widths", tuple(int(w) for w in self.encoder_widths))
        object.__setattr__(
            self, "base_decoder_widths", tuple(int(w) for w in self.base_decoder_widths)
        )
        if len(self.encoder_widths) == 0:
            raise InvalidArgumentError("encoder_widths must be non-empty")
        if len(self.encoder_widths) != len(self.base_decoder_widths):
            raise InvalidArgumentError(
                f"encoder and decoder stage counts must match: "
                f"{len(self.encoder_widths)} vs {len(self.base_decoder_widths)}"
            )
        if any(w <= 0 for w in self.encoder_widths + self.base_decoder_widths):
            raise InvalidArgumentError("stage widths must be positive")
        if self.decoder_width_multiplier not in (1, 2, 3):
            raise InvalidArgumentError(
                f"decoder_width_multiplier must be 1, 2 or 3, got {self.decoder_width_multiplier}"
            )
        if self.num_classes <= 0:
            raise InvalidArgumentError("num_classes must be positive")

    @property
    def num_stages(self):
        return len(self.encoder_widths)

    @property
    def decoder_widths(self):
        return tuple(self.decoder_width_multiplier * w for w in self.base_decoder_widths)

    @property
    def spatial_divisor(self):
        return 2**self.num_stages

    def architecture_fields(self):
        """Fields that must agree for parameter transfer between models."""
        return {
            "in_channels": self.in_channels,
            "encoder_widths": self.encoder_widths,
            "base_decoder_widths": self.base_decoder_widths,
            "decoder_width_multiplier": self.decoder_width_multiplier,
            "bottleneck_attention": self.bottleneck_attention,
        }


def norm_groups(channels):
    """Largest group count <= 8 that divides the channel count."""
    return gcd(8, channels)


def _head_param_spec(config: ModelConfig):
    spec = {}
    if config.head is Head.CLASSIFIER:
        spec["head.fc.weight"] = ((config.encoder_widths[-1], config.num_classes), "dense")
        spec["head.fc.bias"] = ((config.num_classes,), "bias")
    else:
        out_ch = config.in_channels if config.head is Head.DENOISER else config.num_classes
        spec["head.out.weight"] = ((out_ch, config.decoder_widths[-1], 1, 1), "conv")
        spec["head.out.bias"] = ((out_ch,), "bias")
    return spec


def param_spec(config: ModelConfig):
    """Ordered name -> (shape, kind) table; the single source of layer shapes."""
    spec = {}

    def conv(name, cin, cout, k):
        spec[f"{name}.weight"] = ((cout, cin, k, k), "conv")
        spec[f"{name}.bias"] = ((cout,), "bias")

    def norm(name, c):
        spec[f"{name}.scale"] = ((c,), "scale")
        spec[f"{name}.shift"] = ((c,), "shift")

    cin = config.in_channels
    for i, w in enumerate(config.encoder_widths, start=1):
        base = f"encoder.stage{i}"
        conv(f"{base}.conv1", cin, w, 3)
        norm(f"{base}.norm1", w)
        conv(f"{base}.conv2", w, w, 3)
        norm(f"{base}.norm2", w)
        if cin != w:
            conv(f"{base}.proj", cin, w, 1)
        conv(f"{base}.down", w, w, 3)
        norm(f"{base}.dnorm", w)
        cin = w

    if config.bottleneck_attention:
        c = config.encoder_widths[-1]
        norm("encoder.attn.norm", c)
        for part in ("q", "k", "v", "proj"):
            spec[f"encoder.attn.{part}.weight"] = ((c, c), "dense")
            spec[f"encoder.attn.{part}.bias"] = ((c,), "bias")

    cin = config.encoder_widths[-1]
    skip_widths = list(reversed(config.encoder_widths))
    for j, w in enumerate(config.decoder_widths, start=1):
        base = f"decoder.stage{j}"
        conv(f"{base}.up", cin, w, 3)
        norm(f"{base}.unorm", w)
        conv(f"{base}.fuse", w + skip_widths[j - 1], w, 3)
        norm(f"{base}.fnorm", w)
        cin = w

    spec.update(_head_param_spec(config))
    return spec


def _init_array(shape, kind, rng):
    if kind == "conv":
        fan_in = shape[1] * shape[2] * shape[3]
        return (rng.standard_normal(shape) * math.sqrt(2.0 / fan_in)).astype(np.float32)
    if kind == "dense":
        fan_in = shape[0]
        return (rng.standard_normal(shape) * math.sqrt(2.0 / fan_in)).astype(np.float32)
    if kind == "bias" or kind == "shift":
        return np.zeros(shape, dtype=np.float32)
    if kind == "scale":
        return np.ones(shape, dtype=np.float32)
    raise InvalidArgumentError(f"unknown parameter kind {kind!r}")


@dataclass
class Model:
    config: ModelConfig
    params: ParamSet
    seed: int = 0

    def digest(self, prefix=""):
        return self.params.byte_digest(prefix)


def build_model(config: ModelConfig, seed) -> Model:
    """Deterministically initialize a model from (config, seed).

    He-normal for conv/dense weights, zeros for biases and norm shifts, ones
    for norm scales. Backbone and head draw from separate streams so a later
    head swap can re-initialize the head without touching backbone draws.
    """
    body_rng = seeding.stream(seed, seeding.TAG_INIT)
    head_rng = seeding.stream(seed, seeding.TAG_HEAD)
    params = ParamSet()
    for name, (shape, kind) in param_spec(config).items():
        rng = head_rng if name.startswith("head.") else body_rng
        params.add(name, _init_array(shape, kind, rng), decay=kind in ("conv", "dense"))
    return Model(config=config, params=params, seed=int(seed))


def _conv_block(params, name, x, stride=1, padding=1):
    h = conv2d(x, params[f"{name}.weight"].tensor, params[f"{name}.bias"].tensor,
               stride=stride, padding=padding)
    return h


def _norm_relu(params, name, x):
    c = x.shape[1]
    h = group_norm(x, params[f"{name}.scale"].tensor, params[f"{name}.shift"].tensor,
                   groups=norm_groups(c))
    return relu(h)


def _residual_stage(params, base, x, width):
    h = _norm_relu(params, f"{base}.norm1", _conv_block(params, f"{base}.conv1", x))
    h = group_norm(
        _conv_block(params, f"{base}.conv2", h),
        params[f"{base}.norm2.scale"].tensor,
        params[f"{base}.norm2.shift"].tensor,
        groups=norm_groups(width),
    )
    shortcut = x
    if x.shape[1] != width:
        shortcut = _conv_block(params, f"{base}.proj", x, padding=0)
    return relu(add(h, shortcut))


def _bottleneck_attention(params, x):
    B, C, H, W = x.shape
    z = group_norm(
        x,
        params["encoder.attn.norm.scale"].tensor,
        params["encoder.attn.norm.shift"].tensor,
        groups=norm_groups(C),
    )
    tokens = transpose(reshape(z, (B, C, H * W)), (0, 2, 1))
    q = dense(tokens, params["encoder.attn.q.weight"].tensor, params["encoder.attn.q.bias"].tensor)
    k = dense(tokens, params["encoder.attn.k.weight"].tensor, params["encoder.attn.k.bias"].tensor)
    v = dense(tokens, params["encoder.attn.v.weight"].tensor, params["encoder.attn.v.bias"].tensor)
    att = softmax(scale(matmul(q, transpose(k, (0, 2, 1))), 1.0 / math.sqrt(C)), axis=-1)
    ctx = dense(
        matmul(att, v),
        params["encoder.attn.proj.weight"].tensor,
        params["encoder.attn.proj.bias"].tensor,
    )
    back = reshape(transpose(ctx, (0, 2, 1)), (B, C, H, W))
    return add(x, back)


def _encode(model: Model, x, ablate_skips):
    cfg, params = model.config, model.params
    skips = []
    h = x
    for i, w in enumerate(cfg.encoder_widths, start=1):
        base = f"encoder.stage{i}"
        h = _residual_stage(params, base, h, w)
        if i in ablate_skips:
            skips.append(as_tensor(np.zeros_like(h.data)))
        else:
            skips.append(h)
        h = _norm_relu(params, f"{base}.dnorm", _conv_block(params, f"{base}.down", h, stride=2))
    if cfg.bottleneck_attention:
        h = _bottleneck_attention(params, h)
    return h, skips


def forward(model: Model, x, ablate_skips=()):
    """Run the model on a (B, C, H, W) batch; returns the head output Tensor.

    Classifier: (B, num_classes) logits from the pooled bottleneck.
    Denoiser: (B, in_channels, H, W). Segmenter: (B, num_classes, H, W).
    `ablate_skips` zeroes the named encoder stages' skip features
    (diagnostic only).
    """
    cfg, params = model.config, model.params
    x = as_tensor(x)
    if x.data.ndim != 4 or x.shape[1] != cfg.in_channels:
        raise InvalidArgumentError(
            f"expected input (B, {cfg.in_channels}, H, W), got {x.shape}"
        )
    div = cfg.spatial_divisor
    if x.shape[2] % div or x.shape[3] % div:
        raise InvalidArgumentError(
            f"spatial extents {x.shape[2]}x{x.shape[3]} must be divisible by {div}"
        )

    h, skips = _encode(model, x, frozenset(ablate_skips))

    if cfg.head is Head.CLASSIFIER:
        pooled = global_avg_pool(h)
        return dense(pooled, params["head.fc.weight"].tensor, params["head.fc.bias"].tensor)

    for j in range(1, cfg.num_stages + 1):
        base = f"decoder.stage{j}"
        h = _norm_relu(params, f"{base}.unorm",
                       _conv_block(params, f"{base}.up", upsample_nearest2x(h)))
        h = concat([h, skips[cfg.num_stages - j]], axis=1)
        h = _norm_relu(params, f"{base}.fnorm", _conv_block(params, f"{base}.fuse", h))

    return conv2d(h, params["head.out.weight"].tensor, params["head.out.bias"].tensor,
                  stride=1, padding=0)


def set_trainable(model: Model, scope: TrainScope) -> Model:
    """Mark parameters trainable per scope; frozen ones skip grads and updates."""
    freeze_encoder = scope is TrainScope.DECODER_AND_HEAD_ONLY
    for name, p in model.params.items():
        p.set_trainable(not (freeze_encoder and name.startswith("encoder.")))
    return model


def swap_head(model: Model, new_head: Head, num_classes, seed) -> Model:
    """Replace the head, preserving encoder and decoder parameters bit-for-bit.

    The new head is freshly initialized from `seed`; the returned model owns
    copies of the backbone arrays, so the source model is left untouched.
    """
    new_config = replace(model.config, head=new_head, num_classes=int(num_classes))
    head_rng = seeding.stream(seed, seeding.TAG_HEAD)
    params = ParamSet()
    for name, (shape, kind) in param_spec(new_config).items():
        if name.startswith("head."):
            params.add(name, _init_array(shape, kind, head_rng), decay=kind in ("conv", "dense"))
        else:
            src = model.params[name]
            p = params.add(name, src.data.copy(), decay=src.decay)
            p.set_trainable(src.trainable)
    return Model(config=new_config, params=params, seed=int(seed))


def load_params(model: Model, arrays, prefixes=("encoder.", "decoder.", "head.")):
    """Copy matching named arrays into the model (shape-checked).

    Only names that both exist in the model and start with one of `prefixes`
    are applied; the number applied is returned.
    """
    applied = 0
    for name, value in arrays.items():
        if not name.startswith(tuple(prefixes)) or name not in model.params:
            continue
        p = model.params[name]
        if p.data.shape != value.shape:
            raise InvalidArgumentError(
                f"parameter {name!r} shape mismatch: model {p.data.shape} vs loaded {value.shape}"
            )
        p.data = value.astype(np.float32, copy=True)
        applied += 1
    return applied
