"""Convolutional word-image encoder and its recursive/recurrent variants.

The encoder is a ladder of four two-conv blocks (channel widths doubling,
2x2 max pooling after every block except the last) followed by two
fully-connected layers; the second FC activation is the image feature I.
Each block owns an untied entry kernel `w_untied`, a shared kernel
`w_tied` applied `iterations` times, and a single bias used by every
application.  With iterations=1 a block is a plain two-conv stack, so the
base encoder is the degenerate case and all three kinds expose exactly
the same parameter inventory regardless of iteration count.

The baseline classifier reads words out of I with `n_positions`
independent affine heads, one per character slot.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .errors import ConfigError, ShapeError
from .vocab import VOCAB_SIZE

__all__ = [
    "EncoderConfig", "recursive_block", "recurrent_block", "encode",
    "char_heads", "char_head_logits", "param_count", "encoder_param_specs",
    "head_param_specs", "feature_shape",
]


@dataclass
class EncoderConfig:
    """Structural description of the encoder ladder.

    channels lists conv output widths in layer order; consecutive pairs
    form a block, and both convs of a block must have the same width so
    the tied kernel can be reapplied.  The default ladder is the
    full-size one; tests and the toy recipe shrink it uniformly.
    """

    kind: str = "base"
    iterations: int = 1
    channels: tuple = (64, 64, 128, 128, 256, 256, 512, 512)
    input_shape: tuple = (1, 32, 100)
    fc_sizes: tuple = (4096, 4096)
    dropout_keep: float = 0.5

    def __post_init__(self):
        self.channels = tuple(self.channels)
        self.input_shape = tuple(self.input_shape)
        self.fc_sizes = tuple(self.fc_sizes)
        if self.kind not in ("base", "recursive", "recurrent"):
            raise ConfigError(f"unknown encoder kind {self.kind!r}")
        if self.iterations < 1:
            raise ConfigError(f"iterations must be >= 1, got {self.iterations}")
        if self.kind == "base" and self.iterations != 1:
            raise ConfigError("base encoder requires iterations=1")
        if len(self.channels) < 2 or len(self.channels) % 2 != 0:
            raise ConfigError(f"channels must pair into blocks, got {len(self.channels)} entries")
        for b in range(self.n_blocks):
            if self.channels[2 * b] != self.channels[2 * b + 1]:
                raise ConfigError(
                    f"block {b + 1} channels {self.channels[2 * b]} vs {self.channels[2 * b + 1]}:"
                    " tied kernel must be square in channels")
        if len(self.input_shape) != 3:
            raise ConfigError(f"input_shape must be [C,H,W], got {self.input_shape}")
        if len(self.fc_sizes) != 2:
            raise ConfigError(f"exactly two FC layers expected, got {self.fc_sizes}")
        if not 0.0 < self.dropout_keep <= 1.0:
            raise ConfigError(f"dropout_keep must be in (0,1], got {self.dropout_keep}")

    @property
    def n_blocks(self) -> int:
        return len(self.channels) // 2

    @property
    def pool_after(self) -> tuple:
        # every block but the last is followed by 2x2 pooling
        return tuple(range(1, self.n_blocks))

    @property
    def feature_size(self) -> int:
        """Width of the image feature I (second FC layer)."""
        return self.fc_sizes[1]


def feature_shape(config: EncoderConfig) -> tuple:
    """[C,H,W] entering the flatten, from the ladder geometry."""
    _, h, w = config.input_shape
    for b in range(1, config.n_blocks + 1):
        if b in config.pool_after:
            h, w = h // 2, w // 2
    return (config.channels[-1], h, w)


def recursive_block(x: Tensor, w_untied: Tensor, w_tied: Tensor, bias: Tensor,
                    iterations: int) -> Tensor:
    """Untied entry conv, then `iterations` applications of the tied conv,
    relu after every application, one bias shared throughout.

    iterations=1 is exactly a plain two-conv block.
    """
    if iterations < 1:
        raise ConfigError(f"iterations must be >= 1, got {iterations}")
    if w_tied.data.shape[0] != w_tied.data.shape[1]:
        raise ConfigError(f"tied kernel must be square in channels, got {w_tied.data.shape}")
    h = ag.relu(ag.conv2d(x, w_untied, bias))
    for _ in range(iterations):
        h = ag.relu(ag.conv2d(h, w_tied, bias))
    return h


def recurrent_block(x: Tensor, w_untied: Tensor, w_tied: Tensor, bias: Tensor,
                    iterations: int) -> Tensor:
    """Like recursive_block, but each intermediate tied step re-injects the
    untied response of the block input (bias-free, computed once); the
    final tied conv is plain so that iterations=1 coincides bitwise with
    recursive_block(iterations=1).  No extra parameters: the injection
    reuses w_untied.
    """
    if iterations < 1:
        raise ConfigError(f"iterations must be >= 1, got {iterations}")
    if w_tied.data.shape[0] != w_tied.data.shape[1]:
        raise ConfigError(f"tied kernel must be square in channels, got {w_tied.data.shape}")
    h = ag.relu(ag.conv2d(x, w_untied, bias))
    if iterations > 1:
        injected = ag.conv2d(x, w_untied)
        for _ in range(iterations - 1):
            h = ag.relu(ag.add(ag.conv2d(h, w_tied, bias), injected))
    return ag.relu(ag.conv2d(h, w_tied, bias))


_BLOCK_FNS = {"base": recursive_block, "recursive": recursive_block,
              "recurrent": recurrent_block}


def encode(image: Tensor, params: dict, config: EncoderConfig,
           train: bool = False, rng: Optional[np.random.Generator] = None,
           keep: Optional[float] = None) -> Tensor:
    """Image(s) -> feature vector I.

    image: [C,H,W] per config.input_shape, or [B,C,H,W].  Inputs are
    expected already standardized (zero mean, unit variance per image).
    Returns [feature_size] or [B, feature_size].  In train mode dropout
    follows each FC relu and `rng` is required; `keep` overrides the
    configured keep probability (the training recipe owns it).
    """
    shape = tuple(image.data.shape)
    if shape != config.input_shape and (len(shape) != 4 or shape[1:] != config.input_shape):
        raise ShapeError(f"encoder expects {config.input_shape} images, got {shape}")
    block_fn = _BLOCK_FNS[config.kind]
    h = image
    for b in range(1, config.n_blocks + 1):
        h = block_fn(h, params[f"enc.block{b}.untied"], params[f"enc.block{b}.tied"],
                     params[f"enc.block{b}.bias"], config.iterations)
        if b in config.pool_after:
            h = ag.maxpool2(h)
    h = ag.flatten_features(h)
    keep = config.dropout_keep if keep is None else keep
    for name in ("enc.fc9", "enc.fc10"):
        h = ag.relu(ag.affine(h, params[name], params[name + ".bias"]))
        h = ag.dropout(h, keep, train=train, rng=rng)
    return h


def char_head_logits(feature: Tensor, params: dict, n_positions: int) -> list:
    """Per-position affine logits as a list of [K] (or [B,K]) tensors."""
    return [ag.affine(feature, params[f"enc.head{p}"], params[f"enc.head{p}.bias"])
            for p in range(n_positions)]


def char_heads(feature: Tensor, params: dict, n_positions: int) -> Tensor:
    """Stack the per-position head logits of a single feature vector
    into [n_positions, K]."""
    if feature.data.ndim != 1:
        raise ShapeError(f"char_heads expects a single feature vector, got {feature.data.shape}")
    rows = char_head_logits(feature, params, n_positions)
    return ag.reshape(ag.concat(rows), (n_positions, rows[0].data.shape[-1]))


def encoder_param_specs(config: EncoderConfig) -> list:
    """Ordered (name, shape) pairs for the encoder ladder and FC layers."""
    specs = []
    c_in = config.input_shape[0]
    for b in range(1, config.n_blocks + 1):
        width = config.channels[2 * (b - 1)]
        specs.append((f"enc.block{b}.untied", (width, c_in, 3, 3)))
        specs.append((f"enc.block{b}.tied", (width, width, 3, 3)))
        specs.append((f"enc.block{b}.bias", (width,)))
        c_in = width
    flat = int(np.prod(feature_shape(config)))
    fc9, fc10 = config.fc_sizes
    specs.append(("enc.fc9", (fc9, flat)))
    specs.append(("enc.fc9.bias", (fc9,)))
    specs.append(("enc.fc10", (fc10, fc9)))
    specs.append(("enc.fc10.bias", (fc10,)))
    return specs


def head_param_specs(config: EncoderConfig, n_positions: int,
                     vocab_size: int = VOCAB_SIZE) -> list:
    specs = []
    for p in range(n_positions):
        specs.append((f"enc.head{p}", (vocab_size, config.feature_size)))
        specs.append((f"enc.head{p}.bias", (vocab_size,)))
    return specs


def param_count(params: dict) -> int:
    """Total number of scalar parameters in a name -> Tensor table."""
    return int(sum(t.data.size for t in params.values()))
