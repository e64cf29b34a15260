"""Whole-model assembly: configuration, parameter inventory, loss, prediction.

A model is an encoder plus one of two readouts: per-position character
heads (the baseline classifier) or one of the recurrent decoder variants.
Parameters live in an ordered name -> Tensor table whose layout is fully
determined by the config, which is what makes checkpoints and the
parameter-parity accounting straightforward.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .charrnn import (DecoderConfig, decode_greedy_batch, decode_train_batch,
                      decoder_param_specs)
from .encoder import (EncoderConfig, char_head_logits, encode,
                      encoder_param_specs, head_param_specs)
from .errors import ConfigError, ShapeError
from .vocab import NULL_INDEX, VOCAB_SIZE, decode_indices, encode_word

__all__ = ["ModelConfig", "param_specs", "model_loss", "predict_words",
           "encode_batch"]


@dataclass
class ModelConfig:
    """Encoder config plus either a decoder config or (decoder=None) the
    baseline per-position character heads."""

    encoder: EncoderConfig
    decoder: Optional[DecoderConfig] = None
    n_max: int = 23
    vocab: int = VOCAB_SIZE

    def __post_init__(self):
        if self.n_max < 1:
            raise ConfigError(f"n_max must be positive, got {self.n_max}")
        if self.decoder is not None:
            if self.decoder.feature != self.encoder.feature_size:
                raise ConfigError(
                    f"decoder feature width {self.decoder.feature} != encoder output "
                    f"{self.encoder.feature_size}")
            if self.decoder.n_max != self.n_max or self.decoder.vocab != self.vocab:
                raise ConfigError("decoder and model disagree on n_max/vocab")

    @property
    def readout(self) -> str:
        return "heads" if self.decoder is None else self.decoder.variant

    def to_dict(self) -> dict:
        enc = self.encoder
        out = {
            "encoder": {
                "kind": enc.kind, "iterations": enc.iterations,
                "channels": list(enc.channels), "input_shape": list(enc.input_shape),
                "fc_sizes": list(enc.fc_sizes), "dropout_keep": enc.dropout_keep,
            },
            "decoder": None,
            "n_max": self.n_max,
            "vocab": self.vocab,
        }
        if self.decoder is not None:
            dec = self.decoder
            out["decoder"] = {"variant": dec.variant, "hidden": dec.hidden,
                              "feature": dec.feature, "vocab": dec.vocab,
                              "n_max": dec.n_max}
        return out

    @classmethod
    def from_dict(cls, raw: dict) -> "ModelConfig":
        try:
            enc = EncoderConfig(**raw["encoder"])
            dec = DecoderConfig(**raw["decoder"]) if raw.get("decoder") else None
            return cls(encoder=enc, decoder=dec, n_max=raw["n_max"], vocab=raw["vocab"])
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"malformed model config: {exc}") from exc


def param_specs(config: ModelConfig) -> list:
    """Ordered (name, shape) pairs covering the full model."""
    specs = encoder_param_specs(config.encoder)
    if config.decoder is None:
        specs += head_param_specs(config.encoder, config.n_max, config.vocab)
    else:
        specs += decoder_param_specs(config.decoder)
    return specs


def encode_batch(params: dict, config: ModelConfig, images: Tensor,
                 train: bool = False, rng=None, keep: Optional[float] = None) -> Tensor:
    return encode(images, params, config.encoder, train=train, rng=rng, keep=keep)


def _head_targets(words: Sequence, n_max: int) -> np.ndarray:
    out = np.full((len(words), n_max), NULL_INDEX, dtype=np.int64)
    for r, word in enumerate(words):
        idx = encode_word(word) if isinstance(word, str) else list(word)
        if len(idx) > n_max:
            raise ShapeError(f"word of length {len(idx)} exceeds the {n_max} head positions")
        out[r, : len(idx)] = idx
    return out


def model_loss(params: dict, config: ModelConfig, images: Tensor, words: Sequence,
               train: bool = False, rng=None, keep: Optional[float] = None) -> Tensor:
    """Summed cross-entropy loss of a batch (divide by the batch size for
    the mean).  Heads readout: one loss per character slot, absent slots
    target NULL.  Decoder readout: teacher-forced len+1 steps per word."""
    feature = encode_batch(params, config, images, train=train, rng=rng, keep=keep)
    if config.decoder is not None:
        loss, _ = decode_train_batch(feature, words, config.decoder, params)
        return loss
    targets = _head_targets(words, config.n_max)
    loss = None
    for p, logits in enumerate(char_head_logits(feature, params, config.n_max)):
        step = ag.cross_entropy(logits, targets[:, p])
        loss = step if loss is None else ag.add(loss, step)
    return loss


def predict_words(params: dict, config: ModelConfig, images: Tensor) -> list:
    """Greedy word predictions for a batch of images (eval mode, no tape)."""
    feature = encode_batch(params, config, images, train=False)
    if config.decoder is not None:
        return decode_greedy_batch(feature, config.decoder, params)
    words = []
    logits = [t.data for t in char_head_logits(feature, params, config.n_max)]
    picks = np.stack([l.argmax(axis=1) for l in logits], axis=1)  # [B, n_max]
    for row in picks:
        words.append(decode_indices(row))
    return words
