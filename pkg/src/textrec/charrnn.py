"""Character-sequence decoders over a fixed image feature vector.

Five variants share one recurrence, h_t = tanh(W_xh x_t + W_hh h_{t-1} + b),
and differ only in what feeds each stack's x-slot:

  rnn1c     single stack; the feature vector enters once at t=0 through its
            own projection, later steps see only the previous character.
  rnn1u     single stack; concat(feature, prev-char one-hot) at every step.
  rnn2u     two stacks; stack1 = concat(feature, prev char),
            stack2 = concat(feature, h1).
  rnn2f     two stacks; stack1 sees only the previous character (a pure
            language model), stack2 = concat(feature, h1).
  rnn_atten rnn2f with soft attention: energies tau = tanh(phi f + psi h1)
            are softmax-normalized over the feature components and the
            context c = alpha * f replaces the raw feature in stack2.

Training teacher-forces the previous character; the one-hot of the start
symbol is the zero vector, and every word is supervised for len+1 steps
with the end-of-word NULL as the final target.  Inference feeds back the
argmax character and stops at NULL.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .errors import ConfigError, DataError, ShapeError
from .vocab import NULL_INDEX, VOCAB_SIZE, decode_indices, encode_word

__all__ = [
    "DecoderConfig", "VARIANTS", "rnn_step", "attention_step",
    "decode_train", "decode_train_batch", "decode_greedy",
    "decode_greedy_batch", "decoder_param_specs",
]

VARIANTS = ("rnn1c", "rnn1u", "rnn2u", "rnn2f", "rnn_atten")


@dataclass
class DecoderConfig:
    variant: str = "rnn2f"
    hidden: int = 1024
    feature: int = 4096
    vocab: int = VOCAB_SIZE
    n_max: int = 23

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown decoder variant {self.variant!r}")
        if min(self.hidden, self.feature, self.vocab, self.n_max) < 1:
            raise ConfigError("decoder dimensions must be positive")

    @property
    def two_stack(self) -> bool:
        return self.variant in ("rnn2u", "rnn2f", "rnn_atten")

    @property
    def max_steps(self) -> int:
        return self.n_max + 1

    @property
    def stack1_input(self) -> int:
        if self.variant in ("rnn1u", "rnn2u"):
            return self.feature + self.vocab
        return self.vocab  # rnn1c (t>0), rnn2f, rnn_atten

    @property
    def stack2_input(self) -> int:
        return self.feature + self.hidden  # context width equals feature width


def decoder_param_specs(config: DecoderConfig) -> list:
    """Ordered (name, shape) pairs for the chosen variant."""
    m, d, k = config.hidden, config.feature, config.vocab
    specs = [
        ("dec.stack1.wxh", (m, config.stack1_input)),
        ("dec.stack1.whh", (m, m)),
        ("dec.stack1.bias", (m,)),
        ("dec.stack1.h0", (m,)),
    ]
    if config.variant == "rnn1c":
        specs.append(("dec.stack1.wxi", (m, d)))
    if config.two_stack:
        specs += [
            ("dec.stack2.wxh", (m, config.stack2_input)),
            ("dec.stack2.whh", (m, m)),
            ("dec.stack2.bias", (m,)),
            ("dec.stack2.h0", (m,)),
        ]
    if config.variant == "rnn_atten":
        specs += [("dec.attn.phi", (d, d)), ("dec.attn.psi", (d, m))]
    specs += [("dec.head", (k, m)), ("dec.head.bias", (k,))]
    return specs


def rnn_step(x: Tensor, h_prev: Tensor, w_xh: Tensor, w_hh: Tensor, bias: Tensor) -> Tensor:
    """h = tanh(W_xh x + W_hh h_prev + b); x: [D_in] or [B,D_in]."""
    return ag.tanh(ag.add(ag.affine(x, w_xh), ag.affine(h_prev, w_hh, bias)))


def attention_step(feature: Tensor, state: Tensor, phi: Tensor, psi: Tensor):
    """Soft attention over the components of the feature vector.

    tau = tanh(phi f + psi s); alpha = softmax(tau); c = alpha * f.
    Returns (alpha, c), each shaped like `feature`.
    """
    tau = ag.tanh(ag.add(ag.affine(feature, phi), ag.affine(state, psi)))
    alpha = ag.softmax(tau)
    return alpha, ag.hadamard(alpha, feature)


def _onehot_rows(indices: np.ndarray, width: int, dtype) -> Tensor:
    rows = np.zeros((indices.shape[0], width), dtype=dtype)
    valid = indices >= 0  # negative index encodes the start symbol (all zeros)
    rows[np.nonzero(valid)[0], indices[valid]] = 1
    return Tensor._wrap(rows, False)


class _Stepper:
    """Batched per-step wiring shared by training and greedy decoding."""

    def __init__(self, feature: Tensor, params: dict, config: DecoderConfig):
        if feature.data.ndim != 2 or feature.data.shape[1] != config.feature:
            raise ShapeError(
                f"decoder expects features [B,{config.feature}], got {feature.data.shape}")
        self.f = feature
        self.p = params
        self.c = config
        batch = feature.data.shape[0]
        self.h1 = ag.broadcast_rows(params["dec.stack1.h0"], batch)
        self.h2 = ag.broadcast_rows(params["dec.stack2.h0"], batch) if config.two_stack else None
        self.t = 0
        self.last_alpha: Optional[Tensor] = None

    def step(self, prev_indices: np.ndarray) -> Tensor:
        """Advance one time step; prev_indices < 0 mean the start symbol.
        Returns the [B, K] logits for this step."""
        p, c = self.p, self.c
        prev = _onehot_rows(prev_indices, c.vocab, self.f.data.dtype)
        if c.variant == "rnn1c" and self.t == 0:
            x1, w1 = self.f, p["dec.stack1.wxi"]
        elif c.variant in ("rnn1u", "rnn2u"):
            x1, w1 = ag.concat([self.f, prev]), p["dec.stack1.wxh"]
        else:
            x1, w1 = prev, p["dec.stack1.wxh"]
        self.h1 = rnn_step(x1, self.h1, w1, p["dec.stack1.whh"], p["dec.stack1.bias"])
        top = self.h1
        if c.two_stack:
            if c.variant == "rnn_atten":
                self.last_alpha, ctx = attention_step(
                    self.f, self.h1, p["dec.attn.phi"], p["dec.attn.psi"])
                x2 = ag.concat([ctx, self.h1])
            else:
                x2 = ag.concat([self.f, self.h1])
            self.h2 = rnn_step(x2, self.h2, p["dec.stack2.wxh"],
                               p["dec.stack2.whh"], p["dec.stack2.bias"])
            top = self.h2
        self.t += 1
        return ag.affine(top, p["dec.head"], p["dec.head.bias"])


def _as_indices(target, n_max: int) -> list:
    indices = encode_word(target) if isinstance(target, str) else list(target)
    if len(indices) > n_max:
        raise DataError(f"target length {len(indices)} exceeds the {n_max}-step limit")
    if any(not 0 <= i < VOCAB_SIZE for i in indices):
        raise DataError(f"target index out of vocabulary range: {indices}")
    return indices


def decode_train_batch(feature: Tensor, targets: Sequence, config: DecoderConfig,
                       params: dict):
    """Teacher-forced loss over a batch: sum over samples and their len+1
    supervised steps of the per-step cross-entropy.  `targets` are words
    (strings or index sequences).  Returns (loss scalar tensor, per-step
    logits list); divide by len(targets) for the mean."""
    idx = [_as_indices(t, config.n_max) for t in targets]
    batch = len(idx)
    if feature.data.shape[0] != batch:
        raise ShapeError(f"{batch} targets for {feature.data.shape[0]} feature rows")
    lens = np.array([len(i) for i in idx])
    steps = int(lens.max()) + 1
    padded = np.full((batch, steps), NULL_INDEX, dtype=np.int64)
    for r, seq in enumerate(idx):
        padded[r, : len(seq)] = seq

    stepper = _Stepper(feature, params, config)
    loss = None
    logits_per_step = []
    for t in range(steps):
        prev = padded[:, t - 1] if t > 0 else np.full(batch, -1, dtype=np.int64)
        logits = stepper.step(prev)
        logits_per_step.append(logits)
        weights = (lens >= t).astype(feature.data.dtype)  # step len(word) targets NULL
        step_loss = ag.cross_entropy(logits, padded[:, t], weights=weights)
        loss = step_loss if loss is None else ag.add(loss, step_loss)
    return loss, logits_per_step


def decode_train(feature: Tensor, target, config: DecoderConfig, params: dict):
    """Single-sample teacher-forced pass: returns ([steps, K] logits, loss)."""
    if feature.data.ndim != 1:
        raise ShapeError(f"decode_train expects a single feature vector, got {feature.data.shape}")
    row = ag.reshape(feature, (1, feature.data.shape[0]))
    loss, logits_rows = decode_train_batch(row, [target], config, params)
    stacked = ag.reshape(ag.concat(logits_rows), (len(logits_rows), config.vocab))
    return stacked, loss


def decode_greedy_batch(feature: Tensor, config: DecoderConfig, params: dict) -> list:
    """Greedy autoregressive decoding of each feature row; stops per row at
    NULL or after n_max characters.  Ties take the lowest class index."""
    batch = feature.data.shape[0]
    stepper = _Stepper(feature, params, config)
    prev = np.full(batch, -1, dtype=np.int64)
    done = np.zeros(batch, dtype=bool)
    emitted: list[list[int]] = [[] for _ in range(batch)]
    for _ in range(config.n_max):
        logits = stepper.step(prev).data
        pick = logits.argmax(axis=1)  # first max = lowest index on ties
        for r in range(batch):
            if not done[r]:
                if pick[r] == NULL_INDEX:
                    done[r] = True
                else:
                    emitted[r].append(int(pick[r]))
        if done.all():
            break
        prev = pick
    return [decode_indices(seq) for seq in emitted]


def decode_greedy(feature: Tensor, config: DecoderConfig, params: dict) -> str:
    """Greedy decode of a single feature vector into a word string."""
    if feature.data.ndim != 1:
        raise ShapeError(f"decode_greedy expects a single feature vector, got {feature.data.shape}")
    row = Tensor._wrap(feature.data[None], False)
    return decode_greedy_batch(row, config, params)[0]
