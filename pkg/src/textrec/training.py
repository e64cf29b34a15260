"""SGD training loop: init, per-batch step, plateau-driven lr schedule.

The recipe is plain SGD over shuffled minibatches with teacher forcing,
element-wise gradient clipping, inverted dropout, and a learning rate
that starts at lr0 and divides by `lr_decay` whenever the best validation
error has not strictly improved for `patience` consecutive epochs.  The
parameters of the best-validation epoch are snapshotted and returned;
validation data never feeds the gradient.

Everything is seeded: parameter init, batch order, and dropout masks all
derive from TrainConfig.seed, so single-threaded runs are bit-reproducible.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, fields
from typing import Callable, Optional, Sequence

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .errors import ConfigError, NumericalError
from .lexicon import edit_distance
from .model import ModelConfig, model_loss, param_specs, predict_words
from .synthdata import standardize_images

__all__ = ["TrainConfig", "TrainState", "init_params", "train_step",
           "epoch_end", "evaluate_error", "char_error", "fit"]


@dataclass
class TrainConfig:
    batch_size: int = 256
    lr0: float = 0.002
    lr_decay: float = 5.0
    patience: int = 2
    clip_limit: float = 10.0
    clip_mode: str = "element"
    dropout_keep: float = 0.5
    max_epochs: int = 30
    init_std: float = 0.01
    init_mode: str = "constant"  # "constant": every weight N(0, init_std^2);
                                 # "scaled": std set per-tensor from fan-in
    seed: int = 0

    def __post_init__(self):
        if min(self.batch_size, self.max_epochs, self.patience) < 1:
            raise ConfigError("batch_size, max_epochs and patience must be >= 1")
        if min(self.lr0, self.lr_decay, self.clip_limit, self.init_std) <= 0:
            raise ConfigError("lr0, lr_decay, clip_limit and init_std must be positive")
        if not 0.0 < self.dropout_keep <= 1.0:
            raise ConfigError(f"dropout_keep must be in (0,1], got {self.dropout_keep}")
        if self.clip_mode not in ("element", "norm"):
            raise ConfigError(f"clip_mode must be element or norm, got {self.clip_mode!r}")
        if self.init_mode not in ("constant", "scaled"):
            raise ConfigError(f"init_mode must be constant or scaled, got {self.init_mode!r}")

    @classmethod
    def from_file(cls, path: str) -> "TrainConfig":
        """Parse a key=value config file ('#' starts a comment)."""
        known = {f.name: f.type for f in fields(cls)}
        raw: dict = {}
        with open(path, "r", encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise ConfigError(f"{path}:{lineno}: expected key=value, got {line!r}")
                key, value = (s.strip() for s in line.split("=", 1))
                if key not in known:
                    raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
                caster = type(getattr(cls(), key))
                try:
                    raw[key] = caster(value) if caster is not bool else value.lower() == "true"
                except ValueError as exc:
                    raise ConfigError(f"{path}:{lineno}: bad value for {key}: {value!r}") from exc
        return cls(**raw)


@dataclass
class TrainState:
    """Optimizer bookkeeping; lr is always lr0 / lr_decay^k."""

    lr0: float
    lr_decay: float
    patience: int
    epoch: int = 0
    decay_steps: int = 0
    best_error: float = math.inf
    best_epoch: int = -1
    since_improvement: int = 0
    best_params: Optional[dict] = None

    @property
    def lr(self) -> float:
        return self.lr0 / self.lr_decay ** self.decay_steps


def _fan_in(shape: tuple) -> int:
    if len(shape) == 4:  # conv kernel [C_out, C_in, kh, kw]
        return shape[1] * shape[2] * shape[3]
    if len(shape) == 2:  # affine [out, in]
        return shape[1]
    return shape[0]


def init_params(config: ModelConfig, train: TrainConfig) -> dict:
    """Fresh parameter table: weights Gaussian, biases and initial hidden
    states exactly zero.  Deterministic per seed: one rng consumed in the
    fixed spec order."""
    rng = np.random.default_rng(train.seed)
    params: dict = {}
    for name, shape in param_specs(config):
        if name.endswith((".bias", ".h0")):
            data = np.zeros(shape, dtype=np.float32)
        else:
            if train.init_mode == "constant":
                std = train.init_std
            else:
                # fan-in scaling keeps activations near unit scale through
                # the ladder; relu-fed conv/fc weights get the extra sqrt(2)
                relu_fed = name.startswith("enc.block") or name in ("enc.fc9", "enc.fc10")
                std = (math.sqrt(2.0) if relu_fed else 1.0) / math.sqrt(_fan_in(shape))
            data = (rng.standard_normal(shape) * std).astype(np.float32)
        params[name] = Tensor(data, requires_grad=True, name=name)
    return params


def train_step(params: dict, config: ModelConfig, images: np.ndarray,
               words: Sequence, lr: float, train_cfg: TrainConfig,
               rng: np.random.Generator) -> float:
    """One SGD step on a standardized batch; returns the mean loss.

    Forward under a fresh tape, backward, clip, update, zero gradients.
    A non-finite loss aborts with a diagnostic before touching parameters.
    """
    if len(words) == 0:
        raise ConfigError("empty training batch")
    batch = Tensor(images)
    with ag.Graph() as graph:
        total = model_loss(params, config, batch, words, train=True, rng=rng,
                           keep=train_cfg.dropout_keep)
        mean = ag.scale(total, 1.0 / len(words))
    loss = float(mean.data)
    if not math.isfinite(loss):
        raise NumericalError(f"non-finite training loss {loss} (batch of {len(words)})")
    ag.backward(graph, mean)
    tensors = list(params.values())
    ag.clip_gradients(tensors, limit=train_cfg.clip_limit, mode=train_cfg.clip_mode)
    for p in tensors:
        if p.grad is not None and lr != 0.0:
            p.data -= np.float32(lr) * p.grad
    ag.zero_grads(tensors)
    return loss


def epoch_end(state: TrainState, val_error: float, params: Optional[dict] = None) -> TrainState:
    """Apply the plateau rule after one epoch's validation measurement.

    Strict improvement of the best-so-far error resets the counter and
    snapshots the parameters; `patience` consecutive non-improvements
    divide the lr by the decay factor and reset the counter.
    """
    if val_error < 0:
        raise ConfigError(f"negative validation error {val_error}")
    state.epoch += 1
    if val_error < state.best_error:
        state.best_error = val_error
        state.best_epoch = state.epoch
        state.since_improvement = 0
        if params is not None:
            state.best_params = {k: v.data.copy() for k, v in params.items()}
    else:
        state.since_improvement += 1
        if state.since_improvement >= state.patience:
            state.decay_steps += 1
            state.since_improvement = 0
    return state


def _predictions(params: dict, config: ModelConfig, images: np.ndarray,
                 labels: Sequence, batch_size: int) -> list:
    preds = []
    for start in range(0, len(labels), batch_size):
        chunk = standardize_images(images[start:start + batch_size])
        preds.extend(predict_words(params, config, Tensor(chunk)))
    return preds


def evaluate_error(params: dict, config: ModelConfig, images: np.ndarray,
                   labels: Sequence, batch_size: int = 64) -> float:
    """Word error rate (1 - accuracy) of greedy predictions; images raw."""
    preds = _predictions(params, config, images, labels, batch_size)
    return sum(p != g for p, g in zip(preds, labels)) / len(labels)


def char_error(preds: Sequence, labels: Sequence) -> float:
    """Mean length-normalized edit distance; a smoother validation signal
    than word error, which sits at exactly 1.0 for many early epochs and
    would trip the plateau rule while the model is still improving."""
    total = 0.0
    for p, g in zip(preds, labels):
        total += edit_distance(p, g) / max(len(p), len(g), 1)
    return total / len(labels)


def fit(config: ModelConfig, train_cfg: TrainConfig, train_data: tuple,
        val_data: tuple, params: Optional[dict] = None,
        on_epoch: Optional[Callable] = None, log: Optional[Callable] = None) -> tuple:
    """Full training run.  train_data/val_data are (images, labels) with
    raw [N,1,H,W] images.  Returns (best params table, state, history).

    `on_epoch(state, params, row)` runs after each epoch (checkpointing
    hook); `log(msg)` receives one progress line per epoch.
    """
    images, labels = train_data
    if params is None:
        params = init_params(config, train_cfg)
    state = TrainState(lr0=train_cfg.lr0, lr_decay=train_cfg.lr_decay,
                       patience=train_cfg.patience)
    images = standardize_images(images)
    n = len(labels)
    history = []
    for epoch in range(train_cfg.max_epochs):
        order_rng = np.random.default_rng((train_cfg.seed, 7, epoch))
        drop_rng = np.random.default_rng((train_cfg.seed, 11, epoch))
        order = order_rng.permutation(n)
        lr = state.lr
        losses = []
        started = time.time()
        for lo in range(0, n, train_cfg.batch_size):
            pick = order[lo:lo + train_cfg.batch_size]
            losses.append(train_step(params, config, images[pick],
                                     [labels[i] for i in pick], lr, train_cfg, drop_rng))
        preds = _predictions(params, config, val_data[0], val_data[1],
                             batch_size=train_cfg.batch_size)
        val_error = char_error(preds, val_data[1])  # drives the lr schedule
        word_error = sum(p != g for p, g in zip(preds, val_data[1])) / len(val_data[1])
        epoch_end(state, val_error, params)
        row = {"epoch": state.epoch, "lr": lr, "train_loss": float(np.mean(losses)),
               "val_error": val_error, "word_error": word_error,
               "seconds": time.time() - started}
        history.append(row)
        if log is not None:
            log(f"epoch {row['epoch']:3d}  lr {lr:.6f}  loss {row['train_loss']:8.4f}  "
                f"val_char_err {val_error:6.4f}  val_word_err {word_error:6.4f}  "
                f"({row['seconds']:.0f}s)")
        if on_epoch is not None:
            on_epoch(state, params, row)
    best = {k: Tensor(v.copy(), requires_grad=True, name=k)
            for k, v in (state.best_params or {}).items()} or params
    return best, state, history
