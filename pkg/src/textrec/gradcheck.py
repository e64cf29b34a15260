"""Reduced-dimension finite-difference oracle suite.

Checks every kernel type and all five decoder variants end to end on a
width-reduced model (two-block ladder, 8x24 input, 16-wide feature,
8-wide hidden state), comparing analytic gradients against central
differences at eps=1e-3.  Models are built in float64 so the difference
quotient is limited by truncation, not rounding.  The whole suite is
sized to finish in well under two minutes on one core.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .charrnn import DecoderConfig, VARIANTS, attention_step
from .encoder import EncoderConfig, recurrent_block, recursive_block
from .model import ModelConfig, model_loss, param_specs

__all__ = ["run_suite", "TOLERANCE", "EPS"]

TOLERANCE = 1e-2
EPS = 1e-3

_REDUCED_ENCODER = dict(channels=(4, 4, 8, 8), input_shape=(1, 8, 24), fc_sizes=(16, 16))


def _t(rng, shape, scale=0.5):
    return Tensor(rng.standard_normal(shape) * scale, dtype=np.float64)


def _layer_checks(rng) -> list:
    """(name, f, x) triples exercising each kernel in isolation."""
    checks = []
    x_img = _t(rng, (2, 5, 7))
    w = _t(rng, (3, 2, 3, 3))
    b = _t(rng, (3,), 0.1)
    checks.append(("conv2d", lambda t: ag.sum_(ag.tanh(ag.conv2d(x_img, t, b))), w))
    checks.append(("conv2d-input", lambda t: ag.sum_(ag.tanh(ag.conv2d(t, w, b))), x_img))

    # distinct integers: argmax ties impossible, offsets stay > eps
    pool_in = Tensor(rng.permutation(2 * 6 * 8).reshape(2, 6, 8), dtype=np.float64)
    checks.append(("maxpool2", lambda t: ag.sum_(ag.tanh(ag.scale(ag.maxpool2(t), 0.1))), pool_in))

    xa = _t(rng, (3, 6))
    wa = _t(rng, (4, 6))
    ba = _t(rng, (4,), 0.1)
    checks.append(("affine", lambda t: ag.sum_(ag.tanh(ag.affine(xa, t, ba))), wa))

    xr = Tensor(rng.standard_normal(40) + np.sign(rng.standard_normal(40)) * 0.3,
                dtype=np.float64)
    checks.append(("relu", lambda t: ag.sum_(ag.hadamard(ag.relu(t), ag.relu(t))), xr))
    checks.append(("tanh", lambda t: ag.sum_(ag.tanh(t)), _t(rng, (30,))))

    xs = _t(rng, (4, 9))
    checks.append(("softmax", lambda t: ag.sum_(ag.hadamard(ag.softmax(t), ag.softmax(t))), xs))
    checks.append(("cross_entropy", lambda t: ag.cross_entropy(t, [1, 5, 8, 0]), xs))

    ha = _t(rng, (25,))
    hb = _t(rng, (25,))
    checks.append(("hadamard", lambda t: ag.sum_(ag.hadamard(t, hb)), ha))

    xd = _t(rng, (30,))
    checks.append(("dropout", lambda t: ag.sum_(
        ag.dropout(t, 0.5, train=True, rng=np.random.default_rng(123))), xd))

    feats = _t(rng, (12,))
    phi = _t(rng, (12, 12), 0.3)
    psi = _t(rng, (12, 6), 0.3)
    state = _t(rng, (6,))
    def attn_loss(t):
        _, ctx = attention_step(feats, state, t, psi)
        return ag.sum_(ag.tanh(ctx))
    checks.append(("attention", attn_loss, phi))
    return checks


def _block_checks(rng) -> list:
    x = _t(rng, (2, 6, 10))
    wu = _t(rng, (2, 2, 3, 3), 0.4)
    wt = _t(rng, (2, 2, 3, 3), 0.4)
    b = _t(rng, (2,), 0.1)
    return [
        ("recursive_block-T2",
         lambda t: ag.sum_(ag.tanh(recursive_block(x, wu, t, b, 2))), wt),
        ("recurrent_block-T2",
         lambda t: ag.sum_(ag.tanh(recurrent_block(x, t, wt, b, 2))), wu),
    ]


def _model_params(config, rng) -> dict:
    """Parameter table for end-to-end checks, built kink-free: encoder
    weights nonnegative with positive biases and a positive input image
    keep every relu strictly active and pool maxima distinct, so central
    differences stay valid.  (Relu's off branch and pool tie routing are
    covered by the isolated layer checks.)  Decoder weights are ordinary
    signed Gaussians; everything downstream of the feature is smooth."""
    params = {}
    for name, shape in param_specs(config):
        if name.endswith((".bias", ".h0")):
            data = np.full(shape, 0.05)
        elif name.startswith("enc."):
            fan = int(np.prod(shape[1:]))
            data = np.abs(rng.standard_normal(shape)) * (1.2 / fan)
        else:
            data = rng.standard_normal(shape) * 0.3
        params[name] = Tensor(data, requires_grad=True, dtype=np.float64, name=name)
    return params


def _positive_image(rng, batch: int) -> Tensor:
    return Tensor(np.abs(rng.standard_normal((batch, 1, 8, 24))) * 0.5 + 0.1,
                  dtype=np.float64)


def _variant_checks(rng) -> list:
    """Full-model loss gradchecks: a few parameter tensors per variant,
    chosen to cover every distinct layer role."""
    checks = []
    image = _positive_image(rng, 2)
    words = ["AB", "C1D"]
    for variant in VARIANTS:
        enc = EncoderConfig(kind="recursive", iterations=2, **_REDUCED_ENCODER)
        dec = DecoderConfig(variant=variant, hidden=8, feature=16)
        config = ModelConfig(encoder=enc, decoder=dec)
        params = _model_params(config, rng)

        def loss_fn(t, params=params, config=config):
            return model_loss(params, config, image, words, train=False)

        targets = ["enc.block1.untied", "enc.block2.bias", "enc.fc10",
                   "dec.stack1.wxh", "dec.stack1.h0", "dec.head.bias"]
        if variant == "rnn1c":
            targets.append("dec.stack1.wxi")
        if dec.two_stack:
            targets.append("dec.stack2.wxh")
        if variant == "rnn_atten":
            targets += ["dec.attn.phi", "dec.attn.psi"]
        for name in targets:
            checks.append((f"{variant}:{name}", loss_fn, params[name]))
    return checks


def _heads_check(rng) -> list:
    enc = EncoderConfig(kind="base", **_REDUCED_ENCODER)
    config = ModelConfig(encoder=enc, decoder=None, n_max=4)
    params = _model_params(config, rng)
    image = _positive_image(rng, 2)

    def loss_fn(t):
        return model_loss(params, config, image, ["AB", "X2Y"], train=False)

    return [("heads:" + n, loss_fn, params[n])
            for n in ("enc.block1.untied", "enc.head0", "enc.head3.bias")]


def run_suite(eps: float = EPS, tol: float = TOLERANCE,
              report: Callable[[str], None] | None = None) -> list:
    """Run every check; returns [(name, max relative error, passed)]."""
    rng = np.random.default_rng(2024)
    checks = _layer_checks(rng) + _block_checks(rng) + _variant_checks(rng) + _heads_check(rng)
    results = []
    for name, fn, x in checks:
        err = ag.grad_check(fn, x, eps=eps)
        ok = err < tol
        results.append((name, err, ok))
        if report is not None:
            report(f"{'PASS' if ok else 'FAIL'}  {name:28s} max rel err {err:.3e}")
    return results
