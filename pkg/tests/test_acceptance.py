"""Acceptance gate: one test per shipped guarantee.

Each test prints a single `[criterion N] PASS ...` line with the measured
values (visible under `pytest -s` or in the captured output).  Criterion 5
normally scores the committed toy checkpoints against a byte-identical
regeneration of the held-out split; set TEXTREC_SLOW=1 to retrain both
models from scratch first (~3-4 h on one CPU core).
"""

import os
import time
from functools import lru_cache
from pathlib import Path

import numpy as np
import pytest

from textrec import autograd as ag
from textrec.autograd import Tensor
from textrec.charrnn import DecoderConfig, attention_step
from textrec.checkpoint import load_checkpoint, save_checkpoint
from textrec.cli import cli
from textrec.encoder import (EncoderConfig, encoder_param_specs,
                             head_param_specs, recursive_block,
                             recurrent_block)
from textrec.evaluate import evaluate
from textrec.gradcheck import run_suite
from textrec.lexicon import Lexicon, edit_distance
from textrec.model import ModelConfig
from textrec.synthdata import RenderSpec, default_lexicon, sample_for_index
from textrec.training import TrainConfig, TrainState, epoch_end, fit, init_params

ARTIFACTS = Path(__file__).resolve().parent.parent / "artifacts"

# toy-scale build: full-size ladder divided by 4, M = 256, batch 32,
# 30 epochs; accuracy gates frozen after one run of scripts/train_toy.sh
TOY_CHANNELS = (16, 16, 32, 32, 64, 64, 128, 128)
TOY_FC = (256, 256)
TOY_SEED = 42
TOY_N = 20000
BASE_GATE = 85.0
FULL_GATE = 90.0

TOY_TRAIN = TrainConfig(batch_size=32, lr0=0.005, dropout_keep=1.0,
                        max_epochs=30, init_mode="scaled", seed=0)


def _spec_total(specs) -> int:
    return int(sum(np.prod(shape) for _, shape in specs))


def test_criterion_1_gradient_oracle_suite():
    start = time.monotonic()
    results = run_suite()  # eps 1e-3, tolerance 1e-2
    elapsed = time.monotonic() - start
    failures = [(n, e) for n, e, ok in results if not ok]
    assert not failures, f"gradient checks over tolerance: {failures}"
    assert elapsed < 120.0, f"suite took {elapsed:.1f}s, budget is 120s"
    worst = max(e for _, e, _ in results)
    print(f"\n[criterion 1] PASS {len(results)} checks, worst rel err "
          f"{worst:.2e} < 1e-2, {elapsed:.1f}s < 120s")


def test_criterion_2_parameter_parity_across_iteration_counts():
    base = EncoderConfig(kind="base", iterations=1)
    reference = _spec_total(encoder_param_specs(base))
    for kind in ("recursive", "recurrent"):
        for t in (1, 2, 3):
            cfg = EncoderConfig(kind=kind, iterations=t)
            total = _spec_total(encoder_param_specs(cfg))
            assert total == reference, (kind, t, total, reference)
    with_heads = reference + _spec_total(head_param_specs(base, 23, 37))
    assert with_heads == 125_618_515
    print(f"\n[criterion 2] PASS encoder params {reference:,} identical for "
          f"base and recursive/recurrent at T in {{1,2,3}}; "
          f"{with_heads:,} with 23 heads")


def test_criterion_3_iteration_one_degenerates_to_base_block():
    rng = np.random.default_rng(11)
    x = Tensor(rng.normal(size=(2, 3, 8, 10)).astype(np.float32))
    wu = Tensor(rng.normal(scale=0.2, size=(5, 3, 3, 3)).astype(np.float32))
    wt = Tensor(rng.normal(scale=0.2, size=(5, 5, 3, 3)).astype(np.float32))
    b = Tensor(rng.normal(scale=0.1, size=(5,)).astype(np.float32))
    # the base block spelled out from primitive ops
    h = ag.relu(ag.conv2d(x, wu, b))
    base_out = ag.relu(ag.conv2d(h, wt, b)).data
    for fn in (recursive_block, recurrent_block):
        out = fn(x, wu, wt, b, 1).data
        gap = float(np.max(np.abs(out - base_out)))
        assert gap <= 1e-6, (fn.__name__, gap)
    print("\n[criterion 3] PASS recursive/recurrent blocks at T=1 match the "
          "plain two-conv block within 1e-6")


def test_criterion_4_attention_normalization_and_shift_invariance():
    rng = np.random.default_rng(23)
    n, d, h = 1000, 24, 16
    feats = Tensor(rng.normal(size=(n, d)).astype(np.float32))
    states = Tensor(rng.normal(size=(n, h)).astype(np.float32))
    phi = Tensor(rng.normal(scale=0.5, size=(d, d)).astype(np.float32))
    psi = Tensor(rng.normal(scale=0.5, size=(d, h)).astype(np.float32))
    alpha, context = attention_step(feats, states, phi, psi)
    sums = alpha.data.sum(axis=1)
    assert np.all(np.abs(sums - 1.0) <= 1e-5), np.abs(sums - 1.0).max()
    assert np.all(alpha.data > 0.0)
    assert np.allclose(context.data, alpha.data * feats.data)

    # alpha must not move when the pre-softmax energies shift by a constant
    tau = ag.tanh(ag.add(ag.affine(feats, phi), ag.affine(states, psi)))
    assert np.array_equal(ag.softmax(tau).data, alpha.data)
    for offset in (-3.0, 0.7, 12.0):
        shifted = ag.softmax(Tensor(tau.data + np.float32(offset)))
        gap = float(np.max(np.abs(shifted.data - alpha.data)))
        assert gap <= 1e-5, (offset, gap)
    print(f"\n[criterion 4] PASS {n} pairs: sum(alpha) within "
          f"{np.abs(sums - 1.0).max():.1e} of 1, all alpha > 0, "
          "shift-invariant within 1e-5")


def _rebuild_split(start: int, stop: int):
    words = [w.upper() for w in default_lexicon()]
    spec = RenderSpec()
    images, labels = [], []
    for i in range(start, stop):
        sample = sample_for_index(words, spec, TOY_SEED, i)
        images.append(sample.image)
        labels.append(sample.label)
    return np.stack(images), labels


def _toy_model(kind: str, iterations: int, readout: str) -> ModelConfig:
    enc = EncoderConfig(kind=kind, iterations=iterations,
                        channels=TOY_CHANNELS, fc_sizes=TOY_FC)
    dec = None if readout == "heads" else DecoderConfig(
        variant=readout, hidden=256, feature=enc.feature_size)
    return ModelConfig(encoder=enc, decoder=dec)


def _retrain_toy_models():
    train = _rebuild_split(0, (TOY_N * 90) // 100)
    val = _rebuild_split((TOY_N * 90) // 100, (TOY_N * 95) // 100)
    out = {}
    for name, config in (("toy_base", _toy_model("base", 1, "heads")),
                         ("toy_full", _toy_model("recursive", 3, "rnn_atten"))):
        best, _, _ = fit(config, TOY_TRAIN, train, val)
        ARTIFACTS.mkdir(exist_ok=True)
        snapshot = {k: Tensor(v.data.copy(), name=k) for k, v in best.items()}
        save_checkpoint(str(ARTIFACTS / f"{name}.ckpt"), config, snapshot)
        out[name] = (config, best)
    return out


def test_criterion_5_toy_scale_end_to_end_accuracy():
    if os.environ.get("TEXTREC_SLOW"):
        _retrain_toy_models()
    missing = [p for p in ("toy_base.ckpt", "toy_full.ckpt")
               if not (ARTIFACTS / p).exists()]
    if missing:
        pytest.fail(f"missing {missing} under {ARTIFACTS}; run "
                    "scripts/train_toy.sh once (or TEXTREC_SLOW=1 pytest) "
                    "to produce them")
    test_images, test_labels = _rebuild_split((TOY_N * 95) // 100, TOY_N)

    config, params = load_checkpoint(str(ARTIFACTS / "toy_base.ckpt"))
    assert config.encoder.kind == "base" and config.readout == "heads"
    assert config.encoder.channels == TOY_CHANNELS
    base = evaluate(params, config, test_images, test_labels, dataset="toy-test")

    config, params = load_checkpoint(str(ARTIFACTS / "toy_full.ckpt"))
    assert (config.encoder.kind, config.encoder.iterations) == ("recursive", 3)
    assert config.readout == "rnn_atten"
    full = evaluate(params, config, test_images, test_labels, dataset="toy-test")

    assert base.accuracy >= BASE_GATE, (
        f"base CNN at {base.accuracy:.2f}%, gate is {BASE_GATE}%")
    assert full.accuracy >= FULL_GATE, (
        f"recursive+attention at {full.accuracy:.2f}%, gate is {FULL_GATE}%")
    ordering = "consistent" if full.accuracy >= base.accuracy else "INVERTED"
    print(f"\n[criterion 5] PASS base {base.accuracy:.2f}% >= {BASE_GATE}%, "
          f"recursive T=3 + rnn_atten {full.accuracy:.2f}% >= {FULL_GATE}% "
          f"on {base.count} held-out images")
    print(f"[criterion 5] soft check (not gating): ablation ordering "
          f"{ordering} (full pipeline vs base)")


def test_criterion_6_constrained_never_below_unconstrained():
    test_images, test_labels = _rebuild_split(TOY_N - 300, TOY_N)
    lexicon = Lexicon(tuple(default_lexicon()), tag="200")
    runs = []
    if (ARTIFACTS / "toy_base.ckpt").exists():
        runs.append(load_checkpoint(str(ARTIFACTS / "toy_base.ckpt")))
    # untrained models exercise the inequality where raw accuracy is ~0
    for seed in (0, 1):
        config = _toy_model("base", 1, "heads")
        runs.append((config, init_params(config, TrainConfig(
            seed=seed, init_mode="scaled"))))
    for config, params in runs:
        free = evaluate(params, config, test_images, test_labels)
        snapped = evaluate(params, config, test_images, test_labels,
                           lexicon=lexicon)
        assert snapped.accuracy >= free.accuracy, (
            config.readout, snapped.accuracy, free.accuracy)
    print(f"\n[criterion 6] PASS constrained >= unconstrained on "
          f"{len(runs)} evaluation runs with a ground-truth-containing lexicon")


@lru_cache(maxsize=None)
def _oracle(a: str, b: str) -> int:
    if not a:
        return len(b)
    if not b:
        return len(a)
    return min(_oracle(a[1:], b) + 1, _oracle(a, b[1:]) + 1,
               _oracle(a[1:], b[1:]) + (a[0] != b[0]))


def test_criterion_7_edit_distance_axioms_and_oracle():
    rng = np.random.default_rng(37)
    alphabet = np.array(list("0123456789ABCDEFGHIJKLMNOPQRSTUVWXYZ"))

    def rand_word(max_len):
        n = int(rng.integers(0, max_len + 1))
        return "".join(alphabet[rng.integers(0, 36, size=n)])

    for _ in range(10_000):
        a, b, c = rand_word(12), rand_word(12), rand_word(12)
        dab = edit_distance(a, b)
        assert dab >= 0
        assert (dab == 0) == (a == b)
        assert dab == edit_distance(b, a)
        assert dab <= edit_distance(a, c) + edit_distance(c, b)
    checked = 0
    for _ in range(2_000):
        a, b = rand_word(8), rand_word(8)
        assert edit_distance(a, b) == _oracle(a, b), (a, b)
        checked += 1
    print(f"\n[criterion 7] PASS metric axioms on 10000 random triples; "
          f"DP equals the memoized oracle on {checked} pairs up to length 8")


def test_criterion_8_training_and_prediction_are_deterministic(tmp_path, capsys):
    lex = tmp_path / "lex.txt"
    lex.write_text("CAT\nDOG\nSUN\nMAP\n")
    data = tmp_path / "ds"
    assert cli(["gen", "--out", str(data), "--n", "24", "--seed", "3",
                "--lexicon", str(lex)]) == 0
    blobs = []
    for run in ("a", "b"):
        ckpt = str(tmp_path / f"{run}.ckpt")
        assert cli(["train", "--train", str(data / "train.tsv"),
                    "--val", str(data / "val.tsv"), "--out", ckpt,
                    "--channels", "4,4,8,8", "--fc", "16", "--epochs", "2",
                    "--batch", "8", "--seed", "17", "--quiet"]) == 0
        blobs.append(open(ckpt, "rb").read())
    assert blobs[0] == blobs[1], "checkpoint bytes differ between identical runs"

    image = str(data / (data / "test.tsv").read_text().split("\t")[0])
    capsys.readouterr()
    outputs = []
    for _ in range(2):
        assert cli(["predict", "--checkpoint", str(tmp_path / "a.ckpt"),
                    "--image", image]) == 0
        outputs.append(capsys.readouterr().out)
    assert outputs[0] == outputs[1]
    print("[criterion 8] PASS identical checkpoint bytes and identical "
          "predict output across repeated runs")


def test_criterion_9_plateau_schedule_on_hand_built_sequences():
    def lr_trace(errors):
        state = TrainState(lr0=0.002, lr_decay=5.0, patience=2)
        trace = []
        for e in errors:
            epoch_end(state, e)
            trace.append(state.lr)
        return trace

    # strict improvement every epoch: lr never moves
    assert lr_trace([0.9, 0.8, 0.7, 0.6]) == [0.002] * 4
    # two consecutive non-improving epochs trigger one /5 cut
    assert lr_trace([0.9, 0.9, 0.9]) == [0.002, 0.002, 0.0004]
    # equal-to-best does not count as improvement
    assert lr_trace([0.5, 0.5, 0.5, 0.5, 0.5]) == [
        0.002, 0.002, 0.0004, 0.0004, 0.00008]
    # an improvement resets the patience counter
    assert lr_trace([0.9, 0.9, 0.8, 0.8, 0.8]) == [
        0.002, 0.002, 0.002, 0.002, 0.0004]
    # late improvement after a cut keeps the reduced rate
    assert lr_trace([0.9, 0.9, 0.9, 0.1, 0.09]) == [
        0.002, 0.002, 0.0004, 0.0004, 0.0004]
    print("\n[criterion 9] PASS lr drops by exactly 5x after every two "
          "consecutive epochs without strict validation improvement")
