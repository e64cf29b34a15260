"""Whole-model assembly tests: config round trips, parameter inventory
ordering, loss composition for both readouts, greedy prediction."""

import numpy as np
import pytest

from textrec import autograd as ag
from textrec.autograd import Graph, Tensor
from textrec.charrnn import VARIANTS, DecoderConfig, decoder_param_specs
from textrec.encoder import EncoderConfig, encoder_param_specs, head_param_specs
from textrec.errors import ConfigError, ShapeError
from textrec.model import (ModelConfig, encode_batch, model_loss, param_specs,
                           predict_words)
from textrec.training import TrainConfig, init_params
from textrec.vocab import NULL_INDEX, VOCAB_SIZE, encode_word

TOY_ENC = dict(channels=(4, 4, 8, 8), input_shape=(1, 8, 12), fc_sizes=(16, 16))


def toy_config(readout="heads"):
    enc = EncoderConfig(kind="base", iterations=1, **TOY_ENC)
    dec = None if readout == "heads" else DecoderConfig(
        variant=readout, hidden=8, feature=16)
    return ModelConfig(encoder=enc, decoder=dec)


def toy_images(n, seed=0):
    rng = np.random.default_rng(seed)
    return Tensor(rng.normal(size=(n, 1, 8, 12)).astype(np.float32))


def test_readout_property():
    assert toy_config().readout == "heads"
    assert toy_config("rnn2f").readout == "rnn2f"


@pytest.mark.parametrize("readout", ("heads",) + VARIANTS)
def test_config_dict_round_trip(readout):
    config = toy_config(readout)
    again = ModelConfig.from_dict(config.to_dict())
    assert again == config


def test_from_dict_rejects_malformed_input():
    with pytest.raises(ConfigError):
        ModelConfig.from_dict({"encoder": {"kind": "base"}})
    raw = toy_config().to_dict()
    del raw["n_max"]
    with pytest.raises(ConfigError):
        ModelConfig.from_dict(raw)


def test_decoder_feature_width_must_match_encoder():
    enc = EncoderConfig(kind="base", iterations=1, **TOY_ENC)
    with pytest.raises(ConfigError):
        ModelConfig(encoder=enc, decoder=DecoderConfig(variant="rnn2f",
                                                       hidden=8, feature=99))


def test_decoder_vocab_must_match_model():
    enc = EncoderConfig(kind="base", iterations=1, **TOY_ENC)
    dec = DecoderConfig(variant="rnn2f", hidden=8, feature=16, vocab=10)
    with pytest.raises(ConfigError):
        ModelConfig(encoder=enc, decoder=dec)


def test_param_specs_order_is_encoder_then_readout():
    config = toy_config("rnn1c")
    specs = param_specs(config)
    expected = encoder_param_specs(config.encoder) + decoder_param_specs(config.decoder)
    assert specs == expected
    heads = toy_config()
    assert param_specs(heads) == (encoder_param_specs(heads.encoder)
                                  + head_param_specs(heads.encoder, 23, VOCAB_SIZE))


def test_param_specs_names_are_unique():
    for readout in ("heads",) + VARIANTS:
        specs = param_specs(toy_config(readout))
        names = [n for n, _ in specs]
        assert len(names) == len(set(names))


def test_heads_loss_is_sum_of_positionwise_cross_entropies():
    config = toy_config()
    params = init_params(config, TrainConfig(seed=1, init_mode="scaled"))
    images = toy_images(3)
    words = ["CAT", "A1", "HOUSES"]
    with Graph() as g:
        loss = model_loss(params, config, images, words)
        ag.backward(g, loss)
    assert loss.data.shape == ()
    # uniform-logits reference: fresh zero heads give exactly n_max*ln(37)
    zeroed = init_params(config, TrainConfig(seed=1))
    for name in zeroed:
        zeroed[name].data[:] = 0.0
    flat = model_loss(zeroed, config, images, words)
    expected = 3 * config.n_max * np.log(VOCAB_SIZE)
    assert np.isclose(flat.data, expected, rtol=1e-5)


def test_heads_targets_pad_with_null():
    # a correct-on-purpose parameter rig makes slot padding observable:
    # biases put mass on NULL, so short words cost less than long ones
    config = toy_config()
    params = init_params(config, TrainConfig(seed=2))
    for tensor in params.values():
        tensor.data[:] = 0.0
    for p in range(config.n_max):
        params[f"enc.head{p}.bias"].data[NULL_INDEX] = 4.0
    short = model_loss(params, config, toy_images(1), ["CAT"])
    long = model_loss(params, config, toy_images(1), ["HOUSEPLANT"])
    assert short.data < long.data


def test_word_longer_than_head_count_rejected():
    enc = EncoderConfig(kind="base", iterations=1, **TOY_ENC)
    config = ModelConfig(encoder=enc, n_max=4)
    params = init_params(config, TrainConfig(seed=3))
    with pytest.raises(ShapeError):
        model_loss(params, config, toy_images(1), ["TOOLONG"])


@pytest.mark.parametrize("readout", VARIANTS)
def test_decoder_loss_backpropagates_to_every_parameter(readout):
    config = toy_config(readout)
    params = init_params(config, TrainConfig(seed=4, init_mode="scaled"))
    with Graph() as g:
        loss = model_loss(params, config, toy_images(2), ["CAT", "DOG"])
        ag.backward(g, loss)
    for name, tensor in params.items():
        assert tensor.grad is not None, name
        # h0 and late-position tensors may legitimately be tiny but the
        # bulk of the table must see signal
    touched = sum(float(np.abs(t.grad).sum()) > 0 for t in params.values())
    assert touched >= len(params) - 2


def test_predict_words_heads_vs_decoder_types():
    for readout in ("heads", "rnn2f"):
        config = toy_config(readout)
        params = init_params(config, TrainConfig(seed=5, init_mode="scaled"))
        out = predict_words(params, config, toy_images(4))
        assert isinstance(out, list) and len(out) == 4
        assert all(isinstance(w, str) for w in out)
        assert all(len(w) <= config.n_max for w in out)


def test_predict_words_deterministic():
    config = toy_config("rnn1u")
    params = init_params(config, TrainConfig(seed=6, init_mode="scaled"))
    images = toy_images(3)
    assert predict_words(params, config, images) == predict_words(params, config, images)


def test_encode_batch_feature_width():
    config = toy_config()
    params = init_params(config, TrainConfig(seed=7))
    feature = encode_batch(params, config, toy_images(5))
    assert feature.data.shape == (5, config.encoder.feature_size)


def test_dropout_keep_override_changes_training_loss_scale():
    # keep=1.0 must match eval behaviour exactly; keep<1 perturbs it
    config = toy_config()
    params = init_params(config, TrainConfig(seed=8, init_mode="scaled"))
    images = toy_images(2)
    words = ["CAT", "DOG"]
    base = model_loss(params, config, images, words)
    same = model_loss(params, config, images, words, train=True,
                      rng=np.random.default_rng(0), keep=1.0)
    assert np.allclose(base.data, same.data)
    dropped = model_loss(params, config, images, words, train=True,
                         rng=np.random.default_rng(0), keep=0.5)
    assert not np.allclose(base.data, dropped.data)
