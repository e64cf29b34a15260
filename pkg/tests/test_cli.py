"""End-to-end command-line tests: gen -> train -> eval -> predict on a
tiny dataset, plus exit-code and determinism checks.  Everything runs
in-process through cli(argv)."""

import os

import numpy as np
import pytest

from textrec.checkpoint import load_checkpoint
from textrec.cli import cli

TINY_NET = ["--channels", "4,4,8,8", "--fc", "16"]


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    """A 40-image dataset over an 8-word lexicon: 36 train / 2 val / 2 test."""
    root = tmp_path_factory.mktemp("cli_data")
    lex = root / "lex.txt"
    lex.write_text("\n".join(["CAT", "DOG", "SUN", "MAP", "HAT",
                              "CUP", "PEN", "BOX"]) + "\n")
    out = root / "ds"
    assert cli(["gen", "--out", str(out), "--n", "40", "--seed", "5",
                "--lexicon", str(lex)]) == 0
    return out


@pytest.fixture(scope="module")
def trained(dataset, tmp_path_factory):
    ckpt = str(tmp_path_factory.mktemp("cli_train") / "model.ckpt")
    code = cli(["train", "--train", str(dataset / "train.tsv"),
                "--val", str(dataset / "val.tsv"), "--out", ckpt,
                *TINY_NET, "--epochs", "2", "--batch", "8", "--seed", "1",
                "--quiet"])
    assert code == 0
    return ckpt


def test_gen_writes_manifests_and_images(dataset):
    for split in ("train", "val", "test"):
        assert (dataset / f"{split}.tsv").exists()
    lines = (dataset / "train.tsv").read_text().strip().splitlines()
    assert len(lines) == 36
    rel, label = lines[0].split("\t")
    assert (dataset / rel).exists()
    assert label.isalnum()


def test_train_saves_checkpoint_last_and_log(trained):
    assert os.path.exists(trained)
    assert os.path.exists(trained + ".last")
    log = open(trained + ".log").read().splitlines()
    assert log[0].startswith("epoch\t")
    assert len(log) == 3  # header + 2 epochs


def test_eval_prints_report_and_writes_rows(trained, dataset, tmp_path, capsys):
    rows_path = str(tmp_path / "rows.tsv")
    code = cli(["eval", "--checkpoint", trained,
                "--manifest", str(dataset / "test.tsv"), "--log", rows_path])
    assert code == 0
    out = capsys.readouterr().out
    assert "accuracy:" in out and "samples:  2" in out
    rows = open(rows_path).read().strip().splitlines()
    assert len(rows) == 2
    assert all(len(r.split("\t")) == 3 for r in rows)


def test_eval_constrained_mode_reports_lexicon_tag(trained, dataset, tmp_path, capsys):
    lex = tmp_path / "lex.txt"
    lex.write_text("CAT\nDOG\nSUN\nMAP\nHAT\nCUP\nPEN\nBOX\n")
    code = cli(["eval", "--checkpoint", trained,
                "--manifest", str(dataset / "test.tsv"), "--lexicon", str(lex)])
    assert code == 0
    assert "constrained-" in capsys.readouterr().out


def test_predict_prints_one_word(trained, dataset, capsys):
    rel = (dataset / "test.tsv").read_text().splitlines()[0].split("\t")[0]
    code = cli(["predict", "--checkpoint", trained,
                "--image", str(dataset / rel)])
    assert code == 0
    word = capsys.readouterr().out.strip()
    assert word == "" or word.isalnum()


def test_predict_constrained_snaps_to_lexicon(trained, dataset, tmp_path, capsys):
    lex = tmp_path / "lex.txt"
    lex.write_text("CAT\nDOG\n")
    rel = (dataset / "test.tsv").read_text().splitlines()[0].split("\t")[0]
    code = cli(["predict", "--checkpoint", trained,
                "--image", str(dataset / rel), "--lexicon", str(lex)])
    assert code == 0
    assert capsys.readouterr().out.strip() in ("CAT", "DOG")


def test_training_is_reproducible_to_the_byte(dataset, tmp_path):
    outs = []
    for run in ("a", "b"):
        ckpt = str(tmp_path / f"{run}.ckpt")
        code = cli(["train", "--train", str(dataset / "train.tsv"),
                    "--val", str(dataset / "val.tsv"), "--out", ckpt,
                    *TINY_NET, "--epochs", "1", "--batch", "8",
                    "--seed", "9", "--quiet"])
        assert code == 0
        outs.append(open(ckpt, "rb").read())
    assert outs[0] == outs[1]


def test_resume_continues_from_checkpoint(trained, dataset, tmp_path):
    ckpt = str(tmp_path / "resumed.ckpt")
    code = cli(["train", "--train", str(dataset / "train.tsv"),
                "--val", str(dataset / "val.tsv"), "--out", ckpt,
                "--resume", trained, "--epochs", "1", "--batch", "8",
                "--seed", "2", "--quiet"])
    assert code == 0
    config, _ = load_checkpoint(ckpt)
    assert config.encoder.channels == (4, 4, 8, 8)


def test_train_decoder_readout_round_trip(dataset, tmp_path, capsys):
    ckpt = str(tmp_path / "dec.ckpt")
    code = cli(["train", "--train", str(dataset / "train.tsv"),
                "--val", str(dataset / "val.tsv"), "--out", ckpt,
                "--readout", "rnn2f", "--hidden", "8", *TINY_NET,
                "--epochs", "1", "--batch", "8", "--seed", "3", "--quiet"])
    assert code == 0
    capsys.readouterr()
    assert cli(["eval", "--checkpoint", ckpt,
                "--manifest", str(dataset / "test.tsv")]) == 0
    assert "variant:  rnn2f" in capsys.readouterr().out


def test_usage_errors_exit_1(capsys):
    assert cli(["train"]) == 1                      # missing required flags
    assert cli(["no-such-command"]) == 1
    assert cli(["train", "--readout", "bogus"]) == 1
    capsys.readouterr()


def test_missing_inputs_exit_2(tmp_path, capsys):
    assert cli(["eval", "--checkpoint", str(tmp_path / "no.ckpt"),
                "--manifest", str(tmp_path / "no.tsv")]) == 2
    assert cli(["train", "--train", str(tmp_path / "no.tsv"),
                "--val", str(tmp_path / "no.tsv"),
                "--out", str(tmp_path / "o.ckpt"), "--quiet"]) == 2
    assert cli(["gen", "--out", str(tmp_path / "d"), "--n", "0"]) == 2
    capsys.readouterr()


def test_predict_rescales_foreign_image_sizes(trained, tmp_path, capsys):
    from textrec.synthdata import write_pgm

    img = np.linspace(0, 1, 16 * 50, dtype=np.float32).reshape(16, 50)
    path = str(tmp_path / "odd.pgm")
    write_pgm(path, img)
    assert cli(["predict", "--checkpoint", trained, "--image", path]) == 0
    capsys.readouterr()


def test_gradcheck_exit_codes(monkeypatch, capsys):
    # wiring only: the real oracle suite runs in the acceptance tests
    import textrec.gradcheck as gradcheck

    monkeypatch.setattr(gradcheck, "run_suite",
                        lambda report=None: [("conv", 1e-5, True)])
    assert cli(["gradcheck", "--quiet"]) == 0
    monkeypatch.setattr(gradcheck, "run_suite",
                        lambda report=None: [("conv", 0.5, False)])
    assert cli(["gradcheck", "--quiet"]) == 3
    capsys.readouterr()


def test_corrupt_checkpoint_exits_2(trained, tmp_path, capsys):
    blob = bytearray(open(trained, "rb").read())
    blob[-30] ^= 0xFF
    bad = str(tmp_path / "bad.ckpt")
    open(bad, "wb").write(bytes(blob))
    assert cli(["predict", "--checkpoint", bad, "--image", "x.pgm"]) == 2
    capsys.readouterr()


def test_ablate_trains_combos_and_writes_table(dataset, tmp_path, capsys):
    out = tmp_path / "ablation"
    code = cli(["ablate", "--train", str(dataset / "train.tsv"),
                "--val", str(dataset / "val.tsv"),
                "--test", str(dataset / "test.tsv"), "--out", str(out),
                "--combos", "base:heads,recursive:rnn_atten",
                "--epochs", "1"])
    assert code == 0
    table = (out / "ablation.tsv").read_text().strip().splitlines()
    assert table[0] == "encoder:readout\ttest_accuracy"
    assert len(table) == 3
    assert (out / "base_heads.ckpt").exists()
    assert (out / "recursive_rnn_atten.ckpt").exists()
    assert "ablation results" in capsys.readouterr().out


def test_ablate_rejects_unknown_combo(dataset, tmp_path, capsys):
    code = cli(["ablate", "--train", str(dataset / "train.tsv"),
                "--val", str(dataset / "val.tsv"),
                "--test", str(dataset / "test.tsv"),
                "--out", str(tmp_path / "x"), "--combos", "conv:softmax"])
    assert code == 2
    capsys.readouterr()
