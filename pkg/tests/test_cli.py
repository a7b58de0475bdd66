import hashlib

import pytest

from nam.cli import main
from nam.grammar import builtin_grammar_path


def digest(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


def test_check_grammar_ok(capsys):
    assert main(["check-grammar"]) == 0
    assert "OK" in capsys.readouterr().out
    assert main(["check-grammar", str(builtin_grammar_path("numeral"))]) == 0


def test_check_grammar_reports_issues(tmp_path, capsys):
    bad = tmp_path / "bad.ag"
    bad.write_text(builtin_grammar_path("numeral").read_text().replace(
        "copy(bits$1.positionIn)", "copy(bits$3.positionOut)"))
    assert main(["check-grammar", str(bad)]) == 2
    assert "l-attributed" in capsys.readouterr().out


def test_gen_corpus_is_reproducible(tmp_path):
    spec = tmp_path / "spec.txt"
    spec.write_text("programs = 12\nprocs = 2\nstmts = 8\n")
    for d in ("a", "b"):
        assert main(["gen-corpus", "--spec", str(spec), "--seed", "3", "--out", str(tmp_path / d)]) == 0
    for name in ("train.txt", "test.txt", "manifest.txt"):
        assert digest(tmp_path / "a" / name) == digest(tmp_path / "b" / name)


def test_exit_codes(tmp_path, capsys):
    spec = tmp_path / "spec.txt"
    spec.write_text("holdout = 2\n")
    assert main(["gen-corpus", "--spec", str(spec), "--out", str(tmp_path / "c")]) == 3
    err = capsys.readouterr().err
    assert err.startswith("nam: error ")
    assert main(["sample", "--ckpt", str(tmp_path / "missing.ckpt"), "--count", "1",
                 "--out", str(tmp_path / "s.txt")]) == 3
    cfg = tmp_path / "model.txt"
    cfg.write_text("hidden = lots\n")
    assert main(["train", "--corpus", str(tmp_path), "--constraint", "cd", "--variant", "vanilla",
                 "--config", str(cfg), "--out", str(tmp_path / "m.ckpt")]) == 2
    garbage = tmp_path / "g.ckpt"
    garbage.write_bytes(b"not a checkpoint")
    assert main(["sample", "--ckpt", str(garbage), "--count", "1", "--out", str(tmp_path / "s.txt")]) == 3


def test_end_to_end(tmp_path, capsys):
    spec = tmp_path / "spec.txt"
    spec.write_text("programs = 10\nprocs = 1.5\nstmts = 6\n")
    corpus = tmp_path / "corpus"
    assert main(["gen-corpus", "--spec", str(spec), "--out", str(corpus)]) == 0
    ckpts, samples = [], []
    for v in ("vanilla", "sgwc"):
        ck = tmp_path / f"{v}.ckpt"
        assert main(["train", "--corpus", str(corpus), "--constraint", "cd", "--variant", v,
                     "--set", "hidden=4", "--set", "max_epochs=1", "--set", "early_stop_samples=2",
                     "--set", "node_cap=200", "--out", str(ck)]) == 0
        assert (tmp_path / f"{v}.ckpt.manifest.txt").exists()
        s = tmp_path / f"{v}.samples.txt"
        assert main(["sample", "--ckpt", str(ck), "--count", "4", "--seed", "1", "--out", str(s)]) == 0
        ckpts.append(str(ck))
        samples.append(str(s))
    out = tmp_path / "eval" / "table"
    assert main(["eval", "--ckpt", *ckpts, "--samples", *samples, "--corpus", str(corpus),
                 "--out", str(out)]) == 0
    text = capsys.readouterr().out
    assert "Vanilla RNN" in text and "SGWC" in text
    for suffix in (".csv", ".txt", "-generation.png", "-nll.png", ".manifest.txt"):
        assert (tmp_path / "eval" / f"table{suffix}").stat().st_size > 0


def test_eval_needs_matching_lists(tmp_path):
    assert main(["eval", "--ckpt", "a", "b", "--samples", "a", "--corpus", str(tmp_path),
                 "--out", str(tmp_path / "t")]) == 2


def test_unknown_variant_is_a_usage_error(tmp_path):
    with pytest.raises(SystemExit) as info:
        main(["train", "--corpus", ".", "--constraint", "cd", "--variant", "gpt", "--out", "x"])
    assert info.value.code == 2
