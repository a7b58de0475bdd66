import numpy as np
import pytest

from nam.attributes import check_tree
from nam.checkpoint import load_checkpoint
from nam.corpus import Corpus, CorpusSpec, generate_corpus
from nam.errors import CorpusGrammarMismatch, DataError
from nam.machine import LogicalMachine
from nam.model import ModelConfig, ModelParams, encode_stream
from nam.engine import (GenerationReport, NeuralPolicy, SgwcPolicy, generate_tree, policy_from_checkpoint,
                        sample_batch, sample_checkpoint, train)
from nam.sgwc import fit
from nam.tree import linearize

TINY = dict(hidden=4, max_epochs=2, early_stop_samples=3, node_cap=300, patience=5)


@pytest.fixture(scope="module")
def tiny_corpus(minic):
    return generate_corpus(CorpusSpec(programs=8, procs=1.5, stmts=6, seed=7), minic)


def test_vanilla_never_consults_the_machine_on_the_model_path(minic, tiny_corpus):
    m = LogicalMachine(minic, "cd")
    cfg = ModelConfig.for_grammar(minic, m, hidden=4).with_variant("vanilla")
    for t in tiny_corpus.train:
        encode_stream(linearize(t), minic, m, cfg.use_context, cfg.use_three_level_loss)
    assert sum(m.calls.values()) == 0
    policy = NeuralPolicy(ModelParams.initialize(cfg, np.random.default_rng(0)), minic, m)
    generate_tree(policy, np.random.default_rng(1), 200)
    assert m.calls["vector"] == 0         # legality is only checked to count violations


def test_training_is_deterministic(tmp_path, minic, tiny_corpus):
    cfg = ModelConfig(seed=3, **TINY)
    train(cfg, tiny_corpus, minic, "cd", "both", checkpoint_path=tmp_path / "a.ckpt")
    train(cfg, tiny_corpus, minic, "cd", "both", checkpoint_path=tmp_path / "b.ckpt")
    assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()
    ck = load_checkpoint(tmp_path / "a.ckpt")
    r1 = sample_checkpoint(ck, minic, 5, seed=4)
    r2 = sample_checkpoint(ck, minic, 5, seed=4)
    assert r1.to_text() == r2.to_text()


def test_resume_equals_uninterrupted(minic, tiny_corpus):
    full = train(ModelConfig(seed=5, **TINY), tiny_corpus, minic, "ct", "context")
    half = train(ModelConfig(seed=5, **{**TINY, "max_epochs": 1}), tiny_corpus, minic, "ct", "context")
    resumed = train(ModelConfig(seed=5, **TINY), tiny_corpus, minic, "ct", "context", resume=half)
    for name in ("params", "last_params", "adam_m", "adam_v"):
        assert np.array_equal(full.arrays[name], resumed.arrays[name])
    assert full.state == resumed.state


@pytest.mark.parametrize("c", ["cd", "ct"])
def test_sgwc_never_violates(minic, small_corpus, c):
    policy = SgwcPolicy(fit(small_corpus.train, LogicalMachine(minic, c)))
    rep = sample_batch(policy, 60, seed=2)
    assert rep.total_violations == 0
    assert rep.legal + rep.incomplete == 60


@pytest.mark.parametrize("c", ["cd", "ct"])
def test_generation_counts_agree_with_checker(minic, c):
    m = LogicalMachine(minic, c)
    cfg = ModelConfig.for_grammar(minic, m, hidden=6)
    policy = NeuralPolicy(ModelParams.initialize(cfg, np.random.default_rng(9)), minic, m)
    rng = np.random.default_rng(0)
    for _ in range(15):
        g = generate_tree(policy, rng, 400)
        if g.complete:
            assert g.violations == len(check_tree(minic, g.tree, c))


def test_forced_nullary_choices_give_the_minimal_program(minic):
    m = LogicalMachine(minic, "cd")
    cfg = ModelConfig.for_grammar(minic, m, hidden=3)
    params = ModelParams(cfg)
    for pid, cp in minic.compiled.items():
        if cp.arity == 0:
            params["bo"][minic.prod_index[pid]] = 60.0
    g = generate_tree(NeuralPolicy(params, minic, m), np.random.default_rng(0))
    assert g.legal and g.nodes == 3


def test_node_cap_marks_incomplete(minic):
    m = LogicalMachine(minic, "cd")
    cfg = ModelConfig.for_grammar(minic, m, hidden=3)
    params = ModelParams(cfg)
    params["bo"][minic.prod_index["ProcsCons"]] = 60.0
    rep = sample_batch(NeuralPolicy(params, minic, m), 3, seed=0, node_cap=50)
    assert rep.incomplete == 3 and rep.legal == 0 and rep.trees == [None] * 3


def test_report_partition_and_round_trip(minic, small_corpus):
    m = LogicalMachine(minic, "ct")
    cfg = ModelConfig.for_grammar(minic, m, hidden=5)
    rep = sample_batch(NeuralPolicy(ModelParams.initialize(cfg, np.random.default_rng(2)), minic, m),
                       12, seed=8, node_cap=150)
    assert rep.legal + rep.illegal + rep.incomplete == rep.count == 12
    back = GenerationReport.from_text(rep.to_text())
    assert back.records == rep.records and back.to_text() == rep.to_text()


def test_empty_batch_report(minic, small_corpus):
    rep = sample_batch(SgwcPolicy(fit(small_corpus.train, LogicalMachine(minic, "cd"))), 0, seed=1)
    assert rep.count == rep.legal == rep.total_violations == 0
    assert GenerationReport.from_text(rep.to_text()).count == 0


def test_tampered_report_is_rejected(minic, small_corpus):
    rep = sample_batch(SgwcPolicy(fit(small_corpus.train, LogicalMachine(minic, "cd"))), 2, seed=1)
    text = rep.to_text().replace("# total count = 2", "# total count = 3")
    with pytest.raises(DataError):
        GenerationReport.from_text(text)


def test_grammar_mismatch(minic, numeral, tiny_corpus):
    ck = train(ModelConfig(**TINY), tiny_corpus, minic, "cd", "sgwc")
    with pytest.raises(CorpusGrammarMismatch):
        policy_from_checkpoint(ck, numeral)
    with pytest.raises(CorpusGrammarMismatch):
        train(ModelConfig(**TINY), Corpus(tiny_corpus.train, [], numeral), minic, "cd", "vanilla")
