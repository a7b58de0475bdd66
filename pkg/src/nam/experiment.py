"""End-to-end comparison of all variants under one constraint."""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass
from pathlib import Path

from .checkpoint import load_checkpoint, save_checkpoint
from .corpus import Corpus, CorpusSpec, corpus_stats, generate_corpus
from .engine import ALL_VARIANTS, GenerationReport, sample_checkpoint, train
from .evaluator import EvalReport, evaluate_model, write_report
from .grammar import ConstraintId, Grammar, builtin_grammar
from .model import ModelConfig

log = logging.getLogger(__name__)


@dataclass
class ExperimentResult:
    report: EvalReport
    corpus_means: dict
    histories: dict


def run_experiment(out_dir: "str | Path", constraint, config: ModelConfig, spec: CorpusSpec,
                   samples: int = 200, sample_seed: int = 1, grammar: Grammar | None = None,
                   variants=ALL_VARIANTS, figures: bool = True) -> ExperimentResult:
    """Generate the corpus, train and sample every variant, evaluate, render.

    Finished checkpoints and reports found in ``out_dir`` are reused, and a
    partially trained checkpoint resumes, so an interrupted run can simply be
    restarted.
    """
    grammar = grammar or builtin_grammar("minic")
    c = ConstraintId.parse(constraint).short
    out = Path(out_dir)
    corpus_dir = out / "corpus"
    if (corpus_dir / "train.txt").exists():
        corpus = Corpus.load(corpus_dir, grammar)
    else:
        corpus = generate_corpus(spec, grammar)
        corpus.save(corpus_dir)
    rep = EvalReport(batch=samples, constraint=c)
    histories = {}
    for v in variants:
        ck_path = out / f"{v}-{c}.ckpt"
        rep_path = out / f"{v}-{c}.samples.txt"
        ckpt = load_checkpoint(ck_path) if ck_path.exists() else None
        if ckpt is None or (ckpt.kind == "nam" and not _finished(ckpt, config)):
            ckpt = train(config, corpus, grammar, c, v, resume=ckpt, checkpoint_path=ck_path)
            save_checkpoint(ckpt, ck_path)
        if rep_path.exists():
            gen = GenerationReport.load(rep_path)
        else:
            gen = sample_checkpoint(ckpt, grammar, samples, sample_seed)
            gen.save(rep_path)
        rep.rows.append(evaluate_model(ckpt, gen, corpus.train, corpus.test, grammar))
        if ckpt.kind == "nam":
            histories[rep.rows[-1].model] = ckpt.state["history"]
        log.info("%s/%s: %s", v, c, rep.rows[-1])
    write_report(rep, out / f"table-{c}")
    means = {k: s["mean"] for k, s in corpus_stats(corpus.trees).items()}
    (out / f"summary-{c}.json").write_text(json.dumps(
        {"rows": [asdict(r) for r in rep.ordered()], "corpus_means": means, "histories": histories},
        indent=1, sort_keys=True))
    if figures:
        from .plotting import plot_generation, plot_history, plot_nll
        plot_generation(rep, out / f"generation-{c}.png")
        plot_nll(rep, out / f"nll-{c}.png")
        if histories:
            plot_history(histories, out / f"training-{c}.png")
    return ExperimentResult(rep, means, histories)


def _finished(ckpt, config: ModelConfig) -> bool:
    st = ckpt.state
    return bool(st.get("stopped")) or st.get("epoch", 0) >= config.max_epochs
