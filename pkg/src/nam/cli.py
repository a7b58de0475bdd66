"""``nam`` command-line entry point.

Exit status: 0 success, 2 validation failure, 3 data error, 4 numeric failure.
Failures print one ``nam: error <code>: <detail>`` line on stderr.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from . import __version__
from .checkpoint import load_checkpoint, save_checkpoint
from .config import load_model_config, parse_overrides, write_key_values
from .corpus import Corpus, CorpusSpec, generate_corpus, read_key_values
from .engine import ALL_VARIANTS, GenerationReport, sample_checkpoint, train
from .errors import DataError, NamError, ValidationFailure
from .grammar import ConstraintId, builtin_grammar, builtin_grammar_path, load_grammar, validate_grammar


def _grammar(path):
    g = load_grammar(path) if path else builtin_grammar("minic")
    report = validate_grammar(g)
    if not report.ok:
        raise ValidationFailure(f"grammar {path or 'minic'} is invalid: {len(report)} issue(s); "
                                "run check-grammar for details")
    return g


def cmd_check_grammar(args) -> int:
    path = args.grammar or builtin_grammar_path("minic")
    report = validate_grammar(load_grammar(path))
    print(report)
    return 0 if report.ok else 2


def cmd_gen_corpus(args) -> int:
    values = read_key_values(args.spec) if args.spec else {}
    if args.seed is not None:
        values["seed"] = args.seed
    try:
        spec = CorpusSpec.from_mapping(values)
    except (TypeError, ValueError) as exc:
        raise ValidationFailure(f"bad corpus spec: {exc}") from None
    corpus = generate_corpus(spec, _grammar(args.grammar))
    corpus.save(args.out)
    print(f"wrote {len(corpus.train)} train / {len(corpus.test)} test trees to {args.out}")
    return 0


def cmd_train(args) -> int:
    g = _grammar(args.grammar)
    overrides = parse_overrides(args.set or [])
    if args.seed is not None:
        overrides["seed"] = str(args.seed)
    cfg = load_model_config(args.config, overrides)
    corpus = Corpus.load(args.corpus, g)
    resume = None
    if args.resume and Path(args.out).exists():
        resume = load_checkpoint(args.out)
    ckpt = train(cfg, corpus, g, args.constraint, args.variant, resume=resume, checkpoint_path=args.out)
    save_checkpoint(ckpt, args.out)
    extra = ""
    if ckpt.kind == "nam":
        extra = f", {ckpt.state['epoch']} epochs, best epoch {ckpt.state['best_epoch']}"
    print(f"wrote {args.out} ({args.variant}/{ckpt.constraint}{extra})")
    return 0


def cmd_sample(args) -> int:
    ckpt = load_checkpoint(args.ckpt)
    g = _grammar(args.grammar)
    rep = sample_checkpoint(ckpt, g, args.count, args.seed, args.node_cap)
    rep.save(args.out)
    print(f"{rep.count} trees: {rep.legal} legal, {rep.illegal} illegal, {rep.incomplete} incomplete, "
          f"{rep.total_violations} violations")
    return 0


def cmd_eval(args) -> int:
    from .evaluator import EvalReport, evaluate_model, render_report, write_report
    from .plotting import plot_generation, plot_nll

    if len(args.ckpt) != len(args.samples):
        raise ValidationFailure("eval needs one --samples report per --ckpt")
    g = _grammar(args.grammar)
    corpus = Corpus.load(args.corpus, g)
    rep = EvalReport()
    for ck_path, s_path in zip(args.ckpt, args.samples):
        ckpt = load_checkpoint(ck_path)
        gen = GenerationReport.load(s_path)
        if rep.constraint and rep.constraint != ckpt.constraint:
            raise DataError("checkpoints were trained under different constraints")
        rep.constraint = ckpt.constraint
        rep.batch = max(rep.batch, gen.count)
        rep.rows.append(evaluate_model(ckpt, gen, corpus.train, corpus.test, g))
    paths = write_report(rep, args.out)
    stem = paths[0].with_suffix("")
    if not args.no_figures:
        paths.append(plot_generation(rep, f"{stem}-generation.png"))
        paths.append(plot_nll(rep, f"{stem}-nll.png"))
    write_key_values(f"{stem}.manifest.txt", {
        "tool_version": __version__, "grammar_hash": g.digest, "corpus": args.corpus,
        "checkpoints": " ".join(args.ckpt), "samples": " ".join(args.samples)})
    print(render_report(rep)[1], end="")
    for p in paths:
        print(f"wrote {p}")
    return 0


def cmd_experiment(args) -> int:
    from .evaluator import render_report
    from .experiment import run_experiment

    cfg = load_model_config(args.config, parse_overrides(args.set or []))
    values = read_key_values(args.spec) if args.spec else {}
    spec = CorpusSpec.from_mapping(values)
    res = run_experiment(args.out, args.constraint, cfg, spec, args.samples, args.seed,
                         _grammar(args.grammar))
    print(render_report(res.report)[1], end="")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="nam", description="Grammar-constrained program generation workbench.")
    p.add_argument("--version", action="version", version=f"nam {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("check-grammar", help="validate an attribute grammar file")
    s.add_argument("grammar", nargs="?", help="grammar file (default: shipped mini-C)")
    s.set_defaults(func=cmd_check_grammar)

    s = sub.add_parser("gen-corpus", help="generate a synthetic mini-C corpus")
    s.add_argument("--spec", help="key = value corpus spec")
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int)
    s.add_argument("--grammar")
    s.set_defaults(func=cmd_gen_corpus)

    constraint_choices = ["cd", "ct", *[c.value for c in ConstraintId]]
    s = sub.add_parser("train", help="train one model variant")
    s.add_argument("--grammar")
    s.add_argument("--corpus", required=True)
    s.add_argument("--constraint", required=True, choices=constraint_choices)
    s.add_argument("--variant", required=True, choices=ALL_VARIANTS)
    s.add_argument("--config")
    s.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config value")
    s.add_argument("--seed", type=int)
    s.add_argument("--out", required=True)
    s.add_argument("--resume", action="store_true", help="continue from --out if it exists")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("sample", help="generate trees from a checkpoint")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--count", type=int, required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--node-cap", type=int)
    s.add_argument("--grammar")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_sample)

    s = sub.add_parser("eval", help="evaluate checkpoints and their sample reports")
    s.add_argument("--ckpt", nargs="+", required=True)
    s.add_argument("--samples", nargs="+", required=True)
    s.add_argument("--corpus", required=True)
    s.add_argument("--grammar")
    s.add_argument("--out", required=True, help="output stem; writes .csv, .txt and figures")
    s.add_argument("--no-figures", action="store_true")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("experiment", help="corpus, all five variants, sampling and evaluation in one go")
    s.add_argument("--constraint", required=True, choices=constraint_choices)
    s.add_argument("--spec")
    s.add_argument("--config")
    s.add_argument("--set", action="append", metavar="KEY=VALUE")
    s.add_argument("--samples", type=int, default=200)
    s.add_argument("--seed", type=int, default=1, help="sampling seed")
    s.add_argument("--grammar")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_experiment)
    return p


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("NAM_LOG_LEVEL", "WARNING").upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except NamError as exc:
        print(f"nam: error {exc.code}: {exc}", file=sys.stderr)
        return exc.exit_status
    except OSError as exc:
        print(f"nam: error io: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
