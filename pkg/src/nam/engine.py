"""Training and generation for every model variant."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import __version__
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .corpus import Corpus, program_stats
from .errors import CheckpointError, CorpusGrammarMismatch, DataError
from .grammar import ConstraintId, Grammar
from .machine import LogicalMachine, machine_for
from .model import (VARIANTS, AdamState, ModelConfig, ModelParams, encode_input, encode_stream,
                    forward_step, input_matrix, tbptt_step, windows, zero_state)
from .sgwc import CountTable, fit, predict
from .tree import POP, AstTree, Step, check_backbone, delinearize, linearize

log = logging.getLogger(__name__)
ALL_VARIANTS = tuple(VARIANTS) + ("sgwc",)


# ---------------------------------------------------------------------------
# policies: anything that yields a distribution over P at a hole

class NeuralPolicy:
    def __init__(self, params: ModelParams, grammar: Grammar, machine: LogicalMachine):
        self.params = params
        self.config = params.config
        self.grammar = grammar
        self.machine = machine
        self._pop_index = len(grammar.nonterminals)

    def start(self):
        return zero_state(self.config)

    def _input(self, nt_index: int, state):
        ctx = state.vector() if self.config.use_context else None
        return encode_input(self.config, nt_index, ctx)

    def pop(self, lstate, state):
        _, lstate = forward_step(self.params, self._input(self._pop_index, state), lstate, want_probs=False)
        return lstate

    def predict(self, lstate, n: str, state):
        return forward_step(self.params, self._input(self.grammar.nt_index[n], state), lstate)


class SgwcPolicy:
    def __init__(self, table: CountTable):
        self.table = table
        self.grammar = table.grammar
        self.machine = table.machine

    def start(self):
        return None

    def pop(self, lstate, state):
        return None

    def predict(self, lstate, n: str, state):
        return predict(self.table, n, state), None


def policy_from_checkpoint(ckpt: Checkpoint, grammar: Grammar):
    if ckpt.grammar_digest != grammar.digest:
        raise CorpusGrammarMismatch(
            f"checkpoint was trained on grammar {ckpt.grammar_digest}, got {grammar.digest}")
    machine = machine_for(grammar, ckpt.constraint)
    if ckpt.kind == "sgwc":
        return SgwcPolicy(CountTable.from_text(ckpt.state["table"], machine, ckpt.state.get("alpha", 1.0)))
    if ckpt.kind != "nam":
        raise CheckpointError(f"unknown checkpoint kind {ckpt.kind!r}")
    cfg = ModelConfig(**ckpt.config)
    return NeuralPolicy(ModelParams(cfg, ckpt.arrays["params"].copy()), grammar, machine)


# ---------------------------------------------------------------------------
# generation

@dataclass
class GeneratedTree:
    tree: AstTree | None       # None when the node cap was hit
    violations: int
    nodes: int

    @property
    def complete(self) -> bool:
        return self.tree is not None

    @property
    def legal(self) -> bool:
        return self.complete and self.violations == 0


def generate_tree(policy, rng: np.random.Generator, node_cap: int = 2000) -> GeneratedTree:
    """Fill holes in preorder by sampling from the policy.

    Sampling is over P_n (the model's distribution renormalized there);
    a sample outside P_c is counted as a violation and still inserted.
    """
    g, machine = policy.grammar, policy.machine
    state = machine.init()
    lstate = policy.start()
    stream: list = []
    nodes = violations = 0
    while not state.done:
        n = state.focus_nt
        if n is None:
            lstate = policy.pop(lstate, state)
            state.advance(POP)
            stream.append(POP)
            continue
        if nodes >= node_cap:
            return GeneratedTree(None, violations, nodes)
        probs, lstate = policy.predict(lstate, n, state)
        choices = g.productions_of(n)
        w = np.array([probs[g.prod_index[p]] for p in choices])
        total = w.sum()
        if not np.isfinite(total) or total <= 0:
            w, total = np.ones(len(choices)), float(len(choices))
        j = int(np.searchsorted(np.cumsum(w), rng.random() * total, side="right"))
        pid = choices[min(j, len(choices) - 1)]
        if pid not in state.legal(n):
            violations += 1
        tok = Step(n, pid)
        state.advance(tok)
        stream.append(tok)
        nodes += 1
    return GeneratedTree(delinearize(stream, g), violations, nodes)


@dataclass
class TreeRecord:
    index: int
    seed: int
    nodes: int
    violations: int
    legal: bool
    complete: bool
    vars: int
    procs: int


@dataclass
class GenerationReport:
    records: list[TreeRecord] = field(default_factory=list)
    meta: dict = field(default_factory=dict)
    trees: list = field(default_factory=list)   # AstTree or None, aligned with records

    @property
    def count(self) -> int:
        return len(self.records)

    @property
    def total_violations(self) -> int:
        return sum(r.violations for r in self.records)

    @property
    def legal(self) -> int:
        return sum(r.legal for r in self.records)

    @property
    def incomplete(self) -> int:
        return sum(not r.complete for r in self.records)

    @property
    def illegal(self) -> int:
        return self.count - self.legal - self.incomplete

    COLUMNS = ("index", "seed", "nodes", "violations", "legal", "complete", "vars", "procs")

    def to_text(self) -> str:
        lines = ["# generation report"]
        lines += [f"# {k} = {v}" for k, v in self.meta.items()]
        lines.append(" ".join(self.COLUMNS))
        for r in self.records:
            lines.append(f"{r.index} {r.seed} {r.nodes} {r.violations} {int(r.legal)} {int(r.complete)} "
                         f"{r.vars} {r.procs}")
        lines.append(f"# total count = {self.count}")
        lines.append(f"# total violations = {self.total_violations}")
        lines.append(f"# total legal = {self.legal}")
        lines.append(f"# total illegal = {self.illegal}")
        lines.append(f"# total incomplete = {self.incomplete}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "GenerationReport":
        rep = cls()
        footer = {}
        header_seen = False
        for no, line in enumerate(text.splitlines(), 1):
            if not line.strip():
                continue
            if line.startswith("#"):
                k, eq, v = line[1:].partition("=")
                if eq:
                    k = k.strip()
                    if k.startswith("total "):
                        footer[k[6:]] = int(v)
                    else:
                        rep.meta[k] = v.strip()
                continue
            parts = line.split()
            if not header_seen:
                if tuple(parts) != cls.COLUMNS:
                    raise DataError(f"generation report line {no}: unexpected header")
                header_seen = True
                continue
            try:
                i, seed, nodes, viol, legal, complete, v, p = map(int, parts)
            except ValueError:
                raise DataError(f"generation report line {no}: expected 8 integers") from None
            rep.records.append(TreeRecord(i, seed, nodes, viol, bool(legal), bool(complete), v, p))
        got = {"count": rep.count, "violations": rep.total_violations, "legal": rep.legal,
               "illegal": rep.illegal, "incomplete": rep.incomplete}
        for k, v in footer.items():
            if k in got and got[k] != v:
                raise DataError(f"generation report footer says {k} = {v}, lines give {got[k]}")
        return rep

    def save(self, path: "str | Path") -> None:
        Path(path).write_text(self.to_text())

    @classmethod
    def load(cls, path: "str | Path") -> "GenerationReport":
        return cls.from_text(Path(path).read_text())


def tree_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence([seed, index]).generate_state(1)[0])


def sample_batch(policy, count: int, seed: int, node_cap: int = 2000, meta: dict | None = None,
                 keep_trees: bool = True) -> GenerationReport:
    """Generate ``count`` trees, tree ``i`` from its own seed derived from (seed, i)."""
    rep = GenerationReport(meta=dict(meta or {}))
    rep.meta.setdefault("seed", seed)
    rep.meta.setdefault("count", count)
    rep.meta.setdefault("node_cap", node_cap)
    rep.meta.setdefault("constraint", policy.machine.constraint.short)
    for i in range(count):
        s = tree_seed(seed, i)
        res = generate_tree(policy, np.random.default_rng(s), node_cap)
        stats = program_stats(res.tree) if res.complete else {"vars": 0, "procs": 0}
        rep.records.append(TreeRecord(i, s, res.nodes, res.violations, res.legal, res.complete,
                                      stats["vars"], stats["procs"]))
        if keep_trees:
            rep.trees.append(res.tree)
    return rep


def sample_checkpoint(ckpt: Checkpoint, grammar: Grammar, count: int, seed: int,
                      node_cap: int | None = None) -> GenerationReport:
    policy = policy_from_checkpoint(ckpt, grammar)
    cap = node_cap or int(ckpt.config.get("node_cap", 2000))
    meta = {"kind": ckpt.kind, "variant": ckpt.variant, "grammar_hash": ckpt.grammar_digest,
            "tool_version": __version__}
    return sample_batch(policy, count, seed, cap, meta)


# ---------------------------------------------------------------------------
# training

def check_corpus(corpus: Corpus, grammar: Grammar) -> None:
    if corpus.grammar is not grammar and corpus.grammar.digest != grammar.digest:
        raise CorpusGrammarMismatch(f"corpus grammar {corpus.grammar.digest} differs from {grammar.digest}")
    if not corpus.train:
        raise CorpusGrammarMismatch("corpus has no training trees")
    for t in corpus.trees:
        try:
            check_backbone(t, grammar)
        except DataError as exc:
            raise CorpusGrammarMismatch(f"corpus tree does not fit the grammar: {exc}") from None


def _rng_state(rng: np.random.Generator) -> dict:
    return rng.bit_generator.state


def _better(rate: float, viol: float, best: tuple | None) -> bool:
    if best is None:
        return True
    return rate > best[0] or (rate == best[0] and viol < best[1])


def train(config: ModelConfig, corpus: Corpus, grammar: Grammar, constraint, variant: str,
          resume: Checkpoint | None = None, checkpoint_path: "str | Path | None" = None,
          on_epoch: Callable[[dict], None] | None = None) -> Checkpoint:
    """Fit one variant.  Neural variants run epochs of truncated BPTT until
    the sampled legal-tree rate stops improving; the checkpoint keeps the
    best epoch's parameters plus everything needed to resume."""
    if variant not in ALL_VARIANTS:
        raise ValueError(f"unknown variant {variant!r}")
    constraint = ConstraintId.parse(constraint)
    check_corpus(corpus, grammar)
    machine = machine_for(grammar, constraint)
    if variant == "sgwc":
        table = fit(corpus.train, machine)
        return Checkpoint("sgwc", "sgwc", constraint.short, grammar.digest,
                          {"node_cap": config.node_cap, "seed": config.seed},
                          {}, {"table": table.to_text(), "alpha": table.alpha})

    cfg = ModelConfig.for_grammar(grammar, machine, **{
        k: v for k, v in config.with_variant(variant).to_mapping().items()
        if k not in ("n_nonterminals", "n_outputs", "context_width")})
    encs = [encode_stream(linearize(t), grammar, machine, cfg.use_context, cfg.use_three_level_loss)
            for t in corpus.train]

    rng = np.random.default_rng(cfg.seed)
    if resume is not None:
        if resume.kind != "nam" or resume.variant != variant or resume.constraint != constraint.short:
            raise CheckpointError("resume checkpoint is for a different variant or constraint")
        if resume.grammar_digest != grammar.digest:
            raise CorpusGrammarMismatch("resume checkpoint was trained on another grammar")
        st = resume.state
        params = ModelParams(cfg, resume.arrays["last_params"].copy())
        best_flat = resume.arrays["params"].copy()
        opt = AdamState(resume.arrays["adam_m"].copy(), resume.arrays["adam_v"].copy(), int(st["updates"]))
        rng.bit_generator.state = st["rng"]
        epoch, best, best_epoch, stale = st["epoch"], tuple(st["best"]) if st["best"] else None, \
            st["best_epoch"], st["stale"]
        history = list(st["history"])
        stopped = st["stopped"]
    else:
        params = ModelParams.initialize(cfg, rng)
        best_flat = params.flat.copy()
        opt = AdamState.zeros(params.flat.size)
        epoch, best, best_epoch, stale, history, stopped = 0, None, 0, 0, [], False

    def snapshot() -> Checkpoint:
        state = {"rng": _rng_state(rng), "epoch": epoch, "updates": opt.t, "best": list(best) if best else None,
                 "best_epoch": best_epoch, "stale": stale, "history": history, "stopped": stopped,
                 "best_legal_rate": best[0] if best else None}
        arrays = {"params": best_flat, "last_params": params.flat, "adam_m": opt.m, "adam_v": opt.v}
        return Checkpoint("nam", variant, constraint.short, grammar.digest, cfg.to_mapping(), arrays, state)

    while not stopped and epoch < cfg.max_epochs:
        losses = []
        for idx in rng.permutation(len(encs)):
            enc = encs[idx]
            lstate = zero_state(cfg)
            for lo, hi, slo, shi in windows(enc, cfg.truncation):
                legal = enc.legal[slo:shi] if enc.legal is not None else None
                res = tbptt_step(params, input_matrix(cfg, enc, lo, hi), enc.targets[lo:hi], legal,
                                 lstate, opt, rng)
                lstate = res.state
                losses.append(res.xe)
        epoch += 1
        policy = NeuralPolicy(params, grammar, machine)
        rep = sample_batch(policy, cfg.early_stop_samples, seed=tree_seed(cfg.seed, 10_000 + epoch),
                           node_cap=cfg.node_cap, keep_trees=False)
        n = max(rep.count, 1)
        rate, viol = rep.legal / n, rep.total_violations / n
        xe = float(np.concatenate(losses).mean()) if losses else 0.0
        if _better(rate, viol, best):
            best, best_epoch, stale = (rate, viol), epoch, 0
            best_flat = params.flat.copy()
        else:
            stale += 1
        stopped = stale >= cfg.patience
        info = {"epoch": epoch, "train_xe": round(xe, 6), "legal_rate": rate, "violations_per_tree": viol,
                "incomplete": rep.incomplete, "best_epoch": best_epoch}
        history.append(info)
        log.info("%s/%s epoch %d: xe %.4f legal %.3f viol/tree %.2f", variant, constraint.short,
                 epoch, xe, rate, viol)
        if on_epoch:
            on_epoch(info)
        if checkpoint_path is not None:
            save_checkpoint(snapshot(), checkpoint_path)
    ckpt = snapshot()
    if checkpoint_path is not None:
        save_checkpoint(ckpt, checkpoint_path)
    return ckpt


def resume_from(path: "str | Path") -> Checkpoint | None:
    p = Path(path)
    return load_checkpoint(p) if p.exists() else None
