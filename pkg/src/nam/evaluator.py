"""Evaluation criteria and the comparison table."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .checkpoint import Checkpoint
from .corpus import program_stats
from .engine import GenerationReport, NeuralPolicy, SgwcPolicy, policy_from_checkpoint
from .errors import DataError, EmptyBatch
from .grammar import Grammar
from .model import VARIANT_LABELS, encode_stream, stream_xe
from .sgwc import nll as sgwc_nll
from .tree import AstTree, linearize

COLUMNS = ("Model", "Avg. Vars.", "Avg. Procs.", "Constraint Violations", "Legal Trees", "NLL train", "NLL test")
MODEL_ORDER = tuple(VARIANT_LABELS[v] for v in ("vanilla", "loss", "context", "both", "sgwc"))


def avg_nll(policy, trees: Sequence[AstTree]) -> float:
    """Teacher-forced mean -ln p(true production) over prediction steps."""
    if isinstance(policy, Checkpoint):
        raise TypeError("pass a policy; see policy_from_checkpoint")
    if isinstance(policy, SgwcPolicy):
        return sgwc_nll(policy.table, trees)
    cfg = policy.config
    total, steps = 0.0, 0
    for t in trees:
        enc = encode_stream(linearize(t), policy.grammar, policy.machine, cfg.use_context, False)
        xe = stream_xe(policy.params, enc)
        total += float(xe.sum())
        steps += xe.size
    return total / steps if steps else 0.0


def count_violations(report: GenerationReport) -> int:
    return sum(r.violations for r in report.records)


def count_legal(report: GenerationReport) -> int:
    return sum(1 for r in report.records if r.complete and r.violations == 0)


def tree_stats(trees: Iterable[AstTree]) -> tuple[float, float]:
    """(mean distinct variables, mean procedures) over complete trees."""
    rows = [program_stats(t) for t in trees if t is not None]
    if not rows:
        raise EmptyBatch("no complete trees to summarize")
    return (sum(r["vars"] for r in rows) / len(rows), sum(r["procs"] for r in rows) / len(rows))


def report_stats(report: GenerationReport) -> tuple[float, float]:
    recs = [r for r in report.records if r.complete]
    if not recs:
        raise EmptyBatch("no complete trees in the generation report")
    return (sum(r.vars for r in recs) / len(recs), sum(r.procs for r in recs) / len(recs))


@dataclass
class EvalRow:
    model: str
    avg_vars: float
    avg_procs: float
    violations: int
    legal: int
    nll_train: float
    nll_test: float
    incomplete: int = 0
    seed: int | None = None

    def cells(self) -> list[str]:
        return [self.model, repr(self.avg_vars), repr(self.avg_procs), str(self.violations),
                str(self.legal), repr(self.nll_train), repr(self.nll_test)]


@dataclass
class EvalReport:
    rows: list[EvalRow] = field(default_factory=list)
    batch: int = 0
    constraint: str = ""

    def ordered(self) -> list[EvalRow]:
        rank = {m: i for i, m in enumerate(MODEL_ORDER)}
        return sorted(self.rows, key=lambda r: (rank.get(r.model, len(rank)), r.model))

    def row(self, model: str) -> EvalRow:
        for r in self.rows:
            if r.model == model:
                return r
        raise KeyError(model)

    def __eq__(self, other):
        return (isinstance(other, EvalReport) and self.batch == other.batch
                and self.constraint == other.constraint and self.ordered() == other.ordered())


def evaluate_model(ckpt: Checkpoint, report: GenerationReport, train: Sequence[AstTree],
                   test: Sequence[AstTree], grammar: Grammar) -> EvalRow:
    policy = policy_from_checkpoint(ckpt, grammar)
    try:
        vars_, procs = report_stats(report)
    except EmptyBatch:
        vars_, procs = math.nan, math.nan
    seed = report.meta.get("seed")
    return EvalRow(VARIANT_LABELS[ckpt.variant], vars_, procs, count_violations(report), count_legal(report),
                   avg_nll(policy, train), avg_nll(policy, test), report.incomplete,
                   int(seed) if seed is not None else None)


def render_report(report: EvalReport) -> tuple[str, str]:
    """Return (csv text, human-readable table)."""
    rows = report.ordered()
    buf = io.StringIO()
    buf.write(f"# constraint = {report.constraint}\n")
    buf.write(f"# batch = {report.batch}\n")
    for r in rows:
        buf.write(f"# incomplete.{r.model} = {r.incomplete}\n")
        if r.seed is not None:
            buf.write(f"# seed.{r.model} = {r.seed}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(COLUMNS)
    for r in rows:
        w.writerow(r.cells())
    csv_text = buf.getvalue()

    shown = [list(COLUMNS)]
    for r in rows:
        shown.append([r.model, f"{r.avg_vars:.2f}", f"{r.avg_procs:.2f}", str(r.violations), str(r.legal),
                      f"{r.nll_train:.3f}", f"{r.nll_test:.3f}"])
    widths = [max(len(row[i]) for row in shown) for i in range(len(COLUMNS))]
    lines = [f"constraint {report.constraint or '-'}, {report.batch} trees per model"]
    for k, row in enumerate(shown):
        lines.append("  ".join(c.ljust(widths[i]) if i == 0 else c.rjust(widths[i]) for i, c in enumerate(row)))
        if k == 0:
            lines.append("  ".join("-" * n for n in widths))
    if any(r.incomplete for r in rows):
        lines.append("incomplete: " + ", ".join(f"{r.model} {r.incomplete}" for r in rows))
    return csv_text, "\n".join(lines) + "\n"


def parse_report(csv_text: str) -> EvalReport:
    meta = {}
    body = []
    for line in csv_text.splitlines():
        if line.startswith("#"):
            k, _, v = line[1:].partition("=")
            meta[k.strip()] = v.strip()
        elif line.strip():
            body.append(line)
    rows_ = list(csv.reader(body))
    if not rows_ or tuple(rows_[0]) != COLUMNS:
        raise DataError("report header does not match the expected columns")
    rep = EvalReport(batch=int(meta.get("batch", 0)), constraint=meta.get("constraint", ""))
    for cells in rows_[1:]:
        if len(cells) != len(COLUMNS):
            raise DataError(f"report row has {len(cells)} fields")
        m = cells[0]
        seed = meta.get(f"seed.{m}")
        rep.rows.append(EvalRow(m, float(cells[1]), float(cells[2]), int(cells[3]), int(cells[4]),
                                float(cells[5]), float(cells[6]), int(meta.get(f"incomplete.{m}", 0)),
                                int(seed) if seed is not None else None))
    return rep


def write_report(report: EvalReport, out: "str | Path") -> list[Path]:
    """Write ``<out>.csv`` and ``<out>.txt``; returns the paths."""
    out = Path(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    stem = out.with_suffix("") if out.suffix in (".csv", ".txt") else out
    csv_text, table = render_report(report)
    paths = [Path(f"{stem}.csv"), Path(f"{stem}.txt")]
    paths[0].write_text(csv_text)
    paths[1].write_text(table)
    return paths


def nll_consistency(policy: NeuralPolicy, trees: Sequence[AstTree]) -> tuple[float, float]:
    """Evaluator NLL and the trainer's xe on the same data (no dropout, no extras)."""
    from .model import input_matrix, window_objective, windows, zero_state
    cfg = policy.config
    xs = []
    for t in trees:
        enc = encode_stream(linearize(t), policy.grammar, policy.machine, cfg.use_context, False)
        state = zero_state(cfg)
        for lo, hi, _, _ in windows(enc, cfg.truncation):
            res = window_objective(policy.params, input_matrix(cfg, enc, lo, hi), enc.targets[lo:hi], None,
                                   state, train=False, with_grad=False)
            state = res.state
            xs.append(res.xe)
    return avg_nll(policy, trees), float(np.concatenate(xs).mean()) if xs else 0.0
