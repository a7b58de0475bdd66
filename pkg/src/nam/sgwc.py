"""Count-based production model conditioned on (nonterminal, context vector).

Probabilities are add-alpha smoothed over the legal set only, so sampling
from it can never pick an illegal production.
"""

from __future__ import annotations

import math
from collections import defaultdict
from pathlib import Path
from typing import Iterable

import numpy as np

from .errors import DataError, UnknownNonterminal
from .grammar import Grammar
from .machine import ContextState, LogicalMachine
from .tree import POP, AstTree, linearize


def context_key(vec: np.ndarray) -> str:
    return "".join("1" if b else "0" for b in vec)


class CountTable:
    def __init__(self, machine: LogicalMachine, alpha: float = 1.0):
        if alpha < 0:
            raise ValueError("alpha must be non-negative")
        self.machine = machine
        self.grammar = machine.grammar
        self.alpha = alpha
        self.counts: dict[tuple[str, str], dict[str, int]] = defaultdict(dict)

    @property
    def total(self) -> int:
        return sum(sum(cell.values()) for cell in self.counts.values())

    def add(self, n: str, key: str, pid: str, k: int = 1) -> None:
        cell = self.counts[(n, key)]
        cell[pid] = cell.get(pid, 0) + k

    def distribution(self, n: str, state: ContextState) -> dict[str, float]:
        """Probabilities over P_c at the state's hole (nonzero entries only)."""
        if n not in self.grammar.nt_index:
            raise UnknownNonterminal(f"unknown nonterminal {n!r}")
        legal = sorted(state.legal(n), key=self.grammar.prod_index.__getitem__)
        if not legal:
            return {}
        cell = self.counts.get((n, context_key(state.vector())))
        if cell is None:
            return {p: 1.0 / len(legal) for p in legal}
        weights = [cell.get(p, 0) + self.alpha for p in legal]
        z = sum(weights)
        if z == 0:
            return {p: 1.0 / len(legal) for p in legal}
        return {p: w / z for p, w in zip(legal, weights)}

    # -- persistence ------------------------------------------------------

    def to_text(self) -> str:
        lines = []
        for (n, key), cell in sorted(self.counts.items()):
            for pid, k in sorted(cell.items()):
                lines.append(f"{n} {key} {pid} {k}")
        return "\n".join(lines) + ("\n" if lines else "")

    @classmethod
    def from_text(cls, text: str, machine: LogicalMachine, alpha: float = 1.0) -> "CountTable":
        t = cls(machine, alpha)
        for no, line in enumerate(text.splitlines(), 1):
            if not line.strip():
                continue
            parts = line.split()
            if len(parts) != 4:
                raise DataError(f"count table line {no}: expected 4 fields")
            n, key, pid, k = parts
            if len(key) != machine.width or set(key) - {"0", "1"}:
                raise DataError(f"count table line {no}: bad context key")
            t.add(n, key, pid, int(k))
        return t

    def save(self, path: "str | Path") -> None:
        Path(path).write_text(self.to_text())

    @classmethod
    def load(cls, path: "str | Path", machine: LogicalMachine, alpha: float = 1.0) -> "CountTable":
        return cls.from_text(Path(path).read_text(), machine, alpha)


def fit(trees: Iterable[AstTree], machine: LogicalMachine, alpha: float = 1.0) -> CountTable:
    table = CountTable(machine, alpha)
    for tree in trees:
        state = machine.init()
        for tok in linearize(tree):
            if tok is not POP:
                table.add(tok.nonterminal, context_key(state.vector()), tok.prod)
            state.advance(tok)
    return table


def predict(table: CountTable, n: str, state: ContextState) -> np.ndarray:
    """Full-length distribution over P (zeros outside P_c)."""
    out = np.zeros(len(table.grammar.productions))
    for pid, prob in table.distribution(n, state).items():
        out[table.grammar.prod_index[pid]] = prob
    return out


def nll(table: CountTable, trees: Iterable[AstTree]) -> float:
    """Mean natural-log NLL per prediction step (pops excluded)."""
    total, steps = 0.0, 0
    for tree in trees:
        state = table.machine.init()
        for tok in linearize(tree):
            if tok is not POP:
                p = table.distribution(tok.nonterminal, state).get(tok.prod, 0.0)
                total += -math.log(p) if p > 0 else math.inf
                steps += 1
            state.advance(tok)
    return total / steps if steps else 0.0
