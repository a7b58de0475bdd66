"""The logical machine.

An incremental evaluator of the L-attributed grammar that follows a token
stream left to right.  At every hole it knows the hole's inherited attributes,
which is all that is needed to project a fixed-length context vector and to
decide which productions the active constraint allows there (P_c).
"""

from __future__ import annotations

from collections import Counter
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .attributes import apply_function
from .errors import IllegalTruth, InconsistentStream, UnknownNonterminal
from .grammar import ConstraintId, Grammar
from .tree import POP, Step

_EMPTY: dict = {}


class LogicalMachine:
    """Per-(grammar, constraint) tables and caches shared by all its states."""

    def __init__(self, grammar: Grammar, constraint):
        self.grammar = grammar
        self.constraint = ConstraintId.parse(constraint)
        self.variables = grammar.variable_productions
        self.types = grammar.types
        self.v_max = len(self.variables)
        self.env_attr, self.expect_attr = grammar.context_attrs
        if self.constraint is ConstraintId.DECLARED:
            self.width = self.v_max
        else:
            self.width = self.v_max * len(self.types) + len(self.types)
        self._vectors: dict = {}
        self._legal: dict = {}
        self._checks = {
            pid: tuple(c for c in grammar.prod_by_id[pid].constraints if c.cid is self.constraint)
            for pid in grammar.prod_by_id
        }
        self.calls: Counter = Counter()

    def init(self) -> "ContextState":
        return ContextState(self)

    # -- projections ------------------------------------------------------

    def vector_for(self, ctx: dict) -> np.ndarray:
        env = ctx.get(self.env_attr) or frozenset()
        expect = ctx.get(self.expect_attr) if self.constraint is ConstraintId.TYPESAFE else None
        key = (env, expect)
        vec = self._vectors.get(key)
        if vec is None:
            vec = np.zeros(self.width, dtype=np.uint8)
            if self.constraint is ConstraintId.DECLARED:
                for i, v in enumerate(self.variables):
                    vec[i] = v in env
            else:
                nt = len(self.types)
                for i, v in enumerate(self.variables):
                    for j, t in enumerate(self.types):
                        vec[i * nt + j] = f"{v}:{t}" in env
                for j, t in enumerate(self.types):
                    vec[self.v_max * nt + j] = expect == t
            vec.flags.writeable = False
            self._vectors[key] = vec
        return vec

    def legal_for(self, n: str, ctx: dict) -> frozenset:
        key = (n, tuple(sorted(ctx.items())))
        out = self._legal.get(key)
        if out is None:
            g = self.grammar
            if n not in g.nt_index:
                raise UnknownNonterminal(f"unknown nonterminal {n!r}")
            keep = []
            for pid in g.productions_of(n):
                values = [ctx] + [_EMPTY] * len(g.prod_by_id[pid].rhs)
                if all(apply_function(c.function, c.args, values, pid) for c in self._checks[pid]):
                    keep.append(pid)
            out = frozenset(keep)
            self._legal[key] = out
        return out


class ContextState:
    """Running attribute state: one frame per open node plus the current hole."""

    __slots__ = ("machine", "frames", "focus_nt", "focus", "done")

    def __init__(self, machine: LogicalMachine):
        self.machine = machine
        self.frames: list[list] = []          # [compiled production, occurrence values, child slot]
        self.focus_nt: str | None = machine.grammar.root
        self.focus: dict = {}
        self.done = False

    def copy(self) -> "ContextState":
        new = ContextState.__new__(ContextState)
        new.machine = self.machine
        new.frames = [[cp, [dict(v) for v in values], slot] for cp, values, slot in self.frames]
        new.focus_nt = self.focus_nt
        new.done = self.done
        if self.focus_nt is not None and new.frames:
            cp, values, slot = new.frames[-1]
            new.focus = values[cp.children[slot]]
        else:
            new.focus = dict(self.focus)
        return new

    # -- views ------------------------------------------------------------

    @property
    def constraint(self) -> ConstraintId:
        return self.machine.constraint

    @property
    def context(self) -> dict:
        """Inherited attributes at the current point of the threading."""
        if self.focus_nt is not None:
            return self.focus
        if self.frames:
            return self.frames[-1][1][0]
        return _EMPTY

    @property
    def declared(self) -> frozenset:
        env = self.context.get(self.machine.env_attr) or frozenset()
        return frozenset(v for v in self.machine.variables if v in env)

    @property
    def var_types(self) -> dict[str, str]:
        env = self.context.get(self.machine.env_attr) or frozenset()
        out = {}
        for s in env:
            if ":" in s:
                v, t = s.split(":", 1)
                out[v] = t
        return out

    @property
    def expected_type(self) -> str | None:
        return self.context.get(self.machine.expect_attr)

    @property
    def scopes(self) -> list[frozenset]:
        """Declared-variable set visible in each open node, outermost first."""
        env_attr = self.machine.env_attr
        return [values[0].get(env_attr, frozenset()) for _, values, _ in self.frames]

    # -- transitions ------------------------------------------------------

    def advance(self, token) -> None:
        """Apply one token in place."""
        if token is POP:
            self._pop()
        else:
            self._step(token)

    def _step(self, token) -> None:
        n, pid = token
        if self.focus_nt is None:
            raise InconsistentStream(f"step {pid}: no open hole")
        if n != self.focus_nt:
            raise InconsistentStream(f"step {pid}: hole is a {self.focus_nt}, token says {n}")
        g = self.machine.grammar
        p = g.prod_by_id.get(pid)
        if p is None or p.lhs != n:
            raise InconsistentStream(f"step {pid}: not a production of {n}")
        cp = g.compiled[pid]
        values = [dict(self.focus)] + [{} for _ in p.rhs]
        self.frames.append([cp, values, 0])
        self._open_child(cp, values, 0)

    def _open_child(self, cp, values, slot) -> None:
        lo = cp.children[slot - 1] + 1 if slot else 1
        hi = cp.children[slot] if slot < cp.arity else len(values) - 1
        for i in range(lo, hi + 1):
            for eq in cp.inh_eqs[i]:
                values[i][eq.target.attr] = apply_function(eq.function, eq.args, values, cp.prod.id)
        if slot < cp.arity:
            self.focus_nt = cp.child_nonterminals[slot]
            self.focus = values[cp.children[slot]]
        else:
            self.focus_nt = None
            self.focus = _EMPTY

    def _pop(self) -> None:
        if not self.frames:
            raise InconsistentStream("pop with no open scope frame")
        if self.focus_nt is not None:
            raise InconsistentStream(f"pop while a {self.focus_nt} hole is still open")
        cp, values, _ = self.frames.pop()
        inh_keys = set(values[0])
        for eq in cp.syn_eqs:
            values[0][eq.target.attr] = apply_function(eq.function, eq.args, values, cp.prod.id)
        if not self.frames:
            self.done = True
            return
        parent = self.frames[-1]
        pcp, pvalues, slot = parent
        pvalues[pcp.children[slot]].update({k: v for k, v in values[0].items() if k not in inh_keys})
        parent[2] = slot + 1
        self._open_child(pcp, pvalues, slot + 1)

    # -- projections ------------------------------------------------------

    def vector(self) -> np.ndarray:
        self.machine.calls["vector"] += 1
        return self.machine.vector_for(self.context)

    def legal(self, n: str | None = None) -> frozenset:
        self.machine.calls["legal"] += 1
        n = self.focus_nt if n is None else n
        if n is None:
            return frozenset()
        ctx = self.focus if n == self.focus_nt else self.context
        return self.machine.legal_for(n, ctx)


_MACHINES: dict = {}


def machine_for(grammar: Grammar, constraint) -> LogicalMachine:
    key = (id(grammar), ConstraintId.parse(constraint))
    m = _MACHINES.get(key)
    if m is None or m.grammar is not grammar:
        m = LogicalMachine(grammar, constraint)
        _MACHINES[key] = m
    return m


def init_context(grammar: Grammar, constraint) -> ContextState:
    return machine_for(grammar, constraint).init()


def update_context(state: ContextState, token) -> ContextState:
    """Return the state after ``token``; ``state`` itself is left untouched."""
    new = state.copy()
    new.advance(token)
    return new


def context_vector(state: ContextState) -> np.ndarray:
    return state.vector()


def legal_productions(state: ContextState, n: str) -> frozenset:
    return state.legal(n)


def joint_vector(states: Sequence[ContextState]) -> np.ndarray:
    """Concatenate the vectors of machines run side by side (one per constraint)."""
    return np.concatenate([s.vector() for s in states])


def partition(p_n: Iterable[str], p_true: str, p_c: Iterable[str]):
    """Split P_n into ({p_true}, P_c - {p_true}, P_n - P_c)."""
    p_n, p_c = frozenset(p_n), frozenset(p_c)
    if p_true not in p_c:
        raise IllegalTruth(f"true production {p_true!r} is not in the legal set")
    if not p_c <= p_n:
        raise ValueError("legal set is not a subset of P_n")
    return frozenset({p_true}), p_c - {p_true}, p_n - p_c


def replay(machine: LogicalMachine, stream: Sequence):
    """Yield ``(token, state)`` with the state *before* each token is applied.

    The state object is reused; copy it if it must outlive the iteration.
    """
    state = machine.init()
    for tok in stream:
        yield tok, state
        state.advance(tok)


def dump_contexts(machine: LogicalMachine, stream: Sequence, path: "str | Path") -> None:
    """Debug dump: one line per token with its index and context vector bits."""
    with open(path, "w") as fh:
        for i, (_, state) in enumerate(replay(machine, stream)):
            fh.write(f"{i} {''.join(map(str, state.vector()))}\n")
