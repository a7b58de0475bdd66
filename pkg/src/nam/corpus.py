"""Synthetic mini-C corpus.

Programs are built top-down with their own scope bookkeeping so that every
variable use is declared and type-correct.  Per-program counts come from
truncated geometric distributions whose means are solved to hit the targets.
"""

from __future__ import annotations

import functools
import statistics
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import __version__
from .errors import SpecInfeasible
from .grammar import Grammar, builtin_grammar
from .tree import AstTree, alias_variables, read_trees, write_trees

TYPE_PRODS = {"int": "TInt", "float": "TFloat", "char": "TChar", "bool": "TBool"}

STMT_WEIGHTS = {"Assign": 0.40, "Incr": 0.08, "Print": 0.10, "Call": 0.08, "Return": 0.04,
                "If": 0.12, "IfElse": 0.06, "While": 0.12}
COMPOUND = ("If", "IfElse", "While")
MAX_NESTING = 2


@dataclass
class CorpusSpec:
    programs: int = 1500
    vars: float = 7.01
    types: float = 3.29
    procs: float = 6.47
    stmts: float = 101.82
    holdout: float = 0.15
    seed: int = 0
    max_procs: int = 16
    max_stmts: int = 250
    global_prob: float = 0.4
    share_prob: float = 0.15
    init_prob: float = 0.3

    def __post_init__(self):
        if not 0 < self.holdout < 1:
            raise SpecInfeasible(f"holdout fraction must lie in (0, 1), got {self.holdout}")
        for name in ("vars", "types", "procs", "stmts"):
            if getattr(self, name) <= 0:
                raise SpecInfeasible(f"target {name} must be positive")
        if self.programs < 0:
            raise SpecInfeasible("program count must be non-negative")

    @classmethod
    def from_mapping(cls, data: dict) -> "CorpusSpec":
        known = {f.name: f.type for f in fields(cls)}
        kw = {}
        for k, v in data.items():
            if k not in known:
                raise SpecInfeasible(f"unknown corpus spec key {k!r}")
            kw[k] = int(v) if known[k] in ("int", int) else float(v)
        return cls(**kw)


@functools.lru_cache(maxsize=None)
def _geometric_pmf(mean: float, cap: int, what: str) -> np.ndarray:
    """pmf on 1..cap of a truncated geometric whose mean is ``mean``."""
    hi_mean = (cap + 1) / 2
    if mean < 1 or mean > hi_mean + 1e-12:
        raise SpecInfeasible(f"target mean {mean} for {what} is unreachable with cap {cap} "
                             f"(feasible range 1..{hi_mean})")
    k = np.arange(1, cap + 1)
    if mean == 1:
        pmf = np.zeros(cap)
        pmf[0] = 1.0
        return pmf

    def pmf_of(q):
        w = q ** (k - 1)
        return w / w.sum()

    lo, hi = 0.0, 1.0
    for _ in range(200):
        mid = (lo + hi) / 2
        if (pmf_of(mid) * k).sum() < mean:
            lo = mid
        else:
            hi = mid
    return pmf_of((lo + hi) / 2)


class _ProgramBuilder:
    def __init__(self, spec: CorpusSpec, rng: np.random.Generator, grammar: Grammar):
        self.spec = spec
        self.rng = rng
        self.types = list(grammar.types) or list(TYPE_PRODS)
        self.v_max = len(grammar.variable_productions) or 16
        if spec.types > len(self.types):
            raise SpecInfeasible(f"target {spec.types} unique types exceeds |T| = {len(self.types)}")
        self.var_pmf = _geometric_pmf(spec.vars, self.v_max, "variables")
        self.proc_pmf = _geometric_pmf(spec.procs, spec.max_procs, "procedures")
        self.stmt_pmf = _geometric_pmf(spec.stmts, spec.max_stmts, "statements")
        self.kinds = list(STMT_WEIGHTS)
        w = np.array([STMT_WEIGHTS[k] for k in self.kinds])
        self.kind_p = w / w.sum()
        simple = [k not in COMPOUND for k in self.kinds]
        ws = w * simple
        self.simple_p = ws / ws.sum()

    def _draw(self, pmf) -> int:
        return int(self.rng.choice(len(pmf), p=pmf)) + 1

    def build(self) -> AstTree:
        rng = self.rng
        n_vars, n_procs, n_stmts = self._draw(self.var_pmf), self._draw(self.proc_pmf), self._draw(self.stmt_pmf)
        names = [f"v{i}" for i in range(n_vars)]
        self.vtype = {v: self.types[int(rng.integers(len(self.types)))] for v in names}
        globals_, home = [], {p: [] for p in range(n_procs)}
        for v in names:
            if rng.random() < self.spec.global_prob:
                globals_.append(v)
                continue
            owner = int(rng.integers(n_procs))
            for p in range(n_procs):
                if p == owner or rng.random() < self.spec.share_prob:
                    home[p].append(v)
        budgets = rng.multinomial(n_stmts, np.full(n_procs, 1 / n_procs))
        self.unused = set(names)

        gdecls = self._decls(globals_, [])
        ret_pool = sorted(set(self.vtype.values()))
        procs = []
        for p in range(n_procs):
            ret = ret_pool[int(rng.integers(len(ret_pool)))]
            locals_ = home[p]
            ldecls = self._decls(locals_, list(globals_))
            scope = list(globals_) + locals_
            pending = [v for v in locals_ + globals_ if v in self.unused]
            body = self._stmts(int(budgets[p]), scope, ret, 0, pending)
            procs.append(_n("proc", "Proc", _n("type", TYPE_PRODS[ret]), ldecls, body))
        tree = _n("program", "Program", gdecls, _chain("procs", "ProcsCons", "ProcsNil", procs))
        return alias_variables(tree, "var", self.v_max)

    def _decls(self, vars_, scope) -> AstTree:
        items = []
        scope = list(scope)
        for v in vars_:
            t = self.vtype[v]
            ty, var = _n("type", TYPE_PRODS[t]), _n("var", v)
            if self.rng.random() < self.spec.init_prob:
                items.append(_n("decl", "DeclInit", ty, var, self._expr(t, scope, 0)))
            else:
                items.append(_n("decl", "Decl", ty, var))
            scope.append(v)
        return _chain("decls", "DeclsCons", "DeclsNil", items)

    def _stmts(self, budget: int, scope, ret, depth, pending) -> AstTree:
        items = []
        while budget > 0:
            stmt, used = self._stmt(budget, scope, ret, depth, pending)
            items.append(stmt)
            budget -= used
        return _chain("stmts", "StmtsCons", "StmtsNil", items)

    def _stmt(self, budget, scope, ret, depth, pending):
        rng = self.rng
        if pending:
            v = pending.pop(0)
            self.unused.discard(v)
            return _n("stmt", "Assign", _n("var", v), self._expr(self.vtype[v], scope, 0)), 1
        if not scope:
            kind = ("Call", "Print", "Return")[int(rng.integers(3))]
        elif depth < MAX_NESTING and budget >= 2:
            kind = self.kinds[int(rng.choice(len(self.kinds), p=self.kind_p))]
        else:
            kind = self.kinds[int(rng.choice(len(self.kinds), p=self.simple_p))]
        if kind == "Assign":
            v = self._pick(scope)
            return _n("stmt", "Assign", _n("var", v), self._expr(self.vtype[v], scope, 0)), 1
        if kind == "Incr":
            return _n("stmt", "Incr", _n("var", self._pick(scope))), 1
        if kind == "Print":
            return _n("stmt", "Print", self._expr(None, scope, 0)), 1
        if kind == "Call":
            return _n("stmt", "Call"), 1
        if kind == "Return":
            return _n("stmt", "Return", self._expr(ret, scope, 0)), 1
        inner = int(rng.integers(1, min(budget - 1, 6) + 1))
        cond = self._cond(scope)
        if kind == "IfElse" and inner >= 2:
            a = int(rng.integers(1, inner))
            return _n("stmt", "IfElse", cond, self._stmts(a, scope, ret, depth + 1, []),
                      self._stmts(inner - a, scope, ret, depth + 1, [])), 1 + inner
        prod = "While" if kind == "While" else "If"
        return _n("stmt", prod, cond, self._stmts(inner, scope, ret, depth + 1, [])), 1 + inner

    def _pick(self, vars_) -> str:
        v = vars_[int(self.rng.integers(len(vars_)))]
        self.unused.discard(v)
        return v

    def _cond(self, scope) -> AstTree:
        bools = [v for v in scope if self.vtype[v] == "bool"]
        if bools and self.rng.random() < 0.3:
            return _n("cond", "Test", _n("var", self._pick(bools)))
        v = self._pick(scope)
        return _n("cond", "Cmp", _n("var", v), self._expr(self.vtype[v], scope, 0))

    def _expr(self, expect, scope, depth) -> AstTree:
        r = self.rng.random()
        if depth < 3 and r < 0.25 / (depth + 1):
            op = ("Add", "Sub", "Mul")[int(self.rng.integers(3))]
            return _n("expr", op, self._expr(expect, scope, depth + 1), self._expr(expect, scope, depth + 1))
        cands = [v for v in scope if expect is None or self.vtype[v] == expect]
        if cands and r < 0.7:
            return _n("expr", "Use", _n("var", self._pick(cands)))
        return _n("expr", "Lit")


def _n(nt: str, prod: str, *kids: AstTree) -> AstTree:
    return AstTree(nt, prod, kids)


def _chain(nt: str, cons: str, nil: str, items: list[AstTree]) -> AstTree:
    node = _n(nt, nil)
    for item in reversed(items):
        node = _n(nt, cons, item, node)
    return node


def generate_program(spec: CorpusSpec, rng: np.random.Generator, grammar: Grammar | None = None) -> AstTree:
    return _ProgramBuilder(spec, rng, grammar or builtin_grammar("minic")).build()


# ---------------------------------------------------------------------------
# corpus level

def program_stats(tree: AstTree) -> dict[str, int]:
    vars_, types = set(), set()
    procs = stmts = 0
    for _, node in tree.preorder():
        nt = node.nonterminal
        if nt == "var":
            vars_.add(node.prod)
        elif nt == "type":
            types.add(node.prod)
        elif nt == "proc":
            procs += 1
        elif nt == "stmt":
            stmts += 1
    return {"vars": len(vars_), "types": len(types), "procs": procs, "stmts": stmts}


def corpus_stats(trees) -> dict[str, dict[str, float]]:
    """Mean and variance of the four per-program quantities."""
    rows = [program_stats(t) for t in trees]
    out = {}
    for key in ("vars", "types", "procs", "stmts"):
        xs = [r[key] for r in rows]
        out[key] = {"mean": statistics.fmean(xs) if xs else 0.0,
                    "var": statistics.pvariance(xs) if xs else 0.0}
    return out


def split(trees: list, fraction: float, seed: int = 0) -> tuple[list, list]:
    """Seeded uniform random partition; the held-out part has round(fraction * n) trees."""
    n = len(trees)
    n_test = int(round(fraction * n))
    order = np.random.default_rng(np.random.SeedSequence([seed, 1])).permutation(n)
    test_idx = set(order[:n_test].tolist())
    train = [t for i, t in enumerate(trees) if i not in test_idx]
    test = [t for i, t in enumerate(trees) if i in test_idx]
    return train, test


@dataclass
class Corpus:
    train: list[AstTree]
    test: list[AstTree]
    grammar: Grammar
    spec: CorpusSpec = field(default_factory=CorpusSpec)

    @property
    def trees(self) -> list[AstTree]:
        return self.train + self.test

    def save(self, out_dir: "str | Path") -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_trees(out / "train.txt", self.train)
        write_trees(out / "test.txt", self.test)
        stats = corpus_stats(self.trees)
        lines = [f"tool_version = {__version__}", f"grammar_hash = {self.grammar.digest}",
                 f"train_count = {len(self.train)}", f"test_count = {len(self.test)}"]
        lines += [f"spec.{k} = {v}" for k, v in asdict(self.spec).items()]
        for key, s in stats.items():
            lines += [f"stats.{key}.mean = {s['mean']:.6f}", f"stats.{key}.var = {s['var']:.6f}"]
        (out / "manifest.txt").write_text("\n".join(lines) + "\n")

    @classmethod
    def load(cls, in_dir: "str | Path", grammar: Grammar) -> "Corpus":
        d = Path(in_dir)
        spec = CorpusSpec()
        manifest = d / "manifest.txt"
        if manifest.exists():
            kv = read_key_values(manifest)
            spec = CorpusSpec.from_mapping({k[5:]: v for k, v in kv.items() if k.startswith("spec.")})
        return cls(read_trees(d / "train.txt", grammar), read_trees(d / "test.txt", grammar), grammar, spec)


def read_key_values(path: "str | Path") -> dict[str, str]:
    out = {}
    for line in Path(path).read_text().splitlines():
        line = line.split("#", 1)[0].strip()
        if line:
            k, _, v = line.partition("=")
            out[k.strip()] = v.strip()
    return out


def generate_corpus(spec: CorpusSpec, grammar: Grammar | None = None) -> Corpus:
    grammar = grammar or builtin_grammar("minic")
    builder_rngs = np.random.SeedSequence(spec.seed).spawn(spec.programs)
    trees = []
    for child in builder_rngs:
        trees.append(_ProgramBuilder(spec, np.random.default_rng(child), grammar).build())
    train, test = split(trees, spec.holdout, spec.seed)
    return Corpus(train, test, grammar, spec)
