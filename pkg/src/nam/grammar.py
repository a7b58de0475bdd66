"""Attribute grammars: data model, grammar-file loader and validation.

Grammar files are line oriented::

    root numeral
    nonterm numeral
    nonterm bits
    prod Pair : bits -> bits bits
    attr bits inh positionIn integer
    eq Pair bits$2.positionIn := copy(bits$1.positionIn)
    constraint Var3 declared_variable or(var.decl, member(var.env, Var3))

``sym$k`` names the k-th occurrence of ``sym`` in a production, counting the
left-hand side as occurrence 1.  A bare ``sym`` is allowed when the symbol
occurs once.  Three optional directives describe how the logical machine reads
the grammar: ``variables <nonterm>``, ``types <tag>...`` and
``context <set-attr> <expect-attr>``.
"""

from __future__ import annotations

import enum
import hashlib
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Callable

from .errors import GrammarSyntaxError, UnknownConstraint

INHERITED = "inh"
SYNTHESIZED = "syn"
VALUE_KINDS = ("integer", "boolean", "symbol", "symbol-set", "type-tag")


class ConstraintId(str, enum.Enum):
    DECLARED = "declared_variable"
    TYPESAFE = "typesafe_variable"

    @classmethod
    def parse(cls, text: "str | ConstraintId") -> "ConstraintId":
        if isinstance(text, ConstraintId):
            return text
        key = str(text).strip().lower()
        aliases = {"cd": cls.DECLARED, "c_d": cls.DECLARED, "declared": cls.DECLARED,
                   "ct": cls.TYPESAFE, "c_t": cls.TYPESAFE, "typesafe": cls.TYPESAFE}
        if key in aliases:
            return aliases[key]
        for member in cls:
            if member.value == key:
                return member
        raise UnknownConstraint(f"unknown constraint {text!r}")

    @property
    def short(self) -> str:
        return "cd" if self is ConstraintId.DECLARED else "ct"


# ---------------------------------------------------------------------------
# attribute function library

def _bind(env, var, tag):
    prefix = f"{var}:"
    kept = {s for s in env if not s.startswith(prefix)}
    kept.add(var)
    if tag is not None:
        kept.add(f"{var}:{tag}")
    return frozenset(kept)


def _typeof(env, var):
    prefix = f"{var}:"
    for s in env:
        if s.startswith(prefix):
            return s[len(prefix):]
    return None


def _typeok(env, var, tag):
    return tag is None or f"{var}:{tag}" in env


def _anyvar(env):
    return any(":" not in s for s in env)


def _anytyped(env, tag):
    return tag is None or any(s.endswith(f":{tag}") for s in env)


FUNCTIONS: dict[str, tuple[int, Callable[..., Any]]] = {
    "const": (1, lambda x: x),
    "copy": (1, lambda x: x),
    "inc": (1, lambda x: x + 1),
    "insert": (2, lambda s, x: s | {x}),
    "union": (2, lambda a, b: a | b),
    "eq": (2, lambda a, b: a == b),
    "member": (2, lambda s, x: x in s),
    "not": (1, lambda a: not a),
    "or": (2, lambda a, b: bool(a or b)),
    "and": (2, lambda a, b: bool(a and b)),
    "bind": (3, _bind),
    "typeof": (2, _typeof),
    "typeok": (3, _typeok),
    "anyvar": (1, _anyvar),
    "anytyped": (2, _anytyped),
}


# ---------------------------------------------------------------------------
# data model

@dataclass(frozen=True)
class Ref:
    occ: int
    attr: str
    text: str = ""


@dataclass(frozen=True)
class Lit:
    value: Any


@dataclass(frozen=True)
class Call:
    function: str
    args: tuple

    @property
    def text(self) -> str:
        return f"{self.function}({', '.join(_arg_text(a) for a in self.args)})"


def _arg_text(a) -> str:
    if isinstance(a, Lit):
        v = a.value
        return "none" if v is None else "{}" if v == frozenset() else str(v).lower() if isinstance(v, bool) else str(v)
    return a.text


def _refs(args) -> list[Ref]:
    out = []
    for a in args:
        if isinstance(a, Ref):
            out.append(a)
        elif isinstance(a, Call):
            out.extend(_refs(a.args))
    return out


@dataclass(frozen=True)
class AttributeDecl:
    symbol: str
    name: str
    direction: str
    value_kind: str


@dataclass(frozen=True)
class AttributeEquation:
    target: Ref
    function: str
    args: tuple
    line: int = 0

    @property
    def dependencies(self) -> list[Ref]:
        return _refs(self.args)


@dataclass(frozen=True)
class Constraint:
    cid: ConstraintId
    function: str
    args: tuple
    line: int = 0

    @property
    def dependencies(self) -> list[Ref]:
        return _refs(self.args)


@dataclass(frozen=True)
class Production:
    id: str
    lhs: str
    rhs: tuple[str, ...]
    equations: tuple[AttributeEquation, ...] = ()
    constraints: tuple[Constraint, ...] = ()
    line: int = 0

    @property
    def occurrences(self) -> tuple[str, ...]:
        return (self.lhs,) + self.rhs

    @property
    def constraint_refs(self) -> tuple[ConstraintId, ...]:
        return tuple(dict.fromkeys(c.cid for c in self.constraints))


@dataclass(frozen=True)
class CompiledProduction:
    """Evaluation plan for one production: which equations fire before each child."""

    prod: Production
    index: int
    children: tuple[int, ...]             # occurrence indices of nonterminal rhs symbols
    child_nonterminals: tuple[str, ...]
    inh_eqs: tuple[tuple[AttributeEquation, ...], ...]  # per occurrence index
    syn_eqs: tuple[AttributeEquation, ...]

    @property
    def arity(self) -> int:
        return len(self.children)


@dataclass
class Grammar:
    nonterminals: tuple[str, ...]
    terminals: tuple[str, ...]
    productions: tuple[Production, ...]
    root: str
    attribute_decls: dict[str, tuple[AttributeDecl, ...]]
    variables: str | None = None
    types: tuple[str, ...] = ()
    context_attrs: tuple[str, str] = ("env", "expect")
    source: str = ""
    problems: list[tuple[int, str]] = field(default_factory=list)

    def __post_init__(self):
        self.prod_by_id: dict[str, Production] = {}
        for p in self.productions:
            self.prod_by_id.setdefault(p.id, p)
        self.prod_index = {p.id: i for i, p in reversed(list(enumerate(self.productions)))}
        self.nt_index = {n: i for i, n in enumerate(self.nonterminals)}
        self._by_lhs: dict[str, tuple[str, ...]] = {n: () for n in self.nonterminals}
        for p in self.productions:
            self._by_lhs[p.lhs] = self._by_lhs.get(p.lhs, ()) + (p.id,)
        self.compiled = {p.id: _compile(p, self.prod_index[p.id], set(self.nonterminals))
                         for p in self.productions}
        self.digest = hashlib.sha256(self.source.encode()).hexdigest()[:16]

    def productions_of(self, n: str) -> tuple[str, ...]:
        """P_n, in file order."""
        return self._by_lhs.get(n, ())

    def attrs(self, symbol: str, direction: str | None = None) -> tuple[AttributeDecl, ...]:
        decls = self.attribute_decls.get(symbol, ())
        if direction is None:
            return decls
        return tuple(d for d in decls if d.direction == direction)

    def attr_decl(self, symbol: str, name: str) -> AttributeDecl | None:
        for d in self.attribute_decls.get(symbol, ()):
            if d.name == name:
                return d
        return None

    @property
    def variable_productions(self) -> tuple[str, ...]:
        """P_v: productions that choose a variable name."""
        return self.productions_of(self.variables) if self.variables else ()

    @property
    def constraint_ids(self) -> set[ConstraintId]:
        return {c.cid for p in self.productions for c in p.constraints}

    def reachable(self) -> set[str]:
        seen, todo = {self.root}, [self.root]
        while todo:
            n = todo.pop()
            for pid in self.productions_of(n):
                for s in self.prod_by_id[pid].rhs:
                    if s in self.nt_index and s not in seen:
                        seen.add(s)
                        todo.append(s)
        return seen


def _compile(p: Production, index: int, nonterminals: set[str]) -> CompiledProduction:
    occs = p.occurrences
    inh: list[list[AttributeEquation]] = [[] for _ in occs]
    syn = []
    for eq in p.equations:
        if eq.target.occ == 0:
            syn.append(eq)
        elif 0 < eq.target.occ < len(occs):
            inh[eq.target.occ].append(eq)
    children = tuple(i for i in range(1, len(occs)) if occs[i] in nonterminals)
    return CompiledProduction(p, index, children, tuple(occs[i] for i in children),
                              tuple(tuple(e) for e in inh), tuple(syn))


# ---------------------------------------------------------------------------
# loader

_CALL = re.compile(r"^([A-Za-z_][\w-]*)\s*\((.*)\)$")
_REF = re.compile(r"^([A-Za-z_]\w*)(?:\$(\d+))?\.([A-Za-z_]\w*)$")
_INT = re.compile(r"^-?\d+$")


def _literal(tok: str):
    if _INT.match(tok):
        return int(tok)
    if tok in ("true", "false"):
        return tok == "true"
    if tok == "none":
        return None
    if tok == "{}":
        return frozenset()
    if re.match(r"^[A-Za-z_][\w:]*$", tok):
        return tok
    raise ValueError(tok)


def _resolve(occs: tuple[str, ...], sym: str, k: str | None) -> int:
    idx = [i for i, s in enumerate(occs) if s == sym]
    if not idx:
        raise ValueError(f"symbol {sym!r} does not occur in the production")
    if k is None:
        if len(idx) > 1:
            raise ValueError(f"occurrence of {sym!r} is ambiguous; use {sym}$k")
        return idx[0]
    k_ = int(k)
    if not 1 <= k_ <= len(idx):
        raise ValueError(f"{sym}${k} out of range")
    return idx[k_ - 1]


def _split_args(body: str) -> list[str]:
    parts, depth, cur = [], 0, []
    for ch in body:
        if ch == "," and depth == 0:
            parts.append("".join(cur).strip())
            cur = []
            continue
        depth += (ch == "(") - (ch == ")")
        if depth < 0:
            raise ValueError("unbalanced parentheses")
        cur.append(ch)
    if depth:
        raise ValueError("unbalanced parentheses")
    tail = "".join(cur).strip()
    if tail or parts:
        parts.append(tail)
    return parts


def _parse_arg(tok: str, occs: tuple[str, ...]):
    if "(" in tok:
        fn, args = _parse_call(tok, occs)
        return Call(fn, args)
    r = _REF.match(tok)
    if r:
        return Ref(_resolve(occs, r.group(1), r.group(2)), r.group(3), tok)
    return Lit(_literal(tok))


def _parse_call(text: str, occs: tuple[str, ...]):
    m = _CALL.match(text.strip())
    if not m:
        raise ValueError(f"expected fn(args): {text!r}")
    fn, body = m.group(1), m.group(2).strip()
    return fn, tuple(_parse_arg(tok, occs) for tok in _split_args(body))


def parse_grammar(text: str) -> Grammar:
    """Parse grammar-file text.  Syntax errors raise; semantic problems are
    left for :func:`validate_grammar`."""
    nonterminals: list[str] = []
    terminals: list[str] = []
    prods: list[dict] = []
    decls: dict[str, list[AttributeDecl]] = {}
    pending_eqs: list[tuple[int, str, str]] = []
    pending_cons: list[tuple[int, str, str]] = []
    root = variables = None
    types: tuple[str, ...] = ()
    context = ("env", "expect")
    problems: list[tuple[int, str]] = []

    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        head, _, rest = line.partition(" ")
        rest = rest.strip()
        try:
            if head == "nonterm":
                nonterminals.append(_single(rest))
            elif head == "term":
                terminals.append(_single(rest))
            elif head == "root":
                root = _single(rest)
            elif head == "variables":
                variables = _single(rest)
            elif head == "types":
                types = tuple(rest.split())
            elif head == "context":
                parts = rest.split()
                if len(parts) != 2:
                    raise ValueError("context takes <set-attr> <expect-attr>")
                context = (parts[0], parts[1])
            elif head == "prod":
                m = re.match(r"^(\S+)\s*:\s*(\S+)\s*->(.*)$", rest)
                if not m:
                    raise ValueError("expected prod <id> : <lhs> -> <sym>...")
                prods.append(dict(id=m.group(1), lhs=m.group(2), rhs=tuple(m.group(3).split()),
                                  line=lineno, eqs=[], cons=[]))
            elif head == "attr":
                parts = rest.split()
                if len(parts) != 4 or parts[1] not in (INHERITED, SYNTHESIZED):
                    raise ValueError("expected attr <symbol> <inh|syn> <name> <kind>")
                if parts[3] not in VALUE_KINDS:
                    raise ValueError(f"unknown value kind {parts[3]!r}")
                decls.setdefault(parts[0], []).append(AttributeDecl(parts[0], parts[2], parts[1], parts[3]))
            elif head == "eq":
                pid, _, body = rest.partition(" ")
                pending_eqs.append((lineno, pid, body.strip()))
            elif head == "constraint":
                parts = rest.split(None, 2)
                if len(parts) != 3:
                    raise ValueError("expected constraint <prod-id> <constraint-id> <fn>(...)")
                pending_cons.append((lineno, parts[0], parts[1] + " " + parts[2]))
            else:
                raise ValueError(f"unknown directive {head!r}")
        except (ValueError, UnknownConstraint) as exc:
            raise GrammarSyntaxError(f"line {lineno}: {exc}") from None

    by_id: dict[str, dict] = {}
    for p in prods:
        by_id.setdefault(p["id"], p)
    for lineno, pid, body in pending_eqs:
        p = by_id.get(pid)
        if p is None:
            problems.append((lineno, f"equation for unknown production {pid!r}"))
            continue
        occs = (p["lhs"],) + p["rhs"]
        lhs_text, sep, call = body.partition(":=")
        try:
            if not sep:
                raise ValueError("expected <occ>.<attr> := <fn>(...)")
            r = _REF.match(lhs_text.strip())
            if not r:
                raise ValueError(f"bad equation target {lhs_text.strip()!r}")
            target = Ref(_resolve(occs, r.group(1), r.group(2)), r.group(3), lhs_text.strip())
            fn, args = _parse_call(call, occs)
        except ValueError as exc:
            raise GrammarSyntaxError(f"line {lineno}: {exc}") from None
        p["eqs"].append(AttributeEquation(target, fn, args, lineno))
    for lineno, pid, body in pending_cons:
        p = by_id.get(pid)
        if p is None:
            problems.append((lineno, f"constraint for unknown production {pid!r}"))
            continue
        occs = (p["lhs"],) + p["rhs"]
        cid_text, _, call = body.partition(" ")
        try:
            cid = ConstraintId.parse(cid_text)
            fn, args = _parse_call(call, occs)
        except (ValueError, UnknownConstraint) as exc:
            raise GrammarSyntaxError(f"line {lineno}: {exc}") from None
        p["cons"].append(Constraint(cid, fn, args, lineno))

    productions = tuple(Production(p["id"], p["lhs"], p["rhs"], tuple(p["eqs"]), tuple(p["cons"]), p["line"])
                        for p in prods)
    if root is None:
        if not nonterminals:
            raise GrammarSyntaxError("grammar declares no nonterminals")
        root = nonterminals[0]
    return Grammar(tuple(nonterminals), tuple(terminals), productions, root,
                   {k: tuple(v) for k, v in decls.items()}, variables, types, context,
                   source=text, problems=problems)


def _single(rest: str) -> str:
    parts = rest.split()
    if len(parts) != 1:
        raise ValueError("expected exactly one name")
    return parts[0]


def load_grammar(path: "str | Path") -> Grammar:
    return parse_grammar(Path(path).read_text())


def builtin_grammar_path(name: str) -> Path:
    """Path of a grammar file shipped with the package (``minic`` or ``numeral``)."""
    return Path(str(resources.files("nam") / "grammars" / f"{name}.ag"))


def builtin_grammar(name: str) -> Grammar:
    return load_grammar(builtin_grammar_path(name))


# ---------------------------------------------------------------------------
# validation

@dataclass(frozen=True)
class Issue:
    kind: str      # structural | equation | l-attributed | function | constraint
    where: str
    message: str

    def __str__(self):
        return f"[{self.kind}] {self.where}: {self.message}"


@dataclass
class ValidationReport:
    issues: list[Issue] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.issues

    def __len__(self):
        return len(self.issues)

    def __iter__(self):
        return iter(self.issues)

    def of_kind(self, kind: str) -> list[Issue]:
        return [i for i in self.issues if i.kind == kind]

    def __str__(self):
        if self.ok:
            return "grammar OK: no issues"
        return "\n".join(str(i) for i in self.issues)


def validate_grammar(g: Grammar) -> ValidationReport:
    """Check Def.-1 structure, equation completeness and L-attributedness.

    Nothing raises: every problem becomes an :class:`Issue`.
    """
    out: list[Issue] = []

    def add(kind, where, msg):
        out.append(Issue(kind, where, msg))

    for lineno, msg in g.problems:
        add("structural", f"line {lineno}", msg)

    nts, terms = set(g.nonterminals), set(g.terminals)
    symbols = nts | terms
    for dup in sorted({n for n in g.nonterminals if g.nonterminals.count(n) > 1}):
        add("structural", f"nonterm {dup}", "declared more than once")
    for both in sorted(nts & terms):
        add("structural", f"symbol {both}", "declared as both terminal and nonterminal")
    if g.root not in nts:
        add("structural", f"root {g.root}", "root is not a declared nonterminal")
    if g.attrs(g.root, INHERITED):
        add("structural", f"root {g.root}", "root symbol has inherited attributes")
    for t in g.terminals:
        if g.attrs(t, SYNTHESIZED):
            add("structural", f"terminal {t}", "terminal symbol has synthesized attributes")
    for sym, ds in g.attribute_decls.items():
        if sym not in symbols:
            add("structural", f"attr {sym}", "attribute declared on unknown symbol")
        names = [d.name for d in ds]
        for dup in sorted({n for n in names if names.count(n) > 1}):
            add("structural", f"attr {sym}.{dup}", "attribute declared more than once")

    seen_ids: set[str] = set()
    for p in g.productions:
        if p.id in seen_ids:
            add("structural", f"prod {p.id}", "duplicate production identifier")
        seen_ids.add(p.id)
        if p.lhs not in nts:
            add("structural", f"prod {p.id}", f"left-hand side {p.lhs!r} is not a nonterminal")
        for s in p.rhs:
            if s not in symbols:
                add("structural", f"prod {p.id}", f"unknown symbol {s!r} on right-hand side")
    for n in sorted(g.reachable() & nts):
        if not g.productions_of(n):
            add("structural", f"nonterm {n}", "reachable nonterminal has no productions")

    for p in g.productions:
        _check_production(g, p, add)

    if g.variables is not None:
        if g.variables not in nts:
            add("structural", f"variables {g.variables}", "not a nonterminal")
    return ValidationReport(out)


def _check_production(g: Grammar, p: Production, add) -> None:
    occs = p.occurrences
    where = f"prod {p.id}"

    def decl(ref: Ref):
        return g.attr_decl(occs[ref.occ], ref.attr)

    def is_input(ref: Ref) -> bool:
        d = decl(ref)
        if d is None:
            return False
        return (ref.occ == 0) == (d.direction == INHERITED)

    # output occurrences: syn of X0, inh of X1..Xk
    outputs = {(0, d.name) for d in g.attrs(p.lhs, SYNTHESIZED)}
    for i in range(1, len(occs)):
        outputs |= {(i, d.name) for d in g.attrs(occs[i], INHERITED)}

    defined: dict[tuple[int, str], int] = {}
    for eq in p.equations:
        t = eq.target
        ew = f"{where} line {eq.line}"
        _check_call(eq.function, eq.args, ew, add)
        d = decl(t)
        if d is None:
            add("equation", ew, f"target {t.text} is not a declared attribute")
            continue
        key = (t.occ, t.attr)
        if key not in outputs:
            add("equation", ew, f"target {t.text} is an input attribute, not an output")
            continue
        defined[key] = defined.get(key, 0) + 1
        for dep in eq.dependencies:
            dd = decl(dep)
            if dd is None:
                add("equation", ew, f"dependency {dep.text} is not a declared attribute")
                continue
            if t.occ == 0:
                if not is_input(dep):
                    add("equation", ew, f"synthesized {t.text} depends on output attribute {dep.text}")
            else:
                ok = (dep.occ == 0 and dd.direction == INHERITED) or \
                     (0 < dep.occ < t.occ and dd.direction == SYNTHESIZED)
                if not ok:
                    add("l-attributed", ew,
                        f"inherited {t.text} depends on {dep.text}, which is not an inherited "
                        f"attribute of the parent or a synthesized attribute of a left sibling")
    for key in sorted(outputs):
        n = defined.get(key, 0)
        name = f"{occs[key[0]]}${key[0] + 1}.{key[1]}"
        if n == 0:
            add("equation", where, f"missing equation for output attribute {name}")
        elif n > 1:
            add("equation", where, f"{n} equations for output attribute {name}")

    for c in p.constraints:
        cw = f"{where} line {c.line}"
        _check_call(c.function, c.args, cw, add)
        for dep in c.dependencies:
            dd = decl(dep)
            if dd is None:
                add("constraint", cw, f"dependency {dep.text} is not a declared attribute")
            elif not (dep.occ == 0 and dd.direction == INHERITED):
                add("constraint", cw, f"constraint reads {dep.text}; constraints may only read "
                                      f"inherited attributes of the left-hand side")


def _check_call(fn: str, args: tuple, where: str, add) -> None:
    spec = FUNCTIONS.get(fn)
    if spec is None:
        add("function", where, f"unknown function {fn!r}")
    elif spec[0] != len(args):
        add("function", where, f"{fn} takes {spec[0]} argument(s), got {len(args)}")
    for a in args:
        if isinstance(a, Call):
            _check_call(a.function, a.args, where, add)
