"""One check per acceptance criterion; each prints a ``criterion N: PASS|FAIL`` line.

Criteria 1-7 are exact.  Criteria 8-11 are directional and read the desk-scale
runs from ``desk.py`` (cached).  A directional criterion that fails at seed 0
is re-run with seeds 0, 1, 2 and must hold in at least two.  A directional
criterion that still fails is reported as FAIL and marked xfail rather than
tuned until it passes.
"""

import math
import time

import numpy as np
import pytest

import desk
from conftest import random_derivation, random_numeral
from nam.attributes import check_tree, evaluate_attributes
from nam.corpus import CorpusSpec, generate_corpus
from nam.engine import SgwcPolicy, sample_batch, train
from nam.evaluator import MODEL_ORDER
from nam.machine import LogicalMachine
from nam.model import ModelConfig, ModelParams, encode_stream, input_matrix, three_level_loss, \
    window_objective, windows
from nam.sgwc import fit
from nam.tree import AstTree, delinearize, linearize
from test_machine import stepwise_violations

VANILLA, LOSS, CONTEXT, BOTH, SGWC = MODEL_ORDER


def report(capsys, n, ok, detail):
    with capsys.disabled():
        print(f"\ncriterion {n}: {'PASS' if ok else 'FAIL'} {detail}")


@pytest.fixture(scope="module")
def full_corpus(minic):
    return generate_corpus(CorpusSpec(seed=0), minic)


# ---------------------------------------------------------------------------
# exact property suites

def test_criterion_1_numeral_threading(numeral, capsys):
    t0 = time.perf_counter()
    bad = 0
    for seed in range(1000):
        a = evaluate_attributes(numeral, random_numeral(seed, 31))
        pos = [n.syn["positionOut"] for _, n in a.preorder() if not n.children]
        bad += pos != list(range(1, len(pos) + 1))
    dt = time.perf_counter() - t0
    ok = bad == 0 and dt < 5
    report(capsys, 1, ok, f"1000 trees, {bad} mismatches, {dt:.2f}s")
    assert ok


def test_criterion_2_round_trip(minic, full_corpus, capsys):
    trees = full_corpus.trees + [random_derivation(minic, s) for s in range(1000)]
    bad = sum(delinearize(linearize(t), minic) != t for t in trees)
    report(capsys, 2, bad == 0, f"{len(trees)} trees, {bad} mismatches")
    assert bad == 0


def mutate_until_illegal(minic, tree, constraint, rng):
    vars_ = minic.variable_productions
    for _ in range(200):
        uses = [p for p, n in tree.preorder() if n.nonterminal == "var"]
        p = uses[int(rng.integers(len(uses)))]
        u = tree.replace(p, AstTree("var", vars_[int(rng.integers(len(vars_)))]))
        if check_tree(minic, u, constraint):
            return u
    return None


def test_criterion_3_machine_agrees_with_checker(minic, full_corpus, capsys):
    rng = np.random.default_rng(3)
    mismatches = checked = 0
    for c in ("cd", "ct"):
        trees = list(full_corpus.trees)
        mutants = []
        while len(mutants) < 500:
            u = mutate_until_illegal(minic, full_corpus.trees[int(rng.integers(len(full_corpus.trees)))], c, rng)
            if u is not None:
                mutants.append(u)
        for t in trees + mutants:
            stepwise = stepwise_violations(minic, t, c)
            checker = {v.path for v in check_tree(minic, t, c)}
            mismatches += (not stepwise) != (not checker) or stepwise != checker
            checked += 1
    report(capsys, 3, mismatches == 0, f"{checked} trees under cd and ct, {mismatches} disagreements")
    assert mismatches == 0


def test_criterion_4_gradient_check(minic, full_corpus, capsys):
    t0 = time.perf_counter()
    worst = 0.0
    for c, tree_i in (("cd", 0), ("ct", 1)):
        m = LogicalMachine(minic, c)
        cfg = ModelConfig.for_grammar(minic, m, hidden=8, layers=2)
        enc = encode_stream(linearize(full_corpus.train[tree_i]), minic, m, True, True)
        params = ModelParams.initialize(cfg, np.random.default_rng(tree_i))
        params.flat += np.random.default_rng(9).normal(0, 0.05, params.flat.shape)
        lo, hi, slo, shi = windows(enc, 10)[2]
        args = (input_matrix(cfg, enc, lo, hi), enc.targets[lo:hi], enc.legal[slo:shi])
        rs = np.random.default_rng(tree_i)
        state = [(rs.normal(size=8) * 0.3, rs.normal(size=8) * 0.3) for _ in range(2)]
        g = window_objective(params, *args, state).grad
        num = np.empty_like(g)
        for i in range(g.size):
            old = params.flat[i]
            params.flat[i] = old + 1e-6
            up = window_objective(params, *args, state, with_grad=False).objective
            params.flat[i] = old - 1e-6
            down = window_objective(params, *args, state, with_grad=False).objective
            params.flat[i] = old
            num[i] = (up - down) / 2e-6
        worst = max(worst, np.linalg.norm(g - num) / (np.linalg.norm(g) + np.linalg.norm(num)))
    dt = time.perf_counter() - t0
    ok = worst < 1e-4 and dt < 60
    report(capsys, 4, ok, f"relative error {worst:.2e}, {dt:.1f}s")
    assert ok


def test_criterion_5_loss_arithmetic(capsys):
    cfg = ModelConfig(n_outputs=4, lam=0.1)
    r = three_level_loss(np.full(4, 0.25), 0, [0, 1], cfg)
    errs = [abs(r.xe - math.log(4)), abs(r.lc - math.log(2)), abs(r.total - (math.log(4) + 0.1 * math.log(2)))]
    one = three_level_loss(np.array([1.0, 0, 0, 0]), 0, [0, 1], cfg).total
    ok = max(errs) <= 1e-12 and abs(one) <= 1e-12
    report(capsys, 5, ok, f"max error {max(errs):.1e}, mass-1 total {one:.1e}")
    assert ok


def test_criterion_6_sgwc_never_violates(minic, full_corpus, capsys):
    totals = {}
    for c in ("cd", "ct"):
        rep = sample_batch(SgwcPolicy(fit(full_corpus.train, LogicalMachine(minic, c))), 1000, seed=6,
                           keep_trees=False)
        totals[c] = (rep.total_violations, rep.incomplete)
    ok = all(v == 0 for v, _ in totals.values())
    report(capsys, 6, ok, ", ".join(f"{c}: {v} violations ({i} capped)" for c, (v, i) in totals.items()))
    assert ok


def test_criterion_7_determinism(tmp_path, minic, capsys):
    spec = CorpusSpec(programs=12, procs=2, stmts=10, seed=5)
    same = {}
    for run in ("a", "b"):
        d = tmp_path / run
        corpus = generate_corpus(spec, minic)
        corpus.save(d / "corpus")
        cfg = ModelConfig(hidden=6, max_epochs=2, early_stop_samples=4, node_cap=400, seed=2)
        ck = train(cfg, corpus, minic, "ct", "both", checkpoint_path=d / "m.ckpt")
        from nam.engine import sample_checkpoint
        sample_checkpoint(ck, minic, 10, seed=3).save(d / "samples.txt")
    for name in ("corpus/train.txt", "corpus/test.txt", "corpus/manifest.txt", "m.ckpt", "samples.txt"):
        same[name] = (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    ok = all(same.values())
    report(capsys, 7, ok, "bit-identical: " + ", ".join(f"{k} {v}" for k, v in same.items()))
    assert ok


# ---------------------------------------------------------------------------
# directional reproductions at desk scale

_RUNS: dict = {}


def tables(seed):
    if seed not in _RUNS:
        _RUNS[seed] = {c: desk.desk_run(c, seed) for c in ("cd", "ct")}
    return {c: r.report for c, r in _RUNS[seed].items()}, {c: r.corpus_means for c, r in _RUNS[seed].items()}


def crit8(t, _):
    r = t["cd"]
    L = {m: r.row(m).legal for m in (VANILLA, LOSS, CONTEXT, BOTH)}
    ok = L[BOTH] >= L[CONTEXT] > L[LOSS] >= L[VANILLA] and L[BOTH] >= 1.5 * L[VANILLA]
    return ok, "legal (cd) " + " / ".join(f"{m} {v}" for m, v in L.items())


def crit9(t, _):
    ok, parts = True, []
    for c in ("cd", "ct"):
        V = {m: t[c].row(m).violations for m in (VANILLA, LOSS, CONTEXT, BOTH)}
        ok &= V[VANILLA] > V[LOSS] > V[CONTEXT] >= V[BOTH]
        parts.append(f"{c}: " + " / ".join(str(V[m]) for m in (VANILLA, LOSS, CONTEXT, BOTH)))
    return ok, "violations vanilla/loss/context/both " + "; ".join(parts)


def crit10(t, _):
    ok, parts = True, []
    for c in ("cd", "ct"):
        r = t[c]
        v, ctx, both = r.row(VANILLA).nll_train, r.row(CONTEXT).nll_train, r.row(BOTH).nll_train
        ok &= ctx < v and both >= ctx
        parts.append(f"{c} train NLL vanilla {v:.4f} context {ctx:.4f} both {both:.4f}")
    s = t["ct"].row(SGWC)
    ratio = s.nll_test / s.nll_train
    ok &= ratio > 2
    parts.append(f"SGWC ct test/train {s.nll_test:.3f}/{s.nll_train:.3f} = {ratio:.2f}")
    return ok, "; ".join(parts)


def crit11(t, means):
    target = means["cd"]["procs"]
    ctx, van = t["cd"].row(CONTEXT).avg_procs, t["cd"].row(VANILLA).avg_procs
    ok = abs(ctx - target) < abs(van - target)
    return ok, f"avg procs (cd) context {ctx:.2f} vanilla {van:.2f} corpus {target:.2f}"


@pytest.mark.slow
@pytest.mark.parametrize("n,check", [(8, crit8), (9, crit9), (10, crit10), (11, crit11)])
def test_directional(n, check, capsys):
    ok, detail = check(*tables(0))
    if not ok:
        votes = [ok] + [check(*tables(s))[0] for s in desk.SEEDS[1:]]
        ok = sum(votes) >= 2
        detail += f" | seeds {list(desk.SEEDS)}: {['hold' if v else 'fail' for v in votes]}"
    report(capsys, n, ok, detail)
    if not ok:
        pytest.xfail(f"criterion {n} not reproduced at desk scale (analysis in the decisions ledger)")
