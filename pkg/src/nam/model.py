"""Stacked-LSTM production predictor with the three-level loss.

Inputs at each token are a one-hot nonterminal (or the pop flag) optionally
concatenated with the logical machine's context vector; the output is a
softmax over every production of the grammar.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .errors import IllegalTruth, NonFiniteGradient, ShapeMismatch
from .grammar import Grammar
from .machine import LogicalMachine
from .tree import POP

VARIANTS = {
    "vanilla": (False, False),
    "loss": (False, True),
    "context": (True, False),
    "both": (True, True),
}
VARIANT_LABELS = {
    "vanilla": "Vanilla RNN",
    "loss": "NAM w/ 3-level loss",
    "context": "NAM w/ context",
    "both": "NAM w/ both",
    "sgwc": "SGWC",
}


@dataclass
class ModelConfig:
    hidden: int = 200
    layers: int = 2
    truncation: int = 50
    learning_rate: float = 0.001
    keep_prob: float = 0.9
    l1: float = 0.0001
    l2: float = 0.0001
    lam: float = 0.1
    use_context: bool = True
    use_three_level_loss: bool = True
    n_nonterminals: int = 0
    context_width: int = 0
    n_outputs: int = 0
    seed: int = 0
    max_epochs: int = 30
    patience: int = 3
    early_stop_samples: int = 100
    node_cap: int = 2000

    def __post_init__(self):
        if not 0 < self.keep_prob <= 1:
            raise ValueError("keep_prob must lie in (0, 1]")
        if self.learning_rate <= 0 or self.hidden < 1 or self.layers < 1 or self.truncation < 1:
            raise ValueError("learning_rate, hidden, layers and truncation must be positive")
        if min(self.l1, self.l2, self.lam) < 0:
            raise ValueError("regularization weights must be non-negative")

    @property
    def input_width(self) -> int:
        return self.n_nonterminals + 1 + (self.context_width if self.use_context else 0)

    @classmethod
    def for_grammar(cls, grammar: Grammar, machine: LogicalMachine | None, **kw) -> "ModelConfig":
        kw.setdefault("n_nonterminals", len(grammar.nonterminals))
        kw.setdefault("n_outputs", len(grammar.productions))
        kw.setdefault("context_width", machine.width if machine is not None else 0)
        return cls(**kw)

    @classmethod
    def from_mapping(cls, data: dict) -> "ModelConfig":
        kw = {}
        types = {f.name: f.type for f in fields(cls)}
        for k, v in data.items():
            if k not in types:
                raise ValueError(f"unknown model config key {k!r}")
            t = types[k]
            if t in ("bool", bool):
                kw[k] = v if isinstance(v, bool) else str(v).strip().lower() in ("1", "true", "yes", "on")
            elif t in ("int", int):
                kw[k] = int(v)
            else:
                kw[k] = float(v)
        return cls(**kw)

    def to_mapping(self) -> dict:
        return asdict(self)

    def with_variant(self, variant: str) -> "ModelConfig":
        ctx, loss = VARIANTS[variant]
        d = asdict(self)
        d.update(use_context=ctx, use_three_level_loss=loss)
        return ModelConfig(**d)


# ---------------------------------------------------------------------------
# parameters

class ModelParams:
    """Named views into one flat float64 parameter vector."""

    def __init__(self, config: ModelConfig, flat: np.ndarray | None = None):
        self.config = config
        H, P = config.hidden, config.n_outputs
        layout = []
        for layer in range(config.layers):
            n_in = config.input_width if layer == 0 else H
            layout += [(f"Wx{layer}", (n_in, 4 * H)), (f"Wh{layer}", (H, 4 * H)), (f"b{layer}", (4 * H,))]
        layout += [("Wo", (H, P)), ("bo", (P,))]
        self.layout = layout
        size = sum(math.prod(s) for _, s in layout)
        if flat is None:
            flat = np.zeros(size)
        elif flat.shape != (size,):
            raise ShapeMismatch(f"parameter vector has {flat.shape[0]} entries, config needs {size}")
        self.flat = flat
        self.views: dict[str, np.ndarray] = {}
        pos = 0
        for name, shape in layout:
            n = math.prod(shape)
            self.views[name] = flat[pos:pos + n].reshape(shape)
            pos += n

    @property
    def weight_names(self) -> list[str]:
        return [n for n, _ in self.layout if n.startswith("W")]

    def __getitem__(self, name: str) -> np.ndarray:
        return self.views[name]

    def copy(self) -> "ModelParams":
        return ModelParams(self.config, self.flat.copy())

    @classmethod
    def initialize(cls, config: ModelConfig, rng: np.random.Generator) -> "ModelParams":
        """Glorot-uniform weights, zero biases except forget gates at 1."""
        p = cls(config)
        H = config.hidden
        for name, shape in p.layout:
            if name.startswith("W"):
                bound = math.sqrt(6.0 / (shape[0] + shape[1]))
                p.views[name][...] = rng.uniform(-bound, bound, size=shape)
            elif name.startswith("b") and name != "bo":
                p.views[name][2 * H:3 * H] = 1.0
        return p

    def tensors(self) -> dict[str, ad.Tensor]:
        return {n: ad.Tensor(v, requires_grad=True, name=n) for n, v in self.views.items()}


def zero_state(config: ModelConfig) -> list[tuple[np.ndarray, np.ndarray]]:
    return [(np.zeros(config.hidden), np.zeros(config.hidden)) for _ in range(config.layers)]


# ---------------------------------------------------------------------------
# inference

def encode_input(config: ModelConfig, nt_index: int, ctx: np.ndarray | None) -> np.ndarray:
    """One input vector; ``nt_index == n_nonterminals`` marks a pop."""
    x = np.zeros(config.input_width)
    x[nt_index] = 1.0
    if config.use_context and ctx is not None:
        x[config.n_nonterminals + 1:] = ctx
    return x


def forward_step(params: ModelParams, x: np.ndarray, state, train: bool = False,
                 rng: np.random.Generator | None = None, want_probs: bool = True):
    """Advance the stacked LSTM by one token; return (distribution over P or None, new state)."""
    cfg = params.config
    if x.shape != (cfg.input_width,):
        raise ShapeMismatch(f"input has shape {x.shape}, expected ({cfg.input_width},)")
    keep = cfg.keep_prob
    drop = train and keep < 1.0
    h_in = x
    if drop:
        h_in = h_in * (rng.random(h_in.shape) < keep) / keep
    new_state = []
    for layer, (h, c) in enumerate(state):
        zx = h_in @ params[f"Wx{layer}"]
        h, c, _ = ad.lstm_cell_forward(zx, h, c, params[f"Wh{layer}"], params[f"b{layer}"])
        new_state.append((h, c))
        h_in = h
        if drop:
            h_in = h_in * (rng.random(h_in.shape) < keep) / keep
    if not want_probs:
        return None, new_state
    logits = h_in @ params["Wo"] + params["bo"]
    z = logits - logits.max()
    e = np.exp(z)
    return e / e.sum(), new_state


# ---------------------------------------------------------------------------
# loss report

@dataclass
class LossReport:
    xe: float
    lc: float
    total: float
    mass_correct: float
    mass_legal_incorrect: float
    mass_illegal: float


def three_level_loss(dist: np.ndarray, p_true: int, legal: Sequence[int], config: ModelConfig,
                     p_n: Sequence[int] | None = None) -> LossReport:
    """Evaluate the objective on a probability vector.

    ``legal`` holds the indices of P_c; ``p_n`` (default: all outputs) bounds
    the illegal partition reported in the masses.
    """
    legal = set(int(i) for i in legal)
    if p_true not in legal:
        raise IllegalTruth(f"true production {p_true} is not legal here")
    xe = -math.log(dist[p_true])
    legal_mass = float(sum(dist[i] for i in legal))
    lc = -math.log(max(legal_mass, ad.LC_EPS))
    lam = config.lam if config.use_three_level_loss else 0.0
    total = xe + lam * lc if config.use_three_level_loss else xe
    universe = set(range(len(dist))) if p_n is None else set(p_n)
    return LossReport(
        xe=xe, lc=lc, total=total,
        mass_correct=float(dist[p_true]),
        mass_legal_incorrect=legal_mass - float(dist[p_true]),
        mass_illegal=float(sum(dist[i] for i in universe - legal)),
    )


# ---------------------------------------------------------------------------
# training data

@dataclass
class EncodedStream:
    tokens: np.ndarray          # nonterminal index per token, n_nonterminals for a pop
    targets: np.ndarray         # production index per token, -1 at pops
    context: np.ndarray | None  # (tokens, width) uint8
    legal: np.ndarray | None    # (prediction steps, |P|) bool

    @property
    def n_steps(self) -> int:
        return int((self.targets >= 0).sum())


def encode_stream(stream: Sequence, grammar: Grammar, machine: LogicalMachine | None,
                  want_context: bool, want_legal: bool) -> EncodedStream:
    n_nt = len(grammar.nonterminals)
    tokens = np.empty(len(stream), dtype=np.int32)
    targets = np.full(len(stream), -1, dtype=np.int32)
    for i, tok in enumerate(stream):
        if tok is POP:
            tokens[i] = n_nt
        else:
            tokens[i] = grammar.nt_index[tok.nonterminal]
            targets[i] = grammar.prod_index[tok.prod]
    context = legal = None
    if want_context or want_legal:
        state = machine.init()
        ctx_rows = [] if want_context else None
        legal_rows = [] if want_legal else None
        n_p = len(grammar.productions)
        for tok in stream:
            if want_context:
                ctx_rows.append(state.vector())
            if want_legal and tok is not POP:
                row = np.zeros(n_p, dtype=bool)
                for pid in state.legal(tok.nonterminal):
                    row[grammar.prod_index[pid]] = True
                if not row[grammar.prod_index[tok.prod]]:
                    raise IllegalTruth(f"corpus step {tok.prod} is not legal under {machine.constraint.value}")
                legal_rows.append(row)
            state.advance(tok)
        if want_context:
            context = np.array(ctx_rows, dtype=np.uint8).reshape(len(stream), machine.width)
        if want_legal:
            legal = np.array(legal_rows, dtype=bool).reshape(-1, n_p)
    return EncodedStream(tokens, targets, context, legal)


def input_matrix(config: ModelConfig, enc: EncodedStream, lo: int, hi: int) -> np.ndarray:
    X = np.zeros((hi - lo, config.input_width))
    X[np.arange(hi - lo), enc.tokens[lo:hi]] = 1.0
    if config.use_context and enc.context is not None:
        X[:, config.n_nonterminals + 1:] = enc.context[lo:hi]
    return X


def windows(enc: EncodedStream, truncation: int) -> list[tuple[int, int, int, int]]:
    """Token ranges holding at most ``truncation`` prediction steps each.

    Returns ``(token_lo, token_hi, step_lo, step_hi)`` tuples.
    """
    out = []
    lo = step_lo = steps = 0
    is_step = enc.targets >= 0
    for i in range(len(enc.targets)):
        if is_step[i]:
            steps += 1
            if steps == truncation:
                out.append((lo, i + 1, step_lo, step_lo + steps))
                lo, step_lo, steps = i + 1, step_lo + steps, 0
    if lo < len(enc.targets):
        out.append((lo, len(enc.targets), step_lo, step_lo + steps))
    return out


# ---------------------------------------------------------------------------
# truncated BPTT

def stream_xe(params: ModelParams, enc: EncodedStream) -> np.ndarray:
    """Teacher-forced cross-entropy (nats) at every prediction step, no dropout."""
    cfg = params.config
    inp = ad.Tensor(input_matrix(cfg, enc, 0, len(enc.tokens)))
    for layer in range(cfg.layers):
        inp, _, _ = ad.lstm_sequence(inp, np.zeros(cfg.hidden), np.zeros(cfg.hidden),
                                     ad.Tensor(params[f"Wx{layer}"]), ad.Tensor(params[f"Wh{layer}"]),
                                     ad.Tensor(params[f"b{layer}"]))
    rows_ = np.flatnonzero(enc.targets >= 0)
    logits = inp.data[rows_] @ params["Wo"] + params["bo"]
    xe, _, _ = ad.three_level_loss_np(logits, enc.targets[rows_], None, 0.0)
    return xe


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros(cls, n: int) -> "AdamState":
        return cls(np.zeros(n), np.zeros(n))


def adam_step(opt: AdamState, flat: np.ndarray, grad: np.ndarray, lr: float) -> None:
    """In-place bias-corrected Adam update of ``flat``."""
    if grad.shape != flat.shape:
        raise ShapeMismatch("gradient and parameter shapes differ")
    opt.t += 1
    opt.m *= opt.beta1
    opt.m += (1 - opt.beta1) * grad
    opt.v *= opt.beta2
    opt.v += (1 - opt.beta2) * grad * grad
    m_hat = opt.m / (1 - opt.beta1 ** opt.t)
    v_hat = opt.v / (1 - opt.beta2 ** opt.t)
    flat -= lr * m_hat / (np.sqrt(v_hat) + opt.eps)


@dataclass
class WindowResult:
    objective: float
    xe: np.ndarray
    lc: np.ndarray
    state: list
    grad: np.ndarray | None


def window_objective(params: ModelParams, X: np.ndarray, targets: np.ndarray,
                     legal: np.ndarray | None, state, train: bool = False,
                     rng: np.random.Generator | None = None, with_grad: bool = True) -> WindowResult:
    """Mean three-level loss over the window's prediction steps plus L1/L2 on weights.

    ``targets`` is aligned with the rows of ``X`` (-1 where no prediction is
    made).  Returns the gradient as a flat vector when ``with_grad``.
    """
    cfg = params.config
    keep = cfg.keep_prob
    drop = train and keep < 1.0
    step_rows = np.flatnonzero(targets >= 0)
    lam = cfg.lam if (cfg.use_three_level_loss and legal is not None) else 0.0
    with ad.Tape() as tape:
        P = params.tensors() if with_grad else {n: ad.Tensor(v) for n, v in params.views.items()}
        if drop:
            X = X * (rng.random(X.shape) < keep) / keep
        inp = ad.Tensor(X)
        new_state = []
        for layer, (h, c) in enumerate(state):
            inp, h, c = ad.lstm_sequence(inp, h, c, P[f"Wx{layer}"], P[f"Wh{layer}"], P[f"b{layer}"])
            new_state.append((h, c))
            if drop:
                inp = ad.mul(inp, (rng.random(inp.shape) < keep) / keep)
        n = len(step_rows)
        reg = ad.l1_l2_penalty([P[w] for w in params.weight_names], cfg.l1, cfg.l2)
        if n:
            logits = ad.add(ad.matmul(ad.take(inp, step_rows), P["Wo"]), P["bo"])
            data_loss, xe, lc = ad.three_level_loss(logits, targets[step_rows], legal, lam, weight=1.0 / n)
            obj = ad.add(data_loss, reg)
        else:
            xe = lc = np.zeros(0)
            obj = reg
        grad = None
        if with_grad:
            tape.backward(obj)
            grad = np.concatenate([
                (P[name].grad if P[name].grad is not None else np.zeros(shape)).ravel()
                for name, shape in params.layout])
    return WindowResult(float(obj.data), xe, lc, new_state, grad)


def tbptt_step(params: ModelParams, X: np.ndarray, targets: np.ndarray, legal: np.ndarray | None,
               state, opt: AdamState, rng: np.random.Generator | None = None,
               train: bool = True) -> WindowResult:
    """Forward/backward over one window and one Adam update; the returned state is detached."""
    res = window_objective(params, X, targets, legal, state, train=train, rng=rng,
                           with_grad=bool((targets >= 0).any()))
    if res.grad is not None:
        if not np.all(np.isfinite(res.grad)):
            bad, pos = [], 0
            for name, shape in params.layout:
                n = math.prod(shape)
                if not np.all(np.isfinite(res.grad[pos:pos + n])):
                    bad.append(name)
                pos += n
            raise NonFiniteGradient(f"non-finite gradient after {opt.t} updates "
                                    f"(objective {res.objective}); parameters: {', '.join(bad)}")
        adam_step(opt, params.flat, res.grad, params.config.learning_rate)
        if not np.all(np.isfinite(params.flat)):
            raise NonFiniteGradient(f"non-finite parameters after update {opt.t}")
    return res
