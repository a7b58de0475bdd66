"""A small tape-based reverse-mode differentiation kernel over dense float64 arrays.

Operations executed inside ``with Tape() as tape:`` append a backward closure
to the tape; ``tape.backward(loss)`` runs them in reverse order.  Closures are
recorded in execution order, so the tape is already topologically sorted.

Besides elementwise and matrix primitives there are two fused operations used
by the sequence model (an LSTM cell and the three-level loss).  Weight
gradients that are sums of outer products are deferred and flushed with one
matrix product at the end of the backward pass.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

_ACTIVE: list["Tape"] = []


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor({self.name or ''}{self.data.shape})"

    def zero_grad(self):
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __add__(self, other):
        return add(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)


class Tape:
    def __init__(self):
        self.ops: list[Callable[[], None]] = []
        self._outer: dict[int, list] = {}
        self._rowsum: dict[int, list] = {}

    def __enter__(self):
        _ACTIVE.append(self)
        return self

    def __exit__(self, *exc):
        _ACTIVE.remove(self)
        return False

    def record(self, fn: Callable[[], None]) -> None:
        self.ops.append(fn)

    def defer_outer(self, t: Tensor, left: np.ndarray, right: np.ndarray) -> None:
        """Schedule ``t.grad += outer(left, right)``."""
        entry = self._outer.get(id(t))
        if entry is None:
            entry = self._outer[id(t)] = [t, [], []]
        entry[1].append(left)
        entry[2].append(right)

    def defer_add(self, t: Tensor, g: np.ndarray) -> None:
        entry = self._rowsum.get(id(t))
        if entry is None:
            entry = self._rowsum[id(t)] = [t, []]
        entry[1].append(g)

    def backward(self, out: Tensor, seed=1.0) -> None:
        out.grad = np.broadcast_to(np.asarray(seed, dtype=np.float64), out.data.shape).copy()
        for fn in reversed(self.ops):
            fn()
        for t, lefts, rights in self._outer.values():
            _acc(t, np.asarray(lefts).T @ np.asarray(rights))
        for t, gs in self._rowsum.values():
            _acc(t, np.sum(gs, axis=0))
        self._outer.clear()
        self._rowsum.clear()


def _tape() -> Tape | None:
    return _ACTIVE[-1] if _ACTIVE else None


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _acc(t: Tensor, g) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.array(g, dtype=np.float64, copy=True).reshape(t.data.shape)
    else:
        t.grad = t.grad + np.reshape(g, t.data.shape)


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, s in enumerate(shape):
        if s == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


def _result(data, *inputs: Tensor) -> tuple[Tensor, Tape | None]:
    needs = any(t.requires_grad for t in inputs)
    out = Tensor(data, requires_grad=needs)
    return out, (_tape() if needs else None)


def _g(t: Tensor) -> np.ndarray:
    return t.grad if t.grad is not None else np.zeros_like(t.data)


# ---------------------------------------------------------------------------
# primitives

def add(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    out, tape = _result(a.data + b.data, a, b)
    if tape:
        def back():
            if out.grad is None:
                return
            _acc(a, _unbroadcast(out.grad, a.shape))
            _acc(b, _unbroadcast(out.grad, b.shape))
        tape.record(back)
    return out


def sub(a, b) -> Tensor:
    return add(a, scale(b, -1.0))


def mul(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    out, tape = _result(a.data * b.data, a, b)
    if tape:
        def back():
            if out.grad is None:
                return
            _acc(a, _unbroadcast(out.grad * b.data, a.shape))
            _acc(b, _unbroadcast(out.grad * a.data, b.shape))
        tape.record(back)
    return out


def scale(a, k: float) -> Tensor:
    a = _wrap(a)
    out, tape = _result(a.data * k, a)
    if tape:
        tape.record(lambda: out.grad is not None and _acc(a, out.grad * k))
    return out


def matmul(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    out, tape = _result(a.data @ b.data, a, b)
    if tape:
        def back():
            g = out.grad
            if g is None:
                return
            if a.requires_grad:
                _acc(a, g @ b.data.T if b.data.ndim == 2 else np.outer(g, b.data))
            if b.requires_grad:
                if a.data.ndim == 1:
                    _acc(b, np.outer(a.data, g))
                else:
                    _acc(b, a.data.T @ g)
        tape.record(back)
    return out


def sigmoid_np(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def sigmoid(a) -> Tensor:
    a = _wrap(a)
    s = sigmoid_np(a.data)
    out, tape = _result(s, a)
    if tape:
        tape.record(lambda: out.grad is not None and _acc(a, out.grad * s * (1 - s)))
    return out


def tanh(a) -> Tensor:
    a = _wrap(a)
    t = np.tanh(a.data)
    out, tape = _result(t, a)
    if tape:
        tape.record(lambda: out.grad is not None and _acc(a, out.grad * (1 - t * t)))
    return out


def exp(a) -> Tensor:
    a = _wrap(a)
    e = np.exp(a.data)
    out, tape = _result(e, a)
    if tape:
        tape.record(lambda: out.grad is not None and _acc(a, out.grad * e))
    return out


def log(a) -> Tensor:
    a = _wrap(a)
    out, tape = _result(np.log(a.data), a)
    if tape:
        tape.record(lambda: out.grad is not None and _acc(a, out.grad / a.data))
    return out


def absolute(a) -> Tensor:
    a = _wrap(a)
    out, tape = _result(np.abs(a.data), a)
    if tape:
        tape.record(lambda: out.grad is not None and _acc(a, out.grad * np.sign(a.data)))
    return out


def square(a) -> Tensor:
    a = _wrap(a)
    out, tape = _result(a.data * a.data, a)
    if tape:
        tape.record(lambda: out.grad is not None and _acc(a, out.grad * 2 * a.data))
    return out


def total(a) -> Tensor:
    """Sum of all entries (a scalar)."""
    a = _wrap(a)
    out, tape = _result(np.sum(a.data), a)
    if tape:
        tape.record(lambda: out.grad is not None and _acc(a, np.full(a.shape, float(out.grad))))
    return out


def sum_scalars(items: Sequence[Tensor]) -> Tensor:
    out, tape = _result(sum(float(t.data) for t in items), *items)
    if tape:
        def back():
            if out.grad is None:
                return
            for t in items:
                _acc(t, out.grad)
        tape.record(back)
    return out


def concat(items: Sequence[Tensor]) -> Tensor:
    items = [_wrap(t) for t in items]
    out, tape = _result(np.concatenate([t.data for t in items]), *items)
    if tape:
        def back():
            if out.grad is None:
                return
            pos = 0
            for t in items:
                n = t.data.shape[0]
                _acc(t, out.grad[pos:pos + n])
                pos += n
        tape.record(back)
    return out


def take(a: Tensor, sl) -> Tensor:
    """``a.data[sl]`` for a basic index or slice."""
    out, tape = _result(a.data[sl], a)
    if tape:
        def back():
            if out.grad is None:
                return
            g = np.zeros_like(a.data)
            g[sl] = out.grad
            _acc(a, g)
        tape.record(back)
    return out


def rows(a: Tensor) -> list[Tensor]:
    """Split a matrix into row tensors whose gradients flow back as one block."""
    n = a.data.shape[0]
    outs = [Tensor(a.data[i], requires_grad=a.requires_grad) for i in range(n)]
    tape = _tape() if a.requires_grad else None
    if tape:
        def back():
            g = np.zeros_like(a.data)
            any_ = False
            for i, o in enumerate(outs):
                if o.grad is not None:
                    g[i] = o.grad
                    any_ = True
            if any_:
                _acc(a, g)
        tape.record(back)
    return outs


def stack(items: Sequence[Tensor]) -> Tensor:
    out, tape = _result(np.stack([t.data for t in items]), *items)
    if tape:
        def back():
            if out.grad is None:
                return
            for i, t in enumerate(items):
                _acc(t, out.grad[i])
        tape.record(back)
    return out


def softmax(a) -> Tensor:
    a = _wrap(a)
    z = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=-1, keepdims=True)
    out, tape = _result(p, a)
    if tape:
        def back():
            if out.grad is None:
                return
            g = out.grad
            _acc(a, p * (g - (g * p).sum(axis=-1, keepdims=True)))
        tape.record(back)
    return out


# ---------------------------------------------------------------------------
# fused operations

def lstm_cell_forward(zx: np.ndarray, h: np.ndarray, c: np.ndarray, Wh: np.ndarray, b: np.ndarray):
    """One LSTM step given the input contribution ``zx = x @ Wx``.

    Gate layout along the last axis is [output, input, forget, candidate],
    which keeps the three sigmoid gates and the three cell-driven gates
    contiguous.  Returns ``(h_new, c_new, cache)``.
    """
    H = h.shape[-1]
    z = zx + h @ Wh + b
    s = sigmoid_np(z[..., :3 * H])
    g = np.tanh(z[..., 3 * H:])
    o, i, f = s[..., :H], s[..., H:2 * H], s[..., 2 * H:]
    c_new = f * c + i * g
    tc = np.tanh(c_new)
    h_new = o * tc
    return h_new, c_new, (i, f, o, g, c, tc)


def lstm_cell_backward(dh: np.ndarray, dc: np.ndarray, cache):
    """Gradient w.r.t. the gate pre-activations and the previous cell state."""
    i, f, o, g, c, tc = cache
    dct = dc + dh * o * (1 - tc * tc)
    dz = np.concatenate([dh * tc * o * (1 - o), dct * g * i * (1 - i),
                         dct * c * f * (1 - f), dct * i * (1 - g * g)], axis=-1)
    return dz, dct * f


def lstm_cell(x: Tensor, h: Tensor, c: Tensor, Wh: Tensor, b: Tensor,
              Wx: Tensor | None = None) -> tuple[Tensor, Tensor]:
    """Fused LSTM step.  With ``Wx`` the input is projected here, otherwise
    ``x`` already holds the projected gate contribution."""
    zx = x.data @ Wx.data if Wx is not None else x.data
    h_new, c_new, cache = lstm_cell_forward(zx, h.data, c.data, Wh.data, b.data)
    inputs = [x, h, c, Wh, b] + ([Wx] if Wx is not None else [])
    needs = any(t.requires_grad for t in inputs)
    ho = Tensor(h_new, requires_grad=needs)
    co = Tensor(c_new, requires_grad=needs)
    tape = _tape() if needs else None
    if tape:
        def back():
            if ho.grad is None and co.grad is None:
                return
            dz, dc_prev = lstm_cell_backward(_g(ho), _g(co), cache)
            if Wx is not None:
                _acc(x, Wx.data @ dz)
                if Wx.requires_grad:
                    tape.defer_outer(Wx, x.data, dz)
            else:
                _acc(x, dz)
            _acc(h, Wh.data @ dz)
            _acc(c, dc_prev)
            if Wh.requires_grad:
                tape.defer_outer(Wh, h.data, dz)
            if b.requires_grad:
                tape.defer_add(b, dz)
        tape.record(back)
    return ho, co


LC_EPS = 1e-12          # floor on the legal mass inside the log


def three_level_loss_np(logits: np.ndarray, targets: np.ndarray, legal: np.ndarray | None, lam: float):
    """Per-row (xe, lc, probs) for logits of shape (n, |P|)."""
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    se = e.sum(axis=-1, keepdims=True)
    p = e / se
    rows_ = np.arange(logits.shape[0])
    xe = np.log(se[:, 0]) - z[rows_, targets]
    if legal is None or lam == 0.0:
        lc = np.zeros(logits.shape[0])
    else:
        lc = -np.log(np.maximum((p * legal).sum(axis=-1), LC_EPS))
    return xe, lc, p


def three_level_loss(logits: Tensor, targets: np.ndarray, legal: np.ndarray | None,
                     lam: float, weight: float = 1.0):
    """``weight * sum_rows(xe + lam * lc)`` as a scalar tensor, plus per-row xe and lc.

    ``legal`` is a boolean matrix marking P_c for each row; ``None`` or
    ``lam == 0`` gives plain cross-entropy.
    """
    xe, lc, p = three_level_loss_np(logits.data, targets, legal, lam)
    use_lc = legal is not None and lam != 0.0
    value = weight * float(np.sum(xe + lam * lc)) if use_lc else weight * float(np.sum(xe))
    out, tape = _result(value, logits)
    if tape:
        def back():
            if out.grad is None:
                return
            d = p.copy()
            d[np.arange(len(targets)), targets] -= 1.0
            if use_lc:
                S = (p * legal).sum(axis=-1, keepdims=True)
                live = S >= LC_EPS       # below the floor the loss is constant
                d += lam * np.where(live, -(p * (legal - S)) / np.maximum(S, LC_EPS), 0.0)
            _acc(logits, float(out.grad) * weight * d)
        tape.record(back)
    return out, xe, lc


def l1_l2_penalty(weights: Sequence[Tensor], l1: float, l2: float) -> Tensor:
    value = sum(l1 * np.abs(w.data).sum() + l2 * (w.data * w.data).sum() for w in weights)
    out, tape = _result(value, *weights)
    if tape:
        def back():
            if out.grad is None:
                return
            for w in weights:
                _acc(w, float(out.grad) * (l1 * np.sign(w.data) + 2 * l2 * w.data))
        tape.record(back)
    return out


def lstm_sequence(X: Tensor, h0: np.ndarray, c0: np.ndarray, Wx: Tensor, Wh: Tensor,
                  b: Tensor) -> tuple[Tensor, np.ndarray, np.ndarray]:
    """Run one LSTM layer over all rows of ``X`` as a single tape operation.

    The input projection is one matrix product; only the recurrence is
    stepped.  Returns the stacked hidden states (a tensor) and the final
    ``(h, c)`` as plain arrays, i.e. the carried state is detached.
    """
    T, H = X.data.shape[0], h0.shape[0]
    Z = X.data @ Wx.data + b.data
    Wh_ = Wh.data
    Hs = np.empty((T, H))
    Cs = np.empty((T + 1, H))
    TC = np.empty((T, H))
    Cs[0] = c0
    # sigmoid(x) = (1 + tanh(x / 2)) / 2, so one tanh call covers all gates
    half = np.full(4 * H, 0.5)
    half[3 * H:] = 1.0
    h = h0
    for t in range(T):
        z = Z[t]
        z += h @ Wh_
        z *= half
        np.tanh(z, out=z)
        s = z[:3 * H]
        s *= 0.5
        s += 0.5
        c = Cs[t + 1]
        np.multiply(z[2 * H:3 * H], Cs[t], out=c)
        c += z[H:2 * H] * z[3 * H:]
        np.tanh(c, out=TC[t])
        h = Hs[t]
        np.multiply(z[:H], TC[t], out=h)
    h = Hs[-1].copy() if T else h0
    c = Cs[-1].copy()
    # Z now holds the gate activations [o, i, f, g]
    out, tape = _result(Hs, X, Wx, Wh, b)
    if tape:
        def back():
            if out.grad is None:
                return
            dH = out.grad
            o, i, f, g = Z[:, :H], Z[:, H:2 * H], Z[:, 2 * H:3 * H], Z[:, 3 * H:]
            tc = TC
            A = o * (1 - tc * tc)
            OT = tc * o * (1 - o)
            K = np.empty((T, 3, H))
            K[:, 0] = g * i * (1 - i)
            K[:, 1] = Cs[:-1] * f * (1 - f)
            K[:, 2] = i * (1 - g * g)
            dZ = np.empty((T, 4 * H))
            dZ3 = dZ[:, H:].reshape(T, 3, H)
            dh_next = np.zeros(H)
            dc_next = np.zeros(H)
            for t in range(T - 1, -1, -1):
                dh = dH[t] + dh_next
                dct = dc_next + dh * A[t]
                np.multiply(dh, OT[t], out=dZ[t, :H])
                np.multiply(K[t], dct, out=dZ3[t])
                dh_next = Wh_ @ dZ[t]
                dc_next = dct * f[t]
            if X.requires_grad:
                _acc(X, dZ @ Wx.data.T)
            if Wx.requires_grad:
                _acc(Wx, X.data.T @ dZ)
            if Wh.requires_grad:
                Hprev = np.vstack([h0[None, :], Hs[:-1]])
                _acc(Wh, Hprev.T @ dZ)
            if b.requires_grad:
                _acc(b, dZ.sum(axis=0))
        tape.record(back)
    return out, h, c
