"""Differentiable numeric core: a small reverse-mode tape over numpy arrays.

Only the operations the dialogue model actually needs are provided. Values
are float64 throughout. Two engineering rules keep the forward pass exactly
reproducible when a dialogue prefix is re-evaluated on its own:

  * reductions along sequence-indexed axes use strictly sequential
    (cumsum-based) summation, so exact trailing zeros are no-ops;
  * matrix products whose shape would depend on the sequence length are
    computed as fixed-shape matrix-vector products per row.

BLAS (whose summation order is shape-dependent) is used only in backward
closures, where speed matters and bitwise reproducibility does not.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ContractError

Array = np.ndarray


def _seqsum(x: Array, axis: int) -> Array:
    """Left-to-right sequential sum; trailing exact zeros cannot perturb it."""
    return np.cumsum(x, axis=axis).take(-1, axis=axis)


class Tensor:
    """Dense float64 array plus an optional gradient slot.

    Tensors are immutable once produced by an operation; the implicit graph
    (parents + backward closures) is confined to one thread of execution.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(
        self,
        data,
        requires_grad: bool = False,
        parents: tuple["Tensor", ...] = (),
        backward: Callable[[Array], None] | None = None,
    ):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: Array | None = None
        self.requires_grad = requires_grad
        self._parents = parents
        self._backward = backward

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() on tensor of shape {self.data.shape}")
        return float(self.data.reshape(()))

    def backward(self) -> None:
        """Reverse-mode accumulation from a scalar output."""
        if self.data.size != 1:
            raise ContractError("backward() requires a scalar tensor")
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen and p.requires_grad:
                    stack.append((p, False))
        _accum(self, np.ones_like(self.data))
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)
                if node._parents:  # free intermediate grads, keep leaves
                    node.grad = None


def _accum(t: Tensor, g: Array) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.array(g, dtype=np.float64)
    else:
        t.grad += g


def _needs(*ts: Tensor) -> bool:
    return any(t.requires_grad for t in ts)


def _make(data: Array, parents: tuple[Tensor, ...], backward) -> Tensor:
    req = _needs(*parents)
    return Tensor(data, requires_grad=req, parents=parents if req else (),
                  backward=backward if req else None)


def constant(data) -> Tensor:
    return Tensor(data, requires_grad=False)


def parameter(data) -> Tensor:
    return Tensor(data, requires_grad=True)


def _unbroadcast(g: Array, shape: tuple[int, ...]) -> Array:
    """Reduce a broadcast gradient back to the original operand shape."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# elementwise ops
# ---------------------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    out = a.data + b.data

    def back(g: Array) -> None:
        _accum(a, _unbroadcast(g, a.data.shape))
        _accum(b, _unbroadcast(g, b.data.shape))

    return _make(out, (a, b), back)


def sub(a: Tensor, b: Tensor) -> Tensor:
    out = a.data - b.data

    def back(g: Array) -> None:
        _accum(a, _unbroadcast(g, a.data.shape))
        _accum(b, _unbroadcast(-g, b.data.shape))

    return _make(out, (a, b), back)


def mul(a: Tensor, b: Tensor) -> Tensor:
    out = a.data * b.data

    def back(g: Array) -> None:
        _accum(a, _unbroadcast(g * b.data, a.data.shape))
        _accum(b, _unbroadcast(g * a.data, b.data.shape))

    return _make(out, (a, b), back)


def scale(a: Tensor, s: float) -> Tensor:
    out = a.data * s

    def back(g: Array) -> None:
        _accum(a, g * s)

    return _make(out, (a,), back)


def square(a: Tensor) -> Tensor:
    out = a.data * a.data

    def back(g: Array) -> None:
        _accum(a, g * (2.0 * a.data))

    return _make(out, (a,), back)


def sigmoid(a: Tensor) -> Tensor:
    out = _sigmoid(a.data)

    def back(g: Array) -> None:
        _accum(a, g * out * (1.0 - out))

    return _make(out, (a,), back)


def _sigmoid(x: Array) -> Array:
    # branch on sign for overflow safety
    pos = x >= 0
    z = np.empty_like(x)
    z[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    z[~pos] = ex / (1.0 + ex)
    return z


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)

    def back(g: Array) -> None:
        _accum(a, g * (1.0 - out * out))

    return _make(out, (a,), back)


def relu(a: Tensor) -> Tensor:
    out = np.maximum(a.data, 0.0)

    def back(g: Array) -> None:
        _accum(a, g * (a.data > 0.0))

    return _make(out, (a,), back)


def log_clamped(a: Tensor, eps: float = 1e-12) -> Tensor:
    """log(max(x, eps)); zero gradient in the clamped region."""
    clamped = np.maximum(a.data, eps)
    out = np.log(clamped)

    def back(g: Array) -> None:
        _accum(a, g * np.where(a.data >= eps, 1.0 / clamped, 0.0))

    return _make(out, (a,), back)


def sum_all(a: Tensor) -> Tensor:
    out = np.asarray(a.data.sum())

    def back(g: Array) -> None:
        _accum(a, np.full_like(a.data, float(g)))

    return _make(out, (a,), back)


def mean_all(a: Tensor) -> Tensor:
    return scale(sum_all(a), 1.0 / a.data.size)


def dropout(a: Tensor, p: float, rng: np.random.Generator) -> Tensor:
    """Inverted dropout: scales kept entries by 1/(1-p). Train-time only;
    callers must bypass it entirely in evaluation/verification mode."""
    if not 0.0 <= p < 1.0:
        raise ContractError(f"dropout rate {p} outside [0, 1)")
    if p == 0.0:
        return a
    mask = (rng.random(a.data.shape) >= p) / (1.0 - p)
    out = a.data * mask

    def back(g: Array) -> None:
        _accum(a, g * mask)

    return _make(out, (a,), back)


# ---------------------------------------------------------------------------
# shape ops
# ---------------------------------------------------------------------------

def transpose(a: Tensor) -> Tensor:
    out = a.data.T

    def back(g: Array) -> None:
        _accum(a, g.T)

    return _make(out, (a,), back)


def concat1d(parts: Sequence[Tensor]) -> Tensor:
    parts = list(parts)
    out = np.concatenate([p.data for p in parts])
    offsets = np.cumsum([0] + [p.data.shape[0] for p in parts])

    def back(g: Array) -> None:
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            _accum(p, g[lo:hi])

    return _make(out, tuple(parts), back)


def concat_cols(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape[0] != b.data.shape[0]:
        raise ContractError("concat_cols row mismatch")
    na = a.data.shape[1]
    out = np.concatenate([a.data, b.data], axis=1)

    def back(g: Array) -> None:
        _accum(a, g[:, :na])
        _accum(b, g[:, na:])

    return _make(out, (a, b), back)


def stack_rows(rows: Sequence[Tensor]) -> Tensor:
    rows = list(rows)
    out = np.stack([r.data for r in rows])

    def back(g: Array) -> None:
        for i, r in enumerate(rows):
            _accum(r, g[i])

    return _make(out, tuple(rows), back)


def row(a: Tensor, i: int) -> Tensor:
    out = a.data[i]

    def back(g: Array) -> None:
        full = np.zeros_like(a.data)
        full[i] = g
        _accum(a, full)

    return _make(out, (a,), back)


def slice1d(a: Tensor, lo: int, hi: int) -> Tensor:
    out = a.data[lo:hi]

    def back(g: Array) -> None:
        full = np.zeros_like(a.data)
        full[lo:hi] = g
        _accum(a, full)

    return _make(out, (a,), back)


def slice_cols(a: Tensor, lo: int, hi: int) -> Tensor:
    out = a.data[:, lo:hi]

    def back(g: Array) -> None:
        full = np.zeros_like(a.data)
        full[:, lo:hi] = g
        _accum(a, full)

    return _make(out, (a,), back)


def flip_rows(a: Tensor) -> Tensor:
    out = a.data[::-1].copy()

    def back(g: Array) -> None:
        _accum(a, g[::-1])

    return _make(out, (a,), back)


def pad_cols(a: Tensor, width: int) -> Tensor:
    rows, cols = a.data.shape
    if width < cols:
        raise ContractError(f"pad_cols target {width} narrower than input {cols}")
    out = np.zeros((rows, width))
    out[:, :cols] = a.data

    def back(g: Array) -> None:
        _accum(a, g[:, :cols])

    return _make(out, (a,), back)


def gather_rows(table: Tensor, ids: Sequence[int]) -> Tensor:
    idx = np.asarray(ids, dtype=np.intp)
    if idx.size == 0:
        raise ContractError("gather_rows requires at least one index")
    out = table.data[idx]

    def back(g: Array) -> None:
        full = np.zeros_like(table.data)
        np.add.at(full, idx, g)
        _accum(table, full)

    return _make(out, (table,), back)


# ---------------------------------------------------------------------------
# contractions
# ---------------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Plain BLAS product; not for sequence-shaped forwards (see module doc)."""
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise ContractError(f"matmul shapes {a.data.shape} @ {b.data.shape}")
    out = a.data @ b.data

    def back(g: Array) -> None:
        _accum(a, g @ b.data.T)
        _accum(b, a.data.T @ g)

    return _make(out, (a, b), back)


def matvec(a: Tensor, x: Tensor) -> Tensor:
    if a.data.ndim != 2 or x.data.ndim != 1 or a.data.shape[1] != x.data.shape[0]:
        raise ContractError(f"matvec shapes {a.data.shape} @ {x.data.shape}")
    out = a.data @ x.data

    def back(g: Array) -> None:
        _accum(a, np.outer(g, x.data))
        _accum(x, a.data.T @ g)

    return _make(out, (a, x), back)


def linear_rows(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Row-wise affine map x[t] -> w @ x[t] + b.

    Forward runs one fixed-shape matvec per row so row t's bits do not
    depend on how many rows follow it.
    """
    if x.data.ndim != 2 or w.data.ndim != 2 or x.data.shape[1] != w.data.shape[1]:
        raise ContractError(f"linear_rows shapes x{x.data.shape} w{w.data.shape}")
    if b.data.shape != (w.data.shape[0],):
        raise ContractError(f"linear_rows bias shape {b.data.shape}")
    wd, bd = w.data, b.data
    out = np.empty((x.data.shape[0], wd.shape[0]))
    for t in range(x.data.shape[0]):
        out[t] = wd @ x.data[t] + bd

    def back(g: Array) -> None:
        _accum(x, g @ wd)
        _accum(w, g.T @ x.data)
        _accum(b, g.sum(axis=0))

    return _make(out, (x, w, b), back)


def linear_rows_nobias(x: Tensor, w: Tensor) -> Tensor:
    """linear_rows without the bias term (e.g. attention key projections,
    where a key bias would shift every score in a row equally and cancel
    under softmax)."""
    if x.data.ndim != 2 or w.data.ndim != 2 or x.data.shape[1] != w.data.shape[1]:
        raise ContractError(f"linear_rows shapes x{x.data.shape} w{w.data.shape}")
    wd = w.data
    out = np.empty((x.data.shape[0], wd.shape[0]))
    for t in range(x.data.shape[0]):
        out[t] = wd @ x.data[t]

    def back(g: Array) -> None:
        _accum(x, g @ wd)
        _accum(w, g.T @ x.data)

    return _make(out, (x, w), back)


def pairwise_scores(a: Tensor, b: Tensor) -> Tensor:
    """All-pairs dot products a[i]·b[j] via sequential reduction."""
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[1]:
        raise ContractError(f"pairwise_scores shapes {a.data.shape}, {b.data.shape}")
    out = _seqsum(a.data[:, None, :] * b.data[None, :, :], axis=2)

    def back(g: Array) -> None:
        _accum(a, g @ b.data)
        _accum(b, g.T @ a.data)

    return _make(out, (a, b), back)


def attend(weights: Tensor, values: Tensor) -> Tensor:
    """Weighted row combination weights @ values via sequential reduction,
    so rows whose weights have an exact-zero tail ignore it bit-for-bit."""
    if weights.data.ndim != 2 or values.data.ndim != 2 \
            or weights.data.shape[1] != values.data.shape[0]:
        raise ContractError(
            f"attend shapes {weights.data.shape} @ {values.data.shape}")
    out = np.cumsum(weights.data[:, :, None] * values.data[None, :, :], axis=1)[:, -1, :]

    def back(g: Array) -> None:
        _accum(weights, g @ values.data.T)
        _accum(values, weights.data.T @ g)

    return _make(out, (weights, values), back)


# ---------------------------------------------------------------------------
# masked softmax / layer norm
# ---------------------------------------------------------------------------

def masked_softmax(scores: Tensor, allowed: Array) -> Tensor:
    """Exp-normalize each row over its allowed positions.

    Disallowed positions get exact 0. A row with no allowed position yields
    the all-zeros row (rather than uniform), so downstream context vectors
    vanish instead of leaking masked information.
    """
    allowed = np.asarray(allowed, dtype=bool)
    if allowed.shape != scores.data.shape:
        raise ContractError(
            f"mask shape {allowed.shape} != scores shape {scores.data.shape}")
    s = scores.data
    if allowed.any() and not np.all(np.isfinite(s[allowed])):
        raise ContractError("non-finite score at an allowed position")
    masked = np.where(allowed, s, -np.inf)
    rowmax = np.max(masked, axis=-1, keepdims=True)
    rowmax = np.where(np.isfinite(rowmax), rowmax, 0.0)
    e = np.exp(np.where(allowed, s - rowmax, -np.inf))  # exp(-inf) == 0 exactly
    denom = _seqsum(e, axis=e.ndim - 1)
    denom_e = np.expand_dims(denom, axis=-1)
    out = np.divide(e, denom_e, out=np.zeros_like(e), where=denom_e > 0)

    def back(g: Array) -> None:
        inner = np.sum(g * out, axis=-1, keepdims=True)
        _accum(scores, out * (g - inner))

    return _make(out, (scores,), back)


def softmax_rows(scores: Tensor) -> Tensor:
    return masked_softmax(scores, np.ones(scores.data.shape, dtype=bool))


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Per-row normalization to zero mean / unit variance (1/d convention),
    then an elementwise affine map."""
    d = x.data.shape[-1]
    if gain.data.shape != (d,) or bias.data.shape != (d,):
        raise ContractError("layer_norm gain/bias must match the last axis")
    mu = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv
    out = gain.data * xhat + bias.data

    def back(g: Array) -> None:
        gx = g * gain.data
        m1 = gx.mean(axis=-1, keepdims=True)
        m2 = (gx * xhat).mean(axis=-1, keepdims=True)
        _accum(x, inv * (gx - m1 - xhat * m2))
        if x.data.ndim == 1:
            _accum(gain, g * xhat)
            _accum(bias, g)
        else:
            _accum(gain, (g * xhat).sum(axis=0))
            _accum(bias, g.sum(axis=0))

    return _make(out, (x, gain, bias), back)


# ---------------------------------------------------------------------------
# recurrent cells
# ---------------------------------------------------------------------------

@dataclass
class LstmParams:
    """Gate-stacked cell parameters; rows ordered input, forget, candidate,
    output. w: (4k, in), u: (4k, k), b: (4k,)."""

    w: Tensor
    u: Tensor
    b: Tensor

    @property
    def hidden_size(self) -> int:
        return self.u.data.shape[1]

    def check(self, input_size: int) -> None:
        k = self.hidden_size
        if self.w.data.shape != (4 * k, input_size):
            raise ContractError(
                f"lstm w shape {self.w.data.shape}, expected {(4 * k, input_size)}")
        if self.u.data.shape != (4 * k, k) or self.b.data.shape != (4 * k,):
            raise ContractError("lstm u/b shape mismatch")


def lstm_step(x: Tensor, h_prev: Tensor, c_prev: Tensor,
              params: LstmParams) -> tuple[Tensor, Tensor]:
    """One gated update; composed from primitive ops so the tape provides
    the backward pass. The fused lstm_sequence below is the fast path."""
    params.check(x.data.shape[0])
    k = params.hidden_size
    if h_prev.data.shape != (k,) or c_prev.data.shape != (k,):
        raise ContractError("lstm_step state shape mismatch")
    pre = add(add(matvec(params.w, x), matvec(params.u, h_prev)), params.b)
    i = sigmoid(slice1d(pre, 0, k))
    f = sigmoid(slice1d(pre, k, 2 * k))
    g = tanh(slice1d(pre, 2 * k, 3 * k))
    o = sigmoid(slice1d(pre, 3 * k, 4 * k))
    c = add(mul(f, c_prev), mul(i, g))
    h = mul(o, tanh(c))
    return h, c


def lstm_sequence(x: Tensor, params: LstmParams) -> Tensor:
    """Run the cell over the rows of x from a zero initial state and return
    every hidden state (T, k). Forward recurrence uses fixed-shape matvecs;
    backward is hand-written truncated backprop through time.
    """
    if x.data.ndim != 2:
        raise ContractError("lstm_sequence expects a (T, in) matrix")
    params.check(x.data.shape[1])
    k = params.hidden_size
    T = x.data.shape[0]
    wd, ud, bd = params.w.data, params.u.data, params.b.data

    hs = np.zeros((T, k))
    cs = np.zeros((T, k))
    gi = np.empty((T, k)); gf = np.empty((T, k))
    gg = np.empty((T, k)); go = np.empty((T, k))
    tc = np.empty((T, k))
    h = np.zeros(k)
    c = np.zeros(k)
    for t in range(T):
        pre = wd @ x.data[t] + ud @ h + bd
        i = _sigmoid(pre[:k]); f = _sigmoid(pre[k:2 * k])
        g = np.tanh(pre[2 * k:3 * k]); o = _sigmoid(pre[3 * k:])
        c = f * c + i * g
        th = np.tanh(c)
        h = o * th
        gi[t], gf[t], gg[t], go[t], tc[t] = i, f, g, o, th
        hs[t], cs[t] = h, c

    def back(grad_h: Array) -> None:
        dx = np.zeros_like(x.data)
        dw = np.zeros_like(wd); du = np.zeros_like(ud); db = np.zeros_like(bd)
        dh_next = np.zeros(k)
        dc_next = np.zeros(k)
        for t in range(T - 1, -1, -1):
            dh = grad_h[t] + dh_next
            do = dh * tc[t]
            dc = dc_next + dh * go[t] * (1.0 - tc[t] * tc[t])
            c_prev = cs[t - 1] if t > 0 else np.zeros(k)
            h_prev = hs[t - 1] if t > 0 else np.zeros(k)
            di = dc * gg[t]
            dg = dc * gi[t]
            df = dc * c_prev
            dc_next = dc * gf[t]
            dpre = np.concatenate([
                di * gi[t] * (1.0 - gi[t]),
                df * gf[t] * (1.0 - gf[t]),
                dg * (1.0 - gg[t] * gg[t]),
                do * go[t] * (1.0 - go[t]),
            ])
            db += dpre
            dw += np.outer(dpre, x.data[t])
            du += np.outer(dpre, h_prev)
            dx[t] = wd.T @ dpre
            dh_next = ud.T @ dpre
        _accum(x, dx)
        _accum(params.w, dw)
        _accum(params.u, du)
        _accum(params.b, db)

    return _make(hs, (x, params.w, params.u, params.b), back)


# ---------------------------------------------------------------------------
# initialization
# ---------------------------------------------------------------------------

def glorot_uniform(shape: int | tuple[int, ...], rng: np.random.Generator) -> Array:
    if isinstance(shape, int):
        shape = (shape,)
    fan_in, fan_out = (shape[1], shape[0]) if len(shape) == 2 else (shape[0], shape[0])
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


# ---------------------------------------------------------------------------
# gradient checking
# ---------------------------------------------------------------------------

@dataclass
class GradCheckReport:
    per_block: dict[str, float] = field(default_factory=dict)
    max_rel_error: float = 0.0
    tol: float = 1e-4
    aborted: bool = False
    message: str = ""

    @property
    def passed(self) -> bool:
        return not self.aborted and self.max_rel_error < self.tol

    def to_json(self) -> dict:
        return {
            "per_block": {k: float(v) for k, v in sorted(self.per_block.items())},
            "max_rel_error": float(self.max_rel_error),
            "tol": float(self.tol),
            "passed": bool(self.passed),
            "aborted": bool(self.aborted),
            "message": self.message,
        }


def grad_check(
    loss_fn: Callable[[], Tensor],
    params: dict[str, Tensor],
    eps: float = 1e-5,
    tol: float = 1e-4,
    samples_per_block: int = 8,
    rng: np.random.Generator | None = None,
) -> GradCheckReport:
    """Compare reverse-mode gradients against central finite differences on
    a random subsample of each parameter block.

    loss_fn must be deterministic (dropout off, fixed inputs) and is
    re-evaluated twice per sampled entry. Relative error per entry is
    |a - n| / max(|a|, |n|, 1e-8).
    """
    rng = rng or np.random.default_rng(0)
    report = GradCheckReport(tol=tol)

    for p in params.values():
        p.grad = None
    loss = loss_fn()
    if not np.isfinite(loss.data).all():
        report.aborted = True
        report.message = "loss is non-finite at the evaluation point"
        return report
    loss.backward()
    analytic = {
        name: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data))
        for name, p in params.items()
    }

    worst = 0.0
    for name, p in params.items():
        n = p.data.size
        if n == 0:
            continue
        count = min(samples_per_block, n)
        idxs = rng.choice(n, size=count, replace=False)
        block_worst = 0.0
        flat = p.data.reshape(-1)
        for idx in idxs:
            orig = flat[idx]
            flat[idx] = orig + eps
            up = loss_fn().item()
            flat[idx] = orig - eps
            down = loss_fn().item()
            flat[idx] = orig
            if not (math.isfinite(up) and math.isfinite(down)):
                report.aborted = True
                report.message = f"non-finite loss while perturbing block '{name}'"
                return report
            numeric = (up - down) / (2.0 * eps)
            a = analytic[name].reshape(-1)[idx]
            rel = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
            block_worst = max(block_worst, rel)
        report.per_block[name] = block_worst
        worst = max(worst, block_worst)

    report.max_rel_error = worst
    return report
