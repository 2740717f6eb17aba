"""Dense tensors and reverse-mode differentiation for small recurrent Q-networks.

The op set is deliberately tiny: exactly what an embedding -> LSTM -> mean-pool
-> linear/ReLU -> linear network needs, plus the two losses and an SGD step.
Each op records one entry on a `Tape`; backward replays the records in reverse
execution order with hand-written gradients (the LSTM cell is a single fused
record, which keeps Python overhead off the training hot path).

Precision policy: float32 for training, float64 for gradient checks. Every op
output is checked for NaN/Inf and trips `NonFiniteError`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numba
import numpy as np

DEFAULT_DTYPE = np.float32

ACTIVATION_KINDS = ("relu", "sigmoid", "tanh")


class NonFiniteError(ArithmeticError):
    """An operation produced NaN or Inf."""


def _check_finite(values: np.ndarray) -> np.ndarray:
    if not np.isfinite(values).all():
        raise NonFiniteError("non-finite value produced (NaN or Inf)")
    return values


class Tensor:
    """Immutable-by-convention dense array node."""

    __slots__ = ("values",)

    def __init__(self, values, dtype=None):
        arr = np.asarray(values, dtype=dtype)
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(DEFAULT_DTYPE)
        self.values = _check_finite(arr)

    @property
    def shape(self):
        return self.values.shape

    def __repr__(self):
        return f"Tensor(shape={self.values.shape}, dtype={self.values.dtype})"


class Parameter:
    """Learnable array with a persistent gradient accumulator.

    `frozen` excludes the whole array from SGD updates; `frozen_rows` (a
    boolean mask over axis 0) pins individual rows, used for transferred
    word embeddings. Frozen entries still receive gradient.
    """

    __slots__ = ("values", "grad", "frozen", "frozen_rows", "name")

    def __init__(self, values, frozen=False, name=""):
        arr = np.asarray(values)
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(DEFAULT_DTYPE)
        self.values = _check_finite(arr)
        self.grad = np.zeros_like(arr)
        self.frozen = frozen
        self.frozen_rows = None
        self.name = name

    @property
    def shape(self):
        return self.values.shape

    def zero_grad(self):
        self.grad[...] = 0

    def copy(self) -> "Parameter":
        dup = Parameter(self.values.copy(), frozen=self.frozen, name=self.name)
        if self.frozen_rows is not None:
            dup.frozen_rows = self.frozen_rows.copy()
        return dup

    def __repr__(self):
        return f"Parameter({self.name or '?'}, shape={self.values.shape}, frozen={self.frozen})"


def _make(values: np.ndarray) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.values = _check_finite(values)
    return out


class Tape:
    """Ordered record of executed ops for reverse traversal.

    Reverse execution order is a valid topological order, so backward simply
    walks the records backwards, accumulating gradients additively at fan-out.
    """

    def __init__(self):
        self._records = []  # (outputs tuple, inputs tuple, backward_fn)
        self._produced = set()

    def record(self, outputs, inputs, backward_fn):
        self._records.append((outputs, inputs, backward_fn))
        for out in outputs:
            self._produced.add(id(out))

    def _sweep(self, root, seed, into_params):
        grads = {id(root): seed}
        for outputs, inputs, backward_fn in reversed(self._records):
            out_grads = [grads.get(id(out)) for out in outputs]
            if all(g is None for g in out_grads):
                continue
            out_grads = [
                g if g is not None else np.zeros_like(out.values)
                for g, out in zip(out_grads, outputs)
            ]
            for obj, g in zip(inputs, backward_fn(*out_grads)):
                if g is None:
                    continue
                if isinstance(obj, Parameter):
                    if into_params:
                        obj.grad += g
                else:
                    key = id(obj)
                    prior = grads.get(key)
                    grads[key] = g if prior is None else prior + g
        return grads

    def backward(self, loss: Tensor):
        """Accumulate d(loss)/d(param) into every reachable Parameter's grad."""
        if id(loss) not in self._produced:
            raise ValueError("loss was not produced on this tape")
        if loss.values.shape != ():
            raise ValueError(f"backward requires a scalar loss, got shape {loss.values.shape}")
        self._sweep(loss, np.ones((), dtype=loss.values.dtype), into_params=True)

    def gradients(self, output: Tensor, seed: np.ndarray, wrt: list) -> list:
        """Gradients of (seed . output) w.r.t. intermediate tensors, no side effects."""
        if id(output) not in self._produced:
            raise ValueError("output was not produced on this tape")
        seed = np.asarray(seed, dtype=output.values.dtype)
        if seed.shape != output.values.shape:
            raise ValueError("seed shape must match output shape")
        grads = self._sweep(output, seed, into_params=False)
        out = []
        for t in wrt:
            g = grads.get(id(t))
            out.append(g if g is not None else np.zeros_like(t.values))
        return out


def matmul(tape: Tape | None, a, b) -> Tensor:
    """Matrix (or vector-matrix) product."""
    av, bv = a.values, b.values
    if av.ndim not in (1, 2) or bv.ndim != 2 or av.shape[-1] != bv.shape[0]:
        raise ValueError(f"matmul shape mismatch: {av.shape} x {bv.shape}")
    out = _make(av @ bv)
    if tape is not None:
        def backward(g):
            da = g @ bv.T
            db = np.outer(av, g) if av.ndim == 1 else av.T @ g
            return da, db
        tape.record((out,), (a, b), backward)
    return out


def add(tape: Tape | None, a, b) -> Tensor:
    """Elementwise sum of same-shape tensors (bias add included)."""
    av, bv = a.values, b.values
    if av.shape != bv.shape:
        raise ValueError(f"add shape mismatch: {av.shape} vs {bv.shape}")
    out = _make(av + bv)
    if tape is not None:
        tape.record((out,), (a, b), lambda g: (g, g))
    return out


def scale(tape: Tape | None, x, c: float) -> Tensor:
    """Multiply by a Python scalar constant."""
    out = _make(x.values * x.values.dtype.type(c))
    if tape is not None:
        cc = x.values.dtype.type(c)
        tape.record((out,), (x,), lambda g: (g * cc,))
    return out


def total(tape: Tape | None, terms: list) -> Tensor:
    """Sum of scalar tensors."""
    if not terms:
        raise ValueError("total of empty list")
    if any(t.values.shape != () for t in terms):
        raise ValueError("total expects scalar terms")
    acc = terms[0].values.copy()
    for t in terms[1:]:
        acc += t.values
    out = _make(acc)
    if tape is not None:
        tape.record((out,), tuple(terms), lambda g: (g,) * len(terms))
    return out


def reduce_sum(tape: Tape | None, x) -> Tensor:
    """Sum of all entries."""
    out = _make(np.asarray(x.values.sum(), dtype=x.values.dtype))
    if tape is not None:
        xv = x.values
        tape.record((out,), (x,), lambda g: (np.full_like(xv, g),))
    return out


def activation(tape: Tape | None, kind: str, x) -> Tensor:
    """Elementwise relu / sigmoid / tanh. ReLU subgradient at 0 is 0."""
    xv = x.values
    if kind == "relu":
        yv = np.maximum(xv, 0)
    elif kind == "sigmoid":
        yv = _sigmoid(xv)
    elif kind == "tanh":
        yv = np.tanh(xv)
    else:
        raise ValueError(f"unknown activation kind: {kind!r}")
    out = _make(yv)
    if tape is not None:
        if kind == "relu":
            backward = lambda g: (g * (yv > 0),)
        elif kind == "sigmoid":
            backward = lambda g: (g * yv * (1 - yv),)
        else:
            backward = lambda g: (g * (1 - yv * yv),)
        tape.record((out,), (x,), backward)
    return out


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # Piecewise form avoids overflow in exp for large |x|.
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1 / (1 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1 + ex)
    return out


def softmax(values: np.ndarray, tau: float = 1.0) -> np.ndarray:
    """Temperature softmax on a plain array, stabilized by max-subtraction."""
    if tau <= 0:
        raise ValueError(f"temperature must be positive, got {tau}")
    z = np.asarray(values, dtype=np.result_type(values, np.float32)) / tau
    z = z - z.max()
    e = np.exp(z)
    return e / e.sum()


def softmax_t(tape: Tape | None, q, tau: float) -> Tensor:
    """Temperature softmax over a vector of scores."""
    if tau <= 0:
        raise ValueError(f"temperature must be positive, got {tau}")
    sv = softmax(q.values, tau).astype(q.values.dtype)
    out = _make(sv)
    if tape is not None:
        inv_tau = q.values.dtype.type(1.0 / tau)
        def backward(g):
            return (sv * (g - np.dot(g, sv)) * inv_tau,)
        tape.record((out,), (q,), backward)
    return out


def sequence_mean(tape: Tape | None, hs: list) -> Tensor:
    """Arithmetic mean of a non-empty list of same-shape tensors."""
    if not hs:
        raise ValueError("sequence_mean of empty sequence")
    shape = hs[0].values.shape
    acc = hs[0].values.copy()
    for h in hs[1:]:
        if h.values.shape != shape:
            raise ValueError("sequence_mean expects equal shapes")
        acc += h.values
    inv = acc.dtype.type(1.0 / len(hs))
    out = _make(acc * inv)
    if tape is not None:
        n = len(hs)
        tape.record((out,), tuple(hs), lambda g: (g * inv,) * n)
    return out


def embedding_lookup(tape: Tape | None, table: Parameter, token_ids) -> list:
    """Gather rows of an embedding table; backward scatters into gathered rows only."""
    vocab_size = table.values.shape[0]
    ids = np.asarray(token_ids, dtype=np.int64)
    if ids.ndim != 1:
        raise ValueError("token_ids must be a flat sequence")
    if ids.size and (ids.min() < 0 or ids.max() >= vocab_size):
        raise IndexError(f"token id out of range for vocabulary of size {vocab_size}")
    rows = [_make(table.values[i]) for i in ids]
    if tape is not None:
        def backward(*row_grads):
            dtable = np.zeros_like(table.values)
            np.add.at(dtable, ids, np.stack(row_grads))
            return (dtable,)
        tape.record(tuple(rows), (table,), backward)
    return rows


@dataclass
class LstmParams:
    """LSTM cell weights; gate order along the 4H axis is (input, forget, candidate, output)."""

    w_x: Parameter  # [d_in, 4H]
    w_h: Parameter  # [H, 4H]
    bias: Parameter  # [4H]

    @property
    def hidden_size(self) -> int:
        return self.w_h.values.shape[0]

    def parameters(self) -> list:
        return [self.w_x, self.w_h, self.bias]


def lstm_step(tape: Tape | None, params: LstmParams, x, h, c):
    """One LSTM cell step; fused into a single tape record.

    c' = f*c + i*g, h' = o*tanh(c') with sigmoid input/forget/output gates
    and a tanh candidate.
    """
    hidden = params.hidden_size
    wx, wh, b = params.w_x.values, params.w_h.values, params.bias.values
    xv, hv, cv = x.values, h.values, c.values
    if xv.shape != (wx.shape[0],) or hv.shape != (hidden,) or cv.shape != (hidden,):
        raise ValueError(
            f"lstm_step shape mismatch: x{xv.shape} h{hv.shape} c{cv.shape} "
            f"vs bundle d_in={wx.shape[0]} H={hidden}"
        )
    pre = xv @ wx + hv @ wh + b
    i = _sigmoid(pre[:hidden])
    f = _sigmoid(pre[hidden:2 * hidden])
    g_cand = np.tanh(pre[2 * hidden:3 * hidden])
    o = _sigmoid(pre[3 * hidden:])
    c2v = f * cv + i * g_cand
    tc = np.tanh(c2v)
    h2 = _make(o * tc)
    c2 = _make(c2v)
    if tape is not None:
        def backward(dh2, dc2):
            dc_total = dc2 + dh2 * o * (1 - tc * tc)
            dpre = np.empty_like(pre)
            dpre[:hidden] = dc_total * g_cand * i * (1 - i)
            dpre[hidden:2 * hidden] = dc_total * cv * f * (1 - f)
            dpre[2 * hidden:3 * hidden] = dc_total * i * (1 - g_cand * g_cand)
            dpre[3 * hidden:] = dh2 * tc * o * (1 - o)
            dx = wx @ dpre
            dh = wh @ dpre
            dc = dc_total * f
            dwx = np.outer(xv, dpre)
            dwh = np.outer(hv, dpre)
            return dwx, dwh, dpre, dx, dh, dc
        tape.record((h2, c2), (params.w_x, params.w_h, params.bias, x, h, c), backward)
    return h2, c2


def embedding_sequence(tape: Tape | None, table: Parameter, token_ids) -> Tensor:
    """Gather a whole token sequence into one [L, d] matrix.

    Same contract as `embedding_lookup`, fused into a single node; the
    backward scatter hits only the gathered rows.
    """
    vocab_size = table.values.shape[0]
    ids = np.asarray(token_ids, dtype=np.int64)
    if ids.ndim != 1 or ids.size == 0:
        raise ValueError("token_ids must be a non-empty flat sequence")
    if ids.min() < 0 or ids.max() >= vocab_size:
        raise IndexError(f"token id out of range for vocabulary of size {vocab_size}")
    out = _make(table.values[ids])
    if tape is not None:
        def backward(g):
            dtable = np.zeros_like(table.values)
            np.add.at(dtable, ids, g)
            return (dtable,)
        tape.record((out,), (table,), backward)
    return out


@numba.njit(cache=True)
def _lstm_recur_fwd(pre_all, wh, b):  # pragma: no cover - compiled
    steps, four_h = pre_all.shape
    hidden = wh.shape[0]
    gates = np.empty((steps, four_h), pre_all.dtype)
    cs = np.empty((steps, hidden), pre_all.dtype)
    tcs = np.empty((steps, hidden), pre_all.dtype)
    hs = np.empty((steps, hidden), pre_all.dtype)
    h = np.zeros(hidden, pre_all.dtype)
    c = np.zeros(hidden, pre_all.dtype)
    for t in range(steps):
        pre = pre_all[t] + np.dot(h, wh) + b
        for j in range(hidden):
            gi = 1.0 / (1.0 + math.exp(-pre[j]))
            gf = 1.0 / (1.0 + math.exp(-pre[hidden + j]))
            gg = math.tanh(pre[2 * hidden + j])
            go = 1.0 / (1.0 + math.exp(-pre[3 * hidden + j]))
            cj = gf * c[j] + gi * gg
            tcj = math.tanh(cj)
            gates[t, j] = gi
            gates[t, hidden + j] = gf
            gates[t, 2 * hidden + j] = gg
            gates[t, 3 * hidden + j] = go
            cs[t, j] = cj
            tcs[t, j] = tcj
            hs[t, j] = go * tcj
            c[j] = cj
        h = hs[t].copy()
    return hs, cs, tcs, gates


@numba.njit(cache=True)
def _lstm_recur_bwd(dhs, gates, cs, tcs, wh):  # pragma: no cover - compiled
    steps, hidden = dhs.shape
    dpre_all = np.empty((steps, 4 * hidden), dhs.dtype)
    dh = np.zeros(hidden, dhs.dtype)
    dc = np.zeros(hidden, dhs.dtype)
    for t in range(steps - 1, -1, -1):
        for j in range(hidden):
            dh_tot = dhs[t, j] + dh[j]
            gi = gates[t, j]
            gf = gates[t, hidden + j]
            gg = gates[t, 2 * hidden + j]
            go = gates[t, 3 * hidden + j]
            tc = tcs[t, j]
            dct = dc[j] + dh_tot * go * (1.0 - tc * tc)
            c_prev = cs[t - 1, j] if t > 0 else 0.0
            dpre_all[t, j] = dct * gg * gi * (1.0 - gi)
            dpre_all[t, hidden + j] = dct * c_prev * gf * (1.0 - gf)
            dpre_all[t, 2 * hidden + j] = dct * gi * (1.0 - gg * gg)
            dpre_all[t, 3 * hidden + j] = dh_tot * tc * go * (1.0 - go)
            dc[j] = dct * gf
        dh = np.dot(wh, dpre_all[t])
    return dpre_all


def lstm_sequence(tape: Tape | None, params: LstmParams, xs: Tensor) -> Tensor:
    """Run the LSTM cell over every row of xs [L, d] from the zero state.

    Returns the stacked hidden outputs [L, H]. Semantically identical to
    `lstm_step` applied word by word; fused and jit-compiled for the training
    hot path.
    """
    hidden = params.hidden_size
    wx, wh, b = params.w_x.values, params.w_h.values, params.bias.values
    xv = xs.values
    if xv.ndim != 2 or xv.shape[1] != wx.shape[0]:
        raise ValueError(f"lstm_sequence expects [L, {wx.shape[0]}] input, got {xv.shape}")
    pre_all = xv @ wx
    hs, cs, tcs, gates = _lstm_recur_fwd(pre_all, wh, b)
    out = _make(hs)
    if tape is not None:
        def backward(g):
            dpre_all = _lstm_recur_bwd(np.ascontiguousarray(g), gates, cs, tcs, wh)
            hs_prev = np.concatenate((np.zeros((1, hidden), hs.dtype), hs[:-1]))
            dwx = xv.T @ dpre_all
            dwh = hs_prev.T @ dpre_all
            db = dpre_all.sum(axis=0)
            dxs = dpre_all @ wx.T
            return dwx, dwh, db, dxs
        tape.record((out,), (params.w_x, params.w_h, params.bias, xs), backward)
    return out


def mean_rows(tape: Tape | None, x: Tensor) -> Tensor:
    """Mean over the rows of a [L, d] matrix; the fused form of sequence_mean."""
    xv = x.values
    if xv.ndim != 2 or xv.shape[0] == 0:
        raise ValueError(f"mean_rows expects a non-empty [L, d] matrix, got {xv.shape}")
    out = _make(xv.mean(axis=0))
    if tape is not None:
        rows = xv.shape[0]
        inv = xv.dtype.type(1.0 / rows)
        tape.record((out,), (x,), lambda g: (np.broadcast_to(g * inv, xv.shape),))
    return out


def squared_td_loss(tape: Tape | None, q_pred, action_index: int, y: float) -> Tensor:
    """(y - q[action])^2; gradient flows only into the selected slot."""
    qv = q_pred.values
    if not 0 <= action_index < qv.shape[0]:
        raise IndexError(f"action index {action_index} out of range for {qv.shape[0]} slots")
    diff = qv.dtype.type(y) - qv[action_index]
    out = _make(np.asarray(diff * diff, dtype=qv.dtype))
    if tape is not None:
        def backward(g):
            dq = np.zeros_like(qv)
            dq[action_index] = -2 * diff * g
            return (dq,)
        tape.record((out,), (q_pred,), backward)
    return out


def kl_loss(tape: Tape | None, p_target, q_logits) -> Tensor:
    """KL(p || softmax(q)) with 0*ln(0) := 0; d/dq = softmax(q) - p."""
    p = np.asarray(p_target.values if isinstance(p_target, Tensor) else p_target, dtype=np.float64)
    if p.ndim != 1 or (p < 0).any() or abs(p.sum() - 1.0) > 1e-6:
        raise ValueError("invalid target distribution: must be non-negative and sum to 1")
    qv = q_logits.values
    if qv.shape != p.shape:
        raise ValueError(f"kl_loss shape mismatch: target {p.shape} vs logits {qv.shape}")
    z = qv.astype(np.float64) - qv.max()
    log_s = z - np.log(np.exp(z).sum())
    val = np.where(p > 0, p * (np.log(np.where(p > 0, p, 1.0)) - log_s), 0.0).sum()
    out = _make(np.asarray(max(val, 0.0), dtype=qv.dtype))
    if tape is not None:
        s = np.exp(log_s)
        dq = (s - p).astype(qv.dtype)
        tape.record((out,), (q_logits,), lambda g: (dq * g,))
    return out


def gradient_norm(params: list) -> float:
    """Global L2 norm over the gradients of `params`."""
    sq = 0.0
    for p in params:
        flat = p.grad.ravel()
        sq += float(np.dot(flat, flat))
    return float(np.sqrt(sq))


def sgd_update(params: list, lr: float, clip_norm: float = 5.0) -> None:
    """Clip the global gradient norm, step non-frozen parameters, zero all grads."""
    if lr <= 0:
        raise ValueError(f"learning rate must be positive, got {lr}")
    factor = lr
    if clip_norm is not None:
        if clip_norm <= 0:
            raise ValueError(f"clip_norm must be positive, got {clip_norm}")
        norm = gradient_norm(params)
        if norm > clip_norm:
            factor = lr * (clip_norm / norm)
    for p in params:
        if not p.frozen:
            step = p.grad * p.values.dtype.type(factor)
            if p.frozen_rows is not None:
                step[p.frozen_rows] = 0
            p.values -= step
        p.zero_grad()
