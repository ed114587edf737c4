"""Dense float64 tensors with a reverse-mode gradient tape.

Every differentiable operation appends a node to a module-level tape;
``backward`` walks the tape in reverse append order exactly once and
accumulates gradients into the participating tensors. The tape and its
tensors belong to a single thread; independent runs should live in
separate processes.

All values are float64 and every committed result is checked to be
finite, so a NaN/Inf surfaces at the op that produced it rather than
three layers later.
"""
from __future__ import annotations

import contextlib

import numpy as np


class ShapeError(ValueError):
    """Operand shapes do not conform for the named operation."""


class NumericError(ArithmeticError):
    """An operation produced a NaN or Inf result."""


class TapeError(RuntimeError):
    """Gradient-tape misuse: non-scalar loss, missing gradient, etc."""


class Tensor:
    """A dense float64 array plus its accumulated gradient."""

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def item(self) -> float:
        if self.data.size != 1:
            raise TapeError("item: tensor has %d elements" % self.data.size)
        return float(self.data.reshape(()))

    def numpy(self) -> np.ndarray:
        return np.array(self.data)

    def zero_grad(self):
        self.grad = None

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return scale(self, -1.0)

    def __repr__(self):
        return "Tensor(%r, requires_grad=%r)" % (self.data, self.requires_grad)


class _Node:
    __slots__ = ("op", "inputs", "outputs", "backward_fn")

    def __init__(self, op, inputs, outputs, backward_fn):
        self.op = op
        self.inputs = inputs
        self.outputs = outputs
        self.backward_fn = backward_fn


_tape: list[_Node] = []
_grad_enabled: bool = True


@contextlib.contextmanager
def no_grad():
    """Disable tape recording inside the block (inference / numeric evals)."""
    global _grad_enabled
    prev, _grad_enabled = _grad_enabled, False
    try:
        yield
    finally:
        _grad_enabled = prev


def tape_size() -> int:
    return len(_tape)


def clear_tape():
    _tape.clear()


def _check_finite(op: str, data: np.ndarray):
    if not np.isfinite(data).all():
        raise NumericError("%s: non-finite result" % op)


def _result(op, data, inputs, backward_fn):
    """Commit one single-output operation, recording it when needed."""
    _check_finite(op, data)
    track = _grad_enabled and any(t.requires_grad for t in inputs)
    out = Tensor(data, requires_grad=track)
    if track:
        _tape.append(_Node(op, inputs, (out,), backward_fn))
    return out


def _result_multi(op, datas, inputs, backward_fn):
    for d in datas:
        _check_finite(op, d)
    track = _grad_enabled and any(t.requires_grad for t in inputs)
    outs = tuple(Tensor(d, requires_grad=track) for d in datas)
    if track:
        _tape.append(_Node(op, inputs, outs, backward_fn))
    return outs


def backward(loss: Tensor):
    """Populate d(loss)/d(tensor) for everything on the tape, then consume it."""
    global _tape
    if loss.data.size != 1:
        raise TapeError("backward: loss must be scalar, got shape %r" % (loss.shape,))
    tape, _tape = _tape, []
    loss.grad = np.ones_like(loss.data)
    for node in reversed(tape):
        gouts = [o.grad for o in node.outputs]
        if all(g is None for g in gouts):
            continue
        gouts = [
            g if g is not None else np.zeros_like(o.data)
            for g, o in zip(gouts, node.outputs)
        ]
        gins = node.backward_fn(*gouts)
        for inp, g in zip(node.inputs, gins):
            if g is None or not inp.requires_grad:
                continue
            # accumulate without in-place ops: backward_fns may hand out
            # views of the output gradient, so aliasing must stay harmless
            inp.grad = g if inp.grad is None else inp.grad + g


def zero_grads(tensors):
    for t in tensors:
        t.grad = None


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _require(cond: bool, op: str, msg: str):
    if not cond:
        raise ShapeError("%s: %s" % (op, msg))


# ---------------------------------------------------------------------------
# operation catalog
# ---------------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _require(a.ndim == 2 and b.ndim == 2, "matmul", "expects 2-D operands")
    _require(a.shape[1] == b.shape[0], "matmul",
             "inner dims differ: %r vs %r" % (a.shape, b.shape))

    def back(g):
        return (g @ b.data.T if a.requires_grad else None,
                a.data.T @ g if b.requires_grad else None)

    return _result("matmul", a.data @ b.data, (a, b), back)


def affine(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """x @ w + b with x: (n, in), w: (in, out), b: (out,)."""
    x, w, b = _as_tensor(x), _as_tensor(w), _as_tensor(b)
    _require(x.ndim == 2 and w.ndim == 2 and b.ndim == 1, "affine",
             "expects x (n,in), w (in,out), b (out,)")
    _require(x.shape[1] == w.shape[0] and w.shape[1] == b.shape[0], "affine",
             "shapes do not conform: %r, %r, %r" % (x.shape, w.shape, b.shape))

    def back(g):
        return (g @ w.data.T if x.requires_grad else None,
                x.data.T @ g if w.requires_grad else None,
                g.sum(axis=0) if b.requires_grad else None)

    return _result("affine", x.data @ w.data + b.data, (x, w, b), back)


def relu(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    mask = x.data > 0  # relu'(0) = 0 convention

    def back(g):
        return (g * mask,)

    return _result("relu", np.where(mask, x.data, 0.0), (x,), back)


def leaky_relu(x: Tensor, slope: float = 0.01) -> Tensor:
    x = _as_tensor(x)
    mask = x.data > 0

    def back(g):
        return (g * np.where(mask, 1.0, slope),)

    return _result("leaky_relu", np.where(mask, x.data, slope * x.data), (x,), back)


def sigmoid(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    s = _sigmoid(x.data)

    def back(g):
        return (g * s * (1.0 - s),)

    return _result("sigmoid", s, (x,), back)


def _sigmoid(a: np.ndarray) -> np.ndarray:
    out = np.empty_like(a)
    pos = a >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-a[pos]))
    ea = np.exp(a[~pos])
    out[~pos] = ea / (1.0 + ea)
    return out


def softplus(x: Tensor) -> Tensor:
    """log(1 + e^x), computed stably."""
    x = _as_tensor(x)
    data = np.maximum(x.data, 0.0) + np.log1p(np.exp(-np.abs(x.data)))

    def back(g):
        return (g * _sigmoid(x.data),)

    return _result("softplus", data, (x,), back)


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    x = _as_tensor(x)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    data = shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))

    def back(g):
        return (g - np.exp(data) * g.sum(axis=axis, keepdims=True),)

    return _result("log_softmax", data, (x,), back)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    x = _as_tensor(x)
    shifted = np.exp(x.data - x.data.max(axis=axis, keepdims=True))
    s = shifted / shifted.sum(axis=axis, keepdims=True)

    def back(g):
        return (s * (g - (g * s).sum(axis=axis, keepdims=True)),)

    return _result("softmax", s, (x,), back)


def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _require(a.shape == b.shape, "add", "shape mismatch %r vs %r" % (a.shape, b.shape))

    def back(g):
        return (g if a.requires_grad else None, g if b.requires_grad else None)

    return _result("add", a.data + b.data, (a, b), back)


def sub(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _require(a.shape == b.shape, "sub", "shape mismatch %r vs %r" % (a.shape, b.shape))

    def back(g):
        return (g if a.requires_grad else None, -g if b.requires_grad else None)

    return _result("sub", a.data - b.data, (a, b), back)


def mul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _require(a.shape == b.shape, "mul", "shape mismatch %r vs %r" % (a.shape, b.shape))

    def back(g):
        return (g * b.data if a.requires_grad else None,
                g * a.data if b.requires_grad else None)

    return _result("mul", a.data * b.data, (a, b), back)


def scale(x: Tensor, c: float) -> Tensor:
    x = _as_tensor(x)
    c = float(c)

    def back(g):
        return (g * c,)

    return _result("scale", x.data * c, (x,), back)


def rowwise_dot(a: Tensor, b: Tensor, scale_const: float = 1.0) -> Tensor:
    """Per-row inner product of two (n, d) tensors times a constant; shape (n,)."""
    a, b = _as_tensor(a), _as_tensor(b)
    _require(a.ndim == 2 and a.shape == b.shape, "rowwise_dot",
             "expects matching 2-D operands, got %r and %r" % (a.shape, b.shape))
    c = float(scale_const)

    def back(g):
        gc = g[:, None] * c
        return (gc * b.data if a.requires_grad else None,
                gc * a.data if b.requires_grad else None)

    return _result("rowwise_dot", (a.data * b.data).sum(axis=1) * c, (a, b), back)


def add_scaled_rows(acc: Tensor, v: Tensor, s: Tensor) -> Tensor:
    """acc + v * s[:, None]; acc, v are (n, d) and s is (n,)."""
    acc, v, s = _as_tensor(acc), _as_tensor(v), _as_tensor(s)
    _require(acc.ndim == 2 and acc.shape == v.shape, "add_scaled_rows",
             "acc and v must be matching 2-D, got %r and %r" % (acc.shape, v.shape))
    _require(s.shape == (acc.shape[0],), "add_scaled_rows",
             "s must be (n,), got %r" % (s.shape,))

    def back(g):
        return (g if acc.requires_grad else None,
                g * s.data[:, None] if v.requires_grad else None,
                (g * v.data).sum(axis=1) if s.requires_grad else None)

    return _result("add_scaled_rows", acc.data + v.data * s.data[:, None],
                   (acc, v, s), back)


def scale_rows(x: Tensor, w: Tensor) -> Tensor:
    """Multiply row i of x (n, d) by w[i]; w has shape (n,) or (n, 1)."""
    x, w = _as_tensor(x), _as_tensor(w)
    _require(x.ndim == 2, "scale_rows", "x must be 2-D")
    wv = w.data.reshape(-1)
    _require(wv.shape[0] == x.shape[0], "scale_rows",
             "weight length %d != rows %d" % (wv.shape[0], x.shape[0]))

    def back(g):
        gx = g * wv[:, None] if x.requires_grad else None
        gw = (g * x.data).sum(axis=1).reshape(w.shape) if w.requires_grad else None
        return (gx, gw)

    return _result("scale_rows", x.data * wv[:, None], (x, w), back)


def reduce_sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    x = _as_tensor(x)

    def back(g):
        if axis is None:
            return (np.full_like(x.data, float(g)),)
        ge = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(ge, x.data.shape).copy(),)

    return _result("reduce_sum", x.data.sum(axis=axis, keepdims=keepdims), (x,), back)


def reduce_mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    x = _as_tensor(x)
    count = x.data.size if axis is None else x.data.shape[axis]

    def back(g):
        if axis is None:
            return (np.full_like(x.data, float(g) / count),)
        ge = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(ge, x.data.shape).copy() / count,)

    return _result("reduce_mean", x.data.mean(axis=axis, keepdims=keepdims), (x,), back)


def frobenius_norm_squared(x: Tensor) -> Tensor:
    x = _as_tensor(x)

    def back(g):
        return (2.0 * float(g) * x.data,)

    return _result("frobenius_norm_squared", np.asarray((x.data ** 2).sum()), (x,), back)


class BatchNormState:
    """Running statistics consumed by batchnorm_1d in inference mode."""

    def __init__(self, num_features: int):
        self.running_mean = np.zeros(num_features, dtype=np.float64)
        self.running_var = np.ones(num_features, dtype=np.float64)

    def copy(self) -> "BatchNormState":
        out = BatchNormState(self.running_mean.shape[0])
        out.running_mean = self.running_mean.copy()
        out.running_var = self.running_var.copy()
        return out


def batchnorm_1d(x: Tensor, gamma: Tensor, beta: Tensor, state: BatchNormState,
                 training: bool, momentum: float = 0.1, eps: float = 1e-5) -> Tensor:
    x, gamma, beta = _as_tensor(x), _as_tensor(gamma), _as_tensor(beta)
    _require(x.ndim == 2, "batchnorm_1d", "x must be (n, features)")
    f = x.shape[1]
    _require(gamma.shape == (f,) and beta.shape == (f,), "batchnorm_1d",
             "gamma/beta must have shape (%d,)" % f)
    n = x.shape[0]
    if training:
        _require(n >= 2, "batchnorm_1d", "training mode needs batch size >= 2")
        mean = x.data.mean(axis=0)
        var = x.data.var(axis=0)  # biased, used for normalisation
        state.running_mean = (1 - momentum) * state.running_mean + momentum * mean
        state.running_var = (1 - momentum) * state.running_var + momentum * var * n / (n - 1)
    else:
        mean = state.running_mean
        var = state.running_var
    ivar = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mean) * ivar
    data = gamma.data * xhat + beta.data

    def back(g):
        ggamma = (g * xhat).sum(axis=0) if gamma.requires_grad else None
        gbeta = g.sum(axis=0) if beta.requires_grad else None
        if not x.requires_grad:
            return (None, ggamma, gbeta)
        dxhat = g * gamma.data
        if training:
            gx = (ivar / n) * (n * dxhat - dxhat.sum(axis=0)
                               - xhat * (dxhat * xhat).sum(axis=0))
        else:
            gx = dxhat * ivar
        return (gx, ggamma, gbeta)

    return _result("batchnorm_1d", data, (x, gamma, beta), back)


def lstm_cell(x: Tensor, h: Tensor, c: Tensor, w_ih: Tensor, w_hh: Tensor,
              b_ih: Tensor, b_hh: Tensor):
    """One LSTM step; gate order (input, forget, cell, output). Returns (h', c')."""
    x, h, c = _as_tensor(x), _as_tensor(h), _as_tensor(c)
    w_ih, w_hh = _as_tensor(w_ih), _as_tensor(w_hh)
    b_ih, b_hh = _as_tensor(b_ih), _as_tensor(b_hh)
    _require(x.ndim == 2 and h.ndim == 2 and c.ndim == 2, "lstm_cell",
             "x, h, c must be 2-D")
    hid = h.shape[1]
    _require(w_ih.shape == (x.shape[1], 4 * hid), "lstm_cell",
             "w_ih must be (in, 4*hidden)")
    _require(w_hh.shape == (hid, 4 * hid), "lstm_cell", "w_hh must be (hidden, 4*hidden)")
    _require(b_ih.shape == (4 * hid,) and b_hh.shape == (4 * hid,), "lstm_cell",
             "biases must be (4*hidden,)")
    _require(h.shape == c.shape and h.shape[0] == x.shape[0], "lstm_cell",
             "h/c batch mismatch")

    gates = x.data @ w_ih.data + b_ih.data + h.data @ w_hh.data + b_hh.data
    gi = _sigmoid(gates[:, :hid])
    gf = _sigmoid(gates[:, hid:2 * hid])
    gg = np.tanh(gates[:, 2 * hid:3 * hid])
    go = _sigmoid(gates[:, 3 * hid:])
    c2 = gf * c.data + gi * gg
    tc2 = np.tanh(c2)
    h2 = go * tc2

    def back(gh, gc):
        dc_total = gc + gh * go * (1.0 - tc2 ** 2)
        dgates = np.concatenate([
            dc_total * gg * gi * (1.0 - gi),
            dc_total * c.data * gf * (1.0 - gf),
            dc_total * gi * (1.0 - gg ** 2),
            gh * tc2 * go * (1.0 - go),
        ], axis=1)
        return (dgates @ w_ih.data.T if x.requires_grad else None,
                dgates @ w_hh.data.T if h.requires_grad else None,
                dc_total * gf if c.requires_grad else None,
                x.data.T @ dgates if w_ih.requires_grad else None,
                h.data.T @ dgates if w_hh.requires_grad else None,
                dgates.sum(axis=0) if b_ih.requires_grad else None,
                dgates.sum(axis=0) if b_hh.requires_grad else None)

    return _result_multi("lstm_cell", (h2, c2),
                         (x, h, c, w_ih, w_hh, b_ih, b_hh), back)


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    _require(len(tensors) >= 1, "concat", "needs at least one tensor")
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def back(g):
        return tuple(
            np.take(g, range(offsets[i], offsets[i + 1]), axis=axis)
            if t.requires_grad else None
            for i, t in enumerate(tensors))

    return _result("concat", np.concatenate([t.data for t in tensors], axis=axis),
                   tuple(tensors), back)


def slice_axis(x: Tensor, axis: int, start: int, stop: int) -> Tensor:
    x = _as_tensor(x)
    _require(0 <= start < stop <= x.shape[axis], "slice",
             "range [%d, %d) out of bounds for axis %d of %r" % (start, stop, axis, x.shape))
    idx = [slice(None)] * x.ndim
    idx[axis] = slice(start, stop)
    idx = tuple(idx)

    def back(g):
        gx = np.zeros_like(x.data)
        gx[idx] = g
        return (gx,)

    return _result("slice", x.data[idx].copy(), (x,), back)


def take_rows(x: Tensor, rows) -> Tensor:
    """Gather rows of a 2-D tensor; repeated indices accumulate gradient."""
    x = _as_tensor(x)
    rows = np.asarray(rows, dtype=np.intp)
    _require(x.ndim == 2, "take_rows", "x must be 2-D")

    def back(g):
        gx = np.zeros_like(x.data)
        np.add.at(gx, rows, g)
        return (gx,)

    return _result("take_rows", x.data[rows].copy(), (x,), back)


def take_per_row(x: Tensor, cols) -> Tensor:
    """Pick x[i, cols[i]] for each row i of a 2-D tensor; returns shape (n,)."""
    x = _as_tensor(x)
    cols = np.asarray(cols, dtype=np.intp)
    _require(x.ndim == 2 and cols.shape == (x.shape[0],), "take_per_row",
             "x must be (n, c) and cols (n,)")
    rows = np.arange(x.shape[0])

    def back(g):
        gx = np.zeros_like(x.data)
        np.add.at(gx, (rows, cols), g)
        return (gx,)

    return _result("take_per_row", x.data[rows, cols].copy(), (x,), back)


def reshape(x: Tensor, shape) -> Tensor:
    x = _as_tensor(x)
    shape = tuple(shape)

    def back(g):
        return (g.reshape(x.data.shape),)

    try:
        data = x.data.reshape(shape).copy()
    except ValueError as e:
        raise ShapeError("reshape: %s" % e) from None
    return _result("reshape", data, (x,), back)


def transpose(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    _require(x.ndim == 2, "transpose", "x must be 2-D")

    def back(g):
        return (g.T.copy(),)

    return _result("transpose", x.data.T.copy(), (x,), back)
