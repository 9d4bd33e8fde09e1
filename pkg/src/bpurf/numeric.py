"""Dense 2-D float64 tensors with a reverse-mode gradient tape and Adam.

Everything learnable in the engine runs through this module. The op set is
deliberately small: matrix products, elementwise maps, reductions, row
softmax/normalization, concat, and gather/scatter for embedding tables.
Every op validates shapes, checks outputs for non-finite values, and records
its backward closure on the active tape. Activations are row-major: linear
maps right-multiply, biases are (1, d) rows.
"""

from __future__ import annotations

import numpy as np

from .errors import NonFiniteValue, NotScalarLoss, ShapeMismatch

_TAPES: list["GradTape"] = []


class Tensor:
    __slots__ = ("data", "grad", "requires_grad")

    def __init__(self, data, requires_grad=False):
        a = np.asarray(data, dtype=np.float64)
        if a.ndim == 0:
            a = a.reshape(1, 1)
        elif a.ndim == 1:
            a = a.reshape(1, -1)
        if a.ndim != 2:
            raise ShapeMismatch(f"tensors are 2-D; got shape {a.shape}")
        self.data = a
        self.grad = None
        self.requires_grad = bool(requires_grad)

    @property
    def shape(self):
        return self.data.shape

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeMismatch(f"item() on shape {self.shape}")
        return float(self.data[0, 0])

    def zero_grad(self):
        self.grad = np.zeros_like(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # operator sugar for the common ops
    def __matmul__(self, other):
        return matmul(self, other)

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, other)
        return mul(self, other)


def tensor(data, requires_grad=False) -> Tensor:
    return Tensor(data, requires_grad=requires_grad)


def zeros(rows, cols, requires_grad=False) -> Tensor:
    return Tensor(np.zeros((rows, cols)), requires_grad=requires_grad)


class GradTape:
    """Records ops in execution (topological) order; replays them reversed."""

    def __init__(self):
        self.ops = []  # (backward_fn, inputs, output)
        self._produced = set()

    def __enter__(self):
        _TAPES.append(self)
        return self

    def __exit__(self, *exc):
        assert _TAPES.pop() is self

    def record(self, backward, inputs, output):
        self.ops.append((backward, inputs, output))
        self._produced.add(id(output))

    def backward(self, loss: Tensor, params=None):
        """Accumulate gradients of ``loss`` into leaf tensors' .grad slots.

        Leaves are requires_grad tensors that were not produced on this tape.
        Tensors in ``params`` get zero gradients even when unreachable.
        """
        if loss.data.shape != (1, 1):
            raise NotScalarLoss(f"loss must be scalar, got shape {loss.data.shape}")
        if params:
            for p in params:
                p.zero_grad()
        flowing: dict[int, np.ndarray] = {id(loss): np.ones((1, 1))}
        for backward, inputs, output in reversed(self.ops):
            g = flowing.pop(id(output), None)
            if g is None:
                continue
            for t, gt in backward(g):
                if not t.requires_grad:
                    continue
                if id(t) in self._produced:
                    acc = flowing.get(id(t))
                    flowing[id(t)] = gt if acc is None else acc + gt
                else:
                    if t.grad is None:
                        t.grad = np.zeros_like(t.data)
                    t.grad += gt


def _active() -> GradTape | None:
    return _TAPES[-1] if _TAPES else None


def _finite(a, op):
    if not np.isfinite(a).all():
        raise NonFiniteValue(f"non-finite value produced by {op}")


def _emit(op_name, out_data, inputs, backward):
    _finite(out_data, op_name)
    req = any(t.requires_grad for t in inputs)
    out = Tensor(out_data, requires_grad=req)
    tape = _active()
    if tape is not None and req:
        tape.record(backward, inputs, out)
    return out


# --- binary ops ---------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape[1] != b.shape[0]:
        raise ShapeMismatch(f"matmul {a.shape} @ {b.shape}")

    def backward(g):
        return [(a, g @ b.data.T), (b, a.data.T @ g)]

    return _emit("matmul", a.data @ b.data, (a, b), backward)


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape == b.shape:
        def backward(g):
            return [(a, g), (b, g)]
    elif b.shape == (1, a.shape[1]):
        # row-vector bias broadcast
        def backward(g):
            return [(a, g), (b, g.sum(axis=0, keepdims=True))]
    else:
        raise ShapeMismatch(f"add {a.shape} + {b.shape}")
    return _emit("add", a.data + b.data, (a, b), backward)


def sub(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeMismatch(f"sub {a.shape} - {b.shape}")

    def backward(g):
        return [(a, g), (b, -g)]

    return _emit("sub", a.data - b.data, (a, b), backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeMismatch(f"mul {a.shape} * {b.shape}")

    def backward(g):
        return [(a, g * b.data), (b, g * a.data)]

    return _emit("mul", a.data * b.data, (a, b), backward)


# --- unary ops -------------------------------------------------------------------


def scale(a: Tensor, s: float) -> Tensor:
    s = float(s)

    def backward(g):
        return [(a, g * s)]

    return _emit("scale", a.data * s, (a,), backward)


def scale_rows(a: Tensor, col) -> Tensor:
    """Multiply each row by a constant scalar; ``col`` is (rows,) or (rows, 1)."""
    c = np.asarray(col, dtype=np.float64).reshape(-1, 1)
    if c.shape[0] != a.shape[0]:
        raise ShapeMismatch(f"scale_rows {a.shape} by {c.shape}")

    def backward(g):
        return [(a, g * c)]

    return _emit("scale_rows", a.data * c, (a,), backward)


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0

    def backward(g):
        return [(a, g * mask)]

    return _emit("relu", np.where(mask, a.data, 0.0), (a,), backward)


def exp(a: Tensor) -> Tensor:
    with np.errstate(over="ignore"):
        out_data = np.exp(a.data)

    def backward(g):
        return [(a, g * out_data)]

    return _emit("exp", out_data, (a,), backward)


def log(a: Tensor) -> Tensor:
    def backward(g):
        return [(a, g / a.data)]

    with np.errstate(invalid="ignore", divide="ignore"):
        out_data = np.log(a.data)
    return _emit("log", out_data, (a,), backward)


def sqrt(a: Tensor) -> Tensor:
    out_data = np.sqrt(a.data)

    def backward(g):
        return [(a, g * 0.5 / np.maximum(out_data, 1e-300))]

    return _emit("sqrt", out_data, (a,), backward)


def square(a: Tensor) -> Tensor:
    def backward(g):
        return [(a, g * 2.0 * a.data)]

    return _emit("square", a.data * a.data, (a,), backward)


def transpose(a: Tensor) -> Tensor:
    def backward(g):
        return [(a, g.T)]

    return _emit("transpose", a.data.T.copy(), (a,), backward)


# --- reductions --------------------------------------------------------------------


def reduce_sum(a: Tensor, axis=None) -> Tensor:
    if axis is None:
        out_data = a.data.sum().reshape(1, 1)

        def backward(g):
            return [(a, np.full_like(a.data, g[0, 0]))]
    elif axis == 0:
        out_data = a.data.sum(axis=0, keepdims=True)

        def backward(g):
            return [(a, np.broadcast_to(g, a.shape).copy())]
    elif axis == 1:
        out_data = a.data.sum(axis=1, keepdims=True)

        def backward(g):
            return [(a, np.broadcast_to(g, a.shape).copy())]
    else:
        raise ValueError("axis must be None, 0, or 1")
    return _emit("sum", out_data, (a,), backward)


def reduce_mean(a: Tensor, axis=None) -> Tensor:
    if axis is None:
        n = a.data.size
    elif axis == 0:
        n = a.shape[0]
    else:
        n = a.shape[1]
    return scale(reduce_sum(a, axis=axis), 1.0 / n)


def l2_norm(a: Tensor) -> Tensor:
    """Frobenius norm as a scalar tensor."""
    return sqrt(reduce_sum(square(a)))


def l2_normalize_rows(a: Tensor, eps=1e-12) -> Tensor:
    norms = np.sqrt((a.data * a.data).sum(axis=1, keepdims=True)) + eps
    out_data = a.data / norms

    def backward(g):
        dot = (g * out_data).sum(axis=1, keepdims=True)
        return [(a, (g - out_data * dot) / norms)]

    return _emit("l2_normalize_rows", out_data, (a,), backward)


def softmax_row(a: Tensor) -> Tensor:
    z = a.data - a.data.max(axis=1, keepdims=True)
    e = np.exp(z)
    out_data = e / e.sum(axis=1, keepdims=True)

    def backward(g):
        dot = (g * out_data).sum(axis=1, keepdims=True)
        return [(a, (g - dot) * out_data)]

    return _emit("softmax_row", out_data, (a,), backward)


# --- structure ops ---------------------------------------------------------------------


def concat_rows(tensors) -> Tensor:
    tensors = list(tensors)
    cols = {t.shape[1] for t in tensors}
    if len(cols) != 1:
        raise ShapeMismatch(f"concat_rows with mixed widths {cols}")
    splits = np.cumsum([t.shape[0] for t in tensors])[:-1]

    def backward(g):
        return list(zip(tensors, np.split(g, splits, axis=0)))

    return _emit("concat_rows", np.concatenate([t.data for t in tensors], axis=0),
                 tuple(tensors), backward)


def concat_cols(tensors) -> Tensor:
    tensors = list(tensors)
    rows = {t.shape[0] for t in tensors}
    if len(rows) != 1:
        raise ShapeMismatch(f"concat_cols with mixed heights {rows}")
    splits = np.cumsum([t.shape[1] for t in tensors])[:-1]

    def backward(g):
        return list(zip(tensors, np.split(g, splits, axis=1)))

    return _emit("concat_cols", np.concatenate([t.data for t in tensors], axis=1),
                 tuple(tensors), backward)


def gather_rows(a: Tensor, idx) -> Tensor:
    idx = np.asarray(idx, dtype=np.int64)

    def backward(g):
        out = np.zeros_like(a.data)
        np.add.at(out, idx, g)
        return [(a, out)]

    return _emit("gather_rows", a.data[idx], (a,), backward)


def scatter_add_rows(a: Tensor, idx, n_rows: int) -> Tensor:
    idx = np.asarray(idx, dtype=np.int64)
    if len(idx) != a.shape[0]:
        raise ShapeMismatch("scatter_add_rows needs one index per row")
    out_data = np.zeros((n_rows, a.shape[1]))
    np.add.at(out_data, idx, a.data)

    def backward(g):
        return [(a, g[idx])]

    return _emit("scatter_add_rows", out_data, (a,), backward)


# --- optimizer -----------------------------------------------------------------------------


class AdamState:
    """Bias-corrected Adam over an ordered parameter list."""

    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]


def adam_step(state: AdamState, grads=None):
    """One update over state.params, reading .grad unless grads are passed."""
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1**state.t
    bc2 = 1.0 - b2**state.t
    for i, p in enumerate(state.params):
        g = grads[i] if grads is not None else p.grad
        if g is None:
            continue
        if g.shape != p.data.shape:
            raise ShapeMismatch(f"adam grad {g.shape} vs param {p.data.shape}")
        state.m[i] = b1 * state.m[i] + (1.0 - b1) * g
        state.v[i] = b2 * state.v[i] + (1.0 - b2) * (g * g)
        m_hat = state.m[i] / bc1
        v_hat = state.v[i] / bc2
        p.data -= state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
        _finite(p.data, "adam_step")


# --- verification helper ----------------------------------------------------------------------


def finite_difference_check(loss_fn, params, rng, n_samples=50, h=1e-5):
    """Max relative error between tape gradients and central differences.

    ``loss_fn`` rebuilds the loss from scratch; entries to probe are sampled
    uniformly across the parameter tensors. The denominator is floored at
    1e-6 so that finite-difference truncation noise on near-zero gradients
    does not register as error.
    """
    with GradTape() as tape:
        loss = loss_fn()
    tape.backward(loss, params=params)
    grads = [p.grad.copy() for p in params]
    worst = 0.0
    sizes = np.array([p.data.size for p in params], dtype=np.float64)
    probs = sizes / sizes.sum()
    for _ in range(n_samples):
        pi = int(rng.choice(len(params), p=probs))
        flat = int(rng.integers(params[pi].data.size))
        i, j = np.unravel_index(flat, params[pi].data.shape)
        orig = params[pi].data[i, j]
        params[pi].data[i, j] = orig + h
        up = loss_fn().item()
        params[pi].data[i, j] = orig - h
        down = loss_fn().item()
        params[pi].data[i, j] = orig
        fd = (up - down) / (2 * h)
        an = grads[pi][i, j]
        rel = abs(fd - an) / max(abs(fd) + abs(an), 1e-6)
        worst = max(worst, rel)
    return worst
