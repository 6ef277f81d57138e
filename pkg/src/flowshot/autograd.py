"""Dense-matrix reverse-mode differentiation, Adam, and gradient checking.

Values are plain 2-D numpy arrays: float32 for training, float64 when
gradients are being checked against finite differences (the extra mantissa
is needed for the central-difference quotient). A ``Tape`` records one
backward closure per primitive operation and replays them in exact reverse
order. Operations executed while no tape is active run eagerly and record
nothing, which is the inference path.

Gradients accumulate into ``Tensor.grad``; a ``Param`` pre-binds its leaf
tensors to a persistent grad buffer so the optimizer sees the totals
directly.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np
from scipy.special import expit

from .errors import DimensionError, NumericError

_active_tape: "Tape | None" = None


class Tensor:
    """A 2-D value in the computation graph; ``grad`` is filled on backward."""

    __slots__ = ("value", "grad")

    def __init__(self, value) -> None:
        value = np.asarray(value)
        if value.ndim != 2:
            raise DimensionError(f"tensors are 2-D matrices, got shape {value.shape}")
        self.value = value
        self.grad: np.ndarray | None = None

    @property
    def shape(self) -> tuple[int, int]:
        return self.value.shape

    def item(self) -> float:
        if self.value.size != 1:
            raise DimensionError(f"item() needs a 1x1 tensor, got {self.value.shape}")
        return float(self.value[0, 0])

    def __repr__(self) -> str:
        return f"Tensor(shape={self.value.shape}, dtype={self.value.dtype})"


class Tape:
    """Ordered record of one forward pass.

    Single-owner: only one tape may be active at a time, and backward
    visits the recorded operations in exact reverse of recording order.
    """

    def __init__(self) -> None:
        self._ops: list[Callable[[], None]] = []

    def __enter__(self) -> "Tape":
        global _active_tape
        if _active_tape is not None:
            raise RuntimeError("another Tape is already recording")
        _active_tape = self
        return self

    def __exit__(self, exc_type, exc, tb) -> bool:
        global _active_tape
        _active_tape = None
        return False

    def record(self, backward_fn: Callable[[], None]) -> None:
        """Append a backward closure; used by custom ops (e.g. graph kernels)."""
        self._ops.append(backward_fn)

    def backward(self, loss: Tensor) -> None:
        if loss.value.shape != (1, 1):
            raise DimensionError(f"backward expects a 1x1 loss, got {loss.value.shape}")
        loss.grad = np.ones_like(loss.value)
        for fn in reversed(self._ops):
            fn()


def active_tape() -> "Tape | None":
    return _active_tape


def _push(backward_fn: Callable[[], None]) -> None:
    if _active_tape is not None:
        _active_tape._ops.append(backward_fn)


def accumulate_grad(t: Tensor, g: np.ndarray) -> None:
    """Add ``g`` into ``t.grad``, materializing the buffer on first use."""
    if t.grad is None:
        t.grad = np.array(g, dtype=t.value.dtype, copy=True)
    else:
        t.grad += g


# ---------------------------------------------------------------------------
# primitive operations


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.value.shape[1] != b.value.shape[0]:
        raise DimensionError(
            f"matmul: inner dimensions disagree, {a.value.shape} x {b.value.shape}"
        )
    out = Tensor(a.value @ b.value)

    def backward() -> None:
        if out.grad is None:
            return
        accumulate_grad(a, out.grad @ b.value.T)
        accumulate_grad(b, a.value.T @ out.grad)

    _push(backward)
    return out


def transpose(a: Tensor) -> Tensor:
    out = Tensor(np.ascontiguousarray(a.value.T))

    def backward() -> None:
        if out.grad is None:
            return
        accumulate_grad(a, out.grad.T)

    _push(backward)
    return out


def relu(a: Tensor) -> Tensor:
    out = Tensor(np.maximum(a.value, 0))

    def backward() -> None:
        if out.grad is None:
            return
        # subgradient at exactly 0 is defined as 0
        accumulate_grad(a, out.grad * (a.value > 0))

    _push(backward)
    return out


def sigmoid(a: Tensor) -> Tensor:
    out = Tensor(expit(a.value))

    def backward() -> None:
        if out.grad is None:
            return
        accumulate_grad(a, out.grad * out.value * (1 - out.value))

    _push(backward)
    return out


def log(a: Tensor) -> Tensor:
    out = Tensor(np.log(a.value))

    def backward() -> None:
        if out.grad is None:
            return
        accumulate_grad(a, out.grad / a.value)

    _push(backward)
    return out


def clamp(a: Tensor, lo: float, hi: float) -> Tensor:
    """Clip to [lo, hi]; gradient passes only strictly inside the range."""
    out = Tensor(np.clip(a.value, lo, hi))

    def backward() -> None:
        if out.grad is None:
            return
        accumulate_grad(a, out.grad * ((a.value > lo) & (a.value < hi)))

    _push(backward)
    return out


def square(a: Tensor) -> Tensor:
    out = Tensor(a.value * a.value)

    def backward() -> None:
        if out.grad is None:
            return
        accumulate_grad(a, out.grad * (2 * a.value))

    _push(backward)
    return out


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.value.shape != b.value.shape:
        raise DimensionError(f"add: shapes differ, {a.value.shape} vs {b.value.shape}")
    out = Tensor(a.value + b.value)

    def backward() -> None:
        if out.grad is None:
            return
        accumulate_grad(a, out.grad)
        accumulate_grad(b, out.grad)

    _push(backward)
    return out


def affine(a: Tensor, alpha: float, beta: float = 0.0) -> Tensor:
    """Elementwise alpha * a + beta with scalar constants."""
    out = Tensor(alpha * a.value + beta)

    def backward() -> None:
        if out.grad is None:
            return
        accumulate_grad(a, alpha * out.grad)

    _push(backward)
    return out


def sub_const(a: Tensor, c: np.ndarray) -> Tensor:
    """a minus a constant array (broadcastable); no gradient flows into c."""
    out = Tensor(a.value - c)

    def backward() -> None:
        if out.grad is None:
            return
        accumulate_grad(a, out.grad)

    _push(backward)
    return out


def mul_const(a: Tensor, c: np.ndarray) -> Tensor:
    """Elementwise product with a constant array of the same shape."""
    out = Tensor(a.value * c)

    def backward() -> None:
        if out.grad is None:
            return
        accumulate_grad(a, out.grad * c)

    _push(backward)
    return out


def add_rowvec(a: Tensor, v: Tensor) -> Tensor:
    """Broadcast-add a 1 x d row vector to every row of a."""
    if v.value.shape != (1, a.value.shape[1]):
        raise DimensionError(
            f"add_rowvec: expected row vector (1, {a.value.shape[1]}), got {v.value.shape}"
        )
    out = Tensor(a.value + v.value)

    def backward() -> None:
        if out.grad is None:
            return
        accumulate_grad(a, out.grad)
        accumulate_grad(v, out.grad.sum(axis=0, keepdims=True))

    _push(backward)
    return out


def concat_cols(a: Tensor, b: Tensor) -> Tensor:
    if a.value.shape[0] != b.value.shape[0]:
        raise DimensionError(
            f"concat_cols: row counts differ, {a.value.shape} vs {b.value.shape}"
        )
    out = Tensor(np.hstack((a.value, b.value)))
    split = a.value.shape[1]

    def backward() -> None:
        if out.grad is None:
            return
        accumulate_grad(a, out.grad[:, :split])
        accumulate_grad(b, out.grad[:, split:])

    _push(backward)
    return out


def gather_rows(a: Tensor, idx) -> Tensor:
    """Select rows by index; backward scatter-adds into the source rows."""
    idx = np.asarray(idx, dtype=np.intp)
    out = Tensor(a.value[idx])

    def backward() -> None:
        if out.grad is None:
            return
        if a.grad is None:
            a.grad = np.zeros_like(a.value)
        np.add.at(a.grad, idx, out.grad)

    _push(backward)
    return out


def mean_rows(a: Tensor) -> Tensor:
    """Column means as a 1 x d row."""
    n = a.value.shape[0]
    if n == 0:
        raise DimensionError("mean_rows: empty matrix")
    out = Tensor(a.value.mean(axis=0, keepdims=True))

    def backward() -> None:
        if out.grad is None:
            return
        accumulate_grad(a, np.broadcast_to(out.grad / n, a.value.shape))

    _push(backward)
    return out


def sum_all(a: Tensor) -> Tensor:
    out = Tensor(np.array([[a.value.sum()]], dtype=a.value.dtype))

    def backward() -> None:
        if out.grad is None:
            return
        accumulate_grad(a, np.broadcast_to(out.grad, a.value.shape))

    _push(backward)
    return out


def constant(value, dtype=None) -> Tensor:
    """A tensor that takes no part in differentiation (no ops recorded)."""
    arr = np.asarray(value, dtype=dtype)
    if arr.ndim != 2:
        arr = arr.reshape(1, -1)
    return Tensor(arr)


# ---------------------------------------------------------------------------
# parameters, initialization, optimizer


class Param:
    """A trainable matrix with persistent gradient and Adam state."""

    def __init__(self, value: np.ndarray, name: str = "") -> None:
        self.value = np.ascontiguousarray(value)
        if self.value.ndim != 2:
            raise DimensionError(f"params are 2-D, got shape {self.value.shape}")
        self.grad = np.zeros_like(self.value)
        self.adam_m = np.zeros_like(self.value)
        self.adam_v = np.zeros_like(self.value)
        self.step = 0
        self.name = name

    def leaf(self) -> Tensor:
        """Bind the parameter into the current forward pass.

        The returned tensor shares this param's grad buffer, so backward
        accumulates directly into ``self.grad``.
        """
        t = Tensor(self.value)
        t.grad = self.grad
        return t

    def copy_value(self) -> np.ndarray:
        return self.value.copy()

    def __repr__(self) -> str:
        return f"Param({self.name or '?'}, shape={self.value.shape}, step={self.step})"


def xavier_init(rows: int, cols: int, rng: np.random.Generator, dtype=np.float32) -> np.ndarray:
    """Glorot-uniform samples in +-sqrt(6 / (rows + cols))."""
    if rows < 1 or cols < 1:
        raise DimensionError(f"xavier_init: dimensions must be >= 1, got ({rows}, {cols})")
    bound = np.sqrt(6.0 / (rows + cols))
    return rng.uniform(-bound, bound, size=(rows, cols)).astype(dtype)


def adam_step(
    params: Sequence[Param],
    lr: float,
    weight_decay: float = 0.0,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> None:
    """One Adam update with decoupled weight decay; zeroes grads afterwards."""
    for p in params:
        if not np.all(np.isfinite(p.grad)):
            raise NumericError(f"non-finite gradient in parameter '{p.name}'")
        p.step += 1
        p.adam_m *= beta1
        p.adam_m += (1 - beta1) * p.grad
        p.adam_v *= beta2
        p.adam_v += (1 - beta2) * (p.grad * p.grad)
        m_hat = p.adam_m / (1 - beta1**p.step)
        v_hat = p.adam_v / (1 - beta2**p.step)
        update = m_hat / (np.sqrt(v_hat) + eps)
        if weight_decay:
            update = update + weight_decay * p.value
        p.value -= (lr * update).astype(p.value.dtype, copy=False)
        p.grad[:] = 0


def grad_check(
    loss_fn: Callable[[], Tensor],
    params: Sequence[Param],
    h: float = 1e-5,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``loss_fn`` must rebuild the loss from the current param values on every
    call (it runs once under a tape for the analytic pass, then eagerly for
    each perturbed evaluation). Requires float64 parameters.
    """
    for p in params:
        if p.value.dtype != np.float64:
            raise ValueError(f"grad_check requires float64 params, '{p.name}' is {p.value.dtype}")
        p.grad[:] = 0

    with Tape() as tape:
        loss = loss_fn()
    if not np.isfinite(loss.value).all():
        raise NumericError("loss is not finite at the evaluation point")
    tape.backward(loss)
    analytic = [p.grad.copy() for p in params]
    for p in params:
        p.grad[:] = 0

    def eval_loss() -> float:
        v = loss_fn().item()
        if not np.isfinite(v):
            raise NumericError("loss became non-finite during finite differencing")
        return v

    max_err = 0.0
    for p, grads in zip(params, analytic):
        flat_value = p.value.reshape(-1)
        flat_grad = grads.reshape(-1)
        for i in range(flat_value.size):
            orig = flat_value[i]
            flat_value[i] = orig + h
            f_plus = eval_loss()
            flat_value[i] = orig - h
            f_minus = eval_loss()
            flat_value[i] = orig
            numeric = (f_plus - f_minus) / (2 * h)
            denom = max(abs(flat_grad[i]), abs(numeric), 1e-8)
            max_err = max(max_err, abs(flat_grad[i] - numeric) / denom)
    return max_err
