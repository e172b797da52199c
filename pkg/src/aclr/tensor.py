"""Dense 2-D tensors with a reverse-mode gradient tape.

Every value is a float64 matrix. Operations executed while a :class:`Tape`
is active (and touching at least one tensor that requires gradients) are
recorded in order; :meth:`Tape.backward` replays them in reverse.

    >>> x = Tensor([[3.0]], requires_grad=True)
    >>> y = Tensor([[4.0]], requires_grad=True)
    >>> with Tape() as tape:
    ...     z = matmul(x, y)
    >>> grads = tape.backward(z)
    >>> float(grads[x][0, 0]), float(grads[y][0, 0])
    (4.0, 3.0)
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "DimensionError",
    "TapeError",
    "DegenerateVectorError",
    "Tensor",
    "Tape",
    "active_tape",
    "record",
    "matmul",
    "add",
    "add_const",
    "scale",
    "mul_const",
    "relu",
    "mean_rows",
    "concat_cols",
    "concat_rows",
    "take_rows",
    "cosine_sim",
    "cosine_matrix",
    "softmax",
    "softmax_ce",
    "cross_entropy",
    "backward",
    "AdamState",
    "adam_step",
]


class DimensionError(ValueError):
    """Operand shapes are incompatible."""


class TapeError(RuntimeError):
    """Misuse of the gradient tape."""


class DegenerateVectorError(ValueError):
    """A zero-norm vector was passed where a direction is required."""


BackwardFn = Callable[[np.ndarray], Sequence["np.ndarray | None"]]


class Tensor:
    """Immutable float64 matrix, optionally tracked by the active tape."""

    __slots__ = ("data", "grad", "requires_grad", "_tape", "_index", "__weakref__")

    def __init__(self, values, requires_grad: bool = False):
        arr = np.array(values, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1, 1)
        elif arr.ndim == 1:
            arr = arr.reshape(1, -1)
        elif arr.ndim != 2:
            raise DimensionError(f"tensors are 2-D, got shape {arr.shape}")
        if not np.isfinite(arr).all():
            raise ValueError("tensor values must be finite")
        arr.flags.writeable = False
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._tape: Tape | None = None
        self._index = -1

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape  # type: ignore[return-value]

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def item(self) -> float:
        if self.data.size != 1:
            raise DimensionError(f"item() needs a 1x1 tensor, got {self.shape}")
        return float(self.data[0, 0])

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return matmul(self, other)

    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, other)

    def __mul__(self, c: float) -> "Tensor":
        return scale(self, c)

    __rmul__ = __mul__


@dataclass
class _Node:
    out: Tensor
    inputs: tuple[Tensor, ...]
    backward: BackwardFn


_TAPES: list["Tape"] = []


def active_tape() -> "Tape | None":
    return _TAPES[-1] if _TAPES else None


class Tape:
    """Ordered record of differentiable operations for one backward pass.

    Tapes nest; operations are recorded on the innermost active tape only.
    A tape is meant to live for a single training step.
    """

    def __init__(self):
        self.nodes: list[_Node] = []
        self.leaves: list[Tensor] = []
        self._leaf_ids: set[int] = set()

    def __enter__(self) -> "Tape":
        _TAPES.append(self)
        return self

    def __exit__(self, *exc) -> None:
        if not _TAPES or _TAPES[-1] is not self:
            raise TapeError("tapes must be exited in LIFO order")
        _TAPES.pop()

    def owns(self, t: Tensor) -> bool:
        return t._tape is self

    def _tracked(self, t: Tensor) -> bool:
        return t._tape is self or t.requires_grad

    def _record(self, value: np.ndarray, inputs: tuple[Tensor, ...], fn: BackwardFn) -> Tensor:
        out = Tensor(value)
        for t in inputs:
            if t._tape is not self and t.requires_grad and id(t) not in self._leaf_ids:
                self._leaf_ids.add(id(t))
                self.leaves.append(t)
        out._tape = self
        out._index = len(self.nodes)
        out.requires_grad = True
        self.nodes.append(_Node(out, inputs, fn))
        return out

    def backward(self, seed: Tensor) -> dict[Tensor, np.ndarray]:
        """Propagate d(seed)/d(.) to every leaf recorded on this tape.

        Returns a mapping leaf -> gradient and also stores each gradient on
        ``leaf.grad``. Leaves that do not influence ``seed`` get zeros.
        """
        if seed.shape != (1, 1):
            raise TapeError(f"backward seed must be a 1x1 scalar, got {seed.shape}")
        grads: dict[int, np.ndarray] = {}
        if seed._tape is self:
            grads[id(seed)] = np.ones((1, 1))
            for node in reversed(self.nodes[: seed._index + 1]):
                g_out = grads.pop(id(node.out), None)
                if g_out is None:
                    continue
                for inp, g in zip(node.inputs, node.backward(g_out)):
                    if g is None or not self._tracked(inp):
                        continue
                    key = id(inp)
                    if key in grads:
                        grads[key] = grads[key] + g
                    else:
                        grads[key] = g
        elif seed.requires_grad:
            if id(seed) not in self._leaf_ids:
                self._leaf_ids.add(id(seed))
                self.leaves.append(seed)
            grads[id(seed)] = np.ones((1, 1))
        else:
            raise TapeError("backward seed is neither recorded on this tape nor a gradient leaf")
        result: dict[Tensor, np.ndarray] = {}
        for leaf in self.leaves:
            g = grads.get(id(leaf))
            g = np.zeros(leaf.shape) if g is None else np.asarray(g, dtype=np.float64)
            leaf.grad = g
            result[leaf] = g
        return result


def backward(tape: Tape, seed: Tensor) -> dict[Tensor, np.ndarray]:
    return tape.backward(seed)


def record(value: np.ndarray, inputs: Sequence[Tensor], fn: BackwardFn) -> Tensor:
    """Wrap ``value`` as the output of a differentiable op.

    ``fn`` maps the output gradient to one gradient (or None) per input.
    Nothing is recorded when no tape is active or no input is tracked, which
    makes evaluation-mode code free of bookkeeping.
    """
    tape = active_tape()
    inputs = tuple(inputs)
    if tape is None or not any(tape._tracked(t) for t in inputs):
        return Tensor(value)
    return tape._record(value, inputs, fn)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul shapes {a.shape} and {b.shape} do not align")
    A, B = a.data, b.data
    return record(A @ B, (a, b), lambda g: (g @ B.T, A.T @ g))


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum; ``b`` may also be a 1-row bias added to every row of ``a``."""
    if a.shape == b.shape:
        return record(a.data + b.data, (a, b), lambda g: (g, g))
    if b.shape[0] == 1 and b.shape[1] == a.shape[1]:
        return record(a.data + b.data, (a, b), lambda g: (g, g.sum(axis=0, keepdims=True)))
    raise DimensionError(f"cannot add shapes {a.shape} and {b.shape}")


def add_const(a: Tensor, c: np.ndarray) -> Tensor:
    """``a + c`` where ``c`` is a constant (no gradient flows into it)."""
    c = np.asarray(c, dtype=np.float64)
    if c.shape != a.shape:
        raise DimensionError(f"cannot add constant {c.shape} to {a.shape}")
    return record(a.data + c, (a,), lambda g: (g,))


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return record(a.data * c, (a,), lambda g: (g * c,))


def mul_const(a: Tensor, mask: np.ndarray) -> Tensor:
    mask = np.asarray(mask, dtype=np.float64)
    if mask.shape != a.shape:
        raise DimensionError(f"mask shape {mask.shape} differs from {a.shape}")
    return record(a.data * mask, (a,), lambda g: (g * mask,))


def relu(x: Tensor) -> Tensor:
    active = x.data > 0
    return record(np.where(active, x.data, 0.0), (x,), lambda g: (g * active,))


def mean_rows(x: Tensor) -> Tensor:
    """Column means as a 1-row tensor.

    Sums are exactly rounded (``math.fsum``), so the result does not depend
    on row order.
    """
    n, d = x.shape
    if n == 0:
        raise DimensionError("mean_rows of an empty matrix")
    cols = x.data.T
    out = np.array([[math.fsum(cols[j]) / n for j in range(d)]])
    return record(out, (x,), lambda g: (np.repeat(g / n, n, axis=0),))


def concat_cols(x: Tensor, y: Tensor) -> Tensor:
    if x.shape[0] != y.shape[0]:
        raise DimensionError(f"concat_cols row mismatch: {x.shape} vs {y.shape}")
    a = x.shape[1]
    return record(np.hstack([x.data, y.data]), (x, y), lambda g: (g[:, :a], g[:, a:]))


def concat_rows(x: Tensor, y: Tensor) -> Tensor:
    if x.shape[1] != y.shape[1]:
        raise DimensionError(f"concat_rows column mismatch: {x.shape} vs {y.shape}")
    a = x.shape[0]
    return record(np.vstack([x.data, y.data]), (x, y), lambda g: (g[:a], g[a:]))


def take_rows(x: Tensor, index: Sequence[int]) -> Tensor:
    idx = np.asarray(index, dtype=np.int64)
    n = x.shape[0]

    def back(g):
        out = np.zeros(x.shape)
        np.add.at(out, idx, g)
        return (out,)

    if idx.size and (idx.min() < -n or idx.max() >= n):
        raise IndexError(f"row index out of range for {x.shape}")
    return record(x.data[idx], (x,), back)


def _row_norms(m: np.ndarray) -> np.ndarray:
    norms = np.sqrt((m * m).sum(axis=1, keepdims=True))
    if (norms == 0).any():
        raise DegenerateVectorError("cosine similarity of a zero-norm vector")
    return norms


def cosine_matrix(a: Tensor, b: Tensor) -> Tensor:
    """Pairwise cosine similarities between the rows of ``a`` and ``b``."""
    if a.shape[1] != b.shape[1]:
        raise DimensionError(f"cosine_matrix width mismatch: {a.shape} vs {b.shape}")
    na, nb = _row_norms(a.data), _row_norms(b.data)
    ua, ub = a.data / na, b.data / nb
    c = np.clip(ua @ ub.T, -1.0, 1.0)

    def back(g):
        dua = g @ ub
        dub = g.T @ ua
        da = (dua - (dua * ua).sum(axis=1, keepdims=True) * ua) / na
        db = (dub - (dub * ub).sum(axis=1, keepdims=True) * ub) / nb
        return da, db

    return record(c, (a, b), back)


def cosine_sim(u: Tensor, v: Tensor) -> Tensor:
    if u.shape[0] != 1 or v.shape[0] != 1:
        raise DimensionError(f"cosine_sim takes row vectors, got {u.shape} and {v.shape}")
    return cosine_matrix(u, v)


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def cross_entropy(logits: Tensor, labels: Sequence[int]) -> Tensor:
    """Mean negative log-likelihood of ``labels`` under row-wise softmax."""
    n, k = logits.shape
    y = np.asarray(labels, dtype=np.int64).reshape(-1)
    if y.size != n:
        raise DimensionError(f"{y.size} labels for {n} rows of logits")
    if n == 0:
        raise DimensionError("cross_entropy of an empty batch")
    if k < 2:
        raise DimensionError("need at least two classes")
    if (y < 0).any() or (y >= k).any():
        raise IndexError(f"label out of range for {k} classes")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1))
    nll = lse - z[np.arange(n), y]
    loss = np.array([[math.fsum(nll) / n]])

    def back(g):
        p = softmax(logits.data)
        p[np.arange(n), y] -= 1.0
        return (p * (g[0, 0] / n),)

    return record(loss, (logits,), back)


def softmax_ce(logits: Tensor, label: int) -> Tensor:
    if logits.shape[0] != 1:
        raise DimensionError(f"softmax_ce takes a single row of logits, got {logits.shape}")
    return cross_entropy(logits, [label])


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    step: int = 0

    @classmethod
    def zeros_like(cls, params: Sequence[np.ndarray]) -> "AdamState":
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params])


def adam_step(
    params: Sequence[np.ndarray],
    grads: Sequence[np.ndarray],
    state: AdamState,
    lr: float = 1e-4,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
    weight_decay: float = 0.0,
) -> tuple[list[np.ndarray], AdamState]:
    """One bias-corrected Adam update with optional decoupled weight decay.

    Inputs are left untouched; new arrays are returned.
    """
    if not (len(params) == len(grads) == len(state.m) == len(state.v)):
        raise DimensionError("params, grads and optimizer state differ in length")
    t = state.step + 1
    c1 = 1.0 - beta1**t
    c2 = 1.0 - beta2**t
    new_p, new_m, new_v = [], [], []
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if not (p.shape == g.shape == m.shape == v.shape):
            raise DimensionError(f"adam shapes disagree: param {p.shape}, grad {g.shape}")
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * g * g
        update = lr * (m / c1) / (np.sqrt(v / c2) + eps)
        if weight_decay > 0:
            update = update + lr * weight_decay * p
        new_p.append(p - update)
        new_m.append(m)
        new_v.append(v)
    return new_p, AdamState(new_m, new_v, t)
