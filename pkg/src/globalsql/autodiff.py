"""Reverse-mode automatic differentiation over small dense float64 tensors.

A ``Tensor`` wraps a numpy array.  While a ``Tape`` is active (as a context
manager), every primitive records the output tensor, its inputs, and a
closure that maps the output gradient to input gradient contributions.
Because tensors are created in forward order, the tape itself is a valid
topological order, and ``backward`` simply walks it in reverse.

Everything is double precision; gradient-check tolerances assume that.
"""

from __future__ import annotations

import threading
from typing import Callable, Iterable, Sequence

import numpy as np

_LOCAL = threading.local()


class GradError(ValueError):
    """Raised for misuse of the differentiation machinery."""


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


def _tape() -> "Tape | None":
    return getattr(_LOCAL, "stack", [None])[-1] if getattr(_LOCAL, "stack", None) else None


class Tensor:
    """A float64 array plus identity; gradients live on the tape, not here."""

    __slots__ = ("data",)

    def __init__(self, data):
        self.data = np.asarray(data, dtype=np.float64)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def detach(self) -> "Tensor":
        """A constant copy carrying no connection to any tape."""
        return Tensor(self.data.copy())

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape})"

    # Operator sugar; every dunder delegates to a recorded primitive.
    def __add__(self, other):
        return add(self, other if isinstance(other, Tensor) else Tensor(other))

    def __sub__(self, other):
        return sub(self, other if isinstance(other, Tensor) else Tensor(other))

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, float(other))

    def __rmul__(self, other):
        return scale(self, float(other))

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


class Tape:
    """Ordered record of primitive operations for one execution context."""

    def __init__(self):
        self._entries: list[tuple[Tensor, tuple[Tensor, ...], Callable]] = []

    def __enter__(self) -> "Tape":
        if not hasattr(_LOCAL, "stack"):
            _LOCAL.stack = []
        _LOCAL.stack.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _LOCAL.stack.pop()

    def __len__(self) -> int:
        return len(self._entries)

    def record(self, out: Tensor, inputs: tuple[Tensor, ...], bwd: Callable) -> None:
        self._entries.append((out, inputs, bwd))

    def gradients(self, loss: Tensor) -> dict[int, np.ndarray]:
        """Gradients of a recorded scalar loss, keyed by tensor identity."""
        if loss.data.shape != ():
            raise GradError(f"loss must be scalar, got shape {loss.data.shape}")
        if not any(out is loss for out, _, _ in self._entries):
            raise GradError("loss was not recorded on this tape")
        grads: dict[int, np.ndarray] = {id(loss): np.ones(())}
        for out, inputs, bwd in reversed(self._entries):
            g = grads.get(id(out))
            if g is None:
                continue
            for t, contrib in zip(inputs, bwd(g)):
                if contrib is None:
                    continue
                acc = grads.get(id(t))
                if acc is None:
                    grads[id(t)] = np.array(contrib, dtype=np.float64, copy=True)
                else:
                    acc += contrib
        return grads


class no_grad:
    """Context manager suspending recording (pushes a null tape frame)."""

    def __enter__(self):
        if not hasattr(_LOCAL, "stack"):
            _LOCAL.stack = []
        _LOCAL.stack.append(None)
        return self

    def __exit__(self, *exc):
        _LOCAL.stack.pop()


class ParameterStore:
    """Named parameter tensors with an aligned gradient map.

    Creation order is deterministic and defines the checkpoint layout.
    """

    def __init__(self, seed: int = 0):
        self.rng = np.random.default_rng(seed)
        self._params: dict[str, Tensor] = {}
        self._grads: dict[str, np.ndarray] = {}
        self._by_id: dict[int, str] = {}

    def create(self, name: str, shape: Sequence[int], init: str = "zeros") -> Tensor:
        if name in self._params:
            raise GradError(f"duplicate parameter name {name!r}")
        shape = tuple(shape)
        if init == "zeros":
            data = np.zeros(shape)
        elif init == "glorot":
            fan_in = shape[-1] if len(shape) > 1 else shape[0]
            fan_out = shape[0]
            a = np.sqrt(6.0 / (fan_in + fan_out))
            data = self.rng.uniform(-a, a, size=shape)
        elif init == "uniform":
            data = self.rng.uniform(-0.1, 0.1, size=shape)
        else:
            raise GradError(f"unknown init {init!r}")
        t = Tensor(data)
        self._params[name] = t
        self._grads[name] = np.zeros(shape)
        self._by_id[id(t)] = name
        return t

    def get(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def names(self) -> list[str]:
        return list(self._params)

    def grad(self, name: str) -> np.ndarray:
        return self._grads[name]

    def zero_grads(self) -> None:
        for g in self._grads.values():
            g[...] = 0.0

    def set_data(self, name: str, values: np.ndarray) -> None:
        t = self._params[name]
        if t.data.shape != values.shape:
            raise ShapeError(f"{name}: expected {t.data.shape}, got {values.shape}")
        t.data[...] = values

    def name_of(self, t: Tensor) -> str | None:
        return self._by_id.get(id(t))


def backward(tape: Tape, loss: Tensor, params: ParameterStore) -> dict[str, np.ndarray]:
    """Accumulate d(loss)/d(param) into the store; untouched params stay zero.

    Returns the store's full gradient map (shared arrays, not copies).
    """
    grads = tape.gradients(loss)
    for name, t in params._params.items():
        g = grads.get(id(t))
        if g is not None:
            params._grads[name] += g
    return dict(params._grads)


# ---------------------------------------------------------------------------
# Primitives.  Each computes with numpy, then records a backward closure.
# ---------------------------------------------------------------------------


def _emit(data: np.ndarray, inputs: tuple[Tensor, ...], bwd: Callable) -> Tensor:
    out = Tensor(data)
    tape = _tape()
    if tape is not None:
        tape.record(out, inputs, bwd)
    return out


def constant(data) -> Tensor:
    """A tensor that never receives gradients."""
    return Tensor(data)


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape != b.data.shape and a.data.shape != () and b.data.shape != ():
        raise ShapeError(f"add: {a.data.shape} vs {b.data.shape}")

    def bwd(g):
        ga = g if a.data.shape == g.shape else np.sum(g)
        gb = g if b.data.shape == g.shape else np.sum(g)
        return ga, gb

    return _emit(a.data + b.data, (a, b), bwd)


def sub(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape != b.data.shape and a.data.shape != () and b.data.shape != ():
        raise ShapeError(f"sub: {a.data.shape} vs {b.data.shape}")

    def bwd(g):
        ga = g if a.data.shape == g.shape else np.sum(g)
        gb = -g if b.data.shape == g.shape else -np.sum(g)
        return ga, gb

    return _emit(a.data - b.data, (a, b), bwd)


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape != b.data.shape and a.data.shape != () and b.data.shape != ():
        raise ShapeError(f"mul: {a.data.shape} vs {b.data.shape}")
    ad, bd = a.data, b.data

    def bwd(g):
        ga = g * bd
        gb = g * ad
        if a.data.shape != ga.shape:
            ga = np.sum(ga)
        if b.data.shape != gb.shape:
            gb = np.sum(gb)
        return ga, gb

    return _emit(ad * bd, (a, b), bwd)


def scale(a: Tensor, c: float) -> Tensor:
    return _emit(a.data * c, (a,), lambda g: (g * c,))


def shift(a: Tensor, c: float) -> Tensor:
    return _emit(a.data + c, (a,), lambda g: (g,))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix/vector product for the (2d,2d), (2d,1d), (1d,2d), (1d,1d) cases."""
    ad, bd = a.data, b.data
    if ad.ndim == 0 or bd.ndim == 0 or ad.shape[-1] != bd.shape[0]:
        raise ShapeError(f"matmul: {ad.shape} vs {bd.shape}")
    out = ad @ bd

    def bwd(g):
        if ad.ndim == 2 and bd.ndim == 2:
            return g @ bd.T, ad.T @ g
        if ad.ndim == 2 and bd.ndim == 1:
            return np.outer(g, bd), ad.T @ g
        if ad.ndim == 1 and bd.ndim == 2:
            return g @ bd.T, np.outer(ad, g)
        return g * bd, g * ad  # dot product, scalar g

    return _emit(out, (a, b), bwd)


def transpose(a: Tensor) -> Tensor:
    return _emit(a.data.T, (a,), lambda g: (g.T,))


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    orig = a.data.shape
    return _emit(a.data.reshape(shape), (a,), lambda g: (g.reshape(orig),))


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)
    return _emit(out, (a,), lambda g: (g * (1.0 - out * out),))


def sigmoid(a: Tensor) -> Tensor:
    out = np.where(a.data >= 0, 1.0 / (1.0 + np.exp(-a.data)),
                   np.exp(a.data) / (1.0 + np.exp(a.data)))
    return _emit(out, (a,), lambda g: (g * out * (1.0 - out),))


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _emit(out, (a,), lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    ad = a.data
    return _emit(np.log(ad), (a,), lambda g: (g / ad,))


def clip(a: Tensor, lo: float | None, hi: float | None) -> Tensor:
    """Clamp values; gradient passes only where the input was untouched."""
    out = np.clip(a.data, lo, hi)
    inside = np.ones_like(a.data, dtype=bool)
    if lo is not None:
        inside &= a.data >= lo
    if hi is not None:
        inside &= a.data <= hi
    return _emit(out, (a,), lambda g: (g * inside,))


def tsum(a: Tensor) -> Tensor:
    shape = a.data.shape
    return _emit(np.sum(a.data), (a,), lambda g: (np.broadcast_to(g, shape).copy(),))


def sum_axis(a: Tensor, axis: int) -> Tensor:
    ad = a.data

    def bwd(g):
        return (np.repeat(np.expand_dims(g, axis), ad.shape[axis], axis=axis),)

    return _emit(np.sum(ad, axis=axis), (a,), bwd)


def max_axis(a: Tensor, axis: int) -> Tensor:
    """Max along an axis; gradient routes to the first argmax per slice."""
    ad = a.data
    idx = np.argmax(ad, axis=axis)
    out = np.max(ad, axis=axis)

    def bwd(g):
        ga = np.zeros_like(ad)
        if axis == 0:
            ga[idx, np.arange(ad.shape[1])] = g
        else:
            ga[np.arange(ad.shape[0]), idx] = g
        return (ga,)

    return _emit(out, (a,), bwd)


def softmax(a: Tensor, axis: int | None = None) -> Tensor:
    """Stable softmax; exact for shifts since the subtracted max is constant."""
    ad = a.data
    if ad.ndim == 1 or axis is None:
        z = np.exp(ad - np.max(ad))
        p = z / np.sum(z)

        def bwd1(g):
            return (p * (g - np.dot(g, p)),)

        return _emit(p, (a,), bwd1)

    z = np.exp(ad - np.max(ad, axis=axis, keepdims=True))
    p = z / np.sum(z, axis=axis, keepdims=True)

    def bwd2(g):
        inner = np.sum(g * p, axis=axis, keepdims=True)
        return (p * (g - inner),)

    return _emit(p, (a,), bwd2)


def log_softmax(a: Tensor) -> Tensor:
    ad = a.data
    m = np.max(ad)
    ls = ad - m - np.log(np.sum(np.exp(ad - m)))

    def bwd(g):
        return (g - np.exp(ls) * np.sum(g),)

    return _emit(ls, (a,), bwd)


def concat(parts: Sequence[Tensor]) -> Tensor:
    """Concatenate vectors (scalars are treated as length-1 vectors)."""
    arrs = [p.data.reshape(-1) if p.data.ndim == 0 else p.data for p in parts]
    sizes = [arr.shape[0] for arr in arrs]
    offs = np.cumsum([0] + sizes)
    shapes = [p.data.shape for p in parts]

    def bwd(g):
        return tuple(
            g[offs[i]:offs[i + 1]].reshape(shapes[i]) for i in range(len(parts))
        )

    return _emit(np.concatenate(arrs), tuple(parts), bwd)


def concat_cols(parts: Sequence[Tensor]) -> Tensor:
    """Concatenate matrices along axis 1."""
    widths = [p.data.shape[1] for p in parts]
    offs = np.cumsum([0] + widths)

    def bwd(g):
        return tuple(g[:, offs[i]:offs[i + 1]] for i in range(len(parts)))

    return _emit(np.concatenate([p.data for p in parts], axis=1), tuple(parts), bwd)


def concat_rows(parts: Sequence[Tensor]) -> Tensor:
    """Concatenate matrices along axis 0."""
    heights = [p.data.shape[0] for p in parts]
    offs = np.cumsum([0] + heights)

    def bwd(g):
        return tuple(g[offs[i]:offs[i + 1]] for i in range(len(parts)))

    return _emit(np.concatenate([p.data for p in parts], axis=0), tuple(parts), bwd)


def stack_rows(rows: Sequence[Tensor]) -> Tensor:
    def bwd(g):
        return tuple(g[i] for i in range(len(rows)))

    return _emit(np.stack([r.data for r in rows]), tuple(rows), bwd)


def row(a: Tensor, i: int) -> Tensor:
    shape = a.data.shape

    def bwd(g):
        ga = np.zeros(shape)
        ga[i] = g
        return (ga,)

    return _emit(a.data[i].copy(), (a,), bwd)


def column(a: Tensor, j: int) -> Tensor:
    shape = a.data.shape

    def bwd(g):
        ga = np.zeros(shape)
        ga[:, j] = g
        return (ga,)

    return _emit(a.data[:, j].copy(), (a,), bwd)


def element(a: Tensor, i: int) -> Tensor:
    shape = a.data.shape

    def bwd(g):
        ga = np.zeros(shape)
        ga[i] = g
        return (ga,)

    return _emit(np.asarray(a.data[i]), (a,), bwd)


def narrow(a: Tensor, start: int, length: int) -> Tensor:
    """Contiguous slice of a vector."""
    shape = a.data.shape

    def bwd(g):
        ga = np.zeros(shape)
        ga[start:start + length] = g
        return (ga,)

    return _emit(a.data[start:start + length].copy(), (a,), bwd)


def narrow_cols(a: Tensor, start: int, length: int) -> Tensor:
    shape = a.data.shape

    def bwd(g):
        ga = np.zeros(shape)
        ga[:, start:start + length] = g
        return (ga,)

    return _emit(a.data[:, start:start + length].copy(), (a,), bwd)


def narrow_rows(a: Tensor, start: int, length: int) -> Tensor:
    shape = a.data.shape

    def bwd(g):
        ga = np.zeros(shape)
        ga[start:start + length] = g
        return (ga,)

    return _emit(a.data[start:start + length].copy(), (a,), bwd)


def gather_rows(a: Tensor, idx: Iterable[int]) -> Tensor:
    index = np.asarray(list(idx), dtype=np.intp)
    shape = a.data.shape

    def bwd(g):
        ga = np.zeros(shape)
        np.add.at(ga, index, g)
        return (ga,)

    return _emit(a.data[index].copy(), (a,), bwd)


def scatter_add_rows(msgs: Tensor, targets: Iterable[int], n_rows: int) -> Tensor:
    """Sum message rows into their target rows of an (n_rows, d) zero matrix."""
    index = np.asarray(list(targets), dtype=np.intp)
    out = np.zeros((n_rows, msgs.data.shape[1]))
    np.add.at(out, index, msgs.data)

    def bwd(g):
        return (g[index],)

    return _emit(out, (msgs,), bwd)


def repeat_rows(a: Tensor, k: int) -> Tensor:
    """Each row repeated k times consecutively."""
    n, d = a.data.shape

    def bwd(g):
        return (g.reshape(n, k, d).sum(axis=1),)

    return _emit(np.repeat(a.data, k, axis=0), (a,), bwd)


def tile_rows(a: Tensor, k: int) -> Tensor:
    """The whole matrix stacked k times."""
    n, d = a.data.shape

    def bwd(g):
        return (g.reshape(k, n, d).sum(axis=0),)

    return _emit(np.tile(a.data, (k, 1)), (a,), bwd)


def add_rowvec(m: Tensor, v: Tensor) -> Tensor:
    """Add a vector to every row of a matrix."""
    if m.data.shape[1] != v.data.shape[0]:
        raise ShapeError(f"add_rowvec: {m.data.shape} vs {v.data.shape}")

    def bwd(g):
        return g, g.sum(axis=0)

    return _emit(m.data + v.data[None, :], (m, v), bwd)


def scale_rows(m: Tensor, v: Tensor) -> Tensor:
    """Scale row i of the matrix by v[i]."""
    if m.data.shape[0] != v.data.shape[0]:
        raise ShapeError(f"scale_rows: {m.data.shape} vs {v.data.shape}")
    md, vd = m.data, v.data

    def bwd(g):
        return g * vd[:, None], np.sum(g * md, axis=1)

    return _emit(md * vd[:, None], (m, v), bwd)


def mask_fill(a: Tensor, mask: np.ndarray, value: float) -> Tensor:
    """Replace entries where mask is True by a constant; their grad is zero."""
    out = np.where(mask, value, a.data)

    def bwd(g):
        return (np.where(mask, 0.0, g),)

    return _emit(out, (a,), bwd)


def dot(a: Tensor, b: Tensor) -> Tensor:
    return matmul(a, b)
