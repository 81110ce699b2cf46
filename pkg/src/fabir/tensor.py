"""Dense tensors with define-by-run reverse-mode differentiation.

Every differentiable operation records an entry on the active :class:`Tape`
when at least one input requires a gradient. :func:`backward` replays the
recorded adjoints in reverse order and clears the tape.
"""

from __future__ import annotations

import contextlib
import threading
from typing import Callable, Iterator, Sequence

import numpy as np

from fabir.errors import ConfigError, ContractError, DimensionError

_state = threading.local()


def get_default_dtype() -> np.dtype:
    return getattr(_state, "dtype", np.dtype(np.float32))


def set_default_dtype(dtype) -> None:
    _state.dtype = np.dtype(dtype)


@contextlib.contextmanager
def precision(bits: int) -> Iterator[None]:
    """Temporarily switch the default float width (32 or 64)."""
    if bits not in (32, 64):
        raise ConfigError(f"precision must be 32 or 64, got {bits}")
    old = get_default_dtype()
    set_default_dtype(np.float64 if bits == 64 else np.float32)
    try:
        yield
    finally:
        set_default_dtype(old)


def dtype_for(bits: int) -> np.dtype:
    if bits not in (32, 64):
        raise ConfigError(f"precision must be 32 or 64, got {bits}")
    return np.dtype(np.float64 if bits == 64 else np.float32)


class Tensor:
    """An n-dimensional float array that can take part in a recorded computation."""

    __array_priority__ = 100  # make ndarray <op> Tensor defer to Tensor

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif arr.dtype.kind != "f":
            arr = arr.astype(get_default_dtype())
        self.data: np.ndarray = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._op: str | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    def __len__(self) -> int:
        return len(self.data)

    # Operator sugar. Identity-based hashing is kept on purpose: tensors are
    # used as dictionary keys in gradient maps.
    __hash__ = object.__hash__

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return index_select(self, index)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)


class Parameter(Tensor):
    """A trainable leaf tensor. ``name`` is assigned when the owning model is built."""

    def __init__(self, data, name: str = "", dtype=None):
        super().__init__(data, requires_grad=True, dtype=dtype)
        self.name = name

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.shape})"


class Tape:
    """Ordered record of executed operations.

    Entries are ``(output, inputs, adjoint)`` where ``adjoint`` maps the output
    gradient to one gradient (or ``None``) per input.
    """

    def __init__(self):
        self.entries: list[tuple[Tensor, tuple[Tensor, ...], Callable]] = []

    def __len__(self) -> int:
        return len(self.entries)

    def record(self, out: Tensor, inputs: tuple[Tensor, ...], adjoint: Callable) -> None:
        self.entries.append((out, inputs, adjoint))

    def clear(self) -> None:
        self.entries.clear()

    def __enter__(self) -> "Tape":
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc) -> None:
        _tape_stack().pop()


def _tape_stack() -> list[Tape]:
    stack = getattr(_state, "tapes", None)
    if stack is None:
        stack = _state.tapes = [Tape()]
    return stack


def current_tape() -> Tape:
    return _tape_stack()[-1]


def grad_enabled() -> bool:
    return getattr(_state, "grad_enabled", True)


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    old = grad_enabled()
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = old


def backward(loss: Tensor) -> dict[Tensor, np.ndarray]:
    """Propagate gradients from a scalar ``loss`` to every leaf that requires one.

    Leaf gradients are stored on ``tensor.grad`` (overwriting any previous
    value) and also returned as a mapping. The active tape is cleared.
    """
    if loss.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    tape = current_tape()
    if not tape.entries:
        raise ContractError("backward called on an empty tape")
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    leaves: dict[int, Tensor] = {}
    for out, inputs, adjoint in reversed(tape.entries):
        g = grads.pop(id(out), None)
        if g is None:
            continue
        in_grads = adjoint(g)
        for t, gi in zip(inputs, in_grads):
            if gi is None or not t.requires_grad:
                continue
            if t._op is None:
                leaves[id(t)] = t
            key = id(t)
            if key in grads:
                grads[key] = grads[key] + gi
            else:
                grads[key] = gi
    tape.clear()
    result = {}
    for key, t in leaves.items():
        t.grad = grads[key].astype(t.dtype, copy=False)
        result[t] = t.grad
    return result


# ---------------------------------------------------------------------------
# recording helpers


def _as_tensor(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype) if dtype is not None else x)


def _make(data: np.ndarray, inputs: tuple[Tensor, ...], adjoint: Callable, op: str) -> Tensor:
    needs = grad_enabled() and any(t.requires_grad for t in inputs)
    out = Tensor(data, requires_grad=needs, dtype=data.dtype)
    if needs:
        out._op = op
        current_tape().record(out, inputs, adjoint)
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _broadcast_shape(a: Tensor, b: Tensor) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"cannot broadcast shapes {a.shape} and {b.shape}") from None


# ---------------------------------------------------------------------------
# elementwise


def add(a, b) -> Tensor:
    a = _as_tensor(a, b if isinstance(b, Tensor) else None)
    b = _as_tensor(b, a)
    _broadcast_shape(a, b)
    return _make(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)), "add")


def sub(a, b) -> Tensor:
    a = _as_tensor(a, b if isinstance(b, Tensor) else None)
    b = _as_tensor(b, a)
    _broadcast_shape(a, b)
    return _make(a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)), "sub")


def mul(a, b) -> Tensor:
    a = _as_tensor(a, b if isinstance(b, Tensor) else None)
    b = _as_tensor(b, a)
    _broadcast_shape(a, b)

    def adjoint(g):
        ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return _make(a.data * b.data, (a, b), adjoint, "mul")


def div(a, b) -> Tensor:
    a = _as_tensor(a, b if isinstance(b, Tensor) else None)
    b = _as_tensor(b, a)
    _broadcast_shape(a, b)
    out = a.data / b.data

    def adjoint(g):
        ga = _unbroadcast(g / b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(-g * out / b.data, b.shape) if b.requires_grad else None
        return ga, gb

    return _make(out, (a, b), adjoint, "div")


def relu(x: Tensor) -> Tensor:
    pos = x.data > 0  # subgradient at exactly 0 is 0
    return _make(np.where(pos, x.data, 0).astype(x.dtype), (x,), lambda g: (g * pos,), "relu")


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)
    return _make(y, (x,), lambda g: (g * (1 - y * y),), "tanh")


def sigmoid(x: Tensor) -> Tensor:
    d = x.data
    # split by sign so exp never overflows
    e = np.exp(-np.abs(d))
    y = np.where(d >= 0, 1 / (1 + e), e / (1 + e)).astype(x.dtype)
    return _make(y, (x,), lambda g: (g * y * (1 - y),), "sigmoid")


def exp(x: Tensor) -> Tensor:
    y = np.exp(x.data)
    return _make(y, (x,), lambda g: (g * y,), "exp")


def log(x: Tensor) -> Tensor:
    return _make(np.log(x.data), (x,), lambda g: (g / x.data,), "log")


def maximum(x: Tensor, floor: float) -> Tensor:
    """Elementwise ``max(x, floor)`` with a scalar floor; no gradient where clamped.

    NaN inputs propagate (they are never clamped) so divergence stays visible.
    """
    keep = ~(x.data <= floor)
    y = np.where(keep, x.data, floor).astype(x.dtype)
    return _make(y, (x,), lambda g: (g * keep,), "maximum")


def where(mask, x: Tensor, fill: float) -> Tensor:
    """Keep ``x`` where ``mask`` is true, the constant ``fill`` elsewhere."""
    mask = np.asarray(mask, dtype=bool)
    try:
        mask_b = np.broadcast_to(mask, x.shape)
    except ValueError:
        raise DimensionError(f"mask shape {mask.shape} does not broadcast to {x.shape}") from None
    y = np.where(mask_b, x.data, np.asarray(fill, dtype=x.dtype))
    return _make(y, (x,), lambda g: (g * mask_b,), "where")


# ---------------------------------------------------------------------------
# linear algebra and shape


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Batched matrix product over the last two axes (leading axes broadcast)."""
    a = _as_tensor(a)
    b = _as_tensor(b, a)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise DimensionError(f"matmul batch mismatch: {a.shape} x {b.shape}") from None

    def adjoint(g):
        ga = _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape) if a.requires_grad else None
        gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape) if b.requires_grad else None
        return ga, gb

    return _make(a.data @ b.data, (a, b), adjoint, "matmul")


def reshape(x: Tensor, shape) -> Tensor:
    y = x.data.reshape(shape)
    return _make(y, (x,), lambda g: (g.reshape(x.shape),), "reshape")


def transpose(x: Tensor, axes=None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(x.ndim)))
    inv = np.argsort(axes)
    return _make(np.transpose(x.data, axes), (x,), lambda g: (np.transpose(g, inv),), "transpose")


def swapaxes(x: Tensor, a: int, b: int) -> Tensor:
    return _make(np.swapaxes(x.data, a, b), (x,), lambda g: (np.swapaxes(g, a, b),), "swapaxes")


def expand_dims(x: Tensor, axis: int) -> Tensor:
    return reshape(x, np.expand_dims(x.data, axis).shape)


def index_select(x: Tensor, index) -> Tensor:
    """``x[index]`` for basic or advanced indices; adjoint scatters back."""
    y = x.data[index]

    def adjoint(g):
        gx = np.zeros_like(x.data)
        np.add.at(gx, index, g)
        return (gx,)

    return _make(np.array(y, copy=True), (x,), adjoint, "index")


def take_rows(table: Tensor, ids) -> Tensor:
    """Gather rows of a 2-D table; ``ids`` may have any shape."""
    ids = np.asarray(ids, dtype=np.int64)
    y = table.data[ids]

    def adjoint(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, ids.reshape(-1), g.reshape(-1, table.shape[-1]))
        return (gt,)

    return _make(y, (table,), adjoint, "take_rows")


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    ref = tensors[0]
    ax = axis % ref.ndim
    for t in tensors[1:]:
        if t.ndim != ref.ndim or any(
            i != ax and s != r for i, (s, r) in enumerate(zip(t.shape, ref.shape))
        ):
            raise DimensionError(
                f"concat along axis {axis}: shapes {[t.shape for t in tensors]} disagree"
            )
    sizes = [t.shape[ax] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def adjoint(g):
        return tuple(
            np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=ax) for i in range(len(tensors))
        )

    return _make(np.concatenate([t.data for t in tensors], axis=ax), tuple(tensors), adjoint, "concat")


def pad(x: Tensor, pad_width, value: float = 0.0) -> Tensor:
    """Constant padding; ``pad_width`` follows :func:`numpy.pad`."""
    pw = np.broadcast_to(np.asarray(pad_width, dtype=np.int64), (x.ndim, 2))
    y = np.pad(x.data, pw, constant_values=value)
    crop = tuple(slice(lo, lo + n) for (lo, _), n in zip(pw, x.shape))
    return _make(y, (x,), lambda g: (g[crop],), "pad")


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    return concat([expand_dims(t, axis) for t in tensors], axis=axis)


# ---------------------------------------------------------------------------
# reductions


def _norm_axis(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    out = []
    for a in axis:
        if not -ndim <= a < ndim:
            raise DimensionError(f"axis {a} out of range for rank {ndim}")
        out.append(a % ndim)
    return tuple(out)


def sum_(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axis(axis, x.ndim)
    y = x.data.sum(axis=axes, keepdims=keepdims)

    def adjoint(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, x.shape).copy(),)

    return _make(np.asarray(y), (x,), adjoint, "sum")


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axis(axis, x.ndim)
    n = int(np.prod([x.shape[a] for a in axes]))
    return mul(sum_(x, axes, keepdims), 1.0 / n)


def max_(x: Tensor, axis: int, keepdims: bool = False) -> Tensor:
    """Max along one axis; the adjoint routes to the first argmax only."""
    (ax,) = _norm_axis(axis, x.ndim)
    idx = np.expand_dims(np.argmax(x.data, axis=ax), ax)
    y = np.take_along_axis(x.data, idx, axis=ax)

    def adjoint(g):
        gx = np.zeros_like(x.data)
        gg = g if keepdims else np.expand_dims(g, ax)
        np.put_along_axis(gx, idx, gg, axis=ax)
        return (gx,)

    return _make(y if keepdims else np.squeeze(y, ax), (x,), adjoint, "max")


# ---------------------------------------------------------------------------
# composite kernels with hand-written adjoints


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    (ax,) = _norm_axis(axis, x.ndim)
    z = x.data - x.data.max(axis=ax, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=ax, keepdims=True)

    def adjoint(g):
        return (y * (g - (g * y).sum(axis=ax, keepdims=True)),)

    return _make(y, (x,), adjoint, "softmax")


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-6) -> Tensor:
    """Normalize over the last axis with population variance, then scale and shift."""
    d = x.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise DimensionError(f"layer_norm params {gain.shape}/{bias.shape} for width {d}")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    y = xhat * gain.data + bias.data

    def adjoint(g):
        lead = tuple(range(x.ndim - 1))
        gx = None
        if x.requires_grad:
            dxhat = g * gain.data
            gx = inv * (
                dxhat
                - dxhat.mean(axis=-1, keepdims=True)
                - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
            )
        return gx, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return _make(y, (x, gain, bias), adjoint, "layer_norm")


def conv2d(x: Tensor, kernel: Tensor, padding: str = "same") -> Tensor:
    """2-D cross-correlation over the two axes before the channel axis.

    ``x`` is ``(..., H, W, C_in)`` and ``kernel`` is ``(kh, kw, C_in, C_out)``.
    ``"same"`` zero-pads so the spatial size is preserved.
    """
    if x.ndim < 3 or kernel.ndim != 4:
        raise DimensionError(f"conv2d expects (...,H,W,C) input and 4-D kernel, got {x.shape}, {kernel.shape}")
    kh, kw, cin, cout = kernel.shape
    if x.shape[-1] != cin:
        raise DimensionError(f"conv2d channel mismatch: input {x.shape} vs kernel {kernel.shape}")
    H, W = x.shape[-3], x.shape[-2]
    if padding == "same":
        pt, pl = (kh - 1) // 2, (kw - 1) // 2
        pads = ((pt, kh - 1 - pt), (pl, kw - 1 - pl))
    elif padding == "valid":
        pads = ((0, 0), (0, 0))
    else:
        raise ConfigError(f"unknown padding {padding!r}")
    Hp, Wp = H + sum(pads[0]), W + sum(pads[1])
    if Hp < kh or Wp < kw:
        raise DimensionError(f"conv2d kernel {kernel.shape[:2]} larger than padded input {(Hp, Wp)}")
    Ho, Wo = Hp - kh + 1, Wp - kw + 1
    lead = x.ndim - 3
    xp = np.pad(x.data, [(0, 0)] * lead + [pads[0], pads[1], (0, 0)])
    k = kernel.data
    out = np.zeros(x.shape[:-3] + (Ho, Wo, cout), dtype=np.result_type(x.dtype, kernel.dtype))
    for a in range(kh):
        for b in range(kw):
            out += xp[..., a:a + Ho, b:b + Wo, :] @ k[a, b]

    def adjoint(g):
        gk = None
        gx = None
        if kernel.requires_grad:
            gk = np.empty_like(k)
            g2 = g.reshape(-1, cout)
            for a in range(kh):
                for b in range(kw):
                    gk[a, b] = xp[..., a:a + Ho, b:b + Wo, :].reshape(-1, cin).T @ g2
        if x.requires_grad:
            gxp = np.zeros_like(xp)
            for a in range(kh):
                for b in range(kw):
                    gxp[..., a:a + Ho, b:b + Wo, :] += g @ k[a, b].T
            gx = gxp[..., pads[0][0]:pads[0][0] + H, pads[1][0]:pads[1][0] + W, :]
        return gx, gk

    return _make(out, (x, kernel), adjoint, "conv2d")


def dropout(x: Tensor, keep_prob: float, training: bool, rng: np.random.Generator | None) -> Tensor:
    """Inverted dropout: survivors are scaled by ``1/keep_prob``; identity at inference."""
    if not 0.0 < keep_prob <= 1.0:
        raise ConfigError(f"keep_prob must lie in (0, 1], got {keep_prob}")
    if not training or keep_prob == 1.0:
        return x
    if rng is None:
        raise ContractError("dropout in training mode needs an rng")
    keep = rng.random(x.shape) < keep_prob
    scale = (keep / keep_prob).astype(x.dtype)
    return _make(x.data * scale, (x,), lambda g: (g * scale,), "dropout")
