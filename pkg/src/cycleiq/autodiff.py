"""Reverse-mode automatic differentiation over dense numpy arrays.

A ``Tensor`` wraps an ndarray plus an optional gradient slot. Operations
executed while a ``Tape`` is active append nodes to that tape whenever at
least one input participates in the graph (is a ``requires_grad`` leaf or
was itself produced on the tape). ``backward`` replays the tape in reverse
and accumulates gradients into leaf tensors.

The op set is deliberately small: exactly what image networks and
differentiable quality losses need. Convolutions are im2col over BLAS
matmul, which is the fastest route available in pure numpy.
"""

from __future__ import annotations

from typing import Callable, Optional, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "Tape",
    "ShapeError",
    "backward",
    "grad_check",
    "stop_gradient",
    "apply_op",
    "add",
    "subtract",
    "multiply",
    "divide",
    "negate",
    "absolute",
    "square",
    "sqrt",
    "pow_const",
    "log",
    "tanh",
    "relu",
    "leaky_relu",
    "maximum",
    "tensor_sum",
    "tensor_mean",
    "median",
    "matmul",
    "transpose2d",
    "stack",
    "concat_channels",
    "slice_channels",
    "slice_batch",
    "reshape",
    "slice_spatial",
    "roll2d",
    "conv2d",
    "conv_transpose2d",
    "avg_pool2",
    "instance_norm",
    "mahalanobis_sq",
]

SQRT_EPS = 1e-8


class ShapeError(ValueError):
    """Raised at graph build time when operand shapes are incompatible."""


class Tensor:
    """Dense array node.

    Args:
        data: array-like. Float dtypes are kept; anything else is cast to
            float32. Training code runs float32, gradient checks float64.
        requires_grad: mark this tensor as a leaf that collects gradients.
    """

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype)
        elif arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float32)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}{flag})"

    # Operator sugar. Scalars are wrapped at the operand's dtype so float32
    # graphs stay float32.
    def __add__(self, other):
        return add(self, _ensure(other, self))

    def __radd__(self, other):
        return add(_ensure(other, self), self)

    def __sub__(self, other):
        return subtract(self, _ensure(other, self))

    def __rsub__(self, other):
        return subtract(_ensure(other, self), self)

    def __mul__(self, other):
        return multiply(self, _ensure(other, self))

    def __rmul__(self, other):
        return multiply(_ensure(other, self), self)

    def __truediv__(self, other):
        return divide(self, _ensure(other, self))

    def __rtruediv__(self, other):
        return divide(_ensure(other, self), self)

    def __neg__(self):
        return negate(self)


def _ensure(value, like: Tensor) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=like.data.dtype))


_ACTIVE: Optional["Tape"] = None


class Tape:
    """Records operations for one backward pass.

    Use as a context manager::

        with Tape() as tape:
            loss = f(params)
        backward(tape, loss)

    Tapes nest; the innermost active tape records. Ops whose inputs are all
    plain constants are computed without recording, so evaluation-only code
    paths stay allocation-light even inside a tape.
    """

    __slots__ = ("_nodes", "_live", "_prev")

    def __init__(self):
        self._nodes: list = []
        self._live: set = set()
        self._prev: Optional[Tape] = None

    def __enter__(self) -> "Tape":
        global _ACTIVE
        self._prev = _ACTIVE
        _ACTIVE = self
        return self

    def __exit__(self, exc_type, exc, tb):
        global _ACTIVE
        _ACTIVE = self._prev
        self._prev = None
        return False

    def __len__(self):
        return len(self._nodes)

    def _watches(self, t: Tensor) -> bool:
        return t.requires_grad or id(t) in self._live

    def _record(self, out: Tensor, inputs: tuple, bwd: Callable):
        self._live.add(id(out))
        self._nodes.append((out, inputs, bwd))


def _apply(inputs: tuple, forward: Callable, make_bwd: Callable) -> Tensor:
    """Run ``forward`` on raw arrays; record a node if anything is live.

    ``make_bwd(needs)`` receives a tuple of booleans (which inputs want a
    gradient) and returns the backward closure. Heavy ops use it to skip
    gradient computation for constant operands.
    """
    out = Tensor(forward(*[t.data for t in inputs]))
    tape = _ACTIVE
    if tape is not None:
        needs = tuple(tape._watches(t) for t in inputs)
        if any(needs):
            tape._record(out, inputs, make_bwd(needs))
    return out


def backward(tape: Tape, output: Tensor) -> None:
    """Accumulate d(output)/d(leaf) into each leaf's ``.grad``.

    ``output`` must be scalar (size 1). Repeated calls keep accumulating;
    call ``zero_grad`` on leaves to reset.
    """
    if output.size != 1:
        raise ShapeError(
            f"backward: output must be scalar, got shape {output.shape}"
        )
    grads = {id(output): np.ones_like(output.data)}
    for out, inputs, bwd in reversed(tape._nodes):
        g = grads.pop(id(out), None)
        if g is None:
            continue
        in_grads = bwd(g)
        for t, ig in zip(inputs, in_grads):
            if ig is None:
                continue
            if t.requires_grad:
                if t.grad is None:
                    t.grad = np.zeros_like(t.data)
                t.grad += ig
            elif id(t) in tape._live:
                if id(t) in grads:
                    grads[id(t)] = grads[id(t)] + ig
                else:
                    grads[id(t)] = ig


def stop_gradient(x: Tensor) -> Tensor:
    """Detach: same values, no graph connection."""
    return Tensor(x.data.copy())


def apply_op(inputs: Sequence[Tensor], forward: Callable, make_bwd: Callable) -> Tensor:
    """Escape hatch for composite ops with hand-derived adjoints.

    ``forward`` receives the raw arrays; ``make_bwd(needs)`` returns the
    backward closure mapping the output gradient to per-input gradients
    (None for inputs whose ``needs`` flag is False). Callers own the
    correctness of the adjoint; gradient-check any op defined this way.
    """
    return _apply(tuple(inputs), forward, make_bwd)


def _broadcast_check(op: str, a: Tensor, b: Tensor):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast")


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` (inverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def add(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_check("add", a, b)
    return _apply(
        (a, b),
        np.add,
        lambda needs: lambda g: (
            _unbroadcast(g, a.shape) if needs[0] else None,
            _unbroadcast(g, b.shape) if needs[1] else None,
        ),
    )


def subtract(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_check("subtract", a, b)
    return _apply(
        (a, b),
        np.subtract,
        lambda needs: lambda g: (
            _unbroadcast(g, a.shape) if needs[0] else None,
            _unbroadcast(-g, b.shape) if needs[1] else None,
        ),
    )


def multiply(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_check("multiply", a, b)
    ad, bd = a.data, b.data
    return _apply(
        (a, b),
        np.multiply,
        lambda needs: lambda g: (
            _unbroadcast(g * bd, a.shape) if needs[0] else None,
            _unbroadcast(g * ad, b.shape) if needs[1] else None,
        ),
    )


def divide(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_check("divide", a, b)
    ad, bd = a.data, b.data
    return _apply(
        (a, b),
        np.divide,
        lambda needs: lambda g: (
            _unbroadcast(g / bd, a.shape) if needs[0] else None,
            _unbroadcast(-g * ad / (bd * bd), b.shape) if needs[1] else None,
        ),
    )


def negate(x: Tensor) -> Tensor:
    return _apply((x,), np.negative, lambda needs: lambda g: (-g,))


def absolute(x: Tensor) -> Tensor:
    # Subgradient 0 at x == 0 (np.sign handles it).
    xd = x.data
    return _apply((x,), np.abs, lambda needs: lambda g: (g * np.sign(xd),))


def square(x: Tensor) -> Tensor:
    xd = x.data
    return _apply((x,), np.square, lambda needs: lambda g: (2.0 * xd * g,))


def sqrt(x: Tensor) -> Tensor:
    """Square root of ``x + 1e-8``; the shift keeps the gradient finite at 0."""
    y = np.sqrt(x.data + SQRT_EPS)
    return _apply((x,), lambda xd: y, lambda needs: lambda g: (g / (2.0 * y),))


def pow_const(x: Tensor, p: float) -> Tensor:
    """Elementwise ``x ** p`` for constant ``p``; domain x > 0 when p is fractional."""
    xd = x.data
    return _apply(
        (x,),
        lambda a: np.power(a, p),
        lambda needs: lambda g: (g * p * np.power(xd, p - 1.0),),
    )


def log(x: Tensor) -> Tensor:
    """Natural logarithm; domain x > 0 is the caller's responsibility."""
    xd = x.data
    return _apply((x,), np.log, lambda needs: lambda g: (g / xd,))


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)
    return _apply((x,), lambda xd: y, lambda needs: lambda g: (g * (1.0 - y * y),))


def relu(x: Tensor) -> Tensor:
    # Derivative 0 at x == 0.
    xd = x.data
    return _apply(
        (x,),
        lambda a: np.maximum(a, 0.0),
        lambda needs: lambda g: (np.where(xd > 0, g, 0.0).astype(g.dtype),),
    )


def leaky_relu(x: Tensor, slope: float = 0.2) -> Tensor:
    # Derivative ``slope`` at x == 0.
    xd = x.data
    return _apply(
        (x,),
        lambda a: np.where(a > 0, a, slope * a),
        lambda needs: lambda g: (np.where(xd > 0, g, slope * g).astype(g.dtype),),
    )


def maximum(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise max; ties send the gradient to the first argument."""
    _broadcast_check("maximum", a, b)
    mask = a.data >= b.data
    return _apply(
        (a, b),
        np.maximum,
        lambda needs: lambda g: (
            _unbroadcast(np.where(mask, g, 0.0), a.shape) if needs[0] else None,
            _unbroadcast(np.where(mask, 0.0, g), b.shape) if needs[1] else None,
        ),
    )


def tensor_sum(x: Tensor) -> Tensor:
    xd = x.data
    return _apply(
        (x,),
        lambda a: np.asarray(a.sum()),
        lambda needs: lambda g: (np.full_like(xd, float(g)),),
    )


def tensor_mean(x: Tensor) -> Tensor:
    xd = x.data
    return _apply(
        (x,),
        lambda a: np.asarray(a.mean()),
        lambda needs: lambda g: (np.full_like(xd, float(g) / xd.size),),
    )


def median(x: Tensor) -> Tensor:
    """Median over all elements.

    Gradient flows to the middle order statistic (both middles get 1/2 for
    even sizes), which makes downstream noise thresholds differentiable.
    """
    xd = x.data
    order = np.argsort(xd, axis=None, kind="stable")
    n = xd.size

    def bwd(needs):
        def run(g):
            out = np.zeros_like(xd)
            flat = out.reshape(-1)
            if n % 2:
                flat[order[n // 2]] = float(g)
            else:
                flat[order[n // 2 - 1]] = 0.5 * float(g)
                flat[order[n // 2]] = 0.5 * float(g)
            return (out,)

        return run

    return _apply((x,), lambda a: np.asarray(np.median(a)), bwd)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    ad, bd = a.data, b.data
    return _apply(
        (a, b),
        np.matmul,
        lambda needs: lambda g: (
            g @ bd.T if needs[0] else None,
            ad.T @ g if needs[1] else None,
        ),
    )


def transpose2d(x: Tensor) -> Tensor:
    if x.ndim != 2:
        raise ShapeError(f"transpose2d: expected 2-D, got {x.shape}")
    return _apply(
        (x,),
        lambda a: a.T.copy(),
        lambda needs: lambda g: (g.T.copy(),),
    )


def stack(tensors: Sequence[Tensor]) -> Tensor:
    """Stack equal-shaped tensors along a new leading axis."""
    ts = tuple(tensors)
    if not ts:
        raise ShapeError("stack: empty input")
    shape = ts[0].shape
    for t in ts[1:]:
        if t.shape != shape:
            raise ShapeError(f"stack: mixed shapes {shape} and {t.shape}")
    return _apply(
        ts,
        lambda *arrs: np.stack(arrs, axis=0),
        lambda needs: lambda g: tuple(
            g[i] if needs[i] else None for i in range(len(ts))
        ),
    )


def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 4 or b.ndim != 4:
        raise ShapeError(f"concat_channels: expected NCHW, got {a.shape}, {b.shape}")
    if a.shape[0] != b.shape[0] or a.shape[2:] != b.shape[2:]:
        raise ShapeError(f"concat_channels: incompatible shapes {a.shape}, {b.shape}")
    ca = a.shape[1]
    return _apply(
        (a, b),
        lambda x, y: np.concatenate([x, y], axis=1),
        lambda needs: lambda g: (
            g[:, :ca] if needs[0] else None,
            g[:, ca:] if needs[1] else None,
        ),
    )


def slice_channels(x: Tensor, start: int, stop: int) -> Tensor:
    if x.ndim != 4:
        raise ShapeError(f"slice_channels: expected NCHW, got {x.shape}")
    if not (0 <= start < stop <= x.shape[1]):
        raise ShapeError(f"slice_channels: [{start}:{stop}] out of range for {x.shape}")
    xshape = x.shape

    def bwd(needs):
        def run(g):
            out = np.zeros(xshape, dtype=g.dtype)
            out[:, start:stop] = g
            return (out,)

        return run

    return _apply((x,), lambda a: a[:, start:stop].copy(), bwd)


def reshape(x: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    if int(np.prod(shape)) != x.size:
        raise ShapeError(f"reshape: cannot view {x.shape} as {shape}")
    xshape = x.shape
    return _apply(
        (x,),
        lambda a: a.reshape(shape).copy(),
        lambda needs: lambda g: (g.reshape(xshape),),
    )


def slice_batch(x: Tensor, start: int, stop: int) -> Tensor:
    if x.ndim < 1:
        raise ShapeError("slice_batch: scalar input")
    if not (0 <= start < stop <= x.shape[0]):
        raise ShapeError(f"slice_batch: [{start}:{stop}] out of range for {x.shape}")
    xshape = x.shape

    def bwd(needs):
        def run(g):
            out = np.zeros(xshape, dtype=g.dtype)
            out[start:stop] = g
            return (out,)

        return run

    return _apply((x,), lambda a: a[start:stop].copy(), bwd)


def slice_spatial(x: Tensor, r0: int, r1: int, c0: int, c1: int) -> Tensor:
    """Crop rows [r0:r1] and columns [c0:c1] on the last two axes."""
    h, w = x.shape[-2], x.shape[-1]
    if not (0 <= r0 < r1 <= h and 0 <= c0 < c1 <= w):
        raise ShapeError(
            f"slice_spatial: window [{r0}:{r1},{c0}:{c1}] out of range for {x.shape}"
        )
    xshape = x.shape

    def bwd(needs):
        def run(g):
            out = np.zeros(xshape, dtype=g.dtype)
            out[..., r0:r1, c0:c1] = g
            return (out,)

        return run

    return _apply((x,), lambda a: a[..., r0:r1, c0:c1].copy(), bwd)


def roll2d(x: Tensor, dy: int, dx: int) -> Tensor:
    """Circularly shift the last two axes by (dy, dx)."""
    return _apply(
        (x,),
        lambda a: np.roll(a, (dy, dx), axis=(-2, -1)),
        lambda needs: lambda g: (np.roll(g, (-dy, -dx), axis=(-2, -1)),),
    )


# ---------------------------------------------------------------------------
# Convolution machinery


_PAD_MODES = {"zero": "constant", "wrap": "wrap", "reflect": "symmetric"}


def _pad_nchw(x: np.ndarray, p: int, mode: str) -> np.ndarray:
    if p == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)), mode=_PAD_MODES[mode])


def _pad_index_map(n: int, p: int, mode: str) -> np.ndarray:
    """Source index in [0, n) for each of the n + 2p padded positions."""
    idx = np.arange(-p, n + p)
    if mode == "wrap":
        return np.mod(idx, n)
    # symmetric reflection, edge included: ... b a | a b c | c b ...
    idx = np.where(idx < 0, -idx - 1, idx)
    idx = np.where(idx >= n, 2 * n - 1 - idx, idx)
    return idx


def _fold_pad(gp: np.ndarray, p: int, mode: str, out_shape: tuple) -> np.ndarray:
    """Adjoint of ``_pad_nchw``: scatter-add padded gradients to sources."""
    if p == 0:
        return gp
    n, c, h, w = out_shape
    if mode == "zero":
        return gp[:, :, p : p + h, p : p + w].copy()
    ri = _pad_index_map(h, p, mode)
    ci = _pad_index_map(w, p, mode)
    tmp = np.zeros((n, c, h, gp.shape[3]), dtype=gp.dtype)
    np.add.at(tmp, (slice(None), slice(None), ri), gp)
    out = np.zeros(out_shape, dtype=gp.dtype)
    np.add.at(out, (slice(None), slice(None), slice(None), ci), tmp)
    return out


def _im2col(xp: np.ndarray, kh: int, kw: int, stride: int):
    n = xp.shape[0]
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    win = win[:, :, ::stride, ::stride]
    ho, wo = win.shape[2], win.shape[3]
    mat = np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(
        n * ho * wo, -1
    )
    return mat, ho, wo


def _corr2d(xp: np.ndarray, k: np.ndarray, stride: int) -> np.ndarray:
    o, _, kh, kw = k.shape
    mat, ho, wo = _im2col(xp, kh, kw, stride)
    out = mat @ k.reshape(o, -1).T
    return out.reshape(xp.shape[0], ho, wo, o).transpose(0, 3, 1, 2).copy()


def _corr_dk(xp: np.ndarray, g: np.ndarray, stride: int, kshape: tuple) -> np.ndarray:
    o = g.shape[1]
    mat, _, _ = _im2col(xp, kshape[2], kshape[3], stride)
    gmat = np.ascontiguousarray(g.transpose(0, 2, 3, 1)).reshape(-1, o)
    return (mat.T @ gmat).T.reshape(kshape)


def _corr_dx(g: np.ndarray, k: np.ndarray, stride: int, xp_shape: tuple) -> np.ndarray:
    n, o, ho, wo = g.shape
    _, _, kh, kw = k.shape
    if stride > 1:
        gz = np.zeros(
            (n, o, (ho - 1) * stride + 1, (wo - 1) * stride + 1), dtype=g.dtype
        )
        gz[:, :, ::stride, ::stride] = g
    else:
        gz = g
    gzp = np.pad(gz, ((0, 0), (0, 0), (kh - 1, kh - 1), (kw - 1, kw - 1)))
    kt = np.ascontiguousarray(k[:, :, ::-1, ::-1].transpose(1, 0, 2, 3))
    full = _corr2d(gzp, kt, 1)
    # Rows/cols past the last window get zero gradient.
    rh = xp_shape[2] - full.shape[2]
    rw = xp_shape[3] - full.shape[3]
    if rh or rw:
        full = np.pad(full, ((0, 0), (0, 0), (0, rh), (0, rw)))
    return full


def conv2d(
    x: Tensor,
    k: Tensor,
    stride: int = 1,
    padding: int = 0,
    pad_mode: str = "zero",
) -> Tensor:
    """2-D cross-correlation.

    Args:
        x: input, shape (N, C, H, W).
        k: kernel, shape (O, C, kh, kw).
        stride: step between windows.
        padding: symmetric spatial padding applied before correlation.
        pad_mode: "zero", "wrap" (circular) or "reflect" (edge-inclusive
            symmetric). Wrap padding with a full-size kernel reproduces FFT
            circular convolution, which the spectral losses rely on.

    Returns:
        Tensor of shape (N, O, H', W') with H' = (H + 2p - kh) // stride + 1.
    """
    if x.ndim != 4 or k.ndim != 4:
        raise ShapeError(f"conv2d: expected 4-D input and kernel, got {x.shape}, {k.shape}")
    if x.shape[1] != k.shape[1]:
        raise ShapeError(f"conv2d: channel mismatch, input {x.shape} kernel {k.shape}")
    if pad_mode not in _PAD_MODES:
        raise ShapeError(f"conv2d: unknown pad_mode {pad_mode!r}")
    kh, kw = k.shape[2], k.shape[3]
    hp = x.shape[2] + 2 * padding
    wp = x.shape[3] + 2 * padding
    if hp < kh or wp < kw:
        raise ShapeError(f"conv2d: kernel {k.shape} larger than padded input {x.shape}")
    if pad_mode != "zero" and padding > min(x.shape[2], x.shape[3]):
        # np.pad wrap/symmetric support at most one full period of padding.
        raise ShapeError(f"conv2d: padding {padding} too large for {pad_mode} mode")

    xp = _pad_nchw(x.data, padding, pad_mode)
    kd = k.data
    xshape, kshape = x.shape, k.shape

    def make_bwd(needs):
        def run(g):
            dx = dk = None
            if needs[0]:
                gxp = _corr_dx(g, kd, stride, xp.shape)
                dx = _fold_pad(gxp, padding, pad_mode, xshape)
            if needs[1]:
                dk = _corr_dk(xp, g, stride, kshape)
            return (dx, dk)

        return run

    return _apply((x, k), lambda a, b: _corr2d(xp, b, stride), make_bwd)


def conv_transpose2d(x: Tensor, k: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """Adjoint of ``conv2d`` with the same kernel, stride and zero padding.

    The kernel keeps the conv2d layout (O, I, kh, kw): this op maps O
    channels back to I channels, so <conv2d(x, k), y> == <x, conv_transpose2d(y, k)>.
    Output spatial size is (H - 1) * stride + kh - 2 * padding.
    """
    if x.ndim != 4 or k.ndim != 4:
        raise ShapeError(
            f"conv_transpose2d: expected 4-D input and kernel, got {x.shape}, {k.shape}"
        )
    if x.shape[1] != k.shape[0]:
        raise ShapeError(
            f"conv_transpose2d: channel mismatch, input {x.shape} kernel {k.shape}"
        )
    kh = k.shape[2]
    if padding >= kh:
        raise ShapeError(f"conv_transpose2d: padding {padding} >= kernel {kh}")
    kd = k.data
    kshape = k.shape

    def fwd(xd, _kd):
        n, _, h, w = xd.shape
        hp = (h - 1) * stride + kshape[2]
        wp = (w - 1) * stride + kshape[3]
        full = _corr_dx(xd, _kd, stride, (n, kshape[1], hp, wp))
        if padding:
            full = full[:, :, padding : hp - padding, padding : wp - padding].copy()
        return full

    def make_bwd(needs):
        def run(g):
            dx = dk = None
            gp = _pad_nchw(g, padding, "zero")
            if needs[0]:
                dx = _corr2d(gp, kd, stride)
            if needs[1]:
                dk = _corr_dk(gp, x.data, stride, kshape)
            return (dx, dk)

        return run

    return _apply((x, k), fwd, make_bwd)


def avg_pool2(x: Tensor) -> Tensor:
    """2x2 mean pooling, stride 2. Spatial dims must be even."""
    if x.ndim != 4:
        raise ShapeError(f"avg_pool2: expected NCHW, got {x.shape}")
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ShapeError(f"avg_pool2: spatial dims must be even, got {x.shape}")

    def bwd(needs):
        def run(g):
            return (np.repeat(np.repeat(g, 2, axis=2), 2, axis=3) * 0.25,)

        return run

    return _apply(
        (x,),
        lambda a: a.reshape(n, c, h // 2, 2, w // 2, 2).mean(axis=(3, 5)),
        bwd,
    )


def instance_norm(x: Tensor, eps: float = 1e-5) -> Tensor:
    """Per-sample, per-channel normalization to zero mean and unit variance.

    No learned affine terms. Statistics are taken over the spatial axes with
    population variance.
    """
    if x.ndim != 4:
        raise ShapeError(f"instance_norm: expected NCHW, got {x.shape}")
    if x.shape[2] * x.shape[3] < 2:
        raise ShapeError(f"instance_norm: needs at least 2 spatial elements, got {x.shape}")
    xd = x.data
    mu = xd.mean(axis=(2, 3), keepdims=True)
    var = xd.var(axis=(2, 3), keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (xd - mu) * inv

    def bwd(needs):
        def run(g):
            gm = g.mean(axis=(2, 3), keepdims=True)
            gxm = (g * xhat).mean(axis=(2, 3), keepdims=True)
            return (inv * (g - gm - xhat * gxm),)

        return run

    return _apply((x,), lambda a: xhat, bwd)


def mahalanobis_sq(d: Tensor, a: Tensor) -> Tensor:
    """Quadratic form d^T A^{-1} d for symmetric positive definite A.

    Gradients: 2 A^{-1} d w.r.t. ``d`` and -(A^{-1} d)(A^{-1} d)^T w.r.t.
    ``A``. Callers regularize A themselves when it may be near-singular.
    """
    if d.ndim != 1 or a.ndim != 2 or a.shape != (d.size, d.size):
        raise ShapeError(f"mahalanobis_sq: incompatible shapes {d.shape}, {a.shape}")
    z = np.linalg.solve(a.data, d.data)
    val = float(d.data @ z)

    def bwd(needs):
        def run(g):
            gd = 2.0 * float(g) * z if needs[0] else None
            ga = -float(g) * np.outer(z, z) if needs[1] else None
            return (gd, ga)

        return run

    return _apply((d, a), lambda *_: np.asarray(val), bwd)


def grad_check(
    f: Callable,
    inputs: Sequence[Tensor],
    eps: float = 1e-5,
    coords: Optional[int] = None,
    rng: Optional[np.random.Generator] = None,
) -> float:
    """Compare tape gradients of scalar ``f(*inputs)`` to central differences.

    Args:
        f: pure function of the input tensors returning a scalar Tensor.
        inputs: leaf tensors; checked in float64 copies.
        eps: central difference step.
        coords: if given, check only this many randomly chosen coordinates
            per input (for expensive functions).
        rng: generator for coordinate sampling.

    Returns:
        max over checked coordinates of
        ``|autodiff - central| / max(|central|, 1e-8)``.
    """
    # contiguous so the flat views below alias the real buffers
    leaves = [
        Tensor(np.ascontiguousarray(t.data, dtype=np.float64), requires_grad=True)
        for t in inputs
    ]
    with Tape() as tape:
        out = f(*leaves)
        backward(tape, out)
    worst = 0.0
    if rng is None:
        rng = np.random.default_rng(0)
    for leaf in leaves:
        flat = leaf.data.reshape(-1)
        agrad = (
            np.zeros_like(flat)
            if leaf.grad is None
            else leaf.grad.reshape(-1)
        )
        if coords is None or coords >= flat.size:
            idx = range(flat.size)
        else:
            idx = rng.choice(flat.size, size=coords, replace=False)
        for i in idx:
            keep = flat[i]
            flat[i] = keep + eps
            hi = float(f(*leaves).data)
            flat[i] = keep - eps
            lo = float(f(*leaves).data)
            flat[i] = keep
            fd = (hi - lo) / (2.0 * eps)
            err = abs(agrad[i] - fd) / max(abs(fd), 1e-8)
            worst = max(worst, err)
    return worst
