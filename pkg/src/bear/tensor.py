"""Dense tensors with tape-based reverse-mode automatic differentiation.

Values are numpy arrays in channels-last layout (height, width, channels),
stored row-major. float32 is the working precision; build parameters as
float64 when running finite-difference checks.
"""

from __future__ import annotations

import math
from contextlib import contextmanager
from typing import Callable, Iterator, Mapping, Sequence

import numpy as np

from .errors import ShapeError

Array = np.ndarray
BackwardFn = Callable[[Array], None]

_FLOAT_DTYPES = (np.dtype(np.float32), np.dtype(np.float64))

_grad_enabled = True


@contextmanager
def no_grad() -> Iterator[None]:
    """Evaluate forward-only: operations inside record no tape nodes."""
    global _grad_enabled
    previous = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = previous


class Tensor:
    """A dense array plus its slot on the recording tape.

    ``grad`` accumulates d(loss)/d(self) additively across backward passes
    until the owner resets it, so fan-out contributions sum as required.
    The shape is fixed at creation; ``reshape`` returns a fresh tensor over
    the same elements.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(
        self,
        data,
        requires_grad: bool = False,
        dtype=None,
        _parents: tuple["Tensor", ...] = (),
        _backward: BackwardFn | None = None,
    ) -> None:
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in _FLOAT_DTYPES:
            arr = arr.astype(np.float32)
        # ascontiguousarray would promote 0-d scalars to rank 1
        self.data: Array = arr if arr.ndim == 0 else np.ascontiguousarray(arr)
        self.grad: Array | None = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward = _backward

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item: tensor has {self.data.size} elements, expected 1")
        return float(self.data.reshape(()))

    def zero_grad(self) -> None:
        self.grad = None

    def _accumulate(self, g: Array) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def backward(self) -> None:
        """Populate gradients of every tape node this scalar depends on."""
        if self.data.size != 1:
            raise ShapeError(f"backward: loss must be a scalar, got shape {self.data.shape}")
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
            for parent in node._parents:
                if id(parent) not in seen:
                    stack.append((parent, False))
        self._accumulate(np.ones_like(self.data))
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}{flag})"


def _make(value: Array, parents: Sequence[Tensor], backward: BackwardFn) -> Tensor:
    recorded = tuple(p for p in parents if p.requires_grad)
    if _grad_enabled and recorded:
        return Tensor(value, requires_grad=True, _parents=recorded, _backward=backward)
    return Tensor(value)


def custom_op(value, parents: Sequence[Tensor], backward: BackwardFn) -> Tensor:
    """Create a traced value from a hand-written forward result and backward rule.

    ``backward`` receives the output gradient and must accumulate into each
    parent that has ``requires_grad`` set.
    """
    return _make(np.asarray(value), parents, backward)


# ---------------------------------------------------------------------------
# primitive operations


def _im2col(xp: Array, kh: int, kw: int, stride: int, out_h: int, out_w: int) -> Array:
    windows = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(0, 1))
    windows = windows[::stride, ::stride]
    return windows.transpose(0, 1, 3, 4, 2).reshape(out_h * out_w, kh * kw * xp.shape[2])


def conv2d(x: Tensor, kernel: Tensor, bias: Tensor, stride: int = 1, padding: str = "same") -> Tensor:
    """2-D convolution of an (H, W, C) input with a (kh, kw, C, F) kernel.

    "same" keeps H' = ceil(H / stride) (extents preserved at stride 1 for odd
    kernels); "valid" slides the kernel over fully covered windows only.
    """
    if x.ndim != 3:
        raise ShapeError(f"conv2d: input must be rank 3 (H, W, C), got rank {x.ndim}")
    if kernel.ndim != 4:
        raise ShapeError(f"conv2d: kernel must be rank 4 (kh, kw, C, F), got rank {kernel.ndim}")
    H, W, C = x.shape
    kh, kw, kc, F = kernel.shape
    if kc != C:
        raise ShapeError(f"conv2d: kernel depth {kc} does not match input channel axis extent {C}")
    if bias.ndim != 1 or bias.shape[0] != F:
        raise ShapeError(f"conv2d: bias must have extent {F} along the filter axis, got shape {bias.shape}")
    if stride < 1:
        raise ShapeError(f"conv2d: stride must be positive, got {stride}")
    if padding == "same":
        if kh % 2 == 0 or kw % 2 == 0:
            raise ShapeError(f"conv2d: same padding requires odd kernel extents, got {kh}x{kw}")
        out_h = -(-H // stride)
        out_w = -(-W // stride)
        pad_h = max((out_h - 1) * stride + kh - H, 0)
        pad_w = max((out_w - 1) * stride + kw - W, 0)
    elif padding == "valid":
        if kh > H or kw > W:
            raise ShapeError(f"conv2d: kernel {kh}x{kw} exceeds input extents {H}x{W}")
        out_h = (H - kh) // stride + 1
        out_w = (W - kw) // stride + 1
        pad_h = pad_w = 0
    else:
        raise ValueError(f"conv2d: unknown padding {padding!r}")
    pt, pl = pad_h // 2, pad_w // 2
    pb, pr = pad_h - pt, pad_w - pl
    xp = np.pad(x.data, ((pt, pb), (pl, pr), (0, 0))) if pad_h or pad_w else x.data
    kmat = kernel.data.reshape(kh * kw * C, F)
    cols = _im2col(xp, kh, kw, stride, out_h, out_w)
    out = (cols @ kmat + bias.data).reshape(out_h, out_w, F)

    def backward(g: Array) -> None:
        gmat = g.reshape(-1, F)
        if bias.requires_grad:
            bias._accumulate(gmat.sum(axis=0))
        if kernel.requires_grad:
            # columns are rebuilt here instead of captured to keep graphs lean
            c = _im2col(xp, kh, kw, stride, out_h, out_w)
            kernel._accumulate((c.T @ gmat).reshape(kernel.shape))
        if x.requires_grad:
            gcols = (gmat @ kmat.T).reshape(out_h, out_w, kh, kw, C)
            gxp = np.zeros_like(xp)
            for i in range(kh):
                for j in range(kw):
                    gxp[i : i + stride * out_h : stride, j : j + stride * out_w : stride] += gcols[:, :, i, j, :]
            x._accumulate(gxp[pt : pt + H, pl : pl + W])

    return _make(out, (x, kernel, bias), backward)


def dense(x: Tensor, weights: Tensor, bias: Tensor) -> Tensor:
    """Affine map of a rank-1 input: out_j = sum_i x_i w_ij + b_j."""
    if x.ndim != 1:
        raise ShapeError(f"dense: input must be rank 1 (flatten first), got rank {x.ndim}")
    if weights.ndim != 2 or weights.shape[0] != x.shape[0]:
        raise ShapeError(
            f"dense: weights expect input extent {weights.shape[0] if weights.ndim == 2 else '?'}, "
            f"got {x.shape[0]} along the input axis"
        )
    if bias.ndim != 1 or bias.shape[0] != weights.shape[1]:
        raise ShapeError(f"dense: bias must have extent {weights.shape[1]}, got shape {bias.shape}")
    out = x.data @ weights.data + bias.data

    def backward(g: Array) -> None:
        if bias.requires_grad:
            bias._accumulate(g)
        if weights.requires_grad:
            weights._accumulate(np.outer(x.data, g))
        if x.requires_grad:
            x._accumulate(weights.data @ g)

    return _make(out, (x, weights, bias), backward)


def _stable_sigmoid(v: Array) -> Array:
    out = np.empty_like(v)
    pos = v >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
    ev = np.exp(v[~pos])
    out[~pos] = ev / (1.0 + ev)
    return out


def activation(x: Tensor, kind: str) -> Tensor:
    """Elementwise nonlinearity, ``kind`` one of "sigmoid" or "tanh"."""
    if kind == "sigmoid":
        y = _stable_sigmoid(x.data)

        def backward(g: Array) -> None:
            if x.requires_grad:
                x._accumulate(g * y * (1.0 - y))

    elif kind == "tanh":
        y = np.tanh(x.data)

        def backward(g: Array) -> None:
            if x.requires_grad:
                x._accumulate(g * (1.0 - y * y))

    else:
        raise ValueError(f"activation: unknown kind {kind!r}")
    return _make(y, (x,), backward)


def sigmoid(x: Tensor) -> Tensor:
    return activation(x, "sigmoid")


def tanh(x: Tensor) -> Tensor:
    return activation(x, "tanh")


def downsample_avg(x: Tensor, r: int) -> Tensor:
    """Mean over non-overlapping r x r spatial blocks, depth unchanged."""
    if x.ndim != 3:
        raise ShapeError(f"downsample_avg: input must be rank 3, got rank {x.ndim}")
    if r < 1:
        raise ShapeError(f"downsample_avg: factor must be positive, got {r}")
    H, W, C = x.shape
    if H % r:
        raise ShapeError(f"downsample_avg: height extent {H} is not divisible by {r}")
    if W % r:
        raise ShapeError(f"downsample_avg: width extent {W} is not divisible by {r}")
    out = x.data.reshape(H // r, r, W // r, r, C).mean(axis=(1, 3))

    def backward(g: Array) -> None:
        if x.requires_grad:
            x._accumulate(np.repeat(np.repeat(g, r, axis=0), r, axis=1) / (r * r))

    return _make(out, (x,), backward)


def upsample_nearest(x: Tensor, factor: int) -> Tensor:
    """Replicate each element into a factor x factor spatial block."""
    if x.ndim != 3:
        raise ShapeError(f"upsample_nearest: input must be rank 3, got rank {x.ndim}")
    if factor < 1:
        raise ShapeError(f"upsample_nearest: factor must be positive, got {factor}")
    H, W, C = x.shape
    out = np.repeat(np.repeat(x.data, factor, axis=0), factor, axis=1)

    def backward(g: Array) -> None:
        if x.requires_grad:
            x._accumulate(g.reshape(H, factor, W, factor, C).sum(axis=(1, 3)))

    return _make(out, (x,), backward)


def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    """Stack two maps along the channel axis; a's channels come first."""
    if a.ndim != 3 or b.ndim != 3:
        raise ShapeError("concat_channels: both inputs must be rank 3")
    if a.shape[:2] != b.shape[:2]:
        raise ShapeError(f"concat_channels: spatial extents {a.shape[:2]} and {b.shape[:2]} differ")
    ca = a.shape[2]
    out = np.concatenate([a.data, b.data], axis=2)

    def backward(g: Array) -> None:
        if a.requires_grad:
            a._accumulate(g[:, :, :ca])
        if b.requires_grad:
            b._accumulate(g[:, :, ca:])

    return _make(out, (a, b), backward)


def slice_channels(x: Tensor, start: int, stop: int) -> Tensor:
    """Select channels [start, stop) of an (H, W, C) map."""
    if x.ndim != 3:
        raise ShapeError(f"slice_channels: input must be rank 3, got rank {x.ndim}")
    if not (0 <= start < stop <= x.shape[2]):
        raise ShapeError(f"slice_channels: range [{start}, {stop}) invalid for channel axis extent {x.shape[2]}")
    out = x.data[:, :, start:stop]

    def backward(g: Array) -> None:
        if x.requires_grad:
            gx = np.zeros_like(x.data)
            gx[:, :, start:stop] = g
            x._accumulate(gx)

    return _make(out, (x,), backward)


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    """View the same elements under a new shape (element count preserved)."""
    shape = tuple(int(s) for s in shape)
    count = math.prod(shape)
    if count != x.size:
        raise ShapeError(f"reshape: {shape} holds {count} elements, tensor has {x.size}")
    out = x.data.reshape(shape)

    def backward(g: Array) -> None:
        if x.requires_grad:
            x._accumulate(g.reshape(x.data.shape))

    return _make(out, (x,), backward)


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum of two same-shape tensors (no broadcasting)."""
    if a.shape != b.shape:
        raise ShapeError(f"add: shapes {a.shape} and {b.shape} differ")
    out = a.data + b.data

    def backward(g: Array) -> None:
        if a.requires_grad:
            a._accumulate(g)
        if b.requires_grad:
            b._accumulate(g)

    return _make(out, (a, b), backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise (Hadamard) product of two same-shape tensors."""
    if a.shape != b.shape:
        raise ShapeError(f"mul: shapes {a.shape} and {b.shape} differ")
    out = a.data * b.data

    def backward(g: Array) -> None:
        if a.requires_grad:
            a._accumulate(g * b.data)
        if b.requires_grad:
            b._accumulate(g * a.data)

    return _make(out, (a, b), backward)


def scale(x: Tensor, c: float) -> Tensor:
    """Multiply every element by the constant ``c``."""
    c = float(c)
    out = x.data * c

    def backward(g: Array) -> None:
        if x.requires_grad:
            x._accumulate(g * c)

    return _make(out, (x,), backward)


def add_n(tensors: Sequence[Tensor]) -> Tensor:
    """Sum an arbitrary number of same-shape tensors in one tape node."""
    if not tensors:
        raise ValueError("add_n: need at least one tensor")
    shape = tensors[0].shape
    for t in tensors[1:]:
        if t.shape != shape:
            raise ShapeError(f"add_n: shapes {shape} and {t.shape} differ")
    total = tensors[0].data.copy()
    for t in tensors[1:]:
        total += t.data

    def backward(g: Array) -> None:
        for t in tensors:
            if t.requires_grad:
                t._accumulate(g)

    return _make(total, tuple(tensors), backward)


def reduce_sum(x: Tensor) -> Tensor:
    """Sum of all elements, as a scalar tape node."""
    out = x.data.sum()

    def backward(g: Array) -> None:
        if x.requires_grad:
            x._accumulate(np.full_like(x.data, float(g)))

    return _make(out, (x,), backward)


def sum_squares(x: Tensor) -> Tensor:
    """Sum of squared elements, as a scalar tape node."""
    out = (x.data * x.data).sum()

    def backward(g: Array) -> None:
        if x.requires_grad:
            x._accumulate((2.0 * float(g)) * x.data)

    return _make(out, (x,), backward)


# ---------------------------------------------------------------------------
# parameters and gradient checking


class ParameterSet:
    """Insertion-ordered mapping of unique names to trainable tensors."""

    def __init__(self) -> None:
        self._params: dict[str, Tensor] = {}

    def add(self, name: str, value) -> Tensor:
        if name in self._params:
            raise ValueError(f"parameter {name!r} already exists")
        t = value if isinstance(value, Tensor) else Tensor(value)
        t.requires_grad = True
        self._params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        try:
            return self._params[name]
        except KeyError:
            raise KeyError(f"unknown parameter {name!r}") from None

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self) -> int:
        return len(self._params)

    def __iter__(self) -> Iterator[str]:
        return iter(self._params)

    def names(self) -> list[str]:
        return list(self._params)

    def items(self) -> Iterator[tuple[str, Tensor]]:
        return iter(self._params.items())

    def tensors(self) -> Iterator[Tensor]:
        return iter(self._params.values())

    def zero_grads(self) -> None:
        for t in self._params.values():
            t.grad = None

    def total_size(self) -> int:
        return sum(t.size for t in self._params.values())

    def value_arrays(self) -> dict[str, Array]:
        """Copies of every parameter value, keyed by name (insertion order)."""
        return {name: t.data.copy() for name, t in self._params.items()}

    def load_values(self, values: Mapping[str, Array]) -> None:
        """Overwrite every parameter from ``values``; names must match exactly."""
        missing = [n for n in self._params if n not in values]
        if missing:
            raise ValueError(f"missing parameter values for {missing[0]!r}")
        unknown = [n for n in values if n not in self._params]
        if unknown:
            raise ValueError(f"unknown parameter {unknown[0]!r}")
        for name, t in self._params.items():
            arr = np.asarray(values[name])
            if arr.shape != t.data.shape:
                raise ShapeError(f"parameter {name!r}: shape {arr.shape} does not match {t.data.shape}")
            t.data = np.ascontiguousarray(arr.astype(t.data.dtype, copy=False))


def grad_check(
    f: Callable[[ParameterSet], Tensor],
    params: ParameterSet,
    h: float = 1e-4,
    samples: int | None = None,
    seed: int = 0,
) -> float:
    """Largest relative mismatch between tape gradients and central differences.

    Returns max over checked coordinates of |analytic - numeric| / max(1, |analytic|)
    where numeric = (f(p + h e) - f(p - h e)) / 2h. When ``samples`` is given,
    coordinates are drawn per parameter in proportion to its size (at least one
    each); otherwise every coordinate is checked. Parameters must be float64.
    """
    for name, t in params.items():
        if t.data.dtype != np.float64:
            raise ValueError(f"grad_check requires float64 parameters, {name!r} is {t.data.dtype}")
    params.zero_grads()
    loss = f(params)
    loss.backward()
    analytic = {
        name: (t.grad.copy() if t.grad is not None else np.zeros_like(t.data)) for name, t in params.items()
    }
    rng = np.random.default_rng(seed)
    total = params.total_size()
    worst = 0.0
    for name, t in params.items():
        flat = t.data.reshape(-1)
        ana = analytic[name].reshape(-1)
        if samples is None:
            coords = np.arange(flat.size)
        else:
            want = min(flat.size, max(1, math.ceil(samples * flat.size / total)))
            coords = rng.choice(flat.size, size=want, replace=False)
        for c in coords:
            original = flat[c]
            flat[c] = original + h
            with no_grad():
                fp = float(f(params).data)
            flat[c] = original - h
            with no_grad():
                fm = float(f(params).data)
            flat[c] = original
            numeric = (fp - fm) / (2.0 * h)
            err = abs(float(ana[c]) - numeric) / max(1.0, abs(float(ana[c])))
            if err > worst:
                worst = err
    return worst


def grad_check_coordinate_count(params: ParameterSet, samples: int) -> int:
    """How many coordinates ``grad_check`` samples for the given budget."""
    total = params.total_size()
    return sum(min(t.size, max(1, math.ceil(samples * t.size / total))) for t in params.tensors())
