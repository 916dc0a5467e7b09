"""Neural building blocks: a convolutional LSTM cell driven over the channel
axis, multi-scale parallel convolution blocks, and the recurrent-kernel
penalty used to regularize the cells."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import ShapeError
from .tensor import (
    Tensor,
    add,
    add_n,
    concat_channels,
    conv2d,
    mul,
    scale,
    sigmoid,
    slice_channels,
    sum_squares,
    tanh,
)

# Gate slices along the stacked filter axis, each `filters` wide.
GATE_ORDER = ("input", "forget", "candidate", "output")

PARALLEL_KERNEL_EXTENTS = (1, 3, 5)


@dataclass
class ConvLstmParams:
    """Weights of one convolutional LSTM cell.

    The cell is driven over single-channel slices of its input, so the input
    kernels consume exactly one channel. Gate kernels are stacked along the
    last axis in GATE_ORDER, each ``filters`` wide.
    """

    input_kernels: Tensor  # (k, k, 1, 4F)
    recurrent_kernels: Tensor  # (k, k, F, 4F)
    biases: Tensor  # (4F,)

    def __post_init__(self) -> None:
        ik, rk, b = self.input_kernels, self.recurrent_kernels, self.biases
        if ik.ndim != 4 or ik.shape[2] != 1:
            raise ShapeError(f"input kernels must be (k, k, 1, 4F), got {ik.shape}")
        if rk.ndim != 4:
            raise ShapeError(f"recurrent kernels must be (k, k, F, 4F), got {rk.shape}")
        k = ik.shape[0]
        if ik.shape[1] != k or rk.shape[0] != k or rk.shape[1] != k:
            raise ShapeError(f"kernel extents disagree: {ik.shape} vs {rk.shape}")
        if k % 2 == 0:
            raise ShapeError(f"kernel extent must be odd, got {k}")
        f = rk.shape[2]
        if rk.shape[3] != 4 * f or ik.shape[3] != 4 * f:
            raise ShapeError(f"stacked gate axis must be 4F={4 * f}, got {ik.shape[3]} and {rk.shape[3]}")
        if b.ndim != 1 or b.shape[0] != 4 * f:
            raise ShapeError(f"biases must have extent {4 * f}, got shape {b.shape}")

    @property
    def filters(self) -> int:
        return self.recurrent_kernels.shape[2]

    @property
    def kernel_extent(self) -> int:
        return self.input_kernels.shape[0]


def convlstm_step(x_t: Tensor, h_prev: Tensor, c_prev: Tensor, p: ConvLstmParams) -> tuple[Tensor, Tensor]:
    """One cell update over a single-channel input slice.

    i = sig(conv(x; Wi) + conv(h; Ui) + bi), f and o likewise,
    g = tanh(conv(x; Wg) + conv(h; Ug) + bg),
    c = f * c_prev + i * g,  h = o * tanh(c).
    Spatial extents are preserved (same padding).
    """
    F = p.filters
    if x_t.ndim != 3 or x_t.shape[2] != 1:
        raise ShapeError(f"convlstm_step: input slice must be (H, W, 1), got {x_t.shape}")
    expected = (x_t.shape[0], x_t.shape[1], F)
    if h_prev.shape != expected:
        raise ShapeError(f"convlstm_step: hidden state shape {h_prev.shape} does not match {expected}")
    if c_prev.shape != expected:
        raise ShapeError(f"convlstm_step: cell state shape {c_prev.shape} does not match {expected}")
    zero_bias = Tensor(np.zeros(4 * F, dtype=p.biases.data.dtype))
    gates = add(
        conv2d(x_t, p.input_kernels, p.biases),
        conv2d(h_prev, p.recurrent_kernels, zero_bias),
    )
    i = sigmoid(slice_channels(gates, 0, F))
    f = sigmoid(slice_channels(gates, F, 2 * F))
    g = tanh(slice_channels(gates, 2 * F, 3 * F))
    o = sigmoid(slice_channels(gates, 3 * F, 4 * F))
    c_t = add(mul(f, c_prev), mul(i, g))
    h_t = mul(o, tanh(c_t))
    return h_t, c_t


def convlstm_over_channels(x: Tensor, p: ConvLstmParams) -> Tensor:
    """Run the cell across the channel axis as a sequence, zero initial state.

    Channel order matters: slices are consumed in storage order, and the final
    hidden state is returned.
    """
    if x.ndim != 3:
        raise ShapeError(f"convlstm_over_channels: input must be rank 3, got rank {x.ndim}")
    H, W, depth = x.shape
    F = p.filters
    state_dtype = p.biases.data.dtype
    h = Tensor(np.zeros((H, W, F), dtype=state_dtype))
    c = Tensor(np.zeros((H, W, F), dtype=state_dtype))
    for t in range(depth):
        h, c = convlstm_step(slice_channels(x, t, t + 1), h, c, p)
    return h


@dataclass
class ParallelConvParams:
    """Same-padding convolution branches applied side by side.

    All branches share the input channel count and filter count; kernel
    extents come from PARALLEL_KERNEL_EXTENTS. ``merge`` is "concat"
    (channels stacked branch by branch) or "mean" (elementwise average).
    """

    branches: Sequence[tuple[Tensor, Tensor]]  # (kernel (k, k, C, F), bias (F,))
    merge: str = "concat"

    def __post_init__(self) -> None:
        if not self.branches:
            raise ShapeError("parallel_conv: need at least one branch")
        if self.merge not in ("concat", "mean"):
            raise ValueError(f"parallel_conv: unknown merge {self.merge!r}")
        first = self.branches[0][0]
        if first.ndim != 4:
            raise ShapeError(f"branch kernels must be rank 4, got rank {first.ndim}")
        c, f = first.shape[2], first.shape[3]
        for kernel, bias in self.branches:
            k = kernel.shape[0]
            if kernel.ndim != 4 or kernel.shape[1] != k:
                raise ShapeError(f"branch kernel must be square, got {kernel.shape}")
            if k not in PARALLEL_KERNEL_EXTENTS:
                raise ShapeError(f"branch kernel extent must be one of {PARALLEL_KERNEL_EXTENTS}, got {k}")
            if kernel.shape[2] != c or kernel.shape[3] != f:
                raise ShapeError(f"branches disagree on channels/filters: {kernel.shape} vs {first.shape}")
            if bias.ndim != 1 or bias.shape[0] != f:
                raise ShapeError(f"branch bias must have extent {f}, got shape {bias.shape}")


def parallel_conv(x: Tensor, p: ParallelConvParams) -> Tensor:
    """Apply every branch (same padding, stride 1) and merge the results."""
    outs = [conv2d(x, kernel, bias) for kernel, bias in p.branches]
    if p.merge == "concat":
        merged = outs[0]
        for o in outs[1:]:
            merged = concat_channels(merged, o)
        return merged
    if len(outs) == 1:
        return outs[0]
    return scale(add_n(outs), 1.0 / len(outs))


def l2_penalty(tensors: Iterable[Tensor], lam: float) -> Tensor:
    """lam times the summed squared elements of ``tensors``, as a scalar node."""
    lam = float(lam)
    if lam < 0:
        raise ValueError(f"l2_penalty: coefficient must be nonnegative, got {lam}")
    ts = list(tensors)
    if not ts:
        return Tensor(np.zeros((), dtype=np.float32))
    return scale(add_n([sum_squares(t) for t in ts]), lam)
