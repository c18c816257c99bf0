"""Dense numeric kernels over C x H x W float64 arrays.

Tensors are plain ``numpy.ndarray`` objects of dtype float64 in channels x
height x width layout (batch size is always 1). Every kernel here is a pure
function: inputs are never modified and outputs are freshly allocated.

Spatial output extents follow the floor convention
``(in + 2 * pad - k) // stride + 1`` for convolution and both pooling kinds.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from .errors import ShapeMismatch

Pair = Tuple[int, int]


def _pair(v) -> Pair:
    if isinstance(v, (int, np.integer)):
        return int(v), int(v)
    a, b = v
    return int(a), int(b)


def as_tensor(x, ndim: Optional[int] = None) -> np.ndarray:
    """Coerce ``x`` to a contiguous float64 array, checking its rank."""
    t = np.ascontiguousarray(x, dtype=np.float64)
    if t.ndim == 0 or any(s < 1 for s in t.shape):
        raise ShapeMismatch(f"tensor extents must all be >= 1, got {t.shape}")
    if ndim is not None and t.ndim != ndim:
        raise ShapeMismatch(f"expected a {ndim}-d tensor, got shape {t.shape}")
    return t


def output_extent(size: int, k: int, stride: int, pad: int) -> int:
    span = size + 2 * pad - k
    if span < 0 or stride < 1:
        raise ShapeMismatch(
            f"window {k} (stride {stride}, pad {pad}) does not fit extent {size}")
    return span // stride + 1


@dataclass(frozen=True)
class ConvParams:
    """Convolution weights: kernel is out x in x kH x kW."""

    kernel: np.ndarray
    stride: Pair = (1, 1)
    padding: Pair = (0, 0)
    bias: Optional[np.ndarray] = None

    def __post_init__(self):
        kernel = as_tensor(self.kernel, ndim=4)
        object.__setattr__(self, "kernel", kernel)
        object.__setattr__(self, "stride", _pair(self.stride))
        object.__setattr__(self, "padding", _pair(self.padding))
        if min(self.stride) < 1 or min(self.padding) < 0:
            raise ShapeMismatch(f"bad stride {self.stride} / padding {self.padding}")
        if self.bias is not None:
            bias = np.ascontiguousarray(self.bias, dtype=np.float64).reshape(-1)
            if bias.shape[0] != kernel.shape[0]:
                raise ShapeMismatch(
                    f"bias has {bias.shape[0]} entries for {kernel.shape[0]} filters")
            object.__setattr__(self, "bias", bias)

    @property
    def out_channels(self) -> int:
        return self.kernel.shape[0]

    @property
    def in_channels(self) -> int:
        return self.kernel.shape[1]

    def output_shape(self, input_shape) -> Tuple[int, int, int]:
        _, h, w = input_shape
        kh, kw = self.kernel.shape[2:]
        return (self.out_channels,
                output_extent(h, kh, self.stride[0], self.padding[0]),
                output_extent(w, kw, self.stride[1], self.padding[1]))

    def positive(self) -> "ConvParams":
        """Excitatory part of the kernel, bias dropped."""
        return ConvParams(np.maximum(self.kernel, 0.0), self.stride, self.padding)

    def negated(self) -> "ConvParams":
        return ConvParams(-self.kernel, self.stride, self.padding,
                          None if self.bias is None else -self.bias)


@dataclass(frozen=True)
class PoolParams:
    window: Pair
    stride: Pair
    padding: Pair = (0, 0)

    def __post_init__(self):
        object.__setattr__(self, "window", _pair(self.window))
        object.__setattr__(self, "stride", _pair(self.stride))
        object.__setattr__(self, "padding", _pair(self.padding))

    def output_shape(self, input_shape) -> Tuple[int, int, int]:
        c, h, w = input_shape
        return (c,
                output_extent(h, self.window[0], self.stride[0], self.padding[0]),
                output_extent(w, self.window[1], self.stride[1], self.padding[1]))


def _window_views(xp, kh, kw, sh, sw, oh, ow):
    """Yield (i, j, view) for every kernel offset, row-major."""
    for i in range(kh):
        for j in range(kw):
            yield i, j, xp[:, i:i + sh * (oh - 1) + 1:sh, j:j + sw * (ow - 1) + 1:sw]


def _im2col(x, kh, kw, stride, padding, oh, ow):
    (sh, sw), (ph, pw) = stride, padding
    c = x.shape[0]
    xp = np.pad(x, ((0, 0), (ph, ph), (pw, pw))) if ph or pw else x
    cols = np.empty((c, kh, kw, oh, ow))
    for i, j, view in _window_views(xp, kh, kw, sh, sw, oh, ow):
        cols[:, i, j] = view
    return cols.reshape(c * kh * kw, oh * ow)


def _col2im(cols, shape, kh, kw, stride, padding, oh, ow):
    (sh, sw), (ph, pw) = stride, padding
    c, h, w = shape
    xp = np.zeros((c, h + 2 * ph, w + 2 * pw))
    cols = cols.reshape(c, kh, kw, oh, ow)
    for i, j, view in _window_views(xp, kh, kw, sh, sw, oh, ow):
        view += cols[:, i, j]
    return np.ascontiguousarray(xp[:, ph:ph + h, pw:pw + w])


def conv2d_forward(input, params: ConvParams) -> np.ndarray:
    x = as_tensor(input, ndim=3)
    if x.shape[0] != params.in_channels:
        raise ShapeMismatch(
            f"input has {x.shape[0]} channels, kernel expects {params.in_channels}")
    o, oh, ow = params.output_shape(x.shape)
    kh, kw = params.kernel.shape[2:]
    cols = _im2col(x, kh, kw, params.stride, params.padding, oh, ow)
    out = params.kernel.reshape(o, -1) @ cols
    if params.bias is not None:
        out += params.bias[:, None]
    return out.reshape(o, oh, ow)


def conv2d_backward_data(grad_like, params: ConvParams,
                         input_hw: Optional[Pair] = None) -> np.ndarray:
    """Adjoint of the bias-free convolution (a transposed convolution).

    ``input_hw`` resolves the input extents when the stride leaves them
    ambiguous; by default the smallest extents producing ``grad_like`` are used.
    """
    g = as_tensor(grad_like, ndim=3)
    o, kh, kw = params.out_channels, *params.kernel.shape[2:]
    (sh, sw), (ph, pw) = params.stride, params.padding
    if g.shape[0] != o:
        raise ShapeMismatch(f"gradient has {g.shape[0]} channels, kernel has {o} filters")
    _, oh, ow = g.shape
    if input_hw is None:
        input_hw = ((oh - 1) * sh + kh - 2 * ph, (ow - 1) * sw + kw - 2 * pw)
    in_shape = (params.in_channels, *_pair(input_hw))
    if params.output_shape(in_shape) != g.shape:
        raise ShapeMismatch(
            f"gradient shape {g.shape} is not the conv output of input {in_shape}")
    cols = params.kernel.reshape(o, -1).T @ g.reshape(o, -1)
    return _col2im(cols, in_shape, kh, kw, params.stride, params.padding, oh, ow)


def fc_forward(input, weight, bias=None) -> np.ndarray:
    """Affine map over the flattened input; output is out x 1 x 1."""
    x = np.asarray(input, dtype=np.float64).reshape(-1)
    w = np.asarray(weight, dtype=np.float64)
    if w.ndim != 2 or w.shape[1] != x.shape[0]:
        raise ShapeMismatch(f"fc weight {w.shape} cannot consume {x.shape[0]} inputs")
    out = w @ x
    if bias is not None:
        out = out + np.asarray(bias, dtype=np.float64).reshape(-1)
    return out.reshape(-1, 1, 1)


def fc_backward_data(grad_like, weight, input_shape) -> np.ndarray:
    w = np.asarray(weight, dtype=np.float64)
    g = np.asarray(grad_like, dtype=np.float64).reshape(-1)
    if g.shape[0] != w.shape[0] or int(np.prod(input_shape)) != w.shape[1]:
        raise ShapeMismatch(
            f"fc weight {w.shape} inconsistent with grad {g.shape} / input {tuple(input_shape)}")
    return (w.T @ g).reshape(input_shape)


def maxpool_forward(input, window, stride, padding=(0, 0)):
    """Max pooling with an argmax mask of flat input indices.

    Padding is -inf and never selected; ties go to the lowest flat index.
    """
    x = as_tensor(input, ndim=3)
    p = PoolParams(window, stride, padding)
    (kh, kw), (sh, sw), (ph, pw) = p.window, p.stride, p.padding
    if ph >= kh or pw >= kw:
        raise ShapeMismatch(f"padding {p.padding} must be smaller than window {p.window}")
    c, h, w = x.shape
    _, oh, ow = p.output_shape(x.shape)
    xp = np.pad(x, ((0, 0), (ph, ph), (pw, pw)), constant_values=-np.inf) if ph or pw else x
    stack = np.stack([v for _, _, v in _window_views(xp, kh, kw, sh, sw, oh, ow)])
    k = np.argmax(stack, axis=0)
    out = np.take_along_axis(stack, k[None], axis=0)[0]
    di, dj = np.divmod(k, kw)
    ys = np.arange(oh)[None, :, None] * sh - ph + di
    xs = np.arange(ow)[None, None, :] * sw - pw + dj
    mask = np.arange(c)[:, None, None] * (h * w) + ys * w + xs
    return np.ascontiguousarray(out), mask.astype(np.int64)


def avgpool_forward(input, window, stride, padding=(0, 0)) -> np.ndarray:
    """Mean pooling; padded zeros count toward the fixed kH * kW divisor."""
    x = as_tensor(input, ndim=3)
    p = PoolParams(window, stride, padding)
    (kh, kw), (sh, sw), (ph, pw) = p.window, p.stride, p.padding
    _, oh, ow = p.output_shape(x.shape)
    xp = np.pad(x, ((0, 0), (ph, ph), (pw, pw))) if ph or pw else x
    out = np.zeros((x.shape[0], oh, ow))
    for _, _, v in _window_views(xp, kh, kw, sh, sw, oh, ow):
        out += v
    return out / (kh * kw)


def avgpool_backward_data(grad_like, window, stride, padding, input_shape) -> np.ndarray:
    g = as_tensor(grad_like, ndim=3)
    p = PoolParams(window, stride, padding)
    (kh, kw), (sh, sw), (ph, pw) = p.window, p.stride, p.padding
    c, h, w = input_shape
    if p.output_shape(input_shape) != g.shape:
        raise ShapeMismatch(f"gradient {g.shape} is not the pool output of {tuple(input_shape)}")
    _, oh, ow = g.shape
    xp = np.zeros((c, h + 2 * ph, w + 2 * pw))
    g = g / (kh * kw)
    for _, _, v in _window_views(xp, kh, kw, sh, sw, oh, ow):
        v += g
    return np.ascontiguousarray(xp[:, ph:ph + h, pw:pw + w])


def lrn_forward(input, local_size: int, alpha: float, beta: float, k: float) -> np.ndarray:
    """Across-channel local response normalization (window clipped at edges)."""
    x = as_tensor(input, ndim=3)
    if local_size < 1 or local_size % 2 == 0:
        raise ShapeMismatch(f"local_size must be odd and >= 1, got {local_size}")
    if k <= 0:
        raise ValueError(f"k must be positive, got {k}")
    half = local_size // 2
    sq = np.pad(x * x, ((half, half), (0, 0), (0, 0)))
    acc = np.zeros_like(x)
    c = x.shape[0]
    for d in range(local_size):
        acc += sq[d:d + c]
    return x * (k + (alpha / local_size) * acc) ** (-beta)


def safe_div(num, den) -> np.ndarray:
    """Elementwise ``num / den`` with 0 wherever ``den == 0``."""
    n = np.asarray(num, dtype=np.float64)
    d = np.asarray(den, dtype=np.float64)
    if n.shape != d.shape:
        raise ShapeMismatch(f"safe_div operands differ: {n.shape} vs {d.shape}")
    out = np.zeros(np.broadcast_shapes(n.shape, d.shape))
    np.divide(n, d, out=out, where=d != 0)
    return out


def channel_sum(input) -> np.ndarray:
    x = as_tensor(input, ndim=3)
    return x.sum(axis=0, keepdims=True)


def catmull_rom(t) -> np.ndarray:
    """Cubic convolution kernel with a = -0.5."""
    t = np.abs(np.asarray(t, dtype=np.float64))
    near = (1.5 * t - 2.5) * t * t + 1.0
    far = ((-0.5 * t + 2.5) * t - 4.0) * t + 2.0
    return np.where(t <= 1.0, near, np.where(t < 2.0, far, 0.0))


def _resize_matrix(n_in: int, n_out: int) -> np.ndarray:
    # pixel-center alignment; out-of-range taps clamp to the border sample
    src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    base = np.floor(src).astype(np.int64)
    m = np.zeros((n_out, n_in))
    rows = np.arange(n_out)
    for off in range(-1, 3):
        idx = base + off
        wts = catmull_rom(src - idx)
        np.add.at(m, (rows, np.clip(idx, 0, n_in - 1)), wts)
    return m


def bicubic_resize(input, out_h: int, out_w: int, clamp: bool = False) -> np.ndarray:
    """Catmull-Rom resize of every channel to ``out_h`` x ``out_w``.

    With ``clamp=True`` negative ringing is cut to zero, which keeps
    probability maps non-negative.
    """
    x = as_tensor(input, ndim=3)
    if out_h < 1 or out_w < 1:
        raise ShapeMismatch(f"output extents must be >= 1, got {(out_h, out_w)}")
    _, h, w = x.shape
    ry = _resize_matrix(h, out_h)
    rx = _resize_matrix(w, out_w)
    out = np.einsum("yi,cij,xj->cyx", ry, x, rx, optimize=True)
    if clamp:
        np.maximum(out, 0.0, out=out)
    return out
