"""Dense float64 tensors and the small op set everything else is built from.

A Tensor is an immutable value: shape plus row-major float64 storage. Every
public operation validates its operands, returns a fresh Tensor, and guarantees
finite entries. The op set is deliberately tiny: 2-D cross-correlation,
bilinear resize, a numerically safe softmax and sigmoid, and the map/vector
outer product used to assemble attention gates.

The module also fixes the on-disk format for single tensors: one ASCII header
line ``shape: d0 d1 ... dn`` followed by the payload as little-endian 64-bit
floats in row-major order. Checkpoint files reuse this format per tensor.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import NonFiniteError, SerializationError, ShapeError

# Element-count guard: shapes are tiny in practice, this only rules out
# nonsense like negative or astronomically large extents.
_MAX_ELEMENTS = 1 << 62


@dataclass(frozen=True)
class Shape:
    """An ordered list of positive extents."""

    dims: tuple[int, ...]

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        object.__setattr__(self, "dims", dims)
        if len(dims) == 0:
            raise ShapeError("shape must have at least one axis")
        count = 1
        for d in dims:
            if d < 1:
                raise ShapeError(f"every extent must be >= 1, got {dims}")
            count *= d
            if count > _MAX_ELEMENTS:
                raise ShapeError(f"element count overflows: {dims}")

    @property
    def count(self) -> int:
        n = 1
        for d in self.dims:
            n *= d
        return n

    def __iter__(self):
        return iter(self.dims)

    def __len__(self):
        return len(self.dims)

    def __getitem__(self, i):
        return self.dims[i]

    def __repr__(self):
        return f"Shape({'x'.join(str(d) for d in self.dims)})"


class Tensor:
    """Immutable dense array: a Shape plus read-only float64 storage."""

    __slots__ = ("_data", "_shape")

    def __init__(self, values):
        arr = np.array(values, dtype=np.float64, order="C")
        if arr.ndim == 0:
            arr = arr.reshape(1)
        shape = Shape(arr.shape)
        if not np.all(np.isfinite(arr)):
            raise NonFiniteError(f"tensor of shape {shape!r} holds non-finite entries")
        arr.flags.writeable = False
        self._data = arr
        self._shape = shape

    @property
    def shape(self) -> Shape:
        return self._shape

    @property
    def dims(self) -> tuple[int, ...]:
        return self._shape.dims

    @property
    def data(self) -> np.ndarray:
        """Read-only ndarray view of the storage."""
        return self._data

    def item(self) -> float:
        if self._shape.count != 1:
            raise ShapeError("item() requires a single-element tensor", self.dims)
        return float(self._data.reshape(-1)[0])

    def __repr__(self):
        return f"Tensor({self._shape!r})"

    @staticmethod
    def zeros(*dims) -> "Tensor":
        return Tensor(np.zeros(tuple(int(d) for d in dims)))

    @staticmethod
    def ones(*dims) -> "Tensor":
        return Tensor(np.ones(tuple(int(d) for d in dims)))

    @staticmethod
    def full(dims, value) -> "Tensor":
        return Tensor(np.full(tuple(int(d) for d in dims), float(value)))


def _wrap(arr: np.ndarray) -> Tensor:
    return Tensor(arr)


# ---------------------------------------------------------------------------
# raw ndarray kernels
#
# The public ops below and the differentiation tape both run on these. They
# assume already-validated inputs.
# ---------------------------------------------------------------------------


def _conv2d_raw(x, k, stride, pad):
    # x: [Cin, H, W], k: [Cout, Cin, kh, kw] -> [Cout, H', W']
    if pad:
        x = np.pad(x, ((0, 0), (pad, pad), (pad, pad)))
    win = sliding_window_view(x, (k.shape[2], k.shape[3]), axis=(1, 2))
    win = win[:, ::stride, ::stride]
    return np.einsum("oiyx,ihwyx->ohw", k, win, optimize=True)


def _conv2d_vjp_kernel(x, kh, kw, stride, pad, upstream):
    if pad:
        x = np.pad(x, ((0, 0), (pad, pad), (pad, pad)))
    win = sliding_window_view(x, (kh, kw), axis=(1, 2))
    win = win[:, ::stride, ::stride]
    return np.einsum("ohw,ihwyx->oiyx", upstream, win, optimize=True)


def _conv2d_vjp_input(x_shape, k, stride, pad, upstream):
    # Adjoint of _conv2d_raw with respect to its input: dilate the upstream by
    # the stride, pad so a plain stride-1 correlation with the spatially
    # flipped, channel-transposed kernel reproduces every contribution, then
    # drop the padding ring.
    _, h, w = x_shape
    cout, _, kh, kw = k.shape
    h2, w2 = h + 2 * pad, w + 2 * pad
    ho = (h2 - kh) // stride + 1
    wo = (w2 - kw) // stride + 1
    hd = (ho - 1) * stride + 1
    wd = (wo - 1) * stride + 1
    dil = np.zeros((cout, hd, wd))
    dil[:, ::stride, ::stride] = upstream
    rh = h2 - kh - (ho - 1) * stride
    rw = w2 - kw - (wo - 1) * stride
    dil = np.pad(dil, ((0, 0), (kh - 1, kh - 1 + rh), (kw - 1, kw - 1 + rw)))
    k_flip = k[:, :, ::-1, ::-1].transpose(1, 0, 2, 3)
    g = _conv2d_raw(dil, np.ascontiguousarray(k_flip), 1, 0)
    return g[:, pad : pad + h, pad : pad + w]


def _resize_axis(n_in, n_out):
    # Half-pixel-center sampling; endpoints clamp.
    src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    lo = np.floor(src).astype(np.int64)
    frac = src - lo
    lo_c = np.clip(lo, 0, n_in - 1)
    hi_c = np.clip(lo + 1, 0, n_in - 1)
    return lo_c, hi_c, frac


def _resize_raw(x, out_h, out_w):
    _, h, w = x.shape
    if (h, w) == (out_h, out_w):
        return x.copy()
    y0, y1, fy = _resize_axis(h, out_h)
    x0, x1, fx = _resize_axis(w, out_w)
    fy = fy[None, :, None]
    fx = fx[None, None, :]
    top = (1.0 - fx) * x[:, y0][:, :, x0] + fx * x[:, y0][:, :, x1]
    bot = (1.0 - fx) * x[:, y1][:, :, x0] + fx * x[:, y1][:, :, x1]
    return (1.0 - fy) * top + fy * bot


def _resize_vjp(x_shape, out_h, out_w, upstream):
    c, h, w = x_shape
    if (h, w) == (out_h, out_w):
        return upstream.copy()
    y0, y1, fy = _resize_axis(h, out_h)
    x0, x1, fx = _resize_axis(w, out_w)
    fy = fy[None, :, None]
    fx = fx[None, None, :]
    g = np.zeros((c, h, w))
    ci = np.arange(c)[:, None, None]
    for yi, wy in ((y0, 1.0 - fy), (y1, fy)):
        for xi, wx in ((x0, 1.0 - fx), (x1, fx)):
            np.add.at(g, (ci, yi[None, :, None], xi[None, None, :]), upstream * wy * wx)
    return g


def _sigmoid_raw(x):
    # Two-branch form: neither exp ever sees a large positive argument.
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _softmax_raw(x):
    shifted = x - np.max(x)
    e = np.exp(shifted)
    return e / np.sum(e)


# ---------------------------------------------------------------------------
# public ops
# ---------------------------------------------------------------------------


def conv2d(x: Tensor, kernels: Tensor, stride: int = 1, zero_pad: int | None = None) -> Tensor:
    """2-D cross-correlation over a [C_in, H, W] input.

    kernels is [C_out, C_in, kh, kw] with odd kh, kw. zero_pad defaults to
    kh//2 ("same" padding for stride 1); stride subsamples output positions.
    No kernel flipping and no bias.
    """
    if len(x.dims) != 3:
        raise ShapeError("conv2d input must be [C, H, W]", x.dims)
    if len(kernels.dims) != 4:
        raise ShapeError("conv2d kernels must be [C_out, C_in, kh, kw]", kernels.dims)
    cin, h, w = x.dims
    cout, kcin, kh, kw = kernels.dims
    if kcin != cin:
        raise ShapeError(
            f"kernel expects {kcin} input channels, input has {cin}", x.dims, kernels.dims
        )
    if kh % 2 == 0 or kw % 2 == 0:
        raise ShapeError("kernel extents must be odd", kernels.dims)
    stride = int(stride)
    if stride < 1:
        raise ShapeError(f"stride must be >= 1, got {stride}")
    pad = kh // 2 if zero_pad is None else int(zero_pad)
    if pad < 0:
        raise ShapeError(f"zero_pad must be >= 0, got {pad}")
    if h + 2 * pad < kh or w + 2 * pad < kw:
        raise ShapeError("kernel larger than padded input", x.dims, kernels.dims)
    return _wrap(_conv2d_raw(x.data, kernels.data, stride, pad))


def resize_bilinear(x: Tensor, out_h: int, out_w: int) -> Tensor:
    """Bilinear resample of a [C, H, W] tensor to [C, out_h, out_w].

    Sample positions use half-pixel centers (an output pixel center maps to
    input coordinate (i + 0.5) * H/out_h - 0.5), with edge clamping. Resizing
    to the same extents is the identity; constant inputs stay constant.
    """
    if len(x.dims) != 3:
        raise ShapeError("resize_bilinear input must be [C, H, W]", x.dims)
    out_h, out_w = int(out_h), int(out_w)
    if out_h < 1 or out_w < 1:
        raise ShapeError(f"output extents must be >= 1, got {(out_h, out_w)}")
    return _wrap(_resize_raw(x.data, out_h, out_w))


def softmax(x: Tensor) -> Tensor:
    """Softmax of a rank-1 tensor; subtracts the max before exponentiating."""
    if len(x.dims) != 1:
        raise ShapeError("softmax expects a rank-1 tensor", x.dims)
    return _wrap(_softmax_raw(x.data))


def sigmoid_map(x: Tensor) -> Tensor:
    """Elementwise logistic function, safe for arguments of any magnitude."""
    return _wrap(_sigmoid_raw(x.data))


def outer_map_vec(spatial: Tensor, channel: Tensor) -> Tensor:
    """Outer product of a [H, W] map and a [C] vector, laid out as [C, H, W]."""
    if len(spatial.dims) != 2:
        raise ShapeError("spatial factor must be [H, W]", spatial.dims)
    if len(channel.dims) != 1:
        raise ShapeError("channel factor must be [C]", channel.dims)
    return _wrap(np.einsum("hw,c->chw", spatial.data, channel.data))


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------


def write_tensor(f, t: Tensor) -> None:
    """Append one tensor to a binary stream: header line, then payload."""
    header = "shape: " + " ".join(str(d) for d in t.dims) + "\n"
    f.write(header.encode("ascii"))
    f.write(np.ascontiguousarray(t.data, dtype="<f8").tobytes())


def _read_header_line(f):
    buf = bytearray()
    while True:
        b = f.read(1)
        if not b:
            if buf:
                raise SerializationError("stream ended inside a tensor header")
            raise SerializationError("expected a tensor header, found end of stream")
        if b == b"\n":
            return bytes(buf)
        buf.extend(b)
        if len(buf) > 4096:
            raise SerializationError("tensor header line too long")


def read_tensor(f) -> Tensor:
    """Read one tensor written by write_tensor; raises on malformed streams."""
    line = _read_header_line(f)
    try:
        text = line.decode("ascii")
    except UnicodeDecodeError as exc:
        raise SerializationError("tensor header is not ASCII") from exc
    if not text.startswith("shape:"):
        raise SerializationError(f"expected 'shape:' header, got {text[:32]!r}")
    fields = text[len("shape:") :].split()
    if not fields:
        raise SerializationError("tensor header lists no extents")
    try:
        dims = tuple(int(s) for s in fields)
    except ValueError as exc:
        raise SerializationError(f"non-integer extent in header {text!r}") from exc
    shape = Shape(dims)
    n_bytes = shape.count * 8
    payload = f.read(n_bytes)
    if len(payload) != n_bytes:
        raise SerializationError(
            f"payload truncated: wanted {n_bytes} bytes for shape {dims}, got {len(payload)}"
        )
    arr = np.frombuffer(payload, dtype="<f8").astype(np.float64).reshape(dims)
    return Tensor(arr)


def save_tensor(path, t: Tensor) -> None:
    with open(path, "wb") as f:
        write_tensor(f, t)


def load_tensor(path) -> Tensor:
    with open(path, "rb") as f:
        return read_tensor(f)
