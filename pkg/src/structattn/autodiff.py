"""Reverse-mode differentiation over the tensor op set.

A Tape records operations as they execute; backward() replays them once in
reverse topological order, accumulating vector-Jacobian products into each
Variable's grad buffer. Op kinds live in a registry keyed by name: record()
rejects names it does not know, so the differentiable surface is exactly the
registry. Gradients accumulate across backward calls until zero_grads().

The module-level functions (add, mul, conv2d, ...) are the intended way to
build graphs; they compute the forward value through the tensor module's
validated ops and then record the node.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from . import tensor as tc
from .errors import GraphError, NonFiniteError, ShapeError
from .tensor import Tensor


class Variable:
    """One tape node: a Tensor value plus a lazily allocated gradient buffer."""

    __slots__ = ("value", "tape", "node_id", "requires_grad", "kind", "inputs", "attrs", "_grad")

    def __init__(self, value, tape, node_id, requires_grad, kind=None, inputs=(), attrs=None):
        self.value: Tensor = value
        self.tape = tape
        self.node_id = node_id
        self.requires_grad = requires_grad
        self.kind = kind          # None for leaves
        self.inputs = tuple(inputs)
        self.attrs = attrs or {}
        self._grad = None

    @property
    def grad(self) -> np.ndarray:
        """Accumulated gradient; zeros if nothing has flowed here."""
        if self._grad is None:
            self._grad = np.zeros(self.value.dims)
        return self._grad

    def _accumulate(self, g: np.ndarray):
        if self._grad is None:
            self._grad = np.zeros(self.value.dims)
        self._grad += g

    def __repr__(self):
        role = self.kind if self.kind else "leaf"
        return f"Variable(#{self.node_id} {role} {self.value.shape!r})"


# registry: kind -> vjp(node, upstream ndarray) -> tuple of per-input grads
# (None for an input that receives nothing from this op)
_VJPS: dict[str, Callable] = {}


def _register(kind):
    def deco(fn):
        _VJPS[kind] = fn
        return fn

    return deco


class Tape:
    """Ordered operation record; insertion order is a topological order."""

    def __init__(self):
        self._nodes: list[Variable] = []

    def leaf(self, value, requires_grad: bool = True) -> Variable:
        if not isinstance(value, Tensor):
            value = Tensor(value)
        v = Variable(value, self, len(self._nodes), requires_grad)
        self._nodes.append(v)
        return v

    def constant(self, value) -> Variable:
        return self.leaf(value, requires_grad=False)

    def record(self, kind: str, inputs: Sequence[Variable], result: Tensor, **attrs) -> Variable:
        if kind not in _VJPS:
            raise GraphError(f"unknown op kind {kind!r}")
        for inp in inputs:
            if not isinstance(inp, Variable):
                raise GraphError(f"{kind}: inputs must be Variables, got {type(inp).__name__}")
            if inp.tape is not self:
                raise GraphError(f"{kind}: input #{inp.node_id} belongs to a different tape")
        if not isinstance(result, Tensor):
            result = Tensor(result)
        needs = any(i.requires_grad for i in inputs)
        v = Variable(result, self, len(self._nodes), needs, kind, tuple(inputs), attrs)
        self._nodes.append(v)
        return v

    def backward(self, loss: Variable) -> None:
        """Accumulate d loss / d node into every reachable node's grad."""
        if loss.tape is not self:
            raise GraphError("loss belongs to a different tape")
        if loss.value.shape.count != 1:
            raise GraphError(f"loss must be scalar shape [1], got {loss.value.dims}")
        # reachable subgraph under the loss
        reachable = set()
        stack = [loss]
        while stack:
            node = stack.pop()
            if node.node_id in reachable:
                continue
            reachable.add(node.node_id)
            stack.extend(node.inputs)
        # a node participates if some leaf below it wants gradients
        live = {}
        for node in self._nodes:
            if node.node_id not in reachable:
                continue
            if node.kind is None:
                live[node.node_id] = node.requires_grad
            else:
                live[node.node_id] = any(live[i.node_id] for i in node.inputs)
        if not live.get(loss.node_id, False):
            return
        upstream = {loss.node_id: np.ones(loss.value.dims)}
        for node in reversed(self._nodes):
            nid = node.node_id
            if nid not in reachable or not live[nid]:
                continue
            up = upstream.pop(nid, None)
            if up is None:
                continue
            node._accumulate(up)
            if node.kind is None:
                continue
            grads = _VJPS[node.kind](node, up)
            for inp, g in zip(node.inputs, grads):
                if g is None or not live[inp.node_id]:
                    continue
                if inp.node_id in upstream:
                    upstream[inp.node_id] += g
                else:
                    upstream[inp.node_id] = g

    def zero_grads(self) -> None:
        for node in self._nodes:
            node._grad = None

    def __len__(self):
        return len(self._nodes)


def _same_shape(a: Variable, b: Variable, op: str):
    if a.value.dims != b.value.dims:
        raise ShapeError(f"{op} operands differ in shape", a.value.dims, b.value.dims)


# ---------------------------------------------------------------------------
# elementwise
# ---------------------------------------------------------------------------


def add(a: Variable, b: Variable) -> Variable:
    _same_shape(a, b, "add")
    return a.tape.record("add", (a, b), Tensor(a.value.data + b.value.data))


@_register("add")
def _vjp_add(node, up):
    return up, up


def sub(a: Variable, b: Variable) -> Variable:
    _same_shape(a, b, "sub")
    return a.tape.record("sub", (a, b), Tensor(a.value.data - b.value.data))


@_register("sub")
def _vjp_sub(node, up):
    return up, -up


def mul(a: Variable, b: Variable) -> Variable:
    _same_shape(a, b, "mul")
    return a.tape.record("mul", (a, b), Tensor(a.value.data * b.value.data))


@_register("mul")
def _vjp_mul(node, up):
    a, b = node.inputs
    return up * b.value.data, up * a.value.data


def div(a: Variable, b: Variable) -> Variable:
    _same_shape(a, b, "div")
    return a.tape.record("div", (a, b), Tensor(a.value.data / b.value.data))


@_register("div")
def _vjp_div(node, up):
    a, b = node.inputs
    bb = b.value.data
    return up / bb, -up * a.value.data / (bb * bb)


def scale(a: Variable, factor: float) -> Variable:
    f = float(factor)
    return a.tape.record("scale", (a,), Tensor(a.value.data * f), factor=f)


@_register("scale")
def _vjp_scale(node, up):
    return (up * node.attrs["factor"],)


def relu(a: Variable) -> Variable:
    return a.tape.record("relu", (a,), Tensor(np.maximum(a.value.data, 0.0)))


@_register("relu")
def _vjp_relu(node, up):
    return (up * (node.inputs[0].value.data > 0.0),)


def sigmoid(a: Variable) -> Variable:
    return a.tape.record("sigmoid", (a,), tc.sigmoid_map(a.value))


@_register("sigmoid")
def _vjp_sigmoid(node, up):
    s = node.value.data
    return (up * s * (1.0 - s),)


def sqrt_clamped(a: Variable, floor: float) -> Variable:
    """max(sqrt(x), floor) for x >= 0; gradient is zero on the clamped region."""
    floor = float(floor)
    if floor <= 0.0:
        raise GraphError("sqrt_clamped floor must be positive")
    root = np.sqrt(np.maximum(a.value.data, 0.0))
    return a.tape.record("sqrt_clamped", (a,), Tensor(np.maximum(root, floor)), floor=floor)


@_register("sqrt_clamped")
def _vjp_sqrt_clamped(node, up):
    out = node.value.data
    open_region = out > node.attrs["floor"]
    g = np.where(open_region, 0.5 / out, 0.0)
    return (up * g,)


# ---------------------------------------------------------------------------
# structure ops
# ---------------------------------------------------------------------------


def conv2d(x: Variable, k: Variable, stride: int = 1, zero_pad: int | None = None) -> Variable:
    pad = k.value.dims[2] // 2 if zero_pad is None else int(zero_pad)
    out = tc.conv2d(x.value, k.value, stride=stride, zero_pad=pad)
    return x.tape.record("conv2d", (x, k), out, stride=int(stride), pad=pad)


@_register("conv2d")
def _vjp_conv2d(node, up):
    x, k = node.inputs
    stride = node.attrs["stride"]
    pad = node.attrs["pad"]
    dx = tc._conv2d_vjp_input(x.value.dims, k.value.data, stride, pad, up)
    kh, kw = k.value.dims[2], k.value.dims[3]
    dk = tc._conv2d_vjp_kernel(x.value.data, kh, kw, stride, pad, up)
    return dx, dk


def resize_bilinear(x: Variable, out_h: int, out_w: int) -> Variable:
    out = tc.resize_bilinear(x.value, out_h, out_w)
    return x.tape.record("resize", (x,), out, out_h=int(out_h), out_w=int(out_w))


@_register("resize")
def _vjp_resize(node, up):
    x = node.inputs[0]
    return (tc._resize_vjp(x.value.dims, node.attrs["out_h"], node.attrs["out_w"], up),)


def softmax1d(a: Variable) -> Variable:
    return a.tape.record("softmax1d", (a,), tc.softmax(a.value))


@_register("softmax1d")
def _vjp_softmax1d(node, up):
    s = node.value.data
    return (s * (up - float(up @ s)),)


def outer_map_vec(spatial: Variable, channel: Variable) -> Variable:
    out = tc.outer_map_vec(spatial.value, channel.value)
    return spatial.tape.record("outer", (spatial, channel), out)


@_register("outer")
def _vjp_outer(node, up):
    spatial, channel = node.inputs
    dm = np.einsum("chw,c->hw", up, channel.value.data)
    dv = np.einsum("chw,hw->c", up, spatial.value.data)
    return dm, dv


def channel_weighted_sum(x: Variable, weights: Variable) -> Variable:
    """sum_c weights[c] * x[c, :, :] -> [H, W]."""
    if len(x.value.dims) != 3 or len(weights.value.dims) != 1:
        raise ShapeError("channel_weighted_sum wants [C,H,W] and [C]", x.value.dims, weights.value.dims)
    if x.value.dims[0] != weights.value.dims[0]:
        raise ShapeError("channel count mismatch", x.value.dims, weights.value.dims)
    out = np.einsum("chw,c->hw", x.value.data, weights.value.data)
    return x.tape.record("chan_wsum", (x, weights), Tensor(out))


@_register("chan_wsum")
def _vjp_chan_wsum(node, up):
    x, weights = node.inputs
    dx = up[None, :, :] * weights.value.data[:, None, None]
    dw = np.einsum("hw,chw->c", up, x.value.data)
    return dx, dw


def spatial_weighted_sum(x: Variable, weights: Variable) -> Variable:
    """sum_hw weights[h, w] * x[:, h, w] -> [C]."""
    if len(x.value.dims) != 3 or len(weights.value.dims) != 2:
        raise ShapeError("spatial_weighted_sum wants [C,H,W] and [H,W]", x.value.dims, weights.value.dims)
    if x.value.dims[1:] != weights.value.dims:
        raise ShapeError("spatial extents mismatch", x.value.dims, weights.value.dims)
    out = np.einsum("chw,hw->c", x.value.data, weights.value.data)
    return x.tape.record("spat_wsum", (x, weights), Tensor(out))


@_register("spat_wsum")
def _vjp_spat_wsum(node, up):
    x, weights = node.inputs
    dx = up[:, None, None] * weights.value.data[None, :, :]
    dw = np.einsum("c,chw->hw", up, x.value.data)
    return dx, dw


def channel_sum(x: Variable) -> Variable:
    if len(x.value.dims) != 3:
        raise ShapeError("channel_sum wants [C,H,W]", x.value.dims)
    return x.tape.record("chan_sum", (x,), Tensor(np.sum(x.value.data, axis=0)))


@_register("chan_sum")
def _vjp_chan_sum(node, up):
    c = node.inputs[0].value.dims[0]
    return (np.broadcast_to(up[None, :, :], (c,) + up.shape).copy(),)


def channel_mean(x: Variable) -> Variable:
    """Mean over channels, kept as a single-channel map [1, H, W]."""
    if len(x.value.dims) != 3:
        raise ShapeError("channel_mean wants [C,H,W]", x.value.dims)
    out = np.mean(x.value.data, axis=0, keepdims=True)
    return x.tape.record("chan_mean", (x,), Tensor(out))


@_register("chan_mean")
def _vjp_chan_mean(node, up):
    c = node.inputs[0].value.dims[0]
    return (np.broadcast_to(up / c, node.inputs[0].value.dims).copy(),)


def channel_logsumexp(x: Variable) -> Variable:
    """log sum_c exp(x[c, :, :]) -> [H, W], max-shifted for stability."""
    if len(x.value.dims) != 3:
        raise ShapeError("channel_logsumexp wants [C,H,W]", x.value.dims)
    d = x.value.data
    m = np.max(d, axis=0)
    out = m + np.log(np.sum(np.exp(d - m[None]), axis=0))
    return x.tape.record("chan_lse", (x,), Tensor(out))


@_register("chan_lse")
def _vjp_chan_lse(node, up):
    d = node.inputs[0].value.data
    w = np.exp(d - node.value.data[None])
    return (up[None] * w,)


def concat_channels(parts: Sequence[Variable]) -> Variable:
    if not parts:
        raise ShapeError("concat_channels needs at least one part")
    hw = parts[0].value.dims[1:]
    for p in parts:
        if len(p.value.dims) != 3 or p.value.dims[1:] != hw:
            raise ShapeError("concat_channels parts must share H, W", *[p.value.dims for p in parts])
    out = np.concatenate([p.value.data for p in parts], axis=0)
    return parts[0].tape.record("concat_ch", tuple(parts), Tensor(out))


@_register("concat_ch")
def _vjp_concat_ch(node, up):
    grads = []
    offset = 0
    for inp in node.inputs:
        c = inp.value.dims[0]
        grads.append(up[offset : offset + c])
        offset += c
    return tuple(grads)


def reshape(x: Variable, dims) -> Variable:
    dims = tuple(int(d) for d in dims)
    out = x.value.data.reshape(dims)
    return x.tape.record("reshape", (x,), Tensor(out), dims=dims)


@_register("reshape")
def _vjp_reshape(node, up):
    return (up.reshape(node.inputs[0].value.dims),)


def sum_all(x: Variable) -> Variable:
    """Full reduction to a scalar of shape [1]."""
    return x.tape.record("sum_all", (x,), Tensor(np.array([np.sum(x.value.data)])))


@_register("sum_all")
def _vjp_sum_all(node, up):
    return (np.full(node.inputs[0].value.dims, float(up.reshape(-1)[0])),)


def channel_bias(x: Variable, bias: Variable) -> Variable:
    """Add a per-channel offset to a [C, H, W] tensor."""
    if len(x.value.dims) != 3 or len(bias.value.dims) != 1:
        raise ShapeError("channel_bias wants [C,H,W] and [C]", x.value.dims, bias.value.dims)
    if x.value.dims[0] != bias.value.dims[0]:
        raise ShapeError("channel count mismatch", x.value.dims, bias.value.dims)
    out = x.value.data + bias.value.data[:, None, None]
    return x.tape.record("bias_ch", (x, bias), Tensor(out))


@_register("bias_ch")
def _vjp_bias_ch(node, up):
    return up, np.einsum("chw->c", up)


def op_kinds() -> tuple[str, ...]:
    """Registered op kinds, for exhaustive per-op testing."""
    return tuple(sorted(_VJPS))


# ---------------------------------------------------------------------------
# numerical gradient verification
# ---------------------------------------------------------------------------


def grad_check(f, params, h: float = 1e-5) -> float:
    """Compare analytic gradients of f against central differences.

    f(tape, variables) must build a scalar Variable from the given leaves.
    params is a sequence of Tensors/arrays. Returns the worst relative error
    max |analytic - numeric| / max(1, |analytic|, |numeric|) over all entries.
    """
    h = float(h)
    if not (1e-7 <= h <= 1e-3):
        raise GraphError(f"step size h must lie in [1e-7, 1e-3], got {h}")
    base = [np.array(getattr(p, "data", p), dtype=np.float64) for p in params]

    def value_at(arrays) -> float:
        tape = Tape()
        leaves = [tape.leaf(Tensor(a)) for a in arrays]
        out = f(tape, leaves)
        if out.value.shape.count != 1:
            raise GraphError(f"grad_check target must be scalar, got {out.value.dims}")
        val = out.value.item()
        if not np.isfinite(val):
            raise NonFiniteError("grad_check target evaluated to a non-finite value")
        return val, tape, out, leaves

    _, tape, out, leaves = value_at(base)
    tape.backward(out)
    analytic = [leaf.grad.copy() for leaf in leaves]

    worst = 0.0
    for i, arr in enumerate(base):
        flat = arr.reshape(-1)
        for j in range(flat.size):
            bump = [a.copy() for a in base]
            bump[i].reshape(-1)[j] = flat[j] + h
            up_val, _, _, _ = value_at(bump)
            bump[i].reshape(-1)[j] = flat[j] - h
            dn_val, _, _, _ = value_at(bump)
            numeric = (up_val - dn_val) / (2.0 * h)
            a_val = analytic[i].reshape(-1)[j]
            err = abs(a_val - numeric) / max(1.0, abs(a_val), abs(numeric))
            worst = max(worst, err)
    return worst
