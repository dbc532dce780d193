"""Differentiable operation catalog.

Every op validates shapes, computes its forward value with numpy, and — when
a tape is active and an input participates — records a node whose VJP is
itself built from these ops.  That closure property is what makes
higher-order gradients (gradient penalties) work without special cases.

Convolution gradients are implemented as first-class ops
(:func:`conv2d_input_grad`, :func:`conv2d_weight_grad`) because the three
operations are each other's adjoints.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from ..errors import InvalidLabel, ShapeMismatch
from .tensor import Tensor, active_tape, constant


def _apply(op: str, out_data: np.ndarray, parents: Sequence[Tensor], vjp) -> Tensor:
    out = Tensor(out_data)
    tape = active_tape()
    if tape is None:
        return out
    nodes = [tape.node_for(t) for t in parents]
    if all(n is None for n in nodes):
        return out
    return tape.record(op, nodes, vjp, out)


def _shapes(*tensors: Tensor):
    return [t.shape for t in tensors]


# ---------------------------------------------------------------------------
# broadcasting helpers


def _unbroadcast(grad: Tensor, shape: tuple[int, ...]) -> Tensor:
    """Reduce `grad` back to `shape` after numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    axes = tuple(range(extra)) + tuple(
        extra + i for i, s in enumerate(shape) if s == 1 and grad.shape[extra + i] != 1
    )
    out = sum(grad, axis=axes, keepdims=False) if axes else grad
    if out.shape != shape:
        out = reshape(out, shape)
    return out


def _binary_shapes_ok(a: Tensor, b: Tensor) -> bool:
    try:
        np.broadcast_shapes(a.shape, b.shape)
        return True
    except ValueError:
        return False


# ---------------------------------------------------------------------------
# elementwise arithmetic


def add(a: Tensor, b: Tensor) -> Tensor:
    if not _binary_shapes_ok(a, b):
        raise ShapeMismatch("add", _shapes(a, b))

    def vjp(up):
        return _unbroadcast(up, a.shape), _unbroadcast(up, b.shape)

    return _apply("add", a.data + b.data, (a, b), vjp)


def subtract(a: Tensor, b: Tensor) -> Tensor:
    if not _binary_shapes_ok(a, b):
        raise ShapeMismatch("subtract", _shapes(a, b))

    def vjp(up):
        return _unbroadcast(up, a.shape), _unbroadcast(scale(up, -1.0), b.shape)

    return _apply("subtract", a.data - b.data, (a, b), vjp)


def multiply(a: Tensor, b: Tensor) -> Tensor:
    if not _binary_shapes_ok(a, b):
        raise ShapeMismatch("multiply", _shapes(a, b))

    def vjp(up):
        return (
            _unbroadcast(multiply(up, b), a.shape),
            _unbroadcast(multiply(up, a), b.shape),
        )

    return _apply("multiply", a.data * b.data, (a, b), vjp)


def scale(x: Tensor, factor: float) -> Tensor:
    factor = float(factor)

    def vjp(up):
        return (scale(up, factor),)

    return _apply("scale", x.data * x.data.dtype.type(factor), (x,), vjp)


def reciprocal(x: Tensor) -> Tensor:
    # vjps reference the output tensor itself (not a frozen copy) so the
    # second-order path through the op stays differentiable.
    cell: list[Tensor] = []

    def vjp(up):
        y = cell[0]
        return (scale(multiply(up, multiply(y, y)), -1.0),)

    out = _apply("reciprocal", 1.0 / x.data, (x,), vjp)
    cell.append(out)
    return out


def exp(x: Tensor) -> Tensor:
    cell: list[Tensor] = []

    def vjp(up):
        return (multiply(up, cell[0]),)

    out = _apply("exp", np.exp(x.data), (x,), vjp)
    cell.append(out)
    return out


def log(x: Tensor) -> Tensor:
    def vjp(up):
        return (multiply(up, reciprocal(x)),)

    return _apply("log", np.log(x.data), (x,), vjp)


def sqrt(x: Tensor) -> Tensor:
    cell: list[Tensor] = []

    def vjp(up):
        return (scale(multiply(up, reciprocal(cell[0])), 0.5),)

    out = _apply("sqrt", np.sqrt(x.data), (x,), vjp)
    cell.append(out)
    return out


def tanh(x: Tensor) -> Tensor:
    cell: list[Tensor] = []

    def vjp(up):
        y = cell[0]
        one = constant(np.ones((), dtype=x.dtype))
        return (multiply(up, subtract(one, multiply(y, y))),)

    out = _apply("tanh", np.tanh(x.data), (x,), vjp)
    cell.append(out)
    return out


def sigmoid(x: Tensor) -> Tensor:
    d = x.data
    e = np.exp(-np.abs(d))
    out_data = np.where(d >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(d.dtype)
    cell: list[Tensor] = []

    def vjp(up):
        y = cell[0]
        one = constant(np.ones((), dtype=x.dtype))
        return (multiply(up, multiply(y, subtract(one, y))),)

    out = _apply("sigmoid", out_data, (x,), vjp)
    cell.append(out)
    return out


def softplus(x: Tensor) -> Tensor:
    d = x.data
    out_data = np.maximum(d, 0) + np.log1p(np.exp(-np.abs(d)))

    def vjp(up):
        return (multiply(up, sigmoid(x)),)

    return _apply("softplus", out_data.astype(d.dtype), (x,), vjp)


def leaky_relu(x: Tensor, slope: float = 0.2) -> Tensor:
    d = x.data
    out_data = np.where(d >= 0, d, d * d.dtype.type(slope))
    mask = np.where(d >= 0, d.dtype.type(1.0), d.dtype.type(slope))

    def vjp(up):
        return (multiply(up, constant(mask)),)

    return _apply("leaky_relu", out_data, (x,), vjp)


def relu(x: Tensor) -> Tensor:
    return leaky_relu(x, 0.0)


# ---------------------------------------------------------------------------
# shape manipulation


def reshape(x: Tensor, shape) -> Tensor:
    shape = tuple(int(s) for s in shape)
    if int(np.prod(shape, dtype=np.int64)) != x.size and -1 not in shape:
        raise ShapeMismatch("reshape", [x.shape], detail=f"target {shape}")
    old_shape = x.shape

    def vjp(up):
        return (reshape(up, old_shape),)

    return _apply("reshape", np.ascontiguousarray(x.data).reshape(shape), (x,), vjp)


def transpose2d(x: Tensor) -> Tensor:
    if x.ndim != 2:
        raise ShapeMismatch("transpose2d", [x.shape])

    def vjp(up):
        return (transpose2d(up),)

    return _apply("transpose2d", np.ascontiguousarray(x.data.T), (x,), vjp)


def _normalize_key(key):
    if not isinstance(key, tuple):
        key = (key,)
    for k in key:
        if not isinstance(k, (int, np.integer, slice)) and k is not Ellipsis:
            raise ShapeMismatch("slice", [], detail=f"unsupported index {k!r}")
    return key


def tensor_slice(x: Tensor, key) -> Tensor:
    key = _normalize_key(key)
    out_data = np.ascontiguousarray(x.data[key])
    in_shape = x.shape

    def vjp(up):
        return (_slice_scatter(up, key, in_shape),)

    return _apply("slice", out_data, (x,), vjp)


def _slice_scatter(up: Tensor, key, shape) -> Tensor:
    buf = np.zeros(shape, dtype=up.dtype)
    buf[key] = up.data

    def vjp(up2):
        return (tensor_slice(up2, key),)

    return _apply("slice_scatter", buf, (up,), vjp)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = list(tensors)
    if not tensors:
        raise ShapeMismatch("concat", [], detail="empty input list")
    base = list(tensors[0].shape)
    for t in tensors[1:]:
        other = list(t.shape)
        if len(other) != len(base) or any(
            o != b for i, (o, b) in enumerate(zip(other, base)) if i != axis % len(base)
        ):
            raise ShapeMismatch("concat", _shapes(*tensors))
    ax = axis % len(base)
    sizes = [t.shape[ax] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def vjp(up):
        grads = []
        for i in range(len(tensors)):
            key = tuple(
                slice(offsets[i], offsets[i + 1]) if d == ax else slice(None)
                for d in range(len(base))
            )
            grads.append(tensor_slice(up, key))
        return tuple(grads)

    return _apply("concat", np.concatenate([t.data for t in tensors], axis=ax), tuple(tensors), vjp)


def broadcast_to(x: Tensor, shape) -> Tensor:
    shape = tuple(int(s) for s in shape)
    if not _binary_shapes_ok(x, Tensor(np.empty(shape, dtype=x.dtype))):
        raise ShapeMismatch("broadcast_to", [x.shape], detail=f"target {shape}")
    in_shape = x.shape

    def vjp(up):
        return (_unbroadcast(up, in_shape),)

    return _apply("broadcast_to", np.ascontiguousarray(np.broadcast_to(x.data, shape)), (x,), vjp)


# ---------------------------------------------------------------------------
# reductions


def sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001 - catalog name
    if axis is None:
        axes = tuple(range(x.ndim))
    elif isinstance(axis, int):
        axes = (axis % max(x.ndim, 1),)
    else:
        axes = tuple(a % x.ndim for a in axis)
    in_shape = x.shape
    kept = tuple(1 if i in axes else s for i, s in enumerate(in_shape))

    def vjp(up):
        g = up if keepdims or not in_shape else reshape(up, kept)
        return (broadcast_to(g, in_shape),)

    out_data = np.sum(x.data, axis=axes if in_shape else None, keepdims=keepdims)
    return _apply("sum", np.asarray(out_data, dtype=x.dtype.type), (x,), vjp)


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        count = x.size
    else:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        count = 1
        for a in axes:
            count *= x.shape[a % x.ndim]
    return scale(sum(x, axis=axis, keepdims=keepdims), 1.0 / count)


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeMismatch("matmul", _shapes(a, b))

    def vjp(up):
        return matmul(up, transpose2d(b)), matmul(transpose2d(a), up)

    return _apply("matmul", a.data @ b.data, (a, b), vjp)


def dense(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """x @ weight + bias with x (N, in), weight (in, out), bias (out,)."""
    if x.ndim != 2 or weight.ndim != 2 or bias.ndim != 1 or bias.shape[0] != weight.shape[1]:
        raise ShapeMismatch("dense", _shapes(x, weight, bias))
    return add(matmul(x, weight), bias)


# ---------------------------------------------------------------------------
# convolution family


def _im2col(xp: np.ndarray, kh: int, kw: int, stride: int):
    n, c, hp, wp = xp.shape
    oh = (hp - kh) // stride + 1
    ow = (wp - kw) // stride + 1
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    win = win[:, :, ::stride, ::stride]
    cols = win.transpose(1, 4, 5, 0, 2, 3).reshape(c * kh * kw, n * oh * ow)
    return np.ascontiguousarray(cols), oh, ow


def _conv2d_raw(x: np.ndarray, w: np.ndarray, stride: int, pad: int) -> np.ndarray:
    n = x.shape[0]
    o = w.shape[0]
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x
    cols, oh, ow = _im2col(xp, w.shape[2], w.shape[3], stride)
    out = (w.reshape(o, -1) @ cols).reshape(o, n, oh, ow).transpose(1, 0, 2, 3)
    return np.ascontiguousarray(out)


def _conv2d_weight_grad_raw(g: np.ndarray, x: np.ndarray, stride: int, pad: int, kshape) -> np.ndarray:
    o, c, kh, kw = kshape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x
    cols, _, _ = _im2col(xp, kh, kw, stride)
    gmat = np.ascontiguousarray(g.transpose(1, 0, 2, 3)).reshape(o, -1)
    return (gmat @ cols.T).reshape(o, c, kh, kw)


def _conv2d_input_grad_raw(g: np.ndarray, w: np.ndarray, stride: int, pad: int, in_hw) -> np.ndarray:
    n, o, oh, ow = g.shape
    _, _, kh, kw = w.shape
    h, wd = in_hw
    if stride > 1:
        d = np.zeros((n, o, (oh - 1) * stride + 1, (ow - 1) * stride + 1), dtype=g.dtype)
        d[:, :, ::stride, ::stride] = g
    else:
        d = g
    ah = (h + 2 * pad - kh) % stride
    aw = (wd + 2 * pad - kw) % stride
    dp = np.pad(d, ((0, 0), (0, 0), (kh - 1 - pad, kh - 1 - pad + ah), (kw - 1 - pad, kw - 1 - pad + aw)))
    wt = np.ascontiguousarray(w[:, :, ::-1, ::-1].transpose(1, 0, 2, 3))
    return _conv2d_raw(dp, wt, 1, 0)


def _validate_conv(op: str, x: Tensor, w: Tensor, stride: int, pad: int):
    if x.ndim != 4 or w.ndim != 4:
        raise ShapeMismatch(op, _shapes(x, w))
    if w.shape[1] != x.shape[1]:
        raise ShapeMismatch(op, _shapes(x, w), detail="channel mismatch")
    if stride not in (1, 2):
        raise ShapeMismatch(op, _shapes(x, w), detail=f"stride {stride} unsupported")
    kh, kw = w.shape[2], w.shape[3]
    if pad < 0 or pad > kh - 1 or pad > kw - 1:
        raise ShapeMismatch(op, _shapes(x, w), detail=f"pad {pad} out of range")
    if x.shape[2] + 2 * pad < kh or x.shape[3] + 2 * pad < kw:
        raise ShapeMismatch(op, _shapes(x, w), detail="kernel larger than padded input")


def conv2d(x: Tensor, w: Tensor, stride: int = 1, pad: int = 0) -> Tensor:
    """2-D cross correlation, NCHW x OIHW, zero padding, stride 1 or 2."""
    _validate_conv("conv2d", x, w, stride, pad)
    in_hw = (x.shape[2], x.shape[3])
    kshape = w.shape

    def vjp(up):
        return (
            conv2d_input_grad(up, w, stride, pad, in_hw),
            conv2d_weight_grad(up, x, stride, pad, kshape),
        )

    return _apply("conv2d", _conv2d_raw(x.data, w.data, stride, pad), (x, w), vjp)


def conv2d_input_grad(g: Tensor, w: Tensor, stride: int, pad: int, in_hw) -> Tensor:
    """Adjoint of conv2d in its input argument."""
    if g.ndim != 4 or w.ndim != 4 or g.shape[1] != w.shape[0]:
        raise ShapeMismatch("conv2d_input_grad", _shapes(g, w))
    in_hw = tuple(in_hw)

    def vjp(up):
        return (
            conv2d(up, w, stride, pad),
            conv2d_weight_grad(g, up, stride, pad, w.shape),
        )

    return _apply(
        "conv2d_input_grad",
        _conv2d_input_grad_raw(g.data, w.data, stride, pad, in_hw),
        (g, w),
        vjp,
    )


def conv2d_weight_grad(g: Tensor, x: Tensor, stride: int, pad: int, kshape) -> Tensor:
    """Adjoint of conv2d in its weight argument."""
    if g.ndim != 4 or x.ndim != 4 or g.shape[0] != x.shape[0]:
        raise ShapeMismatch("conv2d_weight_grad", _shapes(g, x))
    kshape = tuple(kshape)
    in_hw = (x.shape[2], x.shape[3])

    def vjp(up):
        return (
            conv2d(x, up, stride, pad),
            conv2d_input_grad(g, up, stride, pad, in_hw),
        )

    return _apply(
        "conv2d_weight_grad",
        _conv2d_weight_grad_raw(g.data, x.data, stride, pad, kshape),
        (g, x),
        vjp,
    )


def upsample_nearest2x(x: Tensor) -> Tensor:
    if x.ndim != 4:
        raise ShapeMismatch("upsample_nearest2x", [x.shape])
    n, c, h, w = x.shape
    out_data = np.ascontiguousarray(
        np.broadcast_to(x.data[:, :, :, None, :, None], (n, c, h, 2, w, 2)).reshape(n, c, 2 * h, 2 * w)
    )

    def vjp(up):
        return (sumpool2x2(up),)

    return _apply("upsample_nearest2x", out_data, (x,), vjp)


def sumpool2x2(x: Tensor) -> Tensor:
    if x.ndim != 4 or x.shape[2] % 2 or x.shape[3] % 2:
        raise ShapeMismatch("sumpool2x2", [x.shape])
    n, c, h, w = x.shape
    out_data = x.data.reshape(n, c, h // 2, 2, w // 2, 2).sum(axis=(3, 5))

    def vjp(up):
        return (upsample_nearest2x(up),)

    return _apply("sumpool2x2", out_data, (x,), vjp)


def global_avg_pool(x: Tensor) -> Tensor:
    if x.ndim != 4:
        raise ShapeMismatch("global_avg_pool", [x.shape])
    return mean(x, axis=(2, 3))


# ---------------------------------------------------------------------------
# normalization


def instance_norm(x: Tensor, eps: float = 1e-8) -> Tensor:
    """Zero mean / unit variance per channel of each sample over HxW.

    Guarded with sqrt(var + eps) so constant channels map to zero rather
    than NaN.
    """
    if x.ndim != 4:
        raise ShapeMismatch("instance_norm", [x.shape])
    mu = mean(x, axis=(2, 3), keepdims=True)
    centered = subtract(x, mu)
    var = mean(multiply(centered, centered), axis=(2, 3), keepdims=True)
    inv = reciprocal(sqrt(add(var, constant(np.asarray(eps, dtype=x.dtype.type)))))
    return multiply(centered, inv)


def adain(x: Tensor, style_scale: Tensor, style_bias: Tensor, eps: float = 1e-8) -> Tensor:
    """Adaptive instance normalization: normalize, then externally supplied affine.

    Styles are per channel: shape (C,) shared over the batch or (N, C).
    """
    if x.ndim != 4:
        raise ShapeMismatch("adain", _shapes(x, style_scale, style_bias))
    c = x.shape[1]
    for s in (style_scale, style_bias):
        if s.shape not in ((c,), (x.shape[0], c)):
            raise ShapeMismatch("adain", _shapes(x, style_scale, style_bias))
    target = (1, c, 1, 1) if style_scale.ndim == 1 else (x.shape[0], c, 1, 1)
    s = reshape(style_scale, target)
    b = reshape(
        style_bias, (1, c, 1, 1) if style_bias.ndim == 1 else (x.shape[0], c, 1, 1)
    )
    return add(multiply(instance_norm(x, eps), s), b)


def noise_inject(features: Tensor, noise_map: Tensor, per_channel_scale: Tensor) -> Tensor:
    """features + scale[c] * noise, noise shared across channels (N,1,H,W)."""
    if features.ndim != 4 or noise_map.ndim != 4:
        raise ShapeMismatch("noise_inject", _shapes(features, noise_map, per_channel_scale))
    n, c, h, w = features.shape
    if noise_map.shape != (n, 1, h, w) or per_channel_scale.shape != (c,):
        raise ShapeMismatch("noise_inject", _shapes(features, noise_map, per_channel_scale))
    s = reshape(per_channel_scale, (1, c, 1, 1))
    return add(features, multiply(s, noise_map))


# ---------------------------------------------------------------------------
# classification heads


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    shift = constant(np.max(x.data, axis=axis, keepdims=True))
    e = exp(subtract(x, shift))
    return multiply(e, reciprocal(sum(e, axis=axis, keepdims=True)))


def take_label(x: Tensor, labels: np.ndarray) -> Tensor:
    """Pick x[n, labels[n], ...]; labels shape must equal x with axis 1 removed."""
    labels = np.asarray(labels)
    if labels.shape != x.shape[:1] + x.shape[2:]:
        raise ShapeMismatch("take_label", [x.shape], detail=f"labels {labels.shape}")
    c = x.shape[1]
    idx = np.expand_dims(labels, 1)

    def vjp(up):
        return (_label_scatter(up, labels, c),)

    out_data = np.take_along_axis(x.data, idx, axis=1)[:, 0]
    return _apply("take_label", np.ascontiguousarray(out_data), (x,), vjp)


def _label_scatter(up: Tensor, labels: np.ndarray, class_count: int) -> Tensor:
    buf = np.zeros((up.shape[0], class_count) + up.shape[1:], dtype=up.dtype)
    np.put_along_axis(buf, np.expand_dims(labels, 1), np.expand_dims(up.data, 1), axis=1)

    def vjp(up2):
        return (take_label(up2, labels),)

    return _apply("label_scatter", buf, (up,), vjp)


PROB_FLOOR = 1e-7


def cross_entropy_with_logits(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean cross-entropy over every label position.

    logits: (N, C) or (N, C, H, W); labels: integer array of matching shape
    without the class axis.  Probabilities are floored at PROB_FLOOR inside
    the log, so the loss stays finite for any finite logits.
    """
    if logits.ndim < 2:
        raise ShapeMismatch("cross_entropy_with_logits", [logits.shape])
    labels = np.asarray(labels)
    c = logits.shape[1]
    if labels.shape != logits.shape[:1] + logits.shape[2:]:
        raise ShapeMismatch("cross_entropy_with_logits", [logits.shape], detail=f"labels {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= c):
        raise InvalidLabel(f"labels must lie in [0, {c})")
    shift = constant(np.max(logits.data, axis=1, keepdims=True))
    z = subtract(logits, shift)
    lse = log(sum(exp(z), axis=1, keepdims=True))
    logp = subtract(z, lse)
    picked = take_label(logp, labels)
    floor = float(np.log(PROB_FLOOR))
    floored = add(
        leaky_relu(subtract(picked, constant(np.asarray(floor, dtype=logits.dtype.type))), 0.0),
        constant(np.asarray(floor, dtype=logits.dtype.type)),
    )
    return scale(sum(floored), -1.0 / max(labels.size, 1))


def mse(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeMismatch("mse", _shapes(a, b))
    diff = subtract(a, b)
    return mean(multiply(diff, diff))


# ---------------------------------------------------------------------------
# generic dispatch (the recorded-op catalog)


_CATALOG = {
    "add": add,
    "subtract": subtract,
    "multiply": multiply,
    "matmul": matmul,
    "conv2d": conv2d,
    "upsample_nearest2x": upsample_nearest2x,
    "leaky_relu": leaky_relu,
    "tanh": tanh,
    "instance_norm": instance_norm,
    "adain": adain,
    "noise_inject": noise_inject,
    "global_avg_pool": global_avg_pool,
    "dense": dense,
    "concat": concat,
    "softmax": softmax,
    "cross_entropy_with_logits": cross_entropy_with_logits,
    "mse": mse,
    "reshape": reshape,
    "slice": tensor_slice,
}


def catalog() -> tuple[str, ...]:
    """Names accepted by :func:`record`."""
    return tuple(_CATALOG)


def record(op_kind: str, inputs: Sequence, attrs: dict | None = None) -> Tensor:
    """Apply a catalog op by name, recording a tape node if grads are live."""
    fn = _CATALOG.get(op_kind)
    if fn is None:
        raise KeyError(f"unknown op kind {op_kind!r}; see catalog()")
    attrs = dict(attrs or {})
    if op_kind == "concat":
        return fn(list(inputs), **attrs)
    return fn(*inputs, **attrs)
