"""Differentiable operations over `Tensor`.

Conventions shared by all ops:

* forward math runs in float64 and is deterministic;
* an op records onto the active tape iff a tape is open and at least one
  input requires gradients;
* conv2d is cross-correlation with zero padding and floor output size;
* bilinear upsampling uses the align-corners=false source mapping.
"""

from collections.abc import Sequence

import numpy as np

from udeer import _kernels
from udeer.errors import NegativeWeight, ShapeMismatch
from udeer.diff_engine.tensor import Tensor, active_tape

BCE_EPS = 1e-7


def _maybe_record(out: Tensor, inputs: Sequence[Tensor], backward_fn) -> Tensor:
    tape = active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        tape.record(out, backward_fn)
    return out


def conv2d(x: Tensor, kernel: Tensor, bias: Tensor, stride: int = 1, pad: int = 0) -> Tensor:
    if x.data.ndim != 4 or kernel.data.ndim != 4:
        raise ShapeMismatch(
            f"conv2d expects NCHW input and FCkk kernel, got {x.shape} and {kernel.shape}"
        )
    n, c, h, w = x.shape
    f, ck, kh, kw = kernel.shape
    if ck != c:
        raise ShapeMismatch(f"kernel expects {ck} input channels, input has {c}")
    if kh != kw:
        raise ShapeMismatch(f"only square kernels supported, got {kh}x{kw}")
    if bias.shape != (f,):
        raise ShapeMismatch(f"bias shape {bias.shape} does not match {f} filters")
    if stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")
    if kh > h + 2 * pad or kw > w + 2 * pad:
        raise ShapeMismatch(f"kernel {kh} exceeds padded input {h + 2 * pad}x{w + 2 * pad}")

    xd = np.ascontiguousarray(x.data)
    kd = np.ascontiguousarray(kernel.data)
    out = Tensor(_kernels.conv2d_forward(xd, kd, np.ascontiguousarray(bias.data), stride, pad))

    def backward(g):
        dx, dw, db = _kernels.conv2d_backward(xd, kd, stride, pad, np.ascontiguousarray(g))
        if x.requires_grad:
            x.accumulate_grad(dx)
        if kernel.requires_grad:
            kernel.accumulate_grad(dw)
        if bias.requires_grad:
            bias.accumulate_grad(db)

    return _maybe_record(out, (x, kernel, bias), backward)


def relu(x: Tensor) -> Tensor:
    out = Tensor(np.maximum(x.data, 0.0))
    positive = x.data > 0.0

    def backward(g):
        if x.requires_grad:
            x.accumulate_grad(g * positive)

    return _maybe_record(out, (x,), backward)


def _sigmoid_values(v: np.ndarray) -> np.ndarray:
    out = np.empty_like(v)
    pos = v >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
    ev = np.exp(v[~pos])
    out[~pos] = ev / (1.0 + ev)
    return out


def sigmoid(x: Tensor) -> Tensor:
    s = _sigmoid_values(x.data)
    out = Tensor(s)

    def backward(g):
        if x.requires_grad:
            x.accumulate_grad(g * s * (1.0 - s))

    return _maybe_record(out, (x,), backward)


def bilinear_upsample(x: Tensor, factor: int) -> Tensor:
    if x.data.ndim != 4:
        raise ShapeMismatch(f"bilinear_upsample expects NCHW, got {x.shape}")
    if factor < 1:
        raise ValueError(f"factor must be >= 1, got {factor}")
    h, w = x.shape[2], x.shape[3]
    out = Tensor(_kernels.upsample2d_forward(np.ascontiguousarray(x.data), factor))

    def backward(g):
        if x.requires_grad:
            x.accumulate_grad(_kernels.upsample2d_backward(h, w, factor, np.ascontiguousarray(g)))

    return _maybe_record(out, (x,), backward)


def concat_channels(xs: Sequence[Tensor]) -> Tensor:
    if not xs:
        raise ShapeMismatch("concat_channels needs at least one tensor")
    first = xs[0].shape
    for t in xs:
        if t.data.ndim != 4 or t.shape[0] != first[0] or t.shape[2:] != first[2:]:
            raise ShapeMismatch(f"cannot concat shapes {[t.shape for t in xs]}")
    out = Tensor(np.concatenate([t.data for t in xs], axis=1))
    widths = [t.shape[1] for t in xs]
    edges = np.cumsum([0] + widths)

    def backward(g):
        for t, lo, hi in zip(xs, edges[:-1], edges[1:]):
            if t.requires_grad:
                t.accumulate_grad(g[:, lo:hi])

    return _maybe_record(out, tuple(xs), backward)


def add(x: Tensor, y: Tensor) -> Tensor:
    if x.shape != y.shape:
        raise ShapeMismatch(f"add shapes differ: {x.shape} vs {y.shape}")
    out = Tensor(x.data + y.data)

    def backward(g):
        if x.requires_grad:
            x.accumulate_grad(g)
        if y.requires_grad:
            y.accumulate_grad(g)

    return _maybe_record(out, (x, y), backward)


def scale(x: Tensor, s: float) -> Tensor:
    s = float(s)
    out = Tensor(x.data * s)

    def backward(g):
        if x.requires_grad:
            x.accumulate_grad(g * s)

    return _maybe_record(out, (x,), backward)


def bce_masked(prob: Tensor, target: np.ndarray, weight_mask: np.ndarray) -> Tensor:
    """Weighted binary cross entropy, normalized by max(sum of weights, 1).

    Pixels with zero weight contribute nothing to the value and get an
    exactly-zero gradient; probabilities are clipped to
    [BCE_EPS, 1 - BCE_EPS] so the result stays finite on [0, 1] inputs.
    """
    target = np.asarray(target, dtype=np.float64)
    weight_mask = np.asarray(weight_mask, dtype=np.float64)
    if target.shape != prob.shape or weight_mask.shape != prob.shape:
        raise ShapeMismatch(
            f"bce_masked shapes differ: prob {prob.shape}, target {target.shape}, "
            f"mask {weight_mask.shape}"
        )
    if np.any(weight_mask < 0.0):
        raise NegativeWeight("weight_mask entries must be non-negative")

    p = np.clip(prob.data, BCE_EPS, 1.0 - BCE_EPS)
    terms = -(target * np.log(p) + (1.0 - target) * np.log(1.0 - p))
    denom = max(float(weight_mask.sum()), 1.0)
    out = Tensor(np.float64((weight_mask * terms).sum() / denom))
    inside = (prob.data >= BCE_EPS) & (prob.data <= 1.0 - BCE_EPS)

    def backward(g):
        if prob.requires_grad:
            dprob = weight_mask * (p - target) / (p * (1.0 - p)) / denom
            dprob *= inside
            prob.accumulate_grad(g * dprob)

    return _maybe_record(out, (prob,), backward)
