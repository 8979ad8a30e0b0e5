"""NumPy implementations of the hot kernels.

This is the fallback backend used when the compiled extension is not
available; `udeer._kernels` picks between the two at import time.  Both
backends implement the same contracts:

* conv2d: zero padding, cross-correlation, floor output size.
* bilinear upsample: align-corners=false source mapping
  ``src = (dst + 0.5) / factor - 0.5`` clamped at the borders.
* altitude difference: per-pixel mean of |dZ| / distance over hit
  neighbours, accumulated in a left-right mirror-stable order (the
  +dx/-dx pair is added as one term) so mirroring the input mirrors the
  output bit-for-bit.
* densify: nearest original-valid pixel by growing Chebyshev rings,
  ties broken by row-major order of the candidate coordinates.

Boolean grids cross the backend boundary as uint8.
"""

import math

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def conv2d_forward(x, w, b, stride, pad):
    n, c, h, wd = x.shape
    f, _, k, _ = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    win = sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::stride, ::stride]
    out = np.einsum("nchwyx,fcyx->nfhw", win, w, optimize=True)
    out += b[None, :, None, None]
    return np.ascontiguousarray(out)


def conv2d_backward(x, w, stride, pad, dout):
    n, c, h, wd = x.shape
    f, _, k, _ = w.shape
    ho, wo = dout.shape[2], dout.shape[3]
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    dxp = np.zeros_like(xp)
    dw = np.zeros_like(w)
    db = np.einsum("nfhw->f", dout)
    dout_m = np.ascontiguousarray(dout.transpose(1, 0, 2, 3)).reshape(f, -1)
    for ky in range(k):
        for kx in range(k):
            sl = (
                slice(None),
                slice(None),
                slice(ky, ky + stride * ho, stride),
                slice(kx, kx + stride * wo, stride),
            )
            xs = np.ascontiguousarray(xp[sl].transpose(1, 0, 2, 3)).reshape(c, -1)
            dw[:, :, ky, kx] = dout_m @ xs.T
            contrib = (w[:, :, ky, kx].T @ dout_m).reshape(c, n, ho, wo)
            dxp[sl] += contrib.transpose(1, 0, 2, 3)
    dx = np.ascontiguousarray(dxp[:, :, pad : pad + h, pad : pad + wd])
    return dx, dw, db


def _axis_map(size, factor):
    """Source indices and fractional weights for one upsampled axis."""
    dst = np.arange(size * factor, dtype=np.float64)
    src = (dst + 0.5) / factor - 0.5
    src = np.maximum(src, 0.0)
    i0 = np.floor(src).astype(np.intp)
    i0 = np.minimum(i0, size - 1)
    i1 = np.minimum(i0 + 1, size - 1)
    frac = src - i0
    return i0, i1, frac


def upsample2d_forward(x, factor):
    if factor == 1:
        return x.copy()
    n, c, h, w = x.shape
    y0, y1, fy = _axis_map(h, factor)
    x0, x1, fx = _axis_map(w, factor)
    fy = fy[:, None]
    fx = fx[None, :]
    v00 = x[:, :, y0[:, None], x0[None, :]]
    v01 = x[:, :, y0[:, None], x1[None, :]]
    v10 = x[:, :, y1[:, None], x0[None, :]]
    v11 = x[:, :, y1[:, None], x1[None, :]]
    top = (1.0 - fx) * v00 + fx * v01
    bot = (1.0 - fx) * v10 + fx * v11
    return np.ascontiguousarray((1.0 - fy) * top + fy * bot)


def upsample2d_backward(h, w, factor, dout):
    n, c = dout.shape[0], dout.shape[1]
    if factor == 1:
        return dout.copy()
    y0, y1, fy = _axis_map(h, factor)
    x0, x1, fx = _axis_map(w, factor)
    fy = fy[:, None]
    fx = fx[None, :]
    dx_grid = np.zeros((n, c, h, w), dtype=np.float64)
    iy0, iy1 = y0[:, None], y1[:, None]
    ix0, ix1 = x0[None, :], x1[None, :]
    np.add.at(dx_grid, (slice(None), slice(None), iy0, ix0), (1 - fy) * (1 - fx) * dout)
    np.add.at(dx_grid, (slice(None), slice(None), iy0, ix1), (1 - fy) * fx * dout)
    np.add.at(dx_grid, (slice(None), slice(None), iy1, ix0), fy * (1 - fx) * dout)
    np.add.at(dx_grid, (slice(None), slice(None), iy1, ix1), fy * fx * dout)
    return dx_grid


def _neighbor_term(alt, hit, dy, dx):
    """|dZ|/distance toward offset (dy, dx), zero where either end misses."""
    h, w = alt.shape
    t = np.zeros((h, w), dtype=np.float64)
    m = np.zeros((h, w), dtype=np.float64)
    ys0, ys1 = max(0, -dy), h - max(0, dy)
    xs0, xs1 = max(0, -dx), w - max(0, dx)
    if ys0 >= ys1 or xs0 >= xs1:
        return t, m
    p = (slice(ys0, ys1), slice(xs0, xs1))
    q = (slice(ys0 + dy, ys1 + dy), slice(xs0 + dx, xs1 + dx))
    both = (hit[p] != 0) & (hit[q] != 0)
    dist = math.sqrt(dy * dy + dx * dx)
    t[p] = np.where(both, np.abs(alt[p] - alt[q]) / dist, 0.0)
    m[p] = both
    return t, m


def altitude_difference_grid(alt, hit, radius):
    h, w = alt.shape
    acc = np.zeros((h, w), dtype=np.float64)
    cnt = np.zeros((h, w), dtype=np.float64)
    for dy in range(-radius, radius + 1):
        if dy != 0:
            t0, m0 = _neighbor_term(alt, hit, dy, 0)
            acc += t0
            cnt += m0
        for dx in range(1, radius + 1):
            tp, mp = _neighbor_term(alt, hit, dy, dx)
            tm, mm = _neighbor_term(alt, hit, dy, -dx)
            acc += tp + tm
            cnt += mp + mm
    hit_b = hit != 0
    out = np.zeros((h, w), dtype=np.float64)
    covered = hit_b & (cnt > 0)
    out[covered] = acc[covered] / cnt[covered]
    return out


def _ring_offsets(ring):
    return [
        (dy, dx)
        for dy in range(-ring, ring + 1)
        for dx in range(-ring, ring + 1)
        if max(abs(dy), abs(dx)) == ring
    ]


def densify_fill(values, valid, max_ring):
    h, w = values.shape
    out_v = values.copy()
    out_m = (valid != 0).copy()
    unfilled = ~out_m
    for ring in range(1, max_ring + 1):
        if not unfilled.any():
            break
        for dy, dx in _ring_offsets(ring):
            src_valid = np.zeros((h, w), dtype=bool)
            src_vals = np.zeros((h, w), dtype=np.float64)
            ys0, ys1 = max(0, -dy), h - max(0, dy)
            xs0, xs1 = max(0, -dx), w - max(0, dx)
            if ys0 >= ys1 or xs0 >= xs1:
                continue
            p = (slice(ys0, ys1), slice(xs0, xs1))
            q = (slice(ys0 + dy, ys1 + dy), slice(xs0 + dx, xs1 + dx))
            src_valid[p] = valid[q] != 0
            src_vals[p] = values[q]
            take = unfilled & src_valid
            if take.any():
                out_v[take] = src_vals[take]
                out_m[take] = True
                unfilled &= ~take
    out_v[~out_m] = 0.0
    return out_v, out_m.astype(np.uint8)
