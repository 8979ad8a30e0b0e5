# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled kernels: conv2d fwd/bwd, bilinear upsample fwd/bwd, altitude
difference, ring densify.  Contracts mirror `udeer._kernels.pure`; the
altitude-difference accumulation follows the same mirror-stable term order
so the two backends agree bit-for-bit there.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport fabs, sqrt

cnp.import_array()


def conv2d_forward(cnp.float64_t[:, :, :, ::1] x,
                   cnp.float64_t[:, :, :, ::1] w,
                   cnp.float64_t[::1] b,
                   int stride, int pad):
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1], h = x.shape[2], wd = x.shape[3]
    cdef Py_ssize_t f = w.shape[0], k = w.shape[2]
    cdef Py_ssize_t ho = (h + 2 * pad - k) // stride + 1
    cdef Py_ssize_t wo = (wd + 2 * pad - k) // stride + 1
    cdef Py_ssize_t hp = h + 2 * pad, wp = wd + 2 * pad

    xp_arr = np.zeros((n, c, hp, wp), dtype=np.float64)
    cdef cnp.float64_t[:, :, :, ::1] xp = xp_arr
    out_arr = np.empty((n, f, ho, wo), dtype=np.float64)
    cdef cnp.float64_t[:, :, :, ::1] out = out_arr

    cdef Py_ssize_t ni, ci, fi, ky, kx, oy, ox, iy
    cdef double wv
    for ni in range(n):
        for ci in range(c):
            for oy in range(h):
                for ox in range(wd):
                    xp[ni, ci, oy + pad, ox + pad] = x[ni, ci, oy, ox]

    for ni in range(n):
        for fi in range(f):
            for oy in range(ho):
                for ox in range(wo):
                    out[ni, fi, oy, ox] = b[fi]
            for ci in range(c):
                for ky in range(k):
                    for kx in range(k):
                        wv = w[fi, ci, ky, kx]
                        for oy in range(ho):
                            iy = oy * stride + ky
                            for ox in range(wo):
                                out[ni, fi, oy, ox] = out[ni, fi, oy, ox] + wv * xp[ni, ci, iy, ox * stride + kx]
    return out_arr


def conv2d_backward(cnp.float64_t[:, :, :, ::1] x,
                    cnp.float64_t[:, :, :, ::1] w,
                    int stride, int pad,
                    cnp.float64_t[:, :, :, ::1] dout):
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1], h = x.shape[2], wd = x.shape[3]
    cdef Py_ssize_t f = w.shape[0], k = w.shape[2]
    cdef Py_ssize_t ho = dout.shape[2], wo = dout.shape[3]
    cdef Py_ssize_t hp = h + 2 * pad, wp = wd + 2 * pad

    xp_arr = np.zeros((n, c, hp, wp), dtype=np.float64)
    cdef cnp.float64_t[:, :, :, ::1] xp = xp_arr
    dxp_arr = np.zeros((n, c, hp, wp), dtype=np.float64)
    cdef cnp.float64_t[:, :, :, ::1] dxp = dxp_arr
    dw_arr = np.zeros((f, c, k, k), dtype=np.float64)
    cdef cnp.float64_t[:, :, :, ::1] dw = dw_arr
    db_arr = np.zeros(f, dtype=np.float64)
    cdef cnp.float64_t[::1] db = db_arr

    cdef Py_ssize_t ni, ci, fi, ky, kx, oy, ox, iy, ix
    cdef double wv, g, acc
    for ni in range(n):
        for ci in range(c):
            for oy in range(h):
                for ox in range(wd):
                    xp[ni, ci, oy + pad, ox + pad] = x[ni, ci, oy, ox]

    for ni in range(n):
        for fi in range(f):
            acc = 0.0
            for oy in range(ho):
                for ox in range(wo):
                    acc = acc + dout[ni, fi, oy, ox]
            db[fi] = db[fi] + acc
            for ci in range(c):
                for ky in range(k):
                    for kx in range(k):
                        wv = w[fi, ci, ky, kx]
                        acc = 0.0
                        for oy in range(ho):
                            iy = oy * stride + ky
                            for ox in range(wo):
                                ix = ox * stride + kx
                                g = dout[ni, fi, oy, ox]
                                acc = acc + g * xp[ni, ci, iy, ix]
                                dxp[ni, ci, iy, ix] = dxp[ni, ci, iy, ix] + wv * g
                        dw[fi, ci, ky, kx] = dw[fi, ci, ky, kx] + acc

    dx_arr = np.empty((n, c, h, wd), dtype=np.float64)
    cdef cnp.float64_t[:, :, :, ::1] dx = dx_arr
    for ni in range(n):
        for ci in range(c):
            for oy in range(h):
                for ox in range(wd):
                    dx[ni, ci, oy, ox] = dxp[ni, ci, oy + pad, ox + pad]
    return dx_arr, dw_arr, db_arr


cdef void _axis_map(Py_ssize_t size, int factor,
                    Py_ssize_t[::1] i0, Py_ssize_t[::1] i1,
                    cnp.float64_t[::1] frac):
    cdef Py_ssize_t d
    cdef double src
    for d in range(size * factor):
        src = (d + 0.5) / factor - 0.5
        if src < 0.0:
            src = 0.0
        i0[d] = <Py_ssize_t>src
        if i0[d] > size - 1:
            i0[d] = size - 1
        i1[d] = i0[d] + 1
        if i1[d] > size - 1:
            i1[d] = size - 1
        frac[d] = src - <double>i0[d]


def upsample2d_forward(cnp.float64_t[:, :, :, ::1] x, int factor):
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3]
    if factor == 1:
        return np.asarray(x).copy()
    cdef Py_ssize_t ho = h * factor, wo = w * factor

    y0_arr = np.empty(ho, dtype=np.intp)
    y1_arr = np.empty(ho, dtype=np.intp)
    fy_arr = np.empty(ho, dtype=np.float64)
    x0_arr = np.empty(wo, dtype=np.intp)
    x1_arr = np.empty(wo, dtype=np.intp)
    fx_arr = np.empty(wo, dtype=np.float64)
    cdef Py_ssize_t[::1] y0 = y0_arr, y1 = y1_arr, x0 = x0_arr, x1 = x1_arr
    cdef cnp.float64_t[::1] fy = fy_arr, fx = fx_arr
    _axis_map(h, factor, y0, y1, fy)
    _axis_map(w, factor, x0, x1, fx)

    out_arr = np.empty((n, c, ho, wo), dtype=np.float64)
    cdef cnp.float64_t[:, :, :, ::1] out = out_arr
    cdef Py_ssize_t ni, ci, oy, ox
    cdef double top, bot, gy, gx
    for ni in range(n):
        for ci in range(c):
            for oy in range(ho):
                gy = fy[oy]
                for ox in range(wo):
                    gx = fx[ox]
                    top = (1.0 - gx) * x[ni, ci, y0[oy], x0[ox]] + gx * x[ni, ci, y0[oy], x1[ox]]
                    bot = (1.0 - gx) * x[ni, ci, y1[oy], x0[ox]] + gx * x[ni, ci, y1[oy], x1[ox]]
                    out[ni, ci, oy, ox] = (1.0 - gy) * top + gy * bot
    return out_arr


def upsample2d_backward(Py_ssize_t h, Py_ssize_t w, int factor,
                        cnp.float64_t[:, :, :, ::1] dout):
    cdef Py_ssize_t n = dout.shape[0], c = dout.shape[1]
    if factor == 1:
        return np.asarray(dout).copy()
    cdef Py_ssize_t ho = h * factor, wo = w * factor

    y0_arr = np.empty(ho, dtype=np.intp)
    y1_arr = np.empty(ho, dtype=np.intp)
    fy_arr = np.empty(ho, dtype=np.float64)
    x0_arr = np.empty(wo, dtype=np.intp)
    x1_arr = np.empty(wo, dtype=np.intp)
    fx_arr = np.empty(wo, dtype=np.float64)
    cdef Py_ssize_t[::1] y0 = y0_arr, y1 = y1_arr, x0 = x0_arr, x1 = x1_arr
    cdef cnp.float64_t[::1] fy = fy_arr, fx = fx_arr
    _axis_map(h, factor, y0, y1, fy)
    _axis_map(w, factor, x0, x1, fx)

    dx_arr = np.zeros((n, c, h, w), dtype=np.float64)
    cdef cnp.float64_t[:, :, :, ::1] dx = dx_arr
    cdef Py_ssize_t ni, ci, oy, ox
    cdef double g, gy, gx
    for ni in range(n):
        for ci in range(c):
            for oy in range(ho):
                gy = fy[oy]
                for ox in range(wo):
                    gx = fx[ox]
                    g = dout[ni, ci, oy, ox]
                    dx[ni, ci, y0[oy], x0[ox]] += (1.0 - gy) * (1.0 - gx) * g
                    dx[ni, ci, y0[oy], x1[ox]] += (1.0 - gy) * gx * g
                    dx[ni, ci, y1[oy], x0[ox]] += gy * (1.0 - gx) * g
                    dx[ni, ci, y1[oy], x1[ox]] += gy * gx * g
    return dx_arr


def altitude_difference_grid(cnp.float64_t[:, ::1] alt,
                             cnp.uint8_t[:, ::1] hit,
                             int radius):
    cdef Py_ssize_t h = alt.shape[0], w = alt.shape[1]
    out_arr = np.zeros((h, w), dtype=np.float64)
    cdef cnp.float64_t[:, ::1] out = out_arr

    # distance table indexed by (dy+radius, dx+radius)
    cdef Py_ssize_t side = 2 * radius + 1
    dist_arr = np.empty((side, side), dtype=np.float64)
    cdef cnp.float64_t[:, ::1] dist = dist_arr
    cdef Py_ssize_t dy, dx
    for dy in range(-radius, radius + 1):
        for dx in range(-radius, radius + 1):
            dist[dy + radius, dx + radius] = sqrt(<double>(dy * dy + dx * dx))

    cdef Py_ssize_t py, px, qy, qxp, qxm
    cdef double acc, zp, a, bterm
    cdef long cnt
    for py in range(h):
        for px in range(w):
            if hit[py, px] == 0:
                continue
            zp = alt[py, px]
            acc = 0.0
            cnt = 0
            for dy in range(-radius, radius + 1):
                qy = py + dy
                if qy < 0 or qy >= h:
                    continue
                if dy != 0:
                    if hit[qy, px] != 0:
                        acc = acc + fabs(zp - alt[qy, px]) / dist[dy + radius, radius]
                        cnt = cnt + 1
                for dx in range(1, radius + 1):
                    a = 0.0
                    bterm = 0.0
                    qxp = px + dx
                    qxm = px - dx
                    if qxp < w and hit[qy, qxp] != 0:
                        a = fabs(zp - alt[qy, qxp]) / dist[dy + radius, dx + radius]
                        cnt = cnt + 1
                    if qxm >= 0 and hit[qy, qxm] != 0:
                        bterm = fabs(zp - alt[qy, qxm]) / dist[dy + radius, dx + radius]
                        cnt = cnt + 1
                    acc = acc + (a + bterm)
            if cnt > 0:
                out[py, px] = acc / <double>cnt
    return out_arr


def densify_fill(cnp.float64_t[:, ::1] values,
                 cnp.uint8_t[:, ::1] valid,
                 int max_ring):
    cdef Py_ssize_t h = values.shape[0], w = values.shape[1]
    out_v_arr = np.zeros((h, w), dtype=np.float64)
    out_m_arr = np.zeros((h, w), dtype=np.uint8)
    cdef cnp.float64_t[:, ::1] out_v = out_v_arr
    cdef cnp.uint8_t[:, ::1] out_m = out_m_arr

    cdef Py_ssize_t py, px, qy, qx
    cdef int ring, dy, dx, found
    for py in range(h):
        for px in range(w):
            if valid[py, px] != 0:
                out_v[py, px] = values[py, px]
                out_m[py, px] = 1
                continue
            found = 0
            for ring in range(1, max_ring + 1):
                for dy in range(-ring, ring + 1):
                    qy = py + dy
                    if qy < 0 or qy >= h:
                        continue
                    for dx in range(-ring, ring + 1):
                        if dy != -ring and dy != ring and dx != -ring and dx != ring:
                            continue
                        qx = px + dx
                        if qx < 0 or qx >= w:
                            continue
                        if valid[qy, qx] != 0:
                            out_v[py, px] = values[qy, qx]
                            out_m[py, px] = 1
                            found = 1
                            break
                    if found:
                        break
                if found:
                    break
    return out_v_arr, out_m_arr
