"""Naive reference implementations the test suite trusts.

Everything here is written as plain Python loops over integers, independent
of the vectorized production code: slow, obvious, and easy to audit. The
production kernels, planner, and traffic model are tested against these.
"""

from __future__ import annotations

import math

import numpy as np

INT8_MIN, INT8_MAX = -128, 127


def ref_requantize(acc: int, mult: int, shift: int, activation: str) -> int:
    v = acc * mult
    if shift > 0:
        v = (v + (1 << (shift - 1))) >> shift
    lo = 0 if activation == "relu" else INT8_MIN
    return max(lo, min(INT8_MAX, v))


def _rq(acc, q):
    return ref_requantize(int(acc), q.mult, q.shift, q.activation)


def ref_pw(inp, weights, bias, q):
    h, w, c = inp.shape
    k = weights.shape[0]
    out = np.zeros((h, w, k), dtype=np.int8)
    for y in range(h):
        for x in range(w):
            for j in range(k):
                acc = int(bias[j])
                for i in range(c):
                    acc += int(inp[y, x, i]) * int(weights[j, i])
                out[y, x, j] = _rq(acc, q)
    return out


def _pad4(pad):
    if isinstance(pad, tuple):
        return pad
    return (pad, pad, pad, pad)


def ref_dw(inp_chw, weights, bias, stride, pad, q):
    c, h, w = inp_chw.shape
    pt, pb, pl, pr = _pad4(pad)
    oh = (h + pt + pb - 3) // stride + 1
    ow = (w + pl + pr - 3) // stride + 1
    out = np.zeros((c, oh, ow), dtype=np.int8)
    for i in range(c):
        for oy in range(oh):
            for ox in range(ow):
                acc = int(bias[i])
                for dy in range(3):
                    for dx in range(3):
                        y = oy * stride - pt + dy
                        x = ox * stride - pl + dx
                        if 0 <= y < h and 0 <= x < w:
                            acc += int(inp_chw[i, y, x]) * int(weights[i, dy, dx])
                out[i, oy, ox] = _rq(acc, q)
    return out


def ref_conv3x3(inp, weights, bias, stride, pad, q):
    h, w, c = inp.shape
    k = weights.shape[0]
    pt, pb, pl, pr = _pad4(pad)
    oh = (h + pt + pb - 3) // stride + 1
    ow = (w + pl + pr - 3) // stride + 1
    out = np.zeros((oh, ow, k), dtype=np.int8)
    for j in range(k):
        for oy in range(oh):
            for ox in range(ow):
                acc = int(bias[j])
                for i in range(c):
                    for dy in range(3):
                        for dx in range(3):
                            y = oy * stride - pt + dy
                            x = ox * stride - pl + dx
                            if 0 <= y < h and 0 <= x < w:
                                acc += int(inp[y, x, i]) * int(weights[j, i, dy, dx])
                out[oy, ox, j] = _rq(acc, q)
    return out


def ref_linear(inp, weights, bias, q):
    vec = inp.reshape(-1)
    k = weights.shape[0]
    out = np.zeros(k, dtype=np.int8)
    for j in range(k):
        acc = int(bias[j])
        for i in range(vec.shape[0]):
            acc += int(vec[i]) * int(weights[j, i])
        out[j] = _rq(acc, q)
    return out


def ref_avgpool(inp, q):
    h, w, c = inp.shape
    n = h * w
    out = np.zeros((1, 1, c), dtype=np.int8)
    for i in range(c):
        acc = 0
        for y in range(h):
            for x in range(w):
                acc += int(inp[y, x, i])
        mean = (acc + n // 2) // n  # round half up on the mean
        out[0, 0, i] = _rq(mean, q)
    return out


# --- tile planning oracle ---------------------------------------------------
#
# Re-derivation of the cost model from the tiling rules, event by event:
# tiles cover output rows x output channels; a 3x3 tile re-fetches its halo
# rows; weights stream per k-slice unless pinned; output stores exactly once;
# depthwise and global-pool tiles read only their channel slice; an unfused
# depthwise pays a reorder pass over every loaded input tile.

PIN_FRACTION = 0.05


def layer_shapes(kind, h, w, c_in, k, stride, pad):
    if kind in ("conv3x3", "dw3x3", "fused"):
        oh = (h + 2 * pad - 3) // stride + 1
        ow = (w + 2 * pad - 3) // stride + 1
    elif kind in ("linear", "avgpool_global"):
        oh = ow = 1
    else:  # pw
        oh, ow = h, w
    return oh, ow


def unit_weight_bytes(kind, c_in):
    return {"conv3x3": 9 * c_in, "dw3x3": 9, "pw": c_in, "linear": c_in,
            "avgpool_global": 0, "fused": c_in + 9}[kind]


def unit_bias_bytes(kind):
    return {"avgpool_global": 0, "fused": 8}.get(kind, 4)


def input_rows_of_tile(kind, y0, rt, h, stride, pad):
    """Real input rows one output-row tile needs, walked row by row."""
    if kind == "avgpool_global":
        return h
    if kind in ("pw", "linear"):
        return rt
    need = set()
    for oy in range(y0, y0 + rt):
        for dy in range(3):
            y = oy * stride - pad + dy
            if 0 <= y < h:
                need.add(y)
    return len(need)


def row_tiles(kind, oh, rows_out):
    tiles = []
    y0 = 0
    while y0 < oh:
        rt = min(rows_out, oh - y0)
        tiles.append((y0, rt))
        y0 += rt
    return tiles


def naive_candidate(kind, h, w, c_in, k, stride, pad, rows_out, k_tile,
                    loop_order, pinned, fb, l1, double_buffer):
    """(total_traffic, footprint) of one candidate, or None if it overflows."""
    oh, ow = layer_shapes(kind, h, w, c_in, k, stride, pad)
    sliced = kind in ("dw3x3", "avgpool_global")
    unit = unit_weight_bytes(kind, c_in) + unit_bias_bytes(kind)
    tiles = row_tiles(kind, oh, rows_out)
    kslices = [(k0, min(k0 + k_tile, k)) for k0 in range(0, k, k_tile)]

    # buffers sized for the largest tile
    rows_in_max = max(input_rows_of_tile(kind, y0, rt, h, stride, pad)
                      for y0, rt in tiles)
    in_buf = rows_in_max * w * (k_tile if sliced else c_in)
    w_buf = k * unit if pinned else k_tile * unit
    out_buf = min(rows_out, oh) * ow * k_tile
    mid_buf = rows_in_max * w * fb if kind == "fused" else 0
    streamed = in_buf + out_buf
    footprint = in_buf + w_buf + out_buf + mid_buf
    if double_buffer:
        footprint += streamed
    if footprint > l1:
        return None

    total = 0
    if pinned:
        total += k * unit
    if loop_order == "k_outer":
        for k0, k1 in kslices:
            if not pinned:
                total += (k1 - k0) * unit
            for y0, rt in tiles:
                rows = input_rows_of_tile(kind, y0, rt, h, stride, pad)
                loaded = rows * w * ((k1 - k0) if sliced else c_in)
                total += loaded
                if kind == "dw3x3":
                    total += loaded
                total += rt * ow * (k1 - k0)
    else:
        for y0, rt in tiles:
            rows = input_rows_of_tile(kind, y0, rt, h, stride, pad)
            if not sliced:
                total += rows * w * c_in
            for k0, k1 in kslices:
                if sliced:
                    loaded = rows * w * (k1 - k0)
                    total += loaded
                    if kind == "dw3x3":
                        total += loaded
                if not pinned:
                    total += (k1 - k0) * unit
                total += rt * ow * (k1 - k0)
    return total, footprint


def brute_force_best(kind, h, w, c_in, k, stride, pad, l1,
                     double_buffer=False, fb_candidates=(8,)):
    """Minimum total traffic over every candidate, or None if all overflow."""
    oh, _ = layer_shapes(kind, h, w, c_in, k, stride, pad)
    wb_total = k * (unit_weight_bytes(kind, c_in) + unit_bias_bytes(kind))
    pins = [False] + ([True] if 0 < wb_total < PIN_FRACTION * l1 else [])
    if kind == "fused":
        fbs = [min(fb, k) for fb in fb_candidates]
    else:
        fbs = [None]
    best = None
    rows_range = range(1, oh + 1) if kind != "avgpool_global" else [1]
    for rows_out in rows_range:
        for k_tile in range(1, k + 1):
            for pinned in pins:
                for fb in fbs:
                    fb_eff = min(fb, k_tile) if fb is not None else 0
                    for order in ("k_outer", "spatial_outer"):
                        got = naive_candidate(
                            kind, h, w, c_in, k, stride, pad, rows_out, k_tile,
                            order, pinned, fb_eff or None, l1, double_buffer)
                        if got is None:
                            continue
                        if best is None or got[0] < best:
                            best = got[0]
    return best
