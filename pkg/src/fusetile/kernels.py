"""Bit-exact int8 reference kernels.

All kernels accumulate int8 x int8 products in int32 with no intermediate
saturation, add the int32 bias, then requantize (multiplier + rounding right
shift + saturation) back to int8. Plain numpy integer arithmetic keeps every
kernel deterministic across runs and thread counts.

Spatial kernels accept `pad` as either an int (symmetric, 0 or 1) or a
(top, bottom, left, right) tuple; the tuple form lets the tiled executor pad
only at true tensor edges while halo rows come from loaded data.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ShapeError
from .netir import QuantParams


@dataclass(frozen=True)
class FusedConfig:
    """Fused-batch size: PW output channels materialized per pass."""
    fb: int


@dataclass(frozen=True)
class KernelStats:
    macs: int = 0
    buffer_bytes: int = 0
    bytes_touched: int = 0


def _pad4(pad) -> tuple[int, int, int, int]:
    if isinstance(pad, tuple):
        pads = pad
    else:
        pads = (pad, pad, pad, pad)
    if len(pads) != 4 or any(p not in (0, 1) for p in pads):
        raise ShapeError(f"pad must be 0, 1 or a 4-tuple of those, got {pad!r}")
    return pads


def requantize(acc, q: QuantParams):
    """Map int32 accumulators to int8.

    shift > 0: clamp8((acc*mult + 2**(shift-1)) >> shift), arithmetic shift,
    round half up. shift == 0: clamp8(acc*mult). relu then clamps to [0, 127].
    Accepts scalars or arrays; total on all int32 inputs.
    """
    acc = np.asarray(acc, dtype=np.int64)
    prod = acc * int(q.mult)
    if q.shift > 0:
        prod = (prod + (1 << (q.shift - 1))) >> q.shift
    lo = 0 if q.activation == "relu" else -128
    out = np.clip(prod, lo, 127).astype(np.int8)
    return out if out.ndim else out.item()


def _check_int8(name, arr, shape=None):
    arr = np.asarray(arr)
    if arr.dtype != np.int8:
        raise ShapeError(f"{name} must be int8, got {arr.dtype}")
    if shape is not None and arr.shape != shape:
        raise ShapeError(f"{name} has shape {arr.shape}, expected {shape}")
    return arr


def _check_bias(bias, k):
    bias = np.asarray(bias)
    if bias.shape != (k,):
        raise ShapeError(f"bias has shape {bias.shape}, expected ({k},)")
    return bias.astype(np.int64)


def pw_conv(inp, weights, bias, q: QuantParams):
    """Pointwise 1x1 convolution, HWC in / HWC out.

    out[y][x][k] = requantize(bias[k] + sum_c in[y][x][c] * w[k][c], q)
    """
    inp = _check_int8("input", inp)
    if inp.ndim != 3:
        raise ShapeError(f"pw input must be HWC rank 3, got rank {inp.ndim}")
    h, w, c = inp.shape
    weights = _check_int8("weights", weights)
    if weights.ndim != 2 or weights.shape[1] != c:
        raise ShapeError(f"pw weights {weights.shape} incompatible with {c} input channels")
    k = weights.shape[0]
    bias = _check_bias(bias, k)
    acc = inp.reshape(h * w, c).astype(np.int64) @ weights.astype(np.int64).T + bias
    out = requantize(acc, q).reshape(h, w, k)
    return out, KernelStats(macs=h * w * c * k)


def dw_conv3x3(inp, weights, bias, stride, pad, q: QuantParams):
    """Depthwise 3x3 convolution, CHW in / CHW out, zero-padded reads.

    Channel i of the output depends only on channel i of the input.
    """
    inp = _check_int8("input", inp)
    if inp.ndim != 3:
        raise ShapeError(f"dw input must be CHW rank 3, got rank {inp.ndim}")
    c, h, w = inp.shape
    weights = _check_int8("weights", weights, (c, 3, 3))
    bias = _check_bias(bias, c)
    if stride not in (1, 2):
        raise ShapeError(f"stride must be 1 or 2, got {stride}")
    pt, pb, pl, pr = _pad4(pad)
    oh = (h + pt + pb - 3) // stride + 1
    ow = (w + pl + pr - 3) // stride + 1
    if oh < 1 or ow < 1:
        raise ShapeError(f"dw output {oh}x{ow} collapses below 1")
    padded = np.pad(inp, ((0, 0), (pt, pb), (pl, pr))).astype(np.int64)
    acc = np.broadcast_to(bias[:, None, None], (c, oh, ow)).copy()
    for dy in range(3):
        for dx in range(3):
            patch = padded[:, dy : dy + (oh - 1) * stride + 1 : stride,
                           dx : dx + (ow - 1) * stride + 1 : stride]
            acc += patch * weights[:, dy, dx].astype(np.int64)[:, None, None]
    out = requantize(acc, q)
    return out, KernelStats(macs=oh * ow * c * 9)


def conv3x3(inp, weights, bias, stride, pad, q: QuantParams):
    """Standard 3x3 convolution over all input channels, HWC in / HWC out."""
    inp = _check_int8("input", inp)
    if inp.ndim != 3:
        raise ShapeError(f"conv input must be HWC rank 3, got rank {inp.ndim}")
    h, w, c = inp.shape
    weights = _check_int8("weights", weights)
    if weights.ndim != 4 or weights.shape[1:] != (c, 3, 3):
        raise ShapeError(f"conv weights {weights.shape} incompatible with {c} input channels")
    k = weights.shape[0]
    bias = _check_bias(bias, k)
    if stride not in (1, 2):
        raise ShapeError(f"stride must be 1 or 2, got {stride}")
    pt, pb, pl, pr = _pad4(pad)
    oh = (h + pt + pb - 3) // stride + 1
    ow = (w + pl + pr - 3) // stride + 1
    if oh < 1 or ow < 1:
        raise ShapeError(f"conv output {oh}x{ow} collapses below 1")
    padded = np.pad(inp, ((pt, pb), (pl, pr), (0, 0))).astype(np.int64)
    acc = np.broadcast_to(bias, (oh, ow, k)).copy()
    wt = weights.astype(np.int64)
    for dy in range(3):
        for dx in range(3):
            patch = padded[dy : dy + (oh - 1) * stride + 1 : stride,
                           dx : dx + (ow - 1) * stride + 1 : stride, :]
            acc += patch @ wt[:, :, dy, dx].T
    out = requantize(acc, q)
    return out, KernelStats(macs=oh * ow * k * c * 9)


def linear(inp, weights, bias, q: QuantParams):
    """Fully connected layer on a flat channel vector."""
    inp = _check_int8("input", inp)
    vec = inp.reshape(-1)
    c = vec.shape[0]
    weights = _check_int8("weights", weights)
    if weights.ndim != 2 or weights.shape[1] != c:
        raise ShapeError(f"linear weights {weights.shape} incompatible with {c} inputs")
    k = weights.shape[0]
    bias = _check_bias(bias, k)
    acc = weights.astype(np.int64) @ vec.astype(np.int64) + bias
    return requantize(acc, q), KernelStats(macs=c * k)


def avgpool_global(inp, q: QuantParams):
    """Global average pool, HWC in / 1x1xC out.

    The accumulator is divided by h*w with round half up before requantizing.
    """
    inp = _check_int8("input", inp)
    if inp.ndim != 3:
        raise ShapeError(f"avgpool input must be HWC rank 3, got rank {inp.ndim}")
    h, w, c = inp.shape
    n = h * w
    acc = inp.astype(np.int64).sum(axis=(0, 1))
    mean = (acc + n // 2) // n
    out = requantize(mean, q).reshape(1, 1, c)
    return out, KernelStats(macs=n * c)


def layout_convert(inp, src: str, target: str):
    """Pure permutation between HWC and CHW; touches every byte once."""
    inp = np.asarray(inp)
    if inp.ndim != 3:
        raise ShapeError(f"layout_convert expects rank 3, got rank {inp.ndim}")
    for name in (src, target):
        if name not in ("HWC", "CHW"):
            raise ShapeError(f"unknown layout {name!r}")
    if src == target:
        return inp.copy(), KernelStats(bytes_touched=0)
    if src == "HWC":
        out = np.ascontiguousarray(inp.transpose(2, 0, 1))
    else:
        out = np.ascontiguousarray(inp.transpose(1, 2, 0))
    return out, KernelStats(bytes_touched=inp.size * inp.itemsize)


def fused_pw_dw(inp, pw_w, pw_bias, pw_q, dw_w, dw_bias, dw_q, stride, pad,
                cfg: FusedConfig):
    """Fused pointwise + depthwise kernel, HWC in / CHW out.

    Computes batches of `fb` pointwise output channels into an intermediate
    CHW buffer of h*w*fb int8 elements, runs the depthwise stage on that
    buffer, and repeats until all K output channels are produced. No
    recomputation: total MACs equal the pointwise plus depthwise counts, and
    the result is bit-exact equal to dw(convert(pw(input))) for every fb.
    """
    inp = _check_int8("input", inp)
    if inp.ndim != 3:
        raise ShapeError(f"fused input must be HWC rank 3, got rank {inp.ndim}")
    h, w, c = inp.shape
    pw_w = _check_int8("pw weights", pw_w)
    if pw_w.ndim != 2 or pw_w.shape[1] != c:
        raise ShapeError(f"pw weights {pw_w.shape} incompatible with {c} input channels")
    k = pw_w.shape[0]
    dw_w = _check_int8("dw weights", dw_w, (k, 3, 3))
    pw_bias = _check_bias(pw_bias, k)
    dw_bias = _check_bias(dw_bias, k)
    fb = cfg.fb
    if fb < 1:
        raise ConfigError(f"fused batch must be >= 1, got {fb}")
    if fb > k:
        raise ConfigError(f"fused batch {fb} exceeds {k} output channels")
    if stride not in (1, 2):
        raise ShapeError(f"stride must be 1 or 2, got {stride}")
    pt, pb, pl, pr = _pad4(pad)
    oh = (h + pt + pb - 3) // stride + 1
    ow = (w + pl + pr - 3) // stride + 1
    if oh < 1 or ow < 1:
        raise ShapeError(f"fused output {oh}x{ow} collapses below 1")

    in2d = inp.reshape(h * w, c).astype(np.int64)
    mid = np.empty((fb, h, w), dtype=np.int8)  # the single intermediate buffer
    out = np.empty((k, oh, ow), dtype=np.int8)
    for b in range(0, k, fb):
        e = min(b + fb, k)
        nb = e - b
        acc = in2d @ pw_w[b:e].astype(np.int64).T + pw_bias[b:e]
        mid[:nb] = requantize(acc, pw_q).T.reshape(nb, h, w)
        batch_out, _ = dw_conv3x3(
            mid[:nb], dw_w[b:e], dw_bias[b:e], stride, (pt, pb, pl, pr), dw_q
        )
        out[b:e] = batch_out
    stats = KernelStats(
        macs=h * w * c * k + oh * ow * k * 9,
        buffer_bytes=h * w * fb,
    )
    return out, stats
