"""Seeded network generators for tests, demos, and verification sweeps.

Weights are uniform int8. Requantization parameters are calibrated while the
chain is built: each layer's accumulator magnitude is estimated on a running
calibration tensor and the mult/shift pair is folded so activations keep a
healthy spread at every depth — equivalence tests on saturated or near-zero
tensors prove nothing.
"""

from __future__ import annotations

import math

import numpy as np

from . import kernels
from .netir import (
    BlobBuilder,
    LayerDesc,
    NetworkManifest,
    QuantParams,
    TensorShape,
)

_TARGET_STD = 40.0
_WEIGHT_RMS = 127.0 / math.sqrt(3.0)  # rms of uniform int8 weights


def fold_scale(ratio: float, activation: str = "none") -> QuantParams:
    """Fold a real rescale factor into mult/shift, mult in [2^14, 2^15)."""
    ratio = max(ratio, 2.0 ** -45)
    shift = 14 - math.floor(math.log2(ratio))
    shift = max(0, min(31, shift))
    mult = max(1, min((1 << 31) - 1, round(ratio * (1 << shift))))
    return QuantParams(mult=mult, shift=shift, activation=activation)


IDENTITY_SCALE = QuantParams(mult=1 << 14, shift=14, activation="none")


class _ChainBuilder:
    """Accumulates layers and packed weights, calibrating quant as it goes."""

    def __init__(self, rng: np.random.Generator, input_shape: TensorShape):
        self.rng = rng
        self.blob = BlobBuilder()
        self.layers: list[LayerDesc] = []
        self.input_shape = input_shape
        self.cal = rng.integers(
            -128, 128, (input_shape.h, input_shape.w, input_shape.c),
            dtype=np.int64).astype(np.int8)

    def _calibrate(self, kind, n_terms, activation) -> QuantParams:
        x = self.cal.astype(np.float64)
        if kind == "avgpool_global":
            pooled_rms = math.sqrt((x.mean(axis=(0, 1)) ** 2).mean())
            return fold_scale(_TARGET_STD / max(pooled_rms, 0.5), activation)
        acc_rms = math.sqrt((x ** 2).mean()) * _WEIGHT_RMS * math.sqrt(n_terms)
        return fold_scale(_TARGET_STD / max(acc_rms, 1.0), activation)

    def _advance(self, layer, w, bias):
        """Run the new layer on the calibration tensor."""
        if layer.kind == "pw":
            self.cal, _ = kernels.pw_conv(self.cal, w, bias, layer.quant)
        elif layer.kind == "dw3x3":
            chw, _ = kernels.layout_convert(self.cal, "HWC", "CHW")
            y, _ = kernels.dw_conv3x3(chw, w, bias, layer.stride, layer.pad,
                                      layer.quant)
            self.cal, _ = kernels.layout_convert(y, "CHW", "HWC")
        elif layer.kind == "conv3x3":
            self.cal, _ = kernels.conv3x3(self.cal, w, bias, layer.stride,
                                          layer.pad, layer.quant)
        elif layer.kind == "linear":
            vec, _ = kernels.linear(self.cal, w, bias, layer.quant)
            self.cal = vec.reshape(1, 1, -1)
        else:
            self.cal, _ = kernels.avgpool_global(self.cal, layer.quant)

    def add(self, lid, kind, c_in, c_out, stride=1, pad=0, activation="relu"):
        n_terms = {"conv3x3": 9 * c_in, "dw3x3": 9, "pw": c_in,
                   "linear": c_in, "avgpool_global": 1}[kind]
        quant = self._calibrate(kind, n_terms, activation)
        w = bias = None
        wref = bref = None
        if kind != "avgpool_global":
            shapes = {
                "conv3x3": (c_out, c_in, 3, 3),
                "dw3x3": (c_in, 3, 3),
                "pw": (c_out, c_in),
                "linear": (c_out, c_in),
            }
            w = self.rng.integers(-127, 128, size=shapes[kind],
                                  dtype=np.int64).astype(np.int8)
            bias = self.rng.integers(-(1 << 12), 1 << 12, size=c_out,
                                     dtype=np.int64).astype(np.int32)
            wref = self.blob.append_weights(w)
            bref = self.blob.append_bias(bias)
        layer = LayerDesc(
            id=lid, kind=kind, c_in=c_in, c_out=c_out, stride=stride, pad=pad,
            quant=quant, weights_ref=wref, bias_ref=bref,
        )
        self.layers.append(layer)
        self._advance(layer, w, bias)

    def finish(self, name, weights_file="weights.bin"):
        net = NetworkManifest(name=name, input=self.input_shape,
                              layers=tuple(self.layers), weights_file=weights_file)
        return net, self.blob.blob()


def mobilenet_like(seed: int = 0) -> tuple[NetworkManifest, bytes]:
    """28-layer quarter-width depthwise-separable classifier on 96x96x1 input.

    13 dw+pw blocks (downsampling at blocks 1, 3, 5, 7, 13), then global
    pooling and a 4-way linear head. Block-interior pw->dw adjacency gives
    the fusion pass 12 fusable pairs.
    """
    rng = np.random.default_rng(seed)
    b = _ChainBuilder(rng, TensorShape(96, 96, 1))
    widths = [8, 16, 32, 32, 64, 64, 128, 128, 128, 128, 128, 128, 256]
    strides = [2, 1, 2, 1, 2, 1, 2, 1, 1, 1, 1, 1, 2]
    c = 1
    for i, (k, s) in enumerate(zip(widths, strides), start=1):
        b.add(f"dw{i}", "dw3x3", c, c, stride=s, pad=1)
        b.add(f"pw{i}", "pw", c, k)
        c = k
    b.add("pool", "avgpool_global", c, c, activation="none")
    b.add("fc", "linear", c, 4, activation="none")
    return b.finish(f"mobilenet_like_s{seed}")


def pw_dw_pair(h: int = 32, w: int = 32, c: int = 16, k: int = 32,
               stride: int = 1, seed: int = 0) -> tuple[NetworkManifest, bytes]:
    """Minimal fusion benchmark: one pw feeding one padded dw3x3."""
    rng = np.random.default_rng(seed)
    b = _ChainBuilder(rng, TensorShape(h, w, c))
    b.add("pw0", "pw", c, k)
    b.add("dw0", "dw3x3", k, k, stride=stride, pad=1)
    return b.finish(f"pw_dw_pair_s{seed}")


def random_network(seed: int, max_layers: int = 8) -> tuple[NetworkManifest, bytes]:
    """Random valid chain over all five kinds; shapes stay executable."""
    rng = np.random.default_rng(seed)
    h = w = int(rng.integers(6, 33))
    c0 = int(rng.integers(1, 9))
    shape = TensorShape(h, w, c0)
    b = _ChainBuilder(rng, shape)
    c = c0
    n_body = int(rng.integers(1, max_layers - 1))
    for i in range(n_body):
        options = ["pw"]
        if h >= 4 and w >= 4:  # room for a strided/padded 3x3
            options += ["conv3x3", "dw3x3", "dw3x3"]
        kind = options[rng.integers(0, len(options))]
        if kind == "pw":
            k = int(rng.integers(1, 17))
            b.add(f"l{i}", "pw", c, k)
            c = k
        else:
            stride = int(rng.integers(1, 3))
            pad = int(rng.integers(0, 2))
            if kind == "conv3x3":
                k = int(rng.integers(1, 13))
                b.add(f"l{i}", "conv3x3", c, k, stride=stride, pad=pad)
                c = k
            else:
                b.add(f"l{i}", "dw3x3", c, c, stride=stride, pad=pad)
            h = (h + 2 * pad - 3) // stride + 1
            w = (w + 2 * pad - 3) // stride + 1
    if rng.integers(0, 2):
        b.add("pool", "avgpool_global", c, c, activation="none")
        b.add("fc", "linear", c, int(rng.integers(2, 9)), activation="none")
    return b.finish(f"random_s{seed}")


def random_input(net: NetworkManifest, seed: int) -> np.ndarray:
    """Seeded full-range int8 input tensor matching the manifest."""
    rng = np.random.default_rng(seed)
    if net.input.layout == "CHW":
        shape = (net.input.c, net.input.h, net.input.w)
    else:
        shape = (net.input.h, net.input.w, net.input.c)
    return rng.integers(-128, 128, size=shape, dtype=np.int64).astype(np.int8)


FIXTURES = {
    "mobilenet": mobilenet_like,
    "pwdw": pw_dw_pair,
    "random": random_network,
}
