"""Turn a trained, masked chain into engine-ready manifest + weight blob.

The output follows the deployment engine's external format exactly
(canonical JSON manifest plus an exactly-packed little-endian blob); it is
produced here without importing the engine so the two packages stay
decoupled. Pruned channels are removed physically, and the consumer of a
pruned producer sees the reduced c_in.
"""

import json
import math
from pathlib import Path

import numpy as np
import torch

from .data import toy_batch

INT32_MAX = 2**31 - 1


class ExportError(RuntimeError):
    pass


def _round_half_away(v):
    return np.copysign(np.floor(np.abs(v) + 0.5), v)


def _weight_scale(w):
    """Symmetric per-tensor scale; all-zero tensors get a benign 1.0."""
    peak = float(np.abs(w).max()) if w.size else 0.0
    return peak / 127.0 if peak > 0.0 else 1.0


def _act_scale(t):
    peak = float(t.detach().abs().max())
    return peak / 127.0 if peak > 0.0 else 1.0 / 127.0


def _quant_weights(w, scale):
    return np.clip(_round_half_away(w / scale), -127, 127).astype(np.int8)


def _quant_bias(b, scale):
    return np.clip(_round_half_away(b / scale), -INT32_MAX - 1, INT32_MAX).astype("<i4")


def _fold(ratio):
    """Express `ratio` as mult/2^shift with mult normalized into 15 bits.

    shift saturates at [0, 31]; mult at [1, 2^31 - 1]. Saturation only
    loses precision, never validity.
    """
    mantissa, exp = math.frexp(ratio)  # ratio = mantissa * 2^exp, mantissa in [0.5, 1)
    shift = min(max(15 - exp, 0), 31)
    mult = int(_round_half_away(ratio * (1 << shift)))
    return min(max(mult, 1), INT32_MAX), shift


def _np64(t):
    return t.detach().cpu().numpy().astype(np.float64)


def export_manifest(net, out_dir, name="model", input_hw=96, seed=0, calib_batch=8):
    """Quantize `net` and write <name>.json / <name>.bin under out_dir.

    Activation scales come from a calibration forward pass seeded by
    `seed`; everything downstream is deterministic, so re-exporting the
    same net with the same seed is byte-identical.
    """
    if not list(net.units):
        raise ExportError("nothing to export: selection left no layers")
    net.eval()

    # --- calibration trace -------------------------------------------------
    gen = torch.Generator().manual_seed(seed * 104729 + 3)
    with torch.no_grad():
        x, _ = toy_batch(gen, calib_batch, input_hw)
        if net.c0 != 1:  # the toy task is single-channel; widen for other nets
            x = x.repeat(1, net.c0, 1, 1)
        acts = []
        h = x
        for unit in net.units:
            h = unit(h)
            acts.append(h)
        pooled = h.mean(dim=(2, 3))
        final = net.head(pooled)

    # --- prune and quantize layer by layer ---------------------------------
    layers = []
    blob = bytearray()

    def _pack(lid, kind, c_in, c_out, stride, pad, w_q, b_q, mult, shift, activation):
        entry = {
            "id": lid, "kind": kind, "c_in": c_in, "c_out": c_out,
            "stride": stride, "pad": pad,
            "quant": {"mult": mult, "shift": shift, "activation": activation},
        }
        if w_q is not None:
            entry["weights_ref"] = {"offset": len(blob), "length": w_q.size}
            blob.extend(w_q.tobytes())
            entry["bias_ref"] = {"offset": len(blob), "length": b_q.size * 4}
            blob.extend(b_q.tobytes())
        layers.append(entry)

    kept_in = torch.arange(net.c0)
    s_in = _act_scale(x)
    counts = {"dw": 0, "pw": 0, "conv3x3": 0}

    for unit, act in zip(net.units, acts):
        s_out = _act_scale(act)
        idx = counts[unit.kind]
        counts[unit.kind] += 1
        w = _np64(unit.conv.weight)
        b = _np64(unit.conv.bias)
        if unit.kind == "dw":
            keep = kept_in.numpy()
            w, b = w[keep, 0], b[keep]
            lid, kind, c_in, c_out = f"dw{idx}", "dw3x3", len(keep), len(keep)
            stride, pad = unit.stride, 1
        else:
            kept_out = unit.mask.kept_indices()
            if kept_out.numel() == 0:
                raise ExportError(f"unit {idx} ({unit.kind}) kept no channels")
            w = w[kept_out.numpy()][:, kept_in.numpy()]
            b = b[kept_out.numpy()]
            c_in, c_out = int(kept_in.numel()), int(kept_out.numel())
            kept_in = kept_out
            if unit.kind == "pw":
                lid, kind, stride, pad = f"pw{idx}", "pw", 1, 0
                w = w[..., 0, 0]
            else:
                lid, kind, stride, pad = f"conv{idx}", "conv3x3", 1, 1
        s_w = _weight_scale(w)
        mult, shift = _fold(s_in * s_w / s_out)
        _pack(lid, kind, c_in, c_out, stride, pad,
              _quant_weights(w, s_w), _quant_bias(b, s_in * s_w),
              mult, shift, "relu")
        s_in = s_out

    c_last = int(kept_in.numel())
    s_pool = _act_scale(pooled[:, kept_in])
    mult, shift = _fold(s_in / s_pool)
    _pack("pool", "avgpool_global", c_last, c_last, 1, 0, None, None,
          mult, shift, "none")

    w = _np64(net.head.weight)[:, kept_in.numpy()]
    b = _np64(net.head.bias)
    s_w = _weight_scale(w)
    mult, shift = _fold(s_pool * s_w / _act_scale(final))
    _pack("fc", "linear", c_last, net.head.out_features, 1, 0,
          _quant_weights(w, s_w), _quant_bias(b, s_pool * s_w),
          mult, shift, "none")

    # --- write artifacts ----------------------------------------------------
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    doc = {
        "name": name,
        "input": {"h": input_hw, "w": input_hw, "c": net.c0, "layout": "HWC"},
        "layers": layers,
        "weights_file": f"{name}.bin",
    }
    manifest_path = out_dir / f"{name}.json"
    blob_path = out_dir / f"{name}.bin"
    manifest_path.write_text(json.dumps(doc, indent=2) + "\n")
    blob_path.write_bytes(bytes(blob))
    weight_params = sum(
        lay["weights_ref"]["length"] for lay in layers if "weights_ref" in lay)
    return {
        "manifest": str(manifest_path),
        "blob": str(blob_path),
        "weight_params": weight_params,
        "n_layers": len(layers),
    }
