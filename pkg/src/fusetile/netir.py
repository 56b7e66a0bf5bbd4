"""Network intermediate representation: manifest + raw weight blob.

A network is a linear chain of quantized int8 layers described by a JSON
manifest; weights and biases live in a separate little-endian binary blob
addressed by (offset, length) references. The manifest is the interchange
format between the architecture-search exporter and the engine.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import BlobError, SchemaError, ShapeError

LAYOUTS = ("HWC", "CHW")
KINDS = ("conv3x3", "dw3x3", "pw", "linear", "avgpool_global")
ACTIVATIONS = ("none", "relu")

# Layer kinds that carry a weight tensor (all but global average pooling).
WEIGHTED_KINDS = ("conv3x3", "dw3x3", "pw", "linear")


@dataclass(frozen=True)
class TensorShape:
    h: int
    w: int
    c: int
    layout: str = "HWC"

    def __post_init__(self):
        if self.h < 1 or self.w < 1 or self.c < 1:
            raise ShapeError(f"tensor dims must be >= 1, got {self.h}x{self.w}x{self.c}")
        if self.layout not in LAYOUTS:
            raise ShapeError(f"unknown layout {self.layout!r}")

    @property
    def size(self) -> int:
        return self.h * self.w * self.c


@dataclass(frozen=True)
class QuantParams:
    mult: int
    shift: int
    activation: str = "none"

    def __post_init__(self):
        if self.mult < 1:
            raise SchemaError(f"quant mult must be >= 1, got {self.mult}")
        if not 0 <= self.shift <= 31:
            raise SchemaError(f"quant shift must be in [0, 31], got {self.shift}")
        if self.activation not in ACTIVATIONS:
            raise SchemaError(f"unknown activation {self.activation!r}")


IDENTITY_QUANT = QuantParams(mult=1, shift=0, activation="none")


@dataclass(frozen=True)
class BlobRef:
    offset: int
    length: int

    def __post_init__(self):
        if self.offset < 0 or self.length < 0:
            raise BlobError(f"negative blob ref ({self.offset}, {self.length})")

    @property
    def end(self) -> int:
        return self.offset + self.length


@dataclass(frozen=True)
class LayerDesc:
    id: str
    kind: str
    c_in: int
    c_out: int
    stride: int = 1
    pad: int = 0
    quant: QuantParams = IDENTITY_QUANT
    weights_ref: BlobRef | None = None
    bias_ref: BlobRef | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise SchemaError(f"layer {self.id!r}: unknown kind {self.kind!r}")
        if self.c_in < 1 or self.c_out < 1:
            raise ShapeError(f"layer {self.id!r}: channel counts must be >= 1")
        if self.stride not in (1, 2):
            raise ShapeError(f"layer {self.id!r}: stride must be 1 or 2")
        if self.pad not in (0, 1):
            raise ShapeError(f"layer {self.id!r}: pad must be 0 or 1")
        if self.kind == "dw3x3" and self.c_in != self.c_out:
            raise ShapeError(f"layer {self.id!r}: dw3x3 requires c_in == c_out")
        if self.kind == "avgpool_global" and self.c_in != self.c_out:
            raise ShapeError(f"layer {self.id!r}: avgpool_global requires c_in == c_out")
        if self.kind in ("pw", "linear", "avgpool_global") and (self.stride != 1 or self.pad != 0):
            raise ShapeError(f"layer {self.id!r}: {self.kind} requires stride == 1 and pad == 0")
        if self.kind in WEIGHTED_KINDS:
            if self.weights_ref is None or self.bias_ref is None:
                raise SchemaError(f"layer {self.id!r}: {self.kind} requires weights_ref and bias_ref")
        else:
            if self.weights_ref is not None or self.bias_ref is not None:
                raise SchemaError(f"layer {self.id!r}: {self.kind} takes no weight/bias refs")

    @property
    def weight_count(self) -> int:
        return weight_length(self.kind, self.c_in, self.c_out)

    @property
    def bias_count(self) -> int:
        return bias_length(self.kind, self.c_out)


@dataclass(frozen=True)
class NetworkManifest:
    name: str
    input: TensorShape
    layers: tuple[LayerDesc, ...]
    weights_file: str = "weights.bin"

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        if not self.layers:
            raise SchemaError("manifest must contain at least one layer")
        seen = set()
        for layer in self.layers:
            if layer.id in seen:
                raise SchemaError(f"duplicate layer id {layer.id!r}")
            seen.add(layer.id)

    def layer_by_id(self, layer_id: str) -> LayerDesc:
        for layer in self.layers:
            if layer.id == layer_id:
                return layer
        raise KeyError(layer_id)


def weight_length(kind: str, c_in: int, c_out: int) -> int:
    """Weight byte count for a layer kind (int8, one byte per weight)."""
    if kind == "conv3x3":
        return c_out * c_in * 9
    if kind == "dw3x3":
        return c_in * 9
    if kind in ("pw", "linear"):
        return c_out * c_in
    return 0


def bias_length(kind: str, c_out: int) -> int:
    """Bias byte count (int32 per output channel)."""
    return 4 * c_out if kind in WEIGHTED_KINDS else 0


def propagate_shapes(net: NetworkManifest) -> list[TensorShape]:
    """Per-layer output shapes obtained by walking the chain.

    conv3x3/dw3x3: floor((dim + 2*pad - 3)/stride) + 1 on both spatial axes;
    pw keeps spatial dims; avgpool_global reduces to 1x1; linear requires a
    1x1 input and maps channels.
    """
    shapes = []
    cur = net.input
    for layer in net.layers:
        if layer.c_in != cur.c:
            raise ShapeError(
                f"layer {layer.id!r}: expects c_in={layer.c_in} but gets {cur.c} channels"
            )
        if layer.kind in ("conv3x3", "dw3x3"):
            oh = (cur.h + 2 * layer.pad - 3) // layer.stride + 1
            ow = (cur.w + 2 * layer.pad - 3) // layer.stride + 1
            if oh < 1 or ow < 1:
                raise ShapeError(f"layer {layer.id!r}: output dims {oh}x{ow} collapse below 1")
            cur = TensorShape(oh, ow, layer.c_out)
        elif layer.kind == "pw":
            cur = TensorShape(cur.h, cur.w, layer.c_out)
        elif layer.kind == "avgpool_global":
            cur = TensorShape(1, 1, cur.c)
        elif layer.kind == "linear":
            if cur.h != 1 or cur.w != 1:
                raise ShapeError(f"layer {layer.id!r}: linear requires a 1x1 spatial input")
            cur = TensorShape(1, 1, layer.c_out)
        shapes.append(cur)
    return shapes


def validate_blob(net: NetworkManifest, blob: bytes) -> None:
    """Check every ref lies in the blob, matches its kind's length formula,
    and that refs tile the blob exactly (no overlap, no slack)."""
    refs = []
    for layer in net.layers:
        if layer.kind not in WEIGHTED_KINDS:
            continue
        wref, bref = layer.weights_ref, layer.bias_ref
        if wref.length != layer.weight_count:
            raise BlobError(
                f"layer {layer.id!r}: weight length {wref.length} != expected {layer.weight_count}"
            )
        if bref.length != layer.bias_count:
            raise BlobError(
                f"layer {layer.id!r}: bias length {bref.length} != expected {layer.bias_count}"
            )
        refs.extend([(wref, layer.id), (bref, layer.id)])
    total = 0
    for ref, lid in refs:
        if ref.end > len(blob):
            raise BlobError(f"layer {lid!r}: ref [{ref.offset}, {ref.end}) outside blob of {len(blob)} bytes")
        total += ref.length
    ordered = sorted((ref for ref, _ in refs), key=lambda r: r.offset)
    for a, b in zip(ordered, ordered[1:]):
        if a.end > b.offset:
            raise BlobError(f"overlapping blob refs at offsets {a.offset} and {b.offset}")
    if total != len(blob):
        raise BlobError(f"blob holds {len(blob)} bytes but refs cover {total}")


def validate_manifest(net: NetworkManifest, blob: bytes) -> None:
    propagate_shapes(net)
    validate_blob(net, blob)


# --- JSON document <-> manifest -------------------------------------------

def _expect(obj, keys, what):
    if not isinstance(obj, dict):
        raise SchemaError(f"{what} must be an object, got {type(obj).__name__}")
    missing = [k for k in keys if k not in obj]
    if missing:
        raise SchemaError(f"{what} missing fields {missing}")


def _int(obj, key, what):
    v = obj[key]
    if isinstance(v, bool) or not isinstance(v, int):
        raise SchemaError(f"{what}.{key} must be an integer")
    return v


def _str(obj, key, what):
    v = obj[key]
    if not isinstance(v, str):
        raise SchemaError(f"{what}.{key} must be a string")
    return v


def _parse_ref(obj, key, what):
    if key not in obj:
        return None
    doc = obj[key]
    _expect(doc, ("offset", "length"), f"{what}.{key}")
    if set(doc) != {"offset", "length"}:
        raise SchemaError(f"{what}.{key} has unknown fields")
    return BlobRef(_int(doc, "offset", key), _int(doc, "length", key))


def _parse_layer(doc, idx):
    what = f"layers[{idx}]"
    _expect(doc, ("id", "kind", "c_in", "c_out", "stride", "pad", "quant"), what)
    allowed = {"id", "kind", "c_in", "c_out", "stride", "pad", "quant", "weights_ref", "bias_ref"}
    unknown = set(doc) - allowed
    if unknown:
        raise SchemaError(f"{what} has unknown fields {sorted(unknown)}")
    qdoc = doc["quant"]
    _expect(qdoc, ("mult", "shift", "activation"), f"{what}.quant")
    if set(qdoc) != {"mult", "shift", "activation"}:
        raise SchemaError(f"{what}.quant has unknown fields")
    quant = QuantParams(
        mult=_int(qdoc, "mult", "quant"),
        shift=_int(qdoc, "shift", "quant"),
        activation=_str(qdoc, "activation", "quant"),
    )
    return LayerDesc(
        id=_str(doc, "id", what),
        kind=_str(doc, "kind", what),
        c_in=_int(doc, "c_in", what),
        c_out=_int(doc, "c_out", what),
        stride=_int(doc, "stride", what),
        pad=_int(doc, "pad", what),
        quant=quant,
        weights_ref=_parse_ref(doc, "weights_ref", what),
        bias_ref=_parse_ref(doc, "bias_ref", what),
    )


def parse_manifest(text: str, blob: bytes) -> NetworkManifest:
    """Parse and fully validate a manifest document against its weight blob."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise SchemaError(f"manifest is not valid JSON: {e}") from e
    _expect(doc, ("name", "input", "layers", "weights_file"), "manifest")
    if set(doc) != {"name", "input", "layers", "weights_file"}:
        raise SchemaError(f"manifest has unknown fields {sorted(set(doc) - {'name', 'input', 'layers', 'weights_file'})}")
    idoc = doc["input"]
    _expect(idoc, ("h", "w", "c", "layout"), "input")
    if set(idoc) != {"h", "w", "c", "layout"}:
        raise SchemaError("input has unknown fields")
    input_shape = TensorShape(
        h=_int(idoc, "h", "input"),
        w=_int(idoc, "w", "input"),
        c=_int(idoc, "c", "input"),
        layout=_str(idoc, "layout", "input"),
    )
    if not isinstance(doc["layers"], list):
        raise SchemaError("layers must be a list")
    layers = [_parse_layer(ldoc, i) for i, ldoc in enumerate(doc["layers"])]
    net = NetworkManifest(
        name=_str(doc, "name", "manifest"),
        input=input_shape,
        layers=tuple(layers),
        weights_file=_str(doc, "weights_file", "manifest"),
    )
    validate_manifest(net, blob)
    return net


def serialize_manifest(net: NetworkManifest) -> str:
    """Canonical JSON form: fixed key order, 2-space indent, trailing newline."""
    def ref_doc(ref):
        return {"offset": ref.offset, "length": ref.length}

    layers = []
    for layer in net.layers:
        doc = {
            "id": layer.id,
            "kind": layer.kind,
            "c_in": layer.c_in,
            "c_out": layer.c_out,
            "stride": layer.stride,
            "pad": layer.pad,
            "quant": {
                "mult": layer.quant.mult,
                "shift": layer.quant.shift,
                "activation": layer.quant.activation,
            },
        }
        if layer.weights_ref is not None:
            doc["weights_ref"] = ref_doc(layer.weights_ref)
            doc["bias_ref"] = ref_doc(layer.bias_ref)
        layers.append(doc)
    doc = {
        "name": net.name,
        "input": {
            "h": net.input.h,
            "w": net.input.w,
            "c": net.input.c,
            "layout": net.input.layout,
        },
        "layers": layers,
        "weights_file": net.weights_file,
    }
    return json.dumps(doc, indent=2) + "\n"


def load_network(manifest_path: str) -> tuple[NetworkManifest, bytes]:
    """Read a manifest file and its weight blob (path relative to the manifest)."""
    with open(manifest_path, "r") as f:
        text = f.read()
    try:
        doc = json.loads(text)
        blob_name = doc["weights_file"]
    except (json.JSONDecodeError, KeyError, TypeError) as e:
        raise SchemaError(f"cannot locate weights_file in {manifest_path}: {e}") from e
    if not isinstance(blob_name, str):
        raise SchemaError("weights_file must be a string")
    blob_path = os.path.join(os.path.dirname(os.path.abspath(manifest_path)), blob_name)
    with open(blob_path, "rb") as f:
        blob = f.read()
    return parse_manifest(text, blob), blob


def save_network(net: NetworkManifest, blob: bytes, manifest_path: str) -> None:
    with open(manifest_path, "w") as f:
        f.write(serialize_manifest(net))
    blob_path = os.path.join(os.path.dirname(os.path.abspath(manifest_path)), net.weights_file)
    with open(blob_path, "wb") as f:
        f.write(blob)


def decode_weights(layer: LayerDesc, blob: bytes) -> tuple[np.ndarray, np.ndarray]:
    """Decode a layer's int8 weights (shaped per kind) and int32 biases."""
    if layer.kind not in WEIGHTED_KINDS:
        raise ShapeError(f"layer {layer.id!r}: {layer.kind} has no weights")
    wref, bref = layer.weights_ref, layer.bias_ref
    w = np.frombuffer(blob, dtype=np.int8, count=wref.length, offset=wref.offset)
    if layer.kind == "conv3x3":
        w = w.reshape(layer.c_out, layer.c_in, 3, 3)
    elif layer.kind == "dw3x3":
        w = w.reshape(layer.c_in, 3, 3)
    else:
        w = w.reshape(layer.c_out, layer.c_in)
    bias = np.frombuffer(blob, dtype="<i4", count=layer.c_out, offset=bref.offset)
    return w, bias.astype(np.int32)


class BlobBuilder:
    """Append-only builder producing exactly-packed weight blobs."""

    def __init__(self):
        self._chunks = []
        self._size = 0

    def append(self, data: bytes) -> BlobRef:
        ref = BlobRef(self._size, len(data))
        self._chunks.append(bytes(data))
        self._size += len(data)
        return ref

    def append_weights(self, w: np.ndarray) -> BlobRef:
        return self.append(np.ascontiguousarray(w, dtype=np.int8).tobytes())

    def append_bias(self, bias: np.ndarray) -> BlobRef:
        return self.append(np.ascontiguousarray(bias, dtype="<i4").tobytes())

    def blob(self) -> bytes:
        return b"".join(self._chunks)
