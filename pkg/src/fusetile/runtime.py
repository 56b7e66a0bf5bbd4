"""Execution graphs: fusion pass, per-node planning, tiled executor, golden path.

L2 activations always live in HWC. Depthwise tiles are reordered to CHW on
the way into L1 (billed as reorder bytes); a fused node computes its CHW
intermediate directly from the pointwise stage and reorders nothing. The
executor records every simulated transfer tile by tile; its per-node ledger
must equal the planner's closed-form prediction exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import ConfigError, ShapeError
from .kernels import FusedConfig
from .memsim import L1Arena, MemoryConfig, TrafficLedger, record_transfer
from .netir import (
    WEIGHTED_KINDS,
    LayerDesc,
    NetworkManifest,
    TensorShape,
    decode_weights,
    propagate_shapes,
)
from .tiler import (
    NodeGeom,
    TilePlan,
    buffer_sizes,
    make_geom,
    plan_layer,
    predict_traffic,
)


@dataclass
class ExecNode:
    """One schedulable unit: a single layer or a fused pw+dw pair."""

    layers: tuple[LayerDesc, ...]
    in_shape: TensorShape
    out_shape: TensorShape
    plan: TilePlan | None = None

    @property
    def fused(self) -> bool:
        return len(self.layers) == 2

    @property
    def kind(self) -> str:
        return "fused" if self.fused else self.layers[0].kind

    @property
    def target(self) -> str | tuple[str, str]:
        if self.fused:
            return (self.layers[0].id, self.layers[1].id)
        return self.layers[0].id


@dataclass
class ExecutionGraph:
    net: NetworkManifest
    nodes: list[ExecNode]


def fusion_pass(net: NetworkManifest, enable: bool = True) -> ExecutionGraph:
    """Greedy left-to-right fusion: pw immediately followed by dw3x3 merges.

    Every manifest layer lands in exactly one node and node order preserves
    layer order; with enable=False each layer becomes its own node.
    """
    shapes = propagate_shapes(net)
    in_shapes = [net.input] + shapes[:-1]
    nodes: list[ExecNode] = []
    i = 0
    while i < len(net.layers):
        layer = net.layers[i]
        if (enable and layer.kind == "pw" and i + 1 < len(net.layers)
                and net.layers[i + 1].kind == "dw3x3"):
            nodes.append(ExecNode((layer, net.layers[i + 1]), in_shapes[i], shapes[i + 1]))
            i += 2
        else:
            nodes.append(ExecNode((layer,), in_shapes[i], shapes[i]))
            i += 1
    return ExecutionGraph(net, nodes)


def plan_graph(graph: ExecutionGraph, cfg: MemoryConfig,
               fb_candidates: list[int] | None = None) -> ExecutionGraph:
    """Attach the cheapest feasible TilePlan to every node in place."""
    for node in graph.nodes:
        fuse_next = node.layers[1] if node.fused else None
        node.plan = plan_layer(node.layers[0], node.in_shape, cfg,
                               fuse_next=fuse_next, fb_candidates=fb_candidates)
    return graph


def node_macs(geom: NodeGeom) -> int:
    """Logical multiply-accumulates of a node; fusion never changes the sum."""
    if geom.kind == "fused":
        return geom.h * geom.w * geom.c_in * geom.k + geom.oh * geom.ow * geom.k * 9
    if geom.kind == "conv3x3":
        return geom.oh * geom.ow * geom.k * geom.c_in * 9
    if geom.kind == "dw3x3":
        return geom.oh * geom.ow * geom.k * 9
    if geom.kind == "pw":
        return geom.oh * geom.ow * geom.k * geom.c_in
    if geom.kind == "linear":
        return geom.k * geom.c_in
    return geom.h * geom.w * geom.c_in  # avgpool_global


@dataclass
class NodeReport:
    target: str | tuple[str, str]
    kind: str
    n_tiles: int
    macs: int
    ledger: TrafficLedger

    def to_dict(self) -> dict:
        return {
            "target": list(self.target) if isinstance(self.target, tuple) else self.target,
            "kind": self.kind,
            "n_tiles": self.n_tiles,
            "macs": self.macs,
            "traffic": self.ledger.to_dict(),
        }


@dataclass
class TrafficReport:
    nodes: list[NodeReport]

    def totals(self) -> TrafficLedger:
        total = TrafficLedger()
        for node in self.nodes:
            total.merge(node.ledger)
        return total

    @property
    def total_macs(self) -> int:
        return sum(node.macs for node in self.nodes)

    def to_dict(self) -> dict:
        return {
            "nodes": [node.to_dict() for node in self.nodes],
            "totals": self.totals().to_dict(),
            "total_macs": self.total_macs,
        }


def _weights_of(node: ExecNode, blob: bytes):
    """Per-layer (weights, bias, quant) triples for a node."""
    params = []
    for layer in node.layers:
        if layer.kind in WEIGHTED_KINDS:
            w, b = decode_weights(layer, blob)
        else:
            w, b = None, None
        params.append((w, b, layer.quant))
    return params


def _run_node(node: ExecNode, x: np.ndarray, blob: bytes, arena: L1Arena,
              cfg: MemoryConfig) -> tuple[np.ndarray, NodeReport]:
    plan = node.plan
    fuse_next = node.layers[1] if node.fused else None
    geom = make_geom(node.layers[0], node.in_shape, fuse_next)
    spans = geom.row_spans(plan.rows_out)
    kslices = geom.k_slices(plan.k_tile)
    sizes = buffer_sizes(geom, plan.rows_out, plan.k_tile, plan.fb, plan.pin_weights)

    arena.free_all()
    copies = 2 if cfg.double_buffer else 1
    for i in range(copies):
        arena.alloc(f"in{i}", sizes["in"])
        arena.alloc(f"out{i}", sizes["out"])
    arena.alloc("weights", sizes["weights"])
    if sizes["mid"]:
        arena.alloc("mid", sizes["mid"])
    footprint = arena.current

    params = _weights_of(node, blob)
    out = np.empty((geom.oh, geom.ow, geom.k), dtype=np.int8)
    ledger = TrafficLedger(peak_l1_bytes=footprint)
    sliced = geom.sliced_input
    unit = geom.unit_w + geom.unit_b

    def in_bytes(span, k0, k1):
        return span.in_rows * geom.w * ((k1 - k0) if sliced else geom.c_in)

    def run_tile(span, k0, k1):
        y0, rt = span.y0, span.rows_out
        lo, hi = span.in_lo, span.in_lo + span.in_rows
        pad4 = (span.pad_top, span.pad_bottom, geom.pad, geom.pad)
        if geom.kind == "pw":
            w, b, q = params[0]
            tile, _ = kernels.pw_conv(x[lo:hi], w[k0:k1], b[k0:k1], q)
            out[y0:y0 + rt, :, k0:k1] = tile
        elif geom.kind == "conv3x3":
            w, b, q = params[0]
            tile, _ = kernels.conv3x3(x[lo:hi], w[k0:k1], b[k0:k1],
                                      geom.stride, pad4, q)
            out[y0:y0 + rt, :, k0:k1] = tile
        elif geom.kind == "dw3x3":
            w, b, q = params[0]
            chw, stats = kernels.layout_convert(x[lo:hi, :, k0:k1], "HWC", "CHW")
            record_transfer(ledger, "reorder", stats.bytes_touched)
            tile, _ = kernels.dw_conv3x3(chw, w[k0:k1], b[k0:k1], geom.stride, pad4, q)
            out[y0:y0 + rt, :, k0:k1] = tile.transpose(1, 2, 0)
        elif geom.kind == "fused":
            pw_w, pw_b, pw_q = params[0]
            dw_w, dw_b, dw_q = params[1]
            fb = min(plan.fb, k1 - k0)
            tile, _ = kernels.fused_pw_dw(x[lo:hi], pw_w[k0:k1], pw_b[k0:k1], pw_q,
                                          dw_w[k0:k1], dw_b[k0:k1], dw_q,
                                          geom.stride, pad4, FusedConfig(fb))
            out[y0:y0 + rt, :, k0:k1] = tile.transpose(1, 2, 0)
        elif geom.kind == "linear":
            w, b, q = params[0]
            vec, _ = kernels.linear(x, w[k0:k1], b[k0:k1], q)
            out[0, 0, k0:k1] = vec
        else:  # avgpool_global
            tile, _ = kernels.avgpool_global(x[:, :, k0:k1], params[0][2])
            out[0, 0, k0:k1] = tile[0, 0]
        record_transfer(ledger, "store", rt * geom.ow * (k1 - k0))

    if plan.pin_weights:
        record_transfer(ledger, "load", geom.wb_total)
    if plan.loop_order == "k_outer":
        for k0, k1 in kslices:
            if not plan.pin_weights:
                record_transfer(ledger, "load", (k1 - k0) * unit)
            for span in spans:
                record_transfer(ledger, "load", in_bytes(span, k0, k1))
                run_tile(span, k0, k1)
    else:
        for span in spans:
            if not sliced:
                record_transfer(ledger, "load", in_bytes(span, 0, geom.k))
            for k0, k1 in kslices:
                if sliced:
                    record_transfer(ledger, "load", in_bytes(span, k0, k1))
                if not plan.pin_weights:
                    record_transfer(ledger, "load", (k1 - k0) * unit)
                run_tile(span, k0, k1)

    arena.free_all()
    report = NodeReport(node.target, geom.kind, len(spans) * len(kslices),
                        node_macs(geom), ledger)
    return out, report


def execute(graph: ExecutionGraph, blob: bytes, inp: np.ndarray,
            cfg: MemoryConfig) -> tuple[np.ndarray, TrafficReport]:
    """Run a planned graph over one input tensor (HWC int8).

    Returns the output activation and a per-node traffic report. Raises
    PlanInfeasible if any node's buffers overflow L1 at allocation time.
    """
    net = graph.net
    x = np.ascontiguousarray(inp, dtype=np.int8)
    if net.input.layout == "CHW":  # host-side prep, not L1 traffic
        if x.shape != (net.input.c, net.input.h, net.input.w):
            raise ShapeError(f"input shape {x.shape} does not match manifest")
        x = np.ascontiguousarray(x.transpose(1, 2, 0))
    if x.shape != (net.input.h, net.input.w, net.input.c):
        raise ShapeError(f"input shape {x.shape} does not match manifest")
    arena = L1Arena(cfg)
    reports = []
    for node in graph.nodes:
        if node.plan is None:
            raise ConfigError(f"node {node.target!r} has no tile plan")
        x, report = _run_node(node, x, blob, arena, cfg)
        if x.shape != (node.out_shape.h, node.out_shape.w, node.out_shape.c):
            raise ShapeError(
                f"node {node.target!r} produced {x.shape}, expected "
                f"{(node.out_shape.h, node.out_shape.w, node.out_shape.c)}"
            )
        reports.append(report)
    return x, TrafficReport(reports)


def predicted_report(graph: ExecutionGraph) -> TrafficReport:
    """The planner's view of the whole graph, node by node."""
    reports = []
    for node in graph.nodes:
        if node.plan is None:
            raise ConfigError(f"node {node.target!r} has no tile plan")
        fuse_next = node.layers[1] if node.fused else None
        geom = make_geom(node.layers[0], node.in_shape, fuse_next)
        reports.append(NodeReport(node.target, geom.kind, node.plan.n_tiles,
                                  node_macs(geom), node.plan.predicted))
    return TrafficReport(reports)


def golden_execute(net: NetworkManifest, blob: bytes, inp: np.ndarray) -> np.ndarray:
    """Untiled, unfused whole-tensor reference execution."""
    shapes = propagate_shapes(net)
    x = np.ascontiguousarray(inp, dtype=np.int8)
    if net.input.layout == "CHW":
        x = np.ascontiguousarray(x.transpose(1, 2, 0))
    if x.shape != (net.input.h, net.input.w, net.input.c):
        raise ShapeError(f"input shape {x.shape} does not match manifest")
    for layer, out_shape in zip(net.layers, shapes):
        if layer.kind == "pw":
            w, b = decode_weights(layer, blob)
            x, _ = kernels.pw_conv(x, w, b, layer.quant)
        elif layer.kind == "dw3x3":
            w, b = decode_weights(layer, blob)
            chw, _ = kernels.layout_convert(x, "HWC", "CHW")
            y, _ = kernels.dw_conv3x3(chw, w, b, layer.stride, layer.pad, layer.quant)
            x, _ = kernels.layout_convert(y, "CHW", "HWC")
        elif layer.kind == "conv3x3":
            w, b = decode_weights(layer, blob)
            x, _ = kernels.conv3x3(x, w, b, layer.stride, layer.pad, layer.quant)
        elif layer.kind == "linear":
            w, b = decode_weights(layer, blob)
            vec, _ = kernels.linear(x, w, b, layer.quant)
            x = vec.reshape(1, 1, -1)
        else:  # avgpool_global
            x, _ = kernels.avgpool_global(x, layer.quant)
        if x.shape != (out_shape.h, out_shape.w, out_shape.c):
            raise ShapeError(f"layer {layer.id!r} produced {x.shape}")
    return x
