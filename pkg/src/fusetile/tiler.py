"""Tile planner: choose tile shape, loop order, and fused batch per node.

Tiling dimensions are output rows and output channels; input channels are
never tiled, so every tile is accumulator-complete in L1 (no partial sums
round-tripping through L2). Halo rows are re-fetched per tile rather than
cached. The planner searches the full (rows_out, k_tile, loop order, pinning,
fused batch) space and keeps the feasible plan with the fewest predicted
load+store+reorder bytes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

from .errors import ConfigError, PlanInfeasible, ShapeError
from .memsim import MemoryConfig, TrafficLedger, check_fit
from .netir import LayerDesc, TensorShape

LOOP_ORDERS = ("k_outer", "spatial_outer")

# Weights below this fraction of L1 may be pinned resident across all tiles.
PIN_FRACTION = 0.05

FB_DEFAULT = 8


@dataclass(frozen=True)
class RowSpan:
    y0: int        # first output row of the tile
    rows_out: int  # output rows produced by the tile
    in_lo: int     # first real input row loaded
    in_rows: int   # real input rows loaded (halo included, padding excluded)
    pad_top: int
    pad_bottom: int


@dataclass(frozen=True)
class NodeGeom:
    """Byte/shape geometry of one execution node (single layer or fused pair)."""

    kind: str      # layer kind, or "fused"
    h: int
    w: int
    c_in: int
    k: int
    stride: int
    pad: int
    oh: int
    ow: int
    ksize: int     # spatial window: 3 conv/dw/fused, 1 pw/linear, 0 avgpool
    sliced_input: bool  # input channels follow the output-channel tile
    unit_w: int    # weight bytes per output channel
    unit_b: int    # bias bytes per output channel

    @property
    def weight_bytes(self) -> int:
        return self.k * self.unit_w

    @property
    def bias_bytes(self) -> int:
        return self.k * self.unit_b

    @property
    def wb_total(self) -> int:
        return self.weight_bytes + self.bias_bytes

    @property
    def out_bytes(self) -> int:
        return self.oh * self.ow * self.k

    def in_channels_per_tile(self, kt: int) -> int:
        return kt if self.sliced_input else self.c_in

    def row_spans(self, rows_out: int) -> list[RowSpan]:
        """Row tiles covering the output exactly once, with clipped halo."""
        if self.ksize == 0:  # global pooling reads the whole plane once
            return [RowSpan(0, 1, 0, self.h, 0, 0)]
        spans = []
        y0 = 0
        while y0 < self.oh:
            rt = min(rows_out, self.oh - y0)
            if self.ksize == 1:
                spans.append(RowSpan(y0, rt, y0, rt, 0, 0))
            else:
                lo = y0 * self.stride - self.pad
                hi = lo + (rt - 1) * self.stride + 3
                real_lo = max(lo, 0)
                real_hi = min(hi, self.h)
                spans.append(RowSpan(y0, rt, real_lo, real_hi - real_lo,
                                     real_lo - lo, hi - real_hi))
            y0 += rt
        return spans

    def k_slices(self, k_tile: int) -> list[tuple[int, int]]:
        return [(k0, min(k0 + k_tile, self.k)) for k0 in range(0, self.k, k_tile)]


def make_geom(layer: LayerDesc, in_shape: TensorShape,
              fuse_next: LayerDesc | None = None) -> NodeGeom:
    h, w, c = in_shape.h, in_shape.w, in_shape.c
    if layer.c_in != c:
        raise ShapeError(f"layer {layer.id!r}: c_in={layer.c_in} but input has {c} channels")
    if fuse_next is not None:
        if layer.kind != "pw" or fuse_next.kind != "dw3x3":
            raise ShapeError("only pw followed by dw3x3 can fuse")
        if layer.c_out != fuse_next.c_in:
            raise ShapeError("fused pair has mismatched channel counts")
        dw = fuse_next
        oh = (h + 2 * dw.pad - 3) // dw.stride + 1
        ow = (w + 2 * dw.pad - 3) // dw.stride + 1
        return NodeGeom("fused", h, w, c, dw.c_out, dw.stride, dw.pad, oh, ow,
                        ksize=3, sliced_input=False, unit_w=c + 9, unit_b=8)
    kind = layer.kind
    if kind == "conv3x3":
        oh = (h + 2 * layer.pad - 3) // layer.stride + 1
        ow = (w + 2 * layer.pad - 3) // layer.stride + 1
        return NodeGeom(kind, h, w, c, layer.c_out, layer.stride, layer.pad, oh, ow,
                        ksize=3, sliced_input=False, unit_w=9 * c, unit_b=4)
    if kind == "dw3x3":
        oh = (h + 2 * layer.pad - 3) // layer.stride + 1
        ow = (w + 2 * layer.pad - 3) // layer.stride + 1
        return NodeGeom(kind, h, w, c, layer.c_out, layer.stride, layer.pad, oh, ow,
                        ksize=3, sliced_input=True, unit_w=9, unit_b=4)
    if kind == "pw":
        return NodeGeom(kind, h, w, c, layer.c_out, 1, 0, h, w,
                        ksize=1, sliced_input=False, unit_w=c, unit_b=4)
    if kind == "linear":
        if h != 1 or w != 1:
            raise ShapeError(f"layer {layer.id!r}: linear requires 1x1 input")
        return NodeGeom(kind, 1, 1, c, layer.c_out, 1, 0, 1, 1,
                        ksize=1, sliced_input=False, unit_w=c, unit_b=4)
    if kind == "avgpool_global":
        return NodeGeom(kind, h, w, c, c, 1, 0, 1, 1,
                        ksize=0, sliced_input=True, unit_w=0, unit_b=0)
    raise ShapeError(f"cannot build geometry for kind {kind!r}")


@dataclass(frozen=True)
class TilePlan:
    target: str | tuple[str, str]
    kind: str
    rows_out: int
    k_tile: int
    fb: int | None
    loop_order: str
    pin_weights: bool
    n_tiles: int
    rows_in: int          # largest real-input-row count over the tiles
    footprint_bytes: int  # effective (double-buffer copies included)
    predicted: TrafficLedger

    @property
    def fused(self) -> bool:
        return self.kind == "fused"

    def to_dict(self) -> dict:
        return {
            "target": list(self.target) if isinstance(self.target, tuple) else self.target,
            "kind": self.kind,
            "rows_out": self.rows_out,
            "k_tile": self.k_tile,
            "fb": self.fb,
            "loop_order": self.loop_order,
            "pin_weights": self.pin_weights,
            "n_tiles": self.n_tiles,
            "rows_in": self.rows_in,
            "footprint_bytes": self.footprint_bytes,
            "predicted": self.predicted.to_dict(),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "TilePlan":
        target = doc["target"]
        if isinstance(target, list):
            target = tuple(target)
        if doc["loop_order"] not in LOOP_ORDERS:
            raise ConfigError(f"unknown loop order {doc['loop_order']!r}")
        return cls(
            target=target,
            kind=doc["kind"],
            rows_out=doc["rows_out"],
            k_tile=doc["k_tile"],
            fb=doc["fb"],
            loop_order=doc["loop_order"],
            pin_weights=doc["pin_weights"],
            n_tiles=doc["n_tiles"],
            rows_in=doc["rows_in"],
            footprint_bytes=doc["footprint_bytes"],
            predicted=TrafficLedger.from_dict(doc["predicted"]),
        )


def buffer_sizes(geom: NodeGeom, rows_out: int, k_tile: int, fb: int | None,
                 pin_weights: bool) -> dict[str, int]:
    """Byte size of each L1 buffer for one tile phase.

    The executor allocates exactly these, so planner footprints and runtime
    arena peaks agree by construction.
    """
    spans = geom.row_spans(rows_out)
    rows_in = max(s.in_rows for s in spans)
    if pin_weights:
        w_tile = geom.wb_total
    else:
        w_tile = k_tile * (geom.unit_w + geom.unit_b)
    return {
        "in": rows_in * geom.w * geom.in_channels_per_tile(k_tile),
        "weights": w_tile,
        "out": min(rows_out, geom.oh) * geom.ow * k_tile,
        "mid": rows_in * geom.w * fb if geom.kind == "fused" else 0,
    }


def footprint(geom: NodeGeom, rows_out: int, k_tile: int, fb: int | None,
              pin_weights: bool) -> tuple[int, int]:
    """(single-copy footprint, streamed portion) in bytes for one tile phase.

    Streamed = input tile + output tile; those double under double buffering.
    Weights and the fused intermediate buffer are resident per phase.
    """
    sizes = buffer_sizes(geom, rows_out, k_tile, fb, pin_weights)
    streamed = sizes["in"] + sizes["out"]
    return sum(sizes.values()), streamed


def predict_traffic(plan: TilePlan, geom: NodeGeom) -> TrafficLedger:
    """Closed-form traffic for a plan; the executor's ledger must equal this.

    spatial_outer keeps the input tile resident while the inner channel loop
    streams weight slices (weights reloaded once per spatial tile per k-tile);
    k_outer keeps the weight slice resident while input tiles stream (input
    rows reloaded once per k-tile). Halo rows are re-fetched either way.
    Channel-sliced kinds (dw3x3, global pooling) load only the channels of
    the current k-tile, so their input traffic does not multiply. Output is
    stored exactly once. Unfused dw3x3 pays one reorder pass per loaded input
    tile; fused nodes move no intermediate bytes and reorder nothing.
    """
    spans = geom.row_spans(plan.rows_out)
    n_row_tiles = len(spans)
    n_k_tiles = len(geom.k_slices(plan.k_tile))
    row_bytes = sum(s.in_rows for s in spans) * geom.w
    in_once = row_bytes * (geom.k if geom.sliced_input else geom.c_in)
    if geom.sliced_input or plan.loop_order == "spatial_outer":
        in_load = in_once
    else:
        in_load = n_k_tiles * in_once
    if plan.pin_weights or plan.loop_order == "k_outer":
        w_load = geom.wb_total
    else:
        w_load = n_row_tiles * geom.wb_total
    reorder = in_load if geom.kind == "dw3x3" else 0
    return TrafficLedger(
        load_bytes=in_load + w_load,
        store_bytes=geom.out_bytes,
        reorder_bytes=reorder,
        peak_l1_bytes=plan.footprint_bytes,
    )


def plan_layer(layer: LayerDesc, in_shape: TensorShape, cfg: MemoryConfig,
               fuse_next: LayerDesc | None = None,
               fb_candidates: list[int] | None = None) -> TilePlan:
    """Exhaustively search tile shapes and return the cheapest feasible plan.

    Objective: predicted load+store+reorder bytes. Ties break toward larger
    rows_out, then larger k_tile, then k_outer. Raises PlanInfeasible when no
    tile fits the L1 budget.
    """
    geom = make_geom(layer, in_shape, fuse_next)
    target = (layer.id, fuse_next.id) if fuse_next is not None else layer.id
    if geom.kind == "fused":
        fbs = list(fb_candidates) if fb_candidates else [min(FB_DEFAULT, geom.k)]
        if any(fb < 1 for fb in fbs):
            raise ConfigError(f"fused batch candidates must be >= 1, got {fbs}")
        fbs = [min(fb, geom.k) for fb in fbs]
    else:
        fbs = [None]
    pin_options = [False]
    if 0 < geom.wb_total < PIN_FRACTION * cfg.l1_bytes:
        pin_options.append(True)

    best = None
    best_key = None
    rows_range = range(1, geom.oh + 1) if geom.ksize != 0 else [1]
    for rows_out in rows_range:
        spans = geom.row_spans(rows_out)
        n_row_tiles = len(spans)
        rows_in = max(s.in_rows for s in spans)
        row_bytes = sum(s.in_rows for s in spans) * geom.w
        in_once = row_bytes * (geom.k if geom.sliced_input else geom.c_in)
        for k_tile in range(1, geom.k + 1):
            n_k_tiles = math.ceil(geom.k / k_tile)
            for pin in pin_options:
                for fb in fbs:
                    fb_eff = min(fb, k_tile) if fb is not None else None
                    fp, streamed = footprint(geom, rows_out, k_tile, fb_eff, pin)
                    if not check_fit(fp, cfg, streamed):
                        continue
                    effective = fp + (streamed if cfg.double_buffer else 0)
                    for order in LOOP_ORDERS:
                        if geom.sliced_input or order == "spatial_outer":
                            in_load = in_once
                        else:
                            in_load = n_k_tiles * in_once
                        if pin or order == "k_outer":
                            w_load = geom.wb_total
                        else:
                            w_load = n_row_tiles * geom.wb_total
                        reorder = in_load if geom.kind == "dw3x3" else 0
                        total = in_load + w_load + geom.out_bytes + reorder
                        key = (total, -rows_out, -k_tile, LOOP_ORDERS.index(order),
                               -(fb_eff or 0), pin)
                        if best_key is None or key < best_key:
                            best_key = key
                            best = (rows_out, k_tile, fb_eff, order, pin,
                                    n_row_tiles * n_k_tiles, rows_in, effective)
    if best is None:
        raise PlanInfeasible(
            f"no tile of {target!r} fits l1_bytes={cfg.l1_bytes}", target=target
        )
    rows_out, k_tile, fb_eff, order, pin, n_tiles, rows_in, effective = best
    plan = TilePlan(
        target=target,
        kind=geom.kind,
        rows_out=rows_out,
        k_tile=k_tile,
        fb=fb_eff,
        loop_order=order,
        pin_weights=pin,
        n_tiles=n_tiles,
        rows_in=rows_in,
        footprint_bytes=effective,
        predicted=TrafficLedger(),
    )
    return replace(plan, predicted=predict_traffic(plan, geom))
