"""Quantized CNN deployment engine: layer fusion, L1 tiling, traffic modeling.

int8 inference for depthwise-separable networks on scratchpad-memory targets.
The engine plans row/channel tiles under an L1 byte budget, fuses pointwise
into depthwise convolutions to keep intermediates out of L2, and predicts
load/store/reorder traffic that the instrumented executor reproduces exactly.
"""

from .errors import (
    BlobError,
    ConfigError,
    EngineError,
    PlanInfeasible,
    SchemaError,
    ShapeError,
)
from .kernels import (
    FusedConfig,
    KernelStats,
    avgpool_global,
    conv3x3,
    dw_conv3x3,
    fused_pw_dw,
    layout_convert,
    linear,
    pw_conv,
    requantize,
)
from .memsim import (
    L1_BYTES_DEFAULT,
    L2_BYTES_DEFAULT,
    L1Arena,
    MemoryConfig,
    TrafficLedger,
    check_fit,
    record_transfer,
)
from .netir import (
    IDENTITY_QUANT,
    KINDS,
    BlobBuilder,
    BlobRef,
    LayerDesc,
    NetworkManifest,
    QuantParams,
    TensorShape,
    decode_weights,
    load_network,
    parse_manifest,
    propagate_shapes,
    save_network,
    serialize_manifest,
    validate_manifest,
)
from .runtime import (
    ExecNode,
    ExecutionGraph,
    TrafficReport,
    execute,
    fusion_pass,
    golden_execute,
    plan_graph,
    predicted_report,
)
from .tiler import FB_DEFAULT, NodeGeom, TilePlan, make_geom, plan_layer, predict_traffic

__version__ = "0.1.0"
