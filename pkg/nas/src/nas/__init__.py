"""Differentiable architecture search over a MobileNet-style blueprint.

Two gradient-based stages: branch selection across per-block alternatives
(softmax-mixed supernet), then structured channel pruning with binary
trainable masks. The result exports as an int8 manifest + weight blob in
the inference engine's interchange format.
"""

from .blocks import (
    BRANCH_KINDS,
    ChannelMask,
    DwPw,
    SupernetBlock,
    binarize,
    branch_weight_count,
)
from .data import toy_batch
from .export import ExportError, export_manifest
from .model import BlockSpec, PitNet, SearchNet, default_blueprint, select_architecture
from .train import NasConfig, TrainingDiverged, nas_loss, train

__version__ = "0.1.0"

__all__ = [
    "BRANCH_KINDS",
    "BlockSpec",
    "ChannelMask",
    "DwPw",
    "ExportError",
    "NasConfig",
    "PitNet",
    "SearchNet",
    "SupernetBlock",
    "TrainingDiverged",
    "binarize",
    "branch_weight_count",
    "default_blueprint",
    "export_manifest",
    "nas_loss",
    "select_architecture",
    "toy_batch",
    "train",
]
