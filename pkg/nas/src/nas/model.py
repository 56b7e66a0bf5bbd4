"""Blueprint network, branch selection, and the pruned discrete chain."""

from dataclasses import dataclass

import torch
from torch import nn

from .blocks import ChannelMask, DwPw, SupernetBlock, branch_weight_count


@dataclass(frozen=True)
class BlockSpec:
    c_in: int
    c_out: int
    stride: int = 1
    searchable: bool = False


def default_blueprint(c0=1, widths=(8, 16, 16, 32, 32, 48),
                      strides=(2, 2, 1, 2, 1, 1)):
    """MobileNet-style chain; stride-1 blocks are searchable."""
    if len(widths) != len(strides):
        raise ValueError("widths and strides must have equal length")
    specs = []
    c = c0
    for width, stride in zip(widths, strides):
        specs.append(BlockSpec(c, width, stride, searchable=(stride == 1)))
        c = width
    return specs


class SearchNet(nn.Module):
    """The full supernet: fixed downsampling blocks + searchable blocks,
    ending in global average pooling and a linear regression head."""

    def __init__(self, specs, c0=1, n_out=4):
        super().__init__()
        if specs[0].c_in != c0:
            raise ValueError("first block must consume the input channels")
        blocks = []
        for spec in specs:
            if spec.searchable:
                if spec.stride != 1:
                    raise ValueError("searchable blocks must have stride 1")
                blocks.append(SupernetBlock(spec.c_in, spec.c_out))
            else:
                blocks.append(DwPw(spec.c_in, spec.c_out, stride=spec.stride))
        self.specs = tuple(specs)
        self.blocks = nn.ModuleList(blocks)
        self.c0 = c0
        self.head = nn.Linear(specs[-1].c_out, n_out)

    def forward(self, x):
        for block in self.blocks:
            x = block(x)
        return self.head(x.mean(dim=(2, 3)))

    def complexity(self):
        """Expected weight count; fixed blocks contribute constants."""
        total = torch.zeros((), dtype=torch.float64)
        for spec, block in zip(self.specs, self.blocks):
            if isinstance(block, SupernetBlock):
                total = total + block.complexity()
            else:
                total = total + branch_weight_count("dw_pw", spec.c_in, spec.c_out)
        return total + self.head.in_features * self.head.out_features


def select_architecture(net: SearchNet):
    """Per-block branch choice; deterministic, fixed blocks stay dw_pw."""
    return tuple(
        block.selected_kind() if isinstance(block, SupernetBlock) else "dw_pw"
        for block in net.blocks
    )


class _Unit(nn.Module):
    """One concrete layer of the discrete chain plus its channel gate.

    dw units preserve channel identity, so they carry the *upstream*
    producer's mask (re-applied because a depthwise conv maps a zeroed
    channel to its bias, not to zero); pw/conv3x3 own a fresh mask.
    """

    def __init__(self, kind, conv, mask, c_in, c_out, stride=1):
        super().__init__()
        self.kind = kind
        self.conv = conv
        self.mask = mask
        self.c_in, self.c_out, self.stride = c_in, c_out, stride

    def forward(self, x):
        y = torch.relu(self.conv(x))
        return self.mask(y) if self.mask is not None else y


class PitNet(nn.Module):
    """The selected chain with trainable channel masks for pruning.

    The final linear head is never masked: the task defines its width.
    """

    def __init__(self, units, head, c0):
        super().__init__()
        self.units = nn.ModuleList(units)
        self.head = head
        self.c0 = c0

    @classmethod
    def from_search(cls, net: SearchNet, selection):
        """Keep only the selected branches, reusing their trained weights."""
        units = []
        mask = None  # gate of the most recent channel producer
        for spec, block, kind in zip(net.specs, net.blocks, selection):
            if kind == "noop":
                continue
            if kind == "dw_pw":
                pair = block if isinstance(block, DwPw) else block.branch_by_kind(kind)
                units.append(_Unit("dw", pair.dw, mask, spec.c_in, spec.c_in,
                                   stride=spec.stride))
                mask = ChannelMask(spec.c_out)
                units.append(_Unit("pw", pair.pw, mask, spec.c_in, spec.c_out))
            else:
                conv = block.branch_by_kind(kind)[0]
                mask = ChannelMask(spec.c_out)
                units.append(_Unit(kind, conv, mask, spec.c_in, spec.c_out))
        return cls(units, net.head, net.c0)

    def forward(self, x):
        for unit in self.units:
            x = unit(x)
        return self.head(x.mean(dim=(2, 3)))

    def complexity(self):
        """Weight count with effective channel counts = binarized mask sums.

        Differentiable through the straight-through estimator; the raw sums
        are used (no keep-at-least-one rescue) so the gradient is honest.
        """
        eff_in = torch.tensor(float(self.c0), dtype=torch.float64)
        total = torch.zeros((), dtype=torch.float64)
        for unit in self.units:
            if unit.kind == "dw":
                total = total + 9.0 * eff_in
            else:
                eff_out = unit.mask.binarized_sum().to(torch.float64)
                factor = 9.0 if unit.kind == "conv3x3" else 1.0
                total = total + factor * eff_in * eff_out
                eff_in = eff_out
        return total + eff_in * float(self.head.out_features)

    def selected_param_count(self):
        """Exact weight count of the architecture export will produce."""
        eff_in = self.c0
        total = 0
        for unit in self.units:
            if unit.kind == "dw":
                total += 9 * eff_in
            else:
                kept = int(unit.mask.kept_indices().numel())
                factor = 9 if unit.kind == "conv3x3" else 1
                total += factor * eff_in * kept
                eff_in = kept
        return total + eff_in * self.head.out_features
