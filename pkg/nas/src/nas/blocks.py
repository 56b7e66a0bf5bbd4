"""Searchable building blocks: softmax-mixed branch supernets and channel masks."""

import torch
from torch import nn

# branch order doubles as the selection tie-break order
BRANCH_KINDS = ("dw_pw", "pw", "conv3x3", "noop")


class _Heaviside01(torch.autograd.Function):
    """Step at 0.5 forward, identity backward (straight-through)."""

    @staticmethod
    def forward(ctx, theta):
        return (theta >= 0.5).to(theta.dtype)

    @staticmethod
    def backward(ctx, grad):
        return grad


def binarize(theta):
    return _Heaviside01.apply(theta)


def branch_weight_count(kind, c_in, c_out):
    """Weight-parameter count of one branch; biases are not counted."""
    return {
        "dw_pw": 9 * c_in + c_in * c_out,
        "pw": c_in * c_out,
        "conv3x3": 9 * c_in * c_out,
        "noop": 0,
    }[kind]


class DwPw(nn.Module):
    """Depthwise 3x3 then pointwise 1x1, relu after each."""

    def __init__(self, c_in, c_out, stride=1):
        super().__init__()
        self.dw = nn.Conv2d(c_in, c_in, 3, stride=stride, padding=1, groups=c_in)
        self.pw = nn.Conv2d(c_in, c_out, 1)

    def forward(self, x):
        return torch.relu(self.pw(torch.relu(self.dw(x))))


class SupernetBlock(nn.Module):
    """Every candidate branch of one block, mixed by softmax(theta).

    The no-op branch exists only where it is well-defined (c_in == c_out);
    shape-changing blocks offer three alternatives. theta starts at zero,
    i.e. a uniform mix. Only stride-1 blocks are searchable: a lone pw
    cannot express downsampling in the export format.
    """

    def __init__(self, c_in, c_out):
        super().__init__()
        self.c_in, self.c_out = c_in, c_out
        branches = [
            DwPw(c_in, c_out),
            nn.Sequential(nn.Conv2d(c_in, c_out, 1), nn.ReLU()),
            nn.Sequential(nn.Conv2d(c_in, c_out, 3, padding=1), nn.ReLU()),
        ]
        kinds = ["dw_pw", "pw", "conv3x3"]
        if c_in == c_out:
            branches.append(nn.Identity())
            kinds.append("noop")
        self.branches = nn.ModuleList(branches)
        self.kinds = tuple(kinds)
        self.theta = nn.Parameter(torch.zeros(len(kinds)))

    def forward(self, x):
        mix = torch.softmax(self.theta, dim=0)
        out = None
        for weight, branch in zip(mix, self.branches):
            term = weight * branch(x)
            out = term if out is None else out + term
        return out

    def complexity(self):
        """Expected weight count under the current softmax mix."""
        sizes = torch.tensor(
            [float(branch_weight_count(k, self.c_in, self.c_out)) for k in self.kinds],
            dtype=self.theta.dtype, device=self.theta.device)
        return (torch.softmax(self.theta, dim=0) * sizes).sum()

    def selected_kind(self):
        """argmax(theta); ties resolve to the lowest branch index."""
        theta = self.theta.detach()
        idx = int((theta == theta.max()).nonzero(as_tuple=True)[0][0])
        return self.kinds[idx]

    def branch_by_kind(self, kind):
        return self.branches[self.kinds.index(kind)]


class ChannelMask(nn.Module):
    """Binary gate over output channels, trained straight-through.

    theta starts at 1.0 (everything kept). A channel is kept when its
    binarized value is 1; if training pushes every theta below the
    threshold, export still keeps the single largest-theta channel.
    """

    def __init__(self, n_channels):
        super().__init__()
        self.theta = nn.Parameter(torch.ones(n_channels))

    def forward(self, x):
        return x * binarize(self.theta).view(1, -1, 1, 1)

    def binarized_sum(self):
        return binarize(self.theta).sum()

    def kept_indices(self):
        theta = self.theta.detach()
        kept = (theta >= 0.5).nonzero(as_tuple=True)[0]
        if kept.numel() == 0:
            kept = theta.argmax().view(1)
        return kept
