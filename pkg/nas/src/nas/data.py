"""Synthetic regression task: recover affine mixes of image statistics."""

import torch

# fixed mixing of the four pooled statistics into the regression targets
_A = torch.tensor([
    [2.0, -1.0, 0.5, 0.0],
    [0.0, 1.5, -0.5, 1.0],
    [-1.0, 0.0, 2.0, -1.5],
    [0.5, 0.5, 0.5, 0.5],
])
_B = torch.tensor([0.1, -0.2, 0.3, 0.0])


def toy_batch(gen, batch, hw=96):
    """One batch of 1-channel images with 4-value regression targets.

    Each image is gaussian noise with a per-image contrast and offset.
    Targets mix four pooled statistics (mean, relu-mean, neg-relu-mean,
    abs-mean), so a conv/relu chain under global average pooling can
    represent the task exactly. All randomness comes from `gen`.
    """
    z = torch.randn(batch, 1, hw, hw, generator=gen)
    contrast = 0.5 + torch.rand(batch, 1, 1, 1, generator=gen)
    offset = 0.5 * torch.randn(batch, 1, 1, 1, generator=gen)
    x = contrast * z + offset
    mean = x.mean(dim=(1, 2, 3))
    pos = torch.relu(x).mean(dim=(1, 2, 3))
    neg = torch.relu(-x).mean(dim=(1, 2, 3))
    absm = x.abs().mean(dim=(1, 2, 3))
    feats = torch.stack([mean, pos, neg, absm], dim=1)
    return x, feats @ _A.T + _B
