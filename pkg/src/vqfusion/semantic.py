"""Pooled frame-embedding branch.

Per-frame embeddings from a frozen image-text encoder arrive as a T x D (or
T x D x H x W) tensor.  The branch averages them over time, pushes the pooled
map through a two-block bottleneck adapter (1x1 conv + batch norm + ReLU both
ways), and blends adapter output with the untouched pooled feature through a
residual weight, so the frozen-encoder representation survives adaptation.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from . import nn
from .autodiff import ShapeError, Tensor


class FrameEmbeddingSequence:
    """T frame embeddings, optionally with a spatial token grid.

    Rank-2 input (T, D) is treated as a 1x1 grid so downstream convolutions
    see a uniform (T, D, H, W) layout.
    """

    def __init__(self, z: Tensor):
        if z.ndim == 2:
            z = ad.reshape(z, (z.shape[0], z.shape[1], 1, 1))
        if z.ndim != 4:
            raise ShapeError(f"frame embeddings must be TxD or TxDxHxW, got {z.shape}")
        if z.shape[0] < 1 or z.shape[1] < 1:
            raise ShapeError(f"need at least one frame and one channel, got {z.shape}")
        self.z = z

    @property
    def num_frames(self):
        return self.z.shape[0]

    @property
    def width(self):
        return self.z.shape[1]


def temporal_pool(seq: FrameEmbeddingSequence) -> Tensor:
    """Arithmetic mean over the frame axis: (T, D, H, W) -> (D, H, W)."""
    return ad.reduce_mean(seq.z, axis=0)


class BottleneckAdapter(nn.Module):
    """conv(D -> D/r) + BN + ReLU, then conv(D/r -> D) + BN + ReLU.

    1x1 kernels keep the adapter purely channel-mixing, so it degrades
    gracefully to pooled (H = W = 1) embeddings.
    """

    def __init__(self, dim, reduction, rng, dtype=np.float32):
        super().__init__()
        if dim % reduction != 0:
            raise ShapeError(f"width {dim} not divisible by reduction {reduction}")
        hidden = dim // reduction
        self.reduce = nn.Conv2d(dim, hidden, 1, rng, dtype=dtype)
        self.reduce_bn = nn.BatchNorm(hidden, dtype=dtype)
        self.expand = nn.Conv2d(hidden, dim, 1, rng, dtype=dtype)
        self.expand_bn = nn.BatchNorm(dim, dtype=dtype)

    def __call__(self, x: Tensor) -> Tensor:
        h = ad.relu(self.reduce_bn(self.reduce(x)))
        return ad.relu(self.expand_bn(self.expand(h)))


def residual_blend(adapted: Tensor, original: Tensor, alpha: float) -> Tensor:
    """alpha * adapted + (1 - alpha) * original, elementwise."""
    if adapted.shape != original.shape:
        raise ShapeError(
            f"blend shapes differ: {adapted.shape} vs {original.shape}"
        )
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"residual weight must lie in [0, 1], got {alpha}")
    return ad.add(ad.mul(adapted, float(alpha)), ad.mul(original, float(1.0 - alpha)))


class SemanticHead(nn.Module):
    """Full branch: temporal pool -> adapter -> residual blend -> spatial mean.

    Works on a batch (N, T, D, H, W) or a single video (T, D, H, W); output
    width equals the embedding width, which by construction matches the text
    embedding width."""

    def __init__(self, dim, reduction=4, alpha=0.4, rng=None, dtype=np.float32):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        self.adapter = BottleneckAdapter(dim, reduction, rng, dtype=dtype)
        self.alpha = float(alpha)
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"residual weight must lie in [0, 1], got {alpha}")
        self.dim = dim

    def __call__(self, z: Tensor) -> Tensor:
        """z: (N, T, D, H, W) -> (N, D); or (T, D, H, W)/(T, D) -> (D,)."""
        if z.ndim == 2:
            z = ad.reshape(z, (z.shape[0], z.shape[1], 1, 1))
        batched = z.ndim == 5
        if not batched:
            if z.ndim != 4:
                raise ShapeError(f"expected frame stack, got {z.shape}")
            z = ad.reshape(z, (1,) + z.shape)
        pooled = ad.reduce_mean(z, axis=1)  # (N, D, H, W)
        adapted = self.adapter(pooled)
        blended = residual_blend(adapted, pooled, self.alpha)
        out = ad.reduce_mean(blended, axis=(2, 3))  # (N, D)
        return out if batched else ad.reshape(out, (self.dim,))
