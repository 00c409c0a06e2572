"""Temporal context branch.

Takes a clip volume (C, T, H, W) — raw frames, or a frame-embedding volume
when the dataset stores encoder outputs — and refines inter-frame structure:

  stem (two 3-D convs, spatial /2 each, T preserved)
    -> time-adaptive conv (shared spatial kernel, per-time calibration)
    -> aggregation (instant + temporally pooled paths, summed, ReLU)
    -> second time-adaptive conv
    -> channel + spatial attention gates
    -> global mean and projection to the fusion width

The calibration branch starts at exactly zero, so a freshly built layer is
indistinguishable from a plain time-shared convolution; that identity is a
test anchor, not an accident.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from . import nn
from .autodiff import ShapeError, Tensor


class ClipVolume:
    """(C, T, H, W) spatiotemporal block; temporal context needs T >= 2."""

    def __init__(self, x: Tensor):
        if x.ndim != 4:
            raise ShapeError(f"clip volume must be CxTxHxW, got {x.shape}")
        if x.shape[1] < 2:
            raise ShapeError(f"temporal context needs >= 2 frames, got T={x.shape[1]}")
        self.x = x


class Stem3d(nn.Module):
    """Two conv3d+BN+ReLU layers; spatial stride 2 per layer, T untouched."""

    def __init__(self, in_channels, channels, rng, dtype=np.float32):
        super().__init__()
        c1, c2 = channels
        self.conv1 = nn.Conv3d(in_channels, c1, 3, rng, stride=(1, 2, 2), pad=1, dtype=dtype)
        self.bn1 = nn.BatchNorm(c1, dtype=dtype)
        self.conv2 = nn.Conv3d(c1, c2, 3, rng, stride=(1, 2, 2), pad=1, dtype=dtype)
        self.bn2 = nn.BatchNorm(c2, dtype=dtype)
        self.out_channels = c2

    def __call__(self, x: Tensor) -> Tensor:
        x = ad.relu(self.bn1(self.conv1(x)))
        return ad.relu(self.bn2(self.conv2(x)))


class TimeAdaptiveConv(nn.Module):
    """Spatial convolution whose kernel is rescaled per (channel, time step).

    The shared base kernel has shape (C_out, C_in, 1, kh, kw).  Calibration:
    spatial global average pool -> two temporal 1-d convs (bottleneck between)
    -> zero-initialized head, and the scale is 1 + head output.  Because the
    scale multiplies the whole kernel of one output channel at one time step,
    it factors out of the convolution, so the layer is evaluated as a shared
    conv followed by a per-(channel, t) rescale, then the bias.
    """

    def __init__(self, channels, rng, kernel=3, calib_bottleneck=4, dtype=np.float32):
        super().__init__()
        self.base = nn.Conv3d(
            channels, channels, (1, kernel, kernel), rng,
            stride=1, pad=(0, kernel // 2, kernel // 2), dtype=dtype, bias=False,
        )
        self.bias = ad.Parameter(np.zeros(channels, dtype=dtype))
        self.calib_reduce = nn.Conv1d(channels, calib_bottleneck, 3, rng, pad=1, dtype=dtype)
        self.calib_expand = nn.Conv1d(
            calib_bottleneck, channels, 3, rng, pad=1, dtype=dtype, zero_init=True
        )

    def calibration(self, x: Tensor) -> Tensor:
        """Per-(channel, time) scale: (N, C, T, H, W) -> (N, C, T)."""
        pooled = ad.reduce_mean(x, axis=(3, 4))  # (N, C, T)
        h = ad.relu(self.calib_reduce(pooled))
        return ad.add(self.calib_expand(h), 1.0)

    def __call__(self, x: Tensor, scales: Tensor | None = None) -> Tensor:
        batched = x.ndim == 5
        if not batched:
            x = ad.reshape(x, (1,) + x.shape)
        if scales is None:
            scales = self.calibration(x)
        elif scales.ndim == 2:
            scales = ad.reshape(scales, (1,) + scales.shape)
        if scales.shape != x.shape[:3]:
            raise ShapeError(
                f"calibration shape {scales.shape} does not match input {x.shape[:3]}"
            )
        shared = self.base(x)  # (N, C, T, H, W)
        scaled = ad.mul(shared, ad.reshape(scales, scales.shape + (1, 1)))
        out = ad.add(scaled, ad.reshape(self.bias, (1, -1, 1, 1, 1)))
        return out if batched else ad.reshape(out, out.shape[1:])


class TemporalAggregate(nn.Module):
    """ReLU(BN1(x) + BN2(temporal-mean(x) broadcast back)).

    The pooled path averages the full temporal extent by default; a window
    size can be given, in which case each step averages its clipped
    neighbourhood instead.
    """

    def __init__(self, channels, dtype=np.float32, window=None):
        super().__init__()
        self.bn_instant = nn.BatchNorm(channels, dtype=dtype)
        self.bn_pooled = nn.BatchNorm(channels, dtype=dtype)
        self.window = window

    def _pooled(self, x: Tensor) -> Tensor:
        t_ext = x.shape[2]
        if self.window is None or self.window >= t_ext:
            # keepdims mean; the later sum broadcasts it back across T
            return ad.reduce_mean(x, axis=2, keepdims=True)
        h = self.window // 2
        steps = []
        for t in range(t_ext):
            lo = max(0, t - h)
            hi = min(t_ext, t + h + 1)
            window = ad.slice_axis(x, 2, lo, hi)
            steps.append(ad.reduce_mean(window, axis=2, keepdims=True))
        return ad.concat(steps, axis=2)

    def __call__(self, x: Tensor) -> Tensor:
        return ad.relu(ad.add(self.bn_instant(x), self.bn_pooled(self._pooled(x))))


class AttentionGates(nn.Module):
    """Channel and spatial sigmoid gates, both computed from the same input
    and applied jointly (parallel form): out = x * channel_gate * spatial_gate.
    """

    def __init__(self, channels, rng, reduction=4, spatial_kernel=7, dtype=np.float32):
        super().__init__()
        if channels % reduction != 0:
            raise ShapeError(f"channels {channels} not divisible by reduction {reduction}")
        hidden = channels // reduction
        self.mlp_reduce = nn.Linear(channels, hidden, rng, dtype=dtype)
        self.mlp_expand = nn.Linear(hidden, channels, rng, dtype=dtype)
        k = spatial_kernel
        self.spatial_conv = nn.Conv3d(2, 1, (1, k, k), rng, pad=(0, k // 2, k // 2), dtype=dtype)

    def _shared_mlp(self, v: Tensor) -> Tensor:
        return self.mlp_expand(ad.relu(self.mlp_reduce(v)))

    def channel_gate(self, x: Tensor) -> Tensor:
        avg = ad.reduce_mean(x, axis=(2, 3, 4))  # (N, C)
        mx = ad.reduce_max(x, axis=(2, 3, 4))
        return ad.sigmoid(ad.add(self._shared_mlp(avg), self._shared_mlp(mx)))

    def spatial_gate(self, x: Tensor) -> Tensor:
        avg = ad.reduce_mean(x, axis=1, keepdims=True)  # (N, 1, T, H, W)
        mx = ad.reduce_max(x, axis=1, keepdims=True)
        maps = ad.concat([avg, mx], axis=1)
        return ad.sigmoid(self.spatial_conv(maps))

    def __call__(self, x: Tensor) -> Tensor:
        batched = x.ndim == 5
        if not batched:
            x = ad.reshape(x, (1,) + x.shape)
        cg = self.channel_gate(x)  # (N, C)
        sg = self.spatial_gate(x)  # (N, 1, T, H, W)
        gated = ad.mul(ad.mul(x, ad.reshape(cg, cg.shape + (1, 1, 1))), sg)
        return gated if batched else ad.reshape(gated, gated.shape[1:])


class PlainConv3dBlock(nn.Module):
    """Ablation stand-in for the time-adaptive layer: one 3x3x3 conv."""

    def __init__(self, channels, rng, dtype=np.float32):
        super().__init__()
        self.conv = nn.Conv3d(channels, channels, 3, rng, pad=1, dtype=dtype)

    def __call__(self, x: Tensor) -> Tensor:
        batched = x.ndim == 5
        if not batched:
            x = ad.reshape(x, (1,) + x.shape)
        out = self.conv(x)
        return out if batched else ad.reshape(out, out.shape[1:])


class FactorizedConv3dBlock(nn.Module):
    """Ablation stand-in: spatial (1,3,3) conv then temporal (3,1,1) conv."""

    def __init__(self, channels, rng, dtype=np.float32):
        super().__init__()
        self.spatial = nn.Conv3d(channels, channels, (1, 3, 3), rng, pad=(0, 1, 1), dtype=dtype)
        self.temporal = nn.Conv3d(channels, channels, (3, 1, 1), rng, pad=(1, 0, 0), dtype=dtype)

    def __call__(self, x: Tensor) -> Tensor:
        batched = x.ndim == 5
        if not batched:
            x = ad.reshape(x, (1,) + x.shape)
        out = self.temporal(ad.relu(self.spatial(x)))
        return out if batched else ad.reshape(out, out.shape[1:])


_TEMPORAL_BLOCKS = {
    "tadaconv": TimeAdaptiveConv,
    "c3d": PlainConv3dBlock,
    "r2plus1d": FactorizedConv3dBlock,
}


class TemporalContextHead(nn.Module):
    """Full branch: stem -> block -> aggregate -> block -> gates -> project."""

    def __init__(self, in_channels, out_dim, rng, stem_channels=(16, 32),
                 temporal_conv="tadaconv", attention_reduction=4,
                 spatial_kernel=7, pool_window=None, dtype=np.float32):
        super().__init__()
        if temporal_conv not in _TEMPORAL_BLOCKS:
            raise ValueError(
                f"temporal_conv must be one of {sorted(_TEMPORAL_BLOCKS)}, got {temporal_conv!r}"
            )
        self.stem = Stem3d(in_channels, stem_channels, rng, dtype=dtype)
        c = self.stem.out_channels
        block = _TEMPORAL_BLOCKS[temporal_conv]
        self.block1 = block(c, rng, dtype=dtype)
        self.aggregate = TemporalAggregate(c, dtype=dtype, window=pool_window)
        self.block2 = block(c, rng, dtype=dtype)
        self.gates = AttentionGates(
            c, rng, reduction=attention_reduction, spatial_kernel=spatial_kernel, dtype=dtype
        )
        self.project = nn.Linear(c, out_dim, rng, dtype=dtype)
        self.out_dim = out_dim

    def __call__(self, x: Tensor) -> Tensor:
        """x: (N, C, T, H, W) -> (N, D); or (C, T, H, W) -> (D,)."""
        batched = x.ndim == 5
        if not batched:
            ClipVolume(x)  # shape/extent validation
            x = ad.reshape(x, (1,) + x.shape)
        elif x.shape[2] < 2:
            raise ShapeError(f"temporal context needs >= 2 frames, got T={x.shape[2]}")
        f = self.stem(x)
        f = self.block1(f)
        f = self.aggregate(f)
        f = self.block2(f)
        f = self.gates(f)
        pooled = ad.reduce_mean(f, axis=(2, 3, 4))  # (N, C)
        out = self.project(pooled)
        return out if batched else ad.reshape(out, (self.out_dim,))
