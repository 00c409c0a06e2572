"""Low-level detail branch.

Fragment sampling partitions each frame into a g x g grid of regions and
copies one native-resolution s x s crop from each, assembling the crops into
a (g*s) x (g*s) mosaic.  Crop offsets are drawn once per video and reused
for every frame, so temporal structure inside a fragment stays coherent.
The offset derivation below is a cross-component contract: any producer of
fragment tensors must draw from ``numpy.random.default_rng(seed)`` in
row-major cell order, row offset before column offset.

The conv head then refines an externally computed fragment-feature volume
(or a synthetic stand-in): two 3-D convs with GELU between, global mean,
and a linear projection to the fusion width.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from . import nn
from .autodiff import ShapeError, Tensor


class FragmentGrid:
    """Assembled mosaic plus the (row, col) crop offsets used per cell."""

    def __init__(self, patches: np.ndarray, offsets: list[tuple[int, int]], grid: int, patch: int):
        self.patches = patches
        self.offsets = offsets
        self.grid = grid
        self.patch = patch


def fragment_offsets(height: int, width: int, grid: int, patch: int, seed: int):
    """Deterministic per-cell crop offsets; the normative draw order."""
    rng = np.random.default_rng(seed)
    offsets = []
    for i in range(grid):
        y0 = (i * height) // grid
        y1 = ((i + 1) * height) // grid
        for j in range(grid):
            x0 = (j * width) // grid
            x1 = ((j + 1) * width) // grid
            if y1 - y0 < patch or x1 - x0 < patch:
                raise ShapeError(
                    f"grid cell ({i},{j}) is {y1 - y0}x{x1 - x0}, smaller than "
                    f"patch {patch}x{patch}"
                )
            y = int(rng.integers(y0, y1 - patch + 1))
            x = int(rng.integers(x0, x1 - patch + 1))
            offsets.append((y, x))
    return offsets


def sample_fragments(frames, grid: int, patch: int, seed: int) -> FragmentGrid:
    """frames: (3, T, H, W) array or Tensor -> mosaic (3, T, g*s, g*s).

    Pure pixel copies at native resolution; no interpolation anywhere.
    """
    data = frames.data if isinstance(frames, Tensor) else np.asarray(frames)
    if data.ndim != 4:
        raise ShapeError(f"frames must be CxTxHxW, got {data.shape}")
    c, t, h, w = data.shape
    offsets = fragment_offsets(h, w, grid, patch, seed)
    out = np.empty((c, t, grid * patch, grid * patch), dtype=data.dtype)
    for cell, (y, x) in enumerate(offsets):
        i, j = divmod(cell, grid)
        out[:, :, i * patch:(i + 1) * patch, j * patch:(j + 1) * patch] = \
            data[:, :, y:y + patch, x:x + patch]
    return FragmentGrid(out, offsets, grid, patch)


class DetailHead(nn.Module):
    """conv3d -> GELU -> conv3d over a fragment-feature volume, then
    global mean and projection to the fusion width.

    Both kernels are (1, 3, 3): the externally provided features already
    mixed time, so refinement here is spatial per step.  Channels shrink
    C -> C/2 -> C/4."""

    def __init__(self, in_channels, out_dim, rng, dtype=np.float32):
        super().__init__()
        c1 = max(1, in_channels // 2)
        c2 = max(1, in_channels // 4)
        self.conv1 = nn.Conv3d(in_channels, c1, (1, 3, 3), rng, pad=(0, 1, 1), dtype=dtype)
        self.conv2 = nn.Conv3d(c1, c2, (1, 3, 3), rng, pad=(0, 1, 1), dtype=dtype)
        self.project = nn.Linear(c2, out_dim, rng, dtype=dtype)
        self.out_dim = out_dim

    def __call__(self, x: Tensor) -> Tensor:
        """x: (N, C, T, H, W) -> (N, D); or (C, T, H, W) -> (D,)."""
        batched = x.ndim == 5
        if not batched:
            if x.ndim != 4:
                raise ShapeError(f"fragment features must be rank 4, got {x.shape}")
            x = ad.reshape(x, (1,) + x.shape)
        f = self.conv2(ad.gelu(self.conv1(x)))
        pooled = ad.reduce_mean(f, axis=(2, 3, 4))
        out = self.project(pooled)
        return out if batched else ad.reshape(out, (self.out_dim,))
