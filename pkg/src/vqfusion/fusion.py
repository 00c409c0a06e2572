"""Text-guided adaptive fusion.

Each branch output is weighted by its cosine similarity to a guidance text
embedding and the weighted features are summed — raw cosines, no
renormalization, so a weight can be negative and the fused vector is not
scale-free.  A small bottleneck adapter specializes the frozen text
embeddings before use; with blend weight 0 it is the identity.

Baseline modes (plain concatenation + linear map, and unweighted addition)
exist for ablation runs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import nn
from .autodiff import ShapeError, Tensor


class TextEmbeddingSet:
    """Guidance embedding plus the positive/negative prompt pair."""

    def __init__(self, guide: Tensor, pos: Tensor, neg: Tensor):
        widths = {guide.shape, pos.shape, neg.shape}
        if len(widths) != 1 or guide.ndim != 1:
            raise ShapeError(
                f"text embeddings must share one width, got {[guide.shape, pos.shape, neg.shape]}"
            )
        for name, t in (("guide", guide), ("pos", pos), ("neg", neg)):
            if float(np.linalg.norm(t.data)) <= 1e-12:
                raise ShapeError(f"text embedding {name!r} is zero")
        self.guide = guide
        self.pos = pos
        self.neg = neg

    @property
    def width(self):
        return self.guide.shape[0]


@dataclass
class FusionWeights:
    """Cosine weights, one per branch; each lies in [-1, 1] by construction."""

    by_branch: dict  # branch name -> scalar Tensor


class TextAdapter(nn.Module):
    """Bottleneck MLP (D -> D/4 -> D, ReLU between) blended residually."""

    def __init__(self, dim, rng, reduction=4, blend=0.4, dtype=np.float32):
        super().__init__()
        hidden = max(1, dim // reduction)
        self.reduce = nn.Linear(dim, hidden, rng, dtype=dtype)
        self.expand = nn.Linear(hidden, dim, rng, dtype=dtype)
        if not 0.0 <= blend <= 1.0:
            raise ValueError(f"blend weight must lie in [0, 1], got {blend}")
        self.blend = float(blend)

    def __call__(self, t: Tensor) -> Tensor:
        if t.ndim != 1:
            raise ShapeError(f"text adapter expects a vector, got {t.shape}")
        row = ad.reshape(t, (1, -1))
        mapped = ad.reshape(self.expand(ad.relu(self.reduce(row))), t.shape)
        return ad.add(ad.mul(mapped, self.blend), ad.mul(t, 1.0 - self.blend))


def fusion_weights(features: dict, guide: Tensor) -> FusionWeights:
    """Cosine of each branch feature against the guidance embedding.

    ``features`` maps branch name -> (D,) vector or (N, D) batch; weights for
    a batch are (N,) tensors."""
    weights = {}
    for name, f in features.items():
        if f.ndim == 1:
            weights[name] = ad.cosine_similarity(f, guide)
        elif f.ndim == 2:
            weights[name] = ad.rows_cosine(f, guide)
        else:
            raise ShapeError(f"branch {name!r}: expected vector or batch, got {f.shape}")
    return FusionWeights(by_branch=weights)


def fuse(features: dict, weights: FusionWeights, normalize=False) -> Tensor:
    """Weighted sum of branch features; raw cosine weights by default.

    ``normalize=True`` softmaxes the weights first (experimental switch,
    off by default)."""
    names = list(features.keys())
    if set(names) != set(weights.by_branch.keys()):
        raise ShapeError("features and weights cover different branches")
    wlist = [weights.by_branch[n] for n in names]
    if normalize:
        stacked = ad.stack(wlist, axis=0)  # (B,) of scalars, or (B, N)
        soft = ad.softmax(stacked, axis=0)
        wlist = []
        for i in range(len(names)):
            piece = ad.slice_axis(soft, 0, i, i + 1)
            wlist.append(ad.reshape(piece, piece.shape[1:]))
    out = None
    for name, w in zip(names, wlist):
        f = features[name]
        term = ad.mul(f, w) if f.ndim == 1 else ad.mul(f, ad.reshape(w, (-1, 1)))
        out = term if out is None else ad.add(out, term)
    return out


class ConcatFusion(nn.Module):
    """Ablation baseline: concatenate branch features, map back to width D."""

    def __init__(self, dim, n_branches, rng, dtype=np.float32):
        super().__init__()
        self.join = nn.Linear(dim * n_branches, dim, rng, dtype=dtype)

    def __call__(self, features: dict) -> Tensor:
        parts = [features[k] for k in features]
        batched = parts[0].ndim == 2
        if not batched:
            parts = [ad.reshape(p, (1, -1)) for p in parts]
        out = self.join(ad.concat(parts, axis=1))
        return out if batched else ad.reshape(out, (out.shape[1],))


def add_fusion(features: dict) -> Tensor:
    """Ablation baseline: unweighted sum of branch features."""
    out = None
    for f in features.values():
        out = f if out is None else ad.add(out, f)
    return out
