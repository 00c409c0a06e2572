"""Full quality model: enabled branches, fusion, prompt scoring.

The branch set, fusion mode, and temporal block are all configuration
switches; a disabled branch is simply never constructed, so its parameters
cannot leak into the optimizer or the checkpoint.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from . import fusion as fusion_mod
from . import nn
from .autodiff import ShapeError, Tensor
from .config import RunConfig
from .detail import DetailHead
from .fusion import TextAdapter, TextEmbeddingSet
from .scoring import prompt_similarity, quality_score
from .semantic import SemanticHead
from .temporal import TemporalContextHead


class VideoQualityModel(nn.Module):
    def __init__(self, config: RunConfig, frame_channels: int, fragment_channels: int,
                 dtype=np.float32):
        super().__init__()
        self.config = config
        self.frame_channels = frame_channels
        rng = np.random.default_rng(config.seed)
        dim = config.dim
        # construction order fixes both init draws and parameter naming
        if "vbtc" in config.branches:
            if frame_channels != dim:
                raise ShapeError(
                    f"frame embedding width {frame_channels} must equal the text width "
                    f"{dim} for the semantic branch"
                )
            self.semantic = SemanticHead(
                dim, reduction=config.adapter_reduction, alpha=config.alpha,
                rng=rng, dtype=dtype,
            )
        if "tcm" in config.branches:
            self.temporal = TemporalContextHead(
                frame_channels, dim, rng,
                stem_channels=config.stem_channels,
                temporal_conv=config.temporal_conv,
                pool_window=config.pool_window,
                dtype=dtype,
            )
        if "bvfe" in config.branches:
            self.detail = DetailHead(fragment_channels, dim, rng, dtype=dtype)
        self.text_adapter = TextAdapter(
            dim, rng, blend=config.text_blend, dtype=dtype
        )
        if config.fusion_mode == "concat":
            self.concat_fusion = fusion_mod.ConcatFusion(
                dim, len(config.branches), rng, dtype=dtype
            )

    # -- forward ---------------------------------------------------------

    def branch_features(self, frames: Tensor, fragments: Tensor) -> dict:
        """frames: (N, T, D, H, W); fragments: (N, C, T', H', W') -> {branch: (N, D)}."""
        features = {}
        if "bvfe" in self.config.branches:
            features["bvfe"] = self.detail(fragments)
        if "tcm" in self.config.branches:
            volume = ad.transpose(frames, (0, 2, 1, 3, 4))  # (N, D, T, H, W)
            features["tcm"] = self.temporal(volume)
        if "vbtc" in self.config.branches:
            features["vbtc"] = self.semantic(frames)
        return features

    def adapted_text(self, text: TextEmbeddingSet) -> TextEmbeddingSet:
        guide = self.text_adapter(text.guide)
        if self.config.adapt_prompts:
            return TextEmbeddingSet(guide, self.text_adapter(text.pos), self.text_adapter(text.neg))
        return TextEmbeddingSet(guide, text.pos, text.neg)

    def fuse_features(self, features: dict, guide: Tensor):
        mode = self.config.fusion_mode
        if mode == "text_guided":
            weights = fusion_mod.fusion_weights(features, guide)
            fused = fusion_mod.fuse(
                features, weights, normalize=self.config.normalize_weights
            )
            weight_values = {
                k: np.array(v.data, dtype=np.float64) for k, v in weights.by_branch.items()
            }
            return fused, weight_values
        if mode == "concat":
            return self.concat_fusion(features), {}
        return fusion_mod.add_fusion(features), {}

    def forward(self, frames: Tensor, fragments: Tensor, text: TextEmbeddingSet):
        """Batched scoring: returns the (N,) prediction node plus diagnostics."""
        if frames.ndim != 5:
            raise ShapeError(f"frames must be (N, T, D, H, W), got {frames.shape}")
        features = self.branch_features(frames, fragments)
        adapted = self.adapted_text(text)
        fused, weight_values = self.fuse_features(features, adapted.guide)
        s_pos, s_neg = prompt_similarity(
            fused, adapted.pos, adapted.neg, temperature=self.config.temperature
        )
        scores = quality_score(s_pos, s_neg)
        info = {
            "s_pos": np.array(s_pos.data, dtype=np.float64),
            "s_neg": np.array(s_neg.data, dtype=np.float64),
            "weights": weight_values,
        }
        return scores, info

    __call__ = forward

    # -- state -----------------------------------------------------------

    def state_items(self):
        """Deterministically ordered (name, Parameter) pairs, skipping config."""
        return list(self.named_parameters())


def build_model(config: RunConfig, frame_channels: int, fragment_channels: int,
                dtype=np.float32) -> VideoQualityModel:
    return VideoQualityModel(config, frame_channels, fragment_channels, dtype=dtype)
