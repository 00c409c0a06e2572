"""Run configuration: one dataclass, JSON in, JSON out, fingerprinted.

Field names are the config-file contract; flag overrides in the CLI map
one-to-one onto them.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path

VALID_FUSION_MODES = ("text_guided", "concat", "add")
VALID_TEMPORAL_CONVS = ("tadaconv", "c3d", "r2plus1d")
VALID_BRANCHES = ("bvfe", "tcm", "vbtc")


class ConfigError(ValueError):
    """A configuration value violates its declared range."""


@dataclass
class RunConfig:
    num_frames: int = 16
    fragment_grid: int = 7
    fragment_patch: int = 32
    alpha: float = 0.4
    adapter_reduction: int = 4
    dim: int = 512
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    weight_decay: float = 0.01
    batch: int = 8
    epochs: int = 50
    seed: int = 0
    fusion_mode: str = "text_guided"
    temporal_conv: str = "tadaconv"
    branches: tuple = ("bvfe", "tcm", "vbtc")
    temperature: float = 1.0
    prompt_pos: str = "high quality"
    prompt_neg: str = "low quality"
    guide_prompt: str = "video quality"
    text_blend: float = 0.4
    adapt_prompts: bool = True
    normalize_weights: bool = False
    stem_channels: tuple = (16, 32)
    pool_window: int | None = None

    def __post_init__(self):
        self.branches = tuple(self.branches)
        self.stem_channels = tuple(self.stem_channels)
        self.validate()

    def validate(self):
        if self.batch < 2:
            raise ConfigError(f"batch must be >= 2 (correlation needs variance), got {self.batch}")
        if not self.branches:
            raise ConfigError("at least one branch must be enabled")
        unknown = [b for b in self.branches if b not in VALID_BRANCHES]
        if unknown:
            raise ConfigError(f"unknown branches {unknown}; valid: {VALID_BRANCHES}")
        if "tcm" in self.branches and self.num_frames < 2:
            raise ConfigError("num_frames must be >= 2 when the tcm branch is enabled")
        if self.num_frames < 1:
            raise ConfigError(f"num_frames must be positive, got {self.num_frames}")
        if self.fusion_mode not in VALID_FUSION_MODES:
            raise ConfigError(
                f"fusion_mode {self.fusion_mode!r} not one of {VALID_FUSION_MODES}"
            )
        if self.temporal_conv not in VALID_TEMPORAL_CONVS:
            raise ConfigError(
                f"temporal_conv {self.temporal_conv!r} not one of {VALID_TEMPORAL_CONVS}"
            )
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError(f"alpha must lie in [0, 1], got {self.alpha}")
        if not 0.0 <= self.text_blend <= 1.0:
            raise ConfigError(f"text_blend must lie in [0, 1], got {self.text_blend}")
        if self.dim % self.adapter_reduction != 0:
            raise ConfigError(
                f"dim {self.dim} must be divisible by adapter_reduction {self.adapter_reduction}"
            )
        if self.epochs < 1:
            raise ConfigError(f"epochs must be positive, got {self.epochs}")
        if self.lr <= 0:
            raise ConfigError(f"lr must be positive, got {self.lr}")
        if self.temperature <= 0:
            raise ConfigError(f"temperature must be positive, got {self.temperature}")
        if len(self.stem_channels) != 2 or any(c < 1 for c in self.stem_channels):
            raise ConfigError(f"stem_channels must be two positive widths, got {self.stem_channels}")

    def to_json(self) -> dict:
        doc = asdict(self)
        doc["branches"] = list(self.branches)
        doc["stem_channels"] = list(self.stem_channels)
        return doc

    def fingerprint(self, **extra) -> str:
        """Stable digest of the config plus any context (dataset, split)."""
        payload = {"config": self.to_json()}
        payload.update(extra)
        blob = json.dumps(payload, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]


def load_config(path, overrides: dict | None = None) -> RunConfig:
    doc = {}
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"{p}: no such config file")
        try:
            doc = json.loads(p.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{p}: not valid JSON ({exc})") from exc
        if not isinstance(doc, dict):
            raise ConfigError(f"{p}: config must be a JSON object")
    known = {f.name for f in fields(RunConfig)}
    unknown = sorted(set(doc) - known)
    if unknown:
        raise ConfigError(f"unknown config keys: {unknown}")
    if overrides:
        doc.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return RunConfig(**doc)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def save_config(config: RunConfig, path) -> None:
    Path(path).write_text(
        json.dumps(config.to_json(), indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
