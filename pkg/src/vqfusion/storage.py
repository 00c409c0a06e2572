"""Bit-exact tensor container and dataset manifest.

TensorFile layout (little-endian throughout, normative):

    offset  size  field
    0       4     magic ``DVLT``
    4       1     format version, currently 1
    5       1     dtype code: 0 = float32, 1 = float64
    6       1     ndim
    7       4*n   dims, uint32 each
    ...     -     payload: row-major scalars, 4 or 8 bytes each

The manifest is a JSON document whose keys mirror the field names below;
tensor paths are resolved relative to the manifest's directory.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .autodiff import Tensor

__all__ = [
    "StorageError",
    "ManifestError",
    "write_tensor",
    "read_tensor",
    "ManifestEntry",
    "Manifest",
    "load_manifest",
    "save_manifest",
    "validate_manifest",
    "ValidationReport",
]

MAGIC = b"DVLT"
VERSION = 1
_DTYPE_CODES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_CODE_FOR = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}


class StorageError(ValueError):
    """Malformed or truncated tensor file."""


class ManifestError(ValueError):
    """Malformed manifest document."""


def write_tensor(t: Tensor | np.ndarray, path) -> None:
    data = t.data if isinstance(t, Tensor) else np.asarray(t)
    if data.dtype not in _CODE_FOR:
        raise StorageError(f"unsupported dtype {data.dtype}; store float32 or float64")
    dims = data.shape
    header = MAGIC + struct.pack("<BBB", VERSION, _CODE_FOR[data.dtype], len(dims))
    header += struct.pack(f"<{len(dims)}I", *dims)
    payload = np.ascontiguousarray(data).astype(data.dtype.newbyteorder("<"), copy=False)
    Path(path).write_bytes(header + payload.tobytes())


def read_tensor(path) -> Tensor:
    raw = _read_bytes(path)
    if len(raw) < 7:
        raise StorageError(f"{path}: truncated header ({len(raw)} bytes)")
    if raw[:4] != MAGIC:
        raise StorageError(f"{path}: bad magic {raw[:4]!r}")
    version, code, ndim = struct.unpack_from("<BBB", raw, 4)
    if version != VERSION:
        raise StorageError(f"{path}: unknown version {version}")
    if code not in _DTYPE_CODES:
        raise StorageError(f"{path}: unknown dtype code {code}")
    dims_end = 7 + 4 * ndim
    if len(raw) < dims_end:
        raise StorageError(f"{path}: truncated dims block")
    dims = struct.unpack_from(f"<{ndim}I", raw, 7)
    dtype = _DTYPE_CODES[code]
    expect = int(np.prod(dims, dtype=np.int64)) * dtype.itemsize if ndim else dtype.itemsize
    if len(raw) - dims_end != expect:
        raise StorageError(
            f"{path}: payload is {len(raw) - dims_end} bytes, expected {expect}"
        )
    arr = np.frombuffer(raw, dtype=dtype, offset=dims_end).reshape(dims)
    return Tensor(arr.astype(arr.dtype.newbyteorder("="), copy=True))


def _read_bytes(path) -> bytes:
    p = Path(path)
    if not p.is_file():
        raise StorageError(f"{p}: no such tensor file")
    return p.read_bytes()


# ---------------------------------------------------------------------------
# manifest
# ---------------------------------------------------------------------------


@dataclass
class ManifestEntry:
    video_id: str
    mos: float
    mos_scale: tuple[float, float]
    frames_path: str
    fragments_path: str
    num_frames: int
    split: str
    dataset: str

    def to_json(self) -> dict:
        return {
            "video_id": self.video_id,
            "mos": self.mos,
            "mos_scale": list(self.mos_scale),
            "frames_path": self.frames_path,
            "fragments_path": self.fragments_path,
            "num_frames": self.num_frames,
            "split": self.split,
            "dataset": self.dataset,
        }


@dataclass
class Manifest:
    schema_version: int
    entries: list[ManifestEntry]
    text_embeddings: dict  # keys: guide, pos, neg -> tensor paths
    root: Path = field(default=Path("."), compare=False)
    extra: dict = field(default_factory=dict, compare=False)

    def resolve(self, rel_path: str) -> Path:
        p = Path(rel_path)
        return p if p.is_absolute() else self.root / p

    def split_entries(self, split: str) -> list[ManifestEntry]:
        if split == "all":
            return list(self.entries)
        return [e for e in self.entries if e.split == split]

    def to_json(self) -> dict:
        doc = {
            "schema_version": self.schema_version,
            "entries": [e.to_json() for e in self.entries],
            "text_embeddings": dict(self.text_embeddings),
        }
        doc.update(self.extra)
        return doc


_REQUIRED_ENTRY_KEYS = (
    "video_id", "mos", "mos_scale", "frames_path", "fragments_path",
    "num_frames", "split", "dataset",
)
_SPLITS = ("train", "val", "test")


def _entry_from_json(i: int, obj) -> ManifestEntry:
    if not isinstance(obj, dict):
        raise ManifestError(f"entry {i}: expected an object, got {type(obj).__name__}")
    missing = [k for k in _REQUIRED_ENTRY_KEYS if k not in obj]
    if missing:
        raise ManifestError(f"entry {i}: missing keys {missing}")
    scale = obj["mos_scale"]
    if (not isinstance(scale, (list, tuple)) or len(scale) != 2
            or not all(isinstance(v, (int, float)) for v in scale)):
        raise ManifestError(f"entry {i}: mos_scale must be [lo, hi]")
    if obj["split"] not in _SPLITS:
        raise ManifestError(f"entry {i}: split {obj['split']!r} not one of {_SPLITS}")
    try:
        return ManifestEntry(
            video_id=str(obj["video_id"]),
            mos=float(obj["mos"]),
            mos_scale=(float(scale[0]), float(scale[1])),
            frames_path=str(obj["frames_path"]),
            fragments_path=str(obj["fragments_path"]),
            num_frames=int(obj["num_frames"]),
            split=str(obj["split"]),
            dataset=str(obj["dataset"]),
        )
    except (TypeError, ValueError) as exc:
        raise ManifestError(f"entry {i}: {exc}") from exc


def load_manifest(path) -> Manifest:
    p = Path(path)
    if not p.is_file():
        raise ManifestError(f"{p}: no such manifest")
    try:
        doc = json.loads(p.read_text(encoding="utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ManifestError(f"{p}: not valid JSON ({exc})") from exc
    if not isinstance(doc, dict):
        raise ManifestError(f"{p}: top level must be an object")
    for key in ("schema_version", "entries", "text_embeddings"):
        if key not in doc:
            raise ManifestError(f"{p}: missing key {key!r}")
    if not isinstance(doc["entries"], list):
        raise ManifestError(f"{p}: entries must be a list")
    text = doc["text_embeddings"]
    if not isinstance(text, dict) or any(k not in text for k in ("guide", "pos", "neg")):
        raise ManifestError(f"{p}: text_embeddings must map guide/pos/neg to paths")
    entries = [_entry_from_json(i, e) for i, e in enumerate(doc["entries"])]
    extra = {k: v for k, v in doc.items()
             if k not in ("schema_version", "entries", "text_embeddings")}
    return Manifest(
        schema_version=int(doc["schema_version"]),
        entries=entries,
        text_embeddings={k: str(v) for k, v in text.items()},
        root=p.parent,
        extra=extra,
    )


def save_manifest(m: Manifest, path) -> None:
    Path(path).write_text(
        json.dumps(m.to_json(), indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


@dataclass
class ValidationReport:
    issues: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.issues

    def __str__(self):
        return "manifest OK" if self.ok else "\n".join(self.issues)


def validate_manifest(m: Manifest) -> ValidationReport:
    """Check ids, MOS ranges, and that every referenced tensor parses.

    Always returns a report; malformed content becomes an issue line, never
    an uncaught exception.
    """
    report = ValidationReport()
    seen: set[str] = set()
    for e in m.entries:
        if e.video_id in seen:
            report.issues.append(f"duplicate video_id {e.video_id!r}")
        seen.add(e.video_id)
        lo, hi = e.mos_scale
        if not lo < hi:
            report.issues.append(f"{e.video_id}: mos_scale [{lo}, {hi}] is not increasing")
        elif not (lo <= e.mos <= hi):
            report.issues.append(f"{e.video_id}: mos {e.mos} outside [{lo}, {hi}]")
        frames = _try_read(m, e.frames_path, e.video_id, "frames", report)
        if frames is not None:
            if frames.ndim not in (2, 4):
                report.issues.append(
                    f"{e.video_id}: frames tensor must be TxD or TxDxHxW, got rank {frames.ndim}"
                )
            elif frames.shape[0] != e.num_frames:
                report.issues.append(
                    f"{e.video_id}: num_frames={e.num_frames} but frames tensor has "
                    f"leading extent {frames.shape[0]}"
                )
        fragments = _try_read(m, e.fragments_path, e.video_id, "fragments", report)
        if fragments is not None and fragments.ndim != 4:
            report.issues.append(
                f"{e.video_id}: fragment tensor must be rank 4, got rank {fragments.ndim}"
            )
    for key in ("guide", "pos", "neg"):
        path = m.text_embeddings.get(key)
        if path is None:
            report.issues.append(f"text_embeddings missing {key!r}")
            continue
        t = _try_read(m, path, "text_embeddings", key, report)
        if t is not None and t.ndim != 1:
            report.issues.append(f"text embedding {key!r} must be a vector, got rank {t.ndim}")
    return report


def _try_read(m: Manifest, rel, owner, what, report: ValidationReport):
    try:
        return read_tensor(m.resolve(rel))
    except StorageError as exc:
        report.issues.append(f"{owner}: {what} tensor unreadable: {exc}")
        return None
