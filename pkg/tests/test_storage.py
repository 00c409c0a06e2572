"""Tensor container round-trips, malformed-file handling, manifest checks."""

import json
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vqfusion.autodiff import Tensor
from vqfusion.storage import (
    MAGIC,
    Manifest,
    ManifestEntry,
    ManifestError,
    StorageError,
    load_manifest,
    read_tensor,
    save_manifest,
    validate_manifest,
    write_tensor,
)


def test_scalar_round_trip(tmp_path):
    p = tmp_path / "s.dvlt"
    write_tensor(Tensor(np.asarray(3.25, dtype=np.float32)), p)
    back = read_tensor(p)
    assert back.shape == ()
    assert back.item() == 3.25


def test_round_trip_byte_identical(tmp_path):
    rng = np.random.default_rng(42)
    arr = rng.standard_normal((3, 4, 5)).astype(np.float32)
    p1 = tmp_path / "a.dvlt"
    p2 = tmp_path / "b.dvlt"
    write_tensor(Tensor(arr), p1)
    write_tensor(read_tensor(p1), p2)
    assert p1.read_bytes() == p2.read_bytes()
    np.testing.assert_array_equal(read_tensor(p2).data, arr)


def test_truncated_payload_is_error(tmp_path):
    p = tmp_path / "t.dvlt"
    write_tensor(Tensor(np.ones((4, 4), dtype=np.float32)), p)
    raw = p.read_bytes()
    p.write_bytes(raw[: len(raw) - 5])
    with pytest.raises(StorageError, match="payload"):
        read_tensor(p)


def test_bad_magic_version_dtype(tmp_path):
    p = tmp_path / "m.dvlt"
    write_tensor(Tensor(np.ones(2, dtype=np.float32)), p)
    raw = bytearray(p.read_bytes())

    bad = bytearray(raw)
    bad[:4] = b"NOPE"
    p.write_bytes(bytes(bad))
    with pytest.raises(StorageError, match="magic"):
        read_tensor(p)

    bad = bytearray(raw)
    bad[4] = 9
    p.write_bytes(bytes(bad))
    with pytest.raises(StorageError, match="version"):
        read_tensor(p)

    bad = bytearray(raw)
    bad[5] = 7
    p.write_bytes(bytes(bad))
    with pytest.raises(StorageError, match="dtype"):
        read_tensor(p)


def test_missing_file_is_error(tmp_path):
    with pytest.raises(StorageError, match="no such"):
        read_tensor(tmp_path / "absent.dvlt")


def test_header_layout_is_normative(tmp_path):
    p = tmp_path / "h.dvlt"
    arr = np.arange(6, dtype=np.float64).reshape(2, 3)
    write_tensor(Tensor(arr), p)
    raw = p.read_bytes()
    assert raw[:4] == MAGIC
    assert raw[4] == 1  # version
    assert raw[5] == 1  # f64 code
    assert raw[6] == 2  # ndim
    assert struct.unpack_from("<2I", raw, 7) == (2, 3)
    assert raw[15:] == arr.astype("<f8").tobytes()


@settings(max_examples=60, deadline=None)
@given(
    rank=st.integers(min_value=0, max_value=5),
    dtype=st.sampled_from(["f4", "f8"]),
    seed=st.integers(min_value=0, max_value=2**31),
)
def test_round_trip_property(tmp_path_factory, rank, dtype, seed):
    rng = np.random.default_rng(seed)
    shape = tuple(int(rng.integers(1, 5)) for _ in range(rank))
    arr = rng.standard_normal(shape).astype(dtype)
    path = tmp_path_factory.mktemp("rt") / "t.dvlt"
    write_tensor(Tensor(arr), path)
    back = read_tensor(path)
    assert back.data.dtype == arr.dtype
    assert back.shape == arr.shape
    np.testing.assert_array_equal(back.data, arr)


# ---------------------------------------------------------------------------
# manifest
# ---------------------------------------------------------------------------


def _write_minimal_corpus(root, num_frames=3, frames_lead=None):
    rng = np.random.default_rng(0)
    write_tensor(
        Tensor(rng.standard_normal((frames_lead or num_frames, 4)).astype(np.float32)),
        root / "frames.dvlt",
    )
    write_tensor(
        Tensor(rng.standard_normal((2, 3, 4, 4)).astype(np.float32)),
        root / "frag.dvlt",
    )
    for name in ("guide", "pos", "neg"):
        write_tensor(
            Tensor(rng.standard_normal(4).astype(np.float32)), root / f"{name}.dvlt"
        )
    entry = ManifestEntry(
        video_id="vid0",
        mos=0.5,
        mos_scale=(0.0, 1.0),
        frames_path="frames.dvlt",
        fragments_path="frag.dvlt",
        num_frames=num_frames,
        split="train",
        dataset="mini",
    )
    manifest = Manifest(
        schema_version=1,
        entries=[entry],
        text_embeddings={k: f"{k}.dvlt" for k in ("guide", "pos", "neg")},
        root=root,
    )
    save_manifest(manifest, root / "manifest.json")
    return manifest


def test_minimal_manifest_loads_and_validates(tmp_path):
    _write_minimal_corpus(tmp_path)
    m = load_manifest(tmp_path / "manifest.json")
    assert len(m.entries) == 1
    assert m.entries[0].video_id == "vid0"
    report = validate_manifest(m)
    assert report.ok, str(report)


def test_duplicate_video_id_names_the_id(tmp_path):
    m = _write_minimal_corpus(tmp_path)
    m.entries.append(m.entries[0])
    report = validate_manifest(m)
    assert not report.ok
    assert any("vid0" in issue and "duplicate" in issue for issue in report.issues)


def test_frames_extent_mismatch_fails_validation(tmp_path):
    _write_minimal_corpus(tmp_path, num_frames=5, frames_lead=3)
    m = load_manifest(tmp_path / "manifest.json")
    report = validate_manifest(m)
    assert any("num_frames" in issue for issue in report.issues)


def test_out_of_range_mos(tmp_path):
    m = _write_minimal_corpus(tmp_path)
    m.entries[0].mos = 9.0
    report = validate_manifest(m)
    assert any("outside" in issue for issue in report.issues)


def test_missing_tensor_reported_not_raised(tmp_path):
    m = _write_minimal_corpus(tmp_path)
    m.entries[0].frames_path = "gone.dvlt"
    report = validate_manifest(m)
    assert any("unreadable" in issue for issue in report.issues)


@pytest.mark.parametrize(
    "payload",
    [
        "not json at all {{{",
        json.dumps([1, 2, 3]),
        json.dumps({"schema_version": 1}),
        json.dumps({"schema_version": 1, "entries": "nope", "text_embeddings": {}}),
        json.dumps(
            {
                "schema_version": 1,
                "entries": [{"video_id": "x"}],
                "text_embeddings": {"guide": "g", "pos": "p", "neg": "n"},
            }
        ),
        json.dumps(
            {
                "schema_version": 1,
                "entries": [],
                "text_embeddings": {"guide": "g"},
            }
        ),
    ],
)
def test_malformed_manifests_raise_structured_error(tmp_path, payload):
    p = tmp_path / "bad.json"
    p.write_text(payload)
    with pytest.raises(ManifestError):
        load_manifest(p)


def test_load_manifest_missing_file(tmp_path):
    with pytest.raises(ManifestError, match="no such"):
        load_manifest(tmp_path / "none.json")


def test_manifest_round_trip(tmp_path):
    _write_minimal_corpus(tmp_path)
    m1 = load_manifest(tmp_path / "manifest.json")
    save_manifest(m1, tmp_path / "copy.json")
    m2 = load_manifest(tmp_path / "copy.json")
    assert m1.entries == m2.entries
    assert m1.text_embeddings == m2.text_embeddings
