"""Acceptance suite: one test per release criterion, each at its stated
tolerance, printing an explicit PASS line when it holds.

The training-based criteria share one synthetic corpus and one trained
model through session fixtures; everything else runs standalone.  Run with
``pytest tests/test_acceptance.py -v -s`` to see the per-criterion lines.
"""

import json
import struct
import time
from dataclasses import dataclass

import numpy as np
import pytest

import oracles
from vqfusion import harness
from vqfusion.autodiff import Tensor
from vqfusion.config import RunConfig
from vqfusion.scoring import ScoreBatch, plcc, quality_score, srocc
from vqfusion.storage import StorageError, read_tensor, write_tensor
from vqfusion.synth import planted_direction, synth_dataset
from vqfusion.temporal import TimeAdaptiveConv


def announce(name):
    print(f"\nACCEPTANCE {name}: PASS")


# ---------------------------------------------------------------------------
# shared trained state (criteria: synthetic training, ablation, cross-dataset)
# ---------------------------------------------------------------------------


@dataclass
class TrainedState:
    config: RunConfig
    manifest_a: object
    manifest_b: object
    manifest_c: object
    model: object
    train_minutes: float
    train_report: object
    test_report: object


@pytest.fixture(scope="session")
def trained(tmp_path_factory) -> TrainedState:
    root = tmp_path_factory.mktemp("acceptance")
    direction = planted_direction(32, 900)
    manifest_a = synth_dataset(root / "A", 200, 32, direction, 0.02, seed=31,
                               num_frames=16, dataset_name="corpusA")
    manifest_b = synth_dataset(root / "B", 120, 32, direction, 0.02, seed=32,
                               num_frames=16, dataset_name="corpusB")
    manifest_c = synth_dataset(root / "C", 120, 32, direction, 0.02, seed=33,
                               num_frames=16, dataset_name="corpusC")
    config = RunConfig(dim=32, seed=17)  # defaults otherwise: 50 epochs, batch 8
    started = time.time()
    model, _ = harness.train(config, manifest_a, root / "runA")
    minutes = (time.time() - started) / 60.0
    corpus = harness.load_corpus(manifest_a)
    train_report = harness.evaluate(model, manifest_a, split="train", corpus=corpus)
    test_report = harness.evaluate(model, manifest_a, split="test", corpus=corpus)
    return TrainedState(
        config=config,
        manifest_a=manifest_a,
        manifest_b=manifest_b,
        manifest_c=manifest_c,
        model=model,
        train_minutes=minutes,
        train_report=train_report,
        test_report=test_report,
    )


# ---------------------------------------------------------------------------
# criterion: gradient oracle
# ---------------------------------------------------------------------------


def test_gradient_oracle_every_head_and_end_to_end():
    started = time.time()
    ok, lines = harness.run_grad_checks(tol=1e-4, step=1e-5)
    elapsed = time.time() - started
    failures = [l for l in lines if l.endswith("FAIL")]
    assert ok, "gradient mismatches:\n" + "\n".join(failures)
    worst = max(
        float(l.split("max_rel_err=")[1].split()[0]) for l in lines if "max_rel_err" in l
    )
    assert worst < 1e-4
    assert elapsed < 120.0, f"grad-check took {elapsed:.0f}s, budget is 120s"
    announce(f"gradient-oracle (worst rel err {worst:.2e}, {elapsed:.0f}s)")


# ---------------------------------------------------------------------------
# criterion: time-adaptive conv identity reduction
# ---------------------------------------------------------------------------


def test_time_adaptive_identity_reduction_50_instances():
    rng = np.random.default_rng(123)
    worst = 0.0
    for case in range(50):
        channels = int(rng.integers(1, 5))
        t_ext = int(rng.integers(2, 6))
        h = int(rng.integers(3, 9))
        w = int(rng.integers(3, 9))
        layer = TimeAdaptiveConv(channels, np.random.default_rng(1000 + case))
        x = Tensor(rng.standard_normal((channels, t_ext, h, w)).astype(np.float32))
        adaptive = layer(x).data
        shared = layer.base(Tensor(x.data)).data + layer.bias.data.reshape(-1, 1, 1, 1)
        worst = max(worst, float(np.max(np.abs(adaptive - shared))))
    assert worst < 1e-6, f"max |adaptive - shared| = {worst:.2e}"
    announce(f"time-adaptive-identity (max abs diff {worst:.2e} over 50 instances)")


# ---------------------------------------------------------------------------
# criterion: metric oracles
# ---------------------------------------------------------------------------


def test_metric_oracles_and_invariance_properties():
    rng = np.random.default_rng(321)

    # brute-force rank oracle with ties, n <= 8
    for case in range(40):
        n = int(rng.integers(2, 9))
        x = rng.integers(0, 4, size=n).astype(np.float64)
        y = rng.integers(0, 4, size=n).astype(np.float64)
        if np.all(x == x[0]):
            x[0] += 1.0
        if np.all(y == y[0]):
            y[-1] += 1.0
        got = srocc(ScoreBatch(x, y))
        want = oracles.spearman_bruteforce(x, y)
        assert abs(got - want) < 1e-10, f"case {case}: {got} vs {want}"

    # plcc against the 50-digit oracle
    for case in range(20):
        x = rng.standard_normal(50)
        y = 0.4 * x + rng.standard_normal(50)
        assert abs(plcc(ScoreBatch(x, y)) - oracles.pearson_mp(x, y)) < 1e-10

    # 200 affine-invariance cases
    for case in range(200):
        x = rng.standard_normal(15)
        y = rng.standard_normal(15)
        a = float(rng.uniform(0.05, 20.0))
        b = float(rng.uniform(-5.0, 5.0))
        base = plcc(ScoreBatch(x, y))
        assert abs(plcc(ScoreBatch(a * x + b, y)) - base) < 1e-9

    # 200 monotone-invariance cases
    transforms = [np.exp, lambda v: v**3, lambda v: np.arctan(v), lambda v: 5 * v + 2]
    for case in range(200):
        x = rng.standard_normal(12)
        y = rng.standard_normal(12)
        f = transforms[case % len(transforms)]
        base = srocc(ScoreBatch(x, y))
        assert abs(srocc(ScoreBatch(f(x), y)) - base) < 1e-9

    announce("metric-oracles (ties vs brute force 1e-10; 200+200 invariance cases)")


# ---------------------------------------------------------------------------
# criterion: scoring contracts
# ---------------------------------------------------------------------------


def test_scoring_contracts():
    rng = np.random.default_rng(11)
    for _ in range(200):
        sp, sn = rng.standard_normal(2) * 4
        q = quality_score(Tensor(np.float64(sp)), Tensor(np.float64(sn))).item()
        assert 0.0 < q < 1.0

    tie = quality_score(Tensor(np.float64(1.7)), Tensor(np.float64(1.7))).item()
    assert tie == 0.5  # exact

    grid = np.linspace(-6, 6, 100)
    values = [quality_score(Tensor(np.float64(s)), Tensor(np.float64(0.0))).item()
              for s in grid]
    assert all(b > a for a, b in zip(values, values[1:]))
    announce("scoring-contracts (range, exact tie, 100-point monotonicity)")


# ---------------------------------------------------------------------------
# criterion: fusion contracts
# ---------------------------------------------------------------------------


def test_fusion_contracts():
    from vqfusion.fusion import fuse, fusion_weights

    rng = np.random.default_rng(77)
    for case in range(50):
        d = int(rng.integers(4, 16))
        feats = {k: Tensor(rng.standard_normal(d))
                 for k in ("bvfe", "tcm", "vbtc")}
        guide = Tensor(rng.standard_normal(d))
        base = {k: v.item() for k, v in fusion_weights(feats, guide).by_branch.items()}
        for name in base:
            assert -1.0 <= base[name] <= 1.0
        scale = float(rng.uniform(0.01, 100.0))
        which = ("bvfe", "tcm", "vbtc")[case % 3]
        scaled = dict(feats)
        scaled[which] = Tensor(feats[which].data * scale)
        w_scaled = fusion_weights(scaled, guide).by_branch
        w_guide = fusion_weights(feats, Tensor(guide.data * scale)).by_branch
        for name in base:
            assert abs(w_scaled[name].item() - base[name]) < 1e-6
            assert abs(w_guide[name].item() - base[name]) < 1e-6

        # linearity of the weighted sum in each feature, weights held fixed
        weights = fusion_weights(feats, guide)
        fused = fuse(feats, weights).data
        delta = rng.standard_normal(d)
        bumped = dict(feats)
        bumped[which] = Tensor(feats[which].data + delta)
        fused_b = fuse(bumped, weights).data
        np.testing.assert_allclose(
            fused_b - fused, weights.by_branch[which].item() * delta, atol=1e-6
        )
    announce("fusion-contracts (weight invariance, bounds, linearity)")


# ---------------------------------------------------------------------------
# criterion: synthetic end-to-end training
# ---------------------------------------------------------------------------


def test_synthetic_training_reaches_targets(trained):
    assert trained.train_minutes < 5.0, f"training took {trained.train_minutes:.1f} min"
    assert trained.train_report.plcc >= 0.95, trained.train_report.plcc
    assert trained.test_report.srocc >= 0.85, trained.test_report.srocc
    announce(
        f"synthetic-training (train PLCC {trained.train_report.plcc:.4f}, "
        f"test SROCC {trained.test_report.srocc:.4f}, {trained.train_minutes:.1f} min)"
    )


def test_add_fusion_does_not_beat_text_guided(trained, tmp_path):
    config = RunConfig(dim=32, seed=17, fusion_mode="add")
    model, _ = harness.train(config, trained.manifest_a, None)
    add_report = harness.evaluate(model, trained.manifest_a, split="test")
    margin = add_report.srocc - trained.test_report.srocc
    assert margin <= 0.02, (
        f"add fusion SROCC {add_report.srocc:.4f} beats text-guided "
        f"{trained.test_report.srocc:.4f} by {margin:.4f}"
    )
    announce(
        f"fusion-ablation (add {add_report.srocc:.4f} vs text-guided "
        f"{trained.test_report.srocc:.4f})"
    )


# ---------------------------------------------------------------------------
# criterion: cross-dataset harness
# ---------------------------------------------------------------------------


def test_cross_dataset_generalization(trained):
    reports = harness.cross_dataset_eval(
        trained.model, [trained.manifest_b, trained.manifest_c]
    )
    for report in reports:
        assert report.srocc >= 0.80, f"{report.dataset}: SROCC {report.srocc:.4f}"
    assert reports[0].config_fingerprint != reports[1].config_fingerprint
    announce(
        "cross-dataset (SROCC "
        + ", ".join(f"{r.dataset}={r.srocc:.4f}" for r in reports) + ")"
    )


# ---------------------------------------------------------------------------
# criterion: determinism
# ---------------------------------------------------------------------------


def test_two_identical_runs_byte_identical(tmp_path):
    outputs = []
    for run in ("first", "second"):
        root = tmp_path / run
        direction = planted_direction(16, 5)
        manifest = synth_dataset(root / "data", 30, 16, direction, 0.01, seed=8,
                                 num_frames=6, dataset_name="det")
        config = RunConfig(num_frames=6, dim=16, batch=6, epochs=3, seed=21,
                           stem_channels=(4, 4))
        model, _ = harness.train(config, manifest, root / "run")
        report = harness.evaluate(model, manifest, split="test")
        outputs.append((root, report.to_json_text()))
    (root1, rep1), (root2, rep2) = outputs
    assert rep1 == rep2
    files1 = sorted((root1 / "run" / "checkpoint").iterdir())
    files2 = sorted((root2 / "run" / "checkpoint").iterdir())
    assert [f.name for f in files1] == [f.name for f in files2]
    for f1, f2 in zip(files1, files2):
        assert f1.read_bytes() == f2.read_bytes(), f1.name
    announce("determinism (byte-identical reports and checkpoints)")


# ---------------------------------------------------------------------------
# criterion: storage
# ---------------------------------------------------------------------------


def test_storage_thousand_round_trips_and_malformed_fixtures(tmp_path):
    rng = np.random.default_rng(999)
    path = tmp_path / "t.dvlt"
    for case in range(1000):
        rank = int(rng.integers(0, 6))
        shape = tuple(int(rng.integers(1, 5)) for _ in range(rank))
        dtype = np.float32 if case % 2 == 0 else np.float64
        arr = rng.standard_normal(shape).astype(dtype)
        write_tensor(Tensor(arr), path)
        first = path.read_bytes()
        back = read_tensor(path)
        assert back.data.dtype == arr.dtype and back.shape == arr.shape
        np.testing.assert_array_equal(back.data, arr)
        write_tensor(back, path)
        assert path.read_bytes() == first  # byte-identical re-serialization

    # malformed fixtures: each must raise the structured storage error
    write_tensor(Tensor(np.ones((3, 3), dtype=np.float32)), path)
    good = path.read_bytes()
    fixtures = {
        "empty": b"",
        "short_header": good[:5],
        "bad_magic": b"XXXX" + good[4:],
        "bad_version": good[:4] + bytes([9]) + good[5:],
        "bad_dtype": good[:5] + bytes([7]) + good[6:],
        "truncated_dims": good[:9],
        "truncated_payload": good[:-3],
        "oversized_payload": good + b"\x00\x00",
        "garbage": b"\x01\x02\x03\x04\x05\x06\x07\x08\x09",
    }
    for name, blob in fixtures.items():
        path.write_bytes(blob)
        with pytest.raises(StorageError):
            read_tensor(path)
    announce("storage (1000 byte-identical round trips, 9 malformed fixtures)")
