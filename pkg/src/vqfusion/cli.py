"""Command-line interface.

Subcommands: synth, train, eval, cross-eval, score, grad-check, plot.
Exit codes: 0 success, 1 usage error, 2 data error.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from .autodiff import NonFiniteError, ShapeError
from .config import ConfigError, load_config
from .scoring import ScoreBatch, logistic_fit, read_scores_csv, write_scores_csv
from .storage import ManifestError, StorageError, load_manifest, validate_manifest

USAGE_ERROR = 1
DATA_ERROR = 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise SystemExit(USAGE_ERROR)


def _add_config_flags(p):
    p.add_argument("--config", type=Path, default=None, help="JSON config file")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--batch", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--dim", type=int, default=None)
    p.add_argument("--num-frames", type=int, default=None, dest="num_frames")
    p.add_argument("--fusion-mode", default=None, dest="fusion_mode",
                   choices=["text_guided", "concat", "add"])
    p.add_argument("--temporal-conv", default=None, dest="temporal_conv",
                   choices=["tadaconv", "c3d", "r2plus1d"])
    p.add_argument("--branches", default=None,
                   help="comma-separated subset of bvfe,tcm,vbtc")
    p.add_argument("--temperature", type=float, default=None)


def _config_from_args(args):
    overrides = {
        key: getattr(args, key, None)
        for key in ("seed", "epochs", "batch", "lr", "dim", "num_frames",
                    "fusion_mode", "temporal_conv", "temperature")
    }
    if getattr(args, "branches", None):
        overrides["branches"] = tuple(args.branches.split(","))
    return load_config(args.config, overrides)


def build_parser():
    parser = _Parser(prog="vqfusion", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic corpus")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--n-videos", type=int, default=200)
    p.add_argument("--dim", type=int, default=32)
    p.add_argument("--noise", type=float, default=0.02)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--direction-seed", type=int, default=None,
                   help="seed for the planted direction (defaults to --seed)")
    p.add_argument("--num-frames", type=int, default=16, dest="num_frames")
    p.add_argument("--dataset-name", default="synth")

    p = sub.add_parser("train", help="train on a manifest's train split")
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    _add_config_flags(p)

    p = sub.add_parser("eval", help="evaluate a checkpoint on one split")
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--checkpoint", type=Path, default=None)
    p.add_argument("--split", default="test", choices=["train", "val", "test", "all"])
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--no-figure", action="store_true")
    _add_config_flags(p)

    p = sub.add_parser("cross-eval", help="evaluate a checkpoint on other corpora")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--test-manifests", type=Path, nargs="+", required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--no-figure", action="store_true")

    p = sub.add_parser("score", help="score one video from a manifest")
    p.add_argument("video_id")
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--checkpoint", type=Path, default=None)
    _add_config_flags(p)

    p = sub.add_parser("grad-check", help="finite-difference gradient verification")
    p.add_argument("--tol", type=float, default=1e-4)

    p = sub.add_parser("plot", help="render a score CSV as a scatter + fit figure")
    p.add_argument("--scores", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True,
                   help="output directory for scores.csv and scatter.svg")
    return parser


# ---------------------------------------------------------------------------
# subcommand bodies
# ---------------------------------------------------------------------------


def _load_validated_manifest(path):
    manifest = load_manifest(path)
    report = validate_manifest(manifest)
    if not report.ok:
        raise ManifestError(f"{path}: {report}")
    return manifest


def _write_report(report, out_dir, stem, figure=True):
    from .plotting import scatter_with_fit

    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / f"{stem}.json").write_text(report.to_json_text(), encoding="utf-8")
    write_scores_csv(report.scores, out_dir / f"{stem}.csv")
    if figure:
        preds = [s[1] for s in report.scores]
        gts = [s[2] for s in report.scores]
        scatter_with_fit(
            preds, gts, fit=report.logistic,
            title=f"{report.dataset} [{report.split}]",
            out_path=out_dir / f"{stem}.svg",
        )
    print(f"{report.dataset} [{report.split}]  SROCC={report.srocc:.4f}  "
          f"PLCC={report.plcc:.4f}  n={report.n_videos}")


def _cmd_synth(args):
    from .synth import planted_direction, synth_dataset

    direction_seed = args.direction_seed if args.direction_seed is not None else args.seed
    direction = planted_direction(args.dim, direction_seed)
    synth_dataset(
        args.out, args.n_videos, args.dim, direction, args.noise, args.seed,
        num_frames=args.num_frames, dataset_name=args.dataset_name,
    )
    print(f"wrote {args.n_videos} videos to {args.out}")
    return 0


def _cmd_train(args):
    from . import harness

    config = _config_from_args(args)
    manifest = _load_validated_manifest(args.manifest)
    model, log = harness.train(config, manifest, args.out)
    corpus = harness.load_corpus(manifest)
    report = harness.evaluate(model, manifest, split="val", corpus=corpus)
    _write_report(report, args.out, "eval_val")
    print(f"final train loss {log.epoch_losses[-1]:.4f} over {config.epochs} epochs")
    return 0


def _cmd_eval(args):
    from . import harness

    manifest = _load_validated_manifest(args.manifest)
    model = _model_for(args, manifest)
    report = harness.evaluate(model, manifest, split=args.split)
    _write_report(report, args.out, f"eval_{args.split}", figure=not args.no_figure)
    return 0


def _model_for(args, manifest):
    from . import harness

    if args.checkpoint is not None:
        return harness.load_checkpoint(args.checkpoint)
    # fresh seeded initialization: useful for pipeline checks; scores are
    # untrained and say nothing about quality yet
    config = _config_from_args(args)
    corpus = harness.load_corpus(manifest)
    from .model import build_model

    return build_model(config, corpus.frame_channels, corpus.fragment_channels)


def _cmd_cross_eval(args):
    from . import harness

    model = harness.load_checkpoint(args.checkpoint)
    for manifest_path in args.test_manifests:
        manifest = _load_validated_manifest(manifest_path)
        report = harness.evaluate(model, manifest, split="all")
        stem = f"cross_{Path(manifest_path).parent.name or 'set'}"
        _write_report(report, args.out, stem, figure=not args.no_figure)
    return 0


def _cmd_score(args):
    from . import harness

    manifest = _load_validated_manifest(args.manifest)
    wanted = [e for e in manifest.entries if e.video_id == args.video_id]
    if not wanted:
        raise ManifestError(f"video_id {args.video_id!r} not in manifest")
    model = _model_for(args, manifest)
    corpus = harness.load_corpus(manifest)
    videos = [v for v in corpus.videos if v.video_id == args.video_id]
    preds = harness.predict_scores(model, corpus, videos)
    print(f"{args.video_id}: q_pre={preds[0]:.6f} mos={videos[0].mos:.6f}")
    return 0


def _cmd_grad_check(args):
    from .harness import run_grad_checks

    ok, lines = run_grad_checks(tol=args.tol)
    for line in lines:
        print(line)
    print("grad-check:", "PASS" if ok else "FAIL")
    return 0 if ok else 1


def _cmd_plot(args):
    from .plotting import scatter_with_fit

    rows = read_scores_csv(args.scores)
    if len(rows) < 5:
        raise ManifestError(f"{args.scores}: need >= 5 rows to fit, got {len(rows)}")
    preds = np.asarray([r[1] for r in rows])
    gts = np.asarray([r[2] for r in rows])
    fit = logistic_fit(ScoreBatch(preds, gts))
    args.out.mkdir(parents=True, exist_ok=True)
    write_scores_csv(rows, args.out / "scores.csv")
    figure = scatter_with_fit(preds, gts, fit=fit, out_path=args.out / "scatter.svg")
    print(f"wrote {args.out / 'scores.csv'} and {figure}")
    return 0


_COMMANDS = {
    "synth": _cmd_synth,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "cross-eval": _cmd_cross_eval,
    "score": _cmd_score,
    "grad-check": _cmd_grad_check,
    "plot": _cmd_plot,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 0 for --help; keep that, map errors to 1
        return int(exc.code or 0)
    try:
        return _COMMANDS[args.command](args)
    except (ManifestError, StorageError, ConfigError, ShapeError,
            NonFiniteError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return DATA_ERROR


if __name__ == "__main__":
    sys.exit(main())
