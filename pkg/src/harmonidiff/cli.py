"""Command-line entry point.

Exit codes: 0 success (including partial benchmark failures), 2 usage error,
3 configuration error, 4 total failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import harness, metrics
from .errors import ConfigError, ContractError, HarmoniDiffError, ManifestError
from .harmonize import compose, select_best
from .imagecore import load_image, save_image
from .tasks import CompositionTask

EXIT_OK, EXIT_USAGE, EXIT_CONFIG, EXIT_FAILURE = 0, 2, 3, 4

log = logging.getLogger("harmonidiff")


def _cmd_compose(args) -> int:
    cfg = harness.load_config(args.config)
    try:
        task = CompositionTask(
            source=load_image(args.source), target=load_image(args.target),
            paste_origin=(args.paste_x, args.paste_y),
            source_mask=harness.load_mask(args.mask) if args.mask else None,
            src_gsd=args.src_gsd, tar_gsd=args.tar_gsd)
    except ContractError as exc:
        raise _Usage(str(exc)) from exc
    scorer = harness.scorer_for(cfg)
    cands = compose(task, cfg.harmonize, scorer)
    depth, image = select_best(cands)
    out = Path(args.out)
    (out / "candidates").mkdir(parents=True, exist_ok=True)
    save_image(image, out / "composite.png")
    listing = []
    for cand in cands:
        name = f"candidates/depth_{cand.depth:02d}.png"
        save_image(cand.image, out / name)
        listing.append({"depth": cand.depth, "score": cand.score, "file": name})
    with open(out / "candidates.json", "w") as fh:
        json.dump({"selected_depth": depth, "candidates": listing}, fh, indent=2)
    if args.sheet:
        harness.contact_sheet(cands, out / "sheet.png")
    print(f"selected depth {depth}; wrote {out / 'composite.png'}")
    return EXIT_OK


def _cmd_bench(args) -> int:
    cfg = harness.load_config(args.config)
    methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    bad = [m for m in methods if m not in harness.METHODS]
    if bad or not methods:
        raise _Usage(f"--methods must be a comma list drawn from {','.join(harness.METHODS)}")
    manifest = harness.load_manifest(args.manifest)
    report = harness.run_benchmark(manifest, methods, cfg, args.out, workers=args.workers)
    failed = sum(r.status != "ok" for r in report.rows)
    print(f"{len(report.rows)} rows ({failed} failed); report in {args.out}")
    for row in report.rows:
        if row.status != "ok":
            log.warning("%s/%s failed: %s", row.task_id, row.method, row.reason)
    return EXIT_FAILURE if report.all_failed else EXIT_OK


def _cmd_metrics(args) -> int:
    image = load_image(args.image)
    mask = harness.load_mask(args.mask)
    if mask.shape != image.shape[:2]:
        raise _Usage(f"mask shape {mask.shape} does not match image {image.shape[:2]}")
    print(f"{metrics.bgd_abs(image, mask, args.w):.6g}")
    return EXIT_OK


def _cmd_train_scorer(args) -> int:
    rng = np.random.default_rng(args.seed)
    positives = harness.load_labelled_dir(args.positives, rng)
    negatives = harness.load_labelled_dir(args.negatives, rng)
    if not positives or not negatives:
        raise _Usage("both --positives and --negatives must contain images")
    scorer = metrics.train_scorer(positives, negatives, seed=args.seed)
    scorer.save(args.out)
    print(f"trained on {len(positives)}+{len(negatives)} samples, "
          f"training accuracy {scorer.training_accuracy:.4f}; wrote {args.out}")
    return EXIT_OK


def _cmd_gen_negatives(args) -> int:
    cfg = harness.load_config(args.config)
    manifest = harness.load_manifest(args.manifest)
    written = harness.generate_negatives(manifest, args.out, cfg)
    print(f"wrote {len(written)} negatives to {args.out}")
    return EXIT_OK if written or not manifest.entries else EXIT_FAILURE


class _Usage(Exception):
    pass


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="harmonidiff", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("compose", help="harmonize one source into one target")
    p.add_argument("--source", required=True)
    p.add_argument("--target", required=True)
    p.add_argument("--mask")
    p.add_argument("--paste-x", type=int, required=True)
    p.add_argument("--paste-y", type=int, required=True)
    p.add_argument("--src-gsd", type=float, required=True)
    p.add_argument("--tar-gsd", type=float, required=True)
    p.add_argument("--config")
    p.add_argument("--out", default="out")
    p.add_argument("--sheet", action="store_true", help="also write a candidate contact sheet")
    p.set_defaults(func=_cmd_compose)

    p = sub.add_parser("bench", help="run methods over a manifest and write reports")
    p.add_argument("--manifest", required=True)
    p.add_argument("--methods", required=True, help="comma list, e.g. copy_paste,poisson,harmonidiff")
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=_cmd_bench)

    p = sub.add_parser("metrics", help="print the boundary gradient difference of an image")
    p.add_argument("--image", required=True)
    p.add_argument("--mask", required=True)
    p.add_argument("--w", type=int, default=metrics.BGD_MARGIN)
    p.set_defaults(func=_cmd_metrics)

    p = sub.add_parser("train-scorer", help="fit a harmony scorer from image folders")
    p.add_argument("--positives", required=True)
    p.add_argument("--negatives", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_train_scorer)

    p = sub.add_parser("gen-negatives", help="write copy-paste and Poisson corruptions")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.set_defaults(func=_cmd_gen_negatives)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except _Usage as exc:
        parser.print_usage(sys.stderr)
        print(f"harmonidiff: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ConfigError, ManifestError) as exc:
        print(f"harmonidiff: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, HarmoniDiffError) as exc:
        print(f"harmonidiff: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
