"""Command-line entry point.

Exit codes: 0 success, 1 usage/config error, 2 data error, 3 internal error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from .config import PRESETS, ConfigError, RunConfig
from .metrics import evaluate_map
from .pipeline import Predictions, StageError, infer
from .report import format_table, write_report
from .scene import BundleError, load_bundle, save_bundle
from .synth import GenerationError, generate_synthetic

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INTERNAL = 0, 1, 2, 3

log = logging.getLogger("liftseg")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _load_config(args):
    cfg = RunConfig.load(args.config) if getattr(args, "config", None) else RunConfig()
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    return cfg


def cmd_gen(args):
    cfg = _load_config(args)
    try:
        bundle = generate_synthetic(cfg.generator, seed=cfg.seed)
    except GenerationError as exc:
        raise StageError("generate", exc) from exc
    save_bundle(bundle, args.out)
    print(f"wrote scene bundle to {args.out}: {bundle.num_points} points, "
          f"{bundle.num_superpoints} superpoints, {len(bundle.views)} views, "
          f"{len(bundle.gt_instances)} instances")


def cmd_infer(args):
    cfg = _load_config(args)
    bundle = load_bundle(args.bundle)
    preds = infer(bundle, cfg)
    preds.save(args.out)
    print(f"wrote {len(preds)} predictions to {args.out}")


def evaluate(preds: Predictions, bundle):
    gts = bundle.gt_instances
    N = bundle.num_points
    gt_masks = np.stack([g.point_mask for g in gts]) if gts else np.zeros((0, N), dtype=bool)
    if preds.sp_masks.shape[1] != bundle.num_superpoints:
        raise BundleError(
            f"predictions cover {preds.sp_masks.shape[1]} superpoints, bundle has {bundle.num_superpoints}"
        )
    return evaluate_map(
        preds.point_masks(bundle.superpoint_labels),
        preds.classes,
        preds.scores,
        gt_masks,
        [g.class_id for g in gts],
        bundle.num_classes,
    )


def cmd_eval(args):
    preds = Predictions.load(args.predictions)
    bundle = load_bundle(args.bundle)
    result = evaluate(preds, bundle)
    sys.stdout.write(format_table(result))
    if args.out:
        paths = write_report(result, args.out)
        print(f"wrote {', '.join(p.name for p in paths.values())} to {args.out}")


def cmd_inspect(args):
    bundle = load_bundle(args.bundle, validate=False)
    try:
        bundle.validate()
        status = "ok"
    except BundleError as exc:
        print(f"validation: FAILED ({exc})")
        raise
    counts = {}
    for g in bundle.gt_instances:
        counts[g.class_id] = counts.get(g.class_id, 0) + 1
    print(f"points (N):          {bundle.num_points}")
    print(f"superpoints (S):     {bundle.num_superpoints}")
    print(f"views (V):           {len(bundle.views)}")
    print(f"feature dim (C):     {bundle.feature_dim}")
    print(f"classes:             {bundle.num_classes}")
    print(f"detections per view: {[len(v.detections) for v in bundle.views]}")
    print(f"gt instances:        {len(bundle.gt_instances)}")
    for c in range(bundle.num_classes):
        print(f"  class {c}: {counts.get(c, 0)} instances")
    print(f"validation:          {status}")


def cmd_config_init(args):
    text = PRESETS[args.preset]().to_json()
    if args.out:
        Path(args.out).write_text(text)
        print(f"wrote {args.preset} config to {args.out}")
    else:
        sys.stdout.write(text)


def build_parser():
    p = _Parser(prog="liftseg", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen", help="generate a synthetic scene bundle")
    g.add_argument("--config")
    g.add_argument("--seed", type=int)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen)

    i = sub.add_parser("infer", help="run the pipeline on a bundle")
    i.add_argument("bundle")
    i.add_argument("--config")
    i.add_argument("--seed", type=int)
    i.add_argument("--out", required=True)
    i.set_defaults(func=cmd_infer)

    e = sub.add_parser("eval", help="score predictions against a bundle's ground truth")
    e.add_argument("predictions")
    e.add_argument("bundle")
    e.add_argument("--out", help="directory for metrics.tsv, metrics.json and figures")
    e.set_defaults(func=cmd_eval)

    s = sub.add_parser("inspect", help="summarise and validate a bundle")
    s.add_argument("bundle")
    s.set_defaults(func=cmd_inspect)

    c = sub.add_parser("config", help="configuration helpers")
    csub = c.add_subparsers(dest="config_command", required=True, parser_class=_Parser)
    ci = csub.add_parser("init", help="emit a config with every default filled in")
    ci.add_argument("--preset", choices=sorted(PRESETS), default="default")
    ci.add_argument("--out")
    ci.set_defaults(func=cmd_config_init)
    return p


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        args.func(args)
    except (ConfigError, UsageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (BundleError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except StageError as exc:
        code = EXIT_DATA if isinstance(exc.__cause__, (BundleError, ValueError)) else EXIT_INTERNAL
        print(f"stage {exc.stage} failed: {exc.__cause__}", file=sys.stderr)
        return code
    except Exception as exc:  # pragma: no cover - last-resort reporting
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
