"""Command-line interface: ``defreg register|warp|eval|sample|synth``.

Exit codes: 0 success, 1 runtime failure (IO, numeric, data layout),
2 usage or configuration error. Every output is written to a temporary
file and renamed, and all inputs are validated before the first write.
"""
import argparse
import os
import sys

from . import io
from .config import parse_config
from .data import SamplerConfig, sampler_report, scan_layout
from .errors import ConfigInvalid, DefregError, DimsMismatch, UsageError
from .grid import warp
from .optim import (endpoint_error, evaluate, foreground_mask, hard_dice, jacobian_stats, register,
                    target_registration_error)
from .synth import SynthSpec, generate


def _threads(args):
    if args.threads is not None:
        return args.threads
    env = os.environ.get("DEFREG_THREADS")
    if env is None:
        return None
    try:
        value = int(env)
    except ValueError:
        raise ConfigInvalid(f"DEFREG_THREADS must be a positive integer, got {env!r}") from None
    if value < 1:
        raise ConfigInvalid(f"DEFREG_THREADS must be a positive integer, got {env!r}")
    return value


def _landmarks(args):
    if (args.landmarks_fixed is None) != (args.landmarks_moving is None):
        raise UsageError("--landmarks-fixed and --landmarks-moving go together")
    if args.landmarks_fixed is None:
        return None
    return io.read_landmarks(args.landmarks_fixed), io.read_landmarks(args.landmarks_moving)


def cmd_register(args):
    if (args.fixed_label is None) != (args.moving_label is None):
        raise UsageError("--fixed-label and --moving-label go together")
    doc = parse_config(args.config)
    if args.seed is not None:
        doc["seed"] = args.seed
    threads = _threads(args)
    if threads is not None:
        doc["threads"] = threads
    config = parse_config(doc)

    fixed = io.read_volume(args.fixed)
    moving = io.read_volume(args.moving)
    fixed_label = io.read_volume(args.fixed_label) if args.fixed_label else None
    moving_label = io.read_volume(args.moving_label) if args.moving_label else None
    landmarks = _landmarks(args)
    gt = io.read_field(args.gt_ddf) if args.gt_ddf else None

    result = register(fixed, moving, fixed_label, moving_label, config=config,
                      verbose=not args.quiet)
    metrics = evaluate(result, fixed_label, moving_label, landmarks)
    metrics["loss"] = result.final_loss.as_dict()
    metrics["seed"] = result.seed
    metrics["config"] = result.config
    if gt is not None:
        metrics["epe_foreground"] = endpoint_error(result.ddf, gt, foreground_mask(fixed))
        metrics["epe"] = endpoint_error(result.ddf, gt)
    print(f"registration finished in {result.seconds:.2f} s", file=sys.stderr)

    out = args.out
    io.write_field(result.ddf, os.path.join(out, "ddf.nii.gz"))
    io.write_volume(warp(moving, result.ddf), os.path.join(out, "warped.nii.gz"))
    if moving_label is not None:
        io.write_volume(warp(moving_label, result.ddf), os.path.join(out, "warped_label.nii.gz"))
    io.write_json(metrics, os.path.join(out, "metrics.json"))


def cmd_warp(args):
    image = io.read_volume(args.image)
    ddf = io.read_field(args.ddf)
    io.write_volume(warp(image, ddf, args.interp), args.out)


def cmd_eval(args):
    metrics = {}
    if (args.pred is None) != (args.truth is None):
        raise UsageError("--pred and --truth go together")
    landmarks = _landmarks(args)
    if landmarks is not None and args.ddf is None:
        raise UsageError("landmarks need --ddf")
    if args.pred is not None:
        pred, truth = io.read_volume(args.pred), io.read_volume(args.truth)
        if pred.dims != truth.dims:
            raise DimsMismatch(f"pred {pred.dims} vs truth {truth.dims}")
        metrics["dice"] = hard_dice(truth, pred)
    if args.ddf is not None:
        ddf = io.read_field(args.ddf)
        if landmarks is not None:
            metrics["tre_mm"] = target_registration_error(ddf, *landmarks)
        metrics["jacobian"] = jacobian_stats(ddf)
    if not metrics:
        raise UsageError("nothing to evaluate; give --pred/--truth and/or --ddf")
    io.write_json(metrics, args.out)


def cmd_sample(args):
    config = SamplerConfig(args.seed, args.option, args.label_stage == "on")
    if args.epochs < 1:
        raise UsageError("--epochs must be >= 1")
    index = scan_layout(args.layout, args.mode)
    io.write_json(sampler_report(index, config, args.epochs), args.report)


def cmd_synth(args):
    spec = SynthSpec(kind=args.kind, size=args.size, amplitude=args.amplitude, seed=args.seed)
    case = generate(spec)
    out = args.out
    name = "case000.nii.gz"
    io.write_volume(case["fixed"], os.path.join(out, "fixed_images", name))
    io.write_volume(case["moving"], os.path.join(out, "moving_images", name))
    if "fixed_label" in case:
        io.write_volume(case["fixed_label"], os.path.join(out, "fixed_labels", name))
        io.write_volume(case["moving_label"], os.path.join(out, "moving_labels", name))
    if "gt_ddf" in case:
        io.write_field(case["gt_ddf"], os.path.join(out, "gt_ddf.nii.gz"))
        fixed_points, moving_points = case["landmarks"]
        io.write_landmarks(fixed_points, os.path.join(out, "landmarks.csv"))
        io.write_landmarks(moving_points, os.path.join(out, "landmarks_moving.csv"))


def build_parser():
    parser = argparse.ArgumentParser(prog="defreg", description="Deformable image registration.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("register", help="optimize a transform aligning moving to fixed")
    p.add_argument("--fixed", required=True)
    p.add_argument("--moving", required=True)
    p.add_argument("--fixed-label")
    p.add_argument("--moving-label")
    p.add_argument("--config", required=True, help="JSON config file")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int)
    p.add_argument("--threads", type=int)
    p.add_argument("--gt-ddf", help="ground-truth DDF; adds endpoint errors to metrics.json")
    p.add_argument("--landmarks-fixed")
    p.add_argument("--landmarks-moving")
    p.add_argument("--quiet", action="store_true", help="no per-iteration progress lines")
    p.set_defaults(func=cmd_register)

    p = sub.add_parser("warp", help="resample an image through a DDF")
    p.add_argument("--image", required=True)
    p.add_argument("--ddf", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--interp", choices=("linear", "nearest"), default="linear")
    p.set_defaults(func=cmd_warp)

    p = sub.add_parser("eval", help="Dice, TRE and Jacobian statistics")
    p.add_argument("--pred")
    p.add_argument("--truth")
    p.add_argument("--landmarks-fixed")
    p.add_argument("--landmarks-moving")
    p.add_argument("--ddf")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sample", help="audit the staged sampler on a dataset layout")
    p.add_argument("--layout", required=True)
    p.add_argument("--mode", required=True, choices=("paired", "unpaired", "grouped"))
    p.add_argument("--option", choices=("forward", "backward", "unconstrained"),
                   default="unconstrained")
    p.add_argument("--label-stage", choices=("on", "off"), default="on")
    p.add_argument("--epochs", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--report", required=True)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("synth", help="write a synthetic paired case with ground truth")
    p.add_argument("--kind", choices=("sinusoid", "spheres"), default="sinusoid")
    p.add_argument("--size", type=int, default=32)
    p.add_argument("--amplitude", type=float, default=3.0)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        args.func(args)
    except UsageError as exc:
        print(f"defreg {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    except (DefregError, OSError, ValueError, FloatingPointError) as exc:
        print(f"defreg {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
