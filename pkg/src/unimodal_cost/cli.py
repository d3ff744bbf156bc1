"""Command-line entry point: ``unimodal-cost {gen,train,eval,inspect-pixel}``.

Exit codes: 0 success, 1 I/O or parse failure, 2 usage or validation error,
3 numerical abort during training.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from .errors import DomainError, FormatError, NumericalAbort
from .experiment import ExperimentConfig, run_ablation, run_experiment, write_run
from .formats import (
    read_disparity_pfm,
    read_disparity_png16,
    read_mask,
    load_volume,
    write_curve_csv,
    write_disparity_pfm,
    write_mask,
    write_pgm,
)
from .labels import label_rows, parse_label_kind
from .losses import cross_entropy
from .metrics import count_local_maxima, d1_metrics, metrics_csv_text, write_metrics_csv
from .scenes import SCENE_KINDS, SceneSpec, foreground_mask, generate_scene
from .volume import softmax_neg_cost

log = logging.getLogger("unimodal_cost")

EXIT_IO, EXIT_USAGE, EXIT_NUMERIC = 1, 2, 3


def _read_disparity(path):
    if str(path).lower().endswith(".png"):
        return read_disparity_png16(path)
    return read_disparity_pfm(path)


def cmd_gen(args):
    spec = SceneSpec(args.width, args.height, args.dmax, args.kind, args.d_bg, args.d_fg, args.noise)
    pair, gt = generate_scene(spec, args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_pgm(out / "left.pgm", pair.left)
    write_pgm(out / "right.pgm", pair.right)
    write_disparity_pfm(out / "gt.pfm", gt)
    write_mask(out / "fg_mask.pgm", foreground_mask(spec))
    log.info("wrote scene to %s (%d valid pixels)", out, gt.valid_count)
    return 0


def cmd_train(args):
    config = ExperimentConfig.from_file(args.config, mu=args.mu, steps=args.steps, seed=args.seed,
                                        output_dir=args.out)
    if not config.output_dir:
        raise DomainError("no output directory: set output_dir in the config or pass --out")
    if args.ablation:
        rows = run_ablation(config, config.output_dir)
        for row in rows:
            print(f"{row['variant']}: unimodal_fraction={row['unimodal_fraction']} "
                  f"three_px_error={row['three_px_error']}")
        return 0
    result = run_experiment(config)
    write_run(result, config.output_dir)
    sys.stdout.write(result.metrics.to_text())
    sys.stdout.write(result.diagnostics.to_text())
    return 0


def cmd_eval(args):
    pred = _read_disparity(args.pred)
    gt = _read_disparity(args.gt)
    if pred.shape != gt.shape:
        raise DomainError(f"prediction {pred.shape} and ground truth {gt.shape} differ in shape")
    fg = read_mask(args.fg_mask) if args.fg_mask else None
    reports = [("all", d1_metrics(pred, gt, fg))]
    if args.noc_mask:
        reports.append(("noc", d1_metrics(pred, gt, fg, region=read_mask(args.noc_mask))))
    for region, rep in reports:
        text = rep.to_text()
        if region != "all":
            text = "".join(f"{region}.{line}\n" for line in text.splitlines())
        sys.stdout.write(text)
    rows = [rep.csv_row(pred=str(args.pred), region=region) for region, rep in reports]
    if args.csv:
        write_metrics_csv(args.csv, rows)
    else:
        sys.stdout.write(metrics_csv_text(rows))
    return 0


def cmd_inspect(args):
    volume = load_volume(args.volume)
    if not (0 <= args.m < volume.height and 0 <= args.n < volume.width):
        raise DomainError(f"pixel ({args.m}, {args.n}) outside a {volume.height}x{volume.width} volume")
    probs = softmax_neg_cost(volume).probs[args.m, args.n]
    phi = None
    if args.label:
        if not args.gt:
            raise DomainError("--label needs --gt")
        gt = _read_disparity(args.gt)
        if gt.shape != (volume.height, volume.width):
            raise DomainError("ground truth and volume differ in shape")
        if not gt.valid[args.m, args.n]:
            raise DomainError(f"pixel ({args.m}, {args.n}) has no valid ground truth")
        kind = parse_label_kind(args.label, args.sigma, args.scale,
                                tuple(float(x) for x in args.weights.split(",")))
        if kind is None:
            raise DomainError("--label none gives no target curve")
        phi = label_rows(kind, gt.values[args.m, args.n], volume.d_max)
    rows = [(args.m, args.n, i, None if phi is None else phi[i], probs[i]) for i in range(probs.size)]

    idx = np.arange(probs.size)
    summary = [
        f"pixel = ({args.m}, {args.n})",
        f"softargmin = {float(probs @ idx)!r}",
        f"wta = {int(np.argmin(volume.costs[args.m, args.n]))}",
        f"local_maxima = {int(count_local_maxima(probs))}",
        f"peak_mass = {float(probs.max())!r}",
    ]
    if phi is not None:
        summary.append(f"ground_truth = {float(gt.values[args.m, args.n])!r}")
        summary.append(f"cross_entropy = {cross_entropy(phi, probs)!r}")
    text = "\n".join(summary) + "\n"
    if args.csv:
        write_curve_csv(args.csv, rows)
        sys.stdout.write(text)
    else:
        write_curve_csv(sys.stdout, rows)
        sys.stderr.write(text)
    return 0


def build_parser():
    parser = argparse.ArgumentParser(prog="unimodal-cost",
                                     description="Stereo cost-volume losses, diagnostics and metrics.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate a synthetic stereo scene")
    g.add_argument("--width", type=int, default=64)
    g.add_argument("--height", type=int, default=48)
    g.add_argument("--dmax", type=int, default=16)
    g.add_argument("--kind", choices=SCENE_KINDS, default="box")
    g.add_argument("--d-bg", type=float, default=4.0)
    g.add_argument("--d-fg", type=float, default=10.0)
    g.add_argument("--noise", type=float, default=0.0)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen)

    t = sub.add_parser("train", help="run a training experiment from a config file")
    t.add_argument("config")
    t.add_argument("--out", help="output directory (overrides output_dir)")
    t.add_argument("--mu", type=float, help="cross-entropy weight (default 0.05)")
    t.add_argument("--steps", type=int)
    t.add_argument("--seed", type=int)
    t.add_argument("--ablation", action="store_true",
                   help="run L1, L1+neighbor, L2+Gaussian and L1+Laplacian side by side")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="score a predicted disparity map")
    e.add_argument("--pred", required=True)
    e.add_argument("--gt", required=True)
    e.add_argument("--fg-mask")
    e.add_argument("--noc-mask", help="also report metrics restricted to this mask")
    e.add_argument("--csv", help="write the CSV row here instead of stdout")
    e.set_defaults(func=cmd_eval)

    i = sub.add_parser("inspect-pixel", help="dump one pixel's distribution curve")
    i.add_argument("--volume", required=True, help="cost volume snapshot (.npy)")
    i.add_argument("--m", type=int, required=True)
    i.add_argument("--n", type=int, required=True)
    i.add_argument("--gt")
    i.add_argument("--label", help="one_hot | three_pixel | gaussian | laplacian")
    i.add_argument("--sigma", type=float, default=1.0)
    i.add_argument("--scale", type=float, default=1.0)
    i.add_argument("--weights", default="0.5,0.2,0.05")
    i.add_argument("--csv", help="write the curve here; summary then goes to stdout")
    i.set_defaults(func=cmd_inspect)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except NumericalAbort as exc:
        print(f"error: numerical abort: {exc} (step {exc.step})", file=sys.stderr)
        return EXIT_NUMERIC
    except FormatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (DomainError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
