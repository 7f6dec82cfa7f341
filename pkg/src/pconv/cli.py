"""Command-line entry point.

Subcommands: train, inpaint, maskgen, eval, superres, gradcheck,
export-config. Every subcommand accepts --seed and is deterministic given
its inputs. Exit codes: 0 success, 1 internal failure, 2 user-input error.
"""

from __future__ import annotations

import argparse
import sys

import numpy as np

from . import config as config_mod
from .errors import PconvError, UserInputError
from .gradcheck import run_all
from .losses import composite
from .maskgen import BenchmarkSpec, build_benchmark
from .metrics import evaluate_benchmark
from .network import Network
from .pngio import read_image, read_mask, write_image
from .superres import superres
from .train import run_training


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="pconv",
        description="Image inpainting with mask-aware convolutions.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="run one training phase")
    p.add_argument("--config", required=True, help="flat key = value file")
    p.add_argument("--phase", choices=("initial", "finetune"))
    p.add_argument("--resume", help="checkpoint to continue from")
    p.add_argument("--seed", type=int)

    p = sub.add_parser("inpaint", help="fill the holes of one image")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--mask", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("maskgen", help="generate a categorized mask benchmark")
    p.add_argument("--out", required=True)
    p.add_argument("--size", type=int, default=512)
    p.add_argument("--per-cell", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--margin", type=int, help="border-zone width override")

    p = sub.add_parser("eval", help="score a checkpoint over a benchmark")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--images", required=True)
    p.add_argument("--benchmark", required=True)
    p.add_argument("--out", required=True, help="CSV report path")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--l1-region", choices=("full", "hole"), default="full")
    p.add_argument("--raw", action="store_true",
                   help="score raw outputs instead of composited ones")

    p = sub.add_parser("superres", help="upscale by inpainting placed pixels")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--in", dest="low", required=True)
    p.add_argument("--factor", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("gradcheck", help="finite-difference all backwards")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--sizes", choices=("default", "small"), default="default")

    p = sub.add_parser("export-config", help="write an annotated config file")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    return parser


def _cmd_train(args):
    values = config_mod.load_config(args.config)
    if args.phase:
        values["phase"] = args.phase
    if args.resume:
        values["resume"] = args.resume
    if args.seed is not None:
        values["seed"] = str(args.seed)
    try:
        cfg = config_mod.train_config_from_values(values, origin=args.config)
    except PconvError as exc:
        raise UserInputError(str(exc))
    final = run_training(cfg)
    print("final checkpoint: %s" % final)
    return 0


def _cmd_inpaint(args):
    net = Network.load(args.ckpt)
    image = read_image(args.image, dtype=np.float32)
    mask2d = read_mask(args.mask)
    if mask2d.shape != image.shape[1:]:
        raise UserInputError("mask size %r does not match image size %r"
                             % (mask2d.shape, image.shape[1:]))
    mask = np.broadcast_to(mask2d.astype(np.float32),
                           (1,) + image.shape).copy()
    out = net.forward(image[None], mask, training=False)
    comp = composite(out, image[None], mask)[0]
    write_image(args.out, comp)
    print("wrote %s" % args.out)
    return 0


def _cmd_maskgen(args):
    spec = BenchmarkSpec(out_dir=args.out, per_cell=args.per_cell,
                         size=args.size, seed=args.seed, margin=args.margin)
    entries = build_benchmark(spec)
    print("wrote %d masks to %s" % (len(entries), args.out))
    return 0


def _cmd_eval(args):
    net = Network.load(args.ckpt)
    report = evaluate_benchmark(net, args.images, args.benchmark, args.seed,
                                l1_region=args.l1_region,
                                composited=not args.raw)
    with open(args.out, "w") as fh:
        fh.write(report.to_csv())
    print(report.to_text(), end="")
    if report.skipped:
        print("skipped %d items" % report.skipped, file=sys.stderr)
    print("wrote %s" % args.out)
    return 0


def _cmd_superres(args):
    net = Network.load(args.ckpt)
    low = read_image(args.low, dtype=np.float32)
    out = superres(net, low[None], args.factor)[0]
    write_image(args.out, out)
    print("wrote %s" % args.out)
    return 0


def _cmd_gradcheck(args):
    results = run_all(seed=args.seed, sizes=args.sizes)
    for result in results:
        print(result.line())
    failed = [r for r in results if not r.passed]
    if failed:
        print("%d of %d suites failed" % (len(failed), len(results)),
              file=sys.stderr)
        return 1
    print("all %d suites passed" % len(results))
    return 0


def _cmd_export_config(args):
    with open(args.out, "w") as fh:
        fh.write(config_mod.DEFAULT_CONFIG_TEXT)
    print("wrote %s" % args.out)
    return 0


_COMMANDS = {
    "train": _cmd_train,
    "inpaint": _cmd_inpaint,
    "maskgen": _cmd_maskgen,
    "eval": _cmd_eval,
    "superres": _cmd_superres,
    "gradcheck": _cmd_gradcheck,
    "export-config": _cmd_export_config,
}


def main(argv=None):
    args = _build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except UserInputError as exc:
        print("error: %s" % exc, file=sys.stderr)
        return 2
    except PconvError as exc:
        print("internal error: %s" % exc, file=sys.stderr)
        return 1
    except OSError as exc:
        print("error: %s" % exc, file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
