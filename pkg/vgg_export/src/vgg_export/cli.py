"""Command line entry point: export-vgg --out vgg16.pcnv."""

import argparse
import sys

from .export import ExportError, export_vgg, load_state_dict_file


def build_parser():
    parser = argparse.ArgumentParser(
        prog="export-vgg",
        description="Export VGG16 conv weights up to pool3 as a PCNV "
                    "feature-weight file.")
    parser.add_argument("--out", required=True, help="output .pcnv path")
    parser.add_argument("--norm", choices=("zero-one", "imagenet"),
                        default="imagenet",
                        help="input normalization recorded in the file")
    parser.add_argument("--from-state-dict", metavar="PATH",
                        help="load weights from a torch.save'd state dict "
                             "instead of downloading")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        state_dict = None
        if args.from_state_dict:
            state_dict = load_state_dict_file(args.from_state_dict)
        entries = export_vgg(args.out, state_dict=state_dict, norm=args.norm)
    except ExportError as exc:
        print("error: %s" % exc, file=sys.stderr)
        return 2
    except OSError as exc:
        print("error: %s" % exc, file=sys.stderr)
        return 2
    print("wrote %s (%d entries, norm=%s)" % (args.out, len(entries),
                                              args.norm))
    return 0


if __name__ == "__main__":
    sys.exit(main())
