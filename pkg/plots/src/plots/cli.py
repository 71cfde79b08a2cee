"""Command line entry point: plot --kind KIND --in DIR --out FILE."""

from __future__ import annotations

import argparse
import sys

from .families import KINDS, plot_family
from .io import PlotDataError


def make_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="plot",
        description="Render one figure family from a saoi-sim output "
                    "directory.")
    ap.add_argument("--kind", required=True, choices=list(KINDS),
                    help="figure family")
    ap.add_argument("--in", dest="in_dir", required=True, metavar="DIR",
                    help="saoi-sim output directory")
    ap.add_argument("--out", required=True, metavar="FILE",
                    help="image file to write (format from the extension)")
    return ap


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    try:
        path = plot_family(args.kind, args.in_dir, args.out)
    except PlotDataError as exc:
        print(f"plot: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"plot: {exc}", file=sys.stderr)
        return 3
    print(f"wrote {path}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
