"""make_figures: render run-directory CSVs as static figures."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .figures import KINDS, PlotError, build, render


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="make_figures",
        description="Static figures from distillation run directories",
    )
    parser.add_argument("--runs", nargs="+", required=True,
                        help="one or more run directories")
    parser.add_argument("--kind", choices=KINDS, required=True)
    parser.add_argument("--out", required=True, help="output image (png/svg)")
    parser.add_argument("--label", action="append", default=[],
                        help="run_id=display label (repeatable)")
    parser.add_argument("--emit-data", default=None,
                        help="also write the plotted arrays as JSON")
    args = parser.parse_args(argv)

    labels = {}
    for item in args.label:
        if "=" not in item:
            print(f"bad --label {item!r}, expected run_id=text")
            return 2
        key, value = item.split("=", 1)
        labels[key] = value

    try:
        data = build(args.kind, args.runs, labels)
        render(data, args.out)
    except PlotError as e:
        print(f"error: {e}")
        return 1
    if args.emit_data:
        Path(args.emit_data).write_text(data.to_json())
    print(f"wrote {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
