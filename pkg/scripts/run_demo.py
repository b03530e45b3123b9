#!/usr/bin/env python3
"""End-to-end demo on the desk preset: generate, rasterize, infer, fit, score.

Writes all artifacts under out/demo (override with --out) and prints the
metrics report for the fitted outputs plus the per-stage latency table.
"""
import argparse
import sys
from pathlib import Path

from mvfusion.cli import main as cli


def run(argv) -> None:
    code = cli(argv)
    if code != 0:
        sys.exit(code)


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="out/demo")
    parser.add_argument("--seed", type=int, default=1)
    parser.add_argument("--frames", type=int, default=2)
    parser.add_argument("--no-camera", action="store_true")
    args = parser.parse_args()

    base = ["--preset", "desk", "--seed", str(args.seed), "--out", args.out]
    camera = ["--no-camera"] if args.no_camera else []

    run(["gen", *base, "--frames", str(args.frames)])
    run(["raster", *base])
    run(["project", *base])
    run(["forward", *base, *camera])
    run(["bench", *base, *camera, "--repeats", "5"])
    run(["fit", *base, "--steps", "400"])
    run(["eval", *base])

    out = Path(args.out)
    print()
    print("== metrics (fitted outputs) ==")
    print((out / "metrics.txt").read_text())
    print("== latency ==")
    print((out / "latency.txt").read_text())


if __name__ == "__main__":
    main()
