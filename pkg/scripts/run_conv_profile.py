"""Profile the subsampling frontends on a synthetic spectrogram stream.

Generates gaussian chunks shaped like 80-mel feature windows, then runs the
dynamic-range profiler over the standard and depthwise-separable stacks, with
and without the sqrt(512) output multiplier, and writes the MAC comparison
table. Use --format none for exact float64 peaks.
"""

import argparse
import sys
from pathlib import Path

from lowprec.cli import main


def run(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out-dir", default="reports/conv")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--format", default="fp16")
    ap.add_argument("--chunks", type=int, default=4,
                    help="number of 80-row windows to generate")
    ap.add_argument("--width", type=int, default=1000,
                    help="frames per window")
    args = ap.parse_args(argv)

    out = Path(args.out_dir)
    stream = out / "spectrogram_stream.bin"
    rc = main(["gen-stream", str(stream), "--dist", "gaussian", "--scale", "2",
               "--rows", str(80 * args.chunks), "--chunk-rows", "80",
               "--width", str(args.width), "--seed", str(args.seed),
               "--out-dir", str(out)])
    if rc:
        return rc

    return main(["profile-conv", str(stream),
                 "--conv", "conv2d6,dws2d6,conv2d6x22,dws2d6x22",
                 "--format", args.format, "--out-dir", str(out),
                 "--seed", str(args.seed)])


if __name__ == "__main__":
    sys.exit(run())
