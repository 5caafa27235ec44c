"""End-to-end stability audit on an adversarial activation stream.

Generates a wide-variance gaussian stream (the kind that overflows a naive
half-precision layernorm on essentially every row), then runs the layernorm
overflow audit under each pre-normalizer and the softmax argmax/mass audit.
All reports land under --out-dir; the stream file is kept so the run can be
reproduced or inspected afterwards.
"""

import argparse
import sys
from pathlib import Path

from lowprec.cli import main


def run(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out-dir", default="reports/stability")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--format", default="fp16")
    ap.add_argument("--scale", type=float, default=500.0,
                    help="gaussian sigma for the generated rows")
    ap.add_argument("--rows", type=int, default=256)
    ap.add_argument("--width", type=int, default=512)
    args = ap.parse_args(argv)

    out = Path(args.out_dir)
    stream = out / "adversarial_stream.bin"
    rc = main(["gen-stream", str(stream), "--dist", "gaussian",
               "--scale", str(args.scale), "--rows", str(args.rows),
               "--width", str(args.width), "--seed", str(args.seed),
               "--out-dir", str(out)])
    if rc:
        return rc

    # Each audit reports the naive baseline alongside the chosen stabilizer;
    # a nonzero exit means a stabilizer overflowed despite its bound.
    for prenorm in ("none", "mad", "theorem1"):
        sub = out / f"layernorm_{prenorm}"
        rc = main(["audit-layernorm", str(stream), "--prenorm", prenorm,
                   "--format", args.format, "--out-dir", str(sub),
                   "--seed", str(args.seed)])
        print(f"[{prenorm}] audit exit code {rc} -> {sub}")
        if rc:
            return rc

    return main(["audit-softmax", str(stream), "--format", args.format,
                 "--out-dir", str(out / "softmax"), "--seed", str(args.seed)])


if __name__ == "__main__":
    sys.exit(run())
