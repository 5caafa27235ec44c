"""Run the analytic self-checks and drop theory_report.json in a report dir.

Thin wrapper over `lowprec verify-theory` so the default budgets live in one
place and the report lands next to the other experiment outputs.
"""

import argparse
import sys

from lowprec.cli import main


def run(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out-dir", default="reports/theory")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--fast", action="store_true",
                    help="small budgets for a quick smoke run")
    args = ap.parse_args(argv)

    cmd = ["verify-theory", "--out-dir", args.out_dir,
           "--seed", str(args.seed)]
    if args.fast:
        cmd += ["--n-max", "3", "--vectors", "2000", "--samples", "100000"]
    return main(cmd)


if __name__ == "__main__":
    sys.exit(run())
