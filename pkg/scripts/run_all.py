"""Run every experiment config in scripts/configs and print one status line each."""

import argparse
import glob
import os
import sys

from varelast.cli import main

HERE = os.path.dirname(os.path.abspath(__file__))


def run(out: str, pattern: str = "*.yaml") -> int:
    worst = 0
    for path in sorted(glob.glob(os.path.join(HERE, "configs", pattern))):
        code = main(["--config", path, "--out", out])
        print(f"  exit {code}  {os.path.basename(path)}")
        worst = max(worst, code)
    return worst


if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="runs")
    ap.add_argument("--pattern", default="*.yaml")
    a = ap.parse_args()
    sys.exit(run(a.out, a.pattern))
