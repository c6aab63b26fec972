"""Scalable pipeline against the optimal rule on the six reference rows, plus the exponent study.

Usage: python scripts/run_case3.py [--samples N] [--seed S] [extra CLI flags]
Writes results/case3*.csv.
"""

import sys
from pathlib import Path

from secure_estimation.cli import main

OUT = Path(__file__).resolve().parent.parent / "results"

if __name__ == "__main__":
    OUT.mkdir(exist_ok=True)
    raise SystemExit(main(["case3", "--out", str(OUT / "case3.csv"), *sys.argv[1:]]))
