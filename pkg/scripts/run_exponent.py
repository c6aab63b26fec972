"""Isolation error exponent: slope of -log P_is against n for both isolation rules.

Usage: python scripts/run_exponent.py [--seed S]
Writes results/exponent.csv and prints the fitted slopes next to the predicted rate.
"""

import argparse
from pathlib import Path

from secure_estimation.cli import DEFAULT_SEED, DEFAULTS, ExperimentConfig, _emit, run_exponent

OUT = Path(__file__).resolve().parent.parent / "results"

if __name__ == "__main__":
    ap = argparse.ArgumentParser()
    ap.add_argument("--seed", type=int, default=DEFAULT_SEED)
    args = ap.parse_args()
    OUT.mkdir(exist_ok=True)
    cfg = ExperimentConfig("exponent", DEFAULTS["case3"], seed=args.seed)
    text, reports = run_exponent(cfg)
    _emit(text, OUT / "exponent.csv")
    for name, rep in reports.items():
        print(f"{name:8s} slope {rep.slope:.5f} +- {rep.slope_se:.5f}  predicted {rep.predicted:.5f}")
