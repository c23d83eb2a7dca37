"""Regenerate tests/data/inverse_normal_oracle.csv (slow: mpmath bisection)."""

import csv
from pathlib import Path

from oracles import oracle_grid, phi_inv_bisect

if __name__ == "__main__":
    out = Path(__file__).parent / "data" / "inverse_normal_oracle.csv"
    with out.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["p", "quantile"])
        for p in oracle_grid():
            w.writerow([repr(float(p)), repr(phi_inv_bisect(float(p)))])
