#!/usr/bin/env python3
"""Refinement tables: errors against the finest run as pseudo-exact, with
the error ratios per doubling (expect about 4 away from the saturated last
row) and runtime ratios (expect about 2).
"""

import argparse
from dataclasses import replace

from qstrip.harness import SolverConfig, convergence_study

STUDIES = {
    "J": (dict(K=32, M=320), [300, 600, 1200, 2400, 4800]),
    "K": (dict(J=600, M=320), [32, 64, 128, 256, 512]),
    "M": (dict(J=1200, K=32), [80, 160, 320, 640, 1280]),
}

QUICK = {
    "J": (dict(K=16, M=160), [150, 300, 600, 1200]),
    "K": (dict(J=300, M=160), [16, 32, 64, 128]),
    "M": (dict(J=300, K=16), [40, 80, 160, 320]),
}


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--axis", choices=["J", "K", "M", "all"], default="all")
    ap.add_argument("--quick", action="store_true", help="smaller meshes")
    ap.add_argument("--csv-prefix", default=None,
                    help="write each table to PREFIX_<axis>.csv")
    args = ap.parse_args()

    base = SolverConfig(strip="infinite", barrier_Q=1500.0, T=0.027)
    plans = QUICK if args.quick else STUDIES
    axes = ["J", "K", "M"] if args.axis == "all" else [args.axis]
    for axis in axes:
        fixed, levels = plans[axis]
        cfg = replace(base, **fixed)
        report = convergence_study(cfg, axis, levels, n_compare=8)
        print(f"\n== refinement in {axis} "
              f"(fixed {', '.join(f'{k}={v}' for k, v in fixed.items())})")
        print(report.to_text())
        if args.csv_prefix:
            path = f"{args.csv_prefix}_{axis}.csv"
            report.to_csv(path)
            print(f"wrote {path}")


if __name__ == "__main__":
    main()
