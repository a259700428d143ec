#!/usr/bin/env python3
"""Runtime scaling: total solve time when J, K, or M doubles from a
baseline.  The per-level work is the y transforms plus one tridiagonal
solve per mode plus the growing convolution tail, so each doubling should
land close to a factor of two.
"""

import argparse
import time

import numpy as np

from qstrip.mesh import Grid, TimeMesh
from qstrip.model import PhysicalModel, gaussian_packet, sample_coefficients
from qstrip.splitting import SplittingSolver


def timed_run(J, K, M, repeats=2):
    grid = Grid.uniform(3.0, 2.8, J, K)
    tm = TimeMesh.uniform_mesh(0.027, M)
    coeffs = sample_coefficients(
        PhysicalModel.constant(B1=2.0, B2=2.0, X0=2.5), grid
    )
    solver = SplittingSolver(grid, tm, coeffs, left="dirichlet", right="tbc")
    psi0 = gaussian_packet(grid, k=30.0, alpha=1 / 120, x0=1.0, y0=1.4)
    best = np.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        solver.run(psi0)
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--J", type=int, default=1536)
    ap.add_argument("--K", type=int, default=128)
    ap.add_argument("--M", type=int, default=192)
    args = ap.parse_args()

    timed_run(64, 8, 4)  # jit warm-up
    base = timed_run(args.J, args.K, args.M)
    print(f"baseline (J={args.J}, K={args.K}, M={args.M}): {base:.3f} s")
    print(f"{'axis':>6} {'doubled run':>12} {'ratio':>7}")
    for axis, sizes in (
        ("J", (2 * args.J, args.K, args.M)),
        ("K", (args.J, 2 * args.K, args.M)),
        ("M", (args.J, args.K, 2 * args.M)),
    ):
        t = timed_run(*sizes)
        print(f"{axis:>6} {t:12.3f} {t / base:7.2f}")


if __name__ == "__main__":
    main()
