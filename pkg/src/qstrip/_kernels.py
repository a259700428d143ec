"""Numba-compiled inner loops of the per-mode tridiagonal stepping."""

import numpy as np
from numba import njit


@njit(cache=True)
def factor_tridiag(sub, diag, sup, w, beta):
    """LU-style Thomas factorization of every mode system; returns the
    smallest pivot modulus seen (caller rejects near-zero pivots)."""
    L, n = diag.shape
    minpiv = 1e300
    for l in range(L):
        b = diag[l, 0]
        beta[l, 0] = b
        ab = abs(b)
        if ab < minpiv:
            minpiv = ab
        for i in range(1, n):
            wi = sub[l, i] / beta[l, i - 1]
            w[l, i] = wi
            b = diag[l, i] - wi * sup[l, i - 1]
            beta[l, i] = b
            ab = abs(b)
            if ab < minpiv:
                minpiv = ab
    return minpiv


@njit(cache=True)
def sweep_modes(w, beta, sup, rl, rc, rr, vpad, extra, out):
    """Assemble the Crank-Nicolson right-hand sides from the kicked state
    and back-substitute every mode system in one fused pass.

    ``vpad[l, i]`` holds the kicked-state coefficient at node ``j0 - 1 + i``
    (zero-padded one node beyond each end), so row i reads its three
    neighbours at i, i+1, i+2.
    """
    L, n = beta.shape
    for l in range(L):
        r = rl[l, 0] * vpad[l, 0] + rc[l, 0] * vpad[l, 1] + rr[l, 0] * vpad[l, 2] \
            + extra[l, 0]
        out[l, 0] = r
        for i in range(1, n):
            r = rl[l, i] * vpad[l, i] + rc[l, i] * vpad[l, i + 1] \
                + rr[l, i] * vpad[l, i + 2] + extra[l, i]
            out[l, i] = r - w[l, i] * out[l, i - 1]
        out[l, n - 1] = out[l, n - 1] / beta[l, n - 1]
        for i in range(n - 2, -1, -1):
            out[l, i] = (out[l, i] - sup[l, i] * out[l, i + 1]) / beta[l, i]


@njit(cache=True)
def solve_factored(w, beta, sup, rhs, out):
    """Back-substitution only, for pre-assembled right-hand sides."""
    L, n = beta.shape
    for l in range(L):
        out[l, 0] = rhs[l, 0]
        for i in range(1, n):
            out[l, i] = rhs[l, i] - w[l, i] * out[l, i - 1]
        out[l, n - 1] = out[l, n - 1] / beta[l, n - 1]
        for i in range(n - 2, -1, -1):
            out[l, i] = (out[l, i] - sup[l, i] * out[l, i + 1]) / beta[l, i]
