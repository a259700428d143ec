"""Eigenbasis of the discrete second difference in y with Dirichlet ends,
and the forward/inverse transforms between node values and mode
coefficients.

On a uniform mesh the basis is the discrete sine family and the transforms
reduce to a type-I DST; the radix-2 path is only engaged when the interior
size allows it (K a power of two), otherwise the dense matrix transform is
used with a warning.  Non-uniform meshes get the eigenpairs of the
symmetrized tridiagonal operator.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.fft import dst
from scipy.linalg import eigh_tridiagonal

from qstrip.mesh import AxisMesh


@dataclass(frozen=True)
class SpectralBasis:
    """Orthonormal eigenpairs of ``-d_hat_y d_bar_y`` on the interior nodes.

    ``vectors[k, l]`` holds the l-th eigenfunction at node k (zero at
    k = 0, K); eigenvalues are strictly positive and ascending.  Orthonormal
    in the interior y inner product with weights ``delta_{k+1/2}``.
    """

    ymesh: AxisMesh
    eigenvalues: np.ndarray
    vectors: np.ndarray
    fast_path: bool

    @property
    def K(self) -> int:
        return self.ymesh.n

    @property
    def n_modes(self) -> int:
        return self.K - 1

    def weights(self) -> np.ndarray:
        return self.ymesh.half_steps[1 : self.K]


def build_basis(ymesh: AxisMesh) -> SpectralBasis:
    K = ymesh.n
    Y = ymesh.length
    if ymesh.is_uniform:
        delta = ymesh.tail_step
        l = np.arange(1, K)
        lam = (2.0 / delta * np.sin(np.pi * delta * l / (2.0 * Y))) ** 2
        vecs = np.zeros((K + 1, K - 1))
        vecs[1:K, :] = np.sqrt(2.0 / Y) * np.sin(
            np.pi * np.outer(ymesh.nodes[1:K], l) / Y
        )
        fast = K >= 2 and (K & (K - 1)) == 0
        if not fast:
            warnings.warn(
                f"K = {K} is not a power of two; using the dense sine transform",
                stacklevel=2,
            )
    else:
        dl = ymesh.steps
        dd = ymesh.half_steps
        # symmetrize with D^(1/2), D = diag(delta_{k+1/2}): the transformed
        # operator is symmetric tridiagonal with guaranteed real eigenpairs
        w = dd[1:K]
        main = (1.0 / dl[1:K] + 1.0 / dl[2 : K + 1]) / w
        off = -1.0 / (dl[2:K] * np.sqrt(w[:-1] * w[1:]))
        lam, V = eigh_tridiagonal(main, off)
        if np.any(lam <= 0):
            raise ValueError("eigenvalue solve produced a non-positive eigenvalue")
        vecs = np.zeros((K + 1, K - 1))
        vecs[1:K, :] = V / np.sqrt(w)[:, None]
        fast = False
    lam.setflags(write=False)
    vecs.setflags(write=False)
    return SpectralBasis(ymesh, lam, vecs, fast)


def _interior(U: np.ndarray, K: int) -> np.ndarray:
    U = np.asarray(U)
    if U.shape[-1] == K + 1:
        return U[..., 1:K]
    if U.shape[-1] == K - 1:
        return U
    raise ValueError(
        f"last axis must hold {K + 1} node values or {K - 1} interior values"
    )


def forward(U, basis: SpectralBasis) -> np.ndarray:
    """Mode coefficients ``(U, E_l)`` along the last axis.

    Accepts full node rows (K+1 values, boundary entries ignored) or bare
    interior rows; batches over any leading axes.
    """
    K = basis.K
    Ui = _interior(U, K)
    if basis.fast_path:
        scale = basis.ymesh.tail_step * np.sqrt(2.0 / basis.ymesh.length) / 2.0
        return scale * dst(Ui, type=1, axis=-1)
    return Ui @ (basis.vectors[1:K, :] * basis.weights()[:, None])


def inverse(coeffs, basis: SpectralBasis) -> np.ndarray:
    """Node values from mode coefficients; inverse of :func:`forward`.

    Returns interior rows (K-1 values along the last axis).
    """
    K = basis.K
    coeffs = np.asarray(coeffs)
    if coeffs.shape[-1] != K - 1:
        raise ValueError(f"expected {K - 1} mode coefficients on the last axis")
    if basis.fast_path:
        scale = np.sqrt(2.0 / basis.ymesh.length) / 2.0
        return scale * dst(coeffs, type=1, axis=-1)
    return coeffs @ basis.vectors[1:K, :].T


def apply_y_operator(U, ymesh: AxisMesh) -> np.ndarray:
    """Apply ``-d_hat_y d_bar_y`` to interior node values (Dirichlet ends)."""
    K = ymesh.n
    Ui = _interior(U, K)
    full = np.zeros(Ui.shape[:-1] + (K + 1,), dtype=Ui.dtype)
    full[..., 1:K] = Ui
    dl = ymesh.steps
    dd = ymesh.half_steps
    back = (full[..., 1:] - full[..., :-1]) / dl[1:]
    return -(back[..., 1:] - back[..., :-1]) / dd[1:K]
