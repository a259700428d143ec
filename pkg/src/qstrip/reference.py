"""Reference solvers and oracles used to validate the production path.

* :class:`CNSolver` solves the unsplit 2D Crank-Nicolson scheme, full
  cross-term Hamiltonian included, as one banded linear system per level
  (lexicographic ordering, bandwidth K+1, LU factored once).  The
  transparent row couples all y nodes at the edge through the mode
  transform, but that block still fits inside the band.
* :func:`run_extended_domain` continues the mesh with its uniform tail,
  zeroes the exterior initial data, and runs the production solver with a
  far Dirichlet wall; its restriction to the window is the exactness
  oracle for the transparent boundary.
* :func:`check_factorized_forms` replays one splitting level as the
  single-equation factorized update (kick, one unsplit solve with the
  auxiliary potential, kick) through the banded solver and reports the
  deviation from the three-stage path.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp
from scipy.linalg import lapack

from qstrip.mesh import AxisMesh, Grid, TimeMesh, x_weights, y_weights
from qstrip.model import (
    PhysicalModel,
    SampledCoefficients,
    WaveField,
    build_propagator,
    sample_coefficients,
)
from qstrip.spectral import SpectralBasis, build_basis, forward, inverse
from qstrip.splitting import BoundaryHistory, NumericalError, SolverResult, SplittingSolver
from qstrip.tbc import ModeParams, build_mode_kernels

# -- sparse operator assembly ----------------------------------------------


def _dx_bar(mesh: AxisMesh) -> sp.csr_matrix:
    n = mesh.n
    rows = np.repeat(np.arange(n), 2)
    cols = np.empty(2 * n, dtype=int)
    cols[0::2] = np.arange(n)
    cols[1::2] = np.arange(1, n + 1)
    vals = np.empty(2 * n)
    vals[0::2] = -1.0 / mesh.steps[1:]
    vals[1::2] = 1.0 / mesh.steps[1:]
    return sp.csr_matrix((vals, (rows, cols)), shape=(n, n + 1))


def _s_bar(mesh: AxisMesh) -> sp.csr_matrix:
    n = mesh.n
    rows = np.repeat(np.arange(n), 2)
    cols = np.empty(2 * n, dtype=int)
    cols[0::2] = np.arange(n)
    cols[1::2] = np.arange(1, n + 1)
    vals = np.full(2 * n, 0.5)
    return sp.csr_matrix((vals, (rows, cols)), shape=(n, n + 1))


def _dx_hat(mesh: AxisMesh) -> sp.csr_matrix:
    # midpoint values (1-based j = 1..n) -> interior nodes j = 1..n-1
    n = mesh.n
    rows = np.repeat(np.arange(n - 1), 2)
    cols = np.empty(2 * (n - 1), dtype=int)
    cols[0::2] = np.arange(n - 1)
    cols[1::2] = np.arange(1, n)
    vals = np.empty(2 * (n - 1))
    vals[0::2] = -1.0 / mesh.half_steps[1:n]
    vals[1::2] = 1.0 / mesh.half_steps[1:n]
    return sp.csr_matrix((vals, (rows, cols)), shape=(n - 1, n))


def _s_hat(mesh: AxisMesh) -> sp.csr_matrix:
    n = mesh.n
    rows = np.repeat(np.arange(n - 1), 2)
    cols = np.empty(2 * (n - 1), dtype=int)
    cols[0::2] = np.arange(n - 1)
    cols[1::2] = np.arange(1, n)
    vals = np.empty(2 * (n - 1))
    vals[0::2] = mesh.steps[1:n] / (2.0 * mesh.half_steps[1:n])
    vals[1::2] = mesh.steps[2 : n + 1] / (2.0 * mesh.half_steps[1:n])
    return sp.csr_matrix((vals, (rows, cols)), shape=(n - 1, n))


def _selector(n_total: int, keep: np.ndarray) -> sp.csr_matrix:
    m = keep.size
    return sp.csr_matrix((np.ones(m), (np.arange(m), keep)), shape=(m, n_total))


def hamiltonian_matrix(coeffs: SampledCoefficients) -> sp.csr_matrix:
    """Sparse matrix of the mesh Hamiltonian plus nothing: maps full-grid
    vectors to interior-node values.  Built by operator composition, which
    cross-checks the stencil implementation in :func:`apply_hamiltonian`."""
    grid = coeffs.grid
    J, K = grid.J, grid.K
    mx, my = grid.x, grid.y
    Ix_nodes = sp.identity(J + 1, format="csr")
    Iy_nodes = sp.identity(K + 1, format="csr")
    Ix_mid = sp.identity(J, format="csr")
    Iy_mid = sp.identity(K, format="csr")
    Ix_int = sp.identity(J - 1, format="csr")
    Iy_int = sp.identity(K - 1, format="csr")
    sel_x = _selector(J + 1, np.arange(1, J))
    sel_y = _selector(K + 1, np.arange(1, K))

    T1 = sp.kron(_dx_hat(mx), Iy_nodes) @ sp.diags(
        coeffs.B11h[1 : J + 1, :].ravel()
    ) @ sp.kron(_dx_bar(mx), Iy_nodes)
    T1 = sp.kron(Ix_int, sel_y) @ T1

    T4 = sp.kron(Ix_nodes, _dx_hat(my)) @ sp.diags(
        coeffs.B22h[:, 1 : K + 1].ravel()
    ) @ sp.kron(Ix_nodes, _dx_bar(my))
    T4 = sp.kron(sel_x, Iy_int) @ T4

    H = T1 + T4
    if np.max(np.abs(coeffs.B12h)) != 0.0:
        D_cells = sp.diags(coeffs.B12h[1 : J + 1, 1 : K + 1].ravel())
        T2 = sp.kron(_dx_hat(mx), Iy_int) @ sp.kron(Ix_mid, _s_hat(my)) @ D_cells \
            @ sp.kron(_s_bar(mx), Iy_mid) @ sp.kron(Ix_nodes, _dx_bar(my))
        T3 = sp.kron(_s_hat(mx), Iy_int) @ sp.kron(Ix_mid, _dx_hat(my)) @ D_cells \
            @ sp.kron(_dx_bar(mx), Iy_mid) @ sp.kron(Ix_nodes, _s_bar(my))
        H = H + T2 + T3
    return (-(coeffs.hbar**2) / 2.0 * H).tocsr()


def energy_form(coeffs: SampledCoefficients, U: np.ndarray, W: np.ndarray,
                potential: np.ndarray | None = None) -> complex:
    """The sesquilinear form behind the stability identity: the four
    cell-sampled gradient terms plus a closed-norm potential term.
    Hermitian-symmetric, so its diagonal is real for any admissible field.
    """
    grid = coeffs.grid
    J, K = grid.J, grid.K
    h = grid.x.steps[1:, None]
    dl = grid.y.steps[None, 1:]
    hbar2 = coeffs.hbar**2

    def dxb(A):
        return (A[1:, :] - A[:-1, :]) / h

    def dyb(A):
        return (A[:, 1:] - A[:, :-1]) / dl

    def sxb(A):
        return 0.5 * (A[1:, :] + A[:-1, :])

    def syb(A):
        return 0.5 * (A[:, 1:] + A[:, :-1])

    gx_u, gx_w = dxb(U), dxb(W)                    # (J, K+1) at x-mid, y-node
    gy_u, gy_w = dyb(U), dyb(W)                    # (J+1, K) at x-node, y-mid
    t11 = syb(gx_u * np.conj(gx_w))                # (J, K) cells
    t22 = sxb(gy_u * np.conj(gy_w))                # (J, K) cells
    t12 = sxb(gy_u) * np.conj(dxb(syb(W)))         # (J, K)
    t21 = dxb(syb(U)) * np.conj(sxb(gy_w))         # (J, K)
    cw = h * dl                                     # cell areas
    val = 0.5 * hbar2 * np.sum(
        (coeffs.B11c * t11 + coeffs.B12c * (t12 + t21) + coeffs.B22c * t22) * cw
    )
    if potential is not None:
        wx = np.zeros(J + 1)
        wx[1:J] = grid.x.half_steps[1:J]
        wx[J] = 0.5 * grid.x.steps[J]
        wy = np.zeros(K + 1)
        wy[1:K] = grid.y.half_steps[1:K]
        val = val + np.einsum("jk,jk,jk->", potential * U, np.conj(W),
                              np.outer(wx, wy))
    return complex(val)


class CNSolver:
    """Unsplit Crank-Nicolson oracle with the full 2D Hamiltonian.

    ``potential="full"`` uses the sampled potential; ``potential="vtilde"``
    substitutes the auxiliary x-potential, which makes one level of this
    solver the single-equation factorized form of the splitting step.
    """

    def __init__(self, grid: Grid, tmesh: TimeMesh, coeffs: SampledCoefficients,
                 *, right: str = "tbc", potential: str = "full",
                 basis: SpectralBasis | None = None):
        if right not in ("tbc", "dirichlet"):
            raise ValueError("right boundary must be 'tbc' or 'dirichlet'")
        if not tmesh.uniform:
            raise ValueError("uniform time mesh required")
        self.grid = grid
        self.tmesh = tmesh
        self.coeffs = coeffs
        self.right = right
        self.basis = basis if basis is not None else build_basis(grid.y)
        J, K = grid.J, grid.K
        self.n_modes = self.basis.n_modes

        if potential == "full":
            V = coeffs.V_h
        elif potential == "vtilde":
            V = np.tile(coeffs.V_tilde_h[:, None], (1, K + 1))
        else:
            raise ValueError("potential must be 'full' or 'vtilde'")
        self._V = V

        self.jmax = J if right == "tbc" else J - 1
        self._assemble()
        self._factor()

    # unknown index: (j - 1) * (K - 1) + (k - 1), j = 1..jmax, k = 1..K-1
    def _unknown_index(self, j, k):
        return (j - 1) * (self.grid.K - 1) + (k - 1)

    def _assemble(self) -> None:
        grid, coeffs = self.grid, self.coeffs
        J, K = grid.J, grid.K
        tau = self.tmesh.tau
        hbar = coeffs.hbar
        nk = K - 1
        n = self.jmax * nk
        self.n_unknown = n

        H = hamiltonian_matrix(coeffs)
        keep_full = np.array(
            [j * (K + 1) + k for j in range(1, self.jmax + 1) for k in range(1, K)]
        )
        emb = _selector((J + 1) * (K + 1), keep_full).T  # embed unknowns
        Vdiag = sp.diags(self._V[1:J, 1:K].ravel())
        Op = (H + Vdiag @ _selector((J + 1) * (K + 1),
                                    np.array([j * (K + 1) + k
                                              for j in range(1, J)
                                              for k in range(1, K)]))) @ emb
        # rows of Op: interior nodes (j=1..J-1, k=1..K-1); map into unknown rows
        rho_int = coeffs.rho_h[1:J, 1:K].ravel()
        P = 1j * hbar * rho_int / tau
        n_int = (J - 1) * nk
        rows_int = sp.diags(P, shape=(n_int, n_int))
        pad = sp.csr_matrix((n_int, n - n_int))
        ident_int = sp.hstack([sp.identity(n_int), pad]).tocsr()
        A = rows_int @ ident_int - 0.5 * Op
        B = rows_int @ ident_int + 0.5 * Op

        if self.right == "tbc":
            A_t, B_t = self._tbc_rows()
            A = sp.vstack([A, A_t])
            B = sp.vstack([B, B_t])
        self._A = A.tocsr()
        self._B = B.tocsr()
        if self._A.shape != (n, n):
            raise AssertionError("assembled system is not square")

    def _tbc_rows(self) -> tuple[sp.csr_matrix, sp.csr_matrix]:
        grid, coeffs, basis = self.grid, self.coeffs, self.basis
        J, K = grid.J, grid.K
        nk = K - 1
        n = self.jmax * nk
        tau = self.tmesh.tau
        hbar = coeffs.hbar
        h = grid.x.tail_step
        beta = 0.5 * hbar**2 * coeffs.B1_inf / h
        Q = 0.5j * hbar * coeffs.rho_inf * h / tau

        mps = [
            ModeParams(hbar, coeffs.rho_inf, coeffs.B1_inf,
                       0.5 * hbar**2 * coeffs.B2_inf * lam + coeffs.V_inf,
                       h, tau)
            for lam in basis.eigenvalues
        ]
        self.R = build_mode_kernels(mps, self.tmesh.M)

        dl = grid.y.steps
        dd = grid.y.half_steps
        S = sp.lil_matrix((nk, n), dtype=complex)
        dense = np.zeros((nk, nk), dtype=complex)
        E_int = basis.vectors[1:K, :]                    # (nk, L)
        w_y = basis.weights()
        # current-level convolution coupling: (beta/2) F^{-1} R0 F
        dense[:, :] = -0.5 * beta * (E_int * self.R[:, 0]) @ (E_int * w_y[:, None]).T
        for k in range(1, K):
            r = k - 1
            uJ = self._unknown_index(J, k)
            uJm = self._unknown_index(J - 1, k)
            S[r, uJ] += 0.5 * beta - Q + 0.25 * h * coeffs.V_inf
            S[r, uJm] += -0.5 * beta
            # y second difference: -(h/2)(hbar^2 B2/2)(1/2) * d_hat d_bar
            cyy = -0.125 * h * hbar**2 * coeffs.B2_inf
            km, kp = k - 1, k + 1
            S[r, uJ] += cyy * (-(1.0 / dl[k + 1] + 1.0 / dl[k]) / dd[k])
            if km >= 1:
                S[r, self._unknown_index(J, km)] += cyy * (1.0 / (dl[k] * dd[k]))
            if kp <= K - 1:
                S[r, self._unknown_index(J, kp)] += cyy * (1.0 / (dl[k + 1] * dd[k]))
        A_t = S.tocsr()
        cols = np.array([self._unknown_index(J, k) for k in range(1, K)])
        A_t = A_t + sp.csr_matrix(
            (dense.ravel(), (np.repeat(np.arange(nk), nk), np.tile(cols, nk))),
            shape=(nk, n),
        )
        # right-hand side: mirrored symmetric part, opposite inertia sign,
        # no convolution coupling
        B_t = (-(S - sp.csr_matrix(
            (np.full(nk, -2.0 * Q), (np.arange(nk), cols)), shape=(nk, n)
        ))).tocsr()
        return A_t, B_t

    def _factor(self) -> None:
        K = self.grid.K
        kl = ku = K
        n = self.n_unknown
        ab = np.zeros((2 * kl + ku + 1, n), dtype=complex, order="F")
        Acoo = self._A.tocoo()
        if np.any(np.abs(Acoo.row - Acoo.col) > K):
            raise AssertionError("entry outside the declared bandwidth")
        ab[kl + ku + Acoo.row - Acoo.col, Acoo.col] = Acoo.data
        lu, ipiv, info = lapack.zgbtrf(ab, kl, ku)
        if info != 0:
            raise NumericalError(f"banded factorization failed (info={info})")
        self._lu, self._ipiv, self._kl, self._ku = lu, ipiv, kl, ku

    def _solve(self, rhs: np.ndarray) -> np.ndarray:
        x, info = lapack.zgbtrs(self._lu, self._kl, self._ku, rhs, self._ipiv)
        if info != 0:
            raise NumericalError(f"banded solve failed (info={info})")
        return x

    def _to_unknown(self, psi: np.ndarray) -> np.ndarray:
        K = self.grid.K
        return psi[1 : self.jmax + 1, 1:K].ravel()

    def _to_grid(self, u: np.ndarray) -> np.ndarray:
        K = self.grid.K
        psi = np.zeros(self.grid.shape, dtype=complex)
        psi[1 : self.jmax + 1, 1:K] = u.reshape(self.jmax, K - 1)
        return psi

    def step_once(self, psi: np.ndarray,
                  history: BoundaryHistory | None = None,
                  m: int = 1) -> np.ndarray:
        """One Crank-Nicolson level from an explicit state."""
        v = self._to_unknown(np.asarray(psi, dtype=complex))
        rhs = self._B @ v
        if self.right == "tbc" and history is not None:
            h = self.grid.x.tail_step
            beta = 0.5 * self.coeffs.hbar**2 * self.coeffs.B1_inf / h
            hist = history.tail_convolution(self.R, m)
            rhs[-(self.grid.K - 1):] += 0.5 * beta * inverse(hist, self.basis)
        u = self._solve(rhs)
        if self.right == "tbc" and history is not None:
            K = self.grid.K
            history.append(forward(u[-(K - 1):], self.basis))
        return self._to_grid(u)

    def run(self, psi0, *, M: int | None = None, snapshot_levels=(),
            keep_trajectory: bool = False) -> SolverResult:
        M = self.tmesh.M if M is None else int(M)
        if M > self.tmesh.M:
            raise ValueError("M exceeds the time mesh")
        grid = self.grid
        J, K = grid.J, grid.K
        psi = np.array(psi0.psi if isinstance(psi0, WaveField) else psi0,
                       dtype=complex)
        psi[:, 0] = 0.0
        psi[:, -1] = 0.0
        psi[0, :] = 0.0
        psi[J, :] = 0.0
        if self.right == "tbc":
            psi[J - 1, :] = 0.0
        hist = BoundaryHistory(self.n_modes, M) if self.right == "tbc" else None
        snapshot_levels = set(range(M + 1)) if keep_trajectory else set(snapshot_levels)
        snapshots: dict[int, np.ndarray] = {}
        if 0 in snapshot_levels:
            snapshots[0] = psi.copy()
        mass_w = self.coeffs.rho_h * np.outer(
            x_weights(grid.x, "closed_both"), y_weights(grid.y)
        )
        mass = np.empty(M + 1)
        mass[0] = float(np.sqrt(np.sum(mass_w * np.abs(psi) ** 2)))
        for m in range(1, M + 1):
            psi = self.step_once(psi, hist, m)
            mass[m] = float(np.sqrt(np.sum(mass_w * np.abs(psi) ** 2)))
            if not np.isfinite(mass[m]):
                raise NumericalError(f"state became non-finite at level {m}")
            if m in snapshot_levels:
                snapshots[m] = psi.copy()
        return SolverResult(
            times=self.tmesh.times[: M + 1].copy(),
            mass_trace=mass,
            psi=psi,
            snapshots=snapshots,
            history_right=hist,
            history_left=None,
            step_seconds=np.zeros(M + 1),
            truncated_initial_max=0.0,
        )


# -- extended-domain oracle --------------------------------------------------


def extend_grid(grid: Grid, factor: float) -> Grid:
    """Continue the x mesh with its uniform tail step out to factor * X."""
    if factor <= 1:
        raise ValueError("extension factor must exceed 1")
    h = grid.x.tail_step
    X = grid.x.length
    n_extra = int(np.ceil((factor - 1.0) * X / h))
    extra = grid.x.nodes[-1] + h * np.arange(1, n_extra + 1)
    return Grid(AxisMesh(np.concatenate([grid.x.nodes, extra]), "x"), grid.y)


def required_extension_factor(x0: float, k: float, T: float, alpha: float,
                              X: float, hbar: float = 1.0, B1: float = 1.0,
                              rho: float = 1.0) -> float:
    """Smallest safe extension factor from the carrier group velocity plus a
    four-sigma spreading margin."""
    v = hbar * B1 * abs(np.sqrt(2.0) * k) / rho
    sigma0 = np.sqrt(2.0 * alpha)
    sigma_T = sigma0 * np.sqrt(1.0 + (hbar * B1 * T / (rho * 2.0 * sigma0**2)) ** 2)
    reach = x0 + v * T + 4.0 * sigma_T
    return max(1.0, reach / X) * 1.1


def run_extended_domain(grid: Grid, tmesh: TimeMesh, model: PhysicalModel,
                        psi0, factor: float = 4.0, *,
                        packet=None, keep_trajectory: bool = True,
                        snapshot_levels=()) -> tuple[SolverResult, Grid]:
    """Truncation of the whole-line scheme: enlarged mesh, far Dirichlet
    wall, exterior initial data zeroed.  Restricted to the original window
    this is the reference the transparent boundary must match."""
    if packet is not None:
        need = required_extension_factor(
            packet["x0"], packet["k"], tmesh.times[-1], packet["alpha"],
            grid.x.length, model.hbar, model.B1_inf, model.rho_inf,
        )
        if factor < need:
            raise ValueError(
                f"extension factor {factor} insufficient; group-velocity bound "
                f"needs {need:.2f}"
            )
    big = extend_grid(grid, factor)
    coeffs = sample_coefficients(model, big)
    J = grid.J
    psi = np.zeros(big.shape, dtype=complex)
    src = psi0.psi if isinstance(psi0, WaveField) else psi0
    psi[: J + 1, :] = src
    psi[J - 1 :, :] = 0.0
    solver = SplittingSolver(big, tmesh, coeffs, left="dirichlet", right="dirichlet")
    result = solver.run(psi, keep_trajectory=keep_trajectory,
                        snapshot_levels=snapshot_levels)
    return result, big


def window_difference(res_tbc: SolverResult, res_ext: SolverResult,
                      J: int) -> float:
    """Largest pointwise deviation over all stored common levels."""
    worst = 0.0
    for m, snap in res_tbc.snapshots.items():
        if m in res_ext.snapshots:
            d = np.abs(snap - res_ext.snapshots[m][: J + 1, :])
            worst = max(worst, float(d.max()))
    return worst


def tail_norm_sq(psi_ext: np.ndarray, J: int, grid_ext: Grid) -> float:
    """Squared norm beyond the window: half weight on the edge row, full
    uniform-step weight outside."""
    h = grid_ext.x.tail_step
    wy = np.zeros(grid_ext.K + 1)
    wy[1:-1] = grid_ext.y.half_steps[1:-1]
    edge = 0.5 * h * np.sum(np.abs(psi_ext[J, :]) ** 2 * wy)
    outside = h * np.sum(np.abs(psi_ext[J + 1 :, :]) ** 2 * wy[None, :])
    return float(edge + outside)


# -- factorized-form equivalence ---------------------------------------------


def check_factorized_forms(grid: Grid, tmesh: TimeMesh,
                           coeffs: SampledCoefficients, psi,
                           propagator_variant: str = "cayley") -> float:
    """Max relative deviation between one three-stage splitting level and
    the same level written as kick / unsplit solve with the auxiliary
    potential / kick, the solve going through the banded 2D path."""
    split = SplittingSolver(grid, tmesh, coeffs, left="dirichlet", right="tbc",
                            propagator_variant=propagator_variant)
    cn = CNSolver(grid, tmesh, coeffs, right="tbc", potential="vtilde",
                  basis=split.basis)
    psi = np.array(psi.psi if isinstance(psi, WaveField) else psi, dtype=complex)
    psi[:, 0] = 0.0
    psi[:, -1] = 0.0
    psi[0, :] = 0.0
    psi[grid.J - 1 :, :] = 0.0

    h3_r = BoundaryHistory(split.n_modes, 4)
    u3 = split.step_once(psi, 1, h3_r, None)

    E = build_propagator(coeffs, tmesh.tau, propagator_variant).values
    h1_r = BoundaryHistory(cn.n_modes, 4)
    mid = cn.step_once(E * psi, h1_r, 1)
    u1 = E * mid
    scale = max(float(np.max(np.abs(u3))), 1e-300)
    return float(np.max(np.abs(u3 - u1)) / scale)
