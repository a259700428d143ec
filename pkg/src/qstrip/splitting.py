"""The production solver: splitting-in-potential Crank-Nicolson stepping
with per-mode tridiagonal solves and discrete transparent boundary rows.

One time level runs five stages: a pointwise half-step potential kick, a
sine transform of every x row, one tridiagonal solve per y mode (with the
transparent-boundary convolution folded into the last row), the inverse
transform, and the closing half-step kick.  The kick is the identity on
the two nodes nearest each open edge (the potential split vanishes there),
which is what lets the boundary rows act on the mid-stage field directly.

Per-mode systems are factored once per run; the per-level cost is the
transforms plus O(J) per mode plus the O(m) convolution tail.
"""

from __future__ import annotations

import time
import warnings
from dataclasses import dataclass, field

import numpy as np

from qstrip._kernels import factor_tridiag, solve_factored, sweep_modes
from qstrip.mesh import AxisMesh, Grid, TimeMesh, x_weights, y_weights
from qstrip.model import (
    CayleyPropagator,
    SampledCoefficients,
    WaveField,
    build_propagator,
)
from qstrip.spectral import SpectralBasis, build_basis, forward, inverse
from qstrip.tbc import BoundaryHistory, ModeParams, build_mode_kernels

_PIVOT_FLOOR = 1e-280


class NumericalError(RuntimeError):
    """A linear solve broke down (zero pivot or non-finite state)."""


@dataclass
class ModeSystem:
    """Tridiagonal rows of one mode's Crank-Nicolson system.

    ``sub/diag/sup`` are the matrix bands over unknown nodes
    ``j = j0..j1``; ``rl/rc/rr`` multiply the kicked-state values at
    ``j-1, j, j+1`` to build the right-hand side.  The transparent row's
    current-level coupling ``-(beta/2) R^0`` sits in the last (or first)
    diagonal entry; the known history part is added to the right-hand side
    each level.
    """

    mode: int
    j0: int
    j1: int
    sub: np.ndarray
    diag: np.ndarray
    sup: np.ndarray
    rl: np.ndarray
    rc: np.ndarray
    rr: np.ndarray

    @property
    def n(self) -> int:
        return self.j1 - self.j0 + 1

    def dense_matrix(self) -> np.ndarray:
        n = self.n
        A = np.zeros((n, n), dtype=complex)
        A[np.arange(n), np.arange(n)] = self.diag
        A[np.arange(1, n), np.arange(n - 1)] = self.sub[1:]
        A[np.arange(n - 1), np.arange(1, n)] = self.sup[:-1]
        return A


def solve_tridiagonal(sub, diag, sup, rhs) -> np.ndarray:
    """Thomas solve of ``A x = rhs`` with bands ``(sub, diag, sup)``.

    ``sub[0]`` and ``sup[-1]`` are ignored.  Raises
    :class:`NumericalError` on a vanishing pivot.
    """
    diag = np.asarray(diag, dtype=complex)
    n = diag.size
    sub = np.asarray(sub, dtype=complex).reshape(1, n)
    sup = np.asarray(sup, dtype=complex).reshape(1, n)
    d = diag.reshape(1, n)
    w = np.zeros((1, n), dtype=complex)
    beta = np.zeros((1, n), dtype=complex)
    try:
        minpiv = factor_tridiag(sub, d, sup, w, beta)
    except ZeroDivisionError as exc:
        raise NumericalError("tridiagonal factorization hit a zero pivot") from exc
    if not np.isfinite(minpiv) or minpiv < _PIVOT_FLOOR:
        raise NumericalError(f"tridiagonal factorization pivot {minpiv:.3e}")
    out = np.empty((1, n), dtype=complex)
    solve_factored(w, beta, sup, np.asarray(rhs, dtype=complex).reshape(1, n), out)
    return out[0]


@dataclass
class SolverResult:
    times: np.ndarray
    mass_trace: np.ndarray
    psi: np.ndarray
    snapshots: dict[int, np.ndarray]
    history_right: BoundaryHistory | None
    history_left: BoundaryHistory | None
    step_seconds: np.ndarray
    truncated_initial_max: float

    @property
    def M(self) -> int:
        return self.times.size - 1


class SplittingSolver:
    """Five-stage splitting solver on the fast path.

    Requires a diagonal, y-independent coefficient set (checked on the
    sampled arrays), a uniform time mesh, and for each transparent edge a
    uniform mesh step and constant coefficients on the two nodes nearest
    the edge.  General coefficient sets belong to the reference solver.

    ``left``/``right`` choose the boundary treatment: ``"dirichlet"`` or
    ``"tbc"``.  The semi-infinite strip is (dirichlet, tbc); the strip open
    on both sides is (tbc, tbc); the truncated extended domain used as an
    oracle is (dirichlet, dirichlet).
    """

    def __init__(self, grid: Grid, tmesh: TimeMesh, coeffs: SampledCoefficients,
                 *, left: str = "dirichlet", right: str = "tbc",
                 propagator_variant: str = "cayley",
                 basis: SpectralBasis | None = None):
        if left not in ("dirichlet", "tbc") or right not in ("dirichlet", "tbc"):
            raise ValueError("boundary treatment must be 'dirichlet' or 'tbc'")
        if not coeffs.fast_path:
            raise ValueError(
                f"coefficients violate the fast path ({coeffs.fast_path_reason}); "
                "use the reference Crank-Nicolson solver"
            )
        if not tmesh.uniform:
            raise ValueError("the discrete transparent boundary needs a uniform time mesh")
        if tmesh.M < 1:
            raise ValueError("need at least one time level")
        self.grid = grid
        self.tmesh = tmesh
        self.coeffs = coeffs
        self.left = left
        self.right = right
        self.propagator_variant = propagator_variant
        self.basis = basis if basis is not None else build_basis(grid.y)

        J = grid.J
        self.j0 = 0 if left == "tbc" else 1
        self.j1 = J if right == "tbc" else J - 1
        self.n_unknown = self.j1 - self.j0 + 1
        self.n_modes = self.basis.n_modes

        self._b11x = coeffs.b11_x()     # (J+2,), index j = midpoint x_{j-1/2}
        self._b22x = coeffs.b22_x()     # (J+1,), index j = node
        self._rhox = coeffs.rho_x()     # (J+1,)
        self._vtx = coeffs.V_tilde_h    # (J+1,)

        if right == "tbc":
            self._validate_open_edge("right")
        if left == "tbc":
            self._validate_open_edge("left")

        tau = tmesh.tau
        self.propagator: CayleyPropagator = build_propagator(
            coeffs, tau, propagator_variant
        )
        self._E = self.propagator.values

        self.R_right = self._edge_kernels(grid.x.tail_step) if right == "tbc" else None
        hleft = float(grid.x.steps[1])
        self.R_left = self._edge_kernels(hleft) if left == "tbc" else None

        self._assemble_all_modes()
        self._factor()

        wx = x_weights(grid.x, "closed_both")
        wy = y_weights(grid.y)
        self._mass_w = coeffs.rho_h * np.outer(wx, wy)

    # -- assembly -----------------------------------------------------

    def _validate_open_edge(self, side: str) -> None:
        grid, c = self.grid, self.coeffs
        J = grid.J
        if side == "right":
            rows = slice(J - 1, J + 1)
            mids = slice(J, J + 2)
            steps_ok = True  # half_steps[J] continues the tail by convention
        else:
            rows = slice(0, 2)
            mids = slice(1, 3)
            steps_ok = abs(grid.x.steps[1] - grid.x.steps[2]) <= 1e-12 * grid.x.steps[1]
        checks = [
            ("mesh steps next to the edge must be uniform", steps_ok),
            ("potential split must vanish on the two edge nodes",
             np.max(np.abs(c.deltaV_h[rows, :])) == 0.0),
            ("rho must equal rho_inf near the edge",
             np.max(np.abs(self._rhox[rows] - c.rho_inf)) <= 1e-12 * c.rho_inf),
            ("B11 must equal B1_inf near the edge",
             np.max(np.abs(self._b11x[mids] - c.B1_inf)) <= 1e-12 * c.B1_inf),
            ("B22 must equal B2_inf near the edge",
             np.max(np.abs(self._b22x[rows] - c.B2_inf)) <= 1e-12 * c.B2_inf),
            ("auxiliary potential must equal V_inf near the edge",
             np.max(np.abs(self._vtx[rows] - c.V_inf)) <= 1e-12 * max(1.0, abs(c.V_inf))),
        ]
        for msg, ok in checks:
            if not ok:
                raise ValueError(f"{side} transparent boundary: {msg}")

    def _edge_kernels(self, h_edge: float) -> np.ndarray:
        c = self.coeffs
        mps = [
            ModeParams(c.hbar, c.rho_inf, c.B1_inf,
                       0.5 * c.hbar**2 * c.B2_inf * lam + c.V_inf,
                       h_edge, self.tmesh.tau)
            for lam in self.basis.eigenvalues
        ]
        return build_mode_kernels(mps, self.tmesh.M)

    def _assemble_all_modes(self) -> None:
        grid, c = self.grid, self.coeffs
        J, L, n = grid.J, self.n_modes, self.n_unknown
        j0, j1 = self.j0, self.j1
        tau = self.tmesh.tau
        hbar = c.hbar
        h = grid.x.steps
        hh = grid.x.half_steps
        lam = self.basis.eigenvalues

        sub = np.zeros((L, n), dtype=complex)
        diag = np.zeros((L, n), dtype=complex)
        sup = np.zeros((L, n), dtype=complex)
        rl = np.zeros((L, n), dtype=complex)
        rc = np.zeros((L, n), dtype=complex)
        rr = np.zeros((L, n), dtype=complex)

        # interior rows j = 1..J-1 (the transparent rows overwrite the ends)
        jj = np.arange(1, J)
        a = 0.5 * hbar**2 * self._b11x[jj] / h[jj]
        b = 0.5 * hbar**2 * self._b11x[jj + 1] / h[jj + 1]
        P = 1j * hbar * self._rhox[jj] * hh[jj] / tau
        vt_l = 0.5 * hbar**2 * np.outer(lam, self._b22x[jj]) + self._vtx[jj]
        cc = a + b + vt_l * hh[jj]
        cols = jj - j0
        sub[:, cols] = 0.5 * a
        sup[:, cols] = 0.5 * b
        diag[:, cols] = P - 0.5 * cc
        rl[:, cols] = -0.5 * a
        rr[:, cols] = -0.5 * b
        rc[:, cols] = P + 0.5 * cc

        c_inf = 0.5 * hbar**2 * c.B2_inf * lam + c.V_inf
        if self.right == "tbc":
            hj = grid.x.tail_step
            beta = 0.5 * hbar**2 * c.B1_inf / hj
            Q = 0.5j * hbar * c.rho_inf * hj / tau
            gam = 0.5 * hj * c_inf
            i = n - 1
            sub[:, i] = -0.5 * beta
            diag[:, i] = 0.5 * beta - Q + 0.5 * gam - 0.5 * beta * self.R_right[:, 0]
            sup[:, i] = 0.0
            rl[:, i] = 0.5 * beta
            rc[:, i] = -(0.5 * beta + Q + 0.5 * gam)
            rr[:, i] = 0.0
        if self.left == "tbc":
            hj = float(h[1])
            beta = 0.5 * hbar**2 * c.B1_inf / hj
            Q = 0.5j * hbar * c.rho_inf * hj / tau
            gam = 0.5 * hj * c_inf
            sub[:, 0] = 0.0
            diag[:, 0] = 0.5 * beta - Q + 0.5 * gam - 0.5 * beta * self.R_left[:, 0]
            sup[:, 0] = -0.5 * beta
            rl[:, 0] = 0.0
            rc[:, 0] = -(0.5 * beta + Q + 0.5 * gam)
            rr[:, 0] = 0.5 * beta
        self._bands = (sub, diag, sup)
        self._rhs_coeff = (rl, rc, rr)
        self._beta_right = (
            0.5 * hbar**2 * c.B1_inf / grid.x.tail_step if self.right == "tbc" else 0.0
        )
        self._beta_left = (
            0.5 * hbar**2 * c.B1_inf / float(h[1]) if self.left == "tbc" else 0.0
        )

    def _factor(self) -> None:
        sub, diag, sup = self._bands
        L, n = diag.shape
        self._w = np.zeros((L, n), dtype=complex)
        self._beta = np.zeros((L, n), dtype=complex)
        try:
            minpiv = factor_tridiag(sub, diag, sup, self._w, self._beta)
        except ZeroDivisionError as exc:
            raise NumericalError("mode system factorization hit a zero pivot") from exc
        if not np.isfinite(minpiv) or minpiv < _PIVOT_FLOOR:
            raise NumericalError(
                f"mode system factorization broke down (pivot {minpiv:.3e})"
            )

    def assemble_mode_system(self, l: int) -> ModeSystem:
        """The rows of mode ``l`` exactly as the stepping uses them."""
        sub, diag, sup = self._bands
        rl, rc, rr = self._rhs_coeff
        return ModeSystem(l, self.j0, self.j1, sub[l].copy(), diag[l].copy(),
                          sup[l].copy(), rl[l].copy(), rc[l].copy(), rr[l].copy())

    # -- stepping ------------------------------------------------------

    def _prepare_initial(self, psi0) -> tuple[np.ndarray, float]:
        psi = np.array(psi0.psi if isinstance(psi0, WaveField) else psi0,
                       dtype=complex)
        if psi.shape != self.grid.shape:
            raise ValueError(f"initial state must have shape {self.grid.shape}")
        J = self.grid.J
        clipped = [psi[:, 0], psi[:, -1]]
        if self.left == "tbc":
            clipped += [psi[0, :], psi[1, :]]
        else:
            clipped += [psi[0, :]]
        if self.right == "tbc":
            clipped += [psi[J - 1, :], psi[J, :]]
        else:
            clipped += [psi[J, :]]
        worst = max(float(np.max(np.abs(v))) for v in clipped)
        psi[:, 0] = 0.0
        psi[:, -1] = 0.0
        psi[0, :] = 0.0
        psi[J, :] = 0.0
        if self.left == "tbc":
            psi[1, :] = 0.0
        if self.right == "tbc":
            psi[J - 1, :] = 0.0
        if worst > 1e-8:
            warnings.warn(
                f"initial data truncated by {worst:.2e} at the open/Dirichlet edges",
                stacklevel=3,
            )
        return psi, worst

    def mass_norm(self, psi: np.ndarray) -> float:
        return float(np.sqrt(np.sum(self._mass_w * np.abs(psi) ** 2)))

    def run(self, psi0, *, M: int | None = None, forcing=None,
            snapshot_levels=(), keep_trajectory: bool = False) -> SolverResult:
        """March ``M`` levels (default: the whole time mesh).

        ``forcing`` is an optional callable ``m -> (J+1, K+1) array`` giving
        the source at level m (zero rows on the Dirichlet boundary).
        ``snapshot_levels`` selects stored levels; ``keep_trajectory``
        stores every level.
        """
        M = self.tmesh.M if M is None else int(M)
        if M > self.tmesh.M:
            raise ValueError("M exceeds the time mesh")
        grid, basis = self.grid, self.basis
        J, L, n = grid.J, self.n_modes, self.n_unknown
        j0, j1 = self.j0, self.j1
        tau = self.tmesh.tau
        hh = grid.x.half_steps
        K = grid.K

        psi, worst = self._prepare_initial(psi0)
        snapshot_levels = set(range(M + 1)) if keep_trajectory else set(snapshot_levels)
        snapshots: dict[int, np.ndarray] = {}
        if 0 in snapshot_levels:
            snapshots[0] = psi.copy()

        hist_r = BoundaryHistory(L, M) if self.right == "tbc" else None
        hist_l = BoundaryHistory(L, M) if self.left == "tbc" else None
        mass = np.empty(M + 1)
        mass[0] = self.mass_norm(psi)
        seconds = np.zeros(M + 1)

        vpad = np.zeros((L, n + 2), dtype=complex)
        extra = np.zeros((L, n), dtype=complex)
        out = np.empty((L, n), dtype=complex)
        psitilde = np.zeros_like(psi)
        E = self._E
        sub, _, sup = self._bands
        rl, rc, rr = self._rhs_coeff

        lo = max(0, j0 - 1)
        hi = min(J, j1 + 1)

        for m in range(1, M + 1):
            t0 = time.perf_counter()
            breve = E * psi
            coeff = forward(breve[lo : hi + 1, :], basis)      # (rows, L)
            vpad[:, lo - (j0 - 1) : hi - (j0 - 1) + 1] = coeff.T

            if hist_r is not None:
                extra[:, n - 1] = 0.5 * self._beta_right * hist_r.tail_convolution(
                    self.R_right, m
                )
            if hist_l is not None:
                extra[:, 0] = 0.5 * self._beta_left * hist_l.tail_convolution(
                    self.R_left, m
                )
            if forcing is not None:
                F = forcing(m)
                fcoef = forward(F[1:J, :], basis).T            # (L, J-1)
                extra[:, (1 - j0) : (J - 1 - j0) + 1] += fcoef * hh[1:J]
                if self.right == "tbc":
                    fJ = forward(F[J, :], basis)
                    extra[:, n - 1] -= 0.5 * grid.x.tail_step * fJ
                if self.left == "tbc":
                    f0 = forward(F[0, :], basis)
                    extra[:, 0] += 0.5 * float(grid.x.steps[1]) * f0

            sweep_modes(self._w, self._beta, sup, rl, rc, rr, vpad, extra, out)

            if hist_r is not None:
                hist_r.append(out[:, n - 1])
                extra[:, n - 1] = 0.0
            if hist_l is not None:
                hist_l.append(out[:, 0])
                extra[:, 0] = 0.0
            if forcing is not None:
                extra[:] = 0.0

            psitilde[j0 : j1 + 1, 1:K] = inverse(out.T, basis)
            psi = E * psitilde
            mass[m] = self.mass_norm(psi)
            if not np.isfinite(mass[m]):
                raise NumericalError(f"state became non-finite at level {m}")
            if m in snapshot_levels:
                snapshots[m] = psi.copy()
            seconds[m] = time.perf_counter() - t0

        return SolverResult(
            times=self.tmesh.times[: M + 1].copy(),
            mass_trace=mass,
            psi=psi,
            snapshots=snapshots,
            history_right=hist_r,
            history_left=hist_l,
            step_seconds=seconds,
            truncated_initial_max=worst,
        )

    def step_once(self, psi, m: int = 1,
                  history_right: BoundaryHistory | None = None,
                  history_left: BoundaryHistory | None = None) -> np.ndarray:
        """One level from an explicit state and histories; for tests and
        cross-checks against the unsplit reference solver."""
        hist_r = history_right
        hist_l = history_left
        grid, basis = self.grid, self.basis
        J, L, n = grid.J, self.n_modes, self.n_unknown
        j0, j1 = self.j0, self.j1
        K = grid.K
        psi = np.asarray(psi, dtype=complex)
        vpad = np.zeros((L, n + 2), dtype=complex)
        extra = np.zeros((L, n), dtype=complex)
        out = np.empty((L, n), dtype=complex)
        breve = self._E * psi
        lo = max(0, j0 - 1)
        hi = min(J, j1 + 1)
        coeff = forward(breve[lo : hi + 1, :], basis)
        vpad[:, lo - (j0 - 1) : hi - (j0 - 1) + 1] = coeff.T
        if self.right == "tbc" and hist_r is not None:
            extra[:, n - 1] = 0.5 * self._beta_right * hist_r.tail_convolution(
                self.R_right, m
            )
        if self.left == "tbc" and hist_l is not None:
            extra[:, 0] = 0.5 * self._beta_left * hist_l.tail_convolution(
                self.R_left, m
            )
        sub, _, sup = self._bands
        rl, rc, rr = self._rhs_coeff
        sweep_modes(self._w, self._beta, sup, rl, rc, rr, vpad, extra, out)
        if hist_r is not None:
            hist_r.append(out[:, n - 1])
        if hist_l is not None:
            hist_l.append(out[:, 0])
        psitilde = np.zeros_like(psi)
        psitilde[j0 : j1 + 1, 1:K] = inverse(out.T, basis)
        return self._E * psitilde
