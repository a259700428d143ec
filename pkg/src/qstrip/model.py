"""Physical coefficients, their midpoint sampling onto the mesh, the
potential split, unit-modulus stage propagators, and initial data.

Coefficient callables must accept numpy arrays and broadcast.  All sampled
arrays follow the 1-based midpoint convention of :mod:`qstrip.mesh`:
``A_mid[j, k]`` holds ``A(x_{j-1/2}, y_{k-1/2})``.  Edge rows/columns of
node-centred arrays that no scheme ever reads are filled by a
nearest-sample convention so that downstream elementwise code stays total.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from qstrip.mesh import Grid

Coeff2D = Callable[[np.ndarray, np.ndarray], np.ndarray]
Coeff1D = Callable[[np.ndarray], np.ndarray]


def _const2d(value: float) -> Coeff2D:
    return lambda x, y: np.broadcast_to(np.asarray(float(value)), np.broadcast(x, y).shape)


def _const1d(value: float) -> Coeff1D:
    return lambda x: np.broadcast_to(np.asarray(float(value)), np.shape(x))


def barrier_potential(a: float, b: float, c: float, d: float, Q: float) -> Coeff2D:
    """Rectangular barrier: ``Q`` on the open rectangle (a,b) x (c,d), else 0.

    The discontinuity is resolved downstream by plain midpoint sampling; a
    midpoint landing exactly on an edge reads the exterior value (the
    rectangle is open).
    """
    if not (a < b and c < d):
        raise ValueError("barrier rectangle must satisfy a < b and c < d")

    def V(x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        inside = (x > a) & (x < b) & (y > c) & (y < d)
        return np.where(inside, float(Q), 0.0)

    return V


def barrier_slab(a: float, b: float, Q: float, V_inf: float = 0.0) -> Coeff1D:
    """x-only slab ``V_inf + Q`` on (a, b), used as the auxiliary potential."""

    def Vt(x):
        x = np.asarray(x, dtype=float)
        return np.where((x > a) & (x < b), V_inf + float(Q), float(V_inf))

    return Vt


@dataclass(frozen=True)
class PhysicalModel:
    """Coefficients of the strip problem and their far-field constants.

    Beyond ``X0`` every coefficient must equal its asymptotic constant and
    the auxiliary potential must equal ``V_inf``; this is what makes the
    exterior problem constant-coefficient and the transparent boundary
    exact.  Violations are caught when sampling onto a concrete mesh.
    """

    hbar: float
    rho: Coeff2D
    B11: Coeff2D
    B12: Coeff2D
    B21: Coeff2D
    B22: Coeff2D
    V: Coeff2D
    V_tilde: Coeff1D
    rho_inf: float
    B1_inf: float
    B2_inf: float
    V_inf: float
    X0: float

    def __post_init__(self):
        if self.hbar <= 0:
            raise ValueError("hbar must be positive")
        if self.rho_inf <= 0 or self.B1_inf <= 0 or self.B2_inf <= 0:
            raise ValueError("asymptotic rho and B constants must be positive")
        if self.X0 <= 0:
            raise ValueError("X0 must be positive")

    @classmethod
    def constant(cls, hbar=1.0, rho=1.0, B1=1.0, B2=1.0, V=None, V_tilde=None,
                 V_inf=0.0, X0=1.0) -> "PhysicalModel":
        """Constant rho and diagonal B; optional potential callables."""
        return cls(
            hbar=hbar,
            rho=_const2d(rho),
            B11=_const2d(B1),
            B12=_const2d(0.0),
            B21=_const2d(0.0),
            B22=_const2d(B2),
            V=V if V is not None else _const2d(V_inf),
            V_tilde=V_tilde if V_tilde is not None else _const1d(V_inf),
            rho_inf=rho,
            B1_inf=B1,
            B2_inf=B2,
            V_inf=V_inf,
            X0=X0,
        )


@dataclass
class WaveField:
    """Complex grid state on the closed strip mesh, with a stage label."""

    psi: np.ndarray
    stage: str = "psi"

    def copy(self) -> "WaveField":
        return WaveField(self.psi.copy(), self.stage)


def gaussian_packet(grid: Grid, k: float, alpha: float, x0: float, y0: float) -> WaveField:
    """Gaussian wave packet with carrier ``exp(i sqrt(2) k (x - x0))``.

    Sampled at the nodes and forced to zero on the Dirichlet part of the
    boundary (k = 0, K and j = 0).
    """
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    x = grid.x.nodes[:, None]
    y = grid.y.nodes[None, :]
    psi = np.exp(
        1j * np.sqrt(2.0) * k * (x - x0)
        - ((x - x0) ** 2 + (y - y0) ** 2) / (4.0 * alpha)
    )
    psi[:, 0] = 0.0
    psi[:, -1] = 0.0
    psi[0, :] = 0.0
    return WaveField(psi, "psi0")


@dataclass(frozen=True)
class SampledCoefficients:
    """Mesh samples of the model coefficients.

    ``B11h[j, k]`` lives at (x_{j-1/2}, y_k) for j = 1..J+1 (J+1 continues
    the uniform tail), ``B22h[j, k]`` at (x_j, y_{k-1/2}), ``B12h[j, k]`` at
    cell centres, ``rho_h``/``V_h`` at nodes, ``V_tilde_h`` at x nodes.
    ``deltaV_h = V_h - V_tilde_h`` vanishes for j >= J-1 (and, when the
    coefficients are constant near the left edge, for j <= 1).

    ``B11c/B22c/B12c`` keep the raw cell-midpoint samples (shape (J, K),
    0-based over cells j = 1..J, k = 1..K); the stability energy form is
    written in terms of these.
    """

    grid: Grid
    hbar: float
    rho_inf: float
    B1_inf: float
    B2_inf: float
    V_inf: float
    X0: float
    B11h: np.ndarray
    B22h: np.ndarray
    B12h: np.ndarray
    rho_h: np.ndarray
    V_h: np.ndarray
    V_tilde_h: np.ndarray
    deltaV_h: np.ndarray
    B11c: np.ndarray
    B22c: np.ndarray
    B12c: np.ndarray
    fast_path: bool = field(init=False)
    fast_path_reason: str = field(init=False)

    def __post_init__(self):
        reason = ""
        J, K = self.grid.J, self.grid.K
        if np.max(np.abs(self.B12h[1:, 1:])) != 0.0:
            reason = "B12 is not identically zero"
        elif not _y_constant(self.B11h[1 : J + 2, 1:K]):
            reason = "B11 depends on y"
        elif not _y_constant(self.B22h[1 : J + 1, 1 : K + 1]):
            reason = "B22 depends on y"
        elif not _y_constant(self.rho_h[1 : J + 1, 1:K]):
            reason = "rho depends on y"
        object.__setattr__(self, "fast_path", reason == "")
        object.__setattr__(self, "fast_path_reason", reason)

    # 1D views used by the per-mode solver; valid only on the fast path.
    def b11_x(self) -> np.ndarray:
        self._require_fast("B11")
        return self.B11h[:, 1].copy()

    def b22_x(self) -> np.ndarray:
        self._require_fast("B22")
        return self.B22h[:, 1].copy()

    def rho_x(self) -> np.ndarray:
        self._require_fast("rho")
        return self.rho_h[:, 1].copy()

    def _require_fast(self, what: str) -> None:
        if not self.fast_path:
            raise ValueError(
                f"{what} has no 1D view: {self.fast_path_reason}; "
                "use the general reference solver instead"
            )


def _y_constant(arr: np.ndarray, rtol: float = 1e-14) -> bool:
    ref = arr[:, :1]
    scale = np.maximum(np.abs(ref), 1.0)
    return bool(np.all(np.abs(arr - ref) <= rtol * scale))


def sample_coefficients(model: PhysicalModel, grid: Grid) -> SampledCoefficients:
    """Midpoint-sample the coefficients and apply the averaging stencils."""
    J, K = grid.J, grid.K
    xm = grid.x.midpoints(extra=1)   # x_{j-1/2}, j = 1..J+1
    ym = grid.y.midpoints()          # y_{k-1/2}, k = 1..K
    xn = grid.x.nodes
    yn = grid.y.nodes

    if model.X0 > xn[J - 2]:
        raise ValueError(
            f"X0 = {model.X0} exceeds x_(J-2) = {xn[J - 2]:.6g}; enlarge X or refine"
        )

    XM, YM = xm[1:, None], ym[None, 1:]          # (J+1, 1) x (1, K)
    rho_m = np.asarray(model.rho(XM, YM), dtype=float) + np.zeros((J + 1, K))
    B11_m = np.asarray(model.B11(XM, YM), dtype=float) + np.zeros((J + 1, K))
    B12_m = np.asarray(model.B12(XM, YM), dtype=float) + np.zeros((J + 1, K))
    B21_m = np.asarray(model.B21(XM, YM), dtype=float) + np.zeros((J + 1, K))
    B22_m = np.asarray(model.B22(XM, YM), dtype=float) + np.zeros((J + 1, K))
    V_m = np.asarray(model.V(XM, YM), dtype=float) + np.zeros((J + 1, K))
    Vt_m = np.asarray(model.V_tilde(xm[1:]), dtype=float) + np.zeros(J + 1)

    if np.any(rho_m <= 0):
        raise ValueError("sampled rho must be positive everywhere")
    if np.max(np.abs(B12_m - B21_m)) > 1e-14 * max(1.0, np.max(np.abs(B12_m))):
        raise ValueError("B must be symmetric (B12 == B21)")
    det = B11_m * B22_m - B12_m * B21_m
    if np.any(B11_m <= 0) or np.any(det <= 0):
        raise ValueError("sampled B must be positive definite")

    # far-field constancy from the first midpoint at or beyond X0
    tail = xm[1:] >= model.X0
    for name, arr, const in (
        ("rho", rho_m, model.rho_inf),
        ("B11", B11_m, model.B1_inf),
        ("B22", B22_m, model.B2_inf),
        ("B12", B12_m, 0.0),
        ("V", V_m, model.V_inf),
    ):
        if np.max(np.abs(arr[tail, :] - const)) > 1e-12 * max(1.0, abs(const)):
            raise ValueError(f"{name} must equal its asymptotic constant beyond X0")
    if np.max(np.abs(Vt_m[tail] - model.V_inf)) > 1e-12 * max(1.0, abs(model.V_inf)):
        raise ValueError("V_tilde must equal V_inf beyond X0")

    h = grid.x.steps
    hh = grid.x.half_steps
    dl = grid.y.steps
    dd = grid.y.half_steps
    # h_j for j = 1..J+1 and h_{j+1/2} for j = 1..J, tail-continued
    hx = np.concatenate([h[1:], [grid.x.tail_step]])
    hhx = np.concatenate([hh[1:J], [hh[J]]])

    def shat_y(mid):
        # (nj, K) midpoint-in-y -> (nj, K+1) node-in-y, edge columns copied
        out = np.empty((mid.shape[0], K + 1))
        out[:, 1:K] = (dl[1:K] * mid[:, : K - 1] + dl[2:] * mid[:, 1:]) / (
            2.0 * dd[1:K]
        )
        out[:, 0] = mid[:, 0]
        out[:, K] = mid[:, -1]
        return out

    def shat_x(mid):
        # (J+1, nk) midpoint-in-x (j=1..J+1) -> (J+1, nk) node-in-x (j=0..J)
        out = np.empty_like(mid)
        out[1:] = (hx[:J, None] * mid[:J] + hx[1:, None] * mid[1:]) / (
            2.0 * hhx[:, None]
        )
        out[0] = mid[0]
        return out

    B11h = np.zeros((J + 2, K + 1))
    B11h[1:, :] = shat_y(B11_m)
    B22h = np.zeros((J + 1, K + 1))
    B22h[:, 1:] = shat_x(B22_m)
    B12h = np.zeros((J + 2, K + 1))
    B12h[1:, 1:] = B12_m

    rho_h = shat_x(shat_y(rho_m))
    V_h = shat_x(shat_y(V_m))

    V_tilde_h = np.empty(J + 1)
    V_tilde_h[1:] = (hx[:J] * Vt_m[:J] + hx[1:] * Vt_m[1:]) / (2.0 * hhx)
    V_tilde_h[0] = Vt_m[0]

    deltaV_h = V_h - V_tilde_h[:, None]
    # the split is exact where both potentials equal V_inf; snap the tail so
    # the boundary rows see literal zeros
    tol = 1e-12 * max(1.0, abs(model.V_inf))
    if np.max(np.abs(deltaV_h[J - 1 :, 1:K])) > tol:
        raise ValueError("deltaV must vanish for j >= J-1; check X0 and the mesh tail")
    deltaV_h[J - 1 :, :] = 0.0
    deltaV_h[:, 0] = 0.0
    deltaV_h[:, K] = 0.0

    B11c = B11_m[:J].copy()
    B22c = B22_m[:J].copy()
    B12c = B12_m[:J].copy()

    for arr in (B11h, B22h, B12h, rho_h, V_h, V_tilde_h, deltaV_h, B11c, B22c, B12c):
        arr.setflags(write=False)

    return SampledCoefficients(
        grid=grid,
        hbar=model.hbar,
        rho_inf=model.rho_inf,
        B1_inf=model.B1_inf,
        B2_inf=model.B2_inf,
        V_inf=model.V_inf,
        X0=model.X0,
        B11h=B11h,
        B22h=B22h,
        B12h=B12h,
        rho_h=rho_h,
        V_h=V_h,
        V_tilde_h=V_tilde_h,
        deltaV_h=deltaV_h,
        B11c=B11c,
        B22c=B22c,
        B12c=B12c,
    )


@dataclass(frozen=True)
class CayleyPropagator:
    """Pointwise unit-modulus half-step potential kick ``E``.

    ``E^{-1} = conj(E)`` and ``E = 1`` wherever the potential split
    vanishes, so the kick is the identity on and near the open boundary.
    """

    values: np.ndarray
    variant: str

    @property
    def is_identity(self) -> bool:
        return bool(np.all(self.values == 1.0))


def build_propagator(coeffs: SampledCoefficients, tau: float,
                     variant: str = "cayley") -> CayleyPropagator:
    if tau <= 0:
        raise ValueError("tau must be positive")
    x = tau * coeffs.deltaV_h / (4.0 * coeffs.hbar * coeffs.rho_h)
    if variant == "cayley":
        E = (1.0 - 1j * x) / (1.0 + 1j * x)
    elif variant == "exponential":
        E = np.exp(-2j * x)
    else:
        raise ValueError(f"unknown propagator variant {variant!r}")
    E[coeffs.deltaV_h == 0.0] = 1.0
    E.setflags(write=False)
    return CayleyPropagator(E, variant)


def apply_hamiltonian(coeffs: SampledCoefficients, W: np.ndarray) -> np.ndarray:
    """Apply the 2D mesh Hamiltonian; nonzero only at interior nodes.

    The input must vanish on the Dirichlet boundary (j = 0, k = 0, K);
    values at j = J feed the stencil as given.
    """
    grid = coeffs.grid
    J, K = grid.J, grid.K
    h = grid.x.steps
    hh = grid.x.half_steps
    dl = grid.y.steps
    dd = grid.y.half_steps
    W = np.asarray(W)

    # flux form in x: G[j] = B11h[j] * (W_j - W_{j-1}) / h_j, j = 1..J
    G1 = coeffs.B11h[1 : J + 1, :] * (W[1:, :] - W[:-1, :]) / h[1:, None]
    T1 = (G1[1:, :] - G1[:-1, :]) / hh[1:J, None]          # j = 1..J-1

    G4 = coeffs.B22h[:, 1 : K + 1] * (W[:, 1:] - W[:, :-1]) / dl[None, 1:]
    T4 = (G4[:, 1:] - G4[:, :-1]) / dd[None, 1:K]          # k = 1..K-1

    out = np.zeros_like(W, dtype=complex)
    out[1:J, 1:K] = T1[:, 1:K] + T4[1:J, :]

    if np.max(np.abs(coeffs.B12h)) != 0.0:
        DyW = (W[:, 1:] - W[:, :-1]) / dl[None, 1:]        # (J+1, K)
        SxDyW = 0.5 * (DyW[1:, :] + DyW[:-1, :])           # cells j=1..J, k=1..K
        G2 = coeffs.B12h[1 : J + 1, 1:] * SxDyW
        SyG2 = (dl[None, 1:K] * G2[:, : K - 1] + dl[None, 2:] * G2[:, 1:]) / (
            2.0 * dd[None, 1:K]
        )                                                   # (J, K-1)
        T2 = (SyG2[1:, :] - SyG2[:-1, :]) / hh[1:J, None]

        SyW = 0.5 * (W[:, 1:] + W[:, :-1])                  # (J+1, K)
        DxSyW = (SyW[1:, :] - SyW[:-1, :]) / h[1:, None]    # cells
        G3 = coeffs.B12h[1 : J + 1, 1:] * DxSyW
        DyG3 = (G3[:, 1:] - G3[:, : K - 1]) / dd[None, 1:K]  # (J, K-1)
        T3 = (h[1:J, None] * DyG3[: J - 1, :] + h[2 : J + 1, None] * DyG3[1:, :]) / (
            2.0 * hh[1:J, None]
        )
        out[1:J, 1:K] += T2 + T3

    return -(coeffs.hbar**2 / 2.0) * out
