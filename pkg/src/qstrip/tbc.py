"""Discrete transparent boundary condition: per-mode convolution kernels,
boundary trace histories, and the reference boundary operator.

The exterior problem beyond the strip edge is the constant-coefficient
Crank-Nicolson scheme on the uniform tail.  Its discrete
Dirichlet-to-Neumann map is a time convolution per y mode; the kernel is
constructed two independent ways that cross-validate each other:

* ``kernel_inverse_z`` solves the scheme's characteristic quadratic per
  Z-frequency, forms the symbol of the central-difference flux over the
  boundary trace, and inverts numerically on a circle of radius > 1;
* ``kernel_impulse_oracle`` time-marches the exterior scheme with a unit
  impulse as boundary data and reads the flux response off directly.

Both constructions are pure functions of the mode parameters.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_banded

from qstrip.spectral import SpectralBasis, forward, inverse

_KERNEL_MAGIC = b"QKRN"
_KERNEL_VERSION = 1

_cache: dict[tuple, np.ndarray] = {}


def clear_kernel_cache() -> None:
    _cache.clear()


@dataclass(frozen=True)
class ModeParams:
    """Constants of the exterior problem for one y mode.

    ``mode_potential`` is the effective constant potential
    ``(hbar^2/2) B2_inf lambda_l + V_inf`` seen by the mode.
    """

    hbar: float
    rho_inf: float
    B1_inf: float
    mode_potential: float
    h: float
    tau: float

    def __post_init__(self):
        if min(self.hbar, self.rho_inf, self.B1_inf, self.h, self.tau) <= 0:
            raise ValueError("hbar, rho_inf, B1_inf, h, tau must all be positive")


@dataclass(frozen=True)
class ModeKernel:
    """Convolution coefficients ``R^0..R^M`` for one mode."""

    params: ModeParams
    R: np.ndarray

    @property
    def M(self) -> int:
        return self.R.size - 1


def mode_params_for(basis: SpectralBasis, hbar: float, rho_inf: float,
                    B1_inf: float, B2_inf: float, V_inf: float,
                    h: float, tau: float) -> list[ModeParams]:
    return [
        ModeParams(hbar, rho_inf, B1_inf, 0.5 * hbar**2 * B2_inf * lam + V_inf, h, tau)
        for lam in basis.eigenvalues
    ]


def _dtn_symbol(p: ModeParams, z: np.ndarray) -> tuple[np.ndarray, float]:
    """Z-symbol of the flux response ``2h * central_diff(sbar_t Psi)|_edge``
    per unit boundary trace, for the exterior Crank-Nicolson scheme, plus
    the largest selected-root modulus."""
    zinv = 1.0 / z
    alpha = 1j * (2.0 * p.hbar * p.rho_inf / p.tau) * (1.0 - zinv) / (1.0 + zinv)
    G = 2.0 * p.h**2 * (p.mode_potential - alpha) / (p.hbar**2 * p.B1_inf)
    b = 2.0 + G
    s = np.sqrt(b * b - 4.0)
    kplus = 0.5 * (b + s)
    kminus = 0.5 * (b - s)
    kappa = np.where(np.abs(kplus) < np.abs(kminus), kplus, kminus)
    mag = np.abs(kappa)
    if np.any(mag >= 1.0 - 1e-12):
        raise ArithmeticError("characteristic root on the unit circle")
    return 0.5 * (1.0 + zinv) * (kappa - 1.0 / kappa), mag.max()


def kernel_inverse_z(params: ModeParams, M: int, radius: float | None = None,
                     n_samples: int | None = None) -> ModeKernel:
    """Kernel via numerical inverse Z-transform of the exterior DtN symbol.

    ``radius`` defaults to ``1 + 6.9/M`` with ``4M`` circle samples, which
    balances aliasing against round-off amplification of ``r^M``; both roots
    of the characteristic quadratic landing on the unit circle is cured by
    nudging the radius outward.
    """
    if M < 1:
        raise ValueError("M must be >= 1")
    N = 4 * M if n_samples is None else int(n_samples)
    if N < 2 * M + 2:
        raise ValueError(f"need at least 2M+2 = {2 * M + 2} samples, got {N}")
    r = (1.0 + 6.9 / M) if radius is None else float(radius)
    if r <= 1.0:
        raise ValueError("inversion radius must exceed 1")
    for attempt in range(4):
        z = r * np.exp(2j * np.pi * np.arange(N) / N)
        try:
            symbol, _ = _dtn_symbol(params, z)
        except ArithmeticError:
            r = 1.0 + (r - 1.0) * 1.5
            continue
        a = np.fft.ifft(symbol)
        R = a[: M + 1] * r ** np.arange(M + 1)
        return ModeKernel(params, R)
    raise ArithmeticError("could not find an inversion radius with stable roots")


def _impulse_extent(params: ModeParams, M: int) -> int:
    # bound on how far the tail can matter: fastest discrete group speed
    # times the run length, doubled for the round trip, plus a wide margin
    v = params.hbar * params.B1_inf / (params.rho_inf * params.h)
    travel = v * (M + 1) * params.tau / params.h
    return int(max(2 * (M + 1), np.ceil(travel))) + 256


def kernel_impulse_oracle(params: ModeParams, M: int,
                          J_ext: int | None = None) -> ModeKernel:
    """Kernel from the impulse response of the truncated exterior problem.

    Marches the constant-coefficient Crank-Nicolson scheme on ``J_ext``
    exterior cells with a unit impulse as boundary data at level 1 and zero
    Dirichlet at the far end, far enough out that nothing reflected returns
    within ``M`` steps.
    """
    if M < 1:
        raise ValueError("M must be >= 1")
    if J_ext is None:
        J_ext = _impulse_extent(params, M)
    elif J_ext < M + 2:
        raise ValueError("J_ext must exceed M plus a margin")
    hbar, rho, B1 = params.hbar, params.rho_inf, params.B1_inf
    h, tau, c = params.h, params.tau, params.mode_potential
    n = J_ext - 1
    A = hbar**2 * B1 / (2.0 * h * h)
    P = 1j * hbar * rho / tau
    ab = np.zeros((3, n), dtype=complex)
    ab[0, 1:] = 0.5 * A
    ab[1, :] = P - 0.5 * (2.0 * A + c)
    ab[2, :-1] = 0.5 * A

    trace = np.zeros(M + 3)
    trace[1] = 1.0
    R = np.empty(M + 1, dtype=complex)
    u_prev = np.zeros(n, dtype=complex)
    first_prev = 0.0 + 0.0j
    for m in range(1, M + 2):
        v = u_prev
        vm1 = np.empty(n, dtype=complex)
        vm1[0] = trace[m - 1]
        vm1[1:] = v[:-1]
        vp1 = np.empty(n, dtype=complex)
        vp1[:-1] = v[1:]
        vp1[-1] = 0.0
        rhs = -0.5 * A * vm1 + (P + 0.5 * (2.0 * A + c)) * v - 0.5 * A * vp1
        rhs[0] -= 0.5 * A * trace[m]
        u = solve_banded((1, 1), ab, rhs)
        # flux response: recover the inward neighbour from the edge-node
        # equation, then form the time-averaged central difference
        s_tr = 0.5 * (trace[m] + trace[m - 1])
        d_tr = (trace[m] - trace[m - 1]) / tau
        s_in = 0.5 * (u[0] + first_prev)
        R[m - 1] = (
            2.0 * s_in
            - 2.0 * s_tr
            + (2.0 * h * h / (hbar**2 * B1)) * (1j * hbar * rho * d_tr - c * s_tr)
        )
        first_prev = u[0]
        u_prev = u
    return ModeKernel(params, R)


def build_mode_kernels(mode_params: list[ModeParams], M: int,
                       method: str = "inverse_z") -> np.ndarray:
    """Kernel coefficients for every mode, shape (modes, M+1), cached.

    The cache key is the full parameter tuple, so identical exterior
    problems (e.g. the left and right edges of a symmetric strip) share one
    construction.
    """
    make = {"inverse_z": kernel_inverse_z, "impulse": kernel_impulse_oracle}[method]
    out = np.empty((len(mode_params), M + 1), dtype=complex)
    for i, p in enumerate(mode_params):
        key = (method, p.hbar, p.rho_inf, p.B1_inf, p.mode_potential, p.h, p.tau, M)
        R = _cache.get(key)
        if R is None:
            R = make(p, M).R
            _cache[key] = R
        out[i] = R
    return out


class BoundaryHistory:
    """Append-only per-mode history of boundary trace coefficients.

    Level 0 is the (zero) initial state; ``append`` stores the trace of the
    just-completed level.
    """

    def __init__(self, n_modes: int, M: int):
        self._coeffs = np.zeros((n_modes, M + 1), dtype=complex)
        self.m = 0

    @property
    def coeffs(self) -> np.ndarray:
        return self._coeffs[:, : self.m + 1]

    def append(self, trace_coeffs: np.ndarray) -> None:
        if self.m + 1 >= self._coeffs.shape[1]:
            raise ValueError("history is full")
        self.m += 1
        self._coeffs[:, self.m] = trace_coeffs

    def tail_convolution(self, R: np.ndarray, m: int | None = None) -> np.ndarray:
        """Known-history part ``sum_{q>=1} R^q trace^{m-q}`` per mode, where
        level ``m`` is the one about to be solved."""
        m = self.m + 1 if m is None else m
        if m < 2:
            return np.zeros(self._coeffs.shape[0], dtype=complex)
        q = min(m - 1, R.shape[1] - 1)
        return np.einsum(
            "lq,lq->l", R[:, 1 : q + 1], self._coeffs[:, m - 1 : m - 1 - q : -1]
        )


def convolve_full(R: np.ndarray, coeffs: np.ndarray) -> np.ndarray:
    """Discrete convolution ``(R * c)^m`` for every mode and level.

    ``coeffs[l, q]`` holds the trace at level q (level 0 zero);
    returns the same shape.
    """
    L, n = coeffs.shape
    out = np.zeros_like(coeffs)
    for m in range(1, n):
        q = min(m, R.shape[1] - 1)
        out[:, m] = np.einsum(
            "lq,lq->l", R[:, : q + 1], coeffs[:, m : m - q - 1 if m - q else None : -1]
        )
    return out


def apply_S_ref(history: BoundaryHistory, R: np.ndarray, basis: SpectralBasis,
                h: float) -> np.ndarray:
    """The reference boundary operator at the current history length.

    Returns interior node values of ``(1/2h) F^{-1}(R_l * trace^{(l)})`` at
    the latest level, including the current level's coupling term.
    """
    c = history.coeffs
    if c.shape[0] != basis.n_modes:
        raise ValueError("history and basis mode counts differ")
    if R.shape[0] != basis.n_modes:
        raise ValueError("kernels and basis mode counts differ")
    m = history.m
    q = min(m, R.shape[1] - 1)
    conv = np.einsum("lq,lq->l", R[:, : q + 1], c[:, m : m - q - 1 if m - q else None : -1])
    return inverse(conv, basis) / (2.0 * h)


def imag_flux_sum(R: np.ndarray, coeffs: np.ndarray, tau: float, h: float) -> float:
    """``Im sum_m (S^m trace, sbar_t trace)_y tau`` from mode coefficients.

    ``coeffs[l, m]`` is the boundary trace of mode l at level m with level 0
    zero.  This is the quadratic form whose non-negativity makes the
    boundary operator dissipative.
    """
    conv = convolve_full(R, coeffs)
    sbar = 0.5 * (coeffs[:, 1:] + coeffs[:, :-1])
    total = np.sum(conv[:, 1:] * np.conj(sbar)) * tau / (2.0 * h)
    return float(total.imag)


def imag_flux_sum_per_mode(R: np.ndarray, coeffs: np.ndarray, tau: float,
                           h: float) -> np.ndarray:
    conv = convolve_full(R, coeffs)
    sbar = 0.5 * (coeffs[:, 1:] + coeffs[:, :-1])
    per_mode = np.sum(conv[:, 1:] * np.conj(sbar), axis=1) * tau / (2.0 * h)
    return per_mode.imag


def check_positivity(R: np.ndarray, histories: np.ndarray, tau: float,
                     h: float) -> float:
    """Evaluate the dissipativity form for one random history (levels on the
    last axis, level 0 must be zero)."""
    if np.max(np.abs(histories[:, 0])) != 0.0:
        raise ValueError("history must start from a zero level")
    return imag_flux_sum(R, histories, tau, h)


def boundary_energy_sum(R: np.ndarray, coeffs: np.ndarray, tau: float, h: float,
                        hbar: float, B1_inf: float) -> float:
    """Accumulated boundary flux ``hbar B1 Im sum_m (S trace, sbar trace) tau``;
    balances the norm that has left the computational window."""
    return hbar * B1_inf * imag_flux_sum(R, coeffs, tau, h)


def physical_history_to_coeffs(traces: np.ndarray, basis: SpectralBasis) -> np.ndarray:
    """Convert node-value boundary traces (levels, y-nodes) to (modes, levels)."""
    return forward(traces, basis).T


def dump_kernels(path, R: np.ndarray, mode_params: list[ModeParams]) -> None:
    """Binary kernel dump: header (magic, version, modes, M, shared
    parameters), then per mode the potential constant and the little-endian
    complex coefficients."""
    L, n = R.shape
    p0 = mode_params[0]
    with open(path, "wb") as f:
        f.write(_KERNEL_MAGIC)
        f.write(struct.pack("<II", _KERNEL_VERSION, L))
        f.write(struct.pack("<I", n - 1))
        f.write(struct.pack("<5d", p0.h, p0.tau, p0.hbar, p0.rho_inf, p0.B1_inf))
        for i in range(L):
            f.write(struct.pack("<d", mode_params[i].mode_potential))
            f.write(np.ascontiguousarray(R[i], dtype="<c16").tobytes())


def load_kernels(path) -> tuple[np.ndarray, list[ModeParams]]:
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != _KERNEL_MAGIC:
            raise ValueError(f"not a kernel dump (bad magic {magic!r})")
        version, L = struct.unpack("<II", f.read(8))
        if version != _KERNEL_VERSION:
            raise ValueError(f"unsupported kernel dump version {version}")
        (M,) = struct.unpack("<I", f.read(4))
        h, tau, hbar, rho_inf, B1_inf = struct.unpack("<5d", f.read(40))
        R = np.empty((L, M + 1), dtype=complex)
        params = []
        for i in range(L):
            (c,) = struct.unpack("<d", f.read(8))
            params.append(ModeParams(hbar, rho_inf, B1_inf, c, h, tau))
            R[i] = np.frombuffer(f.read(16 * (M + 1)), dtype="<c16")
    return R, params


def export_kernels_csv(path, R: np.ndarray) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["mode", "m", "re", "im"])
        for l in range(R.shape[0]):
            for m in range(R.shape[1]):
                w.writerow([l + 1, m, f"{R[l, m].real:.17g}", f"{R[l, m].imag:.17g}"])
