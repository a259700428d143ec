"""1D meshes and the finite-difference primitives built on them.

Step arrays are 1-based to match the usual finite-difference indexing:
``steps[j] = nodes[j] - nodes[j-1]`` for ``j >= 1`` and slot 0 is NaN so
that accidental use poisons the result instead of silently succeeding.
Meshes are immutable after construction and safe to share across workers.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

_TAIL_RTOL = 1e-12


def _readonly(arr: np.ndarray) -> np.ndarray:
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class AxisMesh:
    """Strictly increasing mesh ``0 = x_0 < ... < x_n`` on one axis.

    ``half_steps[j] = (steps[j] + steps[j+1]) / 2`` for interior j; the last
    half step continues the final step, matching the uniform continuation
    beyond the right edge assumed by the transparent-boundary rows.
    ``uniform_tail_from`` is the smallest index from which all steps equal
    the final one.

    An x-axis mesh needs at least 4 cells (the boundary rows use nodes
    ``n-1`` and ``n``); a y-axis mesh needs at least 2 (one interior node
    for the spectral basis).
    """

    nodes: np.ndarray
    axis: str = "x"
    steps: np.ndarray = field(init=False, repr=False)
    half_steps: np.ndarray = field(init=False, repr=False)
    uniform_tail_from: int = field(init=False)

    def __post_init__(self):
        nodes = np.array(self.nodes, dtype=float)
        if nodes.ndim != 1:
            raise ValueError("nodes must be a 1D sequence")
        if self.axis not in ("x", "y"):
            raise ValueError(f"axis must be 'x' or 'y', got {self.axis!r}")
        n = nodes.size - 1
        min_cells = 4 if self.axis == "x" else 2
        if n < min_cells:
            raise ValueError(
                f"{self.axis}-axis mesh needs at least {min_cells} cells, got {n}"
            )
        if nodes[0] != 0.0:
            raise ValueError("first node must be exactly 0")
        steps = np.empty(n + 1)
        steps[0] = np.nan
        steps[1:] = np.diff(nodes)
        if np.any(steps[1:] <= 0.0):
            raise ValueError("nodes must be strictly increasing")
        half = np.empty(n + 1)
        half[0] = np.nan
        half[1:n] = 0.5 * (steps[1:n] + steps[2 : n + 1])
        half[n] = steps[n]
        h = steps[n]
        j0 = n
        while j0 > 1 and abs(steps[j0 - 1] - h) <= _TAIL_RTOL * h:
            j0 -= 1
        object.__setattr__(self, "nodes", _readonly(nodes))
        object.__setattr__(self, "steps", _readonly(steps))
        object.__setattr__(self, "half_steps", _readonly(half))
        object.__setattr__(self, "uniform_tail_from", j0)

    @classmethod
    def uniform(cls, length: float, cells: int, axis: str = "x") -> "AxisMesh":
        if length <= 0:
            raise ValueError("length must be positive")
        return cls(np.linspace(0.0, length, cells + 1), axis=axis)

    @property
    def n(self) -> int:
        """Number of cells (last node index)."""
        return self.nodes.size - 1

    @property
    def length(self) -> float:
        return float(self.nodes[-1])

    @property
    def tail_step(self) -> float:
        """The step of the uniform tail (the last step)."""
        return float(self.steps[-1])

    @property
    def is_uniform(self) -> bool:
        return self.uniform_tail_from == 1

    def midpoints(self, extra: int = 0) -> np.ndarray:
        """Cell midpoints ``x_{j-1/2}``, 1-based with slot 0 NaN.

        ``extra`` appends virtual midpoints continuing the uniform tail
        beyond the last node (used when sampling coefficients at node n).
        """
        mids = np.empty(self.n + 1 + extra)
        mids[0] = np.nan
        mids[1 : self.n + 1] = 0.5 * (self.nodes[:-1] + self.nodes[1:])
        h = self.tail_step
        for i in range(extra):
            mids[self.n + 1 + i] = self.nodes[-1] + (i + 0.5) * h
        return mids


def diff_backward(W, mesh: AxisMesh, j: int) -> complex:
    """Backward difference ``(W_j - W_{j-1}) / h_j`` for ``1 <= j <= n``."""
    if not 1 <= j <= mesh.n:
        raise IndexError(f"diff_backward needs 1 <= j <= {mesh.n}, got {j}")
    return (W[j] - W[j - 1]) / mesh.steps[j]


def diff_forward_mod(W, mesh: AxisMesh, j: int) -> complex:
    """Modified forward difference ``(W_{j+1} - W_j) / h_{j+1/2}``."""
    if not 1 <= j <= mesh.n - 1:
        raise IndexError(f"diff_forward_mod needs 1 <= j <= {mesh.n - 1}, got {j}")
    return (W[j + 1] - W[j]) / mesh.half_steps[j]


def diff_central(W, mesh: AxisMesh, j: int) -> complex:
    """Central difference ``(W_{j+1} - W_{j-1}) / (2 h_{j+1/2})``."""
    if not 1 <= j <= mesh.n - 1:
        raise IndexError(f"diff_central needs 1 <= j <= {mesh.n - 1}, got {j}")
    return (W[j + 1] - W[j - 1]) / (2.0 * mesh.half_steps[j])


def avg_bar(W, mesh: AxisMesh, j: int) -> complex:
    """Backward average ``(W_{j-1} + W_j) / 2``."""
    if not 1 <= j <= mesh.n:
        raise IndexError(f"avg_bar needs 1 <= j <= {mesh.n}, got {j}")
    return 0.5 * (W[j - 1] + W[j])


def avg_hat(W, mesh: AxisMesh, j: int) -> complex:
    """Step-weighted average ``(h_j W_j + h_{j+1} W_{j+1}) / (2 h_{j+1/2})``."""
    if not 1 <= j <= mesh.n - 1:
        raise IndexError(f"avg_hat needs 1 <= j <= {mesh.n - 1}, got {j}")
    return (mesh.steps[j] * W[j] + mesh.steps[j + 1] * W[j + 1]) / (
        2.0 * mesh.half_steps[j]
    )


def inner_product(U, W, mesh: AxisMesh, variant: str = "interior") -> complex:
    """Mesh inner product ``sum_j U_j conj(W_j) h_{j+1/2}``.

    The ``interior`` variant sums j = 1..n-1; ``closed`` adds the boundary
    term ``U_n conj(W_n) h_n / 2``.
    """
    U = np.asarray(U)
    W = np.asarray(W)
    if U.shape != W.shape or U.shape[0] != mesh.n + 1:
        raise ValueError("U, W must both live on the mesh nodes")
    n = mesh.n
    val = np.sum(U[1:n] * np.conj(W[1:n]) * mesh.half_steps[1:n])
    if variant == "closed":
        val = val + U[n] * np.conj(W[n]) * 0.5 * mesh.steps[n]
    elif variant != "interior":
        raise ValueError(f"unknown inner product variant {variant!r}")
    return complex(val)


def norm(W, mesh: AxisMesh, variant: str = "interior") -> float:
    return float(np.sqrt(inner_product(W, W, mesh, variant).real))


def x_weights(mesh: AxisMesh, variant: str = "interior") -> np.ndarray:
    """Quadrature weights over the x nodes for the requested norm variant.

    ``closed`` adds the half-step weight at the right edge; ``closed_both``
    also adds it at the left edge (used for the doubly-transparent strip,
    whose conserved norm carries half weights at both open edges).
    """
    n = mesh.n
    w = np.zeros(n + 1)
    w[1:n] = mesh.half_steps[1:n]
    if variant in ("closed", "closed_both"):
        w[n] = 0.5 * mesh.steps[n]
    if variant == "closed_both":
        w[0] = 0.5 * mesh.steps[1]
    elif variant not in ("interior", "closed"):
        raise ValueError(f"unknown weight variant {variant!r}")
    return w


def y_weights(mesh: AxisMesh) -> np.ndarray:
    """Interior quadrature weights ``delta_{k+1/2}`` over the y nodes."""
    n = mesh.n
    w = np.zeros(n + 1)
    w[1:n] = mesh.half_steps[1:n]
    return w


def inner_product_2d(U, W, xmesh: AxisMesh, ymesh: AxisMesh,
                     variant: str = "interior") -> complex:
    """Tensorized 2D inner product over the strip mesh."""
    U = np.asarray(U)
    W = np.asarray(W)
    expected = (xmesh.n + 1, ymesh.n + 1)
    if U.shape != expected or W.shape != expected:
        raise ValueError(f"fields must have shape {expected}")
    wx = x_weights(xmesh, variant)
    wy = y_weights(ymesh)
    return complex(np.einsum("jk,jk,j,k->", U, np.conj(W), wx, wy))


def norm_2d(W, xmesh: AxisMesh, ymesh: AxisMesh, variant: str = "interior") -> float:
    return float(np.sqrt(inner_product_2d(W, W, xmesh, ymesh, variant).real))


@dataclass(frozen=True)
class TimeMesh:
    """Time levels ``0 = t_0 < ... < t_M`` with 1-based steps ``taus``."""

    times: np.ndarray
    taus: np.ndarray = field(init=False, repr=False)
    uniform: bool = field(init=False)

    def __post_init__(self):
        times = np.array(self.times, dtype=float)
        if times.ndim != 1 or times.size < 1:
            raise ValueError("times must be a non-empty 1D sequence")
        if times[0] != 0.0:
            raise ValueError("first time level must be 0")
        taus = np.empty(times.size)
        taus[0] = np.nan
        taus[1:] = np.diff(times)
        if times.size > 1 and np.any(taus[1:] <= 0.0):
            raise ValueError("time levels must be strictly increasing")
        uni = times.size <= 2 or bool(
            np.all(np.abs(taus[1:] - taus[-1]) <= _TAIL_RTOL * taus[-1])
        )
        object.__setattr__(self, "times", _readonly(times))
        object.__setattr__(self, "taus", _readonly(taus))
        object.__setattr__(self, "uniform", uni)

    @classmethod
    def uniform_mesh(cls, T: float, M: int) -> "TimeMesh":
        if T <= 0 or M < 0:
            raise ValueError("need T > 0 and M >= 0")
        return cls(np.linspace(0.0, T, M + 1))

    @property
    def M(self) -> int:
        return self.times.size - 1

    @property
    def tau(self) -> float:
        """The common step; only meaningful when ``uniform``."""
        if not self.uniform:
            raise ValueError("mesh is not uniform in time")
        return float(self.taus[-1])


@dataclass(frozen=True)
class Grid:
    """The product mesh of the computational strip."""

    x: AxisMesh
    y: AxisMesh

    def __post_init__(self):
        if self.x.axis != "x" or self.y.axis != "y":
            raise ValueError("Grid wants an x-axis mesh and a y-axis mesh")

    @property
    def J(self) -> int:
        return self.x.n

    @property
    def K(self) -> int:
        return self.y.n

    @property
    def shape(self) -> tuple[int, int]:
        return (self.J + 1, self.K + 1)

    @classmethod
    def uniform(cls, X: float, Y: float, J: int, K: int) -> "Grid":
        return cls(AxisMesh.uniform(X, J, "x"), AxisMesh.uniform(Y, K, "y"))
