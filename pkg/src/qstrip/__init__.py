"""Solvers for the generalized 2D time-dependent Schrodinger equation on a
(semi-)infinite strip: splitting-in-potential Crank-Nicolson stepping with
exact discrete transparent boundary conditions, plus reference solvers and
an experiment harness.
"""

from qstrip.mesh import AxisMesh, Grid, TimeMesh
from qstrip.model import (
    CayleyPropagator,
    PhysicalModel,
    SampledCoefficients,
    WaveField,
    apply_hamiltonian,
    barrier_potential,
    barrier_slab,
    build_propagator,
    gaussian_packet,
    sample_coefficients,
)
from qstrip.spectral import SpectralBasis, build_basis, forward, inverse
from qstrip.tbc import (
    BoundaryHistory,
    ModeKernel,
    ModeParams,
    apply_S_ref,
    build_mode_kernels,
    check_positivity,
    kernel_impulse_oracle,
    kernel_inverse_z,
)
from qstrip.splitting import (
    NumericalError,
    SolverResult,
    SplittingSolver,
    solve_tridiagonal,
)
from qstrip.reference import (
    CNSolver,
    check_factorized_forms,
    energy_form,
    run_extended_domain,
)
from qstrip.harness import (
    ConfigError,
    SolverConfig,
    convergence_study,
    error_norms,
    load_config,
    run_simulation,
    vtilde_comparison,
)

__all__ = [
    "AxisMesh",
    "Grid",
    "TimeMesh",
    "CayleyPropagator",
    "PhysicalModel",
    "SampledCoefficients",
    "WaveField",
    "apply_hamiltonian",
    "barrier_potential",
    "barrier_slab",
    "build_propagator",
    "gaussian_packet",
    "sample_coefficients",
    "SpectralBasis",
    "build_basis",
    "forward",
    "inverse",
    "BoundaryHistory",
    "ModeKernel",
    "ModeParams",
    "apply_S_ref",
    "build_mode_kernels",
    "check_positivity",
    "kernel_impulse_oracle",
    "kernel_inverse_z",
    "NumericalError",
    "SolverResult",
    "SplittingSolver",
    "solve_tridiagonal",
    "CNSolver",
    "check_factorized_forms",
    "energy_form",
    "run_extended_domain",
    "ConfigError",
    "SolverConfig",
    "convergence_study",
    "error_norms",
    "load_config",
    "run_simulation",
    "vtilde_comparison",
]
