"""Command-line front end.

Subcommands: ``run`` (one simulation from a config file), ``converge``
(single-axis refinement study), ``kernels`` (dump the boundary kernels),
``verify`` (property suite: conservation, boundary-operator positivity,
transparent-boundary exactness, factorization equivalence).

Exit codes: 0 success, 2 configuration/validation error, 3 numerical
failure (including a failed verify check).
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from qstrip.harness import (
    ConfigError,
    ConvergenceReport,
    build_solver,
    convergence_study,
    initial_state,
    load_config,
    run_simulation,
    write_outputs,
)
from qstrip.splitting import NumericalError


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", required=True, help="path to the config file")
    p.add_argument(
        "--set", dest="overrides", action="append", default=[],
        metavar="SECTION.KEY=VALUE", help="override a config entry",
    )


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="qstrip",
        description="Splitting Crank-Nicolson solver with discrete transparent boundaries",
    )
    sub = ap.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one simulation and export snapshots")
    _add_common(p_run)
    p_run.add_argument("--output-dir", default=None, help="override output.dir")

    p_conv = sub.add_parser("converge", help="single-axis refinement study")
    _add_common(p_conv)
    p_conv.add_argument("--axis", required=True, choices=["J", "K", "M"])
    p_conv.add_argument("--levels", required=True,
                        help="comma-separated ascending sizes, e.g. 150,300,600")
    p_conv.add_argument("--n-compare", type=int, default=8)
    p_conv.add_argument("--out", default=None, help="also write the table as CSV")

    p_ker = sub.add_parser("kernels", help="dump transparent-boundary kernels")
    _add_common(p_ker)
    p_ker.add_argument("--out", required=True, help="binary dump path")
    p_ker.add_argument("--csv", default=None, help="optional CSV export path")

    p_ver = sub.add_parser("verify", help="run the property suite")
    _add_common(p_ver)
    p_ver.add_argument("--trials", type=int, default=50,
                       help="random histories for the positivity check")
    return ap


def _cmd_run(args) -> int:
    cfg = load_config(args.config, args.overrides)
    if args.output_dir is not None:
        cfg = replace(cfg, out_dir=args.output_dir)
    result, solver = run_simulation(cfg)
    written = write_outputs(cfg, result, solver.grid)
    print(f"ran {cfg.M} levels to t = {result.times[-1]:.6g}; "
          f"final mass {result.mass_trace[-1]:.6g} "
          f"(initial {result.mass_trace[0]:.6g})")
    for p in written:
        print(f"wrote {p}")
    return 0


def _cmd_converge(args) -> int:
    cfg = load_config(args.config, args.overrides)
    try:
        levels = [int(tok) for tok in args.levels.split(",")]
    except ValueError:
        raise ConfigError(f"bad levels list {args.levels!r}")
    report = convergence_study(cfg, args.axis, levels, n_compare=args.n_compare)
    print(report.to_text())
    if args.out:
        report.to_csv(args.out)
        print(f"wrote {args.out}")
    return 0


def _cmd_kernels(args) -> int:
    from qstrip.tbc import ModeParams, dump_kernels, export_kernels_csv

    cfg = load_config(args.config, args.overrides)
    solver = build_solver(cfg)
    mps = [
        ModeParams(cfg.hbar, cfg.rho, cfg.B1, 0.5 * cfg.hbar**2 * cfg.B2 * lam,
                   solver.grid.x.tail_step, solver.tmesh.tau)
        for lam in solver.basis.eigenvalues
    ]
    dump_kernels(args.out, solver.R_right, mps)
    print(f"wrote {args.out} ({solver.n_modes} modes, M = {cfg.M})")
    if args.csv:
        export_kernels_csv(args.csv, solver.R_right)
        print(f"wrote {args.csv}")
    return 0


def _cmd_verify(args) -> int:
    from qstrip.harness import build_model
    from qstrip.model import sample_coefficients
    from qstrip.reference import (
        check_factorized_forms,
        run_extended_domain,
        window_difference,
    )
    from qstrip.tbc import check_positivity

    cfg = load_config(args.config, args.overrides)
    checks: list[tuple[str, bool, str]] = []

    # conservation: unforced run never gains mass; flat before edge contact
    result, solver = run_simulation(cfg, snapshot_levels=())
    m0 = result.mass_trace[0]
    gain = float(result.mass_trace.max() / m0 - 1.0) if m0 else 0.0
    checks.append(("conservation", gain <= 1e-12,
                   f"max relative gain {gain:.2e}"))

    # positivity of the boundary operator over random histories
    rng = np.random.default_rng(2024)
    L = solver.n_modes
    Mp = min(cfg.M, 32)
    worst = np.inf
    for _ in range(args.trials):
        hist = np.zeros((L, Mp + 1), dtype=complex)
        hist[:, 1:] = rng.standard_normal((L, Mp)) + 1j * rng.standard_normal((L, Mp))
        val = check_positivity(solver.R_right[:, : Mp + 1], hist,
                               solver.tmesh.tau, solver.grid.x.tail_step)
        worst = min(worst, val)
    checks.append(("boundary-positivity", worst >= -1e-10,
                   f"smallest quadratic form {worst:.2e}"))

    # transparent-boundary exactness against the extended oracle, derated to
    # desk scale (the oracle keeps two full trajectories in memory)
    small = replace(cfg, strip="semi-infinite", J=min(cfg.J, 300),
                    K=min(cfg.K, 32), M=min(cfg.M, 150))
    res_t, sol_t = run_simulation(small, keep_trajectory=True)
    res_x, _ = run_extended_domain(
        sol_t.grid, sol_t.tmesh, build_model(small),
        initial_state(small, sol_t.grid), factor=4.0,
    )
    diff = window_difference(res_t, res_x, sol_t.grid.J)
    checks.append(("tbc-exactness", diff <= 1e-8, f"window deviation {diff:.2e}"))

    # factorized one-shot form equals the three-stage step
    coeffs = sample_coefficients(build_model(small), sol_t.grid)
    dev = check_factorized_forms(sol_t.grid, sol_t.tmesh, coeffs,
                                 initial_state(small, sol_t.grid))
    checks.append(("factorization-equivalence", dev <= 1e-13,
                   f"relative deviation {dev:.2e}"))

    ok = True
    for name, passed, detail in checks:
        print(f"{'PASS' if passed else 'FAIL'} {name}: {detail}")
        ok = ok and passed
    return 0 if ok else 3


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "run":
            return _cmd_run(args)
        if args.command == "converge":
            return _cmd_converge(args)
        if args.command == "kernels":
            return _cmd_kernels(args)
        if args.command == "verify":
            return _cmd_verify(args)
        raise AssertionError(f"unhandled command {args.command}")
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except (NumericalError, ValueError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
