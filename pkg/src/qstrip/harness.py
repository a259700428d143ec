"""Experiment driver: plain-text configuration, error norms on nested
meshes, refinement studies with error/runtime ratio tables, and snapshot
export.

The config format is sectioned ``key = value`` text; every key must be
known, and parse errors carry the offending line.  Snapshot files come in
two flavours: a plot-ready CSV and a little-endian binary (magic
``QSTR``) that is the ground truth for diffs.
"""

from __future__ import annotations

import csv
import struct
import time
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from qstrip.mesh import Grid, TimeMesh, x_weights, y_weights
from qstrip.model import (
    PhysicalModel,
    barrier_potential,
    barrier_slab,
    gaussian_packet,
    sample_coefficients,
)
from qstrip.splitting import SolverResult, SplittingSolver

_SNAP_MAGIC = b"QSTR"
_SNAP_VERSION = 1


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending key/line."""


@dataclass
class SolverConfig:
    """Complete description of one simulation."""

    X: float = 3.0
    Y: float = 2.8
    X0: float = 2.5
    strip: str = "semi-infinite"        # or "infinite"
    J: int = 300
    K: int = 32
    M: int = 150
    T: float = 0.027
    hbar: float = 1.0
    rho: float = 1.0
    B1: float = 2.0
    B2: float = 2.0
    barrier_a: float = 1.6
    barrier_b: float = 1.7
    barrier_c: float = 0.7
    barrier_d: float = 2.1
    barrier_Q: float = 0.0
    vtilde: str = "zero"                # or "barrier-slab"
    propagator: str = "cayley"
    k: float = 30.0
    alpha: float = 1.0 / 120.0
    x0: float = 1.0
    y0: float = 1.4
    out_dir: str = "out"
    snapshots: str = "auto"
    out_format: str = "csv"

    def validate(self) -> None:
        if self.strip not in ("semi-infinite", "infinite"):
            raise ConfigError(f"strip must be semi-infinite or infinite, got {self.strip!r}")
        if self.vtilde not in ("zero", "barrier-slab"):
            raise ConfigError(f"vtilde must be zero or barrier-slab, got {self.vtilde!r}")
        if self.propagator not in ("cayley", "exponential"):
            raise ConfigError(f"unknown propagator variant {self.propagator!r}")
        if self.out_format not in ("csv", "raw", "both"):
            raise ConfigError(f"unknown output format {self.out_format!r}")
        if min(self.X, self.Y, self.T, self.hbar, self.rho, self.B1, self.B2) <= 0:
            raise ConfigError("X, Y, T, hbar, rho, B1, B2 must be positive")
        if self.J < 4 or self.K < 2 or self.M < 1:
            raise ConfigError("need J >= 4, K >= 2, M >= 1")
        if self.barrier_Q != 0.0:
            if not (0.0 < self.barrier_a < self.barrier_b < self.X):
                raise ConfigError("barrier x-range must sit inside (0, X)")
            if not (0.0 <= self.barrier_c < self.barrier_d <= self.Y):
                raise ConfigError("barrier y-range must sit inside [0, Y]")
            if self.barrier_b > self.X0:
                raise ConfigError("barrier must not reach past X0")
        if not (0.0 < self.X0 < self.X):
            raise ConfigError("need 0 < X0 < X")
        if self.alpha <= 0:
            raise ConfigError("alpha must be positive")

    def snapshot_levels(self) -> list[int]:
        if self.snapshots == "auto":
            fracs = (0.3, 0.5, 0.7, 1.0)
            return sorted({max(1, round(f * self.M)) for f in fracs})
        if self.snapshots in ("none", ""):
            return []
        try:
            levels = [int(tok) for tok in self.snapshots.split(",")]
        except ValueError as exc:
            raise ConfigError(f"bad snapshot list {self.snapshots!r}") from exc
        bad = [m for m in levels if not 0 <= m <= self.M]
        if bad:
            raise ConfigError(f"snapshot levels out of range: {bad}")
        return sorted(set(levels))


_SCHEMA = {
    ("domain", "X"): ("X", float),
    ("domain", "Y"): ("Y", float),
    ("domain", "X0"): ("X0", float),
    ("domain", "strip"): ("strip", str),
    ("mesh", "J"): ("J", int),
    ("mesh", "K"): ("K", int),
    ("mesh", "M"): ("M", int),
    ("mesh", "T"): ("T", float),
    ("physics", "hbar"): ("hbar", float),
    ("physics", "rho"): ("rho", float),
    ("physics", "B1"): ("B1", float),
    ("physics", "B2"): ("B2", float),
    ("physics", "barrier_a"): ("barrier_a", float),
    ("physics", "barrier_b"): ("barrier_b", float),
    ("physics", "barrier_c"): ("barrier_c", float),
    ("physics", "barrier_d"): ("barrier_d", float),
    ("physics", "barrier_Q"): ("barrier_Q", float),
    ("physics", "vtilde"): ("vtilde", str),
    ("physics", "propagator"): ("propagator", str),
    ("packet", "k"): ("k", float),
    ("packet", "alpha"): ("alpha", float),
    ("packet", "x0"): ("x0", float),
    ("packet", "y0"): ("y0", float),
    ("output", "dir"): ("out_dir", str),
    ("output", "snapshots"): ("snapshots", str),
    ("output", "format"): ("out_format", str),
}


def parse_config_text(text: str, source: str = "<config>") -> SolverConfig:
    cfg = SolverConfig()
    section = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip().lower()
            if section not in {s for s, _ in _SCHEMA}:
                raise ConfigError(f"{source}:{lineno}: unknown section [{section}]")
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected key = value, got {raw!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if section is None:
            raise ConfigError(f"{source}:{lineno}: key outside any section")
        spec = _SCHEMA.get((section, key))
        if spec is None:
            raise ConfigError(f"{source}:{lineno}: unknown key {section}.{key}")
        attr, typ = spec
        try:
            setattr(cfg, attr, typ(value))
        except ValueError as exc:
            raise ConfigError(
                f"{source}:{lineno}: bad value for {section}.{key}: {value!r}"
            ) from exc
    cfg.validate()
    return cfg


def load_config(path, overrides: list[str] = ()) -> SolverConfig:
    """Read a config file and apply ``section.key=value`` overrides."""
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {p}")
    cfg = parse_config_text(p.read_text(), str(p))
    for item in overrides:
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise ConfigError(f"override must look like section.key=value: {item!r}")
        dotted, _, value = item.partition("=")
        section, _, key = dotted.strip().partition(".")
        spec = _SCHEMA.get((section.strip().lower(), key.strip()))
        if spec is None:
            raise ConfigError(f"unknown override key {dotted!r}")
        attr, typ = spec
        try:
            setattr(cfg, attr, typ(value.strip()))
        except ValueError as exc:
            raise ConfigError(f"bad override value {item!r}") from exc
    cfg.validate()
    return cfg


# -- builders ----------------------------------------------------------------


def build_grid(cfg: SolverConfig) -> Grid:
    return Grid.uniform(cfg.X, cfg.Y, cfg.J, cfg.K)


def build_model(cfg: SolverConfig) -> PhysicalModel:
    if cfg.barrier_Q != 0.0:
        V = barrier_potential(cfg.barrier_a, cfg.barrier_b, cfg.barrier_c,
                              cfg.barrier_d, cfg.barrier_Q)
    else:
        V = None
    if cfg.vtilde == "barrier-slab" and cfg.barrier_Q != 0.0:
        Vt = barrier_slab(cfg.barrier_a, cfg.barrier_b, cfg.barrier_Q)
    else:
        Vt = None
    return PhysicalModel.constant(
        hbar=cfg.hbar, rho=cfg.rho, B1=cfg.B1, B2=cfg.B2,
        V=V, V_tilde=Vt, V_inf=0.0, X0=cfg.X0,
    )


def build_solver(cfg: SolverConfig) -> SplittingSolver:
    grid = build_grid(cfg)
    tmesh = TimeMesh.uniform_mesh(cfg.T, cfg.M)
    coeffs = sample_coefficients(build_model(cfg), grid)
    left = "tbc" if cfg.strip == "infinite" else "dirichlet"
    return SplittingSolver(grid, tmesh, coeffs, left=left, right="tbc",
                           propagator_variant=cfg.propagator)


def initial_state(cfg: SolverConfig, grid: Grid):
    return gaussian_packet(grid, cfg.k, cfg.alpha, cfg.x0, cfg.y0)


def run_simulation(cfg: SolverConfig, *, snapshot_levels=None,
                   keep_trajectory: bool = False):
    solver = build_solver(cfg)
    levels = cfg.snapshot_levels() if snapshot_levels is None else snapshot_levels
    psi0 = initial_state(cfg, solver.grid)
    result = solver.run(psi0, snapshot_levels=levels, keep_trajectory=keep_trajectory)
    return result, solver


# -- error norms --------------------------------------------------------------


@dataclass(frozen=True)
class ErrorNorms:
    E_C: float
    E_L2: float
    E_C_rel: float | None
    E_L2_rel: float | None


def restriction_strides(grid: Grid, grid_ref: Grid) -> tuple[int, int]:
    sx, rx = divmod(grid_ref.J, grid.J)
    sy, ry = divmod(grid_ref.K, grid.K)
    if rx or ry or sx < 1 or sy < 1:
        raise ValueError("reference mesh nodes must contain the coarse nodes")
    if not (np.allclose(grid_ref.x.nodes[::sx], grid.x.nodes, rtol=1e-12, atol=1e-12)
            and np.allclose(grid_ref.y.nodes[::sy], grid.y.nodes, rtol=1e-12, atol=1e-12)):
        raise ValueError("meshes are not nested")
    return sx, sy


def error_norms(snapshots: dict[int, np.ndarray],
                ref_snapshots: dict[int, np.ndarray],
                grid: Grid, grid_ref: Grid,
                level_map: dict[int, int]) -> ErrorNorms:
    """Maximal-in-time C and weighted-L2 errors on joint nodes.

    ``level_map`` pairs a coarse level with the reference level at the same
    physical time.  Relative errors divide by the reference norm at the
    same level and are absent when that norm vanishes.
    """
    sx, sy = restriction_strides(grid, grid_ref)
    wx = x_weights(grid.x, "closed_both")
    wy = y_weights(grid.y)
    w2 = np.outer(wx, wy)
    E_C = E_L2 = 0.0
    E_C_rel: float | None = 0.0
    E_L2_rel: float | None = 0.0
    for m, m_ref in level_map.items():
        a = snapshots[m]
        b = ref_snapshots[m_ref][::sx, ::sy]
        d = np.abs(a - b)
        ec = float(d.max())
        el = float(np.sqrt(np.sum(w2 * d**2)))
        E_C = max(E_C, ec)
        E_L2 = max(E_L2, el)
        bc = float(np.abs(b).max())
        bl = float(np.sqrt(np.sum(w2 * np.abs(b) ** 2)))
        if bc == 0.0 or bl == 0.0:
            E_C_rel = None
            E_L2_rel = None
        else:
            if E_C_rel is not None:
                E_C_rel = max(E_C_rel, ec / bc)
            if E_L2_rel is not None:
                E_L2_rel = max(E_L2_rel, el / bl)
    return ErrorNorms(E_C, E_L2, E_C_rel, E_L2_rel)


# -- refinement studies --------------------------------------------------------


@dataclass
class ConvergenceRow:
    J: int
    K: int
    M: int
    E_C: float
    E_L2: float
    E_C_rel: float | None
    E_L2_rel: float | None
    runtime: float
    R_C: float | None = None
    R_L2: float | None = None
    R_time: float | None = None


@dataclass
class ConvergenceReport:
    axis: str
    rows: list[ConvergenceRow] = field(default_factory=list)

    def attach_ratios(self) -> None:
        for prev, cur in zip(self.rows, self.rows[1:]):
            cur.R_C = prev.E_C / cur.E_C if cur.E_C else None
            cur.R_L2 = prev.E_L2 / cur.E_L2 if cur.E_L2 else None
            cur.R_time = cur.runtime / prev.runtime if prev.runtime else None

    def to_text(self) -> str:
        head = (f"{'J':>6} {'K':>5} {'M':>6} {'E_C':>12} {'E_L2':>12} "
                f"{'E_C_rel':>12} {'E_L2_rel':>12} {'R_C':>7} {'R_L2':>7} "
                f"{'time[s]':>9} {'R_time':>7}")
        lines = [head]
        for r in self.rows:
            lines.append(
                f"{r.J:>6} {r.K:>5} {r.M:>6} {_fmt(r.E_C):>12} {_fmt(r.E_L2):>12} "
                f"{_fmt(r.E_C_rel):>12} {_fmt(r.E_L2_rel):>12} "
                f"{_fmt(r.R_C, 3):>7} {_fmt(r.R_L2, 3):>7} "
                f"{r.runtime:>9.3f} {_fmt(r.R_time, 3):>7}"
            )
        return "\n".join(lines)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["J", "K", "M", "E_C", "E_L2", "E_C_rel", "E_L2_rel",
                        "runtime_s", "R_C", "R_L2", "R_time"])
            for r in self.rows:
                w.writerow([r.J, r.K, r.M, _fmt(r.E_C), _fmt(r.E_L2),
                            _fmt(r.E_C_rel), _fmt(r.E_L2_rel), f"{r.runtime:.6g}",
                            _fmt(r.R_C, 3), _fmt(r.R_L2, 3), _fmt(r.R_time, 3)])


def _fmt(v, sig: int = 6) -> str:
    if v is None:
        return "-"
    return f"{v:.{sig}g}"


def _comparison_levels(M: int, n_compare: int) -> list[int]:
    if M % n_compare:
        raise ValueError(
            f"M = {M} must be divisible by the comparison count {n_compare} "
            "so that compared levels share physical times"
        )
    return [(M // n_compare) * i for i in range(1, n_compare + 1)]


def convergence_study(cfg: SolverConfig, axis: str, levels: list[int],
                      n_compare: int = 8, repeats: int = 1) -> ConvergenceReport:
    """Doubling study along one axis against the finest level as
    pseudo-exact.  All levels must divide evenly into the comparison
    schedule and nest into the finest mesh."""
    if axis not in ("J", "K", "M"):
        raise ValueError("axis must be one of J, K, M")
    if sorted(levels) != levels or len(levels) < 2:
        raise ValueError("levels must be ascending with at least two entries")
    for v in levels:
        if levels[-1] % v:
            raise ValueError("every level must divide the finest one")
    runs = []
    report = ConvergenceReport(axis=axis)
    for v in levels:
        c = replace(cfg, **{axis: v})
        c.validate()
        fracs = _comparison_levels(c.M, n_compare)
        best = np.inf
        for _ in range(max(1, repeats)):
            t0 = time.perf_counter()
            result, solver = run_simulation(c, snapshot_levels=fracs)
            best = min(best, time.perf_counter() - t0)
        runs.append((c, result, solver, best))
    cf, rf, sf, _ = runs[-1]
    for c, r, s, secs in runs[:-1]:
        level_map = {
            m: m * (cf.M // c.M) for m in _comparison_levels(c.M, n_compare)
        }
        err = error_norms(r.snapshots, rf.snapshots, s.grid, sf.grid, level_map)
        report.rows.append(ConvergenceRow(
            c.J, c.K, c.M, err.E_C, err.E_L2, err.E_C_rel, err.E_L2_rel, secs
        ))
    report.attach_ratios()
    return report


def vtilde_comparison(cfg: SolverConfig, n_compare: int = 8):
    """Errors of both auxiliary-potential choices against a common refined
    run, and the percent change from switching the split on."""
    if cfg.barrier_Q == 0.0:
        return {"P_C": 0.0, "P_L2": 0.0, "identical": True}
    fine = replace(cfg, J=2 * cfg.J, K=2 * cfg.K, M=2 * cfg.M, vtilde="zero")
    fracs_f = _comparison_levels(fine.M, n_compare)
    ref, ref_solver = run_simulation(fine, snapshot_levels=fracs_f)
    out = {}
    for name in ("zero", "barrier-slab"):
        c = replace(cfg, vtilde=name)
        fracs = _comparison_levels(c.M, n_compare)
        res, solver = run_simulation(c, snapshot_levels=fracs)
        level_map = {m: 2 * m for m in fracs}
        out[name] = error_norms(res.snapshots, ref.snapshots, solver.grid,
                                ref_solver.grid, level_map)
    ez, es = out["zero"], out["barrier-slab"]
    return {
        "zero": ez,
        "barrier-slab": es,
        "P_C": (ez.E_C / es.E_C - 1.0) * 100.0,
        "P_L2": (ez.E_L2 / es.E_L2 - 1.0) * 100.0,
        "identical": False,
    }


# -- snapshot export ------------------------------------------------------------


def export_snapshot(path, field_: np.ndarray, grid: Grid, M: int, m: int,
                    fmt: str = "csv") -> None:
    field_ = np.asarray(field_)
    if field_.shape != grid.shape:
        raise ValueError(f"field must have shape {grid.shape}")
    if fmt == "csv":
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["x", "y", "re", "im", "abs"])
            for j in range(grid.J + 1):
                xj = grid.x.nodes[j]
                for k in range(grid.K + 1):
                    z = field_[j, k]
                    w.writerow([f"{xj:.6g}", f"{grid.y.nodes[k]:.6g}",
                                f"{z.real:.6g}", f"{z.imag:.6g}", f"{abs(z):.6g}"])
    elif fmt == "raw":
        with open(path, "wb") as f:
            f.write(_SNAP_MAGIC)
            f.write(struct.pack("<I", _SNAP_VERSION))
            f.write(struct.pack("<4I", grid.J, grid.K, M, m))
            f.write(np.ascontiguousarray(field_, dtype="<c16").tobytes())
    else:
        raise ValueError(f"unknown snapshot format {fmt!r}")


def read_snapshot_raw(path):
    with open(path, "rb") as f:
        if f.read(4) != _SNAP_MAGIC:
            raise ValueError("not a raw snapshot (bad magic)")
        (version,) = struct.unpack("<I", f.read(4))
        if version != _SNAP_VERSION:
            raise ValueError(f"unsupported snapshot version {version}")
        J, K, M, m = struct.unpack("<4I", f.read(16))
        data = np.frombuffer(f.read(16 * (J + 1) * (K + 1)), dtype="<c16")
    return data.reshape(J + 1, K + 1).copy(), {"J": J, "K": K, "M": M, "m": m}


def write_outputs(cfg: SolverConfig, result: SolverResult, grid: Grid) -> list[Path]:
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    formats = {"csv": ("csv",), "raw": ("raw",), "both": ("csv", "raw")}[cfg.out_format]
    for m, snap in sorted(result.snapshots.items()):
        for fmt in formats:
            p = out / f"snapshot_m{m:06d}.{fmt if fmt == 'csv' else 'qstr'}"
            export_snapshot(p, snap, grid, cfg.M, m, fmt)
            written.append(p)
    trace = out / "trace.csv"
    with open(trace, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["m", "t", "mass", "step_seconds"])
        for m in range(result.M + 1):
            w.writerow([m, f"{result.times[m]:.6g}", f"{result.mass_trace[m]:.12g}",
                        f"{result.step_seconds[m]:.6g}"])
    written.append(trace)
    return written
