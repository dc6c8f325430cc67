"""Command-line experiment driver.

Verbs::

    stwave solve --config run.toml [--out DIR] [--seed N]
    stwave study conditioning|infsup|ode1d --config study.toml
    stwave compare cn --config compare.toml

Each run writes one CSV table plus a ``.meta.json`` echo of the resolved
configuration. Exit status: 0 success, 2 solver failure or non-convergence,
3 configuration error.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

from . import diagnostics
from .discretization import (
    WaveProblem,
    assemble_rhs,
    assemble_space_matrices,
    assemble_time_matrices,
    build_stiffness,
)
from .galerkin import galerkin_solve
from .mateq import dense_kron_solve
from .pcg import PcgConfig, SolveReport, backward_error, matrix_pcg
from .reference import (
    CnConfig,
    CnSolverError,
    cn_evaluator,
    crank_nicolson_solve,
    discrete_evaluator,
    l2_error_spacetime,
    radial_exact_evaluator,
    spectral_solve,
)

log = logging.getLogger("stwave")

EXIT_OK, EXIT_SOLVER, EXIT_CONFIG = 0, 2, 3

CASES = ("case1", "case2", "smooth", "ode-bvp", "ode-ivp")
SOLVERS = ("pcg-sylv", "pcg-kmk", "galerkin", "cn", "dense-oracle")
SOLVE_COLUMNS = ("refinement", "Nt", "Nh", "dof", "solver", "iters", "backward_err", "l2_err",
                 "seconds", "status")
STUDY_COLUMNS = ("refinement", "dof", "metric", "value")


class ConfigError(ValueError):
    """Invalid or inconsistent run configuration."""


@dataclass(frozen=True)
class RunConfig:
    """Resolved configuration of one experiment.

    ``refinements`` are temporal interval counts ``N_t``; the spatial mesh
    uses ``N_h = N_t`` intervals per axis.
    """

    case: str = "case1"
    dimension: int = 1
    refinements: tuple = (8, 16, 32)
    solver: str = "galerkin"
    tol: float = 1e-5
    max_iter: int = 500
    out: str = "results"
    seed: int = 0
    l2_depth: int | None = None
    oracle_cutoff: int = 128
    cn_tol: float = 1e-10
    kmk_orientation: str = "psd"
    flavor: str = "optimal"
    pairings: tuple = diagnostics.PAIRINGS
    infsup_levels: tuple = ((4, 4), (8, 8), (8, 16))

    def __post_init__(self):
        if self.case not in CASES:
            raise ConfigError(f"case must be one of {CASES}, got {self.case!r}")
        if self.solver not in SOLVERS:
            raise ConfigError(f"solver must be one of {SOLVERS}, got {self.solver!r}")
        if self.dimension not in (1, 2, 3):
            raise ConfigError("dimension must be 1, 2 or 3")
        refs = tuple(int(r) for r in self.refinements)
        if not refs or any(b <= a for a, b in zip(refs, refs[1:])):
            raise ConfigError("refinements must be a non-empty ascending list")
        if refs[0] < 3:
            raise ConfigError("refinements must be >= 3 (temporal basis size)")
        object.__setattr__(self, "refinements", refs)
        object.__setattr__(self, "pairings", tuple(self.pairings))
        object.__setattr__(self, "infsup_levels", tuple(tuple(p) for p in self.infsup_levels))
        if not (self.tol > 0 and self.cn_tol > 0):
            raise ConfigError("tolerances must be positive")
        if self.case.startswith("ode") and self.dimension != 1:
            raise ConfigError("ODE cases are one-dimensional")

    @property
    def is_wave(self) -> bool:
        return not self.case.startswith("ode")

    def problem(self) -> WaveProblem:
        if not self.is_wave:
            raise ConfigError(f"case {self.case!r} is not a wave problem")
        if self.case == "smooth":
            return WaveProblem.smooth(self.dimension)
        return getattr(WaveProblem, self.case)(self.dimension)

    @classmethod
    def from_mapping(cls, data: dict) -> RunConfig:
        known = set(cls.__dataclass_fields__)
        flat = {}
        for key, val in data.items():
            if isinstance(val, dict):
                flat.update(val)
            else:
                flat[key] = val
        unknown = set(flat) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        for key in ("refinements", "pairings", "infsup_levels"):
            if key in flat:
                flat[key] = tuple(flat[key])
        try:
            return cls(**flat)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def from_toml(cls, path) -> RunConfig:
        try:
            with open(path, "rb") as fh:
                data = tomllib.load(fh)
        except FileNotFoundError as exc:
            raise ConfigError(f"config file not found: {path}") from exc
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"malformed config {path}: {exc}") from exc
        return cls.from_mapping(data)


# ---------------------------------------------------------------------------
# CSV


def _fmt(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return str(bool(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return format(float(value), ".16e")
    return str(value)


class CsvWriter:
    """Row-at-a-time CSV writer that flushes so partial tables survive failures."""

    def __init__(self, path, columns: Sequence[str]):
        self.path = Path(path)
        self.columns = tuple(columns)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._fh = open(self.path, "w", newline="", encoding="utf-8")
        self._w = csv.writer(self._fh, lineterminator="\n")
        self._w.writerow(self.columns)
        self._fh.flush()

    def write(self, row: dict) -> None:
        self._w.writerow([_fmt(row.get(c, "")) for c in self.columns])
        self._fh.flush()

    def close(self) -> None:
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def emit_csv(rows, path) -> Path:
    """Write solver rows (dicts) or a ``StudyResult`` as a UTF-8 CSV table."""
    if isinstance(rows, diagnostics.StudyResult):
        columns = STUDY_COLUMNS
        rows = [dict(zip(STUDY_COLUMNS, r)) for r in rows.rows]
    else:
        columns = SOLVE_COLUMNS
    with CsvWriter(path, columns) as w:
        for row in rows:
            w.write(row)
    return Path(path)


def read_csv(path) -> list[dict]:
    """Parse a table written by ``emit_csv`` back into typed values."""
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            parsed = {}
            for key, val in row.items():
                try:
                    parsed[key] = int(val)
                except ValueError:
                    try:
                        parsed[key] = float(val)
                    except ValueError:
                        parsed[key] = val
            out.append(parsed)
    return out


def _write_meta(path: Path, cfg: RunConfig, verb: str) -> None:
    meta = {"verb": verb, "config": asdict(cfg)}
    path.parent.mkdir(parents=True, exist_ok=True)
    path.with_suffix(".meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# solving


def exact_evaluator(problem: WaveProblem, cutoff: int = 128):
    """Reference solution on grids: closed form where available, else sine series."""
    if problem.label == "smooth":
        om = problem.c * math.pi * math.sqrt(problem.dim)

        def ev(t, axes):
            t = np.atleast_1d(np.asarray(t, float))
            prof = np.ones(())
            for ax in axes:
                prof = np.multiply.outer(prof, np.sin(math.pi * np.asarray(ax)))
            return np.multiply.outer(np.cos(om * t), prof)

        return ev
    if problem.dim in (1, 3) and problem.u0_profile is not None and not problem.has_u1 \
            and not problem.forcing:
        return radial_exact_evaluator(problem)
    return spectral_solve(problem, cutoff=cutoff).evaluate_grid


def _default_depth(dim: int) -> int:
    return {1: 4, 2: 2, 3: 1}[dim]


@dataclass
class SolveOutcome:
    row: dict
    report: object = None
    ok: bool = True
    extra: dict = field(default_factory=dict)


def _space_time_solve(cfg: RunConfig, problem: WaveProblem, n: int) -> SolveOutcome:
    tm = assemble_time_matrices(problem.T, n)
    sm = assemble_space_matrices(problem, n)
    op = build_stiffness("optimal", tm, sm)
    G = assemble_rhs(problem, tm, sm)
    row = {"refinement": n, "Nt": tm.size, "Nh": sm.size, "dof": tm.size * sm.size,
           "solver": cfg.solver}
    if cfg.solver == "galerkin":
        rep = galerkin_solve(op, G, tol=cfg.tol, max_iter=cfg.max_iter)
        iters, seconds = rep.iterations, rep.seconds
    elif cfg.solver in ("pcg-sylv", "pcg-kmk"):
        pre = "sylvester" if cfg.solver == "pcg-sylv" else "kmk"
        pc = PcgConfig(tol=cfg.tol, max_iter=cfg.max_iter, preconditioner=pre,
                       kmk_orientation=cfg.kmk_orientation)
        rep = matrix_pcg(op, G, pc)
        iters, seconds = rep.iterations, rep.seconds
    else:  # dense-oracle
        t0 = time.perf_counter()
        U = dense_kron_solve(op, G)
        seconds = time.perf_counter() - t0
        Gd = G.full()
        be = backward_error(float(np.linalg.norm(Gd - op.apply(U))), float(np.linalg.norm(Gd)),
                            float(np.linalg.norm(U)), op.norm_scale())
        rep = SolveReport("dense-oracle", U, 1, True, [be], [], seconds, "direct")
        iters = 1
    row.update(iters=iters, backward_err=rep.backward_error, seconds=seconds)
    status = "ok" if rep.converged else "not-converged"
    row["status"] = status
    return SolveOutcome(row, rep, rep.converged, {"tm": tm, "sm": sm})


def _cn_solve(cfg: RunConfig, problem: WaveProblem, n: int) -> SolveOutcome:
    sm = assemble_space_matrices(problem, n)
    t0 = time.perf_counter()
    traj = crank_nicolson_solve(problem, sm, CnConfig(steps=n, tol=cfg.cn_tol, T=problem.T))
    seconds = time.perf_counter() - t0
    row = {"refinement": n, "Nt": n, "Nh": sm.size, "dof": n * sm.size, "solver": "cn",
           "iters": int(sum(traj.inner_iterations)), "backward_err": float("nan"),
           "seconds": seconds, "status": "ok"}
    return SolveOutcome(row, traj, True, {"sm": sm})


def solve_row(cfg: RunConfig, n: int, exact=None) -> SolveOutcome:
    """Solve one refinement level and attach the L2 error against ``exact``."""
    problem = cfg.problem()
    if cfg.solver == "cn":
        out = _cn_solve(cfg, problem, n)
        numeric = cn_evaluator(out.report, out.extra["sm"])
    else:
        out = _space_time_solve(cfg, problem, n)
        numeric = discrete_evaluator(out.report.U, out.extra["tm"], out.extra["sm"])
    if exact is not None:
        depth = cfg.l2_depth if cfg.l2_depth is not None else _default_depth(cfg.dimension)
        err, _ = l2_error_spacetime(numeric, exact, problem.T, cfg.dimension, n, n, depth=depth)
        out.row["l2_err"] = err
    else:
        out.row["l2_err"] = float("nan")
    return out


def _run_rows(cfg: RunConfig, path: Path, solvers: Sequence[str]) -> int:
    problem = cfg.problem()
    exact = exact_evaluator(problem, cfg.oracle_cutoff)
    status = EXIT_OK
    with CsvWriter(path, SOLVE_COLUMNS) as w:
        for n in cfg.refinements:
            for solver in solvers:
                sub = replace(cfg, solver=solver)
                try:
                    out = solve_row(sub, n, exact)
                except (ArithmeticError, np.linalg.LinAlgError, CnSolverError) as exc:
                    log.error("%s failed at refinement %d: %s", solver, n, exc)
                    w.write({"refinement": n, "solver": solver, "status": f"failed: {exc}"})
                    return EXIT_SOLVER
                w.write(out.row)
                log.info("%s n=%d iters=%s l2=%.3e", solver, n, out.row["iters"],
                         out.row["l2_err"])
                if not out.ok:
                    log.error("%s did not converge at refinement %d", solver, n)
                    status = EXIT_SOLVER
            if status != EXIT_OK:
                break
    return status


def run_solve(cfg: RunConfig, out_dir: Path) -> int:
    if not cfg.is_wave:
        raise ConfigError("ODE cases are run with 'study ode1d'")
    path = out_dir / f"solve_{cfg.case}_{cfg.dimension}d_{cfg.solver}.csv"
    _write_meta(path, cfg, "solve")
    return _run_rows(cfg, path, [cfg.solver])


def run_compare_cn(cfg: RunConfig, out_dir: Path) -> int:
    if not cfg.is_wave:
        raise ConfigError("the CN baseline needs a wave problem")
    st = cfg.solver if cfg.solver != "cn" else "galerkin"
    path = out_dir / f"compare_cn_{cfg.case}_{cfg.dimension}d.csv"
    _write_meta(path, cfg, "compare cn")
    return _run_rows(cfg, path, [st, "cn"])


# ---------------------------------------------------------------------------
# studies


def run_study(name: str, cfg: RunConfig, out_dir: Path) -> int:
    if name == "conditioning":
        res = diagnostics.condition_numbers(cfg.refinements, cfg.flavor, cfg.dimension)
        # power-iteration cross-check on the stiffness matrix
        for n in cfg.refinements:
            p = WaveProblem.smooth(cfg.dimension)
            A = build_stiffness(cfg.flavor, assemble_time_matrices(1.0, n),
                                assemble_space_matrices(p, n)).dense()
            if A.shape[0] <= 1500:
                res.add(n, A.shape[0], "kappa_B_power",
                        diagnostics.power_condition(A, seed=cfg.seed))
    elif name == "infsup":
        res = diagnostics.StudyResult(metadata={"dim": cfg.dimension})
        for k, (nt, nh) in enumerate(cfg.infsup_levels):
            beta = diagnostics.infsup_optimal(1.0, nt, nh, cfg.dimension, 0.2)
            res.add(k, nt * nh**cfg.dimension, f"beta[Nt={nt},Nh={nh}]", beta)
    elif name == "ode1d":
        if cfg.is_wave:
            raise ConfigError("study ode1d needs case ode-bvp or ode-ivp")
        kind = "BVP" if cfg.case == "ode-bvp" else "IVP"
        res = diagnostics.ode1d_study(kind, cfg.pairings, cfg.refinements)
    else:
        raise ConfigError(f"unknown study {name!r}")
    path = out_dir / f"study_{name}.csv"
    emit_csv(res, path)
    _write_meta(path, cfg, f"study {name}")
    for metric in res.metrics:
        vals = res.values(metric)
        slope = ""
        if len(vals) > 1 and np.all(vals > 0) and name != "infsup":
            slope = f" slope {res.slope(metric):+.2f}"
        log.info("%s: last %.4e%s", metric, vals[-1], slope)
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="TOML configuration file")
    common.add_argument("--out", default=None, help="output directory (overrides config)")
    common.add_argument("--seed", type=int, default=None, help="random seed (overrides config)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="stwave", description=__doc__.splitlines()[0])
    verbs = parser.add_subparsers(dest="verb", required=True)
    verbs.add_parser("solve", parents=[common], help="space-time or CN convergence run")
    study = verbs.add_parser("study", parents=[common], help="conditioning, inf-sup and ODE studies")
    study.add_argument("study", choices=("conditioning", "infsup", "ode1d"))
    compare = verbs.add_parser("compare", parents=[common], help="space-time vs Crank-Nicolson")
    compare.add_argument("baseline", choices=("cn",))
    return parser


def main(argv: Iterable[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(None if argv is None else list(argv))
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code not in (0, None) else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        cfg = RunConfig.from_toml(args.config)
        overrides = {}
        if args.out is not None:
            overrides["out"] = args.out
        if args.seed is not None:
            overrides["seed"] = args.seed
        cfg = replace(cfg, **overrides)
        out_dir = Path(cfg.out)
        if args.verb == "solve":
            return run_solve(cfg, out_dir)
        if args.verb == "study":
            return run_study(args.study, cfg, out_dir)
        return run_compare_cn(cfg, out_dir)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
