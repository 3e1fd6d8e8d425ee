"""``sparsefa`` command line: fit a solution path or run a simulation study.

Exit codes: 0 success, 1 usage error, 2 data error, 3 solver failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Optional

from . import __version__
from .em import SolverError, SolverOptions
from .io import dumps, load_data, path_csv, path_json, report_csv, solution_dict, trace_csv, write_atomic
from .model import DataError
from .path import CRITERIA, DEFAULT_GAMMAS, PathGrid, rho_grid, select_model, solution_path
from .penalty import THRESHOLD_MODES
from .simulation import StudyConfig, run_study

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_SOLVER = 0, 1, 2, 3

log = logging.getLogger("sparsefa")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with status 2 on bad arguments; route them to exit 1
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


@dataclass(frozen=True)
class RunConfig:
    data: Path
    kind: str
    factors: int
    out: Path
    n_obs: Optional[int] = None
    penalty: str = "mcp"
    gammas: Optional[tuple] = None
    rho_count: int = 30
    criterion: str = "bic"
    select_gamma: Optional[float] = None
    eta: float = 0.001
    orthogonal: bool = False
    em_tol: float = 1e-5
    max_iter: int = 500
    threshold: str = "literal"
    standardize: bool = True
    seed: int = 0
    fmt: str = "json"
    threads: int = 1

    def __post_init__(self):
        if self.factors < 1:
            raise UsageError("--factors must be at least 1")
        if self.rho_count < 2:
            raise UsageError("--rho-count must be at least 2")
        if self.kind != "raw" and self.n_obs is not None and self.n_obs < 2:
            raise UsageError("--n-obs must be at least 2")


def _gamma_list(text: str) -> tuple:
    try:
        vals = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated list of numbers: {text!r}") from None
    if not vals:
        raise argparse.ArgumentTypeError("empty gamma grid")
    return tuple(vals)


def _grid(cfg: RunConfig, sm) -> PathGrid:
    if cfg.penalty == "lasso":
        gammas = (math.inf,)
    elif cfg.gammas is None:
        gammas = DEFAULT_GAMMAS[cfg.penalty]
    else:
        finite = sorted({g for g in cfg.gammas if math.isfinite(g)}, reverse=True)
        gammas = (math.inf,) + tuple(finite)
    try:
        return PathGrid(rho_grid(sm, cfg.factors, cfg.rho_count), gammas, cfg.penalty)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def run_fit(cfg: RunConfig) -> int:
    """Fit the path, select a model and write the artifacts (all or none)."""
    sm = load_data(cfg.data, cfg.kind, cfg.n_obs, cfg.standardize)
    if not 1 <= cfg.factors < sm.p:
        raise UsageError(f"--factors must be between 1 and {sm.p - 1} for {sm.p} variables")
    grid = _grid(cfg, sm)
    opts = SolverOptions(eta=cfg.eta, em_tol=cfg.em_tol, max_em_iter=cfg.max_iter,
                         orthogonal=cfg.orthogonal, seed=cfg.seed, threshold=cfg.threshold)
    path = solution_path(sm, cfg.factors, grid, opts)
    try:
        t, k = select_model(path, cfg.criterion, cfg.select_gamma)
    except KeyError as exc:
        raise UsageError(str(exc.args[0])) from None
    except ValueError as exc:
        raise SolverError(str(exc)) from None
    sol, diag = path.solutions[t][k], path.diagnostics[t][k]
    failed = sum(not d.converged for _, _, _, d in path.points())
    if failed:
        log.warning("%d of %d grid points did not converge", failed, grid.T * grid.K)
    if not diag.converged:
        raise SolverError(f"the selected point (gamma={grid.gammas[t]}, rho={grid.rhos[k]}) did not converge")
    meta = {
        "version": __version__, "n_obs": sm.n_obs, "p": sm.p, "m": cfg.factors, "penalty": grid.family,
        "orthogonal": cfg.orthogonal, "eta": cfg.eta, "criterion": cfg.criterion,
        "threshold": cfg.threshold, "seed": cfg.seed, "gammas": list(grid.gammas), "rhos": list(grid.rhos),
    }
    selected = solution_dict(sol, sm.labels, {
        "gamma": grid.gammas[t], "rho": grid.rhos[k], "t": t, "k": k, "criterion": cfg.criterion,
        "penalty": grid.family, "orthogonal": cfg.orthogonal, "n_obs": sm.n_obs,
        "diagnostics": diag.as_dict(),
    })
    files = {"path.json": path_json(path, meta)} if cfg.fmt == "json" else {"path.csv": path_csv(path)}
    files["selected.json"] = dumps(selected)
    files["trace.csv"] = trace_csv(path, sm.labels)
    for f in write_atomic(files, cfg.out):
        log.info("wrote %s", f)
    print(f"selected gamma={grid.gammas[t]:g} rho={grid.rhos[k]:.6g} df={diag.df} "
          f"{cfg.criterion}={getattr(diag, cfg.criterion):.6g}")
    return EXIT_OK


_STUDY_KEYS = {f.name for f in fields(StudyConfig)}


def load_study(path, reps=None, seed=None, threads=None) -> StudyConfig:
    """Read a JSON study file; command-line overrides win."""
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except FileNotFoundError:
        raise DataError(f"{path}: no such file") from None
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from None
    if not isinstance(raw, dict):
        raise DataError(f"{path}: the study file must hold a JSON object")
    unknown = sorted(set(raw) - _STUDY_KEYS)
    if unknown:
        raise DataError(f"{path}: unknown field(s) {', '.join(unknown)}")
    for key, val in (("reps", reps), ("seed", seed), ("threads", threads)):
        if val is not None:
            raw[key] = val
    for key in ("models", "n_obs", "estimators", "criteria"):
        if key in raw and not isinstance(raw[key], list):
            raise DataError(f"{path}: field {key} must be a list")
    try:
        return StudyConfig(**{k: tuple(v) if isinstance(v, list) else v for k, v in raw.items()})
    except (TypeError, ValueError, KeyError) as exc:
        raise DataError(f"{path}: {exc}") from None


def run_simulate(args) -> int:
    config = load_study(args.config, args.reps, args.seed, args.threads)
    report = run_study(config)
    write_atomic({"report.csv": report_csv(report.rows())}, args.out)
    print(f"{len(report.cells)} cells written to {Path(args.out) / 'report.csv'}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="sparsefa", description="Sparse factor analysis by penalized likelihood.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    f = sub.add_parser("fit", help="fit a solution path and select a model")
    f.add_argument("--data", required=True, type=Path)
    f.add_argument("--kind", choices=("raw", "cov", "cor"), default="raw")
    f.add_argument("--n-obs", type=int, help="sample size (cov/cor input without an n_obs comment)")
    f.add_argument("--factors", required=True, type=int)
    f.add_argument("--penalty", choices=("lasso", "mcp", "scad"), default="mcp")
    f.add_argument("--gamma-grid", type=_gamma_list, help="comma-separated gammas; the lasso row is added")
    f.add_argument("--rho-count", type=int, default=30)
    f.add_argument("--criterion", choices=CRITERIA, default="bic")
    f.add_argument("--select-gamma", type=float, help="select within this gamma row only")
    f.add_argument("--eta", type=float, default=0.001)
    f.add_argument("--orthogonal", action="store_true")
    f.add_argument("--em-tol", type=float, default=1e-5)
    f.add_argument("--max-iter", type=int, default=500)
    f.add_argument("--threshold", choices=sorted(THRESHOLD_MODES), default="literal",
                   help="coordinate update rule")
    f.add_argument("--standardize", action=argparse.BooleanOptionalAction, default=True,
                   help="fit the correlation matrix (default); --no-standardize keeps the covariance scale")
    f.add_argument("--seed", type=int, default=0)
    f.add_argument("--out", required=True, type=Path)
    f.add_argument("--format", choices=("json", "csv"), default="json", dest="fmt")
    f.add_argument("--threads", type=int, default=1, help="accepted for symmetry; the path is sequential")

    s = sub.add_parser("simulate", help="run a Monte Carlo study from a JSON config")
    s.add_argument("--config", required=True, type=Path)
    s.add_argument("--out", required=True, type=Path)
    s.add_argument("--reps", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--threads", type=int)
    return parser


def _fit_config(args) -> RunConfig:
    gammas = args.gamma_grid
    return RunConfig(
        data=args.data, kind=args.kind, factors=args.factors, out=args.out, n_obs=args.n_obs,
        penalty=args.penalty, gammas=gammas, rho_count=args.rho_count, criterion=args.criterion,
        select_gamma=args.select_gamma, eta=args.eta, orthogonal=args.orthogonal, em_tol=args.em_tol,
        max_iter=args.max_iter, threshold=args.threshold, standardize=args.standardize, seed=args.seed,
        fmt=args.fmt, threads=args.threads,
    )


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        if args.command == "fit":
            return run_fit(_fit_config(args))
        return run_simulate(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (SolverError, ArithmeticError) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except ValueError as exc:
        # invalid option values caught by the solver layer
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
