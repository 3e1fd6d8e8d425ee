"""Reading data tables and writing path, solution and study artifacts.

Tables are delimited by commas or whitespace, may carry ``#`` comment lines
and an optional header row of variable names. A comment of the form
``# n_obs: 145`` records the sample size of a covariance or correlation file.

JSON output is deterministic: sorted keys, shortest round-trip floats, and
``null`` for non-finite values. Machine-readable CSV (path, trace) keeps full
precision; the study report rounds to six decimals for reading.
"""

from __future__ import annotations

import csv
import json
import math
import os
import re
from importlib import resources
from pathlib import Path
from typing import Optional

import numpy as np

from .model import DataError, FactorSolution, SampleMoments, as_labels

KINDS = {"raw": "raw", "cov": "cov", "covariance": "cov", "cor": "cor", "correlation": "cor"}
SYMMETRY_TOL = 1e-8
_N_OBS = re.compile(r"#\s*n_obs\s*[:=]\s*(\d+)")


def _split(line: str) -> list:
    if "," in line:
        return [c.strip() for c in line.split(",")]
    return line.split()


def _is_number(tok: str) -> bool:
    try:
        float(tok)
    except ValueError:
        return False
    return True


def read_table(path) -> tuple:
    """Parse a numeric table.

    Returns
    -------
    values : ndarray
    header : list of str or None
    n_obs : int or None
        Sample size recorded in a ``# n_obs:`` comment, if any.

    Raises
    ------
    DataError
        On ragged rows or non-numeric cells, naming the file line and column.
    """
    path = Path(path)
    if not path.is_file():
        raise DataError(f"{path}: no such file")
    header, rows, n_obs = None, [], None
    width = None
    with path.open() as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            if line.startswith("#"):
                hit = _N_OBS.match(line)
                if hit:
                    n_obs = int(hit.group(1))
                continue
            cells = _split(line)
            if header is None and not rows and not any(_is_number(c) for c in cells):
                header = cells
                width = len(cells)
                continue
            if width is None:
                width = len(cells)
            if len(cells) != width:
                raise DataError(f"{path}: line {lineno} has {len(cells)} fields, expected {width}")
            row = []
            for col, tok in enumerate(cells, start=1):
                try:
                    row.append(float(tok))
                except ValueError:
                    raise DataError(f"{path}: line {lineno}, column {col}: non-numeric value {tok!r}") from None
            rows.append(row)
    if not rows:
        raise DataError(f"{path}: no data rows")
    values = np.array(rows, dtype=float)
    if not np.all(np.isfinite(values)):
        r, c = np.argwhere(~np.isfinite(values))[0]
        raise DataError(f"{path}: data row {r + 1}, column {c + 1}: value is not finite")
    return values, header, n_obs


def _check_matrix(M: np.ndarray, kind: str, path) -> None:
    if M.shape[0] != M.shape[1]:
        raise DataError(f"{path}: a {kind} matrix must be square, got {M.shape[0]} x {M.shape[1]}")
    scale = max(1.0, float(np.max(np.abs(M))))
    gap = np.abs(M - M.T)
    if gap.max() > SYMMETRY_TOL * scale:
        i, j = np.unravel_index(np.argmax(gap), gap.shape)
        raise DataError(f"{path}: matrix is not symmetric at row {i + 1}, column {j + 1} "
                        f"({M[i, j]!r} vs {M[j, i]!r})")
    d = np.diag(M)
    bad = np.flatnonzero(d <= 0)
    if bad.size:
        raise DataError(f"{path}: diagonal entry at row {bad[0] + 1}, column {bad[0] + 1} is not positive")
    if kind == "cor":
        bad = np.flatnonzero(np.abs(d - 1.0) > SYMMETRY_TOL)
        if bad.size:
            raise DataError(f"{path}: correlation diagonal at row {bad[0] + 1} is {d[bad[0]]!r}, not 1")
    evals, evecs = np.linalg.eigh(0.5 * (M + M.T))
    if evals[0] < -1e-8 * max(evals[-1], 1.0):
        worst = int(np.argmax(np.abs(evecs[:, 0])))
        raise DataError(f"{path}: matrix is not positive semidefinite (eigenvalue {evals[0]:.3g}, "
                        f"largest weight on row/column {worst + 1})")


def load_data(path, kind: str = "raw", n_obs: Optional[int] = None, standardize: bool = False) -> SampleMoments:
    """Read a data file into :class:`SampleMoments`.

    ``kind`` is ``raw`` (observations in rows; covariance with divisor N,
    optionally standardized), ``cov`` or ``cor``. Matrix inputs need ``n_obs``
    either as an argument or from an ``# n_obs:`` comment in the file.
    """
    if kind not in KINDS:
        raise DataError(f"unknown input kind {kind!r}; choose raw, cov or cor")
    kind = KINDS[kind]
    values, header, recorded = read_table(path)
    if header is not None and len(header) != values.shape[1]:
        raise DataError(f"{path}: header has {len(header)} names for {values.shape[1]} columns")
    if kind == "raw":
        if n_obs is not None and n_obs != values.shape[0]:
            raise DataError(f"{path}: n_obs={n_obs} but the file has {values.shape[0]} rows")
        return SampleMoments.from_data(values, labels=header, standardize=standardize)
    n = n_obs if n_obs is not None else recorded
    if n is None:
        raise DataError(f"{path}: {kind} input needs n_obs (argument or '# n_obs:' comment)")
    if n < 2:
        raise DataError(f"n_obs must be at least 2, got {n}")
    _check_matrix(values, kind, path)
    S = 0.5 * (values + values.T)
    sm = SampleMoments(S, n, header)
    return sm.correlation() if standardize else sm


def harman_path() -> Path:
    return Path(str(resources.files("sparsefa") / "data" / "harman74.csv"))


def load_harman() -> SampleMoments:
    """Correlations among 24 psychological tests, 145 subjects, with test names."""
    return load_data(harman_path(), "cor")


# ---------------------------------------------------------------- encoding


def _finite(x):
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return x if math.isfinite(x) else None
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, np.bool_):
        return bool(x)
    if isinstance(x, dict):
        return {str(k): _finite(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_finite(v) for v in x]
    if isinstance(x, np.ndarray):
        return _finite(x.tolist())
    return x


def dumps(obj) -> str:
    """Deterministic JSON text: sorted keys, shortest round-trip floats, nulls for nan/inf."""
    return json.dumps(_finite(obj), sort_keys=True, indent=2, allow_nan=False) + "\n"


def _cell(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


PATH_FIELDS = ("gamma", "rho", "family", "df", "p_star", "loglik", "objective", "aic", "bic", "caic",
               "gfi", "agfi", "iterations", "converged")


def path_records(path) -> list:
    """One flat record per grid point, rows of the gamma grid first."""
    out = []
    for t, k, sol, d in path.points():
        pen = path.grid.penalty(t, k)
        rec = {"gamma": path.grid.gammas[t], "rho": path.grid.rhos[k], "family": pen.family}
        rec.update({f: getattr(d, f) for f in PATH_FIELDS[3:]})
        rec["t"], rec["k"] = t, k
        out.append(rec)
    return out


def path_json(path, meta: dict) -> str:
    return dumps({"meta": meta, "points": path_records(path)})


def path_csv(path) -> str:
    lines = [",".join(("t", "k") + PATH_FIELDS)]
    for rec in path_records(path):
        lines.append(",".join(_cell(rec[f]) for f in ("t", "k") + PATH_FIELDS))
    return "\n".join(lines) + "\n"


def trace_csv(path, labels) -> str:
    """Plot-ready table: one row per grid point, one column per loading."""
    p, m = path.solutions[0][0].Lambda.shape
    labels = as_labels(labels, p)
    names = [f"lambda[{labels[i]}][{j + 1}]" for i in range(p) for j in range(m)]
    lines = [",".join(["gamma", "rho", "log_rho"] + names)]
    for t, k, sol, _ in path.points():
        rho = path.grid.rhos[k]
        log_rho = math.log(rho) if rho > 0 else -math.inf
        cells = [path.grid.gammas[t], rho, log_rho] + list(sol.Lambda.ravel())
        lines.append(",".join(_cell(c) for c in cells))
    return "\n".join(lines) + "\n"


def solution_dict(sol: FactorSolution, labels, extra: Optional[dict] = None) -> dict:
    labels = as_labels(labels, sol.p)
    factors = [f"F{j + 1}" for j in range(sol.m)]
    out = {
        "variables": labels,
        "factors": factors,
        "Lambda": sol.Lambda,
        "Psi": sol.Psi,
        "Phi": sol.Phi,
    }
    out.update(extra or {})
    return out


def read_solution(path) -> tuple:
    """Load ``selected.json``; returns ``(FactorSolution, dict)``."""
    with open(path) as fh:
        data = json.load(fh)
    return FactorSolution(data["Lambda"], data["Psi"], data["Phi"]), data


REPORT_FIELDS = ("model", "n_obs", "estimator", "criterion", "mse", "mse_per_entry", "tpr", "tnr",
                 "reps", "failures", "skipped")


def report_csv(rows) -> str:
    """Human-facing study table: six decimals for rates and errors."""
    def fmt(v):
        if isinstance(v, float):
            return "nan" if math.isnan(v) else f"{v:.6f}"
        return str(v)

    lines = [",".join(REPORT_FIELDS)]
    for r in rows:
        lines.append(",".join(fmt(r[f]) for f in REPORT_FIELDS))
    return "\n".join(lines) + "\n"


def read_csv_records(path) -> list:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def write_atomic(files: dict, out_dir) -> list:
    """Write ``{name: text}`` into ``out_dir`` all-or-nothing.

    Everything is written to temporary names first and only renamed once all
    writes succeeded, so a failure leaves no partial artifacts behind.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    staged = []
    try:
        for name, text in files.items():
            tmp = out_dir / f".{name}.partial"
            staged.append((tmp, out_dir / name))
            tmp.write_text(text)
    except OSError:
        for tmp, _ in staged:
            tmp.unlink(missing_ok=True)
        raise
    for tmp, final in staged:
        os.replace(tmp, final)
    return [final for _, final in staged]
