"""Monte Carlo studies: true models, seeded data generation, alignment, metrics and the study runner."""

from __future__ import annotations

import itertools
import logging
import math
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .em import SolverOptions
from .model import FactorSolution, SampleMoments
from .penalty import THRESHOLD_MODES
from .path import PathGrid, rho_grid, select_model, solution_path
from .rotation import RotationSpec, ml_fit, rotate

log = logging.getLogger(__name__)

STUDY_GAMMAS = (math.inf, 8.0, 5.5, 4.0, 3.2, 2.7, 2.4, 2.2, 2.1)
PENALIZED = ("lasso", "mcp", "scad")
ROTATION_ESTIMATORS = {
    "varimax": RotationSpec("varimax"),
    "promax": RotationSpec("promax"),
    "lasso_clf-orthogonal": RotationSpec("lasso_clf", oblique=False),
    "lasso_clf-oblique": RotationSpec("lasso_clf", oblique=True),
}
CRITERIA = ("aic", "bic", "caic")


def _blocks(p, sizes, values):
    L = np.zeros((p, len(sizes)))
    row = 0
    for j, (size, value) in enumerate(zip(sizes, values)):
        L[row:row + size, j] = value
        row += size
    return L


@dataclass(frozen=True)
class TrueModel:
    """Population loadings, factor correlation and unique variances.

    ``Phi`` defaults to 0.4 I + 0.6 11' and ``Psi`` to the values giving unit
    variances.
    """

    id: str
    Lambda: np.ndarray
    Phi: Optional[np.ndarray] = None
    Psi: Optional[np.ndarray] = None

    def __post_init__(self):
        L = np.array(self.Lambda, dtype=float)
        m = L.shape[1]
        Phi = 0.4 * np.eye(m) + 0.6 if self.Phi is None else np.array(self.Phi, dtype=float)
        if self.Psi is None:
            Psi = 1.0 - np.einsum("ij,jk,ik->i", L, Phi, L)
        else:
            Psi = np.broadcast_to(np.asarray(self.Psi, dtype=float), (L.shape[0],)).copy()
        if np.any(Psi <= 0):
            raise ValueError("unique variances must be positive")
        for a in (L, Phi, Psi):
            a.setflags(write=False)
        object.__setattr__(self, "Lambda", L)
        object.__setattr__(self, "Phi", Phi)
        object.__setattr__(self, "Psi", Psi)

    @property
    def p(self) -> int:
        return self.Lambda.shape[0]

    @property
    def m(self) -> int:
        return self.Lambda.shape[1]

    @property
    def Sigma(self) -> np.ndarray:
        S = self.Lambda @ self.Phi @ self.Lambda.T
        S[np.diag_indices_from(S)] += self.Psi
        return S

    @property
    def solution(self) -> FactorSolution:
        return FactorSolution(self.Lambda, self.Psi, self.Phi)

    @classmethod
    def named(cls, name: str) -> "TrueModel":
        key = name.upper()
        if key == "A":
            return cls("A", _blocks(6, (3, 3), (0.9, 0.8)))
        if key == "B":
            return cls("B", _blocks(9, (3, 3, 3), (0.9, 0.8, 0.7)))
        if key == "C":
            return cls("C", _blocks(100, (25,) * 4, (0.9, 0.8, 0.7, 0.6)))
        if key == "TWO-BLOCK":
            # two correlated factors of equal strength, unique variances 0.19
            return cls("two-block", _blocks(6, (3, 3), (0.9, 0.9)), np.array([[1.0, 0.6], [0.6, 1.0]]), 0.19)
        raise ValueError(f"unknown model {name!r}")

    @classmethod
    def from_config(cls, entry) -> "TrueModel":
        if isinstance(entry, str):
            return cls.named(entry)
        if not isinstance(entry, dict) or "loadings" not in entry:
            raise ValueError("a custom model needs a 'loadings' matrix")
        return cls(entry.get("id", "custom"), np.array(entry["loadings"], dtype=float),
                   entry.get("phi"), entry.get("psi"))


def _stream_key(model_id: str, n_obs: int, seed: int) -> list:
    return [zlib.crc32(model_id.encode()), int(n_obs), int(seed)]


def generate_dataset(model: TrueModel, n_obs: int, seed: int) -> SampleMoments:
    """Sample covariance (divisor N, centred at the sample mean) of ``n_obs`` draws.

    Standard normals come from a Philox stream keyed by (model, N, seed) and
    are coloured by the Cholesky factor of the population covariance.
    """
    if n_obs < 2:
        raise ValueError("n_obs must be at least 2")
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(_stream_key(model.id, n_obs, seed))))
    Z = rng.standard_normal((n_obs, model.p))
    X = Z @ np.linalg.cholesky(model.Sigma).T
    return SampleMoments.from_data(X)


def align_loadings(Lambda_hat, Lambda_true, Phi_hat=None):
    """Signed column permutation of ``Lambda_hat`` closest to ``Lambda_true``; Phi follows."""
    L = np.asarray(Lambda_hat, dtype=float)
    T = np.asarray(Lambda_true, dtype=float)
    if L.shape != T.shape:
        raise ValueError("shape mismatch")
    m = L.shape[1]
    best = None
    for perm in itertools.permutations(range(m)):
        P = L[:, perm]
        for signs in itertools.product((1.0, -1.0), repeat=m):
            d = float(np.sum((T - P * np.array(signs)) ** 2))
            if best is None or d < best[0] - 1e-15:
                best = (d, list(perm), np.array(signs))
    _, perm, signs = best
    aligned = L[:, perm] * signs
    if Phi_hat is None:
        return aligned, None
    Phi = np.asarray(Phi_hat, dtype=float)[np.ix_(perm, perm)] * np.outer(signs, signs)
    return aligned, Phi


def metrics(Lambda_aligned, model) -> tuple:
    """``(sum of squared errors, TPR, TNR)`` using exact zeros of the estimate."""
    true = model.Lambda if isinstance(model, TrueModel) else np.asarray(model, dtype=float)
    L = np.asarray(Lambda_aligned, dtype=float)
    sq_err = float(np.sum((true - L) ** 2))
    nz_true = true != 0
    nz_hat = L != 0
    tpr = float(np.sum(nz_true & nz_hat) / nz_true.sum()) if nz_true.any() else 1.0
    tnr = float(np.sum(~nz_true & ~nz_hat) / (~nz_true).sum()) if (~nz_true).any() else 1.0
    return sq_err, tpr, tnr


@dataclass(frozen=True)
class StudyConfig:
    models: tuple = ("A",)
    n_obs: tuple = (50, 100, 200)
    estimators: tuple = ("oblique-mcp", "orthogonal-lasso")
    criteria: tuple = ("bic",)
    reps: int = 100
    seed: int = 0
    gamma: float = 2.1
    rho_count: int = 30
    eta: float = 0.001
    threads: int = 1
    threshold: str = "literal"

    def __post_init__(self):
        if self.threshold not in THRESHOLD_MODES:
            raise ValueError(f"threshold: unknown coordinate rule {self.threshold!r}")
        models = tuple(self.models)
        for entry in models:
            TrueModel.from_config(entry)
        for name in self.estimators:
            parse_estimator(name)
        for c in self.criteria:
            if c.lower() not in CRITERIA:
                raise ValueError(f"criteria: unknown criterion {c!r}")
        if self.reps < 1:
            raise ValueError("reps must be positive")
        if any(int(n) < 2 for n in self.n_obs):
            raise ValueError("n_obs values must be at least 2")
        object.__setattr__(self, "models", models)
        object.__setattr__(self, "n_obs", tuple(int(n) for n in self.n_obs))
        object.__setattr__(self, "estimators", tuple(self.estimators))
        object.__setattr__(self, "criteria", tuple(c.lower() for c in self.criteria))


def parse_estimator(name: str) -> tuple:
    """``'oblique-mcp'`` -> ('penalized', oblique, family); rotation names -> ('rotation', spec)."""
    if name in ROTATION_ESTIMATORS:
        return ("rotation", ROTATION_ESTIMATORS[name])
    parts = name.split("-")
    if len(parts) == 2 and parts[0] in ("oblique", "orthogonal") and parts[1] in PENALIZED:
        return ("penalized", parts[0] == "oblique", parts[1])
    raise ValueError(f"estimators: unknown estimator {name!r}")


@dataclass
class CellResult:
    model: str
    n_obs: int
    estimator: str
    criterion: str
    sq_errs: list = field(default_factory=list)
    tprs: list = field(default_factory=list)
    tnrs: list = field(default_factory=list)
    failures: int = 0
    skipped: str = ""
    p: int = 0
    m: int = 0

    @property
    def reps(self) -> int:
        return len(self.sq_errs)

    @property
    def mse(self) -> float:
        # mean over replications of ||Lambda - Lambda_hat||^2
        return float(np.mean(self.sq_errs)) if self.sq_errs else math.nan

    @property
    def mse_per_entry(self) -> float:
        return self.mse / (self.p * self.m) if self.sq_errs else math.nan

    @property
    def tpr(self) -> float:
        return float(np.mean(self.tprs)) if self.tprs else math.nan

    @property
    def tnr(self) -> float:
        return float(np.mean(self.tnrs)) if self.tnrs else math.nan

    def row(self) -> dict:
        return {
            "model": self.model, "n_obs": self.n_obs, "estimator": self.estimator,
            "criterion": self.criterion, "mse": self.mse, "mse_per_entry": self.mse_per_entry,
            "tpr": self.tpr, "tnr": self.tnr, "reps": self.reps, "failures": self.failures,
            "skipped": self.skipped,
        }


@dataclass
class StudyReport:
    cells: list

    def rows(self) -> list:
        return [c.row() for c in self.cells]

    def cell(self, model: str, n_obs: int, estimator: str, criterion: str = "bic") -> CellResult:
        for c in self.cells:
            if (c.model, c.n_obs, c.estimator, c.criterion) == (model, n_obs, estimator, criterion):
                return c
        raise KeyError((model, n_obs, estimator, criterion))


def fit_penalized(sm: SampleMoments, m: int, oblique: bool, family: str, criteria, gamma: float = 2.1,
                  rho_count: int = 30, eta: float = 0.001, threshold: str = "literal") -> dict:
    """Selected loadings per criterion from one warm-started path."""
    gammas = (math.inf,) if family == "lasso" else tuple(g for g in STUDY_GAMMAS if g > gamma) + (gamma,)
    if family == "scad":
        gammas = tuple(g for g in gammas if math.isinf(g) or g > 2.0)
    grid = PathGrid(rho_grid(sm, m, rho_count), gammas, family)
    path = solution_path(sm, m, grid, SolverOptions(orthogonal=not oblique, eta=eta, threshold=threshold))
    out = {}
    for c in criteria:
        t, k = select_model(path, c, gamma=None if family == "lasso" else gamma)
        out[c] = path.solutions[t][k]
    return out


def _replicate(args):
    model_entry, n_obs, rep_seed, estimators, criteria, gamma, rho_count, eta, threshold = args
    model = TrueModel.from_config(model_entry)
    sm = generate_dataset(model, n_obs, rep_seed)
    results = {}
    mle = None
    for name in estimators:
        kind = parse_estimator(name)
        try:
            if kind[0] == "penalized":
                chosen = fit_penalized(sm, model.m, kind[1], kind[2], criteria, gamma, rho_count, eta,
                                       threshold)
                for c, sol in chosen.items():
                    aligned, _ = align_loadings(sol.Lambda, model.Lambda, sol.Phi)
                    results[(name, c)] = metrics(aligned, model)
            else:
                if n_obs <= model.p:
                    results[(name, "-")] = "skip"
                    continue
                if mle is None:
                    mle = ml_fit(sm, model.m)
                rot = rotate(mle.Lambda, kind[1])
                aligned, _ = align_loadings(rot.Lambda, model.Lambda, rot.Phi)
                results[(name, "-")] = metrics(aligned, model)
        except (ArithmeticError, ValueError, RuntimeError, np.linalg.LinAlgError) as exc:
            log.warning("replication %s/%s/%s failed: %s", model.id, n_obs, name, exc)
            for c in (criteria if kind[0] == "penalized" else ("-",)):
                results[(name, c)] = None
    return results


def replication_seed(base_seed: int, rep: int) -> int:
    return int(np.random.SeedSequence([int(base_seed), int(rep)]).generate_state(1)[0])


def run_study(config: StudyConfig) -> StudyReport:
    """Run every (model, N, estimator, criterion) cell for ``config.reps`` replications.

    Rotation baselines are skipped with a recorded reason when N <= p.
    Replications are independent; with ``threads > 1`` they run in worker
    processes and are aggregated in replication order, so reports do not
    depend on the worker count.
    """
    cells = []
    for entry in config.models:
        model = TrueModel.from_config(entry)
        for n_obs in config.n_obs:
            jobs = [(entry, n_obs, replication_seed(config.seed, r), config.estimators, config.criteria,
                     config.gamma, config.rho_count, config.eta, config.threshold) for r in range(config.reps)]
            if config.threads > 1:
                with ProcessPoolExecutor(max_workers=config.threads) as pool:
                    outcomes = list(pool.map(_replicate, jobs))
            else:
                outcomes = [_replicate(j) for j in jobs]
            for name in config.estimators:
                kind = parse_estimator(name)
                crits = config.criteria if kind[0] == "penalized" else ("-",)
                for c in crits:
                    cell = CellResult(model.id, n_obs, name, c, p=model.p, m=model.m)
                    for out in outcomes:
                        res = out.get((name, c))
                        if res == "skip":
                            cell.skipped = "maximum likelihood needs N > p"
                        elif res is None:
                            cell.failures += 1
                        else:
                            cell.sq_errs.append(res[0])
                            cell.tprs.append(res[1])
                            cell.tnrs.append(res[2])
                    cells.append(cell)
    return StudyReport(cells)
