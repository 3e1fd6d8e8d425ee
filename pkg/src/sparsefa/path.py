"""Warm-started solution surfaces over a (gamma, rho) grid and model selection.

Schedule: sequential. The lasso row (gamma = inf) runs from the largest rho
down. Each lasso fit is run from its right neighbour and from a cold
simple-structure start, and the higher penalized objective is kept; the
warm path alone tends to stay in the single general-factor basin that opens
first at large rho. Every following row gamma_t starts from the row above it
at the same rho. Fits are deterministic given their start, so the surface
does not depend on the order rows are run.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .criteria import information_criteria
from .em import SolverError, SolverOptions, e_step, fit, principal_start
from .model import FactorSolution, FitDiagnostics, SampleMoments, log_likelihood
from .penalty import PenaltySpec, canonical_family
from .rotation import RotationSpec, rotate

log = logging.getLogger(__name__)

DEFAULT_GAMMAS = {
    "lasso": (math.inf,),
    "mcp": (math.inf, 8.0, 5.5, 4.0, 3.2, 2.7, 2.4, 2.2, 2.1, 2.0),
    "scad": (math.inf, 20.0, 10.0, 6.0, 4.5, 3.7, 3.0, 2.5, 2.2, 2.1),
}

CRITERIA = ("aic", "bic", "caic", "gfi", "agfi")


@dataclass(frozen=True)
class PathGrid:
    """Decreasing ``gammas`` (first entry inf = lasso) and increasing ``rhos``."""

    rhos: tuple
    gammas: tuple = (math.inf,)
    family: str = "mcp"

    def __post_init__(self):
        rhos = tuple(float(r) for r in self.rhos)
        gammas = tuple(float(g) for g in self.gammas)
        fam = canonical_family(self.family)
        if not rhos or any(b <= a for a, b in zip(rhos, rhos[1:])):
            raise ValueError("rhos must be strictly increasing")
        if rhos[0] < 0:
            raise ValueError("rhos must be nonnegative")
        if not gammas or any(b >= a for a, b in zip(gammas, gammas[1:])):
            raise ValueError("gammas must be strictly decreasing")
        if not math.isinf(gammas[0]):
            raise ValueError("the first gamma must be inf (the lasso row)")
        floor = 2.0 if fam == "scad" else 1.0
        if fam == "lasso" and len(gammas) > 1:
            raise ValueError("the lasso family has a single gamma row")
        if gammas[-1] <= floor:
            raise ValueError(f"{fam} needs gamma > {floor}")
        object.__setattr__(self, "rhos", rhos)
        object.__setattr__(self, "gammas", gammas)
        object.__setattr__(self, "family", fam)

    @property
    def K(self) -> int:
        return len(self.rhos)

    @property
    def T(self) -> int:
        return len(self.gammas)

    def penalty(self, t: int, k: int) -> PenaltySpec:
        g = self.gammas[t]
        fam = "lasso" if math.isinf(g) else self.family
        return PenaltySpec(fam, self.rhos[k], g)

    def gamma_index(self, gamma: float) -> int:
        for t, g in enumerate(self.gammas):
            if g == gamma or (math.isinf(g) and math.isinf(gamma)) or math.isclose(g, gamma, rel_tol=1e-12):
                return t
        raise KeyError(f"gamma {gamma} not on the grid {self.gammas}")


@dataclass
class SolutionPath:
    grid: PathGrid
    m: int
    orthogonal: bool
    solutions: list  # [t][k] -> FactorSolution
    diagnostics: list  # [t][k] -> FitDiagnostics
    selected: dict = field(default_factory=dict)

    def points(self):
        for t in range(self.grid.T):
            for k in range(self.grid.K):
                yield t, k, self.solutions[t][k], self.diagnostics[t][k]

    def criterion_matrix(self, criterion: str) -> np.ndarray:
        criterion = criterion.lower()
        return np.array([[getattr(d, criterion) for d in row] for row in self.diagnostics], dtype=float)


def _is_uncorrelated(S: np.ndarray) -> bool:
    d = np.sqrt(np.diag(S))
    R = S / np.outer(d, d)
    off = R - np.diag(np.diag(R))
    return bool(np.max(np.abs(off)) <= 1e-12)


def rho_max(sm: SampleMoments, m: int) -> float:
    """Smallest rho at which the first coordinate sweep from the principal start is all zero.

    Equals ``max_ij |b_ij| / psi_i`` for the E-step at the principal start with
    Phi = I. Returns 1.0 when S has no off-diagonal correlation to explain.
    """
    if _is_uncorrelated(sm.S):
        log.warning("S has no off-diagonal correlation; using rho_max = 1")
        return 1.0
    start = principal_start(sm.S, m)
    B = e_step(sm, start).B
    value = float(np.max(np.abs(B) / start.Psi[:, None]))
    if not value > 0:
        raise ValueError("degenerate S: posterior moments vanish")
    return value


def rho_grid(sm: SampleMoments, m: int, K: int = 30, ratio: float = 1e-3) -> tuple:
    """``K`` log-spaced values from ``ratio * rho_max`` up to ``rho_max``."""
    if K < 2:
        raise ValueError("K must be at least 2")
    top = rho_max(sm, m)
    return tuple(np.exp(np.linspace(math.log(ratio * top), math.log(top), K)))


def default_grid(sm: SampleMoments, m: int, family: str = "mcp", K: int = 30,
                 gammas: Optional[Sequence[float]] = None) -> PathGrid:
    fam = canonical_family(family)
    return PathGrid(rho_grid(sm, m, K), tuple(gammas) if gammas is not None else DEFAULT_GAMMAS[fam], fam)


def revive_columns(sm: SampleMoments, sol: FactorSolution) -> FactorSolution:
    """Re-seed all-zero loading columns so EM can move them off the null fixed point.

    A dead column receives the leading eigenvectors of the scaled residual
    ``Psi^{-1/2} (S - Sigma) Psi^{-1/2}``; its Phi row/column is reset to identity.
    """
    dead = np.flatnonzero(~np.any(sol.Lambda != 0.0, axis=0))
    if dead.size == 0:
        return sol
    Sigma = sol.Lambda @ sol.Phi @ sol.Lambda.T
    Sigma[np.diag_indices_from(Sigma)] += sol.Psi
    r = 1.0 / np.sqrt(sol.Psi)
    E = (sm.S - Sigma) * np.outer(r, r)
    evals, evecs = np.linalg.eigh(0.5 * (E + E.T))
    order = np.argsort(evals)[::-1][: dead.size]
    L = np.array(sol.Lambda)
    for col, idx in zip(dead, order):
        v = evecs[:, idx]
        v = v * np.sign(v[np.argmax(np.abs(v))])
        L[:, col] = np.sqrt(sol.Psi) * v * math.sqrt(max(evals[idx], 1e-2))
    Phi = np.array(sol.Phi)
    Phi[dead, :] = 0.0
    Phi[:, dead] = 0.0
    Phi[dead, dead] = 1.0
    return FactorSolution(L, sol.Psi, Phi)


def cold_start(sm: SampleMoments, m: int, orthogonal: bool) -> FactorSolution:
    """Principal start rotated toward simple structure (varimax, or promax when oblique).

    Rotation leaves the implied covariance unchanged but gives the penalty a
    sparse-looking starting point.
    """
    base = principal_start(sm.S, m)
    if m == 1:
        return base
    rot = rotate(base.Lambda, RotationSpec("varimax" if orthogonal else "promax"))
    return FactorSolution(rot.Lambda, base.Psi, rot.Phi)


def _fit_point(sm, m, pen, opts, start):
    o = SolverOptions(**{**opts.__dict__, "init": start})
    try:
        return fit(sm, m, pen, o)
    except SolverError as exc:
        log.warning("fit failed at rho=%g gamma=%g: %s", pen.rho, pen.gamma, exc)
        sol = start if isinstance(start, FactorSolution) else principal_start(sm.S, m)
        diag = information_criteria(sol, log_likelihood(sm, sol), sm)
        diag.converged = False
        diag.iterations = 0
        return sol, diag


def _better(a: FitDiagnostics, b: FitDiagnostics) -> bool:
    if a.converged != b.converged:
        return a.converged
    return a.objective > b.objective


def solution_path(sm: SampleMoments, m: int, grid: PathGrid, opts: Optional[SolverOptions] = None) -> SolutionPath:
    """Compute every grid point with warm starts; failures are recorded, not raised."""
    opts = opts or SolverOptions()
    T, K = grid.T, grid.K
    sols = [[None] * K for _ in range(T)]
    diags = [[None] * K for _ in range(T)]
    cold = cold_start(sm, m, opts.orthogonal) if opts.init == "principal" else opts.init
    prev = None
    for k in range(K - 1, -1, -1):
        pen = grid.penalty(0, k)
        best = _fit_point(sm, m, pen, opts, cold)
        if prev is not None:
            warm = revive_columns(sm, prev)
            if opts.orthogonal:
                warm = warm.with_(Phi=np.eye(m))
            other = _fit_point(sm, m, pen, opts, warm)
            if _better(other[1], best[1]):
                best = other
        sols[0][k], diags[0][k] = best
        prev = best[0]
    for t in range(1, T):
        for k in range(K - 1, -1, -1):
            sols[t][k], diags[t][k] = _fit_point(sm, m, grid.penalty(t, k), opts, sols[t - 1][k])
    return SolutionPath(grid, m, opts.orthogonal, sols, diags)


def select_model(path: SolutionPath, criterion: str = "bic", gamma: Optional[float] = None) -> tuple:
    """Grid index ``(t, k)`` minimizing AIC/BIC/CAIC or maximizing GFI/AGFI.

    Ties go to the larger rho, then the larger gamma. ``gamma`` restricts the
    search to one row.
    """
    criterion = criterion.lower()
    if criterion not in CRITERIA:
        raise ValueError(f"unknown criterion {criterion!r}")
    values = path.criterion_matrix(criterion)
    if criterion in ("gfi", "agfi"):
        values = -values
    rows = range(path.grid.T) if gamma is None else [path.grid.gamma_index(gamma)]
    best = None
    for t in rows:
        for k in range(path.grid.K):
            v = values[t, k]
            if np.isnan(v):
                continue
            # larger k = larger rho; smaller t = larger gamma
            key = (v, -k, t)
            if best is None or key < best[0]:
                best = (key, (t, k))
    if best is None:
        raise ValueError("no grid point has a finite criterion value")
    path.selected[criterion if gamma is None else f"{criterion}@{gamma}"] = best[1]
    return best[1]
