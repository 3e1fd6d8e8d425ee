"""Factor-analysis data model and likelihood evaluations.

The implied covariance ``Lambda Phi Lambda^T + diag(Psi)`` is never formed or
inverted densely inside the likelihood; log-determinants and traces go through
the m x m capacitance matrix so that p >> N problems stay cheap.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import linalg

LOG_2PI = float(np.log(2.0 * np.pi))


class DataError(ValueError):
    """Raised when a covariance/correlation matrix violates its invariants."""


@dataclass(frozen=True)
class SampleMoments:
    """Sample covariance ``S`` of ``n_obs`` observations on ``p`` variables."""

    S: np.ndarray
    n_obs: int
    labels: Optional[tuple] = None

    def __post_init__(self):
        S = np.array(self.S, dtype=float)
        if S.ndim != 2 or S.shape[0] != S.shape[1]:
            raise DataError(f"S must be square, got shape {S.shape}")
        scale = max(float(np.max(np.abs(S))), 1.0)
        if not np.allclose(S, S.T, rtol=0.0, atol=1e-10 * scale):
            i, j = np.unravel_index(np.argmax(np.abs(S - S.T)), S.shape)
            raise DataError(f"S is not symmetric at ({i + 1}, {j + 1})")
        S = 0.5 * (S + S.T)
        if np.any(np.diag(S) <= 0):
            i = int(np.argmin(np.diag(S)))
            raise DataError(f"diagonal entry {i + 1} of S is not positive")
        eig = np.linalg.eigvalsh(S)
        if eig[0] < -1e-8 * eig[-1]:
            raise DataError(f"S is not positive semidefinite (min eigenvalue {eig[0]:.3g})")
        if int(self.n_obs) < 1:
            raise DataError("n_obs must be a positive integer")
        S.setflags(write=False)
        object.__setattr__(self, "S", S)
        object.__setattr__(self, "n_obs", int(self.n_obs))
        if self.labels is not None:
            labels = tuple(str(x) for x in self.labels)
            if len(labels) != S.shape[0]:
                raise DataError(f"{len(labels)} labels for {S.shape[0]} variables")
            object.__setattr__(self, "labels", labels)

    @property
    def p(self) -> int:
        return self.S.shape[0]

    @classmethod
    def from_data(cls, X, labels=None, standardize: bool = False) -> "SampleMoments":
        """Build moments from raw observations (rows), divisor N."""
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[0] < 2:
            raise DataError("raw data needs at least two rows")
        Xc = X - X.mean(axis=0)
        S = Xc.T @ Xc / X.shape[0]
        if standardize:
            S = to_correlation(S)
        return cls(S, X.shape[0], labels)

    def correlation(self) -> "SampleMoments":
        return SampleMoments(to_correlation(self.S), self.n_obs, self.labels)


def to_correlation(S: np.ndarray) -> np.ndarray:
    d = np.sqrt(np.diag(S))
    R = S / np.outer(d, d)
    np.fill_diagonal(R, 1.0)
    return R


@dataclass(frozen=True)
class FactorSolution:
    """Loadings (p x m), unique variances (p,), factor correlation (m x m)."""

    Lambda: np.ndarray
    Psi: np.ndarray
    Phi: np.ndarray

    def __post_init__(self):
        L = np.array(self.Lambda, dtype=float, ndmin=2)
        psi = np.array(self.Psi, dtype=float).ravel()
        phi = np.array(self.Phi, dtype=float, ndmin=2)
        p, m = L.shape
        if psi.shape != (p,):
            raise ValueError(f"Psi must have length {p}")
        if phi.shape != (m, m):
            raise ValueError(f"Phi must be {m} x {m}")
        for a in (L, psi, phi):
            a.setflags(write=False)
        object.__setattr__(self, "Lambda", L)
        object.__setattr__(self, "Psi", psi)
        object.__setattr__(self, "Phi", phi)

    @property
    def p(self) -> int:
        return self.Lambda.shape[0]

    @property
    def m(self) -> int:
        return self.Lambda.shape[1]

    def check(self) -> None:
        """Raise ``ValueError`` unless the solution satisfies the model invariants."""
        if np.any(self.Psi <= 0):
            raise ValueError("unique variances must be positive")
        if not np.allclose(self.Phi, self.Phi.T, atol=1e-12):
            raise ValueError("Phi must be symmetric")
        if not np.allclose(np.diag(self.Phi), 1.0, atol=1e-10):
            raise ValueError("Phi must have unit diagonal")
        if np.linalg.eigvalsh(self.Phi)[0] <= 0:
            raise ValueError("Phi must be positive definite")

    def with_(self, **kw) -> "FactorSolution":
        args = dict(Lambda=self.Lambda, Psi=self.Psi, Phi=self.Phi)
        args.update(kw)
        return FactorSolution(**args)


@dataclass
class FitDiagnostics:
    loglik: float
    df: int
    p_star: int
    aic: float
    bic: float
    caic: float
    gfi: float
    agfi: float
    iterations: int = 0
    converged: bool = True
    objective: float = float("nan")
    trace: list = field(default_factory=list, repr=False)

    def as_dict(self, include_trace: bool = False) -> dict:
        out = {
            "loglik": self.loglik,
            "df": self.df,
            "p_star": self.p_star,
            "aic": self.aic,
            "bic": self.bic,
            "caic": self.caic,
            "gfi": self.gfi,
            "agfi": self.agfi,
            "iterations": self.iterations,
            "converged": self.converged,
            "objective": self.objective,
        }
        if include_trace:
            out["trace"] = list(self.trace)
        return out


class _Capacitance:
    """Woodbury pieces for Sigma = G G^T + diag(psi) with G = Lambda chol(Phi)."""

    def __init__(self, sol: FactorSolution):
        try:
            Lphi = linalg.cholesky(sol.Phi, lower=True)
        except linalg.LinAlgError as exc:
            raise np.linalg.LinAlgError("Phi is not positive definite") from exc
        G = sol.Lambda @ Lphi
        self.psi = sol.Psi
        self.W = G / sol.Psi[:, None]
        C = np.eye(sol.m) + G.T @ self.W
        self.cC = linalg.cho_factor(C, lower=True)
        self.logdet = float(np.sum(np.log(sol.Psi)) + 2.0 * np.sum(np.log(np.diag(self.cC[0]))))

    def trace_inv_times(self, S: np.ndarray) -> float:
        WS = self.W.T @ S
        return float(np.sum(np.diag(S) / self.psi) - np.sum(linalg.cho_solve(self.cC, WS @ self.W).diagonal()))

    def inv_times(self, S: np.ndarray) -> np.ndarray:
        return S / self.psi[:, None] - self.W @ linalg.cho_solve(self.cC, self.W.T @ S)


def implied_covariance(sol: FactorSolution) -> np.ndarray:
    Sigma = sol.Lambda @ sol.Phi @ sol.Lambda.T
    Sigma[np.diag_indices_from(Sigma)] += sol.Psi
    return 0.5 * (Sigma + Sigma.T)


def log_likelihood(sm: SampleMoments, sol: FactorSolution) -> float:
    """Gaussian log-likelihood of the factor model given sample moments."""
    if sol.p != sm.p:
        raise ValueError(f"solution has {sol.p} variables, data has {sm.p}")
    cap = _Capacitance(sol)
    return -0.5 * sm.n_obs * (sm.p * LOG_2PI + cap.logdet + cap.trace_inv_times(sm.S))


def penalty_total(Lambda: np.ndarray, pen) -> float:
    from .penalty import penalty_value

    return float(np.sum(penalty_value(Lambda, pen)))


def penalized_objective(sm: SampleMoments, sol: FactorSolution, pen, eta: float = 0.0) -> float:
    """Log-likelihood minus the loading penalty and the improper-solution term.

    ``loglik - N * sum rho P(|lambda_ij|) - (N/2) * eta * sum_i s_ii / psi_i``
    """
    if eta < 0:
        raise ValueError("eta must be nonnegative")
    value = log_likelihood(sm, sol) - sm.n_obs * penalty_total(sol.Lambda, pen)
    if eta:
        value -= 0.5 * sm.n_obs * eta * float(np.sum(np.diag(sm.S) / sol.Psi))
    return value


def gfi_agfi(sm: SampleMoments, sol: FactorSolution, df: int) -> tuple:
    """Goodness-of-fit index and its df-adjusted version (AGFI is not clamped)."""
    p = sm.p
    denom = p * (p + 1) - 2 * df
    if denom == 0:
        raise ZeroDivisionError("AGFI undefined: p(p+1) == 2 df")
    SiS = _Capacitance(sol).inv_times(sm.S)
    R = SiS - np.eye(p)
    num = float(np.sum(R * R.T))
    den = float(np.sum(SiS * SiS.T))
    gfi = 1.0 - num / den
    agfi = 1.0 - p * (p + 1) * (1.0 - gfi) / denom
    return gfi, agfi


def orthogonal(Lambda, Psi) -> FactorSolution:
    Lambda = np.atleast_2d(np.asarray(Lambda, dtype=float))
    return FactorSolution(Lambda, Psi, np.eye(Lambda.shape[1]))


def as_labels(labels: Optional[Sequence[str]], p: int) -> list:
    if labels is None:
        return [f"V{i + 1}" for i in range(p)]
    return list(labels)
