"""EM algorithm with coordinate descent for one (gamma, rho) pair.

Each iteration computes the posterior factor moments (E-step), then maximizes
the expected complete-data penalized log-likelihood block by block: loadings by
coordinate descent, unique variances in closed form, factor correlation by BFGS
over its off-diagonal entries.

With the "exact" or "guarded" coordinate rule no block update decreases the
expected complete-data objective, so the penalized objective never decreases.
The default "literal" rule thresholds at the rescaled level while keeping
gamma fixed; for MC+ and SCAD that is the exact step for a slightly different
concavity, and the objective can dip by small amounts between iterations.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np
from scipy import linalg

from . import kernels
from .criteria import information_criteria
from .model import FactorSolution, SampleMoments, log_likelihood, penalty_total
from .penalty import THRESHOLD_MODES, PenaltySpec

log = logging.getLogger(__name__)


class SolverError(RuntimeError):
    """The EM iteration produced an invalid parameter (nonpositive Psi, non-PD Phi)."""


@dataclass(frozen=True)
class EStepMoments:
    """Averaged posterior moments: ``A = E[FF^T]``, row i of ``B`` is ``b_i``."""

    A: np.ndarray
    B: np.ndarray


@dataclass
class SolverOptions:
    eta: float = 0.001
    em_tol: float = 1e-5
    cd_tol: float = 1e-6
    max_em_iter: int = 500
    max_cd_sweeps: int = 100
    orthogonal: bool = False
    init: Union[str, FactorSolution] = "principal"
    seed: Optional[int] = None
    # coordinate rule, see penalty.coordinate_step: "literal" keeps gamma at the
    # rescaled level, "exact" minimizes the coordinate objective, "guarded"
    # uses literal steps unless they would lower the objective
    threshold: str = "literal"
    phi_tol: float = 1e-6
    backend: Optional[str] = None

    def __post_init__(self):
        if self.eta < 0:
            raise ValueError("eta must be nonnegative")
        if not (self.em_tol > 0 and self.cd_tol > 0 and self.phi_tol > 0):
            raise ValueError("tolerances must be positive")
        if self.max_em_iter < 1 or self.max_cd_sweeps < 1:
            raise ValueError("iteration caps must be at least 1")
        if self.threshold not in THRESHOLD_MODES:
            raise ValueError(f"threshold must be one of {sorted(THRESHOLD_MODES)}")
        if isinstance(self.init, str) and self.init not in ("principal", "random"):
            raise ValueError(f"unknown init {self.init!r}")


def principal_start(S: np.ndarray, m: int) -> FactorSolution:
    """Top-m eigenpairs of S as loadings, residual diagonal (floored) as Psi."""
    evals, evecs = np.linalg.eigh(S)
    idx = np.argsort(evals)[::-1][:m]
    L = evecs[:, idx] * np.sqrt(np.maximum(evals[idx], 0.0))
    # fix eigenvector sign so the largest-magnitude entry of each column is positive
    flip = np.sign(L[np.argmax(np.abs(L), axis=0), np.arange(m)])
    flip[flip == 0] = 1.0
    L = L * flip
    d = np.diag(S)
    psi = np.maximum(d - np.sum(L * L, axis=1), 0.05 * d)
    return FactorSolution(L, psi, np.eye(m))


def random_start(S: np.ndarray, m: int, seed) -> FactorSolution:
    rng = np.random.default_rng(seed)
    d = np.diag(S)
    L = rng.normal(scale=0.5, size=(S.shape[0], m)) * np.sqrt(d)[:, None]
    return FactorSolution(L, 0.5 * d, np.eye(m))


def _posterior_cov(sol: FactorSolution) -> tuple:
    """Return ``(M^{-1}, Psi^{-1} Lambda)`` with ``M = Lambda^T Psi^{-1} Lambda + Phi^{-1}``.

    ``M^{-1} = L (I + L^T K L)^{-1} L^T`` with ``Phi = L L^T`` avoids inverting Phi.
    """
    Q = sol.Lambda / sol.Psi[:, None]
    K = sol.Lambda.T @ Q
    try:
        Lphi = linalg.cholesky(sol.Phi, lower=True)
    except linalg.LinAlgError as exc:
        raise SolverError("Phi is not positive definite") from exc
    inner = np.eye(sol.m) + Lphi.T @ K @ Lphi
    Minv = Lphi @ linalg.solve(inner, Lphi.T, assume_a="pos")
    return 0.5 * (Minv + Minv.T), Q


def e_step(sm: SampleMoments, old: FactorSolution) -> EStepMoments:
    """Posterior moments ``b_i = M^{-1} Lambda^T Psi^{-1} s_i`` and ``A``."""
    if old.p != sm.p:
        raise ValueError("dimension mismatch between data and solution")
    Minv, Q = _posterior_cov(old)
    QS = Q.T @ sm.S
    MQS = Minv @ QS
    B = MQS.T
    A = Minv + MQS @ Q @ Minv
    A = 0.5 * (A + A.T)
    return EStepMoments(A=A, B=np.ascontiguousarray(B))


def cd_update_row(lambda_row, b_row, A, psi_i: float, pen: PenaltySpec,
                  threshold: str = "literal") -> np.ndarray:
    """One coordinate-descent sweep (j = 1..m) over a single loading row."""
    mode = THRESHOLD_MODES[threshold]
    row = np.array(lambda_row, dtype=float, ndmin=2).copy()
    kernels.cd_sweep(row, np.array(b_row, dtype=float, ndmin=2), np.ascontiguousarray(A, dtype=float),
                     np.array([psi_i], dtype=float), pen.rho, pen.gamma, pen.code, mode, 0.0, 1)
    return row[0]


def psi_update(s_ii: float, lambda_row, b_row, A, eta: float = 0.0) -> float:
    """``s_ii (1 + eta) - 2 l^T b + l^T A l``; raises when not positive."""
    lam = np.asarray(lambda_row, dtype=float)
    value = s_ii * (1.0 + eta) - 2.0 * float(lam @ np.asarray(b_row)) + float(lam @ A @ lam)
    if not value > 0:
        raise SolverError(f"unique variance update is not positive ({value:.3g})")
    return value


def _phi_objective(x, A, iu, m):
    Phi = np.eye(m)
    Phi[iu] = x
    Phi.T[iu] = x
    try:
        c = linalg.cho_factor(Phi, lower=True, check_finite=False)
    except linalg.LinAlgError:
        return np.inf, None
    if np.any(np.diag(c[0]) <= 0):
        return np.inf, None
    Pinv_A = linalg.cho_solve(c, A, check_finite=False)
    f = 2.0 * np.sum(np.log(np.diag(c[0]))) + np.trace(Pinv_A)
    Pinv = linalg.cho_solve(c, np.eye(m), check_finite=False)
    G = Pinv - Pinv_A @ Pinv
    return f, 2.0 * G[iu]


def phi_objective(Phi, A) -> float:
    """``log|Phi| + tr(Phi^{-1} A)``; ``inf`` outside the PD cone."""
    m = A.shape[0]
    iu = np.triu_indices(m, 1)
    return _phi_objective(np.asarray(Phi)[iu], np.asarray(A), iu, m)[0]


def phi_update(A, start=None, tol: float = 1e-6, max_iter: int = 200) -> tuple:
    """Minimize ``log|Phi| + tr(Phi^{-1} A)`` over correlation matrices.

    BFGS on the off-diagonal entries with a backtracking line search that
    rejects steps leaving the PD cone. Returns ``(Phi, converged)``; on failure
    the best iterate is returned with ``converged = False``.
    """
    A = np.asarray(A, dtype=float)
    m = A.shape[0]
    if m == 1:
        return np.ones((1, 1)), True
    iu = np.triu_indices(m, 1)
    x = np.zeros(len(iu[0])) if start is None else np.asarray(start, dtype=float)[iu].copy()
    f, g = _phi_objective(x, A, iu, m)
    if not np.isfinite(f):
        x = np.zeros_like(x)
        f, g = _phi_objective(x, A, iu, m)
    H = np.eye(len(x))
    converged = False
    for _ in range(max_iter):
        if np.max(np.abs(g)) <= tol:
            converged = True
            break
        d = -H @ g
        slope = float(g @ d)
        if slope >= 0:
            H = np.eye(len(x))
            d = -g
            slope = -float(g @ g)
        step = 1.0
        for _ in range(60):
            xn = x + step * d
            fn, gn = _phi_objective(xn, A, iu, m)
            if fn <= f + 1e-4 * step * slope:
                break
            step *= 0.5
        else:
            break
        s = xn - x
        y = gn - g
        sy = float(s @ y)
        if sy > 1e-12:
            rho = 1.0 / sy
            V = np.eye(len(x)) - rho * np.outer(s, y)
            H = V @ H @ V.T + rho * np.outer(s, s)
        x, f, g = xn, fn, gn
    Phi = np.eye(m)
    Phi[iu] = x
    Phi.T[iu] = x
    return Phi, converged


def _initial(sm: SampleMoments, m: int, opts: SolverOptions) -> FactorSolution:
    init = opts.init
    if isinstance(init, FactorSolution):
        if init.Lambda.shape != (sm.p, m):
            raise ValueError("warm start has wrong shape")
        sol = init
    elif init == "random":
        sol = random_start(sm.S, m, opts.seed)
    else:
        sol = principal_start(sm.S, m)
    if opts.orthogonal:
        sol = sol.with_(Phi=np.eye(m))
    return sol


def objective_value(sm: SampleMoments, sol: FactorSolution, pen: PenaltySpec, eta: float) -> tuple:
    """Return ``(penalized objective incl. eta term, loglik)``."""
    ll = log_likelihood(sm, sol)
    obj = ll - sm.n_obs * penalty_total(sol.Lambda, pen)
    if eta:
        obj -= 0.5 * sm.n_obs * eta * float(np.sum(np.diag(sm.S) / sol.Psi))
    return obj, ll


def fit(sm: SampleMoments, m: int, pen: PenaltySpec, opts: Optional[SolverOptions] = None):
    """Maximize the penalized likelihood at fixed ``pen``.

    Returns ``(FactorSolution, FitDiagnostics)``. Non-convergence is reported in
    the diagnostics; an invalid update raises :class:`SolverError`.
    """
    opts = opts or SolverOptions()
    if not 1 <= m < sm.p:
        raise ValueError(f"need 1 <= m < p, got m={m}, p={sm.p}")
    backend = kernels.get_backend(opts.backend)
    mode = THRESHOLD_MODES[opts.threshold]
    sol = _initial(sm, m, opts)
    if hasattr(backend, "em_fit"):
        return _fit_compiled(backend, sm, sol, pen, opts, mode)
    return _fit_python(backend.cd_sweep, sm, sol, pen, opts, mode)


_STATUS = {
    -1: "unique variance update is not positive",
    -2: "Phi is not positive definite",
    -3: "implied covariance is not positive definite",
}


def _finish(sm, sol, ll, obj, it, converged, trace):
    diag = information_criteria(sol, ll, sm)
    diag.iterations = it
    diag.converged = converged
    diag.objective = obj
    diag.trace = trace
    return sol, diag


def _fit_compiled(backend, sm, sol, pen, opts, mode):
    status, Lam, psi, Phi, trace, ll, it, converged = backend.em_fit(
        sm.S, sol.Lambda, sol.Psi, sol.Phi, pen.rho, pen.gamma, pen.code, mode,
        opts.eta, float(sm.n_obs), opts.em_tol, opts.cd_tol, opts.max_em_iter,
        opts.max_cd_sweeps, opts.orthogonal, opts.phi_tol)
    if status != 0:
        raise SolverError(f"{_STATUS[status]} at iteration {it}")
    if not converged:
        log.debug("EM did not converge in %d iterations (rho=%g, gamma=%g)", it, pen.rho, pen.gamma)
    return _finish(sm, FactorSolution(Lam, psi, Phi), ll, trace[-1], it, converged, trace)


def _fit_python(cd, sm, sol, pen, opts, mode):
    s_diag = np.diag(sm.S)
    obj, ll = objective_value(sm, sol, pen, opts.eta)
    trace = [obj]
    converged = False
    it = 0
    for it in range(1, opts.max_em_iter + 1):
        est = e_step(sm, sol)
        Lam = np.array(sol.Lambda, dtype=float, order="C")
        cd(Lam, est.B, est.A, sol.Psi, pen.rho, pen.gamma, pen.code, mode, opts.cd_tol, opts.max_cd_sweeps)
        psi = s_diag * (1.0 + opts.eta) - 2.0 * np.sum(Lam * est.B, axis=1) + np.sum((Lam @ est.A) * Lam, axis=1)
        if not np.all(psi > 0):
            raise SolverError(f"unique variance update is not positive at iteration {it}")
        if opts.orthogonal:
            Phi = sol.Phi
        else:
            Phi, _ = phi_update(est.A, start=sol.Phi, tol=opts.phi_tol)
        sol = FactorSolution(Lam, psi, Phi)
        new_obj, ll = objective_value(sm, sol, pen, opts.eta)
        trace.append(new_obj)
        if abs(new_obj - obj) <= opts.em_tol * abs(obj):
            obj = new_obj
            converged = True
            break
        obj = new_obj
    if not converged:
        log.debug("EM did not converge in %d iterations (rho=%g, gamma=%g)", it, pen.rho, pen.gamma)
    return _finish(sm, sol, ll, obj, it, converged, trace)
