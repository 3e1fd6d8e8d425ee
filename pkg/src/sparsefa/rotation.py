"""Rotation baselines (varimax, promax, L1 component loss) and the minimal-L1 square root of Phi.

All criteria are minimized by gradient projection: orthogonal rotations
``L = A T`` with ``T'T = I``, oblique rotations ``L = A T^{-T}`` with
``diag(T'T) = 1`` and factor correlation ``Phi = T'T``. Both leave the
implied covariance of the unrotated loadings unchanged.
"""

from __future__ import annotations

import itertools
from functools import partial
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.linalg import expm
from scipy.optimize import minimize

from .em import SolverOptions, fit
from .model import FactorSolution, SampleMoments
from .penalty import PenaltySpec

ROTATIONS = ("varimax", "promax", "lasso_clf")
SMOOTH_EPS = 1e-10
# smoothing schedule for the L1 criterion: each stage warm-starts the next
SMOOTH_SCHEDULE = (1e-3, 1e-6, SMOOTH_EPS)
# an iteration gaining less than STALL_TOL, or WINDOW iterations gaining less
# than WINDOW_TOL (relative), ends the search; at a kink of the L1 criterion
# the projected gradient never vanishes
STALL_TOL = 1e-13
WINDOW, WINDOW_TOL = 10, 1e-10
# extra random starts when no initial rotation is given
ROTATION_RESTARTS = 4


@dataclass(frozen=True)
class RotationSpec:
    criterion: str = "varimax"
    oblique: Optional[bool] = None
    promax_power: int = 4

    def __post_init__(self):
        crit = self.criterion.lower()
        if crit not in ROTATIONS:
            raise ValueError(f"unknown rotation {self.criterion!r}")
        oblique = self.oblique
        if oblique is None:
            oblique = crit != "varimax"
        if crit == "varimax" and oblique:
            raise ValueError("varimax is an orthogonal rotation")
        if crit == "promax" and not oblique:
            raise ValueError("promax is an oblique rotation")
        if self.promax_power < 2:
            raise ValueError("promax_power must be at least 2")
        object.__setattr__(self, "criterion", crit)
        object.__setattr__(self, "oblique", bool(oblique))


@dataclass
class RotationResult:
    Lambda: np.ndarray
    Phi: np.ndarray
    T: np.ndarray
    value: float
    converged: bool
    iterations: int

    def __iter__(self):
        # unpacks as (Lambda, Phi)
        return iter((self.Lambda, self.Phi))


def _varimax(L):
    L2 = L * L
    dev = L2 - L2.mean(axis=0)
    return -0.25 * float(np.sum(dev * dev)), -L * dev


def _l1(L, eps=SMOOTH_EPS):
    root = np.sqrt(L * L + eps)
    return float(root.sum()), L / root


_CRITERIA = {"varimax": _varimax, "lasso_clf": _l1}


def _stalled(history, f, ft):
    scale = max(1.0, abs(f))
    if f - ft <= STALL_TOL * scale:
        return True
    history.append(ft)
    return len(history) > WINDOW and history[-WINDOW - 1] - ft <= WINDOW_TOL * scale


def _gpa_orthogonal(A, crit, T, tol, max_iter):
    alpha = 1.0
    L = A @ T
    f, Gq = crit(L)
    history = [f]
    for it in range(1, max_iter + 1):
        G = A.T @ Gq
        M = T.T @ G
        Gp = G - T @ (0.5 * (M + M.T))
        s = float(np.linalg.norm(Gp))
        if s < tol:
            return T, f, True, it
        alpha *= 2.0
        for _ in range(30):
            U, _, Vt = np.linalg.svd(T - alpha * Gp)
            Tt = U @ Vt
            ft, Gt = crit(A @ Tt)
            if ft < f - 0.5 * s * s * alpha:
                break
            alpha *= 0.5
        stalled = _stalled(history, f, ft)
        T, f, Gq = Tt, ft, Gt
        if stalled:
            return T, f, True, it
    return T, f, False, max_iter


def _gpa_oblique(A, crit, T, tol, max_iter):
    alpha = 1.0
    Ti = np.linalg.inv(T)
    L = A @ Ti.T
    f, Gq = crit(L)
    history = [f]
    for it in range(1, max_iter + 1):
        G = -(L.T @ Gq @ Ti).T
        Gp = G - T * np.sum(T * G, axis=0)
        s = float(np.linalg.norm(Gp))
        if s < tol:
            return T, f, True, it
        alpha *= 2.0
        for _ in range(30):
            X = T - alpha * Gp
            Tt = X / np.sqrt(np.sum(X * X, axis=0))
            try:
                Tti = np.linalg.inv(Tt)
            except np.linalg.LinAlgError:
                alpha *= 0.5
                continue
            Lt = A @ Tti.T
            ft, Gt = crit(Lt)
            if ft < f - 0.5 * s * s * alpha:
                break
            alpha *= 0.5
        stalled = _stalled(history, f, ft)
        T, Ti, L, f, Gq = Tt, Tti, Lt, ft, Gt
        if stalled:
            return T, f, True, it
    return T, f, False, max_iter


def _promax(A, power, tol, max_iter, restarts):
    vm = rotate(A, RotationSpec("varimax"), tol=tol, max_iter=max_iter, restarts=restarts)
    T, conv, it = vm.T, vm.converged, vm.iterations
    V = A @ T
    target = V * np.abs(V) ** (power - 1)
    U, *_ = np.linalg.lstsq(V, target, rcond=None)
    d = np.diag(np.linalg.inv(U.T @ U))
    U = U * np.sqrt(d)
    L = V @ U
    Phi = np.linalg.inv(U.T @ U)
    # total transform from A to L, in the oblique convention L = A T^{-T}
    Tfull = np.linalg.inv(T @ U).T
    return RotationResult(L, Phi, Tfull, float(np.abs(L).sum()), conv, it)


def random_rotation(m: int, rng) -> np.ndarray:
    Q, R = np.linalg.qr(rng.standard_normal((m, m)))
    return Q * np.sign(np.diag(R))


def rotate(Lambda_mle, spec: RotationSpec, start=None, tol: float = 1e-6, max_iter: int = 1000,
           restarts: int = ROTATION_RESTARTS) -> RotationResult:
    """Rotate unrotated loadings by ``spec``.

    ``start`` fixes the initial T for a single run. Without it, varimax runs
    from the identity and ``restarts`` seeded random orthogonal starts and
    keeps the best value (symmetric loading patterns make the identity a
    stationary point the gradient cannot leave); the L1 criterion starts from
    the varimax solution. Non-convergence is reported in ``converged``; the
    last iterate is returned.
    """
    A = np.asarray(Lambda_mle, dtype=float)
    m = A.shape[1]
    if spec.criterion == "promax":
        return _promax(A, spec.promax_power, tol, max_iter, restarts)
    if start is None:
        if m == 1:
            return _rotate_from(A, spec, np.eye(1), tol, max_iter)
        if spec.criterion == "lasso_clf":
            # an orthogonal T is its own inverse transpose, so it seeds either convention
            vm = rotate(A, RotationSpec("varimax"), tol=tol, max_iter=max_iter, restarts=restarts)
            return _rotate_from(A, spec, vm.T, tol, max_iter)
        rng = np.random.default_rng(0)
        starts = [np.eye(m)] + [random_rotation(m, rng) for _ in range(restarts)]
        best = None
        for T in starts:
            run = _rotate_from(A, spec, T, tol, max_iter)
            # a later start must improve clearly, so ties keep the identity-start answer
            if best is None or run.value < best.value - 1e-10 * max(1.0, abs(best.value)):
                best = run
        return best
    return _rotate_from(A, spec, np.array(start, dtype=float), tol, max_iter)


def _rotate_from(A, spec, T, tol, max_iter):
    m = A.shape[1]
    gpa = _gpa_oblique if spec.oblique else _gpa_orthogonal
    if spec.oblique:
        T = T / np.sqrt(np.sum(T * T, axis=0))
    if spec.criterion == "varimax":
        stages = [_varimax]
    else:
        stages = [partial(_l1, eps=eps) for eps in SMOOTH_SCHEDULE]
    total = 0
    for crit in stages:
        T, f, conv, it = gpa(A, crit, T, tol, max_iter)
        total += it
    if spec.oblique:
        return RotationResult(A @ np.linalg.inv(T).T, T.T @ T, T, f, conv, total)
    return RotationResult(A @ T, np.eye(m), T, f, conv, total)


def canonicalize(Lambda, Phi=None):
    """Order columns by decreasing norm and make each column's largest-magnitude entry positive."""
    L = np.asarray(Lambda, dtype=float)
    order = np.argsort(-np.linalg.norm(L, axis=0), kind="stable")
    L = L[:, order]
    idx = np.argmax(np.abs(L), axis=0)
    signs = np.where(L[idx, np.arange(L.shape[1])] < 0, -1.0, 1.0)
    L = L * signs
    if Phi is None:
        return L
    P = np.asarray(Phi, dtype=float)[np.ix_(order, order)] * np.outer(signs, signs)
    return L, P


def _signed_permutations(m):
    for perm in itertools.permutations(range(m)):
        for signs in itertools.product((1.0, -1.0), repeat=m):
            yield list(perm), np.array(signs)


def _polish_l1(C, T):
    """Derivative-free refinement of T on the exact L1 objective over the orthogonal group."""
    m = C.shape[0]
    iu = np.triu_indices(m, 1)

    def rotation(x):
        K = np.zeros((m, m))
        K[iu] = x
        return T @ expm(K - K.T)

    def f(x):
        return float(np.abs(C @ rotation(x)).sum())

    res = minimize(f, np.zeros(len(iu[0])), method="Nelder-Mead",
                   options={"xatol": 1e-12, "fatol": 1e-14, "maxiter": 4000})
    return rotation(res.x)


def min_l1_G(Phi, restarts: int = 20, seed: int = 0) -> np.ndarray:
    """Minimize ``sum |g_ij|`` subject to ``G G' = Phi``.

    Searches ``G = C T`` over orthogonal T (C the lower Cholesky factor) from
    the identity plus ``restarts`` random starts: gradient projection on a
    smoothed L1 with shrinking smoothing, then a simplex polish on the exact
    L1. Among optima tied in value the one closest to C wins; columns are then
    signed/permuted for a nonnegative diagonal.
    """
    Phi = np.asarray(Phi, dtype=float)
    C = np.linalg.cholesky(Phi)
    m = C.shape[0]
    rng = np.random.default_rng(seed)
    starts = [np.eye(m)] + [random_rotation(m, rng) for _ in range(restarts)]
    spec = RotationSpec("lasso_clf", oblique=False)
    rough = []
    for T in starts:
        T = rotate(C, spec, start=T).T
        rough.append((float(np.abs(C @ T).sum()), T))
    lowest = min(v for v, _ in rough)
    found = []
    for v, T in rough:
        if v <= lowest + 1e-3:
            G = C @ _polish_l1(C, T)
            found.append((float(np.abs(G).sum()), G))
    best = min(v for v, _ in found)
    tied = [G for v, G in found if v <= best + 1e-7 * max(1.0, best)]

    def closest(G):
        # best signed column permutation of G toward C
        cand = (G[:, perm] * signs for perm, signs in _signed_permutations(m))
        return min(cand, key=lambda H: float(np.sum((H - C) ** 2)))

    G = min((closest(G) for G in tied), key=lambda H: float(np.sum((H - C) ** 2)))
    return G * np.where(np.diag(G) < 0, -1.0, 1.0)


def ml_fit(sm: SampleMoments, m: int, tol: float = 1e-8, max_iter: int = 20000, eta: float = 0.0) -> FactorSolution:
    """Unpenalized orthogonal maximum-likelihood fit by EM, the input to every rotation."""
    if sm.n_obs <= sm.p:
        raise ValueError("maximum likelihood estimates need n_obs > p")
    opts = SolverOptions(orthogonal=True, em_tol=tol, max_em_iter=max_iter, eta=eta)
    sol, _ = fit(sm, m, PenaltySpec("lasso", 0.0), opts)
    return sol
