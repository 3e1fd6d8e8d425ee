"""Degrees of freedom, information criteria and fit indexes for one solution."""

import math

import numpy as np

from .model import FitDiagnostics, FactorSolution, SampleMoments, gfi_agfi, log_likelihood


def count_nonzero(Lambda) -> int:
    # thresholding yields exact zeros, so no epsilon
    return int(np.count_nonzero(np.asarray(Lambda) != 0.0))


def agfi_parameters(p: int, m: int) -> int:
    """Free parameters of an unrestricted m-factor model: loadings plus uniquenesses
    less the rotational indeterminacy."""
    return p * m + p - m * (m - 1) // 2


def information_criteria(sol: FactorSolution, loglik: float, sm: SampleMoments) -> FitDiagnostics:
    """AIC/BIC/CAIC with ``p* = df + m(m-1)/2 + p`` plus GFI/AGFI.

    ``df`` counts nonzero loadings; ``loglik`` is the unpenalized value at ``sol``.
    The AGFI adjustment uses the classical factor-model parameter count
    (see :func:`agfi_parameters`), not ``df``.
    """
    p, m = sol.Lambda.shape
    df = count_nonzero(sol.Lambda)
    p_star = df + m * (m - 1) // 2 + p
    logn = math.log(sm.n_obs)
    dev = -2.0 * loglik
    try:
        gfi, agfi = gfi_agfi(sm, sol, agfi_parameters(p, m))
    except ZeroDivisionError:
        gfi, agfi = gfi_agfi(sm, sol, 0)[0], float("nan")
    return FitDiagnostics(
        loglik=loglik,
        df=df,
        p_star=p_star,
        aic=dev + 2.0 * p_star,
        bic=dev + p_star * logn,
        caic=dev + p_star * (logn + 1.0),
        gfi=gfi,
        agfi=agfi,
    )


def diagnose(sm: SampleMoments, sol: FactorSolution) -> FitDiagnostics:
    return information_criteria(sol, log_likelihood(sm, sol), sm)
