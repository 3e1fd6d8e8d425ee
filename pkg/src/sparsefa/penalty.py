"""Lasso, MC+ and SCAD penalties and their univariate thresholding rules."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

FAMILIES = ("lasso", "mcp", "scad")
FAMILY_CODES = {"lasso": 0, "mcp": 1, "scad": 2}
_ALIASES = {"mcplus": "mcp", "mc+": "mcp", "lasso": "lasso", "mcp": "mcp", "scad": "scad"}

# MC+ with gamma this close to 1 degenerates to hard thresholding.
MIN_MCP_GAMMA = 1.0 + 1e-9


def canonical_family(name: str) -> str:
    try:
        return _ALIASES[name.lower()]
    except KeyError:
        raise ValueError(f"unknown penalty family {name!r}; expected one of {FAMILIES}") from None


@dataclass(frozen=True)
class PenaltySpec:
    """Penalty family, regularization level ``rho`` and concavity ``gamma``.

    ``gamma = inf`` with family ``mcp`` is the lasso; ``lasso`` ignores gamma.
    """

    family: str = "lasso"
    rho: float = 0.0
    gamma: float = math.inf

    def __post_init__(self):
        fam = canonical_family(self.family)
        object.__setattr__(self, "family", fam)
        rho = float(self.rho)
        gamma = float(self.gamma)
        if not rho >= 0:
            raise ValueError(f"rho must be nonnegative, got {self.rho}")
        if fam == "mcp" and not gamma >= MIN_MCP_GAMMA:
            raise ValueError(f"MC+ requires gamma > 1, got {gamma}")
        if fam == "scad" and not gamma > 2:
            raise ValueError(f"SCAD requires gamma > 2, got {gamma}")
        if fam == "lasso":
            gamma = math.inf
        object.__setattr__(self, "rho", rho)
        object.__setattr__(self, "gamma", gamma)

    @property
    def code(self) -> int:
        # MC+ at gamma = inf runs through the lasso branch
        if self.family == "mcp" and math.isinf(self.gamma):
            return 0
        return FAMILY_CODES[self.family]

    def with_rho(self, rho: float) -> "PenaltySpec":
        return PenaltySpec(self.family, rho, self.gamma)

    def with_gamma(self, gamma: float) -> "PenaltySpec":
        if self.family == "lasso" and not math.isinf(gamma):
            return PenaltySpec("mcp", self.rho, gamma)
        return PenaltySpec(self.family, self.rho, gamma)


def penalty_value(theta, spec: PenaltySpec):
    """``rho * P(|theta|)`` elementwise."""
    t = np.abs(np.asarray(theta, dtype=float))
    rho, gamma = spec.rho, spec.gamma
    if spec.code == 0 or rho == 0:
        out = rho * t
    elif spec.code == 1:
        out = np.where(t < rho * gamma, rho * (t - t * t / (2.0 * rho * gamma)), 0.5 * rho * rho * gamma)
    else:
        mid = (2.0 * gamma * rho * t - t * t - rho * rho) / (2.0 * (gamma - 1.0))
        out = np.where(t <= rho, rho * t, np.where(t <= gamma * rho, mid, 0.5 * rho * rho * (gamma + 1.0)))
    return out if out.ndim else float(out)


def _soft(z: float, r: float) -> float:
    if z > r:
        return z - r
    if z < -r:
        return z + r
    return 0.0


def _scad_piece_value(t: float, z: float, scale: float, rho: float, gamma: float) -> float:
    if t <= rho:
        pen = rho * t
    elif t <= gamma * rho:
        pen = (2.0 * gamma * rho * t - t * t - rho * rho) / (2.0 * (gamma - 1.0))
    else:
        pen = 0.5 * rho * rho * (gamma + 1.0)
    return 0.5 * (t - z) ** 2 + scale * pen


def scaled_threshold(z: float, scale: float, rho: float, gamma: float, code: int) -> float:
    """Global minimizer of ``0.5 (t - z)^2 + scale * rho P(|t|; rho, gamma)``.

    ``code`` is 0 (lasso), 1 (MC+) or 2 (SCAD). For MC+ the scaled problem is an
    MC+ problem at level ``scale * rho`` and concavity ``gamma / scale``; once that
    concavity drops to 1 or below the minimizer is a hard threshold. SCAD is
    solved by comparing the stationary point of each quadratic piece.
    """
    if z == 0.0 or rho == 0.0 or scale == 0.0:
        return z
    r = scale * rho
    if code == 0:
        return _soft(z, r)
    az = abs(z)
    sgn = 1.0 if z > 0 else -1.0
    if code == 1:
        g = gamma / scale
        if g > 1.0:
            if az > r * g:
                return z
            return _soft(z, r) / (1.0 - 1.0 / g)
        return z if az * az > r * r * g else 0.0
    # SCAD
    best_t, best_v = 0.0, 0.5 * az * az
    cands = [min(max(az - r, 0.0), rho), max(az, gamma * rho)]
    curv = 1.0 - scale / (gamma - 1.0)
    if curv > 0:
        t2 = (az * (gamma - 1.0) - scale * gamma * rho) / (gamma - 1.0 - scale)
        cands.append(min(max(t2, rho), gamma * rho))
    else:
        cands.extend((rho, gamma * rho))
    for t in cands:
        v = _scad_piece_value(t, az, scale, rho, gamma)
        if v < best_v - 1e-15 * max(1.0, best_v):
            best_t, best_v = t, v
    return sgn * best_t


THRESHOLD_MODES = {"exact": 0, "literal": 1, "guarded": 2}


def _penalty_scalar(t: float, rho: float, gamma: float, code: int) -> float:
    t = abs(t)
    if code == 0 or rho == 0.0:
        return rho * t
    if code == 1:
        if t < rho * gamma:
            return rho * (t - t * t / (2.0 * rho * gamma))
        return 0.5 * rho * rho * gamma
    if t <= rho:
        return rho * t
    if t <= gamma * rho:
        return (2.0 * gamma * rho * t - t * t - rho * rho) / (2.0 * (gamma - 1.0))
    return 0.5 * rho * rho * (gamma + 1.0)


def coordinate_step(z: float, current: float, scale: float, rho: float, gamma: float, code: int, mode: int) -> float:
    """One loading update with coordinate target ``z`` and weight ``scale = psi_i / a_jj``.

    The coordinate objective is ``(t - z)^2 / 2 + scale * rho * P(|t|)``.
    Mode 0 returns its minimizer. Mode 1 applies the threshold operator at
    level ``scale * rho`` with gamma unchanged, which is not a minimizer of
    that objective for MC+/SCAD. Mode 2 takes the mode-1 value unless it
    scores worse than ``current``, then falls back to mode 0, so each step
    still never increases the objective.
    """
    if mode == 0:
        return scaled_threshold(z, scale, rho, gamma, code)
    lit = scaled_threshold(z, 1.0, scale * rho, gamma, code)
    if mode == 1 or code == 0:
        return lit
    f_lit = 0.5 * (lit - z) ** 2 + scale * _penalty_scalar(lit, rho, gamma, code)
    f_cur = 0.5 * (current - z) ** 2 + scale * _penalty_scalar(current, rho, gamma, code)
    if f_lit <= f_cur + GUARD_SLACK * (abs(f_cur) + 1.0):
        return lit
    return scaled_threshold(z, scale, rho, gamma, code)


# rounding allowance when comparing the operator value against the current one
GUARD_SLACK = 1e-14


def scalar_threshold(theta_tilde: float, rho_star: float, spec: PenaltySpec) -> float:
    """Minimizer of ``0.5 (t - theta_tilde)^2 + rho_star P(|t|)`` with gamma taken from ``spec``.

    MC+: ``sgn(z)(|z| - rho*)_+ / (1 - 1/gamma)`` for ``|z| <= rho* gamma``, else z.
    """
    if rho_star < 0:
        raise ValueError("rho_star must be nonnegative")
    if spec.code == 1 and not spec.gamma > 1.0:
        raise ValueError("MC+ threshold needs gamma > 1 (minimizer not unique)")
    return scaled_threshold(float(theta_tilde), 1.0, float(rho_star), spec.gamma, spec.code)
