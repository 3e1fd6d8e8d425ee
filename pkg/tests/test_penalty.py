import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.integrate import quad

from sparsefa import kernels
from sparsefa.penalty import (
    THRESHOLD_MODES,
    PenaltySpec,
    coordinate_step,
    penalty_value,
    scalar_threshold,
    scaled_threshold,
)

FAMILIES = ("lasso", "mcp", "scad")
finite = st.floats(-5, 5, allow_nan=False)
levels = st.floats(0.0, 2.0, allow_nan=False)


def objective(t, z, rho, spec, scale=1.0):
    return 0.5 * (t - z) ** 2 + scale * penalty_value(t, PenaltySpec(spec.family, rho, spec.gamma))


def grid_argmin(z, rho, spec, scale=1.0):
    """Two-stage brute force: coarse grid over a bracketing interval, then a fine local grid."""
    lo, hi = -abs(z) - 1.0, abs(z) + 1.0
    coarse = np.arange(lo, hi, 1e-3)
    t0 = coarse[np.argmin(objective(coarse, z, rho, spec, scale))]
    fine = np.arange(t0 - 2e-3, t0 + 2e-3, 1e-6)
    return fine[np.argmin(objective(fine, z, rho, spec, scale))]


class TestPenaltySpec:
    def test_mcp_needs_gamma_above_one(self):
        with pytest.raises(ValueError):
            PenaltySpec("mcp", 0.1, 1.0)

    def test_scad_needs_gamma_above_two(self):
        with pytest.raises(ValueError):
            PenaltySpec("scad", 0.1, 2.0)

    def test_negative_rho(self):
        with pytest.raises(ValueError):
            PenaltySpec("lasso", -0.1)

    @pytest.mark.parametrize("alias", ["mcplus", "MC+", "mcp"])
    def test_family_aliases(self, alias):
        assert PenaltySpec(alias, 0.1, 3.0).family == "mcp"

    def test_lasso_ignores_gamma(self):
        assert math.isinf(PenaltySpec("lasso", 0.1, 3.0).gamma)


class TestPenaltyValue:
    @pytest.mark.parametrize("fam,gamma", [("lasso", math.inf), ("mcp", 3.0), ("scad", 3.7)])
    def test_zero(self, fam, gamma):
        assert penalty_value(0.0, PenaltySpec(fam, 0.3, gamma)) == 0.0

    def test_mcp_plateau(self):
        assert penalty_value(1.0, PenaltySpec("mcp", 0.2, 2.0)) == pytest.approx(0.04, abs=1e-15)

    def test_lasso(self):
        assert penalty_value(-0.7, PenaltySpec("lasso", 0.2)) == pytest.approx(0.14)

    @given(t=st.floats(0, 3), rho=st.floats(0.01, 1), gamma=st.floats(1.05, 20))
    def test_mcp_matches_integral(self, t, rho, gamma):
        integral, _ = quad(lambda x: max(1.0 - x / (rho * gamma), 0.0), 0.0, t, points=[rho * gamma])
        assert penalty_value(t, PenaltySpec("mcp", rho, gamma)) == pytest.approx(rho * integral, abs=1e-10)

    @given(t=st.floats(0, 3), rho=st.floats(0.01, 1), gamma=st.floats(2.05, 20))
    def test_scad_matches_integral(self, t, rho, gamma):
        # SCAD derivative: rho on [0, rho], (gamma rho - x)_+ / (gamma - 1) beyond
        def d(x):
            return rho if x <= rho else max(gamma * rho - x, 0.0) / (gamma - 1.0)

        integral, _ = quad(d, 0.0, t, points=[rho, gamma * rho])
        assert penalty_value(t, PenaltySpec("scad", rho, gamma)) == pytest.approx(integral, abs=1e-10)

    @pytest.mark.parametrize("fam,gamma", [("lasso", math.inf), ("mcp", 2.5), ("scad", 3.7)])
    def test_even_and_nondecreasing(self, fam, gamma):
        spec = PenaltySpec(fam, 0.4, gamma)
        t = np.linspace(0, 4, 2001)
        v = penalty_value(t, spec)
        assert np.array_equal(v, penalty_value(-t, spec))
        assert np.all(np.diff(v) >= -1e-15)


class TestScalarThreshold:
    def test_mcp_shrink_branch(self):
        assert scalar_threshold(0.3, 0.2, PenaltySpec("mcp", 1.0, 2.0)) == pytest.approx(0.2)

    def test_mcp_identity_branch(self):
        assert scalar_threshold(0.5, 0.2, PenaltySpec("mcp", 1.0, 2.0)) == 0.5

    @pytest.mark.parametrize("fam,gamma", [("lasso", math.inf), ("mcp", 2.0), ("scad", 3.7)])
    def test_zero_input(self, fam, gamma):
        assert scalar_threshold(0.0, 0.3, PenaltySpec(fam, 1.0, gamma)) == 0.0

    def test_soft_threshold(self):
        assert scalar_threshold(-0.5, 0.2, PenaltySpec("lasso", 1.0)) == pytest.approx(-0.3)

    def test_examples_against_grid(self):
        spec = PenaltySpec("mcp", 1.0, 2.0)
        for z, expected in ((0.3, 0.2), (0.5, 0.5)):
            assert grid_argmin(z, 0.2, spec) == pytest.approx(expected, abs=1e-5)

    def test_rejects_negative_level(self):
        with pytest.raises(ValueError):
            scalar_threshold(0.3, -0.1, PenaltySpec("lasso", 1.0))

    @pytest.mark.parametrize("fam", FAMILIES)
    def test_grid_oracle(self, fam):
        rng = np.random.default_rng(7)
        for _ in range(150):
            z = rng.uniform(-3, 3)
            r = rng.uniform(0, 1.5)
            gamma = {"lasso": math.inf, "mcp": rng.uniform(1.05, 10), "scad": rng.uniform(2.05, 10)}[fam]
            spec = PenaltySpec(fam, 1.0, gamma)
            assert scalar_threshold(z, r, spec) == pytest.approx(grid_argmin(z, r, spec), abs=1e-4)

    @pytest.mark.parametrize("fam,gamma", [("lasso", math.inf), ("mcp", 1.7), ("scad", 3.7)])
    @given(z=finite, r=levels)
    def test_odd(self, fam, gamma, z, r):
        spec = PenaltySpec(fam, 1.0, gamma)
        assert scalar_threshold(-z, r, spec) == -scalar_threshold(z, r, spec)

    @pytest.mark.parametrize("fam,gamma", [("lasso", math.inf), ("mcp", 1.3), ("scad", 2.4)])
    @given(r=levels)
    def test_monotone(self, fam, gamma, r):
        spec = PenaltySpec(fam, 1.0, gamma)
        out = [scalar_threshold(z, r, spec) for z in np.linspace(-4, 4, 801)]
        assert np.all(np.diff(out) >= -1e-12)

    @given(z=st.floats(-10, 10), r=levels)
    def test_mcp_large_gamma_is_lasso(self, z, r):
        a = scalar_threshold(z, r, PenaltySpec("mcp", 1.0, 1e8))
        b = scalar_threshold(z, r, PenaltySpec("lasso", 1.0))
        assert a == pytest.approx(b, abs=1e-6)

    @given(z=finite, r=levels, gamma=st.floats(1.01, 50))
    def test_shrinks(self, z, r, gamma):
        for spec in (PenaltySpec("mcp", 1.0, gamma), PenaltySpec("lasso", 1.0)):
            assert abs(scalar_threshold(z, r, spec)) <= abs(z) + 1e-15

    @given(z=finite, r=levels)
    def test_lasso_equals_mcp_at_infinity(self, z, r):
        assert scalar_threshold(z, r, PenaltySpec("lasso", 1.0)) == scalar_threshold(
            z, r, PenaltySpec("mcp", 1.0, math.inf))


class TestCoordinateStep:
    """The solver's per-coordinate rule with weight ``scale = psi / a_jj``."""

    @pytest.mark.parametrize("fam,gamma", [("mcp", 2.1), ("mcp", 3.0), ("scad", 3.7)])
    def test_exact_mode_is_global_minimizer(self, fam, gamma):
        rng = np.random.default_rng(3)
        spec = PenaltySpec(fam, 1.0, gamma)
        for _ in range(120):
            z, rho, scale = rng.uniform(-2, 2), rng.uniform(0.01, 0.6), rng.uniform(0.1, 3.0)
            t = coordinate_step(z, 0.0, scale, rho, gamma, spec.code, THRESHOLD_MODES["exact"])
            grid = np.arange(-abs(z) - 1, abs(z) + 1, 2e-5)
            best = objective(grid, z, rho, spec, scale).min()
            assert objective(t, z, rho, spec, scale) <= best + 1e-9

    def test_literal_mode_is_threshold_at_scaled_level(self):
        spec = PenaltySpec("mcp", 0.2, 2.1)
        for z in np.linspace(-1, 1, 41):
            lit = coordinate_step(z, 0.0, 0.7, 0.2, 2.1, spec.code, THRESHOLD_MODES["literal"])
            assert lit == scalar_threshold(z, 0.7 * 0.2, spec)

    @pytest.mark.parametrize("fam,gamma", [("mcp", 2.1), ("scad", 3.7)])
    @given(z=finite, cur=finite, rho=st.floats(0.01, 1), scale=st.floats(0.1, 4))
    def test_guarded_never_worse_than_current(self, fam, gamma, z, cur, rho, scale):
        spec = PenaltySpec(fam, rho, gamma)
        t = coordinate_step(z, cur, scale, rho, gamma, spec.code, THRESHOLD_MODES["guarded"])
        slack = 1e-12 * (1 + abs(objective(cur, z, rho, spec, scale)))
        assert objective(t, z, rho, spec, scale) <= objective(cur, z, rho, spec, scale) + slack

    @given(z=finite, rho=st.floats(0, 1), scale=st.floats(0.05, 5))
    def test_modes_agree_for_lasso(self, z, rho, scale):
        vals = {coordinate_step(z, 0.3, scale, rho, math.inf, 0, mode) for mode in THRESHOLD_MODES.values()}
        assert len(vals) == 1

    def test_scale_one_modes_agree(self):
        for z in np.linspace(-2, 2, 81):
            out = {coordinate_step(z, 0.0, 1.0, 0.3, 2.5, 1, mode) for mode in THRESHOLD_MODES.values()}
            assert len(out) == 1

    @pytest.mark.skipif(kernels.BACKEND != "cython", reason="compiled kernels not built")
    @given(z=finite, cur=finite, rho=st.floats(0, 1), scale=st.floats(0.05, 5),
           code=st.sampled_from([0, 1, 2]), mode=st.sampled_from([0, 1, 2]))
    def test_compiled_matches_python(self, z, cur, rho, scale, code, mode):
        gamma = (math.inf, 2.3, 3.7)[code]
        compiled = kernels.get_backend("cython")
        assert compiled.coordinate_step(z, cur, scale, rho, gamma, code, mode) == pytest.approx(
            coordinate_step(z, cur, scale, rho, gamma, code, mode), abs=1e-14)
        assert compiled.scaled_threshold(z, scale, rho, gamma, code) == pytest.approx(
            scaled_threshold(z, scale, rho, gamma, code), abs=1e-14)
