import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sparsefa.model import SampleMoments
from sparsefa.simulation import (
    StudyConfig, TrueModel, align_loadings, fit_penalized, generate_dataset, metrics, parse_estimator,
    replication_seed, run_study,
)


class TestTrueModel:
    @pytest.mark.parametrize("name,p,m", [("A", 6, 2), ("B", 9, 3), ("C", 100, 4), ("two-block", 6, 2)])
    def test_shapes_and_unit_variances(self, name, p, m):
        model = TrueModel.named(name)
        assert (model.p, model.m) == (p, m)
        assert np.allclose(np.diag(model.Sigma), 1.0)
        assert np.all(np.linalg.eigvalsh(model.Sigma) > 0)

    def test_model_a_values(self):
        model = TrueModel.named("A")
        assert np.allclose(model.Lambda[:3, 0], 0.9) and np.allclose(model.Lambda[3:, 1], 0.8)
        assert np.count_nonzero(model.Lambda) == 6
        assert np.allclose(model.Phi, [[1.0, 0.6], [0.6, 1.0]])
        assert np.allclose(model.Psi[:3], 1 - 0.81) and np.allclose(model.Psi[3:], 1 - 0.64)

    def test_model_c_blocks(self):
        L = TrueModel.named("C").Lambda
        for j, v in enumerate((0.9, 0.8, 0.7, 0.6)):
            assert np.allclose(L[25 * j:25 * (j + 1), j], v)
        assert np.count_nonzero(L) == 100

    def test_two_block_unique_variances(self):
        model = TrueModel.named("two-block")
        assert np.allclose(model.Psi, 0.19)

    def test_arrays_are_read_only(self):
        model = TrueModel.named("A")
        with pytest.raises(ValueError):
            model.Lambda[0, 0] = 0.0

    def test_unknown_name(self):
        with pytest.raises(ValueError, match="unknown model"):
            TrueModel.named("Z")

    def test_custom_entry(self):
        model = TrueModel.from_config({"id": "mini", "loadings": [[0.7], [0.6], [0.5]]})
        assert model.id == "mini" and model.p == 3
        assert np.allclose(np.diag(model.Sigma), 1.0)

    def test_nonpositive_unique_variance_rejected(self):
        with pytest.raises(ValueError, match="positive"):
            TrueModel("bad", np.array([[1.1], [0.5]]))


class TestGenerateDataset:
    def test_deterministic(self):
        model = TrueModel.named("A")
        a = generate_dataset(model, 50, 7).S
        b = generate_dataset(model, 50, 7).S
        assert np.array_equal(a, b)

    def test_streams_differ(self):
        model = TrueModel.named("A")
        base = generate_dataset(model, 50, 7).S
        assert not np.array_equal(base, generate_dataset(model, 50, 8).S)
        assert not np.array_equal(base, generate_dataset(model, 51, 7).S)
        assert not np.array_equal(base, generate_dataset(TrueModel.named("two-block"), 50, 7).S)

    def test_large_sample_matches_population(self):
        model = TrueModel.named("A")
        sm = generate_dataset(model, 10**6, 0)
        # standard error of a covariance entry is about 1e-3 here
        assert np.max(np.abs(sm.S - model.Sigma)) < 6e-3
        assert sm.n_obs == 10**6

    def test_rejects_tiny_n(self):
        with pytest.raises(ValueError):
            generate_dataset(TrueModel.named("A"), 1, 0)


class TestAlignment:
    def test_recovers_signed_permutation(self):
        true = TrueModel.named("B").Lambda
        est = true[:, [2, 0, 1]] * np.array([-1.0, 1.0, -1.0])
        aligned, _ = align_loadings(est, true)
        assert np.array_equal(aligned, true)

    def test_phi_follows_columns(self):
        true = TrueModel.named("A").Lambda
        est = -true[:, [1, 0]]
        phi = np.array([[1.0, 0.3], [0.3, 1.0]])
        aligned, phi_al = align_loadings(est, true, phi)
        assert np.array_equal(aligned, true)
        assert np.allclose(phi_al, phi)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            align_loadings(np.zeros((6, 2)), np.zeros((6, 3)))

    @settings(max_examples=60)
    @given(st.integers(0, 2**32 - 1))
    def test_aligned_never_worse_and_idempotent(self, seed):
        rng = np.random.default_rng(seed)
        true = TrueModel.named("B").Lambda
        est = rng.normal(scale=0.6, size=true.shape)
        aligned, _ = align_loadings(est, true)
        assert np.sum((aligned - true) ** 2) <= np.sum((est - true) ** 2) + 1e-12
        again, _ = align_loadings(aligned, true)
        assert np.array_equal(again, aligned)


class TestMetrics:
    def test_hand_example(self):
        true = np.array([[0.9, 0.0], [0.8, 0.0], [0.0, 0.7], [0.0, 0.6]])
        est = np.array([[1.0, 0.0], [0.8, 0.1], [0.0, 0.0], [0.0, 0.6]])
        sq, tpr, tnr = metrics(est, true)
        assert sq == pytest.approx(0.01 + 0.01 + 0.49)
        assert tpr == pytest.approx(3 / 4)
        assert tnr == pytest.approx(3 / 4)

    def test_exact_recovery(self):
        model = TrueModel.named("A")
        assert metrics(model.Lambda, model) == (0.0, 1.0, 1.0)


class TestConfig:
    def test_defaults_valid(self):
        cfg = StudyConfig()
        assert cfg.reps == 100 and cfg.threshold == "literal"

    @pytest.mark.parametrize("kwargs,field", [
        ({"estimators": ("bogus",)}, "estimators"),
        ({"criteria": ("dic",)}, "criteria"),
        ({"threshold": "soft"}, "threshold"),
        ({"reps": 0}, "reps"),
        ({"n_obs": (1,)}, "n_obs"),
    ])
    def test_invalid_fields_named(self, kwargs, field):
        with pytest.raises(ValueError, match=field):
            StudyConfig(**kwargs)

    def test_unknown_model(self):
        with pytest.raises(ValueError, match="unknown model"):
            StudyConfig(models=("Q",))

    def test_parse_estimator(self):
        assert parse_estimator("oblique-mcp") == ("penalized", True, "mcp")
        assert parse_estimator("orthogonal-lasso") == ("penalized", False, "lasso")
        assert parse_estimator("varimax")[0] == "rotation"

    def test_replication_seeds_distinct(self):
        seeds = {replication_seed(0, r) for r in range(200)}
        assert len(seeds) == 200


SMALL = dict(models=("A",), n_obs=(60,), estimators=("oblique-mcp", "varimax"), reps=2, rho_count=12)


class TestRunStudy:
    def test_single_replication_row(self):
        report = run_study(StudyConfig(models=("A",), n_obs=(60,), estimators=("orthogonal-lasso",),
                                       reps=1, rho_count=10))
        assert len(report.cells) == 1
        row = report.rows()[0]
        assert row["reps"] + row["failures"] == 1
        assert 0 <= row["tpr"] <= 1 and 0 <= row["tnr"] <= 1
        assert row["mse_per_entry"] == pytest.approx(row["mse"] / 12)

    def test_deterministic(self):
        a = run_study(StudyConfig(**SMALL)).rows()
        b = run_study(StudyConfig(**SMALL)).rows()
        assert a == b

    def test_workers_do_not_change_results(self):
        a = run_study(StudyConfig(**SMALL)).rows()
        b = run_study(StudyConfig(**SMALL, threads=2)).rows()
        assert a == b

    def test_rotation_skipped_when_n_not_above_p(self):
        report = run_study(StudyConfig(models=("B",), n_obs=(9,), estimators=("varimax",), reps=1))
        cell = report.cell("B", 9, "varimax", "-")
        assert cell.skipped and cell.reps == 0 and math.isnan(cell.mse)

    def test_cell_lookup(self):
        report = run_study(StudyConfig(**SMALL))
        assert report.cell("A", 60, "oblique-mcp", "bic").reps + report.cell("A", 60, "oblique-mcp").failures == 2
        with pytest.raises(KeyError):
            report.cell("A", 61, "oblique-mcp")


@pytest.mark.parametrize("name", ["A", "B"])
def test_population_mcp_recovers_zero_pattern(name):
    model = TrueModel.named(name)
    sm = SampleMoments(model.Sigma, 1000)
    sol = fit_penalized(sm, model.m, True, "mcp", ("bic",))["bic"]
    aligned, _ = align_loadings(sol.Lambda, model.Lambda)
    _, tpr, tnr = metrics(aligned, model)
    assert tpr == 1.0 and tnr == 1.0
    assert np.max(np.abs(aligned - model.Lambda)) < 0.05
