import json
import math

import numpy as np
import pytest

from sparsefa.io import dumps, load_data, load_harman, read_table, report_csv, write_atomic
from sparsefa.model import DataError


def _write(tmp_path, name, text):
    f = tmp_path / name
    f.write_text(text)
    return f


class TestLoadData:
    def test_identity_correlation(self, tmp_path):
        f = _write(tmp_path, "eye.csv", "1,0,0\n0,1,0\n0,0,1\n")
        sm = load_data(f, "cor", n_obs=100)
        assert np.array_equal(sm.S, np.eye(3))
        assert sm.n_obs == 100

    def test_raw_covariance_by_hand(self, tmp_path):
        f = _write(tmp_path, "raw.csv", "1,2\n2,4\n3,3\n4,8\n5,8\n")
        sm = load_data(f, "raw")
        # means 3 and 5; deviations (-2,-1,0,1,2) and (-3,-1,-2,3,3); divisor 5
        assert np.allclose(sm.S, [[10 / 5, 16 / 5], [16 / 5, 32 / 5]])
        assert sm.n_obs == 5

    def test_raw_standardized(self, tmp_path):
        f = _write(tmp_path, "raw.csv", "1,2\n2,4\n3,3\n4,8\n5,8\n")
        sm = load_data(f, "raw", standardize=True)
        assert np.allclose(np.diag(sm.S), 1.0)
        assert sm.S[0, 1] == pytest.approx(16 / math.sqrt(10 * 32))

    def test_whitespace_header_and_comments(self, tmp_path):
        f = _write(tmp_path, "cov.txt", "# a comment\n# n_obs: 40\nx y\n2.0 0.5\n\n0.5 1.0\n")
        sm = load_data(f, "cov")
        assert sm.n_obs == 40 and list(sm.labels) == ["x", "y"]
        assert np.allclose(sm.S, [[2.0, 0.5], [0.5, 1.0]])

    def test_argument_overrides_recorded_n(self, tmp_path):
        f = _write(tmp_path, "cov.csv", "# n_obs: 40\n1,0\n0,1\n")
        assert load_data(f, "cov", n_obs=90).n_obs == 90

    @pytest.mark.parametrize("text,kind,match", [
        ("1,2\n3,x\n", "raw", "line 2, column 2"),
        ("1,2,3\n4,5\n", "raw", "line 2 has 2 fields"),
        ("# n_obs: 10\n1,0.5\n0.4,1\n", "cor", "not symmetric at row"),
        ("# n_obs: 10\n1,2\n2,1\n", "cor", "not positive semidefinite"),
        ("# n_obs: 10\n2,0\n0,1\n", "cor", "not 1"),
        ("# n_obs: 10\n1,0\n0,-1\n", "cov", "not positive"),
        ("# n_obs: 10\n1,0,0\n0,1,0\n", "cov", "square"),
        ("1,0\n0,1\n", "cov", "needs n_obs"),
        ("# only comments\n", "raw", "no data rows"),
    ])
    def test_rejections(self, tmp_path, text, kind, match):
        f = _write(tmp_path, "bad.csv", text)
        with pytest.raises(DataError, match=match):
            load_data(f, kind)

    def test_missing_file(self, tmp_path):
        with pytest.raises(DataError, match="no such file"):
            load_data(tmp_path / "nope.csv")

    def test_unknown_kind(self, tmp_path):
        f = _write(tmp_path, "a.csv", "1\n")
        with pytest.raises(DataError, match="unknown input kind"):
            load_data(f, "tensor")

    def test_raw_n_mismatch(self, tmp_path):
        f = _write(tmp_path, "raw.csv", "1,2\n2,4\n3,3\n")
        with pytest.raises(DataError, match="n_obs=5"):
            load_data(f, "raw", n_obs=5)

    def test_read_table_header(self, tmp_path):
        f = _write(tmp_path, "t.csv", "a,b\n1,2\n")
        values, header, n = read_table(f)
        assert header == ["a", "b"] and n is None and values.tolist() == [[1.0, 2.0]]


class TestHarman:
    def test_fixture(self):
        sm = load_harman()
        assert sm.S.shape == (24, 24) and sm.n_obs == 145
        assert np.allclose(np.diag(sm.S), 1.0)
        assert np.allclose(sm.S, sm.S.T)
        assert np.linalg.eigvalsh(sm.S)[0] > 0
        assert len(set(sm.labels)) == 24
        assert sm.labels[0] == "VisualPerception"


class TestWriters:
    def test_dumps_deterministic_and_null_for_nonfinite(self):
        obj = {"b": np.float64(0.1), "a": [np.nan, math.inf, np.int64(3)], "c": np.array([[1.0, 2.0]])}
        text = dumps(obj)
        assert text == dumps(obj)
        back = json.loads(text)
        assert back == {"a": [None, None, 3], "b": 0.1, "c": [[1.0, 2.0]]}
        assert text.index('"a"') < text.index('"b"')

    def test_dumps_round_trips_floats(self):
        x = 0.1 + 0.2
        assert json.loads(dumps({"x": x}))["x"] == x

    def test_report_rounds_to_six_places(self):
        row = {"model": "A", "n_obs": 50, "estimator": "oblique-mcp", "criterion": "bic", "mse": 1 / 3,
               "mse_per_entry": math.nan, "tpr": 1.0, "tnr": 0.5, "reps": 3, "failures": 0, "skipped": ""}
        lines = report_csv([row]).splitlines()
        assert lines[1].startswith("A,50,oblique-mcp,bic,0.333333,nan,1.000000,0.500000,3,0,")

    def test_write_atomic(self, tmp_path):
        out = tmp_path / "o"
        written = write_atomic({"a.txt": "x", "b.txt": "y"}, out)
        assert sorted(p.name for p in out.iterdir()) == ["a.txt", "b.txt"]
        assert [p.read_text() for p in written] == ["x", "y"]
