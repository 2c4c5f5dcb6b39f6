import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from taskalloc.records import TrajectoryRecord, fmt, trajectory_columns, write_rows


def test_column_order():
    assert trajectory_columns(2) == ["t", "q_1", "q_2", "x_1", "x_2", "lambda", "L", "S", "gradxS_dot_V",
                                     "eps_mean", "eps_max", "q_inf_norm"]


@settings(max_examples=200)
@given(v=st.floats(allow_nan=False, allow_infinity=False))
def test_fmt_round_trips(v):
    assert float(fmt(v)) == v


def test_csv_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    rec = TrajectoryRecord(3, rng.normal(size=(5, 14)) * 1e3)
    path = rec.write_csv(tmp_path / "r.csv")
    back = TrajectoryRecord.read_csv(path)
    np.testing.assert_array_equal(back.data, rec.data)
    assert back.columns == rec.columns


def test_read_rejects_bad_header(tmp_path):
    write_rows(tmp_path / "bad.csv", ["a", "b"] + ["c"] * 10, [[1.0] * 12])
    with pytest.raises(ValueError):
        TrajectoryRecord.read_csv(tmp_path / "bad.csv")
