import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from latentcapture.data import (
    CaptureRecord,
    DataError,
    decode_history,
    encode_history,
    load_dataset,
    parse_capture_csv,
    stratify,
    write_capture_csv,
)


def test_lexicographic_order_first_list_most_significant():
    order = [decode_history(r, 3) for r in range(8)]
    assert order == sorted(itertools.product((0, 1), repeat=3))
    assert encode_history((1, 0, 0)) == 4
    assert encode_history((0, 0, 1)) == 1


@given(st.integers(2, 12).flatmap(lambda J: st.tuples(st.just(J), st.integers(0, 2**J - 1))))
def test_encode_decode_roundtrip(case):
    J, r = case
    assert encode_history(decode_history(r, J), J) == r


def test_three_records_one_stratum():
    recs = [CaptureRecord((1, 0), (2.0,)), CaptureRecord((1, 0), (2.0,)), CaptureRecord((0, 1), (2.0,))]
    ds = stratify(recs, ["age"])
    assert ds.s == 1 and ds.n == 3
    # configurations (0,1), (1,0), (1,1)
    assert ds.strata[0].y.tolist() == [1, 2, 0]


def test_strata_in_first_appearance_order():
    recs = [CaptureRecord((1, 1), (3.0,)), CaptureRecord((0, 1), (1.0,)), CaptureRecord((1, 0), (3.0,))]
    ds = stratify(recs)
    assert [float(s.x[0]) for s in ds.strata] == [3.0, 1.0]
    assert ds.counts.tolist() == [2.0, 1.0]
    assert ds.covariate_names == ("x1",)


@pytest.mark.parametrize(
    "history, message",
    [((1,), "at least two"), ((1, 2), "not binary"), ((0, 0, 0), "never captured")],
)
def test_record_validation(history, message):
    with pytest.raises(DataError, match=message):
        CaptureRecord(history)


def test_empty_input():
    with pytest.raises(DataError, match="no observable units"):
        stratify([])


def test_mismatched_record_shapes():
    with pytest.raises(DataError, match="record 1"):
        stratify([CaptureRecord((1, 0)), CaptureRecord((1, 0, 1))])


def test_csv_roundtrip(tmp_path):
    path = tmp_path / "caps.csv"
    path.write_text("a,b,c,sex,w\n1,0,1,0,12.5\n0,1,1,1,9\n1,0,1,0,12.5\n")
    ds = load_dataset(path, 3)
    assert ds.covariate_names == ("sex", "w")
    assert ds.s == 2 and ds.n == 3
    out = tmp_path / "back.csv"
    write_capture_csv(ds, out)
    again = load_dataset(out, 3)
    assert again.covariate_names == ds.covariate_names
    np.testing.assert_array_equal(again.Y, ds.Y)
    np.testing.assert_array_equal(again.X, ds.X)


@pytest.mark.parametrize(
    "body, message",
    [
        ("1,0,x\n", "row 1, column 'c': value 'x' is not numeric"),
        ("1,2,0\n", "row 1, column 'b': capture cell '2'"),
        ("1,0\n", "row 1 has 2 fields"),
        ("0,0,1\n", "row 1: all-zero"),
        ("1,0,\n", "row 1, column 'c'"),
    ],
)
def test_csv_errors_name_row_and_column(tmp_path, body, message):
    path = tmp_path / "bad.csv"
    path.write_text("a,b,c\n" + body)
    with pytest.raises(DataError, match=message):
        parse_capture_csv(path, 2)


@settings(max_examples=40)
@given(st.lists(st.tuples(st.integers(1, 7), st.integers(0, 2)), min_size=1, max_size=30))
def test_stratify_preserves_counts(rows):
    recs = [CaptureRecord(decode_history(h, 3), (float(x),)) for h, x in rows]
    ds = stratify(recs)
    assert ds.n == len(rows)
    assert int(ds.Y.sum()) == len(rows)
    for st_ in ds.strata:
        assert st_.n == int(st_.y.sum())
