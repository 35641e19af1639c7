"""Round-trip and validation tests for record and counts formats."""

import numpy as np
import pytest

from hardytest.errors import DataFormatError, InsufficientDataError, ValidationError
from hardytest.records import (
    CountsTable,
    TrialRecord,
    read_counts_json,
    read_records_csv,
    records_as_array,
    write_counts_json,
    write_records_csv,
)


@pytest.fixture
def sample_records():
    rng = np.random.default_rng(0)
    n = 1000
    arr = np.column_stack(
        [
            rng.integers(1, 3, n),
            rng.integers(1, 3, n),
            rng.integers(0, 3, n),
            rng.integers(0, 3, n),
        ]
    )
    return arr


class TestTrialRecord:
    def test_valid(self):
        rec = TrialRecord(1, 2, 0, 2)
        assert (rec.x, rec.y, rec.a, rec.b) == (1, 2, 0, 2)

    @pytest.mark.parametrize("bad", [(0, 1, 0, 0), (1, 3, 0, 0), (1, 1, 3, 0), (1, 1, 0, -1)])
    def test_invalid(self, bad):
        with pytest.raises(Exception):
            TrialRecord(*bad)


class TestCountsTable:
    def test_from_records_totals(self, sample_records):
        table = CountsTable.from_records(sample_records)
        assert table.total == 1000
        assert table.counts.sum() == 1000

    def test_sum_mismatch_rejected(self):
        counts = np.zeros((2, 2, 3, 3), dtype=np.int64)
        counts[0, 0, 0, 0] = 5
        with pytest.raises(ValidationError):
            CountsTable(counts, 7)

    def test_merge_is_commutative(self, sample_records):
        first = CountsTable.from_records(sample_records[:400])
        second = CountsTable.from_records(sample_records[400:])
        merged = first.merge(second)
        np.testing.assert_array_equal(
            merged.counts, second.merge(first).counts
        )
        np.testing.assert_array_equal(
            merged.counts, CountsTable.from_records(sample_records).counts
        )

    def test_frequencies_require_all_settings(self):
        arr = np.array([[1, 1, 0, 0]] * 10)
        table = CountsTable.from_records(arr)
        with pytest.raises(InsufficientDataError):
            table.frequencies()

    def test_frequencies_normalized(self, sample_records):
        freq = CountsTable.from_records(sample_records).frequencies()
        np.testing.assert_allclose(freq.cond.sum(axis=(2, 3)), 1.0, atol=1e-12)


class TestCsvRoundTrip:
    def test_round_trip(self, tmp_path, sample_records):
        path = tmp_path / "records.csv"
        write_records_csv(path, sample_records)
        back = read_records_csv(path)
        np.testing.assert_array_equal(back, sample_records)
        assert path.read_text().splitlines()[0] == "x,y,a,b"

    def test_malformed_line_number(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("x,y,a,b\n1,1,0,0\n1,oops,0,0\n")
        with pytest.raises(DataFormatError) as err:
            read_records_csv(path)
        assert err.value.line_number == 3

    def test_out_of_range_line_number(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("x,y,a,b\n1,1,0,0\n1,1,0,0\n3,1,0,0\n")
        with pytest.raises(DataFormatError) as err:
            read_records_csv(path)
        assert err.value.line_number == 4

    def test_wrong_header(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("a,b,c,d\n1,1,0,0\n")
        with pytest.raises(DataFormatError):
            read_records_csv(path)


class TestCountsJsonRoundTrip:
    def test_round_trip(self, tmp_path, sample_records):
        table = CountsTable.from_records(sample_records)
        path = tmp_path / "counts.json"
        write_counts_json(path, table)
        back = read_counts_json(path)
        np.testing.assert_array_equal(back.counts, table.counts)
        assert back.total == table.total

    def test_bad_key(self, tmp_path):
        path = tmp_path / "counts.json"
        path.write_text('{"total": 1, "counts": {"5,1,0,0": 1}}')
        with pytest.raises(DataFormatError):
            read_counts_json(path)

    def test_not_json(self, tmp_path):
        path = tmp_path / "counts.json"
        path.write_text("not json")
        with pytest.raises(DataFormatError):
            read_counts_json(path)


class TestRecordsAsArray:
    def test_accepts_trial_records(self):
        arr = records_as_array([TrialRecord(1, 1, 0, 1), TrialRecord(2, 2, 2, 2)])
        np.testing.assert_array_equal(arr, [[1, 1, 0, 1], [2, 2, 2, 2]])

    def test_rejects_bad_values(self):
        with pytest.raises(DataFormatError):
            records_as_array(np.array([[1, 1, 0, 5]]))
