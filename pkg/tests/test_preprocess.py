import io

import numpy as np
import pytest

from hcthmm.errors import CsvFormatError
from hcthmm.preprocess import (
    PreprocessConfig,
    RawActivityRecord,
    assign_group,
    preprocess,
    remove_zero_runs,
)


def records_for(sid, counts, age=30.0, sex="M", start_minute=0, weekend=0):
    return [
        RawActivityRecord(sid, start_minute + k, int(c), age, sex, weekend)
        for k, c in enumerate(counts)
    ]


SHORT_CONFIG = PreprocessConfig(min_valid_minutes=50)


class TestRemoveZeroRuns:
    def test_run_of_19_kept(self):
        counts = np.array([1] * 10 + [0] * 19 + [1] * 10)
        minutes = np.arange(len(counts))
        keep, removed = remove_zero_runs(minutes, counts, 20)
        assert removed == 0 and keep.all()

    def test_run_of_20_removed(self):
        counts = np.array([1] * 10 + [0] * 20 + [1] * 10)
        minutes = np.arange(len(counts))
        keep, removed = remove_zero_runs(minutes, counts, 20)
        assert removed == 20
        assert keep.sum() == 20
        assert not keep[10:30].any()

    def test_run_interrupted_by_gap_counts_separately(self):
        # 12 zeros, a recording gap, 12 more zeros: neither side reaches 20
        minutes = np.concatenate([np.arange(12), np.arange(40, 52)])
        counts = np.zeros(24, dtype=int)
        keep, removed = remove_zero_runs(minutes, counts, 20)
        assert removed == 0 and keep.all()

    def test_never_removes_nonzero(self, rng):
        counts = rng.integers(0, 3, size=500)
        minutes = np.arange(500)
        keep, removed = remove_zero_runs(minutes, counts, 5)
        assert np.all(counts[~keep] == 0)
        assert removed == (~keep).sum()

    def test_trailing_run_removed(self):
        counts = np.array([5] * 10 + [0] * 25)
        keep, removed = remove_zero_runs(np.arange(35), counts, 20)
        assert removed == 25 and keep.sum() == 10


class TestPreprocess:
    def test_gap_trace_hand_example(self):
        # 100 ones, 25 zeros, 100 ones -> 200 points, 26-minute gap
        counts = [1] * 100 + [0] * 25 + [1] * 100
        series, report = preprocess(records_for("a", counts), SHORT_CONFIG)
        s = series[0]
        assert s.n_obs == 200
        gaps = np.diff(s.times)
        assert gaps.max() == 26
        assert (gaps == 1).sum() == 198
        assert report.removed_zero_minutes == 25

    def test_truncation_at_cap(self):
        counts = [100] * 60 + [1600, 2000] + [100] * 60
        series, report = preprocess(records_for("a", counts), SHORT_CONFIG)
        assert series[0].counts.max() == 1500
        assert report.truncated_counts == 2

    def test_age_filter_inclusive_bounds(self):
        recs = (
            records_for("young", [5] * 60, age=19.0)
            + records_for("lo", [5] * 60, age=20.0)
            + records_for("hi", [5] * 60, age=60.0)
            + records_for("old", [5] * 60, age=61.0)
        )
        series, report = preprocess(recs, SHORT_CONFIG)
        assert sorted(s.subject_id for s in series) == ["hi", "lo"]
        assert report.excluded_by_age == 2

    def test_min_minutes_filter_counts_remaining(self):
        # 69 minutes recorded but 20 vanish in a zero run -> 49 < 50 remaining
        counts = [3] * 30 + [0] * 20 + [3] * 19
        series, report = preprocess(records_for("a", counts), SHORT_CONFIG)
        assert series == []
        assert report.excluded_by_min_minutes == 1

    def test_group_assignment(self):
        assert assign_group("M", 25.0) == 1
        assert assign_group("M", 45.0) == 2
        assert assign_group("F", 25.0) == 3
        assert assign_group("F", 45.0) == 4
        # boundary age 40 goes to the older group
        assert assign_group("M", 40.0) == 2
        assert assign_group("F", 40.0) == 4

    def test_reconciliation_invariant(self):
        recs = (
            records_for("a", [5] * 60, age=30.0)
            + records_for("b", [5] * 10, age=30.0)
            + records_for("c", [5] * 60, age=70.0)
            + records_for("d", [0] * 60, age=30.0)
        )
        series, rep = preprocess(recs, SHORT_CONFIG)
        assert (
            rep.n_input_subjects
            == rep.n_output_subjects + rep.excluded_by_age + rep.excluded_by_min_minutes
        )

    def test_idempotent(self, rng):
        counts = rng.poisson(3, size=400)
        counts[50:90] = 0
        counts[200:219] = 0
        series1, _ = preprocess(records_for("a", counts.tolist()), SHORT_CONFIG)
        s = series1[0]
        again = [
            RawActivityRecord("a", int(t), int(c), 30.0, "M", int(w))
            for t, c, w in zip(s.times, s.counts, s.covariates[:, 0])
        ]
        series2, rep2 = preprocess(again, SHORT_CONFIG)
        np.testing.assert_array_equal(series2[0].times, s.times)
        np.testing.assert_array_equal(series2[0].counts, s.counts)
        assert rep2.removed_zero_minutes == 0

    def test_duplicate_minute_rejected(self):
        recs = records_for("a", [1] * 60)
        recs.append(RawActivityRecord("a", 10, 5, 30.0, "M", 0))
        with pytest.raises(CsvFormatError, match="duplicate"):
            preprocess(recs, SHORT_CONFIG)

    def test_inconsistent_demographics_rejected(self):
        recs = records_for("a", [1] * 30, age=30.0) + records_for(
            "a", [1] * 30, age=35.0, start_minute=30
        )
        with pytest.raises(CsvFormatError, match="inconsistent"):
            preprocess(recs, SHORT_CONFIG)


class TestCsvParsing:
    def test_round_trip_through_csv(self):
        text = "subject_id,minute,count,age,sex,weekend\n" + "\n".join(
            f"s1,{k},{c},35,M,0" for k, c in enumerate([4] * 60)
        )
        series, _ = preprocess(io.StringIO(text), SHORT_CONFIG)
        assert series[0].n_obs == 60

    def test_malformed_rows_reported_with_lines(self):
        text = (
            "subject_id,minute,count,age,sex,weekend\n"
            "s1,0,4,35,M,0\n"
            "s1,1,notanumber,35,M,0\n"
            "s1,2,4,35,M,0\n"
        )
        with pytest.raises(CsvFormatError) as e:
            preprocess(io.StringIO(text), SHORT_CONFIG)
        assert 3 in e.value.lines

    def test_header_checked(self):
        with pytest.raises(CsvFormatError, match="header"):
            preprocess(io.StringIO("a,b,c\n1,2,3\n"), SHORT_CONFIG)

    def test_weekend_derived_when_column_missing(self):
        rows = [f"s1,{k},3,35,M" for k in range(0, 9 * 1440, 137)]
        text = "subject_id,minute,count,age,sex\n" + "\n".join(rows)
        series, _ = preprocess(io.StringIO(text), PreprocessConfig(min_valid_minutes=10))
        x = series[0].covariates[:, 0]
        minutes = series[0].times.astype(int)
        day = (minutes // 1440) % 7
        np.testing.assert_array_equal(x, (day >= 5).astype(float))


class TestGoldenPipeline:
    """End-to-end fixture covering every cleaning rule at once."""

    def build_fixture(self):
        rows = ["subject_id,minute,count,age,sex,weekend"]

        def add(sid, minute, count, age, sex):
            rows.append(f"{sid},{minute},{count},{age},{sex},0")

        # keep1: M/35 -> group 1; 19-zero run survives, 20-zero run removed,
        # one count truncated
        m = 0
        for c in [7] * 30 + [0] * 19 + [7] * 30:
            add("keep1", m, c, 35, "M")
            m += 1
        for c in [0] * 20:
            add("keep1", m, c, 35, "M")
            m += 1
        add("keep1", m, 1600, 35, "M")
        m += 1
        for c in [7] * 19:
            add("keep1", m, c, 35, "M")
            m += 1
        # keep2: F/40 -> group 4 (boundary age goes older)
        for k, c in enumerate([3] * 80):
            add("keep2", k, c, 40, "F")
        # dropage: age 61
        for k, c in enumerate([3] * 80):
            add("dropage", k, c, 61, "M")
        # dropshort: 75 minutes recorded, 30 vanish in a zero run
        for k, c in enumerate([2] * 40 + [0] * 30 + [2] * 5):
            add("dropshort", k, c, 50, "F")
        return "\n".join(rows) + "\n"

    def test_exact_output(self):
        cfg = PreprocessConfig(min_valid_minutes=60)
        series, rep = preprocess(io.StringIO(self.build_fixture()), cfg)
        by_id = {s.subject_id: s for s in series}
        assert sorted(by_id) == ["keep1", "keep2"]

        k1 = by_id["keep1"]
        assert k1.group_id == 1
        assert k1.n_obs == 99  # 79 + 20 after deleting the 20-zero run
        expected_minutes = np.concatenate([np.arange(79), np.arange(99, 119)])
        np.testing.assert_array_equal(k1.times, expected_minutes.astype(float))
        expected_counts = np.array([7] * 30 + [0] * 19 + [7] * 30 + [1500] + [7] * 19)
        np.testing.assert_array_equal(k1.counts, expected_counts)

        k2 = by_id["keep2"]
        assert k2.group_id == 4
        assert k2.n_obs == 80

        assert rep.n_input_subjects == 4
        assert rep.excluded_by_age == 1
        assert rep.excluded_by_min_minutes == 1
        assert rep.n_output_subjects == 2
        assert rep.removed_zero_minutes == 50  # 20 (keep1) + 30 (dropshort)
        assert rep.truncated_counts == 1
