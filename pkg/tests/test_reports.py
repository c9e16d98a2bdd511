"""Tests for reports module."""

import math

import numpy as np

from factorlab.reports import ExactRecheck, FailureRecord, RunReport, as_intervals, jsonable


class TestAsIntervals:
    """Tests for as_intervals."""

    def test_compresses_runs(self):
        """Test consecutive indices collapse into closed runs."""
        assert as_intervals([5, 1, 2, 3, 7, 8]) == [[1, 3], [5, 5], [7, 8]]

    def test_empty(self):
        """Test an empty set has no runs."""
        assert as_intervals([]) == []


class TestJsonable:
    """Tests for jsonable."""

    def test_numpy_and_containers(self):
        """Test numpy scalars, tuples and sets become plain JSON values."""
        value = {"step": np.int64(3), "pair": (1, 2), "rows": {3, 1}, "eta": np.float64(0.25)}
        assert jsonable(value) == {"step": 3, "pair": [1, 2], "rows": [1, 3], "eta": 0.25}

    def test_infinity_becomes_string(self):
        """Test non-finite floats are written as strings."""
        assert jsonable(math.inf) == "inf"
        assert jsonable([np.nan]) == ["nan"]

    def test_unknown_objects_use_str(self):
        """Test anything else falls back to str()."""
        assert jsonable(object) == str(object)


class TestRunReport:
    """Tests for RunReport verdicts."""

    def test_unfinished_report_fails(self):
        """Test a report without verification is a failure."""
        assert RunReport(config={}).verdict == "fail"

    def test_failure_record_fails(self):
        """Test a recorded failure makes the verdict fail."""
        report = RunReport(config={}, failure=FailureRecord(stage="plan", error="DimensionTooSmall", message="too small"))
        assert report.verdict == "fail"
        assert '"stage": "plan"' in report.to_json()

    def test_exact_recheck_passed(self):
        """Test an exact recheck passes only without failures."""
        assert ExactRecheck(checked=3, skipped=0).passed
        assert not ExactRecheck(checked=3, skipped=0, failures=["step 1"]).passed
