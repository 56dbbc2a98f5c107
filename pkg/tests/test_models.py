"""
Tests for the report and configuration models.
"""

import json
import math

import numpy as np
import pytest
from pydantic import ValidationError

from src.models import EXPERIMENTS, ExperimentConfig, VerificationReport


class TestVerificationReport:
    """Test report semantics and serialization."""

    def test_margin_and_passed(self):
        """Test passed iff margin >= -tolerance."""
        report = VerificationReport(experiment="polya_szego", lhs=1.0, rhs=1.05, tolerance=0.1)
        assert report.margin == pytest.approx(-0.05)
        assert report.passed is True

        failing = VerificationReport(experiment="polya_szego", lhs=1.0, rhs=1.2, tolerance=0.1)
        assert failing.passed is False

    def test_json_line_key_order(self):
        """Test the documented key order of a report line."""
        report = VerificationReport(
            experiment="talenti",
            params={"lambda": 0.5},
            lhs=0.0,
            rhs=0.0,
            tolerance=1e-3,
            metadata={"values": np.array([1.0, 2.0]), "count": np.int64(3)},
        )
        payload = json.loads(report.to_json_line())
        assert list(payload) == ["experiment", "params", "lhs", "rhs", "margin", "tolerance", "passed", "metadata"]
        assert payload["metadata"] == {"values": [1.0, 2.0], "count": 3}

    def test_json_line_after_copy(self):
        """Test numpy values added through model_copy still serialize."""
        report = VerificationReport(experiment="sobolev", lhs=1.0, rhs=0.5, tolerance=1e-3)
        trace = {"quotients": np.array([3.5, 3.47]), "beta": np.float64(1.0), "flag": np.bool_(True)}
        copied = report.model_copy(update={"metadata": {"estimate_trace": trace}, "params": {"h": np.float64(0.25)}})
        payload = json.loads(copied.to_json_line())
        assert payload["metadata"]["estimate_trace"] == {"quotients": [3.5, 3.47], "beta": 1.0, "flag": True}
        assert payload["params"] == {"h": 0.25}

    def test_from_json_line(self):
        """Test a report line rebuilds the same report."""
        report = VerificationReport(experiment="moser", lhs=0.2, rhs=0.05, tolerance=1e-8)
        again = VerificationReport.from_json_line(report.to_json_line())
        assert again == report

    def test_non_finite_values_rejected(self):
        """Test lhs/rhs must be finite and metadata NaN becomes null."""
        with pytest.raises(ValidationError):
            VerificationReport(experiment="sobolev", lhs=math.nan, rhs=0.0, tolerance=0.0)
        report = VerificationReport(experiment="sobolev", lhs=0.0, rhs=0.0, tolerance=0.0, metadata={"x": math.inf})
        assert report.metadata["x"] is None


class TestExperimentConfig:
    """Test experiment config validation."""

    def test_minimal_config(self):
        """Test defaults and the lambda alias."""
        config = ExperimentConfig.model_validate({"experiment": "polya_szego", "lambda": 0.5, "spacing": 1.0 / 64.0})
        assert config.lambda_ == 0.5
        assert config.n == 2
        assert config.obstacle.kind == "halfspace"
        assert config.params() == {"lambda": 0.5, "p": 2.0, "n": 2, "h": 1.0 / 64.0, "seed": 0}

    @pytest.mark.parametrize("payload,message", [
        ({"experiment": "moser", "lambda": 1.0}, "lambda must lie strictly inside (-1,1)"),
        ({"experiment": "moser", "n": 4}, "n must be 2 or 3"),
        ({"experiment": "moser", "spacing": 0.0}, "spacing must be > 0"),
        ({"experiment": "sobolev", "n": 2, "p": 2.0}, "sobolev needs 1 < p < n"),
        ({"experiment": "talenti", "p": 3.0}, "use p = 2"),
    ])
    def test_range_violations(self, payload, message):
        """Test numeric ranges are validated before any solve."""
        with pytest.raises(ValidationError) as excinfo:
            ExperimentConfig.model_validate(payload)
        assert message in str(excinfo.value)

    def test_unknown_fields_rejected(self):
        """Test extra keys are errors."""
        with pytest.raises(ValidationError):
            ExperimentConfig.model_validate({"experiment": "moser", "gamma": 3})

    def test_outer_vector_dimension(self):
        """Test outer vectors must match n."""
        with pytest.raises(ValidationError):
            ExperimentConfig.model_validate({"experiment": "moser", "outer": {"kind": "box", "lo": [0, 0, 0]}})

    def test_ks_sorted(self):
        """Test Moser indices are sorted."""
        config = ExperimentConfig.model_validate({"experiment": "moser", "ks": [16, 4, 8]})
        assert config.ks == [4, 8, 16]

    def test_every_experiment_has_a_name(self):
        """Test the experiment list is what configs accept."""
        for name in EXPERIMENTS:
            ExperimentConfig.model_validate({"experiment": name, "p": 2.0 if name != "sobolev" else 1.5})
