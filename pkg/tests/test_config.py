"""
Tests for configuration settings.
"""

import logging
import os
from unittest.mock import patch

import pytest
from pydantic import ValidationError

from src.config import Settings


class TestSettings:
    """Test configuration settings."""

    def test_default_settings(self, clean_env, tmp_path, monkeypatch):
        """Test default configuration values."""
        monkeypatch.chdir(tmp_path)
        settings = Settings()

        assert settings.log == "info"
        assert settings.jobs == 1
        assert settings.c_grid == 2.0
        assert settings.tol_floor == 1e-8
        assert settings.rigidity_factor == 5.0
        assert settings.quantile_levels == 512
        assert settings.rho_mesh_points == 2048
        assert settings.eigen_window == 20
        assert settings.bvp_residual_tol == 1e-8
        assert settings.polarity_fd_step == 1e-6
        assert settings.moser_convention == "proposition"

    def test_environment_variable_overrides(self, clean_env):
        """Test environment variable overrides."""
        with patch.dict(os.environ, {
            "CAPSYM_LOG": "debug",
            "CAPSYM_JOBS": "4",
            "CAPSYM_C_GRID": "3.5",
            "CAPSYM_MOSER_CONVENTION": "theorem",
        }):
            settings = Settings()

            assert settings.log == "debug"
            assert settings.jobs == 4
            assert settings.c_grid == 3.5
            assert settings.moser_convention == "theorem"

    def test_env_file_loading(self, clean_env, tmp_path, monkeypatch):
        """Test loading from .env file."""
        (tmp_path / ".env").write_text("CAPSYM_LOG=error\nCAPSYM_EIGEN_MAX_ITER=42\n")
        monkeypatch.chdir(tmp_path)

        settings = Settings()
        assert settings.log == "error"
        assert settings.eigen_max_iter == 42

    def test_case_insensitive_env_vars(self, clean_env):
        """Test case insensitive environment variables."""
        with patch.dict(os.environ, {"capsym_log": "WARN", "Capsym_Jobs": "2"}):
            settings = Settings()

            assert settings.log == "warn"
            assert settings.jobs == 2


class TestSettingsValidation:
    """Test settings validation."""

    @pytest.mark.parametrize("name,level", [
        ("error", logging.ERROR),
        ("warn", logging.WARNING),
        ("info", logging.INFO),
        ("debug", logging.DEBUG),
    ])
    def test_log_level_mapping(self, clean_env, name, level):
        """Test CAPSYM_LOG names map to logging levels."""
        with patch.dict(os.environ, {"CAPSYM_LOG": name}):
            assert Settings().log_level == level

    def test_unknown_log_level(self, clean_env):
        """Test an unknown log level is rejected."""
        with patch.dict(os.environ, {"CAPSYM_LOG": "verbose"}):
            with pytest.raises(ValidationError):
                Settings()

    def test_non_positive_values(self, clean_env):
        """Test range validation of numeric knobs."""
        with patch.dict(os.environ, {"CAPSYM_JOBS": "0"}):
            with pytest.raises(ValidationError):
                Settings()
        with patch.dict(os.environ, {"CAPSYM_TOL_FLOOR": "-1"}):
            with pytest.raises(ValidationError):
                Settings()
