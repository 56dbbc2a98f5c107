"""
Utility functions for value parsing, seeding and tolerances.

This module contains shared helpers used across the capsym modules.
"""

import logging
from fractions import Fraction
from typing import List, Optional

import numpy as np

from .config import settings

# Configure logging
logger = logging.getLogger(__name__)


def parse_number(value: object) -> float:
    """
    Parse a config value into a float.
    Handles ints, floats and strings, including fractions such as ``1/64``.

    Args:
        value: Raw value from a config file or command line

    Returns:
        Parsed float value

    Raises:
        ValueError: If the value cannot be interpreted as a number
    """
    if isinstance(value, bool):
        raise ValueError(f"expected a number, got {value!r}")
    if isinstance(value, (int, float)):
        return float(value)
    if isinstance(value, str):
        text = value.strip()
        try:
            return float(text)
        except ValueError:
            pass
        try:
            return float(Fraction(text.replace(" ", "")))
        except (ValueError, ZeroDivisionError):
            logger.debug(f"Failed to parse number: {value!r}")
            raise ValueError(f"expected a number, got {value!r}")
    raise ValueError(f"expected a number, got {type(value).__name__}")


def parse_vector(value: object) -> List[float]:
    """
    Parse a comma-separated vector (``-1, 0``) or a sequence into floats.

    Args:
        value: String or sequence of numbers

    Returns:
        List of floats
    """
    if isinstance(value, str):
        parts = [part for part in value.replace(";", ",").split(",") if part.strip()]
        return [parse_number(part) for part in parts]
    if isinstance(value, (list, tuple, np.ndarray)):
        return [parse_number(part) for part in value]
    return [parse_number(value)]


def parse_bool(value: object) -> bool:
    """Parse ``true/false/yes/no/1/0`` into a bool."""
    if isinstance(value, bool):
        return value
    text = str(value).strip().lower()
    if text in ("true", "yes", "on", "1"):
        return True
    if text in ("false", "no", "off", "0"):
        return False
    raise ValueError(f"expected a boolean, got {value!r}")


def make_rng(seed: Optional[int]) -> np.random.Generator:
    """Seeded generator; the only source of randomness in the package."""
    return np.random.default_rng(seed)


def grid_tolerance(spacing: float, scale: float = 1.0, c_grid: Optional[float] = None) -> float:
    """
    Tolerance tol(h) = max(tol_floor, C_grid * h * scale) for inequality checks.

    Args:
        spacing: Grid spacing h
        scale: Magnitude of the compared quantities
        c_grid: Override for the grid constant (defaults to settings.c_grid)

    Returns:
        Non-negative tolerance
    """
    constant = settings.c_grid if c_grid is None else c_grid
    return max(settings.tol_floor, constant * spacing * abs(scale))


def as_points(points: object, dim: int) -> np.ndarray:
    """Coerce a point or an array of points to shape (m, dim)."""
    array = np.asarray(points, dtype=float)
    if array.ndim == 1:
        array = array.reshape(1, -1)
    if array.shape[-1] != dim:
        raise ValueError(f"expected points of dimension {dim}, got shape {array.shape}")
    return array.reshape(-1, dim)
