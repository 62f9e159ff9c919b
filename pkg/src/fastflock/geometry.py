"""Small planar-geometry helpers shared across the package."""

from __future__ import annotations

import math

import numpy as np

TWO_PI = 2.0 * math.pi


def wrap_angle(angle: float) -> float:
    """Wrap an angle to (-pi, pi]."""
    wrapped = math.remainder(angle, TWO_PI)
    if wrapped <= -math.pi:
        wrapped += TWO_PI
    return wrapped


def heading_vector(angle: float) -> np.ndarray:
    """Unit vector pointing along `angle`."""
    return np.array([math.cos(angle), math.sin(angle)])


def rotation(angle: float) -> np.ndarray:
    """2x2 rotation matrix for `angle`."""
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, -s], [s, c]])
