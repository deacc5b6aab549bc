"""Shared angle and direction conventions.

Every module uses the same spherical convention:

* azimuth ``phi``   = atan2(y, x), wrapped to (-pi, pi]
* elevation ``theta`` = arccos(z / r), measured from the +z axis, in [0, pi]

so a unit direction is ``(sin(theta) cos(phi), sin(theta) sin(phi), cos(theta))``.

Departure angles (AoD) describe the first leg of a path leaving the
transmitter.  Arrival angles (AoA) describe the *look-back* direction from
the receiver toward the last reflection point (or toward the transmitter for
a direct path).  Under this convention the four tangent relations used for
reflection-point triangulation hold exactly, and a direct path satisfies
``phi_r = wrap(phi_t + pi)`` and ``theta_r = pi - theta_t``.
"""

from __future__ import annotations

import numpy as np

SPEED_OF_LIGHT = 299_792_458.0


def wrap_angle(a):
    """Wrap angle(s) to (-pi, pi]."""
    a = np.asarray(a, dtype=float)
    w = np.remainder(a + np.pi, 2.0 * np.pi) - np.pi
    w = np.where(w == -np.pi, np.pi, w)
    return float(w) if w.ndim == 0 else w


def direction_from_angles(az, el):
    """Unit vector for azimuth ``az`` and elevation-from-+z ``el`` (radians)."""
    az = np.asarray(az, dtype=float)
    el = np.asarray(el, dtype=float)
    s = np.sin(el)
    d = np.stack([s * np.cos(az), s * np.sin(az), np.cos(el)], axis=-1)
    return d


def angles_from_direction(v):
    """(azimuth, elevation) of direction(s) ``v``; v need not be normalized."""
    v = np.asarray(v, dtype=float)
    n = np.linalg.norm(v, axis=-1)
    if np.any(n == 0.0):
        raise ValueError("zero-length direction vector")
    az = wrap_angle(np.arctan2(v[..., 1], v[..., 0]))
    el = np.arccos(np.clip(v[..., 2] / n, -1.0, 1.0))
    if np.ndim(az) == 0:
        return float(az), float(el)
    return az, el


def reverse_direction_angles(az, el):
    """Angles of ``-d`` given the angles of ``d``."""
    return wrap_angle(np.asarray(az) + np.pi), np.pi - np.asarray(el)


def unit(v):
    v = np.asarray(v, dtype=float)
    n = np.linalg.norm(v)
    if n == 0.0:
        raise ValueError("cannot normalize zero vector")
    return v / n
