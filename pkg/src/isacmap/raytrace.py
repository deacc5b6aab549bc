"""Specular path tracing between a base station and a user.

Paths up to second order are found with the mirror-image method for planar
walls; first-order bounces off polynomial walls are stationary points of the
total path length (grid scan + Newton).  Double bounces are enumerated over
ordered planar wall pairs only.

Per-path gain is free-space amplitude ``lambda / (4 pi L)`` times the product
of per-bounce wall reflectivities, with carrier phase ``exp(-j 2 pi f_c tau)``
so downstream subcarrier phases are exact.  Angle conventions are documented
in :mod:`isacmap.geometry`: AoD points along the first leg, AoA is the
look-back direction from the user toward the last bounce (or the BS).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import SPEED_OF_LIGHT, angles_from_direction
from .scene import segment_occluded

DEFAULT_WAVELENGTH = SPEED_OF_LIGHT / 28e9


@dataclass(frozen=True)
class PathParam:
    """One multipath component."""

    gain: complex
    delay: float
    aod_az: float
    aod_el: float
    aoa_az: float
    aoa_el: float
    order: int
    reflection_points: tuple = ()

    @property
    def length(self):
        return self.delay * SPEED_OF_LIGHT


def _make_path(bs, user, points, reflectivity, wavelength):
    bs = np.asarray(bs, dtype=float)
    user = np.asarray(user, dtype=float)
    chain = [bs] + [np.asarray(p, dtype=float) for p in points] + [user]
    length = sum(np.linalg.norm(b - a) for a, b in zip(chain[:-1], chain[1:]))
    tau = length / SPEED_OF_LIGHT
    amp = reflectivity * wavelength / (4.0 * np.pi * length)
    fc = SPEED_OF_LIGHT / wavelength
    gain = amp * np.exp(-2j * np.pi * fc * tau)
    aod_az, aod_el = angles_from_direction(chain[1] - chain[0])
    aoa_az, aoa_el = angles_from_direction(chain[-2] - chain[-1])
    return PathParam(
        gain=complex(gain),
        delay=float(tau),
        aod_az=aod_az,
        aod_el=aod_el,
        aoa_az=aoa_az,
        aoa_el=aoa_el,
        order=len(points),
        reflection_points=tuple(tuple(float(x) for x in p) for p in points),
    )


def _first_order_planar(scene, wall, bs, user):
    """Mirror-image bounce point on a planar wall, or None."""
    ha = wall.signed_distance(bs)
    hb = wall.signed_distance(user)
    if ha * hb <= 1e-12:
        return None  # opposite sides (or on the plane): no specular bounce
    mirror = wall.mirror_point(user)
    t = wall.intersect_segment(bs, mirror, 1e-9, 1.0 - 1e-9)
    if t is None:
        return None
    p = bs + t * (mirror - bs)
    if segment_occluded(scene, bs, p, skip=(wall,)) or segment_occluded(scene, p, user, skip=(wall,)):
        return None
    # Other walls were skipped only for wall itself; still guard against the
    # bounce wall occluding its own legs elsewhere (possible for polygons
    # only via other walls, so nothing extra needed for planar).
    return p


def _second_order_planar(scene, w1, w2, bs, user):
    """Double mirror-image bounce via ordered planar pair (w1 then w2)."""
    i1 = w1.mirror_point(bs)
    i2 = w2.mirror_point(i1)
    t2 = w2.intersect_segment(user, i2, 1e-9, 1.0 - 1e-9)
    if t2 is None:
        return None
    p2 = user + t2 * (i2 - user)
    t1 = w1.intersect_segment(p2, i1, 1e-9, 1.0 - 1e-9)
    if t1 is None:
        return None
    p1 = p2 + t1 * (i1 - p2)
    if np.linalg.norm(p1 - p2) < 1e-9:
        return None
    # Reflection validity: each bounce needs its adjacent leg endpoints on the
    # same side of the wall plane.
    if w1.signed_distance(bs) * w1.signed_distance(p2) <= 1e-12:
        return None
    if w2.signed_distance(p1) * w2.signed_distance(user) <= 1e-12:
        return None
    if segment_occluded(scene, bs, p1, skip=(w1,)):
        return None
    if segment_occluded(scene, p1, p2, skip=(w1, w2)):
        return None
    if segment_occluded(scene, p2, user, skip=(w2,)):
        return None
    return p1, p2


def trace_paths(scene, bs, user, max_order=2, wavelength=DEFAULT_WAVELENGTH):
    """LOS plus specular reflection paths up to ``max_order`` (0, 1 or 2).

    Returns a list of :class:`PathParam`; empty if the link is fully blocked.
    """
    if max_order not in (0, 1, 2):
        raise ValueError("max_order must be 0, 1 or 2")
    bs = np.asarray(bs, dtype=float)
    user = np.asarray(user, dtype=float)
    if np.linalg.norm(bs - user) < 1e-12:
        raise ValueError("bs and user positions coincide")

    paths = []
    if not segment_occluded(scene, bs, user):
        paths.append(_make_path(bs, user, [], 1.0, wavelength))

    if max_order >= 1:
        for wall in scene.walls:
            if wall.kind == "planar":
                p = _first_order_planar(scene, wall, bs, user)
                if p is not None:
                    paths.append(_make_path(bs, user, [p], wall.reflectivity, wavelength))
            else:
                for s, _uv in wall.specular_points(bs, user):
                    if segment_occluded(scene, bs, s, skip=(wall,)) or \
                       segment_occluded(scene, s, user, skip=(wall,)):
                        continue
                    if wall.intersect_segment(bs, s, 1e-4, 1.0 - 1e-4) is not None:
                        continue
                    if wall.intersect_segment(s, user, 1e-4, 1.0 - 1e-4) is not None:
                        continue
                    paths.append(_make_path(bs, user, [s], wall.reflectivity, wavelength))

    if max_order >= 2:
        planar = [w for w in scene.walls if w.kind == "planar"]
        for w1 in planar:
            for w2 in planar:
                if w1 is w2:
                    continue
                hit = _second_order_planar(scene, w1, w2, bs, user)
                if hit is not None:
                    p1, p2 = hit
                    paths.append(_make_path(bs, user, [p1, p2],
                                            w1.reflectivity * w2.reflectivity, wavelength))
    return paths


def dump_paths(paths, path_or_file):
    """Write traced paths as delimited text, one path per line.

    Columns: order, length_m, aod_az, aod_el, aoa_az, aoa_el, then the
    reflection point coordinates (3 per bounce).
    """
    def _fmt(p):
        cols = [str(p.order)] + [repr(float(x)) for x in
                (p.length, p.aod_az, p.aod_el, p.aoa_az, p.aoa_el)]
        for pt in p.reflection_points:
            cols.extend(repr(float(x)) for x in pt)
        return " ".join(cols)

    text = "\n".join(_fmt(p) for p in paths) + ("\n" if paths else "")
    if hasattr(path_or_file, "write"):
        path_or_file.write(text)
    else:
        with open(path_or_file, "w") as fh:
            fh.write(text)
