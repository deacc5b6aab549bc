"""Range estimation, user localization, and reflection-point triangulation.

Ranging correlates measured subcarrier phases against the modeled propagation
phase ``-2 pi f_m d / c`` over a distance grid and refines the peak with
iterated parabolic interpolation.  The objective is periodic in ``d`` with
period ``c / subcarrier spacing``, so the search window must be narrower than
one period (validated).

A reflection point is the midpoint of the common perpendicular between the
departure ray (from the BS along the AoD) and the look-back ray (from the
user along the AoA); half the gap between the rays is reported as the
triangulation residual.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .geometry import SPEED_OF_LIGHT, direction_from_angles


class LocalizationError(ValueError):
    pass


class RangingConfigError(LocalizationError):
    pass


class RayGeometryError(LocalizationError):
    """Raised for parallel rays."""


class BehindRayError(LocalizationError):
    """Raised when the closest approach lies behind either ray origin."""

    def __init__(self, msg, t1, t2):
        super().__init__(msg)
        self.t1 = t1
        self.t2 = t2


class NoPointsError(LocalizationError):
    """Raised when a metric is requested for an empty point set."""


@dataclass(frozen=True)
class RangingConfig:
    d_min: float = 0.5
    d_max: float = 60.0
    step: float = 0.05
    refine_passes: int = 6

    def __post_init__(self):
        if not (0 < self.d_min < self.d_max):
            raise RangingConfigError("need 0 < d_min < d_max")
        if self.step <= 0:
            raise RangingConfigError("grid step must be positive")
        if self.d_max - self.d_min < self.step:
            raise RangingConfigError("search window narrower than one grid step")
        if self.refine_passes < 0:
            raise RangingConfigError("refine_passes must be >= 0")


def _range_objective(phases, freqs, d):
    """|sum_m exp(j(phi_m + 2 pi f_m d / c))| for scalar or vector d."""
    d = np.asarray(d, dtype=float)
    arg = phases[None, :] + 2.0 * np.pi * freqs[None, :] * d[..., None] / SPEED_OF_LIGHT
    return np.abs(np.sum(np.exp(1j * arg), axis=-1))


def estimate_range(phases, freqs, cfg):
    """Distance maximizing phase coherence across subcarriers.

    Grid search over [d_min, d_max] followed by iterated parabolic
    refinement; ties break to the smallest distance.
    """
    phases = np.asarray(phases, dtype=float)
    freqs = np.asarray(freqs, dtype=float)
    if phases.shape != freqs.shape or phases.ndim != 1 or phases.size < 2:
        raise RangingConfigError("need matching 1-D phases/freqs with M >= 2")
    dfreq = np.diff(np.sort(freqs))
    if np.any(dfreq <= 0):
        raise RangingConfigError("subcarrier frequencies must be distinct")
    period = SPEED_OF_LIGHT / float(np.min(dfreq))
    if cfg.d_max - cfg.d_min >= period:
        raise RangingConfigError(
            f"window {cfg.d_max - cfg.d_min:.1f} m covers a full ambiguity period "
            f"{period:.1f} m; shrink it"
        )
    grid = np.arange(cfg.d_min, cfg.d_max + cfg.step / 2, cfg.step)
    obj = _range_objective(phases, freqs, grid)
    best = int(np.argmax(obj))  # first max = smallest d
    d = float(grid[best])

    h = cfg.step
    for _ in range(cfg.refine_passes):
        y0 = _range_objective(phases, freqs, np.array([d]))[0]
        ym = _range_objective(phases, freqs, np.array([d - h]))[0]
        yp = _range_objective(phases, freqs, np.array([d + h]))[0]
        denom = ym - 2.0 * y0 + yp
        if denom >= 0 or abs(denom) < 1e-15:
            h *= 0.5
            continue
        shift = 0.5 * h * (ym - yp) / denom
        shift = float(np.clip(shift, -h, h))
        cand = float(np.clip(d + shift, cfg.d_min, cfg.d_max))
        if _range_objective(phases, freqs, np.array([cand]))[0] >= y0:
            d = cand
        h *= 0.5
    return d


def locate_user(bs, az, el, distance):
    """Position at the given distance from the BS along direction (az, el).

    The angles describe the BS -> user ray (for a direct path these are the
    departure angles; the user-side look-back arrival angles are their
    reversal).
    """
    if distance <= 0:
        raise LocalizationError("distance must be positive")
    bs = np.asarray(bs, dtype=float)
    return bs + distance * direction_from_angles(az, el)


def reflection_point(bs, user, aod, aoa, parallel_tol=1e-9):
    """Triangulated bounce point and residual from departure/arrival angles.

    ``aod``/``aoa`` are (azimuth, elevation) pairs.  Returns (point, residual)
    where the point is the midpoint of the common perpendicular between the
    two rays and the residual is half the remaining gap.  Raises
    RayGeometryError for parallel rays and BehindRayError when the closest
    approach lies behind either origin.
    """
    o1 = np.asarray(bs, dtype=float)
    o2 = np.asarray(user, dtype=float)
    if np.linalg.norm(o1 - o2) < 1e-12:
        raise LocalizationError("bs and user positions coincide")
    d1 = direction_from_angles(*aod)
    d2 = direction_from_angles(*aoa)
    cross = np.cross(d1, d2)
    denom = cross @ cross
    if denom < parallel_tol ** 2:
        raise RayGeometryError("departure and arrival rays are parallel")
    w = o2 - o1
    t1 = np.linalg.det(np.stack([w, d2, cross])) / denom
    t2 = np.linalg.det(np.stack([w, d1, cross])) / denom
    if t1 <= 0 or t2 <= 0:
        raise BehindRayError("closest approach behind a ray origin", t1, t2)
    p1 = o1 + t1 * d1
    p2 = o2 + t2 * d2
    point = 0.5 * (p1 + p2)
    residual = 0.5 * float(np.linalg.norm(p1 - p2))
    return point, residual


@dataclass
class PointSet:
    """Estimated reflection points with per-point provenance."""

    points: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    user_ids: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))
    bs_ids: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))
    domain_ids: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))
    residuals: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float).reshape(-1, 3)
        n = len(self.points)
        self.user_ids = np.asarray(self.user_ids, dtype=int).reshape(n)
        self.bs_ids = np.asarray(self.bs_ids, dtype=int).reshape(n)
        self.domain_ids = np.asarray(self.domain_ids, dtype=int).reshape(n)
        self.residuals = np.asarray(self.residuals, dtype=float).reshape(n)
        if np.any(self.residuals < 0):
            raise LocalizationError("residuals must be >= 0")

    def __len__(self):
        return len(self.points)


def merge_point_sets(sets):
    """Concatenate point sets, preserving provenance; no deduplication."""
    sets = [s for s in sets]
    if not sets:
        return PointSet()
    return PointSet(
        points=np.concatenate([s.points for s in sets], axis=0),
        user_ids=np.concatenate([s.user_ids for s in sets]),
        bs_ids=np.concatenate([s.bs_ids for s in sets]),
        domain_ids=np.concatenate([s.domain_ids for s in sets]),
        residuals=np.concatenate([s.residuals for s in sets]),
    )


def save_point_set(ps, path):
    """Delimited text export: 'x y z user_id bs_id residual' per line."""
    with open(path, "w") as fh:
        for p, u, b, r in zip(ps.points, ps.user_ids, ps.bs_ids, ps.residuals):
            fh.write(f"{float(p[0])!r} {float(p[1])!r} {float(p[2])!r} "
                     f"{int(u)} {int(b)} {float(r)!r}\n")


def load_point_set(path):
    rows = [line.split() for line in Path(path).read_text().splitlines() if line.strip()]
    if not rows:
        return PointSet()
    arr = np.asarray(rows, dtype=float)
    return PointSet(points=arr[:, :3], user_ids=arr[:, 3].astype(int),
                    bs_ids=arr[:, 4].astype(int), domain_ids=np.zeros(len(arr), dtype=int),
                    residuals=arr[:, 5])


def build_point_set(reports, bs_position, bs_id, ranging_cfg, phase_source,
                    factor_mask=None, errors=None):
    """Triangulate reflection points for every superior user.

    ``phase_source(user_id, quad)`` must return (phases, freqs) for the
    beamformed channel at that quad.  Sub-operation failures skip the
    offending domain (recorded in ``errors`` when a list is supplied) and
    never abort the batch.
    """
    from .selection import ALL_FACTORS, usable_nlos_domains

    mask = ALL_FACTORS if factor_mask is None else frozenset(factor_mask)
    bs_position = np.asarray(bs_position, dtype=float)
    pts, uids, bids, dids, res = [], [], [], [], []
    for report in reports:
        if not report.superior:
            continue
        # Ranging anchor: the strongest domain classified as the direct path
        # (strongest overall when the reflection test is disabled).  The
        # anchor is a measurement choice, not gated by the point filters.
        cands = [t for t in report.domains if not t[1].excluded]
        if "reflection" in mask:
            cands = [t for t in cands if t[1].reflection == 0]
        if not cands:
            continue
        los_dom, los_dp = max(cands, key=lambda t: t[0].peak_power)
        try:
            phases, freqs = phase_source(report.user_id, los_dom.peak)
            d_star = estimate_range(phases, freqs, ranging_cfg)
            user_pos = locate_user(bs_position, los_dp.aod_az, los_dp.aod_el, d_star)
        except (LocalizationError, ValueError) as e:
            if errors is not None:
                errors.append({"user_id": report.user_id, "stage": "ranging", "error": str(e)})
            continue
        nlos = usable_nlos_domains(report, mask)
        for k, (dom, dp) in enumerate(nlos):
            # With the reflection factor active the LOS domain never enters
            # the reflection pool.  Without it, the pipeline cannot tell the
            # direct path apart, so its domain is triangulated like any other
            # (the near-collinear rays scatter points along the BS-user line).
            if dom is los_dom and "reflection" in mask:
                continue
            try:
                point, residual = reflection_point(
                    bs_position, user_pos, (dp.aod_az, dp.aod_el), (dp.aoa_az, dp.aoa_el))
            except LocalizationError as e:
                if errors is not None:
                    errors.append({"user_id": report.user_id, "domain": k,
                                   "stage": "triangulation", "error": str(e)})
                continue
            pts.append(point)
            uids.append(report.user_id)
            bids.append(bs_id)
            dids.append(k)
            res.append(residual)
    if not pts:
        return PointSet()
    return PointSet(points=np.asarray(pts), user_ids=uids, bs_ids=bids,
                    domain_ids=dids, residuals=res)
