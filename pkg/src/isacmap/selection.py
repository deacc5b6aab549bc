"""Power-map analysis and superior-user selection.

Pipeline per user: threshold the 4-D power map (between-class variance over a
K-level linear histogram), binarize, extract connected domains under 4-D
von-Neumann adjacency, then score each domain with three factors:

* connectivity ``c``: 2 iff thr_c < |domain| < thr_h (profitable path size),
* reflection ``r``: 0 for a direct path, 2 for a first-order reflection,
  decided by how far the departure/arrival angles are from the complementary
  relation a direct path satisfies.  Azimuths are compared through ``tan``
  (period pi absorbs the 180-degree turn); elevations through ``cot``, which
  keeps the test regular near horizontal propagation and is exactly zero for
  true direct geometry,
* power ``p``: 2 iff the max/min power ratio over the peak's axis neighbors
  is below thr_pow (grid-aligned path).

A user is superior when it has at least one usable direct path and one usable
first-order reflection: s_u = s_los * s_nlos >= 1.  All comparisons use
strict inequalities in the pass direction; ties reject.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .geometry import wrap_angle


class SelectionError(ValueError):
    pass


class NoThresholdError(SelectionError):
    """Raised for constant tensors, which admit no threshold."""


class TangentSingularityError(SelectionError):
    """Raised when a factor-angle sits on a tangent/cotangent pole."""


@dataclass(frozen=True)
class SelectionConfig:
    k_levels: int = 256
    thr_c: float = 3.0
    thr_h: float = None  # default: 0.05 * tensor size, resolved per map
    thr_tan: float = 0.1
    thr_pow: float = 4.0

    def __post_init__(self):
        if self.k_levels < 2:
            raise SelectionError("k_levels must be >= 2")
        if self.thr_c <= 0:
            raise SelectionError("thr_c must be positive")
        if self.thr_h is not None and self.thr_h <= self.thr_c:
            raise SelectionError("need 0 < thr_c < thr_h")
        if self.thr_tan <= 0:
            raise SelectionError("thr_tan must be positive")
        if self.thr_pow <= 1:
            raise SelectionError("thr_pow must exceed 1")

    def resolved_thr_h(self, tensor_size):
        return self.thr_h if self.thr_h is not None else 0.05 * tensor_size


@dataclass
class ConnectedDomain:
    """Maximal set of adjacent above-threshold cells with its power peak."""

    cells: np.ndarray          # (n, 4) integer coordinates
    peak: tuple                # quad with the highest power
    peak_power: float

    @property
    def size(self):
        return len(self.cells)


@dataclass
class DomainPath:
    """Angles and factor scores attached to one connected domain."""

    quad: tuple
    aod_az: float
    aod_el: float
    aoa_az: float
    aoa_el: float
    classification: str = "nlos"     # "los" | "nlos"
    connectivity: int = 0
    reflection: int = 0
    power: int = 0
    excluded: bool = False           # tangent singularity flag


@dataclass
class SelectionReport:
    user_id: int
    domains: list = field(default_factory=list)   # (ConnectedDomain, DomainPath)
    s_los: int = 0
    s_nlos: int = 0
    threshold_failed: bool = False

    @property
    def s_u(self):
        return self.s_los * self.s_nlos

    @property
    def superior(self):
        return self.s_u >= 1


def otsu_threshold(pm, k_levels=256):
    """Histogram level index and power value maximizing between-class variance.

    Ties break to the smallest level.  Raises NoThresholdError for constant
    input.
    """
    vals = np.asarray(pm.values if hasattr(pm, "values") else pm, dtype=float).ravel()
    lo = float(vals.min())
    hi = float(vals.max())
    if not hi > lo:
        raise NoThresholdError("power map is constant; no threshold exists")
    counts, edges = np.histogram(vals, bins=k_levels, range=(lo, hi))
    total = counts.sum()
    levels = np.arange(k_levels, dtype=float)
    w0 = np.cumsum(counts)[:-1] / total                    # classes split at T = 1..K-1
    w1 = 1.0 - w0
    cum_mean = np.cumsum(counts * levels)[:-1] / total
    mu_total = float(np.sum(counts * levels)) / total
    with np.errstate(divide="ignore", invalid="ignore"):
        mu0 = np.where(w0 > 0, cum_mean / w0, 0.0)
        mu1 = np.where(w1 > 0, (mu_total - cum_mean) / w1, 0.0)
    sigma_b = w0 * w1 * (mu0 - mu1) ** 2
    t = int(np.argmax(sigma_b)) + 1                        # first max = smallest T
    return t, float(edges[t])


def binarize(pm, threshold):
    """1 where the tensor is >= threshold, else 0 (same shape)."""
    vals = np.asarray(pm.values if hasattr(pm, "values") else pm, dtype=float)
    return (vals >= threshold).astype(np.uint8)


def connected_domains(binary, pm=None):
    """Connected components of 1-cells under 4-D von-Neumann adjacency.

    Components are returned with peaks filled from ``pm`` when given (else
    from the binary tensor itself).
    """
    binary = np.asarray(binary)
    vals = np.asarray(pm.values if hasattr(pm, "values") else (pm if pm is not None else binary),
                      dtype=float)
    structure = ndimage.generate_binary_structure(binary.ndim, 1)
    labels, n = ndimage.label(binary, structure=structure)
    out = []
    if n == 0:
        return out
    flat = labels.ravel()
    order = np.argsort(flat, kind="stable")
    sorted_labels = flat[order]
    bounds = np.searchsorted(sorted_labels, np.arange(1, n + 2))
    for lab in range(n):
        sel = order[bounds[lab]:bounds[lab + 1]]
        cells = np.stack(np.unravel_index(sel, binary.shape), axis=1)
        powers = vals[tuple(cells.T)]
        k = int(np.argmax(powers))
        out.append(ConnectedDomain(cells=cells, peak=tuple(int(x) for x in cells[k]),
                                   peak_power=float(powers[k])))
    return out


def connectivity_factor(domain, cfg, tensor_size):
    """2 iff thr_c < |domain| < thr_h (strict), else 0."""
    thr_h = cfg.resolved_thr_h(tensor_size)
    return 2 if cfg.thr_c < domain.size < thr_h else 0


def _checked_tan(az):
    if abs(abs(wrap_angle(az)) - np.pi / 2) < 1e-9:
        raise TangentSingularityError(f"azimuth {az:.6f} rad at a tangent pole")
    return np.tan(az)


def _checked_cot(el):
    if el < 1e-9 or el > np.pi - 1e-9:
        raise TangentSingularityError(f"elevation {el:.6f} rad at a cotangent pole")
    return np.cos(el) / np.sin(el)


def reflection_mismatch(aod_az, aod_el, aoa_az, aoa_el):
    """Angle mismatch Delta; exactly zero for true direct-path geometry."""
    d_el = abs(_checked_cot(aod_el) - _checked_cot(np.pi - aoa_el))
    d_az = abs(_checked_tan(aod_az) - _checked_tan(aoa_az))
    return d_el + d_az


def reflection_factor(path, cfg):
    """0 (direct path) if the mismatch is within thr_tan, else 2 (reflection)."""
    delta = reflection_mismatch(path.aod_az, path.aod_el, path.aoa_az, path.aoa_el)
    return 0 if delta <= cfg.thr_tan else 2


def power_factor(pm, domain, cfg):
    """2 iff the peak's neighbor power ratio marks a grid-aligned path."""
    vals = np.asarray(pm.values if hasattr(pm, "values") else pm, dtype=float)
    peak = domain.peak
    neighbors = []
    for axis in range(4):
        for step in (-1, 1):
            c = list(peak)
            c[axis] += step
            if 0 <= c[axis] < vals.shape[axis]:
                neighbors.append(vals[tuple(c)])
    if len(neighbors) < 2:
        return 0
    lo = min(neighbors)
    hi = max(neighbors)
    if lo <= 0.0:
        return 0
    return 2 if hi / lo < cfg.thr_pow else 0


ALL_FACTORS = frozenset({"connectivity", "reflection", "power"})


def select_user(pm, codebook, cfg, bs_yaw=0.0, user_yaw=0.0, user_id=None,
                factor_mask=ALL_FACTORS):
    """Full selection pipeline for one user's power map.

    ``factor_mask`` lists the active factors; a disabled factor passes every
    domain (ablation semantics).  Peak angles are converted from
    boresight-relative codebook entries to global angles with the yaws before
    the reflection test.
    """
    unknown = set(factor_mask) - ALL_FACTORS
    if unknown:
        raise SelectionError(f"unknown factors in mask: {sorted(unknown)}")
    uid = pm.user_id if (user_id is None and hasattr(pm, "user_id")) else (user_id or 0)
    report = SelectionReport(user_id=uid)
    try:
        _, thr = otsu_threshold(pm, cfg.k_levels)
    except NoThresholdError:
        report.threshold_failed = True
        return report
    binary = binarize(pm, thr)
    domains = connected_domains(binary, pm)
    vals = np.asarray(pm.values if hasattr(pm, "values") else pm)
    size = vals.size

    s_los = 0
    s_nlos = 0
    for dom in domains:
        i, j, p, q = dom.peak
        az_t_l, el_t, az_r_l, el_r = codebook.angles_at((i, j, p, q))
        dp = DomainPath(
            quad=dom.peak,
            aod_az=wrap_angle(az_t_l + bs_yaw), aod_el=el_t,
            aoa_az=wrap_angle(az_r_l + user_yaw), aoa_el=el_r,
        )
        c = connectivity_factor(dom, cfg, size) if "connectivity" in factor_mask else 2
        try:
            r = reflection_factor(dp, cfg)
        except TangentSingularityError:
            dp.excluded = True
            report.domains.append((dom, dp))
            continue
        pw = power_factor(pm, dom, cfg) if "power" in factor_mask else 2
        dp.connectivity = c
        dp.reflection = r
        dp.power = pw
        dp.classification = "los" if r == 0 else "nlos"
        if "reflection" in factor_mask:
            s_los += (c * (2 - r) * pw) // 8
            s_nlos += (c * r * pw) // 8
        else:
            # Reflection gate disabled: every passing domain counts for both
            # pools, so superiority reduces to having any usable domain.
            passed = (c == 2 and pw == 2)
            s_los += 1 if passed else 0
            s_nlos += 1 if passed else 0
        report.domains.append((dom, dp))
    report.s_los = int(s_los)
    report.s_nlos = int(s_nlos)
    return report


def usable_los_domains(report, factor_mask=ALL_FACTORS):
    """Domains admissible as the ranging/localization direct path."""
    out = []
    for dom, dp in report.domains:
        if dp.excluded:
            continue
        if dp.connectivity != 2 or dp.power != 2:
            continue
        if "reflection" in factor_mask and dp.reflection != 0:
            continue
        out.append((dom, dp))
    return out


def usable_nlos_domains(report, factor_mask=ALL_FACTORS):
    """Domains admissible as first-order reflections for triangulation."""
    out = []
    for dom, dp in report.domains:
        if dp.excluded:
            continue
        if dp.connectivity != 2 or dp.power != 2:
            continue
        if "reflection" in factor_mask and dp.reflection != 2:
            continue
        out.append((dom, dp))
    return out


def save_selection_reports(reports, path):
    """Structured-text export: one JSON record per user per line."""
    import json

    with open(path, "w") as fh:
        for r in reports:
            rec = {
                "user_id": r.user_id,
                "s_los": r.s_los,
                "s_nlos": r.s_nlos,
                "s_u": r.s_u,
                "superior": r.superior,
                "threshold_failed": r.threshold_failed,
                "domains": [
                    {
                        "quad": list(dp.quad),
                        "size": dom.size,
                        "peak_power": dom.peak_power,
                        "aod_az": dp.aod_az, "aod_el": dp.aod_el,
                        "aoa_az": dp.aoa_az, "aoa_el": dp.aoa_el,
                        "classification": dp.classification,
                        "connectivity": dp.connectivity,
                        "reflection": dp.reflection,
                        "power": dp.power,
                        "excluded": dp.excluded,
                    }
                    for dom, dp in r.domains
                ],
            }
            fh.write(json.dumps(rec) + "\n")
