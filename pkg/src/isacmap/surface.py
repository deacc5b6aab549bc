"""Point-cloud clustering and staged cubic surface fitting.

Each cluster is fitted with the cubic graph surface

    dep = c0 + c1 u + c2 v + c3 u^2 + c4 u v + c5 v^2
        + c6 u^3 + c7 u^2 v + c8 u v^2 + c9 v^3

by three sequential least-squares stages: the linear terms on the raw
dependent coordinate, the quadratic terms on the stage-1 residual, and the
cubic terms on the stage-2 residual.  The parameterization (which coordinate
is dependent) is either fixed or chosen automatically by design-matrix
conditioning, which is what makes vertical walls fittable.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .localization import NoPointsError
from .scene import nearest_surface_distance


class SurfaceError(ValueError):
    pass


class DegenerateGeometryError(SurfaceError):
    def __init__(self, msg, stage):
        super().__init__(msg)
        self.stage = stage


_AXIS_SPLIT = {"z": (0, 1, 2), "y": (0, 2, 1), "x": (1, 2, 0)}


def kmeans(points, k, seed=0, max_iter=200):
    """Lloyd's algorithm from k-means++ seeding.

    Returns (labels, centroids, inertia_trace) where the trace holds the
    within-cluster sum of squares after every assignment step.  Deterministic
    under a fixed seed.
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2:
        raise SurfaceError("points must be an (n, d) array")
    n = len(pts)
    if not (1 <= k <= n):
        raise SurfaceError(f"need 1 <= k <= n points, got k={k}, n={n}")
    rng = np.random.default_rng(seed)

    centroids = np.empty((k, pts.shape[1]))
    centroids[0] = pts[rng.integers(n)]
    d2 = np.sum((pts - centroids[0]) ** 2, axis=1)
    for i in range(1, k):
        total = d2.sum()
        if total <= 0:
            centroids[i] = pts[rng.integers(n)]
        else:
            centroids[i] = pts[rng.choice(n, p=d2 / total)]
        d2 = np.minimum(d2, np.sum((pts - centroids[i]) ** 2, axis=1))

    labels = np.full(n, -1)
    trace = []
    for _ in range(max_iter):
        dist = np.sum((pts[:, None, :] - centroids[None, :, :]) ** 2, axis=2)
        new_labels = np.argmin(dist, axis=1)
        trace.append(float(dist[np.arange(n), new_labels].sum()))
        if np.array_equal(new_labels, labels):
            break
        labels = new_labels
        for i in range(k):
            sel = labels == i
            if np.any(sel):
                centroids[i] = pts[sel].mean(axis=0)
            else:
                # Empty cluster: reseed at the point farthest from its centroid.
                far = int(np.argmax(dist[np.arange(n), labels]))
                centroids[i] = pts[far]
    return labels, centroids, np.asarray(trace)


@dataclass
class SurfaceModel:
    """Fitted cubic surface: 10 coefficients plus fit metadata."""

    coefficients: np.ndarray
    parameterization: str
    domain: np.ndarray        # [[u_min, u_max], [v_min, v_max]]
    n_points: int
    residual_rms: float

    def evaluate(self, u, v):
        from .scene import _poly_eval
        return _poly_eval(self.coefficients, u, v)


def _design(cols, u, v):
    mono = {"1": np.ones_like(u), "u": u, "v": v, "u2": u * u, "uv": u * v,
            "v2": v * v, "u3": u ** 3, "u2v": u * u * v, "uv2": u * v * v, "v3": v ** 3}
    return np.stack([mono[c] for c in cols], axis=1)


def _stage_solve(A, y, stage, cond_limit=1e10):
    sv = np.linalg.svd(A, compute_uv=False)
    if sv[-1] <= 0 or sv[0] / sv[-1] > cond_limit:
        raise DegenerateGeometryError(
            f"stage {stage} design matrix is rank-deficient "
            f"(condition {np.inf if sv[-1] == 0 else sv[0] / sv[-1]:.2e})", stage)
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    return coef


def fit_surface(points, parameterization="z"):
    """Three-stage least-squares cubic fit of a point cluster.

    ``parameterization`` selects the dependent coordinate ("x", "y", "z") or
    "auto" to pick the best-conditioned option.  Needs >= 10 points; raises
    DegenerateGeometryError (naming the stage) for rank-deficient geometry
    such as clusters collapsed in the chosen independent plane.
    """
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    if len(pts) < 10:
        raise SurfaceError(f"need at least 10 points to fit, got {len(pts)}")

    if parameterization == "auto":
        best, best_cond = None, np.inf
        for axis in ("z", "y", "x"):
            iu, iv, idep = _AXIS_SPLIT[axis]
            u, v = pts[:, iu], pts[:, iv]
            A = _design(["1", "u", "v", "u2", "uv", "v2", "u3", "u2v", "uv2", "v3"], u, v)
            sv = np.linalg.svd(A, compute_uv=False)
            cond = np.inf if sv[-1] == 0 else sv[0] / sv[-1]
            if cond < best_cond:
                best, best_cond = axis, cond
        parameterization = best
    if parameterization not in _AXIS_SPLIT:
        raise SurfaceError(f"unknown parameterization {parameterization!r}")

    iu, iv, idep = _AXIS_SPLIT[parameterization]
    u, v, dep = pts[:, iu], pts[:, iv], pts[:, idep]

    # Cumulative staged regression: each stage solves the growing basis, so
    # later stages correct earlier coefficients instead of fitting the greedy
    # leftover only (which cannot represent pure higher-degree surfaces).
    bases = (["1", "u", "v"],
             ["1", "u", "v", "u2", "uv", "v2"],
             ["1", "u", "v", "u2", "uv", "v2", "u3", "u2v", "uv2", "v3"])
    coeffs = np.zeros(10)
    residual = dep
    for stage, cols in enumerate(bases, start=1):
        A = _design(cols, u, v)
        c = _stage_solve(A, dep, stage=stage)
        residual = dep - A @ c
        coeffs[:len(c)] = c
    domain = np.array([[u.min(), u.max()], [v.min(), v.max()]])
    return SurfaceModel(coefficients=coeffs, parameterization=parameterization,
                        domain=domain, n_points=len(pts),
                        residual_rms=float(np.sqrt(np.mean(residual ** 2))))


def point_set_rmse(point_set, scene):
    """Root-mean-square point-to-nearest-surface distance (meters)."""
    pts = point_set.points if hasattr(point_set, "points") else np.asarray(point_set, dtype=float)
    pts = np.asarray(pts, dtype=float).reshape(-1, 3)
    if len(pts) == 0:
        raise NoPointsError("no points: RMSE undefined (not zero)")
    d = np.array([nearest_surface_distance(scene, p) for p in pts])
    return float(np.sqrt(np.mean(d ** 2)))


def coverage_fraction(point_set, samples, radius=0.2):
    """Fraction of ground-truth samples with an estimated point within radius."""
    pts = point_set.points if hasattr(point_set, "points") else np.asarray(point_set)
    samples = np.asarray(samples, dtype=float)
    if len(samples) == 0:
        raise SurfaceError("no ground-truth samples")
    if len(pts) == 0:
        return 0.0
    hit = 0
    for chunk in np.array_split(samples, max(1, len(samples) // 2048)):
        d2 = np.min(np.sum((chunk[:, None, :] - pts[None, :, :]) ** 2, axis=2), axis=1)
        hit += int(np.sum(d2 <= radius * radius))
    return hit / len(samples)


def save_surfaces(surfaces, path):
    """Structured-text export: one JSON record per fitted surface per line."""
    import json

    with open(path, "w") as fh:
        for s in surfaces:
            fh.write(json.dumps({
                "parameterization": s.parameterization,
                "coefficients": np.asarray(s.coefficients).tolist(),
                "domain": np.asarray(s.domain).tolist(),
                "n_points": s.n_points,
                "residual_rms": s.residual_rms,
            }) + "\n")
