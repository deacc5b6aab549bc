"""Synthetic environments: walls, base stations, users, and geometry queries.

A scene is a set of reflecting walls plus base-station and user placements.
Walls come in two kinds:

* ``planar``     -- a convex polygon given by ordered 3-D vertices (meters).
* ``polynomial`` -- a bounded graph surface ``dep = f(u, v)`` where ``f`` is a
  cubic polynomial with coefficients ``c0..c9`` over the monomials
  ``[1, u, v, u^2, u*v, v^2, u^3, u^2 v, u v^2, v^3]``.  The ``axis`` field
  selects the dependent coordinate: ``"z"`` (default) means ``z = f(x, y)``,
  ``"y"`` means ``y = f(x, z)``, ``"x"`` means ``x = f(y, z)``, so vertical
  curved walls are expressible.

Scene config files are JSON (key-value + arrays).  Units are meters;
angles are degrees.  Schema::

    {
      "walls": [
        {"kind": "planar", "vertices": [[x,y,z], ...], "reflectivity": 0.6},
        {"kind": "polynomial", "axis": "z", "coeffs": [c0, ..., c9],
         "bounds": [[u_min, u_max], [v_min, v_max]], "reflectivity": 0.6}
      ],
      "base_stations": [{"position": [x,y,z], "yaw_deg": 0.0}, ...],
      "users": {"mode": "explicit", "positions": [[x,y,z], ...],
                "yaw_deg": 180.0}                     # or "yaws_deg": [...]
             | {"mode": "uniform", "count": 100, "seed": 0,
                "region": [[x0,x1],[y0,y1],[z0,z1]], "yaw_deg": 180.0}
             | {"mode": "clustered", "count": 100, "seed": 0,
                "centers": [[x,y,z], ...], "std": [sx,sy,sz],
                "region": [[x0,x1],[y0,y1],[z0,z1]], "yaw_deg": 180.0}
    }

``yaw_deg`` is the boresight azimuth of the antenna array mounted at that
position (see :mod:`isacmap.channel`).  Scenes are immutable after
construction and safe to share across parallel workers.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .geometry import unit

_COPLANAR_TOL = 1e-9
_MONOMIAL_POWERS = [(0, 0), (1, 0), (0, 1), (2, 0), (1, 1), (0, 2),
                    (3, 0), (2, 1), (1, 2), (0, 3)]


class SceneError(ValueError):
    """Raised for malformed scene configurations or degenerate queries."""


def _poly_eval(coeffs, u, v):
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    out = np.zeros(np.broadcast(u, v).shape)
    for c, (pu, pv) in zip(coeffs, _MONOMIAL_POWERS):
        if c != 0.0:
            out = out + c * (u ** pu) * (v ** pv)
    return out


def _poly_partial(coeffs, du, dv):
    """Coefficients of d^(du+dv) f / du^du dv^dv in the same basis layout."""
    out = np.zeros(10)
    for c, (pu, pv) in zip(coeffs, _MONOMIAL_POWERS):
        qu, qv = pu - du, pv - dv
        if qu < 0 or qv < 0:
            continue
        scale = 1.0
        for k in range(qu + 1, pu + 1):
            scale *= k
        for k in range(qv + 1, pv + 1):
            scale *= k
        out[_MONOMIAL_POWERS.index((qu, qv))] += c * scale
    return out


@dataclass(frozen=True)
class PlanarWall:
    """Convex polygonal reflector; vertices are ordered and coplanar."""

    vertices: np.ndarray
    reflectivity: float = 0.6

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=float)
        if v.ndim != 2 or v.shape[1] != 3 or v.shape[0] < 3:
            raise SceneError("planar wall needs >= 3 three-dimensional vertices")
        if not np.all(np.isfinite(v)):
            raise SceneError("planar wall has non-finite vertices")
        n = np.cross(v[1] - v[0], v[2] - v[0])
        if np.linalg.norm(n) < 1e-12:
            raise SceneError("planar wall is degenerate (zero area)")
        n = n / np.linalg.norm(n)
        offs = (v - v[0]) @ n
        if np.max(np.abs(offs)) > _COPLANAR_TOL:
            raise SceneError(
                f"planar wall vertices not coplanar within {_COPLANAR_TOL:g} m"
            )
        # Orient the normal so the vertex loop is counter-clockwise around it,
        # then require convexity: all edge turns in the same direction.
        area_vec = np.zeros(3)
        for i in range(len(v)):
            area_vec += np.cross(v[i], v[(i + 1) % len(v)])
        if area_vec @ n < 0:
            n = -n
        for i in range(len(v)):
            e0 = v[(i + 1) % len(v)] - v[i]
            e1 = v[(i + 2) % len(v)] - v[(i + 1) % len(v)]
            if np.cross(e0, e1) @ n < -1e-9 * max(1.0, np.linalg.norm(e0) * np.linalg.norm(e1)):
                raise SceneError("planar wall polygon is not convex")
        if self.area <= 0.0:
            raise SceneError("planar wall has zero area")
        if not (0.0 < self.reflectivity <= 1.0):
            raise SceneError("reflectivity must lie in (0, 1]")
        v.setflags(write=False)
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "_normal", n)

    @property
    def kind(self):
        return "planar"

    @property
    def normal(self):
        return self._normal

    @property
    def origin(self):
        return self.vertices[0]

    @property
    def area(self):
        v = np.asarray(self.vertices, dtype=float)
        s = np.zeros(3)
        for i in range(1, len(v) - 1):
            s += np.cross(v[i] - v[0], v[i + 1] - v[0])
        return 0.5 * float(np.linalg.norm(s))

    def signed_distance(self, p):
        return float((np.asarray(p, dtype=float) - self.origin) @ self.normal)

    def mirror_point(self, p):
        p = np.asarray(p, dtype=float)
        return p - 2.0 * self.signed_distance(p) * self.normal

    def contains(self, q, tol=1e-9):
        """In-polygon test for a point already on the wall plane."""
        v = self.vertices
        n = self.normal
        q = np.asarray(q, dtype=float)
        for i in range(len(v)):
            e = v[(i + 1) % len(v)] - v[i]
            if np.cross(e, q - v[i]) @ n < -tol * max(1.0, np.linalg.norm(e)):
                return False
        return True

    def intersect_segment(self, p0, p1, t_lo=0.0, t_hi=1.0):
        """Parameter t of the segment/plane crossing inside the polygon, else None."""
        p0 = np.asarray(p0, dtype=float)
        d = np.asarray(p1, dtype=float) - p0
        denom = d @ self.normal
        if abs(denom) < 1e-15 * max(1.0, np.linalg.norm(d)):
            return None
        t = ((self.origin - p0) @ self.normal) / denom
        if not (t_lo < t < t_hi):
            return None
        if not self.contains(p0 + t * d):
            return None
        return float(t)

    def intersect_rays(self, origin, dirs, t_lo, t_hi):
        """Vectorized segment/polygon intersection; inf where there is none."""
        dirs = np.asarray(dirs, dtype=float)
        origin = np.asarray(origin, dtype=float)
        denom = dirs @ self.normal
        t = np.full(dirs.shape[0], np.inf)
        ok = np.abs(denom) > 1e-15
        tt = np.where(ok, ((self.origin - origin) @ self.normal) / np.where(ok, denom, 1.0), np.inf)
        ok &= (tt > t_lo) & (tt < t_hi)
        if not np.any(ok):
            return t
        q = origin + tt[ok, None] * dirs[ok]
        inside = np.ones(q.shape[0], dtype=bool)
        v = self.vertices
        for i in range(len(v)):
            e = v[(i + 1) % len(v)] - v[i]
            inside &= np.cross(np.broadcast_to(e, q.shape), q - v[i]) @ self.normal >= -1e-9
        sel = np.where(ok)[0][inside]
        t[sel] = tt[ok][inside]
        return t

    def distance(self, p):
        """Euclidean distance from p to the polygon."""
        p = np.asarray(p, dtype=float)
        h = self.signed_distance(p)
        q = p - h * self.normal
        if self.contains(q):
            return abs(h)
        best = np.inf
        v = self.vertices
        for i in range(len(v)):
            a, b = v[i], v[(i + 1) % len(v)]
            e = b - a
            t = np.clip(((p - a) @ e) / (e @ e), 0.0, 1.0)
            best = min(best, float(np.linalg.norm(p - (a + t * e))))
        return best

    def sample_points(self, spacing):
        """Regular grid of surface points with approximately the given spacing."""
        v = self.vertices
        ex = unit(v[1] - v[0])
        ey = np.cross(self.normal, ex)
        uv = (v - v[0]) @ np.stack([ex, ey], axis=1)
        u0, v0 = uv.min(axis=0)
        u1, v1 = uv.max(axis=0)
        us = np.arange(u0 + spacing / 2, u1, spacing)
        vs = np.arange(v0 + spacing / 2, v1, spacing)
        uu, vv = np.meshgrid(us, vs, indexing="ij")
        pts = self.origin + uu.ravel()[:, None] * ex + vv.ravel()[:, None] * ey
        keep = np.array([self.contains(p) for p in pts], dtype=bool)
        return pts[keep]


_AXIS_ORDER = {"z": (0, 1, 2), "y": (0, 2, 1), "x": (1, 2, 0)}


@dataclass(frozen=True)
class PolynomialWall:
    """Cubic graph surface dep = f(u, v) over a bounded rectangle."""

    coeffs: np.ndarray
    bounds: np.ndarray  # [[u_min, u_max], [v_min, v_max]]
    axis: str = "z"
    reflectivity: float = 0.6

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=float)
        b = np.asarray(self.bounds, dtype=float)
        if c.shape != (10,):
            raise SceneError("polynomial wall needs exactly 10 coefficients c0..c9")
        if not np.all(np.isfinite(c)):
            raise SceneError("polynomial wall has non-finite coefficients")
        if b.shape != (2, 2) or not np.all(np.isfinite(b)) or np.any(b[:, 0] >= b[:, 1]):
            raise SceneError("polynomial wall bounds must be finite with min < max")
        if self.axis not in _AXIS_ORDER:
            raise SceneError("polynomial wall axis must be one of 'x', 'y', 'z'")
        if not (0.0 < self.reflectivity <= 1.0):
            raise SceneError("reflectivity must lie in (0, 1]")
        c.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "coeffs", c)
        object.__setattr__(self, "bounds", b)

    @property
    def kind(self):
        return "polynomial"

    def value(self, u, v):
        return _poly_eval(self.coeffs, u, v)

    def point(self, u, v):
        """Map (u, v) parameters to 3-D surface points."""
        u = np.asarray(u, dtype=float)
        v = np.asarray(v, dtype=float)
        dep = self.value(u, v)
        iu, iv, idep = _AXIS_ORDER[self.axis]
        out = np.empty(np.broadcast(u, v).shape + (3,))
        out[..., iu] = u
        out[..., iv] = v
        out[..., idep] = dep
        return out

    def _split(self, p):
        """(u, v, dep) components of 3-D point(s) p."""
        p = np.asarray(p, dtype=float)
        iu, iv, idep = _AXIS_ORDER[self.axis]
        return p[..., iu], p[..., iv], p[..., idep]

    def partials(self, u, v):
        """First partial derivative values (f_u, f_v) at (u, v)."""
        fu = _poly_eval(_poly_partial(self.coeffs, 1, 0), u, v)
        fv = _poly_eval(_poly_partial(self.coeffs, 0, 1), u, v)
        return fu, fv

    def normal_at(self, u, v):
        """Unit normal of the surface at scalar parameters (u, v)."""
        fu, fv = self.partials(u, v)
        iu, iv, idep = _AXIS_ORDER[self.axis]
        n = np.zeros(3)
        n[iu] = -float(fu)
        n[iv] = -float(fv)
        n[idep] = 1.0
        return unit(n)

    def in_bounds(self, u, v, margin=0.0):
        (u0, u1), (v0, v1) = self.bounds
        return (u >= u0 + margin) & (u <= u1 - margin) & (v >= v0 + margin) & (v <= v1 - margin)

    def _ray_poly_coeffs(self, origin, dirs):
        """Cubic coefficients (per ray, highest degree first) of dep(t) - f(u(t), v(t))."""
        origin = np.asarray(origin, dtype=float)
        dirs = np.asarray(dirs, dtype=float)
        nodes = np.array([0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0])
        vals = []
        ou, ov, od = self._split(origin)
        du, dv, dd = self._split(dirs)
        for t in nodes:
            u = ou + t * du
            v = ov + t * dv
            vals.append((od + t * dd) - self.value(u, v))
        y = np.stack(vals, axis=-1)  # (..., 4)
        vand = np.vander(nodes, 4)   # columns t^3, t^2, t, 1
        inv = np.linalg.inv(vand)
        return y @ inv.T  # (..., 4) coefficients [a3, a2, a1, a0]

    def intersect_rays(self, origin, dirs, t_lo, t_hi):
        """Smallest intersection parameter per ray within (t_lo, t_hi); inf if none."""
        dirs = np.asarray(dirs, dtype=float)
        coeffs = np.atleast_2d(self._ray_poly_coeffs(origin, dirs))
        roots = _real_roots_batch(coeffs)
        ou, ov, _ = self._split(np.asarray(origin, dtype=float))
        du, dv, _ = self._split(dirs)
        du = np.atleast_1d(du)
        dv = np.atleast_1d(dv)
        with np.errstate(invalid="ignore"):
            u = ou + roots * du[:, None]
            v = ov + roots * dv[:, None]
            good = (~np.isnan(roots)) & (roots > t_lo) & (roots < t_hi) & self.in_bounds(u, v)
        r = np.where(good, roots, np.inf)
        return np.min(r, axis=1)

    def intersect_segment(self, p0, p1, t_lo=0.0, t_hi=1.0):
        p0 = np.asarray(p0, dtype=float)
        d = np.asarray(p1, dtype=float) - p0
        t = self.intersect_rays(p0[None, :], d[None, :], t_lo, t_hi)[0]
        return None if np.isinf(t) else float(t)

    def distance(self, p, grid=100):
        """Distance from p to the surface: coarse grid then damped Newton."""
        p = np.asarray(p, dtype=float)
        (u0, u1), (v0, v1) = self.bounds
        us = np.linspace(u0, u1, grid)
        vs = np.linspace(v0, v1, grid)
        uu, vv = np.meshgrid(us, vs, indexing="ij")
        pts = self.point(uu, vv)
        d2 = np.sum((pts - p) ** 2, axis=-1)
        k = np.unravel_index(np.argmin(d2), d2.shape)
        u, v = uu[k], vv[k]
        best = float(np.sqrt(d2[k]))

        c = self.coeffs
        cu = _poly_partial(c, 1, 0)
        cv = _poly_partial(c, 0, 1)
        cuu = _poly_partial(c, 2, 0)
        cuv = _poly_partial(c, 1, 1)
        cvv = _poly_partial(c, 0, 2)
        pu, pv, pd = self._split(p)
        for _ in range(40):
            f = _poly_eval(c, u, v)
            fu = _poly_eval(cu, u, v)
            fv = _poly_eval(cv, u, v)
            ru, rv, rd = u - pu, v - pv, f - pd
            gu = 2.0 * (ru + rd * fu)
            gv = 2.0 * (rv + rd * fv)
            fuu = _poly_eval(cuu, u, v)
            fuv = _poly_eval(cuv, u, v)
            fvv = _poly_eval(cvv, u, v)
            huu = 2.0 * (1.0 + fu * fu + rd * fuu)
            huv = 2.0 * (fu * fv + rd * fuv)
            hvv = 2.0 * (1.0 + fv * fv + rd * fvv)
            det = huu * hvv - huv * huv
            if abs(det) < 1e-14:
                break
            su = -(hvv * gu - huv * gv) / det
            sv = -(huu * gv - huv * gu) / det
            step = 1.0
            base = ru * ru + rv * rv + rd * rd
            moved = False
            for _ in range(20):
                un = float(np.clip(u + step * su, u0, u1))
                vn = float(np.clip(v + step * sv, v0, v1))
                rn = self.point(un, vn) - p
                if rn @ rn < base:
                    u, v = un, vn
                    moved = True
                    break
                step *= 0.5
            if not moved or (abs(su) + abs(sv)) * step < 1e-12:
                break
        cand = float(np.linalg.norm(self.point(u, v) - p))
        return min(best, cand)

    def specular_points(self, a, b, grid=64):
        """Stationary points of |a-s| + |s-b| over the bounded surface.

        Returns a list of (point, (u, v)) candidates where a specular bounce
        a -> s -> b is geometrically consistent (both endpoints on the same
        side of the local tangent plane).  Occlusion is the caller's job.
        """
        a = np.asarray(a, dtype=float)
        b = np.asarray(b, dtype=float)
        (u0, u1), (v0, v1) = self.bounds
        us = np.linspace(u0, u1, grid)
        vs = np.linspace(v0, v1, grid)
        uu, vv = np.meshgrid(us, vs, indexing="ij")
        gu, gv = self._path_gradient(uu, vv, a, b)
        found = []
        sgu = np.sign(gu)
        sgv = np.sign(gv)
        # Cells whose corners change sign in both gradient components hold
        # a stationary point candidate.
        cell_u = (sgu[:-1, :-1] * sgu[1:, :-1] <= 0) | (sgu[:-1, :-1] * sgu[:-1, 1:] <= 0) \
            | (sgu[1:, 1:] * sgu[1:, :-1] <= 0) | (sgu[1:, 1:] * sgu[:-1, 1:] <= 0)
        cell_v = (sgv[:-1, :-1] * sgv[1:, :-1] <= 0) | (sgv[:-1, :-1] * sgv[:-1, 1:] <= 0) \
            | (sgv[1:, 1:] * sgv[1:, :-1] <= 0) | (sgv[1:, 1:] * sgv[:-1, 1:] <= 0)
        for i, j in zip(*np.nonzero(cell_u & cell_v)):
            u = 0.5 * (us[i] + us[i + 1])
            v = 0.5 * (vs[j] + vs[j + 1])
            sol = self._newton_stationary(u, v, a, b)
            if sol is None:
                continue
            u, v = sol
            if not self.in_bounds(u, v):
                continue
            s = self.point(u, v)
            if min(np.linalg.norm(s - a), np.linalg.norm(s - b)) < 1e-9:
                continue
            n = self.normal_at(u, v)
            ha = (a - s) @ n
            hb = (b - s) @ n
            if ha * hb <= 1e-12:
                continue
            if any(np.linalg.norm(s - q) < 1e-6 for q, _ in found):
                continue
            found.append((s, (float(u), float(v))))
        return found

    def _path_gradient(self, u, v, a, b):
        s = self.point(u, v)
        fu, fv = self.partials(u, v)
        iu, iv, idep = _AXIS_ORDER[self.axis]
        su = np.zeros(s.shape)
        su[..., iu] = 1.0
        su[..., idep] = fu
        sv = np.zeros(s.shape)
        sv[..., iv] = 1.0
        sv[..., idep] = fv
        ra = s - a
        rb = s - b
        na = np.linalg.norm(ra, axis=-1)
        nb = np.linalg.norm(rb, axis=-1)
        na = np.where(na == 0, 1.0, na)
        nb = np.where(nb == 0, 1.0, nb)
        e = ra / na[..., None] + rb / nb[..., None]
        return np.sum(e * su, axis=-1), np.sum(e * sv, axis=-1)

    def _newton_stationary(self, u, v, a, b, iters=40):
        (u0, u1), (v0, v1) = self.bounds
        h = 1e-6 * max(u1 - u0, v1 - v0)
        for _ in range(iters):
            gu, gv = self._path_gradient(u, v, a, b)
            if abs(gu) + abs(gv) < 1e-12:
                return float(u), float(v)
            gu_u, gv_u = self._path_gradient(u + h, v, a, b)
            gu_v, gv_v = self._path_gradient(u, v + h, a, b)
            j00 = (gu_u - gu) / h
            j10 = (gv_u - gv) / h
            j01 = (gu_v - gu) / h
            j11 = (gv_v - gv) / h
            det = j00 * j11 - j01 * j10
            if abs(det) < 1e-16:
                return None
            du = -(j11 * gu - j01 * gv) / det
            dv = -(j00 * gv - j10 * gu) / det
            u = float(np.clip(u + du, u0, u1))
            v = float(np.clip(v + dv, v0, v1))
            if abs(du) + abs(dv) < 1e-13:
                gu, gv = self._path_gradient(u, v, a, b)
                if abs(gu) + abs(gv) < 1e-9:
                    return float(u), float(v)
                return None
        return None

    def sample_points(self, spacing):
        (u0, u1), (v0, v1) = self.bounds
        us = np.arange(u0 + spacing / 2, u1, spacing)
        vs = np.arange(v0 + spacing / 2, v1, spacing)
        uu, vv = np.meshgrid(us, vs, indexing="ij")
        return self.point(uu.ravel(), vv.ravel())


def _real_roots_batch(coeffs, tol=1e-9):
    """Real roots of batched cubics given coefficients [a3, a2, a1, a0].

    Returns an (N, 3) array padded with NaN.  Rows with vanishing leading
    coefficients fall back to the quadratic / linear formulas.
    """
    coeffs = np.asarray(coeffs, dtype=float)
    n = coeffs.shape[0]
    out = np.full((n, 3), np.nan)
    scale = np.max(np.abs(coeffs), axis=1)
    scale = np.where(scale == 0, 1.0, scale)
    c = coeffs / scale[:, None]
    a3, a2, a1, a0 = c[:, 0], c[:, 1], c[:, 2], c[:, 3]
    eps = 1e-12

    cubic = np.abs(a3) > eps
    if np.any(cubic):
        idx = np.where(cubic)[0]
        b = c[idx, 1:] / c[idx, 0:1]
        comp = np.zeros((len(idx), 3, 3))
        comp[:, 1, 0] = 1.0
        comp[:, 2, 1] = 1.0
        comp[:, 0, 0] = -b[:, 0]
        comp[:, 0, 1] = -b[:, 1]
        comp[:, 0, 2] = -b[:, 2]
        ev = np.linalg.eigvals(comp)
        real = np.abs(ev.imag) < tol * (1.0 + np.abs(ev.real))
        vals = np.where(real, ev.real, np.nan)
        out[idx] = vals

    quad = (~cubic) & (np.abs(a2) > eps)
    if np.any(quad):
        idx = np.where(quad)[0]
        disc = a1[idx] ** 2 - 4.0 * a2[idx] * a0[idx]
        ok = disc >= 0
        sq = np.sqrt(np.where(ok, disc, 0.0))
        r1 = np.where(ok, (-a1[idx] + sq) / (2 * a2[idx]), np.nan)
        r2 = np.where(ok, (-a1[idx] - sq) / (2 * a2[idx]), np.nan)
        out[idx, 0] = r1
        out[idx, 1] = r2

    lin = (~cubic) & (~quad) & (np.abs(a1) > eps)
    if np.any(lin):
        idx = np.where(lin)[0]
        out[idx, 0] = -a0[idx] / a1[idx]
    return out


@dataclass(frozen=True)
class Scene:
    """Immutable environment: walls plus BS and user placements."""

    walls: tuple
    bs_positions: np.ndarray
    users: np.ndarray
    bs_yaws: np.ndarray = None
    user_yaws: np.ndarray = None

    def __post_init__(self):
        bs = np.atleast_2d(np.asarray(self.bs_positions, dtype=float))
        us = np.asarray(self.users, dtype=float).reshape(-1, 3) if np.size(self.users) else np.zeros((0, 3))
        if bs.shape[1] != 3:
            raise SceneError("base station positions must be 3-D")
        if not np.all(np.isfinite(bs)) or not np.all(np.isfinite(us)):
            raise SceneError("all positions must be finite")
        byaw = np.zeros(len(bs)) if self.bs_yaws is None else np.asarray(self.bs_yaws, dtype=float) + 0.0
        uyaw = np.zeros(len(us)) if self.user_yaws is None else np.asarray(self.user_yaws, dtype=float) + 0.0
        if byaw.shape != (len(bs),) or uyaw.shape != (len(us),):
            raise SceneError("yaw arrays must match the number of positions")
        for i, u in enumerate(us):
            d = np.linalg.norm(bs - u, axis=1)
            if np.any(d < 1e-9):
                raise SceneError(f"user {i} at {u.tolist()} coincides with a base station")
        for arr in (bs, us, byaw, uyaw):
            arr.setflags(write=False)
        object.__setattr__(self, "walls", tuple(self.walls))
        object.__setattr__(self, "bs_positions", bs)
        object.__setattr__(self, "users", us)
        object.__setattr__(self, "bs_yaws", byaw)
        object.__setattr__(self, "user_yaws", uyaw)

    @property
    def n_users(self):
        return len(self.users)

    @property
    def n_bs(self):
        return len(self.bs_positions)


def _wall_from_config(entry, index):
    kind = entry.get("kind")
    refl = float(entry.get("reflectivity", 0.6))
    try:
        if kind == "planar":
            return PlanarWall(np.asarray(entry["vertices"], dtype=float), reflectivity=refl)
        if kind == "polynomial":
            return PolynomialWall(
                np.asarray(entry["coeffs"], dtype=float),
                np.asarray(entry["bounds"], dtype=float),
                axis=entry.get("axis", "z"),
                reflectivity=refl,
            )
    except SceneError as e:
        raise SceneError(f"wall {index}: {e}") from None
    raise SceneError(f"wall {index}: unknown kind {kind!r}")


def _clearance(walls, p):
    if not walls:
        return np.inf
    return min(w.distance(p) for w in walls)


def _sample_users(cfg, walls, bs, min_clear):
    mode = cfg.get("mode", "explicit")
    rng = np.random.default_rng(cfg.get("seed", 0))
    count = int(cfg.get("count", 0))
    out = []
    if mode == "uniform":
        region = np.asarray(cfg["region"], dtype=float)
        for _ in range(200 * max(count, 1)):
            if len(out) == count:
                break
            p = rng.uniform(region[:, 0], region[:, 1])
            if _clearance(walls, p) > min_clear and np.all(np.linalg.norm(bs - p, axis=1) > 1e-6):
                out.append(p)
    elif mode == "clustered":
        centers = np.atleast_2d(np.asarray(cfg["centers"], dtype=float))
        std = np.broadcast_to(np.asarray(cfg.get("std", 1.0), dtype=float), (3,))
        region = np.asarray(cfg["region"], dtype=float) if "region" in cfg else None
        for _ in range(500 * max(count, 1)):
            if len(out) == count:
                break
            c = centers[rng.integers(len(centers))]
            p = c + rng.normal(0.0, 1.0, 3) * std
            if region is not None and (np.any(p < region[:, 0]) or np.any(p > region[:, 1])):
                continue
            if _clearance(walls, p) > min_clear and np.all(np.linalg.norm(bs - p, axis=1) > 1e-6):
                out.append(p)
    else:
        raise SceneError(f"unknown user placement mode {mode!r}")
    if len(out) != count:
        raise SceneError(f"could not place {count} users (only {len(out)} fit the region)")
    return np.asarray(out, dtype=float).reshape(-1, 3)


def build_scene(config):
    """Build a validated Scene from a config dict or a JSON file path."""
    if isinstance(config, (str, Path)):
        config = json.loads(Path(config).read_text())
    walls = [_wall_from_config(w, i) for i, w in enumerate(config.get("walls", []))]
    bs_entries = config.get("base_stations", [])
    if not bs_entries:
        raise SceneError("scene needs at least one base station")
    bs = np.asarray([e["position"] for e in bs_entries], dtype=float)
    bs_yaws = np.asarray([np.deg2rad(float(e.get("yaw_deg", 0.0))) for e in bs_entries])

    ucfg = config.get("users", {"mode": "explicit", "positions": []})
    min_clear = float(config.get("min_wall_clearance", 1e-3))
    if ucfg.get("mode", "explicit") == "explicit":
        users = np.asarray(ucfg.get("positions", []), dtype=float).reshape(-1, 3)
        for i, p in enumerate(users):
            c = _clearance(walls, p)
            if c <= min_clear:
                raise SceneError(
                    f"user {i} at {p.tolist()} lies within {min_clear:g} m of a wall "
                    f"(clearance {c:.3g} m)"
                )
    else:
        users = _sample_users(ucfg, walls, bs, min_clear)

    if "yaws_deg" in ucfg:
        uyaw = np.deg2rad(np.asarray(ucfg["yaws_deg"], dtype=float))
    else:
        uyaw = np.full(len(users), np.deg2rad(float(ucfg.get("yaw_deg", 0.0))))
    return Scene(walls=tuple(walls), bs_positions=bs, users=users, bs_yaws=bs_yaws, user_yaws=uyaw)


def scene_to_config(scene):
    """Explicit-form config dict; build_scene(scene_to_config(s)) reproduces s."""
    walls = []
    for w in scene.walls:
        if w.kind == "planar":
            walls.append({"kind": "planar", "vertices": np.asarray(w.vertices).tolist(),
                          "reflectivity": w.reflectivity})
        else:
            walls.append({"kind": "polynomial", "axis": w.axis,
                          "coeffs": np.asarray(w.coeffs).tolist(),
                          "bounds": np.asarray(w.bounds).tolist(),
                          "reflectivity": w.reflectivity})
    return {
        "walls": walls,
        "base_stations": [
            {"position": p.tolist(), "yaw_deg": float(np.rad2deg(y))}
            for p, y in zip(scene.bs_positions, scene.bs_yaws)
        ],
        "users": {
            "mode": "explicit",
            "positions": scene.users.tolist(),
            "yaws_deg": np.rad2deg(scene.user_yaws).tolist(),
        },
    }


def save_scene(scene, path):
    Path(path).write_text(json.dumps(scene_to_config(scene), indent=2))


def nearest_surface_distance(scene, p):
    """Minimum distance from p to any wall surface in the scene."""
    if not scene.walls:
        raise SceneError("scene has no walls: nearest_surface_distance undefined")
    p = np.asarray(p, dtype=float)
    return min(w.distance(p) for w in scene.walls)


def sample_wall_points(scene, spacing=0.5):
    """Ground-truth surface samples across all walls (coverage metric support)."""
    if not scene.walls:
        raise SceneError("scene has no walls")
    parts = [w.sample_points(spacing) for w in scene.walls]
    return np.concatenate([p for p in parts if len(p)], axis=0)


def segment_occluded(scene, p0, p1, t_lo=1e-4, t_hi=None, skip=()):
    """True if any wall blocks the open segment p0 -> p1.

    ``t_lo`` trims both endpoints (as a fraction of the segment) so that a
    bounce point sitting exactly on a wall does not occlude its own legs.
    Walls listed in ``skip`` are ignored entirely.
    """
    if t_hi is None:
        t_hi = 1.0 - t_lo
    for w in scene.walls:
        if any(w is s for s in skip):
            continue
        if w.intersect_segment(p0, p1, t_lo, t_hi) is not None:
            return True
    return False
