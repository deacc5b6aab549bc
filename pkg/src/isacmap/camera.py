"""Camera-frame transforms, ground-truth depth rendering, and dataset export.

Depth convention: the value stored per pixel is the camera-frame z of the
nearest wall hit (not the ray length).  Pixels that hit nothing carry the
sentinel ``DEPTH_SENTINEL`` (largest float32); metrics and training must
ignore sentinel pixels.

Depth-map file layout: two little-endian int32 (W, H) followed by float32
row-major data (H rows of W values), with a JSON metadata sidecar next to it.
A dataset bundle is a directory::

    bundle/
      manifest.json           # schema, image size, sample list
      samples/<NNNN>/
        ground_truth.f32      # rendered depth
        vision.f32            # weather-corrupted vision estimate
        points.txt            # camera-frame points, 'x y z' per line
        meta.json             # weather, seeds, pose, counts
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .scene import SceneError

DEPTH_SENTINEL = float(np.finfo(np.float32).max)


class CameraError(ValueError):
    pass


def rotation_matrix(angles):
    """R = Rx(a_x) Ry(a_y) Rz(a_z) with standard right-handed axis rotations."""
    ax, ay, az = [float(a) for a in angles]
    cx, sx = np.cos(ax), np.sin(ax)
    cy, sy = np.cos(ay), np.sin(ay)
    cz, sz = np.cos(az), np.sin(az)
    rx = np.array([[1, 0, 0], [0, cx, -sx], [0, sx, cx]])
    ry = np.array([[cy, 0, sy], [0, 1, 0], [-sy, 0, cy]])
    rz = np.array([[cz, -sz, 0], [sz, cz, 0], [0, 0, 1]])
    return rx @ ry @ rz


@dataclass(frozen=True)
class CameraPose:
    """Extrinsics (world -> camera rotation angles + translation) and intrinsics."""

    angles: tuple = (0.0, 0.0, 0.0)
    translation: tuple = (0.0, 0.0, 0.0)
    focal_px: float = 64.0
    width: int = 64
    height: int = 64
    cx: float = None
    cy: float = None

    def __post_init__(self):
        if self.width < 8 or self.height < 8:
            raise CameraError("image size must be at least 8x8")
        if self.focal_px <= 0:
            raise CameraError("focal length must be positive")
        r = rotation_matrix(self.angles)
        if np.max(np.abs(r.T @ r - np.eye(3))) > 1e-12 or abs(np.linalg.det(r) - 1) > 1e-12:
            raise CameraError("rotation is not orthonormal with det +1")
        if self.cx is None:
            object.__setattr__(self, "cx", self.width / 2.0)
        if self.cy is None:
            object.__setattr__(self, "cy", self.height / 2.0)

    @property
    def rotation(self):
        return rotation_matrix(self.angles)

    @property
    def center(self):
        """Camera center in world coordinates."""
        r = self.rotation
        return -r.T @ np.asarray(self.translation, dtype=float)

    @staticmethod
    def looking_at(position, target, focal_px=64.0, width=64, height=64):
        """Pose whose +z axis points from ``position`` toward ``target``.

        Convenience constructor: camera x is horizontal-right, y points down.
        """
        position = np.asarray(position, dtype=float)
        fwd = np.asarray(target, dtype=float) - position
        n = np.linalg.norm(fwd)
        if n == 0:
            raise CameraError("camera position equals its target")
        fwd = fwd / n
        up = np.array([0.0, 0.0, 1.0])
        if abs(fwd @ up) > 0.999:
            up = np.array([0.0, 1.0, 0.0])
        right = np.cross(fwd, -up)
        right /= np.linalg.norm(right)
        down = np.cross(fwd, right)
        r = np.stack([right, down, fwd], axis=0)
        # Recover Rx Ry Rz angles from the matrix (ZYX of the transpose order).
        ay = np.arcsin(np.clip(r[0, 2], -1.0, 1.0))
        ax = np.arctan2(-r[1, 2], r[2, 2])
        az = np.arctan2(-r[0, 1], r[0, 0])
        t = -r @ position
        return CameraPose(angles=(float(ax), float(ay), float(az)),
                          translation=tuple(float(x) for x in t),
                          focal_px=focal_px, width=width, height=height)


def world_to_camera(points, pose):
    """Apply the homogeneous transform [R T; 0 1] to world point(s)."""
    p = np.asarray(points, dtype=float)
    single = p.ndim == 1
    p = np.atleast_2d(p)
    out = p @ pose.rotation.T + np.asarray(pose.translation, dtype=float)
    return out[0] if single else out


def camera_to_world(points, pose):
    """Inverse of :func:`world_to_camera`."""
    p = np.asarray(points, dtype=float)
    single = p.ndim == 1
    p = np.atleast_2d(p)
    out = (p - np.asarray(pose.translation, dtype=float)) @ pose.rotation
    return out[0] if single else out


@dataclass
class DepthMap:
    """W x H grid of metric depths with pose metadata."""

    values: np.ndarray
    pose: CameraPose = None
    sentinel: float = DEPTH_SENTINEL

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float32)
        if v.ndim != 2:
            raise CameraError("depth map must be 2-D")
        valid = v != np.float32(self.sentinel)
        if np.any(~np.isfinite(v[valid])) or np.any(v[valid] <= 0):
            raise CameraError("finite depth entries must be positive")
        self.values = v

    @property
    def valid_mask(self):
        return self.values != np.float32(self.sentinel)


def pixel_rays(pose):
    """Camera-frame pixel ray directions with unit z, shape (H*W, 3)."""
    xs = (np.arange(pose.width) + 0.5 - pose.cx) / pose.focal_px
    ys = (np.arange(pose.height) + 0.5 - pose.cy) / pose.focal_px
    xx, yy = np.meshgrid(xs, ys)           # (H, W)
    d = np.stack([xx, yy, np.ones_like(xx)], axis=-1)
    return d.reshape(-1, 3)


def render_depth(scene, pose):
    """Per-pixel nearest-wall camera-frame z via pinhole ray casting."""
    dirs_cam = pixel_rays(pose)
    dirs_world = dirs_cam @ pose.rotation   # R^T applied row-wise
    origin = pose.center
    t = np.full(len(dirs_world), np.inf)
    for wall in scene.walls:
        tw = wall.intersect_rays(origin, dirs_world, 1e-9, np.inf)
        t = np.minimum(t, tw)
    depth = np.where(np.isfinite(t), t, DEPTH_SENTINEL).astype(np.float32)
    return DepthMap(values=depth.reshape(pose.height, pose.width), pose=pose)


@dataclass(frozen=True)
class WeatherParams:
    noise_sigma: float
    dropout: float
    n_streaks: int = 0
    scale_bias: tuple = (1.0, 1.0)


WEATHER_PRESETS = {
    "sunny": WeatherParams(noise_sigma=0.05, dropout=0.02),
    "rainy": WeatherParams(noise_sigma=0.20, dropout=0.10, n_streaks=12),
    "snowy": WeatherParams(noise_sigma=0.45, dropout=0.25, scale_bias=(0.7, 1.3)),
}


def corrupt_depth(depth, weather, seed=0, params=None):
    """Parametric degradation emulating a weather-impaired vision estimate.

    Multiplicative Gaussian noise, pixel dropout (to the sentinel), optional
    vertical streak occlusions, and a global scale bias.  Deterministic under
    the seed.
    """
    if params is None:
        if weather not in WEATHER_PRESETS:
            raise CameraError(f"unknown weather {weather!r}")
        params = WEATHER_PRESETS[weather]
    rng = np.random.default_rng(seed)
    v = depth.values.astype(np.float64).copy()
    h, w = v.shape
    valid = depth.valid_mask

    scale = rng.uniform(*params.scale_bias) if params.scale_bias != (1.0, 1.0) else 1.0
    noise = rng.standard_normal(v.shape)
    v[valid] = np.maximum(v[valid] * scale * (1.0 + params.noise_sigma * noise[valid]), 1e-4)

    drop = rng.random(v.shape) < params.dropout
    v[drop] = DEPTH_SENTINEL
    for _ in range(params.n_streaks):
        col = int(rng.integers(0, w))
        width = int(rng.integers(1, 3))
        top = int(rng.integers(0, h // 2))
        bottom = int(rng.integers(h // 2, h))
        v[top:bottom, col:min(col + width, w)] = DEPTH_SENTINEL
    out = v.astype(np.float32)
    out[~valid] = DEPTH_SENTINEL
    return DepthMap(values=out, pose=depth.pose)


def save_depth_map(dm, path, metadata=None):
    """Binary f32 export with (W, H) int32 header plus a JSON sidecar."""
    path = Path(path)
    h, w = dm.values.shape
    with open(path, "wb") as fh:
        fh.write(np.asarray([w, h], dtype="<i4").tobytes())
        fh.write(np.ascontiguousarray(dm.values, dtype="<f4").tobytes())
    meta = {"width": w, "height": h, "sentinel": dm.sentinel}
    if dm.pose is not None:
        meta["pose"] = {
            "angles": list(dm.pose.angles),
            "translation": list(dm.pose.translation),
            "focal_px": dm.pose.focal_px,
            "cx": dm.pose.cx, "cy": dm.pose.cy,
        }
    if metadata:
        meta.update(metadata)
    path.with_suffix(path.suffix + ".json").write_text(json.dumps(meta, indent=2))


def load_depth_map(path):
    path = Path(path)
    raw = path.read_bytes()
    w, h = np.frombuffer(raw[:8], dtype="<i4")
    vals = np.frombuffer(raw[8:], dtype="<f4").reshape(int(h), int(w)).copy()
    meta_path = path.with_suffix(path.suffix + ".json")
    pose = None
    if meta_path.exists():
        meta = json.loads(meta_path.read_text())
        if "pose" in meta:
            p = meta["pose"]
            pose = CameraPose(angles=tuple(p["angles"]), translation=tuple(p["translation"]),
                              focal_px=p["focal_px"], width=int(w), height=int(h),
                              cx=p["cx"], cy=p["cy"])
    return DepthMap(values=vals, pose=pose)


def export_dataset(scenes, poses, point_sets, weathers, out_dir, seed=0):
    """Write a fusion dataset bundle: one sample per (pose, weather) pair.

    ``scenes`` and ``point_sets`` may be single objects (shared) or lists
    matching ``poses``.  Returns the manifest dict.
    """
    out = Path(out_dir)
    if not isinstance(scenes, (list, tuple)):
        scenes = [scenes] * len(poses)
    if not isinstance(point_sets, (list, tuple)):
        point_sets = [point_sets] * len(poses)
    if not (len(scenes) == len(poses) == len(point_sets)):
        raise CameraError("scenes, poses and point_sets must have matching counts")
    (out / "samples").mkdir(parents=True, exist_ok=True)

    samples = []
    idx = 0
    for pi, (scene, pose, ps) in enumerate(zip(scenes, poses, point_sets)):
        gt = render_depth(scene, pose)
        cam_pts = world_to_camera(ps.points, pose) if len(ps) else np.zeros((0, 3))
        for weather in weathers:
            sdir = out / "samples" / f"{idx:04d}"
            sdir.mkdir(parents=True, exist_ok=True)
            sample_seed = seed * 100003 + idx
            vision = corrupt_depth(gt, weather, seed=sample_seed)
            save_depth_map(gt, sdir / "ground_truth.f32")
            save_depth_map(vision, sdir / "vision.f32", metadata={"weather": weather})
            with open(sdir / "points.txt", "w") as fh:
                for p in cam_pts:
                    fh.write(f"{float(p[0])!r} {float(p[1])!r} {float(p[2])!r}\n")
            meta = {
                "weather": weather,
                "seed": sample_seed,
                "pose_index": pi,
                "n_points": int(len(cam_pts)),
                "user_count": int(len(np.unique(ps.user_ids))) if len(ps) else 0,
            }
            (sdir / "meta.json").write_text(json.dumps(meta, indent=2))
            samples.append({"dir": f"samples/{idx:04d}", **meta})
            idx += 1
    manifest = {
        "format": "isacmap-fusion-bundle-v1",
        "width": poses[0].width if poses else 0,
        "height": poses[0].height if poses else 0,
        "sentinel": DEPTH_SENTINEL,
        "count": idx,
        "samples": samples,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2))
    return manifest


def load_dataset(bundle_dir):
    """Load a dataset bundle back into memory (bit-exact round trip)."""
    out = Path(bundle_dir)
    manifest = json.loads((out / "manifest.json").read_text())
    samples = []
    for rec in manifest["samples"]:
        sdir = out / rec["dir"]
        gt = load_depth_map(sdir / "ground_truth.f32")
        vision = load_depth_map(sdir / "vision.f32")
        lines = [l.split() for l in (sdir / "points.txt").read_text().splitlines() if l.strip()]
        pts = np.asarray(lines, dtype=float).reshape(-1, 3) if lines else np.zeros((0, 3))
        meta = json.loads((sdir / "meta.json").read_text())
        samples.append({"ground_truth": gt, "vision": vision, "points": pts, "meta": meta})
    return manifest, samples
