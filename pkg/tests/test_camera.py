import numpy as np
import pytest

from isacmap.camera import (DEPTH_SENTINEL, CameraPose, DepthMap, WeatherParams,
                            corrupt_depth, export_dataset, load_dataset,
                            load_depth_map, pixel_rays, render_depth,
                            rotation_matrix, save_depth_map, world_to_camera,
                            camera_to_world)
from isacmap.localization import PointSet
from isacmap.scene import PlanarWall, Scene


class TestRotation:
    def test_zero_angles_identity(self):
        assert np.allclose(rotation_matrix((0, 0, 0)), np.eye(3), atol=1e-15)

    def test_quarter_turn_about_z(self):
        r = rotation_matrix((0, 0, np.pi / 2))
        assert np.allclose(r @ [1, 0, 0], [0, 1, 0], atol=1e-12)

    def test_orthonormal_for_random_angles(self):
        rng = np.random.default_rng(0)
        for _ in range(1000):
            r = rotation_matrix(rng.uniform(-np.pi, np.pi, 3))
            assert np.max(np.abs(r.T @ r - np.eye(3))) < 1e-12
            assert abs(np.linalg.det(r) - 1.0) < 1e-12


class TestWorldToCamera:
    def test_identity_pose(self):
        pose = CameraPose()
        p = np.array([1.0, 2.0, 3.0])
        assert np.allclose(world_to_camera(p, pose), p, atol=1e-15)

    def test_pure_translation(self):
        pose = CameraPose(translation=(1.0, 2.0, 3.0))
        assert np.allclose(world_to_camera([0, 0, 0], pose), [1, 2, 3], atol=1e-15)

    def test_round_trip_random_pose(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            pose = CameraPose(angles=tuple(rng.uniform(-np.pi, np.pi, 3)),
                              translation=tuple(rng.uniform(-5, 5, 3)))
            pts = rng.uniform(-10, 10, (7, 3))
            back = camera_to_world(world_to_camera(pts, pose), pose)
            assert np.max(np.abs(back - pts)) < 1e-12

    def test_isometry(self):
        rng = np.random.default_rng(2)
        pose = CameraPose(angles=(0.3, -0.7, 1.1), translation=(1, -2, 0.5))
        pts = rng.uniform(-10, 10, (10, 3))
        cam = world_to_camera(pts, pose)
        d_world = np.linalg.norm(pts[:, None] - pts[None, :], axis=2)
        d_cam = np.linalg.norm(cam[:, None] - cam[None, :], axis=2)
        assert np.max(np.abs(d_world - d_cam)) < 1e-12


class TestRenderDepth:
    def test_frontoparallel_plane(self):
        wall = PlanarWall(np.array([[5, -50, -50], [5, 50, -50], [5, 50, 50], [5, -50, 50]],
                                   dtype=float))
        scene = Scene(walls=(wall,), bs_positions=np.array([[0, 0, 0.0]]),
                      users=np.zeros((0, 3)))
        pose = CameraPose.looking_at([0, 0, 0], [5, 0, 0], width=16, height=16,
                                     focal_px=16)
        dm = render_depth(scene, pose)
        assert np.allclose(dm.values, 5.0, atol=1e-6)

    def test_empty_scene_all_sentinel(self):
        scene = Scene(walls=(), bs_positions=np.array([[0, 0, 0.0]]), users=np.zeros((0, 3)))
        dm = render_depth(scene, CameraPose())
        assert np.all(dm.values == np.float32(DEPTH_SENTINEL))

    def test_depth_is_camera_z_of_analytic_intersection(self):
        wall = PlanarWall(np.array([[6, -40, -40], [6, 40, -40], [6, 40, 40], [6, -40, 40]],
                                   dtype=float))
        scene = Scene(walls=(wall,), bs_positions=np.array([[0, 0, 0.0]]),
                      users=np.zeros((0, 3)))
        pose = CameraPose.looking_at([1, 2, 0.5], [6, 1, 0.0], width=12, height=12,
                                     focal_px=18)
        dm = render_depth(scene, pose)
        dirs_cam = pixel_rays(pose)
        dirs_world = dirs_cam @ pose.rotation
        origin = pose.center
        # Analytic ray/plane intersection; depth equals camera-frame z = t.
        t = (6.0 - origin[0]) / dirs_world[:, 0]
        expect = t.reshape(12, 12)
        assert np.allclose(dm.values, expect, rtol=1e-6)

    def test_room_corner_supersampling_oracle(self):
        walls = [
            PlanarWall(np.array([[-10, -10, 0], [10, -10, 0], [10, -10, 5], [-10, -10, 5]], dtype=float)),
            PlanarWall(np.array([[10, -10, 0], [10, 10, 0], [10, 10, 5], [10, -10, 5]], dtype=float)),
            PlanarWall(np.array([[10, 10, 0], [-10, 10, 0], [-10, 10, 5], [10, 10, 5]], dtype=float)),
            PlanarWall(np.array([[-10, 10, 0], [-10, -10, 0], [-10, -10, 5], [-10, 10, 5]], dtype=float)),
        ]
        scene = Scene(walls=tuple(walls), bs_positions=np.array([[0, 0, 3.0]]),
                      users=np.zeros((0, 3)))
        pose = CameraPose.looking_at([-2, -2, 2], [2, -10, 2.0], width=24, height=24,
                                     focal_px=56)
        dm = render_depth(scene, pose)

        def cast(dir_world, origin):
            """Independent caster: own plane algebra + 2-D polygon test."""
            best = np.inf
            best_wall = -1
            for wi, w in enumerate(scene.walls):
                v = np.asarray(w.vertices)
                n = np.cross(v[1] - v[0], v[2] - v[0])
                n = n / np.linalg.norm(n)
                denom = dir_world @ n
                if abs(denom) < 1e-12:
                    continue
                t = ((v[0] - origin) @ n) / denom
                if t <= 1e-9 or t >= best:
                    continue
                q = origin + t * dir_world
                ax = int(np.argmax(np.abs(n)))
                keep = [k for k in range(3) if k != ax]
                poly = v[:, keep]
                qq = q[keep]
                inside = True
                sign = 0.0
                for i in range(len(poly)):
                    e = poly[(i + 1) % len(poly)] - poly[i]
                    c = e[0] * (qq[1] - poly[i][1]) - e[1] * (qq[0] - poly[i][0])
                    if sign == 0.0 and abs(c) > 1e-12:
                        sign = np.sign(c)
                    elif c * sign < -1e-9:
                        inside = False
                        break
                if inside:
                    best = t
                    best_wall = wi
            return best, best_wall

        origin = pose.center
        rot = pose.rotation
        checked = agree = 0
        for iy in range(24):
            for ix in range(24):
                # 4x supersampling flags silhouette-edge pixels for exclusion.
                subs = []
                for dx, dy in ((0.25, 0.25), (0.75, 0.25), (0.25, 0.75), (0.75, 0.75)):
                    d_cam = np.array([(ix + dx - pose.cx) / pose.focal_px,
                                      (iy + dy - pose.cy) / pose.focal_px, 1.0])
                    subs.append(cast(d_cam @ rot, origin))
                if any(not np.isfinite(t) for t, _ in subs) or \
                        len({w for _, w in subs}) > 1:
                    continue
                d_cam = np.array([(ix + 0.5 - pose.cx) / pose.focal_px,
                                  (iy + 0.5 - pose.cy) / pose.focal_px, 1.0])
                oracle, _ = cast(d_cam @ rot, origin)
                checked += 1
                agree += abs(dm.values[iy, ix] - oracle) < 1e-6
        assert checked > 300
        assert agree / checked >= 0.99


class TestCorruptDepth:
    def base(self):
        vals = np.full((32, 32), 6.0, dtype=np.float32)
        vals[0, :5] = DEPTH_SENTINEL
        return DepthMap(values=vals)

    def test_identity_when_disabled(self):
        dm = self.base()
        out = corrupt_depth(dm, "sunny", seed=1,
                            params=WeatherParams(noise_sigma=0.0, dropout=0.0))
        assert np.array_equal(out.values, dm.values)

    def test_severity_ordering_over_seeds(self):
        dm = self.base()

        def rmse(weather, seed):
            out = corrupt_depth(dm, weather, seed=seed)
            both = dm.valid_mask & out.valid_mask
            return np.sqrt(np.mean((out.values[both] - dm.values[both]) ** 2))

        worse = 0
        for seed in range(20):
            s, r, n = rmse("sunny", seed), rmse("rainy", seed), rmse("snowy", seed)
            worse += (n > r > s)
        assert worse >= 18

    def test_dropout_pixels_carry_sentinel(self):
        dm = self.base()
        out = corrupt_depth(dm, "snowy", seed=3)
        assert np.any(out.values == np.float32(DEPTH_SENTINEL))
        # Original sentinel pixels stay sentinel.
        assert np.all(out.values[0, :5] == np.float32(DEPTH_SENTINEL))

    def test_deterministic(self):
        dm = self.base()
        a = corrupt_depth(dm, "rainy", seed=9)
        b = corrupt_depth(dm, "rainy", seed=9)
        assert np.array_equal(a.values, b.values)


class TestDatasetExport:
    def scene(self):
        walls = [
            PlanarWall(np.array([[-10, -10, 0], [10, -10, 0], [10, -10, 5], [-10, -10, 5]], dtype=float)),
            PlanarWall(np.array([[10, -10, 0], [10, 10, 0], [10, 10, 5], [10, -10, 5]], dtype=float)),
        ]
        return Scene(walls=tuple(walls), bs_positions=np.array([[0, 0, 3.0]]),
                     users=np.zeros((0, 3)))

    def point_set(self):
        pts = np.array([[3.0, -10.0, 2.0], [10.0, 2.0, 1.5], [5.0, -10.0, 1.0]])
        return PointSet(points=pts, user_ids=[0, 1, 1], bs_ids=[0, 0, 0],
                        domain_ids=[0, 0, 1], residuals=[0.0, 0.0, 0.0])

    def test_depth_file_round_trip(self, tmp_path):
        scene = self.scene()
        pose = CameraPose.looking_at([0, 0, 1.5], [5, -10, 1.5], width=16, height=16)
        dm = render_depth(scene, pose)
        save_depth_map(dm, tmp_path / "d.f32")
        back = load_depth_map(tmp_path / "d.f32")
        assert np.array_equal(back.values, dm.values)
        assert back.pose.focal_px == pose.focal_px

    def test_sample_counting_and_round_trip(self, tmp_path):
        scene = self.scene()
        poses = [CameraPose.looking_at([0, y, 1.5], [5, -10, 1.5], width=16, height=16)
                 for y in np.linspace(-3, 3, 10)]
        manifest = export_dataset(scene, poses, self.point_set(),
                                  ["sunny", "rainy", "snowy"], tmp_path / "ds", seed=4)
        assert manifest["count"] == 30
        m2, samples = load_dataset(tmp_path / "ds")
        assert m2["count"] == 30
        assert len(samples) == 30
        one = export_dataset(scene, poses[:1], self.point_set(), ["sunny"],
                             tmp_path / "one", seed=4)
        assert one["count"] == 1
        _, s1 = load_dataset(tmp_path / "one")
        again = export_dataset(scene, poses[:1], self.point_set(), ["sunny"],
                               tmp_path / "one2", seed=4)
        _, s2 = load_dataset(tmp_path / "one2")
        assert np.array_equal(s1[0]["ground_truth"].values, s2[0]["ground_truth"].values)
        assert np.array_equal(s1[0]["vision"].values, s2[0]["vision"].values)
        assert np.array_equal(s1[0]["points"], s2[0]["points"])

    def test_reprojection_consistency(self, tmp_path):
        scene = self.scene()
        pose = CameraPose.looking_at([0, 0, 1.5], [5, -10, 1.5], width=32, height=32,
                                     focal_px=32)
        export_dataset(scene, [pose], self.point_set(), ["sunny"], tmp_path / "ds", seed=0)
        _, samples = load_dataset(tmp_path / "ds")
        gt = samples[0]["ground_truth"].values
        pts = samples[0]["points"]
        checked = 0
        for p in pts:
            if p[2] <= 0:
                continue
            u = pose.focal_px * p[0] / p[2] + pose.cx
            v = pose.focal_px * p[1] / p[2] + pose.cy
            if not (0 <= u < 32 and 0 <= v < 32):
                continue
            iu, iv = int(u), int(v)
            depth = gt[iv, iu]
            if depth == np.float32(DEPTH_SENTINEL):
                continue
            # Wall points project onto pixels whose rendered depth matches
            # the point's camera z (they lie on the rendered surfaces).
            if abs(depth - p[2]) < 0.25:
                checked += 1
        assert checked >= 1
