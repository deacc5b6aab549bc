"""End-to-end experiment orchestration: simulate, select, reconstruct, ablate.

All randomness flows from one root seed through named substreams (noise,
placement, clustering, phases), so identical configs produce bit-identical
artifacts and single stages can be re-run in isolation.

Two modeling choices live at this layer rather than in the core modules:

* paths of order >= 2 are expanded into a small fan of sub-paths with seeded
  angular jitter (higher-order interactions have larger angle spreads than
  single bounces), which is what gives the connectivity factor oversized
  domains to reject;
* triangulated points whose ray-gap residual exceeds ``max_residual`` are
  dropped and counted, mirroring the behind-origin rejection flag.
"""

from __future__ import annotations

import dataclasses
import json
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .channel import (ArrayConfig, ChannelConfig, Codebook, noise_power_for_snr,
                      power_map_from_paths, save_power_map, subcarrier_phases)
from .geometry import wrap_angle
from .localization import (NoPointsError, PointSet, RangingConfig, build_point_set,
                           merge_point_sets, save_point_set)
from .raytrace import PathParam, dump_paths, trace_paths
from .scene import build_scene, sample_wall_points, scene_to_config
from .selection import (ALL_FACTORS, SelectionConfig, save_selection_reports,
                        select_user)
from .surface import (DegenerateGeometryError, SurfaceError, coverage_fraction,
                      fit_surface, kmeans, point_set_rmse, save_surfaces)


class ExperimentError(ValueError):
    pass


def seed_for(root_seed, name):
    """Deterministic named substream seed derived from the root seed."""
    return np.random.SeedSequence(
        entropy=int(root_seed) & 0xFFFFFFFF,
        spawn_key=(zlib.crc32(name.encode()),),
    )


@dataclass(frozen=True)
class ExperimentConfig:
    scene: dict
    channel: ChannelConfig = ChannelConfig()
    bs_array: ArrayConfig = ArrayConfig(8, 8)
    user_array: ArrayConfig = ArrayConfig(4, 4)
    codebook: Codebook = None
    selection: SelectionConfig = SelectionConfig()
    ranging: RangingConfig = RangingConfig()
    snr_db: float = 20.0
    factors: frozenset = ALL_FACTORS
    seed: int = 0
    max_order: int = 2
    kmeans_k: int = None
    max_residual: float = 0.15
    order2_subrays: int = 16
    order2_spread: float = 0.05
    order2_loss_db: float = 12.0
    ranging_subcarriers: int = 64
    coverage_radius: float = 0.2
    wall_sample_spacing: float = 0.5

    def __post_init__(self):
        if self.codebook is None:
            object.__setattr__(self, "codebook", Codebook.uniform())
        bad = set(self.factors) - ALL_FACTORS
        if bad:
            raise ExperimentError(f"unknown factors: {sorted(bad)}")
        object.__setattr__(self, "factors", frozenset(self.factors))


def _codebook_from_dict(d):
    def grid(entry):
        lo, hi = np.deg2rad(np.asarray(entry["span_deg"], dtype=float))
        n = int(entry["n"])
        return np.array([(lo + hi) / 2]) if n == 1 else np.linspace(lo, hi, n)

    return Codebook(grid(d["tx_az"]), grid(d["tx_el"]), grid(d["rx_az"]), grid(d["rx_el"]))


def config_from_dict(d):
    """Build an ExperimentConfig from a plain dict (see README for schema)."""
    scene = d["scene"]
    if isinstance(scene, str):
        scene = json.loads(Path(scene).read_text())
    kw = {}
    if "channel" in d:
        kw["channel"] = ChannelConfig(**d["channel"])
    for key, cls in (("bs_array", ArrayConfig), ("user_array", ArrayConfig),
                     ("selection", SelectionConfig), ("ranging", RangingConfig)):
        if key in d:
            kw[key] = cls(**d[key])
    if "codebook" in d:
        kw["codebook"] = _codebook_from_dict(d["codebook"])
    for key in ("snr_db", "seed", "max_order", "kmeans_k", "max_residual",
                "order2_subrays", "order2_spread", "coverage_radius",
                "wall_sample_spacing"):
        if key in d:
            kw[key] = d[key]
    if "factors" in d:
        kw["factors"] = frozenset(d["factors"])
    return ExperimentConfig(scene=scene, **kw)


def load_config(path):
    return config_from_dict(json.loads(Path(path).read_text()))


def spread_high_order(paths, rng, n_sub=16, sigma=0.05, loss_db=6.0):
    """Expand order >= 2 paths into angle-jittered sub-path fans.

    The fan models the larger angle spread of higher-order interactions; the
    extra loss models the coherent power lost to diffuse scattering there.
    """
    if n_sub <= 1 or sigma <= 0:
        return list(paths)
    att = 10.0 ** (-loss_db / 20.0)
    out = []
    for p in paths:
        if p.order < 2:
            out.append(p)
            continue
        jitter = rng.normal(0.0, sigma, size=(n_sub, 4))
        for row in jitter:
            out.append(dataclasses.replace(
                p,
                gain=p.gain * att / np.sqrt(n_sub),
                aod_az=wrap_angle(p.aod_az + row[0]),
                aod_el=float(np.clip(p.aod_el + row[1], 1e-6, np.pi - 1e-6)),
                aoa_az=wrap_angle(p.aoa_az + row[2]),
                aoa_el=float(np.clip(p.aoa_el + row[3], 1e-6, np.pi - 1e-6)),
            ))
    return out


@dataclass
class BsSimulation:
    """Per-BS cache of traced paths and swept power maps for every user."""

    cfg: ExperimentConfig
    scene: object
    bs_index: int
    paths: list
    power_maps: list
    noise_power: float
    _phase_cache: dict = field(default_factory=dict)

    def phase_source(self, user_id, quad):
        key = (user_id, tuple(quad))
        if key not in self._phase_cache:
            cfg = self.cfg
            tx = dataclasses.replace(cfg.bs_array, yaw=float(self.scene.bs_yaws[self.bs_index]))
            rx = dataclasses.replace(cfg.user_array, yaw=float(self.scene.user_yaws[user_id]))
            seed = seed_for(cfg.seed, f"phase/bs{self.bs_index}/u{user_id}/q{key[1]}")
            # Ranging reads the full OFDM symbol; the sweep may use fewer
            # subcarriers for speed.
            ch = dataclasses.replace(cfg.channel, n_subcarriers=cfg.ranging_subcarriers)
            self._phase_cache[key] = subcarrier_phases(
                self.paths[user_id], quad, ch, tx, rx, cfg.codebook,
                noise_power=self.noise_power, seed=seed)
        return self._phase_cache[key]


def _simulate_user(args):
    cfg, scene, bs_index, noise_power, u = args
    bs_pos = scene.bs_positions[bs_index]
    lam = cfg.channel.wavelength
    paths = trace_paths(scene, bs_pos, scene.users[u], max_order=cfg.max_order,
                        wavelength=lam)
    rng = np.random.default_rng(seed_for(cfg.seed, f"spread/bs{bs_index}/u{u}"))
    paths = spread_high_order(paths, rng, cfg.order2_subrays, cfg.order2_spread,
                              cfg.order2_loss_db)
    tx = dataclasses.replace(cfg.bs_array, yaw=float(scene.bs_yaws[bs_index]))
    rx = dataclasses.replace(cfg.user_array, yaw=float(scene.user_yaws[u]))
    pm = power_map_from_paths(
        paths, cfg.channel, tx, rx, cfg.codebook, noise_power=noise_power,
        seed=seed_for(cfg.seed, f"noise/bs{bs_index}/u{u}"), user_id=u)
    return paths, pm


def simulate(cfg, scene=None, bs_index=0, processes=None):
    """Trace paths and sweep one power map per user for the given BS.

    Per-user sweeps are independent; ``processes`` > 1 fans them out to a
    worker pool (results are identical to the serial run since every user
    has its own named noise substream).
    """
    if scene is None:
        scene = build_scene(cfg.scene)
    if not (0 <= bs_index < scene.n_bs):
        raise ExperimentError(f"bs_index {bs_index} out of range")
    bs_pos = scene.bs_positions[bs_index]

    d_med = float(np.median(np.linalg.norm(scene.users - bs_pos, axis=1)))
    lam = cfg.channel.wavelength
    p_ref = cfg.bs_array.size * cfg.user_array.size * (lam / (4 * np.pi * d_med)) ** 2
    noise_power = 0.0 if cfg.snr_db is None else noise_power_for_snr(cfg.snr_db, p_ref)

    jobs = [(cfg, scene, bs_index, noise_power, u) for u in range(scene.n_users)]
    if processes is None:
        import os
        processes = min(4, os.cpu_count() or 1) if scene.n_users >= 32 else 1
    if processes > 1:
        import multiprocessing as mp
        with mp.get_context("fork").Pool(processes) as pool:
            results = pool.map(_simulate_user, jobs, chunksize=8)
    else:
        results = [_simulate_user(j) for j in jobs]
    all_paths = [r[0] for r in results]
    pms = [r[1] for r in results]
    return BsSimulation(cfg=cfg, scene=scene, bs_index=bs_index,
                        paths=all_paths, power_maps=pms, noise_power=noise_power)


def select_users(sim, factors=None):
    """Run the selection pipeline on every user of a simulation."""
    cfg = sim.cfg
    mask = cfg.factors if factors is None else frozenset(factors)
    bs_yaw = float(sim.scene.bs_yaws[sim.bs_index])
    reports = []
    for u, pm in enumerate(sim.power_maps):
        reports.append(select_user(pm, cfg.codebook, cfg.selection,
                                   bs_yaw=bs_yaw, user_yaw=float(sim.scene.user_yaws[u]),
                                   user_id=u, factor_mask=mask))
    return reports


def reconstruct_points(sim, reports, factors=None, errors=None):
    """Triangulate, then apply the residual gate; returns (point_set, stats)."""
    cfg = sim.cfg
    mask = cfg.factors if factors is None else frozenset(factors)
    errs = [] if errors is None else errors
    ps = build_point_set(reports, sim.scene.bs_positions[sim.bs_index], sim.bs_index,
                         cfg.ranging, sim.phase_source, factor_mask=mask, errors=errs)
    n_raw = len(ps)
    if cfg.max_residual is not None and len(ps):
        keep = ps.residuals <= cfg.max_residual
        ps = PointSet(points=ps.points[keep], user_ids=ps.user_ids[keep],
                      bs_ids=ps.bs_ids[keep], domain_ids=ps.domain_ids[keep],
                      residuals=ps.residuals[keep])
    stats = {"n_superior": int(sum(r.superior for r in reports)),
             "n_points_raw": n_raw,
             "n_points": len(ps),
             "n_residual_rejected": n_raw - len(ps)}
    return ps, stats


def fit_cluster_surfaces(cfg, scene, ps, errors=None):
    """K-means over the point set, one staged cubic fit per cluster."""
    surfaces = []
    if len(ps) < 10:
        return surfaces
    k = cfg.kmeans_k if cfg.kmeans_k is not None else max(1, min(len(scene.walls), len(ps) // 10))
    k = min(k, len(ps))
    labels, _, _ = kmeans(ps.points, k, seed=seed_for(cfg.seed, "kmeans"))
    for c in range(k):
        pts = ps.points[labels == c]
        if len(pts) < 10:
            if errors is not None:
                errors.append({"stage": "surface", "cluster": c,
                               "error": f"only {len(pts)} points"})
            continue
        try:
            surfaces.append(fit_surface(pts, parameterization="auto"))
        except (SurfaceError, DegenerateGeometryError) as e:
            if errors is not None:
                errors.append({"stage": "surface", "cluster": c, "error": str(e)})
    return surfaces


def run_reconstruction(cfg, sim=None, factors=None, output_dir=None):
    """Full single-BS pipeline; returns a run-report dict."""
    if sim is None:
        sim = simulate(cfg)
    mask = cfg.factors if factors is None else frozenset(factors)
    errors = []
    reports = select_users(sim, mask)
    ps, stats = reconstruct_points(sim, reports, mask, errors)
    try:
        rmse = point_set_rmse(ps, sim.scene)
    except NoPointsError:
        rmse = None
    surfaces = fit_cluster_surfaces(cfg, sim.scene, ps, errors)
    report = {
        "factors": sorted(mask),
        "seed": cfg.seed,
        "rmse": rmse,
        "no_points": rmse is None,
        **stats,
        "n_surfaces": len(surfaces),
        "errors": errors,
    }
    if output_dir is not None:
        out = Path(output_dir)
        out.mkdir(parents=True, exist_ok=True)
        save_point_set(ps, out / "points.txt")
        save_selection_reports(reports, out / "selection.jsonl")
        save_surfaces(surfaces, out / "surfaces.jsonl")
        (out / "summary.json").write_text(json.dumps(report, indent=2))
    report["point_set"] = ps
    report["surfaces"] = surfaces
    report["selection_reports"] = reports
    return report


FACTOR_SUBSETS = [
    ("without-selection", frozenset()),
    ("connectivity", frozenset({"connectivity"})),
    ("reflection", frozenset({"reflection"})),
    ("power", frozenset({"power"})),
    ("connectivity+reflection", frozenset({"connectivity", "reflection"})),
    ("connectivity+power", frozenset({"connectivity", "power"})),
    ("reflection+power", frozenset({"reflection", "power"})),
    ("all", ALL_FACTORS),
]


def run_ablation(cfg, output_dir=None):
    """Run all 8 factor subsets on the identical simulation; 8-row table."""
    sim = simulate(cfg)
    rows = []
    for name, mask in FACTOR_SUBSETS:
        try:
            rep = run_reconstruction(cfg, sim=sim, factors=mask)
            rows.append({"name": name, "factors": sorted(mask), "rmse": rep["rmse"],
                         "n_points": rep["n_points"], "n_superior": rep["n_superior"],
                         "failed": False})
        except Exception as e:  # row-level isolation per the contract
            rows.append({"name": name, "factors": sorted(mask), "rmse": None,
                         "n_points": 0, "n_superior": 0, "failed": True,
                         "error": str(e)})
    if output_dir is not None:
        out = Path(output_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "ablation.json").write_text(json.dumps(rows, indent=2))
        with open(out / "ablation.txt", "w") as fh:
            fh.write(f"{'subset':26s} {'rmse_m':>10s} {'points':>7s} {'superior':>9s}\n")
            for r in rows:
                rmse = "none" if r["rmse"] is None else f"{r['rmse']:.4f}"
                fh.write(f"{r['name']:26s} {rmse:>10s} {r['n_points']:7d} "
                         f"{r['n_superior']:9d}\n")
    return rows


def run_multi_bs(cfg, output_dir=None):
    """Per-BS pipelines over served users, point-set union, and coverage.

    Users attach to their nearest base station; each BS runs selection and
    localization over its own served set, as a deployed system would.
    """
    from .scene import Scene

    scene = build_scene(cfg.scene)
    if scene.n_bs < 2:
        raise ExperimentError("multi-BS run needs at least 2 base stations")
    samples = sample_wall_points(scene, cfg.wall_sample_spacing)
    dists = np.linalg.norm(scene.users[:, None, :] - scene.bs_positions[None, :, :],
                           axis=2)
    serving = np.argmin(dists, axis=1)
    per_bs = []
    point_sets = []
    for b in range(scene.n_bs):
        served = np.where(serving == b)[0]
        sub = Scene(walls=scene.walls, bs_positions=scene.bs_positions,
                    users=scene.users[served], bs_yaws=scene.bs_yaws,
                    user_yaws=scene.user_yaws[served])
        sim = simulate(cfg, scene=sub, bs_index=b)
        reports = select_users(sim)
        ps, stats = reconstruct_points(sim, reports)
        if len(ps):
            ps = PointSet(points=ps.points, user_ids=served[ps.user_ids],
                          bs_ids=ps.bs_ids, domain_ids=ps.domain_ids,
                          residuals=ps.residuals)
        cov = coverage_fraction(ps, samples, cfg.coverage_radius)
        per_bs.append({"bs": b, "n_served": int(len(served)), "coverage": cov, **stats})
        point_sets.append(ps)
    merged = merge_point_sets(point_sets)
    merged_cov = coverage_fraction(merged, samples, cfg.coverage_radius)
    report = {
        "per_bs": per_bs,
        "merged_coverage": merged_cov,
        "merged_points": len(merged),
        "n_samples": len(samples),
    }
    if output_dir is not None:
        out = Path(output_dir)
        out.mkdir(parents=True, exist_ok=True)
        save_point_set(merged, out / "points_merged.txt")
        for b, ps in enumerate(point_sets):
            save_point_set(ps, out / f"points_bs{b}.txt")
        (out / "multi_bs.json").write_text(json.dumps(report, indent=2))
    report["point_sets"] = point_sets
    report["merged"] = merged
    return report


def dump_simulation(sim, output_dir):
    """Write per-user power maps and traced-path dumps."""
    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "scene.json").write_text(json.dumps(scene_to_config(sim.scene), indent=2))
    for u, (paths, pm) in enumerate(zip(sim.paths, sim.power_maps)):
        save_power_map(pm, out / f"pm_bs{sim.bs_index}_u{u:04d}.bin")
        dump_paths(paths, out / f"paths_bs{sim.bs_index}_u{u:04d}.txt")


def default_scene_config(n_users=200, seed=1):
    """Default 4-wall 20 x 20 x 5 m room with a clustered user blob.

    The BS sits south-west facing the user blob; bounces off the south wall
    (y = -10) are the reconstruction workhorse.  Users face back toward the
    BS/wall sector so every relevant path is inside both front hemispheres.
    """
    z0, z1 = 0.0, 5.0
    walls = []
    for verts in (
        [[-10, -10, z0], [10, -10, z0], [10, -10, z1], [-10, -10, z1]],   # y = -10
        [[10, -10, z0], [10, 10, z0], [10, 10, z1], [10, -10, z1]],       # x = +10
        [[10, 10, z0], [-10, 10, z0], [-10, 10, z1], [10, 10, z1]],       # y = +10
        [[-10, 10, z0], [-10, -10, z0], [-10, -10, z1], [-10, 10, z1]],   # x = -10
    ):
        walls.append({"kind": "planar", "vertices": verts, "reflectivity": 0.8})
    return {
        "walls": walls,
        "base_stations": [{"position": [-4.5, -9.05, 2.5], "yaw_deg": -11.0}],
        "users": {
            "mode": "clustered",
            "count": n_users,
            "seed": seed,
            "centers": [[1.5, -9.05, 1.5]],
            "std": [1.5, 0.25, 0.0],
            "region": [[-1.6, 4.6], [-9.55, -8.5], [1.5, 1.5]],
            "yaw_deg": -177.0,
        },
    }


def default_experiment(n_users=200, seed=0, snr_db=20.0):
    """Tuned default experiment (the factor-ablation reference setup)."""
    codebook = _codebook_from_dict({
        "tx_az": {"n": 80, "span_deg": [-30.0, 30.0]},
        "tx_el": {"n": 8, "span_deg": [92.0, 112.0]},
        "rx_az": {"n": 72, "span_deg": [-26.0, 26.0]},
        "rx_el": {"n": 6, "span_deg": [74.0, 88.0]},
    })
    return ExperimentConfig(
        scene=default_scene_config(n_users=n_users, seed=seed + 1),
        channel=ChannelConfig(carrier_hz=28e9, bandwidth_hz=40e6,
                              n_subcarriers=64, n_taps=8),
        bs_array=ArrayConfig(8, 8),
        user_array=ArrayConfig(4, 4),
        codebook=codebook,
        selection=SelectionConfig(k_levels=256, thr_c=3.0, thr_h=60000.0,
                                  thr_tan=0.3, thr_pow=4.0),
        ranging=RangingConfig(d_min=1.0, d_max=40.0, step=0.05, refine_passes=6),
        snr_db=snr_db,
        seed=seed,
    )


def irregular_scene_config(n_users_per_side=150, seed=3):
    """Two-BS scene with a concave parabolic pocket sheet (blind-spot study).

    Minimal geometry for the coverage comparison: two long opposing walls
    (y = -6 and y = +6, 12 m long, 3 m tall) and a vertical cubic sheet
    y = 2.5 + 0.1 x^2 whose pocket opens toward +y.  Each BS hugs one wall
    with a user ribbon swept along it (east-west corridors keep azimuths far
    from the tangent poles).  Odd-indexed users of the north ribbon face the
    pocket instead of the wall, giving BS 2 its pocket-interior points; the
    sheet blocks BS 1 from the pocket entirely, so the two point sets cover
    complementary regions.
    """
    z0, z1 = 0.0, 3.0
    walls = [
        {"kind": "planar", "reflectivity": 0.8,
         "vertices": [[-6, -6, z0], [6, -6, z0], [6, -6, z1], [-6, -6, z1]]},
        {"kind": "planar", "reflectivity": 0.8,
         "vertices": [[-6, 6, z0], [6, 6, z0], [6, 6, z1], [-6, 6, z1]]},
        {"kind": "polynomial", "axis": "y", "reflectivity": 0.8,
         "coeffs": [2.5, 0.0, 0.0, 0.1, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
         "bounds": [[-4.0, 4.0], [z0, z1]]},
    ]
    rng = np.random.default_rng(seed)
    users = []
    yaws = []
    bs0 = [-4.5, -5.3, 2.2]
    bs1 = [4.5, 5.3, 2.2]
    for _ in range(n_users_per_side):
        u = [float(rng.uniform(-1.5, 5.2)), float(rng.uniform(-5.7, -4.9)),
             float(rng.uniform(1.2, 2.3))]
        users.append(u)
        d = np.asarray(bs0) - np.asarray(u)
        yaws.append(float(np.rad2deg(np.arctan2(d[1], d[0]))) - 15.0)
    for i in range(n_users_per_side):
        u = [float(rng.uniform(-5.2, 1.5)), float(rng.uniform(4.9, 5.7)),
             float(rng.uniform(1.2, 2.3))]
        users.append(u)
        d = np.asarray(bs1) - np.asarray(u)
        bias = 15.0 if i % 2 == 0 else -34.0   # wall-facing vs pocket-facing
        yaws.append(float(np.rad2deg(np.arctan2(d[1], d[0]))) + bias)
    return {
        "walls": walls,
        "base_stations": [
            {"position": bs0, "yaw_deg": -11.0},
            {"position": bs1, "yaw_deg": -153.5},
        ],
        "users": {"mode": "explicit", "positions": users, "yaws_deg": yaws},
    }


def irregular_two_bs_experiment(seed=0, snr_db=20.0, n_users_per_side=150):
    codebook = _codebook_from_dict({
        "tx_az": {"n": 40, "span_deg": [-34.0, 34.0]},
        "tx_el": {"n": 8, "span_deg": [86.0, 112.0]},
        "rx_az": {"n": 44, "span_deg": [-45.0, 45.0]},
        "rx_el": {"n": 8, "span_deg": [68.0, 94.0]},
    })
    return ExperimentConfig(
        scene=irregular_scene_config(n_users_per_side=n_users_per_side, seed=seed + 3),
        channel=ChannelConfig(carrier_hz=28e9, bandwidth_hz=40e6,
                              n_subcarriers=48, n_taps=8),
        bs_array=ArrayConfig(8, 8),
        user_array=ArrayConfig(4, 4),
        codebook=codebook,
        selection=SelectionConfig(k_levels=256, thr_c=100.0, thr_h=40000.0,
                                  thr_tan=0.35, thr_pow=4.0),
        ranging=RangingConfig(d_min=0.5, d_max=25.0, step=0.05, refine_passes=6),
        snr_db=snr_db,
        seed=seed,
        max_residual=0.2,
        wall_sample_spacing=0.22,
    )
