"""Command-line orchestration.

Subcommands::

    isacmap simulate        -c cfg.json -o out/   # power maps + path dumps
    isacmap select          -c cfg.json -o out/   # per-user selection reports
    isacmap reconstruct     -c cfg.json -o out/   # points + surfaces + RMSE
    isacmap ablate          -c cfg.json -o out/   # 8-row factor-subset table
    isacmap multi-bs        -c cfg.json -o out/   # per-BS + merged coverage
    isacmap export-dataset  -c cfg.json -o out/   # fusion dataset bundle
    isacmap eval            --points points.txt --scene scene.json

Omitting ``-c`` uses the built-in default experiment.  Exit code is 0 only
when the run completed without row/stage failures.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import experiments
from .camera import CameraPose, export_dataset
from .localization import NoPointsError, load_point_set
from .scene import build_scene, sample_wall_points
from .surface import coverage_fraction, point_set_rmse


def _load_cfg(args):
    if args.config:
        return experiments.load_config(args.config)
    cfg = experiments.default_experiment(seed=args.seed)
    return cfg


def _cmd_simulate(args):
    cfg = _load_cfg(args)
    sim = experiments.simulate(cfg, bs_index=args.bs)
    experiments.dump_simulation(sim, args.output)
    print(f"simulated {sim.scene.n_users} users (bs {args.bs}) -> {args.output}")
    return 0


def _cmd_select(args):
    from .selection import save_selection_reports

    cfg = _load_cfg(args)
    sim = experiments.simulate(cfg, bs_index=args.bs)
    reports = experiments.select_users(sim)
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    save_selection_reports(reports, out / "selection.jsonl")
    n_sup = sum(r.superior for r in reports)
    print(f"{n_sup}/{len(reports)} superior users -> {out / 'selection.jsonl'}")
    return 0


def _cmd_reconstruct(args):
    cfg = _load_cfg(args)
    report = experiments.run_reconstruction(cfg, output_dir=args.output)
    rmse = "no points" if report["rmse"] is None else f"{report['rmse']:.4f} m"
    print(f"points: {report['n_points']}  superior: {report['n_superior']}  rmse: {rmse}")
    if report["errors"]:
        print(f"{len(report['errors'])} per-domain errors recorded in summary.json")
    return 0 if report["rmse"] is not None else 1


def _cmd_ablate(args):
    cfg = _load_cfg(args)
    rows = experiments.run_ablation(cfg, output_dir=args.output)
    print(f"{'subset':26s} {'rmse_m':>10s} {'points':>7s} {'superior':>9s}")
    for r in rows:
        rmse = "none" if r["rmse"] is None else f"{r['rmse']:.4f}"
        print(f"{r['name']:26s} {rmse:>10s} {r['n_points']:7d} {r['n_superior']:9d}")
    return 1 if any(r["failed"] for r in rows) else 0


def _cmd_multi_bs(args):
    cfg = _load_cfg(args)
    if args.config is None:
        cfg = experiments.irregular_two_bs_experiment(seed=args.seed)
    report = experiments.run_multi_bs(cfg, output_dir=args.output)
    for row in report["per_bs"]:
        print(f"bs {row['bs']}: coverage {row['coverage']:.3f} points {row['n_points']}")
    print(f"merged: coverage {report['merged_coverage']:.3f} points {report['merged_points']}")
    return 0


def _cmd_export_dataset(args):
    cfg = _load_cfg(args)
    rep = experiments.run_reconstruction(cfg)
    scene = build_scene(cfg.scene)
    rng = np.random.default_rng(experiments.seed_for(cfg.seed, "dataset-poses"))
    poses = []
    lo = scene.users.min(axis=0) if scene.n_users else np.array([-5.0, -5.0, 1.5])
    hi = scene.users.max(axis=0) if scene.n_users else np.array([5.0, 5.0, 1.5])
    for _ in range(args.poses):
        pos = rng.uniform(lo, hi)
        pos[2] = 1.5
        target = scene.walls[int(rng.integers(len(scene.walls)))].sample_points(2.0)
        target = target[int(rng.integers(len(target)))]
        poses.append(CameraPose.looking_at(pos, target, focal_px=args.size,
                                           width=args.size, height=args.size))
    manifest = export_dataset(scene, poses, rep["point_set"],
                              args.weathers.split(","), args.output,
                              seed=cfg.seed)
    print(f"wrote {manifest['count']} samples -> {args.output}")
    return 0


def _cmd_eval(args):
    scene = build_scene(args.scene)
    ps = load_point_set(args.points)
    try:
        rmse = point_set_rmse(ps, scene)
        print(f"points: {len(ps)}  rmse: {rmse:.4f} m")
    except NoPointsError:
        print("points: 0  rmse: no points")
        return 1
    samples = sample_wall_points(scene, args.sample_spacing)
    cov = coverage_fraction(ps, samples, args.radius)
    print(f"coverage ({args.radius:.2f} m): {cov:.3f} over {len(samples)} samples")
    return 0


def main(argv=None):
    parser = argparse.ArgumentParser(prog="isacmap", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, output=True):
        p.add_argument("-c", "--config", default=None, help="experiment config JSON")
        p.add_argument("--seed", type=int, default=0, help="root seed for the default config")
        p.add_argument("--bs", type=int, default=0, help="base-station index")
        if output:
            p.add_argument("-o", "--output", required=True, help="output directory")

    common(sub.add_parser("simulate", help="trace paths and sweep power maps"))
    common(sub.add_parser("select", help="threshold/factor analysis per user"))
    common(sub.add_parser("reconstruct", help="full single-BS reconstruction"))
    common(sub.add_parser("ablate", help="factor-subset ablation table"))
    common(sub.add_parser("multi-bs", help="two-BS merged reconstruction"))

    p = sub.add_parser("export-dataset", help="write a fusion dataset bundle")
    common(p)
    p.add_argument("--poses", type=int, default=12)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--weathers", default="sunny,rainy,snowy")

    p = sub.add_parser("eval", help="score a point-set file against a scene")
    p.add_argument("--points", required=True)
    p.add_argument("--scene", required=True)
    p.add_argument("--radius", type=float, default=0.2)
    p.add_argument("--sample-spacing", type=float, default=0.5)

    args = parser.parse_args(argv)
    handlers = {
        "simulate": _cmd_simulate,
        "select": _cmd_select,
        "reconstruct": _cmd_reconstruct,
        "ablate": _cmd_ablate,
        "multi-bs": _cmd_multi_bs,
        "export-dataset": _cmd_export_dataset,
        "eval": _cmd_eval,
    }
    return handlers[args.command](args)


if __name__ == "__main__":
    sys.exit(main())
