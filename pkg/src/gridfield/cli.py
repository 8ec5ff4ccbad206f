"""Operator entry points: data generation, training stages, rendering,
benchmarks and the render service.

Every command is driven by one JSON config file; command-line flags are
overrides and the resolved configuration is recorded into the emitted
report, so a run is reproducible from its report alone. Verbosity comes
from the ``GRIDFIELD_LOG`` environment variable (debug/info/warning).
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import bench, io as gio
from .core import PositionalEncoding
from .grid import grid_resolution_rule, init_network_grid
from .occupancy import extract_occupancy, occupancy_resolution
from .render import Camera, RenderConfig, look_at_pose, render_image
from .scene import generate_toy_dataset, random_toy_scene, specular_toy_scene, standard_toy_scene
from .train import (
    TrainConfig,
    density_probe,
    evaluate_psnr,
    run_distill_loop,
    train_photometric_loop,
)

log = logging.getLogger("gridfield.cli")


def _setup_logging():
    level = os.environ.get("GRIDFIELD_LOG", "info").upper()
    logging.basicConfig(level=getattr(logging, level, logging.INFO), format="%(name)s: %(message)s")


def _load_config(args) -> dict:
    cfg = gio.load_config(args.config) if args.config else {}
    cfg.setdefault("scene", {})
    cfg.setdefault("dataset", {})
    cfg.setdefault("train", {})
    cfg.setdefault("render", {})
    if args.seed is not None:
        cfg["train"]["seed"] = args.seed
        cfg["dataset"].setdefault("seed", args.seed)
    return cfg


def _train_config(cfg: dict) -> TrainConfig:
    base = cfg["train"].copy()
    preset = base.pop("preset", None)
    tc = TrainConfig.desk_preset() if preset == "desk" else TrainConfig()
    known = {f.name for f in dataclasses.fields(TrainConfig)}
    unknown = set(base) - known
    if unknown:
        raise ValueError(f"unknown train config keys: {sorted(unknown)}")
    return dataclasses.replace(tc, **base)


def _render_config(cfg: dict) -> RenderConfig:
    known = {"k", "epsilon", "background", "ert_chunk", "stratified"}
    body = cfg["render"]
    unknown = set(body) - known
    if unknown:
        raise ValueError(f"unknown render config keys: {sorted(unknown)}")
    body = dict(body)
    if "background" in body:
        body["background"] = tuple(body["background"])
    return RenderConfig(**body)


def _scene_from_config(cfg: dict):
    body = cfg["scene"]
    name = body.get("name", "standard")
    if name == "standard":
        return standard_toy_scene()
    if name == "specular":
        return specular_toy_scene()
    if name == "random":
        return random_toy_scene(body.get("seed", 0), body.get("n_primitives", 5))
    raise ValueError(f"unknown scene name {name!r} (standard/specular/random)")


def _report(out_dir: Path, name: str, payload: dict, cfg: dict, args):
    payload = dict(payload)
    payload["resolved_config"] = cfg
    payload["overrides"] = {k: v for k, v in vars(args).items() if k not in ("func",)}
    gio.save_json(out_dir / name, payload)


def cmd_gen_data(args) -> int:
    cfg = _load_config(args)
    scene = _scene_from_config(cfg)
    d = cfg["dataset"]
    ds = generate_toy_dataset(
        scene,
        n_views=d.get("n_views", 120),
        image_size=d.get("image_size", 128),
        seed=d.get("seed", 0),
        n_test=d.get("n_test"),
        oracle_samples=d.get("oracle_samples"),
        background=tuple(cfg["render"].get("background", (1.0, 1.0, 1.0))),
    )
    # Ground truth snaps to the 8-bit grid so the on-disk round trip is exact.
    ds.images = [gio.quantize_u8(im) for im in ds.images]
    out = Path(args.out)
    gio.write_dataset(ds, out)
    _report(out, "gen-data-report.json", {"n_views": len(ds.images)}, cfg, args)
    print(f"wrote {len(ds.images)} views to {out}")
    return 0


def cmd_train_teacher(args) -> int:
    cfg = _load_config(args)
    tc = _train_config(cfg)
    if args.steps is not None:
        tc = dataclasses.replace(tc, teacher_steps=args.steps)
    ds = gio.load_dataset(args.data)
    enc = PositionalEncoding()
    rng_root = np.random.SeedSequence(tc.seed)
    keys = rng_root.spawn(2)
    teacher = init_network_grid(
        ds.aabb, (1, 1, 1), seed=int(keys[0].generate_state(1)[0]),
        arch=tc.teacher_architecture(enc), encoding=enc,
    )
    curve: list = []
    train_photometric_loop(
        teacher, ds, tc, tc.teacher_steps, np.random.default_rng(keys[1]), None, False, "teacher",
        curve, noise_std=tc.density_noise_std,
    )
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    gio.save_checkpoint(out, teacher, None)
    for rec in curve:
        gio.append_jsonl(out.with_suffix(".curve.jsonl"), rec)
    _report(out.parent, "train-teacher-report.json", {"checkpoint": str(out), "steps": tc.teacher_steps}, cfg, args)
    print(f"teacher checkpoint: {out}")
    return 0


def cmd_distill(args) -> int:
    cfg = _load_config(args)
    tc = _train_config(cfg)
    rc = _render_config(cfg)
    if args.steps is not None:
        tc = dataclasses.replace(tc, distill_steps=args.steps)
    teacher, _ = gio.load_checkpoint(args.teacher)
    resolution = grid_resolution_rule(teacher.aabb, tc.grid_max_dim)
    occ = extract_occupancy(
        density_probe(teacher),
        teacher.aabb,
        occupancy_resolution(resolution, tc.occupancy_factor),
        tau=tc.occupancy_tau,
        workers=args.workers,
    )
    keys = np.random.SeedSequence(tc.seed).spawn(4)
    student = init_network_grid(
        teacher.aabb, resolution, seed=int(keys[2].generate_state(1)[0]),
        arch=tc.student_architecture(teacher.encoding), encoding=teacher.encoding,
    )
    delta_ref = tc.distill_delta or teacher.aabb.diagonal / rc.k
    curve: list = []
    first, last = run_distill_loop(student, teacher, tc, delta_ref, np.random.default_rng(keys[3]), curve)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    gio.save_checkpoint(out, student, occ)
    for rec in curve:
        gio.append_jsonl(out.with_suffix(".curve.jsonl"), rec)
    _report(
        out.parent,
        "distill-report.json",
        {"checkpoint": str(out), "loss_first": first, "loss_last": last,
         "occupancy_fraction": occ.occupied_fraction()},
        cfg,
        args,
    )
    print(f"student checkpoint: {out}")
    return 0


def cmd_finetune(args) -> int:
    cfg = _load_config(args)
    tc = _train_config(cfg)
    rc = _render_config(cfg)
    if args.steps is not None:
        tc = dataclasses.replace(tc, finetune_steps=args.steps)
    ds = gio.load_dataset(args.data)
    student, occ = gio.load_checkpoint(args.checkpoint)
    if occ is None:
        raise ValueError(f"{args.checkpoint}: checkpoint has no occupancy grid; distill first")
    keys = np.random.SeedSequence(tc.seed).spawn(5)
    curve: list = []
    train_photometric_loop(
        student, ds, tc, tc.finetune_steps, np.random.default_rng(keys[4]), occ, True, "finetune", curve
    )
    psnr = evaluate_psnr(student, ds, rc, occ=occ, seed=tc.seed, workers=args.workers)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    gio.save_checkpoint(out, student, occ)
    for rec in curve:
        gio.append_jsonl(out.with_suffix(".curve.jsonl"), rec)
    _report(out.parent, "finetune-report.json", {"checkpoint": str(out), "psnr_test": psnr}, cfg, args)
    print(f"fine-tuned checkpoint: {out} (held-out PSNR {psnr:.2f} dB)")
    return 0


def cmd_render(args) -> int:
    cfg = _load_config(args)
    rc = _render_config(cfg)
    grid, occ = gio.load_checkpoint(args.checkpoint)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    seed = args.seed if args.seed is not None else 0
    views: list[tuple[str, Camera]] = []
    if args.data:
        ds = gio.load_dataset(args.data)
        for i in ds.indices(args.split):
            views.append((f"{args.split}_{i:04d}", ds.cameras[i]))
    else:
        radius = 2.2 * 0.5 * grid.aabb.diagonal
        size = args.orbit_size
        focal = 0.5 * size / np.tan(np.radians(30.0))
        for i in range(args.orbit):
            az = 2 * np.pi * i / args.orbit
            eye = grid.aabb.center + radius * np.array([np.cos(az), np.sin(az), 0.35])
            pose = look_at_pose(eye, grid.aabb.center)
            views.append(
                (f"orbit_{i:04d}",
                 Camera(width=size, height=size, fx=focal, fy=focal, cx=size / 2, cy=size / 2, c2w=pose))
            )
    all_stats = {}
    for name, cam in views:
        img, stats = render_image(grid, occ, cam, rc, seed=seed, workers=args.workers)
        gio.write_png(out / f"{name}.png", img)
        all_stats[name] = stats.to_dict()
    _report(out, "render-report.json", {"views": all_stats}, cfg, args)
    print(f"rendered {len(views)} views to {out}")
    return 0


def cmd_benchmark(args) -> int:
    cfg = _load_config(args)
    rc = _render_config(cfg)
    teacher, _ = gio.load_checkpoint(args.teacher)
    student, occ = gio.load_checkpoint(args.student)
    if occ is None:
        raise ValueError(f"{args.student}: student checkpoint carries no occupancy grid")
    ds = gio.load_dataset(args.data)
    cam = ds.cameras[ds.indices("test")[0] if ds.indices("test") else 0]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    report_path = out / "benchmark.jsonl"
    report_path.unlink(missing_ok=True)
    gio.append_jsonl(report_path, {"scenario": "machine", **bench.machine_specs()})
    rows = bench.render_breakdown(
        teacher, student, occ, cam, rc, runs=args.runs, seed=args.seed or 0, workers=args.workers
    )
    for row in rows:
        gio.append_jsonl(report_path, row)
        print(f"{row['scenario']:>20}: {row['wall_ms']:10.1f} ms  ({row['speedup_vs_dense']:.1f}x)")
    for row in bench.dispatch_throughput(student, seed=args.seed or 0):
        gio.append_jsonl(report_path, row)
    _report(out, "benchmark-report.json", {"rows": rows}, cfg, args)
    print(f"report: {report_path}")
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app

    app = create_app(args.checkpoint, seed=args.seed or 0, workers=args.workers)
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gridfield", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, data=False, out=True):
        sp.add_argument("--config", help="JSON config file")
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--workers", type=int, default=1)
        if data:
            sp.add_argument("--data", required=True, help="dataset directory")
        if out:
            sp.add_argument("--out", required=True)

    sp = sub.add_parser("gen-data", help="generate a toy dataset with oracle ground truth")
    common(sp)
    sp.set_defaults(func=cmd_gen_data)

    sp = sub.add_parser("train-teacher", help="stage 1: fit the monolithic teacher")
    common(sp, data=True)
    sp.add_argument("--steps", type=int, default=None)
    sp.set_defaults(func=cmd_train_teacher)

    sp = sub.add_parser("distill", help="stage 2: extract occupancy and distill the lattice")
    common(sp)
    sp.add_argument("--teacher", required=True, help="teacher checkpoint")
    sp.add_argument("--steps", type=int, default=None)
    sp.set_defaults(func=cmd_distill)

    sp = sub.add_parser("finetune", help="stage 3: photometric fine-tuning with ESS")
    common(sp, data=True)
    sp.add_argument("--checkpoint", required=True, help="distilled student checkpoint")
    sp.add_argument("--steps", type=int, default=None)
    sp.set_defaults(func=cmd_finetune)

    sp = sub.add_parser("render", help="render dataset or orbit views from a checkpoint")
    common(sp)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--data", default=None, help="dataset directory for its cameras")
    sp.add_argument("--split", default="test")
    sp.add_argument("--orbit", type=int, default=8, help="orbit view count when no dataset given")
    sp.add_argument("--orbit-size", type=int, default=256)
    sp.set_defaults(func=cmd_render)

    sp = sub.add_parser("benchmark", help="render-time breakdown and dispatch throughput")
    common(sp, data=True)
    sp.add_argument("--teacher", required=True)
    sp.add_argument("--student", required=True)
    sp.add_argument("--runs", type=int, default=5)
    sp.set_defaults(func=cmd_benchmark)

    sp = sub.add_parser("serve", help="HTTP render service for a checkpoint")
    sp.add_argument("--config", help="JSON config file")
    sp.add_argument("--seed", type=int, default=None)
    sp.add_argument("--workers", type=int, default=1)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--host", default="127.0.0.1")
    sp.add_argument("--port", type=int, default=8707)
    sp.set_defaults(func=cmd_serve)
    return p


def main(argv=None) -> int:
    _setup_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args) or 0
    except Exception as exc:  # single-line diagnostic, nonzero exit
        print(f"gridfield {args.command}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
