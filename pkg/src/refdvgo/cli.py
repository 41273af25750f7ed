"""Command-line interface: ``train``, ``render``, ``eval`` and ``gen-scene``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from dataclasses import fields, replace
from pathlib import Path

import numpy as np
from PIL import Image
from threadpoolctl import threadpool_limits

from . import __version__
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .config import ConfigError, RunConfig, dump
from .dataset import (
    DatasetError, SceneDataset, focal_from_angle, generate_procedural_scene, load_nerf_synthetic,
    write_nerf_synthetic,
)
from .loss import LossLog, LossWeights
from .metrics import MetricReport
from .render import BACKGROUNDS, Camera, RenderConfig, render_image
from .trainer import train_coarse, train_fine

log = logging.getLogger("refdvgo")

COMPONENTS = ("diffuse", "specular", "tint", "roughness", "normals")
SMALL_MLP = (3, 128)
EXIT_USAGE = 2


def _to_u8(img: np.ndarray) -> np.ndarray:
    return (np.clip(img, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)


def save_png(path, img: np.ndarray) -> None:
    Image.fromarray(_to_u8(img)).save(path)


def contact_sheet(rows: list[list[np.ndarray]], pad: int = 2, fill: float = 1.0) -> np.ndarray:
    """Tile equally sized images into a grid (one list per row)."""
    h, w = rows[0][0].shape[:2]
    n_cols = max(len(r) for r in rows)
    sheet = np.full((len(rows) * (h + pad) + pad, n_cols * (w + pad) + pad, 3), fill)
    for i, row in enumerate(rows):
        for j, img in enumerate(row):
            y, x = pad + i * (h + pad), pad + j * (w + pad)
            sheet[y : y + h, x : x + w] = img[..., :3]
    return sheet


def load_dataset(cfg: RunConfig) -> SceneDataset:
    d = cfg.data
    if d.kind == "nerf_synthetic":
        if not d.path:
            raise ConfigError("[data] path is required for kind = nerf_synthetic")
        return load_nerf_synthetic(d.path, background=d.background, downscale=d.downscale)
    return generate_procedural_scene(d.kind, d.reflectivity, d.n_views, d.resolution, seed=d.seed,
                                     n_test=d.n_test, background=d.background, supersample=d.supersample)


def _apply_overrides(cfg: RunConfig, args) -> RunConfig:
    train, run = cfg.train, cfg.run
    changes = {}
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.no_ide:
        changes["disable_ide"] = True
    if args.no_ref_dir:
        changes["disable_ref_dir"] = True
    if args.no_pgs:
        changes["disable_pgs"] = True
    if args.small_mlp:
        changes["mlp_depth"], changes["mlp_width"] = SMALL_MLP
    w = {f.name: getattr(args, f.name) for f in fields(LossWeights) if getattr(args, f.name) is not None}
    if w:
        changes["weights"] = replace(train.weights, **w)
    if changes:
        train = replace(train, **changes)
    if args.out is not None:
        run = replace(run, out=args.out)
    if args.threads is not None:
        run = replace(run, threads=args.threads)
    return replace(cfg, train=train, run=run)


def _render_split(model, dataset: SceneDataset, split: str, components: bool = False):
    rcfg = RenderConfig(background=dataset.background)
    out = []
    for frame in dataset.frames(split):
        img, extras = render_image(model, frame.camera(), rcfg, near=dataset.near, far=dataset.far,
                                   components=components)
        out.append((np.clip(img, 0.0, 1.0), extras))
    return out


def _write_renders(out_dir: Path, name: str, renders, components: bool, dump_float: bool) -> list[Path]:
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for i, (img, extras) in enumerate(renders):
        p = out_dir / f"{name}_{i:03d}.png"
        save_png(p, img)
        written.append(p)
        if dump_float:
            np.save(out_dir / f"{name}_{i:03d}.npy", img.astype(np.float32))
        if components:
            for comp in COMPONENTS:
                if comp in extras:
                    save_png(out_dir / f"{name}_{i:03d}_{comp}.png", extras[comp])
    return written


def _evaluate(model, dataset: SceneDataset, split: str):
    report = MetricReport()
    renders = _render_split(model, dataset, split)
    for (img, _), gt in zip(renders, dataset.targets(split)):
        report.add(img, gt)
    return report, renders


def cmd_train(args) -> int:
    cfg = _apply_overrides(RunConfig.load(args.config), args)
    out = Path(cfg.run.out)
    out.mkdir(parents=True, exist_ok=True)
    text = dump(cfg)
    (out / "config.ini").write_text(text)
    with threadpool_limits(limits=cfg.run.threads):
        dataset = load_dataset(cfg)
        t0 = time.perf_counter()
        loss_log = LossLog(out / "train_log.csv")
        try:
            coarse, _ = train_coarse(dataset, cfg.train, loss_log)
            t1 = time.perf_counter()
            save_checkpoint(out / "coarse.ckpt", coarse, config_text=text, extra={"stage": "coarse"})

            every = cfg.run.checkpoint_every

            def on_step(stage, it, model, _):
                if every and (it + 1) % every == 0:
                    save_checkpoint(out / f"fine_{it + 1:06d}.ckpt", model, config_text=text,
                                    extra={"stage": stage, "iteration": it + 1})

            fine, fine_hist = train_fine(dataset, coarse if cfg.train.coarse_iters > 0 else None, cfg.train, loss_log,
                                 on_step=on_step if every else None)
        finally:
            loss_log.close()
        t2 = time.perf_counter()
        save_checkpoint(out / "fine.ckpt", fine, fine_hist.optimizer, config_text=text,
                        extra={"stage": "fine"})
        report, renders = _evaluate(fine, dataset, cfg.run.eval_split)
        t3 = time.perf_counter()
    report.to_json(out / "metrics.json", split=cfg.run.eval_split)
    timing = {"train_seconds": t2 - t0, "coarse_seconds": t1 - t0, "fine_seconds": t2 - t1, "eval_seconds": t3 - t2}
    (out / "timing.json").write_text(json.dumps(timing, indent=2, sort_keys=True) + "\n")
    if cfg.run.render_test and renders:
        _write_renders(out / "renders", cfg.run.eval_split, renders, False, cfg.run.dump_float)
        gts = dataset.targets(cfg.run.eval_split)
        save_png(out / "contact_sheet.png", contact_sheet([[gt, img] for (img, _), gt in zip(renders, gts)]))
    log.info("%s psnr=%.3f ssim=%.4f train=%.1fs", cfg.run.eval_split, report.mean_psnr, report.mean_ssim,
             timing["train_seconds"])
    return 0


def _read_poses(path) -> tuple[list[np.ndarray], float, int, int]:
    """Pose file in transforms-json form: camera_angle_x, w, h and frames[].transform_matrix."""
    try:
        meta = json.loads(Path(path).read_text())
        frames = meta.get("frames", [])
        poses = [np.array(f["transform_matrix"], dtype=np.float64) for f in frames]
        w, h = int(meta.get("w", 0)), int(meta.get("h", 0))
        if poses and (w <= 0 or h <= 0):
            raise ValueError("pose file needs positive 'w' and 'h'")
        focal = focal_from_angle(w, float(meta["camera_angle_x"])) if poses else 0.0
    except (OSError, json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
        raise DatasetError(f"cannot read pose file {path}: {e}") from None
    return poses, focal, w, h


def cmd_render(args) -> int:
    model, _, meta = load_checkpoint(args.checkpoint)
    poses, focal, w, h = _read_poses(args.poses)
    if not poses:
        log.info("no poses to render")
        return 0
    out = Path(args.out)
    rcfg = RenderConfig(background=args.background)
    renders = []
    with threadpool_limits(limits=args.threads or 1):
        for pose in poses:
            img, extras = render_image(model, Camera(w, h, focal, pose), rcfg, near=args.near, far=args.far,
                                       components=args.components)
            renders.append((np.clip(img, 0.0, 1.0), extras))
    _write_renders(out, "view", renders, args.components, args.float)
    return 0


def cmd_eval(args) -> int:
    model, _, meta = load_checkpoint(args.checkpoint)
    cfg = RunConfig.load(args.config) if args.config else RunConfig.from_ini(meta["config"], "<checkpoint>")
    dataset = load_dataset(cfg)
    out = Path(args.out if args.out else cfg.run.out)
    out.mkdir(parents=True, exist_ok=True)
    with threadpool_limits(limits=args.threads or cfg.run.threads):
        report, renders = _evaluate(model, dataset, args.split)
    report.to_json(out / f"eval_{args.split}.json", split=args.split)
    gts = dataset.targets(args.split)
    if renders:
        save_png(out / f"eval_{args.split}_sheet.png", contact_sheet([[gt, img] for (img, _), gt in zip(renders, gts)]))
    print(json.dumps({"psnr": report.mean_psnr, "ssim": report.mean_ssim}))
    return 0


def cmd_gen_scene(args) -> int:
    ds = generate_procedural_scene(args.kind, args.reflectivity, args.views, args.resolution, seed=args.seed,
                                   n_test=args.test, background=args.background)
    write_nerf_synthetic(ds, args.out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="refdvgo", description=__doc__)
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="coarse + fine training, then test-split evaluation")
    t.add_argument("--config", required=True)
    t.add_argument("--seed", type=int)
    t.add_argument("--threads", type=int)
    t.add_argument("--out")
    t.add_argument("--no-ide", action="store_true", help="raw SH of the direction instead of the IDE")
    t.add_argument("--no-ref-dir", action="store_true", help="condition on the view direction")
    t.add_argument("--no-pgs", action="store_true", help="train the fine stage at the final resolution")
    t.add_argument("--small-mlp", action="store_true", help=f"{SMALL_MLP[0]}x{SMALL_MLP[1]} directional MLP")
    for f in fields(LossWeights):
        t.add_argument(f"--{f.name.replace('_', '-')}", dest=f.name, type=float, metavar="W")
    t.set_defaults(func=cmd_train)

    r = sub.add_parser("render", help="render poses from a checkpoint")
    r.add_argument("--checkpoint", required=True)
    r.add_argument("--poses", required=True, help="transforms-style JSON with camera_angle_x, w, h, frames")
    r.add_argument("--out", required=True)
    r.add_argument("--components", action="store_true", help="also write diffuse/specular/tint/roughness/normals")
    r.add_argument("--float", action="store_true", help="also dump float32 .npy renders")
    r.add_argument("--background", default="white", choices=sorted(BACKGROUNDS))
    r.add_argument("--near", type=float, default=0.0)
    r.add_argument("--far", type=float, default=1e10)
    r.add_argument("--threads", type=int)
    r.set_defaults(func=cmd_render)

    e = sub.add_parser("eval", help="metrics and a contact sheet for one split")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--config", help="defaults to the config stored in the checkpoint")
    e.add_argument("--split", default="test")
    e.add_argument("--out")
    e.add_argument("--threads", type=int)
    e.set_defaults(func=cmd_eval)

    g = sub.add_parser("gen-scene", help="write a procedural scene in NeRF-synthetic layout")
    g.add_argument("--kind", required=True, choices=("lambertian_cube", "mirror_sphere"))
    g.add_argument("--reflectivity", type=float, default=0.0)
    g.add_argument("--views", type=int, default=24)
    g.add_argument("--test", type=int, default=8)
    g.add_argument("--resolution", type=int, default=64)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--background", default="white", choices=sorted(BACKGROUNDS))
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen_scene)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ConfigError, CheckpointError, DatasetError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
