"""Ablation sweep on the procedural mirror sphere.

Trains the full model and its ablations (--no-ref-dir, --no-ide, --no-pgs) for a few
seeds and prints held-out PSNR per variant. The coarse stage does not depend on the
ablation flags, so it is trained once per seed and shared.

    python scripts/ablation.py --reflectivity 0.8 --seeds 0 1 2 --out ablation.json
"""

from __future__ import annotations

import argparse
import json
import logging
import time
from dataclasses import asdict, dataclass, field, replace

import numpy as np
from threadpoolctl import threadpool_limits

from refdvgo.dataset import generate_procedural_scene
from refdvgo.loss import LossWeights
from refdvgo.trainer import TrainConfig, evaluate, train_coarse, train_fine

VARIANTS = {
    "full": {},
    "no_ref_dir": {"disable_ref_dir": True},
    "no_ide": {"disable_ide": True},
    "no_pgs": {"disable_pgs": True},
}


@dataclass
class SceneSetup:
    reflectivity: float = 0.8
    n_views: int = 24
    n_test: int = 8
    resolution: int = 64


def desk_config(**kw) -> TrainConfig:
    """Mirror-sphere settings; about nine minutes per variant on one core."""
    base = dict(coarse_iters=600, fine_iters=1500, coarse_dims=(32, 32, 32), fine_dims_final=(64, 64, 64),
                pgs_count=10, batch_rays=1024, bottleneck_dim=8, mlp_depth=3, mlp_width=64,
                fine_alpha_init=0.01, step_ratio=1.0, coarse_weights=LossWeights(w_pp=0.1, w_bg=0.01),
                log_every=100)
    base.update(kw)
    return TrainConfig(**base)


@dataclass
class AblationResult:
    variant: str
    seed: int
    psnr: float
    ssim: float
    seconds: float
    pgs_continuity: list = field(default_factory=list)


def run_seed(scene: SceneSetup, seed: int, variants, cfg: TrainConfig, probe_rays: int = 0) -> list[AblationResult]:
    ds = generate_procedural_scene("mirror_sphere", scene.reflectivity, scene.n_views, scene.resolution,
                                   seed=seed, n_test=scene.n_test)
    cfg = replace(cfg, seed=seed)
    coarse, _ = train_coarse(ds, cfg)
    probe = None
    if probe_rays:
        rays, _ = ds.rays("test")
        probe = rays[np.random.default_rng(seed).choice(len(rays), probe_rays, replace=False)]
    out = []
    for name in variants:
        vcfg = replace(cfg, **VARIANTS[name])
        t0 = time.perf_counter()
        fine, hist = train_fine(ds, coarse, vcfg, probe=probe)
        report, _ = evaluate(fine, ds, "test")
        out.append(AblationResult(name, seed, report.mean_psnr, report.mean_ssim, time.perf_counter() - t0,
                                  hist.pgs_continuity))
        logging.info("seed %d %-10s psnr %.3f ssim %.4f (%.0fs)", seed, name, report.mean_psnr,
                     report.mean_ssim, out[-1].seconds)
    return out


def summarise(results: list[AblationResult]) -> dict[str, float]:
    names = dict.fromkeys(r.variant for r in results)
    return {n: float(np.mean([r.psnr for r in results if r.variant == n])) for n in names}


def main(argv=None) -> None:
    p = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    p.add_argument("--reflectivity", type=float, default=0.8)
    p.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    p.add_argument("--variants", nargs="+", default=list(VARIANTS), choices=list(VARIANTS))
    p.add_argument("--resolution", type=int, default=64)
    p.add_argument("--fine-iters", type=int, default=1500)
    p.add_argument("--out")
    args = p.parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    scene = SceneSetup(reflectivity=args.reflectivity, resolution=args.resolution)
    cfg = desk_config(fine_iters=args.fine_iters)
    results = []
    with threadpool_limits(limits=1):
        for seed in args.seeds:
            results += run_seed(scene, seed, args.variants, cfg)
    means = summarise(results)
    for name, v in means.items():
        print(f"{name:>10s}  {v:7.3f} dB")
    if args.out:
        with open(args.out, "w") as f:
            json.dump({"scene": asdict(scene), "means": means, "runs": [asdict(r) for r in results]}, f, indent=2)


if __name__ == "__main__":
    main()
