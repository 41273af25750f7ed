"""Train the Lambertian cube through the CLI, then render an orbit with component images.

    python scripts/lambertian_demo.py --out runs/lambertian
"""

from __future__ import annotations

import argparse
import json
from pathlib import Path

import numpy as np

from refdvgo.cli import main as cli
from refdvgo.dataset import CAMERA_ANGLE_X, CAMERA_RADIUS, look_at

HERE = Path(__file__).resolve().parent


def orbit(n: int, radius: float = CAMERA_RADIUS, height: float = 0.35) -> list[np.ndarray]:
    angles = np.linspace(0.0, 2 * np.pi, n, endpoint=False)
    z = radius * height
    r = np.sqrt(radius**2 - z**2)
    return [look_at([r * np.cos(a), r * np.sin(a), z]) for a in angles]


def main(argv=None) -> None:
    p = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    p.add_argument("--config", default=str(HERE / "configs" / "lambertian.ini"))
    p.add_argument("--out", default="runs/lambertian")
    p.add_argument("--frames", type=int, default=8)
    p.add_argument("--size", type=int, default=128)
    args = p.parse_args(argv)
    out = Path(args.out)
    if cli(["train", "--config", args.config, "--out", str(out)]) != 0:
        raise SystemExit("training failed")
    poses = {"camera_angle_x": CAMERA_ANGLE_X, "w": args.size, "h": args.size,
             "frames": [{"transform_matrix": c2w.tolist()} for c2w in orbit(args.frames)]}
    (out / "orbit.json").write_text(json.dumps(poses))
    cli(["render", "--checkpoint", str(out / "fine.ckpt"), "--poses", str(out / "orbit.json"),
         "--out", str(out / "orbit"), "--components"])
    metrics = json.loads((out / "metrics.json").read_text())
    timing = json.loads((out / "timing.json").read_text())
    print(f"test PSNR {metrics['psnr']:.2f} dB  SSIM {metrics['ssim']:.4f}  train {timing['train_seconds']:.0f}s")


if __name__ == "__main__":
    main()
