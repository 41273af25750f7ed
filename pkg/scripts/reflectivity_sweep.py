"""Full model vs --no-ref-dir across mirror-sphere reflectivity.

At low reflectivity the scene is nearly diffuse and both variants should land close
together; as reflectivity grows, conditioning on the reflected direction should pull ahead.

    python scripts/reflectivity_sweep.py --levels 0.1 0.4 0.8 --seeds 0 1
"""

from __future__ import annotations

import argparse
import json
import logging

from threadpoolctl import threadpool_limits

from ablation import SceneSetup, desk_config, run_seed, summarise


def main(argv=None) -> None:
    p = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    p.add_argument("--levels", type=float, nargs="+", default=[0.1, 0.4, 0.8])
    p.add_argument("--seeds", type=int, nargs="+", default=[0])
    p.add_argument("--resolution", type=int, default=64)
    p.add_argument("--out")
    args = p.parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    cfg = desk_config()
    rows = []
    with threadpool_limits(limits=1):
        for r in args.levels:
            results = []
            for seed in args.seeds:
                results += run_seed(SceneSetup(reflectivity=r, resolution=args.resolution), seed,
                                    ["full", "no_ref_dir"], cfg)
            m = summarise(results)
            rows.append({"reflectivity": r, **m, "gap": m["full"] - m["no_ref_dir"]})
    print(f"{'refl':>6s} {'full':>8s} {'no_ref':>8s} {'gap':>7s}")
    for row in rows:
        print(f"{row['reflectivity']:6.2f} {row['full']:8.2f} {row['no_ref_dir']:8.2f} {row['gap']:+7.2f}")
    if args.out:
        with open(args.out, "w") as f:
            json.dump(rows, f, indent=2)


if __name__ == "__main__":
    main()
