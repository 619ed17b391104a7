"""Rankine and shear detection over several texture seeds.

    python scripts/end_to_end_check.py [--seeds 5] [--omega 0.05]

For each seed, renders a frame pair, runs flow, decomposition, Q and region
extraction, and prints the region count, centroid error and w7 / omega^2.
"""
import argparse
import time

import numpy as np

from stormflow.descriptors import batch_extract
from stormflow.geo_imaging import FrameSequence
from stormflow.synthetic import Rankine, Shear, render_sequence


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--seeds", type=int, default=5)
    p.add_argument("--omega", type=float, default=0.05)
    p.add_argument("--radius", type=float, default=20.0)
    p.add_argument("--shear", type=float, default=0.01)
    args = p.parse_args(argv)

    centre = (127.3, 128.6)
    print("seed  regions  centroid_err_px  w7/omega^2  shear_regions  seconds")
    for seed in range(1, args.seeds + 1):
        t0 = time.perf_counter()
        seq = FrameSequence(render_sequence(seed, Rankine(centre, args.radius, args.omega), 2))
        res = batch_extract(seq, keep_pairs=True)
        regions = res.pairs[0].regions
        shear = batch_extract(FrameSequence(render_sequence(seed, Shear(args.shear, 128.0), 2)))
        err = ratio = float("nan")
        if regions:
            cx, cy = regions[0].centroid_px
            err = float(np.hypot(cx - centre[0], cy - centre[1]))
            ratio = res.items[0][0].w7 / args.omega ** 2
        print(f"{seed:4d}  {len(regions):7d}  {err:15.3f}  {ratio:10.3f}  "
              f"{len(shear.items):13d}  {time.perf_counter() - t0:7.2f}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
