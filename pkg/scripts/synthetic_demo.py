"""Write a synthetic dataset and run the CLI over it end to end.

    python scripts/synthetic_demo.py /tmp/stormflow-demo

Renders a Rankine vortex moving a band-limited texture, writes Ch3/Ch4
frames, a one-row storm report file and a config, then runs ``extract``,
``climatology`` and ``detect``.  ``train``/``evaluate`` are run on small
descriptor CSVs built from the extracted row so the whole CLI is exercised.
"""
import argparse
import csv
from pathlib import Path

import numpy as np

from stormflow.descriptors import FEATURE_NAMES, read_descriptor_csv
from stormflow.pipeline.cli import main
from stormflow.synthetic import Rankine, write_demo_dataset


def jittered_rows(template, n, seed, path):
    """Descriptor CSV with ``n`` noisy copies of ``template``; half are
    storms (w7 kept) and half calm (w7 zeroed)."""
    r = np.random.default_rng(seed)
    base = template.as_array()
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["region_id", "timestamp", "lon", "lat", *FEATURE_NAMES, "label"])
        for k in range(n):
            storm = k % 2 == 0
            vals = base * (1 + 0.05 * r.standard_normal(len(base)))
            if not storm:
                vals[6] = abs(vals[6]) * 0.05
            w.writerow([f"r{k:03d}", "2008-05-25T12:45:00Z", *template.centroid_geo,
                        *map(repr, map(float, vals)), "true" if storm else "false"])


def main_(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("root", type=Path)
    p.add_argument("--omega", type=float, default=0.05)
    p.add_argument("--radius", type=float, default=20.0)
    p.add_argument("--frames", type=int, default=3)
    args = p.parse_args(argv)

    cfg = write_demo_dataset(args.root, Rankine((127.3, 128.6), args.radius, args.omega),
                             n_frames=args.frames)
    steps = [["extract"], ["climatology", "--date", "2008-05-25"]]
    for step in steps:
        code = main([step[0], "--config", str(cfg), *step[1:]])
        print(f"stormflow {' '.join(step)} -> exit {code}")

    items = read_descriptor_csv(args.root / "out" / "descriptors.csv")
    if not items:
        print("no vortices extracted; stopping")
        return 1
    jittered_rows(items[0][0], 60, 0, args.root / "train.csv")
    jittered_rows(items[0][0], 40, 1, args.root / "test.csv")
    cfg.write_text(cfg.read_text() + "train:\n  descriptors: train.csv\n"
                   "test:\n  descriptors: test.csv\n")
    for step in ("train", "detect", "evaluate"):
        code = main([step, "--config", str(cfg)])
        print(f"stormflow {step} -> exit {code}")
    print((args.root / "out" / "metrics.csv").read_text())
    return 0


if __name__ == "__main__":
    raise SystemExit(main_())
