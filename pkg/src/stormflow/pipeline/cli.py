"""``stormflow`` command line.

Exit codes: 0 success, 1 usage or config error, 2 data error, 3 internal error.
Log verbosity comes from the ``STORMFLOW_LOG`` environment variable
(DEBUG, INFO, WARNING, ERROR; default WARNING).
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from datetime import date
from pathlib import Path

from ..climatology import StormDB, build_density_grid, ingest_reports, sample_balanced_training, \
    write_density_csv
from ..descriptors import LAYOUT_VERSION, batch_extract, descriptor_matrix, \
    read_descriptor_csv, write_descriptor_csv
from ..errors import ConfigError, DataError
from ..evaluation import confusion_metrics, lead_time_curve, plot_lead_time, \
    write_lead_time_csv, write_metrics_csv
from ..field_analysis import save_scalar
from ..forest import Forest, train
from ..geo_imaging import isoformat_utc
from .config import PipelineConfig, load_config
from .frames import FlowCache, load_sequences
from .outputs import feature_collection, overlay_image, write_geojson, write_png

log = logging.getLogger("stormflow")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_INTERNAL = 0, 1, 2, 3
COMMANDS = ("extract", "climatology", "train", "detect", "evaluate")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(f"{self.prog}: {message}")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="stormflow", description="Storm vortex detection from satellite imagery.")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", required=True, help="YAML or JSON pipeline config")
    p.add_argument("--seed", type=int, help="overrides the config seed")
    p.add_argument("--date", help="YYYY-MM-DD; required by climatology, filters extract/detect")
    p.add_argument("--model", help="model file (train writes it, detect/evaluate read it)")
    return p


def _configure_logging():
    level = os.environ.get("STORMFLOW_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)


def _parse_date(text: str | None) -> date | None:
    if text is None:
        return None
    try:
        return date.fromisoformat(text)
    except ValueError as e:
        raise ConfigError(f"--date must be YYYY-MM-DD, got {text!r}") from e


# ------------------------------------------------------------- helpers

class Run:
    """One CLI invocation: config, seed and lazily loaded shared inputs."""

    def __init__(self, cfg: PipelineConfig, day: date | None, model: Path | None):
        self.cfg, self.day = cfg, day
        self.model_path = model or cfg.output_dir / "model.json"
        self._db = None

    @property
    def provenance(self) -> dict:
        return {"seed": self.cfg.seed, "layout": LAYOUT_VERSION}

    def db(self, required: bool = True) -> StormDB | None:
        if self._db is None and self.cfg.storm_reports is not None:
            self._db = ingest_reports(self.cfg.storm_reports, self.cfg.coverage_years)
        if self._db is None and required:
            raise ConfigError("inputs.storm_reports is required for this command")
        return self._db

    def sequences(self, keep):
        return load_sequences(self.cfg.ch3_dir, self.cfg.ch4_dir, keep,
                              self.cfg.max_pair_skew_minutes)

    def flow_provider(self):
        from ..descriptors import estimate_flow
        return FlowCache(self.cfg.output_dir / "cache") if self.cfg.cache else estimate_flow

    def extract(self, keep, db, keep_pairs=False):
        ecfg = self.cfg.extract_config()
        provider = self.flow_provider()
        items, diags, pairs = [], [], []
        for seq in self.sequences(keep):
            res = batch_extract(seq, db, ecfg, provider, keep_pairs=keep_pairs)
            items += res.items
            diags += res.diagnostics
            pairs += res.pairs
        items.sort(key=lambda it: (it[0].timestamp, it[0].region_id))
        return items, diags, pairs

    def write_meta(self, path: Path, **extra):
        meta = dict(self.provenance, **extra)
        path.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")

    def day_filter(self):
        return (lambda t: t.date() == self.day) if self.day else (lambda t: True)


def _check_inputs(cfg: PipelineConfig, command: str):
    need = [("inputs.storm_reports", cfg.storm_reports)] if cfg.storm_reports else []
    if command != "climatology":
        need += [("inputs.ch3", cfg.ch3_dir), ("inputs.ch4", cfg.ch4_dir)]
    for name, path in need:
        if not path.exists():
            raise ConfigError(f"{name} {path} does not exist")


def _diag_rows(diags):
    return [dict(t_prev=isoformat_utc(d.t_prev), t_next=isoformat_utc(d.t_next), ok=d.ok,
                 regions=d.n_regions, message=d.message) for d in diags]


# ------------------------------------------------------------- commands

def cmd_extract(run: Run) -> int:
    cfg = run.cfg
    items, diags, pairs = run.extract(run.day_filter(), run.db(required=False), keep_pairs=True)
    raster_dir = cfg.output_dir / "rasters"
    raster_dir.mkdir(exist_ok=True)
    for pr in pairs:
        save_scalar(pr.q, raster_dir / f"q_{pr.next[1].timestamp:%Y%m%dT%H%M}", kind="q")
    out = cfg.output_dir / "descriptors.csv"
    write_descriptor_csv(items, out)
    run.write_meta(out.with_suffix(".meta.json"), rows=len(items), pairs=_diag_rows(diags))
    print(f"{len(items)} descriptor(s) from {sum(d.ok for d in diags)} pair(s) -> {out}")
    return EXIT_OK


def cmd_climatology(run: Run) -> int:
    if run.day is None:
        raise ConfigError("climatology needs --date YYYY-MM-DD")
    grid = build_density_grid(run.db(), run.day, run.cfg.extract.grid)
    out = run.cfg.output_dir / f"density_{run.day.isoformat()}.csv"
    write_density_csv(grid, out)
    run.write_meta(out.with_suffix(".meta.json"), date=run.day.isoformat(),
                   years=list(run.db().coverage_years), total_count=int(grid.counts.sum()))
    print(f"density grid for {run.day.isoformat()} -> {out}")
    return EXIT_OK


def _labeled(items):
    return [(d, label) for d, label in items if label is not None]


def cmd_train(run: Run) -> int:
    cfg = run.cfg
    if cfg.train_descriptors is not None:
        items = read_descriptor_csv(cfg.train_descriptors)
    else:
        items, _, _ = run.extract(cfg.train.contains, run.db())
    labeled = _labeled(items)
    if not any(label for _, label in labeled):
        raise DataError("no storm-related vortices in the training window")
    sample = sample_balanced_training(labeled, cfg.seed)
    forest = train(descriptor_matrix(sample), [l for _, l in sample], cfg.forest)
    run.model_path.parent.mkdir(parents=True, exist_ok=True)
    forest.save(run.model_path)
    write_descriptor_csv(sample, cfg.output_dir / "training_samples.csv")
    run.write_meta(cfg.output_dir / "training_samples.meta.json", rows=len(sample),
                   oob_score=forest.oob_score)
    print(f"trained {cfg.forest.n_trees} trees on {len(sample)} samples "
          f"(oob {forest.oob_score}) -> {run.model_path}")
    return EXIT_OK


def cmd_detect(run: Run) -> int:
    cfg = run.cfg
    forest = Forest.load(run.model_path)
    _, diags, pairs = run.extract(run.day_filter(), run.db(required=False), keep_pairs=True)
    if not pairs:
        raise DataError("no frame pairs to process")
    out_dir = cfg.output_dir / "detect"
    out_dir.mkdir(exist_ok=True)
    n_storm = 0
    for pr in pairs:
        later = pr.next[1]
        preds = [forest.predict(d) for d in pr.descriptors]
        n_storm += sum(l for l, _ in preds)
        prov = dict(run.provenance, t_prev=isoformat_utc(pr.prev[1].timestamp),
                    t_next=isoformat_utc(later.timestamp))
        fc = feature_collection(pr.regions, pr.descriptors, preds, later.transform, prov)
        stem = out_dir / f"{later.timestamp:%Y%m%dT%H%M}"
        write_geojson(fc, stem.with_suffix(".geojson"))
        img = overlay_image(later, pr.regions, [l for l, _ in preds])
        write_png(img, stem.with_suffix(".png"), {"seed": cfg.seed})
    print(f"{len(pairs)} pair(s), {n_storm} storm vortex(es) -> {out_dir}")
    return EXIT_OK


def cmd_evaluate(run: Run) -> int:
    cfg = run.cfg
    forest = Forest.load(run.model_path)
    if cfg.test_descriptors is not None:
        items = read_descriptor_csv(cfg.test_descriptors)
    else:
        items, _, _ = run.extract(cfg.test.contains, run.db())
    labeled = _labeled(items)
    if not labeled:
        raise DataError("no labeled vortices in the test window")
    pred, _ = forest.predict_many([d for d, _ in labeled])
    metrics = confusion_metrics(pred, [l for _, l in labeled])
    write_metrics_csv({"test": metrics}, cfg.output_dir / "metrics.csv")
    all_pred, _ = forest.predict_many([d for d, _ in items])
    curve = lead_time_curve(list(zip([d for d, _ in items], all_pred)), run.db(),
                            cfg.lead_time_edges_hours)
    write_lead_time_csv(curve, cfg.output_dir / "lead_time.csv")
    plot_lead_time(curve, cfg.output_dir / "lead_time.png", {"seed": cfg.seed})
    run.write_meta(cfg.output_dir / "metrics.meta.json", rows=len(labeled))
    print(f"overall {metrics.overall} sensitivity {metrics.sensitivity} "
          f"specificity {metrics.specificity} on {len(labeled)} vortices")
    return EXIT_OK


HANDLERS = dict(extract=cmd_extract, climatology=cmd_climatology, train=cmd_train,
                detect=cmd_detect, evaluate=cmd_evaluate)


def main(argv=None) -> int:
    _configure_logging()
    try:
        args = build_parser().parse_args(argv)
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg = cfg.with_seed(args.seed)
        _check_inputs(cfg, args.command)
        cfg.output_dir.mkdir(parents=True, exist_ok=True)
        run = Run(cfg, _parse_date(args.date), Path(args.model) if args.model else None)
        return HANDLERS[args.command](run)
    except ConfigError as e:
        print(f"stormflow: config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as e:
        print(f"stormflow: data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except Exception as e:  # noqa: BLE001 - last-resort exit code
        log.debug("internal error", exc_info=True)
        print(f"stormflow: internal error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_INTERNAL


def entry_point():
    sys.exit(main())


if __name__ == "__main__":
    entry_point()
