"""Confusion-matrix metrics, lead-time curves and the feature ablation."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .climatology import StormDB, earliest_storm_time, to_us

_US_PER_HOUR = 3_600_000_000
DEFAULT_EDGES_HOURS = tuple(0.5 * k for k in range(13))  # 0, 0.5, ..., 6 h


@dataclass(frozen=True)
class Metrics:
    """Binary confusion counts; ratios with a zero denominator are ``None``."""

    tp: int
    tn: int
    fp: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.tn + self.fp + self.fn

    @staticmethod
    def _ratio(a: int, b: int) -> float | None:
        return a / b if b else None

    @property
    def overall(self) -> float | None:
        return self._ratio(self.tp + self.tn, self.total)

    @property
    def sensitivity(self) -> float | None:
        return self._ratio(self.tp, self.tp + self.fn)

    @property
    def specificity(self) -> float | None:
        return self._ratio(self.tn, self.tn + self.fp)

    def __add__(self, other: "Metrics") -> "Metrics":
        return Metrics(self.tp + other.tp, self.tn + other.tn, self.fp + other.fp,
                       self.fn + other.fn)

    def as_row(self) -> dict:
        return dict(tp=self.tp, tn=self.tn, fp=self.fp, fn=self.fn, overall=self.overall,
                    sensitivity=self.sensitivity, specificity=self.specificity)


def confusion_metrics(pred: Sequence[bool], truth: Sequence[bool]) -> Metrics:
    pred = np.asarray(pred, dtype=bool)
    truth = np.asarray(truth, dtype=bool)
    if pred.shape != truth.shape or pred.ndim != 1:
        raise ValueError(f"pred and truth lengths differ ({pred.size} vs {truth.size})")
    if pred.size == 0:
        raise ValueError("need at least one prediction")
    return Metrics(tp=int(np.sum(pred & truth)), tn=int(np.sum(~pred & ~truth)),
                   fp=int(np.sum(pred & ~truth)), fn=int(np.sum(~pred & truth)))


def mean_of(values) -> float | None:
    vals = [v for v in values if v is not None]
    return sum(vals) / len(vals) if vals else None


# ------------------------------------------------------------- lead time

@dataclass(frozen=True)
class LeadTimeCurve:
    """Per-bucket vortex counts and the fraction predicted storm-related.

    Buckets are ``[edges[k], edges[k+1])`` in hours.  Vortices whose storm
    started at or before the observation (``dt <= 0``) go to ``ongoing``;
    positive lead times outside all buckets go to ``unbinned``.  Vortices
    with no nearby storm are excluded.
    """

    edges_hours: tuple[float, ...]
    counts: tuple[int, ...]
    positives: tuple[int, ...]
    ongoing_count: int = 0
    ongoing_positives: int = 0
    unbinned_count: int = 0
    unbinned_positives: int = 0

    @property
    def fractions(self) -> tuple[float | None, ...]:
        return tuple(p / c if c else None for p, c in zip(self.positives, self.counts))

    @property
    def n_defined(self) -> int:
        return sum(self.counts) + self.ongoing_count + self.unbinned_count


def lead_time_hours(db: StormDB, descriptor) -> float | None:
    lon, lat = descriptor.centroid_geo
    t1 = earliest_storm_time(db, lat, lon, descriptor.timestamp)
    if t1 is None:
        return None
    return (to_us(t1) - to_us(descriptor.timestamp)) / _US_PER_HOUR


def lead_time_curve(vortices: Sequence[tuple[object, bool]], db: StormDB,
                    edges: Sequence[float] = DEFAULT_EDGES_HOURS) -> LeadTimeCurve:
    edges = tuple(float(e) for e in edges)
    if len(edges) < 2 or any(b <= a for a, b in zip(edges, edges[1:])):
        raise ValueError("bucket edges must be strictly increasing (at least two)")
    nb = len(edges) - 1
    counts, positives = [0] * nb, [0] * nb
    ongoing = [0, 0]
    unbinned = [0, 0]
    for desc, pred in vortices:
        dt = lead_time_hours(db, desc)
        if dt is None:
            continue
        if dt <= 0:
            tally = ongoing
        else:
            k = int(np.searchsorted(edges, dt, side="right")) - 1
            if 0 <= k < nb:
                counts[k] += 1
                positives[k] += bool(pred)
                continue
            tally = unbinned
        tally[0] += 1
        tally[1] += bool(pred)
    return LeadTimeCurve(edges, tuple(counts), tuple(positives), ongoing[0], ongoing[1],
                         unbinned[0], unbinned[1])


def _fmt(x) -> str:
    return "" if x is None else repr(x)


def write_metrics_csv(rows: dict, path) -> None:
    """``rows`` maps a label (e.g. feature subset) to :class:`Metrics`."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["subset", "tp", "tn", "fp", "fn", "overall", "sensitivity", "specificity"])
        for name, m in rows.items():
            w.writerow([name, m.tp, m.tn, m.fp, m.fn, _fmt(m.overall), _fmt(m.sensitivity),
                        _fmt(m.specificity)])


def write_lead_time_csv(curve: LeadTimeCurve, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["bucket", "lo_hours", "hi_hours", "count", "positive", "fraction"])
        e = curve.edges_hours
        for k, (c, p, f) in enumerate(zip(curve.counts, curve.positives, curve.fractions)):
            w.writerow([k, repr(e[k]), repr(e[k + 1]), c, p, _fmt(f)])
        for name, c, p in (("ongoing", curve.ongoing_count, curve.ongoing_positives),
                           ("unbinned", curve.unbinned_count, curve.unbinned_positives)):
            w.writerow([name, "", "", c, p, _fmt(p / c if c else None)])


def plot_lead_time(curve: LeadTimeCurve, path, metadata: dict | None = None) -> None:
    """Bar chart of the storm fraction per bucket with counts as a line."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    e = np.asarray(curve.edges_hours)
    mids = 0.5 * (e[:-1] + e[1:])
    frac = [f if f is not None else 0.0 for f in curve.fractions]
    fig, ax = plt.subplots(figsize=(7, 4), dpi=100)
    ax.bar(mids, frac, width=0.9 * np.diff(e), color="#c0392b", alpha=0.8,
           label="classified storm")
    ax.set_xlabel("lead time to first nearby storm (h)")
    ax.set_ylabel("fraction classified storm")
    ax.set_ylim(0, 1)
    ax2 = ax.twinx()
    ax2.plot(mids, curve.counts, "k.-", label="vortices")
    ax2.set_ylabel("vortex count")
    fig.tight_layout()
    meta = {"Software": None}
    meta.update({k: str(v) for k, v in (metadata or {}).items()})
    fig.savefig(path, metadata=meta)
    plt.close(fig)


# ------------------------------------------------------------- ablation

ABLATION_SUBSETS = {"all": tuple(range(8)), "visual": tuple(range(7)), "prior": (7,)}


def ablation_run(X, y, cfg=None, k: int = 10) -> dict:
    """Cross-validated metrics for all features, visual only (w1-w7) and
    prior only (w8), with identical folds and seeds."""
    from .forest import ForestConfig, cross_validate

    cfg = cfg or ForestConfig()
    return {name: cross_validate(X, y, k, cfg, features=feats)
            for name, feats in ABLATION_SUBSETS.items()}
