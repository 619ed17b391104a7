"""Eight-feature vortex descriptors and the per-pair extraction loop."""
from __future__ import annotations

import csv
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import date, datetime
from typing import Callable, Sequence

import numpy as np

from .climatology import CONUS_DOMAIN, DensityGrid, GridSpec, LabelDomain, StormDB, \
    build_density_grid, label_vortex
from .errors import DataError, StormflowError
from .field_analysis import ScalarField, VortexRegion, divergence, extract_vortices, \
    helmholtz_decompose, q_criterion, vorticity
from .geo_imaging import FrameSequence, SatelliteFrame, as_utc, equalize_pair, isoformat_utc, \
    pixel_to_geo
from .optical_flow import FlowField, FlowParams, lucas_kanade_dense, stabilize_flow

log = logging.getLogger(__name__)

FEATURE_NAMES = ("w1", "w2", "w3", "w4", "w5", "w6", "w7", "w8")
LAYOUT_VERSION = "stormflow-descriptor/1:" + ",".join(FEATURE_NAMES)
N_FEATURES = len(FEATURE_NAMES)
VISUAL_FEATURES = tuple(range(7))
PRIOR_FEATURES = (7,)
W4_MODES = ("circular", "literal")


@dataclass(frozen=True)
class VortexDescriptor:
    """Feature vector of one vortex region plus its provenance.

    w1, w2: mean Ch3 / Ch4 brightness; w3: mean flow speed (px/frame);
    w4: mean flow direction (rad); w5: mean solenoidal vorticity;
    w6: mean irrotational divergence; w7: max Q; w8: mean storm density.
    """

    region_id: str
    timestamp: datetime
    centroid_geo: tuple[float, float]
    w1: float
    w2: float
    w3: float
    w4: float
    w5: float
    w6: float
    w7: float
    w8: float
    layout: str = LAYOUT_VERSION

    def as_array(self) -> np.ndarray:
        return np.array([getattr(self, n) for n in FEATURE_NAMES], dtype=np.float64)


def _mean(values: np.ndarray) -> float:
    # exact summation keeps every mean independent of pixel order
    return math.fsum(values.tolist()) / values.size


def circular_mean(angles: np.ndarray) -> float:
    """Direction of the summed unit vectors, in (-pi, pi]."""
    s = math.fsum(np.sin(angles).tolist())
    c = math.fsum(np.cos(angles).tolist())
    out = math.atan2(s, c)
    return math.pi if out == -math.pi else out


def flow_direction(u: np.ndarray, v: np.ndarray, mode: str = "circular") -> float:
    """w4 from per-pixel flow components.

    ``"circular"`` averages the directions atan2(V, U) as unit vectors.
    ``"literal"`` is the arithmetic mean of |arctan(V / U)|, which folds
    opposite directions together and lies in [0, pi/2].
    """
    if mode == "circular":
        return circular_mean(np.arctan2(v, u))
    if mode == "literal":
        return _mean(np.arctan2(np.abs(v), np.abs(u)))
    raise ValueError(f"w4 mode must be one of {W4_MODES}")


@dataclass(frozen=True)
class PairFields:
    """Whole-grid quantities shared by all regions of one frame pair."""

    ch3: SatelliteFrame
    ch4: SatelliteFrame
    flow: FlowField
    vorticity: ScalarField
    divergence: ScalarField
    q: ScalarField
    grid: DensityGrid

    @classmethod
    def build(cls, ch3, ch4, flow, sol, irr, q, grid) -> "PairFields":
        t = flow.transform
        for name, obj in (("ch3", ch3), ("ch4", ch4), ("solenoidal flow", sol),
                          ("irrotational flow", irr), ("Q", q)):
            if obj.transform != t:
                raise DataError(f"{name} transform does not match the flow transform")
        return cls(ch3, ch4, flow, vorticity(sol), divergence(irr), q, grid)


def describe(region: VortexRegion, f: PairFields, w4_mode: str = "circular") -> VortexDescriptor:
    ys, xs = region.ys, region.xs
    h, w = f.q.values.shape
    if region.pixels.size == 0:
        raise DataError(f"region {region.region_id} is empty")
    if xs.min() < 0 or ys.min() < 0 or xs.max() >= w or ys.max() >= h:
        raise DataError(f"region {region.region_id} extends outside the grid")
    valid = (f.ch3.mask & f.ch4.mask & f.flow.mask & f.vorticity.mask
             & f.divergence.mask & f.q.mask)[ys, xs]
    if not valid.all():
        raise DataError(f"region {region.region_id} covers {int((~valid).sum())} invalid pixel(s)")
    u, v = f.flow.u[ys, xs], f.flow.v[ys, xs]
    lon, lat = pixel_to_geo(f.q.transform, xs.astype(np.float64), ys.astype(np.float64))
    ts = region.timestamp if region.timestamp is not None else f.q.timestamp
    return VortexDescriptor(
        region_id=region.region_id,
        timestamp=as_utc(ts) if ts is not None else None,
        centroid_geo=region.centroid_geo,
        w1=_mean(f.ch3.pixels[ys, xs]),
        w2=_mean(f.ch4.pixels[ys, xs]),
        w3=_mean(np.hypot(u, v)),
        w4=flow_direction(u, v, w4_mode),
        w5=_mean(f.vorticity.values[ys, xs]),
        w6=_mean(f.divergence.values[ys, xs]),
        w7=float(f.q.values[ys, xs].max()),
        w8=_mean(f.grid.rho_at(lon, lat)),
    )


def compute_descriptor(region: VortexRegion, ch3: SatelliteFrame, ch4: SatelliteFrame,
                       flow: FlowField, sol: FlowField, irr: FlowField, q: ScalarField,
                       grid: DensityGrid, w4_mode: str = "circular") -> VortexDescriptor:
    """Descriptor of a single region; see :class:`VortexDescriptor` for the features."""
    return describe(region, PairFields.build(ch3, ch4, flow, sol, irr, q, grid), w4_mode)


# ------------------------------------------------------------- batch

@dataclass(frozen=True)
class ExtractConfig:
    """Knobs of the per-pair extraction loop.

    ``min_peak_q`` drops components whose strongest Q is at or below the
    given noise floor (1/frame^2).
    """

    flow: FlowParams = field(default_factory=FlowParams)
    min_area_px: int = 20
    min_peak_q: float = 3e-4
    expand_px: int = 0
    flow_channel: str = "ch4"
    w4_mode: str = "circular"
    grid: GridSpec = field(default_factory=GridSpec)
    domain: LabelDomain = CONUS_DOMAIN
    workers: int = 1

    def __post_init__(self):
        if self.flow_channel not in ("ch3", "ch4"):
            raise ValueError("flow_channel must be 'ch3' or 'ch4'")
        if self.w4_mode not in W4_MODES:
            raise ValueError(f"w4_mode must be one of {W4_MODES}")
        if self.min_area_px < 1 or self.expand_px < 0 or self.workers < 1:
            raise ValueError("min_area_px and workers must be >= 1, expand_px >= 0")


@dataclass(frozen=True)
class PairDiagnostic:
    t_prev: datetime
    t_next: datetime
    ok: bool
    n_regions: int = 0
    message: str = ""


@dataclass(frozen=True)
class PairResult:
    """Everything derived from one adjacent frame pair."""

    prev: tuple[SatelliteFrame, SatelliteFrame]
    next: tuple[SatelliteFrame, SatelliteFrame]
    flow: FlowField
    q: ScalarField
    regions: list
    descriptors: list
    labels: list


@dataclass
class BatchResult:
    items: list  # (VortexDescriptor, label or None), ordered by (timestamp, region_id)
    diagnostics: list
    pairs: list = field(default_factory=list)

    @property
    def descriptors(self) -> list[VortexDescriptor]:
        return [d for d, _ in self.items]


def quantize(flow: FlowField) -> FlowField:
    """Round components to float32 (zero where invalid) so cached and fresh
    flows agree exactly."""
    def q(a):
        return np.where(flow.mask, a, 0.0).astype(np.float32).astype(np.float64)
    return flow.with_components(q(flow.u), q(flow.v))


def estimate_flow(prev: SatelliteFrame, next: SatelliteFrame, p: FlowParams) -> FlowField:
    """Equalize, run Lucas-Kanade, stabilize, quantize."""
    a, b = equalize_pair(prev, next)
    return quantize(stabilize_flow(lucas_kanade_dense(a, b, p), p))


FlowProvider = Callable[[SatelliteFrame, SatelliteFrame, FlowParams], FlowField]


class GridCache:
    """Density grids by calendar date (thread-safe enough: grids are pure)."""

    def __init__(self, db: StormDB | None, spec: GridSpec):
        self.db, self.spec, self._grids = db, spec, {}

    def __call__(self, d: date) -> DensityGrid:
        if d not in self._grids:
            self._grids[d] = (build_density_grid(self.db, d, self.spec) if self.db is not None
                              else DensityGrid.empty(d, self.spec))
        return self._grids[d]


def process_pair(prev, next, cfg: ExtractConfig, grids: GridCache, db: StormDB | None = None,
                 flow_provider: FlowProvider = estimate_flow) -> PairResult:
    """Flow, decomposition, Q, regions and descriptors for one pair of
    (Ch3, Ch4) frames.  Features are measured on the raw later frames."""
    k = 0 if cfg.flow_channel == "ch3" else 1
    flow = flow_provider(prev[k], next[k], cfg.flow)
    sol, irr = helmholtz_decompose(flow)
    q = q_criterion(sol)
    ch3, ch4 = next
    q = ScalarField(q.values, q.mask & ch3.mask & ch4.mask, q.transform, q.timestamp)
    regions = extract_vortices(q, cfg.min_area_px, t=next[1].timestamp,
                               expand_px=cfg.expand_px, min_peak_q=cfg.min_peak_q)
    fields = PairFields.build(ch3, ch4, flow, sol, irr, q, grids(next[1].timestamp.date()))
    descs = [describe(r, fields, cfg.w4_mode) for r in regions]
    labels = [label_vortex(db, d, cfg.domain) if db is not None else None for d in descs]
    return PairResult(prev, next, flow, q, regions, descs, labels)


def batch_extract(seq: FrameSequence, db: StormDB | None = None,
                  cfg: ExtractConfig | None = None,
                  flow_provider: FlowProvider = estimate_flow,
                  keep_pairs: bool = False) -> BatchResult:
    """Descriptors (and labels when ``db`` is given) for every adjacent pair.

    A pair that fails is skipped and recorded in ``diagnostics``.  Pairs may
    run on a thread pool; the output order is (timestamp, region_id)
    regardless of scheduling.
    """
    cfg = cfg or ExtractConfig()
    if len(seq) < 2:
        raise DataError("batch_extract needs at least two frame pairs")
    grids = GridCache(db, cfg.grid)
    for d in sorted({p[1].timestamp.date() for p in seq.pairs[1:]}):
        grids(d)  # build up front so worker threads only read

    def run(i):
        prev, nxt = seq.pairs[i], seq.pairs[i + 1]
        try:
            return process_pair(prev, nxt, cfg, grids, db, flow_provider), None
        except (StormflowError, ValueError, ArithmeticError) as e:
            return None, PairDiagnostic(prev[1].timestamp, nxt[1].timestamp, False, 0, str(e))

    jobs = range(len(seq) - 1)
    if cfg.workers > 1:
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            outcomes = list(pool.map(run, jobs))
    else:
        outcomes = [run(i) for i in jobs]

    items, diags, pairs = [], [], []
    for res, diag in outcomes:
        if res is None:
            log.warning("pair %s -> %s skipped: %s", isoformat_utc(diag.t_prev),
                        isoformat_utc(diag.t_next), diag.message)
            diags.append(diag)
            continue
        t0, t1 = res.prev[1].timestamp, res.next[1].timestamp
        log.info("pair %s -> %s: %d region(s)", isoformat_utc(t0), isoformat_utc(t1),
                 len(res.regions))
        diags.append(PairDiagnostic(t0, t1, True, len(res.regions)))
        items.extend(zip(res.descriptors, res.labels))
        if keep_pairs:
            pairs.append(res)
    items.sort(key=lambda it: (it[0].timestamp, it[0].region_id))
    return BatchResult(items, diags, pairs)


# ------------------------------------------------------------- tables

CSV_HEADER = ("region_id", "timestamp", "lon", "lat") + FEATURE_NAMES + ("label",)


def _label_text(label) -> str:
    return "" if label is None else ("true" if label else "false")


def write_descriptor_csv(items: Sequence[tuple[VortexDescriptor, bool | None]], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for d, label in items:
            lon, lat = d.centroid_geo
            w.writerow([d.region_id, isoformat_utc(d.timestamp), repr(float(lon)), repr(float(lat))]
                       + [repr(float(x)) for x in d.as_array()] + [_label_text(label)])


def read_descriptor_csv(path) -> list[tuple[VortexDescriptor, bool | None]]:
    out = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != CSV_HEADER:
            raise DataError(f"{path}: unexpected descriptor header {reader.fieldnames}")
        for row in reader:
            try:
                d = VortexDescriptor(row["region_id"], as_utc(row["timestamp"]),
                                     (float(row["lon"]), float(row["lat"])),
                                     *(float(row[n]) for n in FEATURE_NAMES))
            except ValueError as e:
                raise DataError(f"{path}:{reader.line_num}: {e}") from e
            text = row["label"].strip().lower()
            label = None if text == "" else text == "true"
            out.append((d, label))
    return out


def descriptor_matrix(items: Sequence) -> np.ndarray:
    """Stack descriptors (or (descriptor, label) tuples) into an (n, 8) array."""
    rows = [(it[0] if isinstance(it, tuple) else it).as_array() for it in items]
    return np.array(rows, dtype=np.float64).reshape(len(rows), N_FEATURES)
