"""Historical storm reports: ingest, date-conditioned density grids, labeling.

A storm report is ``(time, lat, lon, kind)``.  Vortices are matched to
reports inside a 6 x 6 degree box (strict per-axis ``< 3`` degrees) and an
inclusive time window ``[t - 30 min, t + 2 h]``.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from datetime import date, datetime, timedelta, timezone
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import DataError
from .geo_imaging import as_utc

SPATIAL_HALF_WIDTH_DEG = 3.0
LABEL_LOOKBACK = timedelta(minutes=30)
LABEL_LOOKAHEAD = timedelta(hours=2)
ONSET_LOOKBACK = timedelta(hours=2)
WINDOW_HALF_DAYS = 5

_US = 1_000_000
_EPOCH = datetime(1970, 1, 1, tzinfo=timezone.utc)


def to_us(ts) -> int:
    """UTC instant -> integer microseconds since the epoch (exact)."""
    delta = as_utc(ts) - _EPOCH
    return (delta.days * 86400 + delta.seconds) * _US + delta.microseconds


def from_us(us: int) -> datetime:
    return _EPOCH + timedelta(microseconds=int(us))


def _td_us(td: timedelta) -> int:
    return (td.days * 86400 + td.seconds) * _US + td.microseconds


@dataclass(frozen=True)
class StormReport:
    time: datetime
    lat: float
    lon: float
    kind: str = ""


class StormDB:
    """Immutable, time-sorted collection of storm reports.

    Reports are bucketed by 1-degree cell so box queries only touch the
    cells that can satisfy the per-axis distance test.
    """

    def __init__(self, reports: Iterable[StormReport], coverage_years: Iterable[int] | None = None):
        reports = sorted(reports, key=lambda r: (to_us(r.time), r.lat, r.lon, r.kind))
        self._times = np.array([to_us(r.time) for r in reports], dtype=np.int64)
        self._lat = np.array([r.lat for r in reports], dtype=np.float64)
        self._lon = np.array([r.lon for r in reports], dtype=np.float64)
        self._kind = tuple(r.kind for r in reports)
        self._day = np.array([as_utc(r.time).date().toordinal() for r in reports], dtype=np.int64)
        for a in (self._times, self._lat, self._lon, self._day):
            a.flags.writeable = False
        if coverage_years is None:
            coverage_years = {as_utc(r.time).year for r in reports}
        self.coverage_years = tuple(sorted(set(int(y) for y in coverage_years)))
        buckets: dict[tuple[int, int], list[int]] = {}
        for i in range(len(reports)):
            key = (math.floor(self._lat[i]), math.floor(self._lon[i]))
            buckets.setdefault(key, []).append(i)
        # indices within a bucket are time-sorted because reports are
        self._buckets = {k: np.array(v, dtype=np.int64) for k, v in buckets.items()}

    def __len__(self) -> int:
        return len(self._times)

    @property
    def times_us(self) -> np.ndarray:
        return self._times

    @property
    def lats(self) -> np.ndarray:
        return self._lat

    @property
    def lons(self) -> np.ndarray:
        return self._lon

    @property
    def day_ordinals(self) -> np.ndarray:
        return self._day

    def report(self, i: int) -> StormReport:
        return StormReport(from_us(self._times[i]), float(self._lat[i]), float(self._lon[i]),
                           self._kind[i])

    def nearby(self, lat: float, lon: float) -> np.ndarray:
        """Indices (time-sorted) of reports strictly within 3 degrees per axis."""
        r = int(math.ceil(SPATIAL_HALF_WIDTH_DEG))
        cy, cx = math.floor(lat), math.floor(lon)
        parts = [self._buckets[(cy + dy, cx + dx)]
                 for dy in range(-r, r + 1) for dx in range(-r, r + 1)
                 if (cy + dy, cx + dx) in self._buckets]
        if not parts:
            return np.zeros(0, dtype=np.int64)
        idx = np.sort(np.concatenate(parts))
        ok = (np.abs(self._lat[idx] - lat) < SPATIAL_HALF_WIDTH_DEG) & \
             (np.abs(self._lon[idx] - lon) < SPATIAL_HALF_WIDTH_DEG)
        return idx[ok]


def _parse_time(text: str) -> datetime:
    text = text.strip()
    if text.endswith(("Z", "z")):
        text = text[:-1] + "+00:00"
    return as_utc(datetime.fromisoformat(text))


def ingest_reports(csv_path, coverage_years: Iterable[int] | None = None) -> StormDB:
    """Read a ``time,lat,lon,kind`` CSV; errors name the offending line."""
    path = Path(csv_path)
    try:
        fh = path.open(newline="")
    except OSError as e:
        raise DataError(f"{path}: cannot open storm reports ({e})") from e
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise DataError(f"{path}: empty storm report file")
        header = [h.strip().lower() for h in header]
        missing = [c for c in ("time", "lat", "lon", "kind") if c not in header]
        if missing:
            raise DataError(f"{path}: header lacks column(s) {', '.join(missing)}")
        col = {c: header.index(c) for c in ("time", "lat", "lon", "kind")}
        reports = []
        for row in reader:
            line = reader.line_num
            if not row or all(not c.strip() for c in row):
                continue
            try:
                t = _parse_time(row[col["time"]])
                lat = float(row[col["lat"]])
                lon = float(row[col["lon"]])
                kind = row[col["kind"]].strip() if col["kind"] < len(row) else ""
            except (ValueError, IndexError) as e:
                raise DataError(f"{path}:{line}: malformed storm report ({e})") from e
            if not (-90.0 <= lat <= 90.0) or not math.isfinite(lat):
                raise DataError(f"{path}:{line}: latitude {lat} out of range")
            if not (-180.0 <= lon <= 180.0) or not math.isfinite(lon):
                raise DataError(f"{path}:{line}: longitude {lon} out of range")
            reports.append(StormReport(t, lat, lon, kind))
    if not reports:
        raise DataError(f"{path}: no storm reports")
    return StormDB(reports, coverage_years)


# ---------------------------------------------------------------- density

@dataclass(frozen=True)
class GridSpec:
    """Cell layout of the density grid; ``i`` indexes longitude, ``j`` latitude."""

    lon_min: float = -124.0
    lat_min: float = 20.0
    cell_deg: float = 4.0
    n_lon: int = 16
    n_lat: int = 8

    def __post_init__(self):
        if not self.cell_deg > 0 or self.n_lon < 1 or self.n_lat < 1:
            raise ValueError("grid needs a positive cell size and at least one cell")

    def cell_of(self, lon, lat):
        """(i, j, inside) for arrays of coordinates; cells are half-open."""
        lon = np.asarray(lon, dtype=np.float64)
        lat = np.asarray(lat, dtype=np.float64)
        i = np.floor((lon - self.lon_min) / self.cell_deg).astype(np.int64)
        j = np.floor((lat - self.lat_min) / self.cell_deg).astype(np.int64)
        inside = (i >= 0) & (i < self.n_lon) & (j >= 0) & (j < self.n_lat)
        return i, j, inside


@dataclass(frozen=True)
class DensityGrid:
    """Average storms per day per cell around a calendar date.

    ``counts`` and ``rho`` have shape ``(n_lat, n_lon)``, indexed ``[j, i]``
    with ``j = 0`` the southernmost row.
    """

    query: date
    spec: GridSpec
    counts: np.ndarray
    n_years: int
    rho: np.ndarray = field(init=False)

    def __post_init__(self):
        counts = np.array(self.counts, dtype=np.int64)
        counts.flags.writeable = False
        object.__setattr__(self, "counts", counts)
        divisor = (2 * WINDOW_HALF_DAYS + 1) * self.n_years
        rho = counts / divisor if divisor else np.zeros(counts.shape)
        rho.flags.writeable = False
        object.__setattr__(self, "rho", rho)

    def rho_at(self, lon, lat) -> np.ndarray:
        """Density at each location; zero outside the grid."""
        i, j, inside = self.spec.cell_of(lon, lat)
        out = np.zeros(np.shape(i))
        out[inside] = self.rho[j[inside], i[inside]]
        return out

    @classmethod
    def empty(cls, query: date, spec: GridSpec | None = None) -> "DensityGrid":
        spec = spec or GridSpec()
        return cls(query, spec, np.zeros((spec.n_lat, spec.n_lon), np.int64), 0)


def _window_centre(year: int, month: int, day: int) -> date:
    try:
        return date(year, month, day)
    except ValueError:
        if (month, day) == (2, 29):
            return date(year, 2, 28)
        raise


def window_days(query: date, years: Sequence[int]) -> np.ndarray:
    """Day ordinals within +-5 calendar days of ``query``'s month/day in each year."""
    days = []
    for y in years:
        c = _window_centre(y, query.month, query.day).toordinal()
        days.extend(range(c - WINDOW_HALF_DAYS, c + WINDOW_HALF_DAYS + 1))
    return np.unique(np.array(days, dtype=np.int64))


def build_density_grid(db: StormDB, query, spec: GridSpec | None = None) -> DensityGrid:
    """Counts of reports per cell whose calendar day falls in the query window,
    divided by ``11 * len(db.coverage_years)``."""
    spec = spec or GridSpec()
    if isinstance(query, datetime):
        query = as_utc(query).date()
    years = db.coverage_years
    counts = np.zeros((spec.n_lat, spec.n_lon), dtype=np.int64)
    if len(db) and years:
        sel = np.isin(db.day_ordinals, window_days(query, years))
        i, j, inside = spec.cell_of(db.lons[sel], db.lats[sel])
        np.add.at(counts, (j[inside], i[inside]), 1)
    return DensityGrid(query, spec, counts, len(years))


def write_density_csv(grid: DensityGrid, path) -> None:
    s = grid.spec
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["i", "j", "lon_min", "lat_min", "rho"])
        for j in range(s.n_lat):
            for i in range(s.n_lon):
                w.writerow([i, j, repr(s.lon_min + i * s.cell_deg),
                            repr(s.lat_min + j * s.cell_deg), repr(float(grid.rho[j, i]))])


# ---------------------------------------------------------------- labels

@dataclass(frozen=True)
class LabelDomain:
    """Region in which vortices receive labels: a lon/lat box, optionally
    narrowed by a polygon (list of ``(lon, lat)`` vertices)."""

    lon_min: float = -124.0
    lon_max: float = -60.0
    lat_min: float = 20.0
    lat_max: float = 52.0
    polygon: tuple[tuple[float, float], ...] | None = None

    def contains(self, lon: float, lat: float) -> bool:
        if not (self.lon_min <= lon <= self.lon_max and self.lat_min <= lat <= self.lat_max):
            return False
        if self.polygon is None:
            return True
        from matplotlib.path import Path as MplPath
        return bool(MplPath(np.asarray(self.polygon)).contains_point((lon, lat)))

    @classmethod
    def with_polygon_file(cls, path, **bounds) -> "LabelDomain":
        """Load a polygon from a GeoJSON Polygon/Feature or a bare JSON vertex list."""
        obj = json.loads(Path(path).read_text())
        if isinstance(obj, dict):
            if obj.get("type") == "FeatureCollection":
                obj = obj["features"][0]
            if obj.get("type") == "Feature":
                obj = obj["geometry"]
            if obj.get("type") != "Polygon":
                raise DataError(f"{path}: expected a Polygon geometry")
            obj = obj["coordinates"][0]
        ring = tuple((float(p[0]), float(p[1])) for p in obj)
        if len(ring) < 3:
            raise DataError(f"{path}: polygon needs at least three vertices")
        lons = [p[0] for p in ring]
        lats = [p[1] for p in ring]
        bounds = dict(dict(lon_min=min(lons), lon_max=max(lons), lat_min=min(lats),
                           lat_max=max(lats)), **bounds)
        return cls(polygon=ring, **bounds)


CONUS_DOMAIN = LabelDomain()


def _centroid_and_time(v):
    lon, lat = v.centroid_geo
    return float(lat), float(lon), v.timestamp


def storm_related(db: StormDB, lat: float, lon: float, t) -> bool:
    """True iff some report lies strictly within 3 degrees on each axis and
    in ``[t - 30 min, t + 2 h]`` (inclusive)."""
    if not len(db):
        return False
    t_us = to_us(t)
    lo, hi = t_us - _td_us(LABEL_LOOKBACK), t_us + _td_us(LABEL_LOOKAHEAD)
    idx = db.nearby(lat, lon)
    times = db.times_us[idx]
    return bool(np.any((times >= lo) & (times <= hi)))


def label_vortex(db: StormDB, v, domain: LabelDomain = CONUS_DOMAIN) -> bool | None:
    """Storm label for a region or descriptor; ``None`` when its centroid is
    outside the labeled domain (unlabeled, distinct from negative)."""
    lat, lon, t = _centroid_and_time(v)
    if t is None:
        raise ValueError("vortex has no timestamp")
    if not domain.contains(lon, lat):
        return None
    return storm_related(db, lat, lon, t)


def earliest_storm_time(db: StormDB, lat: float, lon: float, t) -> datetime | None:
    """Earliest report time ``t_i > t - 2 h`` strictly within 3 degrees per axis."""
    if not len(db):
        return None
    lo = to_us(t) - _td_us(ONSET_LOOKBACK)
    idx = db.nearby(lat, lon)
    times = db.times_us[idx]
    later = times[times > lo]
    return from_us(int(later.min())) if later.size else None


def sample_balanced_training(labeled: Sequence[tuple[object, bool]], seed: int) -> list:
    """All positives plus an equal number of negatives drawn uniformly
    without replacement; input order is preserved in the output."""
    pos = [i for i, (_, lab) in enumerate(labeled) if lab]
    neg = [i for i, (_, lab) in enumerate(labeled) if not lab]
    if len(neg) < len(pos):
        raise DataError(f"need at least as many negatives as positives "
                        f"({len(neg)} < {len(pos)})")
    rng = np.random.default_rng(seed)
    chosen = rng.choice(len(neg), size=len(pos), replace=False) if pos else []
    keep = set(pos) | {neg[int(k)] for k in chosen}
    return [labeled[i] for i in sorted(keep)]
