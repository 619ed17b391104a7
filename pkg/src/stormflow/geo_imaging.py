"""Pre-projected satellite frames on an equirectangular grid.

Frames are stored as a single-band brightness grid (PNG or raw little-endian
float32 ``.f32``) next to a JSON sidecar carrying the channel, timestamp,
geo-transform and an optional nodata value.  Grids are indexed ``[row, col]``,
i.e. ``[y, x]``, with rows running south.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from datetime import datetime, timedelta, timezone
from enum import Enum
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import DataError

N_EQUALIZE_BINS = 256


class Channel(str, Enum):
    CH3 = "Ch3"
    CH4 = "Ch4"

    @classmethod
    def parse(cls, value) -> "Channel":
        if isinstance(value, Channel):
            return value
        text = str(value).strip().lower()
        for member in cls:
            if member.value.lower() == text or text == member.value[-1]:
                return member
        raise DataError(f"unknown channel {value!r}")


@dataclass(frozen=True)
class GeoTransform:
    """Affine pixel <-> (lon, lat) mapping, pixel-centre convention."""

    lon_origin: float
    lat_origin: float
    dlon: float
    dlat: float
    width: int
    height: int

    def __post_init__(self):
        if not self.dlon > 0:
            raise ValueError(f"dlon must be positive, got {self.dlon}")
        if not self.dlat < 0:
            raise ValueError(f"dlat must be negative, got {self.dlat}")
        if self.width < 1 or self.height < 1:
            raise ValueError("transform needs at least one pixel")
        lon_end = self.lon_origin + self.width * self.dlon
        lat_end = self.lat_origin + self.height * self.dlat
        if not (-180 <= self.lon_origin <= 180 and -180 <= lon_end <= 180):
            raise ValueError("longitude extent leaves [-180, 180]")
        if not (-90 <= self.lat_origin <= 90 and -90 <= lat_end <= 90):
            raise ValueError("latitude extent leaves [-90, 90]")

    @property
    def shape(self) -> tuple[int, int]:
        return (self.height, self.width)

    @property
    def bounds(self) -> tuple[float, float, float, float]:
        """(lon_min, lat_min, lon_max, lat_max) of the pixel edges."""
        return (
            self.lon_origin,
            self.lat_origin + self.height * self.dlat,
            self.lon_origin + self.width * self.dlon,
            self.lat_origin,
        )

    def to_dict(self) -> dict:
        return {
            "lon_origin": self.lon_origin,
            "lat_origin": self.lat_origin,
            "dlon": self.dlon,
            "dlat": self.dlat,
            "width": self.width,
            "height": self.height,
        }


CONUS_TRANSFORM = GeoTransform(-124.0, 52.0, 0.04, -0.04, 1600, 800)


def pixel_to_geo(t: GeoTransform, x, y):
    """Map pixel column/row (fractional allowed) to (lon, lat) degrees."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if np.any((x < 0) | (x >= t.width)) or np.any((y < 0) | (y >= t.height)):
        raise ValueError("pixel index outside the transform")
    lon = t.lon_origin + (x + 0.5) * t.dlon
    lat = t.lat_origin + (y + 0.5) * t.dlat
    if lon.ndim == 0:
        return float(lon), float(lat)
    return lon, lat


def geo_to_pixel(t: GeoTransform, lon, lat):
    """Inverse of :func:`pixel_to_geo`."""
    lon = np.asarray(lon, dtype=float)
    lat = np.asarray(lat, dtype=float)
    x = (lon - t.lon_origin) / t.dlon - 0.5
    y = (lat - t.lat_origin) / t.dlat - 0.5
    # absorb round-off at the first pixel centre
    x = np.where((x < 0) & (x > -1e-9), 0.0, x)
    y = np.where((y < 0) & (y > -1e-9), 0.0, y)
    if np.any((x < 0) | (x >= t.width)) or np.any((y < 0) | (y >= t.height)):
        raise ValueError("geographic point outside the transform")
    if x.ndim == 0:
        return float(x), float(y)
    return x, y


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class SatelliteFrame:
    channel: Channel
    pixels: np.ndarray
    mask: np.ndarray
    timestamp: datetime
    transform: GeoTransform

    def __post_init__(self):
        pixels = _readonly(np.asarray(self.pixels, dtype=np.float64))
        mask = _readonly(np.asarray(self.mask, dtype=bool))
        if pixels.shape != self.transform.shape or mask.shape != self.transform.shape:
            raise DataError(
                f"frame grid {pixels.shape} / mask {mask.shape} does not match "
                f"transform {self.transform.shape}"
            )
        object.__setattr__(self, "pixels", pixels)
        object.__setattr__(self, "mask", mask)
        object.__setattr__(self, "channel", Channel.parse(self.channel))
        object.__setattr__(self, "timestamp", as_utc(self.timestamp))

    def replace(self, **changes) -> "SatelliteFrame":
        kw = dict(
            channel=self.channel,
            pixels=self.pixels,
            mask=self.mask,
            timestamp=self.timestamp,
            transform=self.transform,
        )
        kw.update(changes)
        return SatelliteFrame(**kw)


@dataclass(frozen=True)
class FrameSequence:
    """Time-ordered (Ch3, Ch4) frame pairs sharing one transform."""

    pairs: tuple
    spacing: timedelta = timedelta(minutes=30)
    tolerance: float = 0.10

    def __post_init__(self):
        pairs = tuple(tuple(p) for p in self.pairs)
        object.__setattr__(self, "pairs", pairs)
        if not pairs:
            return
        transform = pairs[0][0].transform
        for ch3, ch4 in pairs:
            if ch3.channel != Channel.CH3 or ch4.channel != Channel.CH4:
                raise DataError("each pair must be (Ch3, Ch4)")
            if ch3.transform != transform or ch4.transform != transform:
                raise DataError("all frames in a sequence must share one transform")
        times = [p[1].timestamp for p in pairs]
        lo = self.spacing * (1 - self.tolerance)
        hi = self.spacing * (1 + self.tolerance)
        for a, b in zip(times, times[1:]):
            if not b > a:
                raise DataError(f"timestamps not strictly increasing at {b.isoformat()}")
            if not lo <= b - a <= hi:
                raise DataError(
                    f"frame spacing {b - a} between {a.isoformat()} and "
                    f"{b.isoformat()} is outside {self.spacing} +/- {self.tolerance:.0%}"
                )

    @property
    def transform(self) -> GeoTransform:
        return self.pairs[0][0].transform

    def __len__(self) -> int:
        return len(self.pairs)


def as_utc(ts) -> datetime:
    if isinstance(ts, str):
        ts = datetime.fromisoformat(ts.strip().replace("Z", "+00:00"))
    if ts.tzinfo is None:
        return ts.replace(tzinfo=timezone.utc)
    return ts.astimezone(timezone.utc)


def isoformat_utc(ts: datetime) -> str:
    return as_utc(ts).strftime("%Y-%m-%dT%H:%M:%SZ")


_REQUIRED_META = ("channel", "timestamp", "lon_origin", "lat_origin", "dlon", "dlat", "width", "height")


def read_sidecar(meta_path) -> dict:
    meta_path = Path(meta_path)
    try:
        meta = json.loads(meta_path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read metadata {meta_path}: {exc}") from exc
    missing = [k for k in _REQUIRED_META if k not in meta]
    if missing:
        raise DataError(f"{meta_path}: missing metadata field(s) {', '.join(missing)}")
    return meta


def transform_from_meta(meta: dict) -> GeoTransform:
    try:
        return GeoTransform(
            float(meta["lon_origin"]),
            float(meta["lat_origin"]),
            float(meta["dlon"]),
            float(meta["dlat"]),
            int(meta["width"]),
            int(meta["height"]),
        )
    except ValueError as exc:
        raise DataError(f"invalid transform in metadata: {exc}") from exc


def _decode_grid(image_path: Path, t: GeoTransform):
    """Return (raw values, full-scale divisor)."""
    if image_path.suffix.lower() == ".f32":
        raw = np.fromfile(image_path, dtype="<f4")
        if raw.size != t.width * t.height:
            raise DataError(
                f"{image_path}: {raw.size} float32 values, transform declares "
                f"{t.width}x{t.height}"
            )
        return raw.reshape(t.height, t.width).astype(np.float64), 1.0
    try:
        with Image.open(image_path) as im:
            if im.mode not in ("L", "I;16", "I;16L", "I;16B", "I"):
                raise DataError(f"{image_path}: expected single-band grayscale, got mode {im.mode}")
            mode = im.mode
            raw = np.array(im)
    except DataError:
        raise
    except Exception as exc:
        raise DataError(f"cannot decode {image_path}: {exc}") from exc
    if raw.ndim != 2:
        raise DataError(f"{image_path}: expected a single-band grid")
    if raw.shape != t.shape:
        raise DataError(
            f"{image_path}: image is {raw.shape[1]}x{raw.shape[0]}, transform declares "
            f"{t.width}x{t.height}"
        )
    scale = 255.0 if mode == "L" else 65535.0
    return raw.astype(np.float64), scale


def load_frame(image_path, meta_path) -> SatelliteFrame:
    image_path = Path(image_path)
    meta = read_sidecar(meta_path)
    t = transform_from_meta(meta)
    raw, scale = _decode_grid(image_path, t)
    mask = np.isfinite(raw)
    nodata = meta.get("nodata")
    if nodata is not None:
        mask &= raw != float(nodata)
    pixels = np.where(mask, raw / scale, 0.0)
    if np.any(pixels[mask] < 0) or np.any(pixels[mask] > 1):
        raise DataError(f"{image_path}: valid brightness outside [0, 1]")
    try:
        ts = as_utc(meta["timestamp"])
    except ValueError as exc:
        raise DataError(f"{meta_path}: bad timestamp: {exc}") from exc
    return SatelliteFrame(Channel.parse(meta["channel"]), pixels, mask, ts, t)


def write_sidecar(meta_path, t: GeoTransform, timestamp: datetime, channel=None,
                  nodata=None, **extra) -> None:
    meta = {}
    if channel is not None:
        meta["channel"] = Channel.parse(channel).value
    meta["timestamp"] = isoformat_utc(timestamp)
    meta.update(t.to_dict())
    if nodata is not None:
        meta["nodata"] = nodata
    meta.update(extra)
    Path(meta_path).write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def save_frame(frame: SatelliteFrame, image_path, meta_path=None) -> None:
    """Write ``frame`` as ``.f32`` (NaN = invalid) or 16-bit PNG (0 = nodata)."""
    image_path = Path(image_path)
    meta_path = Path(meta_path) if meta_path else image_path.with_suffix(".json")
    if image_path.suffix.lower() == ".f32":
        grid = np.where(frame.mask, frame.pixels, np.nan).astype("<f4")
        grid.tofile(image_path)
        nodata = None
    else:
        # level 0 is reserved for nodata, so the darkest valid level is 1
        levels = np.clip(np.round(frame.pixels * 65535.0), 1, 65535)
        grid = np.where(frame.mask, levels, 0).astype(np.uint16)
        Image.fromarray(grid).save(image_path)
        nodata = 0
    write_sidecar(meta_path, frame.transform, frame.timestamp, frame.channel, nodata)


# ---------------------------------------------------------------- equalization

def equalization_mapping(frame: SatelliteFrame, n_bins: int = N_EQUALIZE_BINS) -> np.ndarray:
    """Empirical CDF of the valid pixels, one value per brightness bin."""
    values = frame.pixels[frame.mask]
    if values.size == 0:
        raise DataError("cannot equalize a frame with no valid pixels")
    counts = np.bincount(_bin_index(values, n_bins), minlength=n_bins)
    return np.cumsum(counts) / values.size


def _bin_index(values: np.ndarray, n_bins: int) -> np.ndarray:
    return np.clip(np.floor(values * n_bins).astype(np.int64), 0, n_bins - 1)


def apply_mapping(frame: SatelliteFrame, mapping: np.ndarray) -> SatelliteFrame:
    out = mapping[_bin_index(frame.pixels, mapping.size)]
    return frame.replace(pixels=np.where(frame.mask, out, 0.0))


def equalize_pair(f_prev: SatelliteFrame, f_next: SatelliteFrame):
    """Equalize both frames with the mapping fitted on ``f_prev`` alone."""
    if f_prev.channel != f_next.channel:
        raise DataError("equalize_pair: channel mismatch")
    if f_prev.transform != f_next.transform:
        raise DataError("equalize_pair: transform mismatch")
    mapping = equalization_mapping(f_prev)
    return apply_mapping(f_prev, mapping), apply_mapping(f_next, mapping)
