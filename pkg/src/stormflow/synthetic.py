"""Analytic flow fields and rendered frame pairs used as test oracles."""
from __future__ import annotations

from dataclasses import dataclass
from datetime import datetime, timedelta, timezone
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np
from scipy import ndimage

from .geo_imaging import Channel, GeoTransform, SatelliteFrame, save_frame
from .optical_flow import FlowField

DEFAULT_START = datetime(2008, 5, 25, 12, 15, tzinfo=timezone.utc)
DEFAULT_SPACING = timedelta(minutes=30)


@dataclass(frozen=True)
class Translation:
    u: float
    v: float

    def evaluate(self, x, y):
        return np.full_like(x, self.u, dtype=float), np.full_like(y, self.v, dtype=float)


@dataclass(frozen=True)
class RigidRotation:
    center: tuple[float, float]
    omega: float

    def evaluate(self, x, y):
        x0, y0 = self.center
        return -self.omega * (y - y0), self.omega * (x - x0)


@dataclass(frozen=True)
class Rankine:
    center: tuple[float, float]
    core_radius: float
    omega: float

    def __post_init__(self):
        if not self.core_radius > 0:
            raise ValueError("core_radius must be positive")

    def evaluate(self, x, y):
        x0, y0 = self.center
        dx, dy = x - x0, y - y0
        r2 = dx * dx + dy * dy
        R2 = self.core_radius ** 2
        # tangential speed / r: omega inside, omega R^2 / r^2 outside
        rate = np.where(r2 <= R2, self.omega, self.omega * R2 / np.maximum(r2, R2))
        return -rate * dy, rate * dx


@dataclass(frozen=True)
class Shear:
    gamma: float
    y0: float = 0.0

    def evaluate(self, x, y):
        return self.gamma * (y - self.y0), np.zeros_like(x, dtype=float)


@dataclass(frozen=True)
class Radial:
    center: tuple[float, float]
    rate: float

    def evaluate(self, x, y):
        x0, y0 = self.center
        return self.rate * (x - x0), self.rate * (y - y0)


@dataclass(frozen=True)
class Composite:
    parts: tuple

    def evaluate(self, x, y):
        u = np.zeros_like(x, dtype=float)
        v = np.zeros_like(y, dtype=float)
        for p in self.parts:
            du, dv = p.evaluate(x, y)
            u, v = u + du, v + dv
        return u, v


def grid_transform(width: int, height: int, lon_origin=-110.0, lat_origin=45.0,
                   step=0.04) -> GeoTransform:
    return GeoTransform(lon_origin, lat_origin, step, -step, width, height)


def sample_field(a, domain: GeoTransform, t_prev: datetime = DEFAULT_START,
                 t_next: datetime | None = None) -> FlowField:
    yy, xx = np.mgrid[0:domain.height, 0:domain.width].astype(np.float64)
    u, v = a.evaluate(xx, yy)
    t_next = t_next or t_prev + DEFAULT_SPACING
    return FlowField(u, v, np.ones(domain.shape, bool), domain, t_prev, t_next)


def band_limited_texture(seed: int, shape: tuple[int, int], cutoff: float = 0.25,
                         low: float = 0.1, high: float = 0.9) -> np.ndarray:
    """Periodic random texture with its spectrum rolled off past ``cutoff``
    (fraction of Nyquist), rescaled to [low, high]."""
    rng = np.random.default_rng(seed)
    noise = rng.standard_normal(shape)
    fy = np.abs(np.fft.fftfreq(shape[0]))[:, None] * 2
    fx = np.abs(np.fft.rfftfreq(shape[1]))[None, :] * 2
    f = np.hypot(fx, fy)
    gain = np.where(f <= cutoff, 1.0, np.exp(-((f - cutoff) / (0.25 * cutoff)) ** 2))
    tex = np.fft.irfft2(np.fft.rfft2(noise) * gain, s=shape)
    tex = (tex - tex.min()) / (tex.max() - tex.min())
    return low + (high - low) * tex


def warp_backward(img: np.ndarray, flow: FlowField) -> np.ndarray:
    """``out(x) = img(x - F(x))``, cubic spline, periodic wrap."""
    h, w = img.shape
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    return ndimage.map_coordinates(img, [yy - flow.v, xx - flow.u], order=3, mode="grid-wrap")


class RenderedPair(NamedTuple):
    prev: SatelliteFrame
    next: SatelliteFrame
    truth: FlowField


def render_pair(texture_seed: int, carrier, domain: GeoTransform | None = None,
                t0: datetime = DEFAULT_START, spacing: timedelta = DEFAULT_SPACING,
                channel: Channel = Channel.CH4) -> RenderedPair:
    domain = domain or grid_transform(256, 256)
    truth = sample_field(carrier, domain, t0, t0 + spacing)
    img0 = band_limited_texture(texture_seed, domain.shape)
    img1 = np.clip(warp_backward(img0, truth), 0.0, 1.0)
    mask = np.ones(domain.shape, bool)
    prev = SatelliteFrame(channel, img0, mask, t0, domain)
    nxt = SatelliteFrame(channel, img1, mask, t0 + spacing, domain)
    return RenderedPair(prev, nxt, truth)


def render_sequence(texture_seed: int, carrier, n_frames: int,
                    domain: GeoTransform | None = None, t0: datetime = DEFAULT_START,
                    spacing: timedelta = DEFAULT_SPACING) -> list[tuple[SatelliteFrame, SatelliteFrame]]:
    """``n_frames`` (Ch3, Ch4) pairs, each frame warped from the previous one.

    Ch3 and Ch4 use independent textures (seeds ``s`` and ``s + 1``) moved by
    the same carrier.
    """
    domain = domain or grid_transform(256, 256)
    truth = sample_field(carrier, domain, t0, t0 + spacing)
    mask = np.ones(domain.shape, bool)
    imgs = {Channel.CH3: band_limited_texture(texture_seed, domain.shape),
            Channel.CH4: band_limited_texture(texture_seed + 1, domain.shape)}
    out = []
    for k in range(n_frames):
        ts = t0 + k * spacing
        if k:
            imgs = {c: np.clip(warp_backward(im, truth), 0.0, 1.0) for c, im in imgs.items()}
        out.append(tuple(SatelliteFrame(c, imgs[c], mask, ts, domain)
                         for c in (Channel.CH3, Channel.CH4)))
    return out


def write_sequence(pairs: Sequence[tuple[SatelliteFrame, SatelliteFrame]], ch3_dir, ch4_dir,
                   suffix: str = ".png") -> None:
    """Emit frames in the on-disk frame format (image + JSON sidecar)."""
    for d in (ch3_dir, ch4_dir):
        Path(d).mkdir(parents=True, exist_ok=True)
    for ch3, ch4 in pairs:
        for frame, d in ((ch3, ch3_dir), (ch4, ch4_dir)):
            stem = f"{frame.channel.value.lower()}_{frame.timestamp:%Y%m%dT%H%M}"
            save_frame(frame, Path(d) / (stem + suffix))


def write_demo_dataset(root, carrier=None, n_frames: int = 2, texture_seed: int = 1,
                       t0: datetime = DEFAULT_START, storm_offset=(0.5, 0.5),
                       storm_delay: timedelta = timedelta(hours=1),
                       domain: GeoTransform | None = None) -> Path:
    """Frames, a storm-report CSV and a pipeline config under ``root``.

    The default carrier is a Rankine vortex (omega 0.05, core 20 px) in the
    middle of a 256 x 256 grid; one storm report is placed ``storm_offset``
    degrees from the vortex centre, ``storm_delay`` after the last frame.
    Returns the config path.
    """
    root = Path(root)
    domain = domain or grid_transform(256, 256)
    carrier = carrier if carrier is not None else Rankine((127.3, 128.6), 20.0, 0.05)
    pairs = render_sequence(texture_seed, carrier, n_frames, domain, t0)
    write_sequence(pairs, root / "ch3", root / "ch4")
    cx, cy = getattr(carrier, "center", (domain.width / 2, domain.height / 2))
    lon = domain.lon_origin + (cx + 0.5) * domain.dlon + storm_offset[0]
    lat = domain.lat_origin + (cy + 0.5) * domain.dlat + storm_offset[1]
    t_storm = pairs[-1][1].timestamp + storm_delay
    (root / "storms.csv").write_text(
        "time,lat,lon,kind\n"
        f"{t_storm:%Y-%m-%dT%H:%M:%SZ},{lat:.4f},{lon:.4f},hail\n")
    cfg = root / "config.yaml"
    cfg.write_text(
        "inputs:\n  ch3: ch3\n  ch4: ch4\n  storm_reports: storms.csv\n"
        "output_dir: out\nseed: 7\n"
        "forest:\n  n_trees: 25\n")
    return cfg
