"""Dense pyramid Lucas-Kanade flow and the fluid-style stabilization pass.

Flow convention: ``(u, v)`` is the forward displacement in pixels per frame
interval, so that ``prev(x, y) ~= next(x + u, y + v)``.  ``u`` runs along
columns (east), ``v`` along rows (south).
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from datetime import datetime
from pathlib import Path

import numpy as np
from scipy import ndimage

from ._grid import angular_wavenumbers, infill_nearest, mirror_extend
from .errors import DataError
from .geo_imaging import (
    GeoTransform,
    SatelliteFrame,
    as_utc,
    isoformat_utc,
    transform_from_meta,
)


@dataclass(frozen=True)
class FlowField:
    u: np.ndarray
    v: np.ndarray
    mask: np.ndarray
    transform: GeoTransform
    t_prev: datetime
    t_next: datetime

    def __post_init__(self):
        shape = self.transform.shape
        for name in ("u", "v"):
            a = np.array(getattr(self, name), dtype=np.float64)
            if a.shape != shape:
                raise DataError(f"flow component {name} has shape {a.shape}, transform {shape}")
            a.flags.writeable = False
            object.__setattr__(self, name, a)
        m = np.array(self.mask, dtype=bool)
        if m.shape != shape:
            raise DataError(f"flow mask has shape {m.shape}, transform {shape}")
        m.flags.writeable = False
        object.__setattr__(self, "mask", m)
        object.__setattr__(self, "t_prev", as_utc(self.t_prev))
        object.__setattr__(self, "t_next", as_utc(self.t_next))

    @property
    def shape(self):
        return self.transform.shape

    def with_components(self, u, v, mask=None) -> "FlowField":
        return FlowField(u, v, self.mask if mask is None else mask,
                         self.transform, self.t_prev, self.t_next)

    def magnitude(self) -> np.ndarray:
        return np.hypot(self.u, self.v)

    def __add__(self, other: "FlowField") -> "FlowField":
        return self.with_components(self.u + other.u, self.v + other.v,
                                    self.mask & other.mask)

    def scaled(self, c: float) -> "FlowField":
        return self.with_components(self.u * c, self.v * c)


WAVENUMBER_UNITS = ("index", "radian")


@dataclass(frozen=True)
class SmoothingParams:
    """Fluid-style smoothing knobs.

    ``wavenumber_units`` selects how ``k`` in exp(-nu k^2 dt) is measured:
    ``"index"`` counts cycles across the frame (the FFT-grid distance used by
    FFT fluid solvers), ``"radian"`` uses radians per pixel.
    """

    viscosity: float = 0.001
    dt: float = 1.0
    iterations: int = 5
    wavenumber_units: str = "index"

    def __post_init__(self):
        if self.wavenumber_units not in WAVENUMBER_UNITS:
            raise ValueError(f"wavenumber_units must be one of {WAVENUMBER_UNITS}")
        if self.viscosity < 0:
            raise ValueError("viscosity must be >= 0")
        if not self.dt > 0:
            raise ValueError("dt must be > 0")
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")


@dataclass(frozen=True)
class FlowParams:
    pyramid_levels: int = 3
    window_radius: int = 8
    min_eigen_threshold: float = 1e-4
    smoothing: SmoothingParams = field(default_factory=SmoothingParams)
    lk_iterations: int = 5

    def __post_init__(self):
        if self.pyramid_levels < 1:
            raise ValueError("pyramid_levels must be >= 1")
        if self.window_radius < 1:
            raise ValueError("window_radius must be >= 1")
        if self.lk_iterations < 0:
            raise ValueError("lk_iterations must be >= 0")
        if isinstance(self.smoothing, dict):
            object.__setattr__(self, "smoothing", SmoothingParams(**self.smoothing))


# ------------------------------------------------------------- Lucas-Kanade

def _pyramid(img: np.ndarray, levels: int) -> list[np.ndarray]:
    pyr = [img]
    for _ in range(levels - 1):
        pyr.append(ndimage.gaussian_filter(pyr[-1], 1.0, mode="reflect")[::2, ::2])
    return pyr


def _upsample_flow(a: np.ndarray, shape) -> np.ndarray:
    yy, xx = np.mgrid[0:shape[0], 0:shape[1]].astype(np.float64)
    return 2.0 * ndimage.map_coordinates(a, [yy / 2, xx / 2], order=1, mode="nearest")


def _min_eigen(a, b, c):
    return 0.5 * (a + c) - np.sqrt(0.25 * (a - c) ** 2 + b * b)


def _window(a, radius):
    # Gaussian weights (sigma = radius / 3, cut at radius); a box window's
    # negative side lobes make the iterative update diverge
    return ndimage.gaussian_filter(a, radius / 3.0, mode="reflect", truncate=3.0)


def _lk_level(i0, i1, u, v, radius, threshold, iterations):
    iy, ix = np.gradient(i0)
    gxx = _window(ix * ix, radius)
    gxy = _window(ix * iy, radius)
    gyy = _window(iy * iy, radius)
    lam = _min_eigen(gxx, gxy, gyy)
    ok = lam >= threshold
    det = np.where(ok, gxx * gyy - gxy * gxy, 1.0)
    yy, xx = np.mgrid[0:i0.shape[0], 0:i0.shape[1]].astype(np.float64)
    h, w = i0.shape
    coeffs = ndimage.spline_filter(i1, order=3, mode="nearest")
    for _ in range(iterations):
        sy, sx = yy + v, xx + u
        warped = ndimage.map_coordinates(coeffs, [sy, sx], order=3, mode="nearest",
                                         prefilter=False)
        # samples falling outside the image carry no information
        inside = (sy >= 0) & (sy <= h - 1) & (sx >= 0) & (sx <= w - 1)
        diff = np.where(inside, i0 - warped, 0.0)
        bx = _window(ix * diff, radius)
        by = _window(iy * diff, radius)
        u = u + np.where(ok, (gyy * bx - gxy * by) / det, 0.0)
        v = v + np.where(ok, (gxx * by - gxy * bx) / det, 0.0)
    return u, v, ok


def lucas_kanade_dense(prev: SatelliteFrame, next: SatelliteFrame,
                       p: FlowParams | None = None) -> FlowField:
    """Coarse-to-fine windowed least-squares flow from ``prev`` to ``next``.

    Pixels whose structure tensor has a least eigenvalue below
    ``p.min_eigen_threshold`` (window-averaged, brightness in [0, 1]) are
    returned as (0, 0) with ``mask=False``.
    """
    p = p or FlowParams()
    if prev.channel != next.channel:
        raise DataError("lucas_kanade_dense: channel mismatch")
    if prev.transform != next.transform:
        raise DataError("lucas_kanade_dense: transform mismatch")
    need = 2 ** (p.pyramid_levels - 1) * (2 * p.window_radius + 1)
    if min(prev.transform.shape) < need:
        raise DataError(
            f"frames {prev.transform.shape} too small for {p.pyramid_levels} pyramid "
            f"levels with window radius {p.window_radius} (need >= {need} px)"
        )
    i0 = infill_nearest(prev.pixels, prev.mask)
    i1 = infill_nearest(next.pixels, next.mask)
    if np.array_equal(i0, i1):
        # no motion; skipping the warps avoids spline round-off in the result
        p = replace(p, lk_iterations=0)
    pyr0 = _pyramid(i0, p.pyramid_levels)
    pyr1 = _pyramid(i1, p.pyramid_levels)

    u = np.zeros_like(pyr0[-1])
    v = np.zeros_like(pyr0[-1])
    for level in range(p.pyramid_levels - 1, -1, -1):
        a, b = pyr0[level], pyr1[level]
        if u.shape != a.shape:
            u = _upsample_flow(u, a.shape)
            v = _upsample_flow(v, a.shape)
        u, v, ok = _lk_level(a, b, u, v, p.window_radius, p.min_eigen_threshold,
                             p.lk_iterations)
    mask = ok & prev.mask & next.mask
    u = np.where(mask, u, 0.0)
    v = np.where(mask, v, 0.0)
    return FlowField(u, v, mask, prev.transform, prev.timestamp, next.timestamp)


# ------------------------------------------------------------- stabilization

def _check_same_grid(a: FlowField, b: FlowField):
    if a.shape != b.shape:
        raise DataError(f"flow grids differ: {a.shape} vs {b.shape}")


def advect(f: FlowField, carrier: FlowField, dt: float) -> FlowField:
    """Semi-Lagrangian transport of ``f`` along ``carrier`` over ``dt``.

    Each pixel samples ``f`` bilinearly at ``(x - dt*U, y - dt*V)`` with
    ``(U, V)`` read from the carrier; backtraces leaving the grid are clamped.
    """
    _check_same_grid(f, carrier)
    h, w = f.shape
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    cu = np.where(carrier.mask, carrier.u, 0.0)
    cv = np.where(carrier.mask, carrier.v, 0.0)
    src_y = np.clip(yy - dt * cv, 0, h - 1)
    src_x = np.clip(xx - dt * cu, 0, w - 1)
    out = []
    for comp in (f.u, f.v):
        filled = infill_nearest(comp, f.mask)
        sampled = ndimage.map_coordinates(filled, [src_y, src_x], order=1, mode="nearest")
        out.append(np.where(f.mask, sampled, comp))
    return f.with_components(*out)


def wavenumber_squared(shape, units: str = "index") -> np.ndarray:
    """k^2 on the rfft2 grid of the mirror-extended ``shape``."""
    h, w = shape
    ky, kx = angular_wavenumbers((2 * h, 2 * w))
    if units == "index":
        kx = kx * w / (2 * np.pi)
        ky = ky * h / (2 * np.pi)
    elif units != "radian":
        raise ValueError(f"unknown wavenumber units {units!r}")
    return kx ** 2 + ky ** 2


def diffusion_multiplier(shape, nu: float, dt: float, units: str = "index") -> np.ndarray:
    return np.exp(-nu * wavenumber_squared(shape, units) * dt)


def diffuse_component(a: np.ndarray, mask: np.ndarray, nu: float, dt: float,
                      units: str = "index") -> np.ndarray:
    if nu == 0 or dt == 0:
        return np.array(a, dtype=np.float64, copy=True)
    h, w = a.shape
    ext = mirror_extend(infill_nearest(a, mask))
    spec = np.fft.rfft2(ext) * diffusion_multiplier((h, w), nu, dt, units)
    out = np.fft.irfft2(spec, s=ext.shape)[:h, :w]
    return np.where(mask, out, a)


def diffuse_fft(f: FlowField, nu: float, dt: float, units: str = "index") -> FlowField:
    """Low-pass each component with exp(-nu k^2 dt) in the Fourier domain.

    With ``units="index"`` a mode making ``m`` cycles across the frame width
    has ``k = m`` along x (likewise rows along y); see
    :class:`SmoothingParams`.  The grid is mirror-extended to twice its size
    before the transform so the non-periodic window does not wrap.  Invalid
    pixels are in-filled from their nearest valid neighbour for the transform
    and keep their input values afterwards.
    """
    return f.with_components(diffuse_component(f.u, f.mask, nu, dt, units),
                             diffuse_component(f.v, f.mask, nu, dt, units))


def stabilize_flow(raw: FlowField, p: FlowParams | None = None) -> FlowField:
    """Smooth a noisy flow by repeated add-force / self-advect / diffuse steps.

    The raw estimate acts as a constant external force on a field that starts
    at zero.  After ``k`` rounds the field holds ``k*dt`` worth of force, so
    the backtrace uses ``F / (k*dt)`` (a per-frame displacement) as carrier
    and the result is divided by ``n*dt`` to come back to pixels per frame.
    """
    s = (p or FlowParams()).smoothing
    zeros = np.zeros(raw.shape)
    F = raw.with_components(zeros, zeros)
    if s.iterations == 0:
        return F
    force_u = np.where(raw.mask, raw.u, 0.0)
    force_v = np.where(raw.mask, raw.v, 0.0)
    for k in range(1, s.iterations + 1):
        F = F.with_components(F.u + force_u * s.dt, F.v + force_v * s.dt)
        F = advect(F, F.scaled(1.0 / (k * s.dt)), s.dt)
        F = diffuse_fft(F, s.viscosity, s.dt, s.wavenumber_units)
    return F.scaled(1.0 / (s.iterations * s.dt))


# ------------------------------------------------------------- serialization

def _write_grid(path: Path, values: np.ndarray, mask: np.ndarray):
    np.where(mask, values, np.nan).astype("<f4").tofile(path)


def _read_grid(path: Path, t: GeoTransform) -> np.ndarray:
    raw = np.fromfile(path, dtype="<f4")
    if raw.size != t.width * t.height:
        raise DataError(f"{path}: size does not match sidecar transform")
    return raw.reshape(t.shape).astype(np.float64)


def save_flow(flow: FlowField, stem) -> None:
    """Write ``<stem>_u.f32``, ``<stem>_v.f32`` and ``<stem>.json``."""
    stem = Path(stem)
    _write_grid(stem.with_name(stem.name + "_u.f32"), flow.u, flow.mask)
    _write_grid(stem.with_name(stem.name + "_v.f32"), flow.v, flow.mask)
    meta = dict(flow.transform.to_dict(), kind="flow",
                t_prev=isoformat_utc(flow.t_prev), t_next=isoformat_utc(flow.t_next),
                timestamp=isoformat_utc(flow.t_next))
    stem.with_suffix(".json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def load_flow(stem) -> FlowField:
    stem = Path(stem)
    meta = json.loads(stem.with_suffix(".json").read_text())
    t = transform_from_meta(meta)
    u = _read_grid(stem.with_name(stem.name + "_u.f32"), t)
    v = _read_grid(stem.with_name(stem.name + "_v.f32"), t)
    mask = np.isfinite(u) & np.isfinite(v)
    return FlowField(np.where(mask, u, 0.0), np.where(mask, v, 0.0), mask, t,
                     meta["t_prev"], meta["t_next"])
