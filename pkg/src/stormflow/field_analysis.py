"""Differential and spectral calculus on flow fields.

Derivatives are central differences in pixel units, falling back to one-sided
two-point stencils next to invalid pixels and at the grid edge.  All of these
are exact for affine fields.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from datetime import datetime
from pathlib import Path

import numpy as np
from scipy import ndimage

from ._grid import angular_wavenumbers, infill_nearest, mirror_extend
from .errors import DataError
from .geo_imaging import GeoTransform, as_utc, isoformat_utc, pixel_to_geo, transform_from_meta
from .optical_flow import FlowField


@dataclass(frozen=True)
class ScalarField:
    values: np.ndarray
    mask: np.ndarray
    transform: GeoTransform
    timestamp: datetime | None = None

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64)
        mask = np.array(self.mask, dtype=bool)
        if values.shape != self.transform.shape or mask.shape != self.transform.shape:
            raise DataError("scalar field dimensions do not match the transform")
        values.flags.writeable = False
        mask.flags.writeable = False
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "mask", mask)
        if self.timestamp is not None:
            object.__setattr__(self, "timestamp", as_utc(self.timestamp))


def _axis_derivative(a: np.ndarray, m: np.ndarray, axis: int):
    """d/d(axis) with central / one-sided stencils; returns (deriv, valid)."""
    a = np.moveaxis(np.where(m, a, 0.0), axis, -1)
    m = np.moveaxis(m, axis, -1)
    fwd = np.zeros_like(a)
    bwd = np.zeros_like(a)
    has_fwd = np.zeros_like(m)
    has_bwd = np.zeros_like(m)
    fwd[..., :-1] = a[..., 1:] - a[..., :-1]
    has_fwd[..., :-1] = m[..., 1:] & m[..., :-1]
    bwd[..., 1:] = fwd[..., :-1]
    has_bwd[..., 1:] = has_fwd[..., :-1]
    d = np.where(has_fwd & has_bwd, 0.5 * (fwd + bwd),
                 np.where(has_fwd, fwd, np.where(has_bwd, bwd, 0.0)))
    valid = m & (has_fwd | has_bwd)
    return np.moveaxis(d, -1, axis), np.moveaxis(valid, -1, axis)


def velocity_gradient(f: FlowField):
    """Return (dU/dx, dU/dy, dV/dx, dV/dy, valid)."""
    ux, vx_ok = _axis_derivative(f.u, f.mask, axis=1)
    uy, vy_ok = _axis_derivative(f.u, f.mask, axis=0)
    vx, _ = _axis_derivative(f.v, f.mask, axis=1)
    vy, _ = _axis_derivative(f.v, f.mask, axis=0)
    return ux, uy, vx, vy, vx_ok & vy_ok


def vorticity(f: FlowField) -> ScalarField:
    """Signed curl dV/dx - dU/dy; positive is counter-clockwise in (x, y)."""
    ux, uy, vx, vy, ok = velocity_gradient(f)
    return ScalarField(np.where(ok, vx - uy, 0.0), ok, f.transform, f.t_next)


def divergence(f: FlowField) -> ScalarField:
    ux, uy, vx, vy, ok = velocity_gradient(f)
    return ScalarField(np.where(ok, ux + vy, 0.0), ok, f.transform, f.t_next)


def helmholtz_decompose(f: FlowField):
    """Split ``f`` into (solenoidal, irrotational) components.

    The irrotational part is the gradient of a potential whose Laplacian is
    ``divergence(f)``.  The Poisson problem is solved spectrally on the
    divergence mirrored to twice the grid size (a Neumann boundary), using the
    symbol of the same central-difference operator that :func:`divergence`
    applies, so the divergence of the solenoidal part and the curl of the
    irrotational part vanish to round-off in the interior.  A Neumann problem
    cannot carry net outflow, so the domain-mean divergence is assigned to
    the uniform-expansion potential ``mean * |x - c|^2 / 4``.  Any harmonic
    remainder stays in the solenoidal part.
    """
    h, w = f.shape
    div = divergence(f)
    d = infill_nearest(div.values, div.mask)
    mean = float(d.mean())
    ext = mirror_extend(d - mean)
    ky, kx = angular_wavenumbers(ext.shape)
    sx = 1j * np.sin(kx)
    sy = 1j * np.sin(ky)
    lap = -(np.sin(kx) ** 2 + np.sin(ky) ** 2)
    # the zero-symbol modes (mean and checkerboards) carry no energy after an
    # even half-sample reflection, so dropping them loses nothing
    singular = np.abs(lap) < 1e-12
    phi_hat = np.where(singular, 0.0, np.fft.rfft2(ext) / np.where(singular, 1.0, lap))
    irr_u = np.fft.irfft2(sx * phi_hat, s=ext.shape)[:h, :w]
    irr_v = np.fft.irfft2(sy * phi_hat, s=ext.shape)[:h, :w]
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    irr_u = np.where(f.mask, irr_u + 0.5 * mean * (xx - (w - 1) / 2), 0.0)
    irr_v = np.where(f.mask, irr_v + 0.5 * mean * (yy - (h - 1) / 2), 0.0)
    irrotational = f.with_components(irr_u, irr_v)
    solenoidal = f.with_components(f.u - irr_u, f.v - irr_v)
    return solenoidal, irrotational


def deformation_parts(f: FlowField):
    """Strain and rotation tensors per pixel as (S, Omega, valid).

    The velocity-gradient layout is ``[[dU/dx, dV/dx], [dU/dy, dV/dy]]``;
    the returned arrays have shape ``(H, W, 2, 2)``.
    """
    ux, uy, vx, vy, ok = velocity_gradient(f)
    grad = np.stack([np.stack([ux, vx], -1), np.stack([uy, vy], -1)], -2)
    grad_t = np.swapaxes(grad, -1, -2)
    return 0.5 * (grad + grad_t), 0.5 * (grad - grad_t), ok


def q_criterion_forms(f: FlowField):
    """Both algebraic forms of Q: 0.5(|Omega|^2 - |S|^2) and w^2/4 - |S|^2/2."""
    S, Om, ok = deformation_parts(f)
    s2 = np.sum(S * S, axis=(-2, -1))
    o2 = np.sum(Om * Om, axis=(-2, -1))
    ux, uy, vx, vy, _ = velocity_gradient(f)
    w = vx - uy
    return 0.5 * (o2 - s2), 0.25 * w * w - 0.5 * s2, ok


def q_criterion(f_solenoidal: FlowField) -> ScalarField:
    q, _, ok = q_criterion_forms(f_solenoidal)
    return ScalarField(np.where(ok, q, 0.0), ok, f_solenoidal.transform, f_solenoidal.t_next)


@dataclass(frozen=True)
class VortexRegion:
    region_id: str
    pixels: np.ndarray  # (N, 2) array of (x, y), raster order
    centroid_px: tuple[float, float]
    centroid_geo: tuple[float, float]  # (lon, lat)
    area_px: int
    timestamp: datetime | None

    @property
    def xs(self) -> np.ndarray:
        return self.pixels[:, 0]

    @property
    def ys(self) -> np.ndarray:
        return self.pixels[:, 1]

    def mask(self, shape) -> np.ndarray:
        m = np.zeros(shape, dtype=bool)
        m[self.ys, self.xs] = True
        return m


EIGHT_CONNECTED = np.ones((3, 3), dtype=bool)


def region_id_for(timestamp: datetime | None, x: int, y: int) -> str:
    prefix = as_utc(timestamp).strftime("%Y%m%dT%H%MZ") if timestamp else "t"
    return f"{prefix}-y{y:04d}-x{x:04d}"


def extract_vortices(q: ScalarField, min_area_px: int = 20, t: datetime | None = None,
                     expand_px: int = 0, min_peak_q: float = 0.0) -> list[VortexRegion]:
    """8-connected components of ``{Q > 0}`` inside the valid mask.

    Components smaller than ``min_area_px`` are dropped, as are components
    whose largest Q does not exceed ``min_peak_q`` (a noise floor; the
    default 0 keeps every positive component).  ``expand_px > 0``
    dilates each surviving region within the valid mask.  Regions come back
    sorted by descending area, ties broken by their top-left pixel, with ids
    derived from that pixel.
    """
    t = t if t is not None else q.timestamp
    support = (q.values > 0) & q.mask
    labels, n = ndimage.label(support, structure=EIGHT_CONNECTED)
    if n == 0:
        return []
    ys, xs = np.nonzero(labels)  # raster order
    lab = labels[ys, xs]
    order = np.argsort(lab, kind="stable")
    ys, xs, lab = ys[order], xs[order], lab[order]
    bounds = np.searchsorted(lab, np.arange(1, n + 2))
    regions = []
    taken = np.zeros_like(support)
    for k in range(n):
        ry, rx = ys[bounds[k]:bounds[k + 1]], xs[bounds[k]:bounds[k + 1]]
        if ry.size < min_area_px or q.values[ry, rx].max() <= min_peak_q:
            continue
        if expand_px > 0:
            m = np.zeros_like(support)
            m[ry, rx] = True
            m = ndimage.binary_dilation(m, EIGHT_CONNECTED, iterations=expand_px) & q.mask & ~taken
            taken |= m
            ry, rx = np.nonzero(m)
        regions.append(_make_region(rx, ry, q.transform, t))
    regions.sort(key=lambda r: (-r.area_px, int(r.pixels[0, 1]), int(r.pixels[0, 0])))
    return regions


def _make_region(xs, ys, transform: GeoTransform, t) -> VortexRegion:
    order = np.lexsort((xs, ys))
    pix = np.stack([xs[order], ys[order]], axis=1).astype(np.int64)
    cx, cy = float(pix[:, 0].mean()), float(pix[:, 1].mean())
    lon, lat = pixel_to_geo(transform, cx, cy)
    rid = region_id_for(t, int(pix[0, 0]), int(pix[0, 1]))
    return VortexRegion(rid, pix, (cx, cy), (lon, lat), int(len(pix)),
                        as_utc(t) if t is not None else None)


def save_scalar(field: ScalarField, stem, kind: str = "scalar") -> None:
    stem = Path(stem)
    np.where(field.mask, field.values, np.nan).astype("<f4").tofile(
        stem.with_name(stem.name + ".f32"))
    meta = dict(field.transform.to_dict(), kind=kind)
    if field.timestamp is not None:
        meta["timestamp"] = isoformat_utc(field.timestamp)
    stem.with_suffix(".json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def load_scalar(stem) -> ScalarField:
    stem = Path(stem)
    meta = json.loads(stem.with_suffix(".json").read_text())
    t = transform_from_meta(meta)
    raw = np.fromfile(stem.with_name(stem.name + ".f32"), dtype="<f4").astype(np.float64)
    if raw.size != t.width * t.height:
        raise DataError(f"{stem}: raster size does not match sidecar")
    raw = raw.reshape(t.shape)
    ok = np.isfinite(raw)
    return ScalarField(np.where(ok, raw, 0.0), ok, t, meta.get("timestamp"))
