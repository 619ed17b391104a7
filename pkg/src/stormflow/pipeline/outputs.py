"""GeoJSON and PNG renderings of detected vortices."""
from __future__ import annotations

import json
from pathlib import Path
from typing import Sequence

import numpy as np
from PIL import Image
from PIL.PngImagePlugin import PngInfo
from skimage import measure

from ..descriptors import FEATURE_NAMES, VortexDescriptor
from ..field_analysis import VortexRegion
from ..geo_imaging import GeoTransform, SatelliteFrame, isoformat_utc

STORM_RGB = (255, 0, 0)
CALM_RGB = (0, 200, 0)
FILL_ALPHA = 0.5
COORD_DIGITS = 6


def _signed_area(ring: np.ndarray) -> float:
    x, y = ring[:, 0], ring[:, 1]
    return 0.5 * float(np.sum(x[:-1] * y[1:] - x[1:] * y[:-1]))


def region_polygon(region: VortexRegion, t: GeoTransform) -> list:
    """GeoJSON Polygon rings (lon, lat) tracing the region's pixel centres'
    half-level contour; exterior counter-clockwise, holes clockwise."""
    x0, y0 = int(region.xs.min()), int(region.ys.min())
    w = int(region.xs.max()) - x0 + 1
    h = int(region.ys.max()) - y0 + 1
    grid = np.zeros((h + 2, w + 2))
    grid[region.ys - y0 + 1, region.xs - x0 + 1] = 1.0
    rings = []
    for c in measure.find_contours(grid, 0.5, fully_connected="high"):
        cols = c[:, 1] + x0 - 1
        rows = c[:, 0] + y0 - 1
        lon = t.lon_origin + (cols + 0.5) * t.dlon
        lat = t.lat_origin + (rows + 0.5) * t.dlat
        ring = np.round(np.stack([lon, lat], axis=1), COORD_DIGITS)
        if not np.array_equal(ring[0], ring[-1]):
            ring = np.vstack([ring, ring[:1]])
        if len(ring) >= 4:
            rings.append(ring)
    if not rings:
        raise ValueError(f"region {region.region_id} has no closed outline")
    k = int(np.argmax([abs(_signed_area(r)) for r in rings]))
    out = []
    for i in [k] + [i for i in range(len(rings)) if i != k]:
        r = rings[i]
        ccw = _signed_area(r) > 0
        if ccw != (i == k):
            r = r[::-1]
        out.append([[float(a), float(b)] for a, b in r])
    return out


def feature_collection(regions: Sequence[VortexRegion], descriptors: Sequence[VortexDescriptor],
                       predictions: Sequence[tuple[bool, float]], t: GeoTransform,
                       provenance: dict) -> dict:
    features = []
    for r, d, (label, score) in zip(regions, descriptors, predictions):
        props = dict(region_id=d.region_id, timestamp=isoformat_utc(d.timestamp),
                     score=float(score), label=bool(label))
        props.update({n: float(v) for n, v in zip(FEATURE_NAMES, d.as_array())})
        features.append(dict(type="Feature", id=d.region_id,
                             geometry=dict(type="Polygon", coordinates=region_polygon(r, t)),
                             properties=props))
    return dict(type="FeatureCollection", stormflow=provenance, features=features)


def write_geojson(fc: dict, path) -> None:
    Path(path).write_text(json.dumps(fc, sort_keys=True, separators=(",", ":")) + "\n")


def overlay_image(frame: SatelliteFrame, regions: Sequence[VortexRegion],
                  labels: Sequence[bool]) -> Image.Image:
    """Grey frame with storm regions filled red and the rest green."""
    grey = np.where(frame.mask, np.clip(frame.pixels, 0, 1), 0.0) * 255.0
    rgb = np.repeat(grey[..., None], 3, axis=2)
    for r, label in zip(regions, labels):
        colour = np.array(STORM_RGB if label else CALM_RGB, dtype=np.float64)
        px = rgb[r.ys, r.xs]
        rgb[r.ys, r.xs] = (1 - FILL_ALPHA) * px + FILL_ALPHA * colour
    return Image.fromarray(np.round(rgb).astype(np.uint8), mode="RGB")


def write_png(img: Image.Image, path, text: dict | None = None) -> None:
    info = PngInfo()
    for k, v in (text or {}).items():
        info.add_text(str(k), str(v))
    img.save(path, format="PNG", pnginfo=info)
