"""Frame discovery, channel pairing, sequence splitting and the flow cache."""
from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
from dataclasses import dataclass
from datetime import datetime, timedelta
from pathlib import Path
from typing import Callable

import numpy as np

from ..descriptors import estimate_flow
from ..errors import DataError
from ..geo_imaging import Channel, FrameSequence, SatelliteFrame, as_utc, isoformat_utc, \
    load_frame, read_sidecar
from ..optical_flow import FlowField, FlowParams, load_flow, save_flow

log = logging.getLogger(__name__)

IMAGE_SUFFIXES = (".png", ".f32")
NOMINAL_SPACING = timedelta(minutes=30)


@dataclass(frozen=True)
class FrameRef:
    image: Path
    meta: Path
    channel: Channel
    timestamp: datetime

    def load(self) -> SatelliteFrame:
        frame = load_frame(self.image, self.meta)
        if frame.channel != self.channel:
            raise DataError(f"{self.image}: channel changed while loading")
        return frame


def discover(directory: Path, channel: Channel) -> list[FrameRef]:
    """Frames in ``directory``: every ``<stem>.json`` sidecar with a matching
    ``<stem>.png`` or ``<stem>.f32`` image, sorted by timestamp."""
    refs = []
    for meta in sorted(Path(directory).glob("*.json")):
        images = [meta.with_suffix(s) for s in IMAGE_SUFFIXES if meta.with_suffix(s).exists()]
        if not images:
            continue
        info = read_sidecar(meta)
        ch = Channel.parse(info["channel"])
        if ch != channel:
            raise DataError(f"{meta}: channel {ch.value} found in the {channel.value} directory")
        refs.append(FrameRef(images[0], meta, ch, as_utc(info["timestamp"])))
    refs.sort(key=lambda r: r.timestamp)
    for a, b in zip(refs, refs[1:]):
        if a.timestamp == b.timestamp:
            raise DataError(f"duplicate {channel.value} frames at {isoformat_utc(a.timestamp)}")
    return refs


def pair_channels(ch3: list[FrameRef], ch4: list[FrameRef],
                  max_skew: timedelta = timedelta(minutes=2)) -> list[tuple[FrameRef, FrameRef]]:
    """Match each Ch4 frame with the nearest Ch3 frame; every frame must pair."""
    if not ch3 or not ch4:
        raise DataError("no frames found for " + ("Ch3" if not ch3 else "Ch4"))
    t3 = np.array([r.timestamp.timestamp() for r in ch3])
    pairs, used = [], set()
    for r4 in ch4:
        k = int(np.argmin(np.abs(t3 - r4.timestamp.timestamp())))
        if abs(ch3[k].timestamp - r4.timestamp) > max_skew or k in used:
            raise DataError(f"no Ch3 frame within {max_skew} of Ch4 frame "
                            f"{isoformat_utc(r4.timestamp)}")
        used.add(k)
        pairs.append((ch3[k], r4))
    if len(used) != len(ch3):
        orphan = min(set(range(len(ch3))) - used)
        raise DataError(f"Ch3 frame {isoformat_utc(ch3[orphan].timestamp)} has no Ch4 partner")
    return pairs


def split_runs(pairs: list[tuple[FrameRef, FrameRef]], spacing: timedelta = NOMINAL_SPACING,
               tolerance: float = 0.10) -> list[list[tuple[FrameRef, FrameRef]]]:
    """Cut the pair list wherever the gap departs from the nominal spacing."""
    runs, cur = [], []
    lo, hi = spacing * (1 - tolerance), spacing * (1 + tolerance)
    for p in pairs:
        if cur and not lo <= p[1].timestamp - cur[-1][1].timestamp <= hi:
            runs.append(cur)
            cur = []
        cur.append(p)
    if cur:
        runs.append(cur)
    return runs


def load_sequences(ch3_dir, ch4_dir, keep: Callable[[datetime], bool] = lambda t: True,
                   max_skew_minutes: float = 2.0) -> list[FrameSequence]:
    """Paired, filtered, contiguous runs of at least two frames, loaded."""
    pairs = pair_channels(discover(ch3_dir, Channel.CH3), discover(ch4_dir, Channel.CH4),
                          timedelta(minutes=max_skew_minutes))
    pairs = [p for p in pairs if keep(p[1].timestamp)]
    seqs = []
    for run in split_runs(pairs):
        if len(run) < 2:
            log.info("isolated frame %s skipped", isoformat_utc(run[0][1].timestamp))
            continue
        seqs.append(FrameSequence(tuple((a.load(), b.load()) for a, b in run)))
    return seqs


# ------------------------------------------------------------- cache

def flow_key(prev: SatelliteFrame, next: SatelliteFrame, p: FlowParams) -> str:
    h = hashlib.sha256()
    for f in (prev, next):
        h.update(f.channel.value.encode())
        h.update(isoformat_utc(f.timestamp).encode())
        h.update(np.ascontiguousarray(f.pixels, dtype="<f8").tobytes())
        h.update(np.packbits(f.mask).tobytes())
    h.update(json.dumps(prev.transform.to_dict(), sort_keys=True).encode())
    h.update(json.dumps(dataclasses.asdict(p), sort_keys=True).encode())
    return h.hexdigest()[:32]


class FlowCache:
    """Flow provider that stores stabilized flows under a content hash."""

    def __init__(self, directory):
        self.dir = Path(directory)
        self.dir.mkdir(parents=True, exist_ok=True)
        self.hits = 0
        self.misses = 0

    def __call__(self, prev: SatelliteFrame, next: SatelliteFrame, p: FlowParams) -> FlowField:
        stem = self.dir / f"flow_{flow_key(prev, next, p)}"
        if stem.with_suffix(".json").exists():
            self.hits += 1
            return load_flow(stem)
        self.misses += 1
        flow = estimate_flow(prev, next, p)
        save_flow(flow, stem)
        return flow
