"""Event stream handling: chunking, equal-count segmentation, slice sampling,
and accumulation into brightness-change maps.

Events are kept in a packed structured array (EVENT_DTYPE); a chunk covers one
fixed 50 ms window and is segmented into n_seg equal-count pieces whose end
timestamps drive the random slice sampler.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, replace

import numpy as np

from .errors import DataError, ModeMismatch, OutOfSegment, TooFewEvents, UnsortedInput
from .render import RenderConfig, render
from .se3 import TrajectorySegment, interpolate_pose

EVENT_DTYPE = np.dtype([("t", "<f8"), ("u", "<u2"), ("v", "<u2"), ("p", "<i1"), ("_pad", "V3")])
EVENT_FILE_MAGIC = b"IEGE"
EVENT_FILE_VERSION = 1


def make_events(t, u, v, p):
    ev = np.zeros(len(t), dtype=EVENT_DTYPE)
    ev["t"] = t
    ev["u"] = u
    ev["v"] = v
    ev["p"] = p
    return ev


@dataclass
class EventChunk:
    t_begin: float
    t_end: float
    events: np.ndarray  # EVENT_DTYPE, sorted by t, all within [t_begin, t_end)
    segment_timestamps: np.ndarray = None  # filled by segment_chunk

    @property
    def count(self):
        return len(self.events)


@dataclass(frozen=True)
class SliceSamplerConfig:
    n_seg: int
    n_low: int
    n_up: int

    def __post_init__(self):
        if not 0 < self.n_low <= self.n_up:
            raise ValueError(f"need 0 < n_low <= n_up, got {self.n_low}, {self.n_up}")
        if self.n_seg <= 0:
            raise ValueError(f"n_seg must be positive, got {self.n_seg}")


@dataclass
class BrightnessChangeMap:
    values: np.ndarray  # (H, W) or (H, W, 3), log-brightness units
    valid_count: int


def chunk_stream(events, chunk_duration: float):
    """Split a sorted stream into consecutive half-open windows of equal length.

    Windows start at the first event time; empty interior windows are kept.
    """
    ev = np.asarray(events)
    if len(ev) == 0:
        return []
    t = ev["t"]
    if np.any(np.diff(t) < 0):
        raise UnsortedInput("event timestamps must be non-decreasing")
    t0 = float(t[0])
    n_chunks = int(np.floor((float(t[-1]) - t0) / chunk_duration)) + 1
    edges = t0 + chunk_duration * np.arange(n_chunks + 1)
    idx = np.searchsorted(t, edges, side="left")
    chunks = []
    for k in range(n_chunks):
        chunks.append(EventChunk(t_begin=float(edges[k]), t_end=float(edges[k + 1]),
                                 events=ev[idx[k]:idx[k + 1]]))
    return chunks


def merge_sparse_chunks(chunks, min_events: int):
    """Merge chunks with fewer than min_events into their successors.

    A trailing sparse remainder is dropped. Returns the merged list.
    """
    merged = []
    pending = None
    for c in chunks:
        if pending is not None:
            c = EventChunk(t_begin=pending.t_begin, t_end=c.t_end,
                           events=np.concatenate([pending.events, c.events]))
            pending = None
        if c.count < min_events:
            pending = c
        else:
            merged.append(c)
    return merged


def segment_chunk(chunk: EventChunk, n_seg: int) -> EventChunk:
    """Fill segment_timestamps with the last event time of each of n_seg
    equal-count segments (sizes differ by at most one)."""
    n = chunk.count
    if n < n_seg:
        raise TooFewEvents(f"chunk has {n} events, need at least {n_seg}")
    ends = (np.arange(1, n_seg + 1) * n) // n_seg
    ts = chunk.events["t"][ends - 1].astype(np.float64)
    return replace(chunk, segment_timestamps=ts)


def sample_slice(chunk: EventChunk, cfg: SliceSamplerConfig, rng):
    """Draw one supervision slice (t_k, t_k_plus] from a segmented chunk.

    t_k_plus is a uniformly chosen segment end; the window length n_win is
    drawn in event counts and converted to a segment-index offset; a start
    index clamped below the first segment maps onto the chunk begin time.
    Returns (t_k, t_k_plus, events structured array of the slice).
    """
    if chunk.segment_timestamps is None:
        raise TooFewEvents("chunk must be segmented before sampling")
    ts = chunk.segment_timestamps
    n_seg = len(ts)
    n = chunk.count
    per_seg = n / n_seg
    for _ in range(16):
        i_plus = int(rng.integers(0, n_seg))
        n_win = int(rng.integers(cfg.n_low, cfg.n_up + 1))
        offset = max(1, int(round(n_win / per_seg)))
        i_start = i_plus - offset
        t_plus = float(ts[i_plus])
        t_k = chunk.t_begin if i_start < 0 else float(ts[i_start])
        if t_k < t_plus:
            t = chunk.events["t"]
            lo = np.searchsorted(t, t_k, side="right")
            hi = np.searchsorted(t, t_plus, side="right")
            return t_k, t_plus, chunk.events[lo:hi]
    raise TooFewEvents("could not draw a non-degenerate slice (duplicate timestamps)")


def accumulate_events(events, contrast: float, width: int, height: int,
                      n_channels: int = 1) -> BrightnessChangeMap:
    """Signed event counts per pixel times the contrast threshold."""
    if contrast <= 0:
        raise ValueError(f"contrast threshold must be positive, got {contrast}")
    ev = np.asarray(events)
    shape = (height, width) if n_channels == 1 else (height, width, n_channels)
    vals = np.zeros(shape)
    if len(ev):
        signed = np.zeros((height, width))
        np.add.at(signed, (ev["v"].astype(np.int64), ev["u"].astype(np.int64)),
                  ev["p"].astype(np.float64))
        signed *= contrast
        if n_channels == 1:
            vals = signed
        else:
            vals = np.repeat(signed[..., None], n_channels, axis=2)
    touched = int(np.count_nonzero(np.abs(vals).reshape(height, width, -1).sum(-1)))
    return BrightnessChangeMap(values=vals, valid_count=touched)


def synthesized_change(scene, segment: TrajectorySegment, t_k: float, t_k_plus: float,
                       intr, cfg: RenderConfig = RenderConfig(),
                       return_renders=False):
    """Difference of log-brightness renders at the two interpolated poses.

    Rendering already composites in log space, so the change map is a plain
    difference and stays differentiable w.r.t. both endpoint poses and the
    scene parameters.
    """
    span = segment.t_end - segment.t_start
    slack = 1e-9 * span
    for t in (t_k, t_k_plus):
        if t < segment.t_start - slack or t > segment.t_end + slack:
            raise OutOfSegment(f"slice time {t} outside segment "
                               f"[{segment.t_start}, {segment.t_end}]")
    pose_k = interpolate_pose(segment, t_k)
    pose_p = interpolate_pose(segment, t_k_plus)
    out_k, cache_k = render(scene, pose_k, intr, cfg, return_cache=True)
    out_p, cache_p = render(scene, pose_p, intr, cfg, return_cache=True)
    change = BrightnessChangeMap(values=out_p.brightness - out_k.brightness,
                                 valid_count=out_k.brightness.size)
    if return_renders:
        return change, (pose_k, out_k, cache_k), (pose_p, out_p, cache_p)
    return change


BAYER_PATTERNS = {"RGGB": np.array([[0, 1], [1, 2]])}


def apply_bayer_mask(change: BrightnessChangeMap, pattern="RGGB") -> BrightnessChangeMap:
    """Keep only each pixel's Bayer-assigned channel of a 3-channel map."""
    vals = change.values
    if vals.ndim != 3 or vals.shape[2] != 3:
        raise ModeMismatch("Bayer masking needs a 3-channel map")
    grid = BAYER_PATTERNS[pattern]
    h, w = vals.shape[:2]
    chan = grid[np.arange(h)[:, None] % 2, np.arange(w)[None, :] % 2]
    mask = chan[..., None] == np.arange(3)
    return BrightnessChangeMap(values=vals * mask, valid_count=change.valid_count)


def write_events(path, events, width: int, height: int):
    ev = np.asarray(events).astype(EVENT_DTYPE)
    with open(path, "wb") as f:
        f.write(EVENT_FILE_MAGIC)
        f.write(struct.pack("<IIIQ", EVENT_FILE_VERSION, width, height, len(ev)))
        f.write(ev.tobytes())


def read_events(path):
    """Read a binary event file; returns (events, width, height)."""
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != EVENT_FILE_MAGIC:
            raise DataError(f"{path}: bad event file magic {magic!r}")
        version, width, height, count = struct.unpack("<IIIQ", f.read(20))
        if version != EVENT_FILE_VERSION:
            raise DataError(f"{path}: unsupported event file version {version}")
        raw = f.read(count * EVENT_DTYPE.itemsize)
    if len(raw) != count * EVENT_DTYPE.itemsize:
        raise DataError(f"{path}: truncated event file")
    return np.frombuffer(raw, dtype=EVENT_DTYPE).copy(), width, height


def write_events_csv(path, events):
    ev = np.asarray(events)
    with open(path, "w", encoding="utf-8") as f:
        f.write("t,u,v,p\n")
        for e in ev:
            f.write("%.9f,%d,%d,%d\n" % (e["t"], e["u"], e["v"], e["p"]))


def read_events_csv(path):
    rows = []
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if not line or line.startswith("#") or line.startswith("t,"):
                continue
            t, u, v, p = line.split(",")
            rows.append((float(t), int(u), int(v), int(p)))
    for _, _, _, p in rows:
        if p not in (-1, 1):
            raise DataError(f"{path}: polarity must be -1 or 1, got {p}")
    return make_events([r[0] for r in rows], [r[1] for r in rows],
                       [r[2] for r in rows], [r[3] for r in rows])
