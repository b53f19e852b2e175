"""Time-stamped event lists: synthesis, pairing, 4D correlations, 2D post-selection.

Coordinates in a stream are detector-global; each ROI is a rectangle on
the detector. ROI A records the signal photon and ROI B the idler, so the
2D offset ``xi`` in :func:`postselect_2d` follows the 1D convention
``x_idler = x_signal + xi`` in ROI-local coordinates.
"""
from __future__ import annotations

import enum
import logging
import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numba
import numpy as np

from .coincidence import CoincidenceMatrix, window_offsets

log = logging.getLogger(__name__)

CLOCK_TICK_NS = 1
DEFAULT_RESOLUTION_NS = 7
DEFAULT_WINDOW_NS = 10
ROI_A, ROI_B = 0, 1
SOURCE_PAIR, SOURCE_ACCIDENTAL = 0, 1

MAGIC = b"BPHEVENTS\x00\x00\x00"
VERSION = 1
RECORD_DTYPE = np.dtype([("t", "<u8"), ("x", "<u2"), ("y", "<u2"), ("roi", "u1")])
_META = struct.Struct("<QQ8H")


class EventError(ValueError):
    pass


class EventParseError(EventError):
    def __init__(self, path, line: int, msg: str):
        super().__init__(f"{path}:{line}: {msg}")
        self.line = line


class Roi(enum.IntEnum):
    A = ROI_A
    B = ROI_B


@dataclass(frozen=True)
class RoiBounds:
    x0: int
    y0: int
    width: int
    height: int

    def contains(self, x, y) -> np.ndarray:
        x = np.asarray(x)
        y = np.asarray(y)
        return (x >= self.x0) & (x < self.x0 + self.width) & (y >= self.y0) & (y < self.y0 + self.height)

    def text(self) -> str:
        return f"{self.x0},{self.y0},{self.width},{self.height}"


@dataclass(frozen=True)
class EventRecord:
    t: int
    x: int
    y: int
    roi: Roi


@dataclass
class EventStream:
    """Columnar event list sorted by ``(t, roi, x, y)``.

    ``source`` and ``pair_id`` are optional provenance labels kept only in
    memory: ``source`` is ``SOURCE_PAIR`` or ``SOURCE_ACCIDENTAL`` and
    ``pair_id`` identifies the emitted pair (-1 for accidentals).
    """

    t: np.ndarray
    x: np.ndarray
    y: np.ndarray
    roi: np.ndarray
    roi_a: RoiBounds
    roi_b: RoiBounds
    frame_length: int
    frame_count: int
    source: np.ndarray | None = None
    pair_id: np.ndarray | None = None

    def __post_init__(self):
        self.t = np.ascontiguousarray(self.t, dtype=np.int64)
        self.x = np.ascontiguousarray(self.x, dtype=np.int64)
        self.y = np.ascontiguousarray(self.y, dtype=np.int64)
        self.roi = np.ascontiguousarray(self.roi, dtype=np.uint8)
        n = self.t.size
        if not (self.x.size == self.y.size == self.roi.size == n):
            raise EventError("event columns have different lengths")
        if self.frame_length < 1 or self.frame_count < 0:
            raise EventError("frame_length must be >= 1 and frame_count >= 0")
        if n and self.t.min() < 0:
            raise EventError("event times must be >= 0")
        if np.any(self.roi > ROI_B):
            raise EventError("roi must be A or B")
        inside = np.where(self.roi == ROI_A, self.roi_a.contains(self.x, self.y), self.roi_b.contains(self.x, self.y))
        if not np.all(inside):
            raise EventError(f"{int(np.sum(~inside))} events lie outside their ROI")

    def __len__(self) -> int:
        return int(self.t.size)

    def record(self, k: int) -> EventRecord:
        return EventRecord(int(self.t[k]), int(self.x[k]), int(self.y[k]), Roi(int(self.roi[k])))

    def is_sorted(self) -> bool:
        if len(self) < 2:
            return True
        key = np.lexsort((self.y, self.x, self.roi, self.t))
        return bool(np.all(key == np.arange(len(self))))

    def sorted(self) -> "EventStream":
        order = np.lexsort((self.y, self.x, self.roi, self.t))
        return self.take(order)

    def take(self, idx) -> "EventStream":
        return EventStream(
            self.t[idx], self.x[idx], self.y[idx], self.roi[idx], self.roi_a, self.roi_b,
            self.frame_length, self.frame_count,
            None if self.source is None else self.source[idx],
            None if self.pair_id is None else self.pair_id[idx],
        )

    def frame(self) -> np.ndarray:
        return self.t // self.frame_length


# ---------------------------------------------------------------- synthesis

@dataclass(frozen=True)
class ProductModel:
    """2D joint distribution ``Gamma_x(x_i, x_s) * Gamma_y(y_i, y_s)``."""

    gamma_x: CoincidenceMatrix
    gamma_y: CoincidenceMatrix

    @property
    def shape(self) -> tuple[int, int]:
        return self.gamma_y.grid.size, self.gamma_x.grid.size  # (height, width)


def _sample_index(p: np.ndarray, u: np.ndarray) -> np.ndarray:
    c = np.cumsum(p.ravel())
    c /= c[-1]
    return np.minimum(np.searchsorted(c, u, side="right"), c.size - 1)


def _quantize(t: np.ndarray, resolution: int) -> np.ndarray:
    return (np.floor(t / resolution) * resolution).astype(np.int64)


def default_rois(model: ProductModel, gap: int = 16) -> tuple[RoiBounds, RoiBounds]:
    h, w = model.shape
    return RoiBounds(0, 0, w, h), RoiBounds(w + gap, 0, w, h)


def synthesize_stream(
    model: ProductModel,
    rate: float,
    eta: float = 1.0,
    accidental_rate: float = 0.0,
    duration: float = 1.0,
    jitter_sigma: float = 0.0,
    seed: int = 0,
    frame_length: int | None = None,
    resolution: int = DEFAULT_RESOLUTION_NS,
    rois: tuple[RoiBounds, RoiBounds] | None = None,
) -> EventStream:
    """Poisson pair arrivals drawn from ``model`` plus uniform accidentals.

    ``rate`` is in pairs/s and ``accidental_rate`` in events/s per ROI.
    Each photon is detected independently with probability ``eta``;
    detected timestamps get Gaussian jitter and are floored to multiples of
    ``resolution`` ns.
    """
    if rate < 0 or accidental_rate < 0 or duration <= 0:
        raise EventError("rates must be >= 0 and duration > 0")
    if not 0 <= eta <= 1:
        raise EventError("eta must lie in [0, 1]")
    if resolution < CLOCK_TICK_NS:
        raise EventError("resolution must be at least one clock tick")
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), 11])))
    span = int(round(duration * 1e9))
    frame_length = span if frame_length is None else int(frame_length)
    frame_count = math.ceil(span / frame_length)
    roi_a, roi_b = default_rois(model) if rois is None else rois
    h, w = model.shape
    if (roi_a.width, roi_a.height) != (w, h) or (roi_b.width, roi_b.height) != (w, h):
        raise EventError("ROI size must match the model grid")

    n_pairs = int(rng.poisson(rate * duration))
    t0 = rng.uniform(0, span, n_pairs)
    ix = _sample_index(model.gamma_x.counts, rng.random(n_pairs))
    iy = _sample_index(model.gamma_y.counts, rng.random(n_pairs))
    xi, xs = np.divmod(ix, w)
    yi, ys = np.divmod(iy, h)

    cols = {k: [] for k in ("t", "x", "y", "roi", "src", "pid")}
    pid = np.arange(n_pairs, dtype=np.int64)
    for roi, bounds, x, y in ((ROI_A, roi_a, xs, ys), (ROI_B, roi_b, xi, yi)):
        keep = rng.random(n_pairs) < eta
        t = t0[keep] + (rng.normal(0, jitter_sigma, int(keep.sum())) if jitter_sigma > 0 else 0.0)
        cols["t"].append(t)
        cols["x"].append(x[keep] + bounds.x0)
        cols["y"].append(y[keep] + bounds.y0)
        cols["roi"].append(np.full(t.size, roi, np.uint8))
        cols["src"].append(np.full(t.size, SOURCE_PAIR, np.int8))
        cols["pid"].append(pid[keep])
    for roi, bounds in ((ROI_A, roi_a), (ROI_B, roi_b)):
        n = int(rng.poisson(accidental_rate * duration))
        cols["t"].append(rng.uniform(0, span, n))
        cols["x"].append(rng.integers(0, w, n) + bounds.x0)
        cols["y"].append(rng.integers(0, h, n) + bounds.y0)
        cols["roi"].append(np.full(n, roi, np.uint8))
        cols["src"].append(np.full(n, SOURCE_ACCIDENTAL, np.int8))
        cols["pid"].append(np.full(n, -1, np.int64))

    t = np.concatenate(cols["t"])
    t = np.clip(_quantize(np.clip(t, 0, span - 1), resolution), 0, span - 1)
    stream = EventStream(
        t, np.concatenate(cols["x"]), np.concatenate(cols["y"]), np.concatenate(cols["roi"]),
        roi_a, roi_b, frame_length, frame_count,
        np.concatenate(cols["src"]), np.concatenate(cols["pid"]),
    )
    return stream.sorted()


# ---------------------------------------------------------------- pairing

@numba.njit(cache=True)
def _pair_kernel(t, roi, frame_length, window, cross_frames):
    n = t.size
    b_idx = np.empty(n, np.int64)
    nb = 0
    for k in range(n):
        if roi[k] == 1:
            b_idx[nb] = k
            nb += 1
    out_a = np.empty(min(n - nb, nb), np.int64)
    out_b = np.empty(min(n - nb, nb), np.int64)
    npair = 0
    p = 0
    for k in range(n):
        if roi[k] != 0:
            continue
        ta = t[k]
        lo = ta - window
        hi = ta + window
        if not cross_frames:
            f0 = (ta // frame_length) * frame_length
            if lo < f0:
                lo = f0
            if hi > f0 + frame_length - 1:
                hi = f0 + frame_length - 1
        while p < nb and t[b_idx[p]] < lo:
            p += 1
        if p < nb and t[b_idx[p]] <= hi:
            out_a[npair] = k
            out_b[npair] = b_idx[p]
            npair += 1
            p += 1
    return out_a[:npair], out_b[:npair]


@dataclass(frozen=True)
class Pairs:
    """Coincidence pairs as index arrays into the source stream."""

    stream: EventStream
    a: np.ndarray
    b: np.ndarray
    window: int

    def __len__(self) -> int:
        return int(self.a.size)

    @property
    def dt(self) -> np.ndarray:
        return self.stream.t[self.b] - self.stream.t[self.a]

    def true_mask(self) -> np.ndarray:
        """Pairs whose two records come from the same emitted pair."""
        pid = self.stream.pair_id
        if pid is None:
            raise EventError("stream carries no provenance labels")
        return (pid[self.a] >= 0) & (pid[self.a] == pid[self.b])

    def records(self):
        for i, j, d in zip(self.a, self.b, self.dt):
            yield self.stream.record(int(i)), self.stream.record(int(j)), int(d)


def pair_events(stream: EventStream, window: int = DEFAULT_WINDOW_NS, cross_frames: bool = False) -> Pairs:
    """Greedy earliest-first coincidence pairing, O(E).

    Records are visited in time order; each A record takes the earliest
    still-unpaired B record with ``|t_B - t_A| <= window``. No record is
    used twice and, unless ``cross_frames``, pairs never straddle a frame
    boundary.
    """
    if window < 0:
        raise EventError("window must be >= 0")
    if not stream.is_sorted():
        raise EventError("stream is not sorted by (t, roi, x, y)")
    a, b = _pair_kernel(stream.t, stream.roi, int(stream.frame_length), int(window), bool(cross_frames))
    return Pairs(stream, a, b, int(window))


def _best_matching(ta: list, tb: list, window: int):
    """Maximum-cardinality matching with least total |dt|, exhaustive."""
    best = (-1, 0, ())
    nb = len(tb)

    def rec(i, used, chosen, cost):
        nonlocal best
        if i == len(ta):
            key = (len(chosen), -cost)
            if key > best[:2]:
                best = (len(chosen), -cost, tuple(chosen))
            return
        if len(chosen) + (len(ta) - i) < best[0]:
            return
        for j in range(nb):
            if not used & (1 << j) and abs(tb[j] - ta[i]) <= window:
                rec(i + 1, used | (1 << j), chosen + [(i, j)], cost + abs(tb[j] - ta[i]))
        rec(i + 1, used, chosen, cost)

    rec(0, 0, [], 0)
    return best[2]


def brute_force_pairs(stream: EventStream, window: int = DEFAULT_WINDOW_NS, max_cluster: int = 16) -> set[tuple[int, int]]:
    """Reference matcher: exhaustive optimum inside each time cluster.

    Events closer than ``window`` (same frame) are chained into clusters;
    each cluster is matched by enumerating all matchings and keeping one of
    maximum cardinality and minimum total ``|dt|``.
    """
    t = stream.t
    frame = stream.frame()
    pairs: set[tuple[int, int]] = set()
    start = 0
    n = len(stream)
    for k in range(1, n + 1):
        if k == n or t[k] - t[k - 1] > window or frame[k] != frame[k - 1]:
            idx = np.arange(start, k)
            a = [int(i) for i in idx if stream.roi[i] == ROI_A]
            b = [int(i) for i in idx if stream.roi[i] == ROI_B]
            if a and b:
                if len(a) + len(b) > max_cluster:
                    raise EventError(f"cluster of {len(a) + len(b)} events too large for exhaustive matching")
                for i, j in _best_matching([int(t[i]) for i in a], [int(t[j]) for j in b], window):
                    pairs.add((a[i], b[j]))
            start = k
    return pairs


def pairing_agreement(greedy: Pairs, reference: set[tuple[int, int]]) -> float:
    """Shared pairs over the larger of the two pair counts (1 if both empty)."""
    mine = set(zip(greedy.a.tolist(), greedy.b.tolist()))
    denom = max(len(mine), len(reference))
    if denom == 0:
        return 1.0
    diff = mine ^ reference
    if diff:
        log.debug("pairing disagreement on %d pairs", len(diff))
    return len(mine & reference) / denom


# ---------------------------------------------------------------- 4D correlations

@dataclass(frozen=True)
class Corr4D:
    """Sparse counts keyed by ROI-local ``(x_a, y_a, x_b, y_b)``."""

    width: int
    height: int
    keys: np.ndarray  # (K, 4) int64, lexicographically sorted
    counts: np.ndarray  # (K,) int64, all > 0

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def __len__(self) -> int:
        return int(self.counts.size)

    def as_dict(self) -> dict:
        return {tuple(int(v) for v in k): int(c) for k, c in zip(self.keys, self.counts)}

    def offsets(self) -> np.ndarray:
        """Per-entry ``(dx, dy) = (x_b - x_a, y_b - y_a)``."""
        return np.stack([self.keys[:, 2] - self.keys[:, 0], self.keys[:, 3] - self.keys[:, 1]], axis=1)


def accumulate_corr4d(pairs: Pairs, width: int | None = None, height: int | None = None) -> Corr4D:
    s = pairs.stream
    width = s.roi_a.width if width is None else width
    height = s.roi_a.height if height is None else height
    if len(pairs) == 0:
        return Corr4D(width, height, np.zeros((0, 4), np.int64), np.zeros(0, np.int64))
    coords = np.stack([
        s.x[pairs.a] - s.roi_a.x0, s.y[pairs.a] - s.roi_a.y0,
        s.x[pairs.b] - s.roi_b.x0, s.y[pairs.b] - s.roi_b.y0,
    ], axis=1)
    keys, counts = np.unique(coords, axis=0, return_counts=True)
    return Corr4D(width, height, keys.astype(np.int64), counts.astype(np.int64))


def postselect_2d(c: Corr4D, xi: tuple[int, int], mask: np.ndarray | None = None) -> np.ndarray:
    """Image over ``(y_a, x_a)`` of entries with ``(x_b, y_b) = (x_a, y_a) + xi``."""
    d = c.offsets()
    sel = (d[:, 0] == xi[0]) & (d[:, 1] == xi[1])
    if mask is not None:
        sel &= mask
    img = np.zeros((c.height, c.width))
    np.add.at(img, (c.keys[sel, 1], c.keys[sel, 0]), c.counts[sel])
    return img


def window_offsets_2d(n: int) -> list[tuple[int, int]]:
    return [(dx, dy) for dy in window_offsets(n) for dx in window_offsets(n)]


def postselect_sum_2d(c: Corr4D, n: int, mask: np.ndarray | None = None) -> np.ndarray:
    """Sum of the ``n x n`` post-selected images, each registered on the B coordinate.

    Equivalent to accumulating every in-window entry at ``(y_b, x_b)``;
    totals equal the sum of the ``n^2`` window totals.
    """
    if n < 1:
        raise EventError("n must be >= 1")
    r = window_offsets(n)
    d = c.offsets()
    sel = np.all((d >= r.start) & (d < r.stop), axis=1)
    if mask is not None:
        sel &= mask
    img = np.zeros((c.height, c.width))
    # a pixel at x_a with offset xi lands at x_a + xi = x_b
    xb, yb = c.keys[sel, 2], c.keys[sel, 3]
    inside = (xb >= 0) & (xb < c.width) & (yb >= 0) & (yb < c.height)
    np.add.at(img, (yb[inside], xb[inside]), c.counts[sel][inside])
    return img


def marginal_2d(c: Corr4D) -> np.ndarray:
    """Coincidence image over the A coordinate summed over all B positions."""
    img = np.zeros((c.height, c.width))
    np.add.at(img, (c.keys[:, 1], c.keys[:, 0]), c.counts)
    return img


def singles_image(stream: EventStream, roi: int = ROI_A) -> np.ndarray:
    bounds = stream.roi_a if roi == ROI_A else stream.roi_b
    sel = stream.roi == roi
    img = np.zeros((bounds.height, bounds.width))
    np.add.at(img, (stream.y[sel] - bounds.y0, stream.x[sel] - bounds.x0), 1)
    return img


def correlation_profile_2d(c: Corr4D, radius: int = 8) -> np.ndarray:
    """Counts versus offset ``(dy, dx)`` within ``|d| <= radius``."""
    out = np.zeros((2 * radius + 1, 2 * radius + 1))
    d = c.offsets()
    sel = (np.abs(d[:, 0]) <= radius) & (np.abs(d[:, 1]) <= radius)
    np.add.at(out, (d[sel, 1] + radius, d[sel, 0] + radius), c.counts[sel])
    return out


# ---------------------------------------------------------------- I/O

def _header_text(s: EventStream) -> str:
    w = max(s.roi_a.x0 + s.roi_a.width, s.roi_b.x0 + s.roi_b.width)
    h = max(s.roi_a.y0 + s.roi_a.height, s.roi_b.y0 + s.roi_b.height)
    return (f"# grid={w}x{h} roi_a={s.roi_a.text()} roi_b={s.roi_b.text()} "
            f"frame_length={s.frame_length} frame_count={s.frame_count}\n")


def write_events_text(path, stream: EventStream) -> None:
    names = np.array(["A", "B"])
    with open(path, "w") as fh:
        fh.write(_header_text(stream))
        fh.write("t_ns,x,y,roi\n")
        for t, x, y, r in zip(stream.t, stream.x, stream.y, names[stream.roi]):
            fh.write(f"{t},{x},{y},{r}\n")


def _parse_bounds(text: str) -> RoiBounds:
    vals = [int(v) for v in text.split(",")]
    if len(vals) != 4:
        raise ValueError("ROI bounds need x0,y0,width,height")
    return RoiBounds(*vals)


def read_events_text(path) -> EventStream:
    path = Path(path)
    t, x, y, r = [], [], [], []
    with open(path) as fh:
        first = fh.readline()
        if not first.startswith("#"):
            raise EventParseError(path, 1, "missing header line")
        try:
            hdr = dict(tok.split("=", 1) for tok in first[1:].split())
            roi_a = _parse_bounds(hdr["roi_a"])
            roi_b = _parse_bounds(hdr["roi_b"])
            frame_length = int(hdr["frame_length"])
            frame_count = int(hdr["frame_count"])
        except (KeyError, ValueError) as exc:
            raise EventParseError(path, 1, f"bad header: {exc}") from exc
        for lineno, line in enumerate(fh, start=2):
            line = line.strip()
            if not line or line.startswith("#") or line.startswith("t_ns"):
                continue
            parts = line.split(",")
            if len(parts) != 4:
                raise EventParseError(path, lineno, f"expected 4 fields, found {len(parts)}")
            try:
                ti, xi, yi = int(parts[0]), int(parts[1]), int(parts[2])
            except ValueError as exc:
                raise EventParseError(path, lineno, str(exc)) from exc
            roi = parts[3].strip()
            if roi not in ("A", "B"):
                raise EventParseError(path, lineno, f"roi must be A or B, found {roi!r}")
            if ti < 0:
                raise EventParseError(path, lineno, "negative timestamp")
            bounds = roi_a if roi == "A" else roi_b
            if not bounds.contains(xi, yi):
                raise EventParseError(path, lineno, f"({xi},{yi}) outside ROI {roi}")
            t.append(ti)
            x.append(xi)
            y.append(yi)
            r.append(ROI_A if roi == "A" else ROI_B)
    return EventStream(np.array(t, np.int64), np.array(x, np.int64), np.array(y, np.int64),
                       np.array(r, np.uint8), roi_a, roi_b, frame_length, frame_count)


def write_events_binary(path, stream: EventStream) -> None:
    """16-byte magic+version, a metadata block, then 15-byte LE records."""
    rec = np.empty(len(stream), RECORD_DTYPE)
    rec["t"], rec["x"], rec["y"], rec["roi"] = stream.t, stream.x, stream.y, stream.roi
    a, b = stream.roi_a, stream.roi_b
    with open(path, "wb") as fh:
        fh.write(MAGIC + struct.pack("<I", VERSION))
        fh.write(_META.pack(stream.frame_length, stream.frame_count,
                            a.x0, a.y0, a.width, a.height, b.x0, b.y0, b.width, b.height))
        fh.write(rec.tobytes())


def read_events_binary(path) -> EventStream:
    data = Path(path).read_bytes()
    if len(data) < 16 + _META.size or data[:12] != MAGIC:
        raise EventError(f"{path}: not an event file")
    (version,) = struct.unpack("<I", data[12:16])
    if version != VERSION:
        raise EventError(f"{path}: unsupported version {version}")
    fl, fc, *roi = _META.unpack(data[16 : 16 + _META.size])
    body = data[16 + _META.size :]
    if len(body) % RECORD_DTYPE.itemsize:
        raise EventError(f"{path}: truncated record")
    rec = np.frombuffer(body, RECORD_DTYPE)
    return EventStream(rec["t"].astype(np.int64), rec["x"], rec["y"], rec["roi"],
                       RoiBounds(*roi[:4]), RoiBounds(*roi[4:]), fl, fc)


def read_events(path) -> EventStream:
    with open(path, "rb") as fh:
        head = fh.read(12)
    return read_events_binary(path) if head == MAGIC else read_events_text(path)
