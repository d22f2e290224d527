"""Event streams, NEV1 codec, and accumulation into per-frame count grids.

An event is one asynchronous polarity change (x, y, t, p) reported by a
dynamic vision sensor. Streams are converted into dense pseudo-frames by
counting, per pixel and polarity, all events inside consecutive half-open
time windows [i*dt, (i+1)*dt) of duration dt = 1/fps.

Wire format (NEV1):
    magic "NEV1" (4 bytes) | width u16 LE | height u16 LE | count u64 LE
    then `count` packed 13-byte records: t u64 LE | x u16 LE | y u16 LE | p u8

Grids are numpy arrays indexed [row, col], i.e. shape (height, width).
All values are immutable after construction by convention.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

MAGIC = b"NEV1"
HEADER = struct.Struct("<4sHHQ")  # magic, width, height, event count
RECORD_DTYPE = np.dtype([("t", "<u8"), ("x", "<u2"), ("y", "<u2"), ("p", "u1")])
RECORD_SIZE = RECORD_DTYPE.itemsize  # 13 bytes, packed

OFF = 0
ON = 1


class EventFormatError(ValueError):
    """Buffer does not parse as NEV1."""


class CorruptRecordError(EventFormatError):
    """A record violates sensor bounds; carries the offending byte offset."""

    def __init__(self, message: str, byte_offset: int):
        super().__init__(f"{message} (byte offset {byte_offset})")
        self.byte_offset = byte_offset


class TimestampOrderError(EventFormatError):
    """Timestamps decrease somewhere in the stream."""

    def __init__(self, message: str, index: int):
        super().__init__(f"{message} (record index {index})")
        self.index = index


@dataclass(frozen=True)
class Event:
    """One polarity change: time in microseconds, pixel, polarity (0=OFF, 1=ON)."""

    t: int
    x: int
    y: int
    p: int


@dataclass(frozen=True)
class EventStream:
    """Time-ordered events plus the sensor resolution they live on.

    Events are stored as parallel numpy arrays (t: u64, x/y: u16, p: u8)
    so decoding, accumulation, and stats stay vectorised.
    """

    width: int
    height: int
    t: np.ndarray
    x: np.ndarray
    y: np.ndarray
    p: np.ndarray

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise ValueError("sensor resolution must be positive")
        n = len(self.t)
        if not (len(self.x) == len(self.y) == len(self.p) == n):
            raise ValueError("event field arrays must have equal length")
        if n:
            if self.x.max(initial=0) >= self.width or self.y.max(initial=0) >= self.height:
                raise ValueError("event coordinates outside sensor bounds")
            if self.p.max(initial=0) > 1:
                raise ValueError("polarity must be 0 or 1")
            bad = np.nonzero(self.t[1:] < self.t[:-1])[0]
            if bad.size:
                raise TimestampOrderError("timestamps must be non-decreasing", int(bad[0]) + 1)

    def __len__(self) -> int:
        return len(self.t)

    def __iter__(self):
        for i in range(len(self.t)):
            yield Event(int(self.t[i]), int(self.x[i]), int(self.y[i]), int(self.p[i]))

    @staticmethod
    def empty(width: int, height: int) -> "EventStream":
        return EventStream(
            width,
            height,
            np.empty(0, np.uint64),
            np.empty(0, np.uint16),
            np.empty(0, np.uint16),
            np.empty(0, np.uint8),
        )

    @staticmethod
    def from_events(width: int, height: int, events) -> "EventStream":
        """Build a stream from an iterable of Event (or (t, x, y, p) tuples)."""
        rows = [(e.t, e.x, e.y, e.p) if isinstance(e, Event) else tuple(e) for e in events]
        if not rows:
            return EventStream.empty(width, height)
        arr = np.array(rows, dtype=np.int64)
        return EventStream(
            width,
            height,
            arr[:, 0].astype(np.uint64),
            arr[:, 1].astype(np.uint16),
            arr[:, 2].astype(np.uint16),
            arr[:, 3].astype(np.uint8),
        )


def _as_fraction(fps) -> Fraction:
    # Floats convert via their exact binary expansion; pass strings ("29.97")
    # or Fractions when the rate is not exactly representable.
    if isinstance(fps, Fraction):
        return fps
    if isinstance(fps, (int, str)):
        return Fraction(fps)
    if isinstance(fps, float):
        return Fraction(fps)
    raise TypeError(f"unsupported fps type: {type(fps).__name__}")


@dataclass(frozen=True)
class AccumulationConfig:
    """Accumulation rate. The window is dt = 1/fps rounded to whole microseconds.

    fps is kept as an exact Fraction so frame counts never drift with float
    arithmetic. At 30 fps the window is 33,333 us (the 33 ms slice).
    """

    fps: Fraction

    def __post_init__(self):
        object.__setattr__(self, "fps", _as_fraction(self.fps))
        if self.fps <= 0:
            raise ValueError("fps must be positive")
        if self.interval_us < 1:
            raise ValueError("accumulation interval rounds below 1 us")

    @property
    def interval_us(self) -> int:
        """Window length in microseconds, nearest integer (ties to even)."""
        return round(Fraction(1_000_000) / self.fps)

    def frame_count(self, duration_us: int) -> int:
        """ceil(duration * fps / 1e6) in exact integer arithmetic."""
        if duration_us <= 0:
            return 0
        num = duration_us * self.fps.numerator
        den = 1_000_000 * self.fps.denominator
        return -(-num // den)


@dataclass(frozen=True)
class CountFrame:
    """Per-pixel ON and OFF event counts for one accumulation window."""

    index: int
    on_counts: np.ndarray
    off_counts: np.ndarray

    def __post_init__(self):
        if self.on_counts.shape != self.off_counts.shape or self.on_counts.ndim != 2:
            raise ValueError("count grids must be 2-D and share a shape")

    @property
    def height(self) -> int:
        return self.on_counts.shape[0]

    @property
    def width(self) -> int:
        return self.on_counts.shape[1]

    def total(self) -> int:
        return int(self.on_counts.sum()) + int(self.off_counts.sum())


@dataclass(frozen=True)
class AccumulationResult:
    frames: list
    dropped: int

    def total_counted(self) -> int:
        return sum(f.total() for f in self.frames)


def decode_event_stream(raw: bytes) -> EventStream:
    """Parse an NEV1 buffer into an EventStream.

    Raises EventFormatError for a bad magic or truncated buffer,
    CorruptRecordError (with byte offset) for out-of-bounds records, and
    TimestampOrderError if timestamps decrease.
    """
    if len(raw) < HEADER.size:
        raise EventFormatError(f"buffer too short for header: {len(raw)} bytes")
    magic, width, height, count = HEADER.unpack_from(raw, 0)
    if magic != MAGIC:
        raise EventFormatError(f"bad magic {magic!r}, expected {MAGIC!r}")
    expected = HEADER.size + count * RECORD_SIZE
    if len(raw) != expected:
        raise EventFormatError(
            f"buffer length {len(raw)} does not match header-declared "
            f"{count} records ({expected} bytes)"
        )
    if width == 0 or height == 0:
        raise EventFormatError("header declares a zero-sized sensor")
    records = np.frombuffer(raw, dtype=RECORD_DTYPE, count=count, offset=HEADER.size)
    t = records["t"].copy()
    x = records["x"].copy()
    y = records["y"].copy()
    p = records["p"].copy()
    bad = np.nonzero((x >= width) | (y >= height) | (p > 1))[0]
    if bad.size:
        i = int(bad[0])
        raise CorruptRecordError(
            f"record {i} out of bounds: x={x[i]} y={y[i]} p={p[i]} "
            f"for {width}x{height} sensor",
            HEADER.size + i * RECORD_SIZE,
        )
    order = np.nonzero(t[1:] < t[:-1])[0]
    if order.size:
        raise TimestampOrderError("decreasing timestamp", int(order[0]) + 1)
    return EventStream(width, height, t, x, y, p)


def encode_event_stream(stream: EventStream) -> bytes:
    """Serialise a stream to NEV1 bytes; decode_event_stream inverts exactly."""
    records = np.empty(len(stream), dtype=RECORD_DTYPE)
    records["t"] = stream.t
    records["x"] = stream.x
    records["y"] = stream.y
    records["p"] = stream.p
    header = HEADER.pack(MAGIC, stream.width, stream.height, len(stream))
    return header + records.tobytes()


def accumulate(stream: EventStream, cfg: AccumulationConfig, duration_us: int) -> AccumulationResult:
    """Bin events into ceil(duration*fps/1e6) count frames.

    An event at time t lands in frame floor(t / dt); windows are half-open,
    so t = i*dt opens frame i. Events at or beyond `duration_us`, and events
    in the sliver past the last window when dt rounds low, are dropped and
    reported, which keeps frame counts + dropped == len(stream).
    """
    h, w = stream.height, stream.width
    n_frames = cfg.frame_count(duration_us)
    if n_frames == 0:
        return AccumulationResult([], dropped=len(stream))
    dt = cfg.interval_us
    t = stream.t
    # t is sorted, so the kept prefix and per-frame runs are contiguous.
    n_keep = int(np.searchsorted(t, duration_us, side="left"))
    idx = t[:n_keep] // np.uint64(dt)
    n_in = int(np.searchsorted(idx, n_frames, side="left"))
    dropped = len(stream) - n_in
    idx = idx[:n_in]
    x = stream.x[:n_in].astype(np.int64)
    y = stream.y[:n_in].astype(np.int64)
    p = stream.p[:n_in].astype(np.int64)
    bounds = np.searchsorted(idx, np.arange(n_frames + 1, dtype=np.uint64))
    frames = []
    plane = h * w
    for i in range(n_frames):
        lo, hi = int(bounds[i]), int(bounds[i + 1])
        if lo == hi:
            on = np.zeros((h, w), np.int32)
            off = np.zeros((h, w), np.int32)
        else:
            keys = p[lo:hi] * plane + y[lo:hi] * w + x[lo:hi]
            counts = np.bincount(keys, minlength=2 * plane).reshape(2, h, w)
            off = counts[OFF].astype(np.int32)
            on = counts[ON].astype(np.int32)
        frames.append(CountFrame(i, on, off))
    return AccumulationResult(frames, dropped)


def render_frame(frame: CountFrame) -> np.ndarray:
    """8-bit render: 128 neutral, 255 where ON wins, 0 where OFF wins, ties 128."""
    img = np.full((frame.height, frame.width), 128, np.uint8)
    img[frame.on_counts > frame.off_counts] = 255
    img[frame.off_counts > frame.on_counts] = 0
    return img


@dataclass(frozen=True)
class StreamStats:
    count: int
    on_count: int
    off_count: int
    duration_us: int
    mean_rate_hz: float


def stream_stats(stream: EventStream) -> StreamStats:
    """Exact counts, first-to-last duration, and mean event rate."""
    n = len(stream)
    on = int(np.count_nonzero(stream.p)) if n else 0
    duration = int(stream.t[-1]) - int(stream.t[0]) if n >= 2 else 0
    rate = n / duration * 1e6 if duration > 0 else 0.0
    return StreamStats(n, on, n - on, duration, rate)


CSV_HEADER = "t_us,x,y,p"


def write_csv(stream: EventStream, path) -> None:
    """CSV interchange: header `t_us,x,y,p`, one event per line."""
    with open(path, "w") as fh:
        fh.write(CSV_HEADER + "\n")
        for i in range(len(stream)):
            fh.write(f"{stream.t[i]},{stream.x[i]},{stream.y[i]},{stream.p[i]}\n")


def read_csv(path, width: int, height: int) -> EventStream:
    """Read the CSV interchange format; resolution is not stored in the file."""
    with open(path) as fh:
        header = fh.readline().strip()
        if header != CSV_HEADER:
            raise EventFormatError(f"expected CSV header {CSV_HEADER!r}, got {header!r}")
        data = np.loadtxt(fh, delimiter=",", dtype=np.int64, ndmin=2)
    if data.size == 0:
        return EventStream.empty(width, height)
    return EventStream(
        width,
        height,
        data[:, 0].astype(np.uint64),
        data[:, 1].astype(np.uint16),
        data[:, 2].astype(np.uint16),
        data[:, 3].astype(np.uint8),
    )
