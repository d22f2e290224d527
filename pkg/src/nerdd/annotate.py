"""Semi-automatic ground-truth pipeline over event count frames.

Mirrors the bootstrap flow used to label the recordings: threshold the
count frame, take 8-connected blobs as candidate boxes, link them across
frames by nearest centroid, let a human amend the result through an
ordered edit log, and densify tracks by linear interpolation.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from typing import Iterable, Optional, Sequence

import numpy as np
from scipy import ndimage

from .events import CountFrame

SOURCES = ("auto", "manual", "interp")
EDIT_KINDS = ("modify", "add", "delete")


class AnnotationError(ValueError):
    pass


class UnknownEditTargetError(AnnotationError):
    """An edit referenced a box that does not exist; carries the edit index."""

    def __init__(self, message: str, edit_index: int):
        super().__init__(f"edit {edit_index}: {message}")
        self.edit_index = edit_index


@dataclass(frozen=True)
class BoxAnnotation:
    """A drone box at one frame. (x, y) is the top-left corner in pixels."""

    frame: int
    track_id: Optional[int]
    x: float
    y: float
    w: float
    h: float
    source: str = "auto"

    def __post_init__(self):
        if self.w <= 0 or self.h <= 0:
            raise AnnotationError(f"box must have positive size, got {self.w}x{self.h}")
        if self.source not in SOURCES:
            raise AnnotationError(f"unknown source {self.source!r}")

    @property
    def centroid(self) -> tuple:
        return (self.x + self.w / 2.0, self.y + self.h / 2.0)

    def to_json(self) -> dict:
        return {
            "frame": self.frame,
            "track_id": self.track_id,
            "x": self.x,
            "y": self.y,
            "w": self.w,
            "h": self.h,
            "source": self.source,
        }

    @staticmethod
    def from_json(obj: dict) -> "BoxAnnotation":
        return BoxAnnotation(
            int(obj["frame"]),
            None if obj.get("track_id") is None else int(obj["track_id"]),
            float(obj["x"]),
            float(obj["y"]),
            float(obj["w"]),
            float(obj["h"]),
            str(obj.get("source", "auto")),
        )


@dataclass(frozen=True)
class Track:
    """One temporally linked box sequence; keyframes strictly increase in frame."""

    track_id: int
    keyframes: tuple

    def __post_init__(self):
        frames = [b.frame for b in self.keyframes]
        if any(b <= a for a, b in zip(frames, frames[1:])):
            raise AnnotationError("track keyframes must strictly increase in frame")
        if any(b.track_id != self.track_id for b in self.keyframes):
            raise AnnotationError("all keyframes must carry the track id")

    def __len__(self) -> int:
        return len(self.keyframes)


@dataclass(frozen=True)
class BlobParams:
    """Tuning knobs for blob extraction and linking.

    The defaults (threshold 2, area 9..10000 px^2, link distance 40 px,
    minimum length 5 frames) are exposed knobs; the vendor tracker this
    mimics does not publish its parameters.
    """

    count_threshold: int = 2
    connectivity: int = 8
    min_area: int = 9
    max_area: int = 10_000
    link_max_dist: float = 40.0
    min_track_len: int = 5

    def __post_init__(self):
        if self.count_threshold < 1:
            raise AnnotationError("count_threshold must be >= 1")
        if not (0 < self.min_area <= self.max_area):
            raise AnnotationError("need 0 < min_area <= max_area")
        if self.connectivity != 8:
            raise AnnotationError("only 8-connectivity is supported")


_EIGHT_CONNECTED = np.ones((3, 3), dtype=bool)


def detect_blobs(frame: CountFrame, params: BlobParams) -> list:
    """Boxes around 8-connected components of pixels with on+off >= threshold.

    Components are filtered to [min_area, max_area] pixels and returned as
    tight bounding boxes sorted by descending area (ties by top-left corner),
    with source="auto" and no track id.
    """
    mask = (frame.on_counts.astype(np.int64) + frame.off_counts) >= params.count_threshold
    labels, n = ndimage.label(mask, structure=_EIGHT_CONNECTED)
    if n == 0:
        return []
    areas = np.bincount(labels.ravel())[1:]  # label 0 is background
    slices = ndimage.find_objects(labels)
    blobs = []
    for lab in range(n):
        area = int(areas[lab])
        if not (params.min_area <= area <= params.max_area):
            continue
        sy, sx = slices[lab]
        blobs.append(
            (
                -area,
                sy.start,
                sx.start,
                BoxAnnotation(
                    frame.index,
                    None,
                    float(sx.start),
                    float(sy.start),
                    float(sx.stop - sx.start),
                    float(sy.stop - sy.start),
                    "auto",
                ),
            )
        )
    blobs.sort(key=lambda item: item[:3])
    return [b[-1] for b in blobs]


def link_tracks(
    per_frame_boxes: Sequence[Sequence[BoxAnnotation]],
    params: BlobParams,
    optimal: bool = False,
) -> list:
    """Greedy nearest-centroid linking of consecutive frames into tracks.

    A track is extended only when a box in the next frame lies within
    link_max_dist of its last centroid; unmatched boxes start new tracks and
    unmatched tracks end. Tracks shorter than min_track_len are discarded.
    With optimal=True, per-frame matching uses the Hungarian solver instead
    of greedy pairing (same distance gate).
    """
    open_tracks = []  # list of [track_id, last_box, boxes]
    finished = []
    next_id = 0
    for boxes in per_frame_boxes:
        matched_track = [False] * len(open_tracks)
        matched_box = [False] * len(boxes)
        if open_tracks and boxes:
            dists = np.array(
                [
                    [_centroid_dist(t[1], b) for b in boxes]
                    for t in open_tracks
                ]
            )
            pairs = _match_pairs(dists, params.link_max_dist, optimal)
            for ti, bi in pairs:
                tid, _, acc = open_tracks[ti]
                acc.append(replace(boxes[bi], track_id=tid))
                open_tracks[ti][1] = boxes[bi]
                matched_track[ti] = True
                matched_box[bi] = True
        survivors = []
        for i, trk in enumerate(open_tracks):
            (survivors if matched_track[i] else finished).append(trk)
        open_tracks = survivors
        for i, box in enumerate(boxes):
            if not matched_box[i]:
                open_tracks.append([next_id, box, [replace(box, track_id=next_id)]])
                next_id += 1
    finished.extend(open_tracks)
    tracks = [
        Track(tid, tuple(acc))
        for tid, _, acc in sorted(finished, key=lambda t: t[0])
        if len(acc) >= params.min_track_len
    ]
    return tracks


def _centroid_dist(a: BoxAnnotation, b: BoxAnnotation) -> float:
    (ax, ay), (bx, by) = a.centroid, b.centroid
    return float(np.hypot(ax - bx, ay - by))


def _match_pairs(dists: np.ndarray, max_dist: float, optimal: bool) -> list:
    if optimal:
        from .matching import hungarian

        big = max(1.0, float(dists.max())) * 1e6
        padded = np.where(dists <= max_dist, dists, big)
        assignment = hungarian(padded)
        return [(r, c) for r, c in assignment.pairs if dists[r, c] <= max_dist]
    order = sorted(
        (
            (dists[ti, bi], ti, bi)
            for ti in range(dists.shape[0])
            for bi in range(dists.shape[1])
            if dists[ti, bi] <= max_dist
        )
    )
    used_t, used_b, pairs = set(), set(), []
    for _, ti, bi in order:
        if ti in used_t or bi in used_b:
            continue
        used_t.add(ti)
        used_b.add(bi)
        pairs.append((ti, bi))
    return pairs


def interpolate_track(track: Track, frame_range: Optional[tuple] = None) -> list:
    """Densify a track by per-coordinate linear interpolation between keyframes.

    Keyframes are emitted unchanged; generated boxes carry source="interp".
    Nothing is extrapolated outside the keyframe span. frame_range, when
    given, is a half-open (start, stop) window intersected with the span.
    """
    if len(track.keyframes) == 0:
        raise AnnotationError("cannot interpolate an empty track")
    first, last = track.keyframes[0].frame, track.keyframes[-1].frame
    lo, hi = (frame_range if frame_range is not None else (first, last + 1))
    lo, hi = max(lo, first), min(hi, last + 1)
    by_frame = {b.frame: b for b in track.keyframes}
    out = []
    kf = list(track.keyframes)
    seg = 0
    for f in range(lo, hi):
        if f in by_frame:
            out.append(by_frame[f])
            continue
        while kf[seg + 1].frame <= f:
            seg += 1
        a, b = kf[seg], kf[seg + 1]
        alpha = (f - a.frame) / (b.frame - a.frame)
        out.append(
            BoxAnnotation(
                f,
                track.track_id,
                a.x + alpha * (b.x - a.x),
                a.y + alpha * (b.y - a.y),
                a.w + alpha * (b.w - a.w),
                a.h + alpha * (b.h - a.h),
                "interp",
            )
        )
    return out


@dataclass(frozen=True)
class EditRecord:
    """One human amendment: modify or delete an existing box, or add a new one.

    Boxes are addressed by (frame, track_id). modify and add carry the full
    geometry; the resulting boxes are tagged source="manual".
    """

    kind: str
    frame: int
    track_id: int
    x: Optional[float] = None
    y: Optional[float] = None
    w: Optional[float] = None
    h: Optional[float] = None

    def __post_init__(self):
        if self.kind not in EDIT_KINDS:
            raise AnnotationError(f"unknown edit kind {self.kind!r}")
        if self.kind in ("modify", "add"):
            if None in (self.x, self.y, self.w, self.h):
                raise AnnotationError(f"{self.kind} edit requires x, y, w, h")

    def to_json(self) -> dict:
        obj = {"kind": self.kind, "frame": self.frame, "track_id": self.track_id}
        if self.kind in ("modify", "add"):
            obj.update({"x": self.x, "y": self.y, "w": self.w, "h": self.h})
        return obj

    @staticmethod
    def from_json(obj: dict) -> "EditRecord":
        return EditRecord(
            str(obj["kind"]),
            int(obj["frame"]),
            int(obj["track_id"]),
            *(None if obj.get(k) is None else float(obj[k]) for k in ("x", "y", "w", "h")),
        )


def merge_manual(auto: Iterable[BoxAnnotation], edits: Sequence[EditRecord]) -> list:
    """Apply an ordered edit log to a box set.

    Edits address boxes by (frame, track_id); a modify/delete of a missing
    box, or an add to an occupied slot, raises UnknownEditTargetError naming
    the edit index. Modified and added boxes become source="manual". The
    result is sorted by (frame, track_id).
    """
    boxes = {}
    for b in auto:
        if b.track_id is None:
            raise AnnotationError("merge_manual requires linked boxes (track_id set)")
        key = (b.frame, b.track_id)
        if key in boxes:
            raise AnnotationError(f"duplicate box for frame/track {key}")
        boxes[key] = b
    for i, e in enumerate(edits):
        key = (e.frame, e.track_id)
        if e.kind == "delete":
            if key not in boxes:
                raise UnknownEditTargetError(f"no box at frame/track {key} to delete", i)
            del boxes[key]
        elif e.kind == "modify":
            if key not in boxes:
                raise UnknownEditTargetError(f"no box at frame/track {key} to modify", i)
            boxes[key] = BoxAnnotation(e.frame, e.track_id, e.x, e.y, e.w, e.h, "manual")
        else:  # add
            if key in boxes:
                raise UnknownEditTargetError(f"frame/track {key} already has a box", i)
            boxes[key] = BoxAnnotation(e.frame, e.track_id, e.x, e.y, e.w, e.h, "manual")
    return [boxes[k] for k in sorted(boxes)]


def read_edit_log(path) -> list:
    """JSON-lines edit log reader."""
    edits = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line:
                edits.append(EditRecord.from_json(json.loads(line)))
    return edits


def append_edit(path, edit: EditRecord) -> None:
    with open(path, "a") as fh:
        fh.write(json.dumps(edit.to_json()) + "\n")


def tracks_from_boxes(boxes: Iterable[BoxAnnotation]) -> dict:
    """Group linked boxes into Track objects, keyed by track id."""
    grouped = {}
    for b in sorted(boxes, key=lambda b: (b.track_id, b.frame)):
        if b.track_id is None:
            raise AnnotationError("box without track_id cannot join a track")
        grouped.setdefault(b.track_id, []).append(b)
    return {tid: Track(tid, tuple(bs)) for tid, bs in grouped.items()}
