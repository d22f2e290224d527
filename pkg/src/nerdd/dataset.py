"""Recording manifests, annotation persistence, and dataset statistics.

A dataset is one JSON manifest listing every recording (event file, RGB
frame directory, rates, registration and intrinsics) plus one annotation
JSON per video, which keeps review-round diffs small.

Annotation schema:
    {"video_id": str, "fps": num, "width": int, "height": int,
     "frame_count": int (optional),
     "boxes": [{"frame", "track_id", "x", "y", "w", "h", "source"}, ...]}
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence

from .annotate import BoxAnnotation
from .registration import Intrinsics, RegistrationParams


class SchemaError(ValueError):
    """Manifest or annotation JSON does not match the schema; names the path."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.json_path = path


class ManifestIOError(OSError):
    """A manifest entry references a file that does not resolve."""


@dataclass(frozen=True)
class RecordingManifest:
    video_id: str
    events: str
    rgb_dir: str
    fps: float
    width: int
    height: int
    registration: RegistrationParams = field(default_factory=RegistrationParams)
    intrinsics: Dict[str, Intrinsics] = field(default_factory=dict)
    annotations: Optional[str] = None
    frame_count: Optional[int] = None

    def to_json(self) -> dict:
        obj = {
            "video_id": self.video_id,
            "events": self.events,
            "rgb_dir": self.rgb_dir,
            "fps": self.fps,
            "width": self.width,
            "height": self.height,
            "registration": self.registration.to_json(),
            "intrinsics": {k: v.to_json() for k, v in self.intrinsics.items()},
        }
        if self.annotations is not None:
            obj["annotations"] = self.annotations
        if self.frame_count is not None:
            obj["frame_count"] = self.frame_count
        return obj


_REQUIRED = ("video_id", "events", "rgb_dir", "fps", "width", "height")


def _parse_entry(obj: dict, path: str, base_dir: str) -> RecordingManifest:
    for key in _REQUIRED:
        if key not in obj:
            raise SchemaError(f"{path}.{key}", "missing required field")
    def resolve(p):
        return p if os.path.isabs(p) else os.path.join(base_dir, p)
    intr = {}
    for cam, val in obj.get("intrinsics", {}).items():
        if cam not in ("event", "rgb"):
            raise SchemaError(f"{path}.intrinsics.{cam}", "camera must be 'event' or 'rgb'")
        intr[cam] = Intrinsics.from_json(val)
    if float(obj["fps"]) <= 0:
        raise SchemaError(f"{path}.fps", "fps must be positive")
    return RecordingManifest(
        video_id=str(obj["video_id"]),
        events=resolve(str(obj["events"])),
        rgb_dir=resolve(str(obj["rgb_dir"])),
        fps=float(obj["fps"]),
        width=int(obj["width"]),
        height=int(obj["height"]),
        registration=RegistrationParams.from_json(obj.get("registration", {})),
        intrinsics=intr,
        annotations=resolve(str(obj["annotations"])) if obj.get("annotations") else None,
        frame_count=int(obj["frame_count"]) if obj.get("frame_count") is not None else None,
    )


def load_manifest(path, check_paths: bool = True) -> List[RecordingManifest]:
    """Parse and validate a dataset manifest.

    Duplicated video ids and missing fields raise SchemaError with the JSON
    path; with check_paths, dangling event/rgb/annotation references raise
    ManifestIOError naming the entry.
    """
    with open(path) as fh:
        doc = json.load(fh)
    if not isinstance(doc, dict) or not isinstance(doc.get("videos"), list):
        raise SchemaError("$", "manifest must be an object with a 'videos' list")
    base_dir = os.path.dirname(os.path.abspath(path))
    out = []
    seen = set()
    for i, obj in enumerate(doc["videos"]):
        entry = _parse_entry(obj, f"$.videos[{i}]", base_dir)
        if entry.video_id in seen:
            raise SchemaError(f"$.videos[{i}].video_id",
                              f"duplicate video id {entry.video_id!r}")
        seen.add(entry.video_id)
        if check_paths:
            if not os.path.exists(entry.events):
                raise ManifestIOError(
                    f"video {entry.video_id!r}: event file not found: {entry.events}")
            if not os.path.isdir(entry.rgb_dir):
                raise ManifestIOError(
                    f"video {entry.video_id!r}: rgb directory not found: {entry.rgb_dir}")
            if entry.annotations and not os.path.exists(entry.annotations):
                raise ManifestIOError(
                    f"video {entry.video_id!r}: annotation file not found: {entry.annotations}")
        out.append(entry)
    return out


def save_manifest(manifests: Sequence[RecordingManifest], path) -> None:
    with open(path, "w") as fh:
        json.dump({"videos": [m.to_json() for m in manifests]}, fh, indent=2)


@dataclass(frozen=True)
class VideoAnnotations:
    video_id: str
    fps: float
    width: int
    height: int
    boxes: tuple
    frame_count: Optional[int] = None

    def with_boxes(self, boxes) -> "VideoAnnotations":
        return replace(self, boxes=tuple(boxes))

    def to_json(self) -> dict:
        obj = {
            "video_id": self.video_id,
            "fps": self.fps,
            "width": self.width,
            "height": self.height,
            "boxes": [b.to_json() for b in self.boxes],
        }
        if self.frame_count is not None:
            obj["frame_count"] = self.frame_count
        return obj


def load_annotations(path) -> VideoAnnotations:
    with open(path) as fh:
        obj = json.load(fh)
    for key in ("video_id", "fps", "width", "height", "boxes"):
        if key not in obj:
            raise SchemaError(f"$.{key}", "missing required field")
    boxes = tuple(BoxAnnotation.from_json(b) for b in obj["boxes"])
    return VideoAnnotations(
        str(obj["video_id"]),
        float(obj["fps"]),
        int(obj["width"]),
        int(obj["height"]),
        boxes,
        int(obj["frame_count"]) if obj.get("frame_count") is not None else None,
    )


def save_annotations(ann: VideoAnnotations, path) -> None:
    tmp = f"{path}.tmp"
    with open(tmp, "w") as fh:
        json.dump(ann.to_json(), fh, indent=2)
    os.replace(tmp, path)  # atomic on POSIX


@dataclass(frozen=True)
class DatasetStats:
    frames_total: int
    frames_with_drone: int
    frames_without_drone: int
    total_length_s: float
    video_count: int
    fps: tuple
    resolutions: tuple

    def to_json(self) -> dict:
        return {
            "frames_total": self.frames_total,
            "frames_with_drone": self.frames_with_drone,
            "frames_without_drone": self.frames_without_drone,
            "total_length_s": self.total_length_s,
            "video_count": self.video_count,
            "fps": list(self.fps),
            "resolutions": [list(r) for r in self.resolutions],
        }


def video_frame_count(manifest: Optional[RecordingManifest],
                      ann: VideoAnnotations) -> int:
    """Frame total for one video: manifest frame_count, else the annotation
    file's, else the highest annotated frame + 1."""
    if manifest is not None and manifest.frame_count is not None:
        return manifest.frame_count
    if ann.frame_count is not None:
        return ann.frame_count
    return max((b.frame for b in ann.boxes), default=-1) + 1


def dataset_stats(
    manifests: Sequence[RecordingManifest],
    annotations: Sequence[VideoAnnotations],
) -> DatasetStats:
    """Table-style dataset characteristics from the annotation set.

    A frame "has a drone" iff it carries at least one box, so
    frames_with + frames_without == frames_total always.
    """
    by_id = {m.video_id: m for m in manifests}
    total = 0
    with_drone = 0
    length_s = 0.0
    fps_seen = set()
    res_seen = set()
    for ann in annotations:
        manifest = by_id.get(ann.video_id)
        n = video_frame_count(manifest, ann)
        total += n
        with_drone += len({b.frame for b in ann.boxes})
        length_s += n / ann.fps
        fps_seen.add(ann.fps)
        res_seen.add((ann.width, ann.height))
    return DatasetStats(
        frames_total=total,
        frames_with_drone=with_drone,
        frames_without_drone=total - with_drone,
        total_length_s=length_s,
        video_count=len(annotations),
        fps=tuple(sorted(fps_seen)),
        resolutions=tuple(sorted(res_seen)),
    )
