"""HTTP service backing the manual annotation review round.

Serves registered event/RGB frame pairs (one box geometry valid on both),
accepts box edits as an append-only per-video log, and re-runs track
interpolation on demand. The current annotation file is derived state: a
pristine base snapshot plus the log always replays to it exactly, which
keeps the human round auditable and reversible.

Endpoints (JSON):
    GET  /videos
    GET  /videos/{id}/frames/{i}        -> {rgb_png_b64, event_png_b64, boxes}
    GET  /videos/{id}/annotations
    POST /videos/{id}/edits             <- one edit record
    POST /videos/{id}/tracks/{tid}/interpolate
Per-video mutation is single-writer; reads and writes to other videos
proceed concurrently. Rendered frame images are LRU-cached.
"""

from __future__ import annotations

import base64
import json
import os
import shutil
import threading
from collections import OrderedDict
from typing import Dict, List, Optional

from fastapi import FastAPI, HTTPException
from fastapi.staticfiles import StaticFiles

from .annotate import (
    AnnotationError,
    BoxAnnotation,
    EditRecord,
    Track,
    UnknownEditTargetError,
    interpolate_track,
    merge_manual,
)
from .dataset import load_annotations, load_manifest, save_annotations
from .pipeline import RecordingPipeline, to_png_bytes

FRAME_CACHE_SIZE = 512


class ReviewStateError(RuntimeError):
    pass


def _keyframes(boxes, track_id: int) -> List[BoxAnnotation]:
    return sorted(
        (b for b in boxes if b.track_id == track_id and b.source in ("auto", "manual")),
        key=lambda b: b.frame,
    )


def apply_interpolation(boxes, track_id: int) -> List[BoxAnnotation]:
    """Replace a track's interp boxes with a fresh dense interpolation of its
    auto+manual keyframes. Deterministic, hence replayable from the log."""
    keys = _keyframes(boxes, track_id)
    if not keys:
        raise AnnotationError(f"track {track_id} has no keyframes")
    dense = interpolate_track(Track(track_id, tuple(keys)))
    kept = [b for b in boxes if not (b.track_id == track_id and b.source == "interp")]
    by_key = {(b.frame, b.track_id): b for b in kept}
    for b in dense:
        by_key[(b.frame, b.track_id)] = b
    return [by_key[k] for k in sorted(by_key)]


def replay_log(base_boxes, entries) -> List[BoxAnnotation]:
    """Fold the persisted log over the pristine base annotations."""
    boxes = list(base_boxes)
    for entry in entries:
        if entry["kind"] == "interpolate":
            boxes = apply_interpolation(boxes, int(entry["track_id"]))
        else:
            boxes = merge_manual(boxes, [EditRecord.from_json(entry)])
    return boxes


class _VideoState:
    def __init__(self, manifest):
        self.manifest = manifest
        self.pipeline = RecordingPipeline(manifest)
        self.lock = threading.Lock()
        if manifest.annotations is None:
            raise ReviewStateError(f"video {manifest.video_id!r} has no annotation file")
        self.ann_path = manifest.annotations
        self.base_path = f"{self.ann_path}.base.json"
        self.log_path = f"{self.ann_path}.edits.jsonl"
        if not os.path.exists(self.base_path):
            if os.path.exists(self.log_path) and os.path.getsize(self.log_path) > 0:
                raise ReviewStateError(
                    f"{self.log_path} exists without its base snapshot; "
                    "cannot guarantee replayability"
                )
            shutil.copyfile(self.ann_path, self.base_path)
        self.annotations = load_annotations(self.ann_path)

    @property
    def dirty(self) -> bool:
        return os.path.exists(self.log_path) and os.path.getsize(self.log_path) > 0

    def log_entries(self) -> list:
        if not os.path.exists(self.log_path):
            return []
        with open(self.log_path) as fh:
            return [json.loads(line) for line in fh if line.strip()]

    def append_log(self, entry: dict) -> None:
        with open(self.log_path, "a") as fh:
            fh.write(json.dumps(entry) + "\n")

    def persist(self, boxes) -> None:
        self.annotations = self.annotations.with_boxes(boxes)
        save_annotations(self.annotations, self.ann_path)


class _FrameCache:
    def __init__(self, max_items: int = FRAME_CACHE_SIZE):
        self._items: OrderedDict = OrderedDict()
        self._max = max_items
        self._lock = threading.Lock()

    def get(self, key):
        with self._lock:
            if key in self._items:
                self._items.move_to_end(key)
                return self._items[key]
            return None

    def put(self, key, value) -> None:
        with self._lock:
            self._items[key] = value
            self._items.move_to_end(key)
            while len(self._items) > self._max:
                self._items.popitem(last=False)


def create_app(manifest_path: str, static_dir: Optional[str] = None) -> FastAPI:
    app = FastAPI(title="nerdd review service")
    videos: Dict[str, _VideoState] = {
        m.video_id: _VideoState(m) for m in load_manifest(manifest_path)
    }
    cache = _FrameCache()

    def state_of(video_id: str) -> _VideoState:
        state = videos.get(video_id)
        if state is None:
            raise HTTPException(status_code=404, detail=f"unknown video {video_id!r}")
        return state

    @app.get("/videos")
    def list_videos():
        out = []
        for vid, state in sorted(videos.items()):
            out.append({
                "video_id": vid,
                "frame_count": state.pipeline.n_frames,
                "box_count": len(state.annotations.boxes),
                "dirty": state.dirty,
            })
        return out

    @app.get("/videos/{video_id}/frames/{index}")
    def get_frame_pair(video_id: str, index: int):
        state = state_of(video_id)
        if index < 0 or index >= state.pipeline.n_frames:
            raise HTTPException(status_code=404,
                                detail=f"frame {index} out of range")
        images = cache.get((video_id, index))
        if images is None:
            rgb = to_png_bytes(state.pipeline.rgb_registered(index))
            evr = to_png_bytes(state.pipeline.event_render(index))
            images = (base64.b64encode(rgb).decode("ascii"),
                      base64.b64encode(evr).decode("ascii"))
            cache.put((video_id, index), images)
        boxes = [b.to_json() for b in state.annotations.boxes if b.frame == index]
        return {
            "video_id": video_id,
            "frame": index,
            "rgb_png_b64": images[0],
            "event_png_b64": images[1],
            "boxes": boxes,
        }

    @app.get("/videos/{video_id}/annotations")
    def get_annotations(video_id: str):
        return state_of(video_id).annotations.to_json()

    @app.post("/videos/{video_id}/edits")
    def post_edit(video_id: str, edit: dict):
        state = state_of(video_id)
        try:
            record = EditRecord.from_json(edit)
        except (AnnotationError, KeyError, TypeError, ValueError) as exc:
            raise HTTPException(status_code=400, detail=f"malformed edit: {exc}")
        with state.lock:
            try:
                boxes = merge_manual(state.annotations.boxes, [record])
            except UnknownEditTargetError as exc:
                raise HTTPException(status_code=404, detail=str(exc))
            state.append_log(record.to_json())
            state.persist(boxes)
            affected = [b.to_json() for b in boxes if b.frame == record.frame]
        return {"frame": record.frame, "boxes": affected}

    @app.post("/videos/{video_id}/tracks/{track_id}/interpolate")
    def run_interpolation(video_id: str, track_id: int):
        state = state_of(video_id)
        with state.lock:
            try:
                boxes = apply_interpolation(state.annotations.boxes, track_id)
            except AnnotationError as exc:
                raise HTTPException(status_code=404, detail=str(exc))
            state.append_log({"kind": "interpolate", "track_id": track_id})
            state.persist(boxes)
            out = [b.to_json() for b in boxes if b.track_id == track_id]
        return {"track_id": track_id, "boxes": out}

    if static_dir:
        app.mount("/", StaticFiles(directory=static_dir, html=True), name="ui")
    return app
