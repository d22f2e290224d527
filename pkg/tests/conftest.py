"""Shared fixtures: random streams and a synthetic on-disk toy dataset."""

from __future__ import annotations

import json
import os

import numpy as np
import pytest
from PIL import Image

from nerdd import annotate as ann_mod
from nerdd import dataset as ds
from nerdd import events as ev

SENSOR_W, SENSOR_H = 64, 48
FPS = 30
DT = 33_333  # us at 30 fps


def make_random_stream(rng, n_events, width=SENSOR_W, height=SENSOR_H,
                       t_max=2_000_000) -> ev.EventStream:
    t = np.sort(rng.integers(0, t_max, size=n_events).astype(np.uint64))
    return ev.EventStream(
        width,
        height,
        t,
        rng.integers(0, width, size=n_events).astype(np.uint16),
        rng.integers(0, height, size=n_events).astype(np.uint16),
        rng.integers(0, 2, size=n_events).astype(np.uint8),
    )


def blob_events(frame_index, x0, y0, size=6, per_pixel=3, dt=DT, rng=None):
    """Events densely covering a size x size blob inside one frame window."""
    rng = rng or np.random.default_rng(frame_index)
    rows = []
    for yy in range(y0, y0 + size):
        for xx in range(x0, x0 + size):
            for _ in range(per_pixel):
                t = int(rng.integers(frame_index * dt, (frame_index + 1) * dt))
                rows.append((t, xx, yy, int(rng.integers(0, 2))))
    return rows


def make_blob_video_stream(n_frames, start_x=4, start_y=10, step_x=4,
                           width=SENSOR_W, height=SENSOR_H):
    """A single blob translating step_x px per frame."""
    rows = []
    for i in range(n_frames):
        rows.extend(blob_events(i, start_x + step_x * i, start_y))
    rows.sort()
    return ev.EventStream.from_events(width, height, rows)


def build_toy_dataset(root, n_videos=3, n_frames=6):
    """Write a small but fully real dataset: NEV1 events, RGB PNGs,
    auto annotations from the actual blob pipeline, and a manifest."""
    videos = []
    params = ann_mod.BlobParams(count_threshold=2, min_area=4, max_area=400,
                                link_max_dist=20.0, min_track_len=2)
    for v in range(n_videos):
        vid = f"vid{v:02d}"
        vdir = os.path.join(root, vid)
        rgb_dir = os.path.join(vdir, "rgb")
        os.makedirs(rgb_dir, exist_ok=True)
        stream = make_blob_video_stream(n_frames, start_x=4 + 2 * v)
        with open(os.path.join(vdir, "events.nev"), "wb") as fh:
            fh.write(ev.encode_event_stream(stream))
        result = ev.accumulate(stream, ev.AccumulationConfig(FPS), n_frames * DT)
        per_frame = [ann_mod.detect_blobs(f, params) for f in result.frames]
        tracks = ann_mod.link_tracks(per_frame, params)
        boxes = tuple(sorted((b for t in tracks for b in t.keyframes),
                             key=lambda b: (b.frame, b.track_id)))
        for i in range(n_frames):
            img = np.zeros((SENSOR_H, SENSOR_W, 3), np.uint8)
            x = 4 + 2 * v + 4 * i
            img[10:16, x:x + 6] = (240, 200, 40)
            Image.fromarray(img).save(os.path.join(rgb_dir, f"{i:06d}.png"))
        ann = ds.VideoAnnotations(vid, float(FPS), SENSOR_W, SENSOR_H, boxes,
                                  frame_count=n_frames)
        ds.save_annotations(ann, os.path.join(vdir, "ann.json"))
        videos.append({
            "video_id": vid,
            "events": os.path.join(vid, "events.nev"),
            "rgb_dir": os.path.join(vid, "rgb"),
            "fps": FPS,
            "width": SENSOR_W,
            "height": SENSOR_H,
            "annotations": os.path.join(vid, "ann.json"),
            "frame_count": n_frames,
        })
    manifest_path = os.path.join(root, "manifest.json")
    with open(manifest_path, "w") as fh:
        json.dump({"videos": videos}, fh, indent=2)
    return manifest_path


@pytest.fixture
def toy_manifest(tmp_path):
    return build_toy_dataset(str(tmp_path))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
