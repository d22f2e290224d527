"""Registered frame access for one recording.

Brings a recording's two sensors into the shared coordinate frame: events
are shifted onto the RGB clock (t_offset) and binned per frame; RGB frames
are undistorted, cropped/padded onto the event raster, and translated by
-x_shift so pixel (x, y) means the same place in both outputs. Box
coordinates from the annotation files are valid on either image.
"""

from __future__ import annotations

import os
from typing import Optional

import numpy as np
from PIL import Image

from . import events as ev
from .dataset import RecordingManifest
from .registration import apply_offset, crop_pad_rgb, translate_columns, undistort_image

RGB_EXTENSIONS = (".png", ".jpg", ".jpeg", ".bmp")


class RecordingPipeline:
    """Lazy, read-only view of one recording's registered frames."""

    def __init__(self, manifest: RecordingManifest):
        self.manifest = manifest
        fps = float(manifest.fps)
        # str() keeps non-integer rates exact through Fraction ("29.97").
        self.cfg = ev.AccumulationConfig(int(fps) if fps.is_integer() else str(fps))
        self._stream: Optional[ev.EventStream] = None
        self._rgb_files = None

    @property
    def stream(self) -> ev.EventStream:
        if self._stream is None:
            path = self.manifest.events
            if path.endswith(".csv"):
                raw = ev.read_csv(path, self.manifest.width, self.manifest.height)
            else:
                with open(path, "rb") as fh:
                    raw = ev.decode_event_stream(fh.read())
            raw, _ = apply_offset(raw, self.manifest.registration.t_offset_us)
            self._stream = raw
        return self._stream

    @property
    def rgb_files(self) -> list:
        if self._rgb_files is None:
            names = sorted(
                f for f in os.listdir(self.manifest.rgb_dir)
                if f.lower().endswith(RGB_EXTENSIONS)
            )
            self._rgb_files = [os.path.join(self.manifest.rgb_dir, f) for f in names]
        return self._rgb_files

    @property
    def n_frames(self) -> int:
        if self.manifest.frame_count is not None:
            return self.manifest.frame_count
        return len(self.rgb_files)

    def count_frame(self, index: int) -> ev.CountFrame:
        """ON/OFF counts for frame `index` (window [i*dt, (i+1)*dt))."""
        dt = self.cfg.interval_us
        t = self.stream.t
        lo = int(np.searchsorted(t, index * dt, side="left"))
        hi = int(np.searchsorted(t, (index + 1) * dt, side="left"))
        h, w = self.manifest.height, self.manifest.width
        on = np.zeros((h, w), np.int32)
        off = np.zeros((h, w), np.int32)
        if hi > lo:
            keys = (self.stream.p[lo:hi].astype(np.int64) * (h * w)
                    + self.stream.y[lo:hi].astype(np.int64) * w
                    + self.stream.x[lo:hi].astype(np.int64))
            counts = np.bincount(keys, minlength=2 * h * w).reshape(2, h, w)
            off = counts[ev.OFF].astype(np.int32)
            on = counts[ev.ON].astype(np.int32)
        return ev.CountFrame(index, on, off)

    def event_render(self, index: int) -> np.ndarray:
        """Registered 8-bit event render (undistorted if intrinsics given)."""
        img = ev.render_frame(self.count_frame(index))
        intr = self.manifest.intrinsics.get("event")
        if intr is not None:
            img = undistort_image(img, intr)
        return img

    def rgb_registered(self, index: int) -> np.ndarray:
        """RGB frame mapped onto the event raster (undistort, crop/pad, shift)."""
        if index < 0 or index >= len(self.rgb_files):
            raise IndexError(f"rgb frame {index} out of range")
        img = np.asarray(Image.open(self.rgb_files[index]).convert("RGB"))
        intr = self.manifest.intrinsics.get("rgb")
        if intr is not None:
            img = undistort_image(img, intr)
        reg = self.manifest.registration
        img = crop_pad_rgb(img, reg, (self.manifest.width, self.manifest.height))
        if reg.x_shift:
            img = translate_columns(img, -reg.x_shift)
        return img

    def ev_input(self, index: int) -> np.ndarray:
        """(H, W, 2) float inputs for the detector: normalized ON/OFF counts."""
        frame = self.count_frame(index)
        stacked = np.stack([frame.on_counts, frame.off_counts], axis=-1).astype(np.float64)
        return stacked / max(1.0, float(stacked.max()))

    def rgb_input(self, index: int) -> np.ndarray:
        """(H, W, 3) float RGB input in [0, 1], registered."""
        return self.rgb_registered(index).astype(np.float64) / 255.0


def to_png_bytes(img: np.ndarray) -> bytes:
    import io

    buf = io.BytesIO()
    Image.fromarray(img).save(buf, format="PNG")
    return buf.getvalue()
