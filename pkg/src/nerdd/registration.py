"""Spatial and temporal alignment of the event and RGB domains.

After registration one set of box coordinates is valid on both sensors:
frames are undistorted with per-camera intrinsics, the RGB frame is cropped
and padded onto the event raster, and the residual horizontal offset is a
pure x translation. Clock skew between the two recordings is a single
t_offset in microseconds (event clock minus RGB clock); it can be supplied
in the manifest or estimated from activity cross-correlation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .annotate import BoxAnnotation
from .events import AccumulationConfig, EventStream


class RegistrationError(ValueError):
    pass


class UndefinedOffsetError(RegistrationError):
    """Cross-correlation was degenerate (zero-variance series)."""


@dataclass(frozen=True)
class Intrinsics:
    """Pinhole intrinsics with Brown-Conrady distortion (3 radial, 2 tangential)."""

    fx: float
    fy: float
    cx: float
    cy: float
    k1: float = 0.0
    k2: float = 0.0
    k3: float = 0.0
    p1: float = 0.0
    p2: float = 0.0

    def __post_init__(self):
        vals = (self.fx, self.fy, self.cx, self.cy, self.k1, self.k2, self.k3, self.p1, self.p2)
        if not all(math.isfinite(v) for v in vals):
            raise RegistrationError("intrinsics must be finite")
        if self.fx <= 0 or self.fy <= 0:
            raise RegistrationError("focal lengths must be positive")

    def is_identity(self) -> bool:
        return self.k1 == self.k2 == self.k3 == self.p1 == self.p2 == 0.0

    def to_json(self) -> dict:
        return {k: getattr(self, k) for k in ("fx", "fy", "cx", "cy", "k1", "k2", "k3", "p1", "p2")}

    @staticmethod
    def from_json(obj: dict) -> "Intrinsics":
        return Intrinsics(**{k: float(obj.get(k, 0.0)) for k in
                             ("fx", "fy", "cx", "cy", "k1", "k2", "k3", "p1", "p2")})


@dataclass(frozen=True)
class RegistrationParams:
    """Per-recording alignment: crop/pad placement, x shift, clock offset.

    crop_* select the RGB region; the cropped patch is placed at
    (pad_left, pad_top) on a zero canvas of the target size. x_shift is the
    signed column offset taking event coordinates to RGB coordinates.
    t_offset_us is the event clock minus the RGB clock.
    """

    x_shift: int = 0
    t_offset_us: int = 0
    crop_x: int = 0
    crop_y: int = 0
    crop_w: int = 0  # 0 means "to the source edge"
    crop_h: int = 0
    pad_left: int = 0
    pad_top: int = 0

    def to_json(self) -> dict:
        return {
            "x_shift": self.x_shift,
            "t_offset_us": self.t_offset_us,
            "crop_x": self.crop_x,
            "crop_y": self.crop_y,
            "crop_w": self.crop_w,
            "crop_h": self.crop_h,
            "pad_left": self.pad_left,
            "pad_top": self.pad_top,
        }

    @staticmethod
    def from_json(obj: dict) -> "RegistrationParams":
        fields = ("x_shift", "t_offset_us", "crop_x", "crop_y",
                  "crop_w", "crop_h", "pad_left", "pad_top")
        return RegistrationParams(**{k: int(obj.get(k, 0)) for k in fields})


def undistort_image(img: np.ndarray, intr: Intrinsics) -> np.ndarray:
    """Undistort by inverse mapping: each output pixel is traced through the
    forward Brown-Conrady model and bilinearly sampled from the source.

    Pixels that map outside the source are zero. With all coefficients zero
    the input is returned unchanged (exact identity).
    """
    if img.ndim not in (2, 3):
        raise RegistrationError("image must be HxW or HxWxC")
    h, w = img.shape[:2]
    if not (0 <= intr.cx < w and 0 <= intr.cy < h):
        raise RegistrationError("principal point outside image bounds")
    if intr.is_identity():
        return img.copy()
    u, v = np.meshgrid(np.arange(w, dtype=np.float64), np.arange(h, dtype=np.float64))
    xn = (u - intr.cx) / intr.fx
    yn = (v - intr.cy) / intr.fy
    xd, yd = distort_normalized(xn, yn, intr)
    sx = xd * intr.fx + intr.cx
    sy = yd * intr.fy + intr.cy
    return _bilinear_sample(img, sx, sy)


def distort_normalized(xn, yn, intr: Intrinsics):
    """Forward Brown-Conrady model on normalized camera coordinates."""
    r2 = xn * xn + yn * yn
    radial = 1.0 + r2 * (intr.k1 + r2 * (intr.k2 + r2 * intr.k3))
    xd = xn * radial + 2.0 * intr.p1 * xn * yn + intr.p2 * (r2 + 2.0 * xn * xn)
    yd = yn * radial + intr.p1 * (r2 + 2.0 * yn * yn) + 2.0 * intr.p2 * xn * yn
    return xd, yd


def _bilinear_sample(img: np.ndarray, sx: np.ndarray, sy: np.ndarray) -> np.ndarray:
    h, w = img.shape[:2]
    valid = (sx >= 0) & (sx <= w - 1) & (sy >= 0) & (sy <= h - 1)
    x0 = np.clip(np.floor(sx), 0, w - 1).astype(np.int64)
    y0 = np.clip(np.floor(sy), 0, h - 1).astype(np.int64)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = np.clip(sx, 0, w - 1) - x0
    fy = np.clip(sy, 0, h - 1) - y0
    flat = img.reshape(h * w, -1).astype(np.float64)
    idx = lambda yy, xx: flat[(yy * w + xx).ravel()].reshape(h, w, -1)
    wx0, wx1 = (1.0 - fx)[..., None], fx[..., None]
    wy0, wy1 = (1.0 - fy)[..., None], fy[..., None]
    out = (idx(y0, x0) * wy0 * wx0 + idx(y0, x1) * wy0 * wx1
           + idx(y1, x0) * wy1 * wx0 + idx(y1, x1) * wy1 * wx1)
    out[~valid] = 0.0
    out = out.reshape(img.shape if img.ndim == 3 else (h, w))
    if np.issubdtype(img.dtype, np.integer):
        info = np.iinfo(img.dtype)
        out = np.clip(np.rint(out), info.min, info.max)
    return out.astype(img.dtype)


EVENT_TO_RGB = "event_to_rgb"
RGB_TO_EVENT = "rgb_to_event"


@dataclass(frozen=True)
class ShiftResult:
    """Projected box, or None if it left the destination frame entirely."""

    box: Optional[BoxAnnotation]
    clipped: bool

    @property
    def in_view(self) -> bool:
        return self.box is not None


def shift_project(
    box: BoxAnnotation,
    params: RegistrationParams,
    direction: str,
    width: int,
    height: int,
) -> ShiftResult:
    """Translate a box between the event and RGB domains by +-x_shift.

    The result is clamped to the destination bounds; a box pushed fully
    outside yields ShiftResult(None, True) rather than an error. Unclamped
    round trips invert exactly.
    """
    if direction == EVENT_TO_RGB:
        dx = params.x_shift
    elif direction == RGB_TO_EVENT:
        dx = -params.x_shift
    else:
        raise RegistrationError(f"unknown direction {direction!r}")
    if abs(params.x_shift) >= width:
        raise RegistrationError("|x_shift| must be smaller than the frame width")
    nx = box.x + dx
    x0, x1 = max(nx, 0.0), min(nx + box.w, float(width))
    y0, y1 = max(box.y, 0.0), min(box.y + box.h, float(height))
    if x1 <= x0 or y1 <= y0:
        return ShiftResult(None, True)
    clipped = (x0 != nx) or (x1 != nx + box.w) or (y0 != box.y) or (y1 != box.y + box.h)
    out = BoxAnnotation(box.frame, box.track_id, x0, y0, x1 - x0, y1 - y0, box.source)
    return ShiftResult(out, clipped)


def crop_pad_rgb(img: np.ndarray, params: RegistrationParams, target: tuple) -> np.ndarray:
    """Crop the RGB frame and paste it onto a zero canvas of `target` (w, h).

    The crop rectangle must lie inside the source and the pasted region must
    fit the canvas; output size is exactly the target for all inputs.
    """
    tw, th = target
    if tw < 1 or th < 1:
        raise RegistrationError("target size must be at least 1x1")
    h, w = img.shape[:2]
    cw = params.crop_w if params.crop_w > 0 else w - params.crop_x
    ch = params.crop_h if params.crop_h > 0 else h - params.crop_y
    if params.crop_x < 0 or params.crop_y < 0 or cw <= 0 or ch <= 0 \
            or params.crop_x + cw > w or params.crop_y + ch > h:
        raise RegistrationError("crop rectangle outside the source image")
    if params.pad_left < 0 or params.pad_top < 0 \
            or params.pad_left + cw > tw or params.pad_top + ch > th:
        raise RegistrationError("cropped region does not fit the target canvas")
    shape = (th, tw) if img.ndim == 2 else (th, tw, img.shape[2])
    out = np.zeros(shape, dtype=img.dtype)
    out[params.pad_top:params.pad_top + ch, params.pad_left:params.pad_left + cw] = \
        img[params.crop_y:params.crop_y + ch, params.crop_x:params.crop_x + cw]
    return out


def translate_columns(img: np.ndarray, dx: int) -> np.ndarray:
    """Shift an image horizontally by dx pixels, filling vacated columns with 0."""
    out = np.zeros_like(img)
    w = img.shape[1]
    if dx >= w or -dx >= w:
        return out
    if dx >= 0:
        out[:, dx:] = img[:, :w - dx]
    else:
        out[:, :w + dx] = img[:, -dx:]
    return out


@dataclass(frozen=True)
class OffsetEstimate:
    lag_frames: int
    offset_us: int
    score: float


def estimate_temporal_offset(
    series_a: np.ndarray,
    series_b: np.ndarray,
    fps,
    max_lag: Optional[int] = None,
) -> OffsetEstimate:
    """Recover the frame lag between two activity series by normalized
    cross-correlation.

    Returns the lag k maximizing the Pearson correlation of the overlap of
    (a, b shifted by k), i.e. the amount by which b is delayed relative to a
    (b[t] ~ a[t-k]). offset_us = k * round(1e6/fps), matching the
    accumulation interval. Ties prefer the smaller |k|, then the smaller k.
    Constant series raise UndefinedOffsetError.
    """
    a = np.asarray(series_a, dtype=np.float64)
    b = np.asarray(series_b, dtype=np.float64)
    if a.ndim != 1 or b.ndim != 1 or len(a) < 8 or len(b) < 8:
        raise RegistrationError("activity series must be 1-D with length >= 8")
    if max_lag is None:
        max_lag = min(len(a), len(b)) // 2
    best = None
    for k in sorted(range(-max_lag, max_lag + 1), key=lambda k: (abs(k), k)):
        # b[t] = a[t-k]: compare a[i] with b[i+k] over the valid overlap.
        lo_a = max(0, -k)
        hi_a = min(len(a), len(b) - k)
        if hi_a - lo_a < 2:
            continue
        seg_a = a[lo_a:hi_a]
        seg_b = b[lo_a + k:hi_a + k]
        sa, sb = seg_a.std(), seg_b.std()
        if sa == 0.0 or sb == 0.0:
            continue
        score = float(np.mean((seg_a - seg_a.mean()) * (seg_b - seg_b.mean())) / (sa * sb))
        if best is None or score > best[0]:
            best = (score, k)
    if best is None:
        raise UndefinedOffsetError("all candidate lags have zero-variance overlap")
    score, lag = best
    dt = AccumulationConfig(fps).interval_us
    return OffsetEstimate(lag, lag * dt, score)


def apply_offset(stream: EventStream, t_offset_us: int):
    """Shift all event timestamps by -t_offset_us onto the RGB clock.

    Events whose shifted time would be negative are dropped; returns
    (shifted stream, dropped count).
    """
    t = stream.t.astype(np.int64) - int(t_offset_us)
    keep = int(np.searchsorted(t, 0, side="left"))
    dropped = keep
    out = EventStream(
        stream.width,
        stream.height,
        t[keep:].astype(np.uint64),
        stream.x[keep:].copy(),
        stream.y[keep:].copy(),
        stream.p[keep:].copy(),
    )
    return out, dropped
