// Box-geometry helpers for the canvas editor: hit testing, drag math, and
// edit-record construction. All coordinates live in the registered frame,
// so one geometry is valid over both modalities.

import type { Box, EditRecord } from "./api.js";

export const HANDLE_TOLERANCE = 5;
export const MIN_BOX_SIZE = 2;

export type Handle = "nw" | "n" | "ne" | "e" | "se" | "s" | "sw" | "w";

export interface HitResult {
  kind: "handle" | "inside" | "none";
  box?: Box;
  handle?: Handle;
}

const HANDLES: { name: Handle; fx: number; fy: number }[] = [
  { name: "nw", fx: 0, fy: 0 },
  { name: "n", fx: 0.5, fy: 0 },
  { name: "ne", fx: 1, fy: 0 },
  { name: "e", fx: 1, fy: 0.5 },
  { name: "se", fx: 1, fy: 1 },
  { name: "s", fx: 0.5, fy: 1 },
  { name: "sw", fx: 0, fy: 1 },
  { name: "w", fx: 0, fy: 0.5 },
];

export function hitTest(boxes: Box[], x: number, y: number): HitResult {
  // handles take priority, innermost box wins for moves
  for (const box of boxes) {
    for (const h of HANDLES) {
      const hx = box.x + h.fx * box.w;
      const hy = box.y + h.fy * box.h;
      if (Math.abs(x - hx) <= HANDLE_TOLERANCE && Math.abs(y - hy) <= HANDLE_TOLERANCE) {
        return { kind: "handle", box, handle: h.name };
      }
    }
  }
  let best: Box | undefined;
  for (const box of boxes) {
    if (x >= box.x && x <= box.x + box.w && y >= box.y && y <= box.y + box.h) {
      if (!best || box.w * box.h < best.w * best.h) best = box;
    }
  }
  return best ? { kind: "inside", box: best } : { kind: "none" };
}

export interface Rect {
  x: number;
  y: number;
  w: number;
  h: number;
}

export function clampRect(r: Rect, width: number, height: number): Rect {
  const x = Math.max(0, Math.min(r.x, width - MIN_BOX_SIZE));
  const y = Math.max(0, Math.min(r.y, height - MIN_BOX_SIZE));
  const w = Math.max(MIN_BOX_SIZE, Math.min(r.w, width - x));
  const h = Math.max(MIN_BOX_SIZE, Math.min(r.h, height - y));
  return { x, y, w, h };
}

export function dragCreateRect(x0: number, y0: number, x1: number, y1: number): Rect {
  return {
    x: Math.min(x0, x1),
    y: Math.min(y0, y1),
    w: Math.abs(x1 - x0),
    h: Math.abs(y1 - y0),
  };
}

export function dragMoveRect(box: Rect, dx: number, dy: number): Rect {
  return { x: box.x + dx, y: box.y + dy, w: box.w, h: box.h };
}

export function dragResizeRect(box: Rect, handle: Handle, dx: number, dy: number): Rect {
  let { x, y, w, h } = box;
  if (handle.includes("w")) {
    x += dx;
    w -= dx;
  }
  if (handle.includes("e")) w += dx;
  if (handle.includes("n")) {
    y += dy;
    h -= dy;
  }
  if (handle.includes("s")) h += dy;
  if (w < 0) {
    x += w;
    w = -w;
  }
  if (h < 0) {
    y += h;
    h = -h;
  }
  return { x, y, w, h };
}

export function nextTrackId(boxes: Box[]): number {
  return boxes.reduce((acc, b) => Math.max(acc, b.track_id + 1), 0);
}

export function addRecord(frame: number, trackId: number, rect: Rect): EditRecord {
  return { kind: "add", frame, track_id: trackId, x: rect.x, y: rect.y, w: rect.w, h: rect.h };
}

export function modifyRecord(box: Box, rect: Rect): EditRecord {
  return {
    kind: "modify",
    frame: box.frame,
    track_id: box.track_id,
    x: rect.x,
    y: rect.y,
    w: rect.w,
    h: rect.h,
  };
}

export function deleteRecord(box: Box): EditRecord {
  return { kind: "delete", frame: box.frame, track_id: box.track_id };
}

// Keyframe count of one track: interp boxes do not anchor interpolation.
export function keyframeCount(allBoxes: Box[], trackId: number): number {
  return allBoxes.filter((b) => b.track_id === trackId && b.source !== "interp").length;
}

// Plain alpha compositing; the canvas layer uses globalAlpha with the same
// math, and this form is what the unit tests pin down.
export function blendChannel(rgbValue: number, eventValue: number, alpha: number): number {
  return rgbValue * (1 - alpha) + eventValue * alpha;
}
