// Canvas drawing: the registered frame pair under the chosen overlay mode,
// plus box outlines styled by provenance. One shared coordinate space means
// one box geometry is drawn identically whichever modality is shown.

import type { Box } from "./api.js";
import type { PendingEdit } from "./state.js";
import type { Rect } from "./boxes.js";

export const BLEND_ALPHA = 0.5;

export const SOURCE_COLORS: Record<Box["source"], string> = {
  auto: "#f59e0b",
  manual: "#22c55e",
  interp: "#38bdf8",
};

export function drawFramePair(
  ctx: CanvasRenderingContext2D,
  rgb: CanvasImageSource | null,
  event: CanvasImageSource | null,
  mode: "rgb" | "event" | "blend",
): void {
  ctx.save();
  ctx.globalAlpha = 1.0;
  ctx.clearRect(0, 0, ctx.canvas.width, ctx.canvas.height);
  if (mode === "rgb" && rgb) {
    ctx.drawImage(rgb, 0, 0);
  } else if (mode === "event" && event) {
    ctx.drawImage(event, 0, 0);
  } else if (mode === "blend") {
    if (rgb) ctx.drawImage(rgb, 0, 0);
    if (event) {
      ctx.globalAlpha = BLEND_ALPHA;
      ctx.drawImage(event, 0, 0);
    }
  }
  ctx.restore();
}

export function drawBoxes(
  ctx: CanvasRenderingContext2D,
  boxes: Box[],
  selected: { frame: number; track_id: number } | null,
  pending: PendingEdit | null,
): void {
  ctx.save();
  for (const box of boxes) {
    const isSelected =
      selected !== null &&
      box.frame === selected.frame &&
      box.track_id === selected.track_id;
    ctx.strokeStyle = SOURCE_COLORS[box.source];
    ctx.lineWidth = isSelected ? 2.5 : 1.5;
    ctx.setLineDash(box.source === "interp" ? [4, 3] : []);
    ctx.strokeRect(box.x, box.y, box.w, box.h);
    if (isSelected) drawHandles(ctx, box);
  }
  if (pending && pending.failed && pending.record.kind !== "delete") {
    const r = pending.record;
    ctx.strokeStyle = "#ef4444";
    ctx.setLineDash([2, 2]);
    ctx.lineWidth = 2;
    ctx.strokeRect(r.x ?? 0, r.y ?? 0, r.w ?? 0, r.h ?? 0);
  }
  ctx.restore();
}

export function drawProvisionalRect(ctx: CanvasRenderingContext2D, rect: Rect): void {
  ctx.save();
  ctx.strokeStyle = "#e5e7eb";
  ctx.setLineDash([3, 3]);
  ctx.lineWidth = 1;
  ctx.strokeRect(rect.x, rect.y, rect.w, rect.h);
  ctx.restore();
}

function drawHandles(ctx: CanvasRenderingContext2D, box: Box): void {
  const points: [number, number][] = [];
  for (const fx of [0, 0.5, 1]) {
    for (const fy of [0, 0.5, 1]) {
      if (fx === 0.5 && fy === 0.5) continue;
      points.push([box.x + fx * box.w, box.y + fy * box.h]);
    }
  }
  ctx.setLineDash([]);
  ctx.fillStyle = "#ffffff";
  for (const [x, y] of points) ctx.fillRect(x - 2, y - 2, 4, 4);
}
