import { describe, expect, it } from "vitest";

import type { Box } from "../src/api.js";
import {
  addRecord,
  blendChannel,
  clampRect,
  deleteRecord,
  dragCreateRect,
  dragMoveRect,
  dragResizeRect,
  hitTest,
  keyframeCount,
  modifyRecord,
  nextTrackId,
} from "../src/boxes.js";
import { BLEND_ALPHA } from "../src/render.js";

const box: Box = { frame: 2, track_id: 7, x: 10, y: 20, w: 30, h: 20, source: "auto" };

describe("hitTest", () => {
  it("detects the inside of a box", () => {
    const hit = hitTest([box], 25, 30);
    expect(hit.kind).toBe("inside");
    expect(hit.box).toBe(box);
  });

  it("prioritizes handles over the interior", () => {
    const hit = hitTest([box], 10, 20);
    expect(hit.kind).toBe("handle");
    expect(hit.handle).toBe("nw");
    expect(hitTest([box], 40, 40).handle).toBe("se");
  });

  it("returns none outside every box", () => {
    expect(hitTest([box], 200, 200).kind).toBe("none");
  });

  it("prefers the smallest box under the cursor", () => {
    const small: Box = { ...box, track_id: 8, x: 15, y: 25, w: 5, h: 5 };
    const hit = hitTest([box, small], 17, 27);
    expect(hit.box).toBe(small);
  });
});

describe("drag math", () => {
  it("creates a normalized rect from any drag direction", () => {
    expect(dragCreateRect(50, 60, 30, 20)).toEqual({ x: 30, y: 20, w: 20, h: 40 });
  });

  it("moves preserve size", () => {
    expect(dragMoveRect(box, 5, -3)).toEqual({ x: 15, y: 17, w: 30, h: 20 });
  });

  it("resizes from the south-east handle", () => {
    expect(dragResizeRect(box, "se", 4, 6)).toEqual({ x: 10, y: 20, w: 34, h: 26 });
  });

  it("resizes from the north-west handle moves the origin", () => {
    expect(dragResizeRect(box, "nw", 4, 6)).toEqual({ x: 14, y: 26, w: 26, h: 14 });
  });

  it("normalizes inverted rectangles", () => {
    const r = dragResizeRect({ x: 10, y: 10, w: 4, h: 4 }, "se", -10, -10);
    expect(r.w).toBeGreaterThan(0);
    expect(r.h).toBeGreaterThan(0);
  });

  it("clamps to the frame bounds", () => {
    const r = clampRect({ x: -5, y: -5, w: 1000, h: 1000 }, 64, 48);
    expect(r).toEqual({ x: 0, y: 0, w: 64, h: 48 });
  });
});

describe("edit records", () => {
  it("builds an add with a fresh track id", () => {
    expect(nextTrackId([box])).toBe(8);
    expect(nextTrackId([])).toBe(0);
    const rec = addRecord(3, 8, { x: 1, y: 2, w: 3, h: 4 });
    expect(rec).toEqual({ kind: "add", frame: 3, track_id: 8, x: 1, y: 2, w: 3, h: 4 });
  });

  it("builds modify and delete addressing the box identity", () => {
    expect(modifyRecord(box, { x: 11, y: 21, w: 30, h: 20 })).toEqual({
      kind: "modify", frame: 2, track_id: 7, x: 11, y: 21, w: 30, h: 20,
    });
    expect(deleteRecord(box)).toEqual({ kind: "delete", frame: 2, track_id: 7 });
  });
});

describe("keyframes and blending", () => {
  it("counts only auto and manual boxes as keyframes", () => {
    const boxes: Box[] = [
      box,
      { ...box, frame: 3, source: "interp" },
      { ...box, frame: 4, source: "manual" },
      { ...box, frame: 5, track_id: 9 },
    ];
    expect(keyframeCount(boxes, 7)).toBe(2);
    expect(keyframeCount(boxes, 9)).toBe(1);
    expect(keyframeCount(boxes, 42)).toBe(0);
  });

  it("alpha-composites the pair with the documented alpha", () => {
    // blend mode is rgb*(1-a) + event*a; at a=0.5 equal contribution
    expect(BLEND_ALPHA).toBe(0.5);
    expect(blendChannel(100, 200, BLEND_ALPHA)).toBe(150);
    expect(blendChannel(80, 40, 0.25)).toBe(70);
    expect(blendChannel(80, 40, 0)).toBe(80);
    expect(blendChannel(80, 40, 1)).toBe(40);
  });
});
