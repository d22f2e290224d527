// DOM wiring for the review tool: video picker, frame stepper, overlay
// toggle, canvas box editor, and the interpolate button.

import { ApiClient } from "./api.js";
import type { Box } from "./api.js";
import {
  addRecord,
  clampRect,
  deleteRecord,
  dragCreateRect,
  dragMoveRect,
  dragResizeRect,
  hitTest,
  modifyRecord,
  nextTrackId,
  type Handle,
  type Rect,
} from "./boxes.js";
import { drawBoxes, drawFramePair, drawProvisionalRect } from "./render.js";
import { Store } from "./state.js";

const store = new Store(new ApiClient());

const canvas = document.getElementById("view") as HTMLCanvasElement;
const ctx = canvas.getContext("2d")!;
const videoSelect = document.getElementById("video") as HTMLSelectElement;
const frameLabel = document.getElementById("frame-label") as HTMLSpanElement;
const statusLine = document.getElementById("status") as HTMLSpanElement;
const interpolateBtn = document.getElementById("interpolate") as HTMLButtonElement;

let rgbImage: HTMLImageElement | null = null;
let eventImage: HTMLImageElement | null = null;
let loadedFrameKey = "";

type Drag =
  | { kind: "create"; x0: number; y0: number; rect: Rect }
  | { kind: "move"; box: Box; x0: number; y0: number; rect: Rect }
  | { kind: "resize"; box: Box; handle: Handle; x0: number; y0: number; rect: Rect };

let drag: Drag | null = null;

function decodePng(b64: string): Promise<HTMLImageElement> {
  return new Promise((resolve, reject) => {
    const img = new Image();
    img.onload = () => resolve(img);
    img.onerror = reject;
    img.src = `data:image/png;base64,${b64}`;
  });
}

async function syncImages(): Promise<void> {
  const fp = store.state.framePair;
  if (!fp) return;
  const key = `${fp.video_id}:${fp.frame}`;
  if (key === loadedFrameKey) return;
  [rgbImage, eventImage] = await Promise.all([
    decodePng(fp.rgb_png_b64),
    decodePng(fp.event_png_b64),
  ]);
  loadedFrameKey = key;
  canvas.width = rgbImage.naturalWidth;
  canvas.height = rgbImage.naturalHeight;
  draw();
}

function draw(): void {
  const s = store.state;
  drawFramePair(ctx, rgbImage, eventImage, s.overlay);
  if (s.framePair) drawBoxes(ctx, s.framePair.boxes, s.selected, s.pending);
  if (drag) drawProvisionalRect(ctx, drag.rect);
}

function render(): void {
  const s = store.state;
  frameLabel.textContent = s.videoId
    ? `${s.videoId}  frame ${s.frame + 1}/${s.frameCount}`
    : "no video";
  statusLine.textContent = s.lastError
    ? `unsaved: ${s.lastError}`
    : s.pending
      ? "saving..."
      : "";
  interpolateBtn.disabled = !store.canInterpolateSelected();
  void syncImages();
  draw();
}

store.subscribe(render);

function canvasPoint(evt: MouseEvent): { x: number; y: number } {
  const rect = canvas.getBoundingClientRect();
  return {
    x: ((evt.clientX - rect.left) / rect.width) * canvas.width,
    y: ((evt.clientY - rect.top) / rect.height) * canvas.height,
  };
}

canvas.addEventListener("mousedown", (evt) => {
  const s = store.state;
  if (!s.framePair) return;
  const { x, y } = canvasPoint(evt);
  const hit = hitTest(s.framePair.boxes, x, y);
  if (hit.kind === "handle" && hit.box && hit.handle) {
    store.select(hit.box);
    drag = { kind: "resize", box: hit.box, handle: hit.handle, x0: x, y0: y, rect: hit.box };
  } else if (hit.kind === "inside" && hit.box) {
    store.select(hit.box);
    drag = { kind: "move", box: hit.box, x0: x, y0: y, rect: hit.box };
  } else {
    store.select(null);
    drag = { kind: "create", x0: x, y0: y, rect: { x, y, w: 0, h: 0 } };
  }
  draw();
});

canvas.addEventListener("mousemove", (evt) => {
  if (!drag) return;
  const { x, y } = canvasPoint(evt);
  const dx = x - drag.x0;
  const dy = y - drag.y0;
  if (drag.kind === "create") {
    drag.rect = dragCreateRect(drag.x0, drag.y0, x, y);
  } else if (drag.kind === "move") {
    drag.rect = dragMoveRect(drag.box, dx, dy);
  } else {
    drag.rect = dragResizeRect(drag.box, drag.handle, dx, dy);
  }
  drag.rect = clampRect(drag.rect, canvas.width, canvas.height);
  draw();
});

canvas.addEventListener("mouseup", () => {
  if (!drag) return;
  const finished = drag;
  drag = null;
  const s = store.state;
  if (!s.framePair) return;
  if (finished.kind === "create") {
    if (finished.rect.w >= 3 && finished.rect.h >= 3) {
      const tid = nextTrackId(s.allBoxes);
      void store.submitEdit(addRecord(s.frame, tid, finished.rect));
    }
  } else {
    const moved =
      finished.rect.x !== finished.box.x ||
      finished.rect.y !== finished.box.y ||
      finished.rect.w !== finished.box.w ||
      finished.rect.h !== finished.box.h;
    if (moved) void store.submitEdit(modifyRecord(finished.box, finished.rect));
  }
  draw();
});

document.addEventListener("keydown", (evt) => {
  if (evt.key === "ArrowRight") void store.step(1);
  if (evt.key === "ArrowLeft") void store.step(-1);
  if (evt.key === "Delete" || evt.key === "Backspace") {
    const box = store.selectedBox();
    if (box) void store.submitEdit(deleteRecord(box));
  }
});

document.getElementById("prev")!.addEventListener("click", () => void store.step(-1));
document.getElementById("next")!.addEventListener("click", () => void store.step(1));
interpolateBtn.addEventListener("click", () => void store.interpolateSelected());

for (const mode of ["rgb", "event", "blend"] as const) {
  document.getElementById(`mode-${mode}`)!.addEventListener("click", () => {
    store.setOverlay(mode);
  });
}

videoSelect.addEventListener("change", () => {
  if (videoSelect.value) void store.selectVideo(videoSelect.value);
});

async function boot(): Promise<void> {
  await store.loadVideos();
  videoSelect.innerHTML = store.state.videos
    .map((v) => `<option value="${v.video_id}">${v.video_id} (${v.frame_count}f)</option>`)
    .join("");
  if (store.state.videos.length) {
    await store.selectVideo(store.state.videos[0].video_id);
  }
}

void boot();
