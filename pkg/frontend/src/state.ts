// View-state store. The UI never mutates annotations except through the
// edit API: every action becomes exactly one POST, state refreshes from the
// response, and at most one mutation is in flight (the rest queue).

import { ApiClient, ApiError } from "./api.js";
import type { Box, EditRecord, FramePair, VideoSummary } from "./api.js";
import { keyframeCount } from "./boxes.js";

export type OverlayMode = "rgb" | "event" | "blend";

export interface PendingEdit {
  record: EditRecord;
  failed: boolean; // POST rejected; box stays marked unsaved
}

export interface ViewState {
  videos: VideoSummary[];
  videoId: string | null;
  frame: number;
  frameCount: number;
  overlay: OverlayMode;
  framePair: FramePair | null;
  allBoxes: Box[];
  selected: { frame: number; track_id: number } | null;
  pending: PendingEdit | null;
  lastError: string | null;
}

export function initialState(): ViewState {
  return {
    videos: [],
    videoId: null,
    frame: 0,
    frameCount: 0,
    overlay: "blend",
    framePair: null,
    allBoxes: [],
    selected: null,
    pending: null,
    lastError: null,
  };
}

type Listener = (state: ViewState) => void;

export class Store {
  state: ViewState = initialState();
  private listeners: Listener[] = [];
  private queue: EditRecord[] = [];
  private inFlight = false;

  constructor(public api: ApiClient) {}

  subscribe(listener: Listener): void {
    this.listeners.push(listener);
  }

  private emit(): void {
    for (const l of this.listeners) l(this.state);
  }

  private patch(partial: Partial<ViewState>): void {
    this.state = { ...this.state, ...partial };
    this.emit();
  }

  async loadVideos(): Promise<void> {
    const videos = await this.api.listVideos();
    this.patch({ videos });
  }

  async selectVideo(videoId: string): Promise<void> {
    const summary = this.state.videos.find((v) => v.video_id === videoId);
    if (!summary) throw new Error(`unknown video ${videoId}`);
    this.patch({
      videoId,
      frame: 0,
      frameCount: summary.frame_count,
      selected: null,
      pending: null,
    });
    await this.refreshAnnotations();
    await this.loadFrame(0);
  }

  async loadFrame(index: number): Promise<void> {
    const { videoId, frameCount } = this.state;
    if (videoId === null) return;
    const clamped = Math.max(0, Math.min(index, frameCount - 1));
    const framePair = await this.api.getFrame(videoId, clamped);
    this.patch({ frame: clamped, framePair, selected: null });
  }

  // Frame stepping clamps at both ends rather than wrapping or failing.
  async step(delta: number): Promise<void> {
    await this.loadFrame(this.state.frame + delta);
  }

  setOverlay(mode: OverlayMode): void {
    this.patch({ overlay: mode });
  }

  select(box: Box | null): void {
    this.patch({ selected: box ? { frame: box.frame, track_id: box.track_id } : null });
  }

  selectedBox(): Box | undefined {
    const sel = this.state.selected;
    if (!sel || !this.state.framePair) return undefined;
    return this.state.framePair.boxes.find(
      (b) => b.frame === sel.frame && b.track_id === sel.track_id,
    );
  }

  canInterpolateSelected(): boolean {
    const sel = this.state.selected;
    if (!sel) return false;
    return keyframeCount(this.state.allBoxes, sel.track_id) >= 2;
  }

  private async refreshAnnotations(): Promise<void> {
    if (this.state.videoId === null) return;
    const ann = await this.api.getAnnotations(this.state.videoId);
    this.patch({ allBoxes: ann.boxes });
  }

  private async refreshAfterMutation(): Promise<void> {
    await this.refreshAnnotations();
    const { videoId, frame } = this.state;
    if (videoId !== null) {
      const framePair = await this.api.getFrame(videoId, frame);
      this.patch({ framePair });
    }
    const videos = await this.api.listVideos();
    this.patch({ videos });
  }

  // One in-flight mutation; later edits queue behind it in arrival order.
  submitEdit(record: EditRecord): Promise<void> {
    this.queue.push(record);
    return this.drainQueue();
  }

  private async drainQueue(): Promise<void> {
    if (this.inFlight) return;
    this.inFlight = true;
    try {
      while (this.queue.length) {
        const record = this.queue.shift()!;
        this.patch({ pending: { record, failed: false }, lastError: null });
        if (this.state.videoId === null) {
          this.patch({ pending: null, lastError: "no video selected" });
          continue;
        }
        try {
          await this.api.postEdit(this.state.videoId, record);
          this.patch({ pending: null });
          await this.refreshAfterMutation();
        } catch (err) {
          const message = err instanceof ApiError ? err.message : String(err);
          // keep the failed edit visible as unsaved; do not retry silently
          this.patch({ pending: { record, failed: true }, lastError: message });
        }
      }
    } finally {
      this.inFlight = false;
    }
  }

  async interpolateSelected(): Promise<void> {
    const sel = this.state.selected;
    if (!sel || this.state.videoId === null || !this.canInterpolateSelected()) return;
    await this.api.interpolate(this.state.videoId, sel.track_id);
    await this.refreshAfterMutation();
  }
}
