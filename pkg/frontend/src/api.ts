// Typed client for the review service HTTP API. The fetch implementation is
// injectable so the client can run against a fake server in tests.

export interface Box {
  frame: number;
  track_id: number;
  x: number;
  y: number;
  w: number;
  h: number;
  source: "auto" | "manual" | "interp";
}

export interface VideoSummary {
  video_id: string;
  frame_count: number;
  box_count: number;
  dirty: boolean;
}

export interface FramePair {
  video_id: string;
  frame: number;
  rgb_png_b64: string;
  event_png_b64: string;
  boxes: Box[];
}

export interface Annotations {
  video_id: string;
  fps: number;
  width: number;
  height: number;
  boxes: Box[];
}

export type EditKind = "add" | "modify" | "delete";

export interface EditRecord {
  kind: EditKind;
  frame: number;
  track_id: number;
  x?: number;
  y?: number;
  w?: number;
  h?: number;
}

export class ApiError extends Error {
  constructor(public status: number, message: string) {
    super(message);
  }
}

type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export class ApiClient {
  constructor(
    private fetchImpl: FetchLike = (url, init) => fetch(url, init),
    private base: string = "",
  ) {}

  private async request<T>(url: string, init?: RequestInit): Promise<T> {
    const res = await this.fetchImpl(this.base + url, init);
    if (!res.ok) {
      let detail = res.statusText;
      try {
        const body = await res.json();
        if (body && body.detail) detail = String(body.detail);
      } catch {
        /* non-JSON error body */
      }
      throw new ApiError(res.status, detail);
    }
    return (await res.json()) as T;
  }

  listVideos(): Promise<VideoSummary[]> {
    return this.request("/videos");
  }

  getFrame(videoId: string, frame: number): Promise<FramePair> {
    return this.request(`/videos/${encodeURIComponent(videoId)}/frames/${frame}`);
  }

  getAnnotations(videoId: string): Promise<Annotations> {
    return this.request(`/videos/${encodeURIComponent(videoId)}/annotations`);
  }

  postEdit(videoId: string, edit: EditRecord): Promise<{ frame: number; boxes: Box[] }> {
    return this.request(`/videos/${encodeURIComponent(videoId)}/edits`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(edit),
    });
  }

  interpolate(videoId: string, trackId: number): Promise<{ track_id: number; boxes: Box[] }> {
    return this.request(
      `/videos/${encodeURIComponent(videoId)}/tracks/${trackId}/interpolate`,
      { method: "POST" },
    );
  }
}
