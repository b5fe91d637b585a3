/** Typed client for the authoring service: JSON endpoints over fetch and
 * the generation stream over a websocket. */

import type {
  ClipInfo,
  KeyframeRef,
  PathKeyframe,
  PathSpec,
  PoseResponse,
  SessionRecord,
  StreamFrame,
  StreamMessage,
  TransitionRecord,
  TransitionRequest,
} from "./types";

export class ServiceError extends Error {
  constructor(
    public status: number,
    public detail: string,
  ) {
    super(`service error ${status}: ${detail}`);
  }
}

async function asJson<T>(pending: Promise<Response>): Promise<T> {
  const res = await pending;
  if (!res.ok) {
    let detail = res.statusText;
    try {
      const body = await res.json();
      detail = typeof body.detail === "string" ? body.detail : JSON.stringify(body.detail ?? body);
    } catch {
      /* non-JSON error body: keep statusText */
    }
    throw new ServiceError(res.status, detail);
  }
  return (await res.json()) as T;
}

/** Minimal browser-compatible websocket surface, injectable so tests can
 * supply a node implementation. */
export interface WebSocketLike {
  send(data: string): void;
  close(): void;
  onmessage: ((ev: { data: unknown }) => void) | null;
  onerror: ((ev: unknown) => void) | null;
  onclose: ((ev: unknown) => void) | null;
  onopen: ((ev: unknown) => void) | null;
}

export type WebSocketFactory = (url: string) => WebSocketLike;

const defaultWsFactory: WebSocketFactory = (url) =>
  new (globalThis as { WebSocket?: new (url: string) => WebSocketLike }).WebSocket!(url);

export interface StreamResult {
  frames: StreamFrame[];
  transition: TransitionRecord;
}

export class ApiClient {
  constructor(
    private baseUrl: string,
    private wsFactory: WebSocketFactory = defaultWsFactory,
  ) {
    this.baseUrl = baseUrl.replace(/\/$/, "");
  }

  // -- sessions ------------------------------------------------------------

  createSession(): Promise<SessionRecord> {
    return asJson(fetchOk(this.baseUrl + "/sessions", { method: "POST" }));
  }

  getSession(id: string): Promise<SessionRecord> {
    return asJson(fetchOk(`${this.baseUrl}/sessions/${id}`));
  }

  listSessions(): Promise<SessionRecord[]> {
    return asJson(fetchOk(this.baseUrl + "/sessions"));
  }

  updateSession(
    id: string,
    update: { keyframes?: KeyframeRef[]; path?: PathSpec },
  ): Promise<SessionRecord> {
    return asJson(
      fetchOk(`${this.baseUrl}/sessions/${id}`, {
        method: "PATCH",
        headers: { "content-type": "application/json" },
        body: JSON.stringify(update),
      }),
    );
  }

  async deleteSession(id: string): Promise<void> {
    const res = await fetch(`${this.baseUrl}/sessions/${id}`, { method: "DELETE" });
    if (!res.ok) throw new ServiceError(res.status, res.statusText);
  }

  // -- clips and poses -----------------------------------------------------

  listClips(): Promise<ClipInfo[]> {
    return asJson(fetchOk(this.baseUrl + "/clips"));
  }

  getPose(clip: string, frame: number): Promise<PoseResponse> {
    return asJson(fetchOk(`${this.baseUrl}/clips/${clip}/poses/${frame}`));
  }

  // -- paths ---------------------------------------------------------------

  smoothPath(keyframes: PathKeyframe[], samples = 200, closed = false): Promise<PathSpec> {
    return asJson(
      fetchOk(this.baseUrl + "/path/smooth", {
        method: "POST",
        headers: { "content-type": "application/json" },
        body: JSON.stringify({ keyframes, samples, closed }),
      }),
    );
  }

  presetPath(
    preset: "circle" | "square" | "star" | "custom",
    options: { scale?: number; center?: [number, number]; points?: number[][]; samples?: number } = {},
  ): Promise<PathSpec> {
    return asJson(
      fetchOk(this.baseUrl + "/path/preset", {
        method: "POST",
        headers: { "content-type": "application/json" },
        body: JSON.stringify({ preset, ...options }),
      }),
    );
  }

  // -- transitions ---------------------------------------------------------

  getTransition(id: string): Promise<TransitionRecord> {
    return asJson(fetchOk(`${this.baseUrl}/transitions/${id}`));
  }

  async exportTransition(id: string, format: "json" | "bvh"): Promise<string> {
    const res = await fetch(`${this.baseUrl}/transitions/${id}/export?format=${format}`);
    if (!res.ok) throw new ServiceError(res.status, await res.text());
    return res.text();
  }

  /** Run one generation over the websocket. Frames are delivered via
   * onFrame as they stream; the promise resolves with every frame plus
   * the persisted transition record. Rejects on service errors, stream
   * interruption, or any gap in the frame indices (the UI must never
   * fabricate or skip frames). */
  generate(
    sessionId: string,
    request: TransitionRequest,
    onFrame?: (frame: StreamFrame) => void,
  ): Promise<StreamResult> {
    const wsUrl =
      this.baseUrl.replace(/^http/, "ws") + `/sessions/${sessionId}/generate`;
    return new Promise<StreamResult>((resolve, reject) => {
      const ws = this.wsFactory(wsUrl);
      const frames: StreamFrame[] = [];
      let settled = false;
      const fail = (err: Error) => {
        if (!settled) {
          settled = true;
          reject(err);
          try {
            ws.close();
          } catch {
            /* already closed */
          }
        }
      };
      ws.onopen = () => ws.send(JSON.stringify(request));
      ws.onerror = (ev) => fail(new Error(`stream error: ${String(ev)}`));
      ws.onclose = () => {
        if (!settled)
          fail(
            new Error(
              `stream interrupted after frame ${frames.length ? frames[frames.length - 1].index : "none"}`,
            ),
          );
      };
      ws.onmessage = (ev) => {
        let msg: StreamMessage;
        try {
          msg = JSON.parse(String(ev.data)) as StreamMessage;
        } catch (e) {
          fail(new Error(`unparseable stream message: ${String(e)}`));
          return;
        }
        if (msg.type === "error") {
          fail(new ServiceError(0, msg.detail ? `${msg.error}: ${msg.detail}` : msg.error));
        } else if (msg.type === "frame") {
          const expected = frames.length;
          if (msg.index !== expected) {
            fail(new Error(`frame index gap: got ${msg.index}, expected ${expected}`));
            return;
          }
          const { type: _type, ...frame } = msg;
          frames.push(frame);
          onFrame?.(frame);
        } else if (msg.type === "complete") {
          settled = true;
          resolve({ frames, transition: msg.transition });
          try {
            ws.close();
          } catch {
            /* server already closed */
          }
        }
      };
    });
  }
}

function fetchOk(url: string, init?: RequestInit): Promise<Response> {
  return fetch(url, init);
}

/** SHA-256 hex digest of a frame list, for determinism checks: the same
 * seed must stream byte-identical payloads. */
export async function framePayloadHash(frames: StreamFrame[]): Promise<string> {
  const bytes = new TextEncoder().encode(JSON.stringify(frames));
  const digest = await crypto.subtle.digest("SHA-256", bytes);
  return Array.from(new Uint8Array(digest))
    .map((b) => b.toString(16).padStart(2, "0"))
    .join("");
}
