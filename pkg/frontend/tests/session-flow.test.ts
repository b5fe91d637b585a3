/** End-to-end authoring session flow against the real service:
 * create a session, pick two keyframes, select the square path preset,
 * generate 60 frames, and verify the timeline holds 60 gapless entries
 * and that re-running with the same seed streams identical payloads. */

import { describe, it, expect, beforeAll } from "vitest";
import WebSocket from "ws";
import { ApiClient, framePayloadHash, WebSocketLike } from "../src/client";
import { Timeline } from "../src/timeline";
import type { TransitionRequest } from "../src/types";

const wsFactory = (url: string) => new WebSocket(url) as unknown as WebSocketLike;

let api: ApiClient;

beforeAll(() => {
  const base = process.env.SERVICE_URL;
  if (!base) throw new Error("SERVICE_URL not set (global setup failed?)");
  api = new ApiClient(base, wsFactory);
});

describe("authoring session flow", () => {
  it("creates a session, picks keyframes, generates 60 gapless frames on a square path", async () => {
    const session = await api.createSession();
    expect(session.id).toBeTruthy();

    const clips = await api.listClips();
    expect(clips.length).toBeGreaterThan(0);
    const clip = clips[0].name;

    const startPose = await api.getPose(clip, 10);
    const targetPose = await api.getPose(clip, 100);
    expect(startPose.positions.length).toBe(clips[0].bones.length);
    expect(targetPose.positions.length).toBe(clips[0].bones.length);

    const updated = await api.updateSession(session.id, {
      keyframes: [
        { clip, frame: 10 },
        { clip, frame: 100 },
      ],
    });
    expect(updated.keyframes).toHaveLength(2);

    const square = await api.presetPath("square", { scale: 2 });
    expect(square.preset).toBe("square");
    expect(square.control_points.length).toBeGreaterThanOrEqual(4);

    const request: TransitionRequest = {
      start: { clip, frame: 10 },
      target: { clip, frame: 100 },
      duration: 2.0,
      tau: 0.5,
      path: square,
      style: null,
      seed: 7,
    };

    const timeline = new Timeline();
    const streamed: number[] = [];
    const result = await api.generate(session.id, request, (frame) => {
      timeline.push(frame);
      streamed.push(frame.index);
    });

    // 2 s at 30 fps -> exactly 60 frames, and the timeline saw all of them
    expect(result.frames).toHaveLength(60);
    expect(timeline.length).toBe(60);
    expect(streamed).toEqual(Array.from({ length: 60 }, (_, i) => i));

    // every rendered pose corresponds to a received message
    for (let i = 0; i < 60; i++) {
      expect(timeline.frameAt(i)).toEqual(result.frames[i]);
    }

    // blend weight and contact overlays cover the whole timeline
    expect(timeline.lambdaSeries()).toHaveLength(60);
    for (const row of timeline.contactSeries()) expect(row).toHaveLength(60);

    // the transition was persisted and attached to the session
    const after = await api.getSession(session.id);
    expect(after.transitions).toContain(result.transition.id);
    expect(result.transition.end_pose_error.position_cm).toBeGreaterThanOrEqual(0);
  });

  it("streams identical payloads when re-run with the same seed", async () => {
    const session = await api.createSession();
    const clips = await api.listClips();
    const clip = clips[0].name;
    const request: TransitionRequest = {
      start: { clip, frame: 5 },
      target: { clip, frame: 95 },
      duration: 2.0,
      tau: 0.0,
      path: null,
      style: null,
      seed: 42,
    };
    const first = await api.generate(session.id, request);
    const second = await api.generate(session.id, request);
    const h1 = await framePayloadHash(first.frames);
    const h2 = await framePayloadHash(second.frames);
    expect(h1).toBe(h2);
    expect(first.frames).toHaveLength(60);
  });

  it("surfaces service validation errors instead of fabricating frames", async () => {
    const session = await api.createSession();
    const clips = await api.listClips();
    const clip = clips[0].name;
    const bad: TransitionRequest = {
      start: { clip, frame: 5 },
      target: { clip, frame: 95 },
      duration: 99, // above the service maximum
      tau: 0,
      path: null,
      style: null,
      seed: 0,
    };
    await expect(api.generate(session.id, bad)).rejects.toThrow();
  });

  it("rejects unknown clips with an inline not-found error", async () => {
    await expect(api.getPose("no-such-clip", 0)).rejects.toThrow(/unknown clip/);
  });
});
