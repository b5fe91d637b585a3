/** Browser entry point: wires the control panel, viewport, and timeline
 * to the authoring service. All state of record lives server-side; the
 * page only keeps the session id (in the URL hash) across reloads. */

import { ApiClient, ServiceError, framePayloadHash } from "./client";
import { Timeline } from "./timeline";
import { Viewport } from "./scene";
import {
  canGenerate,
  ControlPanelState,
  initialPanelState,
  previewFrameCount,
  validatePanel,
} from "./validation";
import type { ClipInfo, PathSpec, TransitionRequest } from "./types";

const SERVICE_URL = (window as { SERVICE_URL?: string }).SERVICE_URL ?? "http://localhost:8090";

const api = new ApiClient(SERVICE_URL);
const panel: ControlPanelState = { ...initialPanelState };
const timeline = new Timeline();
let viewport: Viewport | null = null;
let clips: ClipInfo[] = [];
let sessionId: string | null = null;
let generating = false;

const $ = <T extends HTMLElement>(id: string) => document.getElementById(id) as T;

function showError(message: string): void {
  $("errors").textContent = message;
}

function refreshValidation(): void {
  const issues = validatePanel(panel);
  $("validation").innerHTML = issues
    .map((i) => `<div class="${i.warning ? "warn" : "error"}">${i.field}: ${i.message}</div>`)
    .join("");
  ($("generate") as HTMLButtonElement).disabled = generating || !canGenerate(panel);
  $("preview").textContent = `${previewFrameCount(panel.duration)} frames at 30 fps`;
}

async function pickKeyframe(which: "start" | "target"): Promise<void> {
  const clip = ($(`${which}-clip`) as HTMLSelectElement).value;
  const frame = Number(($(`${which}-frame`) as HTMLInputElement).value);
  try {
    const pose = await api.getPose(clip, frame);
    panel[which] = { clip, frame };
    if (which === "start") viewport?.setStartPose(pose);
    else viewport?.setTargetPose(pose);
    if (sessionId && panel.start && panel.target) {
      await api.updateSession(sessionId, { keyframes: [panel.start, panel.target] });
    }
    showError("");
  } catch (e) {
    showError(e instanceof ServiceError ? e.detail : String(e));
  }
  refreshValidation();
}

async function applyPreset(): Promise<void> {
  const preset = ($("path-preset") as HTMLSelectElement).value;
  try {
    let path: PathSpec | null = null;
    if (preset !== "none") {
      path = await api.presetPath(preset as "circle" | "square" | "star", {
        scale: Number(($("path-scale") as HTMLInputElement).value),
      });
      if (sessionId) await api.updateSession(sessionId, { path });
    }
    panel.path = path;
    viewport?.setPath(path);
    showError("");
  } catch (e) {
    showError(e instanceof ServiceError ? e.detail : String(e));
  }
  refreshValidation();
}

function renderTimeline(): void {
  const bar = $("timeline");
  const scrub = $("scrub") as HTMLInputElement;
  scrub.max = String(Math.max(timeline.length - 1, 0));
  bar.textContent = `${timeline.length} frames`;
  const lambdas = timeline.lambdaSeries();
  const canvas = $("overlay") as HTMLCanvasElement;
  const ctx = canvas.getContext("2d");
  if (!ctx || lambdas.length === 0) return;
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  ctx.strokeStyle = "#33cc66";
  ctx.beginPath();
  lambdas.forEach((l, i) => {
    const x = (i / (lambdas.length - 1 || 1)) * canvas.width;
    const y = canvas.height - l * canvas.height;
    i === 0 ? ctx.moveTo(x, y) : ctx.lineTo(x, y);
  });
  ctx.stroke();
  const feet = timeline.contactSeries();
  feet.forEach((row, f) => {
    ctx.fillStyle = `hsl(${200 + f * 30} 70% 60%)`;
    row.forEach((c, i) => {
      if (c > 0.5) ctx.fillRect((i / row.length) * canvas.width, 4 + f * 5, 2, 4);
    });
  });
}

async function generate(): Promise<void> {
  if (!sessionId || !panel.start || !panel.target || generating) return;
  generating = true;
  refreshValidation();
  timeline.clear();
  const request: TransitionRequest = {
    start: panel.start,
    target: panel.target,
    duration: panel.duration,
    tau: panel.tau,
    path: panel.path,
    style: panel.style,
    seed: panel.seed,
  };
  try {
    const result = await api.generate(sessionId, request, (frame) => {
      timeline.push(frame);
      viewport?.showStreamedFrame(frame);
      renderTimeline();
    });
    const err = result.transition.end_pose_error;
    $("end-error").textContent =
      `end-pose error: ${err.position_cm.toFixed(2)} cm / ${err.rotation_deg.toFixed(1)} deg`;
    $("hash").textContent = `payload sha256 ${(await framePayloadHash(result.frames)).slice(0, 16)}…`;
    showError("");
  } catch (e) {
    // keep the last good frame on screen and offer a retry
    showError(`${e instanceof Error ? e.message : String(e)} — last good frame kept; retry with Generate`);
  } finally {
    generating = false;
    refreshValidation();
  }
}

async function boot(): Promise<void> {
  clips = await api.listClips();
  for (const which of ["start", "target"] as const) {
    const sel = $(`${which}-clip`) as HTMLSelectElement;
    sel.innerHTML = clips
      .map((c) => `<option value="${c.name}">${c.name} (${c.frames})</option>`)
      .join("");
    sel.onchange = () => void pickKeyframe(which);
    ($(`${which}-frame`) as HTMLInputElement).onchange = () => void pickKeyframe(which);
  }

  const existing = window.location.hash.slice(1);
  if (existing) {
    try {
      sessionId = (await api.getSession(existing)).id;
    } catch {
      sessionId = null;
    }
  }
  if (!sessionId) {
    sessionId = (await api.createSession()).id;
    window.location.hash = sessionId;
  }

  if (clips.length > 0) {
    const canvas = $("viewport") as HTMLCanvasElement;
    const bones = clips[0].bones.length;
    const parents = (window as { SKELETON_PARENTS?: number[] }).SKELETON_PARENTS
      ?? Array.from({ length: bones }, (_, i) => i - 1);
    viewport = new Viewport(canvas, bones, parents);
    const tick = () => {
      viewport?.render();
      requestAnimationFrame(tick);
    };
    tick();
  }

  ($("duration") as HTMLInputElement).oninput = (e) => {
    panel.duration = Number((e.target as HTMLInputElement).value);
    refreshValidation();
  };
  ($("tau") as HTMLInputElement).oninput = (e) => {
    panel.tau = Number((e.target as HTMLInputElement).value);
    refreshValidation();
  };
  ($("seed") as HTMLInputElement).onchange = (e) => {
    panel.seed = Number((e.target as HTMLInputElement).value);
    refreshValidation();
  };
  ($("style") as HTMLSelectElement).onchange = (e) => {
    const v = (e.target as HTMLSelectElement).value;
    panel.style = v === "none" ? null : v;
  };
  ($("path-preset") as HTMLSelectElement).onchange = () => void applyPreset();
  ($("generate") as HTMLButtonElement).onclick = () => void generate();
  ($("scrub") as HTMLInputElement).oninput = (e) => {
    const frame = timeline.scrub(Number((e.target as HTMLInputElement).value));
    if (frame) viewport?.showStreamedFrame(frame);
  };

  refreshValidation();
}

void boot().catch((e) => showError(String(e)));
