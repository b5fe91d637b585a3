/** Client-side mirror of the service's transition-request validation.
 * The generate button is enabled exactly when this returns no errors,
 * so the UI can never submit a request the server would reject. */

import type { KeyframeRef, PathSpec } from "./types";

export const FPS = 30;
export const MIN_DURATION = 1 / FPS;
export const MAX_DURATION = 20;

export interface ControlPanelState {
  start: KeyframeRef | null;
  target: KeyframeRef | null;
  duration: number;
  tau: number;
  path: PathSpec | null;
  style: string | null;
  seed: number;
}

export const initialPanelState: ControlPanelState = {
  start: null,
  target: null,
  duration: 2.0,
  tau: 0.0,
  path: null,
  style: null,
  seed: 0,
};

export interface ValidationIssue {
  field: string;
  message: string;
  /** Warnings do not disable generation. */
  warning?: boolean;
}

export function validatePanel(s: ControlPanelState): ValidationIssue[] {
  const issues: ValidationIssue[] = [];
  if (!s.start) issues.push({ field: "start", message: "pick a start keyframe" });
  if (!s.target) issues.push({ field: "target", message: "pick a target keyframe" });
  if (s.start && s.start.frame < 0)
    issues.push({ field: "start", message: "frame must be >= 0" });
  if (s.target && s.target.frame < 0)
    issues.push({ field: "target", message: "frame must be >= 0" });
  if (!(s.duration >= MIN_DURATION && s.duration <= MAX_DURATION))
    issues.push({
      field: "duration",
      message: `duration must be between ${MIN_DURATION.toFixed(3)} and ${MAX_DURATION} seconds`,
    });
  if (!(s.tau >= 0 && s.tau <= 1))
    issues.push({ field: "tau", message: "trajectory strength must be in [0, 1]" });
  if (s.path !== null && s.path.positions.length < 2)
    issues.push({ field: "path", message: "path needs at least 2 points" });
  if (!Number.isInteger(s.seed))
    issues.push({ field: "seed", message: "seed must be an integer" });
  if (
    s.start &&
    s.target &&
    s.start.clip === s.target.clip &&
    s.start.frame === s.target.frame
  )
    issues.push({
      field: "target",
      message: "near-identical keyframes: start and target are the same pose",
      warning: true,
    });
  return issues;
}

/** True when generation may be submitted (warnings allowed). */
export function canGenerate(s: ControlPanelState): boolean {
  return validatePanel(s).every((i) => i.warning === true);
}

/** Expected frame count shown in the request preview. */
export function previewFrameCount(duration: number): number {
  return Math.ceil(duration * FPS - 1e-9);
}
