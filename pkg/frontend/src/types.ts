/** JSON payload shapes of the authoring service. Field names match the
 * server verbatim; the UI never invents fields of its own. */

export interface KeyframeRef {
  clip: string;
  frame: number;
}

export interface ClipInfo {
  name: string;
  frames: number;
  fps: number;
  bones: string[];
}

export interface PoseResponse {
  clip: string;
  frame: number;
  /** (bones, 3) world-space positions in meters. */
  positions: number[][];
  /** (bones, 4) world-space quaternions (w, x, y, z). */
  rotations: number[][];
  root_position: number[];
  root_facing: number[];
}

export interface PathSpec {
  /** Normalized to [0, 1]. */
  times: number[];
  /** Ground-plane (x, z) samples in meters. */
  positions: number[][];
  /** Unit facing directions per sample. */
  facings: number[][];
  control_points: number[][];
  preset: string | null;
}

export interface PathKeyframe {
  position: [number, number];
  time: number;
  facing?: [number, number];
}

export interface SessionRecord {
  id: string;
  keyframes: KeyframeRef[];
  path: PathSpec | null;
  transitions: string[];
  created_at: number;
  updated_at: number;
}

export interface TransitionRequest {
  start: KeyframeRef;
  target: KeyframeRef;
  /** Seconds; the service accepts [1/30, 20]. */
  duration: number;
  /** Trajectory-control strength in [0, 1]. */
  tau: number;
  path: PathSpec | null;
  style: string | null;
  seed: number;
}

export interface StreamFrame {
  index: number;
  /** Seconds since the transition start. */
  time: number;
  positions: number[][];
  rotations: number[][];
  /** Per-foot contact probabilities. */
  contacts: number[];
  lambda: number;
  phase: number[];
}

export interface TransitionRecord {
  id: string;
  session: string;
  request: TransitionRequest;
  frames: StreamFrame[];
  end_pose_error: { position_cm: number; rotation_deg: number };
  metrics: { frame_count: number; duration: number };
  created_at: number;
}

export type StreamMessage =
  | ({ type: "frame" } & StreamFrame)
  | { type: "complete"; transition: TransitionRecord }
  | { type: "error"; error: string; detail?: string; last_frame_index?: number };
