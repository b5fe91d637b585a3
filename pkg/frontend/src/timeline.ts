/** Scrub-timeline model over a streamed transition: one entry per
 * received frame, with per-frame blend weight (lambda) and foot-contact
 * overlays. Entries only ever come from stream messages — the timeline
 * cannot fabricate frames. */

import type { StreamFrame } from "./types";

export interface TimelineEntry {
  index: number;
  time: number;
  lambda: number;
  contacts: number[];
}

export class Timeline {
  private entries: TimelineEntry[] = [];
  private frames: StreamFrame[] = [];
  private cursor = 0;
  playing = false;

  /** Append a streamed frame. Throws if the index is not the next one:
   * a gap means the stream and the UI have diverged. */
  push(frame: StreamFrame): void {
    if (frame.index !== this.entries.length) {
      throw new Error(
        `out-of-order frame: got index ${frame.index}, expected ${this.entries.length}`,
      );
    }
    this.frames.push(frame);
    this.entries.push({
      index: frame.index,
      time: frame.time,
      lambda: frame.lambda,
      contacts: frame.contacts,
    });
  }

  get length(): number {
    return this.entries.length;
  }

  get scrubIndex(): number {
    return this.cursor;
  }

  /** Move the scrub cursor; clamped to the received range. */
  scrub(index: number): StreamFrame | null {
    if (this.frames.length === 0) return null;
    this.cursor = Math.min(Math.max(Math.round(index), 0), this.frames.length - 1);
    return this.frames[this.cursor];
  }

  frameAt(index: number): StreamFrame | null {
    return this.frames[index] ?? null;
  }

  /** Overlay series for rendering under the scrub bar. */
  lambdaSeries(): number[] {
    return this.entries.map((e) => e.lambda);
  }

  /** One row per foot: contact probability per frame. */
  contactSeries(): number[][] {
    if (this.entries.length === 0) return [];
    const feet = this.entries[0].contacts.length;
    return Array.from({ length: feet }, (_, f) => this.entries.map((e) => e.contacts[f]));
  }

  clear(): void {
    this.entries = [];
    this.frames = [];
    this.cursor = 0;
    this.playing = false;
  }
}
