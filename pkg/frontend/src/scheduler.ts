/**
 * Single-flight frame scheduler.
 *
 * The service renders one frame per request, so the client keeps at most
 * one request outstanding and coalesces pose updates that arrive while a
 * frame is rendering (latest pose wins). While dragging, frames render at
 * a reduced size; once input settles for `settleMs`, one full-resolution
 * frame is requested and the scheduler goes quiet.
 */

import { Frame, RenderRequestBody } from "./api.js";

export interface SchedulerOptions {
  dragSize: number;
  restSize: number;
  settleMs: number;
  send: (req: RenderRequestBody) => Promise<Frame>;
  onFrame: (frame: Frame, req: RenderRequestBody) => void;
  onError: (err: unknown) => void;
  setTimer?: (fn: () => void, ms: number) => unknown;
  clearTimer?: (handle: unknown) => void;
}

interface QueuedRequest {
  pose: number[];
  size: number;
}

export class FrameScheduler {
  private inFlight = false;
  private pending: QueuedRequest | null = null;
  private settleHandle: unknown = null;
  private readonly setTimer: (fn: () => void, ms: number) => unknown;
  private readonly clearTimer: (handle: unknown) => void;
  /** Requests handed to `send` so far (exposed for tests and the overlay). */
  sentCount = 0;

  constructor(private readonly opts: SchedulerOptions) {
    this.setTimer = opts.setTimer ?? ((fn, ms) => setTimeout(fn, ms));
    this.clearTimer = opts.clearTimer ?? ((h) => clearTimeout(h as number));
  }

  /** Pose changed mid-drag: render small, reset the settle countdown. */
  dragging(pose: number[]): void {
    this.cancelSettle();
    this.enqueue({ pose, size: this.opts.dragSize });
  }

  /** Drag released: after a quiet period, render once at full resolution. */
  settle(pose: number[]): void {
    this.cancelSettle();
    this.settleHandle = this.setTimer(() => {
      this.settleHandle = null;
      this.enqueue({ pose, size: this.opts.restSize });
    }, this.opts.settleMs);
  }

  /** Render immediately at full resolution (initial frame). */
  request(pose: number[]): void {
    this.enqueue({ pose, size: this.opts.restSize });
  }

  get busy(): boolean {
    return this.inFlight;
  }

  private cancelSettle(): void {
    if (this.settleHandle !== null) {
      this.clearTimer(this.settleHandle);
      this.settleHandle = null;
    }
  }

  private enqueue(req: QueuedRequest): void {
    this.pending = req; // coalesce: only the latest pose matters
    if (!this.inFlight) {
      this.launch();
    }
  }

  private launch(): void {
    const next = this.pending;
    if (next === null) {
      return;
    }
    this.pending = null;
    this.inFlight = true;
    this.sentCount += 1;
    const body: RenderRequestBody = { pose: next.pose, width: next.size, height: next.size };
    this.opts
      .send(body)
      .then((frame) => this.opts.onFrame(frame, body))
      .catch((err) => this.opts.onError(err))
      .finally(() => {
        this.inFlight = false;
        this.launch(); // drain whatever arrived while rendering
      });
  }
}
