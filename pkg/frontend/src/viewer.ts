/**
 * DOM wiring: pointer-drag orbit, wheel zoom, frame display, latency
 * overlay and a reconnect banner. All rendering decisions (sample count,
 * termination threshold) stay server-side; the client only chooses pose
 * and resolution preset.
 */

import { fetchMeta, Frame, renderFrame, RenderRequestBody, SceneMeta } from "./api.js";
import { applyDrag, applyZoom, clampOrbit, OrbitState, poseFromOrbit } from "./orbit.js";
import { FrameScheduler } from "./scheduler.js";

export interface ViewerConfig {
  baseUrl: string;
  dragSize?: number;
  restSize?: number;
  settleMs?: number;
}

export class Viewer {
  private orbit!: OrbitState;
  private scheduler!: FrameScheduler;
  private lastBlobUrl: string | null = null;
  private frameTimes: number[] = [];

  constructor(
    private readonly cfg: ViewerConfig,
    private readonly img: HTMLImageElement,
    private readonly overlay: HTMLElement,
    private readonly banner: HTMLElement
  ) {}

  async start(): Promise<void> {
    let meta: SceneMeta;
    try {
      meta = await fetchMeta(this.cfg.baseUrl);
      this.banner.style.display = "none";
    } catch (err) {
      this.showBanner(`service unreachable: ${String(err)} — retrying in 2s`);
      setTimeout(() => void this.start(), 2000);
      return;
    }
    const center = meta.aabb.b_min.map((lo, i) => 0.5 * (lo + meta.aabb.b_max[i]));
    this.orbit = clampOrbit({
      azimuth: 0.6,
      elevation: 0.35,
      radius: meta.suggested_radius,
      lookAt: [center[0], center[1], center[2]],
    });
    this.scheduler = new FrameScheduler({
      dragSize: this.cfg.dragSize ?? 128,
      restSize: this.cfg.restSize ?? 512,
      settleMs: this.cfg.settleMs ?? 150,
      send: (req: RenderRequestBody) => renderFrame(this.cfg.baseUrl, req),
      onFrame: (frame, req) => this.showFrame(frame, req),
      onError: (err) => this.showBanner(String(err)),
    });
    this.bindInput();
    this.scheduler.request(poseFromOrbit(this.orbit));
  }

  private bindInput(): void {
    let dragging = false;
    let lastX = 0;
    let lastY = 0;
    this.img.addEventListener("pointerdown", (ev) => {
      dragging = true;
      lastX = ev.clientX;
      lastY = ev.clientY;
      this.img.setPointerCapture(ev.pointerId);
    });
    this.img.addEventListener("pointermove", (ev) => {
      if (!dragging) return;
      this.orbit = applyDrag(this.orbit, ev.clientX - lastX, ev.clientY - lastY);
      lastX = ev.clientX;
      lastY = ev.clientY;
      this.scheduler.dragging(poseFromOrbit(this.orbit));
    });
    this.img.addEventListener("pointerup", () => {
      dragging = false;
      this.scheduler.settle(poseFromOrbit(this.orbit));
    });
    this.img.addEventListener("wheel", (ev) => {
      ev.preventDefault();
      this.orbit = applyZoom(this.orbit, ev.deltaY);
      this.scheduler.dragging(poseFromOrbit(this.orbit));
      this.scheduler.settle(poseFromOrbit(this.orbit));
    });
  }

  private showFrame(frame: Frame, req: RenderRequestBody): void {
    const url = URL.createObjectURL(frame.blob);
    this.img.src = url;
    if (this.lastBlobUrl) {
      URL.revokeObjectURL(this.lastBlobUrl);
    }
    this.lastBlobUrl = url;
    this.banner.style.display = "none";
    this.frameTimes.push(frame.renderMillis);
    if (this.frameTimes.length > 10) {
      this.frameTimes.shift();
    }
    const avg = this.frameTimes.reduce((a, b) => a + b, 0) / this.frameTimes.length;
    // overlay shows the server's own timing header, not client round-trip
    this.overlay.textContent =
      `${frame.renderMillis.toFixed(1)} ms server | ~${(1000 / avg).toFixed(1)} fps | ` +
      `${req.width}×${req.height} | ${frame.queries} queries`;
  }

  private showBanner(message: string): void {
    this.banner.textContent = message;
    this.banner.style.display = "block";
  }
}
