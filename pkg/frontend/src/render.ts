/**
 * Canvas renderer: pure draw calls from a SceneModel.
 *
 * The context is a structural subset of CanvasRenderingContext2D so tests
 * can record draw operations without a DOM. All geometry comes from the
 * last tick_result (server-authoritative); the object boundary cloud is
 * display data supplied by the embedding page (exported from the object
 * library), since the tick_result schema carries only the object pose.
 */

import type { SceneModel } from "./scene.js";

export interface Ctx2D {
  strokeStyle: string | CanvasGradient | CanvasPattern;
  fillStyle: string | CanvasGradient | CanvasPattern;
  lineWidth: number;
  font: string;
  beginPath(): void;
  moveTo(x: number, y: number): void;
  lineTo(x: number, y: number): void;
  arc(x: number, y: number, r: number, a0: number, a1: number): void;
  closePath(): void;
  stroke(): void;
  fill(): void;
  fillRect(x: number, y: number, w: number, h: number): void;
  clearRect(x: number, y: number, w: number, h: number): void;
  fillText(text: string, x: number, y: number): void;
}

/** Fixed world-to-screen map: meters to pixels with a y flip. */
export class ViewTransform {
  constructor(
    public width: number,
    public height: number,
    public scale = 800, // px per meter
    public originX = 0.5, // world origin as a fraction of the canvas
    public originY = 0.75,
  ) {}

  toScreen(wx: number, wy: number): [number, number] {
    return [
      this.width * this.originX + wx * this.scale,
      this.height * this.originY - wy * this.scale,
    ];
  }

  toWorld(sx: number, sy: number): [number, number] {
    return [
      (sx - this.width * this.originX) / this.scale,
      (this.height * this.originY - sy) / this.scale,
    ];
  }
}

export interface RenderOptions {
  /** Object boundary points in the object's local frame. */
  objectCloud?: [number, number][];
}

function drawCircle(ctx: Ctx2D, x: number, y: number, r: number, fill: boolean) {
  ctx.beginPath();
  ctx.arc(x, y, r, 0, 2 * Math.PI);
  if (fill) {
    ctx.fill();
  } else {
    ctx.stroke();
  }
}

export function renderScene(
  ctx: Ctx2D,
  model: SceneModel,
  view: ViewTransform,
  options: RenderOptions = {},
): void {
  ctx.clearRect(0, 0, view.width, view.height);

  // table line at world y = 0
  ctx.strokeStyle = "#444";
  ctx.lineWidth = 2;
  ctx.beginPath();
  const [, ty] = view.toScreen(0, 0);
  ctx.moveTo(0, ty);
  ctx.lineTo(view.width, ty);
  ctx.stroke();

  const tick = model.tick;
  if (!tick) {
    ctx.fillStyle = "#888";
    ctx.fillText(`status: ${model.status}`, 12, 20);
    return;
  }

  // object: boundary cloud transformed by the server-reported pose
  const pose = tick.object_pose;
  const [ox = 0, oy = 0, oth = 0] = pose;
  if (options.objectCloud && options.objectCloud.length > 0) {
    const c = Math.cos(oth);
    const s = Math.sin(oth);
    ctx.strokeStyle = "#2a6";
    ctx.fillStyle = "#2a6";
    ctx.beginPath();
    options.objectCloud.forEach(([px, py], i) => {
      const [sx, sy] = view.toScreen(ox + c * px - s * py, oy + s * px + c * py);
      if (i === 0) {
        ctx.moveTo(sx, sy);
      } else {
        ctx.lineTo(sx, sy);
      }
    });
    ctx.closePath();
    ctx.stroke();
    for (const [px, py] of options.objectCloud) {
      const [sx, sy] = view.toScreen(ox + c * px - s * py, oy + s * px + c * py);
      drawCircle(ctx, sx, sy, 1.5, true);
    }
  } else {
    const [sx, sy] = view.toScreen(ox, oy);
    ctx.strokeStyle = "#2a6";
    drawCircle(ctx, sx, sy, 6, false);
  }

  // hand: fingertip markers
  ctx.fillStyle = "#36c";
  for (const [fx, fy] of tick.fingertips) {
    const [sx, sy] = view.toScreen(fx, fy);
    drawCircle(ctx, sx, sy, 4, true);
  }

  // contact markers
  ctx.fillStyle = "#e33";
  for (const c of tick.contacts) {
    const [sx, sy] = view.toScreen(c.x, c.y);
    drawCircle(ctx, sx, sy, 3, true);
  }

  // per-joint primitive-action overlay: arcs at the fingertips whose
  // radius scales with |a_p| of the finger's two joints
  if (model.showPrimitiveOverlay) {
    ctx.strokeStyle = "#f90";
    tick.fingertips.forEach(([fx, fy], finger) => {
      const [sx, sy] = view.toScreen(fx, fy);
      for (const joint of [2 * finger, 2 * finger + 1]) {
        const mag = Math.abs(tick.a_p[joint] ?? 0);
        if (mag > 0) {
          ctx.beginPath();
          ctx.arc(sx, sy, 6 + 20 * Math.min(mag, 1), 0, Math.PI * mag);
          ctx.stroke();
        }
      }
    });
  }

  // banner for a finished lift
  if (model.lift || tick.phase === "lifted" || tick.phase === "done") {
    const lifted = model.lift?.success ?? tick.phase === "lifted";
    ctx.fillStyle = lifted ? "#2a6" : "#e33";
    ctx.fillRect(0, 0, view.width, 28);
    ctx.fillStyle = "#fff";
    const detail = model.lift
      ? ` height ${model.lift.height_gain.toFixed(2)} m,` +
        ` stability ${model.lift.stability.trans.toFixed(3)} m`
      : "";
    ctx.fillText((lifted ? "grasp succeeded:" : "grasp failed:") + detail, 12, 19);
  }

  if (model.lastError) {
    ctx.fillStyle = "#e33";
    ctx.fillText(`error [${model.lastError.code}]: ${model.lastError.message}`,
      12, view.height - 12);
  }
}
