/**
 * Pointer/key input to wrist_input messages.
 *
 * Pointer position maps through the view transform to world (x, y);
 * wheel or arrow keys adjust theta. Messages carry a strictly
 * increasing seq and are rate-limited; nothing is emitted while
 * disconnected (the server keeps using the last fresh pose).
 */

import type { WristInputMsg } from "./protocol.js";
import type { ViewTransform } from "./render.js";

export const MAX_INPUT_HZ = 30;
export const THETA_STEP = 0.05; // radians per wheel notch / key press

export class InputMapper {
  private seq = 0;
  private theta = 0;
  private lastEmit = -Infinity;
  connected = false;

  constructor(
    private view: ViewTransform,
    private send: (msg: WristInputMsg) => void,
    private now: () => number = () => performance.now(),
  ) {}

  private emit(x: number, y: number, force: boolean): WristInputMsg | null {
    if (!this.connected) {
      return null; // dropped; status UI shows disconnected
    }
    const t = this.now();
    if (!force && t - this.lastEmit < 1000 / MAX_INPUT_HZ) {
      return null;
    }
    this.lastEmit = t;
    this.seq += 1;
    const msg: WristInputMsg = {
      type: "wrist_input",
      x,
      y,
      theta: this.theta,
      seq: this.seq,
    };
    this.send(msg);
    return msg;
  }

  /** Pointer drag at canvas pixel coordinates. */
  pointerDrag(sx: number, sy: number): WristInputMsg | null {
    const [wx, wy] = this.view.toWorld(sx, sy);
    return this.emit(wx, wy, false);
  }

  /** Wheel or arrow-key rotation; re-emits at the last drag position. */
  rotate(notches: number, sx: number, sy: number): WristInputMsg | null {
    this.theta += notches * THETA_STEP;
    const [wx, wy] = this.view.toWorld(sx, sy);
    return this.emit(wx, wy, true);
  }

  get currentSeq(): number {
    return this.seq;
  }
}
