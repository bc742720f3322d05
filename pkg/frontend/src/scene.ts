/**
 * Scene state: a pure reducer over server messages.
 *
 * The model mirrors what the server last said; there is no client-side
 * physics, so replaying the latest tick_result after a reconnect
 * reproduces the displayed scene exactly.
 */

import type {
  ErrorMsg,
  LiftResultMsg,
  SessionMessage,
  TickResultMsg,
} from "./protocol.js";

export type ConnectionStatus = "disconnected" | "connecting" | "connected";

export interface SceneModel {
  status: ConnectionStatus;
  serverVersion: number | null;
  selectedObject: string | null;
  tick: TickResultMsg | null;
  lift: LiftResultMsg | null;
  lastError: ErrorMsg | null;
  showPrimitiveOverlay: boolean;
}

export function initialScene(): SceneModel {
  return {
    status: "disconnected",
    serverVersion: null,
    selectedObject: null,
    tick: null,
    lift: null,
    lastError: null,
    showPrimitiveOverlay: false,
  };
}

/** Apply one server message; returns a new model, never mutates. */
export function applyMessage(model: SceneModel, msg: SessionMessage): SceneModel {
  switch (msg.type) {
    case "hello":
      return { ...model, serverVersion: msg.version ?? null };
    case "tick_result":
      // a fresh episode (t = 0) clears any previous lift banner
      return {
        ...model,
        tick: msg,
        lift: msg.t === 0 ? null : model.lift,
        lastError: null,
      };
    case "lift_result":
      return { ...model, lift: msg };
    case "error":
      return { ...model, lastError: msg };
    default:
      return model;
  }
}

export function setStatus(model: SceneModel, status: ConnectionStatus): SceneModel {
  return { ...model, status };
}

export function selectObject(model: SceneModel, objectId: string): SceneModel {
  return { ...model, selectedObject: objectId };
}

export function toggleOverlay(model: SceneModel): SceneModel {
  return { ...model, showPrimitiveOverlay: !model.showPrimitiveOverlay };
}

/** Human-readable metric readouts for the side panel. */
export function metricReadouts(model: SceneModel): string[] {
  const out: string[] = [];
  if (model.tick) {
    out.push(`t = ${model.tick.t}`, `phase = ${model.tick.phase}`);
  }
  if (model.lift) {
    out.push(
      `success = ${model.lift.success}`,
      `height gain = ${model.lift.height_gain.toFixed(3)} m`,
      `posture = ${model.lift.posture === null ? "n/a" : model.lift.posture.toFixed(3) + " rad"}`,
      `stability = ${model.lift.stability.trans.toFixed(4)} m / ${model.lift.stability.rot.toFixed(4)}`,
    );
  }
  return out;
}
