/**
 * Browser entry point.
 *
 * Connects to the session server through a WebSocket-to-TCP byte bridge
 * (e.g. `websocat --binary ws-l:127.0.0.1:7482 tcp:127.0.0.1:7481`),
 * renders the scene on animation frames, and maps pointer/wheel input to
 * wrist poses. Address and object are configurable via query parameters:
 * `?server=ws://host:port&object=circle_01`.
 */

import { SessionClient, type Transport } from "./client.js";
import { InputMapper } from "./input.js";
import { renderScene, ViewTransform } from "./render.js";
import {
  applyMessage,
  initialScene,
  selectObject,
  setStatus,
  toggleOverlay,
  type SceneModel,
} from "./scene.js";

function webSocketTransport(url: string): Transport {
  const ws = new WebSocket(url);
  ws.binaryType = "arraybuffer";
  return {
    send: (data) => ws.send(data),
    onData: (handler) => {
      ws.onmessage = (ev) => handler(new Uint8Array(ev.data as ArrayBuffer));
    },
    onClose: (handler) => {
      ws.onclose = () => handler();
    },
    close: () => ws.close(),
  };
}

export function start(canvas: HTMLCanvasElement): void {
  const params = new URLSearchParams(window.location.search);
  const server = params.get("server") ?? "ws://127.0.0.1:7482";
  const objectId = params.get("object") ?? "circle_01";

  let model: SceneModel = setStatus(initialScene(), "connecting");
  model = selectObject(model, objectId);

  const view = new ViewTransform(canvas.width, canvas.height);
  const transport = webSocketTransport(server);
  const client = new SessionClient(transport);
  const input = new InputMapper(view, (msg) => client.send(msg));

  client.onMessage((msg) => {
    model = applyMessage(model, msg);
  });
  transport.onClose(() => {
    model = setStatus(model, "disconnected");
    input.connected = false;
  });

  client.hello();
  client.loadSession(objectId, {
    gfPath: params.get("gf") ?? undefined,
    policyPath: params.get("policy") ?? undefined,
    flags: params.get("policy") ? undefined : { no_rl: true },
  });
  model = setStatus(model, "connected");
  input.connected = true;

  canvas.addEventListener("pointermove", (ev) => {
    if (ev.buttons & 1) {
      input.pointerDrag(ev.offsetX, ev.offsetY);
    }
  });
  canvas.addEventListener("wheel", (ev) => {
    ev.preventDefault();
    input.rotate(Math.sign(ev.deltaY), ev.offsetX, ev.offsetY);
  });
  window.addEventListener("keydown", (ev) => {
    if (ev.key === "l") client.triggerLift();
    if (ev.key === "r") client.reset();
    if (ev.key === "o") model = toggleOverlay(model);
  });

  const ctx = canvas.getContext("2d");
  if (!ctx) throw new Error("2d canvas context unavailable");
  const frame = () => {
    renderScene(ctx, model, view);
    requestAnimationFrame(frame);
  };
  requestAnimationFrame(frame);
}
