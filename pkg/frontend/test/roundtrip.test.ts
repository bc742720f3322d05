/**
 * Full-stack round trip against the real Python session server:
 * load a session over TCP, stream wrist input, check tick latency,
 * trigger the lift, and render the result through the scene reducer.
 */

import { spawn, type ChildProcess } from "node:child_process";
import net from "node:net";
import path from "node:path";
import { fileURLToPath } from "node:url";
import { afterAll, beforeAll, describe, expect, it } from "vitest";
import { SessionClient, type Transport } from "../src/client.js";
import { renderScene, ViewTransform } from "../src/render.js";
import {
  applyMessage,
  initialScene,
  metricReadouts,
  type SceneModel,
} from "../src/scene.js";
import type { SessionMessage, TickResultMsg } from "../src/protocol.js";

const HERE = path.dirname(fileURLToPath(import.meta.url));

let proc: ChildProcess;
let socket: net.Socket;
let client: SessionClient;
let gfPath = "";
const inbox: SessionMessage[] = [];
const waiters: ((msg: SessionMessage) => void)[] = [];

function nextMessage(timeoutMs = 10_000): Promise<SessionMessage> {
  const queued = inbox.shift();
  if (queued) return Promise.resolve(queued);
  return new Promise((resolve, reject) => {
    const timer = setTimeout(
      () => reject(new Error("timed out waiting for a server message")),
      timeoutMs,
    );
    waiters.push((msg) => {
      clearTimeout(timer);
      resolve(msg);
    });
  });
}

async function nextOfType<T extends SessionMessage["type"]>(
  type: T,
): Promise<Extract<SessionMessage, { type: T }>> {
  for (;;) {
    const msg = await nextMessage();
    if (msg.type === type) {
      return msg as Extract<SessionMessage, { type: T }>;
    }
  }
}

beforeAll(async () => {
  proc = spawn("python3", [path.join(HERE, "helpers", "serve_once.py")], {
    stdio: ["ignore", "pipe", "inherit"],
  });
  const port = await new Promise<number>((resolve, reject) => {
    let buf = "";
    proc.stdout!.on("data", (chunk: Buffer) => {
      buf += chunk.toString();
      const pm = buf.match(/PORT (\d+)/);
      const gm = buf.match(/GF (\S+)/);
      if (gm) gfPath = gm[1]!;
      if (pm && gm) resolve(Number(pm[1]));
    });
    proc.on("exit", (code) => reject(new Error(`server exited: ${code}`)));
  });

  socket = net.connect(port, "127.0.0.1");
  await new Promise<void>((resolve, reject) => {
    socket.once("connect", resolve);
    socket.once("error", reject);
  });
  const transport: Transport = {
    send: (data) => socket.write(data),
    onData: (handler) => socket.on("data", (d: Buffer) => handler(new Uint8Array(d))),
    onClose: (handler) => socket.on("close", handler),
    close: () => socket.destroy(),
  };
  client = new SessionClient(transport);
  client.onMessage((msg) => {
    const waiter = waiters.shift();
    if (waiter) {
      waiter(msg);
    } else {
      inbox.push(msg);
    }
  });
}, 60_000);

afterAll(() => {
  socket?.destroy();
  proc?.kill();
});

describe("UI round trip against the live server", () => {
  let model: SceneModel = initialScene();
  let lastTick: TickResultMsg | null = null;

  it("completes the hello handshake", async () => {
    client.hello();
    const reply = await nextOfType("hello");
    model = applyMessage(model, reply);
    expect(model.serverVersion).toBe(1);
  });

  it("loads a session and receives the initial scene snapshot", async () => {
    client.loadSession("disc-0", {
      gfPath,
      flags: { no_rl: true },
      lockstep: true,
    });
    const snap = await nextOfType("tick_result");
    model = applyMessage(model, snap);
    expect(snap.t).toBe(0);
    expect(snap.joints).toHaveLength(6);
    expect(snap.fingertips).toHaveLength(3);
  });

  it("streams wrist input with sub-100ms median tick latency", async () => {
    const latencies: number[] = [];
    for (let i = 0; i < 20; i++) {
      const t0 = performance.now();
      client.send({
        type: "wrist_input",
        seq: i + 1,
        x: -0.14 + 0.002 * i,
        y: 0.05,
        theta: 0.0,
      });
      const tick = await nextOfType("tick_result");
      latencies.push(performance.now() - t0);
      model = applyMessage(model, tick);
      lastTick = tick;
      expect(tick.t).toBe(i + 1);
    }
    const sorted = [...latencies].sort((a, b) => a - b);
    const median = sorted[Math.floor(sorted.length / 2)]!;
    expect(median).toBeLessThan(100);
  }, 30_000);

  it("renders lift results with success, height, posture, and stability", async () => {
    client.triggerLift();
    const lift = await nextOfType("lift_result");
    model = applyMessage(model, lift);
    expect(typeof lift.success).toBe("boolean");
    expect(typeof lift.height_gain).toBe("number");
    expect(lift.posture === null || typeof lift.posture === "number").toBe(true);
    expect(typeof lift.stability.trans).toBe("number");
    expect(typeof lift.stability.rot).toBe("number");

    const lines = metricReadouts(model);
    expect(lines.some((l) => l.startsWith("success = "))).toBe(true);
    expect(lines.some((l) => l.startsWith("height gain = "))).toBe(true);
    expect(lines.some((l) => l.startsWith("posture = "))).toBe(true);
    expect(lines.some((l) => l.startsWith("stability = "))).toBe(true);

    // the banner draws from server state only
    const texts: string[] = [];
    const ctx = {
      strokeStyle: "",
      fillStyle: "",
      lineWidth: 1,
      font: "",
      beginPath() {},
      moveTo() {},
      lineTo() {},
      arc() {},
      closePath() {},
      stroke() {},
      fill() {},
      fillRect() {},
      clearRect() {},
      fillText(text: string) {
        texts.push(text);
      },
    };
    expect(lastTick).not.toBeNull();
    renderScene(ctx, model, new ViewTransform(800, 600));
    expect(texts.some((t) => t.startsWith("grasp "))).toBe(true);
  }, 30_000);
});
