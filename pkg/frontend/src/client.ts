/**
 * Session client: a transport-agnostic wrapper around the wire protocol.
 *
 * The transport delivers raw bytes (TCP in Node tests, a WebSocket
 * byte-stream bridge in the browser); the client frames/deframes
 * messages and exposes session controls as methods.
 */

import {
  FrameDecoder,
  encodeMessage,
  type SessionMessage,
} from "./protocol.js";

export interface Transport {
  send(data: Uint8Array): void;
  onData(handler: (data: Uint8Array) => void): void;
  onClose(handler: () => void): void;
  close(): void;
}

export class SessionClient {
  private decoder = new FrameDecoder();
  private handlers: ((msg: SessionMessage) => void)[] = [];

  constructor(private transport: Transport) {
    transport.onData((data) => {
      for (const msg of this.decoder.feed(data)) {
        for (const h of this.handlers) {
          h(msg);
        }
      }
    });
  }

  onMessage(handler: (msg: SessionMessage) => void): void {
    this.handlers.push(handler);
  }

  send(msg: SessionMessage): void {
    this.transport.send(encodeMessage(msg));
  }

  hello(): void {
    this.send({ type: "hello" });
  }

  loadSession(
    objectId: string,
    opts: {
      gfPath?: string;
      policyPath?: string;
      flags?: Record<string, boolean>;
      lockstep?: boolean;
    } = {},
  ): void {
    this.send({
      type: "load_session",
      object_id: objectId,
      gf_path: opts.gfPath,
      policy_path: opts.policyPath,
      flags: opts.flags,
      lockstep: opts.lockstep,
    });
  }

  triggerLift(): void {
    this.send({ type: "trigger_lift" });
  }

  reset(objectId?: string): void {
    this.send({ type: "reset", object_id: objectId });
  }

  close(): void {
    this.transport.close();
  }
}
