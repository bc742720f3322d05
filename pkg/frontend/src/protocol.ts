/**
 * Session wire protocol: length-prefixed JSON records.
 *
 * Each record on the socket is `<byte length>\n<json object>` where the
 * object carries a `type` tag. This module owns the message types and
 * the framing codec; it has no I/O of its own.
 */

export interface HelloMsg {
  type: "hello";
  version?: number;
}

export interface LoadSessionMsg {
  type: "load_session";
  object_id: string;
  gf_path?: string;
  policy_path?: string;
  flags?: Record<string, boolean>;
  lockstep?: boolean;
}

export interface WristInputMsg {
  type: "wrist_input";
  x: number;
  y: number;
  theta: number;
  seq: number;
}

export interface ContactInfo {
  x: number;
  y: number;
  link: (string | number)[];
}

export interface TickResultMsg {
  type: "tick_result";
  t: number;
  joints: number[];
  fingertips: [number, number][];
  object_pose: number[];
  contacts: ContactInfo[];
  phase: string;
  a_p: number[];
  a_s: number[];
  a_r: number[];
}

export interface TriggerLiftMsg {
  type: "trigger_lift";
}

export interface LiftResultMsg {
  type: "lift_result";
  success: boolean;
  height_gain: number;
  posture: number | null;
  stability: { trans: number; rot: number };
}

export interface ResetMsg {
  type: "reset";
  object_id?: string;
}

export interface ErrorMsg {
  type: "error";
  code: string;
  message: string;
}

export type SessionMessage =
  | HelloMsg
  | LoadSessionMsg
  | WristInputMsg
  | TickResultMsg
  | TriggerLiftMsg
  | LiftResultMsg
  | ResetMsg
  | ErrorMsg;

export const MAX_MESSAGE_BYTES = 1 << 16;

export class FrameError extends Error {}

/** Encode one message as a length-prefixed frame. */
export function encodeMessage(msg: SessionMessage): Uint8Array {
  const payload = new TextEncoder().encode(JSON.stringify(msg));
  if (payload.length > MAX_MESSAGE_BYTES) {
    throw new FrameError(`message of ${payload.length} bytes exceeds limit`);
  }
  const prefix = new TextEncoder().encode(`${payload.length}\n`);
  const out = new Uint8Array(prefix.length + payload.length);
  out.set(prefix, 0);
  out.set(payload, prefix.length);
  return out;
}

/** Incremental decoder: feed raw socket bytes, get complete messages. */
export class FrameDecoder {
  private buf = new Uint8Array(0);

  feed(data: Uint8Array): SessionMessage[] {
    const joined = new Uint8Array(this.buf.length + data.length);
    joined.set(this.buf, 0);
    joined.set(data, this.buf.length);
    this.buf = joined;

    const out: SessionMessage[] = [];
    for (;;) {
      const nl = this.buf.indexOf(0x0a);
      if (nl < 0) {
        if (this.buf.length > 32) {
          throw new FrameError("length prefix missing");
        }
        return out;
      }
      const prefix = new TextDecoder().decode(this.buf.subarray(0, nl));
      const n = Number(prefix);
      if (!Number.isInteger(n) || n < 0 || n > MAX_MESSAGE_BYTES) {
        throw new FrameError(`bad length prefix ${JSON.stringify(prefix)}`);
      }
      if (this.buf.length < nl + 1 + n) {
        return out;
      }
      const raw = new TextDecoder().decode(this.buf.subarray(nl + 1, nl + 1 + n));
      this.buf = this.buf.subarray(nl + 1 + n);
      let msg: unknown;
      try {
        msg = JSON.parse(raw);
      } catch {
        throw new FrameError(`bad JSON payload: ${raw.slice(0, 40)}`);
      }
      if (typeof msg !== "object" || msg === null || !("type" in msg)) {
        throw new FrameError("record must be a tagged object");
      }
      out.push(msg as SessionMessage);
    }
  }
}
