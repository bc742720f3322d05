"""Interactive grasping session server.

A single UI client connects over TCP and streams wrist poses while the
trained policy closes the fingers.  Wire format: length-prefixed JSON
records, ``b"<byte length>\\n<json object>"``, each object carrying a
``type`` tag.  The server ticks the physics at a fixed rate using the
latest wrist input; a lockstep mode (one tick per wrist_input, used by
scripted clients and tests) makes live sessions exactly reproduce batch
rollouts of the same pose sequence.
"""

from __future__ import annotations

import json
import select
import socket
import time
from dataclasses import dataclass

import numpy as np

from .contacts import detect_contacts
from .env import HORIZON, Hand2DEnv, LiveSource
from .evaluate import ActionDriver, PolicyBundle
from .geometry import WristPose, build_object_library
from .hand import HandModel, forward_kinematics
from .residual import AblationFlags, ResidualPolicy
from .scorefield import ScoreModel

PROTOCOL_VERSION = 1
MAX_MESSAGE_BYTES = 1 << 16


class ProtocolError(ValueError):
    def __init__(self, code: str, message: str):
        super().__init__(message)
        self.code = code


def encode_message(msg: dict) -> bytes:
    payload = json.dumps(msg, separators=(",", ":")).encode()
    return b"%d\n%s" % (len(payload), payload)


class MessageReader:
    """Incremental decoder for length-prefixed JSON records."""

    def __init__(self):
        self._buf = b""

    def feed(self, data: bytes) -> list[dict]:
        self._buf += data
        out = []
        while True:
            nl = self._buf.find(b"\n")
            if nl < 0:
                if len(self._buf) > 32:
                    raise ProtocolError("bad-frame", "length prefix missing")
                return out
            try:
                n = int(self._buf[:nl])
            except ValueError:
                raise ProtocolError("bad-frame",
                                    f"bad length prefix {self._buf[:nl]!r}") from None
            if not 0 <= n <= MAX_MESSAGE_BYTES:
                raise ProtocolError("bad-frame", f"length {n} out of range")
            if len(self._buf) < nl + 1 + n:
                return out
            raw = self._buf[nl + 1:nl + 1 + n]
            self._buf = self._buf[nl + 1 + n:]
            try:
                msg = json.loads(raw)
            except json.JSONDecodeError as e:
                raise ProtocolError("bad-json", str(e)) from None
            if not isinstance(msg, dict) or "type" not in msg:
                raise ProtocolError("bad-message", "record must be a tagged object")
            out.append(msg)


def error_message(code: str, message: str) -> dict:
    return {"type": "error", "code": code, "message": message}


# -- session ----------------------------------------------------------------------


@dataclass
class SessionConfig:
    tick_hz: float = 20.0
    start_offset: tuple = (-0.16, 0.05, 0.0)  # wrist start relative to the object


class Session:
    """One loaded episode: environment, policy driver, sequence tracking."""

    def __init__(self, obj, bundle: PolicyBundle, hand: HandModel,
                 lockstep: bool, examples: list | None,
                 cfg: SessionConfig):
        self.hand = hand
        self.bundle = bundle
        self.lockstep = lockstep
        self.examples = examples or []
        self.cfg = cfg
        self.object_template = obj
        self.last_seq = -1
        self._start()

    def _start(self):
        obj = self.object_template.copy()
        dx, dy, dth = self.cfg.start_offset
        start = WristPose(obj.pose[0] + dx, obj.pose[1] + dy, dth)
        self.env = Hand2DEnv(self.hand,
                             collisions=not self.bundle.flags.no_collision)
        self.source = LiveSource(start)
        self.env.reset(obj, self.source)
        self.driver = ActionDriver(self.bundle, self.hand, start)
        self.pending_input = False
        self.last_actions = (np.zeros(6), np.zeros(6), np.zeros(6))
        self.lift_outcome = None

    def reset(self, obj=None):
        if obj is not None:
            self.object_template = obj
        self.last_seq = -1
        self._start()

    def wrist_input(self, msg: dict) -> bool:
        try:
            seq = int(msg["seq"])
            pose = WristPose(float(msg["x"]), float(msg["y"]),
                             float(msg["theta"]))
        except (KeyError, TypeError, ValueError) as e:
            raise ProtocolError("bad-wrist", f"wrist_input: {e}") from None
        if seq <= self.last_seq:
            return False  # stale input, tick keeps the last fresh pose
        self.last_seq = seq
        self.source.update(pose)
        self.pending_input = True
        return True

    @property
    def phase(self) -> str:
        st = self.env.state
        if self.lift_outcome is not None:
            return st.phase  # lifted | done
        return "approach" if st.t < HORIZON else "hold"

    def can_tick(self) -> bool:
        if self.phase != "approach":
            return False
        return self.pending_input or not self.lockstep

    def tick(self) -> dict:
        st = self.env.state
        act, a_p, a_s, a_r = self.driver.compute(st, st.wrist)
        st = self.env.step(act)
        self.pending_input = False
        self.last_actions = (a_p, a_s, a_r)
        return self.tick_result()

    def tick_result(self) -> dict:
        st = self.env.state
        fk = forward_kinematics(self.hand, st.wrist, st.joints,
                                check_limits=False)
        cts = detect_contacts(fk, self.hand, st.object)
        a_p, a_s, a_r = self.last_actions
        return {
            "type": "tick_result",
            "t": st.t,
            "joints": list(st.joints),
            "fingertips": [list(p) for p in fk.fingertips],
            "object_pose": list(st.object.pose),
            "contacts": [{"x": float(c.point[0]), "y": float(c.point[1]),
                          "link": list(c.link_id)} for c in cts],
            "phase": self.phase,
            "a_p": list(a_p),
            "a_s": list(a_s),
            "a_r": list(a_r),
        }

    def trigger_lift(self) -> dict:
        if self.lift_outcome is not None:
            raise ProtocolError("bad-phase", "episode already lifted")
        # hold the wrist and let the policy finish any remaining approach
        # steps, then run the squeeze-and-lift test
        while self.env.state.t < HORIZON:
            st = self.env.state
            act, a_p, a_s, a_r = self.driver.compute(st, st.wrist)
            self.env.step(act)
            self.last_actions = (a_p, a_s, a_r)
        st = self.env.state
        p0, pT = st.initial_object_pose, st.object.pose
        trans = float(np.linalg.norm(pT[:2] - p0[:2]))
        rot = float(1.0 - np.cos(pT[2] - p0[2]))
        posture = None
        mine = [e for e in self.examples
                if e.object_id == self.object_template.id]
        if mine:
            posture = min(float(np.linalg.norm(st.joints - e.joints))
                          for e in mine)
        outcome = self.env.terminal_squeeze_and_lift()
        self.lift_outcome = outcome
        return {"type": "lift_result",
                "success": bool(outcome.success),
                "height_gain": float(outcome.height_gain),
                "posture": posture,
                "stability": {"trans": trans, "rot": rot}}


# -- server loop ------------------------------------------------------------------


class SessionServer:
    """Single-client TCP server; one event loop for messages and physics."""

    def __init__(self, host: str = "127.0.0.1", port: int = 0,
                 tick_hz: float = 20.0, hand: HandModel | None = None,
                 objects: dict | None = None, examples: list | None = None):
        self.hand = hand or HandModel()
        if objects is None:
            objects = {o.id: o.rest_on_table(x=0.0)
                       for o in build_object_library()}
        self.objects = objects
        self.examples = examples or []
        self.cfg = SessionConfig(tick_hz=tick_hz)
        self._listener = socket.create_server((host, port))
        self.address = self._listener.getsockname()
        self.session: Session | None = None
        self._stop = False

    def close(self):
        self._stop = True
        self._listener.close()

    # -- message handling ------------------------------------------------------

    def _load_session(self, msg: dict) -> dict:
        oid = msg.get("object_id")
        if oid not in self.objects:
            raise ProtocolError("unknown-object", f"no such object: {oid!r}")
        try:
            flags = AblationFlags(**msg.get("flags", {}))
        except (TypeError, ValueError) as e:
            raise ProtocolError("bad-flags", str(e)) from None
        try:
            gf = None
            if not flags.no_gf:
                gf = ScoreModel.load(msg["gf_path"])
            policy = None
            if not flags.no_rl:
                policy, ck_flags = ResidualPolicy.load(msg["policy_path"])
                flags = ck_flags if msg.get("flags") is None else flags
        except (KeyError, OSError, ValueError) as e:
            raise ProtocolError("bad-checkpoint", str(e)) from None
        bundle = PolicyBundle(gf, policy, flags)
        self.session = Session(self.objects[oid], bundle, self.hand,
                               bool(msg.get("lockstep", False)),
                               self.examples, self.cfg)
        return self.session.tick_result()

    def handle_message(self, msg: dict) -> list[dict]:
        kind = msg.get("type")
        if kind == "hello":
            return [{"type": "hello", "version": PROTOCOL_VERSION}]
        if kind == "load_session":
            return [self._load_session(msg)]
        if self.session is None:
            raise ProtocolError("no-session", "load_session first")
        if kind == "wrist_input":
            fresh = self.session.wrist_input(msg)
            if fresh and self.session.lockstep and self.session.can_tick():
                return [self.session.tick()]
            return []
        if kind == "trigger_lift":
            return [self.session.trigger_lift()]
        if kind == "reset":
            oid = msg.get("object_id")
            obj = None
            if oid is not None:
                if oid not in self.objects:
                    raise ProtocolError("unknown-object",
                                        f"no such object: {oid!r}")
                obj = self.objects[oid]
            self.session.reset(obj)
            return [self.session.tick_result()]
        raise ProtocolError("unknown-type", f"unknown message type {kind!r}")

    # -- event loop --------------------------------------------------------------

    def _send(self, conn: socket.socket, msg: dict) -> None:
        # best effort: a slow reader drops frames, physics never stalls
        try:
            conn.sendall(encode_message(msg))
        except (BlockingIOError, BrokenPipeError, ConnectionResetError):
            pass

    def serve_one_client(self) -> None:
        """Accept a single client and run its session until disconnect."""
        conn, _ = self._listener.accept()
        conn.setblocking(False)
        reader = MessageReader()
        dt = 1.0 / self.cfg.tick_hz
        next_tick = time.monotonic() + dt
        try:
            while not self._stop:
                timeout = max(0.0, next_tick - time.monotonic())
                ready, _, _ = select.select([conn], [], [], timeout)
                if ready:
                    data = conn.recv(65536)
                    if not data:
                        return  # client gone; tear the session down
                    try:
                        for msg in reader.feed(data):
                            try:
                                for reply in self.handle_message(msg):
                                    self._send(conn, reply)
                            except ProtocolError as e:
                                self._send(conn, error_message(e.code, str(e)))
                    except ProtocolError as e:
                        # framing is unrecoverable mid-stream
                        self._send(conn, error_message(e.code, str(e)))
                        return
                now = time.monotonic()
                if now >= next_tick:
                    next_tick = now + dt
                    s = self.session
                    if s is not None and not s.lockstep and s.can_tick():
                        self._send(conn, s.tick())
        finally:
            conn.close()
            self.session = None


def serve_forever(server: SessionServer) -> None:
    while not server._stop:
        try:
            server.serve_one_client()
        except OSError:
            break
