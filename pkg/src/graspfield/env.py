"""Planar kinematic grasping environment.

The wrist is driven externally (scripted 50-pose trajectory or a live
stream); the agent controls only the six finger joints.  Contact
resolution is quasi-static: finger motion that would penetrate the
object first tries to push the object along the contact normal (blocked
by the table at y = 0), and otherwise the joint halts at contact.
Episodes end with a squeeze-and-lift success test.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .contacts import (CONTACT_TOL, Contact, detect_contacts, force_closure,
                       segment_closest, segments_closest)
from .geometry import ObjectShape, WristPose, angle_diff
from .hand import HandModel, N_FINGERS, N_JOINTS, finger_fk, forward_kinematics

HORIZON = 50
ACTION_SCALE = 0.05
LIFT_HEIGHT = 1.0
SQUEEZE_RAD = 0.1
SUCCESS_HEIGHT = 0.1
SUCCESS_DISP = 0.05


class ContractViolation(ValueError):
    """An operation was called outside its stated preconditions."""


# ---------------------------------------------------------------------------
# wrist sources


class ScriptedSource:
    """Fixed 50-pose wrist trajectory."""

    live = False

    def __init__(self, poses: list[WristPose]):
        if len(poses) != HORIZON:
            raise ContractViolation(f"scripted source needs exactly {HORIZON} poses, "
                                    f"got {len(poses)}")
        self.poses = list(poses)

    def pose_at(self, t: int) -> WristPose:
        return self.poses[min(t, HORIZON - 1)]


class LiveSource:
    """Single-producer/single-consumer latest-pose channel.

    The server writes poses via :meth:`update`; the environment reads the
    latest at each step.  With no fresh input the last pose is reused.
    """

    live = True

    def __init__(self, initial: WristPose):
        self._latest = initial

    def update(self, pose: WristPose) -> None:
        self._latest = pose

    def pose_at(self, t: int) -> WristPose:
        return self._latest


# ---------------------------------------------------------------------------
# state containers


@dataclass
class LiftOutcome:
    success: bool
    height_gain: float
    rel_displacement: float
    delta_h: float  # object COM height change relative to the episode start


@dataclass
class EnvState:
    wrist: WristPose
    joints: np.ndarray
    object: ObjectShape
    t: int = 0
    accum_trans: float = 0.0
    accum_rot: float = 0.0
    phase: str = "approach"  # approach | lifted | done
    initial_object_pose: np.ndarray = field(default_factory=lambda: np.zeros(3))


def _interp_pose(a: WristPose, b: WristPose, u: float) -> WristPose:
    return WristPose(a.x + u * (b.x - a.x), a.y + u * (b.y - a.y),
                     a.theta + u * angle_diff(b.theta, a.theta))


class Hand2DEnv:
    """One grasping episode; instances are independent and single-writer."""

    def __init__(self, hand: HandModel | None = None, mu: float = 0.5,
                 collisions: bool = True, n_sub: int = 2):
        self.hand = hand if hand is not None else HandModel()
        self.mu = mu
        self.collisions = collisions
        self.n_sub = n_sub
        self.state: EnvState | None = None
        self.source = None
        self._reach = float(np.max(np.abs(self.hand.attach)) +
                            np.max(self.hand.link_len.sum(axis=1)) +
                            self.hand.palm_half_width)

    # -- episode lifecycle ---------------------------------------------------

    def reset(self, obj: ObjectShape, source, init_joints: np.ndarray | None = None) -> EnvState:
        q = np.zeros(N_JOINTS) if init_joints is None else np.asarray(init_joints, float).copy()
        if np.any(q < self.hand.lo - 1e-9) or np.any(q > self.hand.hi + 1e-9):
            raise ContractViolation("initial joints outside limits")
        wrist = source.pose_at(0)
        obj = obj.copy()
        fk = forward_kinematics(self.hand, wrist, q)
        if any(c.depth > CONTACT_TOL for c in detect_contacts(fk, self.hand, obj)):
            raise ContractViolation("invalid initialization: hand intersects object")
        self.source = source
        self.state = EnvState(wrist=wrist, joints=q, object=obj,
                              initial_object_pose=obj.pose.copy())
        self._quiescent = False
        return self.state

    # -- contact resolution helpers -------------------------------------------

    def _object_near(self, wrist: WristPose) -> bool:
        s = self.state
        gap = np.linalg.norm(s.object.position - wrist.position)
        return gap <= self._reach + s.object.char_radius() + 0.02

    def _deepest(self, segs: np.ndarray) -> tuple[float, np.ndarray]:
        """Deepest capsule penetration of the given segments into the object."""
        r_cap = self.hand.finger_thickness / 2.0
        sd, _, n, _ = segments_closest(self.state.object, segs)
        k = int(np.argmin(sd))
        return float(r_cap - sd[k]), n[k]

    def _hand_segments(self, wrist: WristPose, q: np.ndarray) -> np.ndarray:
        """All capsule segments of the hand: six finger links plus the palm."""
        fk = forward_kinematics(self.hand, wrist, q, check_limits=False)
        return np.concatenate([fk.segments.reshape(-1, 2, 2), fk.palm[None]])

    def _link_pen(self, wrist: WristPose, q: np.ndarray, fingers=None) -> tuple[float, np.ndarray]:
        """Deepest capsule penetration over the selected fingers."""
        fingers = range(N_FINGERS) if fingers is None else fingers
        segs = np.concatenate([finger_fk(self.hand, wrist, q, f)
                               for f in fingers])
        return self._deepest(segs)

    def _palm_pen(self, wrist: WristPose) -> tuple[float, np.ndarray]:
        s = self.state
        r_cap = self.hand.finger_thickness / 2.0
        fk = forward_kinematics(self.hand, wrist, s.joints, check_limits=False)
        sd, _, n, _ = segment_closest(s.object, fk.palm[0], fk.palm[1])
        return r_cap - sd, n

    def _push_object(self, depth_fn) -> bool:
        """Push the object out of penetration; False if blocked by the table."""
        s = self.state
        obj = s.object
        for _ in range(8):
            depth, normal = depth_fn()
            if depth <= CONTACT_TOL:
                return True
            push = (depth + 1e-6) * (-normal)
            new_y = obj.pose[1] + push[1]
            rest = obj.rest_height()
            if new_y < rest:
                push[1] = rest - obj.pose[1]  # table blocks the downward part
            before = depth
            obj.pose[0] += push[0]
            obj.pose[1] += push[1]
            after, _ = depth_fn()
            if after >= before - 1e-9:
                return after <= CONTACT_TOL
        depth, _ = depth_fn()
        return depth <= CONTACT_TOL

    def _settle(self, wrist: WristPose, q: np.ndarray) -> None:
        """Drop the object (gravity -y) until it rests on the table or the hand."""
        s = self.state
        obj = s.object
        rest = obj.rest_height()
        drop = obj.pose[1] - rest
        if drop <= 1e-9:
            return

        segs = self._hand_segments(wrist, q)

        def pen_at(y: float) -> float:
            obj.pose[1] = y
            return self._deepest(segs)[0]

        y0 = obj.pose[1]
        if pen_at(rest) <= CONTACT_TOL:
            obj.pose[1] = rest
            return
        lo, hi = rest, y0  # lo penetrates, hi is current (assumed clear)
        for _ in range(12):
            mid = 0.5 * (lo + hi)
            if pen_at(mid) <= CONTACT_TOL:
                hi = mid
            else:
                lo = mid
        obj.pose[1] = hi

    def _resolve_wrist(self, wrist: WristPose, q: np.ndarray) -> None:
        segs = self._hand_segments(wrist, q)
        self._push_object(lambda: self._deepest(segs))
        # wrist motion is forced; residual penetration is allowed

    def _move_joint(self, wrist: WristPose, q: np.ndarray, j: int, target: float) -> bool:
        """Advance joint j toward target with push-then-halt resolution.

        Returns True if the joint reached the target, False if halted.
        """
        f = j // 2
        prev = q[j]
        q[j] = target
        depth_fn = lambda: self._deepest(finger_fk(self.hand, wrist, q, f))
        depth, _ = depth_fn()
        if depth <= CONTACT_TOL:
            return True
        if self._push_object(depth_fn):
            return True
        # push blocked: bisect back to the contact point and halt
        lo, hi = 0.0, 1.0  # fraction of the increment
        for _ in range(12):
            mid = 0.5 * (lo + hi)
            q[j] = prev + mid * (target - prev)
            depth, _ = depth_fn()
            if depth <= CONTACT_TOL:
                lo = mid
            else:
                hi = mid
        q[j] = prev + lo * (target - prev)
        return False

    # -- stepping --------------------------------------------------------------

    def step(self, action: np.ndarray) -> EnvState:
        s = self.state
        if s is None or s.phase != "approach":
            raise ContractViolation("step requires phase == approach")
        if s.t >= HORIZON:
            raise ContractViolation("episode horizon exhausted")
        action = np.asarray(action, dtype=float)
        if action.shape != (N_JOINTS,):
            raise ContractViolation(f"action must have shape ({N_JOINTS},)")

        dq = ACTION_SCALE * np.clip(action, -1.0, 1.0)
        q_target = self.hand.clip_joints(s.joints + dq)
        wrist_new = self.source.pose_at(s.t + 1)
        pose_before = s.object.pose.copy()

        no_op = (np.all(dq == 0.0)
                 and abs(wrist_new.x - s.wrist.x) < 1e-15
                 and abs(wrist_new.y - s.wrist.y) < 1e-15
                 and abs(angle_diff(wrist_new.theta, s.wrist.theta)) < 1e-15)
        if not self.collisions or not (self._object_near(s.wrist) or
                                       self._object_near(wrist_new)):
            s.joints = q_target
            s.wrist = wrist_new
        elif no_op and self._quiescent:
            # a zero command repeated at an equilibrium is a fixed point
            pass
        else:
            q = s.joints.copy()
            halted = np.zeros(N_JOINTS, dtype=bool)
            q_start = q.copy()
            for k in range(1, self.n_sub + 1):
                u = k / self.n_sub
                wrist_k = _interp_pose(s.wrist, wrist_new, u)
                self._resolve_wrist(wrist_k, q)
                for j in range(N_JOINTS):
                    if halted[j]:
                        continue
                    tgt = q_start[j] + u * (q_target[j] - q_start[j])
                    if abs(tgt - q[j]) < 1e-12:
                        continue
                    if not self._move_joint(wrist_k, q, j, tgt):
                        halted[j] = True
                self._settle(wrist_k, q)
            s.joints = q
            s.wrist = wrist_new

        moved = float(np.linalg.norm(s.object.pose[:2] - pose_before[:2]))
        s.accum_trans += moved
        s.accum_rot += abs(angle_diff(s.object.pose[2], pose_before[2]))
        self._quiescent = no_op and moved == 0.0
        s.t += 1
        return s

    # -- terminal protocol -------------------------------------------------------

    def terminal_squeeze_and_lift(self, n_squeeze: int = 5, n_lift: int = 10) -> LiftOutcome:
        s = self.state
        if s is None or s.t != HORIZON or s.phase != "approach":
            raise ContractViolation("terminal test requires t == horizon in approach phase")

        y_pre = float(s.object.pose[1])
        dist_pre = float(np.linalg.norm(s.object.position - s.wrist.position))

        # squeeze: distal joints close by 0.1 rad, contact-halted as in step
        distal = [2 * f + 1 for f in range(N_FINGERS)]
        halted = {j: False for j in distal}
        targets = {j: min(s.joints[j] + SQUEEZE_RAD, self.hand.hi[j]) for j in distal}
        start = {j: s.joints[j] for j in distal}
        q = s.joints
        for k in range(1, n_squeeze + 1):
            u = k / n_squeeze
            for j in distal:
                if halted[j]:
                    continue
                tgt = start[j] + u * (targets[j] - start[j])
                if not self._move_joint(s.wrist, q, j, tgt):
                    halted[j] = True
            self._settle(s.wrist, q)

        fk = forward_kinematics(self.hand, s.wrist, q, check_limits=False)
        cts = detect_contacts(fk, self.hand, s.object)
        closed = force_closure(cts, self.mu, s.object.position,
                               rho=s.object.char_radius())

        # lift: raise the wrist 1 m; a force-closed object rides rigidly
        for _ in range(n_lift):
            dy = LIFT_HEIGHT / n_lift
            s.wrist = WristPose(s.wrist.x, s.wrist.y + dy, s.wrist.theta)
            if closed:
                s.object.pose[1] += dy

        height_gain = float(s.object.pose[1] - y_pre)
        dist_post = float(np.linalg.norm(s.object.position - s.wrist.position))
        rel_disp = abs(dist_post - dist_pre)
        delta_h = float(s.object.pose[1] - s.initial_object_pose[1])
        success = (height_gain > SUCCESS_HEIGHT) and (rel_disp < SUCCESS_DISP)
        s.phase = "lifted" if success else "done"
        return LiftOutcome(success=success, height_gain=height_gain,
                           rel_displacement=rel_disp, delta_h=delta_h)

    # -- observation helpers -------------------------------------------------------

    def contacts(self) -> list[Contact]:
        s = self.state
        fk = forward_kinematics(self.hand, s.wrist, s.joints, check_limits=False)
        return detect_contacts(fk, self.hand, s.object)
