"""Planar 3-finger hand model and forward kinematics.

The hand points along +x of the wrist frame.  Each finger is a 2-link
chain attached to the palm; positive joint angles curl the finger toward
the palm centerline, so a grasp closes by increasing joint values.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import WristPose, rot2

N_FINGERS = 3
N_JOINTS = 2 * N_FINGERS


@dataclass
class HandModel:
    palm_half_width: float = 0.05
    # palm-frame attachment points, one per finger
    attach: np.ndarray = field(default_factory=lambda: np.array(
        [[0.0, 0.05], [0.0, -0.05], [0.018, -0.05]]))
    # curl side: +1 curls toward -y (finger above centerline), -1 toward +y
    side: np.ndarray = field(default_factory=lambda: np.array([1.0, -1.0, -1.0]))
    link_len: np.ndarray = field(default_factory=lambda: np.array(
        [[0.055, 0.045], [0.055, 0.045], [0.050, 0.040]]))
    joint_limits: np.ndarray = field(default_factory=lambda: np.array(
        [[0.0, 2.0]] * N_JOINTS))
    finger_thickness: float = 0.008

    def __post_init__(self):
        self.attach = np.asarray(self.attach, dtype=float)
        self.side = np.asarray(self.side, dtype=float)
        self.link_len = np.asarray(self.link_len, dtype=float)
        self.joint_limits = np.asarray(self.joint_limits, dtype=float)
        if np.any(self.link_len <= 0) or self.palm_half_width <= 0 \
                or self.finger_thickness <= 0:
            raise ValueError("hand lengths must be > 0")
        if np.any(self.joint_limits[:, 0] >= self.joint_limits[:, 1]):
            raise ValueError("joint limits must satisfy lo < hi")

    @property
    def lo(self) -> np.ndarray:
        return self.joint_limits[:, 0]

    @property
    def hi(self) -> np.ndarray:
        return self.joint_limits[:, 1]

    def max_aperture(self) -> float:
        """Open-hand fingertip gap across the centerline."""
        return float(self.attach[0, 1] - self.attach[1, 1])

    def clip_joints(self, q: np.ndarray) -> np.ndarray:
        return np.clip(q, self.lo, self.hi)

    def normalize_joints(self, q: np.ndarray) -> np.ndarray:
        """Affine map of raw joint values onto [-1, 1] against the limits."""
        return 2.0 * (np.asarray(q) - self.lo) / (self.hi - self.lo) - 1.0

    def denormalize_joints(self, n: np.ndarray) -> np.ndarray:
        return self.lo + (np.asarray(n) + 1.0) * 0.5 * (self.hi - self.lo)

    def hash_string(self) -> str:
        import hashlib
        payload = np.concatenate([
            [self.palm_half_width, self.finger_thickness],
            self.attach.ravel(), self.side, self.link_len.ravel(),
            self.joint_limits.ravel()])
        return hashlib.sha256(payload.tobytes()).hexdigest()[:12]


@dataclass
class FkResult:
    """World-frame kinematics: per-finger link segments and tips.

    ``segments[f, l]`` is a (2, 2) array of the two endpoints of link l
    of finger f; ``palm`` is the palm segment.
    """

    segments: np.ndarray   # (3, 2, 2, 2)
    fingertips: np.ndarray  # (3, 2)
    palm: np.ndarray        # (2, 2)


def finger_fk(hand: HandModel, wrist: WristPose, q: np.ndarray, f: int) -> np.ndarray:
    """Segments of one finger: (2, 2, 2) array [(link, endpoint, xy)]."""
    R = rot2(wrist.theta)
    p = wrist.position + R @ hand.attach[f]
    s = hand.side[f]
    a1 = wrist.theta - s * q[2 * f]
    a2 = a1 - s * q[2 * f + 1]
    j1 = p + hand.link_len[f, 0] * np.array([np.cos(a1), np.sin(a1)])
    tip = j1 + hand.link_len[f, 1] * np.array([np.cos(a2), np.sin(a2)])
    return np.array([[p, j1], [j1, tip]])


def forward_kinematics(hand: HandModel, wrist: WristPose, q: np.ndarray,
                       check_limits: bool = True) -> FkResult:
    """Compute all link segments and fingertips in world coordinates."""
    q = np.asarray(q, dtype=float)
    if q.shape != (N_JOINTS,):
        raise ValueError(f"expected {N_JOINTS} joints, got shape {q.shape}")
    if check_limits and (np.any(q < hand.lo - 1e-9) or np.any(q > hand.hi + 1e-9)):
        raise ValueError("joints outside limits")
    segs = np.array([finger_fk(hand, wrist, q, f) for f in range(N_FINGERS)])
    tips = segs[:, 1, 1, :]
    R = rot2(wrist.theta)
    palm = np.array([wrist.position + R @ np.array([0.0, -hand.palm_half_width]),
                     wrist.position + R @ np.array([0.0, hand.palm_half_width])])
    return FkResult(segments=segs, fingertips=tips, palm=palm)


def fingertip_centroid(hand: HandModel, wrist: WristPose, q: np.ndarray) -> np.ndarray:
    fk = forward_kinematics(hand, wrist, q, check_limits=False)
    return fk.fingertips.mean(axis=0)
