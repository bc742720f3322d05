"""Synthetic wrist trajectories that end at a target grasp pose.

A trajectory is built from a normalized progress pattern (one curve per
channel: x, y, theta), an initial pose sampled behind the grasp along the
approach axis, and the grasp pose itself as the terminal pose.  Patterns
come from a small synthetic library (minimum-jerk profiles, asymmetric
s-curves and perturbed variants) and two library patterns are blended with
a random convex coefficient to vary the motion style.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.stats import truncnorm

from .env import HORIZON
from .geometry import WristPose, angle_diff, rot2, wrap_angle

N_CHANNELS = 3

STANDOFF_RANGE = (0.15, 0.20)
DEVIATION_MAX = np.deg2rad(20.0)

# rotation-change draw for the initial orientation: truncated normal on
# [0, pi/2], mean 0.5 rad, sd 0.3
ROT_CHANGE_MEAN = 0.5
ROT_CHANGE_SD = 0.3
ROT_CHANGE_MAX = np.pi / 2


@dataclass
class TrajectoryPattern:
    """Normalized progress curves, one per wrist channel.

    samples[k, c] gives the fraction of total channel-c displacement
    reached at step k.  Every channel starts at 0 and ends at 1, and all
    values stay inside [0, 1].
    """

    samples: np.ndarray

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=float)
        if self.samples.shape != (HORIZON, N_CHANNELS):
            raise ValueError(f"pattern must be {HORIZON}x{N_CHANNELS}, "
                             f"got {self.samples.shape}")
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("pattern contains non-finite values")
        if np.any(self.samples < -1e-12) or np.any(self.samples > 1 + 1e-12):
            raise ValueError("pattern values must lie in [0, 1]")
        if not (np.allclose(self.samples[0], 0.0, atol=1e-12)
                and np.allclose(self.samples[-1], 1.0, atol=1e-12)):
            raise ValueError("pattern must start at 0 and end at 1")
        self.samples = np.clip(self.samples, 0.0, 1.0)


@dataclass
class WristTrajectory:
    """A fixed-length pose sequence ending at the target grasp's wrist."""

    poses: list
    target: object = None

    def __post_init__(self):
        if len(self.poses) != HORIZON:
            raise ValueError(f"trajectory must hold {HORIZON} poses")
        if self.target is not None:
            final, tgt = self.poses[-1], self.target.wrist
            ok = (abs(final.x - tgt.x) < 1e-9 and abs(final.y - tgt.y) < 1e-9
                  and abs(angle_diff(final.theta, tgt.theta)) < 1e-9)
            if not ok:
                raise ValueError("trajectory does not end at the target wrist pose")


def sample_initial_wrist(target, rng: np.random.Generator) -> WristPose:
    """Sample a start pose behind the grasp along the approach axis.

    The start sits at distance d in [0.15, 0.2] m from the target wrist
    along the fingertip-centroid-to-wrist direction, rotated off-axis by a
    deviation angle uniform in [0, 20] degrees.  The start orientation is
    theta_target * (1 - da / 2pi) for a rotation change da drawn from the
    truncated normal above.
    """
    wrist = target.wrist
    centroid = np.asarray(target.fingertip_centroid, dtype=float)
    axis = wrist.position - centroid
    norm = np.linalg.norm(axis)
    if norm < 1e-9:
        raise ValueError("degenerate target: fingertip centroid coincides with wrist")
    axis = axis / norm

    d = rng.uniform(*STANDOFF_RANGE)
    dev = rng.uniform(-DEVIATION_MAX, DEVIATION_MAX)
    pos = wrist.position + d * (rot2(dev) @ axis)

    a, b = (0.0 - ROT_CHANGE_MEAN) / ROT_CHANGE_SD, (ROT_CHANGE_MAX - ROT_CHANGE_MEAN) / ROT_CHANGE_SD
    da = truncnorm.rvs(a, b, loc=ROT_CHANGE_MEAN, scale=ROT_CHANGE_SD, random_state=rng)
    theta0 = wrist.theta * (1.0 - da / (2 * np.pi))
    return WristPose(pos[0], pos[1], theta0)


def blend_patterns(p1: TrajectoryPattern, p2: TrajectoryPattern,
                   c: float) -> TrajectoryPattern:
    """Convex combination c*p1 + (1-c)*p2 of two patterns."""
    if p1.samples.shape != p2.samples.shape:
        raise ValueError("patterns have mismatched shapes")
    if not 0.0 <= c <= 1.0:
        raise ValueError("blend coefficient must lie in [0, 1]")
    return TrajectoryPattern(c * p1.samples + (1.0 - c) * p2.samples)


def generate_trajectory(init: WristPose, final: WristPose,
                        pattern: TrajectoryPattern) -> WristTrajectory:
    """Interpolate init -> final per channel along the pattern curves.

    Orientation follows the shorter angular arc between the two headings.
    """
    dx = final.x - init.x
    dy = final.y - init.y
    dth = angle_diff(final.theta, init.theta)
    poses = []
    for k in range(HORIZON):
        sx, sy, st = pattern.samples[k]
        poses.append(WristPose(init.x + sx * dx, init.y + sy * dy,
                               wrap_angle(init.theta + st * dth)))
    return WristTrajectory(poses=poses)


# -- pattern library --------------------------------------------------------------

def _minjerk(u):
    return 10 * u**3 - 15 * u**4 + 6 * u**5


def _smoothstep(u):
    return 3 * u**2 - 2 * u**3


_BASE_PROFILES = [
    _minjerk,
    _smoothstep,
    lambda u: u,                      # uniform
    lambda u: u**0.5,                 # early-fast, late-slow
    lambda u: u**2,                   # late-fast s-tail
    lambda u: u**3,
    lambda u: np.sin(u * np.pi / 2),  # sinusoidal ease-out
    lambda u: 1 - np.cos(u * np.pi / 2),
]


def _perturb(curve: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    # smooth bump that vanishes at both endpoints, small enough to keep
    # the curve inside [0, 1]
    u = np.linspace(0.0, 1.0, HORIZON)
    k = rng.integers(1, 4)
    amp = rng.uniform(-0.05, 0.05)
    phase = rng.uniform(0, 2 * np.pi)
    bump = amp * np.sin(np.pi * u * k + phase) * np.sin(np.pi * u)
    out = np.clip(curve + bump, 0.0, 1.0)
    out[0], out[-1] = 0.0, 1.0
    return out


def make_pattern_library(n: int, rng: np.random.Generator) -> list:
    """Build n distinct normalized patterns; deterministic given the rng."""
    if n < 2:
        raise ValueError("pattern library needs at least 2 patterns for blending")
    u = np.linspace(0.0, 1.0, HORIZON)
    patterns = []
    guard = 0
    while len(patterns) < n:
        guard += 1
        if guard > 100 * n:
            raise RuntimeError("pattern sampling failed to produce distinct curves")
        cols = []
        for _ in range(N_CHANNELS):
            base = _BASE_PROFILES[rng.integers(len(_BASE_PROFILES))](u)
            if len(patterns) >= len(_BASE_PROFILES) or rng.uniform() < 0.5:
                base = _perturb(base, rng)
            cols.append(base)
        cand = np.column_stack(cols)
        cand[0], cand[-1] = 0.0, 1.0
        if all(np.max(np.abs(cand - p.samples)) > 1e-6 for p in patterns):
            patterns.append(TrajectoryPattern(cand))
    return patterns


def split_pattern_library(patterns: list, n_test: int):
    """Deterministic disjoint train/test split: last n_test go to test."""
    if not 0 < n_test < len(patterns):
        raise ValueError("n_test must leave at least one pattern on each side")
    return patterns[:-n_test], patterns[-n_test:]


PATTERN_MAGIC = "graspfield-patterns v1"


def save_pattern_library(path, patterns: list, n_train: int | None = None):
    if n_train is None:
        n_train = len(patterns)
    with open(path, "w") as fh:
        fh.write(f"{PATTERN_MAGIC} count={len(patterns)} train={n_train}\n")
        for i, p in enumerate(patterns):
            fh.write(f"pattern {i}\n")
            for row in p.samples:
                fh.write(" ".join(f"{v:.17g}" for v in row) + "\n")


def load_pattern_library(path):
    """Returns (patterns, n_train)."""
    with open(path) as fh:
        header = fh.readline().strip()
        parts = header.split()
        if " ".join(parts[:2]) != PATTERN_MAGIC:
            raise ValueError(f"bad pattern library header: {header!r}")
        meta = dict(kv.split("=") for kv in parts[2:])
        count, n_train = int(meta["count"]), int(meta["train"])
        patterns = []
        for i in range(count):
            tag = fh.readline().strip()
            if tag != f"pattern {i}":
                raise ValueError(f"bad pattern block tag: {tag!r}")
            rows = [[float(v) for v in fh.readline().split()] for _ in range(HORIZON)]
            patterns.append(TrajectoryPattern(np.array(rows)))
    return patterns, n_train


def sample_trajectory(target, patterns: list,
                      rng: np.random.Generator) -> WristTrajectory:
    """Sample a full approach trajectory toward a grasp example.

    Picks two distinct library patterns, blends them with a uniform
    coefficient, and interpolates from a sampled initial pose to the
    grasp's wrist pose.
    """
    i, j = rng.choice(len(patterns), size=2, replace=False)
    blended = blend_patterns(patterns[i], patterns[j], rng.uniform(0.0, 1.0))
    init = sample_initial_wrist(target, rng)
    traj = generate_trajectory(init, target.wrist, blended)
    traj.target = target
    return traj
