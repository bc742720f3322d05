"""Verified grasp example synthesis, filtering, storage and splitting.

A grasp example is a (wrist pose, joint vector) pair for a named object
that, when replayed in the planar environment and followed by the terminal
squeeze-and-lift test, lifts the object.  Examples are found by rejection
sampling: propose a wrist pose on a ring around the object, close each
finger kinematically until first touch, perturb, then keep only candidates
that verify in the environment (each survivor is replayed twice).

Dataset files are plain text: a header line carrying a magic string, a
format version and the hand-model hash, then one example per line with
fields object_id, wrist x/y/theta, six joint angles, closure quality and
split tag (the fingertip centroid is recomputed from kinematics on load), numbers at 17 significant digits.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from .contacts import CONTACT_TOL, closure_margin, detect_contacts, sdf_points
from .env import HORIZON, ContractViolation, Hand2DEnv, ScriptedSource
from .geometry import ObjectShape, WristPose
from .hand import N_FINGERS, N_JOINTS, HandModel, forward_kinematics

DEDUP_DIST = 0.1  # joint-space L2 distance below which two grasps are duplicates

SPLIT_TAGS = ("train", "seen-cat-unseen-inst", "unseen-cat")

DATASET_MAGIC = "graspfield-dataset"
DATASET_VERSION = 1


@dataclass(eq=False)
class GraspExample:
    object_id: str
    wrist: WristPose
    joints: np.ndarray
    fingertip_centroid: np.ndarray
    quality: float

    def __post_init__(self):
        self.joints = np.asarray(self.joints, dtype=float)
        self.fingertip_centroid = np.asarray(self.fingertip_centroid, dtype=float)
        if self.joints.shape != (N_JOINTS,):
            raise ValueError("joints must be a 6-vector")


@dataclass
class GraspDataset:
    examples: list
    split_tags: dict = field(default_factory=dict)  # object_id -> tag

    def __post_init__(self):
        for tag in self.split_tags.values():
            if tag not in SPLIT_TAGS:
                raise ValueError(f"unknown split tag {tag!r}")

    def by_tag(self, tag: str) -> list:
        return [e for e in self.examples if self.split_tags.get(e.object_id) == tag]

    def object_ids(self) -> list:
        seen, out = set(), []
        for e in self.examples:
            if e.object_id not in seen:
                seen.add(e.object_id)
                out.append(e.object_id)
        return out


# -- replay verification ------------------------------------------------------------


def replay_example(env: Hand2DEnv, obj: ObjectShape, wrist: WristPose,
                   joints: np.ndarray):
    """Replay a candidate grasp: hold the pose for a full episode, then lift."""
    env.reset(obj.copy(), ScriptedSource([wrist] * HORIZON), init_joints=joints)
    zero = np.zeros(N_JOINTS)
    for _ in range(HORIZON):
        env.step(zero)
    return env.terminal_squeeze_and_lift()


# -- synthesis ----------------------------------------------------------------------


def _point_segment_dist(p: np.ndarray, a: np.ndarray, b: np.ndarray) -> float:
    ab = b - a
    t = np.clip(np.dot(p - a, ab) / max(np.dot(ab, ab), 1e-300), 0.0, 1.0)
    return float(np.linalg.norm(p - (a + t * ab)))


def _segments_cross(a, b, c, d) -> bool:
    def orient(p, q, r):
        return (q[0] - p[0]) * (r[1] - p[1]) - (q[1] - p[1]) * (r[0] - p[0])
    return (orient(a, b, c) * orient(a, b, d) < 0
            and orient(c, d, a) * orient(c, d, b) < 0)


def _segment_distance(obj: ObjectShape, a: np.ndarray, b: np.ndarray) -> float:
    """Exact signed separation between a segment and the object boundary.

    Negative only when the segment actually crosses or sits inside the
    shape (reported as a fixed negative value; only the sign matters to
    the touch search).
    """
    if obj.kind == "circle":
        return _point_segment_dist(obj.position, a, b) - obj.radius
    verts = obj.vertices_world()
    sd, _, _ = sdf_points(obj, np.stack([a, b]))
    best = float(sd.min())
    if best < 0:
        return best
    for i in range(len(verts)):
        if _segments_cross(verts[i], verts[(i + 1) % len(verts)], a, b):
            return -1.0
        best = min(best, _point_segment_dist(verts[i], a, b))
    return best


def _finger_penetration(hand: HandModel, wrist: WristPose, q: np.ndarray,
                        obj: ObjectShape, finger: int) -> float:
    fk = forward_kinematics(hand, wrist, q, check_limits=False)
    pen = -np.inf
    r = hand.finger_thickness / 2
    for link in range(2):
        a, b = fk.segments[finger, link]
        pen = max(pen, r - _segment_distance(obj, a, b))
    return pen


def _scan_penetration(hand: HandModel, wrist: WristPose, q: np.ndarray,
                      obj: ObjectShape, j: int, grid: np.ndarray,
                      samples: int = 25) -> np.ndarray:
    """Approximate finger penetration at each candidate angle for joint j.

    Uses dense boundary sampling of the finger links in a single batched
    signed-distance query; accurate enough for bracketing first touch.
    """
    f = j // 2
    u = np.linspace(0.0, 1.0, samples)
    pts = []
    qs = q.copy()
    for g in grid:
        qs[j] = g
        fk = forward_kinematics(hand, wrist, qs, check_limits=False)
        for link in range(2):
            a, b = fk.segments[f, link]
            pts.append(a + u[:, None] * (b - a))
    sd, _, _ = sdf_points(obj, np.concatenate(pts))
    sd = sd.reshape(len(grid), 2 * samples).min(axis=1)
    return hand.finger_thickness / 2 - sd


def _close_joint_to_touch(hand: HandModel, wrist: WristPose, q: np.ndarray,
                          obj: ObjectShape, j: int, scan: int = 40) -> None:
    """Advance joint j until its finger first touches the object.

    Mutates q in place.  If the finger never reaches the object the joint
    stops at its upper limit.
    """
    f = j // 2
    lo, hi = q[j], hand.hi[j]
    grid = np.linspace(lo, hi, scan)
    pens = _scan_penetration(hand, wrist, q, obj, j, grid)
    # conservative bracket around the approximate first touch
    hit = np.nonzero(pens > -1e-3)[0]
    if hit.size == 0:
        q[j] = hi
        return
    k = int(hit[0])
    clear, touch = grid[max(k - 1, 0)], None
    q[j] = clear
    if _finger_penetration(hand, wrist, q, obj, f) > 0:
        clear, touch = lo, grid[max(k - 1, 0)]
    else:
        for g in grid[k:]:
            q[j] = g
            if _finger_penetration(hand, wrist, q, obj, f) > 0:
                touch = g
                break
            clear = g
    if touch is None:
        q[j] = hi
        return
    for _ in range(24):
        mid = 0.5 * (clear + touch)
        q[j] = mid
        if _finger_penetration(hand, wrist, q, obj, f) > 0:
            touch = mid
        else:
            clear = mid
        if touch - clear < 1e-9:
            break
    q[j] = clear


def close_to_touch(hand: HandModel, wrist: WristPose,
                   obj: ObjectShape) -> np.ndarray:
    """Close all fingers (proximal joint first) until first contact each."""
    q = hand.lo.copy()
    for f in range(N_FINGERS):
        _close_joint_to_touch(hand, wrist, q, obj, 2 * f)
        _close_joint_to_touch(hand, wrist, q, obj, 2 * f + 1)
    return q


def synthesize_grasps(obj: ObjectShape, n_target: int, rng: np.random.Generator,
                      hand: HandModel | None = None, mu: float = 0.5,
                      budget: int = 400) -> list:
    """Rejection-sample up to n_target verified grasp examples for one object.

    Returns fewer (possibly zero) examples if the proposal budget runs out;
    an impossible object simply yields an empty list.
    """
    hand = hand or HandModel()
    if 2 * obj.char_radius() > hand.max_aperture():
        return []
    env = Hand2DEnv(hand, mu=mu)
    kept = []
    for _ in range(budget):
        if len(kept) >= n_target:
            break
        approach = rng.uniform(-0.4, 0.4)
        tilt = rng.uniform(-0.4, 0.4)
        gap = rng.uniform(0.02, 0.09)
        d = np.array([np.cos(approach), np.sin(approach)])
        pos = obj.position - (gap + obj.char_radius()) * d
        wrist = WristPose(pos[0], max(pos[1], 0.005), approach + tilt)

        q = close_to_touch(hand, wrist, obj)
        q = hand.clip_joints(q + rng.normal(0.0, 0.02, N_JOINTS))
        if any(_finger_penetration(hand, wrist, q, obj, f) > CONTACT_TOL
               for f in range(N_FINGERS)):
            continue
        if any(np.linalg.norm(q - e.joints) < DEDUP_DIST for e in kept):
            continue

        # quality and pre-screen: closure margin at the touch configuration,
        # with a tolerance wide enough to span the perturbation
        fk = forward_kinematics(hand, wrist, q, check_limits=False)
        cts = detect_contacts(fk, hand, obj, tol=5e-3)
        if len(cts) < 2:
            continue
        quality = closure_margin(cts, mu, obj.position, rho=obj.char_radius())

        try:
            first = replay_example(env, obj, wrist, q)
            if not first.success:
                continue
            second = replay_example(env, obj, wrist, q)  # verified twice
            if not second.success:
                continue
        except ContractViolation:
            continue

        kept.append(GraspExample(obj.id, wrist, q, fk.fingertips.mean(axis=0),
                                 quality))
    return kept


# -- filtering and splitting ---------------------------------------------------------


def diversity_filter(examples: list, k: int) -> list:
    """Greedy farthest-point selection in joint space, seeded by quality."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if len(examples) <= k:
        return list(examples)
    chosen = [max(range(len(examples)), key=lambda i: examples[i].quality)]
    dists = np.array([np.linalg.norm(e.joints - examples[chosen[0]].joints)
                      for e in examples])
    while len(chosen) < k:
        nxt = int(np.argmax(dists))
        chosen.append(nxt)
        d2 = np.array([np.linalg.norm(e.joints - examples[nxt].joints)
                       for e in examples])
        dists = np.minimum(dists, d2)
    return [examples[i] for i in chosen]


def split_objects(categories: dict, train_frac: float, n_unseen_categories: int,
                  rng: np.random.Generator) -> dict:
    """Assign each object id a split tag.

    Whole categories are held out as ``unseen-cat``; objects in the
    remaining categories are split ``train`` vs ``seen-cat-unseen-inst``.
    """
    cats = sorted(set(categories.values()))
    if len(cats) < 3:
        raise ValueError("splitting requires at least 3 categories")
    if not 1 <= n_unseen_categories <= len(cats) - 2:
        raise ValueError("held-out category count leaves too few seen categories")
    order = list(rng.permutation(cats))
    unseen = set(order[:n_unseen_categories])
    tags = {}
    seen_ids = sorted(oid for oid, c in categories.items() if c not in unseen)
    seen_ids = list(rng.permutation(seen_ids))
    n_train = max(1, int(round(train_frac * len(seen_ids))))
    n_train = min(n_train, len(seen_ids) - 1)
    for i, oid in enumerate(seen_ids):
        tags[oid] = "train" if i < n_train else "seen-cat-unseen-inst"
    for oid, c in categories.items():
        if c in unseen:
            tags[oid] = "unseen-cat"
    return tags


def split_dataset(examples: list, categories: dict, train_frac: float,
                  n_unseen_categories: int, rng: np.random.Generator) -> GraspDataset:
    tags = split_objects(categories, train_frac, n_unseen_categories, rng)
    return GraspDataset(examples=list(examples), split_tags=tags)


# -- storage ------------------------------------------------------------------------


def save_dataset(dataset: GraspDataset, path, hand: HandModel | None = None) -> None:
    hand = hand or HandModel()
    lines = [f"{DATASET_MAGIC} v{DATASET_VERSION} hand={hand.hash_string()} "
             f"count={len(dataset.examples)}"]
    for e in dataset.examples:
        tag = dataset.split_tags.get(e.object_id, "train")
        nums = [e.wrist.x, e.wrist.y, e.wrist.theta, *e.joints, e.quality]
        lines.append(e.object_id + " " + " ".join(f"{v:.17g}" for v in nums)
                     + " " + tag)
    tmp = str(path) + ".tmp"
    with open(tmp, "w") as fh:
        fh.write("\n".join(lines) + "\n")
    os.replace(tmp, path)


def load_dataset(path, hand: HandModel | None = None, verify_objects: dict | None = None,
                 verify_fraction: float = 0.1,
                 rng: np.random.Generator | None = None) -> GraspDataset:
    """Load a dataset file; optionally replay a sample of examples.

    ``verify_objects`` maps object_id to ObjectShape; when given, a random
    fraction of the stored examples is replayed and must still succeed.
    """
    hand = hand or HandModel()
    with open(path) as fh:
        raw = fh.read().splitlines()
    if not raw:
        raise ValueError(f"{path}: empty dataset file")
    head = raw[0].split()
    if len(head) < 4 or head[0] != DATASET_MAGIC:
        raise ValueError(f"{path}:1: bad magic in header: {raw[0]!r}")
    if head[1] != f"v{DATASET_VERSION}":
        raise ValueError(f"{path}:1: unsupported dataset version {head[1]}")
    meta = dict(kv.split("=") for kv in head[2:])
    if meta["hand"] != hand.hash_string():
        raise ValueError(f"{path}:1: dataset built for a different hand model")
    count = int(meta["count"])
    if len(raw) - 1 < count:
        raise ValueError(f"{path}: truncated: header promises {count} examples, "
                         f"found {len(raw) - 1}")

    examples, tags = [], {}
    for ln in range(1, count + 1):
        parts = raw[ln].split()
        if len(parts) != 12:
            raise ValueError(f"{path}:{ln + 1}: expected 12 fields, got {len(parts)}")
        oid, tag = parts[0], parts[11]
        if tag not in SPLIT_TAGS:
            raise ValueError(f"{path}:{ln + 1}: unknown split tag {tag!r}")
        try:
            nums = [float(v) for v in parts[1:11]]
        except ValueError as err:
            raise ValueError(f"{path}:{ln + 1}: {err}") from None
        wrist = WristPose(nums[0], nums[1], nums[2])
        joints = np.array(nums[3:9])
        fk = forward_kinematics(hand, wrist, joints, check_limits=False)
        examples.append(GraspExample(oid, wrist, joints,
                                     fk.fingertips.mean(axis=0), nums[9]))
        tags[oid] = tag
    ds = GraspDataset(examples=examples, split_tags=tags)

    if verify_objects is not None and examples:
        rng = rng or np.random.default_rng(0)
        n = max(1, int(verify_fraction * len(examples)))
        env = Hand2DEnv(hand)
        for i in rng.choice(len(examples), size=n, replace=False):
            e = examples[i]
            out = replay_example(env, verify_objects[e.object_id], e.wrist, e.joints)
            if not out.success:
                raise ValueError(f"stored example for {e.object_id} no longer replays "
                                 "to success")
    return ds
