"""2D geometry primitives: poses, rigid transforms, object shapes.

The world frame has the table along the line y = 0 and gravity pointing
in -y.  Objects rest on the table; every object carries a 64-point
boundary cloud in its local frame.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

CLOUD_SIZE = 64

# ---------------------------------------------------------------------------
# angles / transforms


def wrap_angle(theta: float) -> float:
    """Wrap an angle to (-pi, pi]."""
    w = math.remainder(theta, 2.0 * math.pi)
    if w <= -math.pi:
        w += 2.0 * math.pi
    return w


def angle_diff(a: float, b: float) -> float:
    """Shorter-arc signed difference a - b, in (-pi, pi]."""
    return wrap_angle(a - b)


def rot2(theta: float) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s], [s, c]])


@dataclass
class WristPose:
    """User-controlled planar wrist: position in meters, orientation in radians."""

    x: float
    y: float
    theta: float

    def __post_init__(self):
        if not (np.isfinite(self.x) and np.isfinite(self.y) and np.isfinite(self.theta)):
            raise ValueError("wrist pose must be finite")
        self.theta = wrap_angle(self.theta)

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.theta])

    @property
    def position(self) -> np.ndarray:
        return np.array([self.x, self.y])

    def to_world(self, pts_local: np.ndarray) -> np.ndarray:
        """Map local-frame points (N,2) into the world frame."""
        return pts_local @ rot2(self.theta).T + self.position

    def to_local(self, pts_world: np.ndarray) -> np.ndarray:
        """Map world-frame points (N,2) into this pose's frame."""
        return (pts_world - self.position) @ rot2(self.theta)


# ---------------------------------------------------------------------------
# object shapes


def _polygon_is_ccw_convex(verts: np.ndarray, tol: float = 1e-12) -> bool:
    n = len(verts)
    if n < 3:
        return False
    for i in range(n):
        a, b, c = verts[i], verts[(i + 1) % n], verts[(i + 2) % n]
        cross = (b[0] - a[0]) * (c[1] - b[1]) - (b[1] - a[1]) * (c[0] - b[0])
        if cross <= tol:
            return False
    return True


def _polygon_boundary_cloud(verts: np.ndarray, n: int) -> np.ndarray:
    """Sample n points uniformly by arc length along the polygon boundary."""
    edges = np.roll(verts, -1, axis=0) - verts
    lengths = np.linalg.norm(edges, axis=1)
    cum = np.concatenate([[0.0], np.cumsum(lengths)])
    total = cum[-1]
    s = np.arange(n) * total / n
    idx = np.searchsorted(cum, s, side="right") - 1
    idx = np.clip(idx, 0, len(verts) - 1)
    frac = (s - cum[idx]) / lengths[idx]
    return verts[idx] + frac[:, None] * edges[idx]


@dataclass
class ObjectShape:
    """A rigid tabletop object: a circle or a convex CCW polygon.

    ``boundary_local`` holds exactly 64 points on the boundary in the
    object frame; ``pose`` is the object frame's (x, y, theta) in world.
    """

    id: str
    category: str
    kind: str  # "circle" | "convex-polygon"
    radius: float = 0.0
    vertices: np.ndarray | None = None  # local frame, CCW, for polygons
    pose: np.ndarray = field(default_factory=lambda: np.zeros(3))
    boundary_local: np.ndarray = field(init=False)

    def __post_init__(self):
        self.pose = np.asarray(self.pose, dtype=float).copy()
        if self.kind == "circle":
            if self.radius <= 0:
                raise ValueError("circle radius must be > 0")
            ang = np.linspace(0.0, 2.0 * math.pi, CLOUD_SIZE, endpoint=False)
            self.boundary_local = self.radius * np.stack([np.cos(ang), np.sin(ang)], axis=1)
        elif self.kind == "convex-polygon":
            verts = np.asarray(self.vertices, dtype=float)
            if not _polygon_is_ccw_convex(verts):
                raise ValueError("polygon vertices must be strictly convex and CCW")
            self.vertices = verts
            self.boundary_local = _polygon_boundary_cloud(verts, CLOUD_SIZE)
        else:
            raise ValueError(f"unknown shape kind: {self.kind!r}")

    # -- pose helpers ------------------------------------------------------

    @property
    def position(self) -> np.ndarray:
        return self.pose[:2]

    @property
    def theta(self) -> float:
        return float(self.pose[2])

    def boundary_world(self) -> np.ndarray:
        return self.boundary_local @ rot2(self.theta).T + self.position

    def vertices_world(self) -> np.ndarray:
        if self.kind != "convex-polygon":
            raise ValueError("circle has no vertices")
        return self.vertices @ rot2(self.theta).T + self.position

    def copy(self) -> "ObjectShape":
        if self.kind == "circle":
            return ObjectShape(self.id, self.category, "circle", radius=self.radius,
                               pose=self.pose.copy())
        return ObjectShape(self.id, self.category, "convex-polygon",
                           vertices=self.vertices.copy(), pose=self.pose.copy())

    # -- queries -----------------------------------------------------------

    def char_radius(self) -> float:
        """Characteristic radius: max boundary distance from the local origin."""
        return float(np.max(np.linalg.norm(self.boundary_local, axis=1)))

    def min_boundary_y(self) -> float:
        return float(np.min(self.boundary_world()[:, 1]))

    def rest_height(self) -> float:
        """Local-origin height at which the object touches the table (theta as posed)."""
        pts = self.boundary_local @ rot2(self.theta).T
        return -float(np.min(pts[:, 1]))

    def rest_on_table(self, x: float = 0.0, theta: float = 0.0) -> "ObjectShape":
        """Return a copy posed at horizontal position x, resting on y = 0."""
        out = self.copy()
        out.pose[:] = (x, 0.0, theta)
        out.pose[1] = out.rest_height()
        return out

    def contains(self, pt: np.ndarray) -> bool:
        """Strict interior test for a world-frame point."""
        local = rot2(self.theta).T @ (np.asarray(pt) - self.position)
        if self.kind == "circle":
            return float(np.hypot(*local)) < self.radius
        verts = self.vertices
        nxt = np.roll(verts, -1, axis=0)
        cross = (nxt[:, 0] - verts[:, 0]) * (local[1] - verts[:, 1]) - \
                (nxt[:, 1] - verts[:, 1]) * (local[0] - verts[:, 0])
        return bool(np.all(cross > 0))


# ---------------------------------------------------------------------------
# shape constructors


def make_circle(oid: str, radius: float) -> ObjectShape:
    return ObjectShape(oid, "circle", "circle", radius=radius)


def make_regular_polygon(oid: str, category: str, n_sides: int, circumradius: float,
                         phase: float = 0.0) -> ObjectShape:
    ang = phase + np.arange(n_sides) * 2.0 * math.pi / n_sides
    verts = circumradius * np.stack([np.cos(ang), np.sin(ang)], axis=1)
    return ObjectShape(oid, category, "convex-polygon", vertices=verts)


def make_rectangle(oid: str, category: str, half_w: float, half_h: float) -> ObjectShape:
    verts = np.array([[half_w, -half_h], [half_w, half_h],
                      [-half_w, half_h], [-half_w, -half_h]])
    return ObjectShape(oid, category, "convex-polygon", vertices=verts)


def make_stadium(oid: str, half_len: float, radius: float, n_arc: int = 8) -> ObjectShape:
    """Convex-polygon approximation of a stadium (capsule) hull."""
    right = [(half_len + radius * math.cos(a), radius * math.sin(a))
             for a in np.linspace(-math.pi / 2, math.pi / 2, n_arc)]
    left = [(-half_len + radius * math.cos(a), radius * math.sin(a))
            for a in np.linspace(math.pi / 2, 3 * math.pi / 2, n_arc)]
    verts = np.array(right + left)
    return ObjectShape(oid, "stadium", "convex-polygon", vertices=verts)


# ---------------------------------------------------------------------------
# object library


def build_object_library() -> list[ObjectShape]:
    """Deterministic desk-scale library: 40 objects across 7 categories."""
    objs: list[ObjectShape] = []
    for i, r in enumerate(np.linspace(0.018, 0.034, 8)):
        objs.append(make_circle(f"circle_{i:02d}", float(r)))
    for i, h in enumerate(np.linspace(0.016, 0.030, 6)):
        objs.append(make_rectangle(f"square_{i:02d}", "square", float(h), float(h)))
    for i, (w, h) in enumerate(zip(np.linspace(0.024, 0.040, 6),
                                   np.linspace(0.014, 0.022, 6))):
        objs.append(make_rectangle(f"rect_{i:02d}", "rectangle", float(w), float(h)))
    for i, r in enumerate(np.linspace(0.020, 0.034, 6)):
        objs.append(make_regular_polygon(f"pent_{i:02d}", "pentagon", 5, float(r),
                                         phase=math.pi / 2))
    for i, r in enumerate(np.linspace(0.020, 0.034, 5)):
        objs.append(make_regular_polygon(f"hex_{i:02d}", "hexagon", 6, float(r)))
    for i, r in enumerate(np.linspace(0.020, 0.032, 4)):
        objs.append(make_regular_polygon(f"oct_{i:02d}", "octagon", 8, float(r),
                                         phase=math.pi / 8))
    for i, (l, r) in enumerate(zip(np.linspace(0.010, 0.022, 5),
                                   np.linspace(0.014, 0.020, 5))):
        objs.append(make_stadium(f"stadium_{i:02d}", float(l), float(r)))
    return objs


# -- object library file (line-delimited text) ------------------------------

_LIB_MAGIC = "graspfield-objects v1"


def save_object_library(objs: list[ObjectShape], path) -> None:
    """One record per object: id, category, kind, parameters, 64 boundary points."""
    lines = [_LIB_MAGIC]
    for o in objs:
        if o.kind == "circle":
            params = f"radius {o.radius!r}"
        else:
            flat = " ".join(repr(float(v)) for v in o.vertices.ravel())
            params = f"vertices {len(o.vertices)} {flat}"
        cloud = " ".join(repr(float(v)) for v in o.boundary_local.ravel())
        pose = " ".join(repr(float(v)) for v in o.pose)
        lines.append(f"{o.id}|{o.category}|{o.kind}|{params}|pose {pose}|cloud {cloud}")
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")


def load_object_library(path) -> list[ObjectShape]:
    with open(path) as f:
        lines = [ln.rstrip("\n") for ln in f if ln.strip()]
    if not lines or lines[0] != _LIB_MAGIC:
        raise ValueError(f"{path}: not an object library file (bad header)")
    objs = []
    for lineno, ln in enumerate(lines[1:], start=2):
        try:
            oid, cat, kind, params, pose_s, cloud_s = ln.split("|")
            parts = params.split()
            if kind == "circle":
                obj = ObjectShape(oid, cat, "circle", radius=float(parts[1]))
            else:
                nv = int(parts[1])
                verts = np.array([float(v) for v in parts[2:2 + 2 * nv]]).reshape(nv, 2)
                obj = ObjectShape(oid, cat, "convex-polygon", vertices=verts)
            obj.pose[:] = [float(v) for v in pose_s.split()[1:4]]
            cloud = np.array([float(v) for v in cloud_s.split()[1:]]).reshape(-1, 2)
            if cloud.shape != (CLOUD_SIZE, 2):
                raise ValueError("bad cloud size")
            if not np.allclose(cloud, obj.boundary_local, atol=1e-9):
                raise ValueError("stored cloud does not lie on the declared boundary")
        except ValueError as e:
            raise ValueError(f"{path}:{lineno}: {e}") from None
        objs.append(obj)
    return objs
