"""Hand-object contact queries and the planar force-closure test.

Finger links are capsules (segment plus thickness/2 radius).  Contact
queries go through the object's signed distance function; for a convex
shape the SDF restricted to a line segment is convex, so the closest
approach along a link is found by bracketed refinement.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial import ConvexHull, QhullError

from .geometry import ObjectShape, rot2
from .hand import FkResult, HandModel, N_FINGERS

CONTACT_TOL = 1e-4

LinkId = tuple  # (finger, link) or ("palm",)


@dataclass
class Contact:
    point: np.ndarray      # world coords, on the object boundary
    normal: np.ndarray     # unit, pointing from the object into the hand
    link_id: LinkId
    depth: float           # capsule penetration depth (>0 when penetrating)


# ---------------------------------------------------------------------------
# signed distance


def sdf_points(obj: ObjectShape, pts: np.ndarray):
    """Signed distance of world points to the object.

    Returns (sd, boundary_point, outward_normal) arrays; sd < 0 inside.
    """
    pts = np.atleast_2d(pts)
    if obj.kind == "circle":
        d = pts - obj.position
        r = np.sqrt(np.einsum("nd,nd->n", d, d))
        safe = np.where(r > 1e-12, r, 1.0)
        n = d / safe[:, None]
        n[r <= 1e-12] = (1.0, 0.0)
        sd = r - obj.radius
        bp = obj.position + obj.radius * n
        return sd, bp, n

    verts = obj.vertices_world()
    nxt = np.roll(verts, -1, axis=0)
    e = nxt - verts                       # (m,2)
    elen2 = np.sum(e * e, axis=1)
    # point-to-edge-segment vectors, (n,m,2)
    w = pts[:, None, :] - verts[None, :, :]
    t = np.clip(np.einsum("nmd,md->nm", w, e) / elen2, 0.0, 1.0)
    closest = verts[None, :, :] + t[:, :, None] * e[None, :, :]
    dvec = pts[:, None, :] - closest
    dist = np.sqrt(np.einsum("nmd,nmd->nm", dvec, dvec))
    cross = e[None, :, 0] * w[:, :, 1] - e[None, :, 1] * w[:, :, 0]
    inside = np.all(cross > 0.0, axis=1)

    k = np.argmin(dist, axis=1)
    idx = np.arange(len(pts))
    bp = closest[idx, k]
    dmin = dist[idx, k]
    edge_n = np.stack([e[:, 1], -e[:, 0]], axis=1)
    edge_n /= np.sqrt(elen2)[:, None]
    safe = np.where(dmin > 1e-12, dmin, 1.0)
    n = (pts - bp) / safe[:, None]
    degen = dmin <= 1e-12
    n[degen] = edge_n[k[degen]]
    # inside points: nearest-boundary direction points inward, use the face normal
    n[inside] = edge_n[k[inside]]
    sd = np.where(inside, -dmin, dmin)
    return sd, bp, n


_BASE_GRIDS: dict[int, np.ndarray] = {}


def segments_closest(obj: ObjectShape, segs: np.ndarray,
                     coarse: int = 17, rounds: int = 3):
    """Closest approach of each segment to the object via convex refinement.

    ``segs`` is (S, 2, 2): S segments given by their endpoints.  All
    segments share each refinement round's signed-distance query, so the
    whole batch costs a handful of vectorized calls.  Returns
    (sd (S,), boundary_point (S, 2), outward_normal (S, 2), t (S,)).
    """
    segs = np.asarray(segs, dtype=float)
    s_count = len(segs)
    a = segs[:, 0]
    d = segs[:, 1] - segs[:, 0]
    lo = np.zeros(s_count)
    hi = np.ones(s_count)
    base = _BASE_GRIDS.get(coarse)
    if base is None:
        base = _BASE_GRIDS[coarse] = np.linspace(0.0, 1.0, coarse)
    rows = np.arange(s_count)
    for _ in range(rounds + 1):
        ts = lo[:, None] + (hi - lo)[:, None] * base[None, :]   # (S, coarse)
        ts[:, -1] = hi
        pts = a[:, None, :] + ts[:, :, None] * d[:, None, :]
        sd, bp, n = sdf_points(obj, pts.reshape(s_count * coarse, 2))
        sd = sd.reshape(s_count, coarse)
        k = np.argmin(sd, axis=1)
        span = (hi - lo) / (coarse - 1)
        tk = ts[rows, k]
        lo = np.maximum(0.0, tk - span)
        hi = np.minimum(1.0, tk + span)
    flat = rows * coarse + k
    return sd[rows, k], bp[flat], n[flat], tk


def segment_closest(obj: ObjectShape, a: np.ndarray, b: np.ndarray,
                    coarse: int = 17, rounds: int = 3):
    """Closest approach of segment a-b to the object via convex refinement.

    Returns (sd, boundary_point, outward_normal, t_on_segment).
    """
    sd, bp, n, t = segments_closest(obj, np.stack([a, b])[None], coarse, rounds)
    return float(sd[0]), bp[0], n[0], float(t[0])


# ---------------------------------------------------------------------------
# contact detection


def detect_contacts(fk: FkResult, hand: HandModel, obj: ObjectShape,
                    tol: float = CONTACT_TOL) -> list[Contact]:
    """One contact per touching/penetrating link (deepest point per link)."""
    r_cap = hand.finger_thickness / 2.0
    segs = np.concatenate([fk.segments.reshape(-1, 2, 2), fk.palm[None]])
    links = [(f, l) for f in range(N_FINGERS) for l in range(2)] + [("palm",)]
    sd, bp, n, _ = segments_closest(obj, segs)
    out: list[Contact] = []
    for i, link in enumerate(links):
        sep = sd[i] - r_cap
        if sep <= tol:
            out.append(Contact(point=bp[i], normal=n[i], link_id=link,
                               depth=-sep))
    return out


# ---------------------------------------------------------------------------
# force closure


def contact_wrenches(contacts: list[Contact], mu: float, com: np.ndarray,
                     rho: float) -> np.ndarray:
    """Friction-cone edge wrenches (2 per contact), torque scaled by rho."""
    alpha = math.atan(mu)
    ws = []
    for c in contacts:
        push = -c.normal  # hand presses into the object
        for sgn in (+1.0, -1.0):
            f = rot2(sgn * alpha) @ push
            r = c.point - com
            tau = (r[0] * f[1] - r[1] * f[0]) / rho
            ws.append([f[0], f[1], tau])
    return np.array(ws)


def closure_margin(contacts: list[Contact], mu: float, com: np.ndarray,
                   rho: float = 1.0) -> float:
    """Margin by which the wrench-space origin sits inside the edge-wrench hull.

    Positive margin means force closure; non-positive (or degenerate hull)
    means no closure.
    """
    if mu <= 0:
        raise ValueError("mu must be > 0")
    if len(contacts) < 2:
        return -np.inf
    w = contact_wrenches(contacts, mu, com, rho)
    try:
        hull = ConvexHull(w)
    except QhullError:
        return -np.inf
    # hull equations: n.x + d <= 0 inside; origin margin is -max(d)
    return float(-np.max(hull.equations[:, -1]))


def force_closure(contacts: list[Contact], mu: float, com: np.ndarray,
                  rho: float = 1.0, eps: float = 1e-9) -> bool:
    """True iff the wrench origin is strictly inside the friction-cone hull."""
    return closure_margin(contacts, mu, com, rho) > eps
