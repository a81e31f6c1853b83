"""Geometry kernel: rigid transforms, convex primitives, and the queries
(support functions, GJK distance, contact generation, raycasts, mass
properties) that the physics, rendering, and planning layers build on.

All transforms are right-handed, z-up. Rotations are 3x3 matrices at the API
surface; quaternions ([w, x, y, z]) are used for integration in the physics
state.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial import ConvexHull as _QhullHull


class GeometryError(ValueError):
    """Raised for degenerate primitives or invalid geometric inputs."""


def cross3(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """np.cross for single 3-vectors without its axis-juggling overhead."""
    return np.array(
        [
            a[1] * b[2] - a[2] * b[1],
            a[2] * b[0] - a[0] * b[2],
            a[0] * b[1] - a[1] * b[0],
        ]
    )


# --------------------------------------------------------------------------
# quaternions
# --------------------------------------------------------------------------

def quat_identity() -> np.ndarray:
    return np.array([1.0, 0.0, 0.0, 0.0])


def quat_normalize(q: np.ndarray) -> np.ndarray:
    n = math.sqrt(float(q @ q))
    if n == 0.0:
        raise GeometryError("zero-norm quaternion")
    return q / n


def quat_multiply(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ]
    )


def quat_from_axis_angle(axis: np.ndarray, angle: float) -> np.ndarray:
    axis = np.asarray(axis, dtype=float)
    n = math.sqrt(float(axis @ axis))
    if n == 0.0:
        raise GeometryError("zero-length rotation axis")
    half = 0.5 * angle
    s = math.sin(half) / n
    return np.array([math.cos(half), axis[0] * s, axis[1] * s, axis[2] * s])


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def matrix_to_quat(rot: np.ndarray) -> np.ndarray:
    # Shepperd's method, stable for all rotation matrices.
    m = rot
    tr = m[0, 0] + m[1, 1] + m[2, 2]
    if tr > 0:
        s = math.sqrt(tr + 1.0) * 2
        q = np.array(
            [0.25 * s, (m[2, 1] - m[1, 2]) / s, (m[0, 2] - m[2, 0]) / s, (m[1, 0] - m[0, 1]) / s]
        )
    elif m[0, 0] > m[1, 1] and m[0, 0] > m[2, 2]:
        s = math.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2]) * 2
        q = np.array(
            [(m[2, 1] - m[1, 2]) / s, 0.25 * s, (m[0, 1] + m[1, 0]) / s, (m[0, 2] + m[2, 0]) / s]
        )
    elif m[1, 1] > m[2, 2]:
        s = math.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2]) * 2
        q = np.array(
            [(m[0, 2] - m[2, 0]) / s, (m[0, 1] + m[1, 0]) / s, 0.25 * s, (m[1, 2] + m[2, 1]) / s]
        )
    else:
        s = math.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1]) * 2
        q = np.array(
            [(m[1, 0] - m[0, 1]) / s, (m[0, 2] + m[2, 0]) / s, (m[1, 2] + m[2, 1]) / s, 0.25 * s]
        )
    return quat_normalize(q)


def quat_integrate(q: np.ndarray, omega: np.ndarray, dt: float) -> np.ndarray:
    """First-order quaternion update for angular velocity `omega` (world frame)."""
    wq = np.array([0.0, omega[0], omega[1], omega[2]])
    q = q + 0.5 * dt * quat_multiply(wq, q)
    return quat_normalize(q)


def rot_x(a: float) -> np.ndarray:
    c, s = math.cos(a), math.sin(a)
    return np.array([[1.0, 0, 0], [0, c, -s], [0, s, c]])


def rot_y(a: float) -> np.ndarray:
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, 0, s], [0, 1.0, 0], [-s, 0, c]])


def rot_z(a: float) -> np.ndarray:
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, -s, 0], [s, c, 0], [0, 0, 1.0]])


def rot_axis_angle(axis: np.ndarray, angle: float) -> np.ndarray:
    return quat_to_matrix(quat_from_axis_angle(axis, angle))


# --------------------------------------------------------------------------
# rigid transform
# --------------------------------------------------------------------------

class Pose:
    """SE(3) transform (3x3 rotation + translation). Treated as immutable."""

    __slots__ = ("rot", "pos")

    def __init__(self, rot: np.ndarray | None = None, pos: np.ndarray | None = None):
        self.rot = np.eye(3) if rot is None else np.asarray(rot, dtype=float)
        self.pos = np.zeros(3) if pos is None else np.asarray(pos, dtype=float)

    @classmethod
    def identity(cls) -> "Pose":
        return cls()

    @classmethod
    def from_quat(cls, pos: np.ndarray, quat: np.ndarray) -> "Pose":
        return cls(quat_to_matrix(quat), np.asarray(pos, dtype=float))

    @classmethod
    def from_xy_yaw(cls, x: float, y: float, yaw: float, z: float = 0.0) -> "Pose":
        return cls(rot_z(yaw), np.array([x, y, z]))

    def quat(self) -> np.ndarray:
        return matrix_to_quat(self.rot)

    def compose(self, other: "Pose") -> "Pose":
        return Pose(self.rot @ other.rot, self.rot @ other.pos + self.pos)

    def inverse(self) -> "Pose":
        rt = self.rot.T
        return Pose(rt, -(rt @ self.pos))

    def apply(self, pts: np.ndarray) -> np.ndarray:
        pts = np.asarray(pts, dtype=float)
        if pts.ndim == 1:
            return self.rot @ pts + self.pos
        return pts @ self.rot.T + self.pos

    def rotate(self, vecs: np.ndarray) -> np.ndarray:
        vecs = np.asarray(vecs, dtype=float)
        if vecs.ndim == 1:
            return self.rot @ vecs
        return vecs @ self.rot.T

    def __repr__(self) -> str:  # pragma: no cover - debugging aid
        return f"Pose(pos={self.pos.tolist()})"


# --------------------------------------------------------------------------
# convex primitives
# --------------------------------------------------------------------------

_BOX_CORNER_SIGNS = np.array(
    [
        [-1, -1, -1], [+1, -1, -1], [-1, +1, -1], [+1, +1, -1],
        [-1, -1, +1], [+1, -1, +1], [-1, +1, +1], [+1, +1, +1],
    ],
    dtype=float,
)


class Box:
    """Axis-aligned box in its local frame, given by half extents (m)."""

    kind = "box"
    __slots__ = ("half", "vertices", "normals", "offsets")

    def __init__(self, half_extents):
        half = np.asarray(half_extents, dtype=float)
        if half.shape != (3,) or np.any(half <= 0):
            raise GeometryError(f"box half extents must be 3 positive numbers, got {half_extents}")
        self.half = half
        self.vertices = _BOX_CORNER_SIGNS * half
        self.normals = np.vstack([np.eye(3), -np.eye(3)])
        self.offsets = np.concatenate([half, half])


class Sphere:
    kind = "sphere"
    __slots__ = ("radius",)

    def __init__(self, radius: float):
        if radius <= 0:
            raise GeometryError(f"sphere radius must be positive, got {radius}")
        self.radius = float(radius)


class Hull:
    """Convex hull of a vertex cloud. Faces come from qhull; vertices are
    reduced to the hull's extreme points."""

    kind = "hull"
    __slots__ = ("vertices", "normals", "offsets", "triangles")

    def __init__(self, vertices):
        pts = np.asarray(vertices, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 3 or pts.shape[0] < 4:
            raise GeometryError("hull needs at least 4 points of dimension 3")
        try:
            qh = _QhullHull(pts)
        except Exception as exc:
            raise GeometryError(f"degenerate hull: {exc}") from exc
        if qh.volume <= 0:
            raise GeometryError("hull has non-positive volume")
        self.vertices = pts[qh.vertices]
        # qhull equations: n.x + c <= 0 inside; store as n.x <= offset.
        eqs = qh.equations
        self.normals = eqs[:, :3].copy()
        self.offsets = -eqs[:, 3].copy()
        # Triangle indices remapped onto the reduced vertex array.
        remap = {old: new for new, old in enumerate(qh.vertices)}
        self.triangles = np.array(
            [[remap[i] for i in simplex] for simplex in qh.simplices], dtype=int
        )


Primitive = Box | Sphere | Hull

# A collision proxy is a list of (local pose, primitive) parts; single-shape
# proxies are one-element lists.
Parts = list[tuple[Pose, Primitive]]


def support_local(prim: Primitive, d: np.ndarray) -> np.ndarray:
    if prim.kind == "box":
        return np.where(d >= 0, prim.half, -prim.half)
    if prim.kind == "sphere":
        n = math.sqrt(float(d @ d))
        if n == 0.0:
            return np.array([prim.radius, 0.0, 0.0])
        return (prim.radius / n) * d
    verts = prim.vertices
    return verts[int(np.argmax(verts @ d))]


def support_world(prim: Primitive, pose: Pose, d: np.ndarray) -> np.ndarray:
    return pose.rot @ support_local(prim, pose.rot.T @ d) + pose.pos


def prim_aabb(prim: Primitive, pose: Pose) -> tuple[np.ndarray, np.ndarray]:
    if prim.kind == "box":
        r = np.abs(pose.rot) @ prim.half
        return pose.pos - r, pose.pos + r
    if prim.kind == "sphere":
        r = prim.radius
        return pose.pos - r, pose.pos + r
    w = pose.apply(prim.vertices)
    return w.min(axis=0), w.max(axis=0)


def parts_aabb(parts: Parts, pose: Pose) -> tuple[np.ndarray, np.ndarray]:
    lo = np.full(3, np.inf)
    hi = np.full(3, -np.inf)
    for local, prim in parts:
        plo, phi = prim_aabb(prim, pose.compose(local))
        lo = np.minimum(lo, plo)
        hi = np.maximum(hi, phi)
    return lo, hi


# --------------------------------------------------------------------------
# mass properties
# --------------------------------------------------------------------------

# Covariance of the canonical tetrahedron (origin, e1, e2, e3), density 1.
_TET_COVARIANCE = (np.ones((3, 3)) + np.eye(3)) / 120.0


def _hull_volume_com_covariance(verts: np.ndarray, tris: np.ndarray, normals, offsets):
    vol = 0.0
    com = np.zeros(3)
    cov = np.zeros((3, 3))
    centroid_guess = verts.mean(axis=0)
    for tri in tris:
        a, b, c = verts[tri]
        # qhull does not guarantee simplex winding; orient outward via the face
        # seen from the interior point.
        n = np.cross(b - a, c - a)
        if n @ (a - centroid_guess) < 0:
            b, c = c, b
        jac = np.column_stack([a, b, c])
        det = float(np.linalg.det(jac))
        vol += det / 6.0
        com += det / 24.0 * (a + b + c)
        cov += det * (jac @ _TET_COVARIANCE @ jac.T)
    if vol <= 0:
        raise GeometryError("hull integration produced non-positive volume")
    return vol, com / vol, cov


def prim_mass_properties(prim: Primitive) -> tuple[float, np.ndarray, np.ndarray]:
    """Return (volume, local COM, inertia tensor about COM at density 1)."""
    if prim.kind == "box":
        h = prim.half
        vol = 8.0 * h[0] * h[1] * h[2]
        m = vol
        diag = m / 3.0 * np.array(
            [h[1] ** 2 + h[2] ** 2, h[0] ** 2 + h[2] ** 2, h[0] ** 2 + h[1] ** 2]
        )
        return vol, np.zeros(3), np.diag(diag)
    if prim.kind == "sphere":
        r = prim.radius
        vol = 4.0 / 3.0 * math.pi * r**3
        i = 2.0 / 5.0 * vol * r * r
        return vol, np.zeros(3), np.eye(3) * i
    vol, com, cov = _hull_volume_com_covariance(
        prim.vertices, prim.triangles, prim.normals, prim.offsets
    )
    # Shift covariance to the COM, then convert to an inertia tensor.
    cov_com = cov - vol * np.outer(com, com)
    inertia = np.trace(cov_com) * np.eye(3) - cov_com
    return vol, com, inertia


def parts_mass_properties(parts: Parts, mass: float):
    """Distribute `mass` uniformly by volume over the parts.

    Returns (COM in body frame, inertia tensor about that COM).
    """
    vols, coms, inertias = [], [], []
    for local, prim in parts:
        v, c, i = prim_mass_properties(prim)
        c_w = local.apply(c)
        i_w = local.rot @ i @ local.rot.T
        vols.append(v)
        coms.append(c_w)
        inertias.append(i_w)
    total_vol = sum(vols)
    if total_vol <= 0:
        raise GeometryError("proxy has zero volume")
    density = mass / total_vol
    com = sum(v * c for v, c in zip(vols, coms)) / total_vol
    inertia = np.zeros((3, 3))
    for v, c, i in zip(vols, coms, inertias):
        m_part = density * v
        d = c - com
        inertia += density * i + m_part * ((d @ d) * np.eye(3) - np.outer(d, d))
    return com, inertia


# --------------------------------------------------------------------------
# GJK distance with witness points
# --------------------------------------------------------------------------

def _closest_simplex(simplex):
    """Closest point to the origin on a 1..4 point simplex.

    `simplex` is a list of (w, sa, sb) Minkowski-difference points with their
    source support points. Returns (closest point, reduced simplex,
    contains_origin).
    """
    if len(simplex) == 1:
        return simplex[0][0], simplex, False

    if len(simplex) == 2:
        (w1, *_), (w2, *_) = simplex
        d = w2 - w1
        dd = float(d @ d)
        t = 0.0 if dd == 0.0 else float(-(w1 @ d) / dd)
        if t <= 0.0:
            return w1, [simplex[0]], False
        if t >= 1.0:
            return w2, [simplex[1]], False
        return w1 + t * d, simplex, False

    if len(simplex) == 3:
        return _closest_triangle(simplex)

    # tetrahedron: check each face, keep the nearest; origin enclosed if it is
    # on the inner side of all faces.
    w = [s[0] for s in simplex]
    best = None
    contained = True
    for face in ((0, 1, 2), (0, 1, 3), (0, 2, 3), (1, 2, 3)):
        opp = ({0, 1, 2, 3} - set(face)).pop()
        a, b, c = w[face[0]], w[face[1]], w[face[2]]
        n = np.cross(b - a, c - a)
        side_origin = float(n @ (-a))
        side_opp = float(n @ (w[opp] - a))
        if side_origin * side_opp > 0:
            continue  # origin on the interior side of this face
        contained = False
        pt, sub, _ = _closest_triangle([simplex[i] for i in face])
        d2 = float(pt @ pt)
        if best is None or d2 < best[0]:
            best = (d2, pt, sub)
    if contained:
        return np.zeros(3), simplex, True
    return best[1], best[2], False


def _closest_triangle(simplex):
    (w1, *_), (w2, *_), (w3, *_) = simplex
    ab = w2 - w1
    ac = w3 - w1
    ap = -w1
    d1 = float(ab @ ap)
    d2 = float(ac @ ap)
    if d1 <= 0 and d2 <= 0:
        return w1, [simplex[0]], False
    bp = -w2
    d3 = float(ab @ bp)
    d4 = float(ac @ bp)
    if d3 >= 0 and d4 <= d3:
        return w2, [simplex[1]], False
    vc = d1 * d4 - d3 * d2
    if vc <= 0 and d1 >= 0 and d3 <= 0:
        t = d1 / (d1 - d3) if d1 != d3 else 0.0
        return w1 + t * ab, [simplex[0], simplex[1]], False
    cp = -w3
    d5 = float(ab @ cp)
    d6 = float(ac @ cp)
    if d6 >= 0 and d5 <= d6:
        return w3, [simplex[2]], False
    vb = d5 * d2 - d1 * d6
    if vb <= 0 and d2 >= 0 and d6 <= 0:
        t = d2 / (d2 - d6) if d2 != d6 else 0.0
        return w1 + t * ac, [simplex[0], simplex[2]], False
    va = d3 * d6 - d5 * d4
    if va <= 0 and (d4 - d3) >= 0 and (d5 - d6) >= 0:
        t = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        return w2 + t * (w3 - w2), [simplex[1], simplex[2]], False
    denom = va + vb + vc
    v = vb / denom
    w = vc / denom
    return w1 + ab * v + ac * w, simplex, False


def _witness_points(point, simplex):
    """Reconstruct witness points on A and B from barycentric coordinates of
    `point` over the simplex's Minkowski points."""
    ws = np.array([s[0] for s in simplex])
    if len(simplex) == 1:
        lam = np.array([1.0])
    else:
        # solve least squares for barycentric weights summing to 1
        a = np.vstack([ws.T, np.ones(len(simplex))])
        b = np.concatenate([point, [1.0]])
        lam, *_ = np.linalg.lstsq(a, b, rcond=None)
        lam = np.clip(lam, 0.0, None)
        s = lam.sum()
        lam = lam / s if s > 0 else np.full(len(simplex), 1.0 / len(simplex))
    pa = sum(l * s[1] for l, s in zip(lam, simplex))
    pb = sum(l * s[2] for l, s in zip(lam, simplex))
    return np.asarray(pa), np.asarray(pb)


def gjk_distance(
    prim_a: Primitive,
    pose_a: Pose,
    prim_b: Primitive,
    pose_b: Pose,
    tol: float = 1e-10,
    max_iter: int = 64,
) -> tuple[float, np.ndarray, np.ndarray]:
    """Distance between two convex shapes with closest points.

    Returns (distance, point_on_a, point_on_b); distance 0.0 means the shapes
    overlap (witness points then coincide at an interior point).
    """
    d = pose_b.pos - pose_a.pos
    if float(d @ d) == 0.0:
        d = np.array([1.0, 0.0, 0.0])
    sa = support_world(prim_a, pose_a, d)
    sb = support_world(prim_b, pose_b, -d)
    simplex = [(sa - sb, sa, sb)]
    point = simplex[0][0]
    last_d2 = np.inf
    for _ in range(max_iter):
        point, simplex, contains = _closest_simplex(simplex)
        d2 = float(point @ point)
        if contains or d2 < tol:
            return 0.0, pose_a.pos.copy(), pose_a.pos.copy()
        if math.isfinite(last_d2) and last_d2 - d2 <= tol * max(1.0, last_d2):
            break
        last_d2 = d2
        d = -point
        sa = support_world(prim_a, pose_a, d)
        sb = support_world(prim_b, pose_b, -d)
        w = sa - sb
        # no progress toward the origin -> current simplex is optimal
        if float(w @ d) - float(point @ d) <= tol * max(1.0, math.sqrt(d2)):
            break
        simplex.append((w, sa, sb))
    pa, pb = _witness_points(point, simplex)
    return math.sqrt(float(point @ point)), pa, pb


def parts_distance(parts_a: Parts, pose_a: Pose, parts_b: Parts, pose_b: Pose) -> float:
    best = np.inf
    for la, pa in parts_a:
        wa = pose_a.compose(la)
        for lb, pb in parts_b:
            wb = pose_b.compose(lb)
            d, *_ = gjk_distance(pa, wa, pb, wb)
            if d < best:
                best = d
            if best == 0.0:
                return 0.0
    return best


# --------------------------------------------------------------------------
# contact generation (vertex-penetration model)
# --------------------------------------------------------------------------

@dataclass
class Contact:
    """Single contact: `normal` is unit length and pushes body A off body B."""

    point: np.ndarray
    normal: np.ndarray
    depth: float


def _convex_planes_world(prim: Primitive, pose: Pose):
    n = prim.normals @ pose.rot.T
    d = prim.offsets + n @ pose.pos
    return n, d


def _convex_vertices_world(prim: Primitive, pose: Pose) -> np.ndarray:
    return pose.apply(prim.vertices)


def _vertices_in_convex(verts_w, normals_w, offsets_w, margin: float = 0.0):
    """Per-vertex penetration against a convex's faces.

    A vertex counts as contacting when it is inside every face, or outside a
    single face by less than `margin` (speculative contact: depth then goes
    negative). Returns (mask, depth, face index of the push-out face).
    """
    slack = offsets_w[None, :] - verts_w @ normals_w.T  # >= 0 inside each face
    face = np.argmin(slack, axis=1)
    depth = slack[np.arange(len(verts_w)), face]
    neg_counts = np.sum(slack < 0.0, axis=1)
    inside = (neg_counts == 0) | ((neg_counts == 1) & (depth >= -margin))
    return inside, depth, face


def closest_point_on_convex(prim: Primitive, pose: Pose, point: np.ndarray) -> np.ndarray:
    """Closest surface point when `point` lies outside the convex."""
    if prim.kind == "sphere":
        d = point - pose.pos
        n = math.sqrt(float(d @ d))
        if n == 0.0:
            return pose.pos + np.array([prim.radius, 0, 0])
        return pose.pos + d * (prim.radius / n)
    verts = _convex_vertices_world(prim, pose)
    if prim.kind == "box":
        local = pose.rot.T @ (point - pose.pos)
        clamped = np.clip(local, -prim.half, prim.half)
        return pose.rot @ clamped + pose.pos
    tris = prim.triangles
    best = None
    for tri in tris:
        q = _closest_point_triangle(point, verts[tri[0]], verts[tri[1]], verts[tri[2]])
        d2 = float((point - q) @ (point - q))
        if best is None or d2 < best[0]:
            best = (d2, q)
    return best[1]


def _closest_point_triangle(p, a, b, c):
    ab = b - a
    ac = c - a
    ap = p - a
    d1 = float(ab @ ap)
    d2 = float(ac @ ap)
    if d1 <= 0 and d2 <= 0:
        return a
    bp = p - b
    d3 = float(ab @ bp)
    d4 = float(ac @ bp)
    if d3 >= 0 and d4 <= d3:
        return b
    vc = d1 * d4 - d3 * d2
    if vc <= 0 and d1 >= 0 and d3 <= 0:
        return a + ab * (d1 / (d1 - d3))
    cp = p - c
    d5 = float(ab @ cp)
    d6 = float(ac @ cp)
    if d6 >= 0 and d5 <= d6:
        return c
    vb = d5 * d2 - d1 * d6
    if vb <= 0 and d2 >= 0 and d6 <= 0:
        return a + ac * (d2 / (d2 - d6))
    va = d3 * d6 - d5 * d4
    if va <= 0 and (d4 - d3) >= 0 and (d5 - d6) >= 0:
        return b + (c - b) * ((d4 - d3) / ((d4 - d3) + (d5 - d6)))
    denom = va + vb + vc
    return a + ab * (vb / denom) + ac * (vc / denom)


def _sphere_convex_contact(sphere: Sphere, pose_s: Pose, prim: Primitive, pose_p: Pose, flip: bool, margin: float = 0.0):
    center = pose_s.pos
    normals_w, offsets_w = _convex_planes_world(prim, pose_p)
    slack = offsets_w - normals_w @ center
    if np.all(slack >= 0.0):  # center inside the convex
        f = int(np.argmin(slack))
        depth = sphere.radius + float(slack[f])
        normal = normals_w[f]
        point = center - normal * float(slack[f])
    else:
        q = closest_point_on_convex(prim, pose_p, center)
        d = center - q
        dist = math.sqrt(float(d @ d))
        depth = sphere.radius - dist
        if depth <= -margin:
            return []
        normal = d / dist if dist > 0 else np.array([0.0, 0.0, 1.0])
        point = q
    if flip:
        normal = -normal
    return [Contact(point=point, normal=normal, depth=depth)]


def _sphere_sphere_contact(a: Sphere, pa: Pose, b: Sphere, pb: Pose, margin: float = 0.0):
    d = pa.pos - pb.pos
    dist = math.sqrt(float(d @ d))
    depth = a.radius + b.radius - dist
    if depth <= -margin:
        return []
    normal = d / dist if dist > 0 else np.array([0.0, 0.0, 1.0])
    point = pb.pos + normal * b.radius
    return [Contact(point=point, normal=normal, depth=depth)]


def convex_contacts(prim_a: Primitive, pose_a: Pose, prim_b: Primitive, pose_b: Pose, margin: float = 0.0):
    """Penetration contacts between two primitives.

    Convex-vs-convex uses a vertex-penetration manifold: vertices of each shape
    inside the other, with the push-out face as the contact normal. This keeps
    contacts deterministic and handles the resting/stacking cases the
    simulator cares about; edge-edge crossings without contained vertices are
    not detected.
    """
    if prim_a.kind == "sphere" and prim_b.kind == "sphere":
        return _sphere_sphere_contact(prim_a, pose_a, prim_b, pose_b, margin)
    if prim_a.kind == "sphere":
        return _sphere_convex_contact(prim_a, pose_a, prim_b, pose_b, False, margin)
    if prim_b.kind == "sphere":
        return _sphere_convex_contact(prim_b, pose_b, prim_a, pose_a, True, margin)

    contacts = []
    verts_a = _convex_vertices_world(prim_a, pose_a)
    normals_b, offsets_b = _convex_planes_world(prim_b, pose_b)
    inside, depth, face = _vertices_in_convex(verts_a, normals_b, offsets_b, margin)
    for i in np.nonzero(inside)[0]:
        contacts.append(
            Contact(point=verts_a[i].copy(), normal=normals_b[face[i]].copy(), depth=float(depth[i]))
        )
    verts_b = _convex_vertices_world(prim_b, pose_b)
    normals_a, offsets_a = _convex_planes_world(prim_a, pose_a)
    inside, depth, face = _vertices_in_convex(verts_b, normals_a, offsets_a, margin)
    for i in np.nonzero(inside)[0]:
        contacts.append(
            Contact(point=verts_b[i].copy(), normal=-normals_a[face[i]], depth=float(depth[i]))
        )
    return contacts


def parts_contacts(parts_a: Parts, pose_a: Pose, parts_b: Parts, pose_b: Pose, margin: float = 0.0):
    out = []
    world_a = [(pose_a.compose(la), pa) for la, pa in parts_a]
    world_b = [(pose_b.compose(lb), pb) for lb, pb in parts_b]
    aabbs_b = [prim_aabb(pb, wb) for wb, pb in world_b]
    for wa, pa in world_a:
        lo_a, hi_a = prim_aabb(pa, wa)
        for (wb, pb), (lo_b, hi_b) in zip(world_b, aabbs_b):
            if (
                lo_a[0] > hi_b[0] + margin or lo_b[0] > hi_a[0] + margin
                or lo_a[1] > hi_b[1] + margin or lo_b[1] > hi_a[1] + margin
                or lo_a[2] > hi_b[2] + margin or lo_b[2] > hi_a[2] + margin
            ):
                continue
            out.extend(convex_contacts(pa, wa, pb, wb, margin))
    return out


def penetration_depth(parts_a: Parts, pose_a: Pose, parts_b: Parts, pose_b: Pose) -> float:
    """Max vertex-penetration depth between two proxies (0.0 when separated)."""
    contacts = parts_contacts(parts_a, pose_a, parts_b, pose_b)
    if not contacts:
        return 0.0
    return max(c.depth for c in contacts)


# --------------------------------------------------------------------------
# raycasts (vectorized over rays)
# --------------------------------------------------------------------------

_PARALLEL_EPS = 1e-12


def _ray_halfspaces(normals_w, offsets_w, origins, dirs):
    s = dirs @ normals_w.T  # (N, F)
    b = offsets_w[None, :] - origins @ normals_w.T
    entering = s < -_PARALLEL_EPS
    exiting = s > _PARALLEL_EPS
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = b / s
    t_enter = np.where(entering, ratio, -np.inf).max(axis=1)
    t_exit = np.where(exiting, ratio, np.inf).min(axis=1)
    parallel_bad = np.any(~entering & ~exiting & (b < 0), axis=1)
    hit = (t_enter <= t_exit) & (t_exit >= 0.0) & ~parallel_bad
    t = np.where(t_enter >= 0.0, t_enter, 0.0)
    return np.where(hit, t, np.inf)


def _ray_sphere(center, radius, origins, dirs):
    oc = origins - center
    b = np.einsum("ij,ij->i", oc, dirs)
    c = np.einsum("ij,ij->i", oc, oc) - radius * radius
    disc = b * b - c
    ok = disc >= 0
    sq = np.sqrt(np.where(ok, disc, 0.0))
    t0 = -b - sq
    t1 = -b + sq
    t = np.where(t0 >= 0.0, t0, np.where(t1 >= 0.0, 0.0, np.inf))
    return np.where(ok, t, np.inf)


def prim_ray_hits(prim: Primitive, pose: Pose, origins: np.ndarray, dirs: np.ndarray) -> np.ndarray:
    """Hit parameter per ray (np.inf on miss). `dirs` must be unit length."""
    origins = np.atleast_2d(origins)
    dirs = np.atleast_2d(dirs)
    if prim.kind == "sphere":
        return _ray_sphere(pose.pos, prim.radius, origins, dirs)
    normals_w, offsets_w = _convex_planes_world(prim, pose)
    return _ray_halfspaces(normals_w, offsets_w, origins, dirs)


def parts_ray_hits(parts: Parts, pose: Pose, origins: np.ndarray, dirs: np.ndarray) -> np.ndarray:
    t = np.full(np.atleast_2d(dirs).shape[0], np.inf)
    for local, prim in parts:
        t = np.minimum(t, prim_ray_hits(prim, pose.compose(local), origins, dirs))
    return t


# --------------------------------------------------------------------------
# misc helpers
# --------------------------------------------------------------------------

def aabb_overlap(lo_a, hi_a, lo_b, hi_b, margin: float = 0.0) -> bool:
    return bool(np.all(lo_a - margin <= hi_b) and np.all(lo_b - margin <= hi_a))


def point_in_parts(parts: Parts, pose: Pose, point: np.ndarray, margin: float = 0.0) -> bool:
    for local, prim in parts:
        w = pose.compose(local)
        if prim.kind == "sphere":
            d = point - w.pos
            if float(d @ d) <= (prim.radius + margin) ** 2:
                return True
            continue
        n, d = _convex_planes_world(prim, w)
        if np.all(n @ point <= d + margin):
            return True
    return False


def points_in_parts_mask(parts: Parts, pose: Pose, points: np.ndarray, margin: float = 0.0):
    """Vectorized membership test for many points against one proxy."""
    points = np.atleast_2d(points)
    mask = np.zeros(len(points), dtype=bool)
    for local, prim in parts:
        w = pose.compose(local)
        if prim.kind == "sphere":
            d = points - w.pos
            mask |= np.einsum("ij,ij->i", d, d) <= (prim.radius + margin) ** 2
        else:
            n, d = _convex_planes_world(prim, w)
            mask |= np.all(points @ n.T <= d[None, :] + margin, axis=1)
    return mask


def make_cylinder_hull(radius: float, height: float, segments: int = 12) -> Hull:
    """Convex prism approximating an upright cylinder (z axis)."""
    angles = np.linspace(0.0, 2.0 * math.pi, segments, endpoint=False)
    ring = np.column_stack([radius * np.cos(angles), radius * np.sin(angles)])
    top = np.column_stack([ring, np.full(segments, height / 2.0)])
    bot = np.column_stack([ring, np.full(segments, -height / 2.0)])
    return Hull(np.vstack([top, bot]))
