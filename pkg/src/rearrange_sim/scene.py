"""Scene assets, layouts, the instancing cache, and scene loading.

Assets are synthetic primitives described in JSON (versioned `schema: 1`).
Body ids are assigned deterministically in file order: backdrop first, then
each furniture entry (articulations contribute one body per part, parts in
declared order).
"""

from __future__ import annotations

import copy
import json
import math
import threading
from dataclasses import dataclass, field

import numpy as np

from . import geometry as geo
from .geometry import Box, Hull, Parts, Pose, Sphere
from .navgrid import NavGrid

SCHEMA_VERSION = 1
LOAD_PENETRATION_TOL = 1e-3  # m, max allowed proxy interpenetration at load
BASE_CLEARANCE_RADIUS = 0.25  # m, furniture footprint inflation for the walk grid


class SceneError(ValueError):
    pass


class SceneLoadError(SceneError):
    pass


# --------------------------------------------------------------------------
# asset / articulation / layout types
# --------------------------------------------------------------------------

@dataclass
class AssetDef:
    asset_id: str
    collision_proxy: Parts
    mass: float
    friction: float
    restitution: float
    category: str

    def __post_init__(self):
        if self.mass < 0:
            raise SceneError(f"{self.asset_id}: mass must be >= 0")
        if self.friction < 0:
            raise SceneError(f"{self.asset_id}: friction must be >= 0")
        if not 0.0 <= self.restitution <= 1.0:
            raise SceneError(f"{self.asset_id}: restitution must be in [0, 1]")
        if not self.collision_proxy:
            raise SceneError(f"{self.asset_id}: empty collision proxy")

    @property
    def is_static(self) -> bool:
        return self.mass == 0.0

    @property
    def visual_mesh(self) -> np.ndarray:
        """Triangle soup (T, 3, 3) derived from the collision proxy."""
        tris = []
        for local, prim in self.collision_proxy:
            if prim.kind == "sphere":
                prim = geo.make_cylinder_hull(prim.radius, 2 * prim.radius, 10)
            if prim.kind == "box":
                hull = Hull(prim.vertices)
            else:
                hull = prim
            verts = local.apply(hull.vertices)
            tris.append(verts[hull.triangles])
        return np.concatenate(tris, axis=0)


@dataclass
class JointDef:
    joint_id: str
    joint_type: str  # "revolute" | "prismatic"
    axis: np.ndarray  # unit, in parent part frame
    limits: tuple[float, float]
    parent_part: int
    child_part: int
    origin: Pose  # child frame at q = 0, in parent frame
    handle_point: np.ndarray  # in child part frame

    def __post_init__(self):
        if self.joint_type not in ("revolute", "prismatic"):
            raise SceneError(f"unknown joint type {self.joint_type}")
        lo, hi = self.limits
        if not lo < hi:
            raise SceneError(f"joint {self.joint_id}: limits must satisfy lo < hi")
        self.axis = np.asarray(self.axis, dtype=float)
        n = math.sqrt(float(self.axis @ self.axis))
        if n == 0:
            raise SceneError(f"joint {self.joint_id}: zero axis")
        self.axis = self.axis / n

    def child_motion(self, q: float) -> Pose:
        if self.joint_type == "revolute":
            return Pose(geo.rot_axis_angle(self.axis, q))
        return Pose(pos=self.axis * q)


@dataclass
class ArticulationDef:
    articulation_id: str
    parts: list[str]  # asset ids; part 0 is the static base
    joints: list[JointDef]

    def __post_init__(self):
        if not self.parts:
            raise SceneError(f"{self.articulation_id}: no parts")
        children = set()
        for j in self.joints:
            if not (0 <= j.parent_part < len(self.parts)) or not (
                0 <= j.child_part < len(self.parts)
            ):
                raise SceneError(f"{self.articulation_id}: joint part index out of range")
            if j.child_part == 0:
                raise SceneError(f"{self.articulation_id}: base part cannot be a joint child")
            if j.child_part in children:
                raise SceneError(f"{self.articulation_id}: part has two parent joints")
            children.add(j.child_part)
        # tree rooted at the base: every non-base part must be some joint's child
        for idx in range(1, len(self.parts)):
            if idx not in children:
                raise SceneError(f"{self.articulation_id}: part {idx} not connected to the base")


@dataclass
class SurfaceBox:
    kind: str  # "on_top" | "inside"
    center: np.ndarray  # owner frame
    half_extents: np.ndarray

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=float)
        self.half_extents = np.asarray(self.half_extents, dtype=float)
        if self.kind not in ("on_top", "inside"):
            raise SceneError(f"unknown surface kind {self.kind}")
        if self.half_extents[0] <= 0 or self.half_extents[1] <= 0:
            raise SceneError("surface box needs positive horizontal cross-section")


@dataclass
class Receptacle:
    name: str
    owner: int  # furniture index in the layout
    boxes: list[SurfaceBox]
    part: int | None = None  # articulation part index, when the owner is articulated


@dataclass
class FurnitureItem:
    ref: str
    kind: str  # "asset" | "articulation"
    pose: Pose


@dataclass
class SceneLayout:
    layout_id: str
    static_backdrop: str
    furniture: list[FurnitureItem]
    receptacles: list[Receptacle]
    navmesh_polygons: list[np.ndarray]

    def validate(self):
        for rec in self.receptacles:
            if not (0 <= rec.owner < len(self.furniture)):
                raise SceneError(f"receptacle {rec.name}: owner index out of range")


def swap_furniture(layout: SceneLayout, a: int, b: int) -> SceneLayout:
    """New layout with the poses of furniture entries `a` and `b` exchanged.

    Every other field is copied unchanged; receptacles keep their owner index
    and therefore follow their furniture.
    """
    n = len(layout.furniture)
    if not (0 <= a < n) or not (0 <= b < n):
        raise SceneError(f"furniture index out of range: {a}, {b} (have {n})")
    if a == b:
        raise SceneError("swap_furniture needs two distinct indices")
    out = copy.deepcopy(layout)
    pa, pb = out.furniture[a].pose, out.furniture[b].pose
    out.furniture[a].pose = pb
    out.furniture[b].pose = pa
    return out


# --------------------------------------------------------------------------
# JSON schema
# --------------------------------------------------------------------------

def _pose_to_json(pose: Pose) -> dict:
    return {"pos": [float(v) for v in pose.pos], "quat": [float(v) for v in pose.quat()]}


def _pose_from_json(d: dict) -> Pose:
    pos = np.asarray(d.get("pos", [0.0, 0.0, 0.0]), dtype=float)
    if "quat" in d:
        return Pose.from_quat(pos, np.asarray(d["quat"], dtype=float))
    return Pose(geo.rot_z(float(d.get("yaw", 0.0))), pos)


def _shape_from_json(d: dict):
    t = d["type"]
    if t == "box":
        return Box(d["half_extents"])
    if t == "sphere":
        return Sphere(d["radius"])
    if t == "hull":
        return Hull(np.asarray(d["vertices"], dtype=float))
    if t == "cylinder":
        return geo.make_cylinder_hull(d["radius"], d["height"], int(d.get("segments", 12)))
    raise SceneError(f"unknown shape type {t}")


def _shape_to_json(prim) -> dict:
    if prim.kind == "box":
        return {"type": "box", "half_extents": prim.half.tolist()}
    if prim.kind == "sphere":
        return {"type": "sphere", "radius": prim.radius}
    return {"type": "hull", "vertices": prim.vertices.tolist()}


def proxy_from_json(d: dict) -> Parts:
    if d["type"] == "compound":
        return [(_pose_from_json(p), _shape_from_json(p["shape"])) for p in d["parts"]]
    return [(Pose.identity(), _shape_from_json(d))]


def proxy_to_json(parts: Parts) -> dict:
    if len(parts) == 1 and np.allclose(parts[0][0].pos, 0) and np.allclose(parts[0][0].rot, np.eye(3)):
        return _shape_to_json(parts[0][1])
    return {
        "type": "compound",
        "parts": [{**_pose_to_json(pose), "shape": _shape_to_json(prim)} for pose, prim in parts],
    }


def asset_from_json(d: dict) -> AssetDef:
    if d.get("schema", SCHEMA_VERSION) != SCHEMA_VERSION:
        raise SceneError(f"unsupported asset schema {d.get('schema')}")
    return AssetDef(
        asset_id=d["asset_id"],
        collision_proxy=proxy_from_json(d["collision_proxy"]),
        mass=float(d["mass"]),
        friction=float(d.get("friction", 0.5)),
        restitution=float(d.get("restitution", 0.1)),
        category=d.get("category", "object"),
    )


def articulation_from_json(d: dict) -> ArticulationDef:
    if d.get("schema", SCHEMA_VERSION) != SCHEMA_VERSION:
        raise SceneError(f"unsupported articulation schema {d.get('schema')}")
    joints = [
        JointDef(
            joint_id=j["joint_id"],
            joint_type=j["type"],
            axis=np.asarray(j["axis"], dtype=float),
            limits=(float(j["limits"][0]), float(j["limits"][1])),
            parent_part=int(j["parent_part"]),
            child_part=int(j["child_part"]),
            origin=_pose_from_json(j.get("origin", {})),
            handle_point=np.asarray(j.get("handle_point", [0, 0, 0]), dtype=float),
        )
        for j in d["joints"]
    ]
    return ArticulationDef(d["articulation_id"], list(d["parts"]), joints)


def layout_from_json(d: dict) -> SceneLayout:
    if d.get("schema", SCHEMA_VERSION) != SCHEMA_VERSION:
        raise SceneError(f"unsupported layout schema {d.get('schema')}")
    furniture = [
        FurnitureItem(ref=f["ref"], kind=f.get("kind", "asset"), pose=_pose_from_json(f))
        for f in d["furniture"]
    ]
    receptacles = [
        Receptacle(
            name=r["name"],
            owner=int(r["owner"]),
            part=r.get("part"),
            boxes=[
                SurfaceBox(b["kind"], b["center"], b["half_extents"]) for b in r["boxes"]
            ],
        )
        for r in d.get("receptacles", [])
    ]
    layout = SceneLayout(
        layout_id=d["layout_id"],
        static_backdrop=d["static_backdrop"],
        furniture=furniture,
        receptacles=receptacles,
        navmesh_polygons=[np.asarray(p, dtype=float) for p in d["navmesh"]],
    )
    layout.validate()
    return layout


def layout_to_json(layout: SceneLayout) -> dict:
    return {
        "schema": SCHEMA_VERSION,
        "layout_id": layout.layout_id,
        "static_backdrop": layout.static_backdrop,
        "furniture": [
            {"ref": f.ref, "kind": f.kind, **_pose_to_json(f.pose)} for f in layout.furniture
        ],
        "receptacles": [
            {
                "name": r.name,
                "owner": r.owner,
                **({"part": r.part} if r.part is not None else {}),
                "boxes": [
                    {
                        "kind": b.kind,
                        "center": b.center.tolist(),
                        "half_extents": b.half_extents.tolist(),
                    }
                    for b in r.boxes
                ],
            }
            for r in layout.receptacles
        ],
        "navmesh": [p.tolist() for p in layout.navmesh_polygons],
    }


# --------------------------------------------------------------------------
# asset cache
# --------------------------------------------------------------------------

class AssetLibrary:
    """Raw JSON asset/articulation/layout definitions keyed by id."""

    def __init__(self):
        self.assets: dict[str, dict] = {}
        self.articulations: dict[str, dict] = {}
        self.layouts: dict[str, dict] = {}

    def add_asset(self, d: dict):
        self.assets[d["asset_id"]] = d

    def add_articulation(self, d: dict):
        self.articulations[d["articulation_id"]] = d

    def add_layout(self, d: dict):
        self.layouts[d["layout_id"]] = d


class AssetCache:
    """Parse-once cache over an `AssetLibrary`.

    Parsing (JSON -> AssetDef, including qhull face extraction) happens at most
    once per asset id; later lookups are instanced from the cached definition.
    Safe for concurrent reads; writes are serialized by a lock.
    """

    def __init__(self, library: AssetLibrary):
        self.library = library
        self._assets: dict[str, AssetDef] = {}
        self._articulations: dict[str, ArticulationDef] = {}
        self.parse_counts: dict[str, int] = {}
        self.hit_count = 0
        self._lock = threading.Lock()

    def get_asset(self, asset_id: str) -> AssetDef:
        hit = self._assets.get(asset_id)
        if hit is not None:
            self.hit_count += 1
            return hit
        with self._lock:
            if asset_id in self._assets:
                self.hit_count += 1
                return self._assets[asset_id]
            raw = self.library.assets.get(asset_id)
            if raw is None:
                raise SceneLoadError(f"unknown asset id: {asset_id}")
            parsed = asset_from_json(raw)
            self.parse_counts[asset_id] = self.parse_counts.get(asset_id, 0) + 1
            self._assets[asset_id] = parsed
            return parsed

    def get_articulation(self, art_id: str) -> ArticulationDef:
        hit = self._articulations.get(art_id)
        if hit is not None:
            self.hit_count += 1
            return hit
        with self._lock:
            if art_id in self._articulations:
                self.hit_count += 1
                return self._articulations[art_id]
            raw = self.library.articulations.get(art_id)
            if raw is None:
                raise SceneLoadError(f"unknown articulation id: {art_id}")
            parsed = articulation_from_json(raw)
            self.parse_counts[art_id] = self.parse_counts.get(art_id, 0) + 1
            self._articulations[art_id] = parsed
            return parsed

    @property
    def total_parses(self) -> int:
        return sum(self.parse_counts.values())


# --------------------------------------------------------------------------
# loaded scene
# --------------------------------------------------------------------------

@dataclass
class BodyRecord:
    body_id: int
    name: str
    asset: AssetDef
    kind: str  # "static" | "kinematic" | "dynamic"
    initial_pose: Pose
    furniture_index: int | None = None
    articulation_part: int | None = None


@dataclass
class SceneJoint:
    joint_id: str
    body_id: int
    parent_body: int
    joint: JointDef
    initial_position: float = 0.0

    def child_pose(self, parent_pose: Pose, q: float) -> Pose:
        return parent_pose.compose(self.joint.origin).compose(self.joint.child_motion(q))

    def handle_world(self, parent_pose: Pose, q: float) -> np.ndarray:
        return self.child_pose(parent_pose, q).apply(self.joint.handle_point)


@dataclass
class ResolvedReceptacle:
    name: str
    owner_body: int
    boxes: list[SurfaceBox]


@dataclass
class SceneHandle:
    layout: SceneLayout
    bodies: list[BodyRecord]
    joints: list[SceneJoint]
    receptacles: dict[str, ResolvedReceptacle]
    navgrid: NavGrid
    floor_z: float = 0.0
    name_to_body: dict[str, int] = field(default_factory=dict)

    def body(self, name: str) -> BodyRecord:
        return self.bodies[self.name_to_body[name]]

    def joint_by_id(self, joint_id: str) -> SceneJoint:
        for j in self.joints:
            if j.joint_id == joint_id:
                return j
        raise KeyError(joint_id)

    def receptacle_world_boxes(self, name: str, body_poses) -> list[tuple[Pose, SurfaceBox]]:
        rec = self.receptacles[name]
        owner_pose = body_poses(rec.owner_body)
        return [(owner_pose, b) for b in rec.boxes]


def load_scene(layout: SceneLayout, cache: AssetCache) -> SceneHandle:
    """Instantiate a layout into body records, joints, and the walk grid.

    Raises SceneLoadError on unresolvable asset ids or when two furniture
    proxies interpenetrate deeper than LOAD_PENETRATION_TOL (the error names
    both body ids).
    """
    layout.validate()
    bodies: list[BodyRecord] = []
    joints: list[SceneJoint] = []
    name_to_body: dict[str, int] = {}

    def add_body(name, asset, kind, pose, fi=None, part=None):
        rec = BodyRecord(
            body_id=len(bodies),
            name=name,
            asset=asset,
            kind=kind,
            initial_pose=pose,
            furniture_index=fi,
            articulation_part=part,
        )
        bodies.append(rec)
        name_to_body[name] = rec.body_id
        return rec.body_id

    backdrop = cache.get_asset(layout.static_backdrop)
    add_body(layout.static_backdrop, backdrop, "static", Pose.identity())

    furniture_first_body: list[int] = []
    for fi, item in enumerate(layout.furniture):
        furniture_first_body.append(len(bodies))
        if item.kind == "articulation":
            art = cache.get_articulation(item.ref)
            part_bodies = []
            for pi, part_asset_id in enumerate(art.parts):
                asset = cache.get_asset(part_asset_id)
                kind = "static" if pi == 0 else "kinematic"
                # provisional pose; joint children are placed at q = 0 below
                bid = add_body(
                    f"{item.ref}#{fi}:{part_asset_id}.{pi}", asset, kind, item.pose, fi, pi
                )
                part_bodies.append(bid)
            for j in art.joints:
                sj = SceneJoint(
                    joint_id=f"{item.ref}#{fi}:{j.joint_id}",
                    body_id=part_bodies[j.child_part],
                    parent_body=part_bodies[j.parent_part],
                    joint=j,
                )
                parent_pose = bodies[sj.parent_body].initial_pose
                bodies[sj.body_id].initial_pose = sj.child_pose(parent_pose, 0.0)
                joints.append(sj)
        else:
            asset = cache.get_asset(item.ref)
            kind = "static" if asset.is_static else "dynamic"
            add_body(f"{item.ref}#{fi}", asset, kind, item.pose, fi)

    # interpenetration check over furniture proxies (backdrop excluded)
    furn_bodies = [b for b in bodies if b.furniture_index is not None]
    for i, ba in enumerate(furn_bodies):
        for bb in furn_bodies[i + 1 :]:
            if ba.furniture_index == bb.furniture_index:
                continue
            lo_a, hi_a = geo.parts_aabb(ba.asset.collision_proxy, ba.initial_pose)
            lo_b, hi_b = geo.parts_aabb(bb.asset.collision_proxy, bb.initial_pose)
            if not geo.aabb_overlap(lo_a, hi_a, lo_b, hi_b):
                continue
            depth = geo.penetration_depth(
                ba.asset.collision_proxy, ba.initial_pose, bb.asset.collision_proxy, bb.initial_pose
            )
            if depth > LOAD_PENETRATION_TOL:
                raise SceneLoadError(
                    f"furniture proxies interpenetrate by {depth * 1000:.1f} mm: "
                    f"body {ba.body_id} ({ba.name}) and body {bb.body_id} ({bb.name})"
                )

    # receptacles resolved to owner body ids
    receptacles: dict[str, ResolvedReceptacle] = {}
    for rec in layout.receptacles:
        first = furniture_first_body[rec.owner]
        owner_body = first + (rec.part or 0)
        if owner_body >= len(bodies):
            raise SceneLoadError(f"receptacle {rec.name}: part index out of range")
        receptacles[rec.name] = ResolvedReceptacle(rec.name, owner_body, rec.boxes)

    # walk grid: authored polygons minus inflated furniture footprints
    blocked = []
    for b in bodies:
        if b.furniture_index is None:
            continue
        lo, hi = geo.parts_aabb(b.asset.collision_proxy, b.initial_pose)
        blocked.append(
            (
                lo[0] - BASE_CLEARANCE_RADIUS,
                lo[1] - BASE_CLEARANCE_RADIUS,
                hi[0] + BASE_CLEARANCE_RADIUS,
                hi[1] + BASE_CLEARANCE_RADIUS,
            )
        )
    navgrid = NavGrid(layout.navmesh_polygons, blocked)

    handle = SceneHandle(
        layout=layout,
        bodies=bodies,
        joints=joints,
        receptacles=receptacles,
        navgrid=navgrid,
        name_to_body=name_to_body,
    )
    for rec in receptacles.values():
        if rec.owner_body >= len(bodies):
            raise SceneLoadError(f"receptacle {rec.name}: owner body missing")
    return handle
