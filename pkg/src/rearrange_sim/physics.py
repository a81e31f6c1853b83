"""Deterministic rigid-body stepper with locality optimizations.

Design notes:
- Impulse-based contacts (Gauss-Seidel sweeps) over a vertex-penetration
  manifold, with direct positional correction and a velocity freeze below the
  sleep threshold. Restitution only above a speed threshold.
- Only the robot injects non-gravitational energy. Sleeping bodies are
  excluded from narrowphase and integration; robot proxies wake them inside an
  inflated AABB radius. With `sleeping_enabled=False` everything stays awake
  and every pair is tested (the benchmark's physics-opts-off mode).
- Articulated furniture parts move kinematically on 1-DoF joints. Contact
  impulses project onto the joint axis so the robot can push doors/drawers;
  grasping a handle drags the joint coordinate directly.
- Objects resting inside a moving container part ride it kinematically while
  asleep (severed on wake), so a bowl opens with its drawer.
- Everything iterates in body-id / sorted-pair order: identical inputs give
  bit-identical outputs.
"""

from __future__ import annotations

import hashlib
import math
import itertools
import struct
from dataclasses import dataclass, field

import numpy as np

from . import geometry as geo
from . import robot as rb
from .geometry import Pose
from .scene import AssetDef, SceneHandle

GRAVITY = 9.81

_VERSION = itertools.count(1)


def _next_version() -> int:
    """Process-global pose version: never reused, so cached world-space data
    keyed on versions can never alias across states or snapshots."""
    return next(_VERSION)


class PhysicsFault(RuntimeError):
    """Hard fault: non-finite state detected."""


class SettleUnstable(RuntimeError):
    """settle() could not bring every placed body to rest."""


@dataclass
class PhysicsConfig:
    gravity: float = GRAVITY
    solver_iterations: int = 16
    correction_factor: float = 0.2
    slop: float = 5e-4
    restitution_threshold: float = 0.25  # m/s
    contact_margin: float = 1e-3  # m, speculative contact distance
    sleep_lin_threshold: float = 1e-3  # m/s
    sleep_ang_threshold: float = 1e-2  # rad/s
    sleep_substeps: int = 10
    wake_margin: float = 0.05  # m
    lin_damping: float = 0.999
    ang_damping: float = 0.98
    joint_damping: float = 0.90
    joint_inertia_revolute: float = 1.2  # kg m^2
    joint_inertia_prismatic: float = 4.0  # kg
    kp: float = 0.3
    motor_impulse_cap: float = 10.0  # N s (unit joint inertia -> velocity cap)
    impulse_cap_per_control_step: bool = False
    sleeping_enabled: bool = True


@dataclass
class ContactEvent:
    bodies: tuple[int, int]
    impulse: float  # N s
    force: float  # N
    point: np.ndarray

    def __post_init__(self):
        if self.force < 0:
            raise PhysicsFault("contact event with negative force")


_SNAP_MAGIC = b"RSIM"
_SNAP_VERSION = 1


class WorldState:
    """Full simulation state: body poses/velocities, sleep flags, joint
    coordinates, grasp attachment, and the episode's contact-force tally."""

    __slots__ = (
        "pos", "quat", "lin_vel", "ang_vel", "asleep", "sleep_counter", "version",
        "joints", "joint_vel", "base", "held", "held_offset", "held_joint",
        "grab_q", "grab_ee",
        "rider_joint", "rider_offset", "accumulated_contact_force", "time", "step_index",
    )

    def __init__(self, n_bodies: int, n_joints: int):
        self.pos = np.zeros((n_bodies, 3))
        self.quat = np.tile(geo.quat_identity(), (n_bodies, 1))
        self.lin_vel = np.zeros((n_bodies, 3))
        self.ang_vel = np.zeros((n_bodies, 3))
        self.asleep = np.zeros(n_bodies, dtype=bool)
        self.sleep_counter = np.zeros(n_bodies, dtype=np.int64)
        self.version = np.zeros(n_bodies, dtype=np.int64)
        self.joints = np.zeros(n_joints)
        self.joint_vel = np.zeros(n_joints)
        self.base = np.zeros(3)  # x, y, yaw
        self.held = -1
        self.held_offset = np.array([0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0])  # pos + quat
        self.held_joint = -1
        self.grab_q = 0.0
        self.grab_ee = np.zeros(3)
        self.rider_joint = np.full(n_bodies, -1, dtype=np.int64)
        self.rider_offset = np.zeros((n_bodies, 7))
        self.accumulated_contact_force = 0.0
        self.time = 0.0
        self.step_index = 0

    @property
    def n_bodies(self) -> int:
        return len(self.pos)

    def clone(self) -> "WorldState":
        out = WorldState(self.n_bodies, len(self.joints))
        for name in self.__slots__:
            v = getattr(self, name)
            setattr(out, name, v.copy() if isinstance(v, np.ndarray) else v)
        return out

    def body_pose(self, body: int) -> Pose:
        return Pose.from_quat(self.pos[body], self.quat[body])

    def set_body_pose(self, body: int, pose: Pose):
        self.pos[body] = pose.pos
        self.quat[body] = pose.quat()
        self.version[body] = _next_version()

    # -- serialization ------------------------------------------------------

    def to_bytes(self) -> bytes:
        head = _SNAP_MAGIC + struct.pack("<III", _SNAP_VERSION, self.n_bodies, len(self.joints))
        tail = struct.pack(
            "<iidddq",
            self.held,
            self.held_joint,
            self.grab_q,
            self.accumulated_contact_force,
            self.time,
            self.step_index,
        )
        arrays = [
            self.pos, self.quat, self.lin_vel, self.ang_vel,
            self.asleep.astype(np.uint8), self.sleep_counter,
            self.joints, self.joint_vel, self.base, self.held_offset, self.grab_ee,
            self.rider_joint, self.rider_offset,
        ]
        return head + b"".join(np.ascontiguousarray(a).tobytes() for a in arrays) + tail

    @classmethod
    def from_bytes(cls, blob: bytes) -> "WorldState":
        if blob[:4] != _SNAP_MAGIC:
            raise PhysicsFault("bad snapshot magic")
        ver, nb, nj = struct.unpack("<III", blob[4:16])
        if ver != _SNAP_VERSION:
            raise PhysicsFault(f"unsupported snapshot version {ver}")
        out = cls(nb, nj)
        off = 16

        def take(shape, dtype=np.float64):
            nonlocal off
            n = int(np.prod(shape)) * np.dtype(dtype).itemsize
            arr = np.frombuffer(blob[off : off + n], dtype=dtype).reshape(shape).copy()
            off += n
            return arr

        out.pos = take((nb, 3))
        out.quat = take((nb, 4))
        out.lin_vel = take((nb, 3))
        out.ang_vel = take((nb, 3))
        out.asleep = take((nb,), np.uint8).astype(bool)
        out.sleep_counter = take((nb,), np.int64)
        out.joints = take((nj,))
        out.joint_vel = take((nj,))
        out.base = take((3,))
        out.held_offset = take((7,))
        out.grab_ee = take((3,))
        out.rider_joint = take((nb,), np.int64)
        out.rider_offset = take((nb, 7))
        held, held_joint, grab_q, acc, t, step = struct.unpack("<iidddq", blob[off : off + 40])
        out.held, out.held_joint = held, held_joint
        out.grab_q = grab_q
        out.accumulated_contact_force = acc
        out.time = t
        out.step_index = step
        out.version[:] = [_next_version() for _ in range(nb)]
        return out

    def state_hash(self) -> str:
        return hashlib.sha256(self.to_bytes()).hexdigest()


@dataclass
class BodyInfo:
    body_id: int
    name: str
    parts: geo.Parts
    kind: str  # static | kinematic | dynamic
    mass: float
    inv_mass: float
    com_local: np.ndarray
    inv_inertia_local: np.ndarray
    friction: float
    restitution: float
    is_robot: bool = False
    scene_joint: int = -1  # articulation mover: index of its driving joint
    asset_id: str = ""
    category: str = ""


def _body_from_asset(body_id, name, asset: AssetDef, kind: str) -> BodyInfo:
    if kind == "dynamic":
        com, inertia = geo.parts_mass_properties(asset.collision_proxy, asset.mass)
        inv_mass = 1.0 / asset.mass
        inv_inertia = np.linalg.inv(inertia)
    else:
        com = np.zeros(3)
        inv_mass = 0.0
        inv_inertia = np.zeros((3, 3))
    return BodyInfo(
        body_id=body_id,
        name=name,
        parts=asset.collision_proxy,
        kind=kind,
        mass=asset.mass,
        inv_mass=inv_mass,
        com_local=com,
        inv_inertia_local=inv_inertia,
        friction=asset.friction,
        restitution=asset.restitution,
        asset_id=asset.asset_id,
        category=asset.category,
    )


class Simulator:
    """Owns the immutable body tables for one scene + robot + clutter set and
    steps WorldStates. One WorldState is stepped by one simulator at a time;
    clone() both to plan on a private copy."""

    def __init__(
        self,
        scene: SceneHandle,
        robot_model: rb.RobotModel | None,
        clutter: list[tuple[AssetDef, str]] | None = None,
        config: PhysicsConfig | None = None,
    ):
        self.scene = scene
        self.robot = robot_model
        self.config = config or PhysicsConfig()
        self.counters: dict[str, int] = {
            "narrowphase_tests": 0,
            "skipped_sleeping_pairs": 0,
            "wakes": 0,
            "transform_recomputes": 0,
            "bvh_rebuilds": 0,
            "ik_failures": 0,
        }
        self.bodies: list[BodyInfo] = []
        joint_map: dict[int, int] = {}
        for i, sj in enumerate(scene.joints):
            joint_map[sj.body_id] = i
        for rec in scene.bodies:
            info = _body_from_asset(rec.body_id, rec.name, rec.asset, rec.kind)
            if rec.body_id in joint_map:
                info.scene_joint = joint_map[rec.body_id]
            self.bodies.append(info)
        self.n_scene_bodies = len(self.bodies)

        self.robot_body_ids: list[int] = []
        if robot_model is not None:
            base_info = BodyInfo(
                body_id=len(self.bodies), name="robot:base", parts=robot_model.base_proxy,
                kind="kinematic", mass=0.0, inv_mass=0.0, com_local=np.zeros(3),
                inv_inertia_local=np.zeros((3, 3)), friction=0.5, restitution=0.0,
                is_robot=True, asset_id="robot:base",
            )
            self.bodies.append(base_info)
            self.robot_body_ids.append(base_info.body_id)
            for i, jd in enumerate(robot_model.joints):
                info = BodyInfo(
                    body_id=len(self.bodies), name=f"robot:link{i}", parts=jd.proxy,
                    kind="kinematic", mass=0.0, inv_mass=0.0, com_local=np.zeros(3),
                    inv_inertia_local=np.zeros((3, 3)), friction=0.5, restitution=0.0,
                    is_robot=True, asset_id=f"robot:link{i}",
                )
                self.bodies.append(info)
                self.robot_body_ids.append(info.body_id)

        self.clutter_body_ids: list[int] = []
        for asset, name in clutter or []:
            info = _body_from_asset(len(self.bodies), name, asset, "dynamic")
            self.bodies.append(info)
            self.clutter_body_ids.append(info.body_id)

        self.n_bodies = len(self.bodies)
        self.n_scene_joints = len(scene.joints)
        self.arm_dof = robot_model.dof if robot_model else 0
        self.n_joints = self.n_scene_joints + self.arm_dof
        self._robot_set = set(self.robot_body_ids)
        self._same_group = self._build_groups()
        self._aabb_cache: dict[int, tuple[int, np.ndarray, np.ndarray]] = {}
        self._impulse_budget = np.zeros(self.arm_dof)

    def _build_groups(self) -> dict[int, int]:
        """Bodies in the same group never collide (robot self, one
        articulation instance)."""
        groups: dict[int, int] = {}
        for rec in self.scene.bodies:
            if rec.furniture_index is not None and rec.articulation_part is not None:
                groups[rec.body_id] = 1 + rec.furniture_index
        for bid in self.robot_body_ids:
            groups[bid] = -1
        return groups

    @property
    def joint_ids(self) -> list[str]:
        ids = [sj.joint_id for sj in self.scene.joints]
        if self.robot:
            ids += [f"arm:{j.name}" for j in self.robot.joints]
        return ids

    def arm_slice(self) -> slice:
        return slice(self.n_scene_joints, self.n_scene_joints + self.arm_dof)

    # ------------------------------------------------------------------ state

    def make_initial_state(
        self,
        clutter_poses: list[Pose] | None = None,
        articulations: dict[str, float] | None = None,
        base: np.ndarray | None = None,
        arm_joints: np.ndarray | None = None,
        clutter_asleep: bool = True,
    ) -> WorldState:
        state = WorldState(self.n_bodies, self.n_joints)
        for rec in self.scene.bodies:
            state.pos[rec.body_id] = rec.initial_pose.pos
            state.quat[rec.body_id] = rec.initial_pose.quat()
        for joint_id, q in (articulations or {}).items():
            sj = self.scene.joint_by_id(joint_id)
            idx = self.scene.joints.index(sj)
            lo, hi = sj.joint.limits
            state.joints[idx] = min(max(q, lo), hi)
        self._update_scene_joint_poses(state, range(self.n_scene_joints), 0.0)
        if self.robot is not None:
            state.base = np.asarray(
                base if base is not None else np.zeros(3), dtype=float
            ).copy()
            q = arm_joints if arm_joints is not None else self.robot.resting_joints
            state.joints[self.arm_slice()] = q
            self._update_robot_link_poses(state, 0.0)
        poses = clutter_poses or []
        if len(poses) != len(self.clutter_body_ids):
            raise PhysicsFault(
                f"expected {len(self.clutter_body_ids)} clutter poses, got {len(poses)}"
            )
        for bid, pose in zip(self.clutter_body_ids, poses):
            state.pos[bid] = pose.pos
            state.quat[bid] = pose.quat()
            state.asleep[bid] = clutter_asleep
        state.version[:] = [_next_version() for _ in range(self.n_bodies)]
        if clutter_asleep:
            self._bind_riders(state)
        return state

    def _bind_riders(self, state: WorldState):
        """Attach settled clutter inside a moving container part to its joint."""
        for bid in self.clutter_body_ids:
            if not state.asleep[bid]:
                continue
            com = state.body_pose(bid).apply(self.bodies[bid].com_local)
            for rec in self.scene.receptacles.values():
                owner = rec.owner_body
                mover_joint = self.bodies[owner].scene_joint
                if mover_joint < 0:
                    continue
                owner_pose = state.body_pose(owner)
                for box in rec.boxes:
                    if box.kind != "inside":
                        continue
                    local = owner_pose.inverse().apply(com)
                    if np.all(np.abs(local - box.center) <= box.half_extents + 1e-6):
                        state.rider_joint[bid] = mover_joint
                        rel = owner_pose.inverse().compose(state.body_pose(bid))
                        state.rider_offset[bid] = np.concatenate([rel.pos, rel.quat()])
                        break
                if state.rider_joint[bid] >= 0:
                    break

    # ------------------------------------------------------------- kinematics

    def ee_pose(self, state: WorldState) -> Pose:
        if self.robot is None:
            raise PhysicsFault("no robot in this simulator")
        _, ee = rb.link_poses(self.robot, state.joints[self.arm_slice()], state.base)
        return ee

    def _update_robot_link_poses(self, state: WorldState, dt: float):
        links, _ = rb.link_poses(self.robot, state.joints[self.arm_slice()], state.base)
        base_pose = rb.base_pose3(state.base)
        all_poses = [base_pose] + links
        for bid, pose in zip(self.robot_body_ids, all_poses):
            old_pos = state.pos[bid].copy()
            old_quat = state.quat[bid].copy()
            new_quat = pose.quat()
            if np.array_equal(old_pos, pose.pos) and np.array_equal(old_quat, new_quat):
                if dt > 0:
                    state.lin_vel[bid] = 0.0
                    state.ang_vel[bid] = 0.0
                continue
            state.pos[bid] = pose.pos
            state.quat[bid] = new_quat
            state.version[bid] = _next_version()
            if dt > 0:
                state.lin_vel[bid] = (pose.pos - old_pos) / dt
                state.ang_vel[bid] = _quat_delta_omega(old_quat, new_quat, dt)

    def _update_scene_joint_poses(self, state: WorldState, joint_indices, dt: float):
        moved = []
        for ji in joint_indices:
            sj = self.scene.joints[ji]
            parent_pose = state.body_pose(sj.parent_body)
            pose = sj.child_pose(parent_pose, float(state.joints[ji]))
            bid = sj.body_id
            old_pos = state.pos[bid].copy()
            old_quat = state.quat[bid].copy()
            new_quat = pose.quat()
            if np.array_equal(old_pos, pose.pos) and np.array_equal(old_quat, new_quat):
                continue
            state.pos[bid] = pose.pos
            state.quat[bid] = new_quat
            state.version[bid] = _next_version()
            if dt > 0:
                state.lin_vel[bid] = (pose.pos - old_pos) / dt
                state.ang_vel[bid] = _quat_delta_omega(old_quat, new_quat, dt)
            moved.append(ji)
        # riders follow their container part, still asleep
        if moved:
            moved_set = set(moved)
            for bid in self.clutter_body_ids:
                rj = int(state.rider_joint[bid])
                if rj in moved_set and state.asleep[bid]:
                    sj = self.scene.joints[rj]
                    part_pose = state.body_pose(sj.body_id)
                    rel = Pose.from_quat(state.rider_offset[bid][:3], state.rider_offset[bid][3:])
                    # rider_offset is stored in the part's frame
                    new_pose = part_pose.compose(rel)
                    state.pos[bid] = new_pose.pos
                    state.quat[bid] = new_pose.quat()
                    state.version[bid] = _next_version()

    # -------------------------------------------------------------- wake/sleep

    def wake(self, state: WorldState, body: int):
        if self.bodies[body].kind != "dynamic":
            return
        if state.asleep[body]:
            self.counters["wakes"] += 1
        state.asleep[body] = False
        state.sleep_counter[body] = 0
        state.rider_joint[body] = -1

    def _wake_all(self, state: WorldState):
        for bid in range(self.n_bodies):
            if self.bodies[bid].kind == "dynamic" and state.asleep[bid]:
                state.asleep[bid] = False
                state.sleep_counter[bid] = 0
                state.rider_joint[bid] = -1

    # -------------------------------------------------------------- broadphase

    def body_aabb(self, state: WorldState, body: int):
        cached = self._aabb_cache.get(body)
        ver = int(state.version[body])
        if cached is not None and cached[0] == ver:
            return cached[1], cached[2]
        lo, hi = geo.parts_aabb(self.bodies[body].parts, state.body_pose(body))
        self._aabb_cache[body] = (ver, lo, hi)
        return lo, hi

    def _broadphase_pairs(self, state: WorldState):
        """Sweep-and-prune on x, then y/z overlap, then admission rules.

        Kinematic AABBs are inflated by the wake margin, so a (kinematic,
        sleeping) overlap means the mover entered the sleeper's wake radius.
        """
        cfg = self.config
        kinds = self.bodies
        sleeping = state.asleep
        entries = []
        for bid in range(self.n_bodies):
            lo, hi = self.body_aabb(state, bid)
            if kinds[bid].kind == "kinematic":
                lo = lo - cfg.wake_margin
                hi = hi + cfg.wake_margin
            entries.append((float(lo[0]), float(hi[0]), lo, hi, bid))
        entries.sort(key=lambda e: (e[0], e[4]))
        pairs = []
        active: list[tuple[float, np.ndarray, np.ndarray, int]] = []
        for x0, x1, lo, hi, bid in entries:
            active = [a for a in active if a[0] >= x0]
            for _, alo, ahi, abid in active:
                if (
                    lo[1] <= ahi[1] and alo[1] <= hi[1]
                    and lo[2] <= ahi[2] and alo[2] <= hi[2]
                ):
                    pairs.append((min(bid, abid), max(bid, abid)))
            active.append((x1, lo, hi, bid))
        pairs.sort()

        admitted = []
        for a, b in pairs:
            ka, kb = kinds[a], kinds[b]
            ga = self._same_group.get(a)
            gb = self._same_group.get(b)
            if ga is not None and ga == gb:
                continue
            dyn_a = ka.kind == "dynamic"
            dyn_b = kb.kind == "dynamic"
            kin_a = ka.kind == "kinematic"
            kin_b = kb.kind == "kinematic"
            if not dyn_a and not dyn_b:
                if ka.kind == "static" and kb.kind == "static":
                    continue
                # static/kinematic combination: only robot-involved or jointed
                # kinematic pairs matter (contact events / joint push response)
                robot_involved = ka.is_robot or kb.is_robot or a == state.held or b == state.held
                jointed = ka.scene_joint >= 0 or kb.scene_joint >= 0
                if robot_involved or jointed:
                    admitted.append((a, b))
                continue
            asleep_a = dyn_a and bool(sleeping[a])
            asleep_b = dyn_b and bool(sleeping[b])
            if asleep_a and asleep_b:
                self.counters["skipped_sleeping_pairs"] += 1
                continue
            if (asleep_a and kb.kind == "static") or (asleep_b and ka.kind == "static"):
                self.counters["skipped_sleeping_pairs"] += 1
                continue
            # a sleeping rider ignores its own container part entirely
            if asleep_a and kin_b and state.rider_joint[a] == kb.scene_joint >= 0:
                continue
            if asleep_b and kin_a and state.rider_joint[b] == ka.scene_joint >= 0:
                continue
            # the robot's proxies wake sleepers inside their wake radius;
            # articulation movers only wake through actual contact
            robot_kin_b = kin_b and (kb.is_robot or b == state.held)
            robot_kin_a = kin_a and (ka.is_robot or a == state.held)
            if asleep_a and robot_kin_b:
                self.wake(state, a)
            if asleep_b and robot_kin_a:
                self.wake(state, b)
            admitted.append((a, b))
        return admitted

    # -------------------------------------------------------------- stepping

    def step_physics(
        self,
        state: WorldState,
        targets: rb.JointTargets | None,
        dt: float = 1.0 / 30.0,
        substeps: int = 4,
    ) -> tuple[WorldState, list[ContactEvent]]:
        """Advance one control step (`substeps` equal substeps over `dt`)."""
        if dt <= 0 or substeps < 1:
            raise PhysicsFault(f"bad step parameters dt={dt} substeps={substeps}")
        self._check_finite(state)
        state = state.clone()
        events: list[ContactEvent] = []
        dt_sub = dt / substeps
        self._impulse_budget[:] = self.config.motor_impulse_cap
        for _ in range(substeps):
            self._substep(state, targets, dt_sub, events)
        state.time += dt
        state.step_index += 1
        return state, events

    def _check_finite(self, state: WorldState):
        for name, arr in (("pos", state.pos), ("quat", state.quat), ("vel", state.lin_vel)):
            bad = ~np.isfinite(arr).all(axis=1)
            if bad.any():
                bid = int(np.nonzero(bad)[0][0])
                raise PhysicsFault(
                    f"non-finite {name} for body {bid} ({self.bodies[bid].name})"
                )
        if not np.isfinite(state.joints).all():
            ji = int(np.nonzero(~np.isfinite(state.joints))[0][0])
            raise PhysicsFault(f"non-finite joint position: {self.joint_ids[ji]}")

    def _drive_arm(self, state: WorldState, targets: rb.JointTargets, dt: float):
        cfg = self.config
        sl = self.arm_slice()
        q = state.joints[sl]
        err = np.asarray(targets.arm, dtype=float) - q
        v_des = cfg.kp * err / dt
        if cfg.impulse_cap_per_control_step:
            cap = self._impulse_budget
            v = np.clip(v_des, -cap, cap)
            self._impulse_budget = cap - np.abs(v)
        else:
            v = np.clip(v_des, -cfg.motor_impulse_cap, cfg.motor_impulse_cap)
        lo, hi = self.robot.limits_lo(), self.robot.limits_hi()
        state.joints[sl] = np.clip(q + v * dt, lo, hi)

    def _drag_held_joint(self, state: WorldState, dt: float):
        """Move a grasped handle's joint by the EE displacement since the grab,
        projected onto the joint's motion coordinate."""
        ji = state.held_joint
        sj = self.scene.joints[ji]
        jd = sj.joint
        parent_pose = state.body_pose(sj.parent_body)
        joint_frame = parent_pose.compose(jd.origin)
        ee = self.ee_pose(state).pos
        if jd.joint_type == "prismatic":
            axis_w = joint_frame.rot @ jd.axis
            q_new = state.grab_q + float(axis_w @ (ee - state.grab_ee))
        else:
            axis_w = joint_frame.rot @ jd.axis
            anchor = joint_frame.pos
            ref = state.grab_ee - anchor
            cur = ee - anchor
            ref = ref - axis_w * float(axis_w @ ref)
            cur = cur - axis_w * float(axis_w @ cur)
            nr = float(np.linalg.norm(ref))
            nc = float(np.linalg.norm(cur))
            if nr < 1e-9 or nc < 1e-9:
                return
            cosang = float(np.clip((ref @ cur) / (nr * nc), -1.0, 1.0))
            sign = float(axis_w @ geo.cross3(ref, cur))
            delta = math.acos(cosang) * (1.0 if sign >= 0 else -1.0)
            q_new = state.grab_q + delta
        lo, hi = jd.limits
        q_new = min(max(q_new, lo), hi)
        old = float(state.joints[ji])
        if q_new != old:
            state.joints[ji] = q_new
            state.joint_vel[ji] = (q_new - old) / dt if dt > 0 else 0.0

    def _substep(self, state: WorldState, targets, dt: float, events: list[ContactEvent]):
        cfg = self.config
        if not cfg.sleeping_enabled:
            self._wake_all(state)

        if self.robot is not None and targets is not None:
            state.base = rb.move_base(state.base, self.scene.navgrid, targets.base, dt)
            self._drive_arm(state, targets, dt)
            self._update_robot_link_poses(state, dt)
        dragged = -1
        if state.held_joint >= 0:
            dragged = state.held_joint
            self._drag_held_joint(state, dt)
            self._update_scene_joint_poses(state, [dragged], dt)
        if state.held >= 0 and state.held_joint < 0:
            held_pose = self.ee_pose(state).compose(
                Pose.from_quat(state.held_offset[:3], state.held_offset[3:])
            )
            bid = state.held
            old_pos = state.pos[bid].copy()
            old_quat = state.quat[bid].copy()
            new_quat = held_pose.quat()
            if not (np.array_equal(old_pos, held_pose.pos) and np.array_equal(old_quat, new_quat)):
                state.pos[bid] = held_pose.pos
                state.quat[bid] = new_quat
                state.version[bid] = _next_version()
                state.lin_vel[bid] = (held_pose.pos - old_pos) / dt
                state.ang_vel[bid] = _quat_delta_omega(old_quat, new_quat, dt)

        # gravity + damping on awake dynamics (held body is driven, not free)
        awake_dyn = [
            b.body_id
            for b in self.bodies
            if b.kind == "dynamic" and not state.asleep[b.body_id] and b.body_id != state.held
        ]
        for bid in awake_dyn:
            state.lin_vel[bid][2] -= cfg.gravity * dt
            state.lin_vel[bid] *= cfg.lin_damping
            state.ang_vel[bid] *= cfg.ang_damping

        pairs = self._broadphase_pairs(state)
        contacts = self._narrowphase(state, pairs)
        joint_dv = self._solve_contacts(state, contacts, dt, events)
        self._integrate(state, awake_dyn, contacts, dt)
        self._advance_scene_joints(state, joint_dv, dragged, dt)

    def _narrowphase(self, state: WorldState, pairs):
        out = []
        for a, b in pairs:
            self.counters["narrowphase_tests"] += 1
            ca = geo.parts_contacts(
                self.bodies[a].parts, state.body_pose(a),
                self.bodies[b].parts, state.body_pose(b),
                margin=self.config.contact_margin,
            )
            if not ca:
                continue
            # a contact from an active body wakes a sleeping partner
            for bid in (a, b):
                if self.bodies[bid].kind == "dynamic" and state.asleep[bid]:
                    self.wake(state, bid)
            out.append((a, b, ca))
        return out

    @staticmethod
    def _block_matrix(rows, idxs):
        """Effective-mass matrix K over one pair's contacts (any normals).

        K[i][j] = change in contact i's normal velocity per unit impulse at
        contact j; symmetric PSD.
        """
        m = len(idxs)
        ns = [np.array(rows[i].n) for i in idxs]
        ras = [np.array(rows[i].r_a) for i in idxs]
        rbs = [np.array(rows[i].r_b) for i in idxs]
        r0 = rows[idxs[0]]
        inv_m_a, inv_m_b = r0.inv_m_a, r0.inv_m_b
        inv_i_a = np.array(r0.inv_i_a)
        inv_i_b = np.array(r0.inv_i_b)
        lever_a = [geo.cross3(ras[i], ns[i]) for i in range(m)]
        lever_b = [geo.cross3(rbs[i], ns[i]) for i in range(m)]
        kmat = np.empty((m, m))
        for i in range(m):
            for j in range(i, m):
                val = (inv_m_a + inv_m_b) * float(ns[i] @ ns[j])
                if inv_m_a > 0.0:
                    val += float(lever_a[i] @ (inv_i_a @ lever_a[j]))
                if inv_m_b > 0.0:
                    val += float(lever_b[i] @ (inv_i_b @ lever_b[j]))
                ri, rj = rows[idxs[i]], rows[idxs[j]]
                if ri.ja is not None and rj.ja is not None and ri.ja[0] == rj.ja[0]:
                    jn_i = sum(ri.ja[1][k] * ri.n[k] for k in range(3))
                    jn_j = sum(rj.ja[1][k] * rj.n[k] for k in range(3))
                    val += jn_i * jn_j * ri.ja[2]
                if ri.jb is not None and rj.jb is not None and ri.jb[0] == rj.jb[0]:
                    jn_i = sum(ri.jb[1][k] * ri.n[k] for k in range(3))
                    jn_j = sum(rj.jb[1][k] * rj.n[k] for k in range(3))
                    val += jn_i * jn_j * ri.jb[2]
                kmat[i, j] = val
                kmat[j, i] = val
        # tiny Tikhonov term keeps degenerate manifolds solvable
        return kmat + 1e-9 * np.eye(m)

    def _solve_block(self, rows, idxs, kmat, joint_dv):
        """Exact complementarity solve for one same-normal group.

        Finds total impulses lam >= 0 with post-impulse normal velocity
        >= target, complementary, via a deterministic active-set loop.
        """
        m = len(idxs)
        cur = np.array([rows[i].lam_n for i in idxs])
        resid = np.empty(m)
        for ii, i in enumerate(idxs):
            row = rows[i]
            resid[ii] = row.rel_normal_vel(joint_dv) - row.target
        # w(lam) = K lam + q with q chosen so w(cur) = resid
        q = resid - kmat @ cur
        active = [ii for ii in range(m) if cur[ii] > 0.0 or resid[ii] < 0.0]
        lam = np.zeros(m)
        converged = False
        for _ in range(4 * m + 4):
            if active:
                sub = kmat[np.ix_(active, active)]
                # minimum-norm solve: coplanar manifolds make K rank-deficient
                # and an exact solve would return huge alternating impulses
                sol, *_ = np.linalg.lstsq(sub, -q[active], rcond=1e-8)
                lam[:] = 0.0
                lam[active] = sol
            else:
                lam[:] = 0.0
            neg = [ii for ii in active if lam[ii] < -1e-10]
            if neg:
                worst = min(neg, key=lambda ii: (lam[ii], ii))
                active.remove(worst)
                continue
            w = kmat @ lam + q
            violated = [ii for ii in range(m) if ii not in active and w[ii] < -1e-10]
            if violated:
                worst = min(violated, key=lambda ii: (w[ii], ii))
                active.append(worst)
                active.sort()
                continue
            converged = True
            break
        if not converged:
            # fall back to sequential per-row impulses for this group
            for i in idxs:
                rows[i].solve(joint_dv)
            return
        np.maximum(lam, 0.0, out=lam)
        for ii, i in enumerate(idxs):
            row = rows[i]
            d = float(lam[ii]) - row.lam_n
            row.lam_n = float(lam[ii])
            if d != 0.0:
                n = row.n
                row._apply(n[0] * d, n[1] * d, n[2] * d, joint_dv)
        # friction per row, after the block's normal impulses
        for i in idxs:
            rows[i].solve_friction(joint_dv)

    def _body_solver_data(self, state, bid):
        info = self.bodies[bid]
        pose = state.body_pose(bid)
        com = pose.apply(info.com_local)
        if info.kind == "dynamic" and not state.asleep[bid] and bid != state.held:
            inv_inertia_w = pose.rot @ info.inv_inertia_local @ pose.rot.T
            return info.inv_mass, inv_inertia_w, com
        return 0.0, np.zeros((3, 3)), com

    def _joint_jacobian(self, state, bid, point):
        """(joint index, J, inv generalized inertia) for an articulation mover."""
        ji = self.bodies[bid].scene_joint
        if ji < 0 or state.held_joint == ji:
            return None
        sj = self.scene.joints[ji]
        jd = sj.joint
        parent_pose = state.body_pose(sj.parent_body)
        joint_frame = parent_pose.compose(jd.origin)
        axis_w = joint_frame.rot @ jd.axis
        if jd.joint_type == "prismatic":
            jac = axis_w
            inv_inertia = 1.0 / self.config.joint_inertia_prismatic
        else:
            anchor = joint_frame.pos
            jac = geo.cross3(axis_w, point - anchor)
            inv_inertia = 1.0 / self.config.joint_inertia_revolute
        return ji, jac, inv_inertia

    def _solve_contacts(self, state, contacts, dt, events):
        """Gauss-Seidel impulse sweeps over all contact rows.

        The inner loop runs on plain Python floats: per-row 3-vector algebra in
        numpy costs ~10x more than the arithmetic itself at this scale.
        """
        cfg = self.config
        rows = []
        joint_dv = np.zeros(self.n_scene_joints)
        vel: dict[int, list[float]] = {}

        def body_vel(bid):
            v = vel.get(bid)
            if v is None:
                lv, av = state.lin_vel[bid], state.ang_vel[bid]
                v = [lv[0], lv[1], lv[2], av[0], av[1], av[2]]
                vel[bid] = v
            return v

        for a, b, clist in contacts:
            inv_m_a, inv_i_a, com_a = self._body_solver_data(state, a)
            inv_m_b, inv_i_b, com_b = self._body_solver_data(state, b)
            info_a, info_b = self.bodies[a], self.bodies[b]
            mu = math.sqrt(info_a.friction * info_b.friction)
            e = max(info_a.restitution, info_b.restitution)
            va = body_vel(a)
            vb = body_vel(b)
            for c in clist:
                n = c.normal
                r_a = c.point - com_a
                r_b = c.point - com_b
                k = inv_m_a + inv_m_b
                k += float(n @ geo.cross3(inv_i_a @ geo.cross3(r_a, n), r_a))
                k += float(n @ geo.cross3(inv_i_b @ geo.cross3(r_b, n), r_b))
                ja = self._joint_jacobian(state, a, c.point)
                jb = self._joint_jacobian(state, b, c.point)
                if ja is not None:
                    k += (float(ja[1] @ n) ** 2) * ja[2]
                if jb is not None:
                    k += (float(jb[1] @ n) ** 2) * jb[2]
                t1 = _tangent(n, 0)
                t2 = _tangent(n, 1)
                row = _ContactRow(
                    a, b, va, vb,
                    (float(n[0]), float(n[1]), float(n[2])),
                    (float(t1[0]), float(t1[1]), float(t1[2])),
                    (float(t2[0]), float(t2[1]), float(t2[2])),
                    (float(r_a[0]), float(r_a[1]), float(r_a[2])),
                    (float(r_b[0]), float(r_b[1]), float(r_b[2])),
                    float(k), float(mu), float(inv_m_a), float(inv_m_b),
                    inv_i_a.tolist(), inv_i_b.tolist(),
                    None if ja is None else (int(ja[0]), tuple(float(x) for x in ja[1]), float(ja[2])),
                    None if jb is None else (int(jb[0]), tuple(float(x) for x in jb[1]), float(jb[2])),
                    c.point, float(c.depth),
                )
                vn_pre = row.rel_normal_vel(joint_dv)
                row.vn_pre = vn_pre
                separation = max(-float(c.depth), 0.0)
                if separation > 0.0:
                    # speculative contact: allow closing the gap within one
                    # substep, block anything faster; no friction at distance
                    row.target = -separation / dt
                    row.friction_on = False
                else:
                    row.target = -e * vn_pre if vn_pre < -cfg.restitution_threshold else 0.0
                rows.append(row)
        if not rows:
            return joint_dv

        # All rows of one body pair solve as a block LCP: simultaneous
        # impulses keep resting manifolds symmetric (flat-dropped boxes stay
        # flat, leaning pairs reach static equilibrium), which sequential
        # sweeps alone do not guarantee.
        groups: dict[tuple, list[int]] = {}
        for i, row in enumerate(rows):
            key = (row.body_a, row.body_b)
            groups.setdefault(key, []).append(i)
        blocks = []
        for key in sorted(groups):
            idxs = groups[key]
            if len(idxs) > 1 and rows[idxs[0]].k > 0.0:
                blocks.append((idxs, self._block_matrix(rows, idxs)))
            else:
                blocks.append((idxs, None))

        for _ in range(cfg.solver_iterations):
            for idxs, kmat in blocks:
                if kmat is None:
                    for i in idxs:
                        rows[i].solve(joint_dv)
                else:
                    self._solve_block(rows, idxs, kmat, joint_dv)

        for bid, v in vel.items():
            if self.bodies[bid].kind == "dynamic" and not state.asleep[bid] and bid != state.held:
                state.lin_vel[bid] = np.array(v[:3])
                state.ang_vel[bid] = np.array(v[3:])

        for row in rows:
            lam = row.lam_n
            if row.k <= 0.0:
                # neither side responds (robot link vs static): register the
                # impulse that would stop the approach of a 1 kg reference mass
                lam = max(-row.vn_pre, 0.0)
            if lam <= 0.0:
                continue
            force = lam / dt
            a, b = row.body_a, row.body_b
            info_a, info_b = self.bodies[a], self.bodies[b]
            events.append(
                ContactEvent(bodies=(a, b), impulse=lam, force=force, point=row.point.copy())
            )
            if info_a.is_robot or info_b.is_robot or a == state.held or b == state.held:
                state.accumulated_contact_force += force
        return joint_dv

    def _integrate(self, state, awake_dyn, contacts, dt):
        cfg = self.config
        # positional correction: average the per-contact pushes per body, so a
        # four-vertex resting manifold pushes out once, not four times
        corrections: dict[int, np.ndarray] = {}
        corr_counts: dict[int, int] = {}
        for a, b, clist in contacts:
            inv_m_a = self.bodies[a].inv_mass if not state.asleep[a] and a != state.held else 0.0
            inv_m_b = self.bodies[b].inv_mass if not state.asleep[b] and b != state.held else 0.0
            total = inv_m_a + inv_m_b
            if total <= 0.0:
                continue
            for c in clist:
                push = cfg.correction_factor * max(c.depth - cfg.slop, 0.0)
                if push <= 0.0:
                    continue
                if inv_m_a > 0.0:
                    corrections.setdefault(a, np.zeros(3))
                    corrections[a] += c.normal * (push * inv_m_a / total)
                    corr_counts[a] = corr_counts.get(a, 0) + 1
                if inv_m_b > 0.0:
                    corrections.setdefault(b, np.zeros(3))
                    corrections[b] -= c.normal * (push * inv_m_b / total)
                    corr_counts[b] = corr_counts.get(b, 0) + 1
        for bid, count in corr_counts.items():
            if count > 1:
                corrections[bid] /= count

        for bid in awake_dyn:
            lin = float(np.linalg.norm(state.lin_vel[bid]))
            ang = float(np.linalg.norm(state.ang_vel[bid]))
            below = lin < cfg.sleep_lin_threshold and ang < cfg.sleep_ang_threshold
            corr = corrections.get(bid)
            if corr is not None and float(corr @ corr) < 1e-14:
                corr = None  # asymptotic tail of the push-out, treat as rest
            if below and cfg.sleeping_enabled and corr is None:
                # sub-threshold motion is treated as rest: freeze to avoid drift
                state.sleep_counter[bid] += 1
                if state.sleep_counter[bid] >= cfg.sleep_substeps:
                    state.asleep[bid] = True
                    state.lin_vel[bid] = 0.0
                    state.ang_vel[bid] = 0.0
                continue
            state.sleep_counter[bid] = 0
            state.pos[bid] = state.pos[bid] + state.lin_vel[bid] * dt
            if ang > 0.0:
                state.quat[bid] = geo.quat_integrate(state.quat[bid], state.ang_vel[bid], dt)
            if corr is not None:
                state.pos[bid] += corr
            state.version[bid] = _next_version()

    def _advance_scene_joints(self, state, joint_dv, dragged, dt):
        cfg = self.config
        moved = []
        for ji in range(self.n_scene_joints):
            if ji == dragged:
                continue
            state.joint_vel[ji] += joint_dv[ji]
            state.joint_vel[ji] *= cfg.joint_damping
            if abs(state.joint_vel[ji]) < 1e-4:
                state.joint_vel[ji] = 0.0
                continue
            sj = self.scene.joints[ji]
            lo, hi = sj.joint.limits
            q = float(state.joints[ji]) + state.joint_vel[ji] * dt
            if q <= lo:
                q, state.joint_vel[ji] = lo, 0.0
            elif q >= hi:
                q, state.joint_vel[ji] = hi, 0.0
            if q != float(state.joints[ji]):
                state.joints[ji] = q
                moved.append(ji)
        if moved:
            self._update_scene_joint_poses(state, moved, dt)

    # ------------------------------------------------------------- grasping

    def grasp_candidates(self, state: WorldState):
        """(distance, body id, handle joint id or None) for all graspable
        entities: dynamic clutter COMs and articulation handles."""
        ee = self.ee_pose(state).pos
        out = []
        for bid in self.clutter_body_ids:
            if bid == state.held:
                continue
            com = state.body_pose(bid).apply(self.bodies[bid].com_local)
            out.append((float(np.linalg.norm(ee - com)), bid, None))
        for ji, sj in enumerate(self.scene.joints):
            parent_pose = state.body_pose(sj.parent_body)
            h = sj.handle_world(parent_pose, float(state.joints[ji]))
            out.append((float(np.linalg.norm(ee - h)), sj.body_id, sj.joint_id))
        return out

    def apply_grasp(self, state: WorldState, transition: rb.GraspTransition):
        """Mutates `state` per a grasp transition (snap/release/none)."""
        if transition.kind == "snap":
            if transition.joint is not None:
                sj = self.scene.joint_by_id(transition.joint)
                state.held_joint = self.scene.joints.index(sj)
                state.held = transition.body
                state.grab_q = float(state.joints[state.held_joint])
                state.grab_ee = self.ee_pose(state).pos.copy()
            else:
                bid = transition.body
                self.wake(state, bid)
                ee = self.ee_pose(state)
                rel = ee.inverse().compose(state.body_pose(bid))
                state.held = bid
                state.held_offset = np.concatenate([rel.pos, rel.quat()])
                state.lin_vel[bid] = 0.0
                state.ang_vel[bid] = 0.0
        elif transition.kind == "release":
            if state.held >= 0 and state.held_joint < 0:
                bid = state.held
                state.asleep[bid] = False
                state.sleep_counter[bid] = 0
            state.held = -1
            state.held_joint = -1

    def held_body(self, state: WorldState) -> int | None:
        if state.held >= 0 and state.held_joint < 0:
            return state.held
        return None

    # ------------------------------------------------------------- queries

    def sphere_cast(self, state: WorldState, origin, direction, max_dist: float):
        """Nearest proxy hit along a unit ray: (body id, distance) or None."""
        direction = np.asarray(direction, dtype=float)
        if abs(float(np.linalg.norm(direction)) - 1.0) > 1e-6:
            raise PhysicsFault("sphere_cast direction must be unit length")
        origin = np.asarray(origin, dtype=float).reshape(1, 3)
        d = direction.reshape(1, 3)
        best = None
        for bid in range(self.n_bodies):
            t = float(geo.parts_ray_hits(self.bodies[bid].parts, state.body_pose(bid), origin, d)[0])
            if t <= max_dist and math.isfinite(t):
                if best is None or t < best[1]:
                    best = (bid, t)
        return best

    PARK_Z = 40.0  # unplaced clutter is parked asleep high above the scene

    def park_state(self) -> WorldState:
        """Initial state with every clutter body parked asleep in the air."""
        park = [
            Pose(pos=np.array([(-6.0 + 0.6 * i), 0.0, self.PARK_Z]))
            for i in range(len(self.clutter_body_ids))
        ]
        return self.make_initial_state(clutter_poses=park, clutter_asleep=True)

    def settle(
        self,
        placements: list[tuple[int, Pose]],
        max_time: float = 10.0,
        base_state: WorldState | None = None,
    ) -> tuple[list[tuple[int, Pose]], WorldState]:
        """Run physics until every placed body sleeps; returns (settled poses,
        final state).

        Placements must be collision-free with >= 1 mm clearance at spawn.
        Bodies already asleep whose placement equals their current pose are
        left untouched. Raises SettleUnstable when a body is still awake at
        max_time or falls below the scene floor.
        """
        state = base_state.clone() if base_state is not None else self.park_state()
        placed = [bid for bid, _ in placements]
        for bid, pose in placements:
            old = state.body_pose(bid)
            same = np.array_equal(old.pos, pose.pos) and np.array_equal(old.quat(), pose.quat())
            if same:
                continue
            state.set_body_pose(bid, pose)
            state.asleep[bid] = False
            state.sleep_counter[bid] = 0
            state.rider_joint[bid] = -1
            state.lin_vel[bid] = 0.0
            state.ang_vel[bid] = 0.0
        self._assert_spawn_clearance(state, placed)
        floor_limit = self.scene.floor_z - 0.5
        t = 0.0
        while t < max_time:
            state, _ = self.step_physics(state, None)
            t += 1.0 / 30.0
            for bid in placed:
                if state.pos[bid][2] < floor_limit:
                    raise SettleUnstable(
                        f"body {bid} ({self.bodies[bid].name}) fell below the floor"
                    )
            if all(state.asleep[bid] for bid in placed):
                return [(bid, state.body_pose(bid)) for bid in placed], state
        awake = [bid for bid in placed if not state.asleep[bid]]
        raise SettleUnstable(f"bodies still awake at {max_time}s: {awake}")

    def _assert_spawn_clearance(self, state, placed):
        margin = 1e-3
        for bid in placed:
            lo_a, hi_a = geo.parts_aabb(self.bodies[bid].parts, state.body_pose(bid))
            for other in range(self.n_bodies):
                if other == bid or other in self._robot_set:
                    continue
                if state.pos[other][2] > self.PARK_Z / 2:
                    continue  # parked, not yet placed
                lo_b, hi_b = self.body_aabb(state, other)
                if not geo.aabb_overlap(lo_a, hi_a, lo_b, hi_b, margin=margin):
                    continue
                d = geo.parts_distance(
                    self.bodies[bid].parts, state.body_pose(bid),
                    self.bodies[other].parts, state.body_pose(other),
                )
                if d < margin:
                    raise SettleUnstable(
                        f"placement for body {bid} ({self.bodies[bid].name}) has "
                        f"{d * 1000:.2f} mm clearance to body {other} ({self.bodies[other].name})"
                    )

    # ------------------------------------------------------------- energy

    def mechanical_energy(self, state: WorldState) -> float:
        """KE + PE of dynamic bodies (robot-free oracle scenes)."""
        total = 0.0
        for info in self.bodies:
            if info.kind != "dynamic" or info.inv_mass == 0.0:
                continue
            bid = info.body_id
            m = info.mass
            v2 = float(state.lin_vel[bid] @ state.lin_vel[bid])
            pose = state.body_pose(bid)
            inertia_w = pose.rot @ np.linalg.inv(info.inv_inertia_local) @ pose.rot.T
            w = state.ang_vel[bid]
            com = pose.apply(info.com_local)
            total += 0.5 * m * v2 + 0.5 * float(w @ (inertia_w @ w)) + m * self.config.gravity * com[2]
        return total


class _ContactRow:
    """One contact constraint in plain-float form for the GS sweeps.

    `va`/`vb` are shared 6-element [vx vy vz wx wy wz] lists, so impulses
    applied through one row are immediately visible to the others.
    """

    __slots__ = (
        "body_a", "body_b", "va", "vb", "n", "t1", "t2", "r_a", "r_b", "k", "mu",
        "inv_m_a", "inv_m_b", "inv_i_a", "inv_i_b", "ja", "jb", "point", "depth",
        "lam_n", "lam_t1", "lam_t2", "vn_pre", "target", "friction_on",
    )

    def __init__(self, a, b, va, vb, n, t1, t2, r_a, r_b, k, mu,
                 inv_m_a, inv_m_b, inv_i_a, inv_i_b, ja, jb, point, depth):
        self.body_a, self.body_b = a, b
        self.va, self.vb = va, vb
        self.n, self.t1, self.t2 = n, t1, t2
        self.r_a, self.r_b = r_a, r_b
        self.k, self.mu = k, mu
        self.inv_m_a, self.inv_m_b = inv_m_a, inv_m_b
        self.inv_i_a, self.inv_i_b = inv_i_a, inv_i_b
        self.ja, self.jb = ja, jb
        self.point, self.depth = point, depth
        self.lam_n = 0.0
        self.lam_t1 = 0.0
        self.lam_t2 = 0.0
        self.vn_pre = 0.0
        self.target = 0.0
        self.friction_on = True

    def _rel_vel(self, joint_dv):
        va, vb = self.va, self.vb
        rax, ray, raz = self.r_a
        rbx, rby, rbz = self.r_b
        ax = va[0] + va[4] * raz - va[5] * ray
        ay = va[1] + va[5] * rax - va[3] * raz
        az = va[2] + va[3] * ray - va[4] * rax
        bx = vb[0] + vb[4] * rbz - vb[5] * rby
        by = vb[1] + vb[5] * rbx - vb[3] * rbz
        bz = vb[2] + vb[3] * rby - vb[4] * rbx
        if self.ja is not None:
            ji, jac, _ = self.ja
            dv = joint_dv[ji]
            ax += jac[0] * dv
            ay += jac[1] * dv
            az += jac[2] * dv
        if self.jb is not None:
            ji, jac, _ = self.jb
            dv = joint_dv[ji]
            bx += jac[0] * dv
            by += jac[1] * dv
            bz += jac[2] * dv
        return ax - bx, ay - by, az - bz

    def rel_normal_vel(self, joint_dv) -> float:
        vx, vy, vz = self._rel_vel(joint_dv)
        n = self.n
        return vx * n[0] + vy * n[1] + vz * n[2]

    def _apply(self, ix, iy, iz, joint_dv):
        if self.inv_m_a > 0.0:
            va = self.va
            m = self.inv_m_a
            va[0] += ix * m
            va[1] += iy * m
            va[2] += iz * m
            rax, ray, raz = self.r_a
            tx = ray * iz - raz * iy
            ty = raz * ix - rax * iz
            tz = rax * iy - ray * ix
            ii = self.inv_i_a
            va[3] += ii[0][0] * tx + ii[0][1] * ty + ii[0][2] * tz
            va[4] += ii[1][0] * tx + ii[1][1] * ty + ii[1][2] * tz
            va[5] += ii[2][0] * tx + ii[2][1] * ty + ii[2][2] * tz
        if self.inv_m_b > 0.0:
            vb = self.vb
            m = self.inv_m_b
            vb[0] -= ix * m
            vb[1] -= iy * m
            vb[2] -= iz * m
            rbx, rby, rbz = self.r_b
            tx = rby * iz - rbz * iy
            ty = rbz * ix - rbx * iz
            tz = rbx * iy - rby * ix
            ii = self.inv_i_b
            vb[3] -= ii[0][0] * tx + ii[0][1] * ty + ii[0][2] * tz
            vb[4] -= ii[1][0] * tx + ii[1][1] * ty + ii[1][2] * tz
            vb[5] -= ii[2][0] * tx + ii[2][1] * ty + ii[2][2] * tz
        if self.ja is not None:
            ji, jac, inv_i = self.ja
            joint_dv[ji] += (jac[0] * ix + jac[1] * iy + jac[2] * iz) * inv_i
        if self.jb is not None:
            ji, jac, inv_i = self.jb
            joint_dv[ji] -= (jac[0] * ix + jac[1] * iy + jac[2] * iz) * inv_i

    def solve(self, joint_dv):
        if self.k <= 0.0:
            return
        n = self.n
        vx, vy, vz = self._rel_vel(joint_dv)
        vn = vx * n[0] + vy * n[1] + vz * n[2]
        lam = -(vn - self.target) / self.k
        new_total = self.lam_n + lam
        if new_total < 0.0:
            new_total = 0.0
        lam = new_total - self.lam_n
        self.lam_n = new_total
        if lam != 0.0:
            self._apply(n[0] * lam, n[1] * lam, n[2] * lam, joint_dv)
        self.solve_friction(joint_dv)

    def solve_friction(self, joint_dv):
        if self.k <= 0.0 or not self.friction_on:
            return
        max_t = self.mu * self.lam_n
        for attr, t in (("lam_t1", self.t1), ("lam_t2", self.t2)):
            vx, vy, vz = self._rel_vel(joint_dv)
            vt = vx * t[0] + vy * t[1] + vz * t[2]
            lam_t = -vt / self.k
            old = getattr(self, attr)
            new_t = old + lam_t
            if new_t > max_t:
                new_t = max_t
            elif new_t < -max_t:
                new_t = -max_t
            lam_t = new_t - old
            setattr(self, attr, new_t)
            if lam_t != 0.0:
                self._apply(t[0] * lam_t, t[1] * lam_t, t[2] * lam_t, joint_dv)


def _tangent(n: np.ndarray, which: int) -> np.ndarray:
    ref = np.array([1.0, 0.0, 0.0]) if abs(n[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    t1 = np.cross(n, ref)
    t1 /= np.linalg.norm(t1)
    if which == 0:
        return t1
    t2 = np.cross(n, t1)
    return t2 / np.linalg.norm(t2)


def _quat_delta_omega(q_old: np.ndarray, q_new: np.ndarray, dt: float) -> np.ndarray:
    dq = geo.quat_multiply(q_new, np.array([q_old[0], -q_old[1], -q_old[2], -q_old[3]]))
    if dq[0] < 0:
        dq = -dq
    angle = 2.0 * math.acos(float(np.clip(dq[0], -1.0, 1.0)))
    if angle < 1e-12:
        return np.zeros(3)
    axis = dq[1:] / math.sin(angle / 2.0)
    return axis * (angle / dt)
