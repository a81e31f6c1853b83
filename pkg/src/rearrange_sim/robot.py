"""Mobile manipulator model: kinematic chain, FK/IK, end-effector action
clamping, the discrete grasp rule, and kinematic base motion on the walk grid.

The robot definition (joint offsets/axes/limits, link proxies, camera mounts,
resting pose) is data-driven JSON; `default_model()` loads the bundled
7-DoF wheeled-base model.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

from . import geometry as geo
from .geometry import Parts, Pose
from .navgrid import NavGrid
from .scene import proxy_from_json

EE_STEP_CLAMP = 0.015  # m, max commanded end-effector displacement per control step
GRASP_RADIUS = 0.15  # m, snap distance from end-effector to object COM
IK_TOLERANCE = 5e-3  # m
IK_MAX_ITERS = 100
IK_DAMPING = 0.05


class RobotError(ValueError):
    pass


@dataclass
class ArmJointDef:
    name: str
    offset: Pose  # joint frame in the parent link frame (at q = 0)
    axis: np.ndarray  # unit rotation axis in the joint frame
    limits: tuple[float, float]
    proxy: Parts  # link geometry in the joint frame


@dataclass
class CameraMount:
    name: str
    parent: str  # "base" | "ee"
    pose: Pose  # camera frame in parent frame; +z is the view direction


@dataclass
class RobotModel:
    name: str
    base_proxy: Parts
    joints: list[ArmJointDef]
    gripper_offset: Pose
    cameras: dict[str, CameraMount]
    resting_joints: np.ndarray
    resting_ee_local: np.ndarray  # base frame
    zero_ee_local: np.ndarray  # FK at all-zero joints, base frame (schema anchor)
    base_radius: float = 0.22

    @property
    def dof(self) -> int:
        return len(self.joints)

    def limits_lo(self) -> np.ndarray:
        return np.array([j.limits[0] for j in self.joints])

    def limits_hi(self) -> np.ndarray:
        return np.array([j.limits[1] for j in self.joints])

    def max_reach(self) -> float:
        reach = 0.0
        for j in self.joints[1:]:
            reach += float(np.linalg.norm(j.offset.pos))
        reach += float(np.linalg.norm(self.gripper_offset.pos))
        return reach

    def shoulder_local(self) -> np.ndarray:
        return self.joints[0].offset.pos


@dataclass
class ArmAction:
    delta_ee: np.ndarray  # m, desired EE displacement (robot base frame)
    gripper: float  # scalar in [-1, 1]

    def clamped_delta(self) -> np.ndarray:
        d = np.asarray(self.delta_ee, dtype=float)
        n = float(np.linalg.norm(d))
        if n > EE_STEP_CLAMP:
            d = d * (EE_STEP_CLAMP / n)
        return d


@dataclass
class BaseAction:
    linear_velocity: float = 0.0  # m/s along heading
    angular_velocity: float = 0.0  # rad/s

    def __post_init__(self):
        if not (math.isfinite(self.linear_velocity) and math.isfinite(self.angular_velocity)):
            raise RobotError("base velocities must be finite")


# --------------------------------------------------------------------------
# model loading
# --------------------------------------------------------------------------

def model_from_json(d: dict) -> RobotModel:
    joints = []
    for j in d["joints"]:
        joints.append(
            ArmJointDef(
                name=j["name"],
                offset=Pose(geo.rot_z(0.0), np.asarray(j["offset"], dtype=float)),
                axis=np.asarray(j["axis"], dtype=float),
                limits=(float(j["limits"][0]), float(j["limits"][1])),
                proxy=proxy_from_json(j["proxy"]),
            )
        )
    cameras = {}
    for c in d["cameras"]:
        rot = np.asarray(c["rot"], dtype=float) if "rot" in c else np.eye(3)
        cameras[c["name"]] = CameraMount(
            c["name"], c["parent"], Pose(rot, np.asarray(c["pos"], dtype=float))
        )
    model = RobotModel(
        name=d["name"],
        base_proxy=proxy_from_json(d["base_proxy"]),
        joints=joints,
        gripper_offset=Pose(pos=np.asarray(d["gripper_offset"], dtype=float)),
        cameras=cameras,
        resting_joints=np.asarray(d["resting_joints"], dtype=float),
        resting_ee_local=np.asarray(d["resting_ee"], dtype=float),
        zero_ee_local=np.asarray(d["zero_ee"], dtype=float),
        base_radius=float(d.get("base_radius", 0.22)),
    )
    ee = forward_kinematics(model, model.resting_joints).pos
    if np.linalg.norm(ee - model.resting_ee_local) > 1e-3:
        raise RobotError(
            f"model resting pose inconsistent: FK gives {ee}, file says {model.resting_ee_local}"
        )
    return model


def default_model() -> RobotModel:
    raw = resources.files("rearrange_sim").joinpath("data/fetch_like.json").read_text()
    return model_from_json(json.loads(raw))


# --------------------------------------------------------------------------
# kinematics
# --------------------------------------------------------------------------

def base_pose3(base: np.ndarray) -> Pose:
    """Planar base state [x, y, yaw] to a world SE(3) pose on the floor."""
    return Pose(geo.rot_z(float(base[2])), np.array([base[0], base[1], 0.0]))


def link_poses(model: RobotModel, joints: np.ndarray, base: np.ndarray | None = None):
    """World (or base-frame if base is None) pose of every link frame plus the
    end-effector frame. Link i's frame is joint i's frame after rotation."""
    t = base_pose3(base) if base is not None else Pose.identity()
    out = []
    for jd, q in zip(model.joints, joints):
        t = t.compose(jd.offset).compose(Pose(geo.rot_axis_angle(jd.axis, float(q))))
        out.append(t)
    return out, t.compose(model.gripper_offset)


def forward_kinematics(model: RobotModel, joints: np.ndarray, base: np.ndarray | None = None) -> Pose:
    """End-effector pose. Raises when a joint is outside its limits."""
    joints = np.asarray(joints, dtype=float)
    if joints.shape != (model.dof,):
        raise RobotError(f"expected {model.dof} joints, got {joints.shape}")
    lo, hi = model.limits_lo(), model.limits_hi()
    if np.any(joints < lo - 1e-9) or np.any(joints > hi + 1e-9):
        bad = int(np.argmax((joints < lo - 1e-9) | (joints > hi + 1e-9)))
        raise RobotError(f"joint {bad} out of limits: {joints[bad]:.4f}")
    _, ee = link_poses(model, joints, base)
    return ee


def arm_jacobian(model: RobotModel, joints: np.ndarray) -> np.ndarray:
    """Positional Jacobian (3 x dof) of the EE in the base frame."""
    links, ee = link_poses(model, joints)
    jac = np.zeros((3, model.dof))
    for i, (jd, link) in enumerate(zip(model.joints, links)):
        axis_w = link.rot @ jd.axis
        jac[:, i] = np.cross(axis_w, ee.pos - link.pos)
    return jac


class NoSolution(Exception):
    """IK could not reach the target within the iteration budget."""


def _dls_attempt(model, target, seed, tol, max_iters, damping, lo, hi, mid):
    q = np.clip(np.asarray(seed, dtype=float).copy(), lo, hi)
    lam2 = damping * damping
    for _ in range(max_iters):
        _, ee = link_poses(model, q)
        err = target - ee.pos
        if float(np.linalg.norm(err)) < tol:
            return q
        jac = arm_jacobian(model, q)
        jjt = jac @ jac.T + lam2 * np.eye(3)
        dq = jac.T @ np.linalg.solve(jjt, err)
        # nullspace bias toward mid-range keeps the redundant joints off
        # their limits, where damped least-squares otherwise stalls
        pinv_j = jac.T @ np.linalg.solve(jjt, jac)
        dq += 0.1 * (np.eye(model.dof) - pinv_j) @ (mid - q)
        step = float(np.linalg.norm(dq))
        if step > 0.5:
            dq *= 0.5 / step
        q = np.clip(q + dq, lo, hi)
    _, ee = link_poses(model, q)
    if float(np.linalg.norm(target - ee.pos)) < tol:
        return q
    return None


# deterministic restart seeds (fractions of the joint range around mid)
_RESTART_FRACTIONS = (
    (0.0, 0.25, 0.0, -0.35, 0.0, 0.3, 0.0),
    (0.3, -0.2, 0.2, 0.3, -0.2, -0.3, 0.2),
    (-0.3, 0.3, -0.25, -0.3, 0.25, 0.35, -0.2),
    (0.15, 0.4, 0.3, 0.4, 0.3, -0.4, 0.3),
    (-0.15, -0.35, -0.3, 0.45, -0.35, 0.4, -0.3),
    (0.45, 0.1, 0.45, -0.45, 0.4, -0.1, 0.45),
    (-0.45, -0.1, -0.45, 0.2, 0.45, 0.15, -0.45),
    (0.6, 0.85, -0.8, -0.2, 0.7, 0.0, -0.3),
    (-0.6, 0.85, 0.8, -0.2, -0.7, 0.0, 0.3),
    (0.85, 0.9, -0.55, 0.3, 0.75, -0.25, 0.0),
    (-0.85, 0.9, 0.55, 0.3, -0.75, 0.25, 0.0),
)


def solve_ik(
    model: RobotModel,
    target_ee: np.ndarray,
    seed: np.ndarray,
    tol: float = IK_TOLERANCE,
    max_iters: int = IK_MAX_ITERS,
    damping: float = IK_DAMPING,
) -> np.ndarray:
    """Damped least-squares IK toward a base-frame EE position.

    Runs up to `max_iters` iterations from the given seed; if that attempt
    stalls (typically pinned at a joint limit), retries from a fixed table of
    deterministic restart seeds. Returns joints within limits with FK error
    < tol, or raises NoSolution.
    """
    target = np.asarray(target_ee, dtype=float)
    shoulder = base_pose3(np.zeros(3)).apply(model.shoulder_local())
    if np.linalg.norm(target - shoulder) > model.max_reach() + tol:
        raise NoSolution(f"target {target} beyond reach sphere")
    lo, hi = model.limits_lo(), model.limits_hi()
    mid = 0.5 * (lo + hi)
    q = _dls_attempt(model, target, seed, tol, max_iters, damping, lo, hi, mid)
    if q is not None:
        return q
    span = hi - lo
    for frac in _RESTART_FRACTIONS:
        restart = mid + np.asarray(frac) * span * 0.5
        q = _dls_attempt(model, target, restart, tol, max_iters, damping, lo, hi, mid)
        if q is not None:
            return q
    # last resort for contorted wrap-around targets: a fixed low-discrepancy
    # spray of seeds over the joint box (additive-recurrence sequence)
    alpha = np.array([0.618034, 0.754878, 0.569840, 0.380110, 0.245122, 0.119409, 0.059683])
    u = np.full(model.dof, 0.5)
    for _ in range(24):
        u = (u + alpha) % 1.0
        q = _dls_attempt(model, target, lo + u * span, tol, max_iters, damping, lo, hi, mid)
        if q is not None:
            return q
    raise NoSolution(f"no IK solution within {max_iters} iterations per attempt")


# --------------------------------------------------------------------------
# actions
# --------------------------------------------------------------------------

@dataclass
class JointTargets:
    arm: np.ndarray
    base: BaseAction = field(default_factory=BaseAction)
    gripper: float = 0.0


def apply_arm_action(
    model: RobotModel,
    current_joints: np.ndarray,
    action: ArmAction,
    stats: dict | None = None,
) -> JointTargets:
    """Clamp the EE displacement, run IK, and emit PD joint targets.

    IK failure degrades to a no-op (targets = current joints) and bumps the
    `ik_failures` counter in `stats`.
    """
    delta = action.clamped_delta()
    _, ee = link_poses(model, current_joints)
    target = ee.pos + delta
    try:
        q = solve_ik(model, target, current_joints)
    except NoSolution:
        if stats is not None:
            stats["ik_failures"] = stats.get("ik_failures", 0) + 1
        q = np.asarray(current_joints, dtype=float).copy()
    return JointTargets(arm=q, gripper=action.gripper)


@dataclass
class GraspTransition:
    kind: str  # "snap" | "release" | "none"
    body: int | None = None
    joint: str | None = None  # articulation handle joint id, for handle snaps


def grasp_rule(
    gripper_scalar: float,
    holding: bool,
    candidates: list[tuple[float, int, str | None]],
    radius: float = GRASP_RADIUS,
) -> GraspTransition:
    """Discrete grasp rule.

    `candidates` are (distance from EE, body id, handle joint id or None)
    tuples for graspable entities (object COMs and articulation handles).
    A positive scalar while empty-handed snaps the nearest candidate within
    `radius`; a negative scalar while holding releases; anything else is a
    no-op. Ties break toward the lowest body id.
    """
    if gripper_scalar > 0 and not holding:
        near = [(d, b, j) for d, b, j in candidates if d <= radius]
        if not near:
            return GraspTransition("none")
        near.sort(key=lambda t: (t[0], t[1]))
        _, body, joint = near[0]
        return GraspTransition("snap", body=body, joint=joint)
    if gripper_scalar < 0 and holding:
        return GraspTransition("release")
    return GraspTransition("none")


def move_base(
    base: np.ndarray,
    navgrid: NavGrid,
    action: BaseAction,
    dt: float,
) -> np.ndarray:
    """Integrate planar velocities; slide along the walkable boundary.

    The candidate position moves along the pre-update heading; if it leaves
    the walkable region it is projected to the nearest walkable point, so the
    base never enters the furniture-inflated blocked cells.
    """
    x, y, yaw = float(base[0]), float(base[1]), float(base[2])
    nx = x + math.cos(yaw) * action.linear_velocity * dt
    ny = y + math.sin(yaw) * action.linear_velocity * dt
    nyaw = _wrap_angle(yaw + action.angular_velocity * dt)
    if not navgrid.is_walkable((nx, ny)):
        proj = navgrid.nearest_walkable((nx, ny))
        nx, ny = float(proj[0]), float(proj[1])
    return np.array([nx, ny, nyaw])


def _wrap_angle(a: float) -> float:
    return (a + math.pi) % (2.0 * math.pi) - math.pi
