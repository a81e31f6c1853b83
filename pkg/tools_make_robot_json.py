"""One-shot generator for src/rearrange_sim/data/fetch_like.json."""
import json
import math
import sys

import numpy as np

sys.path.insert(0, "src")
from rearrange_sim import geometry as geo  # noqa: E402


def cam_rot(view):
    view = np.asarray(view, float)
    view = view / np.linalg.norm(view)
    right = np.cross(view, (0, 0, 1))
    right = right / np.linalg.norm(right)
    down = np.cross(view, right)
    down = down / np.linalg.norm(down)
    return np.column_stack([right, down, view])


def boxp(half, pos):
    return {"type": "compound", "parts": [{"pos": list(pos), "shape": {"type": "box", "half_extents": list(half)}}]}


joints = [
    {"name": "shoulder_pan", "offset": [0.12, 0.0, 0.96], "axis": [0, 0, 1], "limits": [-1.6057, 1.6057],
     "proxy": boxp([0.06, 0.06, 0.055], [0.05, 0.0, 0.0])},
    {"name": "shoulder_lift", "offset": [0.117, 0.0, 0.06], "axis": [0, 1, 0], "limits": [-1.221, 1.518],
     "proxy": boxp([0.115, 0.05, 0.05], [0.11, 0.0, 0.0])},
    {"name": "upperarm_roll", "offset": [0.219, 0.0, 0.0], "axis": [1, 0, 0], "limits": [-3.1, 3.1],
     "proxy": boxp([0.07, 0.05, 0.05], [0.066, 0.0, 0.0])},
    {"name": "elbow_flex", "offset": [0.133, 0.0, 0.0], "axis": [0, 1, 0], "limits": [-2.251, 2.251],
     "proxy": boxp([0.103, 0.045, 0.045], [0.098, 0.0, 0.0])},
    {"name": "forearm_roll", "offset": [0.197, 0.0, 0.0], "axis": [1, 0, 0], "limits": [-3.1, 3.1],
     "proxy": boxp([0.066, 0.04, 0.04], [0.062, 0.0, 0.0])},
    {"name": "wrist_flex", "offset": [0.1245, 0.0, 0.0], "axis": [0, 1, 0], "limits": [-2.16, 2.16],
     "proxy": boxp([0.073, 0.04, 0.04], [0.069, 0.0, 0.0])},
    {"name": "wrist_roll", "offset": [0.1385, 0.0, 0.0], "axis": [1, 0, 0], "limits": [-3.1, 3.1],
     "proxy": boxp([0.086, 0.042, 0.032], [0.083, 0.0, 0.0])},
]

base_proxy = {
    "type": "compound",
    "parts": [
        {"pos": [0.0, 0.0, 0.12], "shape": {"type": "cylinder", "radius": 0.22, "height": 0.24, "segments": 12}},
        {"pos": [-0.05, 0.0, 0.62], "shape": {"type": "box", "half_extents": [0.11, 0.13, 0.33]}},
    ],
}

head = cam_rot([math.cos(math.radians(28)), 0.0, -math.sin(math.radians(28))])
arm = cam_rot([1.0, 0.0, 0.0])
# the arm camera parent frame is the EE; view along the gripper +x
arm = np.column_stack([np.array([0.0, -1, 0.0]), np.array([0.0, 0.0, -1.0]), np.array([1.0, 0.0, 0.0])])

model = {
    "schema": 1,
    "name": "fetch_like",
    "base_radius": 0.22,
    "base_proxy": base_proxy,
    "joints": joints,
    "gripper_offset": [0.167, 0.0, 0.0],
    "cameras": [
        {"name": "head", "parent": "base", "pos": [0.10, 0.0, 1.22], "rot": head.tolist()},
        {"name": "arm", "parent": "ee", "pos": [-0.09, 0.0, 0.045], "rot": arm.tolist()},
    ],
    "resting_joints": None,
    "resting_ee": None,
    "zero_ee": None,
}

# build a throwaway model (bypassing validation) to compute the FK anchors
from rearrange_sim import robot as rb  # noqa: E402

defs = [
    rb.ArmJointDef(
        name=j["name"],
        offset=geo.Pose(pos=np.asarray(j["offset"], float)),
        axis=np.asarray(j["axis"], float),
        limits=tuple(j["limits"]),
        proxy=[],
    )
    for j in joints
]
tmp = rb.RobotModel(
    name="tmp", base_proxy=[], joints=defs, gripper_offset=geo.Pose(pos=np.array([0.167, 0, 0])),
    cameras={}, resting_joints=np.zeros(7), resting_ee_local=np.zeros(3), zero_ee_local=np.zeros(3),
)
zero_ee = rb.link_poses(tmp, np.zeros(7))[1].pos
print("zero_ee:", zero_ee)

q = np.array([0.0, 0.5, 0.0, -2.2, 0.0, 1.3, 0.0])
ee = rb.link_poses(tmp, q)[1].pos
print("resting joints:", np.round(q, 4), "-> ee", ee)

model["resting_joints"] = [round(float(v), 6) for v in q]
model["resting_ee"] = [round(float(v), 6) for v in rb.link_poses(tmp, np.array(model["resting_joints"]))[1].pos]
model["zero_ee"] = [round(float(v), 6) for v in zero_ee]

with open("src/rearrange_sim/data/fetch_like.json", "w") as f:
    json.dump(model, f, indent=1)
print("written; reach:", tmp.max_reach())
