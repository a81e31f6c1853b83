"""Built-in synthetic apartment: asset library, articulated furniture, and
layout variants.

Furniture local frames: x = width, y = depth with the front face toward -y,
z = up with feet at z = 0. Clutter objects are centered on their COM.
"""

from __future__ import annotations

import math

import numpy as np

from .scene import AssetCache, AssetLibrary, SceneLayout, layout_from_json

LAYOUT_VARIANTS = 3

# receptacle sets used by task generators
TIDY_RECEPTACLES = ["counter_left", "counter_right", "light_table", "dark_table", "sofa", "sink"]
OPEN_RECEPTACLES = ["counter_left", "counter_right", "light_table", "dark_table"]
DRAWER_RECEPTACLES = ["drawer_0", "drawer_1", "drawer_2"]
FRIDGE_RECEPTACLE = "fridge_shelf"

FOOD_OBJECTS = [
    "cracker_box", "sugar_box", "tomato_soup_can", "tuna_fish_can", "pudding_box",
    "gelatin_box", "potted_meat_can", "chef_can", "apple", "orange",
]
KITCHEN_OBJECTS = ["bowl", "mug", "plate", "sponge"]
CLUTTER_OBJECTS = FOOD_OBJECTS + KITCHEN_OBJECTS


def _box(half, pos=(0.0, 0.0, 0.0)):
    return {"pos": list(pos), "shape": {"type": "box", "half_extents": list(half)}}


def _cyl(radius, height, pos=(0.0, 0.0, 0.0), segments=12):
    return {
        "pos": list(pos),
        "shape": {"type": "cylinder", "radius": radius, "height": height, "segments": segments},
    }


def _compound(parts):
    return {"type": "compound", "parts": parts}


def _asset(asset_id, proxy, mass, category, friction=0.6, restitution=0.1):
    return {
        "schema": 1,
        "asset_id": asset_id,
        "collision_proxy": proxy,
        "mass": mass,
        "category": category,
        "friction": friction,
        "restitution": restitution,
    }


def _clutter_defs() -> list[dict]:
    out = []

    def obj(name, shape, mass, category, restitution=0.08):
        out.append(_asset(name, shape, mass, category, friction=0.6, restitution=restitution))

    obj("cracker_box", {"type": "box", "half_extents": [0.030, 0.079, 0.105]}, 0.411, "food")
    obj("sugar_box", {"type": "box", "half_extents": [0.019, 0.0445, 0.0875]}, 0.514, "food")
    obj("tomato_soup_can", {"type": "cylinder", "radius": 0.033, "height": 0.101}, 0.349, "food")
    obj("tuna_fish_can", {"type": "cylinder", "radius": 0.0425, "height": 0.033}, 0.171, "food")
    obj("pudding_box", {"type": "box", "half_extents": [0.055, 0.044, 0.019]}, 0.187, "food")
    obj("gelatin_box", {"type": "box", "half_extents": [0.0365, 0.046, 0.014]}, 0.097, "food")
    obj("potted_meat_can", {"type": "box", "half_extents": [0.029, 0.0485, 0.041]}, 0.370, "food")
    obj("chef_can", {"type": "cylinder", "radius": 0.051, "height": 0.1395}, 0.453, "food")
    obj("apple", {"type": "sphere", "radius": 0.0375}, 0.068, "food", restitution=0.25)
    obj("orange", {"type": "sphere", "radius": 0.0375}, 0.047, "food", restitution=0.25)
    obj("bowl", {"type": "cylinder", "radius": 0.080, "height": 0.055}, 0.147, "kitchen")
    obj("mug", {"type": "cylinder", "radius": 0.040, "height": 0.081}, 0.118, "kitchen")
    obj("plate", {"type": "cylinder", "radius": 0.090, "height": 0.020}, 0.279, "kitchen")
    obj("sponge", {"type": "box", "half_extents": [0.048, 0.036, 0.0085]}, 0.020, "kitchen")
    return out


def _furniture_defs() -> list[dict]:
    out = []

    out.append(
        _asset(
            "backdrop",
            _compound(
                [
                    _box([5.0, 3.0, 0.05], (0, 0, -0.05)),
                    _box([5.0, 0.05, 1.25], (0, 3.05, 1.25)),
                    _box([5.0, 0.05, 1.25], (0, -3.05, 1.25)),
                    _box([0.05, 3.1, 1.25], (5.05, 0, 1.25)),
                    _box([0.05, 3.1, 1.25], (-5.05, 0, 1.25)),
                ]
            ),
            0.0,
            "backdrop",
            friction=0.8,
        )
    )

    out.append(
        _asset("counter", _compound([_box([0.9, 0.325, 0.46], (0, 0, 0.46))]), 0.0, "furniture")
    )

    out.append(
        _asset(
            "light_table",
            _compound(
                [
                    _box([0.60, 0.40, 0.02], (0, 0, 0.72)),
                    _box([0.025, 0.025, 0.35], (0.55, 0.35, 0.35)),
                    _box([0.025, 0.025, 0.35], (-0.55, 0.35, 0.35)),
                    _box([0.025, 0.025, 0.35], (0.55, -0.35, 0.35)),
                    _box([0.025, 0.025, 0.35], (-0.55, -0.35, 0.35)),
                ]
            ),
            0.0,
            "furniture",
        )
    )
    out.append(
        _asset(
            "dark_table",
            _compound(
                [
                    _box([0.45, 0.45, 0.02], (0, 0, 0.68)),
                    _box([0.025, 0.025, 0.33], (0.40, 0.40, 0.33)),
                    _box([0.025, 0.025, 0.33], (-0.40, 0.40, 0.33)),
                    _box([0.025, 0.025, 0.33], (0.40, -0.40, 0.33)),
                    _box([0.025, 0.025, 0.33], (-0.40, -0.40, 0.33)),
                ]
            ),
            0.0,
            "furniture",
        )
    )
    out.append(
        _asset(
            "sofa",
            _compound(
                [
                    _box([0.90, 0.40, 0.22], (0, 0, 0.22)),
                    _box([0.90, 0.08, 0.30], (0, 0.36, 0.70)),
                    _box([0.08, 0.40, 0.12], (0.98, 0, 0.56)),
                    _box([0.08, 0.40, 0.12], (-0.98, 0, 0.56)),
                ]
            ),
            0.0,
            "furniture",
        )
    )
    out.append(
        _asset(
            "sink",
            _compound(
                [
                    _box([0.45, 0.32, 0.34], (0, 0, 0.34)),
                    _box([0.30, 0.20, 0.02], (0, 0, 0.70)),
                    _box([0.45, 0.06, 0.11], (0, -0.26, 0.79)),
                    _box([0.45, 0.06, 0.11], (0, 0.26, 0.79)),
                    _box([0.075, 0.20, 0.11], (-0.375, 0, 0.79)),
                    _box([0.075, 0.20, 0.11], (0.375, 0, 0.79)),
                ]
            ),
            0.0,
            "furniture",
        )
    )
    out.append(
        _asset(
            "shelves",
            _compound(
                [
                    _box([0.02, 0.25, 0.60], (0.58, 0, 0.60)),
                    _box([0.02, 0.25, 0.60], (-0.58, 0, 0.60)),
                    _box([0.56, 0.25, 0.015], (0, 0, 0.40)),
                    _box([0.56, 0.25, 0.015], (0, 0, 0.80)),
                    _box([0.60, 0.25, 0.015], (0, 0, 1.20)),
                ]
            ),
            0.0,
            "furniture",
        )
    )

    # articulated kitchen cabinet: static shell + three prismatic drawers
    out.append(
        _asset(
            "cabinet_shell",
            _compound(
                [
                    _box([0.45, 0.30, 0.02], (0, 0, 0.88)),
                    _box([0.02, 0.30, 0.44], (-0.43, 0, 0.44)),
                    _box([0.02, 0.30, 0.44], (0.43, 0, 0.44)),
                    _box([0.45, 0.02, 0.44], (0, 0.28, 0.44)),
                    _box([0.45, 0.30, 0.02], (0, 0, 0.02)),
                ]
            ),
            0.0,
            "furniture",
        )
    )
    out.append(
        _asset(
            "drawer_tray",
            _compound(
                [
                    _box([0.39, 0.25, 0.01], (0, 0, 0.01)),
                    _box([0.39, 0.015, 0.11], (0, -0.235, 0.11)),
                    _box([0.39, 0.015, 0.11], (0, 0.235, 0.11)),
                    _box([0.015, 0.25, 0.11], (-0.375, 0, 0.11)),
                    _box([0.015, 0.25, 0.11], (0.375, 0, 0.11)),
                ]
            ),
            3.0,
            "furniture",
        )
    )

    # articulated fridge: static shell + revolute door
    out.append(
        _asset(
            "fridge_shell",
            _compound(
                [
                    _box([0.03, 0.33, 0.65], (-0.37, 0, 1.02)),
                    _box([0.03, 0.33, 0.65], (0.37, 0, 1.02)),
                    _box([0.40, 0.03, 0.65], (0, 0.30, 1.02)),
                    _box([0.40, 0.33, 0.03], (0, 0, 1.67)),
                    _box([0.40, 0.33, 0.03], (0, 0, 0.40)),
                    _box([0.40, 0.30, 0.185], (0, 0, 0.185)),
                    _box([0.34, 0.30, 0.015], (0, 0, 0.95)),
                ]
            ),
            0.0,
            "furniture",
        )
    )
    out.append(
        _asset(
            "fridge_door",
            _compound([_box([0.38, 0.025, 0.65], (0.38, -0.025, 0.0))]),
            8.0,
            "furniture",
        )
    )
    return out


def _articulation_defs() -> list[dict]:
    drawers = []
    for i, z in enumerate((0.14, 0.38, 0.62)):
        drawers.append(
            {
                "joint_id": f"drawer_{i}",
                "type": "prismatic",
                "parent_part": 0,
                "child_part": i + 1,
                "axis": [0.0, -1.0, 0.0],
                "limits": [0.0, 0.35],
                "origin": {"pos": [0.0, -0.02, z]},
                "handle_point": [0.0, -0.27, 0.11],
            }
        )
    cabinet = {
        "schema": 1,
        "articulation_id": "kitchen_cabinet",
        "parts": ["cabinet_shell", "drawer_tray", "drawer_tray", "drawer_tray"],
        "joints": drawers,
    }
    fridge = {
        "schema": 1,
        "articulation_id": "fridge",
        "parts": ["fridge_shell", "fridge_door"],
        "joints": [
            {
                "joint_id": "door",
                "type": "revolute",
                "parent_part": 0,
                "child_part": 1,
                "axis": [0.0, 0.0, -1.0],
                "limits": [0.0, 2.356],
                "origin": {"pos": [-0.40, -0.33, 1.02]},
                "handle_point": [0.72, -0.09, 0.0],
            }
        ],
    }
    return [cabinet, fridge]


# furniture placements per layout variant: (ref, kind, x, y, yaw)
_VARIANT_PLACEMENTS = {
    0: [
        ("counter", "asset", -4.63, 1.30, math.pi / 2),
        ("kitchen_cabinet", "articulation", -4.65, -0.50, math.pi / 2),
        ("fridge", "articulation", -3.30, 2.62, 0.0),
        ("sink", "asset", -1.60, 2.63, 0.0),
        ("counter", "asset", -3.30, -2.63, math.pi),
        ("light_table", "asset", 1.60, 1.10, 0.0),
        ("dark_table", "asset", 3.30, -1.40, 0.0),
        ("sofa", "asset", 4.50, 0.80, -math.pi / 2),
        ("shelves", "asset", 1.60, -2.70, math.pi),
    ],
    1: [
        ("counter", "asset", -4.63, 1.30, math.pi / 2),
        ("kitchen_cabinet", "articulation", -4.65, -0.50, math.pi / 2),
        ("fridge", "articulation", -3.30, 2.62, 0.0),
        ("sink", "asset", -1.60, 2.63, 0.0),
        ("counter", "asset", -3.30, -2.63, math.pi),
        ("light_table", "asset", 3.30, -1.40, 0.0),
        ("dark_table", "asset", 1.60, 1.10, 0.0),
        ("sofa", "asset", 4.50, -0.60, -math.pi / 2),
        ("shelves", "asset", -0.50, -2.70, math.pi),
    ],
    2: [
        ("counter", "asset", -4.63, 1.30, math.pi / 2),
        ("kitchen_cabinet", "articulation", -4.65, -0.50, math.pi / 2),
        ("fridge", "articulation", -3.30, 2.62, 0.0),
        ("sink", "asset", -1.60, 2.63, 0.0),
        ("counter", "asset", -3.30, -2.63, math.pi),
        ("light_table", "asset", 2.60, 1.40, 0.0),
        ("dark_table", "asset", 1.20, -1.30, 0.0),
        ("sofa", "asset", 2.80, 2.50, math.pi),
        ("shelves", "asset", 4.70, -1.80, -math.pi / 2),
    ],
}

# receptacle annotations shared by all variants (owner = furniture index above)
_RECEPTACLES = [
    {"name": "counter_left", "owner": 0,
     "boxes": [{"kind": "on_top", "center": [0, 0, 1.045], "half_extents": [0.85, 0.28, 0.125]}]},
    {"name": "drawer_0", "owner": 1, "part": 1,
     "boxes": [{"kind": "inside", "center": [0, 0, 0.125], "half_extents": [0.36, 0.22, 0.105]}]},
    {"name": "drawer_1", "owner": 1, "part": 2,
     "boxes": [{"kind": "inside", "center": [0, 0, 0.125], "half_extents": [0.36, 0.22, 0.105]}]},
    {"name": "drawer_2", "owner": 1, "part": 3,
     "boxes": [{"kind": "inside", "center": [0, 0, 0.125], "half_extents": [0.36, 0.22, 0.105]}]},
    {"name": "fridge_shelf", "owner": 2,
     "boxes": [{"kind": "inside", "center": [0, 0, 1.075], "half_extents": [0.30, 0.26, 0.10]}]},
    {"name": "sink", "owner": 3,
     "boxes": [{"kind": "inside", "center": [0, 0, 0.82], "half_extents": [0.27, 0.17, 0.09]}]},
    {"name": "counter_right", "owner": 4,
     "boxes": [{"kind": "on_top", "center": [0, 0, 1.045], "half_extents": [0.85, 0.28, 0.125]}]},
    {"name": "light_table", "owner": 5,
     "boxes": [{"kind": "on_top", "center": [0, 0, 0.87], "half_extents": [0.55, 0.36, 0.13]}]},
    {"name": "dark_table", "owner": 6,
     "boxes": [{"kind": "on_top", "center": [0, 0, 0.83], "half_extents": [0.41, 0.41, 0.13]}]},
    {"name": "sofa", "owner": 7,
     "boxes": [{"kind": "on_top", "center": [0, -0.05, 0.55], "half_extents": [0.80, 0.30, 0.11]}]},
    {"name": "shelves", "owner": 8,
     "boxes": [{"kind": "on_top", "center": [0, 0, 0.925], "half_extents": [0.52, 0.21, 0.10]}]},
]

_NAVMESH = [[[-4.7, -2.7], [4.7, -2.7], [4.7, 2.7], [-4.7, 2.7]]]

LIVING_ROOM_CENTER = (2.3, -0.2)


def layout_json(variant: int = 0) -> dict:
    if variant not in _VARIANT_PLACEMENTS:
        raise ValueError(f"unknown layout variant {variant} (have 0..{LAYOUT_VARIANTS - 1})")
    furniture = [
        {"ref": ref, "kind": kind, "pos": [x, y, 0.0], "yaw": yaw}
        for ref, kind, x, y, yaw in _VARIANT_PLACEMENTS[variant]
    ]
    return {
        "schema": 1,
        "layout_id": f"apt_{variant}",
        "static_backdrop": "backdrop",
        "furniture": furniture,
        "receptacles": _RECEPTACLES,
        "navmesh": _NAVMESH,
    }


def builtin_library() -> AssetLibrary:
    lib = AssetLibrary()
    for d in _furniture_defs():
        lib.add_asset(d)
    for d in _clutter_defs():
        lib.add_asset(d)
    for d in _articulation_defs():
        lib.add_articulation(d)
    for v in range(LAYOUT_VARIANTS):
        lib.add_layout(layout_json(v))
    return lib


def make_layout(variant: int = 0) -> SceneLayout:
    return layout_from_json(layout_json(variant))


def default_cache() -> AssetCache:
    return AssetCache(builtin_library())
