"""Built-in scenes: two mirrors for the image method, and a street canyon
of three extruded box buildings for field prediction.

2-D layouts live in the x-y plane (y up) and are extruded along z.
"""

from __future__ import annotations

import json
from importlib import resources

import numpy as np

from .scene import Facet, Scene, build_scene, scene_from_dict

TWO_MIRROR_BS = (2.0, -1.0, 0.0)
TWO_MIRROR_UE = (2.0, 4.0, 0.0)

URBAN_BS = (0.0, 22.0, 0.0)
URBAN_UE = (8.0, 2.0, 0.0)
URBAN_CENTERS = (0.0, 15.0, 27.0)
URBAN_HEIGHTS = (20.0, 10.0, 40.0)
# Building footprint width along x.  A 15 m width makes the second and third
# building overlap and puts the UE inside the second one, so the default
# follows the proportions of the drawn layout instead.
URBAN_WIDTH = 10.0
URBAN_DEPTH = 200.0
URBAN_FREQUENCY = 1e9
URBAN_POLARIZATION = (0.0, 1.0, 0.0)


def extruded_segment(fid, a, b, z0, z1):
    """Rectangle over the 2-D segment a->b for z in [z0, z1].

    The normal points to the right of a->b: ``(dy, -dx, 0)``.  Walking a
    building outline counter-clockwise therefore gives outward normals.
    """
    ax, ay = a
    bx, by = b
    verts = [(ax, ay, z0), (bx, by, z0), (bx, by, z1), (ax, ay, z1)]
    return Facet(fid, np.array(verts, dtype=float))


def two_mirror_scene(half_depth=1.0) -> Scene:
    """Mirror on y = x for x in [0, 3.5] and mirror on x = 5 for y in
    [0.5, 4], both facing the transmitter side."""
    m1 = extruded_segment(0, (0.0, 0.0), (3.5, 3.5), -half_depth, half_depth)
    m2 = extruded_segment(1, (5.0, 4.0), (5.0, 0.5), -half_depth, half_depth)
    return build_scene([m1, m2])


def box_building(first_id, x_center, width, height, depth):
    """Left wall, roof and right wall of a box standing on y = 0."""
    xl = x_center - width / 2
    xr = x_center + width / 2
    z0, z1 = -depth / 2, depth / 2
    return [
        extruded_segment(first_id, (xl, height), (xl, 0.0), z0, z1),
        extruded_segment(first_id + 1, (xr, height), (xl, height), z0, z1),
        extruded_segment(first_id + 2, (xr, 0.0), (xr, height), z0, z1),
    ]


def urban_scene(width=URBAN_WIDTH, centers=URBAN_CENTERS, heights=URBAN_HEIGHTS,
                depth=URBAN_DEPTH, ground=False) -> Scene:
    """Three extruded buildings; each contributes two rooftop edges.

    With ``ground`` a ground facet spanning the street is added.
    """
    centers = list(centers)
    if len(centers) != len(heights):
        raise ValueError("need one height per building")
    lo = [c - width / 2 for c in centers]
    hi = [c + width / 2 for c in centers]
    for k in range(len(centers) - 1):
        if hi[k] >= lo[k + 1]:
            raise ValueError("buildings overlap")
    facets = []
    for c, h in zip(centers, heights):
        facets += box_building(len(facets), c, width, h, depth)
    if ground:
        margin = 20.0
        facets.append(extruded_segment(len(facets), (max(hi) + margin, 0.0),
                                       (min(lo) - margin, 0.0), -depth / 2, depth / 2))
    # walls meet the ground away from its vertices, so only the rooftop
    # corners become edges
    return build_scene(facets)


def builtin_names():
    return ("urban", "two_mirrors")


def load_builtin(name: str) -> Scene:
    data = resources.files("minpath").joinpath("data", f"{name}.json").read_text()
    return scene_from_dict(json.loads(data))
