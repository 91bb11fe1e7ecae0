"""Image method: exact specular paths over planar facets by successive
mirror images of the BS and a backward intersection pass."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .scene import Scene
from .validation import RayPath
from .visibility import InteractionList, Kind

PARALLEL_TOL = 1e-12


class UnsolvableCandidate(Exception):
    """Geometry admits no image-method solution (a ray parallel to a plane)."""


@dataclass(frozen=True)
class ImageChain:
    images: tuple   # I_0 = BS, I_1 .. I_n
    planes: tuple   # (unit normal, point on plane) per reflection

    def __post_init__(self):
        if len(self.images) != len(self.planes) + 1:
            raise ValueError("need one more image than planes")


def mirror_point(p, plane):
    n, p0 = (np.asarray(v, dtype=float) for v in plane)
    p = np.asarray(p, dtype=float)
    return p - 2 * ((p - p0) @ n) * n


def image_chain(bs, planes) -> ImageChain:
    images = [np.asarray(bs, dtype=float)]
    for plane in planes:
        images.append(mirror_point(images[-1], plane))
    return ImageChain(tuple(images), tuple(planes))


def backward_intersections(chain: ImageChain, ue):
    """Interaction points X_1 .. X_n, computed from the last plane back."""
    x_next = np.asarray(ue, dtype=float)
    pts = []
    for k in range(len(chain.planes), 0, -1):
        n, p0 = chain.planes[k - 1]
        img = chain.images[k]
        d = x_next - img
        den = d @ n
        if abs(den) <= PARALLEL_TOL:
            raise UnsolvableCandidate(f"ray parallel to reflection plane {k}")
        x_next = x_next + ((p0 - x_next) @ n) / den * d
        pts.append(x_next)
    return pts[::-1]


def trace_image_path(scene: Scene, bs, ue, candidate: InteractionList) -> RayPath:
    """Solve a reflection-only candidate; the result is not yet validated.

    Raises ``ValueError`` for diffractions or curved facets and
    ``UnsolvableCandidate`` for degenerate geometry.
    """
    from .mpt import path_cost  # local import, mpt depends on this module's types

    planes = []
    for eid, kind in candidate:
        if kind is not Kind.REFLECTION:
            raise ValueError("IM cannot handle diffraction")
        f = scene.element(eid)
        if not f.is_planar:
            raise ValueError("IM only handles planar facets")
        planes.append((f.plane_normal, f.origin))
    bs = np.asarray(bs, dtype=float)
    ue = np.asarray(ue, dtype=float)
    xs = backward_intersections(image_chain(bs, planes), ue)
    pts = np.vstack([bs, *xs, ue]) if xs else np.vstack([bs, ue])
    cost = path_cost(scene, candidate, pts)
    return RayPath(pts, candidate, cost, solver="image-method")
