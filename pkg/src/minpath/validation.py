"""A-posteriori path validation: interaction points must lie on their
bounded elements and no path segment may be blocked by a facet."""

from __future__ import annotations

import enum
import weakref
from dataclasses import dataclass, replace

import numpy as np

from .scene import GEOM_TOL, SOLUTION_TOL, Scene

#: Segments are shortened by this much at both ends before occlusion tests.
END_SHRINK = 1e-6
DEGENERATE_TOL = 1e-9
GRAZING_TOL = 1e-9


class PathStatus(str, enum.Enum):
    UNVALIDATED = "unvalidated"
    VALID = "valid"
    REJECTED_CONTAINMENT = "rejected_containment"
    REJECTED_OBSTRUCTION = "rejected_obstruction"
    REJECTED_DEGENERATE = "rejected_degenerate"


@dataclass(frozen=True, eq=False)
class RayPath:
    """Polyline BS -> X_1 .. X_n -> UE for one interaction list."""

    points: np.ndarray
    candidate: "InteractionList"  # noqa: F821
    cost: float = 0.0
    status: PathStatus = PathStatus.UNVALIDATED
    solver: str = ""

    def __post_init__(self):
        pts = np.array(self.points, dtype=float)
        if pts.shape != (len(self.candidate) + 2, 3):
            raise ValueError(
                f"path needs {len(self.candidate) + 2} points, got {pts.shape}")
        if not self.cost >= 0:
            raise ValueError("cost must be non-negative")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    @property
    def interaction_points(self):
        return self.points[1:-1]

    @property
    def length(self) -> float:
        return float(np.sum(np.linalg.norm(np.diff(self.points, axis=0), axis=1)))

    @property
    def is_valid(self) -> bool:
        return self.status is PathStatus.VALID


class _Occluders:
    """Flattened planar-facet data for vectorized segment tests."""

    def __init__(self, scene: Scene):
        planar = [f for f in scene.facets if f.is_planar]
        self.curved = [f for f in scene.facets if not f.is_planar]
        self.ids = np.array([f.id for f in planar], dtype=int)
        k = max((len(f.vertices) for f in planar), default=0)
        n = len(planar)
        self.normal = np.zeros((n, 3))
        self.offset = np.zeros(n)
        self.inward = np.zeros((n, k, 3))
        self.inward_off = np.zeros((n, k))
        for i, f in enumerate(planar):
            m = len(f.vertices)
            self.normal[i] = f.plane_normal
            self.offset[i] = f.plane_normal @ f.origin
            self.inward[i, :m] = f.inward
            self.inward_off[i, :m] = np.einsum("kj,kj->k", f.inward, f.vertices)


_cache: "weakref.WeakKeyDictionary[Scene, _Occluders]" = weakref.WeakKeyDictionary()


def _occluders(scene: Scene) -> _Occluders:
    occ = _cache.get(scene)
    if occ is None:
        occ = _cache[scene] = _Occluders(scene)
    return occ


def _hits_curved(f, a, b) -> bool:
    d = b - a
    q = f.quadric
    # f(a + s d) = A s^2 + B s + C
    quad = (q[0] * d[0] ** 2 + q[1] * d[1] ** 2 + q[2] * d[2] ** 2
            + q[3] * d[0] * d[1] + q[4] * d[1] * d[2] + q[5] * d[0] * d[2])
    lin = f.gradient(a) @ d
    const = float(f.implicit(a))
    if abs(quad) < 1e-15:
        roots = [] if abs(lin) < 1e-15 else [-const / lin]
    else:
        disc = lin * lin - 4 * quad * const
        if disc < 0:
            return False
        sq = np.sqrt(disc)
        roots = [(-lin - sq) / (2 * quad), (-lin + sq) / (2 * quad)]
    for s in roots:
        if 0.0 <= s <= 1.0 and f.in_footprint(a + s * d, GEOM_TOL):
            return True
    return False


def segment_obstructed(scene: Scene, a, b, exclude=()) -> bool:
    """True if the open segment a-b, shrunk by ``END_SHRINK`` at both ends,
    meets any facet not listed in ``exclude``.  Touching a facet boundary
    counts as a hit."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    d = b - a
    length = float(np.linalg.norm(d))
    if length <= 2 * END_SHRINK:
        return False
    u = d / length
    a = a + END_SHRINK * u
    b = b - END_SHRINK * u
    exclude = set(exclude)
    occ = _occluders(scene)
    if len(occ.ids):
        da = occ.normal @ a - occ.offset
        db = occ.normal @ b - occ.offset
        cross = ((da <= 0) & (db >= 0)) | ((da >= 0) & (db <= 0))
        cross &= ~((da == 0) & (db == 0))
        if exclude:
            cross &= ~np.isin(occ.ids, list(exclude))
        idx = np.nonzero(cross)[0]
        if len(idx):
            s = da[idx] / (da[idx] - db[idx])
            x = a + s[:, None] * (b - a)
            side = np.einsum("ikj,ij->ik", occ.inward[idx], x) - occ.inward_off[idx]
            if np.any(np.all(side >= -GEOM_TOL, axis=1)):
                return True
    for f in occ.curved:
        if f.id not in exclude and _hits_curved(f, a, b):
            return True
    return False


def _excluded(scene: Scene, eid: int):
    el = scene.element(eid)
    if scene.is_facet(eid):
        return {eid}
    return {eid, *el.parents}


def _grazing(scene: Scene, path: RayPath) -> bool:
    """Reflections at grazing incidence and diffractions with the ray along
    the edge have no usable field coefficient."""
    pts = path.points
    for k, (eid, _) in enumerate(path.candidate, start=1):
        i = pts[k] - pts[k - 1]
        i = i / np.linalg.norm(i)
        el = scene.element(eid)
        if scene.is_facet(eid):
            if abs(i @ el.normal(pts[k])) <= GRAZING_TOL:
                return True
        elif 1 - abs(i @ el.tangent(pts[k])) <= GRAZING_TOL:
            return True
    return False


def validate_path(scene: Scene, path: RayPath) -> RayPath:
    pts = path.points
    seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    if np.any(seg <= DEGENERATE_TOL):
        return replace(path, status=PathStatus.REJECTED_DEGENERATE)
    ids = [eid for eid, _ in path.candidate]
    if _grazing(scene, path):
        return replace(path, status=PathStatus.REJECTED_DEGENERATE)
    for eid, x in zip(ids, path.interaction_points):
        el = scene.element(eid)
        if not el.contains(x, SOLUTION_TOL):
            return replace(path, status=PathStatus.REJECTED_CONTAINMENT)
        if not scene.is_facet(eid):
            # diffraction exactly at an edge end is not accepted
            t = el.nearest_param(x)
            slack = SOLUTION_TOL / el.length
            if not slack < t < 1 - slack:
                return replace(path, status=PathStatus.REJECTED_CONTAINMENT)
    ends = [None] + ids + [None]
    for k in range(len(pts) - 1):
        excl = set()
        for eid in (ends[k], ends[k + 1]):
            if eid is not None:
                excl |= _excluded(scene, eid)
        if segment_obstructed(scene, pts[k], pts[k + 1], excl):
            return replace(path, status=PathStatus.REJECTED_OBSTRUCTION)
    return replace(path, status=PathStatus.VALID)
