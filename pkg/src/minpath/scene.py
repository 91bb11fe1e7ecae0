"""Scene geometry: planar (or quadric) facets, edges and the queries the
path solvers need (implicit values, normals, edge directions, parametric
maps and containment tests).

Facets and edges share a single element-id namespace.  Facets take ids
``0..F-1`` and edges follow.  Every query accepts points with arbitrary
leading dimensions, ``(..., 3)``, so the solvers can evaluate a whole batch
of trial paths in one call.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.optimize import minimize_scalar

#: Construction precision for implicit/coplanarity checks (meters).
GEOM_TOL = 1e-9
#: Containment tolerance applied to solver solutions (meters).
SOLUTION_TOL = 1e-6
MIN_AREA = 1e-12


class SceneError(ValueError):
    """Raised for malformed or geometrically invalid scene input."""


def _unit(v):
    v = np.asarray(v, dtype=float)
    n = np.linalg.norm(v)
    if n < 1e-300:
        raise SceneError("cannot normalize a zero vector")
    return v / n


def newell_normal(vertices):
    """Area-weighted polygon normal (not normalized) by Newell's method."""
    v = np.asarray(vertices, dtype=float)
    w = np.roll(v, -1, axis=0)
    return np.array([
        np.sum((v[:, 1] - w[:, 1]) * (v[:, 2] + w[:, 2])),
        np.sum((v[:, 2] - w[:, 2]) * (v[:, 0] + w[:, 0])),
        np.sum((v[:, 0] - w[:, 0]) * (v[:, 1] + w[:, 1])),
    ])


def _quadric_value(q, p):
    x, y, z = p[..., 0], p[..., 1], p[..., 2]
    return (q[0] * x * x + q[1] * y * y + q[2] * z * z
            + q[3] * x * y + q[4] * y * z + q[5] * x * z
            + q[6] * x + q[7] * y + q[8] * z + q[9])


def _quadric_gradient(q, p):
    x, y, z = p[..., 0], p[..., 1], p[..., 2]
    return np.stack([
        2 * q[0] * x + q[3] * y + q[5] * z + q[6],
        2 * q[1] * y + q[3] * x + q[4] * z + q[7],
        2 * q[2] * z + q[4] * y + q[5] * x + q[8],
    ], axis=-1)


@dataclass(frozen=True, eq=False)
class Facet:
    """Convex polygonal facet, optionally carrying a quadric surface.

    Planar facets get their implicit equation from the Newell normal and an
    affine parametric map ``v0 + s (v1 - v0) + t (v_last - v0)``.  The
    vertex winding fixes the normal orientation (right-hand rule).

    With ``quadric`` set (coefficients of ``A x^2 + B y^2 + C z^2 + D xy +
    E yz + F xz + G x + H y + I z + J``) the polygon becomes the footprint
    of the surface patch: a footprint point is lifted along the polygon
    normal onto the quadric.
    """

    id: int
    vertices: np.ndarray
    material: str = "PEC"
    quadric: Optional[np.ndarray] = None
    # derived
    plane_normal: np.ndarray = field(init=False, repr=False)
    origin: np.ndarray = field(init=False, repr=False)
    span: np.ndarray = field(init=False, repr=False)
    inward: np.ndarray = field(init=False, repr=False)
    char_length: float = field(init=False, repr=False)

    def __post_init__(self):
        v = np.array(self.vertices, dtype=float)
        if v.ndim != 2 or v.shape[1] != 3 or len(v) < 3:
            raise SceneError(f"facet {self.id}: need at least 3 vertices in 3-D")
        if not np.all(np.isfinite(v)):
            raise SceneError(f"facet {self.id}: non-finite vertex")
        nw = newell_normal(v)
        area = 0.5 * np.linalg.norm(nw)
        if area < MIN_AREA:
            raise SceneError(f"facet {self.id}: degenerate polygon (area {area:g})")
        n = nw / np.linalg.norm(nw)
        centroid = v.mean(axis=0)
        off = (v - centroid) @ n
        if np.max(np.abs(off)) > GEOM_TOL * max(1.0, np.max(np.abs(v))):
            raise SceneError(f"facet {self.id}: vertices are not coplanar")
        # inward half-plane normals, one per polygon side
        sides = np.roll(v, -1, axis=0) - v
        inward = np.cross(n, sides)
        lens = np.linalg.norm(inward, axis=1)
        if np.any(lens < GEOM_TOL):
            raise SceneError(f"facet {self.id}: repeated vertex")
        inward /= lens[:, None]
        turn = np.cross(sides, np.roll(sides, -1, axis=0)) @ n
        if np.any(turn < -GEOM_TOL * np.max(lens) ** 2):
            raise SceneError(f"facet {self.id}: polygon is not convex")
        q = None
        if self.quadric is not None:
            q = np.array(self.quadric, dtype=float)
            if q.shape != (10,):
                raise SceneError(f"facet {self.id}: quadric needs 10 coefficients")
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "quadric", q)
        object.__setattr__(self, "plane_normal", n)
        object.__setattr__(self, "origin", v[0])
        object.__setattr__(self, "span", np.stack([v[1] - v[0], v[-1] - v[0]]))
        object.__setattr__(self, "inward", inward)
        object.__setattr__(self, "char_length",
                           float(np.linalg.norm(v.max(axis=0) - v.min(axis=0))))
        if q is not None:
            g = np.linalg.norm(_quadric_gradient(q, v), axis=-1)
            if np.any(np.abs(_quadric_value(q, v)) > GEOM_TOL * np.maximum(g, 1.0)):
                raise SceneError(f"facet {self.id}: vertices do not lie on the quadric")

    @property
    def is_planar(self) -> bool:
        return self.quadric is None

    @property
    def centroid(self):
        return self.vertices.mean(axis=0)

    def implicit(self, p):
        p = np.asarray(p, dtype=float)
        if self.quadric is None:
            return (p - self.origin) @ self.plane_normal
        return _quadric_value(self.quadric, p)

    def gradient(self, p):
        p = np.asarray(p, dtype=float)
        if self.quadric is None:
            return np.broadcast_to(self.plane_normal, p.shape).copy()
        return _quadric_gradient(self.quadric, p)

    def normal(self, p):
        g = self.gradient(p)
        nrm = np.linalg.norm(g, axis=-1, keepdims=True)
        if np.any(nrm < 1e-12):
            raise SceneError(f"facet {self.id}: zero gradient, singular point")
        return g / nrm

    def param_to_point(self, st):
        st = np.asarray(st, dtype=float)
        base = self.origin + st @ self.span
        if self.quadric is None:
            return base
        return base + self._lift(base)[..., None] * self.plane_normal

    def _lift(self, base):
        """Signed offset along the plane normal that lands ``base`` on the
        quadric; the root of smallest magnitude wins, 0 when none exists."""
        q, n = self.quadric, self.plane_normal
        a = _quadric_value(q, n[None, :])[0] - q[9] - (q[6:9] @ n)
        b = _quadric_gradient(q, base) @ n
        c = _quadric_value(q, base)
        with np.errstate(invalid="ignore", divide="ignore"):
            disc = b * b - 4 * a * c
            sq = np.sqrt(np.maximum(disc, 0.0))
            # numerically stable roots
            qq = -0.5 * (b + np.copysign(sq, b))
            r1 = np.where(qq != 0, c / qq, 0.0)
            r2 = np.where(np.abs(a) > 1e-300, qq / a, np.inf)
            lin = np.where(np.abs(b) > 1e-300, -c / b, 0.0)
        h = np.where(np.abs(r1) <= np.abs(r2), r1, r2)
        h = np.where(np.abs(a) <= 1e-14 * (np.abs(b) + 1e-300), lin, h)
        return np.where(disc >= 0, h, 0.0)

    def in_footprint(self, p, tol=GEOM_TOL):
        p = np.asarray(p, dtype=float)
        d = np.einsum("...kj,kj->...k", p[..., None, :] - self.vertices, self.inward)
        return np.all(d >= -tol, axis=-1)

    def contains(self, p, tol=GEOM_TOL):
        p = np.asarray(p, dtype=float)
        if self.quadric is None:
            on_surface = np.abs(self.implicit(p)) <= tol
        else:
            g = np.linalg.norm(self.gradient(p), axis=-1)
            on_surface = np.abs(self.implicit(p)) <= tol * np.maximum(g, 1e-300)
        return on_surface & self.in_footprint(p, tol)


@dataclass(frozen=True, eq=False)
class Edge:
    """Edge shared by two facets.

    Straight edges are parametrized as ``A + t (B - A)``.  A curved edge can
    be supplied through ``curve`` (and optionally ``derivative``), both
    callables of the parameter over ``t_range``; those are for library use
    only and are not serialized.
    """

    id: int
    endpoints: np.ndarray
    parents: tuple
    interior_angle: float = math.pi / 2
    curve: Optional[Callable] = None
    derivative: Optional[Callable] = None
    t_range: tuple = (0.0, 1.0)
    direction: np.ndarray = field(init=False, repr=False)
    length: float = field(init=False, repr=False)
    char_length: float = field(init=False, repr=False)

    def __post_init__(self):
        ab = np.array(self.endpoints, dtype=float)
        if ab.shape != (2, 3) or not np.all(np.isfinite(ab)):
            raise SceneError(f"edge {self.id}: endpoints must be two 3-D points")
        d = ab[1] - ab[0]
        length = float(np.linalg.norm(d))
        if length <= GEOM_TOL:
            raise SceneError(f"edge {self.id}: endpoints coincide")
        if not 0.0 < self.interior_angle < 2 * math.pi:
            raise SceneError(f"edge {self.id}: interior angle out of (0, 2pi)")
        object.__setattr__(self, "endpoints", ab)
        object.__setattr__(self, "parents", tuple(int(i) for i in self.parents))
        object.__setattr__(self, "direction", d / length)
        object.__setattr__(self, "length", length)
        object.__setattr__(self, "char_length", length)

    @property
    def is_straight(self) -> bool:
        return self.curve is None

    @property
    def midpoint(self):
        return self.endpoints.mean(axis=0)

    def param_to_point(self, t):
        t = np.asarray(t, dtype=float)
        if self.curve is None:
            a, b = self.endpoints
            return a + t[..., None] * (b - a)
        # the callable is only assumed to take a scalar
        pts = [np.asarray(self.curve(float(v)), dtype=float) for v in t.reshape(-1)]
        return np.array(pts).reshape(t.shape + (3,))

    def nearest_param(self, p):
        p = np.asarray(p, dtype=float)
        if self.curve is None:
            a = self.endpoints[0]
            return (p - a) @ self.direction / self.length
        lo, hi = self.t_range
        ts = np.linspace(lo, hi, 1001)
        pts = np.array([self.curve(t) for t in ts])
        i = int(np.argmin(np.linalg.norm(pts - p, axis=1)))
        step = (hi - lo) / 1000
        res = minimize_scalar(
            lambda t: float(np.sum((np.asarray(self.curve(t)) - p) ** 2)),
            bounds=(ts[i] - step, ts[i] + step), method="bounded",
            options={"xatol": 1e-13})
        return float(res.x)

    def tangent(self, p):
        p = np.asarray(p, dtype=float)
        if self.curve is None:
            return np.broadcast_to(self.direction, p.shape).copy()
        t = self.nearest_param(p)
        if self.derivative is not None:
            d = np.asarray(self.derivative(t), dtype=float)
        else:
            h = 1e-6
            d = (np.asarray(self.curve(t + h)) - np.asarray(self.curve(t - h))) / (2 * h)
        nrm = np.linalg.norm(d)
        if nrm < 1e-12:
            raise SceneError(f"edge {self.id}: zero derivative, degenerate parametrization")
        return d / nrm

    def offset(self, p):
        """Vector from the nearest point of the supporting curve to ``p``.

        Unlike the distance this is smooth across the edge, so it is what
        the Cartesian solver constrains.
        """
        p = np.asarray(p, dtype=float)
        if self.curve is None:
            v = p - self.endpoints[0]
            return v - (v @ self.direction)[..., None] * self.direction
        flat = p.reshape(-1, 3)
        foot = np.array([np.asarray(self.curve(self.nearest_param(q)), dtype=float)
                         for q in flat])
        return (flat - foot).reshape(p.shape)

    def implicit(self, p):
        """Distance to the supporting line or curve."""
        return np.linalg.norm(self.offset(p), axis=-1)

    def contains(self, p, tol=GEOM_TOL):
        p = np.asarray(p, dtype=float)
        if self.curve is not None:
            t = self.nearest_param(p)
            lo, hi = self.t_range
            close = np.linalg.norm(np.asarray(self.curve(t)) - p) <= tol
            return bool(close and lo - tol <= t <= hi + tol)
        t = self.nearest_param(p)
        slack = tol / self.length
        return (self.implicit(p) <= tol) & (t >= -slack) & (t <= 1 + slack)


def wedge_interior_angle(f1: Facet, f2: Facet, a, b) -> float:
    """Angle of the solid wedge bounded by two facets meeting along a-b.

    Facet normals are taken as outward, i.e. the solid lies behind both.
    """
    e = _unit(np.asarray(b) - np.asarray(a))

    def inface(f):
        v = f.centroid - a
        v = v - (v @ e) * e
        return _unit(v)

    t1, t2 = inface(f1), inface(f2)
    cosang = float(np.clip(t1 @ t2, -1.0, 1.0))
    side = float(t2 @ f1.plane_normal)
    if abs(side) < 1e-12:
        return math.pi
    base = math.acos(cosang)
    return base if side < 0 else 2 * math.pi - base


@dataclass(frozen=True, eq=False)
class Scene:
    facets: tuple
    edges: tuple
    aabb: np.ndarray = field(init=False)

    def __post_init__(self):
        facets, edges = tuple(self.facets), tuple(self.edges)
        object.__setattr__(self, "facets", facets)
        object.__setattr__(self, "edges", edges)
        ids = [f.id for f in facets] + [e.id for e in edges]
        if len(set(ids)) != len(ids):
            raise SceneError("duplicate element id")
        if sorted(ids) != list(range(len(ids))):
            raise SceneError("element ids must be contiguous from 0")
        fids = {f.id for f in facets}
        for e in edges:
            for pid in e.parents:
                if pid not in fids:
                    raise SceneError(f"edge {e.id}: parent facet {pid} does not exist")
        object.__setattr__(self, "_index", {el.id: el for el in facets + edges})
        pts = [f.vertices for f in facets] + [e.endpoints for e in edges]
        if pts:
            allp = np.concatenate(pts)
            box = np.stack([allp.min(axis=0), allp.max(axis=0)])
        else:
            box = np.zeros((2, 3))
        object.__setattr__(self, "aabb", box)

    def __getstate__(self):
        return {"facets": self.facets, "edges": self.edges}

    def __setstate__(self, state):
        object.__setattr__(self, "facets", state["facets"])
        object.__setattr__(self, "edges", state["edges"])
        self.__post_init__()

    def __len__(self):
        return len(self.facets) + len(self.edges)

    def element(self, eid):
        return self._index[eid]

    def is_facet(self, eid) -> bool:
        return isinstance(self._index[eid], Facet)

    @property
    def elements(self):
        return self.facets + self.edges

    @property
    def all_planar(self) -> bool:
        return all(f.is_planar for f in self.facets) and all(e.is_straight for e in self.edges)

    def boundary_edges(self, fid):
        return [e.id for e in self.edges if fid in e.parents]

    def to_dict(self):
        out = {"facets": [], "edges": []}
        for f in self.facets:
            d = {"id": f.id, "vertices": f.vertices.tolist(), "material": f.material}
            if f.quadric is not None:
                d["quadric"] = f.quadric.tolist()
            out["facets"].append(d)
        for e in self.edges:
            out["edges"].append({
                "id": e.id, "endpoints": e.endpoints.tolist(),
                "parents": list(e.parents), "interior_angle": e.interior_angle,
            })
        return out

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)


# --- queries with the names used throughout the package -------------------

def facet_normal(f: Facet, p):
    return f.normal(p)


def edge_direction(e: Edge, p):
    return e.tangent(p)


def param_to_point(element, params):
    return element.param_to_point(params)


def contains(element, p, tol=GEOM_TOL) -> bool:
    r = element.contains(p, tol)
    return bool(r) if np.ndim(r) == 0 else r


# --- construction ---------------------------------------------------------

def _shared_vertices(f1: Facet, f2: Facet):
    shared = []
    for a in f1.vertices:
        if np.any(np.linalg.norm(f2.vertices - a, axis=1) <= GEOM_TOL):
            shared.append(a)
    return shared


def derive_edges(facets: Sequence[Facet], first_id: int, skip=frozenset()):
    """Edges between every facet pair sharing exactly two vertices."""
    edges = []
    fs = sorted(facets, key=lambda f: f.id)
    for i, f1 in enumerate(fs):
        for f2 in fs[i + 1:]:
            key = (f1.id, f2.id)
            if key in skip:
                continue
            shared = _shared_vertices(f1, f2)
            if len(shared) != 2:
                continue
            a, b = shared
            angle = wedge_interior_angle(f1, f2, a, b)
            edges.append(Edge(first_id + len(edges), np.stack([a, b]), key, angle))
    return edges


def build_scene(facets: Sequence[Facet], explicit_edges: Sequence[Edge] = ()) -> Scene:
    facets = sorted(facets, key=lambda f: f.id)
    explicit = sorted(explicit_edges, key=lambda e: e.id)
    ids = [f.id for f in facets] + [e.id for e in explicit]
    if len(set(ids)) != len(ids):
        raise SceneError("duplicate element id")
    skip = {tuple(sorted(e.parents)) for e in explicit}
    next_id = max(ids) + 1 if ids else 0
    derived = derive_edges(facets, next_id, frozenset(skip))
    return Scene(tuple(facets), tuple(explicit) + tuple(derived))


def scene_from_dict(data) -> Scene:
    if not isinstance(data, dict) or "facets" not in data:
        raise SceneError("scene JSON needs a top-level 'facets' list")
    facets = []
    for fd in data["facets"]:
        try:
            material = fd.get("material", "PEC")
            if material != "PEC":
                raise SceneError(f"facet {fd['id']}: only PEC material is supported")
            facets.append(Facet(int(fd["id"]), np.asarray(fd["vertices"], dtype=float),
                                material, fd.get("quadric")))
        except (KeyError, TypeError) as exc:
            raise SceneError(f"malformed facet entry: {exc}") from exc
    by_id = {f.id: f for f in facets}
    if len(by_id) != len(facets):
        raise SceneError("duplicate element id")
    edges = []
    for ed in data.get("edges", []):
        try:
            ab = np.asarray(ed["endpoints"], dtype=float)
            parents = tuple(int(i) for i in ed["parents"])
        except (KeyError, TypeError) as exc:
            raise SceneError(f"malformed edge entry: {exc}") from exc
        if len(parents) != 2 or any(p not in by_id for p in parents):
            raise SceneError(f"edge {ed.get('id')}: parents must be two existing facets")
        angle = ed.get("interior_angle")
        if angle is None:
            angle = wedge_interior_angle(by_id[parents[0]], by_id[parents[1]], ab[0], ab[1])
        edges.append(Edge(int(ed["id"]), ab, parents, float(angle)))
    for e in edges:
        for a in e.endpoints:
            for pid in e.parents:
                if abs(by_id[pid].implicit(a)) > GEOM_TOL * max(1.0, np.max(np.abs(a))):
                    raise SceneError(f"edge {e.id}: endpoint off parent facet {pid}")
    return build_scene(facets, edges)


def load_scene(path) -> Scene:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise SceneError(f"{path}: parse error: {exc}") from exc
    except OSError as exc:
        raise SceneError(f"{path}: {exc}") from exc
    return scene_from_dict(data)


def empty_scene() -> Scene:
    return Scene((), ())
