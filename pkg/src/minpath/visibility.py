"""Visibility matrix, BS/UE adjacency graph and interaction-list candidates."""

from __future__ import annotations

import csv
import enum
import io
from dataclasses import dataclass

import numpy as np

from .scene import Edge, Facet, Scene
from .validation import segment_obstructed

N_SAMPLE_PAIRS = 16
FRONT_TOL = 1e-12
# sample points are pulled this fraction toward the element center so that
# they do not sit exactly on shared boundaries
SAMPLE_INSET = 1e-2


class Kind(str, enum.Enum):
    REFLECTION = "R"
    DIFFRACTION = "D"


@dataclass(frozen=True)
class InteractionList:
    """Ordered interactions ``((element_id, Kind), ...)`` of one path."""

    items: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "items",
                           tuple((int(i), Kind(k)) for i, k in self.items))

    @classmethod
    def from_ids(cls, scene: Scene, ids):
        return cls(tuple(
            (i, Kind.REFLECTION if scene.is_facet(i) else Kind.DIFFRACTION) for i in ids))

    def __iter__(self):
        return iter(self.items)

    def __len__(self):
        return len(self.items)

    def __getitem__(self, k):
        return self.items[k]

    @property
    def ids(self):
        return tuple(i for i, _ in self.items)

    @property
    def kinds(self):
        return tuple(k for _, k in self.items)

    @property
    def n_r(self) -> int:
        return sum(k is Kind.REFLECTION for k in self.kinds)

    @property
    def n_d(self) -> int:
        return sum(k is Kind.DIFFRACTION for k in self.kinds)

    @property
    def n_t(self) -> int:
        return len(self.items)

    @property
    def label(self) -> str:
        """Interaction class such as ``"RD"``; ``"LOS"`` for the empty list."""
        return "".join(k.value for k in self.kinds) or "LOS"

    def __str__(self):
        return "[" + ", ".join(f"{k.value}{i}" for i, k in self.items) + "]"


@dataclass(frozen=True, eq=False)
class VisibilityGraph:
    """Directed adjacency over ``[BS, element_0 .. element_{N-1}, UE]``."""

    matrix: np.ndarray
    element_ids: tuple
    kinds: tuple

    @property
    def n_elements(self) -> int:
        return len(self.element_ids)

    @property
    def element_index(self):
        return {eid: i + 1 for i, eid in enumerate(self.element_ids)}

    @property
    def labels(self):
        names = [("s" if k is Kind.REFLECTION else "e") + str(eid)
                 for eid, k in zip(self.element_ids, self.kinds)]
        return ["BS"] + names + ["UE"]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        labels = self.labels
        w.writerow([""] + labels)
        for name, row in zip(labels, self.matrix):
            w.writerow([name] + [int(v) for v in row])
        return buf.getvalue()


def sample_points(element):
    """Center plus (slightly inset) vertices of a facet or edge."""
    if isinstance(element, Facet):
        c = element.centroid
        corners = element.vertices
    else:
        c = element.midpoint
        corners = element.endpoints
    return np.vstack([c, corners + SAMPLE_INSET * (c - corners)])


def _sample_pairs(na, nb, k=N_SAMPLE_PAIRS):
    """Round-robin pairing: diagonals of the index grid, rotating offset."""
    pairs = []
    for off in range(nb):
        for i in range(na):
            pairs.append((i, (i + off) % nb))
            if len(pairs) == k:
                return pairs
    return pairs


def _front(facet: Facet, p) -> bool:
    return float(facet.implicit(p)) > FRONT_TOL * max(1.0, facet.char_length)


def _outside_wedge(scene: Scene, edge: Edge, p) -> bool:
    """Whether ``p`` lies in the exterior region of the edge's wedge."""
    f1, f2 = (scene.element(i) for i in edge.parents)
    tol = FRONT_TOL * max(1.0, edge.length)
    d1 = float(f1.implicit(p)) > tol
    d2 = float(f2.implicit(p)) > tol
    return (d1 or d2) if edge.interior_angle < np.pi else (d1 and d2)


def _excl(scene: Scene, el):
    return {el.id} if isinstance(el, Facet) else {el.id, *el.parents}


def _faces(scene: Scene, el, q) -> bool:
    """Facing test: ``q`` in front of a facet, or outside an edge's wedge."""
    if isinstance(el, Facet):
        return _front(el, q)
    return _outside_wedge(scene, el, q)


def element_sees_point(scene: Scene, el, point) -> bool:
    if not _faces(scene, el, point):
        return False
    excl = _excl(scene, el)
    for p in sample_points(el):
        if not segment_obstructed(scene, p, point, excl):
            return True
    return False


def _pair_visible(scene: Scene, a, b) -> bool:
    if isinstance(a, Facet) and b.id in scene.boundary_edges(a.id):
        return False
    if isinstance(b, Facet) and a.id in scene.boundary_edges(b.id):
        return False
    pa, pb = sample_points(a), sample_points(b)
    excl = _excl(scene, a) | _excl(scene, b)
    for i, j in _sample_pairs(len(pa), len(pb)):
        p, q = pa[i], pb[j]
        if not (_faces(scene, a, q) and _faces(scene, b, p)):
            continue
        if not segment_obstructed(scene, p, q, excl):
            return True
    return False


def build_visibility(scene: Scene, mode: str = "sampled") -> np.ndarray:
    """Binary element-by-element visibility matrix, ordered by element id."""
    els = scene.elements
    n = len(els)
    if mode == "full":
        vis = np.ones((n, n), dtype=np.uint8)
        np.fill_diagonal(vis, 0)
        return vis
    if mode != "sampled":
        raise ValueError(f"unknown visibility mode {mode!r}")
    vis = np.zeros((n, n), dtype=np.uint8)
    for i in range(n):
        for j in range(i + 1, n):
            if _pair_visible(scene, els[i], els[j]) or _pair_visible(scene, els[j], els[i]):
                vis[i, j] = vis[j, i] = 1
    return vis


def build_adjacency(vis, scene: Scene, bs, ue) -> VisibilityGraph:
    bs = np.asarray(bs, dtype=float)
    ue = np.asarray(ue, dtype=float)
    if np.allclose(bs, ue, rtol=0, atol=1e-12):
        raise ValueError("BS and UE coincide")
    els = scene.elements
    n = len(els)
    g = np.zeros((n + 2, n + 2), dtype=np.uint8)
    g[1:n + 1, 1:n + 1] = vis
    np.fill_diagonal(g, 0)
    for i, el in enumerate(els):
        g[0, i + 1] = element_sees_point(scene, el, bs)
        g[i + 1, n + 1] = element_sees_point(scene, el, ue)
    g[0, n + 1] = not segment_obstructed(scene, bs, ue)
    kinds = tuple(Kind.REFLECTION if isinstance(el, Facet) else Kind.DIFFRACTION
                  for el in els)
    return VisibilityGraph(g, tuple(el.id for el in els), kinds)


def _paths(matrix, max_nodes, allow_revisits):
    n = len(matrix)
    src, dst = 0, n - 1
    succ = [np.nonzero(matrix[i])[0].tolist() for i in range(n)]
    out = []
    stack = [src]
    on_path = [False] * n
    on_path[src] = True

    def visit(node):
        for nxt in succ[node]:
            if nxt == dst:
                out.append(stack[1:])
                continue
            if nxt == src or len(stack) + 2 > max_nodes:
                continue
            if not allow_revisits and on_path[nxt]:
                continue
            if allow_revisits and nxt == node:
                continue
            stack.append(nxt)
            on_path[nxt] = True
            visit(nxt)
            stack.pop()
            on_path[nxt] = nxt in stack

    if max_nodes >= 2:
        visit(src)
    return out


def enumerate_candidates(g: VisibilityGraph, max_interactions: int,
                         allow_revisits: bool = False):
    """Interaction lists of every BS->UE path with at most
    ``max_interactions`` intermediate nodes.

    Simple paths only by default; ``allow_revisits`` switches to walks that
    merely forbid an immediate repeat.  Shorter lists come first, ties in
    depth-first order of ascending element index.
    """
    if max_interactions < 0:
        raise ValueError("max_interactions must be >= 0")
    raw = _paths(g.matrix, max_interactions + 2, allow_revisits)
    raw.sort(key=len)  # stable: keeps DFS order within a length
    return [InteractionList(tuple((g.element_ids[i - 1], g.kinds[i - 1]) for i in p))
            for p in raw]
