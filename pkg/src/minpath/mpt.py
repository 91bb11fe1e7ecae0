"""Min-Path-Tracing: path finding as residual minimization.

For an interaction list the unknowns are the interaction points, either as
Cartesian coordinates (``3 n_t`` values, with the surface/edge membership
appended as extra residuals: the implicit value of each facet and the
offset vector from each edge) or as parametric coordinates on each element
(``2 n_r + n_d`` values, membership holds by construction).  Reflections
contribute the 3-vector residual of the mirror law, diffractions the
scalar Keller-cone residual.  A zero-cost minimizer is a path on the
unbounded supporting geometry; validation against the bounded elements
happens afterwards.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .scene import Edge, Scene
from .validation import RayPath
from .visibility import InteractionList, Kind

#: Norm clamp for (nearly) coincident consecutive points.
EPS = 1e-9
CARTESIAN = "cartesian"
PARAMETRIC = "parametric"
MODES = (CARTESIAN, PARAMETRIC)

# iteration keeps going past the acceptance threshold down to this cost so
# that the physical laws hold to near machine precision
POLISH_COST = 1e-30
MAX_DAMPING = 1e12
STALL_WINDOW = 20
STALL_RATIO = 1e-3


def _norm(v):
    return np.sqrt(np.einsum("...j,...j->...", v, v))


def reflection_residual(x_prev, x, x_next, normal):
    """Mirror-law residual, scaled by the incident length.

    ``gamma (x_next - x) - (i - 2 <i, n> n)`` with ``i = x - x_prev`` and
    ``gamma = |i| / |x_next - x|``, divided by ``|i| + EPS``.
    """
    x_prev, x, x_next, normal = (np.asarray(a, dtype=float)
                                 for a in (x_prev, x, x_next, normal))
    i = x - x_prev
    r = x_next - x
    li = _norm(i)
    gamma = np.maximum(li, EPS) / np.maximum(_norm(r), EPS)
    mirrored = i - 2 * np.einsum("...j,...j->...", i, normal)[..., None] * normal
    return (gamma[..., None] * r - mirrored) / (li + EPS)[..., None]


def diffraction_residual(x_prev, x, x_next, direction):
    """Difference of the Keller-cone cosines of the incident and
    diffracted rays with respect to the edge direction."""
    x_prev, x, x_next, direction = (np.asarray(a, dtype=float)
                                    for a in (x_prev, x, x_next, direction))
    i = x - x_prev
    d = x_next - x
    ci = np.einsum("...j,...j->...", i, direction) / np.maximum(_norm(i), EPS)
    cd = np.einsum("...j,...j->...", d, direction) / np.maximum(_norm(d), EPS)
    return ci - cd


@dataclass(frozen=True)
class ResidualVector:
    interaction_part: np.ndarray
    constraint_part: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "interaction_part", np.asarray(self.interaction_part, float))
        object.__setattr__(self, "constraint_part", np.asarray(self.constraint_part, float))

    def flat(self):
        return np.concatenate([self.interaction_part, self.constraint_part], axis=-1)


def cost(r) -> float:
    if isinstance(r, ResidualVector):
        return float(np.sum(r.interaction_part ** 2) + np.sum(r.constraint_part ** 2))
    return float(np.sum(np.asarray(r) ** 2))


class Problem:
    """One candidate compiled into flat arrays for batched evaluation.

    ``residual(U)`` accepts unknown vectors of shape ``(..., dim)``.
    """

    def __init__(self, scene: Scene, candidate: InteractionList, bs, ue,
                 mode: str = PARAMETRIC):
        if mode not in MODES:
            raise ValueError(f"unknown mode {mode!r}")
        self.scene = scene
        self.candidate = candidate
        self.mode = mode
        self.bs = np.asarray(bs, dtype=float)
        self.ue = np.asarray(ue, dtype=float)
        self.elements = [scene.element(i) for i in candidate.ids]
        for el, kind in zip(self.elements, candidate.kinds):
            if scene.is_facet(el.id) != (kind is Kind.REFLECTION):
                raise ValueError(f"element {el.id} does not support a {kind.name.lower()}")
        kinds = candidate.kinds
        self.n_t = len(kinds)
        self.refl = np.array([k is Kind.REFLECTION for k in kinds], dtype=bool)
        self.n_r = int(self.refl.sum())
        self.n_d = self.n_t - self.n_r
        self.constant_normals = all(el.is_planar for el, r in zip(self.elements, self.refl) if r)
        self.straight_edges = all(el.is_straight for el, r in zip(self.elements, self.refl) if not r)
        self._normals = np.array([el.plane_normal for el, r in zip(self.elements, self.refl) if r]
                                 ).reshape(-1, 3)
        self._dirs = np.array([el.direction for el, r in zip(self.elements, self.refl) if not r]
                              ).reshape(-1, 3)
        # residual layout: 3 rows per reflection, 1 per diffraction, in order
        rows, r_rows, d_rows = 0, [], []
        for r in self.refl:
            if r:
                r_rows.append([rows, rows + 1, rows + 2])
                rows += 3
            else:
                d_rows.append(rows)
                rows += 1
        self._r_rows = np.array(r_rows, dtype=int).reshape(-1, 3)
        self._d_rows = np.array(d_rows, dtype=int)
        self.n_interaction = rows
        if mode == CARTESIAN:
            self.dim = 3 * self.n_t
            # one implicit value per facet, the 3-vector offset per edge
            self.n_res = rows + self.n_r + 3 * self.n_d
        else:
            self.dim = 2 * self.n_r + self.n_d
            self.n_res = rows
        cols, c = [], 0
        for r in self.refl:
            w = 2 if r else 1
            cols.append((c, c + w))
            c += w
        self._param_cols = cols

    # --- unknowns <-> points ---------------------------------------------

    def points(self, u):
        """Interaction points ``(..., n_t, 3)`` for unknowns ``(..., dim)``."""
        u = np.asarray(u, dtype=float)
        if u.shape[-1] != self.dim:
            raise ValueError(f"expected {self.dim} unknowns, got {u.shape[-1]}")
        if self.mode == CARTESIAN:
            return u.reshape(u.shape[:-1] + (self.n_t, 3))
        pts = [el.param_to_point(u[..., a:b] if b - a == 2 else u[..., a])
               for el, (a, b) in zip(self.elements, self._param_cols)]
        if not pts:
            return np.zeros(u.shape[:-1] + (0, 3))
        return np.stack(pts, axis=-2)

    def full_path(self, u):
        x = self.points(u)
        lead = x.shape[:-2]
        bs = np.broadcast_to(self.bs, lead + (1, 3))
        ue = np.broadcast_to(self.ue, lead + (1, 3))
        return np.concatenate([bs, x, ue], axis=-2)

    def unknowns_from_points(self, x):
        """Inverse map from interaction points (on the elements) to unknowns."""
        x = np.asarray(x, dtype=float)
        if self.mode == CARTESIAN:
            return x.reshape(-1)
        out = []
        for el, r, p in zip(self.elements, self.refl, x):
            if r:
                st, *_ = np.linalg.lstsq(el.span.T, p - el.origin, rcond=None)
                out.extend(st)
            else:
                out.append(float(el.nearest_param(p)))
        return np.array(out)

    # --- residuals ----------------------------------------------------------

    def _normals_at(self, xr):
        if self.constant_normals:
            return self._normals
        els = [el for el, r in zip(self.elements, self.refl) if r]
        return np.stack([el.normal(xr[..., j, :]) for j, el in enumerate(els)], axis=-2)

    def _dirs_at(self, xd):
        if self.straight_edges:
            return self._dirs
        els = [el for el, r in zip(self.elements, self.refl) if not r]
        out = np.empty(xd.shape)
        for j, el in enumerate(els):
            flat = xd[..., j, :].reshape(-1, 3)
            out[..., j, :] = np.array([el.tangent(p) for p in flat]).reshape(xd[..., j, :].shape)
        return out

    def split_residual(self, u):
        u = np.asarray(u, dtype=float)
        p = self.full_path(u)
        lead = p.shape[:-2]
        res = np.zeros(lead + (self.n_interaction,))
        prev, cur, nxt = p[..., :-2, :], p[..., 1:-1, :], p[..., 2:, :]
        if self.n_r:
            r = self.refl
            rr = reflection_residual(prev[..., r, :], cur[..., r, :], nxt[..., r, :],
                                     self._normals_at(cur[..., r, :]))
            res[..., self._r_rows] = rr
        if self.n_d:
            d = ~self.refl
            res[..., self._d_rows] = diffraction_residual(
                prev[..., d, :], cur[..., d, :], nxt[..., d, :], self._dirs_at(cur[..., d, :]))
        if self.mode == CARTESIAN and self.n_t:
            # a distance to a line has a kink at zero, which stalls the
            # finite-difference Jacobian; the offset vector is smooth
            cons = np.concatenate([
                (el.implicit(cur[..., k, :])[..., None] if r else el.offset(cur[..., k, :]))
                / el.char_length
                for k, (el, r) in enumerate(zip(self.elements, self.refl))], axis=-1)
        else:
            cons = np.zeros(lead + (0,))
        return res, cons

    def residual(self, u):
        res, cons = self.split_residual(u)
        return np.concatenate([res, cons], axis=-1)

    def cost(self, u):
        r = self.residual(u)
        return np.einsum("...j,...j->...", r, r)

    def jacobian(self, u, r0=None):
        """Forward-difference Jacobian, shape ``(..., n_res, dim)``."""
        u = np.asarray(u, dtype=float)
        if r0 is None:
            r0 = self.residual(u)
        h = 1e-7 * (1.0 + np.abs(u))
        pert = u[..., None, :] + h[..., :, None] * np.eye(self.dim)
        fp = self.residual(pert)                       # (..., dim, n_res)
        jt = (fp - r0[..., None, :]) / h[..., :, None]
        return np.swapaxes(jt, -1, -2)

    def gradient(self, u):
        """Gradient of the cost as seen by the solver: ``2 J^T r``."""
        r = self.residual(u)
        return 2 * np.einsum("...ij,...i->...j", self.jacobian(u, r), r)

    def random_guess(self, rng, count):
        if self.mode == PARAMETRIC:
            return rng.uniform(0.0, 1.0, size=(count, self.dim))
        lo, hi = self.scene.aabb
        x = rng.uniform(np.tile(lo, self.n_t), np.tile(hi, self.n_t), size=(count, self.dim))
        # project each start onto its supporting surface or line; raw box
        # samples tend to slide into the collapsed-segment minimum at BS/UE
        x = x.reshape(count, self.n_t, 3)
        for k, el in enumerate(self.elements):
            x[:, k] = _project(el, x[:, k])
        return x.reshape(count, self.dim)


def _project(el, p):
    if isinstance(el, Edge):
        if el.is_straight:
            a = el.endpoints[0]
            return a + ((p - a) @ el.direction)[:, None] * el.direction
        return np.array([el.param_to_point(el.nearest_param(q)) for q in p])
    n = el.plane_normal
    flat = p - ((p - el.origin) @ n)[:, None] * n
    if el.is_planar:
        return flat
    st = np.linalg.lstsq(el.span.T, (flat - el.origin).T, rcond=None)[0].T
    return el.param_to_point(st)


def assemble_residual(candidate: InteractionList, u, scene: Scene, bs, ue,
                      mode: str = CARTESIAN) -> ResidualVector:
    prob = Problem(scene, candidate, bs, ue, mode)
    u = np.asarray(u, dtype=float)
    if u.shape[-1] != prob.dim:
        raise ValueError(f"length mismatch: expected {prob.dim} unknowns, got {u.shape[-1]}")
    return ResidualVector(*prob.split_residual(u))


def path_cost(scene: Scene, candidate: InteractionList, points) -> float:
    """Cartesian cost of a full path ``[bs, X_1 .. X_n, ue]``."""
    pts = np.asarray(points, dtype=float)
    prob = Problem(scene, candidate, pts[0], pts[-1], CARTESIAN)
    return float(prob.cost(pts[1:-1].reshape(-1)))


# --- physical-law checks, independent of the residual formulation ----------

def _angle_between(a, b):
    return float(np.arctan2(np.linalg.norm(np.cross(a, b)), np.dot(a, b)))


def reflection_law_error(x_prev, x, x_next, normal) -> float:
    """Angle (rad) between the outgoing ray and the mirrored incident ray."""
    i = np.asarray(x, float) - np.asarray(x_prev, float)
    r = np.asarray(x_next, float) - np.asarray(x, float)
    n = np.asarray(normal, float)
    mirrored = i - 2 * (i @ n) * n
    return _angle_between(r, mirrored)


def incidence_angles(x_prev, x, x_next, normal):
    """Angles of incidence and reflection measured from the normal."""
    i = np.asarray(x, float) - np.asarray(x_prev, float)
    r = np.asarray(x_next, float) - np.asarray(x, float)
    n = np.asarray(normal, float)
    return _angle_between(-i, n if (-i) @ n >= 0 else -n), _angle_between(r, n if r @ n >= 0 else -n)


def keller_error(x_prev, x, x_next, direction) -> float:
    i = np.asarray(x, float) - np.asarray(x_prev, float)
    d = np.asarray(x_next, float) - np.asarray(x, float)
    e = np.asarray(direction, float)
    return abs(i @ e / np.linalg.norm(i) - d @ e / np.linalg.norm(d))


def law_errors(scene: Scene, path: RayPath):
    """Per-interaction ``(kind, error)`` of a path's physical laws."""
    out = []
    p = path.points
    for k, (eid, kind) in enumerate(path.candidate, start=1):
        el = scene.element(eid)
        if kind is Kind.REFLECTION:
            out.append((kind, reflection_law_error(p[k - 1], p[k], p[k + 1], el.normal(p[k]))))
        else:
            out.append((kind, keller_error(p[k - 1], p[k], p[k + 1], el.tangent(p[k]))))
    return out


# --- solver -----------------------------------------------------------------

@dataclass(frozen=True)
class SolverConfig:
    restarts: Optional[int] = None   # None: 5 on planar scenes, 25 otherwise
    max_iters: int = 200
    cost_threshold: float = 1e-12
    step_tol: float = 1e-12
    dedupe_tol: float = 1e-6
    rng_seed: int = 0

    def __post_init__(self):
        if self.restarts is not None and self.restarts < 1:
            raise ValueError("restarts must be >= 1")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        for name in ("cost_threshold", "step_tol", "dedupe_tol"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0")

    def restarts_for(self, scene: Scene) -> int:
        if self.restarts is not None:
            return self.restarts
        return 5 if scene.all_planar else 25


@dataclass
class LMResult:
    x: np.ndarray
    cost: np.ndarray
    iterations: np.ndarray = field(default_factory=lambda: np.zeros(0, int))


def levenberg_marquardt(fun, x0, max_iters=200, step_tol=1e-12, polish_cost=POLISH_COST,
                        stall_threshold=0.0):
    """Damped least squares run on a batch of independent starting points.

    ``fun`` maps ``(B, dim)`` to residuals ``(B, n_res)``.  The Jacobian is
    taken by forward differences.  Each start keeps its own damping; a start
    stops once its cost drops below ``polish_cost``, its step falls below
    ``step_tol``, its damping saturates, or progress stalls while above
    ``stall_threshold``.  Below ``stall_threshold`` the start is only
    polished: the first rejected step ends it, since the cost then sits at
    rounding level.
    """
    with np.errstate(over="ignore", invalid="ignore"):
        # wild trial steps may overflow; non-finite trials are simply rejected
        return _lm(fun, np.array(x0, dtype=float), max_iters, step_tol, polish_cost,
                   stall_threshold)


def _lm(fun, x, max_iters, step_tol, polish_cost, stall_threshold):
    m, dim = x.shape
    r = fun(x)
    c = np.einsum("ij,ij->i", r, r)
    lam = np.full(m, 1e-3)
    active = np.isfinite(c) & (c > polish_cost)
    iters = np.zeros(m, dtype=int)
    history = [c.copy()]
    jt = np.zeros((m, dim, r.shape[1]))
    stale = np.ones(m, dtype=bool)
    eye = np.eye(dim)
    for it in range(max_iters):
        idx = np.nonzero(active)[0]
        if len(idx) == 0:
            break
        iters[idx] += 1
        upd = idx[stale[idx]]
        if len(upd):
            xu = x[upd]
            h = 1e-7 * (1.0 + np.abs(xu))
            pert = xu[:, None, :] + h[:, :, None] * eye
            fp = fun(pert.reshape(-1, dim)).reshape(len(upd), dim, -1)
            jt[upd] = (fp - r[upd][:, None, :]) / h[:, :, None]
            stale[upd] = False
        J = jt[idx]
        A = J @ np.swapaxes(J, 1, 2)
        g = np.einsum("bij,bj->bi", J, r[idx])
        diag = np.diagonal(A, axis1=1, axis2=2)
        # Marquardt scaling plus a Levenberg floor: directions the residual
        # barely sees (underdetermined Cartesian problems) stay damped
        damp = lam[idx][:, None] * (diag + diag.mean(axis=1, keepdims=True) + 1e-300)
        M = A + damp[:, :, None] * eye
        try:
            step = -np.linalg.solve(M, g[..., None])[..., 0]
        except np.linalg.LinAlgError:
            step = np.empty_like(g)
            for j in range(len(idx)):
                try:
                    step[j] = -np.linalg.solve(M[j], g[j])
                except np.linalg.LinAlgError:
                    step[j] = _gradient_step(fun, x[idx[j]], g[j], c[idx[j]])
        xt = x[idx] + step
        rt = fun(xt)
        ct = np.einsum("ij,ij->i", rt, rt)
        ok = np.isfinite(ct) & (ct < c[idx])
        acc, rej = idx[ok], idx[~ok]
        x[acc], r[acc], c[acc] = xt[ok], rt[ok], ct[ok]
        stale[acc] = True
        lam[acc] = np.maximum(lam[acc] / 3.0, 1e-12)
        lam[rej] *= 4.0
        small = np.linalg.norm(step, axis=1) <= step_tol * (1.0 + np.linalg.norm(x[idx], axis=1))
        done = (c[idx] <= polish_cost) | small | (lam[idx] > MAX_DAMPING)
        done |= ~ok & (c[idx] <= stall_threshold)
        history.append(c.copy())
        if stall_threshold > 0 and len(history) > STALL_WINDOW:
            old = history[-STALL_WINDOW - 1][idx]
            stalled = (c[idx] > stall_threshold) & (c[idx] > (1 - STALL_RATIO) * old)
            done |= stalled
        active[idx[done]] = False
    return LMResult(x, c, iters)


def _gradient_step(fun, x, g, c0):
    """Backtracking gradient-descent step used when the normal equations
    cannot be solved."""
    gn = float(g @ g)
    if gn == 0.0:
        return np.zeros_like(x)
    t = 1.0
    for _ in range(60):
        r = fun((x - t * g)[None, :])[0]
        if r @ r <= c0 - 0.25 * t * gn:
            return -t * g
        t *= 0.5
    return np.zeros_like(x)


def candidate_seed(cfg: SolverConfig, candidate: InteractionList):
    return [cfg.rng_seed] + [2 * eid + (kind is Kind.DIFFRACTION) for eid, kind in candidate]


def solve_candidate(candidate: InteractionList, scene: Scene, bs, ue,
                    cfg: SolverConfig = SolverConfig(), mode: str = PARAMETRIC):
    """Multistart minimization for one candidate.

    Returns ``[(RayPath, cost), ...]`` for every distinct zero-cost minimum;
    an empty list when none is found.
    """
    bs = np.asarray(bs, dtype=float)
    ue = np.asarray(ue, dtype=float)
    if len(candidate) == 0:
        return [(RayPath(np.vstack([bs, ue]), candidate, 0.0, solver="mpt-" + mode), 0.0)]
    prob = Problem(scene, candidate, bs, ue, mode)
    rng = np.random.default_rng(candidate_seed(cfg, candidate))
    x0 = prob.random_guess(rng, cfg.restarts_for(scene))
    res = levenberg_marquardt(prob.residual, x0, cfg.max_iters, cfg.step_tol,
                              stall_threshold=cfg.cost_threshold)
    kept = []
    for u, c in zip(res.x, res.cost):
        if not c < cfg.cost_threshold:
            continue
        pts = prob.full_path(u)
        if any(np.max(np.linalg.norm(pts[1:-1] - q.points[1:-1], axis=1)) <= cfg.dedupe_tol
               for q, _ in kept):
            continue
        kept.append((RayPath(pts, candidate, float(c), solver="mpt-" + mode), float(c)))
    return kept
