"""GO/UTD field computation for perfectly conducting scenes.

Conventions
-----------
Reflection uses the ray-fixed basis ``e_perp = i x n / |i x n|`` and
``e_par = e_perp x s`` for the incident (``s = i``) and reflected
(``s = r``) rays, with ``R_perp = -1`` and ``R_par = +1``.

Diffraction uses the edge-fixed basis of Kouyoumjian and Pathak.  The
first parent facet of an edge is the o-face; ``t_o`` points from the edge
into it and ``n_o`` is its normal pointing into the exterior region.  The
edge direction is taken as ``e = t_o x n_o`` so that the azimuth ``phi``
grows from the o-face (``phi = 0``) through free space to the n-face
(``phi = n pi``).  With ``phi_hat' = -(e x s') / |e x s'|``,
``beta_hat' = s' x phi_hat'``, ``phi_hat = (e x s) / |e x s|`` and
``beta_hat = s x phi_hat``, the dyadic is
``-D_s beta_hat beta_hat' - D_h phi_hat phi_hat'``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import fresnel

from .scene import Edge, Scene
from .validation import PathStatus, RayPath
from .visibility import Kind

C_LIGHT = 299792458.0


@dataclass(frozen=True)
class RadioConfig:
    frequency: float = 1e9
    e0: float = 1.0
    polarization: tuple = (0.0, 0.0, 1.0)

    def __post_init__(self):
        if not self.frequency > 0:
            raise ValueError("frequency must be positive")
        pol = np.asarray(self.polarization, dtype=float)
        nrm = np.linalg.norm(pol)
        if pol.shape != (3,) or nrm == 0:
            raise ValueError("polarization must be a non-zero 3-vector")
        object.__setattr__(self, "polarization", tuple(pol / nrm))

    @property
    def wavenumber(self) -> float:
        return 2 * math.pi * self.frequency / C_LIGHT

    @property
    def wavelength(self) -> float:
        return C_LIGHT / self.frequency


def _unit(v):
    v = np.asarray(v, dtype=float)
    return v / np.linalg.norm(v)


def _any_perpendicular(v):
    helper = np.eye(3)[int(np.argmin(np.abs(v)))]
    return _unit(np.cross(v, helper))


def theta_hat(direction, axis):
    """Spherical unit vector theta-hat for ``direction`` about ``axis``."""
    d = _unit(direction)
    a = _unit(axis)
    cos_t = d @ a
    v = cos_t * d - a
    nrm = np.linalg.norm(v)
    if nrm < 1e-12:
        # on the polar axis theta-hat is undefined; any transverse vector will do
        return _any_perpendicular(d)
    return v / nrm


def tx_field(cfg: RadioConfig, p, bs):
    """Field of the isotropic, linearly polarized transmitter at ``p``."""
    d = np.asarray(p, dtype=float) - np.asarray(bs, dtype=float)
    r = float(np.linalg.norm(d))
    if r == 0:
        raise ValueError("observation point coincides with the transmitter")
    k = cfg.wavenumber
    return cfg.e0 / r * np.exp(-1j * k * r) * theta_hat(d, cfg.polarization).astype(complex)


def free_space_magnitude(cfg: RadioConfig, bs, ue) -> float:
    return cfg.e0 / float(np.linalg.norm(np.asarray(ue, float) - np.asarray(bs, float)))


def reflection_dyadic(incident, normal, material="PEC"):
    """3x3 dyadic mapping an incident field onto the reflected field."""
    if material != "PEC":
        raise ValueError("only PEC reflection is supported")
    i = _unit(incident)
    n = _unit(normal)
    cos_i = i @ n
    if abs(cos_i) <= 1e-9:
        raise ValueError("grazing incidence")
    r = i - 2 * cos_i * n
    c = np.cross(i, n)
    e_perp = _unit(c) if np.linalg.norm(c) > 1e-12 else _any_perpendicular(i)
    par_i = np.cross(e_perp, i)
    par_r = np.cross(e_perp, r)
    return (-np.outer(e_perp, e_perp) + np.outer(par_r, par_i)).astype(complex)


# --- UTD wedge coefficient ---------------------------------------------------

def transition_function(x):
    """Kouyoumjian-Pathak transition function
    ``F(x) = 2j sqrt(x) exp(jx) int_sqrt(x)^inf exp(-j tau^2) dtau``."""
    x = np.asarray(x, dtype=float)
    if np.any(x < 0):
        raise ValueError("transition function argument must be >= 0")
    sx = np.sqrt(x)
    w = sx * math.sqrt(2 / math.pi)
    s, c = fresnel(w)
    tail = math.sqrt(math.pi / 2) * ((0.5 - c) - 1j * (0.5 - s))
    out = 2j * sx * np.exp(1j * x) * tail
    big = x > 1e4
    if np.any(big):
        xb = x[big] if x.ndim else x
        asym = 1 + 0.5j / xb - 0.75 / xb ** 2 - 1.875j / xb ** 3
        if x.ndim:
            out[big] = asym
        else:
            out = asym
    return out


def _a(beta, n, sign):
    big_n = np.round((beta + sign * math.pi) / (2 * math.pi * n))
    return 2 * np.cos((2 * n * math.pi * big_n - beta) / 2) ** 2


def wedge_coefficients(k, n, phi, phi_p, beta0, L, gtd=False):
    """Soft and hard UTD coefficients of a PEC wedge.

    Returns ``(D_s, D_h, F)`` with ``F`` the four transition-function
    values.  ``gtd=True`` forces every transition function to 1.
    """
    pre = -np.exp(-1j * math.pi / 4) / (2 * n * math.sqrt(2 * math.pi * k) * math.sin(beta0))
    terms, fvals = [], []
    for beta, sign in ((phi - phi_p, 1), (phi - phi_p, -1), (phi + phi_p, 1), (phi + phi_p, -1)):
        cot_arg = (math.pi + sign * beta) / (2 * n)
        s = math.sin(cot_arg)
        f = 1.0 + 0j if gtd else complex(transition_function(k * L * _a(beta, n, sign)))
        fvals.append(f)
        if abs(s) > 1e-12:
            terms.append(math.cos(cot_arg) / s * f)
            continue
        if gtd:
            raise ValueError("GTD coefficient is singular on a shadow or reflection boundary")
        # exactly on a boundary: finite limit of cot * F
        big_n = round((beta + sign * math.pi) / (2 * math.pi * n))
        eps = math.pi + sign * (beta - 2 * math.pi * n * big_n)
        sgn = 1.0 if eps >= 0 else -1.0
        terms.append(n * np.exp(1j * math.pi / 4) * (
            math.sqrt(2 * math.pi * k * L) * sgn - 2 * k * L * eps * np.exp(1j * math.pi / 4)))
    inc = terms[0] + terms[1]
    refl = terms[2] + terms[3]
    return pre * (inc - refl), pre * (inc + refl), fvals


def keller_coefficients(k, n, phi, phi_p, beta0):
    """Keller's GTD wedge coefficients (no transition function)."""
    pre = np.exp(-1j * math.pi / 4) * math.sin(math.pi / n) / (
        n * math.sqrt(2 * math.pi * k) * math.sin(beta0))
    cn = math.cos(math.pi / n)
    t1 = 1 / (cn - math.cos((phi - phi_p) / n))
    t2 = 1 / (cn - math.cos((phi + phi_p) / n))
    return pre * (t1 - t2), pre * (t1 + t2)


@dataclass(frozen=True)
class EdgeFrame:
    e: np.ndarray
    t_o: np.ndarray
    n_o: np.ndarray
    n: float            # wedge parameter, exterior angle / pi


def edge_frame(scene: Scene, edge: Edge) -> EdgeFrame:
    f_o, f_n = (scene.element(i) for i in edge.parents)
    e0 = edge.direction
    mid = edge.midpoint

    def inface(f):
        v = f.centroid - mid
        return _unit(v - (v @ e0) * e0)

    t_o, t_n = inface(f_o), inface(f_n)
    n_o = f_o.plane_normal.copy()
    convex = edge.interior_angle < math.pi
    if (n_o @ t_n < 0) != convex:
        n_o = -n_o
    n_wedge = (2 * math.pi - edge.interior_angle) / math.pi
    return EdgeFrame(np.cross(t_o, n_o), t_o, n_o, n_wedge)


def _azimuth(frame: EdgeFrame, v):
    vp = v - (v @ frame.e) * frame.e
    phi = math.atan2(vp @ frame.n_o, vp @ frame.t_o) % (2 * math.pi)
    if phi > frame.n * math.pi:
        # numerical spill past a face: snap to the closer face
        phi = frame.n * math.pi if phi - frame.n * math.pi < 2 * math.pi - phi else 0.0
    return phi


@dataclass
class DiffractionResult:
    dyadic: np.ndarray
    D_s: complex
    D_h: complex
    phi: float
    phi_p: float
    beta0: float
    transition: list = field(default_factory=list)


def diffraction_dyadic(s_in, s_out, scene: Scene, edge: Edge, cfg: RadioConfig,
                       r: float, s: float, gtd: bool = False) -> DiffractionResult:
    """Edge-fixed dyadic diffraction coefficient for incident direction
    ``s_in`` (toward the edge) and diffracted direction ``s_out``.

    ``r`` and ``s`` are the incident and diffracted distance parameters.
    """
    frame = edge_frame(scene, edge)
    si = _unit(s_in)
    so = _unit(s_out)
    e = frame.e
    cb = float(np.clip(si @ e, -1.0, 1.0))
    beta0 = math.acos(cb)
    if min(beta0, math.pi - beta0) < 1e-6:
        raise ValueError("incidence along the edge")
    if abs(cb - so @ e) > 1e-6:
        raise ValueError("rays violate the Keller cone condition")
    phi_p = _azimuth(frame, -si)
    phi = _azimuth(frame, so)
    L = r * s * math.sin(beta0) ** 2 / (r + s)
    k = 2 * math.pi * cfg.frequency / C_LIGHT
    d_s, d_h, fv = wedge_coefficients(k, frame.n, phi, phi_p, beta0, L, gtd=gtd)
    phi_hat_i = -_unit(np.cross(e, si))
    beta_hat_i = np.cross(si, phi_hat_i)
    phi_hat_o = _unit(np.cross(e, so))
    beta_hat_o = np.cross(so, phi_hat_o)
    dy = -d_s * np.outer(beta_hat_o, beta_hat_i) - d_h * np.outer(phi_hat_o, phi_hat_i)
    return DiffractionResult(dy, d_s, d_h, phi, phi_p, beta0, fv)


# --- per path ------------------------------------------------------------------

@dataclass
class FieldContribution:
    path: RayPath
    e_field: np.ndarray
    e_los: float
    transition: list = field(default_factory=list)

    @property
    def magnitude(self) -> float:
        return float(np.linalg.norm(self.e_field))

    @property
    def magnitude_db_rel_los(self) -> float:
        return to_db(self.magnitude, self.e_los)


def to_db(magnitude, reference) -> float:
    if magnitude == 0:
        return -math.inf
    return 20 * math.log10(magnitude / reference)


def propagate_path(scene: Scene, path: RayPath, cfg: RadioConfig,
                   gtd: bool = False) -> FieldContribution:
    """Chain transmit field, interaction dyadics, spreading and phase.

    The distance parameter accumulates the unfolded length across
    reflections and restarts at the edge after a diffraction.
    """
    if path.status is not PathStatus.VALID:
        raise ValueError("fields are only computed for valid paths")
    pts = path.points
    bs, ue = pts[0], pts[-1]
    e_los = free_space_magnitude(cfg, bs, ue)
    k = cfg.wavenumber
    if len(path.candidate) == 0:
        return FieldContribution(path, tx_field(cfg, ue, bs), e_los)
    field_ = tx_field(cfg, pts[1], bs)
    r = float(np.linalg.norm(pts[1] - bs))
    trans = []
    for idx, (eid, kind) in enumerate(path.candidate, start=1):
        x_prev, x, x_next = pts[idx - 1], pts[idx], pts[idx + 1]
        s_in = x - x_prev
        s_out = x_next - x
        s = float(np.linalg.norm(s_out))
        phase = np.exp(-1j * k * s)
        el = scene.element(eid)
        if kind is Kind.REFLECTION:
            dy = reflection_dyadic(s_in, el.normal(x))
            field_ = dy @ field_ * (r / (r + s)) * phase
            r += s
        else:
            res = diffraction_dyadic(s_in, s_out, scene, el, cfg, r, s, gtd=gtd)
            trans.extend(res.transition)
            field_ = res.dyadic @ field_ * math.sqrt(r / (s * (r + s))) * phase
            r = s
    return FieldContribution(path, field_, e_los, trans)


@dataclass
class ClassRow:
    label: str
    n_paths: int
    e_field: np.ndarray
    db: float


@dataclass
class TotalField:
    e_field: np.ndarray
    e_los: float
    classes: list

    @property
    def db(self) -> float:
        return to_db(float(np.linalg.norm(self.e_field)), self.e_los)

    def table(self):
        return {row.label: row.db for row in self.classes}


def class_sort_key(label: str):
    if label == "LOS":
        return (0, ())
    return (len(label), tuple(0 if ch == "R" else 1 for ch in label))


def _coherent_sum(vectors):
    if not vectors:
        return np.zeros(3, dtype=complex)
    arr = np.array(vectors, dtype=complex)
    return np.array([complex(math.fsum(arr[:, j].real), math.fsum(arr[:, j].imag))
                     for j in range(3)])


def total_field(contributions, e_los=None, labels=()) -> TotalField:
    """Coherent sum over all contributions plus a per-class breakdown.

    ``labels`` lists classes to report even when they have no path.
    """
    contributions = list(contributions)
    if e_los is None:
        e_los = contributions[0].e_los if contributions else 1.0
    groups = {lab: [] for lab in labels}
    for c in contributions:
        groups.setdefault(c.path.candidate.label, []).append(c.e_field)
    rows = []
    for lab in sorted(groups, key=class_sort_key):
        e = _coherent_sum(groups[lab])
        rows.append(ClassRow(lab, len(groups[lab]), e, to_db(float(np.linalg.norm(e)), e_los)))
    return TotalField(_coherent_sum([c.e_field for c in contributions]), e_los, rows)
