"""Quantile halfspaces and the regions obtained by intersecting them.

A fitted hyperplane ``u'y = b'gamma'y + c`` is stored in normal form
``(u - gamma b)'y >= c``. The region at level ``tau`` is the intersection of
these upper halfspaces over all directions, computed by clipping a bounding
square (2D) or cube (3D) one halfspace at a time.
"""

from dataclasses import dataclass, field

import numpy as np

from .additive import design_rows
from .errors import InvalidArgument, InvalidState


@dataclass(eq=False)
class Halfspace:
    normal: np.ndarray
    offset: float
    direction: int = 0
    tau: float = None

    def __post_init__(self):
        self.normal = np.asarray(self.normal, dtype=float)
        if not np.any(self.normal != 0.0):
            raise InvalidArgument("halfspace normal must be nonzero")

    def slack(self, points):
        """``normal'y - offset``; non-negative inside the closed halfspace."""
        return np.atleast_2d(points) @ self.normal - self.offset


@dataclass(eq=False)
class QuantileRegion:
    tau: float
    vertices: np.ndarray
    halfspaces: list = field(repr=False)
    faces: list = None
    empty: bool = False
    touches_box: bool = False
    covariate_point: dict = None
    last_vertex: np.ndarray = None

    @property
    def k(self):
        return self.halfspaces[0].normal.shape[0]

    @property
    def measure(self):
        """Area (2D) or volume (3D); zero when empty."""
        if self.empty:
            return 0.0
        if self.k == 2:
            return polygon_area(self.vertices)
        return polytope_volume(self.vertices, self.faces)


def halfspace_from_coefficients(direction, coef, layout, splines=(), covariates=None,
                                spline_inputs=None, tau=None):
    """Upper quantile halfspace of one fitted hyperplane at a covariate point.

    ``coef`` is a coefficient vector in the column order of ``layout``.
    """
    coef = np.asarray(coef, dtype=float)
    if coef.shape != (layout.n_columns,):
        raise InvalidArgument(f"coefficient vector has shape {coef.shape}, layout has {layout.n_columns} columns")
    row = design_rows(layout, splines, np.zeros(layout.k - 1), covariates, spline_inputs)[0]
    offset = float(row @ coef)
    b = coef[layout.yperp]
    normal = direction.u - direction.gamma @ b
    return Halfspace(normal=normal, offset=offset, direction=direction.index, tau=tau)


def halfspace_from_fit(fit, direction, layout, splines=(), covariates=None, spline_inputs=None):
    """Halfspace from a fit's posterior-mean coefficients."""
    if getattr(fit, "failed", False):
        raise InvalidState(f"task {fit.task} failed: {fit.error}")
    return halfspace_from_coefficients(direction, fit.mean[: layout.n_columns], layout, splines,
                                       covariates, spline_inputs, tau=fit.task.tau)


def polygon_area(vertices):
    v = np.asarray(vertices, dtype=float)
    if v.shape[0] < 3:
        return 0.0
    x, y = v[:, 0], v[:, 1]
    return 0.5 * abs(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


def polytope_volume(vertices, faces):
    V = np.asarray(vertices, dtype=float)
    vol = 0.0
    for f in faces:
        p0 = V[f[0]]
        for i in range(1, len(f) - 1):
            vol += p0 @ np.cross(V[f[i]], V[f[i + 1]])
    return abs(vol) / 6.0


def _clip_polygon(poly, normal, offset, eps):
    s = poly @ normal - offset
    out = []
    m = len(poly)
    for i in range(m):
        j = (i + 1) % m
        if s[i] >= -eps:
            out.append(poly[i])
        if (s[i] > eps and s[j] < -eps) or (s[i] < -eps and s[j] > eps):
            t = s[i] / (s[i] - s[j])
            out.append(poly[i] + t * (poly[j] - poly[i]))
    return np.array(out).reshape(-1, 2)


def _order_in_plane(points, outward):
    """Indices ordering coplanar points counterclockwise seen from ``outward``."""
    c = points.mean(axis=0)
    nrm = outward / np.linalg.norm(outward)
    a = np.eye(3)[np.argmin(np.abs(nrm))]
    e1 = a - (a @ nrm) * nrm
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(nrm, e1)
    d = points - c
    return np.argsort(np.arctan2(d @ e2, d @ e1), kind="stable")


def _cube(bound):
    V = np.array([[(i & 1) * 2 - 1, ((i >> 1) & 1) * 2 - 1, ((i >> 2) & 1) * 2 - 1]
                  for i in range(8)], dtype=float) * bound
    faces = []
    for axis in range(3):
        for sign in (-1.0, 1.0):
            ids = np.flatnonzero(V[:, axis] * sign > 0)
            outward = np.zeros(3)
            outward[axis] = sign
            faces.append([int(ids[o]) for o in _order_in_plane(V[ids], outward)])
    return V, faces


def _clip_polytope(V, faces, normal, offset, eps):
    s = V @ normal - offset
    cls = np.where(s > eps, 1, np.where(s < -eps, -1, 0))
    if not (cls < 0).any():
        return V, faces
    if not (cls > 0).any():
        return V[:0], []
    verts = list(V)
    cut = {}
    on_plane = set(np.flatnonzero(cls == 0).tolist())
    new_faces = []
    for f in faces:
        out = []
        for a, b in zip(f, f[1:] + f[:1]):
            if cls[a] >= 0:
                out.append(a)
            if cls[a] * cls[b] == -1:
                key = (min(a, b), max(a, b))
                if key not in cut:
                    t = s[a] / (s[a] - s[b])
                    verts.append(V[a] + t * (V[b] - V[a]))
                    cut[key] = len(verts) - 1
                    on_plane.add(cut[key])
                out.append(cut[key])
        if len(out) >= 3 and not all(v in on_plane for v in out):
            new_faces.append(out)
    verts = np.array(verts)
    cap = sorted(on_plane)
    if len(cap) >= 3:
        order = _order_in_plane(verts[cap], -normal)
        new_faces.append([cap[o] for o in order])
    used = sorted({v for f in new_faces for v in f})
    remap = {old: new for new, old in enumerate(used)}
    return verts[used], [[remap[v] for v in f] for f in new_faces]


def intersect(halfspaces, bound, tau=None, covariate_point=None):
    """Intersect upper halfspaces inside the box ``[-bound, bound]^k``.

    Returns a QuantileRegion; 2D vertices are ordered counterclockwise and 3D
    regions carry a face list (vertex indices, counterclockwise seen from
    outside). A region that degenerates to zero measure is reported empty with
    the last surviving vertex kept for diagnostics.
    """
    halfspaces = list(halfspaces)
    if not halfspaces:
        raise InvalidArgument("no halfspaces to intersect")
    k = halfspaces[0].normal.shape[0]
    if k not in (2, 3):
        raise InvalidArgument(f"regions are only built for 2 or 3 dimensions, got {k}")
    if len(halfspaces) < k + 1:
        raise InvalidArgument(f"need at least {k + 1} halfspaces in {k} dimensions")
    if tau is None:
        tau = halfspaces[0].tau
    eps = 1e-12 * (1.0 + bound)
    last = None

    if k == 2:
        poly = np.array([[-bound, -bound], [bound, -bound], [bound, bound], [-bound, bound]])
        for h in halfspaces:
            poly = _clip_polygon(poly, h.normal, h.offset, eps)
            if len(poly):
                last = poly[-1]
            if len(poly) < 3:
                break
        faces = None
        empty = len(poly) < 3 or polygon_area(poly) <= 1e-14 * bound * bound
        verts = poly
    else:
        verts, faces = _cube(bound)
        for h in halfspaces:
            verts, faces = _clip_polytope(verts, faces, h.normal, h.offset, eps)
            if len(verts):
                last = verts[-1]
            if len(faces) < 4:
                break
        empty = len(faces) < 4 or polytope_volume(verts, faces) <= 1e-14 * bound ** 3

    if empty:
        return QuantileRegion(tau=tau, vertices=np.zeros((0, k)), halfspaces=halfspaces,
                              faces=None if k == 2 else [], empty=True,
                              covariate_point=covariate_point, last_vertex=last)
    touches = bool(np.any(np.abs(verts) >= bound * (1.0 - 1e-9)))
    return QuantileRegion(tau=tau, vertices=np.asarray(verts), halfspaces=halfspaces, faces=faces,
                          touches_box=touches, covariate_point=covariate_point)


@dataclass
class NestingReport:
    violations: list
    pairs: list

    @property
    def nested(self):
        return not self.violations

    @property
    def max_violation(self):
        return max((v["magnitude"] for v in self.violations), default=0.0)


def nesting_check(regions, slack=1e-8):
    """Check that each region lies inside the region of the next lower level.

    For adjacent levels ``t1 < t2`` every vertex of ``R(t2)`` must satisfy
    every halfspace of ``R(t1)`` up to ``slack``.
    """
    if len(regions) < 2:
        raise InvalidArgument("nesting check needs at least two regions")
    taus = sorted(regions)
    violations, pairs = [], []
    for lo, hi in zip(taus[:-1], taus[1:]):
        pairs.append((lo, hi))
        inner = regions[hi]
        if inner.empty:
            continue
        for h in regions[lo].halfspaces:
            gap = -h.slack(inner.vertices)
            for i in np.flatnonzero(gap > slack):
                violations.append({"tau_low": lo, "tau_high": hi, "direction": h.direction,
                                   "vertex": int(i), "magnitude": float(gap[i])})
    return NestingReport(violations=violations, pairs=pairs)


@dataclass
class SubgradientReport:
    tau: float
    per_direction: np.ndarray

    @property
    def mean(self):
        return float(np.mean(self.per_direction))

    @property
    def mean_abs_deviation(self):
        return float(np.mean(np.abs(self.per_direction - self.tau)))


def subgradient_check(Y, normals, offsets, tau=None):
    """Fraction of observations strictly inside each lower open halfspace.

    Parameters
    ----------
    Y : (n, k) responses
    normals : (D, k) halfspace normals
    offsets : (D,) or (D, n)
        Offsets, optionally per observation when covariates enter them.
    """
    Y = np.asarray(Y, dtype=float)
    if Y.shape[0] == 0:
        raise InvalidArgument("subgradient check needs data")
    normals = np.atleast_2d(np.asarray(normals, dtype=float))
    offsets = np.asarray(offsets, dtype=float)
    if offsets.ndim == 1:
        offsets = offsets[:, None]
    below = (normals @ Y.T) < offsets
    return SubgradientReport(tau=tau, per_direction=below.mean(axis=1))


@dataclass
class Contour:
    tau: float
    vertices: np.ndarray
    faces: list = None
    empty: bool = False
    touches_box: bool = False
    covariate_point: dict = None

    def to_dict(self):
        out = {"tau": self.tau, "covariate_point": self.covariate_point,
               "vertices": self.vertices.tolist()}
        if self.vertices.shape[1] == 3 or self.faces:
            out["faces"] = self.faces or []
        out["empty"] = self.empty
        out["touches_box"] = self.touches_box
        return out


def region_to_contour(region, scales=None):
    """Region boundary in original response units (multiplying by ``scales``)."""
    k = region.vertices.shape[1]
    scales = np.ones(k) if scales is None else np.asarray(scales, dtype=float)
    verts = region.vertices * scales if not region.empty else np.zeros((0, k))
    return Contour(tau=region.tau, vertices=verts, faces=region.faces, empty=region.empty,
                   touches_box=region.touches_box, covariate_point=region.covariate_point)
