"""Structured additive predictors: P-spline bases, RW2 penalties and design assembly.

Columns of the assembled design are ordered::

    [intercept | y_perp (k-1) | linear covariates | spline_1 | ... | spline_q]

Spline blocks are centred with their training column means so the
intercept stays identifiable; the centring constants are kept for
prediction.
"""

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import qr

from .errors import InvalidArgument
from .sampler import PenaltyBlock


def _knots(degree, n_knots, lower, upper):
    h = (upper - lower) / (n_knots - 1)
    return lower + h * np.arange(-degree, n_knots + degree)


def bspline_basis(z, degree=3, n_knots=20, bounds=None):
    """B-spline basis on equidistant knots via the Cox-de Boor recursion.

    ``n_knots`` positions span ``bounds`` (boundaries included) and are
    extended by ``degree`` knots on either side with the same spacing, which
    gives ``n_knots + degree - 1`` basis functions. Inputs outside ``bounds``
    are clamped to the nearest boundary and a warning reports how many.

    Returns
    -------
    basis : (n, n_knots + degree - 1) array
    """
    z = np.atleast_1d(np.asarray(z, dtype=float))
    if degree < 0 or n_knots < degree + 1 or n_knots < 2:
        raise InvalidArgument(f"need n_knots >= degree + 1 and >= 2 (degree={degree}, n_knots={n_knots})")
    lower, upper = (z.min(), z.max()) if bounds is None else bounds
    if not lower < upper:
        raise InvalidArgument(f"spline range needs lower < upper, got ({lower}, {upper})")

    outside = (z < lower) | (z > upper)
    if outside.any():
        warnings.warn(f"{int(outside.sum())} spline input(s) clamped to [{lower}, {upper}]",
                      RuntimeWarning, stacklevel=2)
        z = np.clip(z, lower, upper)

    t = _knots(degree, n_knots, lower, upper)
    n_int = t.size - 1
    idx = np.searchsorted(t, z, side="right") - 1
    idx = np.clip(idx, degree, degree + n_knots - 2)
    B = np.zeros((z.size, n_int))
    B[np.arange(z.size), idx] = 1.0
    for d in range(1, degree + 1):
        j = np.arange(B.shape[1] - 1)
        left = (z[:, None] - t[j]) / (t[j + d] - t[j])
        right = (t[j + d + 1] - z[:, None]) / (t[j + d + 1] - t[j + 1])
        B = left * B[:, :-1] + right * B[:, 1:]
    return B


def rw2_penalty(K):
    """Second-order random-walk penalty ``D2' D2`` for ``K`` coefficients."""
    if K < 3:
        raise InvalidArgument(f"RW2 penalty needs at least 3 coefficients, got {K}")
    D2 = np.diff(np.eye(K), n=2, axis=0)
    return D2.T @ D2


@dataclass
class SplineTerm:
    variable: str
    degree: int = 3
    n_knots: int = 20
    lower: float = None
    upper: float = None
    center: np.ndarray = field(default=None, repr=False)
    basis: np.ndarray = field(default=None, repr=False)

    @classmethod
    def from_data(cls, variable, z, degree=3, n_knots=20, bounds=None):
        z = np.asarray(z, dtype=float)
        lower, upper = (float(z.min()), float(z.max())) if bounds is None else map(float, bounds)
        term = cls(variable, degree, n_knots, lower, upper)
        raw = bspline_basis(z, degree, n_knots, (lower, upper))
        term.center = raw.mean(axis=0)
        term.basis = raw - term.center
        return term

    @property
    def n_basis(self):
        return self.n_knots + self.degree - 1

    @property
    def penalty(self):
        return rw2_penalty(self.n_basis)

    def transform(self, z):
        """Centred basis rows for new inputs (clamped to the training range)."""
        return bspline_basis(z, self.degree, self.n_knots, (self.lower, self.upper)) - self.center

    def to_dict(self):
        return {"variable": self.variable, "degree": self.degree, "n_knots": self.n_knots,
                "range": [self.lower, self.upper]}


@dataclass
class DesignLayout:
    k: int
    linear_names: list
    spline_names: list
    spline_sizes: list

    @property
    def intercept(self):
        return slice(0, 1)

    @property
    def yperp(self):
        return slice(1, self.k)

    @property
    def linear(self):
        return slice(self.k, self.k + len(self.linear_names))

    @property
    def splines(self):
        out, start = {}, self.k + len(self.linear_names)
        for name, size in zip(self.spline_names, self.spline_sizes):
            out[name] = slice(start, start + size)
            start += size
        return out

    @property
    def n_fixed(self):
        return self.k + len(self.linear_names)

    @property
    def n_columns(self):
        return self.n_fixed + sum(self.spline_sizes)

    @property
    def names(self):
        out = ["intercept"] + [f"yperp{j + 1}" for j in range(self.k - 1)]
        out += [f"x_{name}" for name in self.linear_names]
        for name, size in zip(self.spline_names, self.spline_sizes):
            out += [f"s_{name}_{j + 1}" for j in range(size)]
        return out


def assemble_design(projected, covariates=None, splines=(), covariate_names=None, check_rank=True):
    """Stack intercept, orthogonal projection, linear covariates and spline bases.

    Parameters
    ----------
    projected : ProjectedSample
    covariates : (n, p) array or None
    splines : sequence of SplineTerm
        Terms built on the same rows (their ``basis`` attribute is used).

    Returns
    -------
    design : (n, P) array
    layout : DesignLayout
    blocks : list of PenaltyBlock aligned with the spline column ranges
    """
    y_perp = np.asarray(projected.y_perp, dtype=float)
    n = y_perp.shape[0]
    X = np.zeros((n, 0)) if covariates is None else np.asarray(covariates, dtype=float).reshape(n, -1)
    if covariate_names is None:
        covariate_names = [f"x{j + 1}" for j in range(X.shape[1])]
    if len(covariate_names) != X.shape[1]:
        raise InvalidArgument("covariate names do not match covariate columns")
    parts = [np.ones((n, 1)), y_perp, X]
    for s in splines:
        if s.basis.shape[0] != n:
            raise InvalidArgument(f"spline {s.variable!r} has {s.basis.shape[0]} rows, expected {n}")
        parts.append(s.basis)
    layout = DesignLayout(k=y_perp.shape[1] + 1, linear_names=list(covariate_names),
                          spline_names=[s.variable for s in splines],
                          spline_sizes=[s.n_basis for s in splines])
    design = np.hstack(parts)

    if check_rank and n > 0:
        fixed = design[:, : layout.n_fixed]
        _, R, piv = qr(fixed, mode="economic", pivoting=True)
        diag = np.abs(np.diag(R))
        tol = max(fixed.shape) * np.finfo(float).eps * (diag[0] if diag.size else 0.0)
        rank = int(np.sum(diag > tol))
        if rank < layout.n_fixed:
            bad = [layout.names[j] for j in sorted(piv[rank:])]
            raise InvalidArgument(f"unpenalized design block is rank deficient; offending columns: {bad}")

    blocks = [PenaltyBlock(s.variable, sl.start, sl.stop, s.penalty)
              for s, sl in zip(splines, layout.splines.values())]
    return design, layout, blocks


def design_rows(layout, splines, y_perp, covariates=None, spline_inputs=None):
    """Design rows for arbitrary points (prediction side of ``assemble_design``).

    ``spline_inputs`` maps a spline variable to its values; out-of-range
    values are clamped.
    """
    y_perp = np.atleast_2d(np.asarray(y_perp, dtype=float))
    m = y_perp.shape[0]
    X = np.zeros((m, 0)) if covariates is None else np.asarray(covariates, dtype=float).reshape(m, -1)
    parts = [np.ones((m, 1)), y_perp, X]
    spline_inputs = spline_inputs or {}
    for s in splines:
        parts.append(s.transform(np.broadcast_to(np.asarray(spline_inputs[s.variable], dtype=float), (m,))))
    out = np.hstack(parts)
    if out.shape[1] != layout.n_columns:
        raise InvalidArgument(f"design row has {out.shape[1]} columns, layout expects {layout.n_columns}")
    return out
