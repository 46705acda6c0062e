"""Directions on the unit sphere and projections of a multivariate response.

A direction ``u`` is paired with a matrix ``gamma`` whose columns complete
``u`` to an orthonormal basis. The response is split into the scalar part
``u'Y`` that gets regressed and the orthogonal part ``gamma'Y`` that enters
the regression as covariates.
"""

from dataclasses import dataclass

import numpy as np
from scipy.stats import norm, qmc

from .errors import InvalidArgument

_GOLDEN_ANGLE = np.pi * (3.0 - np.sqrt(5.0))


@dataclass(frozen=True, eq=False)
class Direction:
    u: np.ndarray
    gamma: np.ndarray
    index: int = 0

    @property
    def k(self):
        return self.u.shape[0]


@dataclass(frozen=True, eq=False)
class ProjectedSample:
    y_u: np.ndarray
    y_perp: np.ndarray

    def recombine(self, d):
        """Map the projection back to response coordinates."""
        return np.outer(self.y_u, d.u) + self.y_perp @ d.gamma.T


def complement_basis(u):
    """Orthonormal ``k x (k-1)`` complement of a unit vector.

    In 2D the complement is the counterclockwise rotation ``(-u2, u1)``.
    In higher dimensions the canonical axes are orthogonalized against ``u``
    in order of increasing alignment with it, so the result is deterministic.
    """
    u = np.asarray(u, dtype=float)
    if u.ndim != 1 or u.shape[0] < 2:
        raise InvalidArgument("direction must be a vector of length >= 2")
    length = np.linalg.norm(u)
    if length == 0.0 or not np.isfinite(length):
        raise InvalidArgument("direction must be a nonzero finite vector")
    u = u / length
    k = u.shape[0]
    if k == 2:
        return np.array([[-u[1]], [u[0]]])

    basis = [u]
    cols = []
    for axis in np.argsort(np.abs(u), kind="stable"):
        if len(cols) == k - 1:
            break
        if k == 3 and len(cols) == 1:
            c = np.cross(u, cols[0])
        else:
            c = np.zeros(k)
            c[axis] = 1.0
            for b in basis:
                c = c - (b @ c) * b
            cn = np.linalg.norm(c)
            if cn < 1e-8:
                continue
            c = c / cn
        # second pass keeps orthogonality at round-off level
        for b in basis:
            c = c - (b @ c) * b
        c = c / np.linalg.norm(c)
        basis.append(c)
        cols.append(c)
    return np.column_stack(cols)


def _directions(vectors):
    out = []
    for j, v in enumerate(vectors):
        u = v / np.linalg.norm(v)
        out.append(Direction(u=u, gamma=complement_basis(u), index=j))
    return out


def direction_grid_2d(count):
    """``count`` equally spaced directions on the unit circle, starting at (1, 0)."""
    if int(count) != count or count < 3:
        raise InvalidArgument(f"2D direction grid needs count >= 3, got {count}")
    angles = 2.0 * np.pi * np.arange(count) / count
    return _directions(np.column_stack([np.cos(angles), np.sin(angles)]))


def direction_grid_3d(count):
    """Fibonacci spherical lattice with ``count`` points."""
    if int(count) != count or count < 4:
        raise InvalidArgument(f"3D direction grid needs count >= 4, got {count}")
    i = np.arange(count)
    z = 1.0 - (2.0 * i + 1.0) / count
    r = np.sqrt(1.0 - z * z)
    phi = i * _GOLDEN_ANGLE
    return _directions(np.column_stack([r * np.cos(phi), r * np.sin(phi), z]))


def direction_grid(k, count):
    """Direction grid for a ``k``-dimensional response.

    Dimensions above three use an unscrambled Halton sequence pushed through
    the Gaussian quantile function, which is deterministic for a given count.
    """
    if k == 2:
        return direction_grid_2d(count)
    if k == 3:
        return direction_grid_3d(count)
    if k < 2:
        raise InvalidArgument("response dimension must be at least 2")
    if count < k + 1:
        raise InvalidArgument(f"need at least {k + 1} directions in {k} dimensions")
    pts = qmc.Halton(d=k, scramble=False).random(count + 1)[1:]
    return _directions(norm.ppf(pts))


def project(sample, d):
    """Split an ``n x k`` response sample into ``u'Y`` and ``gamma'Y``."""
    Y = np.asarray(sample, dtype=float)
    if Y.ndim == 1:
        Y = Y[None, :]
    if Y.ndim != 2 or Y.shape[1] != d.k:
        raise InvalidArgument(
            f"response has {Y.shape[-1]} columns but direction has dimension {d.k}"
        )
    return ProjectedSample(y_u=Y @ d.u, y_perp=Y @ d.gamma)
