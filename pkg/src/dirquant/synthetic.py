"""Synthetic data with known directional quantiles.

Three kinds are available:

``spherical-gaussian``
    ``Y ~ N(0, I_k)``, no covariates.
``elliptical``
    ``Y = location + L eps`` with ``eps ~ N(0, I_k)``; ``cov_factor`` is ``L``.
``linear-heteroscedastic``
    ``y_j = beta0 + beta1 x + (1 + gamma x) eps_j`` with ``x ~ U[0, 1]``.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.stats import norm

from .errors import InvalidArgument

KINDS = ("spherical-gaussian", "elliptical", "linear-heteroscedastic")


@dataclass(frozen=True)
class GeneratorSpec:
    kind: str = "spherical-gaussian"
    n: int = 1000
    k: int = 2
    params: dict = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InvalidArgument(f"unknown generator kind {self.kind!r}; choose from {KINDS}")
        if self.n <= 0 or self.k < 2:
            raise InvalidArgument("generator needs n > 0 and k >= 2")
        if self.kind == "elliptical":
            L = np.asarray(self.params.get("cov_factor", np.eye(self.k)), dtype=float)
            if L.shape != (self.k, self.k):
                raise InvalidArgument(f"cov_factor must be {self.k}x{self.k}")
        if self.kind == "linear-heteroscedastic" and self.params.get("gamma", 0.0) < 0:
            raise InvalidArgument("gamma must be non-negative")


def _hetero_params(spec):
    p = spec.params
    beta0 = np.broadcast_to(np.asarray(p.get("beta0", 0.0), dtype=float), (spec.k,))
    beta1 = np.broadcast_to(np.asarray(p.get("beta1", 1.0), dtype=float), (spec.k,))
    return beta0, beta1, float(p.get("gamma", 0.0))


def generate(spec):
    """Draw ``(Y, X)``; ``X`` has zero columns for kinds without covariates."""
    rng = np.random.default_rng(spec.seed)
    if spec.kind == "spherical-gaussian":
        return rng.standard_normal((spec.n, spec.k)), np.zeros((spec.n, 0))
    if spec.kind == "elliptical":
        L = np.asarray(spec.params.get("cov_factor", np.eye(spec.k)), dtype=float)
        loc = np.broadcast_to(np.asarray(spec.params.get("location", 0.0), dtype=float), (spec.k,))
        eps = rng.standard_normal((spec.n, spec.k))
        return loc + eps @ L.T, np.zeros((spec.n, 0))
    beta0, beta1, gamma = _hetero_params(spec)
    x = rng.uniform(0.0, 1.0, spec.n)
    eps = rng.standard_normal((spec.n, spec.k))
    Y = beta0 + np.outer(x, beta1) + (1.0 + gamma * x)[:, None] * eps
    return Y, x[:, None]


def population_hyperplane(spec, direction, tau):
    """Population directional quantile ``(a, b, beta)`` for ``spec``.

    The quantile of ``u'Y`` given ``gamma'Y`` (and ``x``) is
    ``a + b'gamma'y + beta'x``.
    """
    u, G = direction.u, direction.gamma
    z = norm.ppf(tau)
    if spec.kind == "linear-heteroscedastic":
        beta0, beta1, gamma = _hetero_params(spec)
        # u'eps and gamma'eps are independent, so the directional slope is zero
        return float(u @ beta0 + z), np.zeros(spec.k - 1), np.array([u @ beta1 + gamma * z])
    if spec.kind == "spherical-gaussian":
        return float(z), np.zeros(spec.k - 1), np.zeros(0)
    L = np.asarray(spec.params.get("cov_factor", np.eye(spec.k)), dtype=float)
    loc = np.broadcast_to(np.asarray(spec.params.get("location", 0.0), dtype=float), (spec.k,))
    S = L @ L.T
    s_uu = u @ S @ u
    s_up = G.T @ S @ u
    S_pp = G.T @ S @ G
    b = np.linalg.solve(S_pp, s_up)
    cond_sd = np.sqrt(s_uu - s_up @ b)
    a = u @ loc - b @ (G.T @ loc) + cond_sd * z
    return float(a), b, np.zeros(0)


def depth_radius(tau):
    """Radius of the halfspace-depth region of a standard spherical Gaussian."""
    return float(norm.ppf(1.0 - tau))
