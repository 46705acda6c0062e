"""Noncrossing adjustment of separately fitted quantile levels.

For each direction the fits at levels ``tau_1 < ... < tau_L`` induce, through
the asymmetric Laplace quantile function, an estimate of every level ``p``
from every fit. Those induced posterior means are smoothed across ``tau``
with a zero-mean Gaussian process (squared-exponential kernel, per-fit noise
variances) and the predictive mean at ``tau = p`` replaces the raw estimate.
The kernel bandwidth is searched on a geometric ladder until the adjusted
quantiles are nondecreasing at every check point.
"""

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.spatial import ConvexHull, QhullError

from .errors import AdjustmentFailure, InvalidArgument, InvalidState, NumericalFailure


def induced_offset(p, tau):
    """Standardized AL quantile ``(Q(p) - mu) / sigma`` for a fit at ``tau``."""
    p = np.asarray(p, dtype=float)
    with np.errstate(divide="ignore"):
        low = np.log(p / tau) / (1.0 - tau)
        high = -np.log((1.0 - p) / (1.0 - tau)) / tau
    return np.where(p <= tau, low, high)


def induced_quantile(p, mu, sigma, tau):
    """Quantile function of ``AL(mu, sigma, tau)`` evaluated at level ``p``."""
    return np.asarray(mu) + np.asarray(sigma) * induced_offset(p, tau)


@dataclass
class GpConfig:
    sigma2_k: float = 100.0
    bandwidth: float = 1e-3
    jitter: float = 1e-10
    ladder_start: float = 1e-3
    ladder_factor: float = 1.5
    ladder_cap: float = 1e5
    refine: bool = False

    def __post_init__(self):
        if not (self.sigma2_k > 0 and self.bandwidth > 0):
            raise InvalidArgument("sigma2_k and bandwidth must be positive")
        if not (self.ladder_factor > 1 and 0 < self.ladder_start < self.ladder_cap):
            raise InvalidArgument("bandwidth ladder needs factor > 1 and 0 < start < cap")


@dataclass
class InducedQuantileGrid:
    """Induced posterior means and variances.

    ``mean[c, m, l]`` is the posterior mean at check point ``c`` of the level
    ``p_grid[m]`` quantile induced by the fit at ``taus[l]``; ``var`` holds
    the matching posterior variances.
    """

    taus: np.ndarray
    p_grid: np.ndarray
    mean: np.ndarray
    var: np.ndarray

    def __post_init__(self):
        self.taus = np.asarray(self.taus, dtype=float)
        self.p_grid = np.asarray(self.p_grid, dtype=float)
        self.mean = np.asarray(self.mean, dtype=float)
        self.var = np.asarray(self.var, dtype=float)
        if np.any(np.diff(self.taus) <= 0) or np.any(np.diff(self.p_grid) <= 0):
            raise InvalidArgument("tau and p grids must be strictly increasing")
        if self.mean.ndim == 2:
            self.mean, self.var = self.mean[None], self.var[None]
        expect = (self.mean.shape[0], self.p_grid.size, self.taus.size)
        if self.mean.shape != expect or self.var.shape != expect:
            raise InvalidArgument(f"grid arrays must have shape (points, {expect[1]}, {expect[2]})")
        if np.any(self.var < 0):
            raise InvalidArgument("induced variances must be non-negative")

    @property
    def n_points(self):
        return self.mean.shape[0]

    @property
    def level_index(self):
        """Positions of the fitted levels inside ``p_grid``."""
        return np.array([int(np.argmin(np.abs(self.p_grid - t))) for t in self.taus])

    @property
    def raw(self):
        """Unadjusted estimates ``mean[c, tau_l, l]``, shape (points, L)."""
        idx = self.level_index
        return self.mean[:, idx, np.arange(self.taus.size)]

    def own_variance(self):
        """Variance of the level-``p`` estimate from the fit nearest to ``p``, shape (points, M)."""
        nearest = np.array([int(np.argmin(np.abs(self.taus - p))) for p in self.p_grid])
        return self.var[:, np.arange(self.p_grid.size), nearest]

    def subset(self, points):
        return InducedQuantileGrid(self.taus, self.p_grid, self.mean[points], self.var[points])


def refined_grid(taus, refine=True):
    taus = np.asarray(taus, dtype=float)
    if not refine or taus.size < 2:
        return taus.copy()
    mids = 0.5 * (taus[:-1] + taus[1:])
    return np.sort(np.concatenate([taus, mids]))


def induced_moments(coef_draws, sigma_draws, tau, rows, p_grid):
    """Mean and variance over draws of the induced quantiles of one fit.

    Returns two arrays of shape (points, len(p_grid)).
    """
    coef_draws = np.atleast_2d(coef_draws)
    if coef_draws.shape[0] == 0:
        raise InvalidState("no retained draws")
    eta = np.atleast_2d(rows) @ coef_draws.T
    h = induced_offset(p_grid, tau)
    sig = np.asarray(sigma_draws, dtype=float)
    # Q_t(p) = eta_t + sigma_t h(p); moments expand without materializing (T, C, M)
    m_eta, m_sig = eta.mean(axis=1), sig.mean()
    v_eta = eta.var(axis=1)
    v_sig = sig.var()
    c_es = ((eta - m_eta[:, None]) * (sig - m_sig)[None, :]).mean(axis=1)
    mean = m_eta[:, None] + m_sig * h[None, :]
    var = v_eta[:, None] + 2.0 * c_es[:, None] * h[None, :] + v_sig * h[None, :] ** 2
    return mean, np.maximum(var, 0.0)


def induced_grid(draw_stores, taus, rows, p_grid=None):
    """Assemble the grid for one direction from per-level draw stores."""
    taus = np.asarray(taus, dtype=float)
    p_grid = taus if p_grid is None else np.asarray(p_grid, dtype=float)
    rows = np.atleast_2d(rows)
    C, M, L = rows.shape[0], p_grid.size, taus.size
    mean = np.empty((C, M, L))
    var = np.empty((C, M, L))
    for l, (store, tau) in enumerate(zip(draw_stores, taus)):
        mean[:, :, l], var[:, :, l] = induced_moments(store.coef, store.sigma, tau, rows, p_grid)
    return InducedQuantileGrid(taus, p_grid, mean, var)


def kernel(a, b, sigma2_k, bandwidth):
    d = np.subtract.outer(np.asarray(a, dtype=float), np.asarray(b, dtype=float))
    return sigma2_k * np.exp(-0.5 * (d / bandwidth) ** 2)


def _weights(K, noise, kvec, cfg):
    """Solve ``(K + diag(noise)) w = kvec`` for a batch, escalating jitter."""
    L = K.shape[-1]
    A = K[None] + noise[:, :, None] * np.eye(L)[None]
    eye = np.eye(L)[None]
    scale = float(K[0, 0]) if K.size else 1.0
    jitter = 0.0
    while True:
        try:
            np.linalg.cholesky(A + jitter * scale * eye)
            return np.linalg.solve(A + jitter * scale * eye, kvec[:, :, None])[:, :, 0]
        except np.linalg.LinAlgError:
            jitter = cfg.jitter if jitter == 0.0 else jitter * 10.0
            if jitter > 1e-6 * (1 + 1e-9):
                raise NumericalFailure("kernel matrix is ill-conditioned beyond jitter escalation")


@dataclass
class AdjustedQuantiles:
    """Predictive means/variances on ``p_grid`` for each check point."""

    p_grid: np.ndarray
    taus: np.ndarray
    mean: np.ndarray
    var: np.ndarray
    weights: np.ndarray
    bandwidth: float

    @property
    def at_levels(self):
        idx = [int(np.argmin(np.abs(self.p_grid - t))) for t in self.taus]
        return self.mean[:, idx]

    def violations(self):
        """Negative increments of the adjusted mean along ``p_grid`` (exact check)."""
        return np.diff(self.mean, axis=1)

    @property
    def monotone(self):
        return bool(np.all(self.violations() >= 0.0))

    def worst(self):
        d = self.violations()
        c, m = np.unravel_index(int(np.argmin(d)), d.shape)
        return {"point": int(c), "p_low": float(self.p_grid[m]), "p_high": float(self.p_grid[m + 1]),
                "magnitude": float(-d[c, m])}


def _predict(grid, cfg, bandwidth, sigma2_k):
    C, M, L = grid.mean.shape
    K = kernel(grid.taus, grid.taus, sigma2_k, bandwidth)
    kvec = kernel(grid.p_grid, grid.taus, sigma2_k, bandwidth)  # (M, L)
    kb = np.broadcast_to(kvec[None], (C, M, L)).reshape(C * M, L)
    noise = grid.var.reshape(C * M, L)
    W = _weights(K, noise, kb, cfg)
    mean = np.einsum("bl,bl->b", W, grid.mean.reshape(C * M, L)).reshape(C, M)
    s2prime = sigma2_k - np.einsum("bl,bl->b", W, kb).reshape(C, M)
    var = s2prime + grid.own_variance()
    return mean, var, W.reshape(C, M, L)


def adjust(grid, cfg, bandwidth=None):
    """GP predictive mean/variance at every check point and level of ``grid``."""
    bandwidth = cfg.bandwidth if bandwidth is None else bandwidth
    sigma2_k = cfg.sigma2_k
    for _ in range(4):
        try:
            mean, var, W = _predict(grid, cfg, bandwidth, sigma2_k)
            break
        except NumericalFailure:
            warnings.warn(f"kernel solve failed with sigma2_k={sigma2_k}; reducing it tenfold",
                          RuntimeWarning, stacklevel=2)
            sigma2_k /= 10.0
    else:
        raise NumericalFailure("kernel solve failed after reducing sigma2_k")
    return AdjustedQuantiles(grid.p_grid, grid.taus, mean, var, W, bandwidth)


def gp_predict(grid, cfg, p, point=0):
    """Predictive ``(mean, variance, weights)`` at level ``p`` for one check point.

    ``p`` must be one of ``grid.p_grid``; ``cfg.bandwidth`` is the kernel bandwidth.
    """
    m = np.flatnonzero(np.isclose(grid.p_grid, p, rtol=0, atol=1e-12))
    if m.size == 0:
        raise InvalidArgument(f"level {p} is not on the induced grid")
    row = InducedQuantileGrid(grid.taus, grid.p_grid[m], grid.mean[point:point + 1, m],
                              grid.var[point:point + 1, m])
    out = adjust(row, cfg)
    return float(out.mean[0, 0]), float(out.var[0, 0]), out.weights[0, 0]


def bandwidth_search(grid, cfg, warm_start=None):
    """Smallest ladder bandwidth giving nondecreasing adjusted quantiles.

    Without a warm start the ladder climbs from ``cfg.ladder_start``. With a
    warm start ``b0`` the search first evaluates ``b0``; if already monotone it
    walks down while monotonicity holds, otherwise it climbs from ``b0``.

    Returns
    -------
    bandwidth : float
    adjusted : AdjustedQuantiles
    """
    f = cfg.ladder_factor
    if warm_start is not None and warm_start > 0:
        b = float(warm_start)
        adj = adjust(grid, cfg, b)
        if adj.monotone:
            while b / f >= cfg.ladder_start:
                cand = adjust(grid, cfg, b / f)
                if not cand.monotone:
                    break
                b, adj = b / f, cand
            return b, adj
        b *= f
    else:
        b = cfg.ladder_start
        adj = None
    while b <= cfg.ladder_cap:
        adj = adjust(grid, cfg, b)
        if adj.monotone:
            return b, adj
        b *= f
    worst = adj.worst() if adj is not None else None
    raise AdjustmentFailure(f"no bandwidth up to {cfg.ladder_cap} removes crossing", worst)


def raw_crossings(grid):
    """Number of adjacent level pairs whose raw estimates decrease, per check point."""
    return np.sum(np.diff(grid.raw, axis=1) < 0, axis=1)


def _farthest_points(X, m):
    sd = X.std(axis=0)
    Z = (X - X.mean(axis=0)) / np.where(sd > 0, sd, 1.0)
    chosen = [int(np.argmax(np.sum(Z * Z, axis=1)))]
    dist = np.sum((Z - Z[chosen[0]]) ** 2, axis=1)
    while len(chosen) < m:
        j = int(np.argmax(dist))
        chosen.append(j)
        dist = np.minimum(dist, np.sum((Z - Z[j]) ** 2, axis=1))
    return np.sort(chosen)


def check_points(continuous, categorical=None, cap=256):
    """Covariate points at which crossing is checked.

    Vertices of the convex hull of the continuous coordinates, crossed with
    every observed combination of categorical codes, thinned to ``cap``
    points by farthest-point subsampling.
    """
    X = np.asarray(continuous, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    n, d = X.shape
    if n == 0:
        raise InvalidArgument("check points need data")
    if d == 0:
        base = np.zeros((1, 0))
    elif d == 1:
        base = np.unique([X[:, 0].min(), X[:, 0].max()])[:, None]
    else:
        try:
            base = X[np.sort(ConvexHull(X).vertices)]
        except QhullError:
            idx = np.unique(np.concatenate([np.argmin(X, axis=0), np.argmax(X, axis=0)]))
            base = X[idx]
    if categorical is not None and np.asarray(categorical).size:
        levels = np.unique(np.asarray(categorical, dtype=float).reshape(n, -1), axis=0)
        pts = np.array([np.concatenate([b, lv]) for b in base for lv in levels])
    else:
        pts = base
    if pts.shape[0] > cap:
        pts = pts[_farthest_points(pts, cap)]
    return pts


@dataclass
class DirectionAdjustment:
    direction: int
    crossed: bool
    bandwidth: float
    grid: InducedQuantileGrid
    adjusted: AdjustedQuantiles
    coef: np.ndarray
    reference_shift: np.ndarray

    @property
    def raw_crossing_count(self):
        return int(raw_crossings(self.grid).sum())


def adjusted_coefficients(mean_coefs, sigma_means, taus, ref_grid, ref_adjusted, mode="intercept"):
    """Map adjusted quantiles at the reference point back to hyperplane coefficients.

    ``intercept`` shifts each level's intercept by the adjustment at the
    reference point and keeps the slopes. ``weights`` recombines all levels'
    coefficients with the GP weights at the reference point, which reproduces
    the adjusted value there and keeps the hyperplanes an affine function of
    the same weights everywhere.
    """
    coefs = np.array(mean_coefs, dtype=float)
    taus = np.asarray(taus, dtype=float)
    shift = ref_adjusted.at_levels[0] - ref_grid.raw[0]
    if mode == "intercept":
        coefs[:, 0] += shift
        return coefs, shift
    if mode != "weights":
        raise InvalidArgument(f"unknown coefficient mapping {mode!r}")
    idx = [int(np.argmin(np.abs(ref_adjusted.p_grid - t))) for t in taus]
    W = ref_adjusted.weights[0, idx]  # (L, L)
    out = W @ np.asarray(mean_coefs, dtype=float)
    offsets = np.array([[s * induced_offset(p, t) for s, t in zip(sigma_means, taus)] for p in taus])
    out[:, 0] += np.sum(W * offsets, axis=1)
    return out, shift


def adjust_direction(draw_stores, taus, check_rows, reference_row, cfg, warm_start=None,
                     mode="intercept", direction=0):
    """Run the crossing check and, when needed, the bandwidth search for one direction."""
    taus = np.asarray(taus, dtype=float)
    p_grid = refined_grid(taus, cfg.refine)
    grid = induced_grid(draw_stores, taus, check_rows, p_grid)
    ref_grid = induced_grid(draw_stores, taus, reference_row, p_grid)
    mean_coefs = np.array([s.coef.mean(axis=0) for s in draw_stores])
    crossed = bool(raw_crossings(grid).any())
    if not crossed:
        idx = grid.level_index
        eye = np.broadcast_to(np.eye(taus.size), (grid.n_points, taus.size, taus.size))
        passthrough = AdjustedQuantiles(taus.copy(), taus, grid.raw,
                                        grid.var[:, idx, np.arange(taus.size)], eye.copy(), np.nan)
        return DirectionAdjustment(direction, False, None, grid, passthrough, mean_coefs,
                                   np.zeros(taus.size))
    b, adjusted = bandwidth_search(grid, cfg, warm_start)
    ref_adj = adjust(ref_grid, cfg, b)
    sigma_means = [float(np.mean(s.sigma)) for s in draw_stores]
    coefs, shift = adjusted_coefficients(mean_coefs, sigma_means, taus, ref_grid, ref_adj, mode)
    return DirectionAdjustment(direction, True, b, grid, adjusted, coefs, shift)


def adjust_directions(inputs, cfg, mode="intercept"):
    """Adjust directions in order, warm-starting each search from the last bandwidth found.

    ``inputs`` yields ``(draw_stores, taus, check_rows, reference_row)`` per direction.
    """
    out, warm = [], None
    for d, (stores, taus, rows, ref) in enumerate(inputs):
        res = adjust_direction(stores, taus, rows, ref, cfg, warm, mode, direction=d)
        if res.crossed:
            warm = res.bandwidth
        out.append(res)
    return out
