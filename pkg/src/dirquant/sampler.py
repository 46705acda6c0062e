"""Gibbs sampler for Bayesian quantile regression.

The working likelihood is the asymmetric Laplace distribution written as a
normal location-scale mixture over exponential latents ``v``::

    y | v ~ N(D coef + theta v, psi2 sigma V),   v_i ~ Exp(mean sigma)

with a zero-mean normal prior (precision ``zeta``) on the unpenalized
coefficients, RW2 priors (precision ``nu_j``) on spline blocks, gamma
hyperpriors on every precision and an inverse-gamma prior on ``sigma``.
"""

from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np
from scipy.linalg import solve_triangular

from .errors import DivergedChain, InvalidArgument, NumericalFailure

V_FLOOR = 1e-12
# precision placed on the constant direction of a centred spline block
_CONSTANT_PRECISION = 1.0


def _check_tau(tau):
    if not (0.0 < tau < 1.0):
        raise InvalidArgument(f"quantile level must lie in (0, 1), got {tau}")


@dataclass(frozen=True)
class ALParams:
    mu: float
    sigma: float
    tau: float

    def __post_init__(self):
        _check_tau(self.tau)
        if not self.sigma > 0:
            raise InvalidArgument(f"sigma must be positive, got {self.sigma}")


@dataclass(frozen=True)
class MixtureConstants:
    theta: float
    psi2: float


def mixture_constants(tau):
    _check_tau(tau)
    q = tau * (1.0 - tau)
    return MixtureConstants(theta=(1.0 - 2.0 * tau) / q, psi2=2.0 / q)


def check_loss(u, tau):
    """``u * (tau - 1{u < 0})``, elementwise."""
    u = np.asarray(u, dtype=float)
    return u * (tau - (u < 0))


def al_density(y, p):
    """Asymmetric Laplace density at ``y``."""
    z = (np.asarray(y, dtype=float) - p.mu) / p.sigma
    return p.tau * (1.0 - p.tau) / p.sigma * np.exp(-check_loss(z, p.tau))


def al_cdf(y, p):
    z = (np.asarray(y, dtype=float) - p.mu) / p.sigma
    lower = p.tau * np.exp((1.0 - p.tau) * np.minimum(z, 0.0))
    upper = 1.0 - (1.0 - p.tau) * np.exp(-p.tau * np.maximum(z, 0.0))
    return np.where(z < 0, lower, upper)


def sample_inverse_gaussian(mean, shape, rng, size=None):
    """Inverse-Gaussian draws by the Michael-Schucany-Haas transform.

    The smaller root is evaluated as ``mean / (1 + a + sqrt(a^2 + 2a))`` with
    ``a = mean * chi2 / (2 shape)``, which avoids the cancellation of the
    textbook form when ``mean`` is large.
    """
    mean = np.asarray(mean, dtype=float)
    shape = np.asarray(shape, dtype=float)
    if size is None:
        size = np.broadcast(mean, shape).shape
    nu = rng.standard_normal(size)
    u = rng.random(size)
    a = mean * nu * nu / (2.0 * shape)
    with np.errstate(over="ignore"):
        x = mean / (1.0 + a + np.sqrt(a * a + 2.0 * a))
        out = np.where(u <= mean / (mean + x), x, mean * mean / x)
    return out


@dataclass(frozen=True)
class PriorSpec:
    coef_shape: float = 0.001
    coef_rate: float = 0.001
    sigma_shape: float = 0.001
    sigma_rate: float = 0.001
    rw2_shape: float = 0.001
    rw2_rate: float = 0.001

    def __post_init__(self):
        for name, value in self.__dict__.items():
            if not value > 0:
                raise InvalidArgument(f"prior {name} must be positive, got {value}")


@dataclass(frozen=True)
class McmcSettings:
    iterations: int = 22000
    burn_in: int = 2000
    thin: int = 20
    seed: int = 0

    def __post_init__(self):
        if self.iterations < 1 or self.thin < 1 or self.burn_in < 0:
            raise InvalidArgument("iterations and thin must be >= 1, burn_in >= 0")
        if self.burn_in >= self.iterations:
            raise InvalidArgument("burn_in must be smaller than iterations")

    @property
    def n_retained(self):
        return (self.iterations - self.burn_in) // self.thin

    def keep(self, it):
        return it >= self.burn_in and (it - self.burn_in + 1) % self.thin == 0


MCMC_PRESETS = {
    "default": dict(iterations=22000, burn_in=2000, thin=20),
    "long": dict(iterations=55000, burn_in=5000, thin=50),
    "quick": dict(iterations=2000, burn_in=500, thin=3),
}


class PenaltyBlock(NamedTuple):
    name: str
    start: int
    stop: int
    penalty: np.ndarray

    @property
    def rank(self):
        return int(np.linalg.matrix_rank(self.penalty))


@dataclass
class GibbsState:
    coef: np.ndarray
    latent_v: np.ndarray
    sigma: float
    zeta: float
    nu: np.ndarray


@dataclass
class DrawStore:
    """Retained draws, one row per draw.

    Columns are the regression coefficients followed by ``sigma``, ``zeta``
    and one ``nu_<block>`` column per penalized block.
    """

    names: list
    values: np.ndarray
    n_coef: int
    v_floor_count: int = 0
    latent: Optional[np.ndarray] = field(default=None, repr=False)

    def __len__(self):
        return self.values.shape[0]

    @property
    def coef(self):
        return self.values[:, : self.n_coef]

    @property
    def sigma(self):
        return self.values[:, self.n_coef]

    @property
    def zeta(self):
        return self.values[:, self.n_coef + 1]

    @property
    def nu(self):
        return self.values[:, self.n_coef + 2 :]

    def column(self, name):
        return self.values[:, self.names.index(name)]

    def to_csv(self, path):
        np.savetxt(path, self.values, fmt="%.17g", delimiter=",",
                   header=",".join(self.names), comments="")

    def save(self, path):
        """Flat binary table (``.npy``); column names travel in the CSV header."""
        np.save(path, self.values, allow_pickle=False)

    @classmethod
    def load(cls, npy_path, names, n_coef):
        values = np.load(npy_path, allow_pickle=False)
        return cls(names=list(names), values=values, n_coef=n_coef)


def _cholesky(Q):
    try:
        return np.linalg.cholesky(Q)
    except np.linalg.LinAlgError:
        pass
    scale = max(1.0, float(np.mean(np.abs(np.diag(Q))))) if Q.size else 1.0
    jitter = 1e-10
    while jitter <= 1e-6 * (1 + 1e-9):
        try:
            return np.linalg.cholesky(Q + jitter * scale * np.eye(Q.shape[0]))
        except np.linalg.LinAlgError:
            jitter *= 10.0
    raise NumericalFailure("coefficient precision matrix is not positive definite")


class GibbsSampler:
    """One chain for one quantile level.

    ``y`` is a plain attribute so joint-distribution tests can resimulate the
    data between sweeps.
    """

    def __init__(self, design, y, tau, priors=None, penalty_blocks=(), rng=None,
                 fixed_precisions=None):
        self.D = np.asarray(design, dtype=float)
        if self.D.ndim != 2:
            raise InvalidArgument("design must be a 2-D matrix")
        self.y = np.asarray(y, dtype=float)
        n, P = self.D.shape
        if self.y.shape != (n,):
            raise InvalidArgument(f"response length {self.y.shape} does not match design rows {n}")
        if not np.all(np.isfinite(self.D)) or not np.all(np.isfinite(self.y)):
            raise InvalidArgument("design and response must be finite")
        self.tau = tau
        self.mc = mixture_constants(tau)
        self.priors = priors or PriorSpec()
        self.blocks = [PenaltyBlock(*b) if not isinstance(b, PenaltyBlock) else b
                       for b in penalty_blocks]
        self.rng = rng if rng is not None else np.random.default_rng()

        in_block = np.zeros(P, dtype=bool)
        for b in self.blocks:
            if b.stop > P or b.start < 0 or b.penalty.shape != (b.stop - b.start,) * 2:
                raise InvalidArgument(f"penalty block {b.name!r} does not fit the design")
            if in_block[b.start:b.stop].any():
                raise InvalidArgument("penalty blocks overlap")
            in_block[b.start:b.stop] = True
        self.fixed = np.flatnonzero(~in_block)
        self.block_ranks = [b.rank for b in self.blocks]
        self.block_priors = []
        for b in self.blocks:
            K = b.stop - b.start
            self.block_priors.append(np.full((K, K), _CONSTANT_PRECISION / K))
        self.fixed_precisions = dict(fixed_precisions or {})
        self.v_floor_count = 0
        self.state = self._initial_state()

    def _initial_state(self):
        n, P = self.D.shape
        if n > 0:
            A = self.D.T @ self.D + 1e-6 * np.eye(P)
            coef = np.linalg.solve(A, self.D.T @ self.y)
            sigma = float(np.mean(check_loss(self.y - self.D @ coef, self.tau)))
            sigma = sigma if sigma > 0 else 1.0
        else:
            coef, sigma = np.zeros(P), 1.0
        self._center(coef)
        nu = np.array([self.fixed_precisions.get(j, 1.0) for j in range(len(self.blocks))])
        return GibbsState(coef=coef, latent_v=np.full(n, sigma), sigma=sigma, zeta=1.0, nu=nu)

    def _center(self, coef):
        for b in self.blocks:
            coef[b.start:b.stop] -= coef[b.start:b.stop].mean()

    def step(self):
        s = self.state
        D, y, rng = self.D, self.y, self.rng
        theta, psi2 = self.mc.theta, self.mc.psi2
        p = self.priors
        n, P = D.shape

        w = 1.0 / (psi2 * s.sigma * s.latent_v)
        Dw = D * w[:, None]
        Q = D.T @ Dw
        Q[self.fixed, self.fixed] += s.zeta
        for j, b in enumerate(self.blocks):
            Q[b.start:b.stop, b.start:b.stop] += s.nu[j] * b.penalty + self.block_priors[j]
        rhs = Dw.T @ (y - theta * s.latent_v)
        L = _cholesky(Q)
        m = solve_triangular(L, rhs, lower=True)
        coef = solve_triangular(L.T, m + rng.standard_normal(P), lower=False)
        self._center(coef)

        r = y - D @ coef
        chi = np.maximum(r * r / (psi2 * s.sigma), 1e-300)
        psi_g = theta * theta / (psi2 * s.sigma) + 2.0 / s.sigma
        with np.errstate(over="ignore", divide="ignore"):
            v = 1.0 / sample_inverse_gaussian(np.sqrt(psi_g / chi), psi_g, rng, size=n)
        low = v < V_FLOOR
        if low.any():
            self.v_floor_count += int(low.sum())
            v[low] = V_FLOOR

        e = r - theta * v
        shape = p.sigma_shape + 1.5 * n
        rate = p.sigma_rate + v.sum() + np.sum(e * e / (2.0 * psi2 * v))
        sigma = rate / rng.gamma(shape)

        beta = coef[self.fixed]
        zeta = rng.gamma(p.coef_shape + 0.5 * beta.size) / (p.coef_rate + 0.5 * beta @ beta)
        nu = s.nu.copy()
        for j, b in enumerate(self.blocks):
            if j in self.fixed_precisions:
                continue
            g = coef[b.start:b.stop]
            nu[j] = rng.gamma(p.rw2_shape + 0.5 * self.block_ranks[j]) / (
                p.rw2_rate + 0.5 * g @ b.penalty @ g)

        self.state = GibbsState(coef=coef, latent_v=v, sigma=float(sigma), zeta=float(zeta), nu=nu)
        return self.state

    def state_ok(self):
        s = self.state
        return (np.all(np.isfinite(s.coef)) and np.isfinite(s.sigma) and s.sigma > 0
                and np.isfinite(s.zeta) and s.zeta > 0 and np.all(np.isfinite(s.nu))
                and np.all(s.nu > 0) and np.all(np.isfinite(s.latent_v)))


def draw_names(coef_names, blocks):
    return list(coef_names) + ["sigma", "zeta"] + [f"nu_{b.name}" for b in blocks]


def gibbs_run(design, y, tau, priors=None, penalty_blocks=(), settings=None,
              coef_names=None, fixed_precisions=None, keep_latent=False):
    """Run one chain and return the retained draws.

    Parameters
    ----------
    design : (n, P) array
    y : (n,) array
    tau : float
        Quantile level in (0, 1).
    penalty_blocks : sequence of ``PenaltyBlock`` or ``(name, start, stop, K)``
        Column ranges carrying an RW2-type prior with their penalty matrix.
    settings : McmcSettings
        Chain length, burn-in, thinning and seed.
    fixed_precisions : dict, optional
        Block index -> precision held fixed instead of sampled.
    """
    settings = settings or McmcSettings()
    rng = np.random.default_rng(settings.seed)
    sampler = GibbsSampler(design, y, tau, priors, penalty_blocks, rng, fixed_precisions)
    P = sampler.D.shape[1]
    if coef_names is None:
        coef_names = [f"b{j}" for j in range(P)]
    names = draw_names(coef_names, sampler.blocks)

    out = np.empty((settings.n_retained, len(names)))
    latent = np.empty((settings.n_retained, sampler.D.shape[0])) if keep_latent else None
    row = 0
    for it in range(settings.iterations):
        sampler.step()
        if not sampler.state_ok():
            raise DivergedChain("non-finite or non-positive sampler state", it)
        if settings.keep(it):
            s = sampler.state
            out[row, :P] = s.coef
            out[row, P] = s.sigma
            out[row, P + 1] = s.zeta
            out[row, P + 2:] = s.nu
            if latent is not None:
                latent[row] = s.latent_v
            row += 1
    return DrawStore(names=names, values=out, n_coef=P,
                     v_floor_count=sampler.v_floor_count, latent=latent)
