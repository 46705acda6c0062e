"""Expand a model specification into (direction, level) fits and run them.

Tasks are ordered direction-major. Every task derives its own seed from
the base seed and its (direction, level) position, so results do not depend
on the number of workers or on scheduling.
"""

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
import logging

import numpy as np

from .additive import SplineTerm, assemble_design, design_rows
from .errors import DirquantError, InvalidArgument, InvalidState
from .geometry import direction_grid, project
from .gp_adjust import GpConfig, adjust_directions, check_points
from .regions import Halfspace, intersect, subgradient_check
from .sampler import McmcSettings, PriorSpec, gibbs_run

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SplineConfig:
    variable: str
    degree: int = 3
    n_knots: int = 20
    range: tuple = None


@dataclass
class ModelSpec:
    responses: list
    taus: tuple
    directions: int
    linear: list = field(default_factory=list)
    categorical: dict = field(default_factory=dict)
    splines: list = field(default_factory=list)
    priors: PriorSpec = field(default_factory=PriorSpec)
    mcmc: McmcSettings = field(default_factory=McmcSettings)
    scale: bool = True

    def __post_init__(self):
        self.taus = tuple(float(t) for t in self.taus)
        self.splines = [s if isinstance(s, SplineConfig) else SplineConfig(**s) for s in self.splines]
        if len(self.responses) < 2:
            raise InvalidArgument("need at least two response columns")
        if not self.taus or any(not 0 < t < 1 for t in self.taus):
            raise InvalidArgument("tau grid must be non-empty with every level in (0, 1)")
        if any(b <= a for a, b in zip(self.taus[:-1], self.taus[1:])):
            raise InvalidArgument("tau grid must be strictly increasing")
        if self.directions < 1:
            raise InvalidArgument("direction count must be positive")

    @property
    def k(self):
        return len(self.responses)


@dataclass
class ModelData:
    """Numeric model inputs.

    ``X`` holds linear covariates after categorical expansion; ``dummy``
    flags which of its columns are reference-coded indicators.
    """

    Y: np.ndarray
    X: np.ndarray = None
    x_names: list = field(default_factory=list)
    dummy: list = field(default_factory=list)
    spline_inputs: dict = field(default_factory=dict)
    levels: dict = field(default_factory=dict)

    def __post_init__(self):
        self.Y = np.asarray(self.Y, dtype=float)
        n = self.Y.shape[0]
        self.X = np.zeros((n, 0)) if self.X is None else np.asarray(self.X, dtype=float).reshape(n, -1)
        if not self.x_names:
            self.x_names = [f"x{j + 1}" for j in range(self.X.shape[1])]
        if not self.dummy:
            self.dummy = [False] * self.X.shape[1]
        self.spline_inputs = {k: np.asarray(v, dtype=float) for k, v in self.spline_inputs.items()}

    @property
    def n(self):
        return self.Y.shape[0]


@dataclass
class PreparedModel:
    """Everything derived deterministically from (spec, data) before sampling."""

    Y: np.ndarray
    scales: np.ndarray
    data: ModelData
    splines: list
    directions: list

    @property
    def n_columns(self):
        return self.Y.shape[1] + self.data.X.shape[1] + sum(s.n_basis for s in self.splines)

    def design(self, direction):
        proj = project(self.Y, self.directions[direction])
        return proj, assemble_design(proj, self.data.X, self.splines, self.data.x_names)


def prepare(spec, data):
    if data.Y.shape[1] != spec.k:
        raise InvalidArgument(f"data has {data.Y.shape[1]} responses, spec names {spec.k}")
    Y = data.Y
    if spec.scale and data.n > 1:
        scales = Y.std(axis=0, ddof=1)
        if np.any(scales <= 0):
            raise InvalidArgument("a response column is constant and cannot be scaled")
    else:
        scales = np.ones(spec.k)
    splines = []
    for cfg in spec.splines:
        if cfg.variable not in data.spline_inputs:
            raise InvalidArgument(f"spline variable {cfg.variable!r} missing from data")
        splines.append(SplineTerm.from_data(cfg.variable, data.spline_inputs[cfg.variable],
                                            cfg.degree, cfg.n_knots, cfg.range))
    return PreparedModel(Y=Y / scales, scales=scales, data=data, splines=splines,
                         directions=direction_grid(spec.k, spec.directions))


@dataclass(frozen=True)
class QuantileTask:
    direction: int
    tau_index: int
    tau: float
    seed: int


def task_seed(base_seed, direction, tau_index):
    ss = np.random.SeedSequence(int(base_seed), spawn_key=(int(direction), int(tau_index)))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def plan(spec):
    """Direction-major list of tasks."""
    return [QuantileTask(d, l, tau, task_seed(spec.mcmc.seed, d, l))
            for d in range(spec.directions) for l, tau in enumerate(spec.taus)]


@dataclass
class FitResult:
    task: QuantileTask
    names: list = None
    n_coef: int = 0
    mean: np.ndarray = None
    sd: np.ndarray = None
    draws: object = field(default=None, repr=False)
    v_floor_count: int = 0
    divergences: int = 0
    failed: bool = False
    error: str = None

    @classmethod
    def from_draws(cls, task, draws):
        v = draws.values
        sd = v.std(axis=0, ddof=1) if len(v) > 1 else np.zeros(v.shape[1])
        return cls(task=task, names=list(draws.names), n_coef=draws.n_coef, mean=v.mean(axis=0),
                   sd=sd, draws=draws, v_floor_count=draws.v_floor_count)

    @property
    def coef(self):
        return self.mean[: self.n_coef]


def run_task(prepared, spec, task):
    """Fit one (direction, level) task; chain failures are recorded, not raised."""
    proj, (design, layout, blocks) = prepared.design(task.direction)
    settings = McmcSettings(spec.mcmc.iterations, spec.mcmc.burn_in, spec.mcmc.thin, task.seed)
    try:
        draws = gibbs_run(design, proj.y_u, task.tau, spec.priors, blocks, settings,
                          coef_names=layout.names)
    except DirquantError as exc:
        log.warning("task u%d tau=%g failed: %s", task.direction, task.tau, exc)
        return FitResult(task=task, failed=True, divergences=1, error=str(exc))
    return FitResult.from_draws(task, draws)


_WORKER = {}


def _init_worker(prepared, spec):
    _WORKER["prepared"], _WORKER["spec"] = prepared, spec


def _run_in_worker(task):
    return run_task(_WORKER["prepared"], _WORKER["spec"], task)


def run_all(spec, data, workers=1, prepared=None):
    """Fit every task; the output order follows ``plan(spec)``."""
    prepared = prepared or prepare(spec, data)
    if prepared.Y.shape[0] < prepared.n_columns:
        raise InvalidArgument(
            f"n = {prepared.Y.shape[0]} observations is fewer than P = {prepared.n_columns} columns")
    # rank problems surface here, before any sampling
    prepared.design(0)
    tasks = plan(spec)
    if workers <= 1:
        return [run_task(prepared, spec, t) for t in tasks]
    with ProcessPoolExecutor(max_workers=workers, initializer=_init_worker,
                             initargs=(prepared, spec)) as pool:
        return list(pool.map(_run_in_worker, tasks, chunksize=max(1, len(tasks) // (4 * workers))))


def summarize(result):
    """Posterior mean, SD and central 95% interval per draw column."""
    if result.failed or result.draws is None or len(result.draws) == 0:
        raise InvalidState(f"no draws available for task {result.task}")
    v = result.draws.values
    lo, hi = np.quantile(v, [0.025, 0.975], axis=0)
    return [{"parameter": name, "mean": float(result.mean[j]), "sd": float(result.sd[j]),
             "q025": float(lo[j]), "q975": float(hi[j])} for j, name in enumerate(result.names)]


def failures(results):
    return [r for r in results if r.failed]


# -- per-direction glue for adjustment, regions and diagnostics ------------

def _continuous_columns(prepared):
    return [j for j, is_dummy in enumerate(prepared.data.dummy) if not is_dummy]


def direction_check_rows(prepared, direction, cap=256):
    """Design rows at the check points of one direction."""
    proj, (_, layout, _) = prepared.design(direction)
    data = prepared.data
    cont_idx = _continuous_columns(prepared)
    dummy_idx = [j for j, is_dummy in enumerate(data.dummy) if is_dummy]
    spline_vars = [s.variable for s in prepared.splines]
    cont = np.column_stack([proj.y_perp, data.X[:, cont_idx]]
                           + [data.spline_inputs[v][:, None] for v in spline_vars])
    cat = data.X[:, dummy_idx] if dummy_idx else None
    pts = check_points(cont, cat, cap)
    km1 = proj.y_perp.shape[1]
    nc = len(cont_idx)
    X = np.zeros((pts.shape[0], data.X.shape[1]))
    X[:, cont_idx] = pts[:, km1:km1 + nc]
    if dummy_idx:
        X[:, dummy_idx] = pts[:, km1 + nc + len(spline_vars):]
    z = {v: pts[:, km1 + nc + i] for i, v in enumerate(spline_vars)}
    return design_rows(layout, prepared.splines, pts[:, :km1], X, z)


def reference_row(prepared, direction):
    """Design row at the sample mean of all regressors."""
    proj, (design, _, _) = prepared.design(direction)
    return design.mean(axis=0)[None, :]


def coefficient_table(results, spec):
    """Posterior-mean coefficients as a (directions, levels, P) array."""
    bad = failures(results)
    if bad:
        names = ", ".join(f"u{r.task.direction}/tau={r.task.tau:g}" for r in bad)
        raise InvalidState(f"cannot build regions: failed tasks {names}")
    P = results[0].n_coef
    out = np.empty((spec.directions, len(spec.taus), P))
    for r in results:
        out[r.task.direction, r.task.tau_index] = r.coef
    return out


def adjust_all(prepared, spec, results, gp=None, mode="intercept", cap=256):
    """GP adjustment for every direction, in direction order."""
    gp = gp or GpConfig()
    coefficient_table(results, spec)
    by_task = {(r.task.direction, r.task.tau_index): r for r in results}

    def inputs():
        for d in range(spec.directions):
            stores = [by_task[(d, l)].draws for l in range(len(spec.taus))]
            yield stores, spec.taus, direction_check_rows(prepared, d, cap), reference_row(prepared, d)

    return adjust_directions(inputs(), gp, mode)


def covariate_inputs(prepared, point=None):
    """Linear-covariate row and spline inputs for a covariate point.

    ``point`` maps raw variable names to values; categorical variables take
    a level. Missing continuous variables default to their sample mean and
    missing categorical variables to the reference level.
    """
    data = prepared.data
    point = dict(point or {})
    x = np.zeros(data.X.shape[1])
    for j, name in enumerate(data.x_names):
        if not data.dummy[j]:
            x[j] = float(point.get(name, data.X[:, j].mean()))
    for var, (ref, levels) in data.levels.items():
        level = str(point.get(var, ref))
        if level not in levels and level != ref:
            raise InvalidArgument(f"unknown level {level!r} for {var!r}")
        if level != ref:
            x[data.x_names.index(f"{var}{level}")] = 1.0
    z = {s.variable: float(point.get(s.variable, data.spline_inputs[s.variable].mean()))
         for s in prepared.splines}
    return x, z


def halfspaces_at(prepared, coefs, tau_index, point=None):
    """Upper halfspaces of every direction at one level and covariate point."""
    x, z = covariate_inputs(prepared, point)
    _, (_, layout, _) = prepared.design(0)
    row = design_rows(layout, prepared.splines, np.zeros(layout.k - 1), x, z)[0]
    out = []
    for d, direction in enumerate(prepared.directions):
        coef = coefs[d, tau_index]
        normal = direction.u - direction.gamma @ coef[layout.yperp]
        out.append(Halfspace(normal=normal, offset=float(row @ coef), direction=d))
    return out


def box_bound(prepared):
    return 10.0 * float(np.max(np.abs(prepared.Y)))


def regions_at(prepared, spec, coefs, point=None):
    """Quantile regions (scaled units) for every level at one covariate point."""
    out = {}
    for l, tau in enumerate(spec.taus):
        hs = halfspaces_at(prepared, coefs, l, point)
        for h in hs:
            h.tau = tau
        out[tau] = intersect(hs, box_bound(prepared), tau=tau, covariate_point=point)
    return out


def subgradient_reports(prepared, spec, coefs):
    """Per-level subgradient statistics using each observation's own covariates."""
    reports = []
    for l, tau in enumerate(spec.taus):
        normals, offsets = [], []
        for d, direction in enumerate(prepared.directions):
            proj, (design, layout, _) = prepared.design(d)
            coef = coefs[d, l]
            b = coef[layout.yperp]
            normals.append(direction.u - direction.gamma @ b)
            offsets.append(design @ coef - proj.y_perp @ b)
        reports.append(subgradient_check(prepared.Y, np.array(normals), np.array(offsets), tau))
    return reports
