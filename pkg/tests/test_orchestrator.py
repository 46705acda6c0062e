import numpy as np
import pytest

from dirquant import orchestrator
from dirquant.errors import DivergedChain, InvalidArgument, InvalidState
from dirquant.orchestrator import (FitResult, ModelData, ModelSpec, QuantileTask, SplineConfig,
                                   coefficient_table, covariate_inputs, failures, plan, prepare,
                                   regions_at, run_all, run_task, summarize)
from dirquant.sampler import DrawStore, McmcSettings
from dirquant.synthetic import GeneratorSpec, generate

QUICK = McmcSettings(400, 100, 2, seed=9)


def _spec(D=4, taus=(0.2,), **kw):
    return ModelSpec(responses=["y1", "y2"], taus=taus, directions=D, mcmc=QUICK, **kw)


def _gaussian(n=300, seed=0):
    Y, _ = generate(GeneratorSpec(n=n, seed=seed))
    return ModelData(Y=Y)


# -- plan ------------------------------------------------------------------

def test_plan_99_directions_three_levels():
    tasks = plan(_spec(99, (0.01, 0.02, 0.03)))
    assert len(tasks) == 297
    assert [(t.direction, t.tau_index) for t in tasks[:4]] == [(0, 0), (0, 1), (0, 2), (1, 0)]


def test_plan_single_task():
    tasks = plan(_spec(1, (0.5,)))
    assert len(tasks) == 1 and tasks[0].tau == 0.5


def test_seeds_distinct():
    tasks = plan(_spec(512, (0.1, 0.2, 0.3)))
    assert len({t.seed for t in tasks}) == len(tasks) == 1536


def test_seeds_depend_on_base_seed():
    a = plan(_spec(3))
    b = plan(ModelSpec(responses=["y1", "y2"], taus=(0.2,), directions=3, mcmc=McmcSettings(400, 100, 2, seed=10)))
    assert all(x.seed != y.seed for x, y in zip(a, b))


@pytest.mark.parametrize("taus", [(), (0.3, 0.2), (0.2, 0.2), (0.0, 0.5), (0.5, 1.0)])
def test_spec_rejects_bad_tau_grid(taus):
    with pytest.raises(InvalidArgument):
        _spec(taus=taus)


def test_spec_rejects_single_response():
    with pytest.raises(InvalidArgument):
        ModelSpec(responses=["y1"], taus=(0.5,), directions=4)


# -- summaries -------------------------------------------------------------

def _result(values):
    values = np.asarray(values, dtype=float).reshape(len(values), -1)
    names = [f"c{j}" for j in range(values.shape[1])]
    return FitResult.from_draws(QuantileTask(0, 0, 0.5, 1), DrawStore(names, values, values.shape[1]))


def test_summary_constant_draws():
    row, = summarize(_result(np.full(50, 3.25)))
    assert row["sd"] == 0.0
    assert row["q025"] == row["q975"] == row["mean"] == 3.25


def test_summary_integer_draws():
    row, = summarize(_result(np.arange(1, 101)))
    assert row["mean"] == 50.5


def test_summary_quantiles_match_sort_oracle():
    v = np.random.default_rng(0).standard_normal((10_000, 3))
    table = summarize(_result(v))
    s = np.sort(v, axis=0)
    for p, key in ((0.025, "q025"), (0.975, "q975")):
        h = (len(v) - 1) * p
        lo = int(np.floor(h))
        oracle = s[lo] + (h - lo) * (s[lo + 1] - s[lo])
        np.testing.assert_allclose([r[key] for r in table], oracle, rtol=0, atol=1e-14)
    np.testing.assert_allclose([r["sd"] for r in table], v.std(axis=0, ddof=1), rtol=1e-12)


def test_summary_without_draws():
    with pytest.raises(InvalidState):
        summarize(FitResult(task=QuantileTask(0, 0, 0.5, 1), failed=True))
    empty = FitResult(task=QuantileTask(0, 0, 0.5, 1), names=["c0"], n_coef=1,
                      draws=DrawStore(["c0"], np.zeros((0, 1)), 1))
    with pytest.raises(InvalidState):
        summarize(empty)


# -- running ---------------------------------------------------------------

def test_too_few_observations():
    with pytest.raises(InvalidArgument, match="fewer than"):
        run_all(_spec(), ModelData(Y=np.random.default_rng(0).standard_normal((4, 2)),
                                   X=np.random.default_rng(1).standard_normal((4, 3))))


def test_too_few_observations_counts_splines():
    rng = np.random.default_rng(1)
    data = ModelData(Y=rng.standard_normal((20, 2)), spline_inputs={"z": rng.uniform(size=20)})
    with pytest.raises(InvalidArgument):
        run_all(_spec(splines=[SplineConfig("z", n_knots=20)]), data)


def test_run_means_equal_draw_means():
    results = run_all(_spec(3, (0.2, 0.5)), _gaussian())
    assert len(results) == 6 and not failures(results)
    for r in results:
        assert np.max(np.abs(r.mean - r.draws.values.mean(axis=0))) <= 1e-12
        assert r.names[:2] == ["intercept", "yperp1"]


def test_task_rerun_reproduces_result():
    spec = _spec(4, (0.2, 0.4))
    data = _gaussian()
    results = run_all(spec, data)
    prepared = prepare(spec, data)
    target = results[5]
    again = run_task(prepared, spec, plan(spec)[5])
    assert again.task == target.task
    assert again.draws.values.tobytes() == target.draws.values.tobytes()


def test_workers_do_not_change_results():
    spec = _spec(3, (0.2, 0.4))
    data = _gaussian()
    one = run_all(spec, data, workers=1)
    two = run_all(spec, data, workers=2)
    for a, b in zip(one, two):
        assert a.task == b.task and a.mean.tobytes() == b.mean.tobytes()


def test_failed_task_is_recorded(monkeypatch):
    real = orchestrator.gibbs_run

    def flaky(design, y, tau, *args, **kw):
        if tau == 0.4:
            raise DivergedChain("non-finite state", 7)
        return real(design, y, tau, *args, **kw)

    monkeypatch.setattr(orchestrator, "gibbs_run", flaky)
    spec = _spec(3, (0.2, 0.4))
    results = run_all(spec, _gaussian())
    bad = failures(results)
    assert [(r.task.direction, r.task.tau) for r in bad] == [(0, 0.4), (1, 0.4), (2, 0.4)]
    assert all(r.divergences == 1 and "iteration 7" in r.error for r in bad)
    assert not results[0].failed
    with pytest.raises(InvalidState, match="u0/tau=0.4"):
        coefficient_table(results, spec)


def test_gaussian_smoke_region():
    spec = ModelSpec(responses=["y1", "y2"], taus=(0.2,), directions=16,
                     mcmc=McmcSettings(800, 200, 2, seed=1))
    data = _gaussian(n=2000, seed=5)
    results = run_all(spec, data)
    assert not failures(results)
    assert sum(r.divergences for r in results) == 0
    prepared = prepare(spec, data)
    reg = regions_at(prepared, spec, coefficient_table(results, spec))[0.2]
    radius = np.linalg.norm(reg.vertices * prepared.scales, axis=1)
    assert np.mean(np.abs(radius / 0.8416 - 1)) < 0.15


# -- data handling ---------------------------------------------------------

def test_scaling_uses_sample_sd():
    Y = np.random.default_rng(2).standard_normal((40, 2)) * [2.0, 5.0]
    prepared = prepare(_spec(), ModelData(Y=Y))
    np.testing.assert_allclose(prepared.scales, Y.std(axis=0, ddof=1))
    np.testing.assert_allclose(prepared.Y.std(axis=0, ddof=1), 1.0)
    unscaled = prepare(_spec(scale=False), ModelData(Y=Y))
    np.testing.assert_array_equal(unscaled.Y, Y)


def test_response_count_mismatch():
    with pytest.raises(InvalidArgument):
        prepare(_spec(), ModelData(Y=np.zeros((10, 3))))


def test_covariate_defaults_and_levels():
    X = np.array([[1.0, 0.0, 2.0], [0.0, 1.0, 4.0], [0.0, 0.0, 6.0], [0.0, 0.0, 8.0]])
    data = ModelData(Y=np.random.default_rng(0).standard_normal((4, 2)), X=X,
                     x_names=["edu2", "edu3", "age"], dummy=[True, True, False],
                     levels={"edu": ("1", ["2", "3"])})
    prepared = prepare(_spec(linear=["age"], categorical={"edu": "1"}), data)
    x, z = covariate_inputs(prepared)
    np.testing.assert_array_equal(x, [0.0, 0.0, 5.0])
    x, _ = covariate_inputs(prepared, {"edu": 3, "age": 1.0})
    np.testing.assert_array_equal(x, [0.0, 1.0, 1.0])
    with pytest.raises(InvalidArgument):
        covariate_inputs(prepared, {"edu": "9"})
