import numpy as np
import pytest
from scipy.stats import norm

from dirquant.errors import InvalidArgument
from dirquant.geometry import direction_grid_2d, direction_grid_3d, project
from dirquant.synthetic import GeneratorSpec, depth_radius, generate, population_hyperplane


def test_gaussian_covariance_near_identity():
    Y, X = generate(GeneratorSpec("spherical-gaussian", n=100_000, k=2, seed=3))
    assert Y.shape == (100_000, 2) and X.shape == (100_000, 0)
    assert np.max(np.abs(np.cov(Y.T) - np.eye(2))) < 0.02


@pytest.mark.parametrize("kind", ["spherical-gaussian", "elliptical", "linear-heteroscedastic"])
def test_fixed_seed_is_deterministic(kind):
    spec = GeneratorSpec(kind, n=50, k=3, seed=11)
    (Y1, X1), (Y2, X2) = generate(spec), generate(spec)
    assert Y1.tobytes() == Y2.tobytes() and X1.tobytes() == X2.tobytes()
    Y3, _ = generate(GeneratorSpec(kind, n=50, k=3, seed=12))
    assert not np.array_equal(Y1, Y3)


def test_homoscedastic_lines_are_parallel():
    spec = GeneratorSpec("linear-heteroscedastic", k=2, params={"gamma": 0.0, "beta1": [1.0, -0.5]})
    for d in direction_grid_2d(8):
        slopes = [population_hyperplane(spec, d, t)[2][0] for t in (0.1, 0.5, 0.9)]
        assert np.ptp(slopes) == 0.0
    hetero = GeneratorSpec("linear-heteroscedastic", k=2, params={"gamma": 2.0})
    d = direction_grid_2d(8)[0]
    assert population_hyperplane(hetero, d, 0.9)[2][0] > population_hyperplane(hetero, d, 0.1)[2][0]


def test_heteroscedastic_scale_grows_with_x():
    Y, X = generate(GeneratorSpec("linear-heteroscedastic", n=40_000, k=2,
                                  params={"gamma": 2.0, "beta1": 0.0}, seed=1))
    x = X[:, 0]
    assert x.min() >= 0 and x.max() <= 1
    lo, hi = Y[x < 0.1, 0].std(), Y[x > 0.9, 0].std()
    assert hi / lo == pytest.approx(2.9 / 1.1, rel=0.05)


def test_heteroscedastic_hyperplane_matches_sample():
    spec = GeneratorSpec("linear-heteroscedastic", n=200_000, k=2,
                         params={"gamma": 1.5, "beta0": [0.3, -0.2], "beta1": [1.0, 2.0]}, seed=2)
    Y, X = generate(spec)
    x = X[:, 0]
    band = np.abs(x - 0.6) < 0.01
    for d in direction_grid_2d(6):
        a, b, beta = population_hyperplane(spec, d, 0.25)
        target = a + beta[0] * 0.6
        emp = np.quantile(project(Y[band], d).y_u, 0.25)
        assert emp == pytest.approx(target, abs=0.06)
        np.testing.assert_array_equal(b, 0.0)


def test_elliptical_hyperplane_against_sample():
    L = np.array([[1.0, 0.0], [0.8, 0.5]])
    spec = GeneratorSpec("elliptical", n=400_000, k=2, params={"cov_factor": L, "location": [1.0, -1.0]},
                         seed=4)
    Y, _ = generate(spec)
    d = direction_grid_2d(8)[1]
    a, b, _ = population_hyperplane(spec, d, 0.3)
    p = project(Y, d)
    # residuals off the population plane carry probability tau below zero
    r = p.y_u - a - p.y_perp @ b
    assert np.mean(r < 0) == pytest.approx(0.3, abs=0.005)
    # and are uncorrelated with the regressor, so b is the regression slope
    assert abs(np.corrcoef(r, p.y_perp[:, 0])[0, 1]) < 0.01


def test_spherical_plane_is_flat_in_3d():
    spec = GeneratorSpec("spherical-gaussian", k=3)
    for d in direction_grid_3d(10):
        a, b, beta = population_hyperplane(spec, d, 0.2)
        assert a == pytest.approx(norm.ppf(0.2))
        assert b.shape == (2,) and beta.shape == (0,)


def test_depth_radius():
    assert depth_radius(0.2) == pytest.approx(0.8416212335729143)
    assert depth_radius(0.5) == 0.0


@pytest.mark.parametrize("kwargs", [dict(kind="other"), dict(n=0), dict(k=1),
                                    dict(kind="elliptical", params={"cov_factor": np.eye(3)}),
                                    dict(kind="linear-heteroscedastic", params={"gamma": -1.0})])
def test_invalid_specs(kwargs):
    with pytest.raises(InvalidArgument):
        GeneratorSpec(**kwargs)
