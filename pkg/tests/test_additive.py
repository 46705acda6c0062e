import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.interpolate import BSpline

from dirquant.additive import (SplineTerm, assemble_design, bspline_basis, design_rows,
                               rw2_penalty)
from dirquant.errors import InvalidArgument
from dirquant.geometry import direction_grid_2d, project
from dirquant.sampler import McmcSettings, gibbs_run

# scipy.interpolate.BSpline.design_matrix on knots -0.75, -0.5, ..., 1.75 (degree 3)
FROZEN_Z = np.array([0.13, 0.5, 0.77])
FROZEN_BASIS = np.array([
    [1.8431999999999997e-02, 4.6657066666666669e-01, 4.9156266666666670e-01,
     2.3434666666666670e-02, 0.0, 0.0, 0.0],
    [0.0, 0.0, 1.6666666666666666e-01, 6.6666666666666663e-01, 1.6666666666666666e-01, 0.0, 0.0],
    [0.0, 0.0, 0.0, 1.2978133333333330e-01, 6.6052266666666670e-01, 2.0961066666666672e-01,
     8.5333333333333569e-05],
])


def test_basis_frozen_values():
    np.testing.assert_allclose(bspline_basis(FROZEN_Z, 3, 5, (0.0, 1.0)), FROZEN_BASIS, atol=1e-15)


@pytest.mark.parametrize("degree", [0, 1, 2, 3, 4])
def test_basis_matches_scipy(degree):
    lo, hi, m = -2.0, 3.0, 9
    z = np.random.default_rng(degree).uniform(lo, hi, 300)
    h = (hi - lo) / (m - 1)
    t = lo + h * np.arange(-degree, m + degree)
    ref = BSpline.design_matrix(z, t, degree).toarray()
    np.testing.assert_allclose(bspline_basis(z, degree, m, (lo, hi)), ref, atol=1e-14)


def test_partition_of_unity_and_range():
    z = np.random.default_rng(0).uniform(0, 1, 10_000)
    B = bspline_basis(z, 3, 20, (0.0, 1.0))
    assert B.shape == (10_000, 22)
    assert np.max(np.abs(B.sum(axis=1) - 1)) < 1e-10
    assert B.min() >= 0 and B.max() <= 1


def test_degree_zero_two_knots_is_indicator():
    B = bspline_basis(np.array([0.0, 0.3, 1.0]), 0, 2, (0.0, 1.0))
    np.testing.assert_array_equal(B, np.ones((3, 1)))


def test_cubic_fit_has_continuous_derivative():
    rng = np.random.default_rng(1)
    gamma = rng.standard_normal(22)
    knots = np.linspace(0, 1, 20)[1:-1]
    h = 1e-6
    f = lambda z: bspline_basis(np.atleast_1d(z), 3, 20, (0.0, 1.0)) @ gamma
    left = (f(knots) - f(knots - h)) / h
    right = (f(knots + h) - f(knots)) / h
    # one-sided differences differ by O(h f'') when f' is continuous
    assert np.max(np.abs(left - right)) < 1e-2
    # a genuine kink of this size would be caught: the degree-1 basis has one
    g = lambda z: bspline_basis(np.atleast_1d(z), 1, 20, (0.0, 1.0)) @ gamma[:20]
    kink = np.abs((g(knots) - g(knots - h)) / h - (g(knots + h) - g(knots)) / h)
    assert kink.max() > 1.0


def test_out_of_range_is_clamped_with_warning():
    with pytest.warns(RuntimeWarning, match="2 spline input"):
        B = bspline_basis(np.array([-1.0, 0.5, 2.0]), 3, 5, (0.0, 1.0))
    np.testing.assert_allclose(B[0], bspline_basis(np.array([0.0]), 3, 5, (0.0, 1.0))[0])
    np.testing.assert_allclose(B[2], bspline_basis(np.array([1.0]), 3, 5, (0.0, 1.0))[0])


def test_basis_rejects_bad_arguments():
    with pytest.raises(InvalidArgument):
        bspline_basis(np.array([0.5]), 3, 3, (0.0, 1.0))
    with pytest.raises(InvalidArgument):
        bspline_basis(np.array([0.5]), 3, 5, (1.0, 1.0))


def test_rw2_small():
    np.testing.assert_array_equal(rw2_penalty(3), np.outer([1, -2, 1], [1, -2, 1]))
    with pytest.raises(InvalidArgument):
        rw2_penalty(2)


@settings(max_examples=30, deadline=None)
@given(st.integers(3, 60))
def test_rw2_null_space_exact(K):
    P = rw2_penalty(K)
    assert np.all(P @ np.ones(K) == 0)
    assert np.all(P @ np.arange(1, K + 1, dtype=float) == 0)


def test_rw2_rank():
    s = np.linalg.svd(rw2_penalty(22), compute_uv=False)
    assert int(np.sum(s > 1e-10)) == 20


def _sample(n=60, seed=0):
    rng = np.random.default_rng(seed)
    Y = rng.standard_normal((n, 2))
    return project(Y, direction_grid_2d(8)[1]), rng.standard_normal((n, 2)), rng.uniform(0, 1, n)


def test_design_column_counts():
    proj, X, z = _sample()
    D, layout, blocks = assemble_design(proj, X)
    assert D.shape[1] == layout.n_columns == 4
    assert layout.names == ["intercept", "yperp1", "x_x1", "x_x2"]
    term = SplineTerm.from_data("age", z)
    D2, layout2, blocks2 = assemble_design(proj, X, [term])
    assert D2.shape[1] == D.shape[1] + 22
    assert layout2.splines["age"] == slice(4, 26)
    assert (blocks2[0].start, blocks2[0].stop) == (4, 26)
    np.testing.assert_array_equal(blocks2[0].penalty, rw2_penalty(22))


def test_design_rowwise():
    proj, X, _ = _sample()
    perm = np.random.default_rng(3).permutation(len(X))
    D, layout, _ = assemble_design(proj, X)
    shuffled = type(proj)(proj.y_u[perm], proj.y_perp[perm])
    Dp, layout_p, _ = assemble_design(shuffled, X[perm])
    np.testing.assert_array_equal(Dp, D[perm])
    assert layout_p == layout


def test_rank_deficiency_names_columns():
    proj, X, _ = _sample()
    X = np.c_[X, X[:, 0] * 2.0]
    with pytest.raises(InvalidArgument, match="x_"):
        assemble_design(proj, X, covariate_names=["a", "b", "c"])


def test_design_rows_reproduce_training_rows():
    proj, X, z = _sample()
    term = SplineTerm.from_data("z", z, n_knots=6)
    D, layout, _ = assemble_design(proj, X, [term])
    rows = design_rows(layout, [term], proj.y_perp, X, {"z": z})
    np.testing.assert_allclose(rows, D, atol=1e-14)
    np.testing.assert_allclose(D[:, layout.splines["z"]].mean(axis=0), 0.0, atol=1e-14)


def test_huge_smoothing_precision_gives_affine_effect():
    rng = np.random.default_rng(4)
    n = 400
    z = rng.uniform(0, 1, n)
    y = np.sin(2 * np.pi * z) + 0.3 * rng.standard_normal(n)
    term = SplineTerm.from_data("z", z, n_knots=10)
    D = np.c_[np.ones(n), term.basis]
    block = ("z", 1, D.shape[1], term.penalty)
    d = gibbs_run(D, y, 0.5, penalty_blocks=[block], settings=McmcSettings(600, 200, 1, seed=0),
                  fixed_precisions={0: 1e10})
    grid = np.linspace(term.lower, term.upper, 101)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        f = term.transform(grid) @ d.coef.mean(axis=0)[1:]
    A = np.c_[np.ones_like(grid), grid]
    resid = f - A @ np.linalg.lstsq(A, f, rcond=None)[0]
    assert np.max(np.abs(resid)) < 1e-3
