import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from conftest import affine_map
from opincl.errors import InputError
from opincl.gridfn import (Grid, GridFunction, cumulative_integral, defect, from_csv, inner,
                           integrate, interpolate, lp_norm, resample, to_csv)
from opincl.inclusion_solver import MultiMap
from opincl.setval import CompactSet

G = Grid.interval(0.0, 1.0, 41)
vals = arrays(np.float64, 41, elements=st.floats(-100, 100, allow_nan=False))


def test_constant_norms():
    g = Grid.interval(0, 1, 11)
    assert lp_norm(GridFunction.constant(g, 1.0), 1) == pytest.approx(1.0, abs=1e-15)
    for p in (1, 2, 3.5, "inf"):
        assert lp_norm(GridFunction.constant(g, 0.0), p) == 0.0


def test_l2_norm_of_identity(unit_grid):
    f = GridFunction(unit_grid, unit_grid.t)
    assert abs(lp_norm(f, 2) - 1 / math.sqrt(3)) < 1e-6


def test_sup_norm_uses_vector_magnitude():
    g = Grid.interval(0, 1, 3)
    f = GridFunction(g, [[3.0, 4.0], [0.0, 0.0], [1.0, 0.0]])
    assert lp_norm(f, math.inf) == 5.0


def test_cumulative_integral_examples(unit_grid):
    one = cumulative_integral(GridFunction.constant(unit_grid, 1.0))
    np.testing.assert_allclose(one.values[:, 0], unit_grid.t, atol=1e-14)
    zero = cumulative_integral(GridFunction.constant(unit_grid, 0.0))
    assert np.all(zero.values == 0)
    sq = cumulative_integral(GridFunction(unit_grid, 2 * unit_grid.t))
    assert np.abs(sq.values[:, 0] - unit_grid.t ** 2).max() < 1e-6


def test_cumulative_integral_rejects_boxes():
    g = Grid([0, 0], [1, 1], [5, 5])
    with pytest.raises(InputError):
        cumulative_integral(GridFunction.constant(g, 1.0))


def test_box_quadrature():
    g = Grid([0, 0], [1, 2], [21, 41])
    assert g.measure == 2.0
    f = GridFunction(g, g.coords[:, 0] * g.coords[:, 1])
    # int_0^1 int_0^2 t0 t1 = 1/2 * 2 = 1 (trapezoid is exact for bilinear)
    assert integrate(f)[0] == pytest.approx(1.0, abs=1e-13)


def test_defect_examples(unit_grid):
    t = unit_grid.t
    zero_map = MultiMap.translate(CompactSet([[0.0]]), lambda T, X: 0 * X, 0.0)
    rho = defect(GridFunction.constant(unit_grid, 1.0), GridFunction(unit_grid, t), zero_map)
    assert np.all(rho.values == 1.0)
    ident = affine_map(1.0, 0.0)
    rho = defect(GridFunction.constant(unit_grid, 0.0), GridFunction(unit_grid, t), ident)
    np.testing.assert_allclose(rho.values[:, 0], t, atol=1e-15)
    feas = defect(GridFunction(unit_grid, t), GridFunction(unit_grid, t), ident)
    assert feas.values.max() == 0.0


def test_grid_validation():
    with pytest.raises(InputError):
        Grid.interval(1.0, 0.0, 10)
    with pytest.raises(InputError):
        Grid.interval(0.0, 1.0, 1)
    with pytest.raises(InputError):
        GridFunction(G, np.ones(40))
    with pytest.raises(InputError):
        GridFunction(G, np.full(41, np.inf))
    with pytest.raises(InputError):
        lp_norm(GridFunction.constant(G, 1.0), 0.5)


def test_mixing_grids_is_rejected():
    with pytest.raises(InputError):
        GridFunction.constant(G, 1.0) + GridFunction.constant(Grid.interval(0, 1, 5), 1.0)


def test_csv_round_trip_is_exact(tmp_path):
    rng = np.random.default_rng(5)
    f = GridFunction(G, rng.standard_normal((41, 2)))
    path = tmp_path / "f.csv"
    to_csv(f, path)
    back = from_csv(path, G)
    np.testing.assert_array_equal(back.values, f.values)


def test_interpolation_and_resampling():
    f = GridFunction(G, 3 * G.t + 1)
    np.testing.assert_allclose(interpolate(f, [0.123, 0.5])[:, 0], [1.369, 2.5])
    fine = resample(f, G.refine())
    np.testing.assert_allclose(fine.values[:, 0], 3 * G.refine().t + 1, atol=1e-14)
    gb = Grid([0, 0], [1, 1], [5, 5])
    fb = GridFunction(gb, gb.coords.sum(axis=1))
    np.testing.assert_allclose(interpolate(fb, [[0.3, 0.6]]), [[0.9]])


@given(vals, vals, st.sampled_from([1, 2, 3, "inf"]))
def test_norm_triangle_inequality(a, b, p):
    f, g = GridFunction(G, a), GridFunction(G, b)
    assert lp_norm(f + g, p) <= lp_norm(f, p) + lp_norm(g, p) + 1e-12 * (1 + lp_norm(f, p) + lp_norm(g, p))


@given(vals, st.floats(-50, 50, allow_nan=False), st.sampled_from([1, 1.5, 2, "inf"]))
def test_norm_homogeneity(a, c, p):
    f = GridFunction(G, a)
    assert lp_norm(f * c, p) == pytest.approx(abs(c) * lp_norm(f, p), rel=1e-12, abs=1e-12)


@given(arrays(np.float64, 41, elements=st.floats(0, 100, allow_nan=False)))
def test_cumulative_integral_monotone_for_nonnegative(a):
    c = cumulative_integral(GridFunction(G, a)).values[:, 0]
    assert np.all(np.diff(c) >= 0)


@given(vals)
def test_l1_norm_is_last_cumulative_value(a):
    f = GridFunction(G, a)
    c = cumulative_integral(GridFunction(G, np.abs(a))).values[-1, 0]
    assert abs(lp_norm(f, 1) - c) <= 1e-12 * max(1.0, c)


@given(vals, vals)
def test_inner_is_symmetric(a, b):
    f, g = GridFunction(G, a), GridFunction(G, b)
    assert inner(f, g) == inner(g, f)
