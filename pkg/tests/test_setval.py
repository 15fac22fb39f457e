import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from opincl.errors import InputError
from opincl.setval import (CompactSet, dist_batch, dist_to_set, hausdorff, minkowski_shift,
                           project_batch, sampled_ball)

coord = st.floats(-10, 10, allow_nan=False, allow_infinity=False)


def clouds(dim=2, max_points=6):
    return arrays(np.float64, st.tuples(st.integers(1, max_points), st.just(dim)), elements=coord)


def test_member_has_zero_distance():
    r = dist_to_set([0.0, 0.0], CompactSet([[0.0, 0.0], [1.0, 1.0]]))
    assert r.distance == 0.0
    np.testing.assert_array_equal(r.nearest, [0.0, 0.0])
    assert r.index == 0


def test_singleton_in_one_dimension():
    assert dist_to_set(3.0, CompactSet([0.0])).distance == 3.0


def test_segment_projection_matches_brute_force():
    seg = CompactSet([[0.0, -1.0], [0.0, 1.0]], convex_hint=True)
    r = dist_to_set([2.0, 0.0], seg)
    # brute force over 10^6 samples of the segment
    s = np.linspace(-1.0, 1.0, 1_000_001)
    brute = np.sqrt(4.0 + s ** 2).min()
    assert abs(r.distance - brute) < 1e-12
    np.testing.assert_allclose(r.nearest, [0.0, 0.0], atol=1e-9)


def test_hull_projection_against_scipy_qp():
    from scipy.optimize import minimize

    rng = np.random.default_rng(3)
    for _ in range(20):
        P = rng.standard_normal((7, 3))
        y = 3 * rng.standard_normal(3)
        res = minimize(lambda w: np.sum((w @ P - y) ** 2), np.full(7, 1 / 7),
                       bounds=[(0, 1)] * 7,
                       constraints=[{"type": "eq", "fun": lambda w: w.sum() - 1}],
                       method="SLSQP", options={"ftol": 1e-15, "maxiter": 500})
        d = dist_to_set(y, CompactSet(P, convex_hint=True)).distance
        assert d <= np.sqrt(res.fun) + 1e-7
        assert d >= np.sqrt(res.fun) - 1e-5


def test_hausdorff_examples():
    A = CompactSet([[0.0, 0.0], [1.0, 1.0]])
    assert hausdorff(A, A) == 0.0
    assert hausdorff(CompactSet([0.0]), CompactSet([3.0])) == 3.0
    assert hausdorff(CompactSet([[0.0], [1.0]]), CompactSet([[0.0], [2.0]])) == 1.0


def test_shift_examples():
    s = minkowski_shift(CompactSet([0.0]), [1.0])
    np.testing.assert_array_equal(s.points, [[1.0]])
    s2 = minkowski_shift(CompactSet([[0.0, 0.0], [1.0, 0.0]]), [0.0, 1.0])
    np.testing.assert_array_equal(s2.points, [[0.0, 1.0], [1.0, 1.0]])
    A = CompactSet([[0.0, 0.0]])
    assert hausdorff(A, minkowski_shift(A, [3.0, 4.0])) == 5.0


def test_hull_hausdorff_uses_convexity():
    square = CompactSet([[0, 0], [1, 0], [0, 1], [1, 1]], convex_hint=True)
    centre = CompactSet([[0.5, 0.5]])
    # the centre lies inside the hull, the farthest corner is sqrt(0.5) away
    assert hausdorff(square, centre) == pytest.approx(np.sqrt(0.5), abs=1e-12)
    cloud = CompactSet([[0, 0], [1, 0], [0, 1], [1, 1]])
    assert dist_to_set([0.5, 0.5], cloud).distance == pytest.approx(np.sqrt(0.5))
    assert dist_to_set([0.5, 0.5], square).distance < 1e-9


def test_dimension_mismatch_and_bad_points():
    with pytest.raises(InputError):
        dist_to_set([1.0, 2.0, 3.0], CompactSet([[0.0, 0.0]]))
    with pytest.raises(InputError):
        CompactSet([[np.nan, 0.0]])
    with pytest.raises(InputError):
        CompactSet(np.empty((0, 2)))
    with pytest.raises(InputError):
        hausdorff(CompactSet([0.0]), CompactSet([[0.0, 0.0]]))


def test_set_is_immutable_and_round_trips():
    A = CompactSet([[0.0, 1.0], [2.0, 3.0]], convex_hint=True)
    with pytest.raises((AttributeError, ValueError)):
        A.points[0, 0] = 5.0
    B = CompactSet.from_record(A.to_record())
    np.testing.assert_array_equal(A.points, B.points)
    assert B.convex_hint


def test_sampled_ball_radius():
    B = sampled_ball([1.0, 2.0], 0.5, vertices=12)
    np.testing.assert_allclose(np.linalg.norm(B.points - [1.0, 2.0], axis=1), 0.5)
    assert B.convex_hint and len(B) == 12


def test_batch_agrees_with_single_queries(rng):
    P = rng.standard_normal((6, 2))
    Q = 2 * rng.standard_normal((30, 2))
    for convex in (False, True):
        A = CompactSet(P, convex_hint=convex)
        d, near, _ = project_batch(Q, A)
        # the hull stopping tolerance scales with the largest query in a batch
        tol = 1e-9 if convex else 0.0
        for k in range(len(Q)):
            r = dist_to_set(Q[k], A)
            assert abs(r.distance - d[k]) <= tol
            np.testing.assert_allclose(r.nearest, near[k], atol=max(tol, 1e-15) * 100)


@given(clouds(), clouds(), clouds())
def test_hausdorff_is_symmetric_and_triangular(a, b, c):
    A, B, C = CompactSet(a), CompactSet(b), CompactSet(c)
    assert hausdorff(A, B) == hausdorff(B, A)
    assert hausdorff(A, C) <= hausdorff(A, B) + hausdorff(B, C) + 1e-12


def test_triangle_inequality_on_many_random_triples():
    rng = np.random.default_rng(11)
    worst = -np.inf
    for _ in range(10_000):
        sets = [CompactSet(rng.standard_normal((rng.integers(1, 5), 2))) for _ in range(3)]
        A, B, C = sets
        worst = max(worst, hausdorff(A, C) - hausdorff(A, B) - hausdorff(B, C))
    assert worst <= 1e-12


@given(clouds(), arrays(np.float64, 2, elements=coord), arrays(np.float64, 2, elements=coord),
       st.booleans())
def test_distance_is_one_lipschitz(pts, y, y2, convex):
    A = CompactSet(pts, convex_hint=convex)
    d = dist_batch(np.vstack([y, y2]), A)
    assert abs(d[0] - d[1]) <= np.linalg.norm(y - y2) + 1e-9


@given(clouds(), st.integers(0, 5))
def test_zero_distance_exactly_at_members(pts, k):
    A = CompactSet(pts)
    y = pts[k % len(pts)]
    assert dist_to_set(y, A).distance == 0.0
    assert dist_to_set(y + np.array([1e-3, 0.0]), A).distance > 0.0 or \
        np.any(np.all(np.abs(pts - (y + [1e-3, 0.0])) < 1e-12, axis=1))
