import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from opincl.errors import InputError, PreconditionError
from opincl.second_order import (KINDS, Schedule, ScalarField, bidiff_interval_1d, chain_rule_check,
                                 dist2_second_difference_check, estimate_second, max_rule_check,
                                 optimality_test, random_polytope)
from opincl.setval import CompactSet

signed_square = ScalarField(lambda v: v[0] * abs(v[0]), 1)
half_square = ScalarField(lambda v: max(v[0], 0.0) ** 2, 1)
abs_product = ScalarField(lambda v: abs(v[0] * v[1]), 2)
square = ScalarField(lambda v: v[0] ** 2, 1)
unit_vec = arrays(np.float64, 2, elements=st.floats(-3, 3, allow_nan=False)).filter(
    lambda v: np.linalg.norm(v) > 1e-2)


def quadratic(M):
    M = np.asarray(M, dtype=float)
    return ScalarField(lambda v: float(v @ M @ v), M.shape[0],
                       declared_lipschitz2=2 * np.linalg.norm(M + M.T, 2))


def test_quadratic_identity_all_kinds():
    rng = np.random.default_rng(7)
    M = rng.standard_normal((3, 3))
    M = M + M.T
    f = quadratic(M)
    for _ in range(20):
        x0 = rng.standard_normal(3)
        d = rng.standard_normal(3)
        exact = 2 * d @ M @ d
        for kind in KINDS[:-1]:
            assert estimate_second(kind, f, x0, d).value == pytest.approx(exact, abs=1e-9)
        d2 = rng.standard_normal(3)
        assert estimate_second("mixed", f, x0, d, x2=d2).value == pytest.approx(2 * d @ M @ d2, abs=1e-9)


def test_signed_square_closed_forms():
    rng = np.random.default_rng(8)
    for x in 2 * rng.standard_normal(20):
        assert estimate_second("sym2plus", signed_square, [0.0], [x]).value == 0.0
        assert estimate_second("f2plus_point", signed_square, [0.0], [x]).value == \
            pytest.approx(2 * x * abs(x), abs=1e-9)
        assert estimate_second("f2plus_local", signed_square, [0.0], [x]).value == \
            pytest.approx(2 * x * x, abs=1e-9)
        assert estimate_second("f2minus_local", signed_square, [0.0], [x]).value == \
            pytest.approx(-2 * x * x, abs=1e-9)


def test_abs_product_closed_form():
    rng = np.random.default_rng(9)
    for d in rng.standard_normal((20, 2)):
        exact = 2 * abs(d[0] * d[1])
        assert estimate_second("sym2plus", abs_product, [0, 0], d).value == pytest.approx(exact, abs=1e-9)
        assert estimate_second("f2plus_point", abs_product, [0, 0], d).value == pytest.approx(exact, abs=1e-9)


def test_half_square_closed_forms():
    rng = np.random.default_rng(10)
    for x in 2 * rng.standard_normal(20):
        assert estimate_second("f2plus_local", half_square, [0.0], [x]).value == pytest.approx(2 * x * x, abs=1e-9)
        assert estimate_second("f2minus_local", half_square, [0.0], [x]).value == pytest.approx(0.0, abs=1e-9)


def test_bidifferential_intervals():
    b = bidiff_interval_1d(half_square, 0.0)
    assert (b.lower, b.upper) == (pytest.approx(0.0, abs=1e-9), pytest.approx(2.0, abs=1e-9))
    s = bidiff_interval_1d(square, 0.0)
    assert s.lower == pytest.approx(2.0, abs=1e-9) and s.upper == pytest.approx(2.0, abs=1e-9)
    e = bidiff_interval_1d(signed_square, 0.0, mode="point")
    assert e.empty
    with pytest.raises(InputError):
        bidiff_interval_1d(abs_product, 0.0)


def test_brute_force_quotient_scan_agrees_for_half_square():
    # independent oracle: quotients over lambda in 10^-1..10^-6, z in a fine grid
    lams = 10.0 ** -np.arange(1, 7)
    zs = np.linspace(-3, 3, 601)
    for x in (1.0, -1.0, 0.7):
        q = [(max(l * z + 2 * l * x, 0) ** 2 - 2 * max(l * z + l * x, 0) ** 2 + max(l * z, 0) ** 2) / l ** 2
             for l in lams for z in zs]
        assert estimate_second("f2plus_local", half_square, [0.0], [x]).value == pytest.approx(max(q), abs=1e-9)
        assert estimate_second("f2minus_local", half_square, [0.0], [x]).value == pytest.approx(min(q), abs=1e-9)


def test_dist2_examples():
    seg = CompactSet([[-1.0, 0.0], [1.0, 0.0]], convex_hint=True)
    rep = dist2_second_difference_check(seg, trials=10_000, seed=0)
    assert max(rep["max_violation_low"], rep["max_violation_high"], rep["max_violation_cross"]) <= 1e-10
    # singleton {0}: d^2(t) = t^2, forward difference at z=0, x=1 is 4 - 2 + 0 = 2|x|^2
    pt = CompactSet([[0.0]], convex_hint=True)
    rep = dist2_second_difference_check(pt, trials=2000, seed=1)
    assert rep["max_violation_high"] == pytest.approx(0.0, abs=1e-10)
    with pytest.raises(PreconditionError):
        dist2_second_difference_check(CompactSet([[0.0], [1.0]]))


def test_dist2_on_random_polytopes():
    rng = np.random.default_rng(12)
    for _ in range(5):
        C = random_polytope(2, 8, rng)
        rep = dist2_second_difference_check(C, trials=10_000, seed=int(rng.integers(1000)))
        assert rep["passed"]


def test_max_rule_examples():
    f1 = ScalarField(lambda v: v[0] ** 2, 1)
    f2 = ScalarField(lambda v: -1 + v[0] ** 2, 1)
    rep = max_rule_check([f1, f2], [0.0], [[1.0], [-0.5]])
    assert rep["active"] == [0] and rep["holds"]
    for row in rep["rows"]:
        assert row["lhs"] == pytest.approx(row["rhs"], abs=1e-9)
    f3 = ScalarField(lambda v: 2 * v[0] ** 2, 1)
    rep = max_rule_check([f1, f3], [0.0], [[1.0]])
    assert rep["active"] == [0, 1] and rep["holds"]
    assert rep["rows"][0]["lhs"] == pytest.approx(4.0, abs=1e-9)


def test_max_rule_random_convex_quadratics():
    rng = np.random.default_rng(13)
    fs = []
    for _ in range(3):
        B = rng.standard_normal((2, 2))
        fs.append(quadratic(B @ B.T))
    dirs = rng.standard_normal((100, 2))
    rep = max_rule_check(fs, [0.0, 0.0], dirs, z_samples=4)
    assert rep["holds"] and rep["worst_excess"] <= 1e-6
    # oracle: at z = 0 the quotient of a degree-2 homogeneous max is 2 max_i <M_i x, x>
    point_rows = [r for r in rep["rows"] if r["kind"] == "f2plus_point"]
    for row, d in zip(point_rows, dirs):
        exact = 2 * max(f.fn(d) for f in fs)
        assert row["lhs"] == pytest.approx(exact, abs=1e-6)


def test_max_rule_local_form_is_only_a_diagnostic():
    fs = [quadratic([[1.0, 0.0], [0.0, 0.0]]), quadratic([[0.0, 0.0], [0.0, 1.0]])]
    rep = max_rule_check(fs, [0.0, 0.0], [[1.0, 1.0]])
    assert rep["holds"]
    # z = (-2, 0) scaled by lambda: 4 - 2 + 4 = 6 exceeds both pieces (4)
    assert rep["worst_local_excess"] >= 2.0 - 1e-9


def test_chain_rule_examples():
    rng = np.random.default_rng(14)
    dirs = rng.standard_normal((100, 1))
    Q = quadratic([[1.0, 0.3], [0.3, 2.0]])
    B = np.array([[1.0], [-2.0]])
    rep = chain_rule_check(Q, lambda x: B @ x, lambda x: B, [0.0], dirs[:20])
    assert rep["holds"]
    for row, d in zip(rep["rows"], dirs[:20]):
        bx = B @ d
        assert row["lhs"] == pytest.approx(2 * bx @ np.array([[1.0, 0.3], [0.3, 2.0]]) @ bx, abs=1e-6)
    rep = chain_rule_check(half_square, lambda x: 2 * x, lambda x: np.array([[2.0]]), [0.0], dirs,
                           hypothesis=(1.0, 0.1, 4.0))
    assert rep["holds"] and not rep["warnings"]
    for row, d in zip(rep["rows"], dirs[:, 0]):
        assert row["lhs"] == pytest.approx(8 * max(d, 0) ** 2, abs=1e-6)
    rep = chain_rule_check(signed_square, lambda x: x + x ** 3, lambda x: np.array([[1 + 3 * x[0] ** 2]]),
                           [0.0], dirs)
    assert rep["holds"] and rep["max_abs_diff"] <= 1e-6


def test_chain_rule_flags_failed_hypothesis():
    rep = chain_rule_check(square, lambda x: x, lambda x: np.eye(1), [0.0], [[1.0]],
                           hypothesis=(1.0, 1.0, 1e-6))
    assert rep["warnings"]


def test_optimality_examples():
    dirs = [[1.0], [-1.0], [0.3]]
    r = optimality_test(square, [0.0], dirs)
    assert r["necessary_holds"] and r["sufficient_alpha"] == pytest.approx(2.0, abs=1e-3)
    neg = ScalarField(lambda v: -v[0] ** 2, 1)
    r = optimality_test(neg, [0.0], dirs)
    assert not r["necessary_holds"] and r["min_f2plus"] == pytest.approx(-2.0, abs=1e-9)
    r = optimality_test(half_square, [0.0], dirs)
    assert r["necessary_holds"] and r["sufficient_alpha"] is None


def test_schedule_validation():
    with pytest.raises(InputError):
        Schedule(lam0=-1.0)
    with pytest.raises(InputError):
        Schedule(q=1.5)
    with pytest.raises(InputError):
        Schedule(steps=3)
    with pytest.raises(InputError):
        estimate_second("third", square, [0.0], [1.0])
    with pytest.raises(InputError):
        estimate_second("mixed", square, [0.0], [1.0])


@given(st.floats(-2, 2), st.integers(0, 6), st.integers(1, 6))
def test_sup_estimates_monotone_in_samples(x, k, extra):
    f = ScalarField(lambda v: abs(v[0]) ** 1.5 * np.sign(v[0]) + max(v[0], 0) ** 2, 1)
    a = estimate_second("f2plus_local", f, [0.3], [x], z_samples=k, seed=4).value
    b = estimate_second("f2plus_local", f, [0.3], [x], z_samples=k + extra, seed=4).value
    assert b >= a


@given(unit_vec, unit_vec)
def test_mixed_estimator_symmetric_and_even(x1, x2):
    f = quadratic([[1.0, -0.4], [-0.4, 0.5]])
    x0 = [0.2, -0.1]
    a = estimate_second("mixed", f, x0, x1, x2=x2).value
    assert estimate_second("mixed", f, x0, x2, x2=x1).value == pytest.approx(a, abs=1e-9)
    assert estimate_second("mixed", f, x0, -x1, x2=-x2).value == pytest.approx(a, abs=1e-9)
    K = f.declared_lipschitz2
    assert abs(a) <= K * np.linalg.norm(x1) * np.linalg.norm(x2) + 1e-8


@given(unit_vec, arrays(np.float64, 2, elements=st.floats(-1, 1)))
def test_sandwich(x, x0):
    f = ScalarField(lambda v: abs(v[0] * v[1]) + max(v[0], 0.0) ** 2 - 0.5 * v[1] * abs(v[1]), 2)
    for lo, hi in (("f2minus_local", "f2plus_local"), ("f2minus_point", "f2plus_point"),
                   ("sym2minus", "sym2plus")):
        assert estimate_second(lo, f, x0, x).value <= estimate_second(hi, f, x0, x).value + 1e-9
