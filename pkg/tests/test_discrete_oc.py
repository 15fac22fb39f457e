import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from opincl.discrete_oc import (DiscreteOCProblem, adjoint, contraction_check,
                                directional_consistency, finite_difference_gradient, forward,
                                gradient, gradient_check, logistic_problem, lq_problem, objective,
                                random_lq, tail_truncation_study)
from opincl.errors import EvaluationError, InputError


def scalar_lq(N, x0=0.0, offset=0.0):
    # x_{i+1} = 0.5 x_i + u_i, Phi = x^2 + u^2
    return lq_problem([[0.5]], [[1.0]], [[1.0]], [[1.0]], [x0], N, offset=offset)


def test_forward_examples():
    prob = scalar_lq(6)
    assert np.all(forward(prob, np.zeros(6)) == 0.0)
    u = np.zeros(6)
    u[0] = 1.0
    assert forward(prob, u)[:, 0].tolist() == [0.0, 1.0, 0.5, 0.25, 0.125, 0.0625, 0.03125]


def test_forward_stability_bound():
    rng = np.random.default_rng(3)
    prob = scalar_lq(30)
    for _ in range(20):
        u = rng.standard_normal(30)
        x = np.abs(forward(prob, u)[:, 0])
        for i in range(1, 31):
            bound = prob.L2 * sum(prob.L1 ** (i - 1 - k) * abs(u[k]) for k in range(i))
            assert x[i] <= bound + 1e-12


def test_forward_overflow_reports_index():
    prob = DiscreteOCProblem(lambda i, x, u: x * 1e200 + u, lambda i, x, u: np.eye(1) * 1e200,
                             lambda i, x, u: np.eye(1), lambda i, x, u: 0.0,
                             lambda i, x, u: np.zeros(1), lambda i, x, u: np.zeros(1),
                             [1.0], 0.5, 1.0, 5, check_partials=False)
    with pytest.raises(EvaluationError) as info, np.errstate(over="ignore"):
        forward(prob, np.zeros(5))
    assert info.value.where == 2


def test_zero_cost_gives_zero_adjoint():
    prob = DiscreteOCProblem(lambda i, x, u: 0.5 * x + u, lambda i, x, u: np.eye(1) * 0.5,
                             lambda i, x, u: np.eye(1), lambda i, x, u: 0.0,
                             lambda i, x, u: np.zeros(1), lambda i, x, u: np.zeros(1),
                             [1.0], 0.5, 1.0, 10)
    u = np.ones(10)
    assert np.all(adjoint(prob, u, forward(prob, u)).psi == 0.0)


def test_single_step_hand_case():
    prob = scalar_lq(1, x0=1.0)
    u = np.zeros(1)
    X = forward(prob, u)
    assert X[1, 0] == 0.5
    assert adjoint(prob, u, X).psi[0, 0] == pytest.approx(1.0, abs=1e-15)
    assert gradient(prob, u)[0, 0] == pytest.approx(1.0, abs=1e-15)
    # J(u0) = 1 + u0^2 + (0.5 + u0)^2
    assert objective(prob, [0.3]) == pytest.approx(1 + 0.09 + 0.64, abs=1e-15)


def test_gradient_vanishes_at_origin():
    prob = scalar_lq(20)
    assert np.all(gradient(prob, np.zeros(20)) == 0.0)


def test_gradient_matches_finite_differences_on_random_instances():
    rng = np.random.default_rng(2024)
    worst = 0.0
    for _ in range(20):
        prob = random_lq(rng, N=50)
        u = rng.standard_normal((50, prob.r))
        worst = max(worst, gradient_check(prob, u))
    assert worst <= 1e-6


def test_logistic_gradient():
    prob = logistic_problem(N=30)
    u = 0.3 * np.random.default_rng(1).standard_normal(30)
    assert gradient_check(prob, u) <= 1e-6


def test_length_and_constructor_errors():
    prob = scalar_lq(5)
    with pytest.raises(InputError):
        forward(prob, np.zeros(4))
    with pytest.raises(InputError):
        adjoint(prob, np.zeros(5), np.zeros((3, 1)))
    with pytest.raises(InputError):
        lq_problem([[0.71]], [[1.0]], [[1.0]], [[1.0]], [1.0], 10)
    with pytest.raises(InputError):
        DiscreteOCProblem(lambda i, x, u: 0.5 * x + u, lambda i, x, u: np.eye(1),  # wrong fx
                          lambda i, x, u: np.eye(1), lambda i, x, u: float(x @ x),
                          lambda i, x, u: 2 * x, lambda i, x, u: np.zeros(1), [1.0], 0.5, 1.0, 5)


def test_truncation_study_geometric():
    prob = logistic_problem(N=20)
    u = 0.5 * np.ones(20)
    rep = tail_truncation_study(prob, u, [20, 40, 80])
    assert rep["geometric"]
    assert all(r >= 10 for r in rep["ratios"])
    with pytest.raises(InputError):
        tail_truncation_study(prob, np.ones(19), [20, 40])


def test_truncation_study_lq_corpus_reaches_rounding_floor():
    prob = random_lq(np.random.default_rng(5), N=20)
    u = np.random.default_rng(6).standard_normal((20, prob.r))
    rep = tail_truncation_study(prob, u, [20, 40, 80])
    assert rep["geometric"]


def test_summable_offset_leaves_gradient_unchanged():
    u = np.random.default_rng(4).standard_normal(15)
    g0 = gradient(scalar_lq(15, x0=1.0), u)
    g1 = gradient(scalar_lq(15, x0=1.0, offset=3.0), u)
    assert np.array_equal(g0, g1)
    assert objective(scalar_lq(15, x0=1.0, offset=3.0), u) > objective(scalar_lq(15, x0=1.0), u)


def test_tail_decay_at_sixty():
    # controls act on a finite prefix and are extended by zeros, as in the corpus
    for seed in range(5):
        prob = random_lq(np.random.default_rng(seed), N=60)
        u = np.zeros((60, prob.r))
        u[:10] = np.random.default_rng(seed + 100).standard_normal((10, prob.r))
        traj = adjoint(prob, u, forward(prob, u))
        assert traj.terminal_tail <= 1e-8
        ratios = traj.decay_ratios()[20:]
        assert np.all(ratios <= 2 * prob.L1 ** 2 + 0.5)


def test_directional_consistency_and_contraction():
    rng = np.random.default_rng(11)
    for _ in range(5):
        prob = random_lq(rng, N=30)
        u = rng.standard_normal((30, prob.r))
        h = rng.standard_normal((30, prob.r))
        assert directional_consistency(prob, u, h)["holds"]
        assert contraction_check(prob, u, h)["holds"]
    prob = logistic_problem(N=30)
    assert directional_consistency(prob, 0.2 * np.ones(30), rng.standard_normal(30))["holds"]


@given(st.integers(0, 10_000), st.floats(0.01, 10))
def test_contraction_inequality_property(seed, scale):
    rng = np.random.default_rng(seed)
    prob = logistic_problem(a=0.6, N=25)
    u = rng.standard_normal(25)
    h = scale * rng.standard_normal(25)
    assert contraction_check(prob, u, h)["holds"]


@given(st.integers(0, 10_000))
def test_gradient_is_linear_functional_derivative(seed):
    rng = np.random.default_rng(seed)
    prob = random_lq(rng, N=10)
    u = rng.standard_normal((10, prob.r))
    g = gradient(prob, u)
    fd = finite_difference_gradient(prob, u)
    assert np.abs(g - fd).max() <= 1e-6 * max(1.0, np.abs(fd).max())
