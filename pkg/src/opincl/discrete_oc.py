"""Adjoint gradients for infinite-horizon discrete-time control, truncated at N.

    x_{i+1} = f_i(x_i, u_i),  x_0 given,   J(u) = sum_{i=0}^{N} Phi_i(x_i, u_i),

with u_N = 0 so that the last stage only charges the state.  The adjoint is
psi_N = 0, psi_{i-1} = Phi_{i,x} + f_{i,x}^T psi_i and the gradient is
g_i = Phi_{i,u} + f_{i,u}^T psi_i.
"""
from dataclasses import dataclass
import math

import numpy as np

from .errors import EvaluationError, InputError

SQRT_HALF = math.sqrt(0.5)


class DiscreteOCProblem:
    """Dynamics, stage cost and their partial derivatives.

    All callables take ``(i, x, u)`` with ``x`` of length n and ``u`` of
    length r.  ``fx``/``fu`` return n x n and n x r Jacobians;
    ``Phix``/``Phiu`` return gradients.  ``L1``/``L2`` are the declared
    Lipschitz constants of f in x and u; ``L`` (optional) is a Lipschitz
    constant of all partials, used by the remainder bound.
    """

    def __init__(self, f, fx, fu, Phi, Phix, Phiu, x0, L1, L2, N, r_dim=None, L=None,
                 name=None, check_partials=True, seed=0):
        if not (0 < L1 < SQRT_HALF):
            raise InputError(f"L1 must satisfy 0 < L1 < sqrt(2)/2, got {L1}")
        if L2 < 0:
            raise InputError("L2 must be nonnegative")
        if int(N) < 1:
            raise InputError("horizon N must be positive")
        self.f, self.fx, self.fu = f, fx, fu
        self.Phi, self.Phix, self.Phiu = Phi, Phix, Phiu
        self.x0 = np.atleast_1d(np.asarray(x0, dtype=float))
        self.n = self.x0.size
        self.r = int(r_dim if r_dim is not None else self.n)
        self.L1, self.L2 = float(L1), float(L2)
        self.L = None if L is None else float(L)
        self.N = int(N)
        self.name = name
        if check_partials:
            err = partials_check(self, seed=seed)
            if err > 1e-6:
                raise InputError(f"supplied partials disagree with central differences (rel err {err:.2e})")

    def with_horizon(self, N):
        return DiscreteOCProblem(self.f, self.fx, self.fu, self.Phi, self.Phix, self.Phiu,
                                 self.x0, self.L1, self.L2, N, self.r, self.L, self.name,
                                 check_partials=False)


def _fd_jac(fn, v, eps):
    v = np.asarray(v, dtype=float)
    cols = []
    for j in range(v.size):
        e = np.zeros_like(v)
        e[j] = eps * max(1.0, abs(v[j]))
        cols.append((np.atleast_1d(fn(v + e)) - np.atleast_1d(fn(v - e))) / (2 * e[j]))
    return np.column_stack(cols)


def partials_check(prob, samples=5, seed=0, eps=1e-5):
    """Largest relative disagreement between supplied partials and central differences."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for s in range(samples):
        i = int(rng.integers(0, max(prob.N, 1)))
        x = rng.standard_normal(prob.n)
        u = rng.standard_normal(prob.r)
        pairs = [
            (np.atleast_2d(prob.fx(i, x, u)), _fd_jac(lambda y: prob.f(i, y, u), x, eps)),
            (np.atleast_2d(prob.fu(i, x, u)).reshape(prob.n, prob.r), _fd_jac(lambda v: prob.f(i, x, v), u, eps)),
            (np.atleast_1d(prob.Phix(i, x, u)), _fd_jac(lambda y: prob.Phi(i, y, u), x, eps).ravel()),
            (np.atleast_1d(prob.Phiu(i, x, u)), _fd_jac(lambda v: prob.Phi(i, x, v), u, eps).ravel()),
        ]
        for given, fd in pairs:
            given = np.asarray(given, dtype=float).reshape(fd.shape)
            worst = max(worst, float(np.abs(given - fd).max() / max(1.0, np.abs(fd).max())))
    return worst


def _controls(prob, u):
    U = np.asarray(u, dtype=float)
    if U.ndim == 1:
        U = U.reshape(-1, prob.r) if prob.r > 1 else U.reshape(-1, 1)
    if U.shape != (prob.N, prob.r):
        raise InputError(f"controls must have shape ({prob.N}, {prob.r}), got {U.shape}")
    return U


def forward(prob, u):
    """States x_0..x_N, shape (N + 1, n)."""
    U = _controls(prob, u)
    X = np.empty((prob.N + 1, prob.n))
    X[0] = prob.x0
    for i in range(prob.N):
        X[i + 1] = prob.f(i, X[i], U[i])
        if not np.all(np.isfinite(X[i + 1])):
            raise EvaluationError(f"state overflow at step {i + 1}", where=i + 1)
    return X


def objective(prob, u, X=None):
    """Truncated objective sum_{i=0}^{N} Phi_i(x_i, u_i) with u_N = 0."""
    U = _controls(prob, u)
    X = forward(prob, U) if X is None else X
    Ue = np.vstack([U, np.zeros((1, prob.r))])
    return float(sum(prob.Phi(i, X[i], Ue[i]) for i in range(prob.N + 1)))


@dataclass
class AdjointTrajectory:
    psi: np.ndarray  # psi_0 .. psi_{N-1}
    terminal_tail: float

    def decay_ratios(self):
        nrm = np.linalg.norm(self.psi, axis=1)
        return nrm[1:] / np.where(nrm[:-1] > 0, nrm[:-1], np.inf)


def adjoint(prob, u, X):
    """Backward recursion from psi_N = 0."""
    U = _controls(prob, u)
    X = np.asarray(X, dtype=float)
    if X.shape != (prob.N + 1, prob.n):
        raise InputError(f"states must have shape ({prob.N + 1}, {prob.n})")
    Ue = np.vstack([U, np.zeros((1, prob.r))])
    psi = np.zeros((prob.N + 1, prob.n))
    for i in range(prob.N, 0, -1):
        psi[i - 1] = np.atleast_1d(prob.Phix(i, X[i], Ue[i])) + \
            np.atleast_2d(prob.fx(i, X[i], Ue[i])).T @ psi[i]
    return AdjointTrajectory(psi[:-1], float(np.linalg.norm(psi[prob.N - 1])))


def gradient(prob, u):
    """Gradient of the truncated objective, shape (N, r)."""
    U = _controls(prob, u)
    X = forward(prob, U)
    psi = adjoint(prob, U, X).psi
    G = np.empty((prob.N, prob.r))
    for i in range(prob.N):
        fu = np.asarray(prob.fu(i, X[i], U[i]), dtype=float).reshape(prob.n, prob.r)
        G[i] = np.atleast_1d(prob.Phiu(i, X[i], U[i])) + fu.T @ psi[i]
    return G


def finite_difference_gradient(prob, u, step=1e-5):
    U = _controls(prob, u)
    G = np.empty_like(U)
    for i in range(prob.N):
        for j in range(prob.r):
            Up = U.copy()
            Um = U.copy()
            Up[i, j] += step
            Um[i, j] -= step
            G[i, j] = (objective(prob, Up) - objective(prob, Um)) / (2 * step)
    return G


def gradient_check(prob, u, step=1e-5):
    """Max relative error of the adjoint gradient against central differences."""
    g = gradient(prob, u)
    fd = finite_difference_gradient(prob, u, step)
    return float(np.abs(g - fd).max() / max(1.0, np.abs(fd).max()))


def contraction_check(prob, u, h):
    """sum |dx|^2 against 2 L2^2 / (1 - 2 L1^2) sum |h|^2 for the perturbation h."""
    U = _controls(prob, u)
    H = _controls(prob, h)
    dX = forward(prob, U + H) - forward(prob, U)
    lhs = float((dX ** 2).sum())
    rhs = 2 * prob.L2 ** 2 / (1 - 2 * prob.L1 ** 2) * float((H ** 2).sum())
    return {"lhs": lhs, "rhs": rhs, "holds": lhs <= rhs * (1 + 1e-12) + 1e-300}


def remainder_constant(prob, c):
    """(L + cL)(3 L2^2/(1 - 2 L1^2) + 0.5) + K with K = (L + cL)(L2^2/(1 - 2 L1^2) + 1.5)."""
    if prob.L is None:
        raise InputError("the remainder bound needs the declared constant L")
    a = prob.L * (1 + c)
    s = prob.L2 ** 2 / (1 - 2 * prob.L1 ** 2)
    return a * (3 * s + 0.5) + a * (s + 1.5)


def directional_consistency(prob, u, h, eps_list=(1e-2, 3e-3, 1e-3, 3e-4, 1e-4)):
    """Fit J(u + e h) - J(u) - e <g, h> = C e^2 and compare |C| with the remainder bound."""
    U = _controls(prob, u)
    H = _controls(prob, h)
    g = gradient(prob, U)
    J0 = objective(prob, U)
    eps = np.asarray(eps_list, dtype=float)
    rem = np.array([objective(prob, U + e * H) - J0 - e * float((g * H).sum()) for e in eps])
    C = float(np.linalg.lstsq((eps ** 2)[:, None], rem, rcond=None)[0][0])
    c = float(np.linalg.norm(adjoint(prob, U, forward(prob, U)).psi, axis=1).max())
    bound = remainder_constant(prob, c) * float((H ** 2).sum())
    return {"C": C, "bound": bound, "holds": abs(C) <= bound * (1 + 1e-6) + 1e-9}


def tail_truncation_study(prob, u, N_list, floor=1e-14):
    """Gradients at increasing horizons compared on the common prefix.

    ``u`` has the length of the shortest horizon and is extended by zeros.
    Differences below ``floor`` (relative to the gradient size) count as
    converged to rounding level.
    """
    N_list = sorted(int(N) for N in N_list)
    U = np.asarray(u, dtype=float).reshape(-1, prob.r)
    m = N_list[0]
    if U.shape[0] != m:
        raise InputError("u must have the length of the shortest horizon")
    grads = []
    for N in N_list:
        pn = prob.with_horizon(N)
        Ue = np.vstack([U, np.zeros((N - m, prob.r))])
        grads.append(gradient(pn, Ue)[:m])
    scale = max(1.0, float(np.abs(grads[-1]).max()))
    diffs = [float(np.abs(grads[k + 1] - grads[k]).max()) for k in range(len(grads) - 1)]
    ratios = []
    ok = True
    for k in range(1, len(diffs)):
        if diffs[k] <= floor * scale:
            ratios.append(math.inf)
            continue
        rt = diffs[k - 1] / diffs[k]
        ratios.append(rt)
        ok &= rt >= 10
    return {"N_list": N_list, "prefix_diffs": diffs, "ratios": ratios,
            "geometric": bool(ok and (len(diffs) < 2 or diffs[0] >= diffs[-1]))}


# ---------------------------------------------------------------------------
# built-in problems
# ---------------------------------------------------------------------------
def lq_problem(a, b, q, r, x0, N, offset=0.0):
    """x_{i+1} = a x_i + b u_i, Phi_i = x^T q x + u^T r u + offset * 2^{-i}.

    The summable offset leaves every gradient unchanged.
    """
    a = np.atleast_2d(np.asarray(a, dtype=float))
    b = np.atleast_2d(np.asarray(b, dtype=float))
    n = a.shape[0]
    if b.shape[0] != n:
        b = b.reshape(n, -1)
    q = np.atleast_2d(np.asarray(q, dtype=float))
    r = np.atleast_2d(np.asarray(r, dtype=float))
    L1 = float(np.linalg.norm(a, 2))
    L2 = float(np.linalg.norm(b, 2))
    Lc = 2 * max(float(np.linalg.norm(q, 2)), float(np.linalg.norm(r, 2)))
    return DiscreteOCProblem(
        f=lambda i, x, u: a @ x + b @ u,
        fx=lambda i, x, u: a,
        fu=lambda i, x, u: b,
        Phi=lambda i, x, u: float(x @ q @ x + u @ r @ u) + offset * 0.5 ** i,
        Phix=lambda i, x, u: (q + q.T) @ x,
        Phiu=lambda i, x, u: (r + r.T) @ u,
        x0=x0, L1=L1, L2=L2, N=N, r_dim=b.shape[1], L=Lc, name="lq")


def logistic_problem(a=0.5, b=1.0, q=1.0, r=0.5, x0=1.0, N=50):
    """Scalar x_{i+1} = a tanh(x_i) + b u_i with Phi = q x^2 + r u^2."""
    return DiscreteOCProblem(
        f=lambda i, x, u: a * np.tanh(x) + b * u,
        fx=lambda i, x, u: np.atleast_2d(a * (1 - np.tanh(x[0]) ** 2)),
        fu=lambda i, x, u: np.atleast_2d(b),
        Phi=lambda i, x, u: float(q * x @ x + r * u @ u),
        Phix=lambda i, x, u: 2 * q * x,
        Phiu=lambda i, x, u: 2 * r * u,
        x0=[x0], L1=abs(a), L2=abs(b), N=N, r_dim=1,
        L=max(2 * q, 2 * r, 0.8 * abs(a)), name="logistic-control")


def random_lq(rng, N=50, n=None, r=None):
    """Random stable LQ instance with ||a|| <= 0.6."""
    rng = np.random.default_rng(rng)
    n = int(rng.integers(1, 4)) if n is None else n
    r = int(rng.integers(1, 3)) if r is None else r
    a = rng.standard_normal((n, n))
    a *= rng.uniform(0.2, 0.6) / np.linalg.norm(a, 2)
    b = rng.standard_normal((n, r))
    qm = rng.standard_normal((n, n))
    rm = rng.standard_normal((r, r))
    return lq_problem(a, b, qm @ qm.T / n + np.eye(n), rm @ rm.T / r + np.eye(r),
                      rng.standard_normal(n), N)
