"""Successive approximation for inclusions u(t) in F(t, (Au)(t)).

Starting from an approximate solution u_bar the iteration is

    x_0 = A u_bar,   v_0 = nearest point of F(t, x_0(t)) to u_bar(t),
    x_{i+1} = A v_i, v_{i+1} = nearest point of F(t, x_{i+1}(t)) to v_i(t),

with nearest-point selection playing the role of a measurable selector.
Each solver returns the solution together with a ``BoundReport`` comparing
the observed deviation from (u_bar, A u_bar) with the a-priori bounds.
"""
from dataclasses import dataclass, field
import math

import numpy as np

from ._backend import kernels
from .errors import ConvergenceError, EvaluationError, InputError, PreconditionError
from .gridfn import GridFunction, check_p, cumulative_integral, integrate, lp_norm
from .operators import apply_values, fredholm_contraction_factor, volterra_constant_check
from .setval import CompactSet, dist_to_set, hausdorff, minkowski_shift, project_batch


# ---------------------------------------------------------------------------
# multimaps
# ---------------------------------------------------------------------------
class MultiMap:
    """Set-valued map (t, x) -> compact set with Lipschitz modulus M(t).

    Two representations are supported:

    * translate family: F(t, x) = template + shift(t, x), where ``shift``
      is vectorized over nodes (``shift(T, X)`` with ``T`` the node
      coordinates and ``X`` an (N, n) array).  Projections are batched.
    * generic: ``evaluator(t, x)`` returns a ``CompactSet`` (or points),
      evaluated node by node.

    ``modulus`` is a constant, a callable of t, or a scalar ``GridFunction``.
    """

    def __init__(self, evaluator=None, modulus=1.0, dim=1, dim_x=None,
                 template=None, shift=None, name=None):
        if evaluator is None and (template is None or shift is None):
            raise InputError("a multimap needs an evaluator or a template with a shift")
        self.evaluator = evaluator
        self.template = template
        self.shift = shift
        self.modulus = modulus
        self.dim = int(dim if template is None else template.dim)
        self.dim_x = int(self.dim if dim_x is None else dim_x)
        self.name = name

    @classmethod
    def translate(cls, template, shift, modulus, dim_x=None, name=None):
        return cls(template=template, shift=shift, modulus=modulus, dim_x=dim_x, name=name)

    @classmethod
    def from_function(cls, evaluator, modulus, dim=1, dim_x=None, name=None):
        return cls(evaluator=evaluator, modulus=modulus, dim=dim, dim_x=dim_x, name=name)

    @property
    def is_translate(self):
        return self.template is not None

    def modulus_on(self, grid):
        m = self.modulus
        if isinstance(m, GridFunction):
            if not m.grid.same_as(grid):
                raise InputError("modulus grid function lives on another grid")
            return m
        if callable(m):
            return GridFunction.from_callable(grid, m)
        return GridFunction.constant(grid, float(m))

    def modulus_at(self, t):
        m = self.modulus
        if isinstance(m, GridFunction):
            raise InputError("pointwise modulus needs a callable or constant modulus")
        return float(m(t)) if callable(m) else float(m)

    def eval(self, t, x):
        """F(t, x) as a CompactSet."""
        xv = np.atleast_1d(np.asarray(x, dtype=float))
        if self.is_translate:
            T = np.asarray(t, dtype=float)
            T = T.reshape(1) if T.ndim == 0 else T.reshape(1, -1)
            sh = np.asarray(self.shift(T, xv[None, :]), dtype=float).reshape(1, -1)
            return minkowski_shift(self.template, sh[0])
        try:
            S = self.evaluator(t, xv)
        except Exception as exc:
            raise EvaluationError(f"multimap evaluation failed at t={t}: {exc}", where=t) from exc
        return S if isinstance(S, CompactSet) else CompactSet(S)

    def _node_coords(self, grid):
        return grid.t if grid.kind == "interval" else grid.coords

    def project_nodes(self, grid, X, U):
        """Project U[k] onto F(t_k, X[k]) for every node.

        Returns ``(dist, nearest)`` with shapes (N,) and (N, n).
        """
        X = np.asarray(X, dtype=float)
        U = np.asarray(U, dtype=float)
        if self.is_translate:
            sh = np.asarray(self.shift(self._node_coords(grid), X), dtype=float).reshape(U.shape)
            d, near, _ = project_batch(np.ascontiguousarray(U - sh), self.template)
            if not np.all(np.isfinite(d)):
                k = int(np.nonzero(~np.isfinite(d))[0][0])
                raise EvaluationError(f"non-finite projection at node {k}", where=k)
            return d, near + sh
        N = U.shape[0]
        dist = np.empty(N)
        near = np.empty_like(U)
        for k in range(N):
            try:
                r = dist_to_set(U[k], self.eval(grid.node(k), X[k]))
            except EvaluationError:
                raise
            except Exception as exc:
                raise EvaluationError(f"multimap evaluation failed at node {k}: {exc}", where=k) from exc
            dist[k] = r.distance
            near[k] = r.nearest
        return dist, near

    def shifted_by(self, s):
        """The multimap (t, x) -> F(t, x) + s(t) for a grid function ``s``."""
        return _ShiftedMultiMap(self, s)

    def check_lipschitz(self, grid, probes=200, rng=None, scale=1.0):
        """Sampled check of H(F(t,x), F(t,x1)) <= M(t)|x - x1| (1 + 1e-8).

        Returns ``{"holds": bool, "worst_ratio": float}``.
        """
        rng = np.random.default_rng(rng)
        M = self.modulus_on(grid).values[:, 0]
        worst = 0.0
        holds = True
        for _ in range(int(probes)):
            k = int(rng.integers(grid.size))
            x = scale * rng.standard_normal(self.dim_x)
            x1 = scale * rng.standard_normal(self.dim_x)
            t = grid.node(k)
            hd = hausdorff(self.eval(t, x), self.eval(t, x1))
            rhs = M[k] * float(np.linalg.norm(x - x1))
            if hd > rhs * (1 + 1e-8) + 1e-12:
                holds = False
            if rhs > 0:
                worst = max(worst, hd / rhs)
        return {"holds": holds, "worst_ratio": worst}


class _ShiftedMultiMap(MultiMap):
    def __init__(self, base, s):
        self.base = base
        self.s = s
        self.modulus = base.modulus
        self.dim = base.dim
        self.dim_x = base.dim_x
        self.template = None
        self.name = None if base.name is None else base.name + "+s"

    @property
    def is_translate(self):
        return False

    def eval(self, t, x):
        raise InputError("shifted multimaps are only evaluated on their grid nodes")

    def project_nodes(self, grid, X, U):
        sv = self.s.values
        d, near = self.base.project_nodes(grid, X, np.asarray(U) - sv)
        return d, near + sv


# ---------------------------------------------------------------------------
# results
# ---------------------------------------------------------------------------
@dataclass
class IterationTrace:
    """Per-iteration ||x_{i+1} - x_i||_inf, ||v_{i+1} - v_i||_p and defect."""

    dx: list = field(default_factory=list)
    dv: list = field(default_factory=list)
    defect: list = field(default_factory=list)

    def __len__(self):
        return len(self.dv)

    def decay_ratios(self, floor=1e-13):
        """Ratios dv[i] / dv[i-1] for i >= 2 while dv[i-1] stays above ``floor``."""
        out = []
        for i in range(2, len(self.dv)):
            if self.dv[i - 1] > floor and self.dv[i] > floor:
                out.append(self.dv[i] / self.dv[i - 1])
        return out

    def as_rows(self):
        return [(i, a, b, c) for i, (a, b, c) in enumerate(zip(self.dx, self.dv, self.defect))]


@dataclass
class InclusionSolution:
    u: GridFunction
    x: GridFunction
    trace: IterationTrace
    converged: bool
    final_defect: float

    @property
    def iterations(self):
        return len(self.trace)


@dataclass
class BoundReport:
    bound_x: GridFunction
    bound_u: GridFunction
    observed_x: GridFunction
    observed_u: GridFunction
    satisfied: bool
    slack: float
    h: float
    m: GridFunction = None
    rho: GridFunction = None

    @property
    def slack_over_h(self):
        return self.slack / self.h

    def summary(self):
        return {"bound_satisfied": bool(self.satisfied), "slack": float(self.slack),
                "slack_over_h": float(self.slack_over_h)}


def relative_excess(observed, bound, atol=1e-12):
    """max_k of (observed_k - bound_k)^+ / bound_k, ignoring excesses below ``atol``."""
    ex = observed - bound
    ex = np.where(ex > atol, ex, 0.0)
    if not np.any(ex > 0):
        return 0.0
    return float((ex / np.maximum(bound, atol)).max())


def _make_report(grid, ubar, xbar, u, x, bound_x, bound_u, m=None, rho=None, slack_factor=10.0):
    obs_x = np.linalg.norm(x - xbar, axis=1)
    obs_u = np.linalg.norm(u - ubar, axis=1)
    h = grid.hmax
    slack = max(relative_excess(obs_x, bound_x), relative_excess(obs_u, bound_u))
    gf = lambda a: GridFunction(grid, a)
    return BoundReport(gf(bound_x), gf(bound_u), gf(obs_x), gf(obs_u),
                       satisfied=slack <= slack_factor * h, slack=slack, h=h,
                       m=None if m is None else gf(m), rho=None if rho is None else gf(rho))


# ---------------------------------------------------------------------------
# engine
# ---------------------------------------------------------------------------
def _iterate(A, F, u_start, p, tol, max_iter):
    grid = A.grid
    ub = np.array(u_start.values, dtype=float)
    x = apply_values(A, ub)
    _, v = F.project_nodes(grid, x, ub)
    trace = IterationTrace()
    w = grid.weights
    for _ in range(int(max_iter)):
        x_new = apply_values(A, v)
        d, v_new = F.project_nodes(grid, x_new, v)
        if not (np.all(np.isfinite(x_new)) and np.all(np.isfinite(d))):
            raise ConvergenceError("iteration produced non-finite values", trace)
        dx = float(np.abs(x_new - x).max())
        step = np.linalg.norm(v_new - v, axis=1)
        dv = float(step.max()) if math.isinf(p) else float((w @ step ** p) ** (1 / p))
        dinf = float(d.max())
        trace.dx.append(dx)
        trace.dv.append(dv)
        trace.defect.append(dinf)
        if dv <= tol and dinf <= tol:
            # v has defect dinf with respect to x_new = A v exactly
            return InclusionSolution(GridFunction(grid, v), GridFunction(grid, x_new),
                                     trace, True, dinf)
        x, v = x_new, v_new
    raise ConvergenceError(f"no convergence within {max_iter} iterations "
                           f"(last step {trace.dv[-1]:.3e}, defect {trace.defect[-1]:.3e})", trace)


def _check_inputs(A, F, u_bar, kind):
    if A.kind != kind:
        raise InputError(f"expected a {kind} operator, got {A.kind}")
    A.check_grid(u_bar)
    if F.dim != A.codim or F.dim_x != A.codim:
        raise InputError("multimap dimensions do not match the operator codim")


def initial_defect(A, F, u_bar):
    """rho(t) = d(u_bar(t), F(t, (A u_bar)(t)))."""
    x = apply_values(A, u_bar.values)
    d, _ = F.project_nodes(A.grid, x, u_bar.values)
    return d, x


def volterra_bounds(A, F, rho):
    """Bound functions for the Volterra case.

    With m(t) = L int_{t0}^t M and I(t) = int_{t0}^t exp(m(t) - m(s)) rho(s) ds,
    returns ``(m, L I, rho + L M I)``.
    """
    grid = A.grid
    M = F.modulus_on(grid)
    m = A.L * cumulative_integral(M).values[:, 0]
    I = np.asarray(kernels.volterra_exp_integral(np.ascontiguousarray(m),
                                                 np.ascontiguousarray(rho, dtype=float),
                                                 float(grid.h[0])))
    return m, A.L * I, rho + A.L * M.values[:, 0] * I


def volterra_corollary_bound(A, M_const, rho):
    """rho(t) + L M int_{t0}^t exp(L M (t - s)) rho(s) ds for constant M.

    Computed by direct trapezoid sums over the explicit exponential (an
    independent path from :func:`volterra_bounds`).
    """
    t = A.grid.t
    h = A.grid.h[0]
    lm = A.L * float(M_const)
    out = np.array(rho, dtype=float)
    for k in range(1, t.size):
        wts = np.full(k + 1, h)
        wts[0] = wts[-1] = h / 2
        out[k] += lm * float(wts @ (np.exp(lm * (t[k] - t[: k + 1])) * rho[: k + 1]))
    return out


def solve_volterra(A, F, u_bar, tol=1e-12, max_iter=500, check_samples=8, rng=0):
    """Successive approximation for a Volterra-type operator.

    No smallness condition is needed.  Returns ``(solution, report)``.
    """
    _check_inputs(A, F, u_bar, "volterra")
    chk = volterra_constant_check(A, samples=check_samples, rng=rng)
    if not chk["holds"]:
        raise InputError(f"declared Volterra constant L={A.L} is violated "
                         f"(worst ratio {chk['worst_ratio']:.4g})")
    rho, xbar = initial_defect(A, F, u_bar)
    sol = _iterate(A, F, u_bar, 1.0, tol, max_iter)
    m, bx, bu = volterra_bounds(A, F, rho)
    rep = _make_report(A.grid, u_bar.values, xbar, sol.u.values, sol.x.values, bx, bu, m=m, rho=rho)
    return sol, rep


def fredholm_bounds(A, F, rho, p):
    """Constant bound on |Au - A u_bar| and node bound on |u - u_bar|."""
    grid = A.grid
    M = F.modulus_on(grid)
    An = A.opnorm(p)
    factor = An * lp_norm(M, p)
    rho_p = lp_norm(GridFunction(grid, rho), p)
    bx = An * rho_p / (1.0 - factor)
    return np.full(grid.size, bx), rho + bx * M.values[:, 0], factor


def solve_fredholm(A, F, u_bar, p=1, tol=1e-12, max_iter=500):
    """Successive approximation for a Fredholm-type operator (interval or box).

    Requires ||A|| ||M||_p < 1.  Returns ``(solution, report)``.
    """
    p = check_p(p)
    _check_inputs(A, F, u_bar, "fredholm")
    factor = fredholm_contraction_factor(A, F.modulus_on(A.grid), p)
    if not factor < 1:
        raise PreconditionError(f"contraction factor {factor:.6g} is not below 1")
    rho, xbar = initial_defect(A, F, u_bar)
    sol = _iterate(A, F, u_bar, p, tol, max_iter)
    bx, bu, _ = fredholm_bounds(A, F, rho, p)
    rep = _make_report(A.grid, u_bar.values, xbar, sol.u.values, sol.x.values, bx, bu, rho=rho)
    rep.factor = factor
    return sol, rep


def solve_box(A, F, u_bar, p=1, tol=1e-12, max_iter=500):
    """Fredholm solver on a box domain D in R^m (tensor trapezoid quadrature)."""
    if A.grid.kind != "box":
        raise InputError("solve_box needs an operator on a box grid")
    return solve_fredholm(A, F, u_bar, p=p, tol=tol, max_iter=max_iter)


# ---------------------------------------------------------------------------
# perturbations and a-priori set bounds
# ---------------------------------------------------------------------------
def perturbation_study(A, F, u0, s_list, p=1, alpha=math.inf, tol=1e-13, max_iter=500):
    """Solve u in F(t, Au) + s(t) for each s, warm-started from ``u0``.

    Returns one row per perturbation with ``s_norm``, ``deviation``
    (||x_s - x_0||_inf) and ``bound`` (||A|| ||s||_p / (1 - factor)), plus
    ``ok`` telling whether the deviation respects the bound.
    """
    p = check_p(p)
    M = F.modulus_on(A.grid)
    An = A.opnorm(p)
    factor = An * lp_norm(M, p)
    if not factor < 1:
        raise PreconditionError(f"contraction factor {factor:.6g} is not below 1")
    rows = []
    for s in s_list:
        sn = lp_norm(s, p)
        bound = An * sn / (1.0 - factor)
        if bound > alpha:
            raise PreconditionError(f"perturbation of size {sn:.3g} leaves the tube "
                                    f"(bound {bound:.3g} > alpha {alpha:.3g})")
        if sn == 0.0:
            sol = u0
        else:
            sol = _iterate(A, F.shifted_by(s), u0.u, p, tol, max_iter)
        dev = float(np.linalg.norm(sol.x.values - u0.x.values, axis=1).max())
        rows.append({"s_norm": sn, "deviation": dev, "bound": bound,
                     "ok": dev <= bound * (1 + 1e-9) + 10 * tol})
    return rows


def solution_set_bound(A, alpha, beta):
    """Gronwall bound on ||u||_{L1} for every solution when |F(t,x)| <= alpha(t) + beta|x|.

    Returns int alpha + L beta (T - t0) exp(L beta (T - t0)) int alpha.
    """
    if beta < 0:
        raise InputError("beta must be nonnegative")
    if A.grid.kind != "interval":
        raise InputError("the solution-set bound is stated on an interval")
    ia = float(integrate(GridFunction(alpha.grid, alpha.norms()))[0])
    span = float(A.grid.upper[0] - A.grid.lower[0])
    lb = A.L * beta * span
    return ia + lb * math.exp(lb) * ia
