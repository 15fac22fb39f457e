"""Exact penalty for inclusion-constrained variational problems.

The constrained problem minimizes

    J(u) = phi((Au)(t0), (Au)(T)) + int f(t, (Au)(t), u(t)) dt

subject to u(t) in F(t, (Au)(t)).  The penalized functional adds
r * ||psi||_p where psi(t) = d(u(t), F(t, (Au)(t))).  For r at least the
explicit threshold r0 the feasible minimizer also minimizes J_r inside a
trust region around it.
"""
from dataclasses import dataclass, field
import math

import numpy as np
from scipy.optimize import minimize_scalar

from .errors import InputError, PreconditionError
from .gridfn import GridFunction, check_p, lp_norm
from .operators import adjoint_values, apply_values


@dataclass
class PenaltyProblem:
    """Problem data.

    ``f(t, X, U)`` is vectorized over nodes: ``t`` holds the node coordinates,
    ``X`` and ``U`` are (N, n) arrays; it returns N values.  ``phi(a, b)`` is
    the endpoint cost.  ``k`` (constant or callable of t), ``k1`` and ``k2``
    are the declared Lipschitz data of f in x, f in u and phi.  ``F=None``
    means no constraint (psi = 0).
    """

    A: object
    f: object
    F: object = None
    phi: object = None
    p: float = 1.0
    r: float = 0.0
    k: object = 0.0
    k1: object = 0.0
    k2: float = 0.0
    convex: bool = False
    lipschitz_radius: float = 1.0

    def __post_init__(self):
        self.p = check_p(self.p)
        if self.r < 0:
            raise InputError("penalty weight r must be nonnegative")

    @property
    def grid(self):
        return self.A.grid

    def with_r(self, r):
        return PenaltyProblem(self.A, self.f, self.F, self.phi, self.p, float(r), self.k,
                              self.k1, self.k2, self.convex, self.lipschitz_radius)

    def node_coords(self):
        g = self.grid
        return g.t if g.kind == "interval" else g.coords

    def on_grid(self, c):
        """Constant or callable Lipschitz datum sampled on the grid (N,)."""
        if isinstance(c, GridFunction):
            return c.values[:, 0]
        if callable(c):
            return np.array([float(c(t)) for t in self.node_coords()])
        return np.full(self.grid.size, float(c))


# ---------------------------------------------------------------------------
# functionals
# ---------------------------------------------------------------------------
def _vals(prob, u):
    vals = u.values if isinstance(u, GridFunction) else np.asarray(u, dtype=float)
    if vals.shape != (prob.grid.size, prob.A.codim):
        raise InputError("control does not match the problem grid")
    return vals


def _psi_values(prob, U, X):
    if prob.F is None:
        return np.zeros(U.shape[0])
    return prob.F.project_nodes(prob.grid, X, U)[0]


def residual_psi(prob, u):
    """psi(t) = d(u(t), F(t, (Au)(t))) as a scalar grid function."""
    U = _vals(prob, u)
    return GridFunction(prob.grid, _psi_values(prob, U, apply_values(prob.A, U)))


def _objective_parts(prob, U):
    X = apply_values(prob.A, U)
    w = prob.grid.weights
    J = float(w @ np.asarray(prob.f(prob.node_coords(), X, U), dtype=float))
    if prob.phi is not None:
        J += float(prob.phi(X[0], X[-1]))
    psi = _psi_values(prob, U, X)
    return J, psi


def _norm(w, psi, p):
    if math.isinf(p):
        return float(psi.max())
    return float((w @ psi ** p) ** (1.0 / p))


def objective(prob, u):
    """Unpenalized J(u)."""
    return _objective_parts(prob, _vals(prob, u))[0]


def penalized_objective(prob, u):
    """J_r(u) = J(u) + r ||psi||_p."""
    J, psi = _objective_parts(prob, _vals(prob, u))
    if prob.r == 0:
        return J
    return J + prob.r * _norm(prob.grid.weights, psi, prob.p)


# ---------------------------------------------------------------------------
# constants
# ---------------------------------------------------------------------------
@dataclass
class PenaltyConstants:
    p_tilde: float
    beta: float
    r0: float
    trust_radius: float
    factor: float
    opnorm: float


def p_tilde(p):
    """p - 1 for integer p, p otherwise."""
    return p - 1 if float(p).is_integer() else p


def beta_lower(L, M_norm_p, p):
    """L 3^((2 p~ + 2)/p) (L ||M||_p + 1) / (1 - L ||M||_p) + L + 1."""
    pt = p_tilde(p)
    den = 1.0 - L * M_norm_p
    if not den > 0:
        raise PreconditionError(f"contraction factor {L * M_norm_p:.6g} is not below 1")
    return L * 3.0 ** ((2 * pt + 2) / p) * (L * M_norm_p + 1) / den + L + 1


def penalty_constants(prob, M_norm_p=None, alpha=1.0):
    """p~, beta, r0 and the trust radius alpha / beta.

    r0 = ||A|| / (1 - ||A|| ||M||_p) (2 k2 + int k + int k1 M) + ||k1||_q with
    q the conjugate exponent (ess-sup of k1 when p = 1).  On an interval the
    boundary consists of the two endpoints, hence the term 2 k2.
    """
    p = prob.p
    if math.isinf(p):
        raise InputError("the penalty constants need a finite exponent p")
    grid = prob.grid
    An = prob.A.opnorm(p)
    if M_norm_p is None:
        if prob.F is None:
            M_norm_p = 0.0
        else:
            M_norm_p = lp_norm(prob.F.modulus_on(grid), p)
    M = prob.F.modulus_on(grid).values[:, 0] if prob.F is not None else np.zeros(grid.size)
    factor = An * M_norm_p
    if not factor < 1:
        raise PreconditionError(f"contraction factor {factor:.6g} is not below 1")
    w = grid.weights
    k = prob.on_grid(prob.k)
    k1 = prob.on_grid(prob.k1)
    q = math.inf if p == 1 else p / (p - 1)
    k1q = float(np.abs(k1).max()) if math.isinf(q) else float((w @ np.abs(k1) ** q) ** (1 / q))
    r0 = An / (1 - factor) * (2 * float(prob.k2) + float(w @ k) + float(w @ (k1 * M))) + k1q
    beta = beta_lower(An, M_norm_p, p)
    return PenaltyConstants(p_tilde(p), beta, r0, alpha / beta, factor, An)


# ---------------------------------------------------------------------------
# trust region
# ---------------------------------------------------------------------------
def project_ball(prob, U, center, radius):
    """Project U onto {||U - center||_p <= radius} (quadrature norm).

    Exact for p = 1 (magnitudes soft-thresholded by a common amount) and
    p = 2 (radial scaling); other exponents use the radial retraction.
    """
    if radius is None or math.isinf(radius):
        return U
    D = U - center
    mag = np.linalg.norm(D, axis=1)
    w = prob.grid.weights
    p = prob.p
    cur = _norm(w, mag, p)
    if cur <= radius:
        return U
    if p == 1:
        lo, hi = 0.0, float(mag.max())
        for _ in range(100):
            th = 0.5 * (lo + hi)
            if w @ np.maximum(mag - th, 0.0) > radius:
                lo = th
            else:
                hi = th
        scale = np.where(mag > 0, np.maximum(mag - hi, 0.0) / np.where(mag > 0, mag, 1.0), 0.0)
        return center + D * scale[:, None]
    return center + D * (radius / cur)


# ---------------------------------------------------------------------------
# minimization
# ---------------------------------------------------------------------------
@dataclass
class MinimizeResult:
    u_opt: GridFunction
    J_r: float
    psi_norm: float
    trace: list = field(default_factory=list)
    evaluations: int = 0
    stagnated: bool = False


def _blocks(N):
    """Multilevel node groups: all nodes, halves, quarters, ... singletons."""
    out = []
    size = N
    while True:
        out.append([np.arange(i, min(i + size, N)) for i in range(0, N, size)])
        if size == 1:
            break
        size = max(1, size // 2)
    return out


class _Counter:
    def __init__(self, prob, center, radius, budget):
        self.prob = prob
        self.center = center
        self.radius = radius
        self.budget = budget
        self.n = 0

    def __call__(self, U):
        self.n += 1
        return penalized_objective(self.prob, U)

    def proj(self, U):
        return project_ball(self.prob, U, self.center, self.radius)

    @property
    def left(self):
        return self.budget - self.n


def _pattern_search(ev, U, step0, min_step):
    best = ev(U)
    trace = [best]
    n = U.shape[1]
    levels = _blocks(U.shape[0])
    step = step0
    while step >= min_step and ev.left > 0:
        improved = False
        for level in levels:
            for blk in level:
                for j in range(n):
                    for sgn in (1.0, -1.0):
                        if ev.left <= 0:
                            return U, best, trace
                        cand = U.copy()
                        cand[blk, j] += sgn * step
                        cand = ev.proj(cand)
                        val = ev(cand)
                        if val < best:
                            U, best = cand, val
                            trace.append(best)
                            improved = True
                            break
        if not improved:
            step *= 0.5
    return U, best, trace


def _coordinate_search(ev, U, step0, min_step):
    best = ev(U)
    trace = [best]
    n = U.shape[1]
    levels = _blocks(U.shape[0])
    step = step0
    while step >= min_step and ev.left > 0:
        improved = False
        for level in levels:
            for blk in level:
                for j in range(n):
                    if ev.left <= 2:
                        return U, best, trace

                    def line(a, blk=blk, j=j, U=U):
                        c = U.copy()
                        c[blk, j] += a
                        return ev(ev.proj(c))

                    res = minimize_scalar(line, bounds=(-step, step), method="bounded",
                                          options={"xatol": min_step, "maxiter": 60})
                    if res.fun < best - 1e-15:
                        c = U.copy()
                        c[blk, j] += res.x
                        U, best = ev.proj(c), res.fun
                        trace.append(best)
                        improved = True
        if not improved:
            step *= 0.5
    return U, best, trace


def penalized_subgradient(prob, U, fd_step=1e-7):
    """A subgradient of J_r at U with respect to the node values.

    Pointwise partials of f and psi are taken by central differences applied
    to all nodes at once, which is valid because both are node-local.
    """
    A = prob.A
    grid = prob.grid
    w = grid.weights
    X = apply_values(A, U)
    t = prob.node_coords()
    n = U.shape[1]
    fx = np.zeros_like(U)
    fu = np.zeros_like(U)
    px = np.zeros_like(U)
    pu = np.zeros_like(U)
    for j in range(n):
        e = np.zeros(n)
        e[j] = fd_step
        fx[:, j] = (np.asarray(prob.f(t, X + e, U)) - np.asarray(prob.f(t, X - e, U))) / (2 * fd_step)
        fu[:, j] = (np.asarray(prob.f(t, X, U + e)) - np.asarray(prob.f(t, X, U - e))) / (2 * fd_step)
    psi = _psi_values(prob, U, X)
    if prob.F is not None and prob.r > 0:
        _, near = prob.F.project_nodes(grid, X, U)
        nz = psi > 0
        pu[nz] = (U[nz] - near[nz]) / psi[nz, None]
        for j in range(n):
            e = np.zeros(n)
            e[j] = fd_step
            px[:, j] = (_psi_values(prob, U, X + e) - _psi_values(prob, U, X - e)) / (2 * fd_step)
    # weights of the p-norm derivative
    p = prob.p
    nrm = _norm(w, psi, p)
    if p == 1:
        c = w
    elif nrm > 0 and not math.isinf(p):
        c = w * psi ** (p - 1) * nrm ** (1 - p)
    else:
        c = np.zeros_like(w)
    gx = w[:, None] * fx + prob.r * c[:, None] * px
    if prob.phi is not None:
        a, b = X[0], X[-1]
        for j in range(n):
            e = np.zeros(n)
            e[j] = fd_step
            gx[0, j] += (prob.phi(a + e, b) - prob.phi(a - e, b)) / (2 * fd_step)
            gx[-1, j] += (prob.phi(a, b + e) - prob.phi(a, b - e)) / (2 * fd_step)
    # x = Amat u, so the x-part pulls back through the plain matrix transpose
    gxu = (A.matrix.T @ gx.ravel()).reshape(U.shape)
    return gxu + w[:, None] * fu + prob.r * c[:, None] * pu


def _subgradient(ev, U, step0, min_step):
    best = ev(U)
    bestU = U
    trace = [best]
    k = 0
    while ev.left > 0:
        k += 1
        g = penalized_subgradient(ev.prob, U)
        gn = float(np.linalg.norm(g))
        if gn == 0:
            break
        step = step0 / math.sqrt(k)
        if step < min_step:
            break
        U = ev.proj(U - step * g / gn)
        val = ev(U)
        if val < best:
            best, bestU = val, U
            trace.append(best)
    return bestU, best, trace


METHODS = {"pattern-search": _pattern_search, "coordinate-proximal": _coordinate_search,
           "subgradient": _subgradient}


def minimize_penalized(prob, u_init, budget=20_000, method="pattern-search", step0=1.0,
                       min_step=1e-10, center=None, radius=None):
    """Derivative-free (or subgradient) minimization of J_r.

    ``center``/``radius`` restrict the search to the L_p ball around
    ``center``.  The returned trace lists the incumbent objective values and
    is nonincreasing.
    """
    if budget < 1:
        raise InputError("budget must be at least 1")
    if method not in METHODS:
        raise InputError(f"unknown method {method!r}; choose from {sorted(METHODS)}")
    U0 = np.array(_vals(prob, u_init), dtype=float)
    C = U0 if center is None else np.array(_vals(prob, center), dtype=float)
    ev = _Counter(prob, C, radius, int(budget))
    U0 = ev.proj(U0)
    U, best, trace = METHODS[method](ev, U0, step0, min_step)
    psi = _psi_values(prob, U, apply_values(prob.A, U))
    stagn = len(trace) == 1
    return MinimizeResult(GridFunction(prob.grid, U), float(best),
                          _norm(prob.grid.weights, psi, prob.p), trace, ev.n, stagn)


def exactness_check(prob, u_bar, r_grid, alpha=1.0, tol=1e-6, budget=4000, starts=2,
                    seed=0, method="pattern-search", region="trust"):
    """Minimize J_r around a feasible u_bar for each r.

    ``region='trust'`` restricts the search to the trust region of the
    exactness theorem; ``region='global'`` searches without restriction,
    which is meaningful for problems that are globally exact.  A row is a
    success when the incumbent is feasible (psi norm <= tol) and
    J_r(incumbent) >= J(u_bar) - tol.  Rows with r >= r0 are expected to
    succeed.
    """
    if region not in ("trust", "global"):
        raise InputError("region must be 'trust' or 'global'")
    U = _vals(prob, u_bar)
    psi0 = _norm(prob.grid.weights, _psi_values(prob, U, apply_values(prob.A, U)), prob.p)
    if psi0 > tol:
        raise PreconditionError(f"u_bar is infeasible (psi norm {psi0:.3g})")
    consts = penalty_constants(prob, alpha=alpha)
    Jbar = objective(prob, u_bar)
    rng = np.random.default_rng(seed)
    radius = consts.trust_radius
    rows = []
    for r in r_grid:
        pr = prob.with_r(r)
        best = None
        for s in range(int(starts)):
            if s == 0:
                start = U
            else:
                spread = radius if region == "trust" else 1.0
                start = U + 0.5 * spread * rng.standard_normal(U.shape) / max(1.0, prob.grid.measure)
            if region == "trust":
                res = minimize_penalized(pr, start, budget=budget, method=method,
                                         step0=radius, center=U, radius=radius)
            else:
                res = minimize_penalized(pr, start, budget=budget, method=method)
            if best is None or res.J_r < best.J_r:
                best = res
        feasible = best.psi_norm <= tol
        rows.append({"r": float(r), "feasible": bool(feasible), "J_r": best.J_r,
                     "psi_norm": best.psi_norm,
                     "success": bool(feasible and best.J_r >= Jbar - tol),
                     "above_r0": bool(r >= consts.r0)})
    return {"r0": consts.r0, "beta": consts.beta, "trust_radius": radius, "J_bar": Jbar,
            "rows": rows,
            "consistent": all(row["success"] for row in rows if row["above_r0"])}


# ---------------------------------------------------------------------------
# sample checks
# ---------------------------------------------------------------------------
def psi_lipschitz_check(prob, probes=10_000, seed=0, scale=2.0):
    """Sample |psi(t,x1,y1) - psi(t,x2,y2)| <= M(t)|x1-x2| + |y1-y2|."""
    if prob.F is None:
        return {"holds": True, "worst_excess": 0.0}
    rng = np.random.default_rng(seed)
    grid = prob.grid
    N = grid.size
    n = prob.A.codim
    M = prob.F.modulus_on(grid).values[:, 0]
    worst = -math.inf
    done = 0
    while done < probes:
        X1, X2, Y1, Y2 = (scale * rng.standard_normal((N, n)) for _ in range(4))
        # mix near and far pairs
        X2 = np.where(rng.random((N, 1)) < 0.5, X1 + 1e-3 * X2, X2)
        p1 = prob.F.project_nodes(grid, X1, Y1)[0]
        p2 = prob.F.project_nodes(grid, X2, Y2)[0]
        rhs = M * np.linalg.norm(X1 - X2, axis=1) + np.linalg.norm(Y1 - Y2, axis=1)
        worst = max(worst, float((np.abs(p1 - p2) - rhs).max()))
        done += N
    return {"holds": worst <= 1e-8, "worst_excess": worst, "probes": done}


def lipschitz_sample_check(prob, probes=2000, seed=0):
    """Sample |f(t,x1,y1) - f(t,x2,y2)| <= k(t)|x1-x2| + k1(t)|y1-y2| within the declared radius."""
    rng = np.random.default_rng(seed)
    grid = prob.grid
    N = grid.size
    n = prob.A.codim
    R = prob.lipschitz_radius
    t = prob.node_coords()
    k = prob.on_grid(prob.k)
    k1 = prob.on_grid(prob.k1)
    worst = -math.inf
    done = 0
    while done < probes:
        def ball():
            v = rng.standard_normal((N, n))
            return R * rng.random((N, 1)) ** (1 / n) * v / np.linalg.norm(v, axis=1, keepdims=True)
        X1, X2, Y1, Y2 = ball(), ball(), ball(), ball()
        lhs = np.abs(np.asarray(prob.f(t, X1, Y1)) - np.asarray(prob.f(t, X2, Y2)))
        rhs = k * np.linalg.norm(X1 - X2, axis=1) + k1 * np.linalg.norm(Y1 - Y2, axis=1)
        worst = max(worst, float((lhs - rhs).max()))
        done += N
    return {"holds": worst <= 1e-10, "worst_excess": worst}


# ---------------------------------------------------------------------------
# sufficiency certificate
# ---------------------------------------------------------------------------
@dataclass
class Certificate:
    v_star: GridFunction
    u_star: GridFunction
    c1: np.ndarray
    c2: np.ndarray


PROBE_SCALES = (1e-3, 1e-2, 1e-1, 1.0)


def convexity_sample_check(prob, probes=200, seed=0, scale=2.0):
    """Midpoint convexity of f(t, ., .) at every node and of phi."""
    rng = np.random.default_rng(seed)
    N = prob.grid.size
    n = prob.A.codim
    t = prob.node_coords()
    worst = -math.inf
    for _ in range(int(probes)):
        X1, X2, U1, U2 = (scale * rng.standard_normal((N, n)) for _ in range(4))
        mid = np.asarray(prob.f(t, (X1 + X2) / 2, (U1 + U2) / 2))
        avg = 0.5 * (np.asarray(prob.f(t, X1, U1)) + np.asarray(prob.f(t, X2, U2)))
        worst = max(worst, float((mid - avg).max()))
        if prob.phi is not None:
            a1, a2, b1, b2 = (scale * rng.standard_normal(n) for _ in range(4))
            m = prob.phi((a1 + a2) / 2, (b1 + b2) / 2)
            worst = max(worst, m - 0.5 * (prob.phi(a1, b1) + prob.phi(a2, b2)))
    return {"holds": worst <= 1e-10 * max(1.0, scale ** 2), "worst_excess": worst}


def certificate_check(prob, u_bar, cert, probes=200, seed=0, tol=1e-9, gap_tol=1e-10):
    """Check the sufficiency conditions for global optimality of u_bar.

    1) (u*(t), -v*(t)) is a subgradient of f(t, ., .) at ((A u_bar)(t), u_bar(t)),
    2) (-c1, -c2) is a subgradient of phi at the endpoint values,
    3) the linear functional u -> int <v* - A* u*, u> + <c1, (Au)(t0)>
       + <c2, (Au)(T)> vanishes on every hat basis function.
    """
    conv = convexity_sample_check(prob, seed=seed)
    if not conv["holds"]:
        raise PreconditionError(f"convexity sample check failed (excess {conv['worst_excess']:.3g})")
    rng = np.random.default_rng(seed)
    A = prob.A
    grid = prob.grid
    n = A.codim
    N = grid.size
    U = _vals(prob, u_bar)
    X = apply_values(A, U)
    t = prob.node_coords()
    us = cert.u_star.values
    vs = cert.v_star.values
    c1 = np.atleast_1d(np.asarray(cert.c1, dtype=float))
    c2 = np.atleast_1d(np.asarray(cert.c2, dtype=float))
    f0 = np.asarray(prob.f(t, X, U))
    worst_f = math.inf
    bad_nodes = np.zeros(N, dtype=bool)
    for i in range(int(probes)):
        s = PROBE_SCALES[i % len(PROBE_SCALES)]
        D = s * rng.standard_normal((N, n))
        E = s * rng.standard_normal((N, n))
        lhs = np.asarray(prob.f(t, X + D, U + E)) - f0
        rhs = (us * D).sum(axis=1) - (vs * E).sum(axis=1)
        slack = lhs - rhs
        bad_nodes |= slack < -tol
        worst_f = min(worst_f, float(slack.min()))
    worst_phi = math.inf
    if prob.phi is not None:
        a, b = X[0], X[-1]
        p0 = prob.phi(a, b)
        for i in range(int(probes)):
            s = PROBE_SCALES[i % len(PROBE_SCALES)]
            da, db = s * rng.standard_normal(n), s * rng.standard_normal(n)
            worst_phi = min(worst_phi, prob.phi(a + da, b + db) - p0 + c1 @ da + c2 @ db)
    else:
        worst_phi = 0.0 if (np.all(c1 == 0) and np.all(c2 == 0)) else -math.inf
    # stationarity on the hat basis
    w = grid.weights
    gap = (w[:, None] * (vs - adjoint_values(A, us))).ravel()
    gap = gap + A.matrix[:n, :].T @ c1 + A.matrix[-n:, :].T @ c2
    stat = float(np.abs(gap).max())
    return {"subgrad_f_ok": bool(worst_f >= -tol), "subgrad_phi_ok": bool(worst_phi >= -tol),
            "worst_f_slack": float(worst_f), "worst_phi_slack": float(worst_phi),
            "violating_nodes": np.nonzero(bad_nodes)[0].tolist(),
            "stationarity_gap": stat,
            "passed": bool(worst_f >= -tol and worst_phi >= -tol and stat <= gap_tol)}


def sufficiency_sanity(prob, u_bar, probes=1000, seed=0, scale=1.0, feasible=None):
    """Smallest J(u) - J(u_bar) over random feasible u (should be >= -1e-6)."""
    rng = np.random.default_rng(seed)
    U = _vals(prob, u_bar)
    Jbar = objective(prob, U)
    worst = math.inf
    for i in range(int(probes)):
        s = scale * PROBE_SCALES[i % len(PROBE_SCALES)]
        cand = U + s * rng.standard_normal(U.shape)
        if feasible is not None and not feasible(cand):
            continue
        if prob.F is not None:
            psi = _psi_values(prob, cand, apply_values(prob.A, cand))
            if psi.max() > 1e-12:
                continue
        worst = min(worst, objective(prob, cand) - Jbar)
    return worst
