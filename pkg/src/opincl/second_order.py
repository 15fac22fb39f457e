"""Finite-difference estimators for second-order directional derivatives.

Quotient families (x0 base point, x direction, z shift):

* local   q_z(l) = (f(x0+lz+2lx) - 2f(x0+lz+lx) + f(x0+lz)) / l^2, sup/inf over z
* point   the same quotient with z = 0
* sym     (f(x0+lx) - 2f(x0) + f(x0-lx)) / l^2
* mixed   (f(y+l1x1+l2x2) - f(y+l1x1) - f(y+l2x2) + f(y)) / (l1 l2),  y = x0+l1z1+l2z2

The upper limit as l -> 0 is replaced by the maximum over the tail of a
geometric schedule, restricted to entries whose rounding-error bound is
small; lower limits use the minimum.  Suprema over z run over a finite
sample, so sup-type values are certified lower bounds of the true ones.
"""
from dataclasses import dataclass, field
import math

import numpy as np

from .errors import EvaluationError, InputError, PreconditionError
from .setval import CompactSet, dist_batch

EPS = np.finfo(float).eps
KINDS = ("f2plus_local", "f2minus_local", "f2plus_point", "f2minus_point",
         "sym2plus", "sym2minus", "mixed")
RELIABLE_REL = 1e-10


class ScalarField:
    """Real function on R^n with an optional declared 2-Lipschitz constant."""

    def __init__(self, fn, dim, declared_lipschitz2=None, name=None, grad=None):
        self.fn = fn
        self.dim = int(dim)
        self.declared_lipschitz2 = declared_lipschitz2
        self.name = name
        self.grad = grad

    def __call__(self, x):
        xv = np.atleast_1d(np.asarray(x, dtype=float))
        val = float(self.fn(xv))
        if not math.isfinite(val):
            raise EvaluationError(f"non-finite value of {self.name or 'f'} at {xv.tolist()}", where=xv)
        return val

    def __repr__(self):
        return f"ScalarField({self.name or 'anonymous'}, dim={self.dim})"


@dataclass(frozen=True)
class Schedule:
    """Geometric step schedule lambda_k = lam0 * q**k, k < steps."""

    lam0: float = 0.1
    q: float = 0.5
    steps: int = 40

    def __post_init__(self):
        if not self.lam0 > 0:
            raise InputError("lam0 must be positive")
        if not 0 < self.q < 1:
            raise InputError("q must lie in (0, 1)")
        if self.steps < 8:
            raise InputError("the schedule needs at least 8 steps")

    def lambdas(self):
        return self.lam0 * self.q ** np.arange(self.steps)


MIXED_SCHEDULE = Schedule(0.1, 0.5, 16)


@dataclass
class SecondOrderEstimate:
    kind: str
    value: float
    lambda_schedule: tuple
    z_samples: int
    attained_z: object = None
    tail: list = field(default_factory=list)

    @property
    def tail_spread(self):
        return float(max(self.tail) - min(self.tail)) if self.tail else 0.0


# ---------------------------------------------------------------------------
# quotient scans
# ---------------------------------------------------------------------------
def _combine(vals, coeffs, denom):
    """Second difference with clamping and a rounding-error bound."""
    num = sum(c * v for c, v in zip(coeffs, vals))
    mag = sum(abs(c * v) for c, v in zip(coeffs, vals))
    fmax = max(abs(v) for v in vals)
    if abs(num) < 64 * EPS * fmax:
        num = 0.0
    return num / denom, 8 * EPS * max(mag, fmax) / denom


def _tail(quotients, errors):
    """Reliable tail of a quotient sequence (ordered by decreasing lambda)."""
    q = np.asarray(quotients)
    e = np.asarray(errors)
    ok = e <= RELIABLE_REL * np.maximum(1.0, np.abs(q))
    idx = np.nonzero(ok)[0]
    if idx.size == 0:
        return [float(q[int(np.argmin(e))])]
    half = int(math.ceil(idx.size / 2))
    return [float(v) for v in q[idx[-half:]]]


def _scan_line(f, x0, x, z, lams, symmetric=False):
    """Tail of the one-parameter quotient for fixed z."""
    qs, es = [], []
    for lam in lams:
        if symmetric:
            vals = (f(x0 + lam * x), f(x0), f(x0 - lam * x))
        else:
            base = x0 + lam * z
            vals = (f(base + 2 * lam * x), f(base + lam * x), f(base))
        qv, ev = _combine(vals, (1.0, -2.0, 1.0), lam * lam)
        qs.append(qv)
        es.append(ev)
    return _tail(qs, es)


def _scan_mixed(f, x0, x1, x2, z1, z2, lams):
    """Reliable tail of the two-parameter quotient over the product schedule."""
    n = len(lams)
    Q = np.empty((n, n))
    E = np.empty((n, n))
    for i, l1 in enumerate(lams):
        for j, l2 in enumerate(lams):
            y = x0 + l1 * z1 + l2 * z2
            vals = (f(y + l1 * x1 + l2 * x2), f(y + l1 * x1), f(y + l2 * x2), f(y))
            Q[i, j], E[i, j] = _combine(vals, (1.0, -1.0, -1.0, 1.0), l1 * l2)
    ok = E <= RELIABLE_REL * np.maximum(1.0, np.abs(Q))
    if not ok.any():
        k = np.unravel_index(np.argmin(E), E.shape)
        return [float(Q[k])]
    # both steps in the second half of the reliable range
    rows = np.nonzero(ok.any(axis=1))[0]
    cut = rows[len(rows) // 2] if len(rows) > 1 else rows[0]
    sel = ok.copy()
    sel[:cut, :] = False
    sel[:, :cut] = False
    if not sel.any():
        sel = ok
    return [float(v) for v in Q[sel]]


def z_candidates(x, z_samples, rng, hints=()):
    """Hints z in {0, -x, -2x} and caller hints, then Gaussian z at 3 scales."""
    x = np.asarray(x, dtype=float)
    cands = [np.zeros_like(x), -x, -2 * x]
    cands += [np.asarray(h, dtype=float).reshape(x.shape) for h in hints]
    rng = np.random.default_rng(rng)
    scales = (0.1, 1.0, 10.0)
    for k in range(int(z_samples)):
        cands.append(scales[k % 3] * max(1.0, float(np.linalg.norm(x))) * rng.standard_normal(x.shape))
    return cands


def estimate_second(kind, f, x0, x, x2=None, schedule=None, z_samples=12, seed=0, hints=(),
                    z2_hints=()):
    """Estimate one of the second-order directional derivatives of ``f``.

    ``kind`` is one of ``KINDS``.  For ``mixed`` the directions are ``x``
    and ``x2``.  Returns a :class:`SecondOrderEstimate`.
    """
    if kind not in KINDS:
        raise InputError(f"unknown estimate kind {kind!r}")
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if x0.shape != (f.dim,) or x.shape != (f.dim,):
        raise InputError("base point and direction must match the field dimension")
    if kind == "mixed":
        if x2 is None:
            raise InputError("the mixed kind needs a second direction x2")
        return _estimate_mixed(f, x0, x, np.atleast_1d(np.asarray(x2, dtype=float)),
                               schedule or MIXED_SCHEDULE, z_samples, seed, hints, z2_hints)
    sched = schedule or Schedule()
    lams = sched.lambdas()
    params = (sched.lam0, sched.q, sched.steps)
    if kind in ("sym2plus", "sym2minus"):
        tail = _scan_line(f, x0, x, None, lams, symmetric=True)
        val = max(tail) if kind == "sym2plus" else min(tail)
        return SecondOrderEstimate(kind, val, params, 0, None, tail)
    if kind in ("f2plus_point", "f2minus_point"):
        tail = _scan_line(f, x0, x, np.zeros_like(x), lams)
        val = max(tail) if kind == "f2plus_point" else min(tail)
        return SecondOrderEstimate(kind, val, params, 0, np.zeros_like(x), tail)
    upper = kind == "f2plus_local"
    best, best_z, best_tail = None, None, []
    for z in z_candidates(x, z_samples, seed, hints):
        tail = _scan_line(f, x0, x, z, lams)
        v = max(tail) if upper else min(tail)
        if best is None or (v > best if upper else v < best):
            best, best_z, best_tail = v, z, tail
    return SecondOrderEstimate(kind, best, params, int(z_samples), best_z, best_tail)


def _estimate_mixed(f, x0, x1, x2, sched, z_samples, seed, hints, z2_hints):
    lams = sched.lambdas()
    pairs = [(a * x1, b * x2) for a in (0.0, -1.0) for b in (0.0, -1.0)]
    pairs += [(np.asarray(h1, float), np.asarray(h2, float)) for h1, h2 in zip(hints, z2_hints)]
    rng = np.random.default_rng(seed)
    scale = max(1.0, float(np.linalg.norm(x1)), float(np.linalg.norm(x2)))
    for _ in range(int(z_samples)):
        z1 = scale * rng.standard_normal(x1.shape)
        z2 = scale * rng.standard_normal(x1.shape)
        pairs += [(z1, z2), (z2, z1)]
    best, best_z, best_tail = None, None, []
    for z1, z2 in pairs:
        tail = _scan_mixed(f, x0, x1, x2, z1, z2, lams)
        v = max(tail)
        if best is None or v > best:
            best, best_z, best_tail = v, (z1, z2), tail
    return SecondOrderEstimate("mixed", best, (sched.lam0, sched.q, sched.steps),
                               int(z_samples), best_z, best_tail)


# ---------------------------------------------------------------------------
# bidifferential
# ---------------------------------------------------------------------------
@dataclass
class BidiffInterval:
    lower: float
    upper: float
    mode: str = "local"

    @property
    def empty(self):
        return self.lower > self.upper + 1e-9


def bidiff_interval_1d(f, x0, schedule=None, z_samples=12, seed=0, mode="local"):
    """D_2 f(x0) for a one-dimensional f as an interval of coefficients q of q*x^2.

    ``mode='local'`` uses the derivatives with the supremum/infimum over z;
    ``mode='point'`` uses z = 0 only.  By positive homogeneity x = +1 and
    x = -1 are the only directions needed.
    """
    if f.dim != 1:
        raise InputError("bidiff_interval_1d needs a one-dimensional field")
    if mode not in ("local", "point"):
        raise InputError("mode must be 'local' or 'point'")
    lo_kind, hi_kind = ("f2minus_local", "f2plus_local") if mode == "local" else \
        ("f2minus_point", "f2plus_point")
    lows, highs = [], []
    for s in (1.0, -1.0):
        lows.append(estimate_second(lo_kind, f, [x0], [s], schedule=schedule,
                                    z_samples=z_samples, seed=seed).value)
        highs.append(estimate_second(hi_kind, f, [x0], [s], schedule=schedule,
                                     z_samples=z_samples, seed=seed).value)
    return BidiffInterval(max(lows), min(highs), mode)


# ---------------------------------------------------------------------------
# distance-squared second differences
# ---------------------------------------------------------------------------
def dist2_second_difference_check(C, trials=10_000, seed=0, scale=2.0, check_convex=True):
    """Sample the second-difference bounds of d_C^2 for a convex polytope C.

    Checks, with violations reported as signed worst excesses (positive =
    violated):

    * 0 <= d2(z+2x) - 2 d2(z+x) + d2(z) <= 2|x|^2
    * d2(z+x) - 2 d2(z) + d2(z-x) <= 2|x|^2 (and >= 0 by convexity)
    * for z in C: |d2(z+x1+x2) - d2(z+x1) - d2(z+x2) + d2(z)| <= 4|x1||x2|
    """
    if check_convex and not C.convex_hint:
        raise PreconditionError("the distance-squared bounds need a convex set (convex_hint)")
    rng = np.random.default_rng(seed)
    n = C.dim
    T = int(trials)
    Z = scale * rng.standard_normal((T, n))
    X = rng.standard_normal((T, n)) * rng.choice([0.01, 0.3, 1.0, 3.0], size=(T, 1))
    d2 = lambda P: dist_batch(P, C) ** 2
    a, b, c = d2(Z + 2 * X), d2(Z + X), d2(Z)
    dm = d2(Z - X)
    nx2 = (X ** 2).sum(axis=1)
    fwd = a - 2 * b + c
    sym = b - 2 * c + dm
    low = max(float((-fwd).max()), float((-sym).max()))
    high = max(float((fwd - 2 * nx2).max()), float((sym - 2 * nx2).max()))
    # base points inside C: random convex combinations of the vertices
    W = rng.dirichlet(np.ones(len(C)), size=T)
    Zc = W @ C.points
    X1 = rng.standard_normal((T, n)) * rng.choice([0.01, 0.3, 1.0, 3.0], size=(T, 1))
    X2 = rng.standard_normal((T, n)) * rng.choice([0.01, 0.3, 1.0, 3.0], size=(T, 1))
    mixed = d2(Zc + X1 + X2) - d2(Zc + X1) - d2(Zc + X2) + d2(Zc)
    cross = float((np.abs(mixed) - 4 * np.linalg.norm(X1, axis=1) * np.linalg.norm(X2, axis=1)).max())
    return {"max_violation_low": low, "max_violation_high": high,
            "max_violation_cross": cross, "trials": T,
            "passed": max(low, high, cross) <= 1e-10}


def random_polytope(dim, vertices, rng):
    """Convex hull of Gaussian points (a random polytope)."""
    rng = np.random.default_rng(rng)
    return CompactSet(rng.standard_normal((vertices, dim)), convex_hint=True)


# ---------------------------------------------------------------------------
# calculus rules
# ---------------------------------------------------------------------------
def _unit(d):
    d = np.atleast_1d(np.asarray(d, dtype=float))
    n = np.linalg.norm(d)
    return d / n if n > 0 else d


def max_rule_check(fs, x0, directions, schedule=None, z_samples=8, seed=0, tol=1e-8,
                   active_tol=1e-12):
    """Check the max rule for f = max_i f_i at x0 in every direction.

    The inequality is decided on the point form (z = 0).  The local form
    with the same z sample on both sides is reported per row as a
    diagnostic only: for a maximum of quadratics with different active
    pieces along the segment, the local quotient of the maximum can exceed
    every piece (max(y1^2, y2^2) at 0, x = (1, 1), z = (-2, 0) gives 6 > 4).
    Returns a report dict; ``worst_local_excess`` holds the diagnostic.
    """
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    vals = np.array([fi(x0) for fi in fs])
    active = [i for i, v in enumerate(vals) if v >= vals.max() - active_tol]
    fmax = ScalarField(lambda y: max(fi.fn(y) for fi in fs), fs[0].dim, name="max")
    worst = {"f2plus_point": -math.inf, "f2plus_local": -math.inf}
    rows = []
    for d in directions:
        d = np.atleast_1d(np.asarray(d, dtype=float))
        for kind in worst:
            lhs = estimate_second(kind, fmax, x0, d, schedule=schedule, z_samples=z_samples, seed=seed).value
            rhs = max(estimate_second(kind, fs[i], x0, d, schedule=schedule,
                                      z_samples=z_samples, seed=seed).value for i in active)
            worst[kind] = max(worst[kind], lhs - rhs)
            rows.append({"direction": d.tolist(), "kind": kind, "lhs": lhs, "rhs": rhs})
    return {"active": active, "worst_excess": worst["f2plus_point"],
            "worst_local_excess": worst["f2plus_local"],
            "holds": worst["f2plus_point"] <= tol, "rows": rows}


def bilipschitz_sample_check(g, y0, theta, delta, K, probes=200, seed=0):
    """Sample |g(y0+x) - g(y0+y)| <= K |x-y|^theta (|x|+|y|)^(2-theta) on the delta-ball."""
    rng = np.random.default_rng(seed)
    y0 = np.atleast_1d(np.asarray(y0, dtype=float))
    worst = 0.0
    for _ in range(int(probes)):
        a = rng.standard_normal(y0.shape)
        b = rng.standard_normal(y0.shape)
        a *= delta * rng.random() / max(np.linalg.norm(a), 1e-300)
        b *= delta * rng.random() / max(np.linalg.norm(b), 1e-300)
        rhs = K * np.linalg.norm(a - b) ** theta * (np.linalg.norm(a) + np.linalg.norm(b)) ** (2 - theta)
        lhs = abs(g(y0 + a) - g(y0 + b))
        worst = max(worst, lhs - rhs)
    return {"holds": worst <= 1e-12, "worst_excess": float(worst)}


def chain_rule_check(g, phi, jac, x0, directions, schedule=None, hypothesis=None, tol=1e-6,
                     seed=0):
    """Compare (g o phi)^{(2)+}(x0; x) with g^{(2)+}(phi(x0); phi'(x0) x).

    ``phi`` maps R^n to R^m and ``jac(x0)`` returns its m x n Jacobian.
    ``hypothesis`` may hold ``(theta, delta, K)`` for the strong bilipschitz
    condition on g at phi(x0); it is sample-checked and a failure is
    reported as a warning.
    """
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    y0 = np.atleast_1d(np.asarray(phi(x0), dtype=float))
    J = np.atleast_2d(np.asarray(jac(x0), dtype=float))
    comp = ScalarField(lambda x: g.fn(np.atleast_1d(np.asarray(phi(x), dtype=float))), x0.size,
                       name="composition")
    warnings = []
    if hypothesis is not None:
        theta, delta, K = hypothesis
        chk = bilipschitz_sample_check(g, y0, theta, delta, K, seed=seed)
        if not chk["holds"]:
            warnings.append(f"strong bilipschitz condition failed on samples "
                            f"(excess {chk['worst_excess']:.3g})")
    worst = 0.0
    rows = []
    for d in directions:
        d = np.atleast_1d(np.asarray(d, dtype=float))
        lhs = estimate_second("f2plus_point", comp, x0, d, schedule=schedule).value
        rhs = estimate_second("f2plus_point", g, y0, J @ d, schedule=schedule).value
        worst = max(worst, abs(lhs - rhs))
        rows.append({"direction": d.tolist(), "lhs": lhs, "rhs": rhs})
    return {"max_abs_diff": worst, "holds": worst <= tol, "warnings": warnings, "rows": rows}


def optimality_test(f, x0, directions, schedule=None, uniformity=0.1):
    """Second-order necessary and sufficient conditions at x0.

    ``necessary_holds`` asks min_x f^{(2)+}(x0; x) >= -1e-8 (point kind);
    ``sufficient_alpha`` is min_x f^{(2)-}(x0; x)/|x|^2 when positive and the
    lambda-tail spread across directions is within ``uniformity`` times it.
    """
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    plus, minus, spreads = [], [], []
    for d in directions:
        d = _unit(d)
        plus.append(estimate_second("f2plus_point", f, x0, d, schedule=schedule).value)
        em = estimate_second("f2minus_point", f, x0, d, schedule=schedule)
        minus.append(em.value / float(d @ d))
        spreads.append(em.tail_spread)
    necessary = min(plus) >= -1e-8
    alpha = min(minus)
    spread = max(spreads)
    sufficient = alpha if (alpha > 0 and spread <= uniformity * alpha) else None
    return {"necessary_holds": bool(necessary), "min_f2plus": float(min(plus)),
            "sufficient_alpha": sufficient, "min_f2minus": float(alpha),
            "tail_spread": float(spread)}
