"""Named kernels, multimaps, scalar fields, integrands and control problems.

Every entry is a factory taking keyword parameters; ``catalog_text`` renders the
parameter signatures shown by ``opincl list-builtins``.
"""
import math

import numpy as np

from . import discrete_oc
from .errors import InputError
from .inclusion_solver import MultiMap
from .operators import KernelOperator
from .second_order import ScalarField
from .setval import CompactSet, dist_batch, sampled_ball


def _shape(t, s):
    return np.broadcast(t[..., 0] if t.ndim == 3 else t, s[..., 0] if s.ndim == 3 else s).shape


def _diff(t, s):
    """t - s for intervals, first-coordinate difference for boxes."""
    if t.ndim == 3:
        return t[..., 0] - s[..., 0]
    return t - s


# ---------------------------------------------------------------------------
# kernels: (kind, callable or table)
# ---------------------------------------------------------------------------
def _k_const(kind, c):
    return kind, (lambda t, s: np.full(_shape(t, s), float(c)))


def _k_exp(kind, a):
    return kind, (lambda t, s: np.exp(float(a) * _diff(t, s)))


KERNELS = {
    "volterra-identity": ({}, lambda: _k_const("volterra", 1.0)),
    "volterra-constant": ({"c": "real"}, lambda c: _k_const("volterra", c)),
    "volterra-exp": ({"a": "real (K = exp(a (t - s)))"}, lambda a: _k_exp("volterra", a)),
    "fredholm-constant": ({"c": "real"}, lambda c: _k_const("fredholm", c)),
    "fredholm-exp": ({"a": "real (K = exp(a (t - s)))"}, lambda a: _k_exp("fredholm", a)),
    "table": ({"kind": "volterra | fredholm", "values": "N x N nested list"},
              lambda kind, values: (kind, np.asarray(values, dtype=float))),
}


def make_operator(spec, grid):
    """Build a KernelOperator from ``{"kernel", "params", "L", "opnorm", "codim"}``."""
    name = spec["kernel"]
    if name not in KERNELS:
        raise InputError(f"unknown kernel {name!r}")
    kind, K = KERNELS[name][1](**spec.get("params", {}))
    return KernelOperator(kind, K, grid, codim=spec.get("codim", 1), L=spec.get("L"),
                          opnorm=spec.get("opnorm"), name=name)


# ---------------------------------------------------------------------------
# multimaps
# ---------------------------------------------------------------------------
def _vec(b, dim):
    v = np.atleast_1d(np.asarray(b, dtype=float))
    return np.broadcast_to(v, (dim,)).copy()


def _affine(a, b, dim=1):
    bv = _vec(b, dim)
    return MultiMap.translate(CompactSet(np.zeros((1, dim))), lambda T, X: a * X + bv,
                              abs(float(a)), name="affine")


def _affine_ball(a, b, radius, dim=1, vertices=16):
    bv = _vec(b, dim)
    return MultiMap.translate(sampled_ball(np.zeros(dim), radius, vertices),
                              lambda T, X: a * X + bv, abs(float(a)), name="affine-ball")


def _constant_set(points, convex=False):
    S = CompactSet(points, convex)
    return MultiMap.translate(S, lambda T, X: np.zeros_like(X), 0.0, name="constant-set")


def _box(lower, upper, a=0.0):
    lo = np.atleast_1d(np.asarray(lower, dtype=float))
    hi = np.atleast_1d(np.asarray(upper, dtype=float))
    corners = np.array(np.meshgrid(*[[l, h] for l, h in zip(lo, hi)], indexing="ij")).reshape(lo.size, -1).T
    return MultiMap.translate(CompactSet(corners, True), lambda T, X: a * X, abs(float(a)), name="box")


MULTIMAPS = {
    "affine": ({"a": "real", "b": "real or vector", "dim": "int = 1"}, _affine),
    "affine-ball": ({"a": "real", "b": "real or vector", "radius": "real", "dim": "int = 1",
                     "vertices": "int = 16"}, _affine_ball),
    "constant-set": ({"points": "list of vectors", "convex": "bool = false"}, _constant_set),
    "box": ({"lower": "vector", "upper": "vector", "a": "real = 0 (box shifted by a x)"}, _box),
    "zero": ({"dim": "int = 1"}, lambda dim=1: _affine(0.0, 0.0, dim)),
}


def make_multimap(spec):
    name = spec["name"]
    if name not in MULTIMAPS:
        raise InputError(f"unknown multimap {name!r}")
    F = MULTIMAPS[name][1](**spec.get("params", {}))
    if "modulus" in spec and spec["modulus"] is not None:
        F.modulus = float(spec["modulus"])
    return F


# ---------------------------------------------------------------------------
# scalar fields
# ---------------------------------------------------------------------------
def _quadratic(matrix, scale=1.0):
    A = np.atleast_2d(np.asarray(matrix, dtype=float))
    K = 2 * float(np.linalg.norm(A + A.T, 2)) * abs(scale)
    return ScalarField(lambda v: scale * float(v @ A @ v), A.shape[0], declared_lipschitz2=K,
                       name="quadratic")


def _max_of_quadratics(matrices, offsets=None, scale=1.0):
    mats = [np.atleast_2d(np.asarray(m, dtype=float)) for m in matrices]
    offs = [0.0] * len(mats) if offsets is None else [float(o) for o in offsets]
    return ScalarField(lambda v: scale * max(float(v @ m @ v) + o for m, o in zip(mats, offs)),
                       mats[0].shape[0], name="max-of-quadratics")


def _dist2_polytope(points, scale=1.0):
    C = CompactSet(points, convex_hint=True)
    return ScalarField(lambda v: scale * float(dist_batch(v.reshape(1, -1), C)[0] ** 2), C.dim,
                       declared_lipschitz2=4.0 * abs(scale), name="dist2-polytope")


FIELDS = {
    "quadratic": ({"matrix": "n x n", "scale": "real = 1"}, _quadratic),
    "example1-signed-square": ({"scale": "real = 1"},
                               lambda scale=1.0: ScalarField(lambda v: scale * v[0] * abs(v[0]), 1,
                                                             name="example1-signed-square")),
    "example2-abs-product": ({"scale": "real = 1"},
                             lambda scale=1.0: ScalarField(lambda v: scale * abs(v[0] * v[1]), 2,
                                                           name="example2-abs-product")),
    "example3-half-square": ({"scale": "real = 1"},
                             lambda scale=1.0: ScalarField(lambda v: scale * max(v[0], 0.0) ** 2, 1,
                                                           name="example3-half-square")),
    "max-of-quadratics": ({"matrices": "list of n x n", "offsets": "list = 0", "scale": "real = 1"},
                          _max_of_quadratics),
    "dist2-polytope": ({"points": "vertex list", "scale": "real = 1"}, _dist2_polytope),
}


def make_field(spec):
    name = spec["name"]
    if name not in FIELDS:
        raise InputError(f"unknown field {name!r}")
    return FIELDS[name][1](**spec.get("params", {}))


# ---------------------------------------------------------------------------
# penalty integrands f(t, X, U) and endpoint costs phi(a, b)
# ---------------------------------------------------------------------------
INTEGRANDS = {
    "control-square": ({}, lambda: (lambda t, X, U: (U ** 2).sum(axis=1))),
    "half-state-control-square": ({}, lambda: (lambda t, X, U: 0.5 * ((X ** 2).sum(axis=1) + (U ** 2).sum(axis=1)))),
    "abs-control-half-state-square": ({}, lambda: (lambda t, X, U: np.abs(U).sum(axis=1) + 0.5 * (X ** 2).sum(axis=1))),
    "tracking": ({"target": "real"}, lambda target: (lambda t, X, U: ((U - target) ** 2).sum(axis=1))),
}

ENDPOINTS = {
    "zero": ({}, lambda: None),
    "endpoint-square": ({"weight": "real"},
                        lambda weight: (lambda a, b: float(weight) * float(b @ b))),
}


def make_integrand(spec):
    name = spec["name"]
    if name not in INTEGRANDS:
        raise InputError(f"unknown integrand {name!r}")
    return INTEGRANDS[name][1](**spec.get("params", {}))


def make_endpoint(spec):
    name = spec["name"]
    if name not in ENDPOINTS:
        raise InputError(f"unknown endpoint cost {name!r}")
    return ENDPOINTS[name][1](**spec.get("params", {}))


# ---------------------------------------------------------------------------
# discrete control problems
# ---------------------------------------------------------------------------
OC_PROBLEMS = {
    "lq": ({"a": "n x n", "b": "n x r", "q": "n x n", "r": "r x r", "x0": "vector", "N": "int",
            "offset": "real = 0"}, discrete_oc.lq_problem),
    "logistic-control": ({"a": "real = 0.5", "b": "real = 1", "q": "real = 1", "r": "real = 0.5",
                          "x0": "real = 1", "N": "int = 50"}, discrete_oc.logistic_problem),
    "random-lq": ({"N": "int = 50", "seed": "from the run seed"}, discrete_oc.random_lq),
}


def catalog_text():
    """Stable, human-readable listing of all built-ins."""
    lines = []
    for title, table in (("kernels", KERNELS), ("multimaps", MULTIMAPS), ("fields", FIELDS),
                         ("integrands", INTEGRANDS), ("endpoint costs", ENDPOINTS),
                         ("control problems", OC_PROBLEMS)):
        lines.append(f"{title}:")
        for name in sorted(table):
            params = table[name][0]
            sig = ", ".join(f"{k}: {v}" for k, v in params.items()) or "no parameters"
            lines.append(f"  {name}({sig})")
    return "\n".join(lines) + "\n"


def safe_expression(expr, **names):
    """Evaluate a numeric expression over numpy arrays without builtins."""
    env = {"exp": np.exp, "log": np.log, "sqrt": np.sqrt, "sin": np.sin, "cos": np.cos,
           "tanh": np.tanh, "abs": np.abs, "maximum": np.maximum, "minimum": np.minimum,
           "where": np.where, "sign": np.sign, "pi": math.pi, "e": math.e}
    env.update(names)
    code = compile(str(expr), "<expression>", "eval")
    for n in code.co_names:
        if n not in env:
            raise InputError(f"unknown name {n!r} in expression {expr!r}")
    return eval(code, {"__builtins__": {}}, env)
