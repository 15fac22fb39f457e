"""Config-driven experiment runner.

Usage::

    opincl run CONFIG.json [--seed N] [--out-dir DIR] [--strict]
    opincl list-builtins

A config is a JSON object with ``command``, ``problem``, ``numeric`` and
``output`` blocks.  Missing entries are filled from per-command defaults and
the resolved tree is validated and embedded in the report.  Each run writes
``report.json`` plus CSV artifacts into ``DIR/<command>-<hash>/run-NNN``,
where ``<hash>`` is a content hash of the resolved config; earlier runs are
never overwritten.

Exit status: 0 when every declared check passes, 2 when a check fails (the
failing ids are printed), 1 on invalid input.
"""
import argparse
import copy
import csv
import hashlib
import io
import json
import math
import sys
import time
import zlib
from pathlib import Path

import jsonschema
import numpy as np

from . import builtins as bi
from . import discrete_oc, penalty, second_order
from ._backend import BACKEND
from .errors import ConvergenceError, EvaluationError, InputError, PreconditionError
from .gridfn import Grid, GridFunction
from .inclusion_solver import perturbation_study, solve_fredholm, solve_volterra
from .setval import CompactSet

COMMANDS = ("solve-inclusion", "perturb", "penalty", "certify", "second-order", "grad-check",
            "dist2-check")

# ---------------------------------------------------------------------------
# schema
# ---------------------------------------------------------------------------
_NUM = {"type": "number"}
_NUM_OR_NULL = {"type": ["number", "null"]}
_P = {"anyOf": [{"type": "number", "minimum": 1}, {"const": "inf"}]}
_VALUE = {"anyOf": [{"type": "number"}, {"type": "array", "items": _NUM}, {"type": "string"}]}
_POSINT = {"type": "integer", "minimum": 1}
_GRID = {
    "type": "object",
    "properties": {
        "lower": {"type": "array", "items": _NUM, "minItems": 1},
        "upper": {"type": "array", "items": _NUM, "minItems": 1},
        "nodes": {"type": "array", "items": {"type": "integer", "minimum": 2}, "minItems": 1},
    },
    "required": ["lower", "upper", "nodes"],
    "additionalProperties": False,
}
_OPERATOR = {
    "type": "object",
    "properties": {"kernel": {"enum": sorted(bi.KERNELS)}, "params": {"type": "object"},
                   "L": _NUM_OR_NULL, "opnorm": _NUM_OR_NULL, "codim": _POSINT},
    "required": ["kernel"],
    "additionalProperties": False,
}


def _named(table, extra=None):
    props = {"name": {"enum": sorted(table)}, "params": {"type": "object"}}
    props.update(extra or {})
    return {"type": "object", "properties": props, "required": ["name"],
            "additionalProperties": False}


_MULTIMAP = _named(bi.MULTIMAPS, {"modulus": _NUM_OR_NULL})
_SCHEDULE = {"type": "object",
             "properties": {"lam0": {"type": "number", "exclusiveMinimum": 0},
                            "q": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                            "steps": {"type": "integer", "minimum": 8}},
             "additionalProperties": False}


def _obj(props, required=()):
    return {"type": "object", "properties": props, "required": list(required),
            "additionalProperties": False}


_OUTPUT = _obj({"csv": {"type": "boolean"}})

_PROBLEM = {
    "solve-inclusion": _obj({"operator": _OPERATOR, "multimap": _MULTIMAP, "initial": _VALUE,
                             "expected_u": {"anyOf": [_VALUE, {"type": "null"}]},
                             "expected_tol": {"type": "number", "exclusiveMinimum": 0}},
                            ["operator", "multimap"]),
    "perturb": _obj({"operator": _OPERATOR, "multimap": _MULTIMAP, "initial": _VALUE,
                     "perturbation": _obj({"shape": _VALUE,
                                           "magnitudes": {"type": "array", "items": _NUM,
                                                          "minItems": 1}})},
                    ["operator", "multimap"]),
    "penalty": _obj({"operator": _OPERATOR, "multimap": {"anyOf": [_MULTIMAP, {"type": "null"}]},
                     "integrand": _named(bi.INTEGRANDS), "endpoint": _named(bi.ENDPOINTS),
                     "k": _NUM, "k1": _NUM, "k2": _NUM, "u_bar": _VALUE,
                     "convex": {"type": "boolean"}, "expected_r0": _NUM_OR_NULL},
                    ["operator", "integrand"]),
    "certify": _obj({"operator": _OPERATOR, "multimap": {"anyOf": [_MULTIMAP, {"type": "null"}]},
                     "integrand": _named(bi.INTEGRANDS), "endpoint": _named(bi.ENDPOINTS),
                     "u_bar": _VALUE, "convex": {"type": "boolean"},
                     "certificate": _obj({"v_star": _VALUE, "u_star": _VALUE,
                                          "c1": _VALUE, "c2": _VALUE}),
                     "expect": {"enum": ["pass", "reject"]}},
                    ["operator", "integrand"]),
    "second-order": _obj({"field": _named(bi.FIELDS),
                          "x0": {"type": "array", "items": _NUM, "minItems": 1},
                          "expected": {"type": "object",
                                       "propertyNames": {"enum": list(second_order.KINDS)},
                                       "additionalProperties": {"type": "string"}}},
                         ["field", "x0"]),
    "grad-check": _obj({"oc": _named(bi.OC_PROBLEMS), "instances": _POSINT}, ["oc"]),
    "dist2-check": _obj({"polytopes": _obj({"count": _POSINT, "dim": _POSINT,
                                            "vertices": {"type": "integer", "minimum": 1},
                                            "points": {"anyOf": [{"type": "null"},
                                                                 {"type": "array"}]}})}),
}

_OPTIMALITY = {"anyOf": [{"type": "null"},
                         _obj({"expect_necessary": {"type": ["boolean", "null"]},
                               "expected_alpha": _NUM_OR_NULL,
                               "alpha_tol": {"type": "number", "exclusiveMinimum": 0},
                               "uniformity": {"type": "number", "exclusiveMinimum": 0}})]}

_NUMERIC = {
    "solve-inclusion": {"grid": _GRID, "p": _P, "tol": {"type": "number", "exclusiveMinimum": 0},
                        "max_iter": _POSINT, "check_samples": _POSINT,
                        "defect_tol": {"type": "number", "exclusiveMinimum": 0},
                        "decay_margin": {"type": "number", "minimum": 0},
                        "refine_check": {"type": "boolean"}, "lipschitz_probes": {"type": "integer", "minimum": 0}},
    "perturb": {"grid": _GRID, "p": _P, "tol": {"type": "number", "exclusiveMinimum": 0},
                "max_iter": _POSINT, "alpha": _NUM_OR_NULL},
    "penalty": {"grid": _GRID, "p": _P,
                "r_grid": {"anyOf": [{"type": "null"},
                                     {"type": "array", "items": {"type": "number", "minimum": 0},
                                      "minItems": 1}]},
                "budget": _POSINT, "starts": _POSINT,
                "method": {"enum": sorted(penalty.METHODS)},
                "region": {"enum": ["trust", "global"]},
                "alpha": {"type": "number", "exclusiveMinimum": 0},
                "tol": {"type": "number", "exclusiveMinimum": 0},
                "J_tol": {"type": "number", "exclusiveMinimum": 0},
                "r0_tol": {"type": "number", "exclusiveMinimum": 0},
                "infeasible_psi_min": _NUM_OR_NULL},
    "certify": {"grid": _GRID, "probes": _POSINT, "tol": {"type": "number", "minimum": 0},
                "gap_tol": {"type": "number", "minimum": 0}, "sanity_probes": _POSINT,
                "sanity_tol": {"type": "number", "minimum": 0}},
    "second-order": {"directions": _POSINT,
                     "kinds": {"type": "array", "items": {"enum": list(second_order.KINDS)},
                               "minItems": 1},
                     "schedule": _SCHEDULE, "z_samples": {"type": "integer", "minimum": 0},
                     "tol": {"type": "number", "exclusiveMinimum": 0},
                     "optimality": _OPTIMALITY},
    "grad-check": {"N": _POSINT, "step": {"type": "number", "exclusiveMinimum": 0},
                   "tol": {"type": "number", "exclusiveMinimum": 0},
                   "contraction": {"type": "boolean"},
                   "truncation": {"anyOf": [{"type": "null"},
                                            {"type": "array", "items": _POSINT, "minItems": 3}]}},
    "dist2-check": {"trials": _POSINT, "scale": {"type": "number", "exclusiveMinimum": 0},
                    "tol": {"type": "number", "minimum": 0}},
}


def schema_for(command):
    numeric = dict(_NUMERIC[command])
    numeric["seed"] = {"type": "integer", "minimum": 0}
    return _obj({"command": {"const": command}, "problem": _PROBLEM[command],
                 "numeric": _obj(numeric), "output": _OUTPUT},
                ["command", "problem", "numeric"])


_GRID_DEFAULT = {"lower": [0.0], "upper": [1.0], "nodes": [1001]}
DEFAULTS = {
    "solve-inclusion": {
        "problem": {"initial": 0.0, "expected_u": None, "expected_tol": 1e-2},
        "numeric": {"grid": _GRID_DEFAULT, "p": 1, "tol": 1e-12, "max_iter": 500,
                    "check_samples": 8, "defect_tol": 1e-10, "decay_margin": 1e-2,
                    "refine_check": False, "lipschitz_probes": 50},
    },
    "perturb": {
        "problem": {"initial": 0.0,
                    "perturbation": {"shape": 1.0, "magnitudes": [2.0 ** -k for k in range(8)]}},
        "numeric": {"grid": {"lower": [0.0], "upper": [1.0], "nodes": [201]}, "p": 1,
                    "tol": 1e-13, "max_iter": 500, "alpha": None},
    },
    "penalty": {
        "problem": {"multimap": None, "endpoint": {"name": "zero", "params": {}}, "k": 0.0,
                    "k1": 0.0, "k2": 0.0, "u_bar": 0.0, "convex": False, "expected_r0": None},
        "numeric": {"grid": {"lower": [0.0], "upper": [1.0], "nodes": [51]}, "p": 1,
                    "r_grid": None, "budget": 4000, "starts": 2, "method": "pattern-search",
                    "region": "trust", "alpha": 1.0, "tol": 1e-6, "J_tol": 1e-4,
                    "r0_tol": 1e-12, "infeasible_psi_min": None},
    },
    "certify": {
        "problem": {"multimap": None, "endpoint": {"name": "zero", "params": {}}, "u_bar": 0.0,
                    "convex": True,
                    "certificate": {"v_star": 0.0, "u_star": 0.0, "c1": 0.0, "c2": 0.0},
                    "expect": "pass"},
        "numeric": {"grid": {"lower": [0.0], "upper": [1.0], "nodes": [51]}, "probes": 200,
                    "tol": 1e-9, "gap_tol": 1e-10, "sanity_probes": 1000, "sanity_tol": 1e-6},
    },
    "second-order": {
        "problem": {"expected": {}},
        "numeric": {"directions": 20,
                    "kinds": ["f2plus_local", "f2minus_local", "f2plus_point", "f2minus_point",
                              "sym2plus", "sym2minus"],
                    "schedule": {"lam0": 0.1, "q": 0.5, "steps": 40}, "z_samples": 12,
                    "tol": 1e-9, "optimality": None},
    },
    "grad-check": {
        "problem": {"instances": 1},
        "numeric": {"N": 50, "step": 1e-5, "tol": 1e-6, "contraction": True, "truncation": None},
    },
    "dist2-check": {
        "problem": {"polytopes": {"count": 5, "dim": 2, "vertices": 8, "points": None}},
        "numeric": {"trials": 10_000, "scale": 2.0, "tol": 1e-10},
    },
}
_OPTIMALITY_DEFAULT = {"expect_necessary": None, "expected_alpha": None, "alpha_tol": 1e-3,
                       "uniformity": 0.1}
_NAMED_DEFAULT = {"params": {}}


def _merge(defaults, given):
    """Recursive merge; ``given`` wins, dict defaults are filled in."""
    if not isinstance(defaults, dict) or not isinstance(given, dict):
        return copy.deepcopy(given)
    out = copy.deepcopy(defaults)
    for k, v in given.items():
        out[k] = _merge(defaults.get(k), v) if isinstance(defaults.get(k), dict) else copy.deepcopy(v)
    return out


def _fill_named(block, keys):
    for key in keys:
        item = block.get(key)
        if isinstance(item, dict):
            block[key] = _merge(_NAMED_DEFAULT, item)


def _format_path(err):
    path = ".".join(str(p) for p in err.absolute_path)
    return path or "<root>"


def resolve_config(raw, seed=None):
    """Validate ``raw`` and return the config with every default materialized.

    Raises :class:`InputError` naming the offending field path.
    """
    if not isinstance(raw, dict):
        raise InputError("<root>: config must be a JSON object")
    cmd = raw.get("command")
    if cmd not in COMMANDS:
        raise InputError(f"command: must be one of {', '.join(COMMANDS)}, got {cmd!r}")
    base = {"command": cmd, "problem": {}, "numeric": {"seed": 0}, "output": {"csv": True}}
    base = _merge(base, DEFAULTS[cmd])
    cfg = _merge(base, raw)
    if seed is not None:
        cfg["numeric"]["seed"] = int(seed)
    prob = cfg.get("problem")
    if isinstance(prob, dict):
        _fill_named(prob, ("multimap", "integrand", "endpoint", "field", "oc"))
        op = prob.get("operator")
        if isinstance(op, dict):
            prob["operator"] = _merge({"params": {}, "L": None, "opnorm": None, "codim": 1}, op)
    num = cfg.get("numeric")
    if isinstance(num, dict) and isinstance(num.get("optimality"), dict):
        num["optimality"] = _merge(_OPTIMALITY_DEFAULT, num["optimality"])
    validator = jsonschema.Draft202012Validator(schema_for(cmd))
    errors = sorted(validator.iter_errors(cfg), key=lambda e: list(e.absolute_path))
    if errors:
        e = errors[0]
        raise InputError(f"{_format_path(e)}: {e.message}")
    return cfg


def config_hash(cfg):
    text = json.dumps(cfg, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest()[:16]


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------
def module_rng(seed, module):
    """Independent stream for ``module`` split off the run seed."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), zlib.crc32(module.encode())]))


def module_seed(seed, module):
    ss = np.random.SeedSequence([int(seed), zlib.crc32(module.encode())])
    return int(ss.generate_state(1)[0])


def _grid(spec):
    return Grid(spec["lower"], spec["upper"], spec["nodes"])


def _p(p):
    return math.inf if p == "inf" else float(p)


def grid_value(value, grid, dim):
    """Constant, vector or expression in t (t0, t1, ... on boxes) sampled on ``grid``."""
    if isinstance(value, str):
        names = {"t": grid.coords[:, 0]}
        for i in range(grid.coords.shape[1]):
            names[f"t{i}"] = grid.coords[:, i]
        vals = np.asarray(bi.safe_expression(value, **names), dtype=float)
        if vals.ndim == 0:
            vals = np.full(grid.size, float(vals))
        vals = vals.reshape(grid.size, -1)
        if vals.shape[1] == 1 and dim > 1:
            vals = np.tile(vals, (1, dim))
        return GridFunction(grid, vals)
    val = np.atleast_1d(np.asarray(value, dtype=float))
    if val.size == 1:
        val = np.full(dim, float(val[0]))
    return GridFunction.constant(grid, val)


def table_csv(header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else
                    (int(v) if isinstance(v, (bool, np.bool_)) else v) for v in row])
    return buf.getvalue()


def _axes(grid):
    return ["t"] if grid.kind == "interval" else [f"t{i}" for i in range(grid.coords.shape[1])]


def _joined_csv(grid, columns):
    """CSV with node coordinates followed by the named (N, k) blocks."""
    header = _axes(grid)
    blocks = [grid.coords]
    for name, arr in columns:
        arr = np.asarray(arr, dtype=float).reshape(grid.size, -1)
        header += [name] if arr.shape[1] == 1 else [f"{name}{j}" for j in range(arr.shape[1])]
        blocks.append(arr)
    return table_csv(header, np.hstack(blocks).tolist())


def _check(cid, passed, observed=None, bound=None):
    return {"id": cid, "passed": bool(passed), "observed": observed, "bound": bound}


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return v
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    return obj


class Outcome:
    """Checks, summary values, CSV artifacts and warnings of one run."""

    def __init__(self):
        self.checks = []
        self.summary = {}
        self.artifacts = {}
        self.warnings = []

    def check(self, cid, passed, observed=None, bound=None):
        self.checks.append(_check(cid, passed, observed, bound))


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------
def _solve(A, F, u_bar, num, seed):
    if A.kind == "volterra":
        return solve_volterra(A, F, u_bar, tol=num["tol"], max_iter=num["max_iter"],
                              check_samples=num["check_samples"],
                              rng=module_rng(seed, "operators"))
    return solve_fredholm(A, F, u_bar, p=_p(num["p"]), tol=num["tol"], max_iter=num["max_iter"])


def run_solve_inclusion(cfg, out):
    pb, num = cfg["problem"], cfg["numeric"]
    seed = num["seed"]
    grid = _grid(num["grid"])
    A = bi.make_operator(pb["operator"], grid)
    F = bi.make_multimap(pb["multimap"])
    u_bar = grid_value(pb["initial"], grid, A.codim)
    if num["lipschitz_probes"] > 0:
        lip = F.check_lipschitz(grid, probes=num["lipschitz_probes"],
                                rng=module_rng(seed, "inclusion_solver"))
        if not lip["holds"]:
            out.warnings.append(f"declared modulus violated on samples (ratio {lip['worst_ratio']:.4g})")
    sol, rep = _solve(A, F, u_bar, num, seed)
    out.check("converged", sol.converged, sol.iterations, num["max_iter"])
    out.check("bound_satisfied", rep.satisfied, rep.slack, 10 * rep.h)
    if A.kind == "fredholm":
        ratios = sol.trace.decay_ratios()
        worst = max(ratios) if ratios else 0.0
        out.check("decay_ratio", worst <= rep.factor + num["decay_margin"], worst,
                  rep.factor + num["decay_margin"])
        out.check("final_defect", sol.final_defect <= num["defect_tol"], sol.final_defect,
                  num["defect_tol"])
        out.summary["contraction_factor"] = rep.factor
    if pb["expected_u"] is not None:
        exact = grid_value(pb["expected_u"], grid, A.codim).values
        err = float(np.abs(sol.u.values - exact).max())
        out.check("closed_form", err <= pb["expected_tol"], err, pb["expected_tol"])
        out.summary["closed_form_error"] = err
    if num["refine_check"]:
        fine = grid.refine()
        Af = bi.make_operator(pb["operator"], fine)
        _, rep_f = _solve(Af, F, grid_value(pb["initial"], fine, A.codim), num, seed)
        coarse = rep.slack
        ok = rep_f.slack <= 0.55 * coarse or coarse <= 1e-14
        ratio = coarse / rep_f.slack if rep_f.slack > 0 else math.inf
        out.check("slack_halves", ok, ratio, 2.0 / 1.1)
        out.summary["slack_refined"] = rep_f.slack
    out.summary.update({"converged": sol.converged, "iterations": sol.iterations,
                        "final_defect": sol.final_defect, "bound_satisfied": rep.satisfied,
                        "slack": rep.slack, "h": rep.h})
    out.artifacts["solution.csv"] = _joined_csv(grid, [("u", sol.u.values), ("x", sol.x.values)])
    out.artifacts["bounds.csv"] = _joined_csv(grid, [
        ("bound_x", rep.bound_x.values), ("bound_u", rep.bound_u.values),
        ("observed_x", rep.observed_x.values), ("observed_u", rep.observed_u.values)])
    out.artifacts["trace.csv"] = table_csv(["iteration", "dx", "dv", "defect"], sol.trace.as_rows())


def run_perturb(cfg, out):
    pb, num = cfg["problem"], cfg["numeric"]
    grid = _grid(num["grid"])
    A = bi.make_operator(pb["operator"], grid)
    if A.kind != "fredholm":
        raise InputError("problem.operator: the perturbation study needs a Fredholm kernel")
    F = bi.make_multimap(pb["multimap"])
    p = _p(num["p"])
    base, _ = solve_fredholm(A, F, grid_value(pb["initial"], grid, A.codim), p=p,
                             tol=num["tol"], max_iter=num["max_iter"])
    shape = grid_value(pb["perturbation"]["shape"], grid, A.codim).values
    s_list = [GridFunction(grid, m * shape) for m in pb["perturbation"]["magnitudes"]]
    alpha = math.inf if num["alpha"] is None else num["alpha"]
    rows = perturbation_study(A, F, base, s_list, p=p, alpha=alpha, tol=num["tol"],
                              max_iter=num["max_iter"])
    worst = max((r["deviation"] / r["bound"] if r["bound"] > 0 else 0.0) for r in rows)
    out.check("perturbation_bound", all(r["ok"] for r in rows), worst, 1.0 + 1e-9)
    ordered = sorted(rows, key=lambda r: -r["s_norm"])
    devs = [r["deviation"] for r in ordered]
    mono = all(b <= a + 1e-12 for a, b in zip(devs, devs[1:]))
    out.check("monotone_decay", mono, devs)
    out.summary.update({"rows": rows, "worst_ratio": worst})
    out.artifacts["perturbation.csv"] = table_csv(
        ["s_norm", "deviation", "bound", "ok"],
        [(r["s_norm"], r["deviation"], r["bound"], r["ok"]) for r in rows])


def _penalty_problem(pb, num, grid):
    A = bi.make_operator(pb["operator"], grid)
    F = None if pb.get("multimap") is None else bi.make_multimap(pb["multimap"])
    return penalty.PenaltyProblem(
        A, bi.make_integrand(pb["integrand"]), F=F, phi=bi.make_endpoint(pb["endpoint"]),
        p=_p(num.get("p", 1)), k=pb.get("k", 0.0), k1=pb.get("k1", 0.0), k2=pb.get("k2", 0.0),
        convex=pb.get("convex", False))


def run_penalty(cfg, out):
    pb, num = cfg["problem"], cfg["numeric"]
    grid = _grid(num["grid"])
    prob = _penalty_problem(pb, num, grid)
    u_bar = grid_value(pb["u_bar"], grid, prob.A.codim)
    consts = penalty.penalty_constants(prob, alpha=num["alpha"])
    r_grid = num["r_grid"]
    if r_grid is None:
        r_grid = [max(2.0, consts.r0), 10.0, 0.1]
    rep = penalty.exactness_check(prob, u_bar, r_grid, alpha=num["alpha"], tol=num["tol"],
                                  budget=num["budget"], starts=num["starts"],
                                  seed=module_seed(num["seed"], "penalty"), method=num["method"],
                                  region=num["region"])
    if pb["expected_r0"] is not None:
        err = abs(rep["r0"] - pb["expected_r0"])
        out.check("r0_value", err <= num["r0_tol"], rep["r0"], pb["expected_r0"])
    for row in rep["rows"]:
        if row["above_r0"]:
            dJ = abs(row["J_r"] - rep["J_bar"])
            out.check(f"exact_r={row['r']!r}", row["feasible"] and dJ <= num["J_tol"],
                      {"psi_norm": row["psi_norm"], "J_gap": dJ},
                      {"psi_norm": num["tol"], "J_gap": num["J_tol"]})
        elif num["infeasible_psi_min"] is not None:
            out.check(f"infeasible_r={row['r']!r}", row["psi_norm"] >= num["infeasible_psi_min"],
                      row["psi_norm"], num["infeasible_psi_min"])
    out.summary.update({"r0": rep["r0"], "beta": rep["beta"], "trust_radius": rep["trust_radius"],
                        "J_bar": rep["J_bar"], "rows": rep["rows"]})
    out.artifacts["exactness.csv"] = table_csv(
        ["r", "feasible", "J_r", "psi_norm"],
        [(row["r"], row["feasible"], row["J_r"], row["psi_norm"]) for row in rep["rows"]])


def run_certify(cfg, out):
    pb, num = cfg["problem"], cfg["numeric"]
    grid = _grid(num["grid"])
    prob = _penalty_problem(pb, num, grid)
    n = prob.A.codim
    u_bar = grid_value(pb["u_bar"], grid, n)
    c = pb["certificate"]
    cert = penalty.Certificate(grid_value(c["v_star"], grid, n), grid_value(c["u_star"], grid, n),
                               np.resize(np.asarray(c["c1"], dtype=float), n),
                               np.resize(np.asarray(c["c2"], dtype=float), n))
    seed = module_seed(num["seed"], "penalty")
    res = penalty.certificate_check(prob, u_bar, cert, probes=num["probes"], seed=seed,
                                    tol=num["tol"], gap_tol=num["gap_tol"])
    expect_pass = pb["expect"] == "pass"
    out.check("certificate_outcome", res["passed"] == expect_pass,
              "pass" if res["passed"] else "reject", pb["expect"])
    if res["passed"]:
        worst = penalty.sufficiency_sanity(prob, u_bar, probes=num["sanity_probes"], seed=seed)
        out.check("sufficiency_sanity", worst >= -num["sanity_tol"], worst, -num["sanity_tol"])
        out.summary["sanity_worst"] = worst
    out.summary.update({k: v for k, v in res.items()})
    bad = np.zeros(grid.size)
    bad[res["violating_nodes"]] = 1.0
    out.artifacts["certificate.csv"] = _joined_csv(
        grid, [("v_star", cert.v_star.values), ("u_star", cert.u_star.values), ("violating", bad)])


_PAIRS = (("f2minus_local", "f2plus_local"), ("f2minus_point", "f2plus_point"),
          ("sym2minus", "sym2plus"))


def run_second_order(cfg, out):
    pb, num = cfg["problem"], cfg["numeric"]
    f = bi.make_field(pb["field"])
    x0 = np.asarray(pb["x0"], dtype=float)
    if x0.shape != (f.dim,):
        raise InputError(f"problem.x0: expected {f.dim} coordinates")
    sch = num["schedule"]
    sched = second_order.Schedule(sch["lam0"], sch["q"], sch["steps"])
    rng = module_rng(num["seed"], "second_order")
    D = rng.standard_normal((num["directions"], f.dim))
    D /= np.linalg.norm(D, axis=1, keepdims=True)
    D2 = rng.standard_normal((num["directions"], f.dim))
    D2 /= np.linalg.norm(D2, axis=1, keepdims=True)
    kinds = list(num["kinds"])
    for k in pb["expected"]:
        if k not in kinds:
            kinds.append(k)
    est_seed = module_seed(num["seed"], "second_order.z")
    values = {k: [] for k in kinds}
    spreads = 0.0
    for x, x2 in zip(D, D2):
        for k in kinds:
            e = second_order.estimate_second(
                k, f, x0, x, x2=x2 if k == "mixed" else None,
                schedule=None if k == "mixed" else sched, z_samples=num["z_samples"],
                seed=est_seed)
            values[k].append(e.value)
            spreads = max(spreads, e.tail_spread / max(1.0, abs(e.value)))
    tol = num["tol"]
    for lo, hi in _PAIRS:
        if lo in values and hi in values:
            gap = max(a - b for a, b in zip(values[lo], values[hi]))
            out.check(f"sandwich_{hi}", gap <= tol, gap, tol)
    consts = {k: np.asarray(v, dtype=float) for k, v in pb["field"]["params"].items()
              if isinstance(v, (int, float, list))}
    for k, expr in pb["expected"].items():
        exact = [float(bi.safe_expression(expr, x=x, x2=x2, x0=x0, dot=np.dot,
                                          norm=np.linalg.norm, **consts))
                 for x, x2 in zip(D, D2)]
        err = max(abs(a - b) for a, b in zip(values[k], exact))
        out.check(f"closed_form_{k}", err <= tol, err, tol)
    if spreads > 1e-6:
        out.warnings.append(f"lambda tail spread {spreads:.3g} exceeds 1e-6")
    opt = num["optimality"]
    if opt is not None:
        res = second_order.optimality_test(f, x0, D, schedule=sched, uniformity=opt["uniformity"])
        out.summary["optimality"] = res
        if opt["expect_necessary"] is not None:
            out.check("necessary_condition", res["necessary_holds"] == opt["expect_necessary"],
                      res["min_f2plus"], 0.0)
        if opt["expected_alpha"] is not None:
            a = res["sufficient_alpha"]
            err = math.inf if a is None else abs(a - opt["expected_alpha"])
            out.check("sufficient_alpha", err <= opt["alpha_tol"], a, opt["expected_alpha"])
    out.summary["directions"] = int(num["directions"])
    header = ["direction"] + [f"x{i}" for i in range(f.dim)] + kinds
    rows = [[i] + list(map(float, D[i])) + [float(values[k][i]) for k in kinds]
            for i in range(len(D))]
    out.artifacts["estimates.csv"] = table_csv(header, rows)


def _oc_problems(pb, num, rng):
    name = pb["oc"]["name"]
    params = dict(pb["oc"]["params"])
    factory = bi.OC_PROBLEMS[name][1]
    if name == "random-lq":
        params.pop("seed", None)
        params.setdefault("N", num["N"])
        return [factory(rng, **params) for _ in range(pb["instances"])]
    params.setdefault("N", num["N"])
    return [factory(**params)] * pb["instances"]


def run_grad_check(cfg, out):
    pb, num = cfg["problem"], cfg["numeric"]
    rng = module_rng(num["seed"], "discrete_oc")
    probs = _oc_problems(pb, num, rng)
    errs, contr, rows = [], [], []
    for j, prob in enumerate(probs):
        u = rng.standard_normal((prob.N, prob.r))
        g = discrete_oc.gradient(prob, u)
        fd = discrete_oc.finite_difference_gradient(prob, u, num["step"])
        errs.append(float(np.abs(g - fd).max() / max(1.0, np.abs(fd).max())))
        for i in range(prob.N):
            for c in range(prob.r):
                rows.append((j, i, c, float(g[i, c]), float(fd[i, c])))
        if num["contraction"]:
            contr.append(discrete_oc.contraction_check(prob, u, rng.standard_normal(u.shape)))
    worst = max(errs)
    out.check("gradient_error", worst <= num["tol"], worst, num["tol"])
    if contr:
        out.check("contraction", all(c["holds"] for c in contr),
                  max(c["lhs"] / c["rhs"] for c in contr), 1.0)
    if num["truncation"] is not None:
        prob = probs[0]
        Ns = sorted(num["truncation"])
        u = rng.standard_normal((Ns[0], prob.r))
        st = discrete_oc.tail_truncation_study(prob, u, Ns)
        out.check("truncation", st["geometric"], st["ratios"], 10.0)
        out.summary["truncation"] = st
    out.summary.update({"instances": len(probs), "max_rel_err": worst})
    out.artifacts["gradients.csv"] = table_csv(["instance", "i", "component", "adjoint", "fd"], rows)


def run_dist2_check(cfg, out):
    pb, num = cfg["problem"], cfg["numeric"]
    spec = pb["polytopes"]
    rng = module_rng(num["seed"], "second_order")
    if spec["points"] is not None:
        sets = [CompactSet(pts, convex_hint=True) for pts in spec["points"]]
    else:
        sets = [second_order.random_polytope(spec["dim"], spec["vertices"], rng)
                for _ in range(spec["count"])]
    rows = []
    for i, C in enumerate(sets):
        res = second_order.dist2_second_difference_check(
            C, trials=num["trials"], seed=int(rng.integers(2 ** 31)), scale=num["scale"])
        worst = max(res["max_violation_low"], res["max_violation_high"], res["max_violation_cross"])
        out.check(f"dist2_polytope_{i}", worst <= num["tol"], worst, num["tol"])
        rows.append((i, res["max_violation_low"], res["max_violation_high"],
                     res["max_violation_cross"]))
    out.summary["polytopes"] = len(sets)
    out.artifacts["dist2.csv"] = table_csv(
        ["polytope", "max_violation_low", "max_violation_high", "max_violation_cross"], rows)


RUNNERS = {
    "solve-inclusion": run_solve_inclusion,
    "perturb": run_perturb,
    "penalty": run_penalty,
    "certify": run_certify,
    "second-order": run_second_order,
    "grad-check": run_grad_check,
    "dist2-check": run_dist2_check,
}


# ---------------------------------------------------------------------------
# driver
# ---------------------------------------------------------------------------
def execute(cfg, strict=False):
    """Run a resolved config; returns ``(report dict, artifacts dict)``."""
    out = Outcome()
    start = time.perf_counter()
    try:
        RUNNERS[cfg["command"]](cfg, out)
    except PreconditionError as exc:
        out.check("precondition", False, str(exc))
    except ConvergenceError as exc:
        out.check("convergence", False, str(exc))
    except EvaluationError as exc:
        out.check("evaluation", False, str(exc))
    wall = time.perf_counter() - start
    if strict and out.warnings:
        out.check("strict_warnings", False, out.warnings)
    passed = all(c["passed"] for c in out.checks)
    report = {"command": cfg["command"], "config": cfg, "seed": cfg["numeric"]["seed"],
              "backend": BACKEND, "strict": bool(strict), "passed": passed,
              "checks": out.checks, "warnings": out.warnings, "summary": out.summary,
              "wall_time": wall, "artifacts": sorted(out.artifacts) if cfg["output"]["csv"] else []}
    return _jsonable(report), (out.artifacts if cfg["output"]["csv"] else {})


def write_run(report, artifacts, out_dir):
    """Write into a fresh ``run-NNN`` directory under the config-hash folder."""
    base = Path(out_dir) / f"{report['command']}-{config_hash(report['config'])}"
    base.mkdir(parents=True, exist_ok=True)
    k = 1
    while True:
        run_dir = base / f"run-{k:03d}"
        try:
            run_dir.mkdir()
            break
        except FileExistsError:
            k += 1
    for name, text in sorted(artifacts.items()):
        with open(run_dir / name, "w", newline="") as fh:
            fh.write(text)
    with open(run_dir / "report.json", "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return run_dir


def load_config(path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except OSError as exc:
        raise InputError(f"cannot read config {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise InputError(f"<root>: invalid JSON ({exc.msg} at line {exc.lineno})") from None


def cmd_run(args):
    try:
        cfg = resolve_config(load_config(args.config), seed=args.seed)
        report, artifacts = execute(cfg, strict=args.strict)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    run_dir = write_run(report, artifacts, args.out_dir)
    for c in report["checks"]:
        print(f"{'PASS' if c['passed'] else 'FAIL'} {c['id']}: observed={c['observed']} "
              f"bound={c['bound']}")
    for w in report["warnings"]:
        print(f"warning: {w}", file=sys.stderr)
    print(f"report: {run_dir / 'report.json'}")
    if not report["passed"]:
        failed = [c["id"] for c in report["checks"] if not c["passed"]]
        print(f"failed checks: {', '.join(failed)}", file=sys.stderr)
        return 2
    return 0


def build_parser():
    ap = argparse.ArgumentParser(prog="opincl", description=__doc__.split("\n\n")[0])
    sub = ap.add_subparsers(dest="cmd", required=True)
    r = sub.add_parser("run", help="run an experiment config")
    r.add_argument("config", help="path to a JSON config")
    r.add_argument("--seed", type=int, default=None, help="override numeric.seed")
    r.add_argument("--out-dir", default="opincl-runs", help="directory for reports")
    r.add_argument("--strict", action="store_true", help="treat warnings as failures")
    sub.add_parser("list-builtins", help="print the catalog of named built-ins")
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    if args.cmd == "list-builtins":
        sys.stdout.write(bi.catalog_text())
        return 0
    return cmd_run(args)


if __name__ == "__main__":
    sys.exit(main())
