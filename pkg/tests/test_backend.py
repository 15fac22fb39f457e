"""The compiled kernels and the numpy fallback agree."""
import os
import subprocess
import sys

import numpy as np
import pytest

from opincl import _backend, _kernels_py

compiled = pytest.importorskip("opincl._kernels")


def c(a):
    return np.ascontiguousarray(a, dtype=np.float64)


@pytest.mark.parametrize("seed", range(5))
def test_nearest_point_parity(seed):
    rng = np.random.default_rng(seed)
    P = c(rng.standard_normal((30, 3)))
    Q = c(rng.standard_normal((50, 3)))
    dp, ip = _kernels_py.nearest_point(P, Q)
    dc, ic = compiled.nearest_point(P, Q)
    assert np.allclose(dp, dc, rtol=0, atol=1e-13)
    assert np.array_equal(ip, np.asarray(ic))


def test_nearest_point_tie_breaks_to_lowest_index():
    P = c([[1.0], [-1.0], [1.0]])
    Q = c([[0.0]])
    assert _kernels_py.nearest_point(P, Q)[1][0] == np.asarray(compiled.nearest_point(P, Q)[1])[0] == 0


def test_nearest_per_node_and_excess_parity():
    rng = np.random.default_rng(1)
    clouds = c(rng.standard_normal((40, 6, 2)))
    Q = c(rng.standard_normal((40, 2)))
    dp, ip = _kernels_py.nearest_per_node(clouds, Q)
    dc, ic = compiled.nearest_per_node(clouds, Q)
    assert np.allclose(dp, dc, atol=1e-13) and np.array_equal(ip, np.asarray(ic))
    a, b = c(rng.standard_normal((20, 2))), c(rng.standard_normal((25, 2)))
    assert _kernels_py.directed_excess(a, b) == pytest.approx(compiled.directed_excess(a, b), abs=1e-13)


@pytest.mark.parametrize("seed", range(4))
def test_hull_project_parity(seed):
    rng = np.random.default_rng(seed)
    P = c(rng.standard_normal((12, 2)))
    Q = c(3 * rng.standard_normal((60, 2)))
    lip = float(np.linalg.norm(P - P.mean(axis=0), 2) ** 2)
    tol = 1e-12 * max(1.0, float(np.abs(Q).max()) ** 2)
    np_, wp, gp, _ = _kernels_py.hull_project(P, Q, lip, tol, 5000)
    nc, wc, gc, _ = compiled.hull_project(P, Q, lip, tol, 5000)
    dp = np.linalg.norm(Q - np.asarray(np_), axis=1)
    dc = np.linalg.norm(Q - np.asarray(nc), axis=1)
    # both stop on a duality gap below tol, so squared distances agree to about tol
    assert np.allclose(dp ** 2, dc ** 2, atol=4 * tol)
    assert np.all(np.asarray(gp) <= tol) and np.all(np.asarray(gc) <= tol)
    for w in (np.asarray(wp), np.asarray(wc)):
        assert np.all(w >= 0) and np.allclose(w.sum(axis=1), 1.0)


def test_volterra_exp_integral_parity():
    rng = np.random.default_rng(2)
    m = c(np.cumsum(rng.random(200)) * 0.01)
    rho = c(rng.standard_normal(200))
    assert np.allclose(_kernels_py.volterra_exp_integral(m, rho, 0.005),
                       np.asarray(compiled.volterra_exp_integral(m, rho, 0.005)), rtol=1e-13, atol=1e-15)


def test_default_backend_is_compiled():
    if os.environ.get("OPINCL_BACKEND", "").lower() == "python":
        pytest.skip("fallback forced by environment")
    assert _backend.BACKEND == "compiled"


def test_environment_forces_fallback():
    env = dict(os.environ, OPINCL_BACKEND="python")
    out = subprocess.run([sys.executable, "-c", "import opincl; print(opincl.BACKEND)"],
                         capture_output=True, text=True, env=env, check=True)
    assert out.stdout.strip() == "python"
