"""Pure numpy implementations of the hot kernels.

These mirror the compiled functions in ``_kernels.pyx`` one for one and are
used whenever the extension is missing or ``OPINCL_BACKEND=python`` is set.
All functions take C-contiguous float64 arrays.
"""
import numpy as np


def nearest_point(points, queries):
    """Nearest cloud point for each query row.

    Returns ``(dist, idx)``; ties go to the lowest index because
    ``argmin`` returns the first minimizer.
    """
    diff = queries[:, None, :] - points[None, :, :]
    d2 = np.einsum("qmn,qmn->qm", diff, diff)
    idx = np.argmin(d2, axis=1)
    return np.sqrt(d2[np.arange(len(queries)), idx]), idx.astype(np.int64)


def nearest_per_node(clouds, queries):
    """Node k searches only its own cloud ``clouds[k]`` (shape (N, m, n))."""
    diff = clouds - queries[:, None, :]
    d2 = np.einsum("kmn,kmn->km", diff, diff)
    idx = np.argmin(d2, axis=1)
    return np.sqrt(d2[np.arange(len(queries)), idx]), idx.astype(np.int64)


def directed_excess(a, b):
    """max over rows of ``a`` of the distance to the nearest row of ``b``."""
    d, _ = nearest_point(b, a)
    return float(d.max())


def _project_simplex_rows(v):
    """Euclidean projection of every row of ``v`` onto the unit simplex."""
    m = v.shape[1]
    s = -np.sort(-v, axis=1)
    css = np.cumsum(s, axis=1) - 1.0
    k = np.arange(1, m + 1)
    cond = s - css / k > 0
    rho = m - 1 - np.argmax(cond[:, ::-1], axis=1)
    theta = css[np.arange(len(v)), rho] / (rho + 1)
    return np.maximum(v - theta[:, None], 0.0)


def hull_project(points, queries, lip, tol, max_iter):
    """Project queries onto conv(points) by accelerated projected gradient.

    The unknowns are convex-combination weights w on the simplex and the
    objective is 0.5*|P^T w - y|^2 with P centred at its centroid.  Each
    query stops once its Frank-Wolfe duality gap, an upper bound on the
    objective error, falls below ``tol``.  Returns
    ``(nearest, weights, gap, iters)``.
    """
    q, n = queries.shape
    m = points.shape[0]
    c = points.mean(axis=0)
    pc = points - c
    b = queries - c
    gram = pc @ pc.T
    r = b @ pc.T  # (q, m)
    step = 1.0 / lip if lip > 0 else 0.0

    d2 = ((b[:, None, :] - pc[None, :, :]) ** 2).sum(axis=2)
    w = np.zeros((q, m))
    w[np.arange(q), np.argmin(d2, axis=1)] = 1.0
    yk = w.copy()
    tk = np.ones(q)
    active = np.ones(q, dtype=bool)
    gap = np.full(q, np.inf)
    iters = np.zeros(q, dtype=np.int64)

    def objective(ww, rr):
        return 0.5 * np.einsum("qi,ij,qj->q", ww, gram, ww) - np.einsum("qi,qi->q", rr, ww)

    fw = objective(w, r)
    for it in range(max_iter + 1):
        ia = np.nonzero(active)[0]
        if ia.size == 0:
            break
        g = w[ia] @ gram - r[ia]
        gp = np.einsum("qi,qi->q", w[ia], g) - g.min(axis=1)
        gap[ia] = gp
        done = gp <= tol
        active[ia[done]] = False
        iters[ia] = it
        ia = ia[~done]
        if ia.size == 0 or it == max_iter:
            break
        gy = yk[ia] @ gram - r[ia]
        wn = _project_simplex_rows(yk[ia] - step * gy)
        fn = objective(wn, r[ia])
        restart = fn > fw[ia]
        tn = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * tk[ia] ** 2))
        mom = ((tk[ia] - 1.0) / tn)[:, None]
        ynew = wn + mom * (wn - w[ia])
        # function-value restart: drop momentum and retake a plain step
        if restart.any():
            ir = ia[restart]
            gw = w[ir] @ gram - r[ir]
            wr = _project_simplex_rows(w[ir] - step * gw)
            wn[restart] = wr
            ynew[restart] = wr
            tn[restart] = 1.0
            fn[restart] = objective(wr, r[ir])
        w[ia] = wn
        yk[ia] = ynew
        tk[ia] = tn
        fw[ia] = fn
    nearest = w @ points
    return nearest, w, gap, iters


def volterra_exp_integral(m, rho, h):
    """Trapezoid values of int_{t0}^{t_k} exp(m(t_k) - m(s)) rho(s) ds.

    Uses the exact recurrence I_k = e^{m_k - m_{k-1}} I_{k-1}
    + h/2 (e^{m_k - m_{k-1}} rho_{k-1} + rho_k), which reproduces the
    composite trapezoid sum without forming the N x N exponential table.
    """
    n = m.shape[0]
    out = np.zeros(n)
    if n < 2:
        return out
    e = np.exp(np.diff(m))
    acc = 0.0
    for k in range(1, n):
        acc = e[k - 1] * (acc + 0.5 * h * rho[k - 1]) + 0.5 * h * rho[k]
        out[k] = acc
    return out
