# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels; see ``_kernels_py`` for the reference semantics."""
import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, exp, INFINITY

cnp.import_array()


def nearest_point(const double[:, ::1] points, const double[:, ::1] queries):
    cdef Py_ssize_t q = queries.shape[0], m = points.shape[0], n = points.shape[1]
    cdef Py_ssize_t a, i, j, best
    cdef double d2, bd, t
    dist = np.empty(q)
    idx = np.empty(q, dtype=np.int64)
    cdef double[::1] dv = dist
    cdef long long[::1] iv = idx
    for a in range(q):
        bd = INFINITY
        best = 0
        for i in range(m):
            d2 = 0.0
            for j in range(n):
                t = queries[a, j] - points[i, j]
                d2 += t * t
            if d2 < bd:
                bd = d2
                best = i
        dv[a] = sqrt(bd)
        iv[a] = best
    return dist, idx


def nearest_per_node(const double[:, :, ::1] clouds, const double[:, ::1] queries):
    cdef Py_ssize_t q = queries.shape[0], m = clouds.shape[1], n = clouds.shape[2]
    cdef Py_ssize_t a, i, j, best
    cdef double d2, bd, t
    dist = np.empty(q)
    idx = np.empty(q, dtype=np.int64)
    cdef double[::1] dv = dist
    cdef long long[::1] iv = idx
    for a in range(q):
        bd = INFINITY
        best = 0
        for i in range(m):
            d2 = 0.0
            for j in range(n):
                t = queries[a, j] - clouds[a, i, j]
                d2 += t * t
            if d2 < bd:
                bd = d2
                best = i
        dv[a] = sqrt(bd)
        iv[a] = best
    return dist, idx


def directed_excess(const double[:, ::1] a, const double[:, ::1] b):
    cdef Py_ssize_t na = a.shape[0], nb = b.shape[0], n = a.shape[1]
    cdef Py_ssize_t i, k, j
    cdef double worst = 0.0, bd, d2, t
    for i in range(na):
        bd = INFINITY
        for k in range(nb):
            d2 = 0.0
            for j in range(n):
                t = a[i, j] - b[k, j]
                d2 += t * t
            if d2 < bd:
                bd = d2
        if bd > worst:
            worst = bd
    return sqrt(worst)


cdef void _project_simplex(double* v, double* out, double* buf, Py_ssize_t m) noexcept nogil:
    # sort a copy in decreasing order (insertion sort: m is small)
    cdef Py_ssize_t i, j
    cdef double key, css = 0.0, theta = 0.0
    for i in range(m):
        buf[i] = v[i]
    for i in range(1, m):
        key = buf[i]
        j = i - 1
        while j >= 0 and buf[j] < key:
            buf[j + 1] = buf[j]
            j -= 1
        buf[j + 1] = key
    for i in range(m):
        css += buf[i]
        if buf[i] - (css - 1.0) / (i + 1) > 0:
            theta = (css - 1.0) / (i + 1)
    for i in range(m):
        out[i] = v[i] - theta if v[i] - theta > 0 else 0.0


cdef double _objective(const double[:, ::1] gram, double* r, double* w, Py_ssize_t m) noexcept nogil:
    cdef Py_ssize_t i, j
    cdef double s = 0.0, gi
    for i in range(m):
        gi = 0.0
        for j in range(m):
            gi += gram[i, j] * w[j]
        s += w[i] * (0.5 * gi - r[i])
    return s


def hull_project(const double[:, ::1] points, const double[:, ::1] queries,
                 double lip, double tol, long max_iter):
    cdef Py_ssize_t q = queries.shape[0], n = queries.shape[1], m = points.shape[0]
    cdef Py_ssize_t a, i, j, best
    cdef long it
    c = np.asarray(points).mean(axis=0)
    pc_arr = np.ascontiguousarray(np.asarray(points) - c)
    gram_arr = np.ascontiguousarray(pc_arr @ pc_arr.T)
    b_arr = np.ascontiguousarray(np.asarray(queries) - c)
    r_arr = np.ascontiguousarray(b_arr @ pc_arr.T)
    cdef const double[:, ::1] pc = pc_arr
    cdef const double[:, ::1] gram = gram_arr
    cdef const double[:, ::1] bq = b_arr
    cdef double[:, ::1] rq = r_arr
    weights = np.zeros((q, m))
    gaps = np.empty(q)
    iters = np.zeros(q, dtype=np.int64)
    cdef double[:, ::1] W = weights
    cdef double[::1] G = gaps
    cdef long long[::1] I = iters
    work = np.zeros(6 * m)
    cdef double[::1] wk = work
    cdef double* w = &wk[0]
    cdef double* y = &wk[m]
    cdef double* wn = &wk[2 * m]
    cdef double* g = &wk[3 * m]
    cdef double* buf = &wk[4 * m]
    cdef double* tmp = &wk[5 * m]
    cdef double step = 1.0 / lip if lip > 0 else 0.0
    cdef double tk, tn, fw, fn, gmin, wg, bd, d2, t, mom, gp
    cdef double* r
    for a in range(q):
        r = &rq[a, 0]
        bd = INFINITY
        best = 0
        for i in range(m):
            d2 = 0.0
            for j in range(n):
                t = bq[a, j] - pc[i, j]
                d2 += t * t
            if d2 < bd:
                bd = d2
                best = i
        for i in range(m):
            w[i] = 0.0
            y[i] = 0.0
        w[best] = 1.0
        y[best] = 1.0
        tk = 1.0
        fw = _objective(gram, r, w, m)
        gp = INFINITY
        it = 0
        while True:
            # duality gap at the current iterate
            gmin = INFINITY
            wg = 0.0
            for i in range(m):
                t = -r[i]
                for j in range(m):
                    t += gram[i, j] * w[j]
                wg += w[i] * t
                if t < gmin:
                    gmin = t
            gp = wg - gmin
            if gp <= tol or it >= max_iter:
                break
            for i in range(m):
                t = -r[i]
                for j in range(m):
                    t += gram[i, j] * y[j]
                tmp[i] = y[i] - step * t
            _project_simplex(tmp, wn, buf, m)
            fn = _objective(gram, r, wn, m)
            tn = 0.5 * (1.0 + sqrt(1.0 + 4.0 * tk * tk))
            if fn > fw:
                for i in range(m):
                    t = -r[i]
                    for j in range(m):
                        t += gram[i, j] * w[j]
                    tmp[i] = w[i] - step * t
                _project_simplex(tmp, wn, buf, m)
                fn = _objective(gram, r, wn, m)
                for i in range(m):
                    y[i] = wn[i]
                    w[i] = wn[i]
                tn = 1.0
            else:
                mom = (tk - 1.0) / tn
                for i in range(m):
                    y[i] = wn[i] + mom * (wn[i] - w[i])
                    w[i] = wn[i]
            tk = tn
            fw = fn
            it += 1
        for i in range(m):
            W[a, i] = w[i]
        G[a] = gp
        I[a] = it
    nearest = weights @ np.asarray(points)
    return nearest, weights, gaps, iters


def volterra_exp_integral(const double[::1] m, const double[::1] rho, double h):
    cdef Py_ssize_t n = m.shape[0], k
    out = np.zeros(n)
    cdef double[::1] o = out
    cdef double acc = 0.0, e
    for k in range(1, n):
        e = exp(m[k] - m[k - 1])
        acc = e * (acc + 0.5 * h * rho[k - 1]) + 0.5 * h * rho[k]
        o[k] = acc
    return out
