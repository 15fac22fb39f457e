"""Linear integral operators of Volterra and Fredholm type on grid functions.

The operator is assembled once into a dense matrix that already contains the
trapezoid weights, so ``apply`` is a single matrix-vector product.  The
adjoint is taken with respect to the same quadrature inner product, which
makes the discrete duality identity exact up to rounding.
"""
import math

import numpy as np

from .errors import InputError
from .gridfn import GridFunction, check_p, cumulative_integral, lp_norm


def _conjugate(p):
    if p == 1:
        return math.inf
    if math.isinf(p):
        return 1.0
    return p / (p - 1.0)


class KernelOperator:
    """(Au)(t) = integral of K(t, s) u(s) ds over [t0, t] or the whole domain.

    Parameters
    ----------
    kind : 'volterra' or 'fredholm'
    kernel : callable or array
        ``K(t, s)`` evaluated on broadcast arrays: for intervals ``t`` has
        shape (N, 1) and ``s`` shape (1, N); for boxes the trailing axis holds
        the coordinates, ``t`` (N, 1, m) and ``s`` (1, N, m).  It returns
        an (N, N) array (scalar kernel, acting as K times the identity) or
        an (N, N, n, n) array.  A precomputed array of either shape is also
        accepted.
    grid : Grid
    codim : int
        Dimension n of the values u(t).
    L : float, optional
        Declared constant.  Defaults to the sampled kernel bound.
    opnorm : float, optional
        Declared analytic value of the operator norm; the larger of this and
        the discrete estimate is used.
    """

    def __init__(self, kind, kernel, grid, codim=1, L=None, opnorm=None, name=None):
        if kind not in ("volterra", "fredholm"):
            raise InputError(f"unknown operator kind {kind!r}")
        if kind == "volterra" and grid.kind != "interval":
            raise InputError("Volterra operators need an interval grid")
        self.kind = kind
        self.grid = grid
        self.codim = int(codim)
        self.name = name
        self.declared_opnorm = None if opnorm is None else float(opnorm)
        self._K = self._evaluate_kernel(kernel)
        self._Kabs = self._block_norms(self._K)
        self.kernel_sup = float(self._masked_abs().max())
        self.L = self.kernel_sup if L is None else float(L)
        self._mat = self._assemble()

    # construction -----------------------------------------------------
    def _evaluate_kernel(self, kernel):
        g = self.grid
        N = g.size
        if callable(kernel):
            if g.kind == "interval":
                t = g.t[:, None]
                s = g.t[None, :]
            else:
                t = g.coords[:, None, :]
                s = g.coords[None, :, :]
            K = np.asarray(kernel(t, s), dtype=float)
        else:
            K = np.asarray(kernel, dtype=float)
        if K.ndim == 0:
            K = np.full((N, N), float(K))
        if K.shape[:2] != (N, N) or K.ndim not in (2, 4):
            K = np.broadcast_to(K, (N, N) + K.shape[2:]).copy()
        if K.ndim == 4 and K.shape[2:] != (self.codim, self.codim):
            raise InputError(f"matrix kernel blocks must be {self.codim}x{self.codim}")
        if not np.all(np.isfinite(K)):
            raise InputError("kernel values must be finite")
        return K

    @staticmethod
    def _block_norms(K):
        if K.ndim == 2:
            return np.abs(K)
        return np.linalg.norm(K, ord=2, axis=(2, 3))

    def _masked_abs(self):
        if self.kind == "volterra":
            return np.tril(self._Kabs)
        return self._Kabs

    def _quad_weights(self):
        """(N, N) weights w_kj multiplying K(t_k, s_j) u(s_j)."""
        g = self.grid
        N = g.size
        if self.kind == "fredholm":
            return np.broadcast_to(g.weights, (N, N)).copy()
        h = g.h[0]
        W = np.tril(np.full((N, N), h))
        W[:, 0] = h / 2
        W[np.arange(N), np.arange(N)] = h / 2
        W[0, 0] = 0.0
        return W

    def _assemble(self):
        W = self._quad_weights()
        n = self.codim
        N = self.grid.size
        if self._K.ndim == 2:
            KW = self._K * W
            if n == 1:
                return KW
            return np.kron(KW, np.eye(n))
        blocks = self._K * W[:, :, None, None]
        return blocks.transpose(0, 2, 1, 3).reshape(N * n, N * n)

    # constants --------------------------------------------------------
    @property
    def matrix(self):
        """Dense matrix acting on the row-major flattened node values."""
        return self._mat

    def opnorm_estimate(self, p):
        """Discrete L_p -> C norm: max over t_k of the weighted L_q norm of K(t_k, .).

        For scalar kernels this is the exact norm of the discretized map from
        the quadrature L_p space to node-wise maxima (Hoelder with weights).
        """
        p = check_p(p)
        q = _conjugate(p)
        Kabs = self._masked_abs()
        W = self._quad_weights()
        if math.isinf(q):
            rows = np.where(W > 0, Kabs, 0.0).max(axis=1)
        elif q == 1:
            rows = (W * Kabs).sum(axis=1)
        else:
            rows = (W * Kabs ** q).sum(axis=1) ** (1.0 / q)
        return float(rows.max())

    def opnorm(self, p):
        """Norm used in the bounds: max(declared value, discrete estimate)."""
        est = self.opnorm_estimate(p)
        if self.declared_opnorm is None:
            return est
        return max(est, self.declared_opnorm)

    def check_grid(self, f):
        if not self.grid.same_as(f.grid) or f.codim != self.codim:
            raise InputError("grid function does not match the operator's grid/codim")

    def __repr__(self):
        return f"KernelOperator({self.kind}, codim={self.codim}, L={self.L:g}, {self.grid!r})"


def apply(A, u):
    """(Au)(t_k) by kernel quadrature."""
    A.check_grid(u)
    return GridFunction(A.grid, (A.matrix @ u.values.ravel()).reshape(-1, A.codim))


def apply_values(A, values):
    """``apply`` on a raw (N, n) array, skipping validation (solver inner loops)."""
    return (A.matrix @ values.ravel()).reshape(-1, A.codim)


def adjoint_values(A, values):
    w = A.grid.weights
    n = A.codim
    weighted = (values * w[:, None]).ravel()
    return (A.matrix.T @ weighted).reshape(-1, n) / w[:, None]


def _adjoint_quadrature(A, values):
    """(A* w)(s_j) = int K(t, s_j)^T w(t) dt by trapezoid over t (t >= s_j for Volterra)."""
    g = A.grid
    N = g.size
    if A.kind == "fredholm":
        V = np.broadcast_to(g.weights, (N, N))
    else:
        V = A._quad_weights()[::-1, ::-1]
    if A._K.ndim == 2:
        return (V * A._K.T) @ values
    return np.einsum("jk,kjab,ka->jb", V, A._K, values)


def adjoint_apply(A, w, mode="discrete"):
    """Adjoint of ``A`` applied to ``w``.

    ``mode='discrete'`` (default) is the exact adjoint for the quadrature
    inner product: sum_k w_k <(Au)_k, v_k> = sum_k w_k <u_k, (A* v)_k>.
    ``mode='quadrature'`` samples the continuous adjoint
    s -> int K(t, s)^T w(t) dt with the trapezoid rule.  The two differ by
    O(h) at the end nodes, where the trapezoid weights are halved.
    """
    A.check_grid(w)
    if mode == "discrete":
        return GridFunction(A.grid, adjoint_values(A, w.values))
    if mode == "quadrature":
        return GridFunction(A.grid, _adjoint_quadrature(A, w.values))
    raise InputError("mode must be 'discrete' or 'quadrature'")


def volterra_constant_check(A, samples=20, rng=None, atol=1e-10):
    """Test |(Au)(t_k)| <= L * int_{t0}^{t_k} |u| on ``samples`` functions.

    The first sample is u = 1 in every component; the rest are Gaussian.
    Returns a dict with ``holds`` and ``worst_ratio`` (max of |Au| over the
    right side at nodes where the right side is positive).
    """
    if A.kind != "volterra":
        raise InputError("volterra_constant_check needs a Volterra operator")
    rng = np.random.default_rng(rng)
    g = A.grid
    holds = True
    worst = 0.0
    for i in range(max(1, int(samples))):
        if i == 0:
            vals = np.ones((g.size, A.codim))
        else:
            vals = rng.standard_normal((g.size, A.codim))
        u = GridFunction(g, vals)
        lhs = apply(A, u).norms()
        rhs = A.L * cumulative_integral(GridFunction(g, u.norms())).values[:, 0]
        if np.any(lhs > rhs + atol):
            holds = False
        pos = rhs > 0
        if pos.any():
            worst = max(worst, float((lhs[pos] / rhs[pos]).max()))
    return {"holds": holds, "worst_ratio": worst}


def fredholm_contraction_factor(A, M, p):
    """||A|| * ||M||_p, the quantity that must stay below 1."""
    p = check_p(p)
    return A.opnorm(p) * lp_norm(M, p)
