"""Vector-valued functions sampled on uniform grids over intervals and boxes.

Integrals use the composite trapezoid rule (tensor product on boxes).  The
exponent ``p = inf`` is a sentinel meaning the maximum node magnitude.
"""
import csv
import io
import math
import os

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from .errors import InputError


class Grid:
    """Uniform grid on an interval (``kind='interval'``) or a box.

    Nodes are ordered row-major (last axis fastest) for boxes.
    """

    def __init__(self, lower, upper, nodes, kind=None):
        lo = np.atleast_1d(np.asarray(lower, dtype=float))
        hi = np.atleast_1d(np.asarray(upper, dtype=float))
        nn = np.atleast_1d(np.asarray(nodes)).astype(int)
        if not (lo.shape == hi.shape == nn.shape):
            raise InputError("lower, upper and nodes must have one entry per axis")
        if np.any(nn < 2):
            raise InputError("every axis needs at least 2 nodes")
        if np.any(hi <= lo):
            raise InputError("upper bound must exceed lower bound on every axis")
        if kind is None:
            kind = "interval" if lo.size == 1 else "box"
        if kind not in ("interval", "box"):
            raise InputError(f"unknown grid kind {kind!r}")
        if kind == "interval" and lo.size != 1:
            raise InputError("interval grids have exactly one axis")
        self.kind = kind
        self.lower = lo
        self.upper = hi
        self.nodes = tuple(int(v) for v in nn)
        self.h = (hi - lo) / (nn - 1)
        self.axes = [np.linspace(lo[i], hi[i], nn[i]) for i in range(lo.size)]
        self._weights = None
        self._coords = None

    @classmethod
    def interval(cls, t0, T, n):
        return cls([t0], [T], [n], "interval")

    @property
    def ndim(self):
        return len(self.nodes)

    @property
    def size(self):
        return int(np.prod(self.nodes))

    @property
    def t(self):
        """Node coordinates of an interval grid."""
        if self.kind != "interval":
            raise InputError("t is only defined for interval grids")
        return self.axes[0]

    @property
    def coords(self):
        """Node coordinates, shape (size, ndim)."""
        if self._coords is None:
            mesh = np.meshgrid(*self.axes, indexing="ij")
            self._coords = np.column_stack([m.ravel() for m in mesh])
        return self._coords

    def node(self, k):
        """Coordinate passed to evaluators: a float on intervals, a vector on boxes."""
        c = self.coords[k]
        return float(c[0]) if self.kind == "interval" else c

    @property
    def weights(self):
        """Composite trapezoid weights, one per node."""
        if self._weights is None:
            w = np.ones(1)
            for h, n in zip(self.h, self.nodes):
                wa = np.full(n, h)
                wa[0] = wa[-1] = h / 2
                w = np.multiply.outer(w, wa).ravel()
            self._weights = w
        return self._weights

    @property
    def measure(self):
        return float(np.prod(self.upper - self.lower))

    @property
    def hmax(self):
        return float(self.h.max())

    def same_as(self, other):
        return (self.kind == other.kind and self.nodes == other.nodes
                and np.array_equal(self.lower, other.lower)
                and np.array_equal(self.upper, other.upper))

    def refine(self):
        """Grid with spacing halved on every axis."""
        return Grid(self.lower, self.upper, [2 * n - 1 for n in self.nodes], self.kind)

    def to_record(self):
        return {"kind": self.kind, "lower": self.lower.tolist(),
                "upper": self.upper.tolist(), "nodes": list(self.nodes)}

    def __repr__(self):
        return f"Grid({self.kind}, {self.lower.tolist()}..{self.upper.tolist()}, nodes={self.nodes})"


def check_p(p):
    if isinstance(p, str):
        if p.lower() in ("inf", "infinity"):
            return math.inf
        raise InputError(f"invalid exponent {p!r}")
    p = float(p)
    if math.isnan(p) or p < 1:
        raise InputError(f"exponent p must be >= 1 or inf, got {p}")
    return p


class GridFunction:
    """Values of an R^n-valued function at every node of ``grid``."""

    def __init__(self, grid, values):
        v = np.array(values, dtype=float)
        if v.ndim == 1:
            v = v.reshape(-1, 1)
        if v.ndim != 2 or v.shape[0] != grid.size:
            raise InputError(f"expected {grid.size} node values, got shape {np.shape(values)}")
        if not np.all(np.isfinite(v)):
            raise InputError("grid function values must be finite")
        v.setflags(write=False)
        self.grid = grid
        self.values = v

    @property
    def codim(self):
        return self.values.shape[1]

    @classmethod
    def constant(cls, grid, value):
        val = np.atleast_1d(np.asarray(value, dtype=float))
        return cls(grid, np.tile(val, (grid.size, 1)))

    @classmethod
    def from_callable(cls, grid, fn):
        """Sample ``fn`` at every node; ``fn`` gets the node coordinate."""
        vals = [np.atleast_1d(np.asarray(fn(grid.node(k)), dtype=float)) for k in range(grid.size)]
        return cls(grid, np.vstack(vals))

    def norms(self):
        """Euclidean magnitude |f(t_k)| at every node."""
        return np.sqrt((self.values ** 2).sum(axis=1))

    def _check_grid(self, other):
        if not self.grid.same_as(other.grid):
            raise InputError("grid functions live on different grids")

    def __add__(self, other):
        self._check_grid(other)
        return GridFunction(self.grid, self.values + other.values)

    def __sub__(self, other):
        self._check_grid(other)
        return GridFunction(self.grid, self.values - other.values)

    def __mul__(self, a):
        return GridFunction(self.grid, self.values * float(a))

    __rmul__ = __mul__

    def __neg__(self):
        return GridFunction(self.grid, -self.values)

    def __repr__(self):
        return f"GridFunction(codim={self.codim}, {self.grid!r})"


def integrate(f):
    """Trapezoid integral of each component; returns an array of length codim."""
    return f.grid.weights @ f.values


def lp_norm(f, p):
    """L_p norm of |f(t)| (Euclidean magnitude) by trapezoid quadrature."""
    p = check_p(p)
    mag = f.norms()
    if math.isinf(p):
        return float(mag.max())
    if p == 1:
        return float(f.grid.weights @ mag)
    return float((f.grid.weights @ mag ** p) ** (1.0 / p))


def inner(f, g):
    """Quadrature inner product sum_k w_k <f_k, g_k>."""
    f._check_grid(g)
    return float(f.grid.weights @ (f.values * g.values).sum(axis=1))


def cumulative_integral(f):
    """Trapezoid integral from t0 to every node of an interval grid."""
    if f.grid.kind != "interval":
        raise InputError("cumulative_integral is only supported on interval grids")
    h = f.grid.h[0]
    inc = 0.5 * h * (f.values[1:] + f.values[:-1])
    out = np.vstack([np.zeros((1, f.codim)), np.cumsum(inc, axis=0)])
    return GridFunction(f.grid, out)


def interpolate(f, points):
    """Piecewise-linear values of ``f`` at arbitrary coordinates inside the domain.

    ``points`` is a scalar or 1-D array for intervals, an (m, ndim) array for
    boxes.  Returns an array of shape (m, codim).
    """
    g = f.grid
    if g.kind == "interval":
        t = np.atleast_1d(np.asarray(points, dtype=float)).ravel()
        return np.column_stack([np.interp(t, g.t, f.values[:, j]) for j in range(f.codim)])
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    vals = f.values.reshape(*g.nodes, f.codim)
    return RegularGridInterpolator(g.axes, vals)(pts)


def resample(f, grid):
    """Transfer ``f`` to another grid over the same domain by interpolation."""
    return GridFunction(grid, interpolate(f, grid.t if grid.kind == "interval" else grid.coords))


def defect(u, x, F):
    """Node values d(u(t_k), F(t_k, x(t_k))), the residual rho."""
    u._check_grid(x)
    dist, _ = F.project_nodes(u.grid, x.values, u.values)
    return GridFunction(u.grid, dist)


def to_csv(f, path_or_buffer=None, header=None):
    """Write one row per node: coordinates then value components.

    Floats are written with ``repr`` so a round trip is exact.
    Returns the CSV text when no destination is given.
    """
    g = f.grid
    if header is None:
        axes = ["t"] if g.kind == "interval" else [f"t{i}" for i in range(g.ndim)]
        header = axes + [f"v{j}" for j in range(f.codim)]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for c, v in zip(g.coords, f.values):
        w.writerow([repr(float(a)) for a in c] + [repr(float(b)) for b in v])
    text = buf.getvalue()
    if path_or_buffer is None:
        return text
    if hasattr(path_or_buffer, "write"):
        path_or_buffer.write(text)
    else:
        with open(path_or_buffer, "w", newline="") as fh:
            fh.write(text)
    return text


def from_csv(path_or_text, grid):
    """Read values written by :func:`to_csv` back onto ``grid``.

    Coordinates in the file must match the grid nodes to 1e-12.
    """
    if isinstance(path_or_text, os.PathLike) or (isinstance(path_or_text, str)
                                                  and "\n" not in path_or_text):
        with open(path_or_text, newline="") as fh:
            text = fh.read()
    else:
        text = path_or_text
    rows = list(csv.reader(io.StringIO(text)))
    data = np.array([[float(x) for x in r] for r in rows[1:]])
    if data.shape[0] != grid.size:
        raise InputError(f"CSV has {data.shape[0]} rows, grid has {grid.size} nodes")
    coords, vals = data[:, :grid.ndim], data[:, grid.ndim:]
    if np.abs(coords - grid.coords).max() > 1e-12:
        raise InputError("CSV coordinates do not match the grid")
    return GridFunction(grid, vals)
