"""Compact subsets of R^n stored as finite point clouds.

A ``CompactSet`` is either the cloud itself or, with ``convex_hint=True``,
the convex hull of the listed points.  Distances to hulls are computed by
projecting onto the hull (accelerated projected gradient on the simplex of
convex-combination weights, certified by the Frank-Wolfe duality gap).
"""
from dataclasses import dataclass
import json

import numpy as np

from ._backend import kernels
from .errors import InputError

HULL_TOL = 1e-12
HULL_MAX_ITER = 10_000


class CompactSet:
    """Nonempty compact set given by points; immutable after construction.

    Parameters
    ----------
    points : array_like, shape (m, n) or (m,) for n = 1
    convex_hint : bool
        If True the set is conv(points).
    """

    __slots__ = ("points", "convex_hint", "_lip")

    def __init__(self, points, convex_hint=False):
        pts = np.array(points, dtype=float)
        if pts.ndim == 0:
            pts = pts.reshape(1, 1)
        elif pts.ndim == 1:
            pts = pts.reshape(-1, 1)
        if pts.ndim != 2 or pts.shape[0] < 1 or pts.shape[1] < 1:
            raise InputError("a compact set needs at least one point of positive dimension")
        if not np.all(np.isfinite(pts)):
            raise InputError("set points must be finite")
        pts.setflags(write=False)
        object.__setattr__(self, "points", np.ascontiguousarray(pts))
        object.__setattr__(self, "convex_hint", bool(convex_hint))
        object.__setattr__(self, "_lip", None)

    def __setattr__(self, name, value):
        raise AttributeError("CompactSet is immutable")

    @property
    def dim(self):
        return self.points.shape[1]

    def __len__(self):
        return self.points.shape[0]

    def __repr__(self):
        kind = "hull" if self.convex_hint else "cloud"
        return f"CompactSet({kind}, dim={self.dim}, points={len(self)})"

    def hull_lipschitz(self):
        """Largest eigenvalue of the centred Gram matrix (gradient step size)."""
        if self._lip is None:
            pc = self.points - self.points.mean(axis=0)
            lip = float(np.linalg.eigvalsh(pc @ pc.T)[-1]) if len(self) > 1 else 0.0
            object.__setattr__(self, "_lip", lip)
        return self._lip

    def to_record(self):
        return {"dim": self.dim, "convex_hint": self.convex_hint,
                "points": self.points.tolist()}

    @classmethod
    def from_record(cls, rec):
        if isinstance(rec, str):
            rec = json.loads(rec)
        s = cls(rec["points"], rec.get("convex_hint", False))
        if "dim" in rec and int(rec["dim"]) != s.dim:
            raise InputError(f"record dim {rec['dim']} disagrees with point length {s.dim}")
        return s


@dataclass(frozen=True)
class SetDistanceResult:
    distance: float
    nearest: np.ndarray
    index: int


def _as_queries(y, dim):
    q = np.array(y, dtype=float)
    if q.ndim == 0:
        q = q.reshape(1, 1)
    elif q.ndim == 1:
        q = q.reshape(1, -1) if dim != 1 or q.shape[0] == 1 else q.reshape(-1, 1)
    if q.shape[-1] != dim:
        raise InputError(f"dimension mismatch: query has {q.shape[-1]} components, set has {dim}")
    return np.ascontiguousarray(q)


def _hull_tol(A, queries):
    scale = max(1.0, float(np.ptp(A.points, axis=0).max()) ** 2,
                float(np.abs(queries).max()) ** 2 if queries.size else 1.0)
    return HULL_TOL * scale


def project_batch(queries, A):
    """Distances, nearest points and indices for many queries at once.

    Returns ``(dist, nearest, index)``.  For hulls ``index`` is the vertex
    carrying the largest weight (lowest index on ties).
    """
    Y = _as_queries(queries, A.dim)
    if not A.convex_hint or len(A) == 1:
        d, idx = kernels.nearest_point(A.points, Y)
        return d, A.points[idx], idx
    if A.dim == 1:
        # a one-dimensional hull is an interval: clipping is exact
        col = A.points[:, 0]
        ilo, ihi = int(np.argmin(col)), int(np.argmax(col))
        near = np.clip(Y, col[ilo], col[ihi])
        d = np.abs(Y - near)[:, 0]
        closer_hi = (col[ihi] - near[:, 0]) < (near[:, 0] - col[ilo])
        tie = (col[ihi] - near[:, 0]) == (near[:, 0] - col[ilo])
        idx = np.where(closer_hi, ihi, ilo)
        idx = np.where(tie, min(ilo, ihi), idx)
        return d, near, idx
    near, w, _, _ = kernels.hull_project(A.points, Y, A.hull_lipschitz(),
                                         _hull_tol(A, Y), HULL_MAX_ITER)
    near = np.asarray(near)
    d = np.sqrt(((Y - near) ** 2).sum(axis=1))
    return d, near, np.argmax(np.asarray(w), axis=1)


def dist_to_set(y, A):
    """Distance from the vector ``y`` to ``A`` with a minimizing point."""
    yv = np.atleast_1d(np.asarray(y, dtype=float))
    if yv.ndim != 1 or yv.shape[0] != A.dim:
        raise InputError(f"dimension mismatch: query has {yv.size} components, set has {A.dim}")
    d, near, idx = project_batch(yv.reshape(1, -1), A)
    return SetDistanceResult(float(d[0]), np.array(near[0]), int(idx[0]))


def dist_batch(queries, A):
    """Only the distances of :func:`project_batch`."""
    return project_batch(queries, A)[0]


def _excess(A, B):
    """sup over a in A of d(a, B).

    Only the listed points of A are visited.  This is exact when A is a
    point cloud, and also when B is convex because d(., B) is then convex
    and attains its supremum over hull(A) at a vertex.  For a hull A paired
    with a nonconvex cloud B it is a lower bound.
    """
    if B.convex_hint and len(B) > 1:
        return float(dist_batch(A.points, B).max())
    return float(kernels.directed_excess(A.points, B.points))


def hausdorff(A, B):
    """Hausdorff distance between two represented sets."""
    if A.dim != B.dim:
        raise InputError(f"dimension mismatch: {A.dim} vs {B.dim}")
    return max(_excess(A, B), _excess(B, A))


def minkowski_shift(A, v):
    """Translate every point of ``A`` by ``v``."""
    vv = np.atleast_1d(np.asarray(v, dtype=float))
    if vv.shape != (A.dim,):
        raise InputError(f"dimension mismatch: shift has {vv.size} components, set has {A.dim}")
    return CompactSet(A.points + vv, A.convex_hint)


def sampled_ball(center, radius, vertices=16):
    """Polytope with ``vertices`` points on the sphere of radius ``radius``.

    In one dimension this is the segment [c - r, c + r]; in two dimensions a
    regular polygon; in higher dimensions a deterministic spherical
    Fibonacci-type spread.
    """
    c = np.atleast_1d(np.asarray(center, dtype=float))
    n = c.size
    if n == 1:
        pts = np.array([[-radius], [radius]])
    elif n == 2:
        ang = 2 * np.pi * np.arange(vertices) / vertices
        pts = radius * np.column_stack([np.cos(ang), np.sin(ang)])
    else:
        rng = np.random.default_rng(12345)
        g = rng.standard_normal((vertices, n))
        pts = radius * g / np.linalg.norm(g, axis=1, keepdims=True)
    return CompactSet(pts + c, convex_hint=True)
