"""Set-valued (Filippov) right-hand sides and convex-hull queries.

For a piecewise-smooth field the essential convex hull at a velocity ``y`` is
the hull of the one-sided limits of the pieces adjacent to ``y``: surfaces
have measure zero, so no numerical null-set handling is needed.
"""

import itertools
import math

import numpy as np
from scipy.spatial import ConvexHull, QhullError

MNP_TOL = 1e-14
MNP_MAXIT = 1000
MEMBER_TOL = 1e-10


class FilippovSet:
    """Closed convex hull of finitely many points in R^m (vertex representation)."""

    __slots__ = ("vertices", "dim")

    def __init__(self, vertices):
        V = np.atleast_2d(np.asarray(vertices, dtype=float))
        if V.size == 0:
            raise ValueError("a Filippov set needs at least one vertex")
        if not np.all(np.isfinite(V)):
            raise ValueError("vertices must be finite")
        self.dim = V.shape[1]
        self.vertices = _prune(V)
        self.vertices.setflags(write=False)

    def __repr__(self):
        return f"FilippovSet({self.vertices.tolist()!r})"

    @property
    def is_singleton(self):
        return self.vertices.shape[0] == 1

    def interval(self):
        """``(lo, hi)`` for m = 1."""
        if self.dim != 1:
            raise ValueError("interval view only for m = 1")
        return float(self.vertices[0, 0]), float(self.vertices[-1, 0])

    def support(self, direction):
        """Support function ``h(d) = max_v <v, d>``."""
        return float(np.max(self.vertices @ np.asarray(direction, dtype=float)))

    def distance(self, point):
        return hull_distance(self, point)

    def contains(self, point, tol=MEMBER_TOL):
        return hull_distance(self, point) <= tol

    def diameter(self):
        V = self.vertices
        return float(max(np.linalg.norm(a - b) for a in V for b in V))

    def to_json(self):
        return {"dim": self.dim, "vertices": self.vertices.tolist()}


def _prune(V):
    """Drop duplicate and interior points; m = 1 keeps the two endpoints."""
    m = V.shape[1]
    if m == 1:
        lo, hi = V[:, 0].min(), V[:, 0].max()
        return np.array([[lo]]) if lo == hi else np.array([[lo], [hi]])
    U = np.unique(V, axis=0)
    if U.shape[0] <= m + 1:
        return U
    try:
        return U[ConvexHull(U).vertices]
    except (QhullError, ValueError):
        # lower-dimensional point cloud: keep everything
        return U


def limit_values(field, t, x, y):
    """Values of every piece whose closed region contains ``y``.

    One value off the surfaces; up to ``2^a`` values on ``a`` active surfaces
    (duplicates removed).
    """
    s = field.sigma(y)
    active = [j for j, v in enumerate(s) if abs(v) <= field.surface_tol]
    base = ["+" if v > 0 else "-" for v in s]
    out = []
    seen = set()
    for choice in itertools.product("+-", repeat=len(active)):
        pat = list(base)
        for j, c in zip(active, choice):
            pat[j] = c
        val = field.eval_piece("".join(pat), t, x, y)
        key = tuple(val.tolist())
        if key not in seen:
            seen.add(key)
            out.append(val)
    return out


def radius_points(x, r):
    """Deterministic sample of the ball ``B_r(x)``.

    m = 1: nine equispaced points on ``[x - r, x + r]``.  m >= 2: the centre
    plus eight points on the circle of radius r in each coordinate plane.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    m = x.size
    if r <= 0.0:
        return x[None, :]
    if m == 1:
        return x[None, :] + np.linspace(-r, r, 9)[:, None]
    pts = [x]
    ang = np.arange(8) * (math.pi / 4)
    for i, j in itertools.combinations(range(m), 2):
        for a in ang:
            p = x.copy()
            p[i] += r * math.cos(a)
            p[j] += r * math.sin(a)
            pts.append(p)
    return np.array(pts)


def filippov_set(field, t, x, y, x_radius=0.0):
    """Hull of the limit values at ``(t, x, y)``; with ``x_radius > 0`` the hull
    over the sampled ball around ``x``."""
    vals = []
    for xp in radius_points(x, float(x_radius)):
        vals.extend(limit_values(field, t, xp, y))
    return FilippovSet(np.array(vals))


def _affine_minimizer(Q):
    """Weights of the point of minimum norm on the affine hull of rows of Q."""
    k = Q.shape[0]
    A = np.zeros((k + 1, k + 1))
    A[:k, :k] = Q @ Q.T
    A[:k, k] = 1.0
    A[k, :k] = 1.0
    b = np.zeros(k + 1)
    b[k] = 1.0
    sol = np.linalg.lstsq(A, b, rcond=None)[0]
    return sol[:k]


def min_norm_point(P, tol=MNP_TOL, maxit=MNP_MAXIT):
    """Wolfe's minimum-norm-point algorithm on the hull of the rows of ``P``.

    The squared norm of the iterate never increases.  Returns the point.
    """
    P = np.asarray(P, dtype=float)
    sq = np.einsum("ij,ij->i", P, P)
    S = [int(np.argmin(sq))]
    lam = np.array([1.0])
    x = P[S[0]].copy()
    scale = max(1.0, float(sq.max()))
    fx = float(x @ x)
    for _ in range(maxit):
        j = int(np.argmin(P @ x))
        if fx - float(P[j] @ x) <= tol * scale or j in S:
            break
        S.append(j)
        lam = np.append(lam, 0.0)
        while True:
            alpha = _affine_minimizer(P[S])
            if np.all(alpha > 1e-15):
                lam = alpha
                break
            dec = lam - alpha
            mask = (alpha <= 1e-15) & (dec > 0)
            theta = float(np.min(lam[mask] / dec[mask])) if np.any(mask) else 1.0
            theta = min(max(theta, 0.0), 1.0)
            lam = theta * alpha + (1.0 - theta) * lam
            keep = lam > 1e-15
            if not np.any(keep):
                keep[int(np.argmax(lam))] = True
            S = [s for s, k in zip(S, keep) if k]
            lam = lam[keep]
            lam = lam / lam.sum()
            if len(S) == 1:
                break
        x_new = lam @ P[S]
        f_new = float(x_new @ x_new)
        if f_new > fx:
            # numerical noise in the affine solve; keep the better iterate
            break
        done = fx - f_new < tol * scale
        x, fx = x_new, f_new
        if done:
            break
    return x


def hull_distance(fset, point):
    """Euclidean distance from ``point`` to the hull; 0 for members."""
    p = np.atleast_1d(np.asarray(point, dtype=float))
    V = fset.vertices
    if fset.dim == 1:
        lo, hi = V[0, 0], V[-1, 0]
        return float(max(lo - p[0], p[0] - hi, 0.0))
    if V.shape[0] == 1:
        return float(np.linalg.norm(V[0] - p))
    return float(np.linalg.norm(min_norm_point(V - p)))


def hausdorff(a, b):
    """Symmetric Hausdorff distance between two hulls (attained at vertices)."""
    da = max(hull_distance(b, v) for v in a.vertices)
    db = max(hull_distance(a, v) for v in b.vertices)
    return float(max(da, db))
