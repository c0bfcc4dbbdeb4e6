"""Hypothesis checks on sublevel domains and verification of computed solutions.

Checks sample deterministically; a failed check carries a witness, a passed
one is evidence at the stated density, not a proof.  Boundary points of
``{F = c}`` are located along rays from the interior grid point of least F,
which restricts the boundary search to star-shaped sublevel sets.
"""

import itertools
import math
from dataclasses import dataclass, field as dc_field

import numpy as np

from . import kernels
from .errors import DegenerateBoundaryError
from .exprdsl import as_expr, compile_expr, evaluate, gradient, hessian
from .inclusion import filippov_set, hull_distance

PSD_TOL = -1e-10
INFLOW_TOL = 1e-12
GRAD_TOL = 1e-10
CONTAIN_TOL = 1e-9

D2_NOTE = ("d2 (the closed sublevel set is homeomorphic to a ball) is assumed, not checked; "
           "a retraction of the closed domain onto its boundary-free part would serve equally")


class SublevelSet:
    """``D_c = {F < c}`` with a sampling box and grid resolution.

    Parameters
    ----------
    F : expression in ``x1..xm`` (``x``/``psi`` accepted for m = 1)
    c : float
    box : sequence of ``(lo, hi)`` per coordinate
    grid : int
        Points per axis for grid sampling.
    """

    def __init__(self, F, c, box, grid=41):
        box = np.asarray(box, dtype=float).reshape(-1, 2)
        self.dim = m = box.shape[0]
        aliases = {"x": "x1", "psi": "x1"} if m == 1 else {}
        self.F = as_expr(F).rename(aliases)
        self.names = [f"x{i + 1}" for i in range(m)]
        extra = self.F.free_vars - set(self.names)
        if extra:
            raise ValueError(f"F may depend on {self.names} only, got {sorted(extra)}")
        self.c = float(c)
        self.box = box
        self.grid = int(grid)
        self._prog = compile_expr(self.F, {n: i for i, n in enumerate(self.names)})

    def __repr__(self):
        return f"SublevelSet(F={self.F.source!r}, c={self.c!r}, box={self.box.tolist()!r})"

    def value(self, x):
        return kernels.eval_program(self._prog, np.atleast_1d(np.asarray(x, dtype=float)))

    def values(self, X):
        return kernels.eval_batch(self._prog, np.atleast_2d(X))

    def grad(self, x):
        return gradient(self.F, self.names, dict(zip(self.names, np.atleast_1d(x).tolist())))

    def hess(self, x):
        return hessian(self.F, self.names, dict(zip(self.names, np.atleast_1d(x).tolist())))

    def contains(self, x, tol=0.0):
        return self.value(x) <= self.c + tol

    def stop_expr(self):
        """``c - F(x)``: negative once the state leaves the closed domain."""
        return as_expr(f"{self.c!r} - ({self.F.source})")

    def grid_points(self, n=None):
        n = self.grid if n is None else n
        axes = [np.linspace(lo, hi, n) for lo, hi in self.box]
        return np.array(list(itertools.product(*axes)))

    def closure_bbox(self, n=None):
        """Bounding box of the sampled ``{F <= c}``, widened by one grid spacing."""
        n = self.grid if n is None else n
        P = self.grid_points(n)
        inside = P[self.values(P) <= self.c]
        if inside.size == 0:
            return None
        step = (self.box[:, 1] - self.box[:, 0]) / (n - 1)
        lo = np.maximum(inside.min(axis=0) - step, self.box[:, 0])
        hi = np.minimum(inside.max(axis=0) + step, self.box[:, 1])
        return np.column_stack([lo, hi])


@dataclass
class CheckReport:
    check: str
    passed: bool
    witness: dict = None
    samples: int = 0
    tolerance: float = 0.0
    assumed: list = dc_field(default_factory=list)
    details: dict = dc_field(default_factory=dict)

    def __bool__(self):
        return self.passed

    def to_json(self):
        out = {"check": self.check, "pass": self.passed, "witness": self.witness,
               "assumed": list(self.assumed), "samples": self.samples,
               "tolerance": self.tolerance}
        out.update(self.details)
        return out


def _pt(x):
    return [float(v) for v in np.atleast_1d(x)]


def check_sublevel_domain(D, margin=0.0):
    """Compactness proxy: ``{F <= c}`` is non-empty and every box-face sample
    has ``F >= c + margin`` (strictly above ``c`` when ``margin = 0``)."""
    P = D.grid_points()
    vals = D.values(P)
    on_face = np.any((P == D.box[:, 0]) | (P == D.box[:, 1]), axis=1)
    F_face = vals[on_face]
    i = int(np.argmin(F_face))
    worst = P[on_face][i]
    n_inside = int(np.sum(vals <= D.c))
    face_ok = F_face[i] > D.c + margin if margin == 0.0 else F_face[i] >= D.c + margin
    ok = bool(face_ok and n_inside > 0)
    if n_inside == 0:
        witness = {"reason": "empty sublevel set", "point": _pt(P[int(np.argmin(vals))]),
                   "value": float(vals.min())}
    else:
        witness = {"reason": "sublevel set reaches the box face" if not face_ok else
                   "closest face sample", "point": _pt(worst), "value": float(F_face[i])}
    return CheckReport("d1", ok, witness, samples=int(P.shape[0]), tolerance=margin,
                       assumed=["d2"], details={"note": D2_NOTE, "inside_samples": n_inside})


def _directions(m, n):
    if m == 1:
        return np.array([[-1.0], [1.0]])
    if m == 2:
        th = np.arange(n) * (2 * math.pi / n)
        return np.column_stack([np.cos(th), np.sin(th)])
    # quasi-uniform points on the sphere
    i = np.arange(n) + 0.5
    phi = np.arccos(1 - 2 * i / n)
    th = math.pi * (1 + 5 ** 0.5) * i
    d = np.column_stack([np.cos(th) * np.sin(phi), np.sin(th) * np.sin(phi), np.cos(phi)])
    if m == 3:
        return d
    raise ValueError("boundary search supports m <= 3")


def boundary_points(D, n_rays=64, scan=64):
    """Points of ``{F = c}`` found by bisection along rays from the interior
    grid point of least F.  Rays that stay below ``c`` inside the box are
    skipped; the returned ``centre`` is the ray origin."""
    P = D.grid_points()
    vals = D.values(P)
    centre = P[int(np.argmin(vals))]
    out = []
    for d in _directions(D.dim, n_rays):
        # largest s with centre + s d inside the box
        with np.errstate(divide="ignore", invalid="ignore"):
            lim = np.where(d > 0, (D.box[:, 1] - centre) / d,
                           np.where(d < 0, (D.box[:, 0] - centre) / d, np.inf))
        smax = float(np.min(lim))
        if not np.isfinite(smax) or smax <= 0:
            continue
        s = np.linspace(0.0, smax, scan + 1)
        g = D.values(centre + s[:, None] * d) - D.c
        cross = np.flatnonzero((g[:-1] < 0) & (g[1:] >= 0))
        if cross.size == 0:
            continue
        lo, hi = s[cross[0]], s[cross[0] + 1]
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if mid == lo or mid == hi:
                break
            if D.value(centre + mid * d) < D.c:
                lo = mid
            else:
                hi = mid
        out.append(centre + 0.5 * (lo + hi) * d)
    return np.array(out).reshape(-1, D.dim)


def _require_gradient(D, x):
    g = D.grad(x)
    gn = float(np.linalg.norm(g))
    if gn < GRAD_TOL:
        raise DegenerateBoundaryError(_pt(x), gn)
    return g


def check_boundary_hessian(D, n_samples=64):
    """Positive semidefiniteness of the Hessian of F on the boundary.

    Smallest eigenvalue (symmetric eigensolver) must be at least ``-1e-10``.

    Raises
    ------
    DegenerateBoundaryError
        When ``|dF| < 1e-10`` at a boundary sample.
    """
    B = boundary_points(D, n_samples)
    if B.shape[0] == 0:
        return CheckReport("boundary_hessian", False,
                           {"reason": "no boundary point found inside the box"},
                           samples=0, tolerance=PSD_TOL)
    worst, worst_val = None, math.inf
    for x in B:
        _require_gradient(D, x)
        lam = float(np.linalg.eigvalsh(D.hess(x)).min())
        if lam < worst_val:
            worst, worst_val = x, lam
    ok = worst_val >= PSD_TOL
    return CheckReport("boundary_hessian", ok,
                       {"point": _pt(worst), "value": worst_val},
                       samples=int(B.shape[0]), tolerance=PSD_TOL)


def _y_samples(field, pattern, y_grid):
    """Velocities in the region of ``pattern`` on which to minimise the inflow."""
    ynames = set(field.names[1 + field.dim:])
    progs_y = any(e.free_vars & ynames for e in field.pieces[pattern])
    if not progs_y or y_grid is None:
        return field.representative_velocity(pattern)[None, :]
    g = np.asarray(y_grid, dtype=float)
    Y = np.array(list(itertools.product(g, repeat=field.dim)))
    if not field.surfaces:
        return Y
    S = np.array([field.sigma(y) for y in Y])
    want = np.array([1.0 if c == "+" else -1.0 for c in pattern])
    keep = np.all(S * want > field.surface_tol, axis=1)
    return Y[keep] if np.any(keep) else field.representative_velocity(pattern)[None, :]


def check_inflow(field, D, t_window=(0.0, 2 * math.pi), n_samples=256, n_rays=64,
                 y_grid=np.linspace(-5.0, 5.0, 21), variant=False, half_period=0.0):
    """Boundary inflow ``dF(x)[f(t, x, y)] > 0`` on sampled boundary triples.

    Times are the midpoints of ``n_samples`` equal cells of ``t_window``; every
    piece is evaluated at each boundary point, minimising over sampled
    velocities in the piece's region when the piece depends on y.  With
    ``variant=True`` the quantity ``|dF|^2 + dF[f]`` is tested instead.
    """
    B = boundary_points(D, n_rays)
    if B.shape[0] == 0:
        return CheckReport("inflow", False, {"reason": "no boundary point found inside the box"},
                           samples=0, tolerance=INFLOW_TOL)
    a, b = map(float, t_window)
    ts = a + (np.arange(n_samples) + 0.5) * ((b - a) / n_samples)
    if half_period > 0:
        tw = np.array([kernels.wrap_time(t, half_period) for t in ts])
    else:
        tw = ts
    best = (math.inf, None)
    count = 0
    for x in B:
        g = _require_gradient(D, x)
        g2 = float(g @ g)
        for pat in field.pieces:
            for y in _y_samples(field, pat, y_grid):
                envs = np.column_stack([tw, np.tile(x, (ts.size, 1)), np.tile(y, (ts.size, 1))])
                F = field.eval_piece_batch(pat, envs)
                vals = F @ g + (g2 if variant else 0.0)
                i = int(np.argmin(vals))
                count += ts.size
                if vals[i] < best[0]:
                    best = (float(vals[i]), {"t": float(ts[i]), "x": _pt(x), "y": _pt(y),
                                             "piece": pat})
    value, where = best
    ok = value > INFLOW_TOL
    witness = dict(where)
    witness["value"] = value
    return CheckReport("inflow_gradient_variant" if variant else "inflow", ok, witness,
                       samples=count, tolerance=INFLOW_TOL, details={"min_value": value})


def inclusion_residual(traj, field, x_radius=0.0, half_period=None):
    """Largest distance from a sample's acceleration to the Filippov set there.

    Returns ``{"max_residual": r, "worst_t": t}``.
    """
    if half_period is None:
        half_period = float(traj.meta.get("half_period", 0.0) or 0.0)
    worst, worst_t = 0.0, float(traj.t[0]) if len(traj) else math.nan
    for i in range(len(traj)):
        t = float(traj.t[i])
        tw = kernels.wrap_time(t, half_period) if half_period > 0 else t
        fs = filippov_set(field, tw, traj.x[i], traj.v[i], x_radius)
        d = hull_distance(fs, traj.a[i])
        if d > worst:
            worst, worst_t = d, t
    return {"max_residual": float(worst), "worst_t": worst_t}


def boundedness_report(traj, D):
    """Sup of F along the samples, containment in the closed domain, top speed."""
    F = D.values(traj.x)
    sup_F = float(F.max())
    return {"sup_F": sup_F, "contained": bool(sup_F <= D.c + CONTAIN_TOL),
            "sup_speed": float(np.linalg.norm(traj.v, axis=1).max())}
