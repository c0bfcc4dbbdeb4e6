"""Bounded solutions on long windows: periodization in time, shooting search,
windowed extension to both time directions and C1 / H2 diagnostics.

The window search is deterministic.  A report with ``found=False`` is a
legitimate outcome: the search may miss a bounded solution that exists.
"""

import dataclasses
import math
from dataclasses import dataclass, field as dc_field

import numpy as np

from . import kernels
from .errors import SolverError
from .exprdsl import Binary, Call, Const, Diff, Expr, Unary, Var
from .field import MollifierSpec, PiecewiseSmoothField, bound_constant
from .integrate import StepControl, Trajectory, integrate_filippov

GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


# ---------------------------------------------------------------------------
# periodization
# ---------------------------------------------------------------------------

def _shift_t(node, c):
    """Copy of an AST with ``t`` replaced by ``t - c``."""
    if isinstance(node, Var):
        return Binary("-", node, Const(c)) if node.name == "t" else node
    if isinstance(node, Const):
        return node
    if isinstance(node, Unary):
        return Unary(node.op, _shift_t(node.arg, c))
    if isinstance(node, Binary):
        return Binary(node.op, _shift_t(node.left, c), _shift_t(node.right, c))
    if isinstance(node, Call):
        return Call(node.func, tuple(_shift_t(a, c) for a in node.args))
    if isinstance(node, Diff):
        # d/dt f(t - c) = f'(t - c)
        return Diff(_shift_t(node.arg, c), node.wrt)
    raise TypeError(f"unknown node {node!r}")


class PeriodizedField:
    """``b_k``: the base field with time wrapped into ``(-k, k]``; with
    ``l > 0`` additionally averaged in time against the bump of radius ``1/l``.

    Parameters
    ----------
    base : PiecewiseSmoothField
    k : float
        Half period.
    l : int
        Time-mollification index (0 for none).
    """

    def __init__(self, base, k, l=0):
        if not k > 0:
            raise ValueError("half period k must be positive")
        if l < 0:
            raise ValueError("mollification index l must be >= 0")
        self.base = base
        self.k = float(k)
        self.l = int(l)
        self.dim = base.dim
        if self.l:
            self._s, self._w = MollifierSpec(self.l).rule_1d()
            self._shifts = self._s / self.l
        self._field = None

    def __repr__(self):
        return f"PeriodizedField(k={self.k!r}, l={self.l!r})"

    @property
    def half_period(self):
        return self.k

    def wrap(self, t):
        return kernels.wrap_time(t, self.k)

    def eval(self, t, x, y, pattern=None):
        """Field value at ``(t, x, y)``; ``pattern`` selects a piece explicitly."""
        pat = self.base.pattern(y) if pattern is None else pattern
        if not self.l:
            return self.base.eval_piece(pat, self.wrap(t), x, y)
        exprs = self.base.pieces[pat]
        if all("t" not in e.free_vars for e in exprs):
            return self.base.eval_piece(pat, self.wrap(t), x, y)
        out = np.zeros(self.dim)
        for s, w in zip(self._shifts, self._w):
            out += w * self.base.eval_piece(pat, self.wrap(t - s), x, y)
        return out

    __call__ = eval

    def as_field(self):
        """Field for :func:`integrate_filippov` with ``half_period=k``.

        For ``l = 0`` this is the base field.  For ``l > 0`` every
        t-dependent piece becomes the quadrature sum of time-shifted copies;
        the integrator wraps ``t`` before the shifts are applied, so the two
        agree whenever ``wrap(t) -+ 1/l`` stays inside ``(-k, k]``.
        """
        if not self.l:
            return self.base
        if self._field is None:
            pieces = {}
            for pat, exprs in self.base.pieces.items():
                comps = []
                for e in exprs:
                    if "t" not in e.free_vars:
                        comps.append(e)
                        continue
                    acc = None
                    for s, w in zip(self._shifts, self._w):
                        term = Binary("*", Const(float(w)), _shift_t(e.root, float(s)))
                        acc = term if acc is None else Binary("+", acc, term)
                    comps.append(Expr(acc))
                pieces[pat] = comps
            meta = dict(self.base.meta, periodized={"k": self.k, "l": self.l})
            self._field = PiecewiseSmoothField(self.dim, self.base.surfaces, pieces,
                                               self.base.surface_tol, meta)
        return self._field


def periodize(field, k, l=0):
    return PeriodizedField(field, k, l)


def _unwrap(field):
    """``(PiecewiseSmoothField, half_period)`` for plain or periodized fields."""
    if isinstance(field, PeriodizedField):
        return field.as_field(), field.k
    return field, 0.0


# ---------------------------------------------------------------------------
# shooting
# ---------------------------------------------------------------------------

def shoot_forward(field, D, x0, v0, T, t0=0.0, ctrl=StepControl()):
    """Integrate from ``(t0, x0, v0)`` until ``F(x) > c`` or ``t = t0 + T``.

    Returns
    -------
    exit_time : float
        Elapsed time at exit, exactly ``T`` when the run stayed in the closed domain.
    traj : Trajectory
    """
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    if D.value(x0) > D.c:
        raise ValueError(f"initial position {x0.tolist()!r} is outside the closed domain")
    fld, hp = _unwrap(field)
    traj = integrate_filippov(fld, (t0, x0, v0), t0 + T, ctrl, stops=[D.stop_expr()],
                              half_period=hp)
    if traj.meta["stopped"] is None:
        return float(T), traj
    return min(float(traj.t[-1] - t0), float(T)), traj


@dataclass
class BoundedSearchReport:
    found: bool
    trajectory: Trajectory = None
    x0: np.ndarray = None
    v0: np.ndarray = None
    margin: float = -math.inf
    T: float = 0.0
    t0: float = 0.0
    exit_time: float = 0.0
    diagnostics: dict = dc_field(default_factory=dict)

    def to_json(self):
        return {"found": bool(self.found),
                "x0": None if self.x0 is None else [float(v) for v in self.x0],
                "v0": None if self.v0 is None else [float(v) for v in self.v0],
                "margin": float(self.margin), "T": float(self.T), "t0": float(self.t0),
                "exit_time": float(self.exit_time), "diagnostics": self.diagnostics}


def _margin(D, traj):
    return float(D.c - D.values(traj.x).max())


def _grid_axes(box, n):
    return [np.linspace(lo, hi, n) for lo, hi in box]


def _golden_max(f, a, b, iters):
    """Golden-section search for a maximiser of ``f`` on ``[a, b]``."""
    c, d = b - GOLDEN * (b - a), a + GOLDEN * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(iters):
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - GOLDEN * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + GOLDEN * (b - a)
            fd = f(d)
    return (c, fc) if fc >= fd else (d, fd)


def find_forward_bounded(field, D, T, grid=17, v_grid=17, t0=0.0, ctrl=StepControl(),
                         V=None, refine_iters=12, seed=0):
    """Multi-start shooting for initial data whose solution stays in the closed domain on ``[t0, t0 + T]``.

    Positions come from a ``grid``-per-axis lattice on the sampled bounding box
    of ``{F <= c}`` (restricted to ``F <= c``); velocities from ``v_grid``
    points per axis on ``[-V, V]`` with ``V = bound_constant * T`` unless given.
    Candidates are ranked by ``(exit_time, margin, -|v0|, -index)``; when no
    candidate survives the window, the best one is refined by coordinate
    golden-section search on its exit time.
    """
    fld, _ = _unwrap(field)
    m = D.dim
    bbox = D.closure_bbox()
    if bbox is None:
        return BoundedSearchReport(False, T=T, t0=t0,
                                   diagnostics={"reason": "empty sublevel set"})
    if V is None:
        c_K = bound_constant(fld, {"t": (t0, t0 + T), "x": bbox.tolist()}, x_filter=D.contains,
                             seed=seed)
        V = c_K * T
    xs = np.array(np.meshgrid(*_grid_axes(bbox, grid), indexing="ij")).reshape(m, -1).T
    xs = xs[D.values(xs) <= D.c]
    vax = np.linspace(-V, V, v_grid) if V > 0 else np.zeros(1)
    vs = np.array(np.meshgrid(*[vax] * m, indexing="ij")).reshape(m, -1).T

    best_key, best = None, None
    n_contained = n_failed = 0
    idx = 0
    for x0 in xs:
        for v0 in vs:
            try:
                et, traj = shoot_forward(field, D, x0, v0, T, t0, ctrl)
            except SolverError:
                n_failed += 1
                idx += 1
                continue
            mg = _margin(D, traj)
            n_contained += et == T
            key = (et, mg, -float(np.linalg.norm(v0)), -idx)
            if best_key is None or key > best_key:
                best_key, best = key, (x0.copy(), v0.copy(), et, traj, mg)
            idx += 1
    diag = {"candidates": idx, "contained": int(n_contained), "failed": n_failed,
            "V": float(V), "refined": False}
    if best is None:
        return BoundedSearchReport(False, T=T, t0=t0, diagnostics=diag)
    x0, v0, et, traj, mg = best
    if et < T and refine_iters > 0:
        x0, v0, et, traj, mg = _refine(field, D, T, t0, ctrl, x0, v0, bbox, grid, vax,
                                       refine_iters, best)
        diag["refined"] = True
    return BoundedSearchReport(bool(et == T), traj, x0, v0, mg, T, t0, et, diag)


def _refine(field, D, T, t0, ctrl, x0, v0, bbox, grid, vax, iters, best):
    state = {"best": best}
    dx = (bbox[:, 1] - bbox[:, 0]) / max(grid - 1, 1)
    dv = (vax[-1] - vax[0]) / max(vax.size - 1, 1)

    def run(x, v):
        if D.value(x) > D.c:
            return -1.0
        try:
            et, traj = shoot_forward(field, D, x, v, T, t0, ctrl)
        except SolverError:
            return -1.0
        mg = _margin(D, traj)
        if (et, mg) > (state["best"][2], state["best"][4]):
            state["best"] = (x.copy(), v.copy(), et, traj, mg)
        return et

    x, v = x0.copy(), v0.copy()
    for i in range(v.size):
        def fv(s, i=i):
            w = v.copy()
            w[i] = s
            return run(x, w)
        _golden_max(fv, v[i] - dv, v[i] + dv, iters)
        v = state["best"][1].copy()
    for i in range(x.size):
        def fx(s, i=i):
            y = x.copy()
            y[i] = s
            return run(y, v)
        _golden_max(fx, x[i] - dx[i], x[i] + dx[i], iters)
        x = state["best"][0].copy()
    return state["best"]


def find_bidirectional(field, D, T_list, k_schedule=None, l_schedule=None, cauchy_tol=1e-4,
                       grid=17, v_grid=17, ctrl=StepControl(), seed=0):
    """Bounded solutions on growing windows ``[-T, T]`` of the periodized field.

    For each window the search starts at ``t = -T`` with half period
    ``k = 2 T`` (default) and no time mollification (default).  The
    restrictions to the reference window ``[-T0, T0]`` (``T0 = T_list[0]``)
    are compared in the C1 distance; the search is accepted when every window
    found a solution and the last distance is below ``cauchy_tol``.
    """
    T_list = [float(T) for T in T_list]
    if any(b <= a for a, b in zip(T_list, T_list[1:])) or not T_list or T_list[0] <= 0:
        raise ValueError("T_list must be positive and increasing")
    ks = [2.0 * T for T in T_list] if k_schedule is None else list(k_schedule)
    ls = [0] * len(T_list) if l_schedule is None else list(l_schedule)
    T0 = T_list[0]
    windows, dists = [], []
    prev = None
    report = None
    for T, k, l in zip(T_list, ks, ls):
        if T > k / 2 + 1e-12:
            raise ValueError(f"window T={T} exceeds k/2={k / 2}")
        report = find_forward_bounded(periodize(field, k, l), D, 2.0 * T, grid, v_grid,
                                      t0=-T, ctrl=ctrl, seed=seed)
        win = {"T": T, "k": k, "l": l, "found": report.found, "margin": report.margin,
               "exit_time": report.exit_time,
               "x0": None if report.x0 is None else report.x0.tolist(),
               "v0": None if report.v0 is None else report.v0.tolist()}
        windows.append(win)
        if not report.found:
            break
        cur = report.trajectory
        if prev is not None:
            dists.append(c1_distance(prev, cur, (-T0, T0)))
        prev = cur
    all_found = len(windows) == len(T_list) and all(w["found"] for w in windows)
    accepted = all_found and (not dists or dists[-1] < cauchy_tol)
    diag = {"windows": windows, "cauchy_distances": dists, "cauchy_tol": cauchy_tol,
            "reference_window": [-T0, T0]}
    return dataclasses.replace(report, found=bool(accepted), diagnostics=diag)


# ---------------------------------------------------------------------------
# norms
# ---------------------------------------------------------------------------

def _check_cover(traj, a, b):
    if not traj.covers(a, b):
        raise ValueError(f"trajectory on [{traj.t0}, {traj.t1}] does not cover [{a}, {b}]")


def c1_distance(trajA, trajB, window, n=1000):
    """``sup |xA - xB| + sup |vA - vB|`` on ``n`` uniform points of the window."""
    a, b = map(float, window)
    _check_cover(trajA, a, b)
    _check_cover(trajB, a, b)
    tq = np.linspace(a, b, n)
    xa, va = trajA.interpolate(tq)
    xb, vb = trajB.interpolate(tq)
    return float(np.linalg.norm(xa - xb, axis=1).max() + np.linalg.norm(va - vb, axis=1).max())


def h2_seminorm(traj, window):
    """Trapezoid value of ``(int |x|^2 + |a|^2 dt)^(1/2)`` over the window's samples."""
    a, b = map(float, window)
    _check_cover(traj, a, b)
    keep = (traj.t >= a) & (traj.t <= b)
    t = traj.t[keep]
    if t.size < 2:
        return 0.0
    g = np.sum(traj.x[keep] ** 2, axis=1) + np.sum(traj.a[keep] ** 2, axis=1)
    return float(math.sqrt(np.trapezoid(g, t) if hasattr(np, "trapezoid") else np.trapz(g, t)))
