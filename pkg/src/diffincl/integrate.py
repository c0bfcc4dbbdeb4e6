"""Time integration of smooth systems and of Filippov systems with sliding.

Both integrators solve ``x'' = a(t, x, x')`` as a first-order system with the
Dormand-Prince 5(4) pair.  :func:`integrate_filippov` runs the active piece
(or the sliding dynamics) between events and decides at each surface hit
whether the motion crosses or sticks.
"""

import collections
import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from ._dopri import DOMAIN, MAX_STEPS, UNDERFLOW, dopri_segment
from .errors import (ChatteringError, DomainError, HigherIndexSlidingError, SolverError,
                     StepUnderflowError)
from .exprdsl import Binary, Call, Const, Diff, Expr, Var, compile_expr

CHATTER_LIMIT = 10_000


@dataclass(frozen=True)
class StepControl:
    """Tolerances of the adaptive stepper; ``event_tol`` is a time tolerance."""

    rtol: float = 1e-9
    atol: float = 1e-11
    max_step: float = 0.1
    event_tol: float = 1e-12
    max_steps: int = 1_000_000

    def __post_init__(self):
        for name in ("rtol", "atol", "max_step", "event_tol", "max_steps"):
            v = getattr(self, name)
            if not (v > 0 and math.isfinite(v)):
                raise ValueError(f"step control {name} must be positive and finite, got {v!r}")

    def to_json(self):
        return {"rtol": self.rtol, "atol": self.atol, "max_step": self.max_step,
                "event_tol": self.event_tol}


class Trajectory:
    """Sampled path ``(t, x, v, a, mode)``.

    ``a`` holds the right limit of the acceleration at each sample and
    ``a_left`` the left limit; they differ only at mode switches.  ``mode[i]``
    labels the motion on ``[t[i], t[i+1]]``.
    """

    def __init__(self, t, x, v, a, mode, a_left=None, meta=None):
        self.t = np.asarray(t, dtype=float)
        n = self.t.size
        self.x = np.asarray(x, dtype=float).reshape(n, -1)
        self.v = np.asarray(v, dtype=float).reshape(n, -1)
        self.a = np.asarray(a, dtype=float).reshape(n, -1)
        self.a_left = self.a.copy() if a_left is None else np.asarray(a_left, dtype=float).reshape(n, -1)
        self.mode = list(mode)
        self.meta = dict(meta or {})
        if len(self.mode) != n:
            raise ValueError("one mode label per sample required")
        if n > 1 and not np.all(np.diff(self.t) > 0):
            raise ValueError("sample times must be strictly increasing")

    def __len__(self):
        return self.t.size

    @property
    def dim(self):
        return self.x.shape[1]

    @property
    def t0(self):
        return float(self.t[0])

    @property
    def t1(self):
        return float(self.t[-1])

    def covers(self, a, b, slack=1e-12):
        return self.t[0] <= a + slack and self.t[-1] >= b - slack

    def interpolate(self, tq):
        """Hermite values ``(x, v)`` at the times ``tq``.

        Position uses the quintic through ``(x, v, a)`` at both ends of the
        step (right limit of ``a`` on the left, left limit on the right); the
        velocity is its derivative.
        """
        tq = np.atleast_1d(np.asarray(tq, dtype=float))
        if self.t.size == 1:
            return np.repeat(self.x, tq.size, axis=0), np.repeat(self.v, tq.size, axis=0)
        i = np.clip(np.searchsorted(self.t, tq, side="right") - 1, 0, self.t.size - 2)
        h = (self.t[i + 1] - self.t[i])[:, None]
        s = ((tq - self.t[i])[:, None]) / h
        s2, s3 = s * s, s * s * s
        s4, s5 = s3 * s, s3 * s2
        x0, v0, a0 = self.x[i], self.v[i], self.a[i]
        x1, v1, a1 = self.x[i + 1], self.v[i + 1], self.a_left[i + 1]
        x = ((1 - 10 * s3 + 15 * s4 - 6 * s5) * x0
             + (s - 6 * s3 + 8 * s4 - 3 * s5) * h * v0
             + 0.5 * (s2 - 3 * s3 + 3 * s4 - s5) * h * h * a0
             + (10 * s3 - 15 * s4 + 6 * s5) * x1
             + (-4 * s3 + 7 * s4 - 3 * s5) * h * v1
             + 0.5 * (s3 - 2 * s4 + s5) * h * h * a1)
        v = ((-30 * s2 + 60 * s3 - 30 * s4) * x0 / h
             + (1 - 18 * s2 + 32 * s3 - 15 * s4) * v0
             + 0.5 * (2 * s - 9 * s2 + 12 * s3 - 5 * s4) * h * a0
             + (30 * s2 - 60 * s3 + 30 * s4) * x1 / h
             + (-12 * s2 + 28 * s3 - 15 * s4) * v1
             + 0.5 * (3 * s2 - 8 * s3 + 5 * s4) * h * a1)
        return x, v

    def consistency_defect(self):
        """Max over steps of ``|x[i+1] - x[i] - int v|`` with v Hermite-reconstructed."""
        if self.t.size < 2:
            return 0.0
        h = np.diff(self.t)[:, None]
        integral = h * (self.v[:-1] + self.v[1:]) / 2 + h ** 2 * (self.a[:-1] - self.a_left[1:]) / 12
        return float(np.max(np.abs(self.x[1:] - self.x[:-1] - integral)))

    def velocity_jump(self):
        """Always 0: one velocity per sample, shared by both sides of a switch."""
        return 0.0

    def restrict(self, a, b):
        keep = (self.t >= a) & (self.t <= b)
        idx = np.flatnonzero(keep)
        return Trajectory(self.t[idx], self.x[idx], self.v[idx], self.a[idx],
                          [self.mode[i] for i in idx], self.a_left[idx], self.meta)

    @property
    def n_events(self):
        return int(self.meta.get("events", 0))


# ---------------------------------------------------------------------------
# smooth integration
# ---------------------------------------------------------------------------

def _raise_segment(seg_status, message, exc, t, h):
    if seg_status == UNDERFLOW:
        raise StepUnderflowError(t, h)
    if seg_status == DOMAIN:
        if exc is not None:
            raise exc
        raise DomainError(message)
    if seg_status == MAX_STEPS:
        raise SolverError(message)


def integrate_smooth(rhs, state0, t_end, ctrl=StepControl(), label="smooth"):
    """Adaptive Dormand-Prince solution of ``x'' = rhs(t, x, x')``.

    Parameters
    ----------
    rhs : callable
        ``rhs(t, x, v) -> array of shape (m,)``, continuous along the solution.
    state0 : tuple
        ``(t0, x0, v0)``.

    Raises
    ------
    StepUnderflowError
        When the step size collapses (reports the location).
    DomainError
        Propagated from ``rhs``.
    """
    t0, x0, v0 = state0
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    v0 = np.atleast_1d(np.asarray(v0, dtype=float))
    m = x0.size

    def fun(t, y):
        out = np.empty(2 * m)
        out[:m] = y[m:]
        out[m:] = rhs(t, y[:m], y[m:])
        return out

    seg = dopri_segment(fun, t0, np.concatenate([x0, v0]), t_end, ctrl.rtol, ctrl.atol, 0.0,
                        ctrl.max_step, ctrl.event_tol, ctrl.max_steps)
    if seg.status:
        _raise_segment(seg.status, seg.message, seg.exc, seg.t[-1] if seg.t else t0, seg.h_next)
    Y = np.array(seg.y)
    F = np.array(seg.f)
    return Trajectory(seg.t, Y[:, :m], Y[:, m:], F[:, m:], [label] * len(seg.t),
                      meta={"method": "dopri54", "control": ctrl.to_json(), "events": 0})


def piece_rhs(field, pattern=""):
    """Callable ``(t, x, v) -> a`` for a single piece (no switching)."""
    progs = field.piece_programs(pattern)

    def rhs(t, x, v):
        env = np.concatenate([[t], x, v])
        return np.array([kernels.eval_program(p, env) for p in progs])

    return rhs


# ---------------------------------------------------------------------------
# Filippov integration
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Sliding:
    """Tangent hull element on surface j: ``a = alpha f+ + (1 - alpha) f-``."""

    a: np.ndarray
    alpha: float
    j: int


CROSSING = "crossing"


def _sides(field, j, t, x, v):
    s = field.sigma(v)
    base = ["+" if val > 0 else "-" for val in s]
    base[j] = "+"
    fp = field.eval_piece("".join(base), t, x, v)
    base[j] = "-"
    fm = field.eval_piece("".join(base), t, x, v)
    return fp, fm


def sliding_dynamics(field, t, x, v, j):
    """Filippov convex combination tangent to surface ``j`` at a velocity on it.

    Returns :class:`Sliding` when the tangency coefficient lies in [0, 1]
    (both ends included), else the string ``"crossing"``.  When neither side
    has a normal component, ``alpha = 0.5``.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    v = np.atleast_1d(np.asarray(v, dtype=float))
    fp, fm = _sides(field, j, t, x, v)
    g = field.surface_gradient(j, v)
    gp = float(g @ fp)
    gm = float(g @ fm)
    den = gm - gp
    if den == 0.0:
        if gm != 0.0:
            return CROSSING
        alpha = 0.5
    else:
        alpha = gm / den
    if not (0.0 <= alpha <= 1.0):
        return CROSSING
    a = alpha * fp + (1.0 - alpha) * fm
    # remove the rounding residue normal to the surface
    a = a - (g @ a) / (g @ g) * g
    return Sliding(a, alpha, j)


def _decide(gm, gp):
    """Mode after reaching a surface: 'sliding', '+' or '-'.

    Sliding when the surface is attractive in the closed sense (gm >= 0 >= gp).
    A repulsive surface (gm < 0 < gp) is left on the '+' side.
    """
    if gm >= 0.0 and gp <= 0.0:
        return "sliding"
    return "+" if gp > 0.0 else "-"


def _dot(gs, fs):
    terms = [Binary("*", g, f) for g, f in zip(gs, fs)]
    out = terms[0]
    for term in terms[1:]:
        out = Binary("+", out, term)
    return out


class _ModeTable:
    """Compiled accelerations and guards per mode, cached on the field."""

    def __init__(self, field, stops):
        self.field = field
        self.stops = [compile_expr(s, field.slots) for s in stops]
        self.cache = {}
        m = field.dim
        self.ynames = field.names[1 + m:]

    def piece(self, pattern):
        key = ("piece", pattern)
        if key not in self.cache:
            f = self.field
            accel = f.piece_programs(pattern)
            guards = []
            for j, c in enumerate(pattern):
                s = f.surfaces[j].root
                guards.append(compile_expr(Expr(s if c == "+" else Binary("*", Const(-1.0), s)),
                                           f.slots))
            self.cache[key] = (accel, guards, [0] * len(guards))
        return self.cache[key]

    def sliding(self, j, others):
        """Sliding on surface j; ``others`` is the pattern with j's entry ignored."""
        key = ("sliding", j, others)
        if key not in self.cache:
            f = self.field
            m = f.dim
            patp = others[:j] + "+" + others[j + 1:]
            patm = others[:j] + "-" + others[j + 1:]
            fp = [e.root for e in f.pieces[patp]]
            fm = [e.root for e in f.pieces[patm]]
            sig = f.surfaces[j].root
            grad = [Diff(sig, yn) for yn in self.ynames]
            gp = _dot(grad, fp)
            gm = _dot(grad, fm)
            if m == 1:
                accel_exprs = [Const(0.0)]
            else:
                alpha = Binary("/", gm, Call("max", (Binary("-", gm, gp), Const(1e-300))))
                accel_exprs = [Binary("+", b, Binary("*", alpha, Binary("-", a, b)))
                               for a, b in zip(fp, fm)]
            accel = [compile_expr(Expr(e), f.slots) for e in accel_exprs]
            guards = [compile_expr(Expr(gm), f.slots),
                      compile_expr(Expr(Binary("*", Const(-1.0), gp)), f.slots)]
            strict = [1, 1]
            for i, c in enumerate(others):
                if i == j:
                    continue
                s = f.surfaces[i].root
                guards.append(compile_expr(Expr(s if c == "+" else Binary("*", Const(-1.0), s)),
                                           f.slots))
                strict.append(0)
            self.cache[key] = (accel, guards, strict)
        return self.cache[key]


def _project(field, j, v, iters=8):
    """Move ``v`` onto ``sigma_j = 0`` along the gradient (Newton steps)."""
    v = v.copy()
    for _ in range(iters):
        s = field.sigma(v)[j]
        if s == 0.0:
            break
        g = field.surface_gradient(j, v)
        v_new = v - s / float(g @ g) * g
        if np.array_equal(v_new, v):
            break
        v = v_new
    return v


def _label(field, mode):
    if mode[0] == "sliding":
        return f"sliding:{mode[1]}"
    return mode[1] if field.n_surfaces else "smooth"


def integrate_filippov(field, state0, t_end, ctrl=StepControl(), stops=(), half_period=0.0,
                       chatter_limit=CHATTER_LIMIT):
    """Event-driven Filippov solution of ``x'' in F(t, x, x')``.

    Parameters
    ----------
    field : PiecewiseSmoothField
    state0 : tuple ``(t0, x0, v0)``
    stops : sequence of expressions
        Extra guards; the run ends when one becomes negative (strict).
    half_period : float
        If positive, the field is evaluated at ``t`` wrapped into ``(-k, k]``.

    Returns
    -------
    Trajectory
        ``meta["stopped"]`` holds the index of the stop guard that fired, or None.

    Raises
    ------
    ChatteringError
        More than ``chatter_limit`` events within one time unit.
    HigherIndexSlidingError
        Two or more surfaces active at once.
    StepUnderflowError
    """
    t0, x0, v0 = state0
    t = float(t0)
    x = np.atleast_1d(np.asarray(x0, dtype=float)).copy()
    v = np.atleast_1d(np.asarray(v0, dtype=float)).copy()
    m = field.dim
    if x.size != m or v.size != m:
        raise ValueError(f"initial state must have {m} components")
    table = _ModeTable(field, stops)
    wrap = (lambda s: kernels.wrap_time(s, half_period)) if half_period > 0 else (lambda s: s)

    def decide(t, x, v):
        s = field.sigma(v)
        active = [j for j, val in enumerate(s) if abs(val) <= field.surface_tol]
        if len(active) > 1:
            raise HigherIndexSlidingError(
                f"surfaces {active} active simultaneously at t={t!r}, v={v.tolist()!r}")
        pat = "".join("+" if val > 0 else "-" for val in s)
        if not active:
            return ("piece", pat), v
        j = active[0]
        v = _project(field, j, v)
        tw = wrap(t)
        fp, fm = _sides(field, j, tw, x, v)
        g = field.surface_gradient(j, v)
        choice = _decide(float(g @ fm), float(g @ fp))
        if choice == "sliding":
            return ("sliding", j, pat), v
        return ("piece", pat[:j] + choice + pat[j + 1:]), v

    mode, v = decide(t, x, v)
    Ts, Xs, Vs, As, ALs, Ms = [], [], [], [], [], []
    h = 0.0
    events = 0
    recent = collections.deque()
    stopped = None
    pending_left = None
    while True:
        if mode[0] == "piece":
            accel, guards, strict = table.piece(mode[1])
        else:
            accel, guards, strict = table.sliding(mode[1], mode[2])
        n_mode_guards = len(guards)
        all_guards = list(guards) + table.stops
        all_strict = list(strict) + [1] * len(table.stops)
        status, ev, T, X, V, A, h, msg = kernels.integrate_segment(
            accel, all_guards, all_strict, t, x, v, t_end, ctrl.rtol, ctrl.atol, h,
            ctrl.max_step, ctrl.event_tol, half_period, ctrl.max_steps)
        if T.size:
            AL = A.copy()
            if pending_left is not None:
                AL[0] = pending_left
            label = _label(field, mode)
            Ts.append(T)
            Xs.append(X)
            Vs.append(V)
            As.append(A)
            ALs.append(AL)
            Ms.extend([label] * T.size)
        if status == 0:
            break
        if status != 1:
            t_fail = float(T[-1]) if T.size else t
            if status == UNDERFLOW:
                raise StepUnderflowError(t_fail, h)
            if status == DOMAIN:
                raise DomainError(f"{msg} at t={t_fail!r}")
            raise SolverError(msg)
        # event: the last sample is the located hit
        t, x, v_hit, a_hit = float(T[-1]), X[-1].copy(), V[-1].copy(), A[-1].copy()
        if ev >= n_mode_guards:
            stopped = ev - n_mode_guards
            break
        events += 1
        recent.append(t)
        while recent and recent[0] < t - 1.0:
            recent.popleft()
        if len(recent) > chatter_limit:
            raise ChatteringError(t, len(recent))
        if mode[0] == "piece":
            j = ev
            v = _project(field, j, v_hit)
        else:
            # leaving the surface, or reaching another one
            v = v_hit
            if ev >= 2:
                raise HigherIndexSlidingError(
                    f"second surface reached while sliding on surface {mode[1]} at t={t!r}")
        # drop the pre-switch sample; the next segment starts with the joined one
        for arr in (Ts, Xs, Vs, As, ALs):
            arr[-1] = arr[-1][:-1]
        Ms.pop()
        pending_left = a_hit
        # a grazing contact re-selects the current mode and simply continues
        mode, v = decide(t, x, v)
    traj = Trajectory(np.concatenate(Ts), np.concatenate(Xs), np.concatenate(Vs),
                      np.concatenate(As), Ms, np.concatenate(ALs),
                      meta={"method": "filippov", "control": ctrl.to_json(), "events": events,
                            "model": field.model_hash, "stopped": stopped,
                            "half_period": half_period})
    return traj


def integrate_mollified(field, spec, state0, t_end, ctrl=StepControl()):
    """Solution of the velocity-mollified system ``x'' = f_k(t, x, x')``.

    ``f_k`` is smooth in the velocity, so the plain stepper applies; the
    quadrature is re-evaluated at every stage.
    """
    from .field import mollify_eval

    def rhs(t, x, v):
        return mollify_eval(field, spec, t, x, v)

    traj = integrate_smooth(rhs, state0, t_end, ctrl, label=f"mollified:{spec.k:g}")
    traj.meta.update(method="mollified", k=spec.k, model=field.model_hash)
    return traj
