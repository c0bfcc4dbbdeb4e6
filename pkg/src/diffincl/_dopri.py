"""Dormand-Prince 5(4) stepping with guard events, for Python callables.

This is the reference implementation of the stepping loop.  The compiled
kernel in ``_kernels.pyx`` repeats it operation for operation on bytecode
right-hand sides, so both produce the same trajectories.
"""

import math
from dataclasses import dataclass, field

import numpy as np

# Butcher tableau
C2, C3, C4, C5 = 1 / 5, 3 / 10, 4 / 5, 8 / 9
A21 = 1 / 5
A31, A32 = 3 / 40, 9 / 40
A41, A42, A43 = 44 / 45, -56 / 15, 32 / 9
A51, A52, A53, A54 = 19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729
A61, A62, A63, A64, A65 = 9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656
B1, B3, B4, B5, B6 = 35 / 384, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84
# b - b_hat
E1, E3, E4, E5, E6, E7 = 71 / 57600, -71 / 16695, 71 / 1920, -17253 / 339200, 22 / 525, -1 / 40

SAFETY = 0.9
FAC_MIN = 0.2
FAC_MAX = 5.0
EPS = np.finfo(float).eps

DONE, EVENT, UNDERFLOW, DOMAIN, MAX_STEPS = 0, 1, 2, 3, 4


@dataclass
class Segment:
    status: int
    event: int = -1
    t: list = field(default_factory=list)
    y: list = field(default_factory=list)
    f: list = field(default_factory=list)
    h_next: float = 0.0
    message: str = ""
    exc: object = None


def _norm(z, n):
    s = 0.0
    for i in range(n):
        s += z[i] * z[i]
    return math.sqrt(s / n)


def initial_step(fun, t0, y0, f0, rtol, atol, hmax):
    """Starting step size by the usual two-evaluation heuristic."""
    n = len(y0)
    sc = atol + rtol * np.abs(y0)
    d0 = _norm(y0 / sc, n)
    d1 = _norm(f0 / sc, n)
    if d0 < 1e-5 or d1 < 1e-5:
        h0 = 1e-6
    else:
        h0 = 0.01 * d0 / d1
    h0 = min(h0, hmax)
    y1 = y0 + h0 * f0
    f1 = fun(t0 + h0, y1)
    d2 = _norm((f1 - f0) / sc, n) / h0
    dm = max(d1, d2)
    if dm <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / dm) ** 0.2
    return min(100.0 * h0, h1, hmax)


def rk_step(fun, t, y, k1, h):
    """One Dormand-Prince step; returns (y_new, k2..k6) for the error estimate."""
    k2 = fun(t + C2 * h, y + h * (A21 * k1))
    k3 = fun(t + C3 * h, y + h * (A31 * k1 + A32 * k2))
    k4 = fun(t + C4 * h, y + h * (A41 * k1 + A42 * k2 + A43 * k3))
    k5 = fun(t + C5 * h, y + h * (A51 * k1 + A52 * k2 + A53 * k3 + A54 * k4))
    k6 = fun(t + h, y + h * (A61 * k1 + A62 * k2 + A63 * k3 + A64 * k4 + A65 * k5))
    y_new = y + h * (B1 * k1 + B3 * k3 + B4 * k4 + B5 * k5 + B6 * k6)
    return y_new, k3, k4, k5, k6


def dopri_segment(fun, t0, y0, t_end, rtol=1e-9, atol=1e-11, h0=0.0, hmax=np.inf,
                  event_tol=1e-12, max_steps=1_000_000, guard=None):
    """Integrate ``y' = fun(t, y)`` from ``t0`` until ``t_end`` or a guard event.

    ``guard(t, y)`` returns the index of the first triggered guard or -1.  It
    is checked at accepted step ends only; a hit is located by bisection on
    genuine Runge-Kutta sub-steps from the step start down to ``event_tol``.

    Returns a :class:`Segment` whose samples include the start point.  An
    exception raised by ``fun`` ends the segment with status ``DOMAIN``.
    """
    t = float(t0)
    y = np.array(y0, dtype=float)
    n = y.size
    seg = Segment(DONE)
    try:
        k1 = fun(t, y)
    except ArithmeticError as exc:
        seg.status, seg.message, seg.exc = DOMAIN, str(exc), exc
        return seg
    seg.t.append(t)
    seg.y.append(y.copy())
    seg.f.append(k1.copy())
    if t >= t_end:
        seg.h_next = h0
        return seg
    try:
        h = h0 if h0 > 0.0 else initial_step(fun, t, y, k1, rtol, atol, hmax)
    except ArithmeticError as exc:
        seg.status, seg.message, seg.exc = DOMAIN, str(exc), exc
        return seg
    h = min(h, hmax)
    rejected = False
    steps = 0
    while True:
        if steps >= max_steps:
            seg.status, seg.message = MAX_STEPS, f"step limit {max_steps} reached at t={t!r}"
            seg.h_next = h
            return seg
        if h < 10.0 * EPS * max(1.0, abs(t)):
            seg.status, seg.message = UNDERFLOW, f"step size underflow at t={t!r} (h={h!r})"
            seg.h_next = h
            return seg
        last = t + h >= t_end
        hs = t_end - t if last else h
        try:
            y_new, k3, k4, k5, k6 = rk_step(fun, t, y, k1, hs)
            t_new = t_end if last else t + hs
            k7 = fun(t_new, y_new)
        except ArithmeticError as exc:
            seg.status, seg.message, seg.exc = DOMAIN, str(exc), exc
            seg.h_next = h
            return seg
        e = hs * (E1 * k1 + E3 * k3 + E4 * k4 + E5 * k5 + E6 * k6 + E7 * k7)
        sc = atol + rtol * np.maximum(np.abs(y), np.abs(y_new))
        err = _norm(e / sc, n)
        steps += 1
        if err > 1.0:
            fac = max(FAC_MIN, SAFETY * err ** -0.2)
            h = hs * min(1.0, fac)
            rejected = True
            continue
        if err == 0.0:
            fac = FAC_MAX
        else:
            fac = min(FAC_MAX, max(FAC_MIN, SAFETY * err ** -0.2))
        if rejected:
            fac = min(1.0, fac)
        rejected = False
        h_next = min(hs * fac, hmax)
        if guard is not None:
            try:
                hit = guard(t_new, y_new)
                if hit >= 0:
                    tau, y_ev, hit = _locate(fun, guard, t, y, k1, hs, hit, event_tol)
                    t_ev = t + tau
                    f_ev = fun(t_ev, y_ev)
            except ArithmeticError as exc:
                seg.status, seg.message, seg.exc = DOMAIN, str(exc), exc
                seg.h_next = h
                return seg
            if hit >= 0:
                seg.t.append(t_ev)
                seg.y.append(y_ev)
                seg.f.append(f_ev)
                seg.status, seg.event = EVENT, hit
                seg.h_next = h_next
                return seg
        t, y, k1 = t_new, y_new, k7
        seg.t.append(t)
        seg.y.append(y.copy())
        seg.f.append(k1.copy())
        if last:
            seg.h_next = h_next
            return seg
        h = h_next


def _locate(fun, guard, t, y, k1, h, hit, event_tol):
    lo, hi = 0.0, h
    y_hi = None
    while hi - lo > event_tol:
        mid = 0.5 * (lo + hi)
        y_mid = rk_step(fun, t, y, k1, mid)[0]
        g = guard(t + mid, y_mid)
        if g >= 0:
            hi, y_hi, hit = mid, y_mid, g
        else:
            lo = mid
    if y_hi is None:
        y_hi = rk_step(fun, t, y, k1, hi)[0]
    return hi, y_hi, hit
