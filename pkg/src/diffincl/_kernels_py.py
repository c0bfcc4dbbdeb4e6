"""Pure-Python kernels: bytecode evaluation and the segment integrator.

Same interface and arithmetic as the compiled ``_kernels`` extension, used
when the extension is unavailable or ``DIFFINCL_PURE_PYTHON`` is set.
"""

import math

import numpy as np

from . import opcodes as op
from ._dopri import dopri_segment

BACKEND = "python"


class _VMError(Exception):
    def __init__(self, status):
        self.status = status


def _pow(a, b):
    if a == 0.0 and b < 0.0:
        raise _VMError(op.ERR_POW)
    if a < 0.0 and b != math.floor(b):
        raise _VMError(op.ERR_POW)
    try:
        r = math.pow(a, b)
    except OverflowError:
        raise _VMError(op.ERR_NONFINITE) from None
    return r


def _exp(a):
    try:
        return math.exp(a)
    except OverflowError:
        raise _VMError(op.ERR_NONFINITE) from None


def _sign(a):
    return 1.0 if a > 0.0 else (-1.0 if a < 0.0 else 0.0)


def _unary(code, a):
    if code == op.NEG:
        return -a
    if code == op.SIN:
        return math.sin(a)
    if code == op.COS:
        return math.cos(a)
    if code == op.TAN:
        return math.tan(a)
    if code == op.EXP:
        return _exp(a)
    if code == op.LOG:
        if a <= 0.0:
            raise _VMError(op.ERR_LOG)
        return math.log(a)
    if code == op.SQRT:
        if a < 0.0:
            raise _VMError(op.ERR_SQRT)
        return math.sqrt(a)
    if code == op.ABS:
        return abs(a)
    if code == op.SIGN:
        return _sign(a)
    raise _VMError(op.ERR_OPCODE)


def _binary(code, a, b):
    if code == op.ADD:
        return a + b
    if code == op.SUB:
        return a - b
    if code == op.MUL:
        return a * b
    if code == op.DIV:
        if b == 0.0:
            raise _VMError(op.ERR_DIV)
        return a / b
    if code == op.POW:
        return _pow(a, b)
    if code == op.MIN:
        return b if b < a else a
    if code == op.MAX:
        return b if b > a else a
    raise _VMError(op.ERR_OPCODE)


def _dual_unary(code, a, da):
    if code == op.NEG:
        return -a, -da
    if code == op.SIN:
        return math.sin(a), math.cos(a) * da
    if code == op.COS:
        return math.cos(a), -math.sin(a) * da
    if code == op.TAN:
        c = math.cos(a)
        return math.tan(a), (1.0 / (c * c)) * da
    if code == op.EXP:
        e = _exp(a)
        return e, e * da
    if code == op.LOG:
        if a <= 0.0:
            raise _VMError(op.ERR_LOG)
        return math.log(a), (1.0 / a) * da
    if code == op.SQRT:
        if a < 0.0 or (a == 0.0 and da != 0.0):
            raise _VMError(op.ERR_SQRT)
        s = math.sqrt(a)
        return s, (0.5 / s) * da if da != 0.0 else 0.0
    if code == op.ABS:
        return abs(a), _sign(a) * da
    if code == op.SIGN:
        return _sign(a), 0.0
    raise _VMError(op.ERR_OPCODE)


def _dual_binary(code, a, da, b, db):
    if code == op.ADD:
        return a + b, da + db
    if code == op.SUB:
        return a - b, da - db
    if code == op.MUL:
        return a * b, a * db + da * b
    if code == op.DIV:
        if b == 0.0:
            raise _VMError(op.ERR_DIV)
        q = a / b
        return q, (da - q * db) / b
    if code == op.POW:
        v = _pow(a, b)
        d = 0.0
        if da != 0.0:
            d = b * _pow(a, b - 1.0) * da
        if db != 0.0:
            if a <= 0.0:
                raise _VMError(op.ERR_LOG)
            d = d + v * math.log(a) * db
        return v, d
    if code == op.MIN:
        return (b, db) if b < a else (a, da)
    if code == op.MAX:
        return (b, db) if b > a else (a, da)
    raise _VMError(op.ERR_OPCODE)


def _run(code, consts, env):
    """Execute one program; return ``(status, value)``."""
    vs = []
    ds = []
    try:
        for i in range(0, len(code), 2):
            c = code[i]
            arg = code[i + 1]
            if c == op.CONST:
                vs.append(consts[arg])
            elif c == op.VAR:
                vs.append(env[arg])
            elif c < op.ADD:
                vs[-1] = _unary(c, vs[-1])
            elif c < op.DUAL:
                b = vs.pop()
                vs[-1] = _binary(c, vs[-1], b)
            elif c == op.DUAL + op.CONST:
                vs.append(consts[arg])
                ds.append(0.0)
            elif c == op.DUAL + op.VAR:
                vs.append(env[arg])
                ds.append(0.0)
            elif c == op.SEED:
                vs.append(env[arg])
                ds.append(1.0)
            elif c == op.TANGENT:
                vs[-1] = ds.pop()
            elif c < op.DUAL + op.ADD:
                vs[-1], ds[-1] = _dual_unary(c - op.DUAL, vs[-1], ds[-1])
            elif c <= op.DUAL + op.MAX:
                b = vs.pop()
                db = ds.pop()
                vs[-1], ds[-1] = _dual_binary(c - op.DUAL, vs[-1], ds[-1], b, db)
            else:
                return op.ERR_OPCODE, math.nan
    except _VMError as exc:
        return exc.status, math.nan
    except ValueError:
        # math.sin(inf) and friends
        return op.ERR_NONFINITE, math.nan
    except (IndexError, KeyError):
        return op.ERR_OPCODE, math.nan
    value = vs[-1]
    if not math.isfinite(value):
        return op.ERR_NONFINITE, value
    return op.OK, value


def eval_program(code, consts, env):
    """Evaluate bytecode on one environment; returns ``(status, value)``."""
    env = [float(e) for e in np.asarray(env, dtype=float)]
    return _run(code.tolist(), consts.tolist(), env)


def eval_batch(code, consts, envs):
    """Evaluate bytecode on each row of ``envs``; returns ``(status, values)``.

    ``status`` is the first nonzero status met (0 if all rows succeeded).
    """
    envs = np.ascontiguousarray(envs, dtype=float)
    code_l = code.tolist()
    consts_l = consts.tolist()
    out = np.empty(envs.shape[0])
    status = op.OK
    for r, row in enumerate(envs.tolist()):
        s, v = _run(code_l, consts_l, row)
        out[r] = v
        if s != op.OK and status == op.OK:
            status = s
    return status, out


def wrap_time(t, half_period):
    """Map ``t`` into ``(-k, k]`` for ``k = half_period``; identity when k <= 0."""
    if half_period <= 0.0:
        return t
    r = math.remainder(t, 2.0 * half_period)
    if r == -half_period:
        r = half_period
    return r


class _Fault(ArithmeticError):
    pass


def integrate_segment(codes, consts, code_off, const_off, n_accel, strict,
                      t0, x0, v0, t_end, rtol, atol, h0, hmax, event_tol,
                      half_period, max_steps):
    """Integrate ``x'' = a(t, x, x')`` with bytecode accelerations and guards.

    Programs ``0 .. n_accel-1`` give the acceleration components; the rest are
    guards.  Guard ``g`` fires when ``g < 0`` (``strict[g]``) or ``g <= 0``.

    Returns ``(status, event, t, x, v, a, h_next, message)`` with sample
    arrays of shape ``(n,)`` and ``(n, m)``.
    """
    m = len(x0)
    codes = np.asarray(codes, dtype=np.int32)
    consts = np.asarray(consts, dtype=float)
    progs = []
    for p in range(len(code_off) - 1):
        progs.append((codes[code_off[p]:code_off[p + 1]].tolist(),
                      consts[const_off[p]:const_off[p + 1]].tolist()))
    accel = progs[:n_accel]
    guards = progs[n_accel:]
    strict = [bool(s) for s in strict]

    def env_of(t, y):
        return [wrap_time(t, half_period)] + y.tolist()

    def fun(t, y):
        env = env_of(t, y)
        out = np.empty(2 * m)
        out[:m] = y[m:]
        for i, (c, k) in enumerate(accel):
            s, val = _run(c, k, env)
            if s != op.OK:
                raise _Fault(op.STATUS_MESSAGES.get(s, "evaluation error"))
            out[m + i] = val
        return out

    def guard(t, y):
        env = env_of(t, y)
        for g, (c, k) in enumerate(guards):
            s, val = _run(c, k, env)
            if s != op.OK:
                raise _Fault(op.STATUS_MESSAGES.get(s, "evaluation error"))
            if val < 0.0 or (val == 0.0 and not strict[g]):
                return g
        return -1

    y0 = np.concatenate([np.asarray(x0, dtype=float), np.asarray(v0, dtype=float)])
    seg = dopri_segment(fun, t0, y0, t_end, rtol, atol, h0, hmax, event_tol,
                        max_steps, guard if guards else None)
    if seg.t:
        Y = np.array(seg.y)
        Fv = np.array(seg.f)
    else:
        Y = np.empty((0, 2 * m))
        Fv = np.empty((0, 2 * m))
    return (seg.status, seg.event, np.array(seg.t), Y[:, :m].copy(), Y[:, m:].copy(),
            Fv[:, m:].copy(), seg.h_next, seg.message)
