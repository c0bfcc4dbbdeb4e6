# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels: bytecode evaluation and the segment integrator.

Operation-for-operation mirror of ``_kernels_py`` and ``_dopri``; opcode and
status numbering follow ``opcodes.py``.
"""

from libc.math cimport sin, cos, tan, exp, log, sqrt, fabs, pow, floor, remainder, isfinite, NAN
from libc.stdlib cimport malloc, realloc, free

import numpy as np

BACKEND = "cython"

cdef enum:
    MAX_DEPTH = 256
    # opcodes
    OP_CONST = 0
    OP_VAR = 1
    OP_NEG = 2
    OP_SIN = 3
    OP_COS = 4
    OP_TAN = 5
    OP_EXP = 6
    OP_LOG = 7
    OP_SQRT = 8
    OP_ABS = 9
    OP_SIGN = 10
    OP_ADD = 11
    OP_SUB = 12
    OP_MUL = 13
    OP_DIV = 14
    OP_POW = 15
    OP_MIN = 16
    OP_MAX = 17
    OP_DUAL = 32
    OP_SEED = 60
    OP_TANGENT = 61
    # status
    ST_OK = 0
    ST_LOG = 1
    ST_SQRT = 2
    ST_DIV = 3
    ST_POW = 4
    ST_NONFINITE = 5
    ST_OPCODE = 6

cdef double EPS = 2.220446049250313e-16

_MESSAGES = {
    1: "log of non-positive value",
    2: "sqrt of negative value (or its derivative at 0)",
    3: "division by zero",
    4: "invalid power (negative base with non-integer exponent, or 0 to a negative power)",
    5: "non-finite result",
    6: "corrupt program",
}


cdef inline double _sign(double a) noexcept nogil:
    if a > 0.0:
        return 1.0
    if a < 0.0:
        return -1.0
    return 0.0


cdef inline int _pow(double a, double b, double* r) noexcept nogil:
    if a == 0.0 and b < 0.0:
        return ST_POW
    if a < 0.0 and b != floor(b):
        return ST_POW
    r[0] = pow(a, b)
    if not isfinite(r[0]) and isfinite(a) and isfinite(b):
        return ST_NONFINITE
    return ST_OK


cdef int _run(const int* code, Py_ssize_t ncode, const double* consts,
              const double* env, double* out) noexcept nogil:
    cdef double vs[MAX_DEPTH]
    cdef double ds[MAX_DEPTH]
    cdef int sp = -1
    cdef int dp = -1
    cdef Py_ssize_t i
    cdef int c, arg, st
    cdef double a, b, da, db, r, q, s
    for i in range(0, ncode, 2):
        c = code[i]
        arg = code[i + 1]
        if c == OP_CONST or c == OP_VAR:
            if sp + 1 >= MAX_DEPTH:
                return ST_OPCODE
            sp += 1
            vs[sp] = consts[arg] if c == OP_CONST else env[arg]
        elif c < OP_ADD:
            if sp < 0:
                return ST_OPCODE
            a = vs[sp]
            if c == OP_NEG:
                r = -a
            elif c == OP_SIN:
                r = sin(a)
            elif c == OP_COS:
                r = cos(a)
            elif c == OP_TAN:
                r = tan(a)
            elif c == OP_EXP:
                r = exp(a)
                if not isfinite(r) and isfinite(a):
                    return ST_NONFINITE
            elif c == OP_LOG:
                if a <= 0.0:
                    return ST_LOG
                r = log(a)
            elif c == OP_SQRT:
                if a < 0.0:
                    return ST_SQRT
                r = sqrt(a)
            elif c == OP_ABS:
                r = fabs(a)
            else:
                r = _sign(a)
            vs[sp] = r
        elif c < OP_DUAL:
            if sp < 1:
                return ST_OPCODE
            b = vs[sp]
            sp -= 1
            a = vs[sp]
            if c == OP_ADD:
                r = a + b
            elif c == OP_SUB:
                r = a - b
            elif c == OP_MUL:
                r = a * b
            elif c == OP_DIV:
                if b == 0.0:
                    return ST_DIV
                r = a / b
            elif c == OP_POW:
                st = _pow(a, b, &r)
                if st != ST_OK:
                    return st
            elif c == OP_MIN:
                r = b if b < a else a
            elif c == OP_MAX:
                r = b if b > a else a
            else:
                return ST_OPCODE
            vs[sp] = r
        elif c == OP_DUAL + OP_CONST or c == OP_DUAL + OP_VAR or c == OP_SEED:
            if sp + 1 >= MAX_DEPTH or dp + 1 >= MAX_DEPTH:
                return ST_OPCODE
            sp += 1
            dp += 1
            vs[sp] = consts[arg] if c == OP_DUAL + OP_CONST else env[arg]
            ds[dp] = 1.0 if c == OP_SEED else 0.0
        elif c == OP_TANGENT:
            if dp < 0 or sp < 0:
                return ST_OPCODE
            vs[sp] = ds[dp]
            dp -= 1
        elif c < OP_DUAL + OP_ADD:
            if sp < 0 or dp < 0:
                return ST_OPCODE
            c -= OP_DUAL
            a = vs[sp]
            da = ds[dp]
            if c == OP_NEG:
                r = -a
                db = -da
            elif c == OP_SIN:
                r = sin(a)
                db = cos(a) * da
            elif c == OP_COS:
                r = cos(a)
                db = -sin(a) * da
            elif c == OP_TAN:
                q = cos(a)
                r = tan(a)
                db = (1.0 / (q * q)) * da
            elif c == OP_EXP:
                r = exp(a)
                if not isfinite(r) and isfinite(a):
                    return ST_NONFINITE
                db = r * da
            elif c == OP_LOG:
                if a <= 0.0:
                    return ST_LOG
                r = log(a)
                db = (1.0 / a) * da
            elif c == OP_SQRT:
                if a < 0.0 or (a == 0.0 and da != 0.0):
                    return ST_SQRT
                r = sqrt(a)
                db = (0.5 / r) * da if da != 0.0 else 0.0
            elif c == OP_ABS:
                r = fabs(a)
                db = _sign(a) * da
            elif c == OP_SIGN:
                r = _sign(a)
                db = 0.0
            else:
                return ST_OPCODE
            vs[sp] = r
            ds[dp] = db
        elif c <= OP_DUAL + OP_MAX:
            if sp < 1 or dp < 1:
                return ST_OPCODE
            c -= OP_DUAL
            b = vs[sp]
            db = ds[dp]
            sp -= 1
            dp -= 1
            a = vs[sp]
            da = ds[dp]
            if c == OP_ADD:
                r = a + b
                s = da + db
            elif c == OP_SUB:
                r = a - b
                s = da - db
            elif c == OP_MUL:
                r = a * b
                s = a * db + da * b
            elif c == OP_DIV:
                if b == 0.0:
                    return ST_DIV
                r = a / b
                s = (da - r * db) / b
            elif c == OP_POW:
                st = _pow(a, b, &r)
                if st != ST_OK:
                    return st
                s = 0.0
                if da != 0.0:
                    st = _pow(a, b - 1.0, &q)
                    if st != ST_OK:
                        return st
                    s = b * q * da
                if db != 0.0:
                    if a <= 0.0:
                        return ST_LOG
                    s = s + r * log(a) * db
            elif c == OP_MIN:
                if b < a:
                    r = b
                    s = db
                else:
                    r = a
                    s = da
            else:
                if b > a:
                    r = b
                    s = db
                else:
                    r = a
                    s = da
            vs[sp] = r
            ds[dp] = s
        else:
            return ST_OPCODE
    if sp < 0:
        return ST_OPCODE
    out[0] = vs[sp]
    if not isfinite(out[0]):
        return ST_NONFINITE
    return ST_OK


def eval_program(const int[::1] code, const double[::1] consts, env):
    """Evaluate bytecode on one environment; returns ``(status, value)``."""
    cdef const double[::1] e = np.ascontiguousarray(env, dtype=np.float64)
    cdef double out = NAN
    cdef const double* cp = &consts[0] if consts.shape[0] > 0 else NULL
    cdef const double* ep = &e[0] if e.shape[0] > 0 else NULL
    cdef int st = _run(&code[0], code.shape[0], cp, ep, &out)
    return st, (out if st == ST_OK or st == ST_NONFINITE else float("nan"))


def eval_batch(const int[::1] code, const double[::1] consts, envs):
    """Evaluate bytecode on each row of ``envs``; returns ``(status, values)``."""
    cdef const double[:, ::1] E = np.ascontiguousarray(envs, dtype=np.float64)
    cdef Py_ssize_t n = E.shape[0]
    cdef Py_ssize_t w = E.shape[1]
    res = np.empty(n)
    cdef double[::1] R = res
    cdef const double* cp = &consts[0] if consts.shape[0] > 0 else NULL
    cdef int status = ST_OK
    cdef int st
    cdef Py_ssize_t r
    cdef double dummy = 0.0
    with nogil:
        for r in range(n):
            st = _run(&code[0], code.shape[0], cp, &E[r, 0] if w > 0 else &dummy, &R[r])
            if st != ST_OK:
                if st != ST_NONFINITE:
                    R[r] = NAN
                if status == ST_OK:
                    status = st
    return status, res


def wrap_time(double t, double half_period):
    """Map ``t`` into ``(-k, k]`` for ``k = half_period``; identity when k <= 0."""
    return _wrap(t, half_period)


cdef inline double _wrap(double t, double k) noexcept nogil:
    cdef double r
    if k <= 0.0:
        return t
    r = remainder(t, 2.0 * k)
    if r == -k:
        r = k
    return r


# ---------------------------------------------------------------------------
# segment integrator
# ---------------------------------------------------------------------------

cdef struct Ctx:
    const int* codes
    const double* consts
    const Py_ssize_t* coff
    const Py_ssize_t* koff
    const signed char* strict
    int n_accel
    int n_guard
    int m
    int n
    double half
    double* env
    int fault


cdef int _fun(Ctx* c, double t, const double* y, double* out) noexcept nogil:
    cdef int i, st
    cdef int m = c.m
    c.env[0] = _wrap(t, c.half)
    for i in range(2 * m):
        c.env[1 + i] = y[i]
    for i in range(m):
        out[i] = y[m + i]
    for i in range(c.n_accel):
        st = _run(c.codes + c.coff[i], c.coff[i + 1] - c.coff[i],
                  c.consts + c.koff[i], c.env, &out[m + i])
        if st != ST_OK:
            c.fault = st
            return st
    return ST_OK


cdef int _guard(Ctx* c, double t, const double* y) noexcept nogil:
    # index of the first fired guard, -1 if none, -2 on evaluation fault
    cdef int g, p, st
    cdef double val
    c.env[0] = _wrap(t, c.half)
    for g in range(2 * c.m):
        c.env[1 + g] = y[g]
    for g in range(c.n_guard):
        p = c.n_accel + g
        st = _run(c.codes + c.coff[p], c.coff[p + 1] - c.coff[p],
                  c.consts + c.koff[p], c.env, &val)
        if st != ST_OK:
            c.fault = st
            return -2
        if val < 0.0 or (val == 0.0 and not c.strict[g]):
            return g
    return -1


cdef inline double _norm(const double* z, int n) noexcept nogil:
    cdef double s = 0.0
    cdef int i
    for i in range(n):
        s += z[i] * z[i]
    return sqrt(s / n)


# tableau
cdef double C2 = 1.0 / 5, C3 = 3.0 / 10, C4 = 4.0 / 5, C5 = 8.0 / 9
cdef double A21 = 1.0 / 5
cdef double A31 = 3.0 / 40, A32 = 9.0 / 40
cdef double A41 = 44.0 / 45, A42 = -56.0 / 15, A43 = 32.0 / 9
cdef double A51 = 19372.0 / 6561, A52 = -25360.0 / 2187, A53 = 64448.0 / 6561, A54 = -212.0 / 729
cdef double A61 = 9017.0 / 3168, A62 = -355.0 / 33, A63 = 46732.0 / 5247, A64 = 49.0 / 176, A65 = -5103.0 / 18656
cdef double B1 = 35.0 / 384, B3 = 500.0 / 1113, B4 = 125.0 / 192, B5 = -2187.0 / 6784, B6 = 11.0 / 84
cdef double E1 = 71.0 / 57600, E3 = -71.0 / 16695, E4 = 71.0 / 1920, E5 = -17253.0 / 339200, E6 = 22.0 / 525, E7 = -1.0 / 40


cdef int _rk_step(Ctx* c, double t, const double* y, const double* k1, double h,
                  double* ynew, double* k2, double* k3, double* k4, double* k5,
                  double* k6, double* tmp) noexcept nogil:
    cdef int i
    cdef int n = c.n
    for i in range(n):
        tmp[i] = y[i] + h * (A21 * k1[i])
    if _fun(c, t + C2 * h, tmp, k2):
        return 1
    for i in range(n):
        tmp[i] = y[i] + h * (A31 * k1[i] + A32 * k2[i])
    if _fun(c, t + C3 * h, tmp, k3):
        return 1
    for i in range(n):
        tmp[i] = y[i] + h * (A41 * k1[i] + A42 * k2[i] + A43 * k3[i])
    if _fun(c, t + C4 * h, tmp, k4):
        return 1
    for i in range(n):
        tmp[i] = y[i] + h * (A51 * k1[i] + A52 * k2[i] + A53 * k3[i] + A54 * k4[i])
    if _fun(c, t + C5 * h, tmp, k5):
        return 1
    for i in range(n):
        tmp[i] = y[i] + h * (A61 * k1[i] + A62 * k2[i] + A63 * k3[i] + A64 * k4[i] + A65 * k5[i])
    if _fun(c, t + h, tmp, k6):
        return 1
    for i in range(n):
        ynew[i] = y[i] + h * (B1 * k1[i] + B3 * k3[i] + B4 * k4[i] + B5 * k5[i] + B6 * k6[i])
    return 0


cdef struct Buf:
    double* t
    double* y
    double* f
    Py_ssize_t n
    Py_ssize_t cap
    int w


cdef int _push(Buf* b, double t, const double* y, const double* f) noexcept nogil:
    cdef Py_ssize_t newcap
    cdef void* p
    cdef int i
    if b.n == b.cap:
        newcap = 2 * b.cap if b.cap > 0 else 256
        p = realloc(b.t, newcap * sizeof(double))
        if p == NULL:
            return 1
        b.t = <double*>p
        p = realloc(b.y, newcap * b.w * sizeof(double))
        if p == NULL:
            return 1
        b.y = <double*>p
        p = realloc(b.f, newcap * b.w * sizeof(double))
        if p == NULL:
            return 1
        b.f = <double*>p
        b.cap = newcap
    b.t[b.n] = t
    for i in range(b.w):
        b.y[b.n * b.w + i] = y[i]
        b.f[b.n * b.w + i] = f[i]
    b.n += 1
    return 0


cdef double _initial_step(Ctx* c, double t0, const double* y0, const double* f0,
                          double rtol, double atol, double hmax, double* tmp,
                          double* f1, double* sc, int* st) noexcept nogil:
    cdef int i
    cdef int n = c.n
    cdef double d0, d1, d2, h0, h1, dm
    for i in range(n):
        sc[i] = atol + rtol * fabs(y0[i])
    for i in range(n):
        tmp[i] = y0[i] / sc[i]
    d0 = _norm(tmp, n)
    for i in range(n):
        tmp[i] = f0[i] / sc[i]
    d1 = _norm(tmp, n)
    if d0 < 1e-5 or d1 < 1e-5:
        h0 = 1e-6
    else:
        h0 = 0.01 * d0 / d1
    if hmax < h0:
        h0 = hmax
    for i in range(n):
        tmp[i] = y0[i] + h0 * f0[i]
    if _fun(c, t0 + h0, tmp, f1):
        st[0] = 1
        return 0.0
    for i in range(n):
        tmp[i] = (f1[i] - f0[i]) / sc[i]
    d2 = _norm(tmp, n) / h0
    dm = d2 if d2 > d1 else d1
    if dm <= 1e-15:
        h1 = h0 * 1e-3
        if h1 < 1e-6:
            h1 = 1e-6
    else:
        h1 = pow(0.01 / dm, 0.2)
    h0 = 100.0 * h0
    if h1 < h0:
        h0 = h1
    if hmax < h0:
        h0 = hmax
    return h0


def integrate_segment(const int[::1] codes, const double[::1] consts,
                      const Py_ssize_t[::1] code_off, const Py_ssize_t[::1] const_off,
                      int n_accel, strict, double t0, x0, v0, double t_end,
                      double rtol, double atol, double h0, double hmax,
                      double event_tol, double half_period, long max_steps):
    """Integrate ``x'' = a(t, x, x')`` with bytecode accelerations and guards.

    See ``_kernels_py.integrate_segment`` for the contract.
    """
    x0a = np.ascontiguousarray(x0, dtype=np.float64)
    v0a = np.ascontiguousarray(v0, dtype=np.float64)
    cdef int m = x0a.shape[0]
    cdef int n = 2 * m
    strict_a = np.ascontiguousarray(np.asarray(strict, dtype=np.int8).reshape(-1))
    cdef const signed char[::1] strict_v = strict_a
    cdef double dummy_c = 0.0
    cdef signed char dummy_s = 0
    cdef Ctx c
    c.codes = &codes[0]
    c.consts = &consts[0] if consts.shape[0] > 0 else &dummy_c
    c.coff = &code_off[0]
    c.koff = &const_off[0]
    c.strict = &strict_v[0] if strict_v.shape[0] > 0 else &dummy_s
    c.n_accel = n_accel
    c.n_guard = code_off.shape[0] - 1 - n_accel
    c.m = m
    c.n = n
    c.half = half_period
    c.fault = ST_OK

    work_a = np.zeros(13 * n + 1 + n + 1)
    cdef double[::1] work = work_a
    cdef double* W = &work[0]
    c.env = W
    cdef double* y = W + (n + 1)
    cdef double* k1 = y + n
    cdef double* k2 = k1 + n
    cdef double* k3 = k2 + n
    cdef double* k4 = k3 + n
    cdef double* k5 = k4 + n
    cdef double* k6 = k5 + n
    cdef double* k7 = k6 + n
    cdef double* ynew = k7 + n
    cdef double* tmp = ynew + n
    cdef double* sc = tmp + n
    cdef double* ymid = sc + n
    cdef double* yhi = ymid + n

    cdef Buf buf
    buf.t = NULL
    buf.y = NULL
    buf.f = NULL
    buf.n = 0
    buf.cap = 0
    buf.w = n

    cdef int i, hit, g, st = 0, status = 0, event = -1, last, rejected = 0, have_hi
    cdef long steps = 0
    cdef double t = t0, h, hs, t_new, err, fac, h_next = h0, lo, hi, mid, t_ev, ax, bx
    cdef int oom = 0
    message = ""

    for i in range(m):
        y[i] = x0a[i]
        y[m + i] = v0a[i]

    with nogil:
        if _fun(&c, t, y, k1):
            status = 3
        else:
            oom |= _push(&buf, t, y, k1)
            if t >= t_end:
                h_next = h0
            else:
                if h0 > 0.0:
                    h = h0
                else:
                    h = _initial_step(&c, t, y, k1, rtol, atol, hmax, tmp, k2, sc, &st)
                if st:
                    status = 3
                else:
                    if hmax < h:
                        h = hmax
                    while True:
                        if steps >= max_steps:
                            status = 4
                            h_next = h
                            break
                        if h < 10.0 * EPS * (fabs(t) if fabs(t) > 1.0 else 1.0):
                            status = 2
                            h_next = h
                            break
                        last = t + h >= t_end
                        hs = t_end - t if last else h
                        if _rk_step(&c, t, y, k1, hs, ynew, k2, k3, k4, k5, k6, tmp):
                            status = 3
                            h_next = h
                            break
                        t_new = t_end if last else t + hs
                        if _fun(&c, t_new, ynew, k7):
                            status = 3
                            h_next = h
                            break
                        for i in range(n):
                            ax = fabs(y[i])
                            bx = fabs(ynew[i])
                            sc[i] = atol + rtol * (bx if bx > ax else ax)
                            tmp[i] = hs * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i]
                                           + E6 * k6[i] + E7 * k7[i]) / sc[i]
                        err = _norm(tmp, n)
                        steps += 1
                        if err > 1.0:
                            fac = 0.9 * pow(err, -0.2)
                            if fac < 0.2:
                                fac = 0.2
                            h = hs * (fac if fac < 1.0 else 1.0)
                            rejected = 1
                            continue
                        if err == 0.0:
                            fac = 5.0
                        else:
                            fac = 0.9 * pow(err, -0.2)
                            if fac < 0.2:
                                fac = 0.2
                            if fac > 5.0:
                                fac = 5.0
                        if rejected and fac > 1.0:
                            fac = 1.0
                        rejected = 0
                        h_next = hs * fac
                        if hmax < h_next:
                            h_next = hmax
                        if c.n_guard > 0:
                            hit = _guard(&c, t_new, ynew)
                            if hit == -2:
                                status = 3
                                h_next = h
                                break
                            if hit >= 0:
                                # bisection on genuine sub-steps from the step start
                                lo = 0.0
                                hi = hs
                                have_hi = 0
                                while hi - lo > event_tol:
                                    mid = 0.5 * (lo + hi)
                                    if _rk_step(&c, t, y, k1, mid, ymid, k2, k3, k4, k5, k6, tmp):
                                        hit = -2
                                        break
                                    g = _guard(&c, t + mid, ymid)
                                    if g == -2:
                                        hit = -2
                                        break
                                    if g >= 0:
                                        hi = mid
                                        hit = g
                                        have_hi = 1
                                        for i in range(n):
                                            yhi[i] = ymid[i]
                                    else:
                                        lo = mid
                                if hit == -2:
                                    status = 3
                                    h_next = h
                                    break
                                if not have_hi:
                                    if _rk_step(&c, t, y, k1, hi, yhi, k2, k3, k4, k5, k6, tmp):
                                        status = 3
                                        h_next = h
                                        break
                                t_ev = t + hi
                                if _fun(&c, t_ev, yhi, k2):
                                    status = 3
                                    h_next = h
                                    break
                                oom |= _push(&buf, t_ev, yhi, k2)
                                status = 1
                                event = hit
                                break
                        t = t_new
                        for i in range(n):
                            y[i] = ynew[i]
                            k1[i] = k7[i]
                        oom |= _push(&buf, t, y, k1)
                        if last:
                            break
                        h = h_next

    if status == 2:
        message = f"step size underflow at t={t!r} (h={h_next!r})"
    elif status == 3:
        message = _MESSAGES.get(c.fault, "evaluation error")
    elif status == 4:
        message = f"step limit {max_steps} reached at t={t!r}"

    cdef Py_ssize_t ns = buf.n
    T = np.empty(ns)
    Y = np.empty((ns, n))
    F = np.empty((ns, n))
    cdef double[::1] Tv = T
    cdef double[:, ::1] Yv = Y
    cdef double[:, ::1] Fv = F
    cdef Py_ssize_t r
    for r in range(ns):
        Tv[r] = buf.t[r]
        for i in range(n):
            Yv[r, i] = buf.y[r * n + i]
            Fv[r, i] = buf.f[r * n + i]
    free(buf.t)
    free(buf.y)
    free(buf.f)
    if oom:
        raise MemoryError("trajectory buffer allocation failed")
    return (status, event, T, Y[:, :m].copy(), Y[:, m:].copy(), F[:, m:].copy(),
            h_next, message)
