"""Tagged forward-mode dual numbers.

A :class:`Dual` carries a value and a tangent with respect to one
infinitesimal, identified by ``tag``.  Values and tangents may themselves be
duals with a smaller tag, which gives second derivatives by nesting.  Binary
operations between duals of different tags treat the lower-tag operand as a
constant of the higher-tag one, so perturbations never get confused.

The elementary functions below accept plain floats or duals.  On floats they
check their domain and raise :class:`~diffincl.errors.DomainError` instead of
returning NaN.
"""

import math

from .errors import DomainError, NonSmoothError


class Dual:
    __slots__ = ("v", "d", "tag")

    def __init__(self, v, d=0.0, tag=0):
        self.v = v
        self.d = d
        self.tag = tag

    def __repr__(self):
        return f"Dual({self.v!r}, {self.d!r}, tag={self.tag})"

    # operator sugar; the module functions do the work
    def __add__(self, o):
        return add(self, o)

    __radd__ = __add__

    def __sub__(self, o):
        return sub(self, o)

    def __rsub__(self, o):
        return sub(o, self)

    def __mul__(self, o):
        return mul(self, o)

    __rmul__ = __mul__

    def __truediv__(self, o):
        return div(self, o)

    def __rtruediv__(self, o):
        return div(o, self)

    def __pow__(self, o):
        return power(self, o)

    def __rpow__(self, o):
        return power(o, self)

    def __neg__(self):
        return neg(self)


def _tag(a):
    return a.tag if isinstance(a, Dual) else -1


def _parts(a, tag):
    if isinstance(a, Dual) and a.tag == tag:
        return a.v, a.d
    return a, 0.0


def primal(a):
    """Strip every dual layer and return the underlying float."""
    while isinstance(a, Dual):
        a = a.v
    return a


def is_zero(a):
    if isinstance(a, Dual):
        return is_zero(a.v) and is_zero(a.d)
    return a == 0.0


def tangent(a, tag):
    """Coefficient of the infinitesimal ``tag`` in ``a``."""
    if not isinstance(a, Dual) or a.tag < tag:
        return 0.0
    if a.tag == tag:
        return a.d
    return Dual(tangent(a.v, tag), tangent(a.d, tag), a.tag)


def max_tag(values):
    return max((_tag(v) for v in values), default=-1)


def add(a, b):
    t = max(_tag(a), _tag(b))
    if t < 0:
        return a + b
    av, ad = _parts(a, t)
    bv, bd = _parts(b, t)
    return Dual(add(av, bv), add(ad, bd), t)


def sub(a, b):
    t = max(_tag(a), _tag(b))
    if t < 0:
        return a - b
    av, ad = _parts(a, t)
    bv, bd = _parts(b, t)
    return Dual(sub(av, bv), sub(ad, bd), t)


def neg(a):
    if isinstance(a, Dual):
        return Dual(neg(a.v), neg(a.d), a.tag)
    return -a


def mul(a, b):
    t = max(_tag(a), _tag(b))
    if t < 0:
        return a * b
    av, ad = _parts(a, t)
    bv, bd = _parts(b, t)
    return Dual(mul(av, bv), add(mul(av, bd), mul(ad, bv)), t)


def div(a, b):
    t = max(_tag(a), _tag(b))
    if t < 0:
        if b == 0.0:
            raise DomainError("division by zero")
        return a / b
    av, ad = _parts(a, t)
    bv, bd = _parts(b, t)
    q = div(av, bv)
    # (a/b)' = (a' - q b') / b
    return Dual(q, div(sub(ad, mul(q, bd)), bv), t)


def _pow_float(a, b):
    if a == 0.0 and b < 0.0:
        raise DomainError("zero raised to a negative power")
    if a < 0.0 and b != math.floor(b):
        raise DomainError("negative base with non-integer exponent")
    try:
        return math.pow(a, b)
    except OverflowError:
        raise DomainError("overflow in power") from None


def power(a, b):
    t = max(_tag(a), _tag(b))
    if t < 0:
        return _pow_float(a, b)
    av, ad = _parts(a, t)
    bv, bd = _parts(b, t)
    val = power(av, bv)
    d = 0.0
    if not is_zero(ad):
        d = mul(mul(bv, power(av, sub(bv, 1.0))), ad)
    if not is_zero(bd):
        d = add(d, mul(mul(val, log(av)), bd))
    return Dual(val, d, t)


def _unary(f, df):
    def op(a):
        if isinstance(a, Dual):
            return Dual(op(a.v), mul(df(a.v), a.d), a.tag)
        return f(a)

    return op


def _exp_float(a):
    try:
        return math.exp(a)
    except OverflowError:
        raise DomainError("overflow in exp") from None


def _log_float(a):
    if a <= 0.0:
        raise DomainError("log of non-positive value")
    return math.log(a)


def _sqrt_float(a):
    if a < 0.0:
        raise DomainError("sqrt of negative value")
    return math.sqrt(a)


sin = _unary(math.sin, lambda v: cos(v))
cos = _unary(math.cos, lambda v: neg(sin(v)))
tan = _unary(math.tan, lambda v: div(1.0, mul(cos(v), cos(v))))
exp = _unary(_exp_float, lambda v: exp(v))
log = _unary(_log_float, lambda v: div(1.0, v))
sqrt = _unary(_sqrt_float, lambda v: div(0.5, sqrt(v)))


def _sign_float(a):
    if a > 0.0:
        return 1.0
    if a < 0.0:
        return -1.0
    return 0.0


def absval(a, flags=None):
    if isinstance(a, Dual):
        if primal(a.v) == 0.0 and not is_zero(a.d):
            raise NonSmoothError("abs differentiated at its kink")
        return Dual(absval(a.v, flags), mul(sign(a.v, flags), a.d), a.tag)
    if a == 0.0 and flags is not None:
        flags.append("abs")
    return abs(a)


def sign(a, flags=None):
    if isinstance(a, Dual):
        if primal(a.v) == 0.0 and not is_zero(a.d):
            raise NonSmoothError("sign differentiated at its kink")
        return Dual(sign(a.v, flags), 0.0, a.tag)
    if a == 0.0 and flags is not None:
        flags.append("sign")
    return _sign_float(a)


def _select(a, b, pick_first, name, flags):
    pa, pb = primal(a), primal(b)
    if pa == pb:
        if isinstance(a, Dual) or isinstance(b, Dual):
            if not is_zero(sub(a, b)):
                raise NonSmoothError(f"{name} differentiated at a tie")
        elif flags is not None:
            flags.append(name)
        return a
    return a if pick_first(pa, pb) else b


def minimum(a, b, flags=None):
    return _select(a, b, lambda x, y: x < y, "min", flags)


def maximum(a, b, flags=None):
    return _select(a, b, lambda x, y: x > y, "max", flags)
