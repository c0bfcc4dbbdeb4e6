"""Scalar expression language: parsing, printing, evaluation, AD and compilation.

Grammar (loosest to tightest)::

    expr   := expr ('+'|'-') expr            left associative
            | expr ('*'|'/') expr            left associative
            | '-' expr                       unary minus
            | expr '^' expr                  right associative, binds tighter than unary minus
            | NUMBER | NAME | 'pi'
            | FUNC '(' expr ')'              sin cos tan exp log sqrt abs sign
            | ('min'|'max') '(' expr ',' expr ')'
            | 'diff' '(' expr ',' NAME ')'   forward-mode derivative
            | '(' expr ')'

so ``-x^2`` is ``-(x^2)`` and ``2^3^2`` is ``2^(3^2)``.  ``**`` is accepted as
a synonym for ``^``.
"""

import math
import re
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from . import dual as D
from . import opcodes as op
from .errors import ParseError, UnboundVariableError, UnknownFunctionError, ExprError, DomainError

UNARY_FUNCS = ("sin", "cos", "tan", "exp", "log", "sqrt", "abs", "sign")
BINARY_FUNCS = ("min", "max")


# ---------------------------------------------------------------------------
# AST
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Const:
    value: float


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class Unary:
    op: str  # neg or a function name
    arg: object


@dataclass(frozen=True)
class Binary:
    op: str  # + - * / ^
    left: object
    right: object


@dataclass(frozen=True)
class Call:
    func: str  # min | max
    args: tuple


@dataclass(frozen=True)
class Diff:
    arg: object
    wrt: str


def _free(node, acc):
    if isinstance(node, Var):
        acc.add(node.name)
    elif isinstance(node, Unary):
        _free(node.arg, acc)
    elif isinstance(node, Binary):
        _free(node.left, acc)
        _free(node.right, acc)
    elif isinstance(node, Call):
        for a in node.args:
            _free(a, acc)
    elif isinstance(node, Diff):
        _free(node.arg, acc)
        acc.add(node.wrt)
    return acc


class Expr:
    """An immutable parsed expression.

    ``free_vars`` lists every variable the tree needs bound.
    """

    __slots__ = ("root", "free_vars", "_source")

    def __init__(self, root, source=None):
        self.root = root
        self.free_vars = frozenset(_free(root, set()))
        self._source = source

    def __str__(self):
        return to_source(self)

    def __repr__(self):
        return f"Expr({to_source(self)!r})"

    def __eq__(self, other):
        return isinstance(other, Expr) and self.root == other.root

    def __hash__(self):
        return hash(self.root)

    def __call__(self, **bindings):
        return evaluate(self, bindings)

    def rename(self, mapping: Mapping[str, str]) -> "Expr":
        return Expr(_rename(self.root, mapping))

    @property
    def source(self):
        return self._source if self._source is not None else to_source(self)


def _rename(node, mapping):
    if isinstance(node, Var):
        return Var(mapping.get(node.name, node.name))
    if isinstance(node, Unary):
        return Unary(node.op, _rename(node.arg, mapping))
    if isinstance(node, Binary):
        return Binary(node.op, _rename(node.left, mapping), _rename(node.right, mapping))
    if isinstance(node, Call):
        return Call(node.func, tuple(_rename(a, mapping) for a in node.args))
    if isinstance(node, Diff):
        return Diff(_rename(node.arg, mapping), mapping.get(node.wrt, node.wrt))
    return node


# ---------------------------------------------------------------------------
# tokenizer and Pratt parser
# ---------------------------------------------------------------------------

_TOKEN = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)
  | (?P<name>[A-Za-z_][A-Za-z_0-9]*)
  | (?P<op>\*\*|[-+*/^(),])
    """,
    re.VERBOSE,
)


@dataclass(frozen=True)
class _Tok:
    kind: str  # num, name, op, end
    text: str
    offset: int


def tokenize(source: str):
    toks = []
    pos = 0
    n = len(source)
    while pos < n:
        m = _TOKEN.match(source, pos)
        if m is None:
            raise ParseError(f"unexpected character {source[pos]!r}", _byte_offset(source, pos))
        kind = m.lastgroup
        if kind != "ws":
            text = m.group()
            if text == "**":
                text = "^"
            toks.append(_Tok(kind, text, _byte_offset(source, pos)))
        pos = m.end()
    toks.append(_Tok("end", "", _byte_offset(source, n)))
    return toks


def _byte_offset(source, index):
    return len(source[:index].encode("utf-8"))


# binding powers
_BP = {"+": 10, "-": 10, "*": 20, "/": 20, "^": 30}
_UNARY_BP = 25


class _Parser:
    def __init__(self, source):
        self.toks = tokenize(source)
        self.i = 0

    def peek(self):
        return self.toks[self.i]

    def next(self):
        tok = self.toks[self.i]
        self.i += 1
        return tok

    def expect(self, text):
        tok = self.next()
        if tok.text != text or tok.kind == "end":
            what = "end of input" if tok.kind == "end" else repr(tok.text)
            raise ParseError(f"expected {text!r}, found {what}", tok.offset)
        return tok

    def parse(self):
        if self.peek().kind == "end":
            raise ParseError("empty expression", 0)
        node = self.expr(0)
        tok = self.peek()
        if tok.kind != "end":
            raise ParseError(f"unexpected {tok.text!r}", tok.offset)
        return node

    def expr(self, rbp):
        left = self.nud(self.next())
        while True:
            tok = self.peek()
            if tok.kind != "op" or tok.text not in _BP:
                break
            lbp = _BP[tok.text]
            if lbp <= rbp:
                break
            self.next()
            # '^' is right associative
            right = self.expr(lbp - 1 if tok.text == "^" else lbp)
            left = Binary(tok.text, left, right)
        return left

    def nud(self, tok):
        if tok.kind == "num":
            return Const(float(tok.text))
        if tok.kind == "op" and tok.text == "-":
            return Unary("neg", self.expr(_UNARY_BP))
        if tok.kind == "op" and tok.text == "+":
            return self.expr(_UNARY_BP)
        if tok.kind == "op" and tok.text == "(":
            node = self.expr(0)
            self.expect(")")
            return node
        if tok.kind == "name":
            if self.peek().text == "(" and self.peek().kind == "op":
                return self.call(tok)
            if tok.text == "pi":
                return Const(math.pi)
            if tok.text in UNARY_FUNCS or tok.text in BINARY_FUNCS or tok.text == "diff":
                raise ParseError(f"function {tok.text!r} used without arguments", tok.offset)
            return Var(tok.text)
        if tok.kind == "end":
            raise ParseError("unexpected end of input", tok.offset)
        raise ParseError(f"unexpected {tok.text!r}", tok.offset)

    def call(self, name_tok):
        name = name_tok.text
        self.expect("(")
        if name in UNARY_FUNCS:
            arg = self.expr(0)
            self.expect(")")
            return Unary(name, arg)
        if name in BINARY_FUNCS:
            a = self.expr(0)
            self.expect(",")
            b = self.expr(0)
            self.expect(")")
            return Call(name, (a, b))
        if name == "diff":
            arg = self.expr(0)
            self.expect(",")
            var = self.next()
            if var.kind != "name":
                raise ParseError("diff() expects a variable name as second argument", var.offset)
            self.expect(")")
            return Diff(arg, var.text)
        raise UnknownFunctionError(f"unknown function {name!r}", name_tok.offset)


def parse(source: str) -> Expr:
    """Parse expression text into an :class:`Expr`.

    Raises
    ------
    ParseError
        On malformed input; ``offset`` points at the offending byte.
    UnknownFunctionError
        On a call to a function the language does not define.
    """
    if not isinstance(source, str):
        raise TypeError("expression source must be text")
    return Expr(_Parser(source).parse(), source)


def as_expr(e) -> Expr:
    if isinstance(e, Expr):
        return e
    if isinstance(e, (int, float)):
        return Expr(Const(float(e)))
    return parse(e)


# ---------------------------------------------------------------------------
# printing
# ---------------------------------------------------------------------------

def to_source(e) -> str:
    """Fully parenthesised text that parses back to an equivalent tree."""
    return _src(e.root if isinstance(e, Expr) else e)


def _src(node):
    if isinstance(node, Const):
        v = node.value
        if math.copysign(1.0, v) < 0:
            return f"(-{-v!r})"
        return repr(v)
    if isinstance(node, Var):
        return node.name
    if isinstance(node, Unary):
        if node.op == "neg":
            return f"(-{_src(node.arg)})"
        return f"{node.op}({_src(node.arg)})"
    if isinstance(node, Binary):
        return f"({_src(node.left)} {node.op} {_src(node.right)})"
    if isinstance(node, Call):
        return f"{node.func}({_src(node.args[0])}, {_src(node.args[1])})"
    if isinstance(node, Diff):
        return f"diff({_src(node.arg)}, {node.wrt})"
    raise TypeError(f"not an expression node: {node!r}")


# ---------------------------------------------------------------------------
# tree evaluation (floats or duals)
# ---------------------------------------------------------------------------

_UNARY_IMPL = {
    "neg": D.neg, "sin": D.sin, "cos": D.cos, "tan": D.tan, "exp": D.exp,
    "log": D.log, "sqrt": D.sqrt,
}
_BINARY_IMPL = {"+": D.add, "-": D.sub, "*": D.mul, "/": D.div, "^": D.power}


def _ev(node, env, flags):
    if isinstance(node, Const):
        return node.value
    if isinstance(node, Var):
        try:
            return env[node.name]
        except KeyError:
            raise UnboundVariableError(node.name) from None
    if isinstance(node, Binary):
        return _BINARY_IMPL[node.op](_ev(node.left, env, flags), _ev(node.right, env, flags))
    if isinstance(node, Unary):
        a = _ev(node.arg, env, flags)
        if node.op == "abs":
            return D.absval(a, flags)
        if node.op == "sign":
            return D.sign(a, flags)
        return _UNARY_IMPL[node.op](a)
    if isinstance(node, Call):
        a = _ev(node.args[0], env, flags)
        b = _ev(node.args[1], env, flags)
        return (D.minimum if node.func == "min" else D.maximum)(a, b, flags)
    if isinstance(node, Diff):
        if node.wrt not in env:
            raise UnboundVariableError(node.wrt)
        tag = D.max_tag(env.values()) + 1
        inner = dict(env)
        inner[node.wrt] = D.Dual(env[node.wrt], 1.0, tag)
        return D.tangent(_ev(node.arg, inner, flags), tag)
    raise TypeError(f"not an expression node: {node!r}")


def _check_finite(value):
    p = D.primal(value)
    if not math.isfinite(p):
        raise DomainError("non-finite result")
    return value


def evaluate(e, bindings: Mapping[str, float]) -> float:
    """Evaluate in IEEE double precision.

    ``sign(0)`` evaluates to 0; use :func:`evaluate_flagged` to learn whether
    a kink of abs/sign/min/max was hit.
    """
    return float(_check_finite(_ev(as_expr(e).root, bindings, None)))


def evaluate_flagged(e, bindings):
    """Return ``(value, nonsmooth)`` where ``nonsmooth`` reports a kink hit."""
    flags = []
    value = float(_check_finite(_ev(as_expr(e).root, bindings, flags)))
    return value, bool(flags)


def differentiate(e, wrt: str, point: Mapping[str, float], order: int = 1) -> float:
    """First or second partial derivative by (nested) forward-mode duals.

    Raises :class:`~diffincl.errors.NonSmoothError` when the derivative passes
    through a kink of abs/sign (or a min/max tie) at ``point``.
    """
    e = as_expr(e)
    if wrt not in point:
        if wrt in e.free_vars:
            raise UnboundVariableError(wrt)
        return 0.0
    env = dict(point)
    base = D.max_tag(env.values()) + 1
    if order == 1:
        env[wrt] = D.Dual(env[wrt], 1.0, base)
        r = _check_finite(_ev(e.root, env, None))
        return float(D.primal(D.tangent(r, base)))
    if order == 2:
        env[wrt] = D.Dual(D.Dual(env[wrt], 1.0, base), 1.0, base + 1)
        r = _check_finite(_ev(e.root, env, None))
        return float(D.primal(D.tangent(D.tangent(r, base + 1), base)))
    raise ValueError("order must be 1 or 2")


def gradient(e, names, point) -> np.ndarray:
    e = as_expr(e)
    return np.array([differentiate(e, n, point, 1) for n in names])


def hessian(e, names, point) -> np.ndarray:
    """Matrix of second partials; mixed entries seed two nested infinitesimals."""
    e = as_expr(e)
    names = list(names)
    n = len(names)
    base = D.max_tag(point.values()) + 1
    H = np.empty((n, n))
    for i in range(n):
        for j in range(i, n):
            env = dict(point)
            for k, name in enumerate(names):
                inner = D.Dual(env[name], 1.0 if k == i else 0.0, base)
                env[name] = D.Dual(inner, 1.0 if k == j else 0.0, base + 1)
            r = _check_finite(_ev(e.root, env, None))
            H[i, j] = H[j, i] = float(D.primal(D.tangent(D.tangent(r, base + 1), base)))
    return H


# ---------------------------------------------------------------------------
# compilation to bytecode
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Program:
    """Bytecode for one expression over a fixed variable layout."""

    code: np.ndarray  # int32, (opcode, operand) pairs
    consts: np.ndarray  # float64
    nslots: int
    depth: int
    source: str

    def __call__(self, env):
        from . import kernels

        return kernels.eval_program(self, env)


MAX_DEPTH = 256


def compile_expr(e, slots: Mapping[str, int]) -> Program:
    """Compile to stack bytecode; ``slots`` maps variable names to env indices.

    ``diff`` bodies are emitted as dual opcodes.  Nested ``diff`` is not
    supported in compiled form.
    """
    e = as_expr(e)
    missing = e.free_vars - set(slots)
    if missing:
        raise UnboundVariableError(sorted(missing)[0])
    code = []
    consts = []
    depth = [0, 0]

    def push(n=1):
        depth[0] += n
        depth[1] = max(depth[1], depth[0])

    def emit(node, seed):
        # seed is None outside diff bodies, else the differentiation variable
        dual = 0 if seed is None else op.DUAL
        if isinstance(node, Const):
            consts.append(node.value)
            code.extend((op.CONST + dual, len(consts) - 1))
            push()
        elif isinstance(node, Var):
            if seed is not None and node.name == seed:
                code.extend((op.SEED, slots[node.name]))
            else:
                code.extend((op.VAR + dual, slots[node.name]))
            push()
        elif isinstance(node, Unary):
            emit(node.arg, seed)
            code.extend((op.UNARY[node.op] + dual, 0))
        elif isinstance(node, Binary):
            emit(node.left, seed)
            emit(node.right, seed)
            code.extend((op.BINARY[node.op] + dual, 0))
            push(-1)
        elif isinstance(node, Call):
            emit(node.args[0], seed)
            emit(node.args[1], seed)
            code.extend((op.BINARY[node.func] + dual, 0))
            push(-1)
        elif isinstance(node, Diff):
            if seed is not None:
                raise ExprError("nested diff() is not supported in compiled expressions")
            emit(node.arg, node.wrt)
            code.extend((op.TANGENT, 0))
        else:
            raise TypeError(f"not an expression node: {node!r}")

    emit(e.root, None)
    if depth[1] > MAX_DEPTH:
        raise ExprError(f"expression too deep to compile (stack {depth[1]} > {MAX_DEPTH})")
    return Program(
        code=np.asarray(code, dtype=np.int32),
        consts=np.asarray(consts, dtype=np.float64),
        nslots=max(slots.values(), default=-1) + 1,
        depth=depth[1],
        source=to_source(e),
    )
