import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from diffincl import kernels
from diffincl.errors import (DomainError, ExprError, NonSmoothError, ParseError,
                             UnboundVariableError, UnknownFunctionError)
from diffincl.exprdsl import (Binary, Const, Unary, Var, compile_expr, differentiate, evaluate,
                              evaluate_flagged, gradient, hessian, parse, to_source)


class TestParse:
    def test_sin_shift(self):
        assert evaluate(parse("sin(x+0.1)"), {"x": 0.0}) == 0.09983341664682815

    def test_identity(self):
        e = parse("x")
        assert e.free_vars == {"x"}
        assert evaluate(e, {"x": 3.0}) == 3.0

    def test_dangling_operator_offset(self):
        with pytest.raises(ParseError) as exc:
            parse("x +")
        assert exc.value.offset == 3

    def test_bad_character_offset(self):
        with pytest.raises(ParseError) as exc:
            parse("x + é")
        assert exc.value.offset == 4

    def test_unknown_function(self):
        with pytest.raises(UnknownFunctionError) as exc:
            parse("1 + foo(x)")
        assert exc.value.offset == 4

    @pytest.mark.parametrize("src", ["", "   ", "(x", "x)", "2 3", "sin", "min(x)", "1..2"])
    def test_malformed(self, src):
        with pytest.raises(ParseError):
            parse(src)

    @pytest.mark.parametrize("src, value", [
        ("2^3", 8.0),
        ("2^3^2", 512.0),
        ("-2^2", -4.0),
        ("2*-3", -6.0),
        ("8/2/2", 2.0),
        ("1-2-3", -4.0),
        ("2**3", 8.0),
        ("1e-3*1E3", 1.0),
        ("max(1, min(2, 3))", 2.0),
        ("abs(-2) + sign(-3)", 1.0),
        ("pi", math.pi),
    ])
    def test_precedence(self, src, value):
        assert evaluate(parse(src), {}) == value

    def test_whitespace_insensitive(self):
        assert parse("sin( x )*2") == parse("sin(x)*2")

    def test_free_vars(self):
        assert parse("psi^2 + sin(t) * pi").free_vars == {"psi", "t"}


class TestEvaluate:
    def test_psi_squared(self):
        assert evaluate(parse("psi^2"), {"psi": 0.5}) == 0.25

    @pytest.mark.parametrize("src, env", [("1/x", {"x": 0.0}), ("log(x)", {"x": -1.0}),
                                          ("sqrt(x)", {"x": -1.0}), ("exp(x)", {"x": 1e6})])
    def test_domain_errors(self, src, env):
        with pytest.raises(DomainError):
            evaluate(parse(src), env)

    def test_unbound(self):
        with pytest.raises(UnboundVariableError):
            evaluate(parse("x + y"), {"x": 1.0})

    def test_sign_zero_flagged(self):
        value, nonsmooth = evaluate_flagged(parse("sign(x)"), {"x": 0.0})
        assert value == 0.0 and nonsmooth
        assert not evaluate_flagged(parse("sign(x)"), {"x": 1.0})[1]

    def test_deterministic(self):
        e = parse("sin(x)*exp(-x^2)/(1+x^2)")
        vals = {evaluate(e, {"x": 0.3}) for _ in range(5)}
        assert len(vals) == 1


class TestDifferentiate:
    def test_square(self):
        assert differentiate(parse("x^2"), "x", {"x": 3.0}) == 6.0

    @pytest.mark.parametrize("psi", [-3.0, 0.0, 0.5, 7.25])
    def test_second_derivative_exact(self, psi):
        assert differentiate(parse("psi^2"), "psi", {"psi": psi}, order=2) == 2.0

    def test_sin_derivative(self):
        d = differentiate(parse("sin(x)"), "x", {"x": 0.4})
        assert d == pytest.approx(0.9210609940028851, abs=1e-15)
        f = lambda x: math.sin(x)
        fd = (f(0.4 + 1e-6) - f(0.4 - 1e-6)) / 2e-6
        assert abs(d - fd) < 1e-8

    @pytest.mark.parametrize("n", range(0, 7))
    def test_power_second_derivative(self, n):
        d2 = differentiate(parse(f"x^{n}"), "x", {"x": 2.0}, order=2)
        assert d2 == n * (n - 1) * 2.0 ** (n - 2)

    def test_kink(self):
        with pytest.raises(NonSmoothError):
            differentiate(parse("abs(x)"), "x", {"x": 0.0})
        assert differentiate(parse("abs(x)"), "x", {"x": -2.0}) == -1.0

    def test_gradient_hessian(self):
        e = parse("x1^2 + x2^4 + x1*x2")
        p = {"x1": 1.0, "x2": 2.0}
        np.testing.assert_array_equal(gradient(e, ["x1", "x2"], p), [4.0, 33.0])
        np.testing.assert_array_equal(hessian(e, ["x1", "x2"], p), [[2.0, 1.0], [1.0, 48.0]])

    def test_diff_node(self):
        e = parse("diff(sin(t)*x, t)")
        assert evaluate(e, {"t": 0.0, "x": 2.0}) == 2.0
        # derivative through an inner diff
        assert differentiate(e, "t", {"t": 0.0, "x": 1.0}) == 0.0
        assert differentiate(e, "x", {"t": 0.0, "x": 1.0}) == 1.0


# random expression corpus ------------------------------------------------

_SAFE_UNARY = ["sin", "cos", "exp", "neg"]


def _tree(rng, depth):
    if depth == 0 or rng.random() < 0.25:
        r = rng.random()
        if r < 0.5:
            return Var(rng.choice(["x", "y"]))
        return Const(float(np.round(rng.uniform(-2, 2), 3)))
    k = rng.random()
    if k < 0.35:
        return Unary(rng.choice(_SAFE_UNARY), _tree(rng, depth - 1))
    if k < 0.45:
        # bounded-away-from-zero arguments keep log and sqrt smooth
        inner = Binary("+", Const(2.0), Unary("sin", _tree(rng, depth - 1)))
        return Unary(rng.choice(["log", "sqrt"]), inner)
    if k < 0.55:
        den = Binary("+", Const(1.5), Unary("cos", _tree(rng, depth - 1)))
        return Binary("/", _tree(rng, depth - 1), den)
    if k < 0.6:
        return Binary("^", _tree(rng, depth - 1), Const(float(rng.integers(0, 4))))
    return Binary(rng.choice(["+", "-", "*"]), _tree(rng, depth - 1), _tree(rng, depth - 1))


def _corpus(n=30, seed=7):
    from diffincl.exprdsl import Expr
    rng = np.random.default_rng(seed)
    out = []
    while len(out) < n:
        e = Expr(_tree(rng, 6))
        try:
            if abs(evaluate(e, {"x": 0.3, "y": -0.2})) < 1e6:
                out.append(e)
        except DomainError:
            continue
    return out


CORPUS = _corpus()


@pytest.mark.parametrize("i", range(len(CORPUS)))
def test_ad_matches_central_difference(i):
    e = CORPUS[i]
    rng = np.random.default_rng(100 + i)
    h = 1e-6
    for _ in range(10):
        p = {"x": float(rng.uniform(-1, 1)), "y": float(rng.uniform(-1, 1))}
        for w in ("x", "y"):
            d = differentiate(e, w, p)
            plus, minus = dict(p), dict(p)
            plus[w] += h
            minus[w] -= h
            fd = (evaluate(e, plus) - evaluate(e, minus)) / (2 * h)
            assert abs(d - fd) / max(1.0, abs(evaluate(e, p))) < 1e-6


@pytest.mark.parametrize("i", range(len(CORPUS)))
def test_print_parse_round_trip(i):
    e = CORPUS[i]
    back = parse(to_source(e))
    rng = np.random.default_rng(i)
    for _ in range(50):
        p = {"x": float(rng.uniform(-1, 1)), "y": float(rng.uniform(-1, 1))}
        a, b = evaluate(e, p), evaluate(back, p)
        assert abs(a - b) <= 1e-15 * max(1.0, abs(a))


@pytest.mark.parametrize("i", range(len(CORPUS)))
def test_compiled_matches_tree(i, backend):
    e = CORPUS[i]
    prog = compile_expr(e, {"x": 0, "y": 1})
    rng = np.random.default_rng(i)
    envs = rng.uniform(-1, 1, (20, 2))
    vals = kernels.eval_batch(prog, envs)
    for env, v in zip(envs, vals):
        assert v == evaluate(e, {"x": env[0], "y": env[1]})


def test_compiled_diff_node(backend):
    e = parse("diff(sin(x1 + 0.1*sin(t)), t) + x1")
    prog = compile_expr(e, {"t": 0, "x1": 1})
    env = np.array([0.3, 0.2])
    assert kernels.eval_program(prog, env) == evaluate(e, {"t": 0.3, "x1": 0.2})


def test_compile_unbound():
    with pytest.raises(UnboundVariableError):
        compile_expr(parse("x + z"), {"x": 0})


def test_compiled_domain_error(backend):
    prog = compile_expr(parse("log(x)"), {"x": 0})
    with pytest.raises(DomainError):
        kernels.eval_program(prog, np.array([-1.0]))


@settings(max_examples=200, deadline=None)
@given(st.floats(-1e3, 1e3), st.floats(-1e3, 1e3))
def test_linear_ad_exact(a, b):
    e = Binary("+", Binary("*", Const(a), Var("x")), Const(b))
    from diffincl.exprdsl import Expr
    assert differentiate(Expr(e), "x", {"x": 0.7}) == a
