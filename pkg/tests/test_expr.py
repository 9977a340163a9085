import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from carnot_lab import expr as ex
from carnot_lab.errors import DomainError, ExprSyntaxError, NonsmoothInput, UnknownVariable


def test_parse_and_evaluate_simple():
    assert ex.evaluate(ex.parse("x1 + 2*x2", 2), (1, 2)) == 5.0
    assert ex.evaluate(ex.parse("-x2/2", 3), (0, 4, 0)) == -2.0


def test_precedence_and_right_assoc_power():
    assert ex.evaluate(ex.parse("2^3^2", 1), (0,)) == 512.0
    assert ex.evaluate(ex.parse("-2^2", 1), (0,)) == -4.0
    assert ex.evaluate(ex.parse("1 - 2 - 3", 1), (0,)) == -4.0
    assert ex.evaluate(ex.parse("8/2/2", 1), (0,)) == 2.0
    assert ex.evaluate(ex.parse("1.5e-1*x1", 1), (2,)) == pytest.approx(0.3)


def test_parse_counterexample_function():
    e = ex.parse("x1^3*sin(1/x1)", 2)
    assert ex.evaluate(e, (0.5, 0.0)) == pytest.approx(0.125 * math.sin(2.0))


def test_syntax_errors():
    with pytest.raises(ExprSyntaxError):
        ex.parse("(", 2)
    with pytest.raises(ExprSyntaxError):
        ex.parse("sin x1", 1)
    with pytest.raises(ExprSyntaxError):
        ex.parse("x1 +", 1)
    with pytest.raises(UnknownVariable):
        ex.parse("x3", 2)


def test_domain_errors():
    with pytest.raises(DomainError):
        ex.evaluate(ex.parse("1/x1", 2), (0, 0))
    with pytest.raises(DomainError):
        ex.evaluate(ex.parse("ln(x1)", 1), (-1,))
    with pytest.raises(DomainError):
        ex.evaluate(ex.parse("sqrt(x1)", 1), (-1,))


def test_sin1_beta_value():
    e = ex.parse("x1^2/2*sin(1/abs(x1)^0.75)", 2)
    want = 0.005 * math.sin(10 ** 0.75)  # 1/|0.1|^0.75 = 10^0.75
    assert ex.evaluate(e, (0.1, 0)) == pytest.approx(want, rel=1e-13)


def test_derive_examples():
    d = ex.derive(ex.parse("x1^3*sin(1/x1)", 2), 1)
    for x in (0.3, -0.7, 1.9):
        want = 3 * x ** 2 * math.sin(1 / x) - x * math.cos(1 / x)
        assert ex.evaluate(d, (x, 0.0)) == pytest.approx(want, rel=1e-12, abs=1e-14)
    assert ex.derive(ex.const(4.0), 1) == ex.ZERO
    assert ex.derive(ex.parse("x1*x2", 2), 2) == ex.parse("x1", 2)


def test_derive_abs_is_sign():
    d = ex.derive(ex.parse("abs(x1)", 1), 1)
    assert ex.evaluate(d, (2.0,)) == 1.0
    assert ex.evaluate(d, (-2.0,)) == -1.0


def test_partial_at_zero():
    e = ex.parse("x1^2*x2", 2)
    assert ex.partial_at_zero(e, (2, 1)) == 2.0
    assert ex.partial_at_zero(e, (1, 0)) == 0.0
    with pytest.raises(NonsmoothInput):
        ex.partial_at_zero(ex.parse("x1^3*sin(1/x1)", 2), (1, 0))


def test_smoothness_flags():
    smooth = ["x1*x2 + sin(x1)", "exp(x2)^2", "x1^3/2", "cos(x1)/(1 + x2^2)"]
    rough = ["abs(x1)", "sqrt(x1^2 + x2^2)", "ln(1 + x1)", "x1^0.5", "x1^-1", "1/x1"]
    for t in smooth:
        assert ex.is_smooth_at_zero(ex.parse(t, 2)), t
    for t in rough:
        assert not ex.is_smooth_at_zero(ex.parse(t, 2)), t


def test_polynomial_stays_polynomial():
    p = ex.parse("3*x1^2*x2 - x2^3 + 2", 2)
    for i in (1, 2):
        assert ex.is_polynomial(ex.derive(p, i))


def test_monomial_partial_property():
    rng = np.random.default_rng(3)
    for _ in range(20):
        beta = tuple(int(b) for b in rng.integers(0, 4, size=3))
        c = float(rng.uniform(-2, 2))
        m = ex.monomial(c, beta)
        fact = math.prod(math.factorial(b) for b in beta)
        assert ex.partial_at_zero(m, beta) == pytest.approx(c * fact, rel=1e-12)
        other = tuple(b + 1 if i == 0 else b for i, b in enumerate(beta))
        assert ex.partial_at_zero(m, other) == 0.0


def test_compiled_matches_exact():
    exprs = [ex.parse(t, 3) for t in ("x1*x2 - x3/2", "sin(x1)*exp(x2)", "x3^2 + 1")]
    f = ex.compile_exprs(exprs, 3)
    pts = np.random.default_rng(0).uniform(-1, 1, size=(40, 3))
    got = f(pts)
    want = np.array([[ex.evaluate(e, p) for e in exprs] for p in pts])
    assert np.allclose(got, want, rtol=1e-14, atol=1e-15)


def _random_poly(rng, dim=3, terms=4):
    return ex.polynomial((float(rng.uniform(-2, 2)), tuple(int(a) for a in rng.integers(0, 3, size=dim)))
                         for _ in range(terms))


def test_product_rule_on_random_polynomials():
    rng = np.random.default_rng(7)
    pts = rng.uniform(-1, 1, size=(100, 3))
    for _ in range(10):
        p, q = _random_poly(rng), _random_poly(rng)
        for i in (1, 2, 3):
            lhs = ex.compile_exprs([ex.derive(p * q, i)], 3)(pts)
            rhs = ex.compile_exprs([ex.derive(p, i) * q + p * ex.derive(q, i)], 3)(pts)
            assert np.allclose(lhs, rhs, rtol=1e-12, atol=1e-12)


_atoms = st.one_of(st.sampled_from(["x1", "x2", "x3"]),
                   st.floats(0.1, 9.0, allow_nan=False).map(lambda v: repr(round(v, 3))))


def _build(depth):
    if depth == 0:
        return _atoms
    sub = _build(depth - 1)
    return st.one_of(
        sub,
        st.tuples(sub, st.sampled_from(["+", "-", "*"]), sub).map(lambda t: f"({t[0]} {t[1]} {t[2]})"),
        st.tuples(st.sampled_from(["sin", "cos", "exp"]), sub).map(lambda t: f"{t[0]}({t[1]})"),
        sub.map(lambda s: f"-{s}"),
        sub.map(lambda s: f"({s})^2"),
    )


@settings(max_examples=60, deadline=None)
@given(_build(3))
def test_print_parse_round_trip(text):
    e = ex.parse(text, 3)
    back = ex.parse(ex.to_string(e), 3)
    pts = np.random.default_rng(1).uniform(-1, 1, size=(100, 3))
    a = ex.compile_exprs([e], 3)(pts)
    b = ex.compile_exprs([back], 3)(pts)
    assert np.allclose(a, b, rtol=1e-12, atol=1e-300)
