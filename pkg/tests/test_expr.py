import numpy as np
import pytest
from hypothesis import given, strategies as st

from gridadp.expr import ExpressionError, compile_expression


def test_arithmetic_and_powers():
    f = compile_expression("x1^2 + 2*x2 - u1/4", 2, 1)
    x = np.array([[3.0, 1.0], [0.0, -1.0]])
    u = np.array([[4.0], [8.0]])
    np.testing.assert_allclose(f(x, u), [10.0, -4.0])
    assert compile_expression("2**3", 1)(np.zeros((1, 1)))[0] == 8.0


def test_functions_and_constants():
    f = compile_expression("sin(x1) + cos(pi) + tanh(0) + abs(-u1) + exp(0) + sqrt(4)", 1, 1)
    out = f(np.array([[0.5]]), np.array([[-2.0]]))
    np.testing.assert_allclose(out, [np.sin(0.5) - 1 + 0 + 2 + 1 + 2])


def test_unary_minus_and_broadcast_shape():
    f = compile_expression("-1.0*x1", 1)
    x = np.linspace(-1, 1, 5)[:, None]
    np.testing.assert_allclose(f(x), -x[:, 0])
    assert compile_expression("3", 1)(x).shape == (5,)


@pytest.mark.parametrize("src", [
    "__import__('os')", "x1.real", "x1[0]", "lambda: 1", "open(x1)", "y1", "x1 if x1 else 2",
    "sin(x1, x1)", "'a'", "x1 +",
])
def test_rejects_disallowed(src):
    with pytest.raises(ExpressionError):
        compile_expression(src, 1, 1)


def test_variable_range_checked():
    with pytest.raises(ExpressionError, match="x3"):
        compile_expression("x3", 2)
    with pytest.raises(ExpressionError, match="u1"):
        compile_expression("u1", 2, 0)


@given(st.floats(-10, 10), st.floats(-10, 10))
def test_matches_python_arithmetic(a, b):
    f = compile_expression("(x1 - x2)*(x1 + x2) + 0.5*x1", 2)
    got = f(np.array([[a, b]]))[0]
    assert got == pytest.approx((a - b) * (a + b) + 0.5 * a, rel=1e-12, abs=1e-12)
