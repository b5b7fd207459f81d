"""Small arithmetic expression language for config-defined dynamics and costs.

Expressions are parsed once with Python's ``ast`` module, checked against a
whitelist of node types, and compiled into numpy-vectorized closures.  No
Python code is ever executed from the config.

Supported syntax: numbers, ``+ - * /``, powers written ``**`` or ``^``,
unary minus, parentheses, the constants ``pi`` and ``e``, the functions
``sin cos tan tanh exp sqrt abs``, and variables ``x1..xn`` / ``u1..um``.
"""

import ast
import re

import numpy as np

__all__ = ["ExpressionError", "Expression", "compile_expression"]


class ExpressionError(ValueError):
    """Raised for malformed or disallowed expressions."""


_FUNCTIONS = {
    "sin": np.sin,
    "cos": np.cos,
    "tan": np.tan,
    "tanh": np.tanh,
    "exp": np.exp,
    "sqrt": np.sqrt,
    "abs": np.abs,
}
_CONSTANTS = {"pi": np.pi, "e": np.e}
_BINOPS = {
    ast.Add: np.add,
    ast.Sub: np.subtract,
    ast.Mult: np.multiply,
    ast.Div: np.divide,
    ast.Pow: np.power,
}
_VAR_RE = re.compile(r"^([xu])([1-9][0-9]*)$")


def _compile(node, variables):
    if isinstance(node, ast.Expression):
        return _compile(node.body, variables)
    if isinstance(node, ast.Constant):
        if isinstance(node.value, bool) or not isinstance(node.value, (int, float)):
            raise ExpressionError(f"unsupported literal {node.value!r}")
        value = float(node.value)
        return lambda env: value
    if isinstance(node, ast.Name):
        name = node.id
        if name in _CONSTANTS:
            value = _CONSTANTS[name]
            return lambda env: value
        match = _VAR_RE.match(name)
        if match is None:
            raise ExpressionError(f"unknown name {name!r}")
        variables.add(name)
        kind, idx = match.group(1), int(match.group(2)) - 1
        return lambda env: env[kind][..., idx]
    if isinstance(node, ast.UnaryOp):
        operand = _compile(node.operand, variables)
        if isinstance(node.op, ast.USub):
            return lambda env: np.negative(operand(env))
        if isinstance(node.op, ast.UAdd):
            return operand
        raise ExpressionError("unsupported unary operator")
    if isinstance(node, ast.BinOp):
        op = _BINOPS.get(type(node.op))
        if op is None:
            raise ExpressionError(f"unsupported operator {type(node.op).__name__}")
        left = _compile(node.left, variables)
        right = _compile(node.right, variables)
        return lambda env: op(left(env), right(env))
    if isinstance(node, ast.Call):
        if not isinstance(node.func, ast.Name) or node.func.id not in _FUNCTIONS:
            raise ExpressionError("only sin, cos, tan, tanh, exp, sqrt, abs may be called")
        if len(node.args) != 1 or node.keywords:
            raise ExpressionError(f"{node.func.id}() takes exactly one argument")
        fn = _FUNCTIONS[node.func.id]
        arg = _compile(node.args[0], variables)
        return lambda env: fn(arg(env))
    raise ExpressionError(f"unsupported syntax: {type(node).__name__}")


class Expression:
    """A compiled scalar expression in the state and control variables.

    Calling it with ``x`` of shape ``(..., n)`` and ``u`` of shape ``(..., m)``
    returns an array of shape ``(...)``.
    """

    def __init__(self, source, state_dim, control_dim=0):
        self.source = str(source)
        self.state_dim = int(state_dim)
        self.control_dim = int(control_dim)
        text = self.source.replace("^", "**")
        try:
            tree = ast.parse(text.strip(), mode="eval")
        except SyntaxError as exc:
            raise ExpressionError(f"cannot parse {self.source!r}: {exc.msg}") from None
        names = set()
        self._fn = _compile(tree, names)
        for name in names:
            kind, idx = name[0], int(name[1:])
            limit = self.state_dim if kind == "x" else self.control_dim
            if idx > limit:
                raise ExpressionError(
                    f"variable {name} out of range in {self.source!r} "
                    f"(n={self.state_dim}, m={self.control_dim})"
                )
        self.variables = frozenset(names)

    def __call__(self, x, u=None):
        x = np.asarray(x, dtype=float)
        if u is None:
            u = np.zeros(x.shape[:-1] + (self.control_dim,))
        u = np.asarray(u, dtype=float)
        shape = np.broadcast_shapes(x.shape[:-1], u.shape[:-1])
        with np.errstate(all="ignore"):
            out = self._fn({"x": x, "u": u})
        return np.broadcast_to(np.asarray(out, dtype=float), shape).copy()

    def __repr__(self):
        return f"Expression({self.source!r})"


def compile_expression(source, state_dim, control_dim=0):
    return Expression(source, state_dim, control_dim)
