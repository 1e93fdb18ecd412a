"""
Coefficient Expression Grammar
==============================

Small expression language used by custom models and by the h / u / v
parameters of the verifiers. Expressions are parsed with sympy, restricted to
a whitelist of symbols and functions, and vectorised with ``lambdify``.

Grammar:
- variables: ``t``, state coordinates ``x1..xn``, driver coordinates ``w1..wd``
  (only where a driver-adapted drift is allowed)
- functions: sin, cos, exp, tanh
- operators: + - * / and numeric constants
"""

import logging
import re
from typing import Dict, List, Sequence, Union

import numpy as np
import sympy
from sympy.parsing.sympy_parser import parse_expr, standard_transformations

from .errors import InvalidArgumentError

logger = logging.getLogger(__name__)

ALLOWED_FUNCTIONS = {
    "sin": sympy.sin,
    "cos": sympy.cos,
    "exp": sympy.exp,
    "tanh": sympy.tanh,
}

_PARSER_GLOBALS = {
    "Integer": sympy.Integer,
    "Float": sympy.Float,
    "Rational": sympy.Rational,
    "Symbol": sympy.Symbol,
    **ALLOWED_FUNCTIONS,
}

_VARIABLE = re.compile(r"^(t|[xw][1-9][0-9]*)$")


class CompiledExpression:
    """A parsed scalar expression evaluated elementwise over numpy arrays"""

    def __init__(self, source: str, variables: Sequence[str]):
        self.source = source.strip()
        self.variables = list(variables)
        if not self.source:
            raise InvalidArgumentError("empty expression")
        if "__" in self.source or "lambda" in self.source:
            raise InvalidArgumentError(f"illegal token in expression '{self.source}'")

        symbols = {name: sympy.Symbol(name) for name in self.variables}
        try:
            self.expr = parse_expr(
                self.source,
                local_dict=dict(symbols),
                global_dict=dict(_PARSER_GLOBALS),
                transformations=standard_transformations,
            )
        except Exception as e:
            raise InvalidArgumentError(f"cannot parse expression '{self.source}': {e}") from e

        if not isinstance(self.expr, sympy.Expr):
            raise InvalidArgumentError(f"expression '{self.source}' is not scalar")

        unknown = {str(s) for s in self.expr.free_symbols} - set(self.variables)
        if unknown:
            raise InvalidArgumentError(
                f"unknown variables {sorted(unknown)} in '{self.source}' (allowed: {self.variables})"
            )
        for func in self.expr.atoms(sympy.Function):
            if func.func.__name__ not in ALLOWED_FUNCTIONS:
                raise InvalidArgumentError(f"function '{func.func.__name__}' is not allowed")

        self.used = sorted(str(s) for s in self.expr.free_symbols)
        self._func = sympy.lambdify([symbols[name] for name in self.variables], self.expr, modules="numpy")

    @property
    def is_constant(self) -> bool:
        return not self.used

    def uses(self, prefix: str) -> bool:
        return any(name.startswith(prefix) for name in self.used)

    def __call__(self, shape: tuple, **values) -> np.ndarray:
        args = [values.get(name, 0.0) for name in self.variables]
        out = np.asarray(self._func(*args), dtype=float)
        return np.broadcast_to(out, shape).astype(float, copy=True)

    def __repr__(self) -> str:
        return f"CompiledExpression('{self.source}')"


def split_components(source: Union[str, Sequence]) -> List[str]:
    """Split '(a, b)' / '[a, b]' / 'a' or a list into component strings"""
    if isinstance(source, (list, tuple)):
        return [str(item) for item in source]
    text = str(source).strip()
    if text.startswith(("(", "[")) and text.endswith((")", "]")):
        text = text[1:-1]
    parts, depth, current = [], 0, []
    for char in text:
        if char == "(":
            depth += 1
        elif char == ")":
            depth -= 1
        if char == "," and depth == 0:
            parts.append("".join(current))
            current = []
        else:
            current.append(char)
    parts.append("".join(current))
    parts = [p.strip() for p in parts if p.strip()]
    if not parts:
        raise InvalidArgumentError(f"no components in '{source}'")
    return parts


def variable_names(n: int = 0, d: int = 0, driver: bool = False) -> List[str]:
    names = ["t"] + [f"x{i + 1}" for i in range(n)]
    if driver:
        names += [f"w{j + 1}" for j in range(d)]
    return names


def compile_vector(source: Union[str, Sequence], variables: Sequence[str], dim: int) -> List[CompiledExpression]:
    """Compile a vector expression and check its dimension"""
    components = split_components(source)
    if len(components) != dim:
        raise InvalidArgumentError(f"expected {dim} components, got {len(components)} in {source!r}")
    for name in variables:
        if not _VARIABLE.match(name):
            raise InvalidArgumentError(f"bad variable name '{name}'")
    return [CompiledExpression(c, variables) for c in components]


def state_values(t: float, state: np.ndarray) -> Dict[str, np.ndarray]:
    """Variable bindings t, x1..xn from current state rows (M, n)"""
    values = {"t": t}
    for i in range(state.shape[1]):
        values[f"x{i + 1}"] = state[:, i]
    return values


def driver_values(driver: np.ndarray) -> Dict[str, np.ndarray]:
    """Variable bindings w1..wd from the current driver value B_t rows (M, d)"""
    return {f"w{j + 1}": driver[:, j] for j in range(driver.shape[1])}
