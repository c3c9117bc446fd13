"""
Closed-form descriptors parsed from config strings.

Grammar: numeric constants, `pi`, the coordinate names allowed by the caller
(x1..x_{n-1}, xn, t by default), + - * / ** ^ and unary minus, and the calls
pow, sin, cos, tan, exp, log, sqrt, abs.

Strings go through sympy's `parse_expr` against a local namespace holding only
those names, and compile to numpy with `lambdify`.
"""
from __future__ import annotations

import re
from typing import Dict, Iterable, List, Optional

import numpy as np
import sympy as sp
from sympy.parsing.sympy_parser import convert_xor, parse_expr, standard_transformations


class ExpressionError(ValueError):
    pass


_FUNCS: Dict[str, object] = {
    "sin": sp.sin,
    "cos": sp.cos,
    "tan": sp.tan,
    "exp": sp.exp,
    "log": sp.log,
    "sqrt": sp.sqrt,
    "abs": sp.Abs,
    "pow": sp.Pow,
    "pi": sp.pi,
}
# number constructors emitted by the auto_number transformation
_GLOBALS = {"Integer": sp.Integer, "Float": sp.Float, "Rational": sp.Rational}
_TRANSFORMS = standard_transformations + (convert_xor,)

_IDENT = re.compile(r"(?<![\w.])[A-Za-z_]\w*")
_ATTRIBUTE = re.compile(r"\.\s*[A-Za-z_]")


def coordinate_names(n: int) -> List[str]:
    """Variables of an n-dimensional ambient space: x1..x_{n-1}, xn, t."""
    return [f"x{i}" for i in range(1, n)] + ["xn", "t"]


def graph_names(n: int) -> List[str]:
    """Variables of a height function over [-1,1]^{n-1}: x1..x_{n-1}, t."""
    return [f"x{i}" for i in range(1, n)] + ["t"]


def _screen(text: str, names: Iterable[str]) -> None:
    if _ATTRIBUTE.search(text):
        raise ExpressionError(f"attribute access is not allowed in '{text}'")
    allowed = set(names) | set(_FUNCS)
    for ident in _IDENT.findall(text):
        if ident not in allowed:
            raise ExpressionError(f"unknown name '{ident}' in '{text}' (allowed: {', '.join(names)})")


class Expr:
    """A parsed closed-form expression over a fixed set of variable names."""

    def __init__(self, text: str, names: Optional[Iterable[str]] = None):
        self.text = str(text).strip()
        self.names = tuple(names) if names is not None else tuple(coordinate_names(3))
        if not self.text:
            raise ExpressionError("empty expression")
        _screen(self.text, self.names)
        self.symbols = tuple(sp.Symbol(k, real=True) for k in self.names)
        local = dict(_FUNCS)
        local.update(zip(self.names, self.symbols))
        try:
            expr = parse_expr(self.text, local_dict=local, global_dict=dict(_GLOBALS, __builtins__={}),
                              transformations=_TRANSFORMS)
        except Exception as ex:
            raise ExpressionError(f"cannot parse '{self.text}': {ex}") from ex
        self._bind(expr)

    def _bind(self, expr) -> None:
        if not isinstance(expr, sp.Expr):
            raise ExpressionError(f"'{self.text}' is not a scalar expression")
        stray = expr.free_symbols - set(self.symbols)
        if stray:
            raise ExpressionError(f"'{self.text}' uses {sorted(map(str, stray))} outside {', '.join(self.names)}")
        self.sym = expr
        self._fn = sp.lambdify(self.symbols, expr, modules="numpy")

    @classmethod
    def from_sympy(cls, expr, names: Iterable[str]) -> "Expr":
        obj = cls.__new__(cls)
        obj.names = tuple(names)
        obj.symbols = tuple(sp.Symbol(k, real=True) for k in obj.names)
        obj.text = str(expr)
        obj._bind(sp.sympify(expr))
        return obj

    def diff(self, name: str, order: int = 1) -> "Expr":
        """Exact partial derivative in one of the variables."""
        if name not in self.names:
            raise ExpressionError(f"'{self.text}' has no variable '{name}'")
        sym = self.symbols[self.names.index(name)]
        return Expr.from_sympy(sp.diff(self.sym, sym, order), self.names)

    def __call__(self, **values) -> np.ndarray:
        missing = [k for k in self.names if k not in values]
        if missing:
            raise ExpressionError(f"'{self.text}' evaluated without {', '.join(missing)}")
        arrays = [np.asarray(values[k], dtype=float) for k in self.names]
        shape = np.broadcast_shapes(*[a.shape for a in arrays]) if arrays else ()
        with np.errstate(all="ignore"):
            out = self._fn(*arrays)
        return np.broadcast_to(np.asarray(out, dtype=float), shape).copy()

    def __repr__(self) -> str:
        return f"Expr({self.text!r})"


def parse(text: str, n: int = 3) -> Expr:
    return Expr(text, coordinate_names(n))


def parse_graph(text: str, n: int) -> Expr:
    return Expr(text, graph_names(n))
