"""Scalar expression graphs with exact, closed-under-differentiation derivatives.

An :class:`Expr` is an immutable node in a DAG. :func:`differentiate` rewrites a
graph into a new graph built from the same node kinds, so derivatives can be
differentiated again (second input-derivatives of a network, and parameter
gradients of losses containing them).

The module doubles as an array namespace for closed-form formulas: ``exp``,
``sqrt``, ``tanh``, ``square`` and ``absolute`` accept numbers or expressions,
mirroring the numpy functions of the same name.
"""
from __future__ import annotations

import math
import numbers
from typing import Callable, Hashable, Iterable, Mapping, Sequence

import numpy as np

__all__ = [
    "Expr",
    "AutodiffError",
    "ArityError",
    "ZeroDenominatorError",
    "MissingVariableError",
    "NonFiniteError",
    "ARITY",
    "construct",
    "constant",
    "variable",
    "evaluate",
    "differentiate",
    "gradient",
    "substitute",
    "vectorize",
    "free_variables",
    "node_count",
    "tanh",
    "exp",
    "sqrt",
    "square",
    "absolute",
    "step",
]

ARITY = {
    "constant": 0,
    "variable": 0,
    "add": 2,
    "sub": 2,
    "mul": 2,
    "div": 2,
    "neg": 1,
    "tanh": 1,
    "exp": 1,
    "sqrt": 1,
    "square": 1,
    "abs": 1,
    # Heaviside with step(0) = 1; piecewise constant, so its derivative is 0.
    "step": 1,
}


class AutodiffError(Exception):
    pass


class ArityError(AutodiffError, ValueError):
    pass


class ZeroDenominatorError(AutodiffError, ZeroDivisionError):
    pass


class MissingVariableError(AutodiffError, KeyError):
    pass


class NonFiniteError(AutodiffError, ArithmeticError):
    """Raised when a node evaluates to NaN or +-inf.

    ``path`` lists node kinds from the root down to the first offending node.
    """

    def __init__(self, message: str, path: Sequence[str]):
        super().__init__(message)
        self.path = list(path)


class Expr:
    __slots__ = ("kind", "args", "value", "name", "__weakref__")
    # numpy scalars must defer to our reflected operators
    __array_ufunc__ = None

    def __init__(self, kind: str, args: tuple = (), value: float | None = None, name: Hashable = None):
        object.__setattr__(self, "kind", kind)
        object.__setattr__(self, "args", args)
        object.__setattr__(self, "value", value)
        object.__setattr__(self, "name", name)

    def __setattr__(self, key, val):
        raise AttributeError("Expr is immutable")

    @property
    def is_constant(self) -> bool:
        return self.kind == "constant"

    def __add__(self, other):
        return construct("add", (self, _as_expr(other)))

    def __radd__(self, other):
        return construct("add", (_as_expr(other), self))

    def __sub__(self, other):
        return construct("sub", (self, _as_expr(other)))

    def __rsub__(self, other):
        return construct("sub", (_as_expr(other), self))

    def __mul__(self, other):
        return construct("mul", (self, _as_expr(other)))

    def __rmul__(self, other):
        return construct("mul", (_as_expr(other), self))

    def __truediv__(self, other):
        return construct("div", (self, _as_expr(other)))

    def __rtruediv__(self, other):
        return construct("div", (_as_expr(other), self))

    def __neg__(self):
        return construct("neg", (self,))

    def __pos__(self):
        return self

    def __pow__(self, power):
        if power == 2:
            return construct("square", (self,))
        if power == 1:
            return self
        raise AutodiffError("only integer powers 1 and 2 are supported")

    def __bool__(self):
        raise TypeError("truth value of an Expr is undefined; evaluate it first")

    def __repr__(self):
        return f"Expr({_render(self, 4)})"


def _render(e: Expr, depth: int) -> str:
    if e.kind == "constant":
        return repr(e.value)
    if e.kind == "variable":
        return str(e.name)
    if depth == 0:
        return "..."
    inner = ", ".join(_render(a, depth - 1) for a in e.args)
    return f"{e.kind}({inner})"


def _as_expr(x) -> Expr:
    if isinstance(x, Expr):
        return x
    if isinstance(x, numbers.Real):
        return constant(float(x))
    raise TypeError(f"cannot use {type(x).__name__} in an expression")


def constant(value: float) -> Expr:
    return Expr("constant", (), float(value))


def variable(name: Hashable) -> Expr:
    return Expr("variable", (), None, name)


_SCALAR_OPS: dict[str, Callable] = {
    "add": lambda a, b: a + b,
    "sub": lambda a, b: a - b,
    "mul": lambda a, b: a * b,
    "div": lambda a, b: a / b,
    "neg": lambda a: -a,
    "tanh": math.tanh,
    "exp": math.exp,
    "sqrt": math.sqrt,
    "square": lambda a: a * a,
    "abs": math.fabs,
    "step": lambda a: 1.0 if a >= 0.0 else 0.0,
}

_ARRAY_OPS: dict[str, Callable] = {
    "add": np.add,
    "sub": np.subtract,
    "mul": np.multiply,
    "div": np.divide,
    "neg": np.negative,
    "tanh": np.tanh,
    "exp": np.exp,
    "sqrt": np.sqrt,
    "square": np.square,
    "abs": np.abs,
    "step": lambda a: np.where(a >= 0.0, 1.0, 0.0),
}


def _apply(kind: str, vals: Sequence[float]) -> float:
    try:
        return float(_SCALAR_OPS[kind](*vals))
    except (OverflowError, ValueError, ZeroDivisionError):
        return math.nan


def construct(kind: str, operands: Sequence[Expr] = (), *, value: float | None = None,
              name: Hashable = None) -> Expr:
    """Build a node, folding it when every operand is a constant."""
    if kind not in ARITY:
        raise AutodiffError(f"unknown kind {kind!r}")
    operands = tuple(_as_expr(o) for o in operands)
    if len(operands) != ARITY[kind]:
        raise ArityError(f"{kind} takes {ARITY[kind]} operand(s), got {len(operands)}")
    if kind == "constant":
        if value is None:
            raise AutodiffError("constant needs a value")
        return constant(value)
    if kind == "variable":
        if name is None:
            raise AutodiffError("variable needs a name")
        return variable(name)
    if kind == "div" and operands[1].is_constant and operands[1].value == 0.0:
        raise ZeroDenominatorError("division by the constant zero")
    if all(o.is_constant for o in operands):
        folded = _apply(kind, [o.value for o in operands])
        if math.isfinite(folded):
            return constant(folded)
    return Expr(kind, operands)


def tanh(x) -> Expr:
    return construct("tanh", (x,))


def exp(x) -> Expr:
    return construct("exp", (x,))


def sqrt(x) -> Expr:
    return construct("sqrt", (x,))


def square(x) -> Expr:
    return construct("square", (x,))


def absolute(x) -> Expr:
    return construct("abs", (x,))


def step(x) -> Expr:
    return construct("step", (x,))


def _topo(roots: Iterable[Expr]) -> tuple[list[Expr], dict[int, Expr]]:
    """Post-order over the DAG (children first) plus one parent per node."""
    order: list[Expr] = []
    parent: dict[int, Expr] = {}
    seen: set[int] = set()
    for root in roots:
        if id(root) in seen:
            continue
        stack = [(root, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for child in node.args:
                if id(child) not in seen:
                    parent.setdefault(id(child), node)
                    stack.append((child, False))
    return order, parent


def _path_to(node: Expr, parent: Mapping[int, Expr]) -> list[str]:
    path = [node.kind]
    while id(node) in parent:
        node = parent[id(node)]
        path.append(node.kind)
    return path[::-1]


def free_variables(expr: Expr) -> set:
    order, _ = _topo([expr])
    return {n.name for n in order if n.kind == "variable"}


def node_count(expr: Expr) -> int:
    return len(_topo([expr])[0])


def _forward_values(order: Sequence[Expr], parent, binding: Mapping) -> dict[int, float]:
    vals: dict[int, float] = {}
    for node in order:
        if node.kind == "constant":
            v = node.value
        elif node.kind == "variable":
            try:
                v = float(binding[node.name])
            except KeyError:
                raise MissingVariableError(f"no binding for variable {node.name!r}") from None
        else:
            v = _apply(node.kind, [vals[id(a)] for a in node.args])
        if not math.isfinite(v):
            path = _path_to(node, parent)
            raise NonFiniteError(f"non-finite value at {' > '.join(path)}", path)
        vals[id(node)] = v
    return vals


def evaluate(expr: Expr, binding: Mapping[Hashable, float]) -> float:
    order, parent = _topo([expr])
    return _forward_values(order, parent, binding)[id(expr)]


_ZERO = constant(0.0)
_ONE = constant(1.0)


def _is(e: Expr, v: float) -> bool:
    return e.is_constant and e.value == v


def _add(a: Expr, b: Expr) -> Expr:
    if _is(a, 0.0):
        return b
    if _is(b, 0.0):
        return a
    return construct("add", (a, b))


def _sub(a: Expr, b: Expr) -> Expr:
    if _is(b, 0.0):
        return a
    if _is(a, 0.0):
        return construct("neg", (b,))
    return construct("sub", (a, b))


def _mul(a: Expr, b: Expr) -> Expr:
    if _is(a, 0.0) or _is(b, 0.0):
        return _ZERO
    if _is(a, 1.0):
        return b
    if _is(b, 1.0):
        return a
    return construct("mul", (a, b))


def _sign(a: Expr) -> Expr:
    # sign(0) = 0: the subgradient convention for |a| at a kink
    return construct("sub", (step(a), step(construct("neg", (a,)))))


def differentiate(expr: Expr, wrt: Hashable | Expr) -> Expr:
    """Partial derivative of ``expr`` with respect to the variable ``wrt``.

    The result shares structure with ``expr`` and uses only the node kinds in
    :data:`ARITY`. The derivative of ``abs`` at zero is taken as 0.
    """
    if isinstance(wrt, Expr):
        if wrt.kind != "variable":
            raise AutodiffError("can only differentiate with respect to a variable")
        wrt = wrt.name
    order, _ = _topo([expr])
    d: dict[int, Expr] = {}
    for node in order:
        k = node.kind
        if k == "constant":
            out = _ZERO
        elif k == "variable":
            out = _ONE if node.name == wrt else _ZERO
        elif k == "step":
            out = _ZERO
        else:
            a = node.args[0]
            da = d[id(a)]
            if k == "add":
                out = _add(da, d[id(node.args[1])])
            elif k == "sub":
                out = _sub(da, d[id(node.args[1])])
            elif k == "mul":
                b = node.args[1]
                out = _add(_mul(da, b), _mul(a, d[id(b)]))
            elif k == "div":
                b = node.args[1]
                db = d[id(b)]
                num = _sub(da, _mul(node, db))
                out = _ZERO if _is(num, 0.0) else construct("div", (num, b))
            elif _is(da, 0.0):
                out = _ZERO
            elif k == "neg":
                out = construct("neg", (da,))
            elif k == "tanh":
                out = _mul(da, construct("sub", (_ONE, construct("square", (node,)))))
            elif k == "exp":
                out = _mul(da, node)
            elif k == "sqrt":
                out = construct("div", (da, construct("mul", (constant(2.0), node))))
            elif k == "square":
                out = _mul(construct("mul", (constant(2.0), a)), da)
            elif k == "abs":
                out = _mul(da, _sign(a))
            else:  # pragma: no cover - guarded by ARITY
                raise AutodiffError(f"unknown kind {k!r}")
        d[id(node)] = out
    return d[id(expr)]


def gradient(expr: Expr, wrt: Sequence[Hashable], binding: Mapping[Hashable, float]) -> list[float]:
    """Reverse-mode gradient; equals evaluating :func:`differentiate` per variable."""
    order, parent = _topo([expr])
    vals = _forward_values(order, parent, binding)
    adj: dict[int, float] = {id(expr): 1.0}
    by_name: dict[Hashable, float] = {}
    for node in reversed(order):
        g = adj.get(id(node), 0.0)
        if g == 0.0:
            continue
        k = node.kind
        if k == "variable":
            by_name[node.name] = by_name.get(node.name, 0.0) + g
            continue
        if k in ("constant", "step"):
            continue
        a = node.args[0]
        va = vals[id(a)]
        v = vals[id(node)]
        if k == "add":
            contrib = ((a, g), (node.args[1], g))
        elif k == "sub":
            contrib = ((a, g), (node.args[1], -g))
        elif k == "mul":
            b = node.args[1]
            contrib = ((a, g * vals[id(b)]), (b, g * va))
        elif k == "div":
            b = node.args[1]
            vb = vals[id(b)]
            contrib = ((a, g / vb), (b, -g * v / vb))
        elif k == "neg":
            contrib = ((a, -g),)
        elif k == "tanh":
            contrib = ((a, g * (1.0 - v * v)),)
        elif k == "exp":
            contrib = ((a, g * v),)
        elif k == "sqrt":
            contrib = ((a, g / (2.0 * v)),)
        elif k == "square":
            contrib = ((a, 2.0 * g * va),)
        elif k == "abs":
            contrib = ((a, g * (1.0 if va > 0 else -1.0 if va < 0 else 0.0)),)
        else:  # pragma: no cover
            raise AutodiffError(f"unknown kind {k!r}")
        for child, c in contrib:
            adj[id(child)] = adj.get(id(child), 0.0) + c
    return [by_name.get(name, 0.0) for name in wrt]


def substitute(expr: Expr, mapping: Mapping[Hashable, Expr | float]) -> Expr:
    """Replace variables by expressions (or numbers), rebuilding affected nodes."""
    repl = {name: _as_expr(v) for name, v in mapping.items()}
    order, _ = _topo([expr])
    new: dict[int, Expr] = {}
    for node in order:
        if node.kind == "variable":
            out = repl.get(node.name, node)
        elif node.kind == "constant":
            out = node
        else:
            args = tuple(new[id(a)] for a in node.args)
            if all(x is y for x, y in zip(args, node.args)):
                out = node
            else:
                out = construct(node.kind, args)
        new[id(node)] = out
    return new[id(expr)]


def vectorize(exprs: Sequence[Expr], names: Sequence[Hashable]) -> Callable[..., list[np.ndarray]]:
    """Compile expressions into a function of numpy arrays (elementwise).

    Returns ``f(*arrays)`` where the i-th array is bound to ``names[i]``;
    the result is one array per expression. Shared subgraphs run once.
    """
    order, _ = _topo(exprs)
    slot = {id(n): i for i, n in enumerate(order)}
    name_index = {name: i for i, name in enumerate(names)}
    program = []
    for node in order:
        if node.kind == "constant":
            program.append(("c", node.value, ()))
        elif node.kind == "variable":
            if node.name not in name_index:
                raise MissingVariableError(f"no input for variable {node.name!r}")
            program.append(("v", name_index[node.name], ()))
        else:
            program.append(("o", _ARRAY_OPS[node.kind], tuple(slot[id(a)] for a in node.args)))
    outputs = [slot[id(e)] for e in exprs]

    def run(*arrays):
        regs = [None] * len(program)
        shape = np.broadcast(*arrays).shape if arrays else ()
        for i, (tag, op, args) in enumerate(program):
            if tag == "c":
                regs[i] = op
            elif tag == "v":
                regs[i] = arrays[op]
            else:
                regs[i] = op(*(regs[j] for j in args))
        return [np.broadcast_to(np.asarray(regs[j], dtype=float), shape) for j in outputs]

    return run
