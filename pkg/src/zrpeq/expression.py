"""User-defined weights from structured text files.

Two forms are accepted (JSON or YAML)::

    name: my-weight
    expression: "factorial(k1) / pochhammer(1 + b, k1) * ((k1 + 1) / (k1 + 2))^k2"
    params: {b: 4}
    tail_exponent: [4, null]

or a finite table ``log_weights: [[...], ...]`` indexed by ``[k1][k2]``.

Expressions are evaluated on signed logarithms so that factorials and
powers of large occupation numbers neither overflow nor underflow.
"""

from __future__ import annotations

import ast
import json
import math
from functools import partial
from pathlib import Path
from typing import Mapping, Optional

import numpy as np
import yaml
from scipy.special import gammaln

from .errors import ConfigError, InvalidParam
from .weights import TwoSpeciesWeight, table_weight

__all__ = ["parse_expression", "expression_weight", "load_weight", "weight_from_mapping"]

_FUNCS = {"factorial", "pochhammer", "exp", "log"}
_XI_RADIUS = 64


class _SLog:
    """A real array stored as ``sign * exp(log)``."""

    __slots__ = ("sign", "log")

    def __init__(self, sign, log):
        self.sign = np.asarray(sign, dtype=float)
        self.log = np.asarray(log, dtype=float)

    @classmethod
    def of(cls, x):
        x = np.asarray(x, dtype=float)
        with np.errstate(divide="ignore"):
            return cls(np.sign(x), np.log(np.abs(x)))

    def value(self):
        with np.errstate(over="ignore"):
            return self.sign * np.exp(self.log)

    def __neg__(self):
        return _SLog(-self.sign, self.log)

    def __add__(self, other):
        hi = np.maximum(self.log, other.log)
        base = np.where(np.isfinite(hi), hi, 0.0)
        with np.errstate(over="ignore", invalid="ignore"):
            tot = self.sign * np.exp(self.log - base) + other.sign * np.exp(other.log - base)
        with np.errstate(divide="ignore"):
            return _SLog(np.sign(tot), base + np.log(np.abs(tot)))

    def __sub__(self, other):
        return self + (-other)

    def __mul__(self, other):
        return _SLog(self.sign * other.sign, self.log + other.log)

    def __truediv__(self, other):
        if np.any(other.sign == 0):
            raise InvalidParam("division by zero in weight expression")
        return _SLog(self.sign * other.sign, self.log - other.log)

    def __pow__(self, other):
        e = other.value()
        integer = np.all(e == np.round(e))
        if not integer and np.any(self.sign < 0):
            raise InvalidParam("non-integer power of a negative quantity")
        with np.errstate(invalid="ignore"):
            log = np.where(e == 0, 0.0, e * self.log)
        sign = np.where(e == 0, 1.0, np.where((self.sign < 0) & (np.abs(np.round(e)) % 2 == 1), -1.0, self.sign))
        sign = np.where((self.sign == 0) & (e != 0), 0.0, sign)
        return _SLog(sign, log)


def parse_expression(text: str, params: Optional[Mapping] = None) -> ast.Expression:
    """Parse and validate an expression in ``k1``, ``k2`` and the parameters."""
    params = dict(params or {})
    try:
        tree = ast.parse(text.replace("^", "**"), mode="eval")
    except SyntaxError as exc:
        raise InvalidParam(f"cannot parse weight expression: {exc.msg}") from None
    allowed_names = {"k1", "k2", *params}
    for node in ast.walk(tree):
        if isinstance(node, ast.Name):
            if node.id not in allowed_names and node.id not in _FUNCS:
                raise InvalidParam(f"unknown name {node.id!r} in weight expression")
        elif isinstance(node, ast.Call):
            if not isinstance(node.func, ast.Name) or node.func.id not in _FUNCS or node.keywords:
                raise InvalidParam("only factorial, pochhammer, exp and log may be called")
            want = 2 if node.func.id == "pochhammer" else 1
            if len(node.args) != want:
                raise InvalidParam(f"{node.func.id} takes {want} argument(s)")
        elif isinstance(node, ast.BinOp):
            if not isinstance(node.op, (ast.Add, ast.Sub, ast.Mult, ast.Div, ast.Pow)):
                raise InvalidParam("operators are limited to + - * / ^")
        elif isinstance(node, ast.UnaryOp):
            if not isinstance(node.op, (ast.USub, ast.UAdd)):
                raise InvalidParam("unsupported unary operator")
        elif isinstance(node, ast.Constant):
            if not isinstance(node.value, (int, float)) or isinstance(node.value, bool):
                raise InvalidParam("only numeric constants are allowed")
        elif not isinstance(node, (ast.Expression, ast.Load, ast.operator, ast.unaryop)):
            raise InvalidParam(f"unsupported syntax: {type(node).__name__}")
    return tree


def _eval_node(node, env):
    if isinstance(node, ast.Expression):
        return _eval_node(node.body, env)
    if isinstance(node, ast.Constant):
        return _SLog.of(node.value)
    if isinstance(node, ast.Name):
        return env[node.id]
    if isinstance(node, ast.UnaryOp):
        v = _eval_node(node.operand, env)
        return -v if isinstance(node.op, ast.USub) else v
    if isinstance(node, ast.BinOp):
        a, b = _eval_node(node.left, env), _eval_node(node.right, env)
        op = node.op
        if isinstance(op, ast.Add):
            return a + b
        if isinstance(op, ast.Sub):
            return a - b
        if isinstance(op, ast.Mult):
            return a * b
        if isinstance(op, ast.Div):
            return a / b
        return a ** b
    fn = node.func.id
    args = [_eval_node(x, env) for x in node.args]
    if fn == "exp":
        return _SLog(np.ones_like(args[0].log), args[0].value())
    if fn == "log":
        v = args[0]
        if np.any(v.sign <= 0):
            raise InvalidParam("log of a non-positive quantity")
        return _SLog.of(v.log)
    if fn == "factorial":
        x = args[0].value()
        if np.any(x < 0):
            raise InvalidParam("factorial of a negative number")
        return _SLog(np.ones_like(x), gammaln(x + 1.0))
    a, n = args[0].value(), args[1].value()
    if np.any(a <= 0) or np.any(n < 0):
        raise InvalidParam("pochhammer(a, n) needs a > 0 and n >= 0")
    return _SLog(np.ones(np.broadcast(a, n).shape), gammaln(a + n) - gammaln(a))


def _expr_log_eval(tree, params, k1, k2):
    k1 = np.asarray(k1, dtype=float)
    k2 = np.asarray(k2, dtype=float)
    env = {name: _SLog.of(float(v)) for name, v in params.items()}
    env["k1"] = _SLog.of(k1)
    env["k2"] = _SLog.of(k2)
    out = _eval_node(tree, env)
    sign = np.broadcast_to(out.sign, np.broadcast(k1, k2).shape)
    if np.any(sign <= 0):
        raise InvalidParam("weight expression is not strictly positive")
    log = np.broadcast_to(out.log, sign.shape).astype(float)
    return log if log.ndim else float(log)


def _estimate_xi(log_eval) -> float:
    k1, k2 = np.meshgrid(np.arange(_XI_RADIUS + 1), np.arange(_XI_RADIUS + 1), indexing="ij")
    lw = np.asarray(log_eval(k1, k2), dtype=float)
    norm = np.hypot(k1, k2)
    if lw[0, 0] > 1e-12:
        return math.inf
    mask = norm > 0
    return math.exp(max(0.0, float(np.max(lw[mask] / norm[mask]))))


def expression_weight(text: str, params: Optional[Mapping] = None, name: str = "expression",
                      tail_exponent=None, exp_bound_xi: Optional[float] = None) -> TwoSpeciesWeight:
    """A weight defined by an arithmetic expression in ``k1`` and ``k2``."""
    params = {k: float(v) for k, v in (params or {}).items()}
    tree = parse_expression(text, params)
    log_eval = partial(_expr_log_eval, tree, params)
    log_eval(np.arange(3), np.arange(3))  # fail early on bad expressions
    xi = float(exp_bound_xi) if exp_bound_xi is not None else _estimate_xi(log_eval)
    te = tuple(None if t is None else float(t) for t in tail_exponent) if tail_exponent else None
    return TwoSpeciesWeight(name=name, log_eval=log_eval, exp_bound_xi=xi, tail_exponent=te,
                            params=params)


_KEYS = {"name", "expression", "params", "tail_exponent", "exp_bound_xi", "log_weights"}


def weight_from_mapping(spec: Mapping) -> TwoSpeciesWeight:
    unknown = set(spec) - _KEYS
    if unknown:
        raise ConfigError(f"unknown keys in weight file: {sorted(unknown)}")
    if ("expression" in spec) == ("log_weights" in spec):
        raise ConfigError("weight file needs exactly one of 'expression' or 'log_weights'")
    name = str(spec.get("name", "user"))
    te = spec.get("tail_exponent")
    if "expression" in spec:
        return expression_weight(str(spec["expression"]), spec.get("params"), name, te,
                                 spec.get("exp_bound_xi"))
    return table_weight(spec["log_weights"], name=name, tail_exponent=te, params=spec.get("params"))


def load_weight(path) -> TwoSpeciesWeight:
    """Read a weight definition from a JSON or YAML file."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read weight file {path}: {exc.strerror}") from None
    try:
        spec = json.loads(text) if path.suffix == ".json" else yaml.safe_load(text)
    except (json.JSONDecodeError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot parse weight file {path}: {exc}") from None
    if not isinstance(spec, dict):
        raise ConfigError("weight file must contain a mapping")
    return weight_from_mapping(spec)
