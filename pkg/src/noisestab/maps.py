"""One-dimensional maps with an unstable positive fixed point.

A :class:`MapSpec` packages the map ``f`` with its fixed point ``K`` and,
when available, the local expansion data ``(q, C, kappa, u)`` describing

    f(K + x) = K - (1 + q) x + phi(x),   |phi(x)| <= C |x|^(1+kappa)

on the interval ``|x| < u``.  The built-in maps are the truncated logistic
map, the Ricker map, and a non-Lipschitz example with kappa = 1/2.  Custom
maps come from a tiny expression grammar so that config files stay
language-agnostic.
"""

from __future__ import annotations

import ast
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable

import numpy as np

from .errors import ConfigurationError, EvaluationError
from .noise import RngStream

FIXED_POINT_ATOL = 1e-12
_VALIDATE_SEED = 0x1D5EED  # fixed so validation reports are reproducible


@dataclass(frozen=True)
class LogisticMap:
    """Truncated logistic map z -> max(r z (1 - z), 0)."""

    r: float

    def __call__(self, z: float) -> float:
        return max(self.r * z * (1.0 - z), 0.0)


@dataclass(frozen=True)
class RickerMap:
    """Ricker map z -> z exp(r (1 - z))."""

    r: float

    def __call__(self, z: float) -> float:
        return z * math.exp(self.r * (1.0 - z))


@dataclass(frozen=True)
class KappaHalfMap:
    """Map with fixed point 1, slope -(1+q) = -1.5 and a |x|^{3/2} remainder.

    Not Lipschitz-differentiable at the fixed point: the remainder exponent
    is kappa = 1/2, which is exactly the regime a quadratic-remainder theory
    cannot cover.
    """

    def __call__(self, z: float) -> float:
        x = z - 1.0
        return 1.0 - 1.5 * x + 0.5 * abs(x) ** 1.5


_ALLOWED_BINOPS = (ast.Add, ast.Sub, ast.Mult, ast.Div, ast.Pow)
_ALLOWED_UNARY = (ast.USub, ast.UAdd)
_ALLOWED_CALLS = {"exp", "abs", "max"}
_EVAL_GLOBALS = {"__builtins__": {}, "exp": math.exp, "abs": abs, "max": max}


def _check_expression_node(node: ast.AST) -> None:
    if isinstance(node, ast.Expression):
        _check_expression_node(node.body)
    elif isinstance(node, ast.BinOp) and isinstance(node.op, _ALLOWED_BINOPS):
        _check_expression_node(node.left)
        _check_expression_node(node.right)
    elif isinstance(node, ast.UnaryOp) and isinstance(node.op, _ALLOWED_UNARY):
        _check_expression_node(node.operand)
    elif isinstance(node, ast.Call):
        if not (isinstance(node.func, ast.Name) and node.func.id in _ALLOWED_CALLS):
            raise ConfigurationError("expression-grammar",
                                     "only exp, abs and max may be called")
        if node.keywords:
            raise ConfigurationError("expression-grammar", "keyword arguments not allowed")
        for arg in node.args:
            _check_expression_node(arg)
    elif isinstance(node, ast.Name):
        if node.id != "z":
            raise ConfigurationError("expression-grammar",
                                     f"unknown name {node.id!r}; the state variable is 'z'")
    elif isinstance(node, ast.Constant):
        if not isinstance(node.value, (int, float)):
            raise ConfigurationError("expression-grammar", "only numeric constants allowed")
    else:
        raise ConfigurationError("expression-grammar",
                                 f"disallowed syntax: {type(node).__name__}")


@lru_cache(maxsize=None)
def _compile_expression(expr: str):
    try:
        tree = ast.parse(expr, mode="eval")
    except SyntaxError as exc:
        raise ConfigurationError("expression-grammar", f"cannot parse {expr!r}: {exc}") from exc
    _check_expression_node(tree)
    return compile(tree, "<map-expression>", "eval")


@dataclass(frozen=True)
class ExpressionMap:
    """Map defined by a closed-form expression in the variable ``z``.

    Grammar: numeric constants, z, + - * / **, unary minus, and the
    functions exp, abs, max.
    """

    expr: str

    def __post_init__(self):
        _compile_expression(self.expr)

    def __call__(self, z: float) -> float:
        return eval(_compile_expression(self.expr), _EVAL_GLOBALS, {"z": z})


@dataclass(frozen=True)
class MapSpec:
    """A map, its positive fixed point, and optional local expansion data."""

    f: Callable[[float], float]
    K: float
    q: float | None = None
    C: float | None = None
    kappa: float | None = None
    u: float | None = None
    truncate_at_zero: bool = False
    kind: str = "custom"
    r: float | None = None

    def has_expansion(self) -> bool:
        return None not in (self.q, self.C, self.kappa, self.u)

    def require_expansion(self) -> None:
        if not self.has_expansion():
            raise ConfigurationError(
                "expansion-data", f"map {self.kind!r} lacks local expansion data (q, C, kappa, u)")


def map_eval(map_spec: MapSpec, z: float) -> float:
    """Evaluate the map at z >= 0, clamping at 0 for truncated maps."""
    try:
        y = map_spec.f(z)
    except OverflowError:
        raise EvaluationError(z) from None
    if map_spec.truncate_at_zero and y < 0.0:
        y = 0.0
    if not math.isfinite(y):
        raise EvaluationError(z)
    return y


def _ricker_remainder_constant(r: float, u: float) -> float:
    # phi(x) = (1+x)e^{-rx} - 1 + (r-1)x has phi(0) = phi'(0) = 0, so the
    # Taylor remainder gives |phi(x)| <= x^2/2 * sup |phi''| on [-u, u]
    # with phi''(x) = r e^{-rx} (r(1+x) - 2).
    xs = np.linspace(-u, u, 20001)
    dd = r * np.exp(-r * xs) * (r * (1.0 + xs) - 2.0)
    return 1.001 * float(np.max(np.abs(dd))) / 2.0


def builtin_map(kind: str, r: float | None = None, u: float | None = None,
                truncate_at_zero: bool | None = None) -> MapSpec:
    """Construct one of the built-in maps with its derived expansion data.

    logistic (3 < r <= 4): K = 1 - 1/r, q = r - 3, C = r, kappa = 1,
    default basin radius u = 1/(4r).  ricker (r > 2): K = 1, q = r - 2,
    kappa = 1, C from the Taylor remainder bound, default u = 0.1.
    kappa_half: K = 1, q = 0.5, C = 0.5, kappa = 0.5, default u = 0.9.
    """
    if kind == "logistic":
        if r is None or not (3.0 < r <= 4.0):
            raise ConfigurationError("logistic-r", f"logistic requires r in (3, 4], got {r}")
        # u < 1/(4r) keeps bar_q < underline_L for the directed-walk bounds;
        # larger u is allowed for simulation (remainder C = r holds globally)
        u_eff = 1.0 / (4.0 * r) if u is None else u
        return MapSpec(LogisticMap(r), K=1.0 - 1.0 / r, q=r - 3.0, C=r, kappa=1.0,
                       u=u_eff, truncate_at_zero=True if truncate_at_zero is None else truncate_at_zero,
                       kind="logistic", r=r)
    if kind == "ricker":
        if r is None or r <= 2.0:
            raise ConfigurationError("ricker-r", f"ricker requires r > 2, got {r}")
        u_eff = 0.1 if u is None else u
        # population map: clamp at 0 so noise cannot push the state where
        # exp(r(1-z)) blows up
        return MapSpec(RickerMap(r), K=1.0, q=r - 2.0, C=_ricker_remainder_constant(r, u_eff),
                       kappa=1.0, u=u_eff,
                       truncate_at_zero=True if truncate_at_zero is None else truncate_at_zero,
                       kind="ricker", r=r)
    if kind == "kappa_half":
        u_eff = 0.9 if u is None else u
        return MapSpec(KappaHalfMap(), K=1.0, q=0.5, C=0.5, kappa=0.5, u=u_eff,
                       truncate_at_zero=False if truncate_at_zero is None else truncate_at_zero,
                       kind="kappa_half")
    raise ConfigurationError("map-kind", f"unknown builtin map {kind!r}")


def custom_map(expr: str, K: float, q: float | None = None, C: float | None = None,
               kappa: float | None = None, u: float | None = None,
               truncate_at_zero: bool = False) -> MapSpec:
    """Build a MapSpec from an expression string in the variable ``z``."""
    return MapSpec(ExpressionMap(expr), K=K, q=q, C=C, kappa=kappa, u=u,
                   truncate_at_zero=truncate_at_zero, kind="custom")


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str


@dataclass(frozen=True)
class ValidationReport:
    checks: tuple[CheckResult, ...]

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def __str__(self) -> str:
        return "\n".join(f"{'PASS' if c.passed else 'FAIL'} {c.name}: {c.detail}"
                         for c in self.checks)


def _sample_offsets(u: float, n_grid: int, n_random: int) -> np.ndarray:
    # deterministic grid strictly inside (-u, u) plus seeded random points
    grid = np.linspace(-u, u, n_grid + 2)[1:-1]
    rand = RngStream(_VALIDATE_SEED).generator.uniform(-u, u, size=n_random)
    return np.concatenate([grid, rand])


def validate_map(map_spec: MapSpec, n_samples: int = 1000,
                 n_grid: int = 10_000) -> ValidationReport:
    """Check the fixed point, the sign-reversal, and the remainder bound.

    Failures are reported, not raised.  Sampling uses a fixed grid plus
    seeded random points so reports are reproducible.
    """
    map_spec.require_expansion()
    if n_samples < 1:
        raise ConfigurationError("n-samples", "n_samples must be >= 1")
    K, q, C, kappa, u = map_spec.K, map_spec.q, map_spec.C, map_spec.kappa, map_spec.u
    checks = []

    fK = map_spec.f(K)
    err = abs(fK - K)
    checks.append(CheckResult("fixed_point", err <= FIXED_POINT_ATOL,
                              f"|f(K)-K| = {err:.3e} (tol {FIXED_POINT_ATOL:.0e})"))

    xs = _sample_offsets(u, n_grid, n_samples)
    xs = xs[np.abs(xs) > 1e-15]
    worst_sign = -math.inf
    worst_rem = -math.inf
    for x in xs:
        fz = map_spec.f(K + x)
        worst_sign = max(worst_sign, x * (fz - K))
        rem = abs(fz - K + (1.0 + q) * x) - C * abs(x) ** (1.0 + kappa)
        worst_rem = max(worst_rem, rem)
    checks.append(CheckResult("sign_reversal", worst_sign < 0.0,
                              f"max (z-K)(f(z)-K) = {worst_sign:.3e}"))
    tol = 1e-12 * C * u ** (1.0 + kappa) + 1e-15
    checks.append(CheckResult("remainder_bound", worst_rem <= tol,
                              f"max |phi| - C|x|^(1+kappa) = {worst_rem:.3e}"))
    return ValidationReport(tuple(checks))


@dataclass(frozen=True)
class LocalBounds:
    """Two-sided linear expansion bounds on the basin interval:

        underline_L |z-K| <= |f(z)-K| <= (1 + bar_q) |z-K|,
        with bar_q < underline_L <= 1 + bar_q.
    """

    underline_L: float
    bar_q: float

    def __post_init__(self):
        if not (0.0 < self.bar_q < self.underline_L <= 1.0 + self.bar_q):
            raise ConfigurationError(
                "local-bounds-window",
                f"need 0 < bar_q < underline_L <= 1 + bar_q, got "
                f"underline_L={self.underline_L}, bar_q={self.bar_q}; directed-walk "
                "control is inapplicable")


def local_bounds(map_spec: MapSpec) -> LocalBounds:
    """Derive LocalBounds for the map on its basin interval.

    Logistic maps use underline_L = r - 2ur - 2, bar_q = r + 2ur - 3; the
    Ricker map with r >= 3 uses the endpoint derivative extremes
    underline_L = e^{-ru}(r(1+u)-1), 1 + bar_q = e^{ru}(r(1-u)-1).  All
    other maps fall back to the generic remainder-based bounds
    underline_L = 1 + q - C u^kappa, bar_q = q + C u^kappa, which require
    C u^kappa < 1/2.
    """
    if map_spec.kind == "logistic":
        r, u = map_spec.r, map_spec.u
        return LocalBounds(underline_L=r - 2.0 * u * r - 2.0, bar_q=r + 2.0 * u * r - 3.0)
    if map_spec.kind == "ricker" and map_spec.r is not None and map_spec.r >= 3.0:
        r, u = map_spec.r, map_spec.u
        return LocalBounds(underline_L=math.exp(-r * u) * (r * (1.0 + u) - 1.0),
                           bar_q=math.exp(r * u) * (r * (1.0 - u) - 1.0) - 1.0)
    map_spec.require_expansion()
    cu = map_spec.C * map_spec.u ** map_spec.kappa
    if not cu < 0.5:
        raise ConfigurationError(
            "remainder-mass", f"generic bounds require C u^kappa < 1/2, got {cu}; "
            "directed-walk control is inapplicable at this u")
    return LocalBounds(underline_L=1.0 + map_spec.q - cu, bar_q=map_spec.q + cu)
