"""Exception types shared across the package.

Derivation and configuration failures carry a short machine-readable
``constraint`` id naming the violated inequality (e.g. ``"a-window"``,
``"B-window"``), so CLI callers and tests can match on it.
"""

from __future__ import annotations


class NoiseStabError(Exception):
    """Base class for all package errors."""


class ConfigurationError(NoiseStabError, ValueError):
    """A parameter or choice violates one of its defining constraints."""

    def __init__(self, constraint: str, message: str):
        self.constraint = constraint
        super().__init__(f"[{constraint}] {message}")


class NotStabilizableError(ConfigurationError):
    """The log-multiplier mean is not negative: lambda <= 0 for this
    (q, sigma, noise) combination, so noise control cannot stabilize."""

    def __init__(self, message: str):
        super().__init__("lambda-positive", message)


class LambdaUndefinedError(ConfigurationError):
    """The multiplier 1 + q - sigma*xi vanishes on an atom of positive
    probability, so E ln|Theta| does not exist."""

    def __init__(self, message: str):
        super().__init__("lambda-defined", message)


class DeltaUnderflowError(NoiseStabError):
    """The derived target radius is below the smallest positive float.

    ``exponent10`` is the decimal exponent of the true value; the
    mantissa/exponent form remains available on the parameter record.
    """

    def __init__(self, exponent10: float):
        self.exponent10 = exponent10
        super().__init__(
            "[delta-underflow] derived delta underflows double precision: "
            f"delta ~ 10^{exponent10:.1f}; rerun with allow_delta_underflow "
            "or the desk-scale policy"
        )


class EvaluationError(NoiseStabError, ArithmeticError):
    """Map evaluation produced a non-finite value."""

    def __init__(self, z: float, step: int | None = None):
        self.z = z
        self.step = step
        at = f" at step {step}" if step is not None else ""
        super().__init__(f"map evaluation returned a non-finite value{at} (z={z!r})")


class OutOfBasinError(NoiseStabError):
    """State lies outside the basin interval around the fixed point."""

    def __init__(self, z: float, K: float, u: float):
        self.z = z
        super().__init__(f"z={z!r} outside ({K - u!r}, {K + u!r})")
