"""Bounded i.i.d. noise sources and their log-multiplier statistics.

Every noise kind is supported on [-1, 1].  The quantity that drives all
stability analysis is the random multiplier ``Theta = 1 + q - sigma*xi``
and its logarithm ``v = ln|Theta|``; this module computes E[v] and Var[v]
in closed form where available and by adaptive quadrature otherwise.

Randomness follows a counter-based, splittable contract: every stream is a
pure function of ``(master_seed, stream_id)`` and the draw index, realised
with numpy's Philox generator keyed through ``SeedSequence`` spawn keys.
Distinct stream ids give statistically independent streams, which is what
lets trials (and the three noise roles within a trial) run concurrently
with no shared state.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate

from .errors import ConfigurationError, LambdaUndefinedError

_ATOL = 1e-12


@dataclass(frozen=True)
class RngStream:
    """Deterministic random stream keyed by (master_seed, stream_id).

    The same key always replays the same draw sequence; ``child`` derives
    an independent stream by extending the key.
    """

    master_seed: int
    stream_id: tuple[int, ...] = ()
    _gen: np.random.Generator = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        seq = np.random.SeedSequence(self.master_seed, spawn_key=self.stream_id)
        object.__setattr__(self, "_gen", np.random.Generator(np.random.Philox(seq)))

    def child(self, *ids: int) -> "RngStream":
        return RngStream(self.master_seed, self.stream_id + tuple(ids))

    @property
    def generator(self) -> np.random.Generator:
        return self._gen


# Stream roles within one trial: per-step noises and the initial state.
ROLE_XI, ROLE_ZETA, ROLE_CHI, ROLE_INIT = 0, 1, 2, 3


def trial_streams(master_seed: int, trial_id: int) -> tuple[RngStream, RngStream, RngStream, RngStream]:
    """Return the four independent streams (xi, zeta, chi, init) for a trial."""
    base = RngStream(master_seed)
    return tuple(base.child(trial_id, role) for role in (ROLE_XI, ROLE_ZETA, ROLE_CHI, ROLE_INIT))


@dataclass(frozen=True)
class NoiseSpec:
    """A bounded i.i.d. noise distribution on [-1, 1].

    ``kind`` is one of ``bernoulli_pm1`` (values +-1 with probability 1/2
    each), ``uniform_m1_1`` (continuous uniform), or ``custom_discrete``
    with explicit atoms.
    """

    kind: str
    values: tuple[float, ...] = ()
    probabilities: tuple[float, ...] = ()

    def __post_init__(self):
        if self.kind not in ("bernoulli_pm1", "uniform_m1_1", "custom_discrete"):
            raise ConfigurationError("noise-kind", f"unknown noise kind {self.kind!r}")
        if self.kind == "custom_discrete":
            if len(self.values) != len(self.probabilities) or not self.values:
                raise ConfigurationError("noise-atoms", "values and probabilities must be nonempty and match")
            if abs(sum(self.probabilities) - 1.0) > _ATOL:
                raise ConfigurationError("noise-atoms", "probabilities must sum to 1 within 1e-12")
            if any(p < 0 for p in self.probabilities):
                raise ConfigurationError("noise-atoms", "probabilities must be nonnegative")
            if any(abs(v) > 1.0 for v in self.values):
                raise ConfigurationError("noise-support", "all atoms must lie in [-1, 1]")

    @property
    def atoms(self) -> tuple[tuple[float, ...], tuple[float, ...]]:
        if self.kind == "bernoulli_pm1":
            return (1.0, -1.0), (0.5, 0.5)
        if self.kind == "custom_discrete":
            return self.values, self.probabilities
        raise ConfigurationError("noise-kind", f"{self.kind} has no atoms")


def bernoulli() -> NoiseSpec:
    return NoiseSpec("bernoulli_pm1")


def uniform() -> NoiseSpec:
    return NoiseSpec("uniform_m1_1")


def discrete(values, probabilities) -> NoiseSpec:
    return NoiseSpec("custom_discrete", tuple(values), tuple(probabilities))


def sample(noise: NoiseSpec, stream: RngStream, size: int | None = None):
    """Draw the next i.i.d. value(s) from ``noise``, advancing ``stream``."""
    gen = stream.generator
    if noise.kind == "bernoulli_pm1":
        draws = gen.integers(0, 2, size=size) * 2 - 1
        return float(draws) if size is None else draws.astype(float)
    if noise.kind == "uniform_m1_1":
        draws = gen.uniform(-1.0, 1.0, size=size)
        return float(draws) if size is None else draws
    vals = np.asarray(noise.values)
    idx = gen.choice(len(vals), size=size, p=np.asarray(noise.probabilities))
    draws = vals[idx]
    return float(draws) if size is None else draws


def _check_nondegenerate(noise: NoiseSpec, q: float, sigma: float) -> None:
    if sigma == 0.0:
        return
    if noise.kind == "uniform_m1_1":
        return  # the zero of Theta carries no mass
    values, probs = noise.atoms
    for v, p in zip(values, probs):
        if p > 0 and abs(1.0 + q - sigma * v) < 1e-300:
            raise LambdaUndefinedError(
                f"1+q-sigma*xi vanishes on the atom xi={v} (q={q}, sigma={sigma})"
            )


def log_theta_moments(noise: NoiseSpec, q: float, sigma: float) -> tuple[float, float]:
    """Mean and variance of ln|1 + q - sigma*xi|.

    Bernoulli and discrete noises are summed exactly; the uniform mean has
    the closed form

        E v = [ (1+q+s) ln(1+q+s) + (s-1-q) ln|s-1-q| - 2s ] / (2s)

    and the uniform second moment is integrated adaptively to 1e-10,
    splitting at the integrand's singularity xi = (1+q)/sigma when it lies
    inside [-1, 1].
    """
    if q < 0:
        raise ConfigurationError("q-range", f"q must be nonnegative, got {q}")
    if sigma < 0:
        raise ConfigurationError("sigma-range", f"sigma must be nonnegative, got {sigma}")
    if sigma == 0.0:
        return math.log(1.0 + q), 0.0
    _check_nondegenerate(noise, q, sigma)

    if noise.kind == "uniform_m1_1":
        b = 1.0 + q
        d = sigma - b
        t2 = 0.0 if d == 0.0 else d * math.log(abs(d))
        mean = ((b + sigma) * math.log(b + sigma) + t2 - 2.0 * sigma) / (2.0 * sigma)

        def integrand(t):
            return math.log(abs(b - sigma * t)) ** 2

        t0 = b / sigma
        points = [t0] if -1.0 < t0 < 1.0 else None
        second, _ = integrate.quad(integrand, -1.0, 1.0, points=points,
                                   epsabs=1e-10, epsrel=1e-12, limit=200)
        second *= 0.5  # density of U[-1,1]
        return mean, max(second - mean * mean, 0.0)

    values, probs = noise.atoms
    vs = [math.log(abs(1.0 + q - sigma * v)) for v in values]
    mean = sum(p * v for p, v in zip(probs, vs))
    second = sum(p * v * v for p, v in zip(probs, vs))
    return mean, max(second - mean * mean, 0.0)


def lyapunov_exponent(noise: NoiseSpec, q: float, sigma: float) -> float:
    """lambda = -E ln|1 + q - sigma*xi|; positive means stabilizable."""
    mean, _ = log_theta_moments(noise, q, sigma)
    return -mean


def lambda_mc(noise: NoiseSpec, q: float, sigma: float, n_draws: int,
              stream: RngStream) -> tuple[float, float]:
    """Monte Carlo estimate of E ln|1+q-sigma*xi| with its standard error."""
    if n_draws < 100:
        raise ConfigurationError("mc-draws", "n_draws must be at least 100")
    xi = sample(noise, stream, size=n_draws)
    v = np.log(np.abs(1.0 + q - sigma * xi))
    if not np.all(np.isfinite(v)):
        raise LambdaUndefinedError("ln|1+q-sigma*xi| produced non-finite values")
    if np.all(v == v[0]):  # degenerate sample (e.g. sigma = 0): exact
        return float(v[0]), 0.0
    est = float(np.mean(v))
    se = float(np.std(v, ddof=1) / math.sqrt(n_draws)) if n_draws > 1 else 0.0
    return est, se


def bernoulli_sigma_window(q: float) -> tuple[float, float]:
    """Open sigma interval on which lambda > 0 for the +-1 Bernoulli noise.

    lambda > 0 iff (1+q)^2 - 1 < sigma^2 < (1+q)^2 + 1.
    """
    b2 = (1.0 + q) ** 2
    return math.sqrt(max(0.0, b2 - 1.0)), math.sqrt(b2 + 1.0)


def tail_prob(noise: NoiseSpec, iota: float) -> float:
    """P{xi in (1 - iota, 1]} for 0 < iota < 1."""
    if not 0.0 < iota < 1.0:
        raise ConfigurationError("iota-range", f"iota must lie in (0, 1), got {iota}")
    if noise.kind == "uniform_m1_1":
        return iota / 2.0
    values, probs = noise.atoms
    return sum(p for v, p in zip(values, probs) if 1.0 - iota < v <= 1.0)
