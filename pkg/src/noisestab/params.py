"""Derivation of every constant the stability guarantees require.

Three bundles are derived here:

* :class:`MncParams` for the multiplicative-noise phase: the envelope rate
  ``varsigma``, the law-of-large-numbers slack ``epsilon``, the confidence
  horizon ``barN``, the burn-in factor ``M``, the envelope prefactor
  ``eta`` and the target radius ``delta``.
* :class:`DwcParams` for the directed-walk phase: the ladder ratio ``a``,
  the pull sizes ``alpha_j``, and the sure per-step contraction ``1 - mu``.
* :class:`CombinedParams` for the switching method: the hand-over radius
  ``beta``, the forced-run contraction ``H_iota`` and its step count
  ``bar_s``.

Every defining inequality is revalidated on the constructed bundle; a
violated choice raises :class:`ConfigurationError` naming the constraint.
``M``, ``eta`` and ``delta`` are always computed in log space because the
strict derivation routinely leaves double precision (this is a real feature
of the theory for strongly unstable maps, not an implementation defect);
float fields then underflow to 0.0 while the ``log_*`` fields stay exact.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from scipy.stats import norm

from .errors import ConfigurationError, DeltaUnderflowError, NotStabilizableError
from .maps import LocalBounds, MapSpec
from .noise import NoiseSpec, log_theta_moments, tail_prob

_MIN_FLOAT_LOG = math.log(5e-324)  # below this, exp() underflows to 0.0


def nbar_chebyshev(theta_sq: float, gamma: float, epsilon: float) -> int:
    """Smallest horizon with Chebyshev tail mass <= gamma/2 at that horizon:
    ceil(theta^2 / ((gamma/2) epsilon^2))."""
    if not 0.0 < gamma < 1.0:
        raise ConfigurationError("gamma-range", f"gamma must lie in (0,1), got {gamma}")
    if epsilon <= 0.0:
        raise ConfigurationError("epsilon-range", "epsilon must be positive")
    return max(1, math.ceil(theta_sq / ((gamma / 2.0) * epsilon * epsilon)))


def nbar_normal(theta: float, gamma: float, epsilon: float) -> int:
    """Smallest n with 2(1 - Phi(epsilon sqrt(n)/theta)) <= gamma/2."""
    if not 0.0 < gamma < 1.0:
        raise ConfigurationError("gamma-range", f"gamma must lie in (0,1), got {gamma}")
    if epsilon <= 0.0:
        raise ConfigurationError("epsilon-range", "epsilon must be positive")
    if theta == 0.0:
        return 1
    z = float(norm.ppf(1.0 - gamma / 4.0))
    n = max(1, math.ceil((z * theta / epsilon) ** 2))
    while n > 1 and 2.0 * (1.0 - norm.cdf(epsilon * math.sqrt(n - 1) / theta)) <= gamma / 2.0:
        n -= 1
    while 2.0 * (1.0 - norm.cdf(epsilon * math.sqrt(n) / theta)) > gamma / 2.0:
        n += 1
    return n


@dataclass(frozen=True)
class MncPolicy:
    """Choices left open by the theory, with safe defaults.

    Defaults: varsigma = lambda/4 and epsilon = min(kappa*varsigma/2,
    lambda - varsigma)/2, both strictly inside their open windows.  The
    ``desk`` mode keeps varsigma/epsilon but replaces the worst-case
    burn-in factor M by the one-step bound barTheta when sizing eta and
    delta, so the envelope is checkable at simulation scale; ``strict`` is
    the faithful derivation.
    """

    varsigma: float | None = None
    epsilon: float | None = None
    nbar_rule: str = "chebyshev"  # or "normal"
    nbar_floor: int = 0
    mode: str = "strict"          # or "desk"
    allow_delta_underflow: bool = False


@dataclass(frozen=True)
class MncParams:
    """Derived constants for the multiplicative-noise control phase."""

    q: float
    C: float
    kappa: float
    u: float
    sigma: float
    gamma: float
    lam: float
    varsigma: float
    epsilon: float
    theta_sq: float
    barN: int
    barN1: int
    barN2: int
    barTheta: float
    barv: float
    log_M: float
    log_eta: float
    log_delta: float
    nbar: int
    mode: str = "strict"

    @property
    def M(self) -> float:
        return math.exp(self.log_M) if self.log_M < 709.0 else math.inf

    @property
    def eta(self) -> float:
        return math.exp(self.log_eta) if self.log_eta > _MIN_FLOAT_LOG else 0.0

    @property
    def delta(self) -> float:
        return math.exp(self.log_delta) if self.log_delta > _MIN_FLOAT_LOG else 0.0

    def mantissa_exp10(self, log_value: float) -> tuple[float, int]:
        """Represent exp(log_value) as (mantissa, decimal exponent)."""
        e10 = math.floor(log_value / math.log(10.0))
        return 10.0 ** (log_value / math.log(10.0) - e10), int(e10)

    def check_invariants(self) -> None:
        ok = ConfigurationError
        if not self.varsigma < self.lam / 2.0:
            raise ok("varsigma-window", f"varsigma={self.varsigma} must be < lambda/2={self.lam / 2}")
        if not self.epsilon < min(self.kappa * self.varsigma / 2.0, self.lam - self.varsigma):
            raise ok("epsilon-window",
                     f"epsilon={self.epsilon} must be < min(kappa*varsigma/2, lambda-varsigma)")
        if abs(self.barTheta - (1.0 + self.q + self.sigma)) > 1e-12:
            raise ok("theta-bound", "barTheta != 1 + q + sigma")
        expected_barv = max(abs(math.log(abs(1.0 + self.q - self.sigma))) if self.sigma != 1.0 + self.q else math.inf,
                            math.log(1.0 + self.q + self.sigma))
        if not math.isclose(self.barv, expected_barv, rel_tol=1e-12, abs_tol=1e-12):
            raise ok("v-bound", "barv != max(|ln|1+q-sigma||, ln(1+q+sigma))")
        if abs(self.log_M - (self.barN - 1) * math.log(self.barTheta)) > 1e-9 * max(1.0, abs(self.log_M)):
            raise ok("burnin-factor", "M != barTheta^(barN-1)")
        if self.barN2 != max(self.barN1, self.barN):
            raise ok("horizon-max", "barN2 != max(barN1, barN)")
        if self.mode == "strict":
            cap = min(self._log_eta_term(), 0.0, math.log(self.u))
            if self.log_eta > cap + 1e-9 * max(1.0, abs(cap)):
                raise ok("eta-bound", "eta exceeds its admissible bound")
        else:
            if self.log_eta > min(0.0, math.log(self.u)) + 1e-12:
                raise ok("eta-bound", "desk eta exceeds min(1, u)")
        if not self.log_delta < 0.0:
            raise ok("delta-bound", "delta must be < 1")
        if not self.log_delta < self.log_eta - math.log(2.0) + 1e-12:
            raise ok("delta-bound", "delta must be < eta/2")
        if self.nbar != math.floor((self.log_eta - self.log_delta) / self.varsigma) + 1:
            raise ok("return-steps", "nbar != floor(ln(eta/delta)/varsigma) + 1")

    def _log_eta_term(self) -> float:
        x = -(1.0 + self.kappa) * self.varsigma
        log_sum = math.log(-math.expm1((self.barN2 + 1) * x)) - math.log(-math.expm1(x))
        return -(math.log(2.0 * self.C) + self.log_M
                 + self.varsigma * (self.barN2 + 1) + log_sum) / self.kappa


def _scan_barN1(lam: float, varsigma: float, epsilon: float, kappa: float, C: float,
                horizon: int = 10_000, cap: int = 20_000_000) -> int:
    """Smallest n such that, for all m >= n,

        sum_{j=1..m} e^{-B j} e^{-A (m-j)}  <  (1/2) C^{-1} e^{-(2 eps + varsigma)}

    with A = lambda - varsigma - epsilon and B = kappa varsigma - 2 epsilon.
    The partial sums follow the recursion g(m+1) = e^{-A} g(m) + e^{-B(m+1)};
    after the direct scan window a monotone envelope certifies the tail.
    """
    A = lam - varsigma - epsilon
    B = kappa * varsigma - 2.0 * epsilon
    if A <= 0.0 or B <= 0.0:
        raise ConfigurationError("epsilon-window",
                                 "barN1 needs lambda - varsigma - epsilon > 0 and "
                                 "kappa*varsigma - 2*epsilon > 0")
    rhs = 0.5 / C * math.exp(-(2.0 * epsilon + varsigma))
    decay_A = math.exp(-A)
    decay_B = math.exp(-B)
    term = 1.0
    g = 0.0
    first_good = None
    m = 0
    while m < cap:
        m += 1
        term *= decay_B
        g = decay_A * g + term
        if g < rhs:
            if first_good is None:
                first_good = m
        else:
            first_good = None
        if first_good is not None and m >= first_good + horizon:
            envelope = (math.exp(-A * (m / 2.0 - 1.0)) / (math.exp(B) - 1.0)
                        + math.exp(-B * m / 2.0) / (-math.expm1(-A)))
            if envelope < rhs:
                return first_good
    raise ConfigurationError("barN1-scan", f"tail not certified within {cap} terms")


def derive_mnc(map_spec: MapSpec, noise: NoiseSpec, sigma: float, gamma: float,
               policy: MncPolicy = MncPolicy()) -> MncParams:
    """Derive the full multiplicative-noise constant bundle.

    Raises :class:`NotStabilizableError` when lambda <= 0 and
    :class:`DeltaUnderflowError` when the strict delta underflows double
    precision (pass ``allow_delta_underflow=True`` to receive the bundle
    with the log-space fields instead).
    """
    map_spec.require_expansion()
    if not 0.0 < gamma < 1.0:
        raise ConfigurationError("gamma-range", f"gamma must lie in (0,1), got {gamma}")
    if sigma <= 0.0:
        raise ConfigurationError("sigma-range", "sigma must be positive")
    q, C, kappa, u = map_spec.q, map_spec.C, map_spec.kappa, map_spec.u

    mean, var = log_theta_moments(noise, q, sigma)
    lam = -mean
    if lam <= 0.0:
        raise NotStabilizableError(
            f"E ln|1+q-sigma*xi| = {mean:.6g} >= 0: not stabilizable at "
            f"(q={q}, sigma={sigma}, {noise.kind})")

    varsigma = lam / 4.0 if policy.varsigma is None else policy.varsigma
    eps_cap = min(kappa * varsigma / 2.0, lam - varsigma)
    epsilon = 0.5 * eps_cap if policy.epsilon is None else policy.epsilon
    if not 0.0 < varsigma < lam / 2.0:
        raise ConfigurationError("varsigma-window",
                                 f"varsigma must lie in (0, lambda/2) = (0, {lam / 2:.6g})")
    if not 0.0 < epsilon < eps_cap:
        raise ConfigurationError("epsilon-window",
                                 f"epsilon must lie in (0, {eps_cap:.6g})")

    theta = math.sqrt(var)
    if policy.nbar_rule == "chebyshev":
        barN = nbar_chebyshev(var, gamma, epsilon)
    elif policy.nbar_rule == "normal":
        barN = nbar_normal(theta, gamma, epsilon)
    else:
        raise ConfigurationError("nbar-rule", f"unknown nbar rule {policy.nbar_rule!r}")
    barN = max(barN, policy.nbar_floor, 2)

    barTheta = 1.0 + q + sigma
    barv = max(abs(math.log(abs(1.0 + q - sigma))) if sigma != 1.0 + q else math.inf,
               math.log(barTheta))
    log_M = (barN - 1) * math.log(barTheta)

    barN1 = _scan_barN1(lam, varsigma, epsilon, kappa, C)
    barN2 = max(barN1, barN)

    if policy.mode == "strict":
        x = -(1.0 + kappa) * varsigma
        log_sum = math.log(-math.expm1((barN2 + 1) * x)) - math.log(-math.expm1(x))
        log_eta_term = -(math.log(2.0 * C) + log_M + varsigma * (barN2 + 1) + log_sum) / kappa
        log_eta = min(log_eta_term, 0.0, math.log(u))
        # ln(M + C) via logaddexp to stay finite for astronomical M
        log_M_plus_C = max(log_M, math.log(C)) + math.log1p(math.exp(-abs(log_M - math.log(C))))
        log_delta = min(-log_M_plus_C - varsigma + log_eta,
                        math.log(0.5) + log_eta - log_M - varsigma * barN2)
    elif policy.mode == "desk":
        log_eta = min(0.0, math.log(u))
        log_delta = min(log_eta - varsigma - math.log(barTheta + C),
                        log_eta + math.log(0.499))
    else:
        raise ConfigurationError("mnc-mode", f"unknown mode {policy.mode!r}")

    nbar = math.floor((log_eta - log_delta) / varsigma) + 1
    params = MncParams(q=q, C=C, kappa=kappa, u=u, sigma=sigma, gamma=gamma, lam=lam,
                       varsigma=varsigma, epsilon=epsilon, theta_sq=var, barN=barN,
                       barN1=barN1, barN2=barN2, barTheta=barTheta, barv=barv,
                       log_M=log_M, log_eta=log_eta, log_delta=log_delta, nbar=nbar,
                       mode=policy.mode)
    params.check_invariants()
    if params.delta == 0.0 and not policy.allow_delta_underflow:
        raise DeltaUnderflowError(log_delta / math.log(10.0))
    return params


def _midpoint(lo: float, hi: float) -> float:
    return 0.5 * (lo + hi)


@dataclass(frozen=True)
class DwcParams:
    """Derived constants for the directed-walk ladder."""

    underline_L: float
    bar_q: float
    u: float
    delta: float
    a: float
    epsilon0: float
    ell_c: float
    B: float
    rho: float
    mu: float
    ell: float
    alphas: tuple[float, ...]
    k_delta_u: int
    k: int
    barm: int
    step_bound: float


def _ladder_depth(u: float, delta: float, a: float) -> int:
    """Smallest j with u a^{-(j+1)} < delta, enforced exactly."""
    j = max(0, math.floor(math.log(u / delta) / math.log(a)))
    while u * a ** -(j + 1) >= delta:
        j += 1
    while j > 0 and u * a ** -j < delta:
        j -= 1
    return j


def derive_dwc(bounds: LocalBounds, u: float, delta: float,
               a: float | None = None, ell_c: float | None = None,
               B: float | None = None, mu: float | None = None,
               ell: float | None = None) -> DwcParams:
    """Derive the directed-walk bundle; unchosen knobs default to interval
    midpoints.  Any explicit choice outside its admissible open interval
    raises :class:`ConfigurationError` naming the violated window.
    """
    L, qb = bounds.underline_L, bounds.bar_q
    if not 0.0 < delta < u:
        raise ConfigurationError("delta-window", f"need 0 < delta < u, got delta={delta}, u={u}")

    a_hi = L / qb
    a = _midpoint(1.0, a_hi) if a is None else a
    if not 1.0 < a < a_hi:
        raise ConfigurationError("a-window", f"a must lie in (1, underline_L/bar_q) = (1, {a_hi:.6g}), got {a}")
    epsilon0 = L - qb * a

    lc_hi = epsilon0 / (2.0 * qb * a + epsilon0)
    ell_c = _midpoint(0.0, lc_hi) if ell_c is None else ell_c
    if not 0.0 <= ell_c < lc_hi:
        raise ConfigurationError("lc-window", f"ell_c must lie in [0, {lc_hi:.6g}), got {ell_c}")

    B_lo = qb * a * a / (L * (1.0 - ell_c))
    B_hi = a / (1.0 + ell_c)
    if not B_lo < B_hi:
        raise ConfigurationError("B-window", f"empty B interval ({B_lo:.6g}, {B_hi:.6g})")
    B = _midpoint(B_lo, B_hi) if B is None else B
    if not B_lo < B < B_hi:
        raise ConfigurationError("B-window", f"B must lie in ({B_lo:.6g}, {B_hi:.6g}), got {B}")

    rho = 1.0 + qb - L * (1.0 - ell_c) * B / (a * a)
    if not 0.0 < rho < 1.0:
        raise ConfigurationError("rho-range", f"rho = {rho} outside (0,1)")

    mu = _midpoint(0.0, 1.0 - rho) if mu is None else mu
    if not 0.0 < mu < 1.0 - rho:
        raise ConfigurationError("mu-window", f"mu must lie in (0, {1.0 - rho:.6g}), got {mu}")

    ell_hi = (1.0 - rho - mu) * delta
    ell = ell_hi if ell is None else ell
    if not 0.0 <= ell <= ell_hi:
        raise ConfigurationError("ell-bound", f"ell must lie in [0, {ell_hi:.6g}], got {ell}")

    k_delta_u = _ladder_depth(u, delta, a)
    k = k_delta_u + 1
    alphas = tuple(L * a ** -(j + 2) * u * B for j in range(k + 1))
    barm = math.floor(-math.log(a) / math.log(1.0 - mu))
    step_bound = math.log(delta / u) / math.log(1.0 - mu)
    return DwcParams(underline_L=L, bar_q=qb, u=u, delta=delta, a=a, epsilon0=epsilon0,
                     ell_c=ell_c, B=B, rho=rho, mu=mu, ell=ell, alphas=alphas,
                     k_delta_u=k_delta_u, k=k, barm=barm, step_bound=step_bound)


@dataclass(frozen=True)
class DwcLadder:
    """A bare run-time ladder for simulations whose pull sizes are chosen
    numerically rather than derived (wider basins than the theory grants)."""

    u: float
    delta: float
    a: float
    k: int
    alphas: tuple[float, ...]
    ell: float = 0.0
    ell_c: float = 0.0

    @classmethod
    def from_scale(cls, u: float, delta: float, a: float, scale: float,
                   ell: float = 0.0, ell_c: float = 0.0) -> "DwcLadder":
        """Ladder with alpha_j = scale * a^{-(j+1)} u down to the target radius."""
        k = _ladder_depth(u, delta, a) + 1
        alphas = tuple(scale * a ** -(j + 1) * u for j in range(k + 1))
        return cls(u=u, delta=delta, a=a, k=k, alphas=alphas, ell=ell, ell_c=ell_c)


def combined_envelope(C: float, kappa: float, underline_theta: float,
                      beta: float, delta: float) -> tuple[float, int]:
    """Forced-run contraction factor and step count:

        H = |underline_theta| + C beta^kappa,   bar_s = floor(ln(delta/beta)/ln H).
    """
    H = abs(underline_theta) + C * beta ** kappa
    if not H < 1.0:
        raise ConfigurationError("H-contraction", f"H = {H} >= 1; beta too large")
    if not 0.0 < delta < beta:
        raise ConfigurationError("beta-above-delta", f"need delta < beta, got {delta} vs {beta}")
    return H, math.floor(math.log(delta / beta) / math.log(H))


@dataclass(frozen=True)
class CombinedParams:
    """Derived constants for the DWC/MNC switching method."""

    q: float
    C: float
    kappa: float
    u: float
    sigma: float
    iota: float
    p_iota: float
    barTheta: float
    underline_theta_iota: float
    beta1: float
    beta2: float
    binding_bound: float
    beta: float
    H_iota: float
    bar_s: int
    delta: float


def derive_combined(map_spec: MapSpec, noise: NoiseSpec, sigma: float, iota: float,
                    delta: float, beta: float | None = None) -> CombinedParams:
    """Derive the switching-method bundle.

    Requires q < sigma < 2 + q, a positive tail mass above 1 - iota, and a
    positive lambda.  ``beta`` defaults to 0.99 times the binding bound

        min( ((1 - |Theta_iota|)/C)^(1/kappa),  u/(barTheta + C) );

    for the logistic map the equivalent specialized form
    min((1-|r-2-(1-iota) sigma|)/r, u/(2r-2+sigma)) is used.
    """
    map_spec.require_expansion()
    q, C, kappa, u = map_spec.q, map_spec.C, map_spec.kappa, map_spec.u
    if not q < sigma < 2.0 + q:
        raise ConfigurationError("sigma-window", f"need q < sigma < 2+q, got sigma={sigma} at q={q}")
    mean, _ = log_theta_moments(noise, q, sigma)
    if -mean <= 0.0:
        raise NotStabilizableError(f"lambda = {-mean:.6g} <= 0 at (q={q}, sigma={sigma})")
    iota_hi = 1.0 - q / sigma
    if not 0.0 < iota < iota_hi:
        raise ConfigurationError("iota-window", f"iota must lie in (0, {iota_hi:.6g}), got {iota}")
    p_iota = tail_prob(noise, iota)
    if p_iota <= 0.0:
        raise ConfigurationError("tail-mass", f"P{{xi in (1-iota, 1]}} = 0 at iota={iota}")

    barTheta = 1.0 + q + sigma
    utheta = 1.0 + q - (1.0 - iota) * sigma
    if not abs(utheta) < 1.0:
        raise ConfigurationError("iota-window", f"|1+q-(1-iota)sigma| = {abs(utheta)} >= 1")

    beta1 = u / (barTheta + C)
    beta2 = ((1.0 - abs(utheta)) / C) ** (1.0 / kappa)
    if map_spec.kind == "logistic":
        r = map_spec.r
        binding = min((1.0 - abs(r - 2.0 - (1.0 - iota) * sigma)) / r,
                      u / (2.0 * r - 2.0 + sigma))
    else:
        binding = min(beta1, beta2)
    beta = 0.99 * binding if beta is None else beta
    if not 0.0 < beta < binding:
        raise ConfigurationError("beta-bound", f"beta must lie in (0, {binding:.6g}), got {beta}")
    H, bar_s = combined_envelope(C, kappa, utheta, beta, delta)
    return CombinedParams(q=q, C=C, kappa=kappa, u=u, sigma=sigma, iota=iota,
                          p_iota=p_iota, barTheta=barTheta, underline_theta_iota=utheta,
                          beta1=beta1, beta2=beta2, binding_bound=binding, beta=beta,
                          H_iota=H, bar_s=bar_s, delta=delta)
