"""Controller steps and the switching state machine.

Three regimes are supported:

* ``mnc_only``: multiplicative noise at every step.
* ``dwc_then_mnc``: directed-walk pulls through the interval ladder until
  the state first enters the target interval, then pure noise control.
* ``combined``: directed walk outside the hand-over interval, noise control
  inside it, directed-walk restarts on escape, and an absorbing pure-noise
  phase after the first entry into the target interval.

States outside the basin interval get no control at all (``FREE``): the
uncontrolled map is iterated until the orbit wanders in, which is how the
chaotic examples are started from arbitrary initial values.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, EvaluationError, OutOfBasinError
from .maps import MapSpec, map_eval
from .noise import NoiseSpec, RngStream, sample, trial_streams
from .params import DwcLadder, DwcParams

_DIRECTION_EPS = 1e-14


@dataclass(frozen=True)
class Phase:
    tag: str              # "DWC" | "MNC" | "MNC_FINAL" | "FREE"
    j: int | None = None  # ladder index, DWC only

    def label(self) -> str:
        return f"DWC:{self.j}" if self.tag == "DWC" else self.tag


PHASE_MNC = Phase("MNC")
PHASE_FINAL = Phase("MNC_FINAL")
PHASE_FREE = Phase("FREE")


def mnc_step(map_spec: MapSpec, z: float, xi_draw: float, sigma: float) -> float:
    """One multiplicative-noise step: f(z) + sigma*xi*(z - K), clamped at 0
    for truncated maps."""
    try:
        y = map_spec.f(z) + sigma * xi_draw * (z - map_spec.K)
    except OverflowError:
        raise EvaluationError(z) from None
    if map_spec.truncate_at_zero and y < 0.0:
        y = 0.0
    if not math.isfinite(y):
        raise EvaluationError(z)
    return y


def dwc_step(map_spec: MapSpec, z: float, j: int, zeta_draw: float, chi_draw: float,
             params: DwcParams | DwcLadder, K: float | None = None) -> float:
    """One directed-walk step at ladder level j:

        f(z) - alpha_j (1 + ell_c chi) sign(f(z) - K) + ell zeta.

    When f(z) lands within 1e-14 of K the pull direction is undefined; the
    pull is skipped and only the additive term is applied.
    """
    K = map_spec.K if K is None else K
    try:
        fz = map_spec.f(z)
    except OverflowError:
        raise EvaluationError(z) from None
    d = fz - K
    if abs(d) < _DIRECTION_EPS:
        y = fz + params.ell * zeta_draw
    else:
        alpha = params.alphas[min(j, len(params.alphas) - 1)]
        y = fz - alpha * (1.0 + params.ell_c * chi_draw) * math.copysign(1.0, d) \
            + params.ell * zeta_draw
    if map_spec.truncate_at_zero and y < 0.0:
        y = 0.0
    if not math.isfinite(y):
        raise EvaluationError(z)
    return y


def interval_index(z: float, K: float, u: float, a: float, k: int,
                   target: float | None = None) -> int:
    """Ladder index of z: the deepest level j in [0, k] with |z-K| <= a^{-j} u.

    Boundary points count as inside the deeper level.  States already inside
    the target interval index as k.  Raises :class:`OutOfBasinError` outside
    (K-u, K+u).
    """
    x = abs(z - K)
    if x >= u:
        raise OutOfBasinError(z, K, u)
    if target is not None and x < target:
        return k
    j = 0
    while j < k and x <= u * a ** -(j + 1):
        j += 1
    return j


@dataclass(frozen=True)
class ControlPlan:
    """Everything a run needs: regime, noise gain, and the interval radii."""

    regime: str                      # mnc_only | dwc_then_mnc | combined
    sigma: float
    delta: float | None = None       # target radius (sets tau / MNC_FINAL)
    u: float | None = None           # basin radius
    beta: float | None = None        # combined hand-over radius
    ladder: DwcParams | DwcLadder | None = None

    def __post_init__(self):
        if self.regime not in ("mnc_only", "dwc_then_mnc", "combined"):
            raise ConfigurationError("regime", f"unknown regime {self.regime!r}")
        if self.regime != "mnc_only":
            if self.ladder is None or self.u is None or self.delta is None:
                raise ConfigurationError("regime",
                                         f"{self.regime} needs a ladder, u and delta")
        if self.regime == "combined" and self.beta is None:
            raise ConfigurationError("regime", "combined needs beta")


class StreamDraws:
    """Lazy per-role draw provider backed by three independent streams."""

    def __init__(self, noise: NoiseSpec, xi_stream: RngStream,
                 zeta_stream: RngStream, chi_stream: RngStream):
        self.noise = noise
        self._xi, self._zeta, self._chi = xi_stream, zeta_stream, chi_stream

    def xi(self) -> float:
        return sample(self.noise, self._xi)

    def zeta(self) -> float:
        return sample(self.noise, self._zeta)

    def chi(self) -> float:
        return sample(self.noise, self._chi)


class ForcedDraws(StreamDraws):
    """Draw provider with per-role overrides: a constant, or a finite
    sequence falling back to the stream when exhausted.  Used to drive the
    forced-run and deterministic-walk checks."""

    def __init__(self, base: StreamDraws, xi=None, zeta=None, chi=None):
        super().__init__(base.noise, base._xi, base._zeta, base._chi)
        self._overrides = {"xi": self._as_iter(xi), "zeta": self._as_iter(zeta),
                           "chi": self._as_iter(chi)}

    @staticmethod
    def _as_iter(value):
        if value is None:
            return None
        if isinstance(value, (int, float)):
            return iter(lambda: float(value), object())  # endless constant
        return iter(value)

    def _draw(self, role: str, fallback) -> float:
        it = self._overrides[role]
        if it is not None:
            try:
                return float(next(it))
            except StopIteration:
                self._overrides[role] = None
        return fallback()

    def xi(self) -> float:
        return self._draw("xi", super().xi)

    def zeta(self) -> float:
        return self._draw("zeta", super().zeta)

    def chi(self) -> float:
        return self._draw("chi", super().chi)


def _next_phase(z: float, K: float, plan: ControlPlan, final: bool) -> Phase:
    x = abs(z - K)
    if final or (plan.delta is not None and x < plan.delta):
        return PHASE_FINAL
    if plan.regime == "mnc_only":
        return PHASE_MNC
    if x < plan.u:
        if plan.regime == "combined" and x < plan.beta:
            return PHASE_MNC
        j = interval_index(z, K, plan.u, plan.ladder.a, plan.ladder.k, plan.ladder.delta)
        return Phase("DWC", j)
    return PHASE_FREE


def controller_next(map_spec: MapSpec, z: float, phase: Phase, plan: ControlPlan,
                    draws: StreamDraws) -> tuple[float, Phase, tuple[float, float, float], bool]:
    """Advance one step.  Returns (z', phase', consumed draws, escaped).

    ``consumed`` holds the (xi, zeta, chi) values actually used this step,
    NaN for roles not consumed.  ``escaped`` flags a combined-regime state
    that left the basin during a noise-control step (theory excludes this
    when beta < beta1; it can occur with the wider numerical basins).
    """
    K = map_spec.K
    xi = zeta = chi = math.nan
    escaped = False
    if phase.tag in ("MNC", "MNC_FINAL"):
        xi = draws.xi()
        z2 = mnc_step(map_spec, z, xi, plan.sigma)
        if (plan.regime == "combined" and phase.tag == "MNC"
                and abs(z2 - K) >= plan.u):
            escaped = True
    elif phase.tag == "DWC":
        zeta = draws.zeta()
        chi = draws.chi()
        z2 = dwc_step(map_spec, z, phase.j, zeta, chi, plan.ladder, K)
    else:  # FREE: wait for the orbit to enter the basin
        z2 = map_eval(map_spec, z)
    phase2 = _next_phase(z2, K, plan, final=(phase.tag == "MNC_FINAL"))
    return z2, phase2, (xi, zeta, chi), escaped


@dataclass
class Trajectory:
    """A recorded run: states z_0..z_N, per-state phases, consumed draws,
    first hit time of the target interval, and the seed record."""

    states: np.ndarray
    phases: list[Phase]
    draws: np.ndarray          # shape (N+1, 3); last row NaN
    K: float
    tau: int | None
    escapes: list[int]
    master_seed: int
    trial_id: int

    def abs_err(self) -> np.ndarray:
        return np.abs(self.states - self.K)

    def final_abs_err(self) -> float:
        return float(abs(self.states[-1] - self.K))


def run_trajectory(map_spec: MapSpec, noise: NoiseSpec, plan: ControlPlan,
                   z0, horizon: int, master_seed: int, trial_id: int = 0,
                   draws: StreamDraws | None = None) -> Trajectory:
    """Run ``horizon`` controller steps from z0, recording everything.

    ``z0`` may be a number or a (lo, hi) range sampled uniformly from the
    trial's init stream.  The result is a pure function of
    (map, noise, plan, z0, horizon, master_seed, trial_id).
    """
    if horizon < 1:
        raise ConfigurationError("horizon", "horizon must be >= 1")
    xi_s, zeta_s, chi_s, init_s = trial_streams(master_seed, trial_id)
    if draws is None:
        draws = StreamDraws(noise, xi_s, zeta_s, chi_s)
    if isinstance(z0, (tuple, list)):
        lo, hi = z0
        z = float(init_s.generator.uniform(lo, hi))
    else:
        z = float(z0)

    states = np.empty(horizon + 1)
    consumed = np.full((horizon + 1, 3), np.nan)
    phases: list[Phase] = []
    escapes: list[int] = []
    tau: int | None = None

    phase = _next_phase(z, map_spec.K, plan, final=False)
    for n in range(horizon + 1):
        states[n] = z
        phases.append(phase)
        if tau is None and phase.tag == "MNC_FINAL":
            tau = n
        if n == horizon:
            break
        try:
            z, phase, used, escaped = controller_next(map_spec, z, phase, plan, draws)
        except EvaluationError as exc:
            raise EvaluationError(exc.z, step=n) from exc
        consumed[n] = used
        if escaped:
            escapes.append(n)
    return Trajectory(states=states, phases=phases, draws=consumed, K=map_spec.K,
                      tau=tau, escapes=escapes, master_seed=master_seed, trial_id=trial_id)


def trajectory_rows(traj: Trajectory):
    """Rows for the trajectory CSV: step, z, phase, interval_j, xi, zeta,
    chi, abs_err."""
    for n, (z, phase) in enumerate(zip(traj.states, traj.phases)):
        xi, zeta, chi = traj.draws[n]
        yield (n, float(z), phase.label(), phase.j if phase.tag == "DWC" else None,
               xi, zeta, chi, abs(float(z) - traj.K))
