"""Monte Carlo campaigns and statistical checks.

Each experiment runs independent seeded trials and reduces them into a
report whose contents do not depend on worker count: trials are pure
functions of (config, master_seed, trial_id) and the reduction is keyed on
trial_id.  Reports carry the experiment configuration so emitted CSV files
are self-describing.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .control import ControlPlan, Trajectory, run_trajectory
from .errors import ConfigurationError, NoiseStabError
from .maps import MapSpec
from .noise import (NoiseSpec, RngStream, log_theta_moments, lyapunov_exponent,
                    sample, tail_prob)
from .params import MncParams


@dataclass(frozen=True)
class ExperimentConfig:
    """A Monte Carlo campaign: a control plan plus trial bookkeeping."""

    map_spec: MapSpec
    noise: NoiseSpec
    plan: ControlPlan
    z0: object                      # float or (lo, hi) range
    trials: int
    horizon: int
    master_seed: int
    tolerance: float = 1e-2
    gamma: float | None = None
    mnc_params: MncParams | None = None
    n_workers: int = 1

    def __post_init__(self):
        if self.trials < 1:
            raise ConfigurationError("trials", "trials must be >= 1")
        if self.tolerance <= 0:
            raise ConfigurationError("tolerance", "tolerance must be positive")


@dataclass(frozen=True)
class TrialVerdict:
    trial_id: int
    success: bool
    tau: int | None
    envelope_pass: bool | None
    final_abs_err: float
    escapes: int
    error: str | None = None


@dataclass
class ExperimentReport:
    config_echo: dict
    trials: int
    successes: int
    success_fraction: float
    ci3_halfwidth: float
    tau_min: int | None
    tau_median: float | None
    tau_max: int | None
    tau_bound: float | None
    envelope_pass_fraction: float | None
    verdicts: list[TrialVerdict] = field(repr=False, default_factory=list)
    derived_constants: dict = field(default_factory=dict)


@dataclass(frozen=True)
class EnvelopeVerdict:
    applicable: bool
    passed: bool | None
    first_violation: int | None


def envelope_audit(traj: Trajectory, mnc: MncParams) -> EnvelopeVerdict:
    """Check |z_m - K| <= eta e^{-varsigma (m - tau)} for every recorded
    m >= tau.  Not applicable when the trajectory never set tau."""
    if traj.tau is None:
        return EnvelopeVerdict(applicable=False, passed=None, first_violation=None)
    tau = traj.tau
    for m in range(tau, len(traj.states)):
        x = abs(float(traj.states[m]) - traj.K)
        if x == 0.0:
            continue
        if math.log(x) > mnc.log_eta - mnc.varsigma * (m - tau):
            return EnvelopeVerdict(applicable=True, passed=False, first_violation=m)
    return EnvelopeVerdict(applicable=True, passed=True, first_violation=None)


def _one_trial(cfg: ExperimentConfig, trial_id: int) -> TrialVerdict:
    try:
        traj = run_trajectory(cfg.map_spec, cfg.noise, cfg.plan, cfg.z0,
                              cfg.horizon, cfg.master_seed, trial_id)
    except NoiseStabError as exc:
        return TrialVerdict(trial_id, success=False, tau=None, envelope_pass=None,
                            final_abs_err=math.nan, escapes=0, error=str(exc))
    env = None
    if cfg.mnc_params is not None:
        verdict = envelope_audit(traj, cfg.mnc_params)
        env = verdict.passed if verdict.applicable else None
    return TrialVerdict(trial_id, success=traj.final_abs_err() < cfg.tolerance,
                        tau=traj.tau, envelope_pass=env,
                        final_abs_err=traj.final_abs_err(), escapes=len(traj.escapes))


def convergence_experiment(cfg: ExperimentConfig) -> ExperimentReport:
    """Run the campaign; success means |z_horizon - K| < tolerance.

    Per-trial errors are recorded in the verdicts without aborting the
    campaign.  The report is identical for any worker count.
    """
    ids = list(range(cfg.trials))
    if cfg.n_workers > 1:
        with ThreadPoolExecutor(max_workers=cfg.n_workers) as pool:
            verdicts = list(pool.map(lambda t: _one_trial(cfg, t), ids))
    else:
        verdicts = [_one_trial(cfg, t) for t in ids]
    verdicts.sort(key=lambda v: v.trial_id)

    n = cfg.trials
    successes = sum(v.success for v in verdicts)
    p = successes / n
    ci3 = 3.0 * math.sqrt(max(p * (1.0 - p), 1e-12) / n)
    taus = [v.tau for v in verdicts if v.tau is not None]
    env_flags = [v.envelope_pass for v in verdicts if v.envelope_pass is not None]
    env_fraction = None
    if cfg.mnc_params is not None:
        # runs that never reached the target interval count as failing the audit
        env_fraction = sum(bool(f) for f in env_flags) / n

    ladder = cfg.plan.ladder
    tau_bound = getattr(ladder, "step_bound", None) if ladder is not None else None
    echo = {
        "regime": cfg.plan.regime, "sigma": cfg.plan.sigma, "map": cfg.map_spec.kind,
        "noise": cfg.noise.kind, "trials": cfg.trials, "horizon": cfg.horizon,
        "master_seed": cfg.master_seed, "tolerance": cfg.tolerance, "z0": cfg.z0,
        "u": cfg.plan.u, "beta": cfg.plan.beta, "delta": cfg.plan.delta,
    }
    derived = {}
    if cfg.mnc_params is not None:
        m = cfg.mnc_params
        derived = {"lambda": m.lam, "varsigma": m.varsigma, "epsilon": m.epsilon,
                   "barN": m.barN, "barN2": m.barN2, "log_eta": m.log_eta,
                   "log_delta": m.log_delta, "mode": m.mode}
    if ladder is not None:
        derived.update({"ladder_a": ladder.a, "ladder_k": ladder.k,
                        "ladder_ell": ladder.ell, "ladder_ell_c": ladder.ell_c})
        for name in ("rho", "mu", "B", "epsilon0", "barm"):
            if hasattr(ladder, name):
                derived[f"ladder_{name}"] = getattr(ladder, name)
    return ExperimentReport(
        config_echo=echo, trials=n, successes=successes, success_fraction=p,
        ci3_halfwidth=ci3,
        tau_min=min(taus) if taus else None,
        tau_median=float(np.median(taus)) if taus else None,
        tau_max=max(taus) if taus else None,
        tau_bound=tau_bound, envelope_pass_fraction=env_fraction,
        verdicts=verdicts, derived_constants=derived)


@dataclass
class LlnReport:
    """Law-of-large-numbers check: per-repeat deviations of the empirical
    mean of ln|Theta| from -lambda, in units of theta/sqrt(n)."""

    n: int
    repeats: int
    lam: float
    theta: float
    deviations: np.ndarray
    frac_within_3: float


def lln_experiment(noise: NoiseSpec, q: float, sigma: float, n: int,
                   repeats: int, master_seed: int) -> LlnReport:
    if n < 1000:
        raise ConfigurationError("lln-n", "n must be >= 1000")
    mean, var = log_theta_moments(noise, q, sigma)
    theta = math.sqrt(var)
    devs = np.empty(repeats)
    for rep in range(repeats):
        stream = RngStream(master_seed).child(rep, 0)
        xi = sample(noise, stream, size=n)
        emp = float(np.mean(np.log(np.abs(1.0 + q - sigma * xi))))
        devs[rep] = 0.0 if theta == 0.0 else (emp - mean) * math.sqrt(n) / theta
    within = float(np.mean(np.abs(devs) <= 3.0)) if repeats else 0.0
    return LlnReport(n=n, repeats=repeats, lam=-mean, theta=theta,
                     deviations=devs, frac_within_3=within)


def expected_run_waiting_time(p: float, run_length: int) -> float:
    """Expected number of draws until ``run_length`` consecutive successes
    of probability p, by solving the hitting-time equations of the
    success-count chain."""
    if not 0.0 < p <= 1.0:
        raise ConfigurationError("tail-mass", f"success probability must be in (0,1], got {p}")
    L = run_length
    # E_i = 1 + p E_{i+1} + (1-p) E_0 for i < L, E_L = 0
    A = np.zeros((L, L))
    b = np.ones(L)
    for i in range(L):
        A[i, i] = 1.0
        if i + 1 < L:
            A[i, i + 1] = -p
        A[i, 0] -= 1.0 - p
    return float(np.linalg.solve(A, b)[0])


@dataclass
class RunLengthReport:
    iota: float
    p_iota: float
    run_length: int
    trials: int
    waits: list
    censored: int
    empirical_mean: float
    oracle_mean: float


def run_length_experiment(noise: NoiseSpec, iota: float, run_length: int,
                          trials: int, master_seed: int,
                          cap: int = 10_000_000) -> RunLengthReport:
    """First index at which ``run_length`` consecutive draws land in
    (1 - iota, 1], per trial, against the waiting-time oracle."""
    p = tail_prob(noise, iota)
    if p <= 0.0:
        raise ConfigurationError("tail-mass", f"no mass above 1-iota for iota={iota}")
    waits: list = []
    censored = 0
    chunk = 8192
    for t in range(trials):
        stream = RngStream(master_seed).child(t, 0)
        consumed = 0
        run = 0
        wait = None
        while consumed < cap and wait is None:
            draws = sample(noise, stream, size=min(chunk, cap - consumed))
            hits = draws > 1.0 - iota
            for h in hits:
                consumed += 1
                run = run + 1 if h else 0
                if run >= run_length:
                    wait = consumed
                    break
        if wait is None:
            censored += 1
        waits.append(wait)
    uncensored = [w for w in waits if w is not None]
    emp = float(np.mean(uncensored)) if uncensored else math.nan
    return RunLengthReport(iota=iota, p_iota=p, run_length=run_length, trials=trials,
                           waits=waits, censored=censored, empirical_mean=emp,
                           oracle_mean=expected_run_waiting_time(p, run_length))


def report_to_csv(report: ExperimentReport) -> str:
    """Canonical CSV form of a campaign report (17-digit numerics)."""

    def fmt(v):
        if isinstance(v, bool):
            return "true" if v else "false"
        if isinstance(v, float):
            return f"{v:.17g}"
        return "" if v is None else str(v)

    lines = ["# noisestab montecarlo v1"]
    for key, value in sorted(report.config_echo.items()):
        lines.append(f"# config {key} = {fmt(value)}")
    for key, value in sorted(report.derived_constants.items()):
        lines.append(f"# derived {key} = {fmt(value)}")
    lines.append("trials,successes,success_fraction,ci3_halfwidth,tau_min,tau_median,"
                 "tau_max,tau_bound,envelope_pass_fraction")
    lines.append(",".join(fmt(v) for v in [
        report.trials, report.successes, report.success_fraction, report.ci3_halfwidth,
        report.tau_min, report.tau_median, report.tau_max, report.tau_bound,
        report.envelope_pass_fraction]))
    lines.append("trial_id,success,tau,envelope_pass,final_abs_err,escapes,error")
    for v in report.verdicts:
        lines.append(",".join([str(v.trial_id), fmt(v.success), fmt(v.tau),
                               fmt(v.envelope_pass), fmt(v.final_abs_err),
                               str(v.escapes), v.error or ""]))
    return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class SweepRow:
    q: float
    sigma: float
    lam: float
    stabilizable: bool
    note: str = ""


def stability_sweep(noise: NoiseSpec, q_grid, sigma_grid) -> list[SweepRow]:
    """Table of lambda and the stabilizable flag over a (q, sigma) grid.

    Singular cells (a multiplier atom at zero) are marked, not fatal.
    """
    q_grid = list(q_grid)
    sigma_grid = list(sigma_grid)
    if not q_grid or not sigma_grid:
        raise ConfigurationError("sweep-grid", "grids must be nonempty")
    rows = []
    for q in q_grid:
        for s in sigma_grid:
            try:
                lam = lyapunov_exponent(noise, q, s)
                rows.append(SweepRow(q=q, sigma=s, lam=lam, stabilizable=lam > 0.0))
            except NoiseStabError:
                rows.append(SweepRow(q=q, sigma=s, lam=math.nan, stabilizable=False,
                                     note="singular"))
    return rows
