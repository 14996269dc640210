import math

import numpy as np
import pytest

from noisestab import (ControlPlan, ExperimentConfig, MncPolicy, Trajectory,
                       bernoulli, builtin_map, convergence_experiment, derive_mnc,
                       envelope_audit, lln_experiment, run_length_experiment,
                       run_trajectory, stability_sweep, uniform)
from noisestab.control import Phase
from noisestab.experiments import expected_run_waiting_time
from noisestab.noise import bernoulli_sigma_window


def _mnc_config(r, noise, sigma, trials=50, horizon=300, seed=1, **kw):
    m = builtin_map("logistic", r=r)
    plan = ControlPlan(regime="mnc_only", sigma=sigma)
    return ExperimentConfig(map_spec=m, noise=noise, plan=plan, z0=0.4,
                            trials=trials, horizon=horizon, master_seed=seed, **kw)


def test_convergence_separates_regimes():
    good = convergence_experiment(_mnc_config(3.1, uniform(), 0.9))
    bad = convergence_experiment(_mnc_config(3.1, uniform(), 0.4))
    assert good.success_fraction > 0.8
    assert bad.success_fraction < 0.2
    assert good.trials == sum(v.success for v in good.verdicts) + \
        sum(not v.success for v in good.verdicts)


def test_trivial_success_at_fixed_point():
    m = builtin_map("logistic", r=4.0, u=0.05)
    plan = ControlPlan(regime="mnc_only", sigma=0.0)
    cfg = ExperimentConfig(map_spec=m, noise=bernoulli(), plan=plan, z0=m.K,
                           trials=1, horizon=50, master_seed=0)
    assert convergence_experiment(cfg).success_fraction == 1.0


def test_report_invariant_under_worker_count():
    cfg1 = _mnc_config(3.3, bernoulli(), 0.85, trials=40, n_workers=1)
    cfg4 = _mnc_config(3.3, bernoulli(), 0.85, trials=40, n_workers=4)
    r1, r4 = convergence_experiment(cfg1), convergence_experiment(cfg4)
    assert r1.verdicts == r4.verdicts
    assert r1.success_fraction == r4.success_fraction


def test_lln_experiment_bernoulli():
    rep = lln_experiment(bernoulli(), 1.0, 2.1, n=100_000, repeats=100, master_seed=3)
    assert rep.lam == pytest.approx(0.4457, abs=1e-4)
    assert rep.frac_within_3 >= 0.99


def test_lln_experiment_uniform():
    rep = lln_experiment(uniform(), 0.1, 0.9, n=100_000, repeats=100, master_seed=4)
    assert rep.lam == pytest.approx(0.051, abs=1e-3)
    assert rep.frac_within_3 >= 0.99


def test_lln_sigma_zero_exact():
    rep = lln_experiment(bernoulli(), 1.0, 0.0, n=1000, repeats=20, master_seed=5)
    assert rep.lam == -math.log(2.0)
    assert (rep.deviations == 0).all()


def test_lln_deviation_scaling():
    # quadrupling n should halve the median absolute deviation of the raw mean
    def mad_raw(n):
        rep = lln_experiment(bernoulli(), 1.0, 2.1, n=n, repeats=200, master_seed=6)
        # deviations are normalized by theta/sqrt(n); undo to get raw scale
        return float(np.median(np.abs(rep.deviations))) * rep.theta / math.sqrt(n)

    ratio = mad_raw(2000) / mad_raw(8000)
    assert 1.6 <= ratio <= 2.5


def test_run_waiting_oracle_closed_form():
    # Markov solve against (1 - p^L) / (p^L (1 - p))
    for p, L in [(0.5, 3), (0.5, 1), (0.25, 2), (0.3, 4)]:
        closed = (1 - p ** L) / (p ** L * (1 - p))
        assert expected_run_waiting_time(p, L) == pytest.approx(closed, rel=1e-12)
    assert expected_run_waiting_time(0.5, 3) == pytest.approx(14.0)
    assert expected_run_waiting_time(0.5, 1) == pytest.approx(2.0)
    assert expected_run_waiting_time(0.25, 2) == pytest.approx(20.0)


def test_run_length_experiment_matches_oracle():
    rep = run_length_experiment(bernoulli(), iota=0.3, run_length=3,
                                trials=4000, master_seed=7)
    assert rep.p_iota == 0.5 and rep.oracle_mean == pytest.approx(14.0)
    se = np.std([w for w in rep.waits if w is not None]) / math.sqrt(rep.trials)
    assert abs(rep.empirical_mean - 14.0) <= 4 * se
    assert rep.censored == 0

    rep2 = run_length_experiment(uniform(), iota=0.5, run_length=2,
                                 trials=4000, master_seed=8)
    assert rep2.p_iota == pytest.approx(0.25)
    assert rep2.oracle_mean == pytest.approx(20.0)
    se2 = np.std([w for w in rep2.waits if w is not None]) / math.sqrt(rep2.trials)
    assert abs(rep2.empirical_mean - 20.0) <= 4 * se2


def test_stability_sweep_matches_window():
    qs = [0.0, 0.3, 1.0]
    sigmas = list(np.linspace(0.05, 2.5, 100))
    rows = stability_sweep(bernoulli(), qs, sigmas)
    assert len(rows) == 300
    for row in rows:
        lo, hi = bernoulli_sigma_window(row.q)
        assert row.stabilizable == (lo < row.sigma < hi), row


def test_stability_sweep_uniform_sign_change():
    rows = stability_sweep(uniform(), [0.1], [0.6, 0.8])
    assert rows[0].lam == pytest.approx(-0.0405, abs=1e-3) and not rows[0].stabilizable
    assert rows[1].lam == pytest.approx(0.012, abs=1e-3) and rows[1].stabilizable


def test_stability_sweep_marks_singular_cells():
    rows = stability_sweep(bernoulli(), [1.0], [2.0])
    assert math.isnan(rows[0].lam) and rows[0].note == "singular"


def _manual_trajectory(states, K, tau):
    n = len(states)
    return Trajectory(states=np.asarray(states, dtype=float),
                      phases=[Phase("MNC_FINAL")] * n,
                      draws=np.full((n, 3), np.nan), K=K, tau=tau,
                      escapes=[], master_seed=0, trial_id=0)


def test_envelope_audit_trivial_cases():
    kh = builtin_map("kappa_half")
    p = derive_mnc(kh, bernoulli(), 1.8, 0.3, MncPolicy(mode="desk"))
    flat = _manual_trajectory([kh.K] * 10, kh.K, tau=0)
    verdict = envelope_audit(flat, p)
    assert verdict.applicable and verdict.passed

    jump = _manual_trajectory([kh.K, kh.K + 2 * p.eta, kh.K], kh.K, tau=0)
    verdict = envelope_audit(jump, p)
    assert verdict.applicable and not verdict.passed and verdict.first_violation == 1

    untagged = _manual_trajectory([kh.K + 0.5] * 5, kh.K, tau=None)
    assert not envelope_audit(untagged, p).applicable


def test_envelope_fraction_meets_confidence_bound():
    # among >= 500 trials the envelope holds with frequency at least
    # 1 - gamma, up to a 3-sigma binomial margin
    kh = builtin_map("kappa_half")
    gamma = 0.3
    p = derive_mnc(kh, bernoulli(), 1.8, gamma, MncPolicy(mode="desk"))
    plan = ControlPlan(regime="mnc_only", sigma=1.8, delta=p.delta)
    cfg = ExperimentConfig(map_spec=kh, noise=bernoulli(), plan=plan, z0=1 + 1e-8,
                           trials=500, horizon=120, master_seed=31,
                           mnc_params=p, gamma=gamma)
    rep = convergence_experiment(cfg)
    margin = 3 * math.sqrt(gamma * (1 - gamma) / cfg.trials)
    assert rep.envelope_pass_fraction >= (1 - gamma) - margin


def test_return_time_bound_on_envelope_trials():
    # on envelope-satisfying trials, every excursion out of the target
    # interval ends within nbar steps of tau
    m4 = builtin_map("logistic", r=4.0, u=0.05)
    p = derive_mnc(m4, bernoulli(), 2.1, 0.3, MncPolicy(mode="desk"))
    assert p.nbar < 100
    plan = ControlPlan(regime="mnc_only", sigma=2.1, delta=p.delta)
    checked = 0
    for trial in range(200):
        traj = run_trajectory(m4, bernoulli(), plan, m4.K + 0.9 * p.delta, 300,
                              master_seed=13, trial_id=trial)
        verdict = envelope_audit(traj, p)
        if not (verdict.applicable and verdict.passed):
            continue
        checked += 1
        outside = np.nonzero(np.abs(traj.states - m4.K) >= p.delta)[0]
        if outside.size:
            assert outside.max() - traj.tau < p.nbar
    assert checked >= 50


def test_envelope_pass_rate_counts_unreached_as_failures():
    kh = builtin_map("kappa_half")
    p = derive_mnc(kh, bernoulli(), 1.8, 0.3, MncPolicy(mode="desk"))
    plan = ControlPlan(regime="mnc_only", sigma=1.8, delta=p.delta)
    cfg = ExperimentConfig(map_spec=kh, noise=bernoulli(), plan=plan, z0=1 + 1e-8,
                           trials=60, horizon=120, master_seed=777,
                           mnc_params=p, gamma=0.3)
    rep = convergence_experiment(cfg)
    assert rep.envelope_pass_fraction is not None
    assert 0.0 <= rep.envelope_pass_fraction <= 1.0
    flagged = sum(1 for v in rep.verdicts if v.envelope_pass)
    assert rep.envelope_pass_fraction == flagged / rep.trials
