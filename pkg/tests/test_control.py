import math

import numpy as np
import pytest

from noisestab import (ControlPlan, DwcLadder, LocalBounds, OutOfBasinError,
                       bernoulli, builtin_map, controller_next, custom_map,
                       derive_combined, derive_dwc, dwc_step, interval_index,
                       mnc_step, run_trajectory, uniform)
from noisestab.control import ForcedDraws, Phase, StreamDraws
from noisestab.noise import trial_streams

REM1 = custom_map("1 + 1.4*(z - 1) - 0.2*abs(z - 1)", K=1.0)
REM1_BOUNDS = LocalBounds(underline_L=1.2, bar_q=0.6)


def rem1_dwc():
    return derive_dwc(REM1_BOUNDS, u=0.1, delta=0.001, a=1.25, ell_c=0.1, B=1.0, mu=0.05)


def test_mnc_step_hand_values():
    m4 = builtin_map("logistic", r=4.0, u=0.05)
    assert mnc_step(m4, 0.7, 1.0, 2.1) == pytest.approx(0.84 + 2.1 * (-0.05))
    assert mnc_step(m4, 0.95, -1.0, 2.1) == 0.0  # 0.19 - 0.42 clamps at 0
    assert mnc_step(m4, m4.K, 0.73, 2.1) == pytest.approx(m4.K)


def test_dwc_step_hand_values():
    up = custom_map("1.08 + 0*z", K=1.0)
    lad = DwcLadder(u=0.1, delta=0.001, a=1.25, k=1, alphas=(0.02, 0.02),
                    ell=0.001, ell_c=0.1)
    out = dwc_step(up, 0.95, 0, zeta_draw=-1.0, chi_draw=1.0, params=lad)
    assert out - 1.0 == pytest.approx(0.08 - 0.022 - 0.001)
    down = custom_map("0.92 + 0*z", K=1.0)
    out = dwc_step(down, 1.05, 0, zeta_draw=-1.0, chi_draw=1.0, params=lad)
    assert out - 1.0 == pytest.approx(-0.08 + 0.022 - 0.001)


def test_dwc_step_vanishing_control():
    m = builtin_map("logistic", r=3.3, u=0.05)
    lad = DwcLadder(u=0.05, delta=0.001, a=1.25, k=1, alphas=(0.0, 0.0))
    assert dwc_step(m, 0.68, 0, 0.4, -0.9, lad) == pytest.approx(m.f(0.68))


def test_dwc_step_degenerate_direction():
    # f lands exactly on K: the pull is skipped, only the additive term acts
    flat = custom_map("1.0 + 0*z", K=1.0)
    lad = DwcLadder(u=0.1, delta=0.001, a=1.25, k=1, alphas=(0.02, 0.02), ell=0.003)
    assert dwc_step(flat, 1.05, 0, 1.0, 1.0, lad) == pytest.approx(1.003)


def test_interval_index():
    # the exact halving boundary counts as inside the deeper level
    assert interval_index(0.064, K=0.0, u=0.128, a=2.0, k=5) == 1
    assert interval_index(0.99 * 0.128, K=0.0, u=0.128, a=2.0, k=5) == 0
    assert interval_index(1.0 + 0.0009, K=1.0, u=0.1, a=1.25, k=21, target=0.001) == 21
    with pytest.raises(OutOfBasinError):
        interval_index(1.2, K=1.0, u=0.1, a=1.25, k=21)


def test_final_phase_is_absorbing():
    m = builtin_map("logistic", r=3.3)
    plan = ControlPlan(regime="mnc_only", sigma=0.85, delta=1e-3)
    streams = trial_streams(1, 0)
    draws = StreamDraws(bernoulli(), *streams[:3])
    z, phase = m.K + 5e-4, Phase("MNC_FINAL")
    for _ in range(50):
        z, phase, _, _ = controller_next(m, z, phase, plan, draws)
        assert phase.tag == "MNC_FINAL"


def test_combined_revert_to_dwc_on_escape_from_beta():
    m4 = builtin_map("logistic", r=4.0, u=0.125)
    lad = DwcLadder.from_scale(u=0.125, delta=0.015, a=1.25, scale=2.2)
    plan = ControlPlan(regime="combined", sigma=2.1, delta=1e-6, u=0.125,
                       beta=0.015, ladder=lad)
    streams = trial_streams(3, 0)
    draws = ForcedDraws(StreamDraws(bernoulli(), *streams[:3]), xi=-1.0)
    z = m4.K + 0.014  # inside the hand-over interval, phase MNC
    z2, phase2, consumed, escaped = controller_next(m4, z, Phase("MNC"), plan, draws)
    assert not escaped
    assert abs(z2 - m4.K) > 0.015  # xi = -1 kicks it out of I_beta
    assert phase2.tag == "DWC"
    assert phase2.j == interval_index(z2, m4.K, 0.125, 1.25, lad.k, 0.015)


def test_trajectory_replay_is_bit_identical():
    m = builtin_map("logistic", r=3.3)
    plan = ControlPlan(regime="mnc_only", sigma=0.85)
    t1 = run_trajectory(m, bernoulli(), plan, 0.4, 300, master_seed=5, trial_id=9)
    t2 = run_trajectory(m, bernoulli(), plan, 0.4, 300, master_seed=5, trial_id=9)
    assert (t1.states == t2.states).all()
    assert np.array_equal(t1.draws, t2.draws, equal_nan=True)


def test_sigma_zero_from_fixed_point_is_constant():
    # r = 4 makes K = 0.75 and f(K) exactly representable, so the orbit
    # stays put bit-exactly (other r drift at ulp scale: the point is unstable)
    m = builtin_map("logistic", r=4.0, u=0.05)
    plan = ControlPlan(regime="mnc_only", sigma=0.0)
    traj = run_trajectory(m, bernoulli(), plan, m.K, 100, master_seed=0)
    assert (traj.states == 0.75).all()


def test_deterministic_walk_reaches_target_within_step_bound():
    # zeta = chi = 0 forced: the walk is deterministic and must enter the
    # target interval within ln(delta/u)/ln(1-mu) steps
    dwc = rem1_dwc()
    plan = ControlPlan(regime="dwc_then_mnc", sigma=2.1, delta=0.001, u=0.1, ladder=dwc)
    bound = math.floor(dwc.step_bound)
    for z0 in np.linspace(1 - 0.0999, 1 + 0.0999, 21):
        streams = trial_streams(0, 0)
        draws = ForcedDraws(StreamDraws(bernoulli(), *streams[:3]), zeta=0.0, chi=0.0)
        traj = run_trajectory(REM1, bernoulli(), plan, float(z0), 120,
                              master_seed=0, draws=draws)
        assert traj.tau is not None and traj.tau <= bound


def test_adversarial_dwc_contraction_per_cell():
    # sure contraction: |z' - K| <= (1 - mu) |z - K| for every ladder cell,
    # every grid point in the cell, and every extreme draw pair
    dwc = rem1_dwc()
    shrink = 1.0 - dwc.mu
    for j in range(dwc.k):
        hi = dwc.u * dwc.a ** -j
        lo = max(dwc.u * dwc.a ** -(j + 1), dwc.delta)
        radii = np.linspace(lo, hi, 1000, endpoint=False)
        for zeta in (-1.0, 0.0, 1.0):
            for chi in (-1.0, 0.0, 1.0):
                for sign in (1.0, -1.0):
                    zs = 1.0 + sign * radii
                    for z in zs[:: len(zs) // 100 or 1]:
                        z2 = dwc_step(REM1, float(z), j, zeta, chi, dwc)
                        assert abs(z2 - 1.0) <= shrink * abs(z - 1.0) + 1e-15


def test_dwc_leaves_each_level_within_barm_steps():
    dwc = rem1_dwc()
    plan = ControlPlan(regime="dwc_then_mnc", sigma=2.1, delta=0.001, u=0.1, ladder=dwc)
    for trial in range(100):
        traj = run_trajectory(REM1, uniform(), plan, (0.9005, 1.0995), 120,
                              master_seed=17, trial_id=trial)
        dwell = 0
        last_j = None
        for phase in traj.phases:
            if phase.tag != "DWC":
                break
            if phase.j == last_j:
                dwell += 1
                assert dwell <= dwc.barm
            else:
                last_j, dwell = phase.j, 1


def test_combined_safety_one_step_stays_in_basin():
    # with beta below the one-step bound, extreme noise cannot leave I_u
    m4 = builtin_map("logistic", r=4.0, u=0.05)
    comb = derive_combined(m4, bernoulli(), 2.1, iota=0.5, delta=1e-6)
    assert comb.beta < comb.beta1
    for x in np.linspace(-comb.beta, comb.beta, 501):
        for xi in (-1.0, 1.0):
            z2 = mnc_step(m4, m4.K + x, xi, 2.1)
            assert abs(z2 - m4.K) < m4.u


def test_forced_run_contracts_into_target():
    # runs of xi in (1 - iota, 1] land in the target interval within bar_s steps
    m4 = builtin_map("logistic", r=4.0, u=0.05)
    delta = 1e-6
    comb = derive_combined(m4, bernoulli(), 2.1, iota=0.5, delta=delta)
    for forced in (1.0, 1.0 - 0.99 * comb.iota, 1.0 - 0.5 * comb.iota):
        for x0 in np.linspace(-0.999 * comb.beta, 0.999 * comb.beta, 101):
            z = m4.K + x0
            steps = 0
            while abs(z - m4.K) >= delta:
                z = mnc_step(m4, z, forced, 2.1)
                steps += 1
                assert steps <= comb.bar_s, f"x0={x0}, forced={forced}"


def test_basin_escape_recorded_for_oversized_beta():
    # beta far above beta1: an extreme kick from I_beta leaves I_u and the
    # event is recorded, after which the walk resumes once back inside
    m4 = builtin_map("logistic", r=4.0, u=0.05)
    lad = DwcLadder.from_scale(u=0.05, delta=0.04, a=1.25, scale=2.2)
    plan = ControlPlan(regime="combined", sigma=2.1, delta=1e-9, u=0.05,
                       beta=0.04, ladder=lad)
    streams = trial_streams(11, 0)
    draws = ForcedDraws(StreamDraws(bernoulli(), *streams[:3]), xi=[-1.0])
    traj = run_trajectory(m4, bernoulli(), plan, m4.K + 0.039, 5,
                          master_seed=11, draws=draws)
    assert traj.escapes and traj.escapes[0] == 0
    assert traj.phases[1].tag == "FREE"


def test_trajectory_records_consumed_draws_per_phase():
    dwc = rem1_dwc()
    plan = ControlPlan(regime="dwc_then_mnc", sigma=2.1, delta=0.001, u=0.1, ladder=dwc)
    traj = run_trajectory(REM1, bernoulli(), plan, 1.09, 80, master_seed=2)
    for n, phase in enumerate(traj.phases[:-1]):
        xi, zeta, chi = traj.draws[n]
        if phase.tag == "DWC":
            assert math.isnan(xi) and not math.isnan(zeta) and not math.isnan(chi)
        else:
            assert not math.isnan(xi) and math.isnan(zeta) and math.isnan(chi)
