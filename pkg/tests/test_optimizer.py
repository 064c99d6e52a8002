import math

import numpy as np
import pytest

from cfisac.beamforming import PrecoderSet, mrt_precoders, normalize_per_ap_power
from cfisac.channel import sample_channels
from cfisac.optimizer import (
    DesignProblem,
    InfeasibleProblemError,
    SolverTolerances,
    bearings_from_geometry,
    beampattern_gains,
    feasibility_check,
    maximize_sum_se,
    maximize_sum_se_secure,
    sum_se,
)
from cfisac.scenario import SystemConfig, place_entities, noise_power_watts, dbm_to_watts


def make_problem(M=2, N=0, K=2, T=2, L=8, seed=0, gamma_dbm=10.0, delta=None,
                 p_max_dbm=30.0, rcs=1.0):
    cfg = SystemConfig(M=M, N=max(N, 0), K=K, T=T, L=L, seed=seed,
                       p_max_dbm=p_max_dbm, rcs_m2=rcs)
    geo = place_entities(cfg)
    ch = sample_channels(geo, seed=seed + 500)
    angles = bearings_from_geometry(geo)
    return DesignProblem(
        channels=ch,
        target_angles=angles,
        gamma_th_watts=dbm_to_watts(gamma_dbm),
        p_max_watts=cfg.p_max_watts,
        sigma2_watts=noise_power_watts(cfg),
        delta_max_bps_hz=delta,
    )


def test_single_user_optimum_is_full_power_mrt():
    cfg = SystemConfig(M=1, N=0, K=1, T=0, L=4, seed=1)
    geo = place_entities(cfg)
    ch = sample_channels(geo, seed=7)
    sigma2 = noise_power_watts(cfg)
    problem = DesignProblem(
        channels=ch,
        target_angles=np.zeros((1, 0)),
        gamma_th_watts=np.zeros(0),
        p_max_watts=cfg.p_max_watts,
        sigma2_watts=sigma2,
    )
    report = maximize_sum_se(problem)
    h = ch.h[0, 0]
    optimum = math.log2(1 + cfg.p_max_watts * np.linalg.norm(h) ** 2 / sigma2)
    assert report.objective_trace[-1] == pytest.approx(optimum, rel=1e-3)


def test_monotone_trace_and_feasible_solution():
    problem = make_problem(seed=2)
    report = maximize_sum_se(problem)
    diffs = np.diff(report.objective_trace)
    assert np.all(diffs >= -1e-9)
    assert report.feasibility.ok(problem)
    assert report.iterations <= problem.tolerances.max_iterations


def test_solution_dominates_normalized_mrt_baseline():
    problem = make_problem(seed=3)
    report = maximize_sum_se(problem)
    base = normalize_per_ap_power(mrt_precoders(problem.channels), problem.p_max_watts)
    base_se = sum_se(base.w, base.s, problem.channels.h, problem.sigma2_watts)
    assert report.objective_trace[-1] >= base_se - 1e-9


def test_relaxing_beampattern_floor_never_hurts():
    tight = make_problem(seed=4, gamma_dbm=25.0)
    loose = make_problem(seed=4, gamma_dbm=-100.0)
    se_tight = maximize_sum_se(tight).objective_trace[-1]
    se_loose = maximize_sum_se(loose).objective_trace[-1]
    assert se_loose >= se_tight - 1e-9


def test_unreachable_floor_reports_infeasible():
    # above the single-AP full-power maximum L^2 * p_max
    problem = make_problem(seed=5, L=4)
    bad = DesignProblem(
        channels=problem.channels,
        target_angles=problem.target_angles,
        gamma_th_watts=4.0**2 * problem.p_max_watts * 2.0,
        p_max_watts=problem.p_max_watts,
        sigma2_watts=problem.sigma2_watts,
    )
    with pytest.raises(InfeasibleProblemError) as exc:
        maximize_sum_se(bad)
    assert "beampattern" in str(exc.value)


def test_solver_internal_and_external_feasibility_agree():
    problem = make_problem(seed=6)
    report = maximize_sum_se(problem)
    external = feasibility_check(report.precoders, problem)
    np.testing.assert_allclose(
        report.feasibility.power_slack, external.power_slack, atol=1e-8
    )
    np.testing.assert_allclose(
        report.feasibility.beampattern_slack, external.beampattern_slack, atol=1e-8
    )


# --- feasibility_check trivia --------------------------------------------------

def test_feasibility_zero_precoders():
    problem = make_problem(seed=7, T=1, K=1, L=2)
    zero = PrecoderSet(
        w=np.zeros((2, 1, 2), complex), s=np.zeros((2, 1, 2), complex)
    )
    rep = feasibility_check(zero, problem)
    np.testing.assert_allclose(rep.power_slack, problem.p_max_watts)
    expected = np.broadcast_to(-problem.gamma_th_watts[None, :], (2, 1))
    np.testing.assert_allclose(rep.beampattern_slack, expected)
    assert not rep.ok(problem)


def test_feasibility_mrt_at_cap_zero_power_slack():
    from dataclasses import replace

    problem = make_problem(seed=8, gamma_dbm=-200.0)
    raw = mrt_precoders(problem.channels)
    # force saturation: blow the power far above the cap, then normalize back
    hot = replace(raw, w=raw.w * 1e9, s=raw.s * 1e9)
    pre = normalize_per_ap_power(hot, problem.p_max_watts)
    rep = feasibility_check(pre, problem)
    np.testing.assert_allclose(rep.power_slack, 0.0, atol=1e-9 * problem.p_max_watts)


def test_feasibility_matches_bruteforce_reevaluation():
    problem = make_problem(seed=9, T=2, K=2, L=4)
    report = maximize_sum_se(problem)
    pre = report.precoders
    steering = problem.steering()
    for m in range(pre.n_aps):
        power = sum(
            abs(pre.w[m, k, l]) ** 2 for k in range(pre.n_users) for l in range(4)
        ) + sum(
            abs(pre.s[m, t, l]) ** 2 for t in range(pre.n_targets) for l in range(4)
        )
        assert problem.p_max_watts - power == pytest.approx(
            report.feasibility.power_slack[m], abs=1e-8
        )
        for t in range(pre.n_targets):
            gain = sum(
                abs(np.vdot(steering[m, t], pre.w[m, k])) ** 2 for k in range(pre.n_users)
            ) + sum(
                abs(np.vdot(steering[m, t], pre.s[m, j])) ** 2 for j in range(pre.n_targets)
            )
            assert gain - problem.gamma_th_watts[t] == pytest.approx(
                report.feasibility.beampattern_slack[m, t], rel=1e-8
            )


# --- secure variant --------------------------------------------------------------

def test_secure_with_infinite_cap_identical_trace():
    base = make_problem(seed=10)
    secure = DesignProblem(
        channels=base.channels,
        target_angles=base.target_angles,
        gamma_th_watts=base.gamma_th_watts,
        p_max_watts=base.p_max_watts,
        sigma2_watts=base.sigma2_watts,
        delta_max_bps_hz=math.inf,
    )
    r1 = maximize_sum_se(base)
    r2 = maximize_sum_se_secure(secure)
    np.testing.assert_array_equal(r1.objective_trace, r2.objective_trace)
    np.testing.assert_array_equal(r1.precoders.w, r2.precoders.w)


def test_secure_cap_is_enforced():
    problem = make_problem(seed=11, delta=0.5, rcs=1e5)
    report = maximize_sum_se_secure(problem)
    from cfisac.link_performance import leakage_se

    leak = leakage_se(problem.channels, report.precoders, problem.sigma2_watts)
    assert np.all(leak.per_target_max <= 0.5 + 1e-4)
    assert report.feasibility.leakage_slack is not None
    assert np.all(report.feasibility.leakage_slack >= -1e-4)


def test_secure_never_beats_unconstrained():
    base = make_problem(seed=12, rcs=1e5)
    se_free = maximize_sum_se(base).objective_trace[-1]
    capped = DesignProblem(
        channels=base.channels,
        target_angles=base.target_angles,
        gamma_th_watts=base.gamma_th_watts,
        p_max_watts=base.p_max_watts,
        sigma2_watts=base.sigma2_watts,
        delta_max_bps_hz=0.5,
    )
    se_secure = maximize_sum_se_secure(capped).objective_trace[-1]
    assert se_secure <= se_free + 1e-9


def test_secure_zero_cap_silences_users():
    problem = make_problem(seed=13, delta=0.0, K=1, T=1, M=1, L=4)
    report = maximize_sum_se_secure(problem)
    from cfisac.link_performance import leakage_se

    leak = leakage_se(problem.channels, report.precoders, problem.sigma2_watts)
    assert np.all(leak.per_target_max <= 1e-4)
    # communication power toward the target must be essentially zero
    assert report.objective_trace[-1] <= maximize_sum_se(
        DesignProblem(
            channels=problem.channels,
            target_angles=problem.target_angles,
            gamma_th_watts=problem.gamma_th_watts,
            p_max_watts=problem.p_max_watts,
            sigma2_watts=problem.sigma2_watts,
        )
    ).objective_trace[-1] + 1e-9


def test_dominance_chain():
    base = make_problem(seed=14, rcs=1e4)
    unconstrained = DesignProblem(
        channels=base.channels,
        target_angles=base.target_angles,
        gamma_th_watts=0.0,
        p_max_watts=base.p_max_watts,
        sigma2_watts=base.sigma2_watts,
    )
    se_un = maximize_sum_se(unconstrained).objective_trace[-1]
    se_bp = maximize_sum_se(base).objective_trace[-1]
    secure = DesignProblem(
        channels=base.channels,
        target_angles=base.target_angles,
        gamma_th_watts=base.gamma_th_watts,
        p_max_watts=base.p_max_watts,
        sigma2_watts=base.sigma2_watts,
        delta_max_bps_hz=0.3,
    )
    se_sec = maximize_sum_se_secure(secure).objective_trace[-1]
    assert se_un >= se_bp - 1e-9 >= se_sec - 2e-9


def test_bearings_within_half_pi():
    geo = place_entities(SystemConfig(M=4, N=0, K=0, T=3, seed=15))
    b = bearings_from_geometry(geo)
    assert b.shape == (4, 3)
    assert np.all(np.abs(b) <= np.pi / 2 + 1e-12)


def test_beampattern_gain_helper_matches_module():
    from cfisac.sensing_metrics import tx_beampattern_gain

    problem = make_problem(seed=16, T=2, K=2, L=4)
    pre = normalize_per_ap_power(mrt_precoders(problem.channels), problem.p_max_watts)
    gains = beampattern_gains(pre.w, pre.s, problem.steering())
    for m in range(2):
        for t in range(2):
            ref = tx_beampattern_gain(pre.w[m], pre.s[m], problem.target_angles[m, t])
            assert gains[m, t] == pytest.approx(ref, rel=1e-12)
