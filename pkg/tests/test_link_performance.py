import math

import numpy as np
import pytest

from cfisac import rng
from cfisac.beamforming import mrt_precoders, with_mrc
from cfisac.channel import ChannelSampler, link_gains, sample_channels
from cfisac.link_performance import (
    McEstimate,
    UserChannelStats,
    comm_se,
    comm_sinr_closed_form,
    comm_sinr_monte_carlo,
    ergodic_se_monte_carlo,
    evaluate_performance,
    leakage_se,
    mrt_mrc_rule,
    scaled_zeta_tables,
    sensing_sinr_closed_form,
    sensing_sinr_monte_carlo,
    uatf_se,
)
from cfisac.scenario import ConfigError, SystemConfig, place_entities, noise_power_watts


def geometry(M=2, N=2, K=2, T=2, L=4, seed=0, **kw):
    return place_entities(SystemConfig(M=M, N=N, K=K, T=T, L=L, seed=seed, **kw))


# --- closed forms: trivial analytic oracles -----------------------------------

def test_comm_closed_form_degenerate_exact():
    sinr = comm_sinr_closed_form(np.ones((1, 1)), np.zeros((1, 0)), L=1, sigma2=1.0)
    assert sinr[0] == pytest.approx(2.0, rel=1e-12)
    assert comm_se(sinr)[0] == pytest.approx(math.log2(3.0), rel=1e-12)


def test_sensing_closed_form_degenerate_exact():
    sinr = sensing_sinr_closed_form(
        zeta_gul=np.ones((1, 1)),
        zeta_gdl=np.ones((1, 1)),
        zeta_h=np.zeros((1, 0)),
        alpha=np.array([1.0 + 0j]),
        L=1,
        sigma2=1.0,
    )
    assert sinr[0, 0] == pytest.approx(4.0, rel=1e-12)


def test_comm_closed_form_rejects_bad_sigma():
    with pytest.raises(ConfigError):
        comm_sinr_closed_form(np.ones((1, 1)), np.zeros((1, 0)), 1, 0.0)


def test_sensing_closed_form_rejects_no_targets():
    with pytest.raises(ConfigError):
        sensing_sinr_closed_form(
            np.zeros((1, 0)), np.zeros((1, 0)), np.ones((1, 1)),
            np.zeros(0), 1, 1.0,
        )


def test_comm_sinr_increases_with_L():
    gen = rng.stream(0, rng.KIND_GENERIC, 42)
    zh = gen.uniform(0.1, 2.0, size=(3, 4))
    zg = gen.uniform(0.1, 2.0, size=(3, 2))
    values = [
        comm_sinr_closed_form(zh, zg, L, sigma2=1.0) for L in range(1, 17)
    ]
    for lo, hi in zip(values, values[1:]):
        assert np.all(hi > lo)


def test_adding_target_never_raises_comm_sinr():
    gen = rng.stream(0, rng.KIND_GENERIC, 43)
    zh = gen.uniform(0.1, 2.0, size=(4, 3))
    zg = gen.uniform(0.1, 2.0, size=(4, 2))
    base = comm_sinr_closed_form(zh, zg, 4, 0.5)
    grown = comm_sinr_closed_form(zh, np.hstack([zg, gen.uniform(0.1, 2.0, (4, 1))]), 4, 0.5)
    assert np.all(grown <= base)


def test_sensing_sinr_scales_with_rcs_single_target():
    zu = np.full((2, 1), 0.8)
    zg = np.full((3, 1), 1.2)
    zh = np.full((3, 2), 0.7)
    base = sensing_sinr_closed_form(zu, zg, zh, np.array([1.0 + 0j]), 4, 1.0)
    scaled = sensing_sinr_closed_form(zu, zg, zh, np.array([3.0 + 0j]), 4, 1.0)
    np.testing.assert_allclose(scaled, 9.0 * base, rtol=1e-12)


# --- Monte-Carlo vs closed form -----------------------------------------------

def unit_gains_sampler(M, N, K, T, L, seed):
    """Sampler over a geometry with all large-scale gains forced to one."""
    from cfisac.channel import LinkGains

    geo = geometry(M=M, N=N, K=K, T=T, L=L)
    gains = LinkGains(
        zeta_h=np.ones((M, K)),
        zeta_gdl=np.ones((M, T)),
        zeta_gul=np.ones((N, T)),
        zeta_f=np.ones((M, N)),
    )
    return ChannelSampler(geo, seed, gains)


def test_comm_mc_matches_trivial_case():
    sampler = unit_gains_sampler(1, 1, 1, 0, 1, seed=5)
    est = comm_sinr_monte_carlo(sampler, mrt_mrc_rule(), 1.0, trials=20_000, seed=5)
    assert abs(est.sinr[0] - 2.0) < 3 * est.sinr_stderr[0]


def test_sensing_mc_matches_trivial_case():
    sampler = unit_gains_sampler(1, 1, 0, 1, 1, seed=6)
    est = sensing_sinr_monte_carlo(
        sampler, mrt_mrc_rule(), np.array([1.0 + 0j]), 1.0, trials=20_000, seed=6
    )
    assert abs(est.sinr[0, 0] - 4.0) < 3 * est.sinr_stderr[0, 0]


def test_comm_mc_ssi_vanishes_without_targets():
    sampler = unit_gains_sampler(2, 1, 2, 0, 2, seed=7)
    est = comm_sinr_monte_carlo(sampler, mrt_mrc_rule(), 1.0, trials=500, seed=7)
    np.testing.assert_array_equal(est.components["ssi_mean"], 0.0)


def test_mc_stderr_shrinks_with_trials():
    sampler1 = unit_gains_sampler(1, 1, 1, 0, 1, seed=8)
    sampler2 = unit_gains_sampler(1, 1, 1, 0, 1, seed=8)
    e1 = comm_sinr_monte_carlo(sampler1, mrt_mrc_rule(), 1.0, trials=2_000, seed=8)
    e2 = comm_sinr_monte_carlo(sampler2, mrt_mrc_rule(), 1.0, trials=8_000, seed=8)
    ratio = e1.sinr_stderr[0] / e2.sinr_stderr[0]
    assert ratio == pytest.approx(2.0, rel=0.35)


def test_closed_vs_mc_full_instance():
    geo = geometry(M=3, N=3, K=3, T=2, L=4, seed=9, rcs_m2=1e5)
    gains = link_gains(geo)
    sigma2 = noise_power_watts(geo.config)
    zh, zg, amp = scaled_zeta_tables(gains, 4, geo.config.p_max_watts)
    rule = mrt_mrc_rule(amp)
    alpha = geo.reflection_amplitudes

    cf = comm_sinr_closed_form(zh, zg, 4, sigma2)
    mc = comm_sinr_monte_carlo(ChannelSampler(geo, 31, gains), rule, sigma2, 20_000, 31)
    assert np.all(np.abs(cf - mc.sinr) <= 3 * mc.sinr_stderr)

    sf = sensing_sinr_closed_form(gains.zeta_gul, zg, zh, alpha, 4, sigma2)
    smc = sensing_sinr_monte_carlo(
        ChannelSampler(geo, 32, gains), rule, alpha, sigma2, 20_000, 32
    )
    assert np.all(np.abs(sf - smc.sinr) <= 3 * smc.sinr_stderr)


def test_dli_subtraction_changes_estimate():
    kw = dict(alpha=np.array([1.0 + 0j]), sigma2=1.0, trials=500, seed=11)
    on = sensing_sinr_monte_carlo(
        unit_gains_sampler(2, 2, 1, 1, 2, seed=11), mrt_mrc_rule(), **kw
    )
    off = sensing_sinr_monte_carlo(
        unit_gains_sampler(2, 2, 1, 1, 2, seed=11), mrt_mrc_rule(),
        subtract_dli=False, **kw
    )
    assert not np.allclose(on.sinr, off.sinr, rtol=1e-6)
    # the direct link adds interference, so skipping the subtraction lowers SINR
    assert np.all(off.sinr < on.sinr)


def test_single_target_has_no_mti():
    sampler = unit_gains_sampler(2, 2, 1, 1, 2, seed=12)
    est = sensing_sinr_monte_carlo(
        sampler, mrt_mrc_rule(), np.array([1.0 + 0j]), 1.0, trials=500, seed=12
    )
    np.testing.assert_allclose(est.components["mti_mean"], 0.0, atol=1e-20)


# --- SE mapping ----------------------------------------------------------------

def test_comm_se_values():
    np.testing.assert_allclose(comm_se([0.0, 1.0, 3.0]), [0.0, 1.0, 2.0])
    with pytest.raises(ConfigError):
        comm_se(-0.5)


# --- leakage -------------------------------------------------------------------

def test_leakage_zero_precoders():
    ch = sample_channels(geometry(seed=13), seed=13)
    pre = mrt_precoders(ch)
    from dataclasses import replace

    zeroed = replace(pre, w=np.zeros_like(pre.w), s=np.zeros_like(pre.s))
    rep = leakage_se(ch, zeroed, sigma2=1.0)
    np.testing.assert_array_equal(rep.table, 0.0)
    np.testing.assert_array_equal(rep.per_target_max, 0.0)


def test_leakage_orthogonal_beam_leaks_nothing():
    ch = sample_channels(geometry(M=1, N=1, K=1, T=1, L=2, seed=14), seed=14)
    g = ch.g_dl[0, 0]
    w_orth = np.array([[-np.conj(g[1]), np.conj(g[0])]], dtype=complex)[None]
    from dataclasses import replace

    pre = replace(mrt_precoders(ch), w=w_orth, s=np.zeros_like(ch.g_dl))
    rep = leakage_se(ch, pre, sigma2=1.0)
    assert rep.table[0, 0] == pytest.approx(0.0, abs=1e-20)


def test_leakage_matches_bruteforce_transcription():
    ch = sample_channels(geometry(M=3, N=1, K=3, T=2, L=4, seed=15), seed=15)
    pre = with_mrc(mrt_precoders(ch), ch)
    sigma2 = 1e-9
    rep = leakage_se(ch, pre, sigma2)
    T, K, M = 2, 3, 3
    for t in range(T):
        for k in range(K):
            num = abs(sum(np.vdot(ch.g_dl[m, t], pre.w[m, k]) for m in range(M))) ** 2
            den = sigma2
            for i in range(K):
                if i != k:
                    den += abs(sum(np.vdot(ch.g_dl[m, t], pre.w[m, i]) for m in range(M))) ** 2
            for j in range(T):
                den += abs(sum(np.vdot(ch.g_dl[m, t], pre.s[m, j]) for m in range(M))) ** 2
            assert rep.table[t, k] == pytest.approx(math.log2(1 + num / den), rel=1e-10)


def test_leakage_permutation_equivariance():
    ch = sample_channels(geometry(M=2, N=1, K=3, T=2, L=3, seed=16), seed=16)
    pre = mrt_precoders(ch)
    rep = leakage_se(ch, pre, 1e-6)
    perm = np.array([2, 0, 1])
    from dataclasses import replace

    ch_p = replace(ch, h=ch.h[:, perm])
    pre_p = replace(pre, w=pre.w[:, perm])
    rep_p = leakage_se(ch_p, pre_p, 1e-6)
    np.testing.assert_allclose(rep_p.table, rep.table[:, perm], rtol=1e-12)
    np.testing.assert_allclose(rep_p.per_target_max, rep.per_target_max, rtol=1e-12)


# --- statistical-CSI bound ------------------------------------------------------

def test_uatf_degenerate_single_user():
    # K=1, L=1, zeta=1: SINR = (E||h||^2)^2 / (Var||h||^2 + sigma^2) = 1/2
    stats = UserChannelStats(zeta=np.ones((1, 1)), L=1)
    se = uatf_se(stats, sigma2=1.0, trials=200_000, seed=17)
    assert se[0] == pytest.approx(math.log2(1.5), rel=0.02)


def test_uatf_colocated_equals_cf_when_gains_equal():
    cf = UserChannelStats(zeta=np.full((4, 2), 0.3), L=4)
    co = UserChannelStats(zeta=np.full((1, 2), 0.3), L=16)
    se_cf = uatf_se(cf, 1.0, trials=5_000, seed=18)
    se_co = uatf_se(co, 1.0, trials=5_000, seed=18)
    np.testing.assert_allclose(se_cf, se_co, rtol=1e-12)


def test_uatf_below_ergodic():
    gen = rng.stream(19, rng.KIND_GENERIC)
    zeta = gen.uniform(0.05, 1.0, size=(3, 4))
    stats = UserChannelStats(zeta=zeta, L=2)
    bound = uatf_se(stats, 0.5, trials=20_000, seed=19)
    ergodic = ergodic_se_monte_carlo(stats, 0.5, trials=20_000, seed=19)
    assert np.all(bound <= ergodic)


# --- report --------------------------------------------------------------------

def test_evaluate_performance_report():
    geo = geometry(M=2, N=2, K=2, T=1, L=2, seed=20, rcs_m2=1e5)
    rep = evaluate_performance(geo, trials=2_000, seed=20)
    assert rep.comm_se_closed.shape == (2,)
    assert rep.sens_se_closed.shape == (2, 1)
    assert rep.leak_se.shape == (1, 2)
    assert np.all(np.abs(rep.comm_se_closed - rep.comm_se_mc) <= 4 * rep.comm_se_stderr)
    rows = rep.rows()
    assert {r["metric"] for r in rows} == {"comm_se", "sens_se", "leak_se"}
    tree = rep.to_tree()
    assert tree["trials"] == 2_000
