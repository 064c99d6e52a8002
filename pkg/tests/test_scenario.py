import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from cfisac import scenario
from cfisac.scenario import (
    ConfigError,
    SystemConfig,
    TargetSpec,
    noise_power_watts,
    parse_config,
    pathloss_linear,
    place_entities,
)


def test_dl_grid_m4_matches_cell_centers():
    cfg = SystemConfig(M=4, N=0, K=0, T=0, area_side_m=200.0)
    geo = place_entities(cfg)
    expected = np.array([[50.0, 50.0], [150.0, 50.0], [50.0, 150.0], [150.0, 150.0]])
    np.testing.assert_allclose(geo.dl_ap_positions, expected)


def test_grid_pads_last_row():
    cfg = SystemConfig(M=3, N=0, K=0, T=0, area_side_m=120.0)
    geo = place_entities(cfg)
    # 2 columns, 2 rows, last row holds a single AP
    assert geo.dl_ap_positions.shape == (3, 2)
    np.testing.assert_allclose(
        geo.dl_ap_positions, [[30.0, 30.0], [90.0, 30.0], [30.0, 90.0]]
    )


def test_geometry_deterministic():
    cfg = SystemConfig(M=4, N=4, K=5, T=3, seed=42)
    g1 = place_entities(cfg)
    g2 = place_entities(cfg)
    np.testing.assert_array_equal(g1.user_positions, g2.user_positions)
    np.testing.assert_array_equal(g1.target_positions, g2.target_positions)
    np.testing.assert_array_equal(g1.dl_ap_positions, g2.dl_ap_positions)
    np.testing.assert_array_equal(g1.ul_ap_positions, g2.ul_ap_positions)


def test_dl_and_ul_grids_never_coincide():
    cfg = SystemConfig(M=9, N=9, K=0, T=0)
    geo = place_entities(cfg)
    d = np.linalg.norm(
        geo.dl_ap_positions[:, None, :] - geo.ul_ap_positions[None, :, :], axis=-1
    )
    assert d.min() > 1.0


def test_uniform_draw_mean_within_three_stderr():
    # Monte-Carlo oracle: mean of U(0, 200) is 100 with stderr 200/sqrt(12 n)
    cfg = SystemConfig(M=1, N=0, K=1000, T=0, area_side_m=200.0, seed=7)
    geo = place_entities(cfg)
    stderr = 200.0 / math.sqrt(12.0 * 1000)
    for axis in range(2):
        assert abs(geo.user_positions[:, axis].mean() - 100.0) < 3 * stderr


def test_positions_inside_square():
    cfg = SystemConfig(M=7, N=5, K=50, T=10, area_side_m=150.0, seed=3)
    geo = place_entities(cfg)
    for arr in (geo.dl_ap_positions, geo.ul_ap_positions, geo.user_positions,
                geo.target_positions):
        assert arr.min() >= 0.0 and arr.max() <= 150.0


def test_adding_users_does_not_move_targets():
    g_small = place_entities(SystemConfig(M=1, N=0, K=2, T=3, seed=5))
    g_big = place_entities(SystemConfig(M=1, N=0, K=20, T=3, seed=5))
    np.testing.assert_array_equal(g_small.target_positions, g_big.target_positions)
    np.testing.assert_array_equal(
        g_small.user_positions, g_big.user_positions[:2]
    )


def test_target_rcs_overrides():
    cfg = SystemConfig(M=1, N=1, K=0, T=3, rcs_m2=2.0, seed=1)
    geo = place_entities(cfg)
    assert all(t.rcs_m2 == 2.0 for t in geo.targets)
    geo2 = place_entities(cfg, target_rcs_m2=[1.0, 10.0, 100.0])
    assert [t.rcs_m2 for t in geo2.targets] == [1.0, 10.0, 100.0]
    with pytest.raises(ConfigError):
        place_entities(cfg, target_rcs_m2=[1.0])


def test_reflection_amplitude_default_rule():
    t = TargetSpec(position=(1.0, 2.0), rcs_m2=9.0)
    assert t.reflection_amplitude == pytest.approx(3.0)
    assert abs(t.reflection_amplitude) ** 2 == pytest.approx(t.rcs_m2)


def test_config_invariants():
    with pytest.raises(ConfigError):
        SystemConfig(M=0)
    with pytest.raises(ConfigError):
        SystemConfig(rho=1.5)
    with pytest.raises(ConfigError):
        SystemConfig(area_side_m=-1)
    with pytest.raises(ConfigError):
        SystemConfig(K=-1)


# --- path loss ---------------------------------------------------------------

def test_pathloss_oracle_100m_3ghz():
    # independent arithmetic: 36.7*2 + 22.7 + 26*log10(3)
    pl_db = 36.7 * 2.0 + 22.7 + 26.0 * math.log10(3.0)
    assert pl_db == pytest.approx(108.505, abs=1e-3)
    zeta = pathloss_linear(100.0, 3e9)
    assert zeta == pytest.approx(10.0 ** (-pl_db / 10.0), rel=1e-12)


def test_pathloss_clamps_below_10m():
    assert pathloss_linear(5.0, 3e9) == pathloss_linear(10.0, 3e9)
    assert pathloss_linear(0.0, 3e9) == pathloss_linear(10.0, 3e9)


@given(
    d1=st.floats(min_value=10.0, max_value=1e4),
    d2=st.floats(min_value=10.0, max_value=1e4),
)
def test_pathloss_monotone_above_clamp(d1, d2):
    if d1 > d2:
        d1, d2 = d2, d1
    z1, z2 = pathloss_linear(d1, 3e9), pathloss_linear(d2, 3e9)
    assert z1 >= z2 > 0
    assert np.isfinite(z1)


def test_pathloss_rejects_negative_distance():
    with pytest.raises(ConfigError):
        pathloss_linear(-1.0, 3e9)


# --- noise model -------------------------------------------------------------

def test_noise_power_minus_94_dbm():
    cfg = SystemConfig()
    assert scenario.noise_power_dbm(cfg) == pytest.approx(-94.0, abs=1e-12)


def test_noise_power_watts_value():
    assert noise_power_watts(SystemConfig()) == pytest.approx(10 ** (-12.4), rel=1e-12)


def test_noise_doubling_bandwidth_adds_3db():
    base = scenario.noise_power_dbm(SystemConfig())
    doubled = scenario.noise_power_dbm(SystemConfig(bandwidth_hz=20e6))
    assert doubled - base == pytest.approx(10 * math.log10(2), rel=1e-12)


# --- config files ------------------------------------------------------------

def test_parse_config_roundtrip(tmp_path):
    data = {"M": 9, "N": 9, "K": 3, "T": 2, "L": 8, "seed": 11,
            "target_rcs_m2": [1.0, 2.0]}
    cfg, rcs = parse_config(data)
    assert cfg.M == 9 and cfg.L == 8 and cfg.seed == 11
    assert rcs == [1.0, 2.0]
    p = tmp_path / "cfg.json"
    p.write_text('{"M": 2, "K": 1, "bad_key": 1}')
    with pytest.raises(ConfigError):
        scenario.load_config(p)
