"""Network geometry, radio constants, and large-scale propagation.

Defines the system configuration consumed by every downstream module, places
access points on deterministic grids and users/targets at seeded uniform
positions, and provides the urban-micro path-loss and thermal-noise models.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import rng

# Representative radar cross-sections (m^2) for common object classes.
RCS_TABLE_M2 = {
    "insect": 1e-5,
    "bird": 0.01,
    "human": 1.0,
    "car": 50.0,
    "truck": 150.0,
    "commercial_aircraft": 100.0,
    "cargo_aircraft": 100.0,
    "small_combat_aircraft": 2.5,
    "large_combat_aircraft": 5.5,
    "ship": 1e5,
}

# UMi path-loss model validity floor; shorter links are clamped to this range.
D_MIN_M = 10.0


class ConfigError(ValueError):
    """Raised when a configuration violates its invariants."""


@dataclass(frozen=True)
class SystemConfig:
    """Counts, deployment area, and radio constants of a CF-ISAC network.

    Attributes:
        M: number of DL (transmitting) APs.
        N: number of UL (echo-receiving) APs.
        K: number of single-antenna users.
        T: number of sensing targets.
        L: antennas per AP.
        area_side_m: side length of the square deployment region.
        fc_hz: carrier frequency.
        bandwidth_hz: signal bandwidth B.
        noise_psd_dbm_hz: thermal noise PSD N0.
        noise_figure_db: receiver noise figure Nf.
        rho: communication/sensing priority factor in [0, 1].
        p_max_dbm: per-AP transmit power cap.
        rcs_m2: default radar cross-section applied to every target.
        shadowing_std_db: log-normal shadowing standard deviation (0 = off).
        seed: master RNG seed for user/target placement.
    """

    M: int = 4
    N: int = 4
    K: int = 2
    T: int = 1
    L: int = 4
    area_side_m: float = 200.0
    fc_hz: float = 3e9
    bandwidth_hz: float = 10e6
    noise_psd_dbm_hz: float = -174.0
    noise_figure_db: float = 10.0
    rho: float = 1.0
    p_max_dbm: float = 30.0
    rcs_m2: float = 1.0
    shadowing_std_db: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.M < 1:
            raise ConfigError(f"M must be >= 1, got {self.M}")
        for name in ("N", "K", "T"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0, got {getattr(self, name)}")
        if self.L < 1:
            raise ConfigError(f"L must be >= 1, got {self.L}")
        if not 0.0 <= self.rho <= 1.0:
            raise ConfigError(f"rho must lie in [0, 1], got {self.rho}")
        if self.area_side_m <= 0:
            raise ConfigError("area_side_m must be positive")
        if self.bandwidth_hz <= 0:
            raise ConfigError("bandwidth_hz must be positive")
        if self.fc_hz <= 0:
            raise ConfigError("fc_hz must be positive")
        if self.rcs_m2 <= 0:
            raise ConfigError("rcs_m2 must be positive")
        if self.shadowing_std_db < 0:
            raise ConfigError("shadowing_std_db must be >= 0")

    @property
    def p_max_watts(self) -> float:
        return dbm_to_watts(self.p_max_dbm)


@dataclass(frozen=True)
class TargetSpec:
    """A point target: position, RCS, and complex reflection amplitude."""

    position: tuple[float, float]
    rcs_m2: float = 1.0
    reflection_amplitude: complex | None = None  # defaults to sqrt(rcs), zero phase

    def __post_init__(self):
        if self.rcs_m2 <= 0:
            raise ConfigError(f"rcs_m2 must be positive, got {self.rcs_m2}")
        if self.reflection_amplitude is None:
            object.__setattr__(
                self, "reflection_amplitude", complex(math.sqrt(self.rcs_m2))
            )


@dataclass(frozen=True)
class SystemGeometry:
    """Realized placement of APs, users, and targets for one topology."""

    dl_ap_positions: np.ndarray  # (M, 2)
    ul_ap_positions: np.ndarray  # (N, 2)
    user_positions: np.ndarray   # (K, 2)
    targets: tuple[TargetSpec, ...]
    config: SystemConfig

    def __post_init__(self):
        c = self.config
        side = c.area_side_m
        for name, arr, count in (
            ("dl_ap_positions", self.dl_ap_positions, c.M),
            ("ul_ap_positions", self.ul_ap_positions, c.N),
            ("user_positions", self.user_positions, c.K),
        ):
            if arr.shape != (count, 2):
                raise ConfigError(f"{name} must have shape ({count}, 2), got {arr.shape}")
            if count and (arr.min() < 0 or arr.max() > side):
                raise ConfigError(f"{name} contains positions outside the deployment square")
        if len(self.targets) != c.T:
            raise ConfigError(f"expected {c.T} targets, got {len(self.targets)}")
        for t in self.targets:
            x, y = t.position
            if not (0 <= x <= side and 0 <= y <= side):
                raise ConfigError("target position outside the deployment square")

    @property
    def target_positions(self) -> np.ndarray:
        if not self.targets:
            return np.zeros((0, 2))
        return np.array([t.position for t in self.targets], dtype=float)

    @property
    def reflection_amplitudes(self) -> np.ndarray:
        return np.array([t.reflection_amplitude for t in self.targets], dtype=complex)


def _grid_positions(count: int, side: float, offset_frac: float = 0.5) -> np.ndarray:
    """Row-major uniform grid at cell centers; the last row is padded.

    ``offset_frac`` shifts placement within each cell (0.5 = center) so that
    two grids of equal count never coincide.
    """
    if count == 0:
        return np.zeros((0, 2))
    ncols = math.ceil(math.sqrt(count))
    nrows = math.ceil(count / ncols)
    cell_w = side / ncols
    cell_h = side / nrows
    pos = np.empty((count, 2))
    for i in range(count):
        r, c = divmod(i, ncols)
        pos[i, 0] = (c + offset_frac) * cell_w
        pos[i, 1] = (r + offset_frac) * cell_h
    return pos


def place_entities(
    config: SystemConfig,
    target_rcs_m2: Sequence[float] | float | None = None,
) -> SystemGeometry:
    """Place APs on deterministic grids and draw users/targets uniformly.

    DL APs sit at cell centers of a row-major grid over the square; UL APs use
    their own grid shifted by a quarter cell so no two APs coincide. Users and
    targets are drawn uniformly at random from dedicated child streams of
    ``config.seed``, so the same config always yields the same geometry.

    Args:
        config: validated system configuration.
        target_rcs_m2: optional per-target RCS overrides; a scalar applies to
            all targets, a sequence must have length T.
    """
    side = config.area_side_m
    dl_pos = _grid_positions(config.M, side, offset_frac=0.5)
    ul_pos = _grid_positions(config.N, side, offset_frac=0.25)

    user_pos = rng.stream(config.seed, rng.KIND_USERS).uniform(
        0.0, side, size=(config.K, 2)
    )
    target_pos = rng.stream(config.seed, rng.KIND_TARGETS).uniform(
        0.0, side, size=(config.T, 2)
    )

    if target_rcs_m2 is None:
        rcs = [config.rcs_m2] * config.T
    elif np.isscalar(target_rcs_m2):
        rcs = [float(target_rcs_m2)] * config.T
    else:
        rcs = [float(v) for v in target_rcs_m2]
        if len(rcs) != config.T:
            raise ConfigError(
                f"target_rcs_m2 must have length T={config.T}, got {len(rcs)}"
            )

    targets = tuple(
        TargetSpec(position=(float(x), float(y)), rcs_m2=r)
        for (x, y), r in zip(target_pos, rcs)
    )
    return SystemGeometry(
        dl_ap_positions=dl_pos,
        ul_ap_positions=ul_pos,
        user_positions=user_pos,
        targets=targets,
        config=config,
    )


def pathloss_db(distance_m, fc_hz: float):
    """3GPP UMi NLOS path loss in dB; distances below D_MIN_M are clamped."""
    d = np.maximum(np.asarray(distance_m, dtype=float), D_MIN_M)
    return 36.7 * np.log10(d) + 22.7 + 26.0 * np.log10(fc_hz / 1e9)


def pathloss_linear(distance_m, fc_hz: float):
    """Linear power gain of the UMi NLOS model: 10^(-PL_dB / 10)."""
    if fc_hz <= 0:
        raise ConfigError("fc_hz must be positive")
    if np.any(np.asarray(distance_m) < 0):
        raise ConfigError("distance_m must be >= 0")
    return 10.0 ** (-pathloss_db(distance_m, fc_hz) / 10.0)


def dbm_to_watts(dbm: float) -> float:
    return 10.0 ** ((dbm - 30.0) / 10.0)


def watts_to_dbm(watts: float) -> float:
    return 10.0 * math.log10(watts) + 30.0


def noise_power_dbm(config: SystemConfig) -> float:
    """Thermal noise power in dBm: N0 + 10 log10(B) + Nf."""
    return (
        config.noise_psd_dbm_hz
        + 10.0 * math.log10(config.bandwidth_hz)
        + config.noise_figure_db
    )


def noise_power_watts(config: SystemConfig) -> float:
    """Thermal noise power in watts."""
    return dbm_to_watts(noise_power_dbm(config))


# configuration-file keys accepted by load_config, beyond SystemConfig fields
_EXTRA_CONFIG_KEYS = {"target_rcs_m2"}
_CONFIG_FIELDS = set(SystemConfig.__dataclass_fields__)


def parse_config(data: dict) -> tuple[SystemConfig, list[float] | None]:
    """Build a SystemConfig (+ per-target RCS overrides) from a plain dict."""
    unknown = set(data) - _CONFIG_FIELDS - _EXTRA_CONFIG_KEYS
    if unknown:
        raise ConfigError(f"unknown configuration keys: {sorted(unknown)}")
    overrides = data.get("target_rcs_m2")
    fields = {k: v for k, v in data.items() if k in _CONFIG_FIELDS}
    return SystemConfig(**fields), overrides


def load_config(path: str | Path) -> tuple[SystemConfig, list[float] | None]:
    """Read a JSON configuration file; returns (config, target RCS overrides)."""
    with open(path, "r", encoding="utf-8") as fh:
        data = json.load(fh)
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: configuration must be a JSON object")
    return parse_config(data)


def with_overrides(config: SystemConfig, **kwargs) -> SystemConfig:
    """Return a copy of ``config`` with the given fields replaced."""
    return replace(config, **kwargs)
