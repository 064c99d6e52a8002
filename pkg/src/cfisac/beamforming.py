"""Transmit precoders, sensing beams, combiners, and the ISAC superposition.

Conventions: w (M, K, L) communication precoders, s (M, T, L) dedicated
sensing beams, u (N, T, L) receive combiners. Steering vectors assume a
half-wavelength uniform linear array.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .channel import ChannelSet
from .scenario import ConfigError


@dataclass(frozen=True)
class PrecoderSet:
    """Communication precoders, sensing beams, and combiners for one design."""

    w: np.ndarray               # (M, K, L)
    s: np.ndarray               # (M, T, L)
    u: np.ndarray | None = None  # (N, T, L); None until combiners are set
    rho: float = 1.0

    def __post_init__(self):
        if self.w.ndim != 3 or self.s.ndim != 3:
            raise ConfigError("w and s must be 3-D (AP, entity, antenna) arrays")
        if self.w.shape[0] != self.s.shape[0] or self.w.shape[2] != self.s.shape[2]:
            raise ConfigError("w and s must agree on AP count and antennas")
        if self.u is not None and self.u.ndim != 3:
            raise ConfigError("u must be a 3-D (AP, target, antenna) array")
        if not 0.0 <= self.rho <= 1.0:
            raise ConfigError(f"rho must lie in [0, 1], got {self.rho}")

    @property
    def n_aps(self) -> int:
        return self.w.shape[0]

    @property
    def n_users(self) -> int:
        return self.w.shape[1]

    @property
    def n_targets(self) -> int:
        return self.s.shape[1]

    @property
    def n_antennas(self) -> int:
        return self.w.shape[2]

    def per_ap_power(self) -> np.ndarray:
        """Total squared norm of all beams at each AP, shape (M,)."""
        return (
            np.sum(np.abs(self.w) ** 2, axis=(1, 2))
            + np.sum(np.abs(self.s) ** 2, axis=(1, 2))
        )


@dataclass(frozen=True)
class SymbolBlock:
    """Per-slot transmit symbols: unit-power data plus optional sensing waveform."""

    q: np.ndarray                      # (K,) unit-power data symbols
    sensing: np.ndarray | None = None  # (M, L) realized stochastic sensing samples


def qpsk_symbols(K: int, gen: np.random.Generator) -> np.ndarray:
    """Unit-power QPSK symbols, one per user."""
    bits = gen.integers(0, 2, size=(K, 2))
    return ((2 * bits[:, 0] - 1) + 1j * (2 * bits[:, 1] - 1)) / np.sqrt(2.0)


def stochastic_sensing_waveform(precoders: PrecoderSet, gen: np.random.Generator) -> np.ndarray:
    """Sample a Gaussian sensing waveform with covariance sum_t s_mt s_mt^H.

    Realized as sum_t s_mt * eps_t with eps i.i.d. CN(0, 1), which has exactly
    the design covariance at each AP.
    """
    M, T, L = precoders.s.shape
    eps = (gen.standard_normal((M, T)) + 1j * gen.standard_normal((M, T))) / np.sqrt(2.0)
    return np.einsum("mtl,mt->ml", precoders.s, eps)


def mrt_precoders(channels: ChannelSet, rho: float = 1.0) -> PrecoderSet:
    """Conjugate (MRT) precoding: w = h and s = g_dl, unnormalized."""
    return PrecoderSet(w=channels.h.copy(), s=channels.g_dl.copy(), u=None, rho=rho)


def mrc_combiners(channels: ChannelSet) -> np.ndarray:
    """Conjugate (MRC) combining: u = g_ul."""
    return channels.g_ul.copy()


def with_mrc(precoders: PrecoderSet, channels: ChannelSet) -> PrecoderSet:
    return replace(precoders, u=mrc_combiners(channels))


def steering_vector(L: int, theta_rad: float) -> np.ndarray:
    """Half-wavelength ULA steering vector, element l = exp(j pi l sin theta)."""
    if L < 1:
        raise ConfigError("L must be >= 1")
    if not -np.pi / 2 - 1e-12 <= theta_rad <= np.pi / 2 + 1e-12:
        raise ConfigError(f"theta must lie in [-pi/2, pi/2], got {theta_rad}")
    return np.exp(1j * np.pi * np.arange(L) * np.sin(theta_rad))


def isac_superposition(
    precoders: PrecoderSet,
    symbols: SymbolBlock,
    rho: float | None = None,
) -> np.ndarray:
    """Per-AP transmit vectors x_m, shape (M, L).

    With ``rho`` given, communication and sensing parts are weighted by
    sqrt(rho) and sqrt(1 - rho); with ``rho=None`` both carry weight one
    (the priority split absorbed into the beam norms). The sensing part is
    the deterministic beam sum unless ``symbols.sensing`` supplies a
    realized stochastic waveform.
    """
    if symbols.q.shape != (precoders.n_users,):
        raise ConfigError("symbol count must equal the number of users")
    comm = np.einsum("mkl,k->ml", precoders.w, symbols.q)
    if symbols.sensing is not None:
        sens = symbols.sensing
    else:
        sens = precoders.s.sum(axis=1)
    if rho is None:
        return comm + sens
    if not 0.0 <= rho <= 1.0:
        raise ConfigError(f"rho must lie in [0, 1], got {rho}")
    return np.sqrt(rho) * comm + np.sqrt(1.0 - rho) * sens


def normalize_per_ap_power(precoders: PrecoderSet, p_max_watts: float) -> PrecoderSet:
    """Scale each AP's beams by a common factor so its power meets p_max.

    APs already within the cap pass through unchanged, as do all-zero APs;
    the common factor preserves per-user SINR ordering at the AP.
    """
    if p_max_watts <= 0:
        raise ConfigError("p_max_watts must be positive")
    power = precoders.per_ap_power()
    scale = np.ones_like(power)
    over = power > p_max_watts
    scale[over] = np.sqrt(p_max_watts / power[over])
    return replace(
        precoders,
        w=precoders.w * scale[:, None, None],
        s=precoders.s * scale[:, None, None],
    )


def scale_to_expected_power(
    precoders: PrecoderSet,
    zeta_w: np.ndarray,
    zeta_s: np.ndarray,
    L: int,
    p_max_watts: float,
) -> tuple[PrecoderSet, np.ndarray]:
    """Scale conjugate beams so each AP's *expected* power equals p_max.

    For MRT beams the expected power at AP m is L * (sum_k zeta_w[m, k] +
    sum_t zeta_s[m, t]); the returned per-AP amplitude factors sqrt(eta_m)
    make it p_max exactly in expectation. Closed-form SINR expressions stay
    valid with the zeta tables scaled by eta_m.
    """
    expected = L * (zeta_w.sum(axis=1) + zeta_s.sum(axis=1))
    if np.any(expected <= 0):
        raise ConfigError("expected power must be positive at every AP")
    eta = p_max_watts / expected
    amp = np.sqrt(eta)
    scaled = replace(
        precoders,
        w=precoders.w * amp[:, None, None],
        s=precoders.s * amp[:, None, None],
    )
    return scaled, eta
