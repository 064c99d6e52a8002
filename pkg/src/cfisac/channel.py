"""Rayleigh channel realizations and asymptotic multi-antenna statistics.

Every channel vector follows a = sqrt(zeta) * a_tilde with a_tilde i.i.d.
standard complex Gaussian. Each link owns a dedicated child RNG stream keyed
by (seed, link-kind, first index, second index), so realizations are
reproducible link by link and independent across links.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import rng
from .scenario import ConfigError, SystemGeometry, pathloss_linear


@dataclass(frozen=True)
class LinkGains:
    """Large-scale linear power gains for every link of one topology."""

    zeta_h: np.ndarray     # (M, K) DL AP -> user
    zeta_gdl: np.ndarray   # (M, T) DL AP -> target
    zeta_gul: np.ndarray   # (N, T) target -> UL AP
    zeta_f: np.ndarray     # (M, N) DL AP -> UL AP

    def __post_init__(self):
        for name in ("zeta_h", "zeta_gdl", "zeta_gul", "zeta_f"):
            z = getattr(self, name)
            if z.size and (not np.all(np.isfinite(z)) or np.any(z <= 0)):
                raise ConfigError(f"{name} must be positive and finite")


@dataclass(frozen=True)
class ChannelSet:
    """One realization of all small-scale channels plus their gains.

    Complex arrays: h (M, K, L), g_dl (M, T, L), g_ul (N, T, L),
    f (M, N, L, L). The matching large-scale tables live in ``gains``.
    """

    h: np.ndarray
    g_dl: np.ndarray
    g_ul: np.ndarray
    f: np.ndarray
    gains: LinkGains

    def __post_init__(self):
        M, K, L = self.h.shape
        if self.gains.zeta_h.shape != (M, K):
            raise ConfigError("zeta_h shape does not match h")
        if self.g_dl.shape[:2] != self.gains.zeta_gdl.shape:
            raise ConfigError("zeta_gdl shape does not match g_dl")
        if self.g_ul.shape[:2] != self.gains.zeta_gul.shape:
            raise ConfigError("zeta_gul shape does not match g_ul")
        if self.f.shape[:2] != self.gains.zeta_f.shape:
            raise ConfigError("zeta_f shape does not match f")

    @property
    def shape(self) -> tuple[int, int, int, int, int]:
        M, K, L = self.h.shape
        T = self.g_dl.shape[1]
        N = self.g_ul.shape[0]
        return M, N, K, T, L

    @property
    def zeta_h(self) -> np.ndarray:
        return self.gains.zeta_h

    @property
    def zeta_gdl(self) -> np.ndarray:
        return self.gains.zeta_gdl

    @property
    def zeta_gul(self) -> np.ndarray:
        return self.gains.zeta_gul


def _distances(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise Euclidean distances, shape (len(a), len(b))."""
    if a.size == 0 or b.size == 0:
        return np.zeros((a.shape[0], b.shape[0]))
    return np.linalg.norm(a[:, None, :] - b[None, :, :], axis=-1)


def link_gains(geometry: SystemGeometry) -> LinkGains:
    """Large-scale gains of every link from the UMi model (plus shadowing).

    Shadowing, when enabled via config.shadowing_std_db, is log-normal and
    drawn once per link from a child stream of the geometry seed, so gains
    are a deterministic function of the geometry.
    """
    cfg = geometry.config
    fc = cfg.fc_hz
    tpos = geometry.target_positions

    def gain(kind: int, pos_a: np.ndarray, pos_b: np.ndarray) -> np.ndarray:
        z = pathloss_linear(_distances(pos_a, pos_b), fc)
        if cfg.shadowing_std_db > 0 and z.size:
            sh_db = rng.stream(cfg.seed, rng.KIND_SHADOWING, kind).normal(
                0.0, cfg.shadowing_std_db, size=z.shape
            )
            z = z * 10.0 ** (sh_db / 10.0)
        return z

    return LinkGains(
        zeta_h=gain(rng.KIND_CH_USER, geometry.dl_ap_positions, geometry.user_positions),
        zeta_gdl=gain(rng.KIND_CH_TARGET_DL, geometry.dl_ap_positions, tpos),
        zeta_gul=gain(rng.KIND_CH_TARGET_UL, geometry.ul_ap_positions, tpos),
        zeta_f=gain(rng.KIND_CH_INTER_AP, geometry.dl_ap_positions, geometry.ul_ap_positions),
    )


def _complex_normal(gen: np.random.Generator, shape: tuple[int, ...]) -> np.ndarray:
    z = gen.standard_normal(shape + (2,))
    return (z[..., 0] + 1j * z[..., 1]) / np.sqrt(2.0)


class ChannelSampler:
    """Draws channel realizations for a fixed geometry.

    One generator per link is created lazily and consumed sequentially, so a
    batch of n trials equals n successive single draws and chunked consumers
    see one contiguous stream per link.
    """

    def __init__(self, geometry: SystemGeometry, seed: int, gains: LinkGains | None = None):
        self.geometry = geometry
        self.seed = int(seed)
        self.gains = gains if gains is not None else link_gains(geometry)
        self._gens: dict[tuple[int, int, int], np.random.Generator] = {}

    def _gen(self, kind: int, i: int, j: int) -> np.random.Generator:
        key = (kind, i, j)
        if key not in self._gens:
            self._gens[key] = rng.stream(self.seed, *key)
        return self._gens[key]

    def _draw_links(self, kind: int, zeta: np.ndarray, trials: int, per_link_shape: tuple[int, ...]) -> np.ndarray:
        n_i, n_j = zeta.shape
        out = np.empty((trials, n_i, n_j) + per_link_shape, dtype=complex)
        for i in range(n_i):
            for j in range(n_j):
                draws = _complex_normal(self._gen(kind, i, j), (trials,) + per_link_shape)
                out[:, i, j] = np.sqrt(zeta[i, j]) * draws
        return out

    def batch(self, trials: int, include_inter_ap: bool = True) -> "ChannelBatch":
        """Draw ``trials`` independent realizations of every link."""
        L = self.geometry.config.L
        g = self.gains
        h = self._draw_links(rng.KIND_CH_USER, g.zeta_h, trials, (L,))
        g_dl = self._draw_links(rng.KIND_CH_TARGET_DL, g.zeta_gdl, trials, (L,))
        g_ul = self._draw_links(rng.KIND_CH_TARGET_UL, g.zeta_gul, trials, (L,))
        if include_inter_ap:
            f = self._draw_links(rng.KIND_CH_INTER_AP, g.zeta_f, trials, (L, L))
        else:
            M, N = g.zeta_f.shape
            f = np.zeros((trials, M, N, L, L), dtype=complex)
        return ChannelBatch(h=h, g_dl=g_dl, g_ul=g_ul, f=f, gains=g)


@dataclass(frozen=True)
class ChannelBatch:
    """A stack of channel realizations with a leading trials axis."""

    h: np.ndarray      # (trials, M, K, L)
    g_dl: np.ndarray   # (trials, M, T, L)
    g_ul: np.ndarray   # (trials, N, T, L)
    f: np.ndarray      # (trials, M, N, L, L)
    gains: LinkGains

    @property
    def trials(self) -> int:
        return self.h.shape[0]

    def realization(self, idx: int) -> ChannelSet:
        return ChannelSet(
            h=self.h[idx], g_dl=self.g_dl[idx], g_ul=self.g_ul[idx],
            f=self.f[idx], gains=self.gains,
        )


def sample_channels(geometry: SystemGeometry, seed: int) -> ChannelSet:
    """Draw a single channel realization for ``geometry``."""
    return ChannelSampler(geometry, seed).batch(1).realization(0)


@dataclass(frozen=True)
class HardeningStats:
    """Sample statistics of the normalized channel gain ||h||^2 / E||h||^2."""

    n_antennas: int
    mean_cv: float
    var_cv: float
    trials: int

    def __post_init__(self):
        if self.trials < 1:
            raise ConfigError("trials must be >= 1")
        if self.var_cv < 0:
            raise ConfigError("var_cv must be >= 0")


def hardening_stats(L: int, beta: float, trials: int, seed: int) -> HardeningStats:
    """Estimate the channel-hardening statistic for an L-antenna link.

    Draws h ~ CN(0, beta * I_L) and returns mean and variance of
    ||h||^2 / (beta * L); the variance shrinks as 1/L, which is the hardening
    effect.
    """
    if L < 1 or beta <= 0 or trials < 2:
        raise ConfigError("require L >= 1, beta > 0, trials >= 2")
    gen = rng.stream(seed, rng.KIND_GENERIC, 0)
    h = np.sqrt(beta) * _complex_normal(gen, (trials, L))
    cv = np.sum(np.abs(h) ** 2, axis=1) / (beta * L)
    return HardeningStats(
        n_antennas=L,
        mean_cv=float(np.mean(cv)),
        var_cv=float(np.var(cv, ddof=1)),
        trials=trials,
    )


@dataclass(frozen=True)
class FavorablePropagationStats:
    """Statistics of the normalized inner product of two user channels."""

    n_antennas: int
    mean_ip: complex       # sample mean of the normalized inner product
    mean_abs2: float       # sample mean of its modulus squared
    var_abs2: float
    trials: int


def favorable_propagation_stats(
    L: int, beta_k: float, beta_l: float, trials: int, seed: int
) -> FavorablePropagationStats:
    """Estimate how orthogonal two independent L-antenna channels are.

    Computes h_k^H h_l / sqrt(E||h_k||^2 * E||h_l||^2) per trial; its modulus
    squared has expectation 1/L, vanishing as antennas grow.
    """
    if L < 1 or beta_k <= 0 or beta_l <= 0 or trials < 2:
        raise ConfigError("require L >= 1, betas > 0, trials >= 2")
    gen_k = rng.stream(seed, rng.KIND_GENERIC, 1)
    gen_l = rng.stream(seed, rng.KIND_GENERIC, 2)
    hk = np.sqrt(beta_k) * _complex_normal(gen_k, (trials, L))
    hl = np.sqrt(beta_l) * _complex_normal(gen_l, (trials, L))
    ip = np.sum(np.conj(hk) * hl, axis=1) / np.sqrt(beta_k * L * beta_l * L)
    abs2 = np.abs(ip) ** 2
    return FavorablePropagationStats(
        n_antennas=L,
        mean_ip=complex(np.mean(ip)),
        mean_abs2=float(np.mean(abs2)),
        var_abs2=float(np.var(abs2, ddof=1)),
        trials=trials,
    )


# ---------------------------------------------------------------------------
# Text fixture format: first line "M N K T L"; then one line per array in the
# order h, g_dl, g_ul, f, zeta_h, zeta_gdl, zeta_gul, zeta_f. Complex arrays
# are written row-major as alternating "re im" pairs, gain tables as plain
# floats. Floats use repr precision, space-separated.
# ---------------------------------------------------------------------------

def dump_channel_set(channels: ChannelSet, path: str | Path) -> None:
    """Write a ChannelSet to the documented text fixture layout."""
    M, N, K, T, L = channels.shape
    g = channels.gains

    def complex_line(arr: np.ndarray) -> str:
        flat = arr.reshape(-1)
        pairs = np.empty(2 * flat.size)
        pairs[0::2] = flat.real
        pairs[1::2] = flat.imag
        return " ".join(repr(float(v)) for v in pairs)

    def real_line(arr: np.ndarray) -> str:
        return " ".join(repr(float(v)) for v in arr.reshape(-1))

    lines = [f"{M} {N} {K} {T} {L}"]
    for arr in (channels.h, channels.g_dl, channels.g_ul, channels.f):
        lines.append(complex_line(arr))
    for arr in (g.zeta_h, g.zeta_gdl, g.zeta_gul, g.zeta_f):
        lines.append(real_line(arr))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_channel_set(path: str | Path) -> ChannelSet:
    """Read a ChannelSet written by dump_channel_set."""
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    M, N, K, T, L = (int(v) for v in lines[0].split())

    def parse_complex(line: str, shape: tuple[int, ...]) -> np.ndarray:
        vals = np.array([float(v) for v in line.split()])
        return (vals[0::2] + 1j * vals[1::2]).reshape(shape)

    def parse_real(line: str, shape: tuple[int, ...]) -> np.ndarray:
        return np.array([float(v) for v in line.split()]).reshape(shape)

    h = parse_complex(lines[1], (M, K, L))
    g_dl = parse_complex(lines[2], (M, T, L))
    g_ul = parse_complex(lines[3], (N, T, L))
    f = parse_complex(lines[4], (M, N, L, L))
    gains = LinkGains(
        zeta_h=parse_real(lines[5], (M, K)),
        zeta_gdl=parse_real(lines[6], (M, T)),
        zeta_gul=parse_real(lines[7], (N, T)),
        zeta_f=parse_real(lines[8], (M, N)),
    )
    return ChannelSet(h=h, g_dl=g_dl, g_ul=g_ul, f=f, gains=gains)
