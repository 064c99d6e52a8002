"""Communication and sensing SINR/SE: closed forms and Monte-Carlo estimators.

The closed forms hold under conjugate beamforming (w = h, s = g_dl, u = g_ul),
possibly with a common per-AP amplitude factor; such a factor is absorbed
exactly by scaling the DL-side large-scale tables with the same amplitude
(see scaled_zeta_tables). Monte-Carlo estimators simulate the received-signal
equations directly with ratio-of-means accumulation and jackknife standard
errors, so they form an independent check of the closed forms.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from . import rng
from .beamforming import mrt_precoders, qpsk_symbols
from .channel import (
    ChannelBatch,
    ChannelSampler,
    ChannelSet,
    LinkGains,
    link_gains,
    sample_channels,
)
from .scenario import ConfigError, SystemGeometry, noise_power_watts

_DEFAULT_CHUNK = 512


# --- shared helpers ----------------------------------------------------------

def comm_se(sinr):
    """Spectral efficiency log2(1 + SINR) in bps/Hz."""
    s = np.asarray(sinr, dtype=float)
    if np.any(s < 0):
        raise ConfigError("sinr must be >= 0")
    return np.log2(1.0 + s)


def _se_stderr(sinr, sinr_stderr):
    """Delta-method standard error of log2(1 + SINR)."""
    return np.asarray(sinr_stderr) / ((1.0 + np.asarray(sinr)) * math.log(2.0))


def _jackknife_ratio(num: np.ndarray, den: np.ndarray) -> tuple[float, float]:
    """Ratio-of-means estimate of E[num]/E[den] with jackknife stderr."""
    n = num.shape[0]
    s_num, s_den = num.sum(), den.sum()
    estimate = s_num / s_den
    loo = (s_num - num) / (s_den - den)
    loo_mean = loo.mean()
    se = math.sqrt((n - 1) / n * float(np.sum((loo - loo_mean) ** 2)))
    return float(estimate), se


def scaled_zeta_tables(
    gains: LinkGains, L: int, p_max_watts: float
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """DL-side zeta tables scaled for power-normalized conjugate beams.

    Returns (zeta_h_hat, zeta_gdl_hat, amp) where amp[m] is the per-AP beam
    amplitude making the expected transmit power equal p_max, and the hatted
    tables equal amp[m] * zeta. Feeding the hatted tables to the closed forms
    reproduces the SINR of the amplitude-scaled conjugate beams exactly.
    """
    expected = L * (gains.zeta_h.sum(axis=1) + gains.zeta_gdl.sum(axis=1))
    if np.any(expected <= 0):
        raise ConfigError("expected transmit power must be positive at every AP")
    amp = np.sqrt(p_max_watts / expected)
    return amp[:, None] * gains.zeta_h, amp[:, None] * gains.zeta_gdl, amp


# --- closed forms ------------------------------------------------------------

def comm_sinr_closed_form(
    zeta_h: np.ndarray, zeta_gdl: np.ndarray, L: int, sigma2: float
) -> np.ndarray:
    """Per-user communication SINR under conjugate beamforming.

    numerator:   L(L+1) sum_m z_mk^2 + L^2 sum_m sum_{m' != m} z_mk z_m'k
    denominator: L sum_{i != k} sum_m z_mk z_mi
                 + L sum_t sum_m z_mk zg_mt + sigma^2
    """
    if sigma2 <= 0:
        raise ConfigError("sigma2 must be positive")
    zh = np.asarray(zeta_h, dtype=float)
    zg = np.asarray(zeta_gdl, dtype=float)
    col_sum = zh.sum(axis=0)                       # (K,)
    num = L * (L + 1) * np.sum(zh**2, axis=0) + L**2 * (
        col_sum**2 - np.sum(zh**2, axis=0)
    )
    # multi-user interference: sum_m z_mk * (sum_i z_mi - z_mk)
    row_sum = zh.sum(axis=1)                       # (M,)
    mui = L * np.sum(zh * (row_sum[:, None] - zh), axis=0)
    ssi = L * np.sum(zh * zg.sum(axis=1)[:, None], axis=0)
    return num / (mui + ssi + sigma2)


def _sensing_ap_factor(zeta_gdl: np.ndarray, zeta_h: np.ndarray, L: int) -> np.ndarray:
    """Per-target echo power factor X_j = sum_m of the bracketed AP terms."""
    zg = np.asarray(zeta_gdl, dtype=float)
    zh = np.asarray(zeta_h, dtype=float)
    data = L * zg * zh.sum(axis=1)[:, None]                   # (M, T)
    hardening = L * (L + 1) * zg**2
    cross_ap = L**2 * zg * (zg.sum(axis=0)[None, :] - zg)
    cross_target = L * zg * (zg.sum(axis=1)[:, None] - zg)
    return (data + hardening + cross_ap + cross_target).sum(axis=0)  # (T,)


def sensing_sinr_closed_form(
    zeta_gul: np.ndarray,
    zeta_gdl: np.ndarray,
    zeta_h: np.ndarray,
    alpha: np.ndarray,
    L: int,
    sigma2: float,
) -> np.ndarray:
    """Per-(UL AP, target) sensing SINR under conjugate beams and combining.

    The desired-echo and interfering-echo powers share the per-target factor
    X_j; target t at UL AP n sees |alpha_t|^2 L(L+1) zu_nt^2 X_t against
    sum_{j != t} |alpha_j|^2 L zu_nt zu_nj X_j plus L sigma^2 zu_nt.
    """
    if sigma2 <= 0:
        raise ConfigError("sigma2 must be positive")
    zu = np.asarray(zeta_gul, dtype=float)         # (N, T)
    T = zu.shape[1]
    if T == 0:
        raise ConfigError("sensing SINR requires at least one target")
    a2 = np.abs(np.asarray(alpha, dtype=complex)) ** 2  # (T,)
    x = _sensing_ap_factor(zeta_gdl, zeta_h, L)         # (T,)
    num = a2[None, :] * L * (L + 1) * zu**2 * x[None, :]
    # interference: L zu_nt sum_{j != t} |alpha_j|^2 zu_nj X_j
    weighted = a2 * x                               # (T,)
    inter = L * zu * (zu @ weighted)[:, None] - L * zu**2 * weighted[None, :]
    noise = L * sigma2 * zu
    return num / (inter + noise)


# --- Monte-Carlo estimators ---------------------------------------------------

PrecoderRule = Callable[[ChannelBatch], tuple[np.ndarray, np.ndarray, np.ndarray]]


def mrt_mrc_rule(amp: np.ndarray | None = None) -> PrecoderRule:
    """Conjugate precoding/combining, optionally amplitude-scaled per AP."""

    def rule(batch: ChannelBatch):
        w, s, u = batch.h, batch.g_dl, batch.g_ul
        if amp is not None:
            w = w * amp[None, :, None, None]
            s = s * amp[None, :, None, None]
        return w, s, u

    return rule


def _resolve_sampler(channel_sampler, seed: int) -> ChannelSampler:
    if isinstance(channel_sampler, ChannelSampler):
        return channel_sampler
    if isinstance(channel_sampler, SystemGeometry):
        return ChannelSampler(channel_sampler, seed)
    if callable(channel_sampler):
        return channel_sampler(seed)
    raise ConfigError("channel_sampler must be a geometry, sampler, or factory")


@dataclass(frozen=True)
class McEstimate:
    """Monte-Carlo SINR estimates with jackknife standard errors."""

    sinr: np.ndarray
    sinr_stderr: np.ndarray
    trials: int
    components: dict = field(default_factory=dict)

    @property
    def se(self) -> np.ndarray:
        return comm_se(self.sinr)

    @property
    def se_stderr(self) -> np.ndarray:
        return _se_stderr(self.sinr, self.sinr_stderr)


def comm_sinr_monte_carlo(
    channel_sampler,
    precoder_rule: PrecoderRule,
    sigma2: float,
    trials: int,
    seed: int,
    chunk_size: int = _DEFAULT_CHUNK,
) -> McEstimate:
    """Estimate per-user SINR by simulating the user received signal.

    Per trial accumulates the desired-signal, multi-user-interference, and
    sensing-interference powers; the SINR is the ratio of their means
    (matching the expectation placement of the analytical definition).
    """
    if trials < 100:
        raise ConfigError("trials must be >= 100")
    sampler = _resolve_sampler(channel_sampler, seed)
    K = sampler.gains.zeta_h.shape[1]
    num = np.empty((trials, K))
    den = np.empty((trials, K))
    ssi_acc = np.zeros(K)
    done = 0
    while done < trials:
        c = min(chunk_size, trials - done)
        batch = sampler.batch(c, include_inter_ap=False)
        w, s, _ = precoder_rule(batch)
        d = np.einsum("cmkl,cmil->cki", np.conj(batch.h), w)
        ds = np.abs(np.einsum("ckk->ck", d)) ** 2
        mui = np.sum(np.abs(d) ** 2, axis=2) - ds
        if s.shape[2]:
            ssi = np.sum(
                np.abs(np.einsum("cmkl,cmtl->ckt", np.conj(batch.h), s)) ** 2, axis=2
            )
        else:
            ssi = np.zeros_like(ds)
        num[done : done + c] = ds
        den[done : done + c] = mui + ssi
        ssi_acc += ssi.sum(axis=0)
        done += c
    sinr = np.empty(K)
    stderr = np.empty(K)
    for k in range(K):
        sinr[k], stderr[k] = _jackknife_ratio(num[:, k], den[:, k] + sigma2)
    return McEstimate(
        sinr=sinr,
        sinr_stderr=stderr,
        trials=trials,
        components={"ssi_mean": ssi_acc / trials},
    )


def sensing_sinr_monte_carlo(
    channel_sampler,
    precoder_rule: PrecoderRule,
    alpha: np.ndarray,
    sigma2: float,
    trials: int,
    seed: int,
    chunk_size: int = _DEFAULT_CHUNK,
    subtract_dli: bool = True,
) -> McEstimate:
    """Estimate per-(UL AP, target) sensing SINR from simulated echoes.

    Assembles the UL-AP received signal including the inter-AP direct-link
    term, removes that term exactly when ``subtract_dli`` (the normal path),
    applies the combiners, and forms the ratio of the mean desired-echo power
    to the mean residual power. ``subtract_dli=False`` exists only to verify
    that the subtraction path matters.
    """
    if trials < 100:
        raise ConfigError("trials must be >= 100")
    alpha = np.asarray(alpha, dtype=complex)
    sampler = _resolve_sampler(channel_sampler, seed)
    N, T = sampler.gains.zeta_gul.shape
    if T == 0:
        raise ConfigError("sensing requires at least one target")
    K = sampler.gains.zeta_h.shape[1]
    sym_gen = rng.stream(seed, rng.KIND_SYMBOLS)
    noise_gen = rng.stream(seed, rng.KIND_NOISE)
    sqrt_half = math.sqrt(0.5)

    num = np.empty((trials, N, T))
    den = np.empty((trials, N, T))
    mti_acc = np.zeros((N, T))
    done = 0
    while done < trials:
        c = min(chunk_size, trials - done)
        batch = sampler.batch(c)
        w, s, u = precoder_rule(batch)
        L = w.shape[-1]
        q = qpsk_symbols(c * K, sym_gen).reshape(c, K) if K else np.zeros((c, 0))
        x = np.einsum("cmkl,ck->cml", w, q) + s.sum(axis=2)       # (c, M, L)
        beam_sum = np.einsum("cmtl,cml->ct", np.conj(batch.g_dl), x)  # (c, T)
        cross = np.einsum("cntl,cnjl->cntj", np.conj(u), batch.g_ul)  # (c, N, T, T)
        echo = cross * (alpha[None, None, None, :] * beam_sum[:, None, None, :])
        z = sqrt_half * (
            noise_gen.standard_normal((c, N, L)) + 1j * noise_gen.standard_normal((c, N, L))
        ) * math.sqrt(sigma2)
        noise_proj = np.einsum("cntl,cnl->cnt", np.conj(u), z)
        dli = np.einsum("cmnab,cmb->cna", batch.f, x)              # (c, N, L)
        dli_proj = np.einsum("cntl,cnl->cnt", np.conj(u), dli)
        y = dli_proj + echo.sum(axis=3) + noise_proj               # (c, N, T)
        if subtract_dli:
            y = y - dli_proj
        desired = np.einsum("cntt->cnt", echo)
        num[done : done + c] = np.abs(desired) ** 2
        den[done : done + c] = np.abs(y - desired) ** 2
        mti = np.sum(np.abs(echo) ** 2, axis=3) - np.abs(desired) ** 2
        mti_acc += mti.sum(axis=0)
        done += c
    sinr = np.empty((N, T))
    stderr = np.empty((N, T))
    for n in range(N):
        for t in range(T):
            sinr[n, t], stderr[n, t] = _jackknife_ratio(num[:, n, t], den[:, n, t])
    return McEstimate(
        sinr=sinr,
        sinr_stderr=stderr,
        trials=trials,
        components={"mti_mean": mti_acc / trials},
    )


# --- leakage ------------------------------------------------------------------

@dataclass(frozen=True)
class LeakageReport:
    """Leakage SE of each user's stream at each target, plus per-target max."""

    table: np.ndarray       # (T, K) bps/Hz
    per_target_max: np.ndarray  # (T,)


def leakage_se(channels: ChannelSet, precoders, sigma2: float) -> LeakageReport:
    """Rate at which target t could decode user k's stream.

    Models a SIC-capable adversary at the target position: the wanted
    stream's power over all other streams (communication and sensing) plus
    noise, through the AP-to-target channels.
    """
    if channels.g_dl.shape[1] < 1:
        raise ConfigError("leakage requires at least one target")
    cw = np.einsum("mtl,mkl->tk", np.conj(channels.g_dl), precoders.w)
    num = np.abs(cw) ** 2                                   # (T, K)
    mui = num.sum(axis=1, keepdims=True) - num
    if precoders.s.shape[1]:
        cs = np.einsum("mtl,mjl->tj", np.conj(channels.g_dl), precoders.s)
        sens = np.sum(np.abs(cs) ** 2, axis=1, keepdims=True)
    else:
        sens = 0.0
    table = comm_se(num / (mui + sens + sigma2))
    if table.shape[1]:
        per_target_max = table.max(axis=1)
    else:
        per_target_max = np.zeros(table.shape[0])
    return LeakageReport(table=table, per_target_max=per_target_max)


# --- statistical-CSI (hardening) bound -----------------------------------------

@dataclass(frozen=True)
class UserChannelStats:
    """Second-order description of user channels for an AP layout.

    zeta[a, k] is the large-scale gain from AP a to user k; every AP carries
    ``L`` antennas. A co-located deployment is the special case of a single
    AP whose antenna count is the whole array.
    """

    zeta: np.ndarray
    L: int

    @property
    def n_users(self) -> int:
        return self.zeta.shape[1]

    def antenna_std(self) -> np.ndarray:
        """Per-antenna amplitude std for each user, shape (K, A*L)."""
        return np.sqrt(np.repeat(self.zeta.T, self.L, axis=1))


def user_channel_stats(geometry: SystemGeometry) -> UserChannelStats:
    return UserChannelStats(zeta=link_gains(geometry).zeta_h, L=geometry.config.L)


def _conjugate_moments(
    stats: UserChannelStats,
    trials: int,
    seed: int,
    chunk_size: int = _DEFAULT_CHUNK,
):
    """Accumulators for h_k^H h_i cross moments and instantaneous SINR inputs."""
    std = stats.antenna_std()          # (K, A*L)
    K = stats.n_users
    gen = rng.stream(seed, rng.KIND_GENERIC, 7)
    sum_g = np.zeros((K, K), dtype=complex)
    sum_g2 = np.zeros((K, K))
    inst = np.empty((trials, K, K), dtype=complex)
    done = 0
    while done < trials:
        c = min(chunk_size, trials - done)
        draws = (
            gen.standard_normal((c,) + std.shape + (2,)) @ np.array([1.0, 1j])
        ) / math.sqrt(2.0)
        h = std[None] * draws                        # (c, K, A*L)
        g = np.einsum("cka,cia->cki", np.conj(h), h)  # h_k^H h_i
        sum_g += g.sum(axis=0)
        sum_g2 += (np.abs(g) ** 2).sum(axis=0)
        inst[done : done + c] = g
        done += c
    return sum_g / trials, sum_g2 / trials, inst


def uatf_se(
    channel_statistics: UserChannelStats,
    sigma2: float,
    trials: int,
    seed: int,
    p_total_watts: float | None = None,
) -> np.ndarray:
    """Per-user SE of the statistical-CSI (hardening) bound, conjugate beams.

    SE_k = log2(1 + |E[h_k^H w_k]|^2 /
                (sum_i E[|h_k^H w_i|^2] - |E[h_k^H w_k]|^2 + sigma^2)),
    with w_i = c * h_i and c chosen so the total expected transmit power is
    ``p_total_watts`` (c = 1 when not given). Expectations are estimated by
    Monte-Carlo; one code path serves distributed and co-located layouts.
    """
    if trials < 100:
        raise ConfigError("trials must be >= 100")
    mean_g, mean_g2, _ = _conjugate_moments(channel_statistics, trials, seed)
    c2 = _power_scale(channel_statistics, p_total_watts)
    desired = c2 * np.abs(np.diag(mean_g)) ** 2
    total = c2 * mean_g2.sum(axis=1)
    return comm_se(desired / (total - desired + sigma2))


def ergodic_se_monte_carlo(
    channel_statistics: UserChannelStats,
    sigma2: float,
    trials: int,
    seed: int,
    p_total_watts: float | None = None,
) -> np.ndarray:
    """Ergodic per-user SE with perfect CSI, E[log2(1 + instantaneous SINR)].

    Upper-bounds uatf_se on the same statistics; shares its sampling scheme
    so the two are directly comparable.
    """
    if trials < 100:
        raise ConfigError("trials must be >= 100")
    _, _, inst = _conjugate_moments(channel_statistics, trials, seed)
    c2 = _power_scale(channel_statistics, p_total_watts)
    num = c2 * np.abs(np.einsum("ckk->ck", inst)) ** 2
    total = c2 * np.sum(np.abs(inst) ** 2, axis=2)
    return np.mean(np.log2(1.0 + num / (total - num + sigma2)), axis=0)


def _power_scale(stats: UserChannelStats, p_total_watts: float | None) -> float:
    if p_total_watts is None:
        return 1.0
    expected = stats.L * float(stats.zeta.sum())
    if expected <= 0:
        raise ConfigError("total expected power must be positive")
    return p_total_watts / expected


# --- full report ---------------------------------------------------------------

@dataclass(frozen=True)
class PerfReport:
    """Closed-form and Monte-Carlo SE results for one topology."""

    comm_se_closed: np.ndarray      # (K,)
    comm_se_mc: np.ndarray          # (K,)
    comm_se_stderr: np.ndarray      # (K,)
    sens_se_closed: np.ndarray      # (N, T)
    sens_se_mc: np.ndarray          # (N, T)
    sens_se_stderr: np.ndarray      # (N, T)
    leak_se: np.ndarray             # (T, K)
    trials: int
    sigma2_watts: float

    def __post_init__(self):
        for name in ("comm_se_closed", "comm_se_mc", "sens_se_closed", "sens_se_mc",
                     "leak_se"):
            if np.any(np.asarray(getattr(self, name)) < 0):
                raise ConfigError(f"{name} must be non-negative")
        if np.any(self.comm_se_stderr < 0) or np.any(self.sens_se_stderr < 0):
            raise ConfigError("standard errors must be non-negative")

    def to_tree(self) -> dict:
        return {
            "trials": self.trials,
            "sigma2_watts": self.sigma2_watts,
            "comm_se": {
                "closed": self.comm_se_closed.tolist(),
                "mc": self.comm_se_mc.tolist(),
                "stderr": self.comm_se_stderr.tolist(),
            },
            "sens_se": {
                "closed": self.sens_se_closed.tolist(),
                "mc": self.sens_se_mc.tolist(),
                "stderr": self.sens_se_stderr.tolist(),
            },
            "leak_se": self.leak_se.tolist(),
        }

    def rows(self) -> list[dict]:
        """Flat records: entity ids, metric, closed, mc, stderr."""
        out = []
        for k in range(self.comm_se_closed.shape[0]):
            out.append({
                "metric": "comm_se", "user": k, "ul_ap": "", "target": "",
                "closed": self.comm_se_closed[k], "mc": self.comm_se_mc[k],
                "stderr": self.comm_se_stderr[k],
            })
        N, T = self.sens_se_closed.shape
        for n in range(N):
            for t in range(T):
                out.append({
                    "metric": "sens_se", "user": "", "ul_ap": n, "target": t,
                    "closed": self.sens_se_closed[n, t],
                    "mc": self.sens_se_mc[n, t],
                    "stderr": self.sens_se_stderr[n, t],
                })
        Tl, K = self.leak_se.shape
        for t in range(Tl):
            for k in range(K):
                out.append({
                    "metric": "leak_se", "user": k, "ul_ap": "", "target": t,
                    "closed": self.leak_se[t, k], "mc": "", "stderr": "",
                })
        return out


def evaluate_performance(
    geometry: SystemGeometry,
    trials: int,
    seed: int,
    normalize_power: bool = True,
    chunk_size: int = _DEFAULT_CHUNK,
) -> PerfReport:
    """Closed-form plus Monte-Carlo SE evaluation of one topology.

    Conjugate beams throughout; when ``normalize_power`` the beams carry the
    per-AP amplitude that sets the expected transmit power to the configured
    cap, with the closed forms evaluated on the matching scaled tables.
    """
    cfg = geometry.config
    gains = link_gains(geometry)
    sigma2 = noise_power_watts(cfg)
    alpha = geometry.reflection_amplitudes

    if normalize_power:
        zh_hat, zg_hat, amp = scaled_zeta_tables(gains, cfg.L, cfg.p_max_watts)
    else:
        zh_hat, zg_hat, amp = gains.zeta_h, gains.zeta_gdl, None
    rule = mrt_mrc_rule(amp)

    comm_closed = comm_se(comm_sinr_closed_form(zh_hat, zg_hat, cfg.L, sigma2))
    comm_mc = comm_sinr_monte_carlo(
        ChannelSampler(geometry, seed, gains), rule, sigma2, trials, seed,
        chunk_size=chunk_size,
    )
    if cfg.T and cfg.N:
        sens_closed = comm_se(
            sensing_sinr_closed_form(gains.zeta_gul, zg_hat, zh_hat, alpha, cfg.L, sigma2)
        )
        sens_mc = sensing_sinr_monte_carlo(
            ChannelSampler(geometry, rng.derive_seed(seed, 1), gains),
            rule, alpha, sigma2, trials, rng.derive_seed(seed, 1),
            chunk_size=chunk_size,
        )
        sens_mc_se, sens_mc_err = sens_mc.se, sens_mc.se_stderr
    else:
        sens_closed = np.zeros((cfg.N, cfg.T))
        sens_mc_se = np.zeros((cfg.N, cfg.T))
        sens_mc_err = np.zeros((cfg.N, cfg.T))

    if cfg.T:
        ch = sample_channels(geometry, rng.derive_seed(seed, 2))
        pre = mrt_precoders(ch)
        if amp is not None:
            pre = replace(pre, w=pre.w * amp[:, None, None], s=pre.s * amp[:, None, None])
        leak = leakage_se(ch, pre, sigma2).table
    else:
        leak = np.zeros((0, cfg.K))

    return PerfReport(
        comm_se_closed=comm_closed,
        comm_se_mc=comm_mc.se,
        comm_se_stderr=comm_mc.se_stderr,
        sens_se_closed=sens_closed,
        sens_se_mc=sens_mc_se,
        sens_se_stderr=sens_mc_err,
        leak_se=leak,
        trials=trials,
        sigma2_watts=sigma2,
    )
