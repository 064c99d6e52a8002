"""Constrained beamforming design: sum-SE maximization under power,
beampattern, and optional leakage constraints.

The solver works on one channel realization. It starts from power-normalized
conjugate beams, restores feasibility by shifting power from communication
beams to steering-aligned sensing beams when needed, then runs projected
gradient ascent on the exact sum-SE objective, accepting only feasible,
non-decreasing steps, so the recorded objective trace is monotone by
construction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .beamforming import PrecoderSet, mrt_precoders, normalize_per_ap_power, steering_vector
from .channel import ChannelSet
from .link_performance import leakage_se
from .scenario import ConfigError, SystemGeometry

_LN2 = math.log(2.0)


@dataclass(frozen=True)
class SolverTolerances:
    rel_objective: float = 1e-4
    max_iterations: int = 200
    power_rel: float = 1e-6
    beampattern_rel: float = 1e-4
    leakage_abs: float = 1e-4
    max_backtracks: int = 40


@dataclass(frozen=True)
class DesignProblem:
    """One beamforming design instance over a fixed channel realization."""

    channels: ChannelSet
    target_angles: np.ndarray          # (M, T) bearings from each AP, radians
    gamma_th_watts: np.ndarray | float  # per-target beampattern floor
    p_max_watts: float
    sigma2_watts: float
    delta_max_bps_hz: float | None = None
    tolerances: SolverTolerances = field(default_factory=SolverTolerances)

    def __post_init__(self):
        M, _, K, T, L = self.channels.shape
        angles = np.atleast_2d(np.asarray(self.target_angles, dtype=float))
        if angles.shape != (M, T):
            raise ConfigError(f"target_angles must have shape ({M}, {T})")
        object.__setattr__(self, "target_angles", angles)
        gamma = np.broadcast_to(
            np.asarray(self.gamma_th_watts, dtype=float), (T,)
        ).copy()
        if np.any(gamma < 0):
            raise ConfigError("gamma_th_watts must be >= 0")
        object.__setattr__(self, "gamma_th_watts", gamma)
        if self.p_max_watts <= 0:
            raise ConfigError("p_max_watts must be positive")
        if self.sigma2_watts <= 0:
            raise ConfigError("sigma2_watts must be positive")
        if self.delta_max_bps_hz is not None and self.delta_max_bps_hz < 0:
            raise ConfigError("delta_max_bps_hz must be >= 0")

    def steering(self) -> np.ndarray:
        """Steering vectors toward each target bearing, shape (M, T, L)."""
        M, T = self.target_angles.shape
        L = self.channels.shape[4]
        out = np.empty((M, T, L), dtype=complex)
        for m in range(M):
            for t in range(T):
                out[m, t] = steering_vector(L, self.target_angles[m, t])
        return out


class InfeasibleProblemError(ValueError):
    """Raised when no precoder set can satisfy the constraints."""

    def __init__(self, violations: list[str]):
        self.violations = violations
        super().__init__("infeasible design problem: " + "; ".join(violations))


@dataclass(frozen=True)
class FeasibilityReport:
    """Exact constraint slacks; positive means satisfied."""

    power_slack: np.ndarray            # (M,) p_max - used power
    beampattern_slack: np.ndarray      # (M, T) gain - gamma_th
    leakage_slack: np.ndarray | None   # (T,) delta_max - max_k leakage, if capped

    def ok(self, problem: DesignProblem) -> bool:
        tol = problem.tolerances
        if np.any(self.power_slack < -tol.power_rel * problem.p_max_watts):
            return False
        gamma = np.maximum(problem.gamma_th_watts, 1e-300)
        if self.beampattern_slack.size and np.any(
            self.beampattern_slack < -tol.beampattern_rel * gamma[None, :]
        ):
            return False
        if self.leakage_slack is not None and np.any(
            self.leakage_slack < -tol.leakage_abs
        ):
            return False
        return True

    def violations(self, problem: DesignProblem) -> list[str]:
        out = []
        tol = problem.tolerances
        for m in np.where(self.power_slack < -tol.power_rel * problem.p_max_watts)[0]:
            out.append(f"power at AP {m} (slack {self.power_slack[m]:.3e} W)")
        gamma = np.maximum(problem.gamma_th_watts, 1e-300)
        if self.beampattern_slack.size:
            bad = np.argwhere(
                self.beampattern_slack < -tol.beampattern_rel * gamma[None, :]
            )
            for m, t in bad:
                out.append(
                    f"beampattern at AP {m} target {t} "
                    f"(slack {self.beampattern_slack[m, t]:.3e} W)"
                )
        if self.leakage_slack is not None:
            for t in np.where(self.leakage_slack < -tol.leakage_abs)[0]:
                out.append(
                    f"leakage at target {t} (slack {self.leakage_slack[t]:.3e} bps/Hz)"
                )
        return out


@dataclass(frozen=True)
class SolveReport:
    precoders: PrecoderSet
    objective_trace: np.ndarray
    feasibility: FeasibilityReport
    iterations: int
    converged: bool

    def to_tree(self) -> dict:
        return {
            "sum_se": float(self.objective_trace[-1]),
            "iterations": self.iterations,
            "converged": self.converged,
            "objective_trace": self.objective_trace.tolist(),
            "power_slack": self.feasibility.power_slack.tolist(),
            "beampattern_slack": self.feasibility.beampattern_slack.tolist(),
            "leakage_slack": (
                None
                if self.feasibility.leakage_slack is None
                else self.feasibility.leakage_slack.tolist()
            ),
        }


# --- objective and constraint evaluation ---------------------------------------

def sum_se(w: np.ndarray, s: np.ndarray, h: np.ndarray, sigma2: float) -> float:
    """Instantaneous sum SE over users for one channel realization."""
    d = np.einsum("mkl,mil->ki", np.conj(h), w)
    desired = np.abs(np.einsum("kk->k", d)) ** 2
    inter = np.sum(np.abs(d) ** 2, axis=1) - desired
    if s.shape[1]:
        inter = inter + np.sum(np.abs(np.einsum("mkl,mtl->kt", np.conj(h), s)) ** 2, axis=1)
    return float(np.sum(np.log2(1.0 + desired / (inter + sigma2))))


def beampattern_gains(w: np.ndarray, s: np.ndarray, steering: np.ndarray) -> np.ndarray:
    """Per-(AP, target) symbol-averaged transmit gain at the target bearing."""
    gains = np.zeros(steering.shape[:2])
    if w.shape[1]:
        gains += np.sum(np.abs(np.einsum("mtl,mkl->mtk", np.conj(steering), w)) ** 2, axis=2)
    if s.shape[1]:
        gains += np.sum(np.abs(np.einsum("mtl,mjl->mtj", np.conj(steering), s)) ** 2, axis=2)
    return gains


def _leakage_max(w, s, channels: ChannelSet, sigma2: float) -> np.ndarray:
    if channels.g_dl.shape[1] == 0:
        return np.zeros(0)
    pre = PrecoderSet(w=w, s=s)
    return leakage_se(channels, pre, sigma2).per_target_max


def feasibility_check(precoders: PrecoderSet, problem: DesignProblem) -> FeasibilityReport:
    """Exact slack of every constraint; pure evaluation, no side effects."""
    power = precoders.per_ap_power()
    gains = beampattern_gains(precoders.w, precoders.s, problem.steering())
    leak = None
    if problem.delta_max_bps_hz is not None and math.isfinite(problem.delta_max_bps_hz):
        leak = problem.delta_max_bps_hz - _leakage_max(
            precoders.w, precoders.s, problem.channels, problem.sigma2_watts
        )
    return FeasibilityReport(
        power_slack=problem.p_max_watts - power,
        beampattern_slack=gains - problem.gamma_th_watts[None, :],
        leakage_slack=leak,
    )


# --- solver internals -----------------------------------------------------------

def _project_power(w: np.ndarray, s: np.ndarray, p_max: float):
    power = np.sum(np.abs(w) ** 2, axis=(1, 2)) + np.sum(np.abs(s) ** 2, axis=(1, 2))
    scale = np.ones_like(power)
    over = power > p_max
    scale[over] = np.sqrt(p_max / power[over])
    return w * scale[:, None, None], s * scale[:, None, None]


def full_power_mrt(channels: ChannelSet, p_max_watts: float) -> PrecoderSet:
    """Conjugate beams with each AP's power scaled to exactly p_max.

    This is the solver's starting point and the baseline its solutions must
    dominate; all-zero APs pass through unchanged.
    """
    pre = mrt_precoders(channels)
    power = pre.per_ap_power()
    scale = np.ones_like(power)
    nz = power > 0
    scale[nz] = np.sqrt(p_max_watts / power[nz])
    return replace(pre, w=pre.w * scale[:, None, None], s=pre.s * scale[:, None, None])


def _gradients(w, s, h, sigma2):
    """Ascent directions of the sum SE w.r.t. conjugate precoders."""
    d = np.einsum("mkl,mil->ki", np.conj(h), w)     # (K, K)
    desired = np.abs(np.einsum("kk->k", d)) ** 2
    inter = np.sum(np.abs(d) ** 2, axis=1) - desired
    if s.shape[1]:
        dt = np.einsum("mkl,mtl->kt", np.conj(h), s)
        inter = inter + np.sum(np.abs(dt) ** 2, axis=1)
    else:
        dt = None
    i0 = inter + sigma2
    c1 = 1.0 / (i0 + desired)
    diff = c1 - 1.0 / i0                             # negative
    coef = d * diff[:, None]
    k_idx = np.arange(d.shape[0])
    coef[k_idx, k_idx] = d[k_idx, k_idx] * c1
    grad_w = np.einsum("ki,mkl->mil", coef, h) / _LN2
    if dt is not None:
        grad_s = np.einsum("kt,mkl->mtl", dt * diff[:, None], h) / _LN2
    else:
        grad_s = np.zeros_like(s)
    return grad_w, grad_s


def _top_up_sensing(w, s, steering, gamma, p_max):
    """Raise violated beampattern gains by adding steering-aligned sensing power.

    Returns updated (w, s); power re-projection is the caller's job.
    """
    gains = beampattern_gains(w, s, steering)
    deficit = gamma[None, :] - gains
    if np.all(deficit <= 0):
        return w, s
    s = s.copy()
    M, T = deficit.shape
    L = s.shape[2]
    for m, t in np.argwhere(deficit > 0):
        a = steering[m, t]
        v = np.vdot(a, s[m, t])
        target_sq = max(gamma[t] - gains[m, t] + abs(v) ** 2, 0.0)
        c = (math.sqrt(target_sq) - abs(v)) / L
        if c <= 0:
            continue
        phase = v / abs(v) if abs(v) > 0 else 1.0
        s[m, t] = s[m, t] + c * phase * a
    return w, s


def _restore_beampattern(w0, s0, problem: DesignProblem, steering):
    """Find a feasible starting point, shifting power toward sensing beams.

    Scans the fraction of per-AP power moved into steering-aligned sensing
    beams; returns the first feasible point (preferring the least-perturbed
    one) or raises InfeasibleProblemError.
    """
    gamma = problem.gamma_th_watts
    p_max = problem.p_max_watts
    M, T, L = steering.shape
    tol = problem.tolerances

    def candidate(eta: float):
        if eta == 0.0:
            return w0, s0
        w = math.sqrt(1.0 - eta) * w0
        per_beam = eta * p_max / max(T, 1)
        s = np.sqrt(per_beam / L) * steering.astype(complex)
        return w, s

    # provably unreachable: even all power on one aligned beam caps at L * p_max
    hard = [t for t in range(T) if gamma[t] > L * p_max * (1 + tol.beampattern_rel)]
    if hard:
        raise InfeasibleProblemError(
            [
                f"beampattern floor for target {t} exceeds the single-AP "
                f"maximum of L*p_max = {L * p_max:.6g} W"
                for t in hard
            ]
        )

    for eta in np.concatenate([[0.0], np.linspace(0.05, 1.0, 20)]):
        w, s = candidate(float(eta))
        gains = beampattern_gains(w, s, steering)
        if np.all(gains >= gamma[None, :] * (1 - tol.beampattern_rel)):
            return _project_power(w, s, p_max)
    w, s = candidate(1.0)
    gains = beampattern_gains(w, s, steering)
    report = FeasibilityReport(
        power_slack=p_max - (np.sum(np.abs(w) ** 2, (1, 2)) + np.sum(np.abs(s) ** 2, (1, 2))),
        beampattern_slack=gains - gamma[None, :],
        leakage_slack=None,
    )
    raise InfeasibleProblemError(report.violations(problem) or ["beampattern floors unreachable"])


def _restore_leakage(w, s, problem: DesignProblem, delta_max: float):
    """Scale communication beams down until the leakage cap holds."""
    ch, sigma2 = problem.channels, problem.sigma2_watts
    if not s.shape[1] and not w.shape[1]:
        return w, s
    if np.max(_leakage_max(w, s, ch, sigma2), initial=0.0) <= delta_max:
        return w, s
    lo, hi = 0.0, 1.0
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if np.max(_leakage_max(mid * w, s, ch, sigma2), initial=0.0) <= delta_max:
            lo = mid
        else:
            hi = mid
    return lo * w, s


# deterministic starting-point family: fraction of the restored communication
# beams kept before the ascent (1.0 is the plain restored start)
_START_COMM_SCALES = (1.0, 0.5, 0.1)


def _ascend(w, s, problem: DesignProblem, steering, feasible):
    """Monotone projected-gradient ascent from a feasible point.

    Trial steps start from a Barzilai-Borwein size (curvature-adaptive) and
    backtrack until the candidate is feasible and non-decreasing; converged
    when several consecutive accepted steps bring no relative improvement.
    """
    ch, tol, sigma2 = problem.channels, problem.tolerances, problem.sigma2_watts
    obj = sum_se(w, s, ch.h, sigma2)
    trace = [obj]
    converged = False
    iterations = 0
    small_gain_streak = 0
    prev = None
    t_default = 0.1 * math.sqrt(problem.p_max_watts)
    while iterations < tol.max_iterations:
        iterations += 1
        gw, gs = _gradients(w, s, ch.h, sigma2)
        gnorm = math.sqrt(float(np.sum(np.abs(gw) ** 2) + np.sum(np.abs(gs) ** 2)))
        if gnorm == 0.0:
            converged = True
            break
        t = t_default / gnorm
        if prev is not None:
            dw, ds = w - prev[0], s - prev[1]
            dgw, dgs = gw - prev[2], gs - prev[3]
            num = float(np.sum(np.abs(dw) ** 2) + np.sum(np.abs(ds) ** 2))
            den = abs(float(np.real(np.sum(np.conj(dw) * dgw) + np.sum(np.conj(ds) * dgs))))
            if num > 0 and den > 0:
                t = num / den
        accepted = False
        for _ in range(tol.max_backtracks):
            wc, sc = w + t * gw, s + t * gs
            wc, sc = _top_up_sensing(wc, sc, steering, problem.gamma_th_watts, problem.p_max_watts)
            wc, sc = _project_power(wc, sc, problem.p_max_watts)
            if feasible(wc, sc):
                cand = sum_se(wc, sc, ch.h, sigma2)
                if cand >= obj - 1e-12:
                    prev = (w, s, gw, gs)
                    w, s = wc, sc
                    gain = cand - obj
                    obj = cand
                    trace.append(obj)
                    accepted = True
                    if gain < tol.rel_objective * max(abs(obj), 1e-12):
                        small_gain_streak += 1
                    else:
                        small_gain_streak = 0
                    break
            t *= 0.5
        if not accepted or small_gain_streak >= 5:
            converged = True
            break
    return w, s, np.array(trace), iterations, converged


def _solve(problem: DesignProblem, enforce_leakage: bool) -> SolveReport:
    ch = problem.channels
    tol = problem.tolerances
    sigma2 = problem.sigma2_watts
    steering = problem.steering()
    delta_max = problem.delta_max_bps_hz if enforce_leakage else None
    if delta_max is not None and not math.isfinite(delta_max):
        delta_max = None

    start = full_power_mrt(ch, problem.p_max_watts)
    w0, s0 = _restore_beampattern(start.w, start.s, problem, steering)

    def feasible(wc, sc) -> bool:
        power = np.sum(np.abs(wc) ** 2, (1, 2)) + np.sum(np.abs(sc) ** 2, (1, 2))
        if np.any(power > problem.p_max_watts * (1 + tol.power_rel)):
            return False
        gains = beampattern_gains(wc, sc, steering)
        gamma = problem.gamma_th_watts
        if gains.size and np.any(gains < gamma[None, :] * (1 - tol.beampattern_rel)):
            return False
        if delta_max is not None:
            if np.max(_leakage_max(wc, sc, ch, sigma2), initial=0.0) > delta_max + tol.leakage_abs:
                return False
        return True

    best = None
    any_feasible_start = False
    for comm_scale in _START_COMM_SCALES:
        w, s = comm_scale * w0, s0.copy()
        if delta_max is not None:
            w, s = _restore_leakage(w, s, problem, delta_max)
        w, s = _top_up_sensing(w, s, steering, problem.gamma_th_watts, problem.p_max_watts)
        w, s = _project_power(w, s, problem.p_max_watts)
        if not feasible(w, s):
            continue
        any_feasible_start = True
        result = _ascend(w, s, problem, steering, feasible)
        if best is None or result[2][-1] > best[2][-1] + 1e-12:
            best = result

    if not any_feasible_start:
        report = feasibility_check(
            PrecoderSet(w=w0, s=s0), replace(problem, delta_max_bps_hz=delta_max)
        )
        raise InfeasibleProblemError(report.violations(problem) or ["restoration failed"])

    w, s, trace, iterations, converged = best
    precoders = PrecoderSet(w=w, s=s)
    final = feasibility_check(
        precoders,
        replace(problem, delta_max_bps_hz=delta_max),
    )
    return SolveReport(
        precoders=precoders,
        objective_trace=trace,
        feasibility=final,
        iterations=iterations,
        converged=converged,
    )


def maximize_sum_se(problem: DesignProblem) -> SolveReport:
    """Maximize communication sum SE under power and beampattern constraints."""
    return _solve(problem, enforce_leakage=False)


def maximize_sum_se_secure(problem: DesignProblem) -> SolveReport:
    """As maximize_sum_se, additionally capping per-target leakage SE."""
    return _solve(problem, enforce_leakage=True)


# --- geometry helper --------------------------------------------------------------

def bearings_from_geometry(geometry: SystemGeometry) -> np.ndarray:
    """Bearing of each target from each DL AP, folded into [-pi/2, pi/2].

    Arrays are taken as oriented along the x axis with broadside facing +y;
    the bearing is the angle off broadside, with front-back ambiguity folded.
    """
    ap = geometry.dl_ap_positions
    tg = geometry.target_positions
    d = tg[None, :, :] - ap[:, None, :]
    raw = np.arctan2(d[..., 0], d[..., 1])
    folded = np.where(raw > np.pi / 2, np.pi - raw, raw)
    folded = np.where(folded < -np.pi / 2, -np.pi - folded, folded)
    return folded
