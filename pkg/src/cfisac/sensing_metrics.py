"""Sensing metrics: beampattern gains, sensing mutual information, FIM/CRB.

Beampattern gains use the half-wavelength ULA steering vectors from the
beamforming module. Gains are reported as symbol-averaged second moments by
default; the instantaneous form for a realized transmit vector is available
separately.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol

import numpy as np

from .beamforming import steering_vector
from .scenario import ConfigError

_COND_LIMIT = 1e12


# --- beampattern gains ---------------------------------------------------------

def tx_beampattern_gain(w: np.ndarray, s: np.ndarray, theta_rad: float) -> float:
    """Symbol-averaged transmit gain at one AP toward angle theta.

    p_t(theta) = sum_k |a^H w_k|^2 + sum_t |a^H s_t|^2 for unit-power,
    independent data symbols; w is (K, L), s is (T, L), either may be empty.
    """
    L = w.shape[-1] if w.size else s.shape[-1]
    a = steering_vector(L, theta_rad)
    total = 0.0
    if w.size:
        total += float(np.sum(np.abs(w.conj() @ a) ** 2))
    if s.size:
        total += float(np.sum(np.abs(s.conj() @ a) ** 2))
    return total


def instantaneous_tx_gain(x: np.ndarray, theta_rad: float) -> float:
    """Gain |a(theta)^H x|^2 of one realized transmit vector."""
    a = steering_vector(x.shape[-1], theta_rad)
    return float(np.abs(np.vdot(a, x)) ** 2)


def rx_beampattern_gain(u: np.ndarray, theta_rad: float) -> float:
    """Receive gain |u^H b(theta)|^2 of a combiner."""
    b = steering_vector(u.shape[-1], theta_rad)
    return float(np.abs(np.vdot(u, b)) ** 2)


def combined_beampattern_gain(
    u: np.ndarray,
    theta_rx_rad: float,
    w: np.ndarray,
    s: np.ndarray,
    theta_tx_rad: float,
) -> float:
    """Combined gain: receive gain at theta_rx times transmit gain at theta_tx."""
    return rx_beampattern_gain(u, theta_rx_rad) * tx_beampattern_gain(w, s, theta_tx_rad)


@dataclass(frozen=True)
class BeampatternProfile:
    """Gain-versus-angle evaluation for one AP over an angular grid."""

    ap_index: int
    angles_rad: np.ndarray
    gains: np.ndarray
    kind: str = "transmit"

    def __post_init__(self):
        if self.kind not in ("transmit", "receive", "combined"):
            raise ConfigError(f"unknown profile kind {self.kind!r}")
        if self.angles_rad.shape != self.gains.shape:
            raise ConfigError("angles and gains must have equal length")
        if np.any(np.diff(self.angles_rad) <= 0):
            raise ConfigError("angle grid must be strictly increasing")
        if np.any(self.gains < 0):
            raise ConfigError("gains must be non-negative")

    def peak_angles(self) -> np.ndarray:
        """Angles of interior local maxima, strongest first."""
        g = self.gains
        if g.size < 3:
            return np.array([])
        interior = (g[1:-1] > g[:-2]) & (g[1:-1] >= g[2:])
        idx = np.where(interior)[0] + 1
        order = np.argsort(g[idx])[::-1]
        return self.angles_rad[idx[order]]

    def rows(self) -> list[dict]:
        out = []
        for ang, gain in zip(self.angles_rad, self.gains):
            gain_db = 10.0 * np.log10(gain) if gain > 0 else float("-inf")
            out.append({
                "ap": self.ap_index,
                "angle_deg": np.degrees(ang),
                "gain_linear": gain,
                "gain_db": gain_db,
            })
        return out


def angle_grid(step_deg: float = 1.0) -> np.ndarray:
    """Angular grid covering [-90, 90] degrees inclusive, in radians."""
    n = int(round(180.0 / step_deg))
    return np.radians(np.linspace(-90.0, 90.0, n + 1))


def beampattern_profile(
    precoders, ap_index: int, grid_rad: np.ndarray, kind: str = "transmit",
    combiner: np.ndarray | None = None,
) -> BeampatternProfile:
    """Evaluate an AP's beampattern over a grid of angles.

    ``kind='transmit'`` uses the AP's precoders and sensing beams;
    ``kind='receive'`` needs an explicit combiner vector.
    """
    grid_rad = np.asarray(grid_rad, dtype=float)
    if grid_rad.size and (grid_rad.min() < -np.pi / 2 - 1e-9 or grid_rad.max() > np.pi / 2 + 1e-9):
        raise ConfigError("grid must lie within [-pi/2, pi/2]")
    if kind == "transmit":
        w, s = precoders.w[ap_index], precoders.s[ap_index]
        gains = np.array([tx_beampattern_gain(w, s, t) for t in grid_rad])
    elif kind == "receive":
        if combiner is None:
            raise ConfigError("receive profile requires a combiner")
        gains = np.array([rx_beampattern_gain(combiner, t) for t in grid_rad])
    else:
        raise ConfigError(f"unsupported profile kind {kind!r}")
    return BeampatternProfile(
        ap_index=ap_index, angles_rad=grid_rad, gains=gains, kind=kind
    )


# --- sensing mutual information --------------------------------------------------

def sensing_mi(X: np.ndarray, R_G: np.ndarray, sigma2: float, M: int) -> float:
    """Sensing mutual information M * log2 det(X^H R_G X / sigma^2 + I).

    X has shape (antennas, slots); R_G is the (antennas, antennas) PSD
    second-moment matrix of the target response. Dividing the result by the
    slot count gives the sensing SE for this X.
    """
    X = np.atleast_2d(np.asarray(X, dtype=complex))
    R_G = np.atleast_2d(np.asarray(R_G, dtype=complex))
    if sigma2 <= 0:
        raise ConfigError("sigma2 must be positive")
    if R_G.shape[0] != R_G.shape[1] or R_G.shape[0] != X.shape[0]:
        raise ConfigError("R_G must be square and match X's antenna dimension")
    if not np.allclose(R_G, R_G.conj().T, atol=1e-9):
        raise ConfigError("R_G must be Hermitian")
    eigs = np.linalg.eigvalsh(R_G)
    if eigs.min() < -1e-9 * max(1.0, abs(eigs.max())):
        raise ConfigError("R_G must be positive semi-definite")
    n_slots = X.shape[1]
    inner = X.conj().T @ R_G @ X / sigma2 + np.eye(n_slots)
    sign, logdet = np.linalg.slogdet(inner)
    if sign.real <= 0:
        raise ConfigError("observation Gram matrix must be positive definite")
    return float(M * logdet / np.log(2.0))


def sensing_se_from_mi(X: np.ndarray, R_G: np.ndarray, sigma2: float, M: int) -> float:
    """Sensing SE in bps/Hz: the MI divided by the slot count."""
    n_slots = np.atleast_2d(X).shape[1]
    return sensing_mi(X, R_G, sigma2, M) / n_slots


# --- Fisher information / CRB -----------------------------------------------------

class ResponseModel(Protocol):
    """Observation model y = G(theta) X + noise used by the FIM."""

    def observed(self, theta: np.ndarray) -> np.ndarray:
        """G(theta) X, any fixed matrix shape."""
        ...

    def jacobian(self, theta: np.ndarray) -> np.ndarray | None:
        """Stack of d(GX)/d theta_p, shape (P,) + observed shape, or None."""
        ...

    @property
    def param_names(self) -> tuple[str, ...]:
        ...


@dataclass(frozen=True)
class FisherInfo:
    """Fisher information matrix over named parameters."""

    params: tuple[str, ...]
    matrix: np.ndarray

    def __post_init__(self):
        m = self.matrix
        if m.shape != (len(self.params), len(self.params)):
            raise ConfigError("matrix shape must match parameter count")
        scale = max(1.0, float(np.abs(m).max()))
        if not np.allclose(m, m.T, atol=1e-9 * scale):
            raise ConfigError("Fisher information must be symmetric")
        if np.linalg.eigvalsh(m).min() < -1e-9 * scale:
            raise ConfigError("Fisher information must be positive semi-definite")

    @property
    def condition_number(self) -> float:
        return float(np.linalg.cond(self.matrix))

    @property
    def ill_conditioned(self) -> bool:
        return self.condition_number > _COND_LIMIT


def finite_difference_jacobian(model: ResponseModel, theta: np.ndarray, step: float = 1e-6):
    """Central finite differences of the observed matrix w.r.t. each parameter."""
    theta = np.asarray(theta, dtype=float)
    base = model.observed(theta)
    out = np.empty((theta.size,) + base.shape, dtype=complex)
    for p in range(theta.size):
        hi, lo = theta.copy(), theta.copy()
        hi[p] += step
        lo[p] -= step
        out[p] = (model.observed(hi) - model.observed(lo)) / (2 * step)
    return out


def fim(
    model: ResponseModel,
    theta: np.ndarray,
    sigma2: float,
    M: int,
    use_analytic: bool = True,
) -> FisherInfo:
    """Fisher information of the observation model parameters.

    [F]_{nm} = (2 M / sigma^2) * Re Tr(d(GX)/d theta_n (d(GX)/d theta_m)^H),
    using the model's analytic Jacobian when available (finite differences
    otherwise).
    """
    if sigma2 <= 0:
        raise ConfigError("sigma2 must be positive")
    theta = np.asarray(theta, dtype=float)
    jac = model.jacobian(theta) if use_analytic else None
    if jac is None:
        jac = finite_difference_jacobian(model, theta)
    flat = jac.reshape(jac.shape[0], -1)
    gram = np.real(flat @ flat.conj().T)
    matrix = (2.0 * M / sigma2) * 0.5 * (gram + gram.T)
    return FisherInfo(params=tuple(model.param_names), matrix=matrix)


class SingularFisherError(ValueError):
    """Raised when the FIM cannot be inverted; carries the null direction."""

    def __init__(self, null_direction: np.ndarray, params: tuple[str, ...]):
        self.null_direction = null_direction
        weakest = params[int(np.argmax(np.abs(null_direction)))]
        super().__init__(
            f"Fisher information is singular; null direction {null_direction} "
            f"(dominated by parameter {weakest!r})"
        )


def crb(fisher: FisherInfo, n: int | None = None):
    """Cramer-Rao bound: diagonal of the inverse FIM (or one entry).

    Raises SingularFisherError naming the null direction when the matrix is
    singular or ill-conditioned beyond 1e12.
    """
    m = fisher.matrix
    eigvals, eigvecs = np.linalg.eigh(m)
    if eigvals.min() <= 0 or fisher.condition_number > _COND_LIMIT:
        raise SingularFisherError(eigvecs[:, 0], fisher.params)
    inv = np.linalg.inv(m)
    diag = np.diag(inv)
    return float(diag[n]) if n is not None else diag.copy()


@dataclass
class PointTargetModel:
    """Single point target observed through ULA steering responses.

    G(theta, alpha) = alpha * b(theta) a(theta)^H with a fixed transmit block
    X; parameters are (theta, Re alpha, Im alpha), exercising an angle
    derivative and both amplitude derivatives.
    """

    L_tx: int
    L_rx: int
    X: np.ndarray  # (L_tx, slots)

    param_names: tuple[str, ...] = ("theta", "re_alpha", "im_alpha")

    def _parts(self, theta: np.ndarray):
        ang, re_a, im_a = theta
        alpha = re_a + 1j * im_a
        a = steering_vector(self.L_tx, ang)
        b = steering_vector(self.L_rx, ang)
        return ang, alpha, a, b

    def observed(self, theta: np.ndarray) -> np.ndarray:
        _, alpha, a, b = self._parts(theta)
        return alpha * np.outer(b, a.conj()) @ self.X

    def jacobian(self, theta: np.ndarray) -> np.ndarray:
        ang, alpha, a, b = self._parts(theta)
        # d/d theta of exp(j pi l sin theta): j pi l cos(theta) * element
        da = 1j * np.pi * np.arange(self.L_tx) * np.cos(ang) * a
        db = 1j * np.pi * np.arange(self.L_rx) * np.cos(ang) * b
        base = np.outer(b, a.conj()) @ self.X
        d_theta = alpha * (np.outer(db, a.conj()) + np.outer(b, da.conj())) @ self.X
        return np.stack([d_theta, base, 1j * base])
