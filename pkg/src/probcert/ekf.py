"""Extended Kalman filter over ``[theta, phi, psi, E_0, v_0]``.

``E_0`` and ``v_0`` are modelled as random walks; only the angles carry
dynamics. Measurements are ``[theta, phi, v_0]`` with additive noise.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels as K
from .kite import DomainFault, KiteParams

H = np.zeros((3, 5))
H[0, 0] = H[1, 1] = H[2, 4] = 1.0


class EstimatorError(FloatingPointError):
    pass


def _diag(values) -> np.ndarray:
    return np.diag(np.asarray(values, dtype=float))


@dataclass
class EkfConfig:
    P0: np.ndarray = field(default_factory=lambda: _diag([1e-2, 1e-2, 1e-2, 1.0, 2e-1]))
    Q: np.ndarray = field(default_factory=lambda: _diag([1e-5, 1e-5, 1e-4, 1e-5, 3e-3]))
    R: np.ndarray = field(default_factory=lambda: _diag([1e-2, 1e-2, 5e-2]))
    t_ekf: float = 0.05

    def __post_init__(self):
        self.P0 = np.asarray(self.P0, dtype=float)
        self.Q = np.asarray(self.Q, dtype=float)
        self.R = np.asarray(self.R, dtype=float)
        if self.P0.shape != (5, 5) or self.Q.shape != (5, 5) or self.R.shape != (3, 3):
            raise ValueError("EKF matrices must be 5x5 (P0, Q) and 3x3 (R)")
        if np.any(np.diag(self.R) <= 0):
            raise ValueError("measurement noise diagonal must be positive")
        if np.any(np.diag(self.P0) < 0) or np.any(np.diag(self.Q) < 0):
            raise ValueError("covariance diagonals must be non-negative")


@dataclass
class EkfState:
    x: np.ndarray
    P: np.ndarray

    def copy(self) -> "EkfState":
        return EkfState(self.x.copy(), self.P.copy())


def init_estimate(x_true, E_0: float, v_0: float, deltas, cfg: EkfConfig | None = None) -> EkfState:
    """Initial estimate: the true augmented state scaled elementwise by ``deltas``."""
    cfg = cfg or EkfConfig()
    truth = np.array([x_true[0], x_true[1], x_true[2], E_0, v_0], dtype=float)
    return EkfState(truth * np.asarray(deltas, dtype=float), cfg.P0.copy())


def propagate(x: np.ndarray, u: float, dt: float, p: KiteParams) -> tuple[np.ndarray, np.ndarray]:
    """Mean propagation over ``dt`` and its discrete-time Jacobian."""
    if not math.sin(x[0]) > p.sin_tol:
        raise DomainFault(f"estimate left the model domain (theta={x[0]!r})")
    if not x[3] - p.c_tilde * u * u > 0:
        raise DomainFault("estimated glide ratio is not positive")
    return K.rk4_aug_sens(np.ascontiguousarray(x, dtype=float), float(u), float(dt), p.L_T, p.c_tilde)


def _psd(P: np.ndarray) -> np.ndarray:
    P = 0.5 * (P + P.T)
    w = np.linalg.eigvalsh(P)
    if w[0] < 0.0:
        w, V = np.linalg.eigh(P)
        P = (V * np.clip(w, 0.0, None)) @ V.T
        P = 0.5 * (P + P.T)
    return P


def ekf_predict(s: EkfState, u: float, cfg: EkfConfig, p: KiteParams, dt: float | None = None) -> EkfState:
    """Time update over ``dt`` (default one filter period).

    Process noise is scaled by ``dt / t_ekf`` so splitting a period into
    segments adds the same total noise.
    """
    dt = cfg.t_ekf if dt is None else dt
    x, F = propagate(s.x, u, dt, p)
    P = F @ s.P @ F.T + cfg.Q * (dt / cfg.t_ekf)
    return EkfState(x, _psd(P))


def ekf_update(s: EkfState, y, cfg: EkfConfig) -> EkfState:
    """Measurement update with ``y = [theta, phi, v_0]`` (Joseph form)."""
    y = np.asarray(y, dtype=float)
    S = H @ s.P @ H.T + cfg.R
    try:
        Kt = np.linalg.solve(S, H @ s.P)  # Kt = S^-1 H P = K^T
    except np.linalg.LinAlgError as exc:
        raise EstimatorError("innovation covariance is singular") from exc
    if not np.all(np.isfinite(Kt)):
        raise EstimatorError("non-finite Kalman gain")
    K_gain = Kt.T
    x = s.x + K_gain @ (y - H @ s.x)
    A = np.eye(5) - K_gain @ H
    P = A @ s.P @ A.T + K_gain @ cfg.R @ K_gain.T
    return EkfState(x, _psd(P))


def measure(x_true, v_0: float, noise) -> np.ndarray:
    return np.array([x_true[0] + noise[0], x_true[1] + noise[1], v_0 + noise[2]])
