"""Three-state towing-kite model, turbulent wind model and plant outputs."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _kernels as K

U_MAX = 10.0


class DomainFault(ArithmeticError):
    """The kite state left the region where the model is defined."""


@dataclass(frozen=True)
class KiteParams:
    """Kite model constants.

    ``L_T`` and ``A`` are configuration: the tether length and kite area are
    not part of the published parameter table, so 400 m / 300 m^2 are only
    defaults.
    """

    c_tilde: float = 0.028
    beta: float = 0.0
    rho: float = 1.0
    h_min: float = 100.0
    L_T: float = 400.0
    A: float = 300.0
    u_max: float = U_MAX
    sin_tol: float = 1e-6

    def __post_init__(self):
        for name in ("c_tilde", "rho", "h_min", "L_T", "A", "u_max"):
            if not getattr(self, name) > 0:
                raise ValueError(f"KiteParams.{name} must be positive")
        if self.L_T <= self.h_min:
            raise ValueError("tether length must exceed h_min for the height bound to be reachable")


@dataclass(frozen=True)
class WindParams:
    k_sigma_v: float = 0.14
    L_v: float = 100.0
    T_v: float = 0.15
    v_m: float = 8.0

    def __post_init__(self):
        for name in ("k_sigma_v", "L_v", "T_v", "v_m"):
            if not getattr(self, name) > 0:
                raise ValueError(f"WindParams.{name} must be positive")

    @property
    def sigma_v(self) -> float:
        return self.k_sigma_v * self.v_m

    @property
    def v_bias(self) -> float:
        return -self.sigma_v / (2.0 * self.v_m)

    @property
    def tau_F(self) -> float:
        return self.L_v / self.v_m

    @property
    def K_F(self) -> float:
        return math.sqrt(1.49 * self.tau_F / self.T_v)

    @property
    def c_v(self) -> float:
        return self.K_F / self.tau_F

    def speed(self, p_v: float) -> float:
        """Wind speed for turbulence state ``p_v``."""
        return self.v_m + self.v_bias + self.sigma_v * self.c_v * p_v


@dataclass
class WindState:
    p_v: float = 0.0
    w_tb: float = 0.0


def glide_ratio(E_0: float, u: float, c_tilde: float = 0.028) -> float:
    """Glide ratio degraded by the steering deflection."""
    return E_0 - c_tilde * u * u


def kite_rhs(x, u: float, v_0: float, E_0: float, p: KiteParams) -> np.ndarray:
    """Angle rates ``(theta_dot, phi_dot, psi_dot)`` for state ``x``.

    Raises :class:`DomainFault` when ``sin(theta)`` or the glide ratio is not
    positive.
    """
    th, ph, ps = (float(v) for v in x)
    _check_domain(th, E_0, u, p)
    return np.array(K.rhs(th, ph, ps, float(u), float(E_0), float(v_0), p.L_T, p.c_tilde))


def _check_domain(theta: float, E_0: float, u: float, p: KiteParams) -> None:
    if not math.sin(theta) > p.sin_tol:
        raise DomainFault(f"sin(theta) <= {p.sin_tol} at theta={theta!r}")
    if not glide_ratio(E_0, u, p.c_tilde) > 0:
        raise DomainFault(f"non-positive glide ratio for E_0={E_0!r}, u={u!r}")


def thrust(x, v_0: float, u: float, E_0: float, p: KiteParams) -> float:
    """Tether thrust in newtons."""
    th, ph = float(x[0]), float(x[1])
    return K.thrust(th, ph, float(u), float(E_0), float(v_0), p.A, p.rho, p.beta, p.c_tilde)


def height(x, p: KiteParams) -> float:
    return p.L_T * math.sin(x[0]) * math.cos(x[1])


def heights(states: np.ndarray, L_T: float) -> np.ndarray:
    states = np.asarray(states)
    return L_T * np.sin(states[..., 0]) * np.cos(states[..., 1])


def wind_step(ws: WindState, wp: WindParams, dt: float, noise: float) -> tuple[WindState, float]:
    """Advance the turbulence state by ``dt`` with the white noise held at ``noise``.

    Returns the new state and the wind speed at the end of the step.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    a = -1.0 / wp.tau_F
    p = ws.p_v
    # RK4 on p' = a p + w, the same scheme the plant integrator uses
    k1 = a * p + noise
    k2 = a * (p + 0.5 * dt * k1) + noise
    k3 = a * (p + 0.5 * dt * k2) + noise
    k4 = a * (p + dt * k3) + noise
    p_new = p + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
    return WindState(p_v=p_new, w_tb=noise), wp.speed(p_new)


def rk4_step(x, u: float, v_0: float, E_0: float, dt: float, p: KiteParams) -> np.ndarray:
    """One RK4 step of the angle dynamics with frozen wind speed."""
    _check_domain(float(x[0]), E_0, u, p)
    return np.array(K.rk4_angles(float(x[0]), float(x[1]), float(x[2]), float(u), float(E_0),
                                 float(v_0), float(dt), p.L_T, p.c_tilde))


def plant_step(xp: np.ndarray, u: float, E_0: float, wp: WindParams, w_tb: float, dt: float,
               p: KiteParams) -> np.ndarray:
    """One RK4 step of the coupled kite + turbulence state ``[theta, phi, psi, p_v]``."""
    _check_domain(float(xp[0]), E_0, u, p)
    out = K.rk4_plant(xp, float(u), float(E_0), wp.v_m, wp.v_bias, wp.sigma_v * wp.c_v,
                      1.0 / wp.tau_F, float(w_tb), float(dt), p.L_T, p.c_tilde)
    if not np.all(np.isfinite(out)):
        raise DomainFault("non-finite state after integration step")
    return out
