"""Closed-loop driver: plant, estimator and controller on their own clocks."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Protocol

import numpy as np

from . import _kernels as K
from .ekf import EkfConfig, EkfState, EstimatorError, ekf_predict, ekf_update, init_estimate, measure
from .kite import DomainFault, KiteParams, WindParams, plant_step
from .scenarios import Scenario
from .trajectory import TrajectoryRecord


def _is_multiple(a: float, b: float) -> bool:
    q = a / b
    return abs(q - round(q)) < 1e-9 and round(q) >= 1


@dataclass(frozen=True)
class SimConfig:
    t_c: float = 0.15
    t_ekf: float = 0.05
    n_sim: int = 400
    substep: float = 0.05
    input_delay: float = 0.0

    def __post_init__(self):
        if not (self.t_c > 0 and self.t_ekf > 0 and self.substep > 0):
            raise ValueError("sampling periods must be positive")
        if not _is_multiple(self.t_c, self.t_ekf):
            raise ValueError("t_c must be an integer multiple of t_ekf")
        if not _is_multiple(self.t_c, self.substep):
            raise ValueError("t_c must be an integer multiple of the integrator substep")
        if self.n_sim < 1:
            raise ValueError("n_sim must be at least 1")
        if not 0.0 <= self.input_delay < self.t_c:
            raise ValueError("input_delay must lie in [0, t_c)")

    @property
    def ekf_per_control(self) -> int:
        return int(round(self.t_c / self.t_ekf))


class Controller(Protocol):
    """``u = controller(x_hat, u_prev)``; ``last_ok`` reports the solver status."""

    last_ok: bool

    def __call__(self, x_hat: np.ndarray, u_prev: float) -> float: ...

    def reset(self) -> None: ...


class ConstantInput:
    def __init__(self, u: float = 0.0):
        self.u = float(u)
        self.last_ok = True

    def __call__(self, x_hat, u_prev):
        return self.u

    def reset(self):
        pass


class EkfEstimator:
    """Output feedback through the extended Kalman filter."""

    def __init__(self, cfg: EkfConfig | None = None, p: KiteParams | None = None):
        self.cfg = cfg or EkfConfig()
        self.p = p or KiteParams()
        self.state: EkfState | None = None

    def reset(self, scenario: Scenario, v_0: float) -> None:
        self.state = init_estimate(scenario.x0, scenario.E_0, v_0, scenario.init_deltas, self.cfg)

    def predict(self, u: float, dt: float) -> None:
        self.state = ekf_predict(self.state, u, self.cfg, self.p, dt)

    def update(self, y: np.ndarray, truth: np.ndarray) -> None:
        self.state = ekf_update(self.state, y, self.cfg)

    @property
    def estimate(self) -> np.ndarray:
        return self.state.x


class PerfectEstimator:
    """State feedback: reports the true augmented state."""

    def __init__(self):
        self._x = np.full(5, np.nan)

    def reset(self, scenario: Scenario, v_0: float) -> None:
        self._x = np.array([*scenario.x0, scenario.E_0, v_0], dtype=float)

    def predict(self, u: float, dt: float) -> None:
        pass

    def update(self, y: np.ndarray, truth: np.ndarray) -> None:
        self._x = np.array(truth, dtype=float)

    @property
    def estimate(self) -> np.ndarray:
        return self._x


def _segments(cfg: SimConfig) -> list[tuple[float, bool, bool]]:
    """Breakpoints inside one control period as ``(t_end, measure, switch_input)``."""
    n_sub = int(round(cfg.t_c / cfg.substep))
    n_ekf = cfg.ekf_per_control
    points = {round(i * cfg.substep, 12) for i in range(1, n_sub + 1)}
    points |= {round(i * cfg.t_ekf, 12) for i in range(1, n_ekf + 1)}
    delay = round(cfg.input_delay, 12)
    if delay > 0:
        points.add(delay)
    ekf_pts = {round(i * cfg.t_ekf, 12) for i in range(1, n_ekf)}
    return [(t, t in ekf_pts, delay > 0 and t == delay) for t in sorted(points)]


def simulate_closed_loop(scenario: Scenario, controller, estimator, cfg: SimConfig = SimConfig(),
                         p: KiteParams = KiteParams(), wind: WindParams | None = None,
                         controller_id: str = "") -> TrajectoryRecord:
    """Run one scenario for ``cfg.n_sim`` control periods.

    The input computed at ``t_k`` takes effect at ``t_k + input_delay``; the
    previous input is held until then. Domain faults end the run early and
    leave NaN rows plus a ``fault`` message in the record.
    """
    n = cfg.n_sim
    m = cfg.ekf_per_control
    if len(scenario.w_tb_seq) < n or len(scenario.meas_noise_seq) < n * m + 1:
        raise ValueError("scenario noise sequences are too short for this configuration")
    base = wind or WindParams()
    wp = WindParams(base.k_sigma_v, base.L_v, base.T_v, scenario.v_m)
    E_0 = scenario.E_0

    states = np.full((n + 1, 3), np.nan)
    est = np.full((n + 1, 5), np.nan)
    inputs = np.full(n, np.nan)
    applied = np.full(n, np.nan)
    speed = np.full(n + 1, np.nan)
    thrust = np.full(n, np.nan)
    solver_ok = np.zeros(n, dtype=bool)

    xp = np.array([*scenario.x0, scenario.p_v0], dtype=float)
    v0 = wp.speed(xp[3])
    states[0], speed[0] = xp[:3], v0
    segs = _segments(cfg)
    controller.reset()
    u_prev = scenario.u_prev0
    u_held = scenario.u_prev0
    j = 0
    fault = None
    try:
        estimator.reset(scenario, v0)
        for k in range(n):
            truth = np.array([xp[0], xp[1], xp[2], E_0, v0])
            estimator.update(measure(xp, v0, scenario.meas_noise_seq[j]), truth)
            j += 1
            est[k] = estimator.estimate
            u = float(controller(est[k][:3].copy(), u_prev))
            if not math.isfinite(u):
                raise DomainFault(f"controller returned {u!r}")
            inputs[k] = u
            solver_ok[k] = bool(getattr(controller, "last_ok", True))
            cur = u if cfg.input_delay == 0.0 else u_held
            applied[k] = cur
            thrust[k] = K.thrust(xp[0], xp[1], cur, E_0, v0, p.A, p.rho, p.beta, p.c_tilde)
            w = float(scenario.w_tb_seq[k])
            t = 0.0
            for t_end, do_measure, switch in segs:
                dt = t_end - t
                xp = plant_step(xp, cur, E_0, wp, w, dt, p)
                estimator.predict(cur, dt)
                v0 = wp.speed(xp[3])
                t = t_end
                if switch:
                    cur = u
                if do_measure:
                    truth = np.array([xp[0], xp[1], xp[2], E_0, v0])
                    estimator.update(measure(xp, v0, scenario.meas_noise_seq[j]), truth)
                    j += 1
            u_held = u
            u_prev = u
            states[k + 1], speed[k + 1] = xp[:3], v0
        truth = np.array([xp[0], xp[1], xp[2], E_0, v0])
        estimator.update(measure(xp, v0, scenario.meas_noise_seq[j]), truth)
        est[n] = estimator.estimate
    except (DomainFault, EstimatorError, np.linalg.LinAlgError) as exc:
        fault = f"{type(exc).__name__}: {exc}"

    h = p.L_T * np.sin(states[:, 0]) * np.cos(states[:, 1])
    return TrajectoryRecord(
        states=states, estimates=est, inputs=inputs, applied=applied, wind_speed=speed,
        thrust=thrust, height=h, solver_ok=solver_ok, scenario_id=scenario.id,
        controller_id=controller_id, E_0=E_0, u_prev0=scenario.u_prev0, fault=fault,
        meta={"kite": asdict(p), "sim": asdict(cfg), "scenario_seed": scenario.seed},
    )
