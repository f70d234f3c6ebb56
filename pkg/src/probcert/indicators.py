"""Finite-time closed-loop performance indicators.

Each indicator maps one :class:`TrajectoryRecord` to a scalar where larger is
worse. The kite has a single state constraint ``g = h_min - h(x) <= 0``.
A faulted run scores ``+inf`` on every indicator.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .trajectory import TrajectoryRecord

KINDS = ("max_violation", "avg_violation", "avg_cost", "height_margin", "neg_avg_thrust",
         "binary_admissible")


@dataclass(frozen=True)
class StageCost:
    """``l(x, u) = -w_F * T_F + w_u * (u - u_prev)^2``."""

    w_F: float = 1e-4
    w_u: float = 0.5

    def __call__(self, thrust, u, u_prev):
        return -self.w_F * np.asarray(thrust) + self.w_u * (np.asarray(u) - np.asarray(u_prev)) ** 2


@dataclass(frozen=True)
class IndicatorSpec:
    kind: str = "height_margin"
    h_min: float = 100.0
    stage_cost: StageCost = StageCost()

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown indicator kind {self.kind!r}; expected one of {KINDS}")


def _violations(traj: TrajectoryRecord, h_min: float, last: int) -> np.ndarray:
    return h_min - traj.height[:last]


def max_violation(traj: TrajectoryRecord, constraints: IndicatorSpec = IndicatorSpec()) -> float:
    """Largest constraint value over steps ``0 .. n_sim - 1``."""
    if traj.faulted:
        return math.inf
    return float(np.max(_violations(traj, constraints.h_min, traj.n_sim)))


def avg_violation(traj: TrajectoryRecord, constraints: IndicatorSpec = IndicatorSpec()) -> float:
    """Mean positive part of the constraint over steps ``0 .. n_sim - 1``."""
    if traj.faulted:
        return math.inf
    g = _violations(traj, constraints.h_min, traj.n_sim)
    return float(np.sum(np.maximum(g, 0.0)) / traj.n_sim)


def avg_cost(traj: TrajectoryRecord, stage_cost: StageCost = StageCost()) -> float:
    """Mean stage cost on the true state and the controller's inputs."""
    if traj.faulted:
        return math.inf
    u_prev = np.concatenate([[traj.u_prev0], traj.inputs[:-1]])
    return float(np.mean(stage_cost(traj.thrust, traj.inputs, u_prev)))


def height_margin_indicator(traj: TrajectoryRecord, h_min: float = 100.0) -> float:
    """``max_k (h_min - h(x(k)))`` over ``k = 0 .. n_sim`` inclusive."""
    if traj.faulted:
        return math.inf
    return float(np.max(h_min - traj.height))


def neg_avg_thrust(traj: TrajectoryRecord) -> float:
    if traj.faulted:
        return math.inf
    return float(-np.mean(traj.thrust))


def binary_admissible(traj: TrajectoryRecord, constraints: IndicatorSpec = IndicatorSpec()) -> int:
    """0 if the run never violates the constraint, 1 otherwise."""
    return 0 if avg_violation(traj, constraints) == 0.0 else 1


def evaluate(traj: TrajectoryRecord, spec: IndicatorSpec) -> float:
    if spec.kind == "max_violation":
        return max_violation(traj, spec)
    if spec.kind == "avg_violation":
        return avg_violation(traj, spec)
    if spec.kind == "avg_cost":
        return avg_cost(traj, spec.stage_cost)
    if spec.kind == "height_margin":
        return height_margin_indicator(traj, spec.h_min)
    if spec.kind == "neg_avg_thrust":
        return neg_avg_thrust(traj)
    return float(binary_admissible(traj, spec))
