"""Closed-loop trajectory records and their CSV + JSON sidecar persistence."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import _kernels as K
from .kite import KiteParams, heights

COLUMNS = ("k", "theta", "phi", "psi", "theta_hat", "phi_hat", "psi_hat", "E0_hat", "v0_hat",
           "wind_speed", "height", "input", "applied", "thrust", "solver_ok")
FORMAT_VERSION = 1


@dataclass
class TrajectoryRecord:
    """Full trace of one closed-loop run.

    Arrays indexed by control step: ``states``, ``estimates``, ``wind_speed``
    and ``height`` have ``n_sim + 1`` rows; ``inputs``, ``applied``,
    ``thrust`` and ``solver_ok`` have ``n_sim``. After a domain fault the
    remaining rows are NaN and ``fault`` names the cause.
    """

    states: np.ndarray
    estimates: np.ndarray
    inputs: np.ndarray
    applied: np.ndarray
    wind_speed: np.ndarray
    thrust: np.ndarray
    height: np.ndarray
    solver_ok: np.ndarray
    scenario_id: int = 0
    controller_id: str = ""
    E_0: float = float("nan")
    u_prev0: float = 0.0
    fault: str | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        n = len(self.inputs)
        for name in ("states", "estimates", "wind_speed", "height"):
            if len(getattr(self, name)) != n + 1:
                raise ValueError(f"{name} must have n_sim + 1 = {n + 1} rows")
        for name in ("applied", "thrust", "solver_ok"):
            if len(getattr(self, name)) != n:
                raise ValueError(f"{name} must have n_sim = {n} rows")

    @property
    def n_sim(self) -> int:
        return len(self.inputs)

    @property
    def faulted(self) -> bool:
        return self.fault is not None


def _fmt(x) -> str:
    x = float(x)
    if math.isnan(x):
        return "nan"
    return repr(x)


def save(traj: TrajectoryRecord, path) -> None:
    """Write ``path`` (CSV) and ``path`` with ``.json`` suffix (metadata)."""
    path = Path(path)
    n = traj.n_sim
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(COLUMNS)
        for k in range(n + 1):
            last = k == n
            row = [str(k)]
            row += [_fmt(v) for v in traj.states[k]]
            row += [_fmt(v) for v in traj.estimates[k]]
            row += [_fmt(traj.wind_speed[k]), _fmt(traj.height[k])]
            if last:
                row += ["nan", "nan", "nan", "nan"]
            else:
                row += [_fmt(traj.inputs[k]), _fmt(traj.applied[k]), _fmt(traj.thrust[k]),
                        str(int(bool(traj.solver_ok[k])))]
            w.writerow(row)
    meta = {
        "format_version": FORMAT_VERSION,
        "scenario_id": traj.scenario_id,
        "controller_id": traj.controller_id,
        "E_0": traj.E_0,
        "u_prev0": traj.u_prev0,
        "fault": traj.fault,
        "n_sim": n,
        **traj.meta,
    }
    path.with_suffix(".json").write_text(json.dumps(meta, indent=1, sort_keys=True))


def load(path, check: bool = True) -> TrajectoryRecord:
    path = Path(path)
    meta = json.loads(path.with_suffix(".json").read_text())
    with path.open() as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    if tuple(header) != COLUMNS:
        raise ValueError(f"unexpected trajectory columns in {path}")
    data = np.array([[float(v) for v in r] for r in body])
    n = len(body) - 1
    known = {"format_version", "scenario_id", "controller_id", "E_0", "u_prev0", "fault", "n_sim"}
    traj = TrajectoryRecord(
        states=data[:, 1:4],
        estimates=data[:, 4:9],
        inputs=data[:n, 11],
        applied=data[:n, 12],
        wind_speed=data[:, 9],
        thrust=data[:n, 13],
        height=data[:, 10],
        solver_ok=data[:n, 14].astype(bool),
        scenario_id=int(meta["scenario_id"]),
        controller_id=str(meta["controller_id"]),
        E_0=float(meta["E_0"]),
        u_prev0=float(meta["u_prev0"]),
        fault=meta["fault"],
        meta={k: v for k, v in meta.items() if k not in known},
    )
    if check and "kite" in traj.meta:
        verify_cache(traj, KiteParams(**traj.meta["kite"]))
    return traj


def verify_cache(traj: TrajectoryRecord, p: KiteParams, rtol: float = 1e-9) -> None:
    """Check that stored heights and thrusts agree with the stored states."""
    ok = np.isfinite(traj.height)
    h = heights(traj.states[ok], p.L_T)
    if not np.allclose(h, traj.height[ok], rtol=rtol, atol=1e-9):
        raise ValueError("stored heights disagree with stored states")
    for k in range(traj.n_sim):
        if not np.isfinite(traj.thrust[k]):
            continue
        th, ph = traj.states[k, 0], traj.states[k, 1]
        T = K.thrust(th, ph, traj.applied[k], traj.E_0, traj.wind_speed[k], p.A, p.rho, p.beta, p.c_tilde)
        if not math.isclose(T, traj.thrust[k], rel_tol=rtol, abs_tol=1e-6):
            raise ValueError(f"stored thrust at step {k} disagrees with stored state")
