"""I.i.d. uncertainty scenarios with counter-based, order-independent randomness.

Every scenario is a pure function of ``(master_seed, index)``. Separate streams
per tag keep the noise sequences identical across distribution families, so
swapping the parameter distribution changes nothing but the parameters.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

VARIABLES = ("theta0", "phi0", "psi0", "E_0", "v_m")
FAMILIES = ("uniform", "normal", "beta", "pareto")

# (a, b) per variable; angles in degrees. uniform: (low, high); normal:
# (mean, std); beta: (scale, offset) of beta(2, 5); pareto: (tail index, offset).
FAMILY_DEFAULTS = {
    "uniform": {"theta0": (28.0, 30.0), "phi0": (-10.0, 10.0), "psi0": (-2.0, 2.0),
                "E_0": (4.0, 6.0), "v_m": (7.0, 9.0)},
    "normal": {"theta0": (29.0, 0.35), "phi0": (0.0, 3.5), "psi0": (0.0, 0.7),
               "E_0": (5.0, 0.35), "v_m": (8.0, 0.35)},
    "beta": {"theta0": (2.0, 28.0), "phi0": (20.0, -10.0), "psi0": (4.0, -2.0),
             "E_0": (2.0, 4.0), "v_m": (2.0, 7.0)},
    "pareto": {"theta0": (5.0, 28.0), "phi0": (5.0, -10.0), "psi0": (5.0, 2.0),
               "E_0": (5.0, 4.5), "v_m": (5.0, 7.5)},
}
BETA_SHAPE = (2.0, 5.0)
ANGLE_VARS = ("theta0", "phi0", "psi0")

# noise levels shared by all families (standard deviations)
P_V0_STD = 0.25
W_TB_STD = 0.25
MEAS_STD = (0.01, 0.01, 0.05)
INIT_DELTA_STD = 0.05

_STREAM_PARAMS, _STREAM_TURB, _STREAM_MEAS, _STREAM_INIT = range(4)


@dataclass(frozen=True)
class DistributionSpec:
    family: str = "uniform"
    params: dict = field(default_factory=lambda: dict(FAMILY_DEFAULTS["uniform"]))

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown family {self.family!r}; expected one of {FAMILIES}")
        missing = set(VARIABLES) - set(self.params)
        if missing:
            raise ValueError(f"missing parameters for {sorted(missing)}")
        for name in VARIABLES:
            a, b = self.params[name]
            if self.family == "uniform" and not a < b:
                raise ValueError(f"uniform bounds for {name} need a < b")
            if self.family == "normal" and not b > 0:
                raise ValueError(f"normal std for {name} must be positive")
            if self.family == "beta" and not a > 0:
                raise ValueError(f"beta scaling for {name} must be positive")
            if self.family == "pareto" and not a > 0:
                raise ValueError(f"pareto tail index for {name} must be positive")
        object.__setattr__(self, "params", {k: (float(v[0]), float(v[1])) for k, v in self.params.items()})

    @classmethod
    def defaults(cls, family: str) -> "DistributionSpec":
        return cls(family, dict(FAMILY_DEFAULTS[family]))

    def support(self, name: str) -> tuple[float, float]:
        a, b = self.params[name]
        if self.family == "uniform":
            return a, b
        if self.family == "beta":
            return b, b + a
        if self.family == "pareto":
            return b + 1.0, math.inf
        return -math.inf, math.inf

    def draw(self, name: str, rng: np.random.Generator, size=None):
        a, b = self.params[name]
        if self.family == "uniform":
            return rng.uniform(a, b, size)
        if self.family == "normal":
            return rng.normal(a, b, size)
        if self.family == "beta":
            return a * rng.beta(*BETA_SHAPE, size) + b
        # numpy's pareto is Lomax; +1 gives Pareto type I with unit scale
        return rng.pareto(a, size) + 1.0 + b

    def to_dict(self) -> dict:
        return {"family": self.family, "params": {k: list(v) for k, v in self.params.items()}}

    @classmethod
    def from_dict(cls, d: dict) -> "DistributionSpec":
        return cls(d["family"], {k: tuple(v) for k, v in d["params"].items()})


@dataclass
class Scenario:
    id: int
    x0: np.ndarray
    E_0: float
    v_m: float
    p_v0: float
    w_tb_seq: np.ndarray
    meas_noise_seq: np.ndarray
    init_deltas: np.ndarray
    seed: int
    u_prev0: float = 0.0

    def to_dict(self) -> dict:
        return {
            "id": self.id, "seed": self.seed, "x0": self.x0.tolist(), "E_0": self.E_0,
            "v_m": self.v_m, "p_v0": self.p_v0, "u_prev0": self.u_prev0,
            "w_tb_seq": self.w_tb_seq.tolist(), "meas_noise_seq": self.meas_noise_seq.tolist(),
            "init_deltas": self.init_deltas.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Scenario":
        return cls(
            id=int(d["id"]), x0=np.array(d["x0"]), E_0=float(d["E_0"]), v_m=float(d["v_m"]),
            p_v0=float(d["p_v0"]), w_tb_seq=np.array(d["w_tb_seq"]),
            meas_noise_seq=np.array(d["meas_noise_seq"]).reshape(-1, 3),
            init_deltas=np.array(d["init_deltas"]), seed=int(d["seed"]),
            u_prev0=float(d.get("u_prev0", 0.0)),
        )


def _stream(master_seed: int, index: int, tag: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(entropy=master_seed, spawn_key=(index, tag)))


def sample_scenario(spec: DistributionSpec, n_sim: int, ekf_per_control: int,
                    master_seed: int, index: int) -> Scenario:
    """Scenario ``index`` of the stream keyed by ``master_seed``.

    ``n_sim`` control periods need ``n_sim`` turbulence samples and
    ``n_sim * ekf_per_control + 1`` measurement-noise triples.
    """
    rng = _stream(master_seed, index, _STREAM_PARAMS)
    draws = {name: float(spec.draw(name, rng)) for name in VARIABLES}
    x0 = np.radians([draws["theta0"], draws["phi0"], draws["psi0"]])

    turb = _stream(master_seed, index, _STREAM_TURB)
    p_v0 = float(turb.normal(0.0, P_V0_STD))
    w_tb = turb.normal(0.0, W_TB_STD, n_sim)

    meas = _stream(master_seed, index, _STREAM_MEAS)
    noise = meas.normal(0.0, 1.0, (n_sim * ekf_per_control + 1, 3)) * np.asarray(MEAS_STD)

    init = _stream(master_seed, index, _STREAM_INIT)
    deltas = init.normal(1.0, INIT_DELTA_STD, 5)

    seed = int(np.random.SeedSequence(entropy=master_seed, spawn_key=(index,)).generate_state(1, np.uint64)[0])
    return Scenario(id=index, x0=x0, E_0=draws["E_0"], v_m=draws["v_m"], p_v0=p_v0,
                    w_tb_seq=w_tb, meas_noise_seq=noise, init_deltas=deltas, seed=seed)


def scenario_batch(spec: DistributionSpec, n_sim: int, ekf_per_control: int,
                   master_seed: int, n: int) -> list[Scenario]:
    if n < 1:
        raise ValueError("batch size must be at least 1")
    return [sample_scenario(spec, n_sim, ekf_per_control, master_seed, i) for i in range(n)]


def batch_hash(scenarios) -> str:
    h = hashlib.sha256()
    for sc in scenarios:
        h.update(np.asarray([sc.id, sc.E_0, sc.v_m, sc.p_v0, sc.u_prev0], dtype=float).tobytes())
        for arr in (sc.x0, sc.w_tb_seq, sc.meas_noise_seq, sc.init_deltas):
            h.update(np.ascontiguousarray(arr, dtype=float).tobytes())
    return h.hexdigest()


def save_batch(scenarios, path) -> None:
    Path(path).write_text(json.dumps([sc.to_dict() for sc in scenarios]))


def load_batch(path) -> list[Scenario]:
    return [Scenario.from_dict(d) for d in json.loads(Path(path).read_text())]
