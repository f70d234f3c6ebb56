"""On-policy data aggregation for imitating the MPC with a network.

Networks fitted only to MPC closed loops drift into states the MPC never
visits; small input errors near the height bound compound until the kite
crashes. Aggregation rolls out the current network, labels every visited
``(state, u_prev)`` with the MPC and refits on the union.
"""
from __future__ import annotations

import dataclasses
from dataclasses import asdict

import numpy as np

from .kite import KiteParams
from .mlp import Architecture, TrainConfig, TrainedModel, fit_policy, kappa_dnn
from .mpc import Dataset, MultiStageMPC, OcpConfig, ScenarioTree, build_tree
from .scenarios import DistributionSpec, sample_scenario
from .simulate import PerfectEstimator, SimConfig, simulate_closed_loop


class ShadowLabeler:
    """Applies the network (or, with probability ``beta``, the MPC) and records MPC labels.

    The MPC keeps its own warm start along the visited states, so labels come
    from the same solver path a closed-loop MPC would take.
    """

    def __init__(self, model: TrainedModel, mpc: MultiStageMPC, beta: float, rng: np.random.Generator):
        self.model, self.mpc, self.beta, self.rng = model, mpc, beta, rng
        self.X: list[list[float]] = []
        self.y: list[float] = []
        self.last_ok = True

    def reset(self) -> None:
        self.mpc.reset()

    def __call__(self, x_hat, u_prev: float) -> float:
        u_mpc = self.mpc(x_hat, u_prev)
        self.last_ok = self.mpc.last_ok
        if self.mpc.last_ok:
            self.X.append([x_hat[0], x_hat[1], x_hat[2], u_prev])
            self.y.append(u_mpc)
        if self.rng.random() < self.beta:
            return u_mpc
        return kappa_dnn(self.model, x_hat, u_prev, self.mpc.cfg.u_min, self.mpc.cfg.u_max)


def on_policy_pairs(model: TrainedModel, n_traj: int, eta: float, seed: int, first_index: int = 0, *,
                    beta: float = 0.0, tree: ScenarioTree | None = None, ocp: OcpConfig | None = None,
                    p: KiteParams = KiteParams(), sim: SimConfig | None = None,
                    family: DistributionSpec | None = None) -> Dataset:
    """MPC-labelled pairs along state-feedback rollouts of ``model``."""
    tree = tree or build_tree()
    ocp = dataclasses.replace(ocp or OcpConfig(), eta=eta)
    sim = sim or SimConfig()
    family = family or DistributionSpec.defaults("uniform")
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(0xDA66, first_index)))
    X, y = [], []
    for j in range(n_traj):
        sc = sample_scenario(family, sim.n_sim, sim.ekf_per_control, seed, first_index + j)
        lab = ShadowLabeler(model, MultiStageMPC(tree, ocp, p), beta, rng)
        simulate_closed_loop(sc, lab, PerfectEstimator(), sim, p)
        X += lab.X
        y += lab.y
    meta = {"kind": "on_policy", "eta": eta, "seed": seed, "first_index": first_index, "n_trajectories": n_traj,
            "beta": beta, "ocp": asdict(ocp), "tree": asdict(tree), "sim": asdict(sim), "family": family.to_dict()}
    return Dataset(np.array(X).reshape(-1, 4), np.array(y), meta)


def aggregate_and_fit(base: Dataset, rounds: int, n_traj: int, seed: int, *, arch: Architecture | None = None,
                      train_cfg: TrainConfig = TrainConfig(), beta0: float = 0.5, first_index: int | None = None,
                      progress=None, **kw):
    """Fit on ``base``, then ``rounds`` times add on-policy MPC labels and refit.

    The MPC share of applied inputs starts at ``beta0`` and halves each
    round. Scenario indices start at ``first_index``, by default just above
    those used for ``base``.
    Returns the final model and the aggregated dataset.
    """
    eta = float(base.meta.get("eta", 0.0))
    start = int(base.meta.get("n_trajectories", 0)) if first_index is None else first_index
    data = base
    model = fit_policy(data.X, data.y, arch, train_cfg)
    for r in range(rounds):
        new = on_policy_pairs(model, n_traj, eta, seed, start + r * n_traj, beta=beta0 * 0.5 ** r, **kw)
        data = Dataset(np.vstack([data.X, new.X]), np.concatenate([data.y, new.y]),
                       {**base.meta, "aggregation_rounds": r + 1, "aggregation_traj_per_round": n_traj,
                        "aggregation_seed": seed, "aggregation_beta0": beta0})
        model = fit_policy(data.X, data.y, arch, train_cfg)
        if progress:
            progress(r + 1, rounds)
    return model, data
