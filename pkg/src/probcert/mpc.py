"""Multi-stage (scenario-tree) nonlinear MPC with height-constraint backoff.

Each branch of the tree carries one ``(E_0, v_0)`` realization. The first
input is shared by all branches (non-anticipativity); the robust horizon is
one, so later inputs are free per branch. The height constraint
``h >= h_min + eta`` is a quadratic soft penalty and the input bounds are
hard box constraints handled by L-BFGS-B.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from itertools import product
from pathlib import Path

import numpy as np
from scipy.optimize import minimize

from . import _kernels as K
from .kite import KiteParams, heights
from .scenarios import DistributionSpec, sample_scenario
from .simulate import PerfectEstimator, SimConfig, simulate_closed_loop

STATUSES = ("converged", "max_iter", "fault")


@dataclass(frozen=True)
class ScenarioTree:
    E_0: tuple[float, ...]
    v_0: tuple[float, ...]
    n_p: int = 40
    robust_horizon: int = 1

    def __post_init__(self):
        if len(self.E_0) != len(self.v_0) or not self.E_0:
            raise ValueError("tree needs one (E_0, v_0) pair per branch")
        if self.n_p < 2:
            raise ValueError("prediction horizon must be at least 2")
        if self.robust_horizon != 1:
            raise ValueError("only robust horizon 1 is supported")

    @property
    def n_branches(self) -> int:
        return len(self.E_0)

    @property
    def n_decisions(self) -> int:
        return 1 + self.n_branches * (self.n_p - 1)

    def nodes_per_stage(self) -> list[int]:
        return [1] + [self.n_branches] * self.n_p


def build_tree(E_0_values=(4.0, 6.0), v_0_values=(6.0, 10.0), n_p: int = 40) -> ScenarioTree:
    """Tree over all combinations of the extreme parameter values."""
    pairs = list(product(E_0_values, v_0_values))
    return ScenarioTree(tuple(float(e) for e, _ in pairs), tuple(float(v) for _, v in pairs), n_p)


@dataclass(frozen=True)
class OcpConfig:
    """Optimal control problem settings.

    ``terminal_weight`` scales a terminal reward of that many stages of
    thrust at the leaf states; 0 disables the terminal cost.
    """

    eta: float = 0.0
    w_F: float = 1e-4
    w_u: float = 0.5
    t_c: float = 0.15
    penalty_weight: float = 1e3
    terminal_weight: float = 40.0
    u_min: float = -10.0
    u_max: float = 10.0
    gtol: float = 1e-6
    max_iter: int = 500
    max_restarts: int = 0
    rescue_steps: int = 10
    restart_margin: float = 0.5
    restart_inputs: tuple[float, ...] = (-10.0, 0.0, 10.0)

    def __post_init__(self):
        if self.eta < 0:
            raise ValueError("backoff eta must be non-negative")
        if self.w_F < 0 or self.w_u <= 0 or self.penalty_weight <= 0 or self.t_c <= 0:
            raise ValueError("OCP weights and t_c must be positive (w_F may be zero)")
        if self.terminal_weight < 0:
            raise ValueError("terminal_weight must be non-negative")
        if not self.u_min < self.u_max:
            raise ValueError("input bounds must satisfy u_min < u_max")
        if self.gtol <= 0 or self.restart_margin <= 0 or self.max_iter < 1 or self.max_restarts < 0 or self.rescue_steps < 0:
            raise ValueError("solver tolerances must be positive")


@dataclass
class NlpSolution:
    u0: float
    branch_inputs: np.ndarray  # (s, n_p)
    states: np.ndarray  # (s, n_p + 1, 3)
    objective: float
    kkt_residual: float
    status: str
    n_iter: int = 0
    z: np.ndarray = field(default=None, repr=False)

    @property
    def ok(self) -> bool:
        return self.status != "fault"

    def min_predicted_height(self, L_T: float) -> float:
        return float(np.min(heights(self.states[:, 1:], L_T)))


def _branch_inputs(z: np.ndarray, s: int, n_p: int) -> np.ndarray:
    U = np.empty((s, n_p))
    U[:, 0] = z[0]
    U[:, 1:] = z[1:].reshape(s, n_p - 1)
    return U


def _args(x0, u_prev, tree: ScenarioTree, cfg: OcpConfig, p: KiteParams):
    return (np.ascontiguousarray(x0, dtype=float), float(u_prev), np.array(tree.E_0), np.array(tree.v_0),
            tree.n_p, cfg.t_c, p.L_T, p.c_tilde, p.A, p.rho, p.beta, cfg.w_F, cfg.w_u,
            p.h_min + cfg.eta, cfg.penalty_weight, cfg.terminal_weight)


def objective(z, x0, u_prev, tree: ScenarioTree, cfg: OcpConfig, p: KiteParams = KiteParams()):
    """Penalized objective and gradient at decision vector ``z``."""
    return K.ocp_objective(np.ascontiguousarray(z, dtype=float), *_args(x0, u_prev, tree, cfg, p))


def projected_gradient(z, g, lo, hi) -> np.ndarray:
    pg = np.asarray(g, dtype=float).copy()
    pg[(z <= lo) & (pg > 0)] = 0.0
    pg[(z >= hi) & (pg < 0)] = 0.0
    return pg


def stationary(kkt: float, J: float, gtol: float) -> bool:
    """Projected-gradient test, relative to the objective scale."""
    return kkt <= gtol * max(1.0, abs(J))


def _projected_descent(z, J, g, args, cfg: OcpConfig):
    """Armijo-backtracked projected-gradient steps.

    Used when the strong-Wolfe line search of L-BFGS-B aborts next to the
    steep penalty wall, where short steps still decrease the objective.
    """
    lo, hi = cfg.u_min, cfg.u_max
    for _ in range(cfg.rescue_steps):
        pg = projected_gradient(z, g, lo, hi)
        gmax = float(np.max(np.abs(pg)))
        if gmax == 0.0:
            break
        alpha = 1.0 / gmax
        for _ in range(40):
            zt = np.clip(z - alpha * pg, lo, hi)
            Jt, gt = K.ocp_objective(zt, *args)
            if Jt <= J - 1e-4 * float(pg @ (z - zt)):
                z, J, g = zt, Jt, gt
                break
            alpha *= 0.5
        else:
            break
    return z, J, g


def _lbfgsb(z0, args, n, cfg: OcpConfig):
    """L-BFGS-B, with projected-gradient rescue steps and restarts."""
    z = np.asarray(z0, dtype=float)
    nit = 0
    bounds = [(cfg.u_min, cfg.u_max)] * n
    for _ in range(cfg.max_restarts + 1):
        with np.errstate(all="ignore"):
            res = minimize(K.ocp_objective, z, args=args, jac=True, method="L-BFGS-B", bounds=bounds,
                           options={"maxiter": cfg.max_iter - nit, "gtol": cfg.gtol})
        nit += int(res.nit)
        z = np.clip(res.x, cfg.u_min, cfg.u_max)
        J, g = K.ocp_objective(z, *args)
        kkt = float(np.max(np.abs(projected_gradient(z, g, cfg.u_min, cfg.u_max))))
        if stationary(kkt, J, cfg.gtol) or nit >= cfg.max_iter or cfg.rescue_steps == 0:
            break
        z, J, g = _projected_descent(z, J, g, args, cfg)
        kkt = float(np.max(np.abs(projected_gradient(z, g, cfg.u_min, cfg.u_max))))
    return z, float(J), g, nit, stationary(kkt, J, cfg.gtol)


def solve_ocp(x0, u_prev: float, tree: ScenarioTree, cfg: OcpConfig = OcpConfig(),
              p: KiteParams = KiteParams(), z0: np.ndarray | None = None) -> NlpSolution:
    """Solve the multi-stage problem from ``x0``.

    Starts from ``z0``, or from the constant sequence ``u_prev`` when no warm
    start is given. Cold solves are always repeated from each constant in
    ``restart_inputs``; warm solves only when the predicted height dips more
    than ``restart_margin`` below the tightened bound. The lowest objective
    wins. ``kkt_residual`` is the largest projected-gradient entry;
    status is ``converged`` when it is below ``gtol * max(1, |J|)`` and
    ``max_iter`` when the iteration or rescue budget ran out first.
    """
    lo, hi = cfg.u_min, cfg.u_max
    n = tree.n_decisions
    u_clip = float(np.clip(u_prev, lo, hi))
    args = _args(x0, u_prev, tree, cfg, p)

    def fallback(n_iter=0):
        z = np.full(n, u_clip)
        return NlpSolution(u_clip, _branch_inputs(z, tree.n_branches, tree.n_p),
                           np.full((tree.n_branches, tree.n_p + 1, 3), np.nan), math.nan, math.inf,
                           "fault", n_iter, z)

    if not (np.all(np.isfinite(x0)) and math.sin(x0[0]) > p.sin_tol):
        return fallback()
    cold = np.full(n, u_clip)
    first = cold if z0 is None else np.clip(np.asarray(z0, dtype=float), lo, hi)
    best = None
    n_iter = 0
    h_bound = p.h_min + cfg.eta

    def attempt(start):
        nonlocal best, n_iter
        try:
            z, J, g, it, done = _lbfgsb(start, args, n, cfg)
        except (ValueError, FloatingPointError, ZeroDivisionError):
            return
        n_iter += it
        if math.isfinite(J) and np.all(np.isfinite(g)) and (best is None or J < best[1]):
            best = (z, J, g, done)

    def good():
        if best is None:
            return False
        X = K.ocp_states(best[0], args[0], args[2], args[3], tree.n_p, cfg.t_c, p.L_T, p.c_tilde)
        return np.min(heights(X[:, 1:], p.L_T)) >= h_bound - cfg.restart_margin

    attempt(first)
    if z0 is None or not good():
        if z0 is not None:
            attempt(cold)
        for u_c in cfg.restart_inputs:
            attempt(np.full(n, float(u_c)))
    if best is None:
        return fallback(n_iter)
    z, J, g, done = best
    kkt = float(np.max(np.abs(projected_gradient(z, g, lo, hi))))
    status = "converged" if done else "max_iter"
    X = K.ocp_states(z, args[0], args[2], args[3], tree.n_p, cfg.t_c, p.L_T, p.c_tilde)
    return NlpSolution(float(z[0]), _branch_inputs(z, tree.n_branches, tree.n_p), X, J, kkt,
                       status, n_iter, z)


def shift(z: np.ndarray, s: int, n_p: int) -> np.ndarray:
    """Warm start for the next period: drop the first stage, repeat the last."""
    zb = z[1:].reshape(s, n_p - 1)
    tail = np.concatenate([zb[:, 1:], zb[:, -1:]], axis=1)
    return np.concatenate([[zb[:, 0].mean()], tail.ravel()])


class MultiStageMPC:
    """Scenario-tree MPC as a feedback law ``u = mpc(x_hat, u_prev)``.

    Holds its own warm start, so use one instance per closed loop.
    """

    def __init__(self, tree: ScenarioTree | None = None, cfg: OcpConfig = OcpConfig(),
                 p: KiteParams = KiteParams()):
        self.tree = tree or build_tree()
        self.cfg = cfg
        self.p = p
        self.reset()

    def reset(self) -> None:
        self._z = None
        self.last_ok = True
        self.last_solution: NlpSolution | None = None
        self.n_faults = 0

    def __call__(self, x_hat, u_prev: float) -> float:
        sol = solve_ocp(np.asarray(x_hat, dtype=float)[:3], u_prev, self.tree, self.cfg, self.p, self._z)
        self.last_solution = sol
        self.last_ok = sol.ok
        if sol.ok:
            self._z = shift(sol.z, self.tree.n_branches, self.tree.n_p)
        else:
            self.n_faults += 1
            self._z = None
        return float(np.clip(sol.u0, self.cfg.u_min, self.cfg.u_max))


def kappa_ms(x_hat, u_prev: float, eta: float, tree: ScenarioTree | None = None,
             cfg: OcpConfig | None = None, p: KiteParams = KiteParams(), z0=None) -> float:
    """Stateless single solve returning the first shared input."""
    cfg = OcpConfig(**{**asdict(cfg or OcpConfig()), "eta": eta})
    sol = solve_ocp(np.asarray(x_hat, dtype=float)[:3], u_prev, tree or build_tree(), cfg, p, z0)
    return float(np.clip(sol.u0, cfg.u_min, cfg.u_max))


# ---------------------------------------------------------------- datasets

DATASET_COLUMNS = ("theta", "phi", "psi", "u_prev", "u_target")


@dataclass(frozen=True)
class FeasibleBox:
    """Sampling box for feasible-state datasets (angles in degrees)."""

    theta: tuple[float, float] = (15.0, 75.0)
    phi: tuple[float, float] = (-60.0, 60.0)
    psi: tuple[float, float] = (-180.0, 180.0)
    u_prev: tuple[float, float] = (-10.0, 10.0)


@dataclass
class Dataset:
    X: np.ndarray  # (n, 4): theta, phi, psi, u_prev
    y: np.ndarray  # (n,)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=float).reshape(-1, 4)
        self.y = np.asarray(self.y, dtype=float).reshape(-1)
        if len(self.X) != len(self.y):
            raise ValueError("inputs and targets differ in length")

    def __len__(self) -> int:
        return len(self.y)

    def split(self, fraction: float, seed: int = 0) -> tuple["Dataset", "Dataset"]:
        idx = np.random.default_rng(seed).permutation(len(self))
        n_a = int(round(fraction * len(self)))
        a, b = idx[:n_a], idx[n_a:]
        return Dataset(self.X[a], self.y[a], dict(self.meta)), Dataset(self.X[b], self.y[b], dict(self.meta))


def save_dataset(ds: Dataset, path) -> None:
    path = Path(path)
    data = np.column_stack([ds.X, ds.y])
    np.savetxt(path, data, delimiter=",", header=",".join(DATASET_COLUMNS), comments="", fmt="%.17g")
    path.with_suffix(".json").write_text(json.dumps({"columns": DATASET_COLUMNS, "n": len(ds), **ds.meta},
                                                    indent=1, sort_keys=True))


def load_dataset(path) -> Dataset:
    path = Path(path)
    with path.open() as fh:
        header = fh.readline().strip().split(",")
    if tuple(header) != DATASET_COLUMNS:
        raise ValueError(f"unexpected dataset columns {header}")
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    meta = json.loads(path.with_suffix(".json").read_text())
    meta = {k: v for k, v in meta.items() if k not in ("columns", "n")}
    return Dataset(data[:, :4], data[:, 4], meta)


def generate_dataset(kind: str, n_target: int, eta: float, seed: int, *, tree: ScenarioTree | None = None,
                     ocp: OcpConfig | None = None, p: KiteParams = KiteParams(),
                     sim: SimConfig | None = None, family: DistributionSpec | None = None,
                     box: FeasibleBox = FeasibleBox(), progress=None) -> Dataset:
    """Training pairs ``(theta, phi, psi, u_prev) -> u`` from the MPC.

    ``opt``: state-feedback closed loops of ``sim.n_sim`` steps, one scenario
    per trajectory, until ``n_target`` pairs are collected. ``feas``: states
    drawn uniformly from ``box``, rejecting those below ``h_min + eta``, one
    cold-started solve each. Solver faults are skipped and counted.
    """
    if kind not in ("opt", "feas"):
        raise ValueError("kind must be 'opt' or 'feas'")
    if n_target < 1:
        raise ValueError("n_target must be positive")
    tree = tree or build_tree()
    ocp = OcpConfig(**{**asdict(ocp or OcpConfig()), "eta": eta})
    sim = sim or SimConfig()
    family = family or DistributionSpec.defaults("uniform")
    X, y = [], []
    faults = rejected = 0
    n_traj = 0
    if kind == "opt":
        while len(y) < n_target:
            sc = sample_scenario(family, sim.n_sim, sim.ekf_per_control, seed, n_traj)
            n_traj += 1
            ctrl = MultiStageMPC(tree, ocp, p)
            tr = simulate_closed_loop(sc, ctrl, PerfectEstimator(), sim, p)
            u_prev = np.concatenate([[tr.u_prev0], tr.inputs[:-1]])
            for k in range(tr.n_sim):
                if not np.isfinite(tr.inputs[k]):
                    break
                if not tr.solver_ok[k]:
                    faults += 1
                    continue
                X.append([*tr.states[k], u_prev[k]])
                y.append(tr.inputs[k])
            if progress:
                progress(len(y), n_target)
        X, y = X[:n_target], y[:n_target]
    else:
        rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(0xFEA5,)))
        while len(y) < n_target:
            th, ph, ps = (np.radians(rng.uniform(*lim)) for lim in (box.theta, box.phi, box.psi))
            up = rng.uniform(*box.u_prev)
            if p.L_T * math.sin(th) * math.cos(ph) < p.h_min + eta:
                rejected += 1
                continue
            sol = solve_ocp(np.array([th, ph, ps]), up, tree, ocp, p)
            if not sol.ok:
                faults += 1
                continue
            X.append([th, ph, ps, up])
            y.append(sol.u0)
            if progress and len(y) % 100 == 0:
                progress(len(y), n_target)
    meta = {"kind": kind, "eta": eta, "seed": seed, "n_trajectories": n_traj, "solver_faults": faults,
            "rejected": rejected, "ocp": asdict(ocp), "tree": asdict(tree), "sim": asdict(sim),
            "family": family.to_dict(), "box": asdict(box)}
    return Dataset(np.array(X), np.array(y), meta)
