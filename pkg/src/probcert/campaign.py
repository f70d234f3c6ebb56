"""Validation campaigns: one scenario batch, every controller, one certificate."""
from __future__ import annotations

import dataclasses
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import trajectory as trj
from .config import Config, ControllerSpec, dump_config
from .indicators import evaluate
from .mlp import DnnController, load_model
from .mpc import MultiStageMPC
from .scenarios import DistributionSpec, batch_hash, sample_scenario
from .simulate import EkfEstimator, simulate_closed_loop
from .validation import Certificate, CertificationError, IndicatorVector, RiskSpec, certify_family, min_samples


def build_controller(spec: ControllerSpec, cfg: Config):
    if spec.type == "ms":
        return MultiStageMPC(cfg.tree.build(), cfg.ocp_for(spec.eta), cfg.kite)
    return DnnController(load_model(spec.params), cfg.ocp.u_min, cfg.ocp.u_max)


def campaign_risk(cfg: Config) -> RiskSpec:
    """The configured risk with the family size set to the number of controllers."""
    m = max(1, len(cfg.campaign.controllers))
    return dataclasses.replace(cfg.risk, m=m) if cfg.risk.m != m else cfg.risk


def campaign_size(cfg: Config) -> int:
    n = min_samples(campaign_risk(cfg))
    override = cfg.campaign.n_override
    if override is not None:
        if override < n:
            raise CertificationError(f"n_override={override} is below the required {n} samples")
        n = override
    return n


@dataclass
class RunResult:
    scenario: int
    controller: int
    values: dict
    mean_thrust: float
    fault: str | None
    solver_failures: int
    traj: trj.TrajectoryRecord | None = None


def _run_scenario(args) -> list[RunResult]:
    cfg, spec_dist, index, keep = args
    sc = sample_scenario(spec_dist, cfg.sim.n_sim, cfg.sim.ekf_per_control, cfg.campaign.master_seed, index)
    out = []
    for j, cspec in enumerate(cfg.campaign.controllers):
        ctrl = build_controller(cspec, cfg)
        tr = simulate_closed_loop(sc, ctrl, EkfEstimator(cfg.ekf_config(), cfg.kite), cfg.sim, cfg.kite,
                                  cfg.wind, controller_id=cspec.label)
        tr.meta["eta"] = cspec.eta
        values = {s.kind: evaluate(tr, s) for s in cfg.indicator_specs()}
        thrust = float(np.mean(tr.thrust)) if not tr.faulted else math.nan
        out.append(RunResult(index, j, values, thrust, tr.fault, int(np.sum(~tr.solver_ok[np.isfinite(tr.inputs)])),
                             tr if keep else None))
    return out


@dataclass
class ControllerRow:
    id: str
    type: str
    eta: float
    feasible: int
    level: float
    mean_thrust: float
    safe: bool
    faults: int
    solver_failures: int


@dataclass
class CampaignReport:
    label: str
    n: int
    risk: RiskSpec
    family: str
    delayed: bool
    scenario_hash: str
    rows: list[ControllerRow]
    certificates: dict[str, Certificate]
    degraded: bool
    runtime_s: float = 0.0
    values: dict = field(default_factory=dict)  # indicator kind -> (M, N) nested lists

    def to_dict(self) -> dict:
        return {
            "label": self.label, "n": self.n, "risk": self.risk.to_dict(), "family": self.family,
            "delayed": self.delayed, "scenario_hash": self.scenario_hash,
            "rows": [dataclasses.asdict(r) for r in self.rows],
            "certificates": {k: c.to_dict() for k, c in self.certificates.items()},
            "degraded": self.degraded, "runtime_s": self.runtime_s, "values": self.values,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CampaignReport":
        return cls(d["label"], d["n"], RiskSpec(**d["risk"]), d["family"], d["delayed"], d["scenario_hash"],
                   [ControllerRow(**r) for r in d["rows"]],
                   {k: Certificate.from_dict(c) for k, c in d["certificates"].items()}, d["degraded"],
                   d["runtime_s"], d["values"])


def _encode(x):
    """JSON-safe floats: +inf / nan become strings."""
    if isinstance(x, float) and not math.isfinite(x):
        return "inf" if x > 0 else ("-inf" if x < 0 else "nan")
    if isinstance(x, dict):
        return {k: _encode(v) for k, v in x.items()}
    if isinstance(x, list):
        return [_encode(v) for v in x]
    return x


def _decode(x):
    if x in ("inf", "-inf", "nan"):
        return float(x)
    if isinstance(x, dict):
        return {k: _decode(v) for k, v in x.items()}
    if isinstance(x, list):
        return [_decode(v) for v in x]
    return x


def save_report(report: CampaignReport, path) -> None:
    Path(path).write_text(json.dumps(_encode(report.to_dict()), indent=1, sort_keys=True))


def load_report(path) -> CampaignReport:
    return CampaignReport.from_dict(_decode(json.loads(Path(path).read_text())))


def aggregate(cfg: Config, results: list[RunResult], n: int, label: str, family: str,
              scenario_hash: str, runtime: float = 0.0) -> CampaignReport:
    """Indicator vectors, certificates and table rows from per-run results."""
    risk = campaign_risk(cfg)
    m = len(cfg.campaign.controllers)
    results = sorted(results, key=lambda r: (r.scenario, r.controller))
    kinds = list(cfg.campaign.indicators)
    values = {k: [[math.nan] * n for _ in range(m)] for k in kinds}
    thrust = [[math.nan] * n for _ in range(m)]
    faults = [0] * m
    failures = [0] * m
    for r in results:
        for k in kinds:
            values[k][r.controller][r.scenario] = r.values[k]
        thrust[r.controller][r.scenario] = r.mean_thrust
        faults[r.controller] += r.fault is not None
        failures[r.controller] += r.solver_failures
    certs = {}
    for k in kinds:
        vecs = [IndicatorVector(values[k][j], c.label) for j, c in enumerate(cfg.campaign.controllers)]
        certs[k] = certify_family(vecs, risk, threshold=0.0)
    primary = kinds[0]
    rows = []
    for j, c in enumerate(cfg.campaign.controllers):
        v = np.array(values[primary][j])
        th = np.array(thrust[j])
        rows.append(ControllerRow(
            id=c.label, type=c.type, eta=float(c.eta), feasible=int(np.sum(v <= 0.0)),
            level=float(certs[primary].levels[j]),
            mean_thrust=float(np.mean(th[np.isfinite(th)])) if np.any(np.isfinite(th)) else math.nan,
            safe=bool(certs[primary].safe_flags[j]), faults=faults[j], solver_failures=failures[j]))
    degraded = any(f > cfg.campaign.degraded_fraction * n for f in faults)
    return CampaignReport(label, n, risk, family, cfg.sim.input_delay > 0, scenario_hash, rows, certs, degraded,
                          runtime, values)


def run_campaign(cfg: Config, output_dir=None, dist: DistributionSpec | None = None, label: str = "campaign",
                 progress=None) -> CampaignReport:
    """Simulate every controller on the same ``N`` scenarios and certify the family."""
    if not cfg.campaign.controllers:
        raise ValueError("campaign has no controllers")
    n = campaign_size(cfg)
    dist = dist or cfg.distribution.build()
    out = Path(output_dir) if output_dir is not None else None
    keep = out is not None and cfg.campaign.save_trajectories
    t0 = time.perf_counter()
    scen_hash = batch_hash(sample_scenario(dist, cfg.sim.n_sim, cfg.sim.ekf_per_control,
                                           cfg.campaign.master_seed, i) for i in range(n))
    tasks = [(cfg, dist, i, keep) for i in range(n)]
    results: list[RunResult] = []
    if cfg.campaign.workers > 1:
        with ProcessPoolExecutor(cfg.campaign.workers) as pool:
            for i, chunk in enumerate(pool.map(_run_scenario, tasks, chunksize=4)):
                results.extend(chunk)
                if progress:
                    progress(i + 1, n)
    else:
        for i, task in enumerate(tasks):
            results.extend(_run_scenario(task))
            if progress:
                progress(i + 1, n)
    report = aggregate(cfg, results, n, label, dist.family, scen_hash, time.perf_counter() - t0)
    if out is not None:
        persist(cfg, report, results, out)
    return report


def persist(cfg: Config, report: CampaignReport, results: list[RunResult], out: Path) -> None:
    from .report import emit_report

    out.mkdir(parents=True, exist_ok=True)
    dump_config(cfg, out / "config.yaml")
    (out / "distribution.json").write_text(json.dumps(
        {"family": report.family, "hash": report.scenario_hash, "n": report.n}, indent=1, sort_keys=True))
    tdir = out / "trajectories"
    for r in results:
        if r.traj is not None:
            tdir.mkdir(exist_ok=True)
            trj.save(r.traj, tdir / f"c{r.controller}_s{r.scenario:05d}.csv")
    save_report(report, out / "report.json")
    for kind, cert in report.certificates.items():
        (out / f"certificate_{kind}.json").write_text(json.dumps(_encode(cert.to_dict()), indent=1, sort_keys=True))
    trajs = [r.traj for r in results if r.traj is not None]
    emit_report(report, out, cfg, trajs)


def regenerate(out_dir) -> CampaignReport:
    """Rebuild the report from persisted trajectories (no re-simulation)."""
    from .config import load_config
    from .report import emit_report

    out = Path(out_dir)
    cfg = load_config(out / "config.yaml")
    info = json.loads((out / "distribution.json").read_text())
    old = load_report(out / "report.json")
    specs = cfg.indicator_specs()
    results = []
    trajs = []
    for j, c in enumerate(cfg.campaign.controllers):
        for i in range(info["n"]):
            tr = trj.load(out / "trajectories" / f"c{j}_s{i:05d}.csv")
            trajs.append(tr)
            values = {s.kind: evaluate(tr, s) for s in specs}
            thrust = float(np.mean(tr.thrust)) if not tr.faulted else math.nan
            fails = int(np.sum(~tr.solver_ok[np.isfinite(tr.inputs)]))
            results.append(RunResult(i, j, values, thrust, tr.fault, fails))
    report = aggregate(cfg, results, info["n"], old.label, info["family"], info["hash"], old.runtime_s)
    emit_report(report, out, cfg, trajs)
    return report


@dataclass
class RobustnessRow:
    family: str
    n: int
    feasible: list[int]
    levels: list[float]
    support_within_nominal: bool


def support_within(inner: DistributionSpec, outer: DistributionSpec) -> bool:
    for name in inner.params:
        a, b = inner.support(name)
        lo, hi = outer.support(name)
        if a < lo - 1e-12 or b > hi + 1e-12:
            return False
    return True


def robustness_study(cfg: Config, alt_specs, output_dir=None, progress=None) -> list[RobustnessRow]:
    """Re-run the campaign under each alternative parameter distribution."""
    nominal = cfg.distribution.build()
    rows = []
    for spec in alt_specs:
        sub = None if output_dir is None else Path(output_dir) / spec.family
        rep = run_campaign(cfg, sub, spec, label=f"robustness-{spec.family}", progress=progress)
        rows.append(RobustnessRow(spec.family, rep.n, [r.feasible for r in rep.rows], [r.level for r in rep.rows],
                                  support_within(spec, nominal)))
    if output_dir is not None:
        from .report import write_robustness

        write_robustness(rows, cfg, Path(output_dir))
    return rows
