"""Single-file YAML configuration with every default encoded and overridable."""
from __future__ import annotations

import dataclasses
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import yaml

from .ekf import EkfConfig
from .indicators import KINDS, IndicatorSpec, StageCost
from .kite import KiteParams, WindParams
from .mlp import Architecture, TrainConfig
from .mpc import FeasibleBox, OcpConfig, ScenarioTree, build_tree
from .scenarios import FAMILIES, FAMILY_DEFAULTS, DistributionSpec
from .simulate import SimConfig
from .validation import RiskSpec


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class EkfSettings:
    P0_diag: tuple[float, ...] = (1e-2, 1e-2, 1e-2, 1.0, 2e-1)
    Q_diag: tuple[float, ...] = (1e-5, 1e-5, 1e-4, 1e-5, 3e-3)
    R_diag: tuple[float, ...] = (1e-2, 1e-2, 5e-2)

    def build(self, t_ekf: float) -> EkfConfig:
        return EkfConfig(np.diag(self.P0_diag), np.diag(self.Q_diag), np.diag(self.R_diag), t_ekf)


@dataclass(frozen=True)
class TreeSettings:
    E_0_values: tuple[float, ...] = (4.0, 6.0)
    v_0_values: tuple[float, ...] = (6.0, 10.0)
    n_p: int = 40

    def build(self) -> ScenarioTree:
        return build_tree(self.E_0_values, self.v_0_values, self.n_p)


@dataclass(frozen=True)
class DistributionSettings:
    family: str = "uniform"
    params: dict | None = None  # None: the family's default table

    def build(self) -> DistributionSpec:
        if self.family not in FAMILIES:
            raise ConfigError(f"unknown distribution family {self.family!r}")
        params = dict(FAMILY_DEFAULTS[self.family])
        params.update({k: tuple(v) for k, v in (self.params or {}).items()})
        return DistributionSpec(self.family, params)


@dataclass(frozen=True)
class ControllerSpec:
    """One member of the certified family: ``ms`` (MPC) or ``dnn`` (network file)."""

    type: str = "dnn"
    eta: float = 0.0
    params: str | None = None
    id: str | None = None

    def __post_init__(self):
        if self.type not in ("ms", "dnn"):
            raise ConfigError(f"controller type must be 'ms' or 'dnn', got {self.type!r}")
        if self.type == "dnn" and not self.params:
            raise ConfigError("dnn controllers need a parameter file path")
        if self.eta < 0:
            raise ConfigError("eta must be non-negative")

    @property
    def label(self) -> str:
        return self.id or f"{self.type}_eta{self.eta:g}"


@dataclass(frozen=True)
class CampaignSettings:
    controllers: tuple[ControllerSpec, ...] = ()
    indicators: tuple[str, ...] = ("height_margin", "neg_avg_thrust")
    master_seed: int = 2024
    n_override: int | None = None
    workers: int = 1
    degraded_fraction: float = 0.05
    save_trajectories: bool = True
    output_dir: str = "runs/campaign"

    def __post_init__(self):
        bad = [k for k in self.indicators if k not in KINDS]
        if bad or not self.indicators:
            raise ConfigError(f"unknown indicator kinds {bad}; expected a subset of {KINDS}")
        if self.workers < 1:
            raise ConfigError("workers must be at least 1")
        if not 0.0 <= self.degraded_fraction <= 1.0:
            raise ConfigError("degraded_fraction must lie in [0, 1]")


@dataclass(frozen=True)
class DatasetSettings:
    kind: str = "opt"
    n_target: int = 80000
    eta: float = 0.0
    seed: int = 1
    box: FeasibleBox = FeasibleBox()


@dataclass(frozen=True)
class Config:
    kite: KiteParams = KiteParams()
    wind: WindParams = WindParams()
    sim: SimConfig = SimConfig()
    ekf: EkfSettings = EkfSettings()
    tree: TreeSettings = TreeSettings()
    ocp: OcpConfig = OcpConfig()
    stage_cost: StageCost = StageCost()
    mlp: Architecture = Architecture()
    train: TrainConfig = TrainConfig()
    risk: RiskSpec = RiskSpec(0.02, 1e-6, 4, 4)
    distribution: DistributionSettings = DistributionSettings()
    campaign: CampaignSettings = CampaignSettings()
    dataset: DatasetSettings = DatasetSettings()

    def indicator_specs(self) -> list[IndicatorSpec]:
        return [IndicatorSpec(k, self.kite.h_min, self.stage_cost) for k in self.campaign.indicators]

    def ekf_config(self) -> EkfConfig:
        return self.ekf.build(self.sim.t_ekf)

    def ocp_for(self, eta: float) -> OcpConfig:
        return dataclasses.replace(self.ocp, eta=eta, t_c=self.sim.t_c, w_F=self.stage_cost.w_F,
                                   w_u=self.stage_cost.w_u)


def _plain(obj):
    if isinstance(obj, tuple):
        return [_plain(v) for v in obj]
    if isinstance(obj, list):
        return [_plain(v) for v in obj]
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    return obj


def to_dict(cfg: Config) -> dict:
    return _plain(asdict(cfg))


def _build(cls, data, path: str):
    if dataclasses.is_dataclass(cls) and isinstance(data, cls):
        return data
    if not isinstance(data, dict):
        raise ConfigError(f"section {path!r} must be a mapping")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(data) - set(fields)
    if unknown:
        raise ConfigError(f"unknown keys in {path!r}: {sorted(unknown)}")
    kwargs = {}
    for name, value in data.items():
        f = fields[name]
        default = f.default if f.default is not dataclasses.MISSING else None
        if dataclasses.is_dataclass(default):
            kwargs[name] = _build(type(default), value, f"{path}.{name}")
        elif name == "controllers":
            kwargs[name] = tuple(_build(ControllerSpec, v, f"{path}.controllers[{i}]") for i, v in enumerate(value))
        elif isinstance(value, list):
            kwargs[name] = tuple(tuple(v) if isinstance(v, list) else v for v in value)
        else:
            kwargs[name] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid {path!r}: {exc}") from exc


def from_dict(data: dict | None) -> Config:
    return _build(Config, data or {}, "config")


def _merge(base: dict, over: dict) -> dict:
    out = dict(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def parse_override(item: str) -> dict:
    """``"ocp.eta=2"`` -> ``{"ocp": {"eta": 2}}`` (value parsed as YAML)."""
    if "=" not in item:
        raise ConfigError(f"override {item!r} must look like section.key=value")
    key, raw = item.split("=", 1)
    try:
        value = yaml.safe_load(raw)
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse override value {raw!r}") from exc
    out: dict = {}
    node = out
    parts = key.strip().split(".")
    for part in parts[:-1]:
        node = node.setdefault(part, {})
    node[parts[-1]] = value
    return out


def load_config(path=None, overrides=()) -> Config:
    """Defaults, then the YAML file at ``path``, then ``section.key=value`` overrides.

    Relative network paths in the file are taken relative to the file.
    """
    data = to_dict(Config())
    if path is not None:
        try:
            user = yaml.safe_load(Path(path).read_text()) or {}
        except (OSError, yaml.YAMLError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(user, dict):
            raise ConfigError("config file must contain a mapping")
        for c in (user.get("campaign") or {}).get("controllers") or []:
            if isinstance(c, dict) and c.get("params") and not Path(c["params"]).is_absolute():
                c["params"] = str(Path(path).parent / c["params"])
        data = _merge(data, user)
    for item in overrides:
        data = _merge(data, parse_override(item))
    return from_dict(data)


def dump_config(cfg: Config, path=None) -> str:
    text = yaml.safe_dump(to_dict(cfg), sort_keys=False)
    if path is not None:
        Path(path).write_text(text)
    return text
